//! Monte Carlo rates of the masking plans on synthetic pages.

mod common;

use common::masking::{self, Rate};

fn within(name: &str, r: Rate, p: f64, tol: f64) {
    println!("{name}: {}/{} = {:.4} (target {p} +/- {tol})", r.hits, r.n, r.value());
    assert!(r.within(p, tol), "{name}: rate {:.4}", r.value());
}

#[test]
fn layout_aware_rates() {
    let (interior, boundary) = masking::lam_rates(&masking::sample());
    assert!(interior.n >= 10_000 && boundary.n >= 10_000, "{} interior, {} boundary", interior.n, boundary.n);
    within("interior", interior, 0.25, 0.01);
    within("boundary", boundary, 0.75, 0.02);
}

#[test]
fn whole_word_rate_ignores_boundaries() {
    within("wwm", masking::wwm_rate(&masking::sample()), 0.25, 0.01);
}

#[test]
fn naive_rate_is_per_token() {
    within("naive tokens", masking::naive_rate(&masking::sample()), 0.25, 0.01);
}

#[test]
fn mpm_rate() {
    let (r, clashes) = masking::mpm_rate(&masking::sample());
    assert_eq!(clashes, 0, "pseudo heights must be distinct");
    assert!(r.n >= 10_000);
    within("mpm", r, 0.15, 0.01);
}

#[test]
fn whole_words_stay_whole() {
    let a = masking::atomicity(&masking::sample());
    assert_eq!(a.violations, 0);
    within("replace with mask", a.mask, 0.8, 0.02);
    within("replace with random", a.random, 0.1, 0.02);
}
