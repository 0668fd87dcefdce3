//! Central finite differences through the whole encoder for every loss.

mod common;

use common::grad::{self, TOL};

fn assert_loss(name: &str, loss: impl for<'t> Fn(&grad::Fixture, &mut layoutkit_tensor::Tape<'t>) -> layoutkit::Result<layoutkit_tensor::Var>) {
    let f = grad::fixture();
    let r = grad::check(name, &f, |t| loss(&f, t)).unwrap();
    println!("{name}: {} probes, max relative error {:.3e} at {}", r.probes, r.max_rel_err, r.worst_at);
    assert!(r.max_rel_err < TOL, "{name}: relative error {:.3e} at {}", r.max_rel_err, r.worst_at);
}

#[test]
fn mlm_loss_gradient() {
    assert_loss("mlm", grad::mlm);
}

#[test]
fn mpm_loss_gradient() {
    assert_loss("mpm", grad::mpm);
}

#[test]
fn total_loss_gradient() {
    assert_loss("total", grad::total);
}

#[test]
fn token_classification_gradient() {
    assert_loss("token classification", grad::token_classification);
}

#[test]
fn doc_classification_gradient() {
    assert_loss("doc classification", grad::doc_classification);
}

#[test]
fn giou_loss_gradient_wrt_boxes() {
    let worst = grad::giou_box_gradient();
    assert!(worst < 1e-5, "relative error {worst:.3e}");
}
