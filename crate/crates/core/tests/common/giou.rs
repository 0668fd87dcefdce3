//! GIoU loss against hand values and a brute-force area count.

use layoutkit::doc::BBox;
use layoutkit::model::{giou, mpm_loss};
use layoutkit_tensor::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn loss_of(pred: &[BBox], truth: &[BBox]) -> f64 {
    let mut tape = Tape::new();
    let flat: Vec<f64> = pred.iter().flat_map(|b| [b.x1, b.y1, b.x2, b.y2]).collect();
    let p = tape.leaf(Tensor::new(vec![pred.len(), 4], flat).unwrap(), false);
    let l = mpm_loss(&mut tape, p, truth).unwrap();
    tape.value(l).item()
}

pub fn b(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
    [x1, y1, x2, y2].into()
}

pub struct HandCase {
    pub name: &'static str,
    pub got: f64,
    pub expect: f64,
}

/// Identity, disjoint corner boxes and partial overlap.
pub fn hand_cases() -> Vec<HandCase> {
    let a = b(0.1, 0.2, 0.4, 0.9);
    vec![
        HandCase {
            name: "identity",
            got: loss_of(&[a], &[a]),
            expect: -1.0,
        },
        HandCase {
            name: "disjoint",
            got: loss_of(&[b(0.0, 0.0, 0.5, 0.5)], &[b(0.5, 0.5, 1.0, 1.0)]),
            expect: 0.5,
        },
        // intersection 0.04, union 0.28, hull 0.36
        HandCase {
            name: "partial overlap",
            got: loss_of(&[b(0.0, 0.0, 0.4, 0.4)], &[b(0.2, 0.2, 0.6, 0.6)]),
            expect: -(1.0 / 7.0 - 0.08 / 0.36),
        },
    ]
}

const RES: f64 = 1e-3;
const MIN_SIDE: f64 = 0.1;
const MAX_SIDE: f64 = 0.6;

/// Length of `[lo, hi)` inside pixel `i` of the grid.
fn cover(lo: f64, hi: f64, i: usize) -> f64 {
    let (p0, p1) = (i as f64 * RES, (i + 1) as f64 * RES);
    (hi.min(p1) - lo.max(p0)).max(0.0)
}

/// Area-weighted pixel integration over the unit page on a 1e-3 grid: every
/// pixel adds the part of itself covered by each region. Counting pixel
/// centres instead would carry up to one pixel of error per edge, which is
/// several 1e-3 in GIoU for boxes 0.1 wide.
pub fn pixel_giou(a: &BBox, c: &BBox) -> f64 {
    let n = (1.0 / RES).round() as usize;
    let (hx1, hy1) = (a.x1.min(c.x1), a.y1.min(c.y1));
    let (hx2, hy2) = (a.x2.max(c.x2), a.y2.max(c.y2));
    let (mut inter, mut union, mut hull) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (ax, cx, hx) = (cover(a.x1, a.x2, i), cover(c.x1, c.x2, i), cover(hx1, hx2, i));
        if hx == 0.0 {
            continue;
        }
        let bothx = cover(a.x1.max(c.x1), a.x2.min(c.x2), i);
        for j in 0..n {
            let (ay, cy, hy) = (cover(a.y1, a.y2, j), cover(c.y1, c.y2, j), cover(hy1, hy2, j));
            let pa = ax * ay;
            let pc = cx * cy;
            let both = bothx * cover(a.y1.max(c.y1), a.y2.min(c.y2), j);
            inter += both;
            union += pa + pc - both;
            hull += hx * hy;
        }
    }
    inter / union - (hull - union) / hull
}

pub fn random_box(rng: &mut ChaCha8Rng) -> BBox {
    let w = rng.random_range(MIN_SIDE..MAX_SIDE);
    let h = rng.random_range(MIN_SIDE..MAX_SIDE);
    let x = rng.random_range(0.0..1.0 - w);
    let y = rng.random_range(0.0..1.0 - h);
    b(x, y, x + w, y + h)
}

pub struct PixelCheck {
    /// Largest gap between the loss and the pixel count.
    pub worst: f64,
    /// Largest gap between the loss and the scalar `giou`.
    pub scalar_gap: f64,
}

pub fn pixel_crosscheck(pairs: usize, seed: u64) -> PixelCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut worst, mut scalar_gap) = (0.0f64, 0.0f64);
    for _ in 0..pairs {
        let (p, t) = (random_box(&mut rng), random_box(&mut rng));
        let exact = -loss_of(&[p], &[t]);
        scalar_gap = scalar_gap.max((exact - giou(&p, &t)).abs());
        worst = worst.max((exact - pixel_giou(&p, &t)).abs());
    }
    PixelCheck { worst, scalar_gap }
}
