//! Relative-position attention bias from bucketed 1D and 2D offsets.

use layoutkit_tensor::{Tape, Tensor, Var};

use super::{Model, ModelInput, MASK_NEG};
use crate::error::Result;

/// Offsets at or beyond this many 1D positions share the outermost bucket.
pub const BIAS_MAX_DISTANCE_1D: i64 = 128;
/// Same for box-centre offsets, in quantisation bins.
pub const BIAS_MAX_DISTANCE_2D: i64 = 1000;

/// Lower bounds of the logarithmic buckets for magnitudes, given the number
/// of buckets per sign.
///
/// Magnitudes below `half / 2` get a bucket each; above that, bucket `k`
/// starts at `ceil(exact * (max_distance / exact)^(k / m))` with `m` the
/// number of logarithmic buckets.
pub fn bucket_table(num_buckets: usize, max_distance: i64) -> Vec<i64> {
    let half = num_buckets / 2;
    let exact = (half / 2) as i64;
    let m = half - half / 2;
    let ratio = max_distance as f64 / exact as f64;
    let mut t: Vec<i64> = (0..exact).collect();
    for k in 0..m {
        // the tolerance keeps exact powers such as 8 * 16^(1/4) = 16 from rounding up
        let bound = (exact as f64 * ratio.powf(k as f64 / m as f64) - 1e-9).ceil() as i64;
        t.push(bound.max(t.last().map_or(0, |&p| p + 1)));
    }
    t
}

/// Signed bucket of `offset`: non-positive offsets map to `0..half`,
/// positive ones to `half..num_buckets`, clamped at the extremes.
pub fn bucket(offset: i64, num_buckets: usize, max_distance: i64) -> usize {
    bucket_with(&bucket_table(num_buckets, max_distance), offset, num_buckets)
}

fn bucket_with(table: &[i64], offset: i64, num_buckets: usize) -> usize {
    let half = num_buckets / 2;
    let base = if offset > 0 { half } else { 0 };
    let n = offset.abs();
    // last table entry not greater than n
    let k = table.partition_point(|&t| t <= n) - 1;
    base + k
}

/// Bucket ids for every ordered pair, row-major `[L * L]`.
fn pair_buckets(values: &[i64], table: &[i64], num_buckets: usize) -> Vec<usize> {
    let l = values.len();
    let mut out = Vec::with_capacity(l * l);
    for i in 0..l {
        for j in 0..l {
            out.push(bucket_with(table, values[j] - values[i], num_buckets));
        }
    }
    out
}

pub(super) fn attention_bias(tape: &mut Tape<'_>, model: &Model, input: &ModelInput) -> Result<Vec<Var>> {
    let cfg = &model.cfg;
    let l = input.len();
    let nb = cfg.relative_bias_buckets;
    let t1 = bucket_table(nb, BIAS_MAX_DISTANCE_1D);
    let t2 = bucket_table(nb, BIAS_MAX_DISTANCE_2D);
    let pos: Vec<i64> = input.pos_1d.iter().map(|&p| p as i64).collect();
    let (xc, yc): (Vec<i64>, Vec<i64>) = input
        .boxes
        .iter()
        .map(|b| {
            let (x, y) = b.center();
            (x as i64, y as i64)
        })
        .unzip();

    let mut total = None;
    for (values, table, id) in [
        (&pos, &t1, model.ids.bias_1d),
        (&xc, &t2, model.ids.bias_x),
        (&yc, &t2, model.ids.bias_y),
    ] {
        let ids = pair_buckets(values, table, nb);
        let p = tape.param(id);
        let g = tape.embedding_gather(p, &ids)?;
        total = Some(match total {
            None => g,
            Some(t) => tape.add(t, g)?,
        });
    }
    let per_head = tape.transpose(total.expect("three axes"))?;
    let mask = input.key_mask.as_ref().map(|m| {
        let row: Vec<f64> = m.iter().map(|&k| if k { 0.0 } else { MASK_NEG }).collect();
        tape.constant(Tensor::new(vec![1, l], row).expect("mask row"))
    });
    let mut out = Vec::with_capacity(cfg.heads);
    for h in 0..cfg.heads {
        let row = tape.slice(per_head, 0, h, h + 1)?;
        let mut b = tape.reshape(row, &[l, l])?;
        if let Some(m) = mask {
            b = tape.add(b, m)?;
        }
        out.push(b);
    }
    Ok(out)
}
