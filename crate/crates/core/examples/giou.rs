//! GIoU values for a few box pairs and the gradient of the MPM loss with
//! respect to the predicted corners.

use layoutkit::doc::BBox;
use layoutkit::model::{giou, mpm_loss};
use layoutkit_tensor::{Tape, Tensor};

fn main() -> layoutkit::Result<()> {
    let pairs: [(&str, BBox, BBox); 4] = [
        ("identical", [0.1, 0.2, 0.4, 0.9].into(), [0.1, 0.2, 0.4, 0.9].into()),
        ("touching corners", [0.0, 0.0, 0.5, 0.5].into(), [0.5, 0.5, 1.0, 1.0].into()),
        ("partial overlap", [0.0, 0.0, 0.4, 0.4].into(), [0.2, 0.2, 0.6, 0.6].into()),
        ("far apart", [0.0, 0.0, 0.1, 0.1].into(), [0.8, 0.8, 0.9, 0.9].into()),
    ];
    for (name, a, b) in &pairs {
        println!("{name:<17} giou {:+.4}", giou(a, b));
    }

    let pred: Vec<f64> = pairs.iter().flat_map(|(_, p, _)| [p.x1, p.y1, p.x2, p.y2]).collect();
    let truth: Vec<BBox> = pairs.iter().map(|(_, _, t)| *t).collect();
    let mut tape = Tape::new();
    let p = tape.leaf(Tensor::new(vec![pairs.len(), 4], pred)?, true);
    let loss = mpm_loss(&mut tape, p, &truth)?;
    tape.backward(loss, None)?;
    println!("\nmean loss {:+.4}", tape.value(loss).item());
    let grad = tape.grad(p).expect("leaf requires grad");
    for ((name, _, _), g) in pairs.iter().zip(grad.chunks(4)) {
        println!("{name:<17} dL/d(x1 y1 x2 y2) = {:+.3} {:+.3} {:+.3} {:+.3}", g[0], g[1], g[2], g[3]);
    }
    Ok(())
}
