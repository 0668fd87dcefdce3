//! Finite-difference checks: the built-in primitive suite, then a custom
//! scalar function of two inputs.

use layoutkit_tensor::{finite_diff_check, primitive_suite, Tensor};

fn main() -> layoutkit_tensor::Result<()> {
    println!("{:<18} max relative error", "primitive");
    for (name, err) in primitive_suite(1e-5)? {
        println!("{name:<18} {err:.2e}");
    }

    // f(a, b) = mean(softmax(a @ b))^2 style composite
    let a = Tensor::new(vec![2, 3], vec![0.3, -0.1, 0.8, 0.5, 0.2, -0.7])?;
    let b = Tensor::new(vec![3, 2], vec![1.0, -0.5, 0.25, 0.75, -1.2, 0.4])?;
    let err = finite_diff_check(
        |t, x| {
            let h = t.matmul(x[0], x[1])?;
            let h = t.tanh(h);
            let s = t.softmax(h);
            let l = t.log(s)?;
            let sq = t.mul(l, l)?;
            Ok(t.mean(sq))
        },
        &[a, b],
        1e-5,
    )?;
    println!("\ncomposite          {err:.2e}");
    Ok(())
}
