//! Compare analytic gradients of the rehearsal-plus-distillation objective
//! with central finite differences.
//!
//! ```bash
//! cargo run -p verse --example gradient_check
//! ```

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use verse::substrate::loss;
use verse::{gradient, Batch, NetworkShape, Objective, ParamVector};

fn main() -> verse::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let shape = NetworkShape::new(6, vec![8, 8], 4)?;
    let params = ParamVector::init(&shape, 1);
    let mut uniform =
        |rows, cols| Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.0..1.0));
    let batch = Batch::new(uniform(5, 6), vec![0, 1, 2, 3, 1], 4)?;
    let inputs = uniform(5, 6);
    let targets = uniform(5, 4);
    let objective =
        Objective::cross_entropy(&batch).with_distillation(0.3, inputs.view(), targets.view());

    let analytic = gradient(&params, &objective)?;
    let h = 1e-5;
    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    for i in 0..params.len() {
        let base = params.values()[i];
        probe.values_mut()[i] = base + h;
        let up = loss(&probe, &objective)?;
        probe.values_mut()[i] = base - h;
        let down = loss(&probe, &objective)?;
        probe.values_mut()[i] = base;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic.values()[i];
        worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
    }
    println!(
        "{} parameters, max relative error {worst:.3e}",
        params.len()
    );
    Ok(())
}
