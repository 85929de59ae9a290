//! How the stochastic EMA semantic memory trails a moving working model.
//!
//! ```bash
//! cargo run -p verse --example semantic_memory
//! ```

use verse::{NetworkShape, ParamVector, SemanticMemory};

fn distance(a: &ParamVector, b: &ParamVector) -> f64 {
    a.values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn main() -> verse::Result<()> {
    let shape = NetworkShape::new(8, vec![16], 4)?;
    let start = ParamVector::init(&shape, 0);
    let target = ParamVector::init(&shape, 1);
    println!(
        "{:>6} {:>10} {:>10} {:>10}",
        "step", "r=0.05", "r=0.4", "r=1.0"
    );
    let mut memories: Vec<SemanticMemory> = [0.05, 0.4, 1.0]
        .iter()
        .map(|&r| SemanticMemory::new(&start, 0.9, r, 3))
        .collect::<verse::Result<_>>()?;
    for step in 1..=100 {
        for m in &mut memories {
            m.maybe_update(&target)?;
        }
        if step % 10 == 0 {
            print!("{step:>6}");
            for m in &memories {
                print!(" {:>10.4}", distance(m.phi(), &target));
            }
            println!();
        }
    }
    Ok(())
}
