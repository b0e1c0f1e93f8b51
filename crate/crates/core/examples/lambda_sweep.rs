//! Sweeps the shaping weight on a shortened PendulumBalance run and prints
//! the final evaluation return of each member.

use stabshape::cli::sweep_into;
use stabshape::config::RunConfig;

fn main() -> stabshape::Result<()> {
    let base = RunConfig::resolve(
        "pendulum",
        &["trainer.total_steps=2000".into(), "trainer.eval_interval=1000".into()],
    )?;
    let root = std::env::temp_dir().join("stabshape-lambda-sweep");
    let lambdas = [0.0, 0.5, 1.0];
    let seeds = [0, 1];
    let (rows, failures) = sweep_into(&root, &base, &lambdas, &seeds, 2)?;
    for f in &failures {
        eprintln!("failed: {f}");
    }
    println!("{:>7} {:>5} {:>12}", "lambda", "seed", "final eval");
    for &lambda in &lambdas {
        for &seed in &seeds {
            let last = rows.iter().filter(|r| r.lambda == lambda && r.seed == seed).last();
            if let Some(r) = last {
                println!("{lambda:>7} {seed:>5} {:>12.1}", r.eval_return);
            }
        }
    }
    println!("sweep.csv in {}", root.display());
    Ok(())
}
