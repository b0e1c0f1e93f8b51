//! A short PendulumBalance training run written to a temporary directory.
//!
//! Extra arguments are `section.key=value` overrides.

use stabshape::cli::train_into;
use stabshape::config::RunConfig;

fn main() {
    env_logger::init();
    let mut overrides = vec![
        "trainer.total_steps=4000".to_string(),
        "trainer.eval_interval=1000".to_string(),
        "run.log_rewards=true".to_string(),
    ];
    overrides.extend(std::env::args().skip(1));
    let config = match RunConfig::resolve("pendulum", &overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            std::process::exit(2);
        }
    };
    let root = std::env::temp_dir().join("stabshape-train-pendulum");
    match train_into(&root, config, true) {
        Ok(summary) => {
            println!(
                "{} steps, {} episodes, {} updates in {:.1}s; final eval return {:?}",
                summary.env_steps, summary.episodes, summary.updates, summary.wall_time_s, summary.final_eval_return
            );
            println!("artifacts in {}", root.display());
            if let Ok(metrics) = std::fs::read_to_string(root.join("metrics.csv")) {
                for line in metrics.lines() {
                    let cols: Vec<&str> = line.split(',').take(5).collect();
                    println!("  {}", cols.join("\t"));
                }
            }
        }
        Err(f) => {
            eprintln!("{}", f.message);
            std::process::exit(f.code);
        }
    }
}
