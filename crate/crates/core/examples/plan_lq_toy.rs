//! Runs the cross-entropy planner on a known linear system with a quadratic
//! cost and compares it with random shooting at the same sample budget.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stabshape::policy::{plan, rollout_score, PlannerConfig, PlanningModel};

/// `z' = A z + B a`, reward `-(|z|^2 + 0.1 |a|^2)`, zero terminal value.
struct LinearSystem {
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
}

impl PlanningModel for LinearSystem {
    fn action_dim(&self) -> usize {
        self.b[0].len()
    }
    fn encode(&self, state: &[f64]) -> Vec<f64> {
        state.to_vec()
    }
    fn next_latent(&self, z: &[f64], a: &[f64]) -> Vec<f64> {
        (0..z.len())
            .map(|i| {
                let az: f64 = self.a[i].iter().zip(z).map(|(x, y)| x * y).sum();
                let ba: f64 = self.b[i].iter().zip(a).map(|(x, y)| x * y).sum();
                az + ba
            })
            .collect()
    }
    fn reward(&self, z: &[f64], a: &[f64]) -> f64 {
        -(z.iter().map(|x| x * x).sum::<f64>() + 0.1 * a.iter().map(|x| x * x).sum::<f64>())
    }
    fn value(&self, _z: &[f64], _a: &[f64]) -> f64 {
        0.0
    }
    fn prior_mean(&self, _z: &[f64]) -> Vec<f64> {
        vec![0.0; self.action_dim()]
    }
    fn prior_sample(&self, _z: &[f64], rng: &mut dyn RngCore) -> Vec<f64> {
        (0..self.action_dim()).map(|_| rng.random_range(-1.0..1.0)).collect()
    }
}

fn main() {
    let config = PlannerConfig {
        horizon: 5,
        population: 64,
        elites: 8,
        iterations: 4,
        prior_fraction: 0.0,
        ..PlannerConfig::default()
    };
    let budget = config.population * config.iterations;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    println!("{:>5} {:>12} {:>16}", "trial", "planner", "random shooting");
    for trial in 0..8 {
        let mut m = |r: usize, c: usize, s: f64| -> Vec<Vec<f64>> {
            (0..r).map(|_| (0..c).map(|_| rng.random_range(-s..s)).collect()).collect()
        };
        let system = LinearSystem { a: m(3, 3, 0.6), b: m(3, 2, 1.0) };
        let z0: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let solution = plan(&system, &z0, &config, None, &mut rng);
        let planned = rollout_score(&system, &z0, &solution.mean, config.discount);
        let shooting = (0..budget)
            .map(|_| {
                let seq: Vec<Vec<f64>> = (0..config.horizon).map(|_| system.prior_sample(&z0, &mut rng)).collect();
                rollout_score(&system, &z0, &seq, config.discount)
            })
            .fold(f64::NEG_INFINITY, f64::max);
        println!("{trial:>5} {planned:>12.4} {shooting:>16.4}");
    }
}
