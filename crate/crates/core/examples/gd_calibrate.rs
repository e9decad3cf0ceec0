//! Success rate of the gradient-descent baseline on oversampled random
//! problems (m = 4n, n = 64) for a range of step sizes.
//!
//! cargo run --release -p eiphase --example gd_calibrate -- 0.1 0.3 0.5

use eiphase::baseline_gd::{solve, GdConfig};
use eiphase::{cosine_similarity, forward, ComplexImage, SensingOperator};
use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let steps: Vec<f64> = std::env::args().skip(1).map(|s| s.parse().expect("step size")).collect();
    let trials = 50;
    for step_size in steps {
        let cfg = GdConfig { step_size, ..GdConfig::default() };
        let mut ok = 0;
        let mut worst = 1.0f64;
        for t in 0..trials {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + t);
            let x = ComplexImage::new(
                (0..64).map(|_| Complex::from_polar(1.0, rng.random::<f64>() * std::f64::consts::TAU)).collect(),
                8,
                8,
            )
            .unwrap();
            let op = SensingOperator::<f64>::gaussian(256, 8, 8, 2000 + t).unwrap();
            let y = forward(&op, &x).unwrap();
            let sol = solve(&y, &op, &GdConfig { seed: t, ..cfg.clone() }).unwrap();
            let cs = cosine_similarity(&x, &sol.image).unwrap().value;
            worst = worst.min(cs);
            ok += (cs >= 0.95) as usize;
        }
        println!("step {step_size}: {ok}/{trials} with CS >= 0.95, worst {worst:.4}");
    }
}
