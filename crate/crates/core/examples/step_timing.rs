//! Times one self-supervised training step (forward + backward) per U-Net width.

use std::time::Instant;

use eiphase::losses::{evaluate_objective, McVariant, Objective};
use eiphase::{make_dataset, RealImage, ReconstructorConfig, SensingOperator, UNetReconstructor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let op = SensingOperator::<f32>::gaussian(392, 28, 28, 0).unwrap();
    let images: Vec<RealImage<f32>> =
        (0..5).map(|_| RealImage::new((0..784).map(|_| rng.random()).collect(), 28, 28).unwrap()).collect();
    let batch = make_dataset(&images, &op, true).unwrap();
    for width in [8, 16, 32] {
        let cfg = ReconstructorConfig { base_channels: width, ..Default::default() };
        let model = UNetReconstructor::<f32>::new(cfg, 0).unwrap();
        for (name, obj) in [
            ("ss", Objective::Total { variant: McVariant::Amplitude, lambda: 1.0, shifts_per_image: 2 }),
            ("sup", Objective::Supervised),
        ] {
            let reps = 3;
            let t = Instant::now();
            for _ in 0..reps {
                evaluate_objective(obj, &batch, &model, &op, &mut rng, true).unwrap();
            }
            println!("width {width:>2} {name:>3}: {:.3} s/step", t.elapsed().as_secs_f64() / reps as f64);
        }
    }
}
