//! Applies the three input augmentations to one scaled training window and
//! reports what changed.

use gswan::augment::{spatial_occlusion, temporal_permutation, uniform_noise, AugmentConfig};
use gswan::data::{prepare, SplitRatio};
use gswan::seed::rng_for;
use gswan::synthetic::{generate, SynthConfig};

fn main() -> gswan::Result<()> {
    let d = generate(&SynthConfig { n_sensors: 10, days: 2, noise_std: 0.5, phase_spread: 90.0, ..Default::default() })?;
    let data = prepare(&d, SplitRatio::SPEED, 12, 12)?;
    let x = &data.train.windows[100].input;
    let cfg = AugmentConfig { p_occlude: 0.3, occlude_scale: 0.05, p_permute: 0.5, noise_scale: 0.05, seed: 0 };
    let mut rng = rng_for(cfg.seed, "example", &[]);

    let occluded = spatial_occlusion(x, &cfg, &mut rng);
    let (n, l) = (x.shape()[1], x.shape()[2]);
    let hit: Vec<usize> = (0..n).filter(|&s| occluded.get(&[0, s, 0]) != x.get(&[0, s, 0])).collect();
    println!("occlusion scaled sensors {hit:?} by {}", cfg.occlude_scale);

    let permuted = temporal_permutation(x, &cfg, &mut rng);
    let moved: Vec<usize> = (0..l).filter(|&t| (0..n).any(|s| permuted.get(&[0, s, t]) != x.get(&[0, s, t]))).collect();
    println!("permutation shuffled sensors at timesteps {moved:?}");

    let noisy = uniform_noise(x, &cfg, 1.0, &mut rng);
    println!("uniform noise: max |delta| {:.4} (bound {})", noisy.max_abs_diff(x), cfg.noise_scale);

    let same = gswan::augment::augment(x, &AugmentConfig::disabled(), &mut rng);
    println!("disabled config is the identity: {}", same == *x);
    Ok(())
}
