//! Trains each architectural variant briefly on the same coupled network and
//! compares validation error.

use gswan::augment::AugmentConfig;
use gswan::data::{prepare, SplitRatio};
use gswan::model::{init_model, param_count, Ablation, ModelConfig};
use gswan::synthetic::{generate, SynthConfig};
use gswan::training::{train, TrainConfig};

fn main() -> gswan::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(10);
    let d = generate(&SynthConfig {
        n_sensors: 8,
        days: 7,
        noise_std: 0.5,
        phase_spread: 120.0,
        gain_min: 0.4,
        gain_max: 0.8,
        seed: 11,
        ..Default::default()
    })?;
    let data = prepare(&d, SplitRatio::SPEED, 12, 12)?;
    let base = ModelConfig {
        d_hidden: 8,
        d_skip: 16,
        n_layers: 2,
        dilations: vec![4, 8],
        n_heads: 2,
        d_embed: 4,
        tau: 0.2,
        mask_nonedges: true,
        ..Default::default()
    };
    let tcfg = TrainConfig { epochs, lr0: 3e-3, ..Default::default() };
    for ab in [Ablation::Full, Ablation::SingleHead, Ablation::NoNodeEmbeddings, Ablation::GcnWithoutSgt] {
        let cfg = base.clone().with_ablation(ab);
        let out = train(init_model(&cfg, 8, 0)?, &data, &tcfg, &AugmentConfig::disabled())?;
        let best = out.history.best().unwrap();
        println!("{:<18} {:>6} params  best val MAE {:.4} (epoch {})", format!("{ab:?}"), param_count(&cfg, 8), best.val.mae, best.epoch);
    }
    Ok(())
}
