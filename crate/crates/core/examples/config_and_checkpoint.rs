//! Parse a config, train part of a run, checkpoint it, and resume to the
//! same parameters an uninterrupted run reaches.
//!
//! cargo run --example config_and_checkpoint

use cdl::checkpoint;
use cdl::config::Config;
use cdl::data::generate;
use cdl::trainer::{fit, fit_until, TrainError, TrainState};

const CONFIG: &str = r#"
seed = 21

[[net.layers]]
input_dim = 16
output_dim = 32
activation = "max-feature-map"

[[net.layers]]
input_dim = 16
output_dim = 16
activation = "max-feature-map"

[heads]
lambda = 0.01

[trainer]
iterations = 60
p_identities = 6

[data.synth]
identities = 20
test_identities = 5
samples_per_identity_per_modality = 3
latent_dim = 6
input_dim = 16
"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = Config::from_toml_str(CONFIG)?;
    println!(
        "trainer seed {} (from the top-level seed)",
        cfg.trainer.seed
    );
    let train = generate(&cfg.data.synth)?.train;
    let init = || TrainState::init(&cfg.net.layers, train.class_count(), cfg.heads, cfg.seed);

    let (whole, _) = fit(init()?, &train, &cfg.trainer)?;

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("checkpoint-25.txt");
    let (half, _) = fit_until(init()?, &train, &cfg.trainer, 25, |_, _| {
        Ok::<(), TrainError>(())
    })?;
    checkpoint::save(&half, &path)?;
    let restored = checkpoint::load(&path)?;
    println!(
        "checkpoint at iteration {} restores bit-exactly: {}",
        restored.iteration,
        restored == half
    );
    let (resumed, log) = fit(restored, &train, &cfg.trainer)?;
    println!(
        "resumed for {} more steps; matches the uninterrupted run: {}",
        log.records.len(),
        resumed == whole
    );
    println!("--- effective config ---\n{}", cfg.to_toml());
    Ok(())
}
