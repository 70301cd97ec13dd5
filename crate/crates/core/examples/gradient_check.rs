//! Finite-difference check of the combined loss gradient on a small trunk.
//!
//! cargo run --example gradient_check

use cdl::coupling::HeadParams;
use cdl::data::{Batch, Modality};
use cdl::linalg::Matrix;
use cdl::net::{Activation, EmbeddingNet, LayerSpec};
use cdl::numcheck::{central_difference, CheckReport};
use cdl::ranking::{self, RankingConfig};
use cdl::trainer::{combined_loss_with_triplets, TrainState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let specs = [
        LayerSpec::new(6, 12, Activation::MaxFeatureMap),
        LayerSpec::new(6, 4, Activation::Identity),
    ];
    let params = HeadParams {
        lambda: 0.5,
        ..HeadParams::default()
    };
    let state = TrainState::init(&specs, 3, params, 1)?;

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let labels: Vec<usize> = [0, 0, 1, 1, 2, 2].repeat(2);
    let modalities: Vec<Modality> = [[Modality::Nir; 6], [Modality::Vis; 6]].concat();
    let batch = Batch {
        features: Matrix::from_fn(12, 6, |_, _| rng.random_range(-1.0..1.0)),
        labels,
        modalities,
    };

    // freeze the mined set so the objective is smooth around this point
    let rank_cfg = RankingConfig {
        margin: 1.0,
        max_triplets_per_anchor: 4,
    };
    let unit = ranking::normalize_rows(&state.net.embed(&batch.features)?).0;
    let triplets = ranking::mine_triplets(&unit, &batch.labels, &batch.modalities, &rank_cfg);
    let (l1, l2) = (1.0, 1.0);
    let loss = |net: &EmbeddingNet, s: &TrainState| {
        combined_loss_with_triplets(net, &s.heads, &batch, l1, l2, &triplets, rank_cfg.margin)
            .map(|c| c.parts.loss)
            .unwrap_or(f64::NAN)
    };
    let out = combined_loss_with_triplets(
        &state.net,
        &state.heads,
        &batch,
        l1,
        l2,
        &triplets,
        rank_cfg.margin,
    )?;
    println!("{}", out.parts);

    let mut report = CheckReport::default();
    for (si, slice) in out.net.slices().iter().enumerate() {
        for (k, &analytic) in slice.iter().enumerate() {
            let numeric = central_difference(
                |h| {
                    let mut net = state.net.clone();
                    net.param_slices_mut()[si][k] += h;
                    loss(&net, &state)
                },
                1e-6,
            );
            report.record(format!("trunk[{si}][{k}]"), analytic, numeric, 1e-4);
        }
    }
    for (k, &analytic) in out.d_w_n.as_slice().iter().enumerate() {
        let numeric = central_difference(
            |h| {
                let mut s = state.clone();
                s.heads.w_n.as_mut_slice()[k] += h;
                loss(&s.net, &s)
            },
            1e-6,
        );
        report.record(format!("w_n[{k}]"), analytic, numeric, 1e-4);
    }
    println!(
        "{} entries, max relative error {:.2e}, {} above 1e-4",
        report.checked,
        report.max_relative_error,
        report.failures.len()
    );
    Ok(())
}
