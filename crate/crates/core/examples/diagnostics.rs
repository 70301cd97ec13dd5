//! Scatter statistics and head correlation before and after a short run.
//!
//! cargo run --release --example diagnostics [iterations]

use cdl::config::Config;
use cdl::data::generate;
use cdl::eval::{variance_analysis, variance_curve};
use cdl::ranking::normalize_rows;
use cdl::trainer::{fit, TrainState};

fn describe(
    label: &str,
    state: &TrainState,
    cfg: &Config,
    data: &cdl::Dataset,
) -> Result<(), Box<dyn std::error::Error>> {
    let emb = normalize_rows(&state.net.embed(&data.features())?).0;
    let labels = data.labels();
    let norm = cfg.eval.inter_normalization;
    let full = variance_analysis(&emb, &labels, norm)?;
    let curve = variance_curve(&emb, &labels, &[1, 2, 4, 8, 16], norm)?;
    let corr = state.heads.correlation_matrix();
    println!("{label}");
    println!(
        "  sigma_intra {:.4}  sigma_inter {:.4}",
        full.intra, full.inter
    );
    for p in curve {
        println!(
            "  dim {:>2}: intra {:.4}  inter {:.4}",
            p.dim, p.intra, p.inter
        );
    }
    println!(
        "  correlation: cross-block mean {:.3}, off-diagonal median {:.3}",
        corr.cross_block_diagonal_mean(),
        corr.off_diagonal_median()
    );
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = Config::default();
    cfg.trainer.iterations = match std::env::args().nth(1) {
        Some(n) => n.parse()?,
        None => 3000,
    };
    let synth = generate(&cfg.data.synth)?;
    let pooled = synth.gallery.concat(&synth.probe)?;
    let state = TrainState::init(
        &cfg.net.layers,
        synth.train.class_count(),
        cfg.heads,
        cfg.seed,
    )?;
    describe("initialization", &state, &cfg, &pooled)?;
    let (trained, _) = fit(state, &synth.train, &cfg.trainer)?;
    describe(
        &format!("after {} iterations", cfg.trainer.iterations),
        &trained,
        &cfg,
        &pooled,
    )?;
    Ok(())
}
