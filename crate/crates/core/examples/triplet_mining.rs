//! Cross-modal semi-hard triplet mining on a batch drawn from synthetic
//! data, and the ranking loss on the mined set.
//!
//! cargo run --example triplet_mining

use cdl::config::Config;
use cdl::data::{generate, BatchSampler, SamplingMode};
use cdl::net::EmbeddingNet;
use cdl::ranking::{self, squared_distance};
use cdl::rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = Config::default();
    let synth = generate(&cfg.data.synth)?;
    let net = EmbeddingNet::init(&cfg.net.layers, cfg.seed)?;
    let batch = BatchSampler::new(&synth.train).sample(
        4,
        2,
        SamplingMode::PairedOnly,
        &mut rng::fork(cfg.seed, "example-batch"),
    )?;

    let unit = ranking::normalize_rows(&net.embed(&batch.features)?).0;
    let triplets = ranking::mine_triplets(&unit, &batch.labels, &batch.modalities, &cfg.ranking);
    println!(
        "{} rows, margin {}, cap {} per anchor: {} triplets",
        batch.len(),
        cfg.ranking.margin,
        cfg.ranking.max_triplets_per_anchor,
        triplets.len()
    );
    for t in triplets.iter().take(8) {
        let d_ap = squared_distance(unit.row(t.anchor), unit.row(t.positive));
        let d_an = squared_distance(unit.row(t.anchor), unit.row(t.negative));
        println!(
            "a {:>2} ({:?} id {:>2})  p {:>2}  n {:>2} (id {:>2})  d_ap {d_ap:.4} < d_an {d_an:.4} < d_ap+m {:.4}",
            t.anchor,
            batch.modalities[t.anchor],
            batch.labels[t.anchor],
            t.positive,
            t.negative,
            batch.labels[t.negative],
            d_ap + cfg.ranking.margin
        );
    }
    let (loss, grad) = ranking::triplet_loss(&unit, &triplets, cfg.ranking.margin)?;
    println!(
        "ranking loss {loss:.6}, gradient norm {:.6}",
        grad.frobenius_norm()
    );
    Ok(())
}
