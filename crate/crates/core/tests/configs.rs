use std::path::Path;

use cdl::config::Config;

fn shipped(name: &str) -> Config {
    Config::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)).unwrap()
}

#[test]
fn default_file_matches_built_in_defaults() {
    assert_eq!(shipped("default.toml"), Config::default());
}

#[test]
fn softmax_only_file_disables_coupling_and_ranking() {
    let c = shipped("softmax_only.toml");
    assert_eq!(c.heads.lambda, 0.0);
    assert_eq!(c.trainer.heads.alpha1, 0.0);
    assert_eq!(c.trainer.heads.alpha2, 0.0);
    assert_eq!((c.trainer.lambda2_start, c.trainer.lambda2_end), (0.0, 0.0));
    assert_eq!(c.net, Config::default().net);
    assert_eq!(c.seed, Config::default().seed);
}
