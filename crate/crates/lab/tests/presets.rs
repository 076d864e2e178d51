use std::path::Path;

use icgps_lab::config::{self, ExperimentConfig};
use icgps_lab::store::{self, store_prior, synthetic_store};

fn root() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../.."))
}

#[test]
fn every_preset_parses_and_echoes_losslessly() {
    let mut seen = Vec::new();
    for entry in std::fs::read_dir(root().join("configs")).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().and_then(|e| e.to_str()) != Some("toml") {
            continue;
        }
        let cfg = config::load(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        let echoed = config::parse(&cfg.resolved_toml().unwrap()).unwrap();
        assert_eq!(echoed.bound(), cfg.bound(), "{}", p.display());
        let mut cfg2 = cfg.clone();
        cfg2.bound = Some(cfg.bound());
        assert_eq!(echoed, cfg2, "{}", p.display());
        seen.push(cfg.experiment.as_ref().map(ExperimentConfig::name).unwrap_or("none"));
    }
    seen.sort();
    assert_eq!(seen, ["ingest-eval", "q1", "q1", "q2-capacity", "q2-data", "q3-prior", "q3-shift"]);
}

#[test]
fn bundled_store_matches_its_generator() {
    let path = root().join("data/store.csv");
    let expected = {
        let mut buf = Vec::new();
        store::write_store(&synthetic_store(store_prior().default_bound()).unwrap(), &mut buf).unwrap();
        buf
    };
    assert_eq!(std::fs::read(&path).unwrap(), expected, "regenerate {}", path.display());

    let s = store::load(&path).unwrap();
    assert_eq!(s.len(), 20);
    assert!(s.censored_fraction() > 0.5);
    assert!(s.max_value() <= store_prior().default_bound());
}

#[test]
fn ingest_preset_bound_covers_the_store() {
    let cfg = config::load(&root().join("configs/ingest-eval.toml")).unwrap();
    let s = store::load(&root().join("data/store.csv")).unwrap();
    assert!(s.max_value() <= cfg.bound());
}
