//! Inspect feature selection quality on source vs target sentences after
//! training: does the selected prompt name the types actually present?

use pltr::eval::TaggingMode;
use pltr::neural::ModelConfig;
use pltr::prompting::select_relevant_trfs;
use pltr::synth::{generate, SynthSpec};
use pltr::training::{train, TrainConfig};
use pltr::trf::extract_trfs;
use std::collections::BTreeSet;

fn main() {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let spec = SynthSpec { seed, ..Default::default() };
    let bench = generate(&spec).unwrap();
    let trfs = extract_trfs(&bench.source_train, 3.0, 120).unwrap();
    let cfg = TrainConfig {
        epochs: 24,
        batch_size: 4,
        k: 5,
        alpha: 0.9,
        learning_rate: 1e-3,
        seed,
        word_dropout: 1.0,
        model: ModelConfig { dim: 32, depth: 2, heads: 2, max_len: 64 },
        ..Default::default()
    };
    let state = train(&bench.source_train, &bench.source_dev, &trfs, &cfg).unwrap();
    let model = &state.model;
    let _ = TaggingMode::FineTune;

    for (name, corpus) in [("SOURCE", &bench.source_test), ("TARGET", &bench.target_test)] {
        let mut match_count = 0usize;
        let mut typed = 0usize;
        let mut shown = 0;
        println!("== {name}");
        for s in corpus.sentences().iter() {
            let present: BTreeSet<&str> =
                s.labels.iter().filter_map(|l| l.entity_type()).collect();
            let selected = select_relevant_trfs(model, s, &trfs, cfg.k).unwrap();
            let picked_types: BTreeSet<&str> =
                selected.by_type.iter().map(|(t, _)| t.as_str()).collect();
            if !present.is_empty() {
                typed += 1;
                if present.iter().any(|t| picked_types.contains(t)) {
                    match_count += 1;
                }
            }
            if shown < 5 {
                println!(
                    "  present {:?} picked {:?} sel {:?}",
                    present, picked_types, selected.ordered
                );
                shown += 1;
            }
        }
        println!("  type-hit rate on typed sentences: {}/{typed}", match_count);
    }
}
