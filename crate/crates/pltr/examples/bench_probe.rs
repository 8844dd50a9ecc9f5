//! Scratch probe for the synthetic cross-domain benchmark: trains the
//! prompted model and the bare baseline on one seed and prints in-domain
//! and target-domain micro-F1 for both.

use std::collections::BTreeSet;
use std::time::Instant;

use pltr::eval::{evaluate, evaluate_ood, ModelTagger, TaggingMode};
use pltr::neural::ModelConfig;
use pltr::synth::{entity_overlap, generate, SynthSpec};
use pltr::training::{train, train_baseline, TrainConfig};
use pltr::trf::extract_trfs;

fn main() {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let epochs: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(8);
    let dim: usize = std::env::args().nth(3).and_then(|s| s.parse().ok()).unwrap_or(32);

    let spec = SynthSpec { seed, ..Default::default() };
    let bench = generate(&spec).unwrap();
    println!(
        "seed {seed}: train {} dev {} test {} target {} overlap {:.3}",
        bench.source_train.len(),
        bench.source_dev.len(),
        bench.source_test.len(),
        bench.target_test.len(),
        entity_overlap(&bench.source_train, &bench.target_test),
    );

    let trfs = extract_trfs(&bench.source_train, 3.0, 120).unwrap();
    for ty in &bench.manifest.type_names {
        let mined: Vec<&str> =
            trfs.entries_for(ty).iter().take(8).map(|e| e.token.as_str()).collect();
        println!("  {ty}: {mined:?}");
    }

    let dropout: f64 = std::env::args().nth(4).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let k: usize = std::env::args().nth(5).and_then(|s| s.parse().ok()).unwrap_or(5);
    let alpha: f64 = std::env::args().nth(6).and_then(|s| s.parse().ok()).unwrap_or(0.75);
    let lr: f64 = std::env::args().nth(7).and_then(|s| s.parse().ok()).unwrap_or(2e-3);
    let mode = if std::env::var_os("PLTR_PROBE_ENTLM").is_some() {
        TaggingMode::PromptTune
    } else {
        TaggingMode::FineTune
    };
    let cfg = TrainConfig {
        mode,
        epochs,
        batch_size: 4,
        k,
        alpha,
        learning_rate: lr,
        seed,
        word_dropout: dropout,
        model: ModelConfig { dim, depth: 2, heads: 4, max_len: 64 },
        ..Default::default()
    };
    let known: BTreeSet<String> = bench.manifest.type_names.iter().cloned().collect();

    let t0 = Instant::now();
    let pltr_state = train(&bench.source_train, &bench.source_dev, &trfs, &cfg).unwrap();
    let t_pltr = t0.elapsed();
    let tagger = ModelTagger {
        model: &pltr_state.model,
        trfs: Some(&trfs),
        k: cfg.k,
        mode: cfg.mode,
    };
    let pltr_in = evaluate(&tagger, &bench.source_test).unwrap().micro_f1;
    let pltr_ood = evaluate_ood(&tagger, &bench.target_test, &known).unwrap().micro_f1;
    // NP ablation: same weights, prompts suppressed at inference
    let np_tagger = ModelTagger {
        model: &pltr_state.model,
        trfs: None,
        k: cfg.k,
        mode: cfg.mode,
    };
    let np_in = evaluate(&np_tagger, &bench.source_test).unwrap().micro_f1;
    let np_ood = evaluate_ood(&np_tagger, &bench.target_test, &known).unwrap().micro_f1;
    println!("pltr-NP:  in {np_in:.4}  ood {np_ood:.4}");

    let mut base_cfg = cfg.clone();
    base_cfg.prompts = false;
    base_cfg.alpha = 1.0;
    let t1 = Instant::now();
    let base_state = train_baseline(&bench.source_train, &bench.source_dev, &base_cfg).unwrap();
    let t_base = t1.elapsed();
    let base_tagger = ModelTagger {
        model: &base_state.model,
        trfs: None,
        k: cfg.k,
        mode: cfg.mode,
    };
    let base_in = evaluate(&base_tagger, &bench.source_test).unwrap().micro_f1;
    let base_ood = evaluate_ood(&base_tagger, &bench.target_test, &known).unwrap().micro_f1;

    let dev_curve: Vec<String> =
        pltr_state.epoch_trace.iter().map(|e| format!("{:.2}", e.dev_micro_f1)).collect();
    println!("pltr dev curve: {}", dev_curve.join(" "));
    println!("pltr:     in {:.4}  ood {:.4}  best-dev {:.4} (epoch {})  [{:.1?}]",
        pltr_in, pltr_ood, pltr_state.best_dev_f1, pltr_state.best_epoch, t_pltr);
    println!("baseline: in {:.4}  ood {:.4}  best-dev {:.4} (epoch {})  [{:.1?}]",
        base_in, base_ood, base_state.best_dev_f1, base_state.best_epoch, t_base);
    println!("gap: ood {:+.2} pts, in-domain {:+.2} pts",
        100.0 * (pltr_ood - base_ood), 100.0 * (pltr_in - base_in));
}
