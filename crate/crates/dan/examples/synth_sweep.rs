//! Trains SO, DANN and D-DANN on one synthetic task and prints target macro-F1.
//!
//! Knobs come from environment variables so sweeps need no rebuild.

use std::env;
use std::time::Instant;

use dan_core::data::split_validation;
use dan_core::metrics::{collect_features, evaluate_against, proxy_a_distance_dumps, ProbeConfig};
use dan_core::model::{AlignerKind, DanModel, FeatureView, ViewMode};
use dan_core::nn::EmbeddingTable;
use dan_core::synthetic::{gen_synthetic, SynthSpec};
use dan_core::train::{train, Coupling, Silent, TrainConfig};
use dan_core::vocab::Vocabulary;

fn knob<T: std::str::FromStr>(name: &str, default: T) -> T {
    env::var(name).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn mix_knob(name: &str, default: [f64; 3]) -> [f64; 3] {
    let Ok(v) = env::var(name) else { return default };
    let p: Vec<f64> = v.split(',').map(|x| x.parse().unwrap()).collect();
    [p[0], p[1], p[2]]
}

fn main() {
    let seeds: u64 = knob("SEEDS", 3);
    let spec0 = SynthSpec {
        shift_strength: knob("STRENGTH", 3.0),
        cue_spread: knob("SPREAD", 0.5),
        synonym_noise: knob("NOISE", 0.1),
        embed_dim: knob("DE", 16),
        fillers: knob("FILLERS", 40),
        cues_per_class: knob("CUES", 4),
        shift_rate: knob("SHIFT", 0.6),
        source_mix: mix_knob("SMIX", [0.4, 0.4, 0.2]),
        target_mix: mix_knob("TMIX", [0.4, 0.4, 0.2]),
        separate_offsets: knob("SEP", 1) == 1,
        ..SynthSpec::default()
    };
    let base = TrainConfig {
        hidden: knob("DH", 16),
        ffn_hidden: knob("DF", 16),
        max_iterations: knob("ITERS", 1500),
        lambda1: knob("L1", 1.0),
        lambda2: knob("L2", 1.0),
        warmup: knob("WARMUP", 100),
        eval_every: knob("EVAL", 50),
        patience: knob("PATIENCE", 10),
        critic_steps: knob("NSTEPS", 5),
        coupling: env::var("COUPLING").ok().map(|c| Coupling::parse(&c).unwrap()),
        ..TrainConfig::default()
    };
    let gamma: f64 = knob("GAMMA", 0.1);
    let show_pad = knob("PAD", 0) == 1;
    let configs = [
        ("SO", ViewMode::Single, AlignerKind::None),
        ("DANN", ViewMode::Single, AlignerKind::HAdversarial),
        ("D-DANN", ViewMode::Dual, AlignerKind::HAdversarial),
    ];
    let mut sums = [0.0; 3];
    let first: u64 = knob("SEED0", 0);
    for seed in first..first + seeds {
        let spec = SynthSpec { seed, ..spec0.clone() };
        let data = gen_synthetic(&spec).unwrap();
        let vocab = Vocabulary::from_tokens(data.source.tokens().chain(data.target.tokens()), |_| true);
        let map = data.embedding_map();
        let table = EmbeddingTable::from_lookup(vocab.clone(), spec.embed_dim, 0, |w| map.get(w).copied()).unwrap();
        let mut source = data.source.clone();
        let mut target = data.target.clone();
        source.index(&vocab);
        target.index(&vocab);
        let (train_set, val) = split_validation(&source, 0.1, seed).unwrap();
        let mut line = format!("seed {seed}:");
        for (k, (name, mode, aligner)) in configs.iter().enumerate() {
            let mut cfg = TrainConfig {
                seed,
                view_mode: *mode,
                aligner: *aligner,
                ..base.clone()
            };
            cfg.weights.gamma = gamma;
            let mut model = DanModel::new(cfg.model_config(), table.clone(), seed).unwrap();
            let t0 = Instant::now();
            let rep = train(&mut model, &train_set, &target, &val, &cfg, &mut Silent).unwrap();
            let f1 = evaluate_against(&model, &target, &data.target_gold).unwrap();
            sums[k] += f1;
            let mut pads = String::new();
            if show_pad {
                let views: &[FeatureView] = match mode {
                    ViewMode::Single => &[FeatureView::Dual],
                    _ => &[FeatureView::Subj, FeatureView::Obj, FeatureView::Dual],
                };
                for v in views {
                    let a = collect_features(&model, &train_set, *v).unwrap();
                    let b = collect_features(&model, &target, *v).unwrap();
                    let pad = proxy_a_distance_dumps(&a, &b, &ProbeConfig { seed, ..ProbeConfig::default() }).unwrap();
                    pads += &format!(" pad[{}]={:.2}", v.as_str(), pad.pad);
                }
            }
            line += &format!(
                "  {name} {:.1} (val {:.1}, it {}/{}, {:.0}s)",
                100.0 * f1,
                100.0 * rep.best_val_macro_f1.unwrap_or(0.0),
                rep.best_iteration.unwrap_or(0),
                rep.iterations(),
                t0.elapsed().as_secs_f64()
            );
            line += &pads;
        }
        println!("{line}");
    }
    let n = seeds as f64;
    println!(
        "mean: SO {:.1}  DANN {:.1}  D-DANN {:.1}",
        100.0 * sums[0] / n,
        100.0 * sums[1] / n,
        100.0 * sums[2] / n
    );
}
