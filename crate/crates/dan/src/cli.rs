//! Subcommands. Every result goes to stdout as tab-separated records; notices go to stderr.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use dan_core::data::{Corpus, Domain, Stance};
use dan_core::metrics::{
    collect_features, evaluate_against, macro_f1_favour_against, predict_corpus, proxy_a_distance_dumps,
    FeatureDump, ProbeConfig,
};
use dan_core::model::FeatureView;
use dan_core::silver::{assign_silver_labels, train_silver_labeler, LabelerConfig, SubjectivityLabel};
use dan_core::synthetic::gen_synthetic;
use dan_core::train::{train, IterationRecord, TrainObserver};

use crate::checkpoint;
use crate::config::{RunConfig, KEYS};
use crate::error::{DanError, Result};
use crate::formats;
use crate::pipeline;

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const LOG_FILE: &str = "train_log.tsv";
pub const METRICS_FILE: &str = "metrics.tsv";
pub const CONFIG_FILE: &str = "config.txt";

#[derive(Parser, Debug)]
#[command(name = "dan", version, about = "Dual-view adversarial domain adaptation for stance classification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model; writes model.ckpt, train_log.tsv, metrics.tsv and config.txt to the output directory.
    Train(TrainArgs),
    /// Macro-F1 of a checkpoint over a labeled corpus.
    Eval(EvalArgs),
    /// Proxy A-distance between source and target feature dumps.
    Pad(PadArgs),
    /// Fit silver subjectivity/objectivity labelers and label a corpus.
    SilverLabel(SilverArgs),
    /// Generate a synthetic adaptation task as ordinary input files.
    GenSynth(GenSynthArgs),
    /// Write view features of a checkpoint over one or two corpora as CSV.
    ExportFeatures(ExportArgs),
}

fn config_keys_help() -> String {
    let mut s = String::from("Config keys (`key = value`, `#` comments):\n");
    for (k, d) in KEYS {
        s += &format!("  {k:<24} {d}\n");
    }
    s
}

#[derive(Args, Debug)]
#[command(after_help = config_keys_help())]
pub struct TrainArgs {
    /// Run config file; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides `aligner`.
    #[arg(long)]
    pub aligner: Option<String>,
    /// Overrides `view`.
    #[arg(long)]
    pub view: Option<String>,
    /// Overrides `seed` (DAN_SEED is the fallback when neither is set).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides `output_dir`.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Any config key as key=value; repeatable, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Labeled corpus TSV.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Also write `id<TAB>prediction` lines here.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PadArgs {
    /// Feature CSV. Alone, its rows are split by the domain column.
    #[arg(long)]
    pub features: PathBuf,
    /// Second feature CSV; when given, all rows of --features count as source and all of these as target.
    #[arg(long)]
    pub target_features: Option<PathBuf>,
    /// View name recorded in the report.
    #[arg(long, default_value = "dual")]
    pub view: String,
    /// Probe seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Probe epochs.
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    /// Probe learning rate.
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    /// Write the one-line JSON record here as well.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SilverArgs {
    /// Subjectivity corpus (`subj|obj<TAB>text`).
    #[arg(long)]
    pub subjectivity: PathBuf,
    /// Corpus TSV to label.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Silver-label file to write.
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Args, Debug)]
#[command(after_help = "Generator keys accepted by --set: every synth_* key listed in `dan train --help`.")]
pub struct GenSynthArgs {
    /// Directory for source.tsv, target.tsv, embeddings.txt, subjectivity.tsv, silver files and run.cfg.
    #[arg(long)]
    pub output: PathBuf,
    /// Generator seed (synth_seed).
    #[arg(long)]
    pub seed: Option<u64>,
    /// synth_* key as key=value; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Source-domain corpus TSV.
    #[arg(long)]
    pub source: PathBuf,
    /// Target-domain corpus TSV.
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// subj | obj | dual
    #[arg(long, default_value = "dual")]
    pub view: String,
    /// CSV file to write.
    #[arg(long)]
    pub output: PathBuf,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Pad(a) => cmd_pad(a),
        Command::SilverLabel(a) => cmd_silver(a),
        Command::GenSynth(a) => cmd_gen_synth(a),
        Command::ExportFeatures(a) => cmd_export(a),
    }
}

pub fn train_config(a: &TrainArgs) -> Result<RunConfig> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::from_env()?,
    };
    if let Some(v) = &a.aligner {
        cfg.apply_override(&format!("aligner={v}"))?;
    }
    if let Some(v) = &a.view {
        cfg.apply_override(&format!("view={v}"))?;
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    if let Some(o) = &a.output {
        cfg.output_dir = o.clone();
    }
    for kv in &a.sets {
        cfg.apply_override(kv)?;
    }
    Ok(cfg)
}

struct LogObserver<W: Write> {
    out: W,
    clock: Instant,
    failed: Option<std::io::Error>,
}

impl<W: Write> TrainObserver for LogObserver<W> {
    fn now(&mut self) -> Option<f64> {
        Some(self.clock.elapsed().as_secs_f64())
    }

    fn iteration(&mut self, r: &IterationRecord) {
        if self.failed.is_none() {
            if let Err(e) = writeln!(self.out, "{}", formats::log_line(r)) {
                self.failed = Some(e);
            }
        }
    }

    fn notice(&mut self, message: &str) {
        eprintln!("note: {message}");
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| DanError::io(dir, e))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let cfg = train_config(&a)?;
    cfg.validate()?;
    let prepared = pipeline::prepare(&cfg)?;
    if prepared.oov > 0 {
        eprintln!("note: {} vocabulary words have no vector and embed as zero", prepared.oov);
    }
    let dir = &cfg.output_dir;
    create_dir(dir)?;
    fs::write(dir.join(CONFIG_FILE), cfg.render()).map_err(|e| DanError::io(&dir.join(CONFIG_FILE), e))?;
    let mut model = pipeline::build_model(&cfg, prepared.table.clone())?;

    let log_path = dir.join(LOG_FILE);
    let file = fs::File::create(&log_path).map_err(|e| DanError::io(&log_path, e))?;
    let mut obs = LogObserver {
        out: BufWriter::new(file),
        clock: Instant::now(),
        failed: None,
    };
    writeln!(obs.out, "{}", formats::LOG_HEADER).map_err(|e| DanError::io(&log_path, e))?;
    let outcome = train(
        &mut model,
        &prepared.train,
        &prepared.target,
        &prepared.validation,
        &cfg.train,
        &mut obs,
    );
    obs.out.flush().map_err(|e| DanError::io(&log_path, e))?;
    if let Some(e) = obs.failed {
        return Err(DanError::io(&log_path, e));
    }
    let report = outcome?;

    checkpoint::save(&dir.join(CHECKPOINT_FILE), &model)?;
    let target_f1 = match &prepared.target_gold {
        Some(gold) => Some(evaluate_against(&model, &prepared.target, gold)?),
        None => None,
    };
    let val_f1 = if prepared.validation.is_empty() {
        None
    } else {
        Some(dan_core::metrics::evaluate(&model, &prepared.validation)?)
    };
    let metrics = format!(
        "iterations\tbest_iteration\tstopped_early\tval_macro_f1\ttarget_macro_f1\n{}\t{}\t{}\t{}\t{}\n",
        report.iterations(),
        report.best_iteration.map(|i| i.to_string()).unwrap_or_default(),
        report.stopped_early,
        fmt_opt(val_f1),
        fmt_opt(target_f1),
    );
    let mpath = dir.join(METRICS_FILE);
    fs::write(&mpath, &metrics).map_err(|e| DanError::io(&mpath, e))?;
    print!("{metrics}");
    Ok(())
}

fn load_indexed(path: &Path, domain: Domain, model: &dan_core::model::DanModel) -> Result<Corpus> {
    let mut c = formats::read_corpus(path, domain)?;
    pipeline::index_for(model, &mut c);
    Ok(c)
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let model = checkpoint::load(&a.checkpoint)?;
    let corpus = load_indexed(&a.corpus, Domain::Target, &model)?;
    let gold = corpus
        .examples
        .iter()
        .map(|e| e.stance)
        .collect::<Option<Vec<Stance>>>()
        .ok_or_else(|| DanError::Data(format!("{}: every example needs a stance label", a.corpus.display())))?;
    let pred = predict_corpus(&model, &corpus)?;
    let f1 = dan_core::metrics::macro_f1_stance(&pred, &gold)?;
    let fa = macro_f1_favour_against(&pred, &gold)?;
    if let Some(p) = &a.predictions {
        let mut s = String::new();
        for (e, y) in corpus.examples.iter().zip(&pred) {
            s += &format!("{}\t{}\n", e.id, y.as_str());
        }
        fs::write(p, s).map_err(|e| DanError::io(p, e))?;
    }
    println!("n\tmacro_f1\tmacro_f1_favour_against");
    println!("{}\t{f1:.6}\t{fa:.6}", gold.len());
    Ok(())
}

fn cmd_pad(a: PadArgs) -> Result<()> {
    let view = FeatureView::parse(&a.view)?;
    let first = formats::read_features(&a.features, view)?;
    let (source, target) = match &a.target_features {
        Some(t) => (first, formats::read_features(t, view)?),
        None => (first.of_domain(Domain::Source), first.of_domain(Domain::Target)),
    };
    let probe = ProbeConfig {
        epochs: a.epochs,
        learning_rate: a.lr,
        seed: a.seed,
        ..ProbeConfig::default()
    };
    let est = proxy_a_distance_dumps(&source, &target, &probe)?;
    if let Some(p) = &a.report {
        fs::write(p, formats::pad_record(&est, &a.view) + "\n").map_err(|e| DanError::io(p, e))?;
    }
    println!("view\tn_source\tn_target\tepsilon\tpad");
    println!("{}\t{}\t{}\t{:.6}\t{:.6}", a.view, est.n_source, est.n_target, est.epsilon, est.pad);
    Ok(())
}

fn cmd_silver(a: SilverArgs) -> Result<()> {
    let sentences = formats::read_subjectivity(&a.subjectivity)?;
    let mut corpus = formats::read_corpus(&a.corpus, Domain::Source)?;
    let lc = LabelerConfig::default();
    let subj = train_silver_labeler(&sentences, SubjectivityLabel::Subjective, &lc)?;
    let obj = train_silver_labeler(&sentences, SubjectivityLabel::Objective, &lc)?;
    assign_silver_labels(&mut corpus, &subj, &obj);
    formats::write_silver(&a.output, &corpus)?;
    let count = |f: fn(&dan_core::data::Example) -> Option<bool>| {
        corpus.examples.iter().filter(|e| f(e) == Some(true)).count()
    };
    println!("n\tsubj\tobj");
    println!("{}\t{}\t{}", corpus.len(), count(|e| e.silver_subj), count(|e| e.silver_obj));
    Ok(())
}

fn cmd_gen_synth(a: GenSynthArgs) -> Result<()> {
    let mut cfg = RunConfig::default();
    for kv in &a.sets {
        if !kv.starts_with("synth_") {
            return Err(DanError::Config(format!("gen-synth accepts only synth_* keys, got {kv:?}")));
        }
        cfg.apply_override(kv)?;
    }
    if let Some(s) = a.seed {
        cfg.synth.seed = s;
    }
    let data = gen_synthetic(&cfg.synth)?;
    let dir = &a.output;
    create_dir(dir)?;
    let write = |name: &str, text: &str| -> Result<()> {
        let p = dir.join(name);
        fs::write(&p, text).map_err(|e| DanError::io(&p, e))
    };
    write("source.tsv", &formats::format_corpus(&data.source)?)?;
    let mut target = data.target.clone();
    for (e, y) in target.examples.iter_mut().zip(&data.target_gold) {
        e.stance = Some(*y);
    }
    write("target.tsv", &formats::format_corpus(&target)?)?;
    write(
        "embeddings.txt",
        &formats::format_embeddings(data.embeddings.iter().map(|(w, v)| (w.as_str(), v.as_slice()))),
    )?;
    write("subjectivity.tsv", &formats::format_subjectivity(&data.subjectivity))?;
    write("source_silver.tsv", &formats::format_silver(&data.source)?)?;
    write("target_silver.tsv", &formats::format_silver(&data.target)?)?;
    let run = "# generated task; relative paths resolve against this file\n\
               data = files\nsource = source.tsv\ntarget = target.tsv\nembeddings = embeddings.txt\n\
               source_silver = source_silver.tsv\ntarget_silver = target_silver.tsv\n\
               subjectivity = subjectivity.tsv\noutput_dir = run\n";
    write("run.cfg", run)?;
    println!("n_source\tn_target\tvocabulary\tdir");
    println!(
        "{}\t{}\t{}\t{}",
        data.source.len(),
        data.target.len(),
        data.embeddings.len(),
        dir.display()
    );
    Ok(())
}

fn cmd_export(a: ExportArgs) -> Result<()> {
    let view = FeatureView::parse(&a.view)?;
    let model = checkpoint::load(&a.checkpoint)?;
    let mut dump = collect_features(&model, &load_indexed(&a.source, Domain::Source, &model)?, view)?;
    if let Some(t) = &a.target {
        let more: FeatureDump = collect_features(&model, &load_indexed(t, Domain::Target, &model)?, view)?;
        for r in more.rows {
            dump.push(r)?;
        }
    }
    formats::write_features_file(&a.output, &dump)?;
    println!("rows\twidth\tview\tpath");
    println!("{}\t{}\t{}\t{}", dump.len(), dump.width, view.as_str(), a.output.display());
    Ok(())
}
