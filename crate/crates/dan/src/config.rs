//! Run configuration: `key = value` lines, `#` comments.
//!
//! Precedence, lowest first: built-in defaults, `DAN_SEED`, the file, command-line overrides.
//! Relative paths resolve against the config file's directory.

use std::fs;
use std::path::{Path, PathBuf};

use dan_core::model::{AlignerKind, ViewMode};
use dan_core::synthetic::SynthSpec;
use dan_core::train::{Coupling, TrainConfig};

use crate::checkpoint::{init_str, parse_init, parse_pooling, pooling_str};
use crate::error::{DanError, Result};

/// Input files for a run on real corpora.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DataPaths {
    pub source: Option<PathBuf>,
    pub target: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub source_silver: Option<PathBuf>,
    pub target_silver: Option<PathBuf>,
    pub subjectivity: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataMode {
    Files,
    Synthetic,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub data: DataMode,
    pub paths: DataPaths,
    pub synth: SynthSpec,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            data: DataMode::Files,
            paths: DataPaths::default(),
            synth: SynthSpec::default(),
            output_dir: PathBuf::from("run"),
        }
    }
}

/// Every accepted key with a one-line description, in `--help` order.
pub const KEYS: &[(&str, &str)] = &[
    ("data", "files | synthetic"),
    ("source", "labeled source corpus TSV"),
    ("target", "target corpus TSV (stance column ignored in training)"),
    ("embeddings", "word vectors, `word v1 ... vd` per line"),
    ("source_silver", "silver labels for the source corpus"),
    ("target_silver", "silver labels for the target corpus"),
    ("subjectivity", "subjectivity corpus used to fit the silver labeler"),
    ("output_dir", "directory for checkpoint, log and metrics"),
    ("view", "single | dual | dual-subj-only | dual-obj-only"),
    ("aligner", "none | coral | h-adversarial | wasserstein"),
    ("coupling", "auto | alternating | reversal"),
    ("alpha", "subjective auxiliary loss weight"),
    ("beta", "objective auxiliary loss weight"),
    ("gamma", "alignment loss weight"),
    ("lambda1", "examiner learning-rate multiplier"),
    ("lambda2", "learning-rate multiplier for the rest"),
    ("batch_size", "examples per domain per batch"),
    ("critic_steps", "examiner steps per iteration"),
    ("warmup", "learning-rate warmup steps"),
    ("max_iterations", "iteration budget"),
    ("patience", "evaluations without improvement before stopping"),
    ("eval_every", "iterations between validation passes"),
    ("seed", "run seed"),
    ("clip", "critic weight clip bound (wasserstein)"),
    ("dropout", "dropout on view features"),
    ("hidden", "encoder hidden size"),
    ("ffn_hidden", "feed-forward head hidden size"),
    ("pooling", "mean | last"),
    ("init", "zero | uniform:<a>"),
    ("validation_fraction", "share of source held out for early stopping"),
    ("synth_n_source", "synthetic source size"),
    ("synth_n_target", "synthetic target size"),
    ("synth_shift_rate", "share of word types given target synonyms"),
    ("synth_seed", "generator seed"),
    ("synth_embed_dim", "synthetic embedding width"),
    ("synth_cues_per_class", "cue words per view and class"),
    ("synth_fillers", "filler words"),
    ("synth_min_len", "shortest utterance"),
    ("synth_max_len", "longest utterance"),
    ("synth_shift_strength", "length of the synonym offset"),
    ("synth_cue_spread", "cue spread around class prototypes"),
    ("synth_synonym_noise", "noise on synonym vectors"),
    ("synth_source_mix", "subj-only,obj-only,both cue-set probabilities in source"),
    ("synth_target_mix", "the same for target"),
    ("synth_subjectivity_size", "subjectivity sentences per class"),
    ("synth_separate_offsets", "shift each word family along its own direction (true|false)"),
];

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| DanError::Config(format!("{key}: cannot parse {v:?}")))
}

fn mix(key: &str, v: &str) -> Result<[f64; 3]> {
    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(DanError::Config(format!("{key}: expected three comma-separated numbers")));
    }
    Ok([num(key, parts[0])?, num(key, parts[1])?, num(key, parts[2])?])
}

impl RunConfig {
    /// Defaults with the `DAN_SEED` fallback applied.
    pub fn from_env() -> Result<Self> {
        let mut c = Self::default();
        if let Ok(s) = std::env::var("DAN_SEED") {
            c.set("seed", &s, Path::new("."))?;
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| DanError::Config(format!("{}: {e}", path.display())))?;
        let mut c = Self::from_env()?;
        let base = path.parent().unwrap_or(Path::new("."));
        c.apply_text(&text, base)
            .map_err(|e| DanError::Config(format!("{}: {}", path.display(), e.message())))?;
        Ok(c)
    }

    pub fn apply_text(&mut self, text: &str, base: &Path) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| DanError::Config(format!("line {}: expected `key = value`", i + 1)))?;
            self.set(k.trim(), v.trim(), base)
                .map_err(|e| DanError::Config(format!("line {}: {}", i + 1, e.message())))?;
        }
        Ok(())
    }

    /// Applies one `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| DanError::Config(format!("override {kv:?} is not key=value")))?;
        self.set(k.trim(), v.trim(), Path::new("."))
    }

    pub fn set(&mut self, key: &str, v: &str, base: &Path) -> Result<()> {
        let path = || {
            let p = PathBuf::from(v);
            if p.is_absolute() || base.as_os_str().is_empty() || base == Path::new(".") {
                p
            } else {
                base.join(p)
            }
        };
        let t = &mut self.train;
        let s = &mut self.synth;
        match key {
            "data" => {
                self.data = match v {
                    "files" => DataMode::Files,
                    "synthetic" => DataMode::Synthetic,
                    _ => return Err(DanError::Config(format!("data: expected files|synthetic, got {v:?}"))),
                }
            }
            "source" => self.paths.source = Some(path()),
            "target" => self.paths.target = Some(path()),
            "embeddings" => self.paths.embeddings = Some(path()),
            "source_silver" => self.paths.source_silver = Some(path()),
            "target_silver" => self.paths.target_silver = Some(path()),
            "subjectivity" => self.paths.subjectivity = Some(path()),
            "output_dir" => self.output_dir = path(),
            "view" => t.view_mode = ViewMode::parse(v)?,
            "aligner" => t.aligner = AlignerKind::parse(v)?,
            "coupling" => {
                t.coupling = match v {
                    "auto" => None,
                    other => Some(Coupling::parse(other)?),
                }
            }
            "alpha" => t.weights.alpha = num(key, v)?,
            "beta" => t.weights.beta = num(key, v)?,
            "gamma" => t.weights.gamma = num(key, v)?,
            "lambda1" => t.lambda1 = num(key, v)?,
            "lambda2" => t.lambda2 = num(key, v)?,
            "batch_size" => t.batch_size = num(key, v)?,
            "critic_steps" => t.critic_steps = num(key, v)?,
            "warmup" => t.warmup = num(key, v)?,
            "max_iterations" => t.max_iterations = num(key, v)?,
            "patience" => t.patience = num(key, v)?,
            "eval_every" => t.eval_every = num(key, v)?,
            "seed" => t.seed = num(key, v)?,
            "clip" => t.clip = num(key, v)?,
            "dropout" => t.dropout = num(key, v)?,
            "hidden" => t.hidden = num(key, v)?,
            "ffn_hidden" => t.ffn_hidden = num(key, v)?,
            "pooling" => t.pooling = parse_pooling(v)?,
            "init" => t.init = parse_init(v)?,
            "validation_fraction" => t.validation_fraction = num(key, v)?,
            "synth_n_source" => s.n_source = num(key, v)?,
            "synth_n_target" => s.n_target = num(key, v)?,
            "synth_shift_rate" => s.shift_rate = num(key, v)?,
            "synth_seed" => s.seed = num(key, v)?,
            "synth_embed_dim" => s.embed_dim = num(key, v)?,
            "synth_cues_per_class" => s.cues_per_class = num(key, v)?,
            "synth_fillers" => s.fillers = num(key, v)?,
            "synth_min_len" => s.min_len = num(key, v)?,
            "synth_max_len" => s.max_len = num(key, v)?,
            "synth_shift_strength" => s.shift_strength = num(key, v)?,
            "synth_cue_spread" => s.cue_spread = num(key, v)?,
            "synth_synonym_noise" => s.synonym_noise = num(key, v)?,
            "synth_source_mix" => s.source_mix = mix(key, v)?,
            "synth_target_mix" => s.target_mix = mix(key, v)?,
            "synth_subjectivity_size" => s.subjectivity_size = num(key, v)?,
            "synth_separate_offsets" => s.separate_offsets = num(key, v)?,
            _ => return Err(DanError::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Checks hyperparameters and every input path, touching no data.
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.data == DataMode::Synthetic {
            return Ok(self.synth.validate()?);
        }
        let need = |name: &str, p: &Option<PathBuf>| -> Result<()> {
            match p {
                None => Err(DanError::Config(format!("{name} path is required for file data"))),
                Some(p) if !p.is_file() => Err(DanError::Config(format!("{name}: {} does not exist", p.display()))),
                _ => Ok(()),
            }
        };
        let p = &self.paths;
        need("source", &p.source)?;
        need("target", &p.target)?;
        need("embeddings", &p.embeddings)?;
        for (name, opt) in [
            ("source_silver", &p.source_silver),
            ("target_silver", &p.target_silver),
            ("subjectivity", &p.subjectivity),
        ] {
            if opt.is_some() {
                need(name, opt)?;
            }
        }
        let needs_silver = self.train.view_mode != ViewMode::Single;
        let have_files = p.source_silver.is_some() && p.target_silver.is_some();
        if needs_silver && !have_files && p.subjectivity.is_none() {
            return Err(DanError::Config(format!(
                "view {} needs silver labels: give source_silver and target_silver, or subjectivity",
                self.train.view_mode.as_str()
            )));
        }
        Ok(())
    }

    /// The effective configuration as `key = value` lines, loadable again.
    pub fn render(&self) -> String {
        let t = &self.train;
        let s = &self.synth;
        let p = &self.paths;
        let mut lines = vec![format!(
            "data = {}",
            match self.data {
                DataMode::Files => "files",
                DataMode::Synthetic => "synthetic",
            }
        )];
        for (k, v) in [
            ("source", &p.source),
            ("target", &p.target),
            ("embeddings", &p.embeddings),
            ("source_silver", &p.source_silver),
            ("target_silver", &p.target_silver),
            ("subjectivity", &p.subjectivity),
        ] {
            if let Some(v) = v {
                lines.push(format!("{k} = {}", v.display()));
            }
        }
        let mix = |m: [f64; 3]| format!("{},{},{}", m[0], m[1], m[2]);
        let pairs: Vec<(&str, String)> = vec![
            ("output_dir", self.output_dir.display().to_string()),
            ("view", t.view_mode.as_str().into()),
            ("aligner", t.aligner.as_str().into()),
            ("coupling", t.coupling.map_or("auto", Coupling::as_str).into()),
            ("alpha", t.weights.alpha.to_string()),
            ("beta", t.weights.beta.to_string()),
            ("gamma", t.weights.gamma.to_string()),
            ("lambda1", t.lambda1.to_string()),
            ("lambda2", t.lambda2.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("critic_steps", t.critic_steps.to_string()),
            ("warmup", t.warmup.to_string()),
            ("max_iterations", t.max_iterations.to_string()),
            ("patience", t.patience.to_string()),
            ("eval_every", t.eval_every.to_string()),
            ("seed", t.seed.to_string()),
            ("clip", t.clip.to_string()),
            ("dropout", t.dropout.to_string()),
            ("hidden", t.hidden.to_string()),
            ("ffn_hidden", t.ffn_hidden.to_string()),
            ("pooling", pooling_str(t.pooling).into()),
            ("init", init_str(t.init)),
            ("validation_fraction", t.validation_fraction.to_string()),
            ("synth_n_source", s.n_source.to_string()),
            ("synth_n_target", s.n_target.to_string()),
            ("synth_shift_rate", s.shift_rate.to_string()),
            ("synth_seed", s.seed.to_string()),
            ("synth_embed_dim", s.embed_dim.to_string()),
            ("synth_cues_per_class", s.cues_per_class.to_string()),
            ("synth_fillers", s.fillers.to_string()),
            ("synth_min_len", s.min_len.to_string()),
            ("synth_max_len", s.max_len.to_string()),
            ("synth_shift_strength", s.shift_strength.to_string()),
            ("synth_cue_spread", s.cue_spread.to_string()),
            ("synth_synonym_noise", s.synonym_noise.to_string()),
            ("synth_source_mix", mix(s.source_mix)),
            ("synth_target_mix", mix(s.target_mix)),
            ("synth_subjectivity_size", s.subjectivity_size.to_string()),
            ("synth_separate_offsets", s.separate_offsets.to_string()),
        ];
        for (k, v) in pairs {
            lines.push(format!("{k} = {v}"));
        }
        lines.join("\n") + "\n"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_comments_and_errors() {
        let mut c = RunConfig::default();
        c.apply_text("# a run\naligner = none  # baseline\nview=single\nseed = 7\n\n", Path::new("/x"))
            .unwrap();
        assert_eq!(c.train.aligner, AlignerKind::None);
        assert_eq!(c.train.view_mode, ViewMode::Single);
        assert_eq!(c.train.seed, 7);
        let e = c.apply_text("ok = 1\n", Path::new(".")).unwrap_err();
        assert!(e.to_string().contains("unknown key"), "{e}");
        assert!(c.apply_text("seed\n", Path::new(".")).is_err());
        assert!(c.apply_text("seed = x\n", Path::new(".")).is_err());
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let mut c = RunConfig::default();
        c.apply_text("source = a.tsv\ntarget = /abs/b.tsv\n", Path::new("/cfg")).unwrap();
        assert_eq!(c.paths.source.as_deref(), Some(Path::new("/cfg/a.tsv")));
        assert_eq!(c.paths.target.as_deref(), Some(Path::new("/abs/b.tsv")));
    }

    #[test]
    fn rendered_config_reloads_equal() {
        let mut c = RunConfig::default();
        c.apply_text("data = synthetic\ncoupling = alternating\ninit = zero\nsynth_source_mix = 0.5,0.25,0.25\n", Path::new("."))
            .unwrap();
        let mut d = RunConfig::default();
        d.apply_text(&c.render(), Path::new(".")).unwrap();
        assert_eq!(c, d);
        for line in c.render().lines() {
            let k = line.split(" = ").next().unwrap();
            assert!(KEYS.iter().any(|(name, _)| *name == k), "{k}");
        }
    }

    #[test]
    fn missing_inputs_fail_validation() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("s.tsv");
        fs::write(&f, "x").unwrap();
        let mut c = RunConfig::default();
        c.paths.source = Some(f.clone());
        c.paths.target = Some(f.clone());
        c.train.view_mode = ViewMode::Single;
        let e = c.validate().unwrap_err();
        assert!(e.to_string().contains("embeddings"), "{e}");
        c.paths.embeddings = Some(f.clone());
        c.validate().unwrap();
        c.train.view_mode = ViewMode::Dual;
        assert!(c.validate().is_err());
        c.paths.subjectivity = Some(dir.path().join("missing"));
        assert!(c.validate().is_err());
    }
}
