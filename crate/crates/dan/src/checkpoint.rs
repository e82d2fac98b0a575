//! Model checkpoints: a text manifest followed by a little-endian f32 payload.
//!
//! ```text
//! dan-checkpoint 1
//! hidden 16
//! ffn_hidden 16
//! view_mode dual
//! aligner h-adversarial
//! pooling mean
//! init uniform:0.08
//! vocab 3
//! <unk>
//! ...
//! tensors 2
//! embeddings 2 3 16 0
//! ...
//! payload 1234
//! <raw bytes>
//! ```
//!
//! Tensor lines are `name ndim dims... offset`, offsets counted in floats.

use std::fs;
use std::path::Path;

use dan_core::model::{AlignerKind, DanModel, ModelConfig, ViewMode};
use dan_core::nn::{EmbeddingTable, InitScheme, Module, Pooling};
use dan_core::vocab::Vocabulary;
use dan_core::Tensor;

use crate::error::{DanError, Result};

const MAGIC: &str = "dan-checkpoint 1";

pub fn pooling_str(p: Pooling) -> &'static str {
    match p {
        Pooling::Mean => "mean",
        Pooling::Last => "last",
    }
}

pub fn parse_pooling(s: &str) -> Result<Pooling> {
    match s {
        "mean" => Ok(Pooling::Mean),
        "last" => Ok(Pooling::Last),
        other => Err(DanError::Config(format!("unknown pooling {other:?} (mean|last)"))),
    }
}

pub fn init_str(i: InitScheme) -> String {
    match i {
        InitScheme::Uniform(a) => format!("uniform:{a}"),
        InitScheme::Zero => "zero".into(),
    }
}

pub fn parse_init(s: &str) -> Result<InitScheme> {
    if s == "zero" {
        return Ok(InitScheme::Zero);
    }
    s.strip_prefix("uniform:")
        .and_then(|a| a.parse::<f64>().ok())
        .filter(|a| a.is_finite() && *a >= 0.0)
        .map(InitScheme::Uniform)
        .ok_or_else(|| DanError::Config(format!("unknown init {s:?} (zero|uniform:<a>)")))
}

pub fn to_bytes(model: &DanModel) -> Result<Vec<u8>> {
    let c = &model.config;
    let mut head = format!(
        "{MAGIC}\nhidden {}\nffn_hidden {}\nview_mode {}\naligner {}\npooling {}\ninit {}\n",
        c.hidden,
        c.ffn_hidden,
        c.view_mode.as_str(),
        c.aligner.as_str(),
        pooling_str(c.pooling),
        init_str(c.init)
    );
    let words = model.embeddings.vocab().words();
    head += &format!("vocab {}\n", words.len());
    for w in words {
        if w.is_empty() || w.contains(char::is_whitespace) {
            return Err(DanError::Data(format!("vocabulary word {w:?} cannot be stored")));
        }
        head += w;
        head.push('\n');
    }
    let mut tensors = Vec::new();
    model.visit(&mut |p| tensors.push((p.name.clone(), p.value.clone())));
    head += &format!("tensors {}\n", tensors.len());
    let mut payload = Vec::new();
    let mut offset = 0usize;
    for (name, t) in &tensors {
        let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
        head += &format!("{name} {} {} {offset}\n", dims.len(), dims.join(" "));
        for &v in t.data() {
            payload.extend_from_slice(&(v as f32).to_le_bytes());
        }
        offset += t.len();
    }
    head += &format!("payload {offset}\n");
    let mut out = head.into_bytes();
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn save(path: &Path, model: &DanModel) -> Result<()> {
    fs::write(path, to_bytes(model)?).map_err(|e| DanError::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    line: usize,
}

impl<'a> Cursor<'a> {
    fn next_line(&mut self) -> Result<&'a str> {
        let rest = &self.bytes[self.pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| self.err("manifest ends early"))?;
        self.pos += end + 1;
        self.line += 1;
        std::str::from_utf8(&rest[..end]).map_err(|_| self.err("manifest is not UTF-8"))
    }

    fn err(&self, msg: impl std::fmt::Display) -> DanError {
        DanError::Data(format!("checkpoint line {}: {msg}", self.line + 1))
    }

    fn keyed(&mut self, key: &str) -> Result<&'a str> {
        let line = self.next_line()?;
        line.strip_prefix(key)
            .and_then(|r| r.strip_prefix(' '))
            .ok_or_else(|| DanError::Data(format!("checkpoint line {}: expected `{key} ...`", self.line)))
    }

    fn count(&mut self, key: &str) -> Result<usize> {
        let v = self.keyed(key)?;
        v.parse()
            .map_err(|_| DanError::Data(format!("checkpoint line {}: bad count {v:?}", self.line)))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<DanModel> {
    let mut c = Cursor { bytes, pos: 0, line: 0 };
    if c.next_line()? != MAGIC {
        return Err(DanError::Data("not a dan checkpoint (bad magic line)".into()));
    }
    let hidden = c.count("hidden")?;
    let ffn_hidden = c.count("ffn_hidden")?;
    let view_mode = ViewMode::parse(c.keyed("view_mode")?)?;
    let aligner = AlignerKind::parse(c.keyed("aligner")?)?;
    let pooling = parse_pooling(c.keyed("pooling")?)?;
    let init = parse_init(c.keyed("init")?)?;
    let n_words = c.count("vocab")?;
    let mut words = Vec::with_capacity(n_words);
    for _ in 0..n_words {
        words.push(c.next_line()?);
    }
    let vocab = Vocabulary::from_words(words.iter().skip(1).copied());
    if vocab.words() != words.as_slice() {
        return Err(DanError::Data("checkpoint vocabulary is malformed".into()));
    }
    let n_tensors = c.count("tensors")?;
    let mut specs = Vec::with_capacity(n_tensors);
    for _ in 0..n_tensors {
        let line = c.next_line()?;
        let f: Vec<&str> = line.split(' ').collect();
        let bad = || DanError::Data(format!("checkpoint line {}: bad tensor entry {line:?}", c.line));
        let nd: usize = f.get(1).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        if f.len() != nd + 3 {
            return Err(bad());
        }
        let dims = f[2..2 + nd]
            .iter()
            .map(|s| s.parse::<usize>().map_err(|_| bad()))
            .collect::<Result<Vec<usize>>>()?;
        let offset: usize = f[2 + nd].parse().map_err(|_| bad())?;
        specs.push((f[0].to_string(), dims, offset));
    }
    let total = c.count("payload")?;
    let payload = &bytes[c.pos..];
    if payload.len() != 4 * total {
        return Err(DanError::Data(format!(
            "checkpoint payload has {} bytes, manifest says {}",
            payload.len(),
            4 * total
        )));
    }
    let floats: Vec<f64> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    let mut tensors = Vec::with_capacity(specs.len());
    for (name, dims, offset) in specs {
        let n: usize = dims.iter().product();
        let data = floats
            .get(offset..offset + n)
            .ok_or_else(|| DanError::Data(format!("tensor {name} runs past the payload")))?
            .to_vec();
        tensors.push((name, Tensor::new(dims, data)?));
    }
    let emb = tensors
        .iter()
        .find(|(n, _)| n == "embeddings")
        .map(|(_, t)| t.clone())
        .ok_or_else(|| DanError::Data("checkpoint has no embeddings tensor".into()))?;
    let table = EmbeddingTable::new(vocab, emb, 0)?;
    let config = ModelConfig {
        hidden,
        ffn_hidden,
        view_mode,
        aligner,
        pooling,
        init,
    };
    let mut model = DanModel::new(config, table, 0)?;
    let expected = model.param_names();
    if expected.len() != tensors.len() || expected.iter().zip(&tensors).any(|(a, (b, _))| a != b) {
        return Err(DanError::Data(
            "checkpoint tensors do not match the architecture in its manifest".into(),
        ));
    }
    for (name, t) in tensors {
        model.set_param(&name, t)?;
    }
    Ok(model)
}

pub fn load(path: &Path) -> Result<DanModel> {
    let bytes = fs::read(path).map_err(|e| DanError::io(path, e))?;
    from_bytes(&bytes).map_err(|e| match e {
        DanError::Data(m) => DanError::Data(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(mode: ViewMode, aligner: AlignerKind) -> DanModel {
        let vocab = Vocabulary::from_words(["good", "bad", "film"]);
        let table = EmbeddingTable::from_lookup(vocab, 3, 0, |w| match w {
            "good" => Some(&[0.1, 0.2, 0.3][..]),
            "bad" => Some(&[-0.5, 1e-9, 7.0][..]),
            _ => None,
        })
        .unwrap();
        let config = ModelConfig {
            hidden: 4,
            ffn_hidden: 5,
            view_mode: mode,
            aligner,
            ..ModelConfig::default()
        };
        DanModel::new(config, table, 11).unwrap()
    }

    #[test]
    fn resave_is_bit_exact() {
        for (mode, al) in [
            (ViewMode::Dual, AlignerKind::HAdversarial),
            (ViewMode::Single, AlignerKind::None),
            (ViewMode::DualObjOnly, AlignerKind::Wasserstein),
        ] {
            let first = to_bytes(&model(mode, al)).unwrap();
            let loaded = from_bytes(&first).unwrap();
            assert_eq!(loaded.config, model(mode, al).config);
            assert_eq!(to_bytes(&loaded).unwrap(), first);
        }
    }

    #[test]
    fn loaded_model_predicts_like_an_f32_rounded_original() {
        let mut m = model(ViewMode::Dual, AlignerKind::HAdversarial);
        m.visit_mut(&mut |p| {
            for v in p.value.data_mut() {
                *v = *v as f32 as f64;
            }
        });
        let loaded = from_bytes(&to_bytes(&m).unwrap()).unwrap();
        let toks = [1, 2, 3, 0];
        assert_eq!(m.predict_stance(&toks).unwrap(), loaded.predict_stance(&toks).unwrap());
    }

    #[test]
    fn corrupt_checkpoints_are_rejected() {
        let bytes = to_bytes(&model(ViewMode::Single, AlignerKind::Coral)).unwrap();
        assert!(from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(from_bytes(b"hello\n").is_err());
        let text = String::from_utf8_lossy(&bytes).replace("hidden 4", "hidden 5");
        assert!(from_bytes(text.as_bytes()).is_err());
    }
}
