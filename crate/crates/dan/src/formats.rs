//! Text file formats: corpora, silver labels, subjectivity data, word vectors,
//! feature dumps, training logs and PAD records.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use dan_core::data::{Corpus, Domain, Example, Stance};
use dan_core::metrics::{FeatureDump, FeatureRow, PadEstimate};
use dan_core::model::FeatureView;
use dan_core::silver::{LabeledSentence, SubjectivityLabel};
use dan_core::train::IterationRecord;

use crate::error::{DanError, Result};

pub const CORPUS_HEADER: &str = "id\ttopic\ttext\tstance";
pub const SILVER_HEADER: &str = "id\tsubj\tobj";
pub const LOG_HEADER: &str = "iteration\tlr\tL_stance\tL_subj\tL_obj\tL_conf_subj\tL_conf_obj\tval_macro_f1";

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| DanError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| DanError::io(path, e))
}

fn data_err(origin: &str, line: usize, msg: impl std::fmt::Display) -> DanError {
    DanError::Data(format!("{origin}:{line}: {msg}"))
}

fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)))
}

/// Parses `id<TAB>topic<TAB>text<TAB>stance` rows after one header row.
/// Fails on the first bad line, keeping nothing.
pub fn parse_corpus(text: &str, domain: Domain, origin: &str) -> Result<Corpus> {
    let mut rows = lines(text);
    match rows.next() {
        Some((_, h)) if h.split('\t').count() == 4 => {}
        Some((n, _)) => return Err(data_err(origin, n, "header must have 4 tab-separated columns")),
        None => return Err(DanError::Data(format!("{origin}: empty file (a header row is required)"))),
    }
    let mut examples = Vec::new();
    let mut topic = None;
    for (n, line) in rows {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(data_err(
                origin,
                n,
                format!("expected 4 tab-separated columns, found {}", cols.len()),
            ));
        }
        let stance = Stance::parse(cols[3]).map_err(|e| data_err(origin, n, e))?;
        topic.get_or_insert_with(|| cols[1].to_string());
        examples.push(Example::new(cols[0], cols[1], cols[2], stance, domain));
    }
    let topic = topic.unwrap_or_default();
    Corpus::new(&topic, examples).map_err(|e| DanError::Data(format!("{origin}: {e}")))
}

pub fn read_corpus(path: &Path, domain: Domain) -> Result<Corpus> {
    parse_corpus(&read_text(path)?, domain, &path.display().to_string())
}

pub fn format_corpus(corpus: &Corpus) -> Result<String> {
    let mut out = String::from(CORPUS_HEADER);
    out.push('\n');
    for e in &corpus.examples {
        for field in [&e.id, &e.topic, &e.text] {
            if field.contains(['\t', '\n', '\r']) {
                return Err(DanError::Data(format!(
                    "example {} has a tab or line break in a field; TSV cannot hold it",
                    e.id
                )));
            }
        }
        let stance = e.stance.map(Stance::as_str).unwrap_or("UNKNOWN");
        let _ = writeln!(out, "{}\t{}\t{}\t{stance}", e.id, e.topic, e.text);
    }
    Ok(out)
}

pub fn write_corpus(path: &Path, corpus: &Corpus) -> Result<()> {
    write_text(path, &format_corpus(corpus)?)
}

/// `id → (subj, obj)`.
pub type SilverLabels = BTreeMap<String, (bool, bool)>;

pub fn parse_silver(text: &str, origin: &str) -> Result<SilverLabels> {
    let bit = |s: &str, n: usize| match s.trim() {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(data_err(origin, n, format!("silver label must be 0 or 1, got {other:?}"))),
    };
    let mut out = BTreeMap::new();
    for (n, line) in lines(text) {
        if line.trim().is_empty() || (n == 1 && line == SILVER_HEADER) {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(data_err(origin, n, format!("expected 3 columns, found {}", cols.len())));
        }
        if out.insert(cols[0].to_string(), (bit(cols[1], n)?, bit(cols[2], n)?)).is_some() {
            return Err(data_err(origin, n, format!("duplicate id {:?}", cols[0])));
        }
    }
    Ok(out)
}

pub fn read_silver(path: &Path) -> Result<SilverLabels> {
    parse_silver(&read_text(path)?, &path.display().to_string())
}

pub fn format_silver(corpus: &Corpus) -> Result<String> {
    let mut out = String::from(SILVER_HEADER);
    out.push('\n');
    for e in &corpus.examples {
        match (e.silver_subj, e.silver_obj) {
            (Some(s), Some(o)) => {
                let _ = writeln!(out, "{}\t{}\t{}", e.id, u8::from(s), u8::from(o));
            }
            _ => return Err(DanError::Data(format!("example {} has no silver labels", e.id))),
        }
    }
    Ok(out)
}

pub fn write_silver(path: &Path, corpus: &Corpus) -> Result<()> {
    write_text(path, &format_silver(corpus)?)
}

/// Copies labels onto the corpus; every example must be covered.
pub fn apply_silver(corpus: &mut Corpus, labels: &SilverLabels) -> Result<()> {
    for e in &mut corpus.examples {
        let &(s, o) = labels
            .get(&e.id)
            .ok_or_else(|| DanError::Data(format!("no silver labels for example {}", e.id)))?;
        e.silver_subj = Some(s);
        e.silver_obj = Some(o);
    }
    Ok(())
}

/// `label<TAB>text` lines, label `subj` or `obj`.
pub fn parse_subjectivity(text: &str, origin: &str) -> Result<Vec<LabeledSentence>> {
    let mut out = Vec::new();
    for (n, line) in lines(text) {
        if line.trim().is_empty() {
            continue;
        }
        let (label, body) = line
            .split_once('\t')
            .ok_or_else(|| data_err(origin, n, "expected label<TAB>text"))?;
        let label = SubjectivityLabel::parse(label).map_err(|e| data_err(origin, n, e))?;
        out.push(LabeledSentence::new(label, body));
    }
    Ok(out)
}

pub fn read_subjectivity(path: &Path) -> Result<Vec<LabeledSentence>> {
    parse_subjectivity(&read_text(path)?, &path.display().to_string())
}

pub fn format_subjectivity(sentences: &[LabeledSentence]) -> String {
    let mut out = String::new();
    for s in sentences {
        let _ = writeln!(out, "{}\t{}", s.label.as_str(), s.tokens.join(" "));
    }
    out
}

/// Word vectors read from a whitespace-separated text file.
#[derive(Clone, Debug, PartialEq)]
pub struct WordVectors {
    pub dim: usize,
    pub vectors: BTreeMap<String, Vec<f64>>,
}

/// Reads `word v_1 … v_d` lines, keeping only words in `keep` when given.
/// A leading `count dim` header line is skipped.
pub fn read_embeddings(path: &Path, keep: Option<&BTreeSet<String>>) -> Result<WordVectors> {
    let origin = path.display().to_string();
    let file = fs::File::open(path).map_err(|e| DanError::io(path, e))?;
    let mut dim = None;
    let mut vectors = BTreeMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let n = i + 1;
        let line = line.map_err(|e| data_err(&origin, n, e))?;
        let mut parts = line.split_whitespace();
        let Some(word) = parts.next() else { continue };
        let rest: Vec<&str> = parts.collect();
        if n == 1 && rest.len() == 1 && word.parse::<usize>().is_ok() && rest[0].parse::<usize>().is_ok() {
            continue;
        }
        let width = rest.len();
        match dim {
            None if width == 0 => return Err(data_err(&origin, n, "vector has no components")),
            None => dim = Some(width),
            Some(d) if d != width => {
                return Err(data_err(&origin, n, format!("vector width {width}, expected {d}")));
            }
            _ => {}
        }
        if keep.is_some_and(|k| !k.contains(word)) {
            continue;
        }
        let v = rest
            .iter()
            .map(|s| s.parse::<f64>().map_err(|_| data_err(&origin, n, format!("bad number {s:?}"))))
            .collect::<Result<Vec<f64>>>()?;
        vectors.insert(word.to_string(), v);
    }
    let dim = dim.ok_or_else(|| DanError::Data(format!("{origin}: no vectors")))?;
    Ok(WordVectors { dim, vectors })
}

pub fn format_embeddings<'a>(rows: impl IntoIterator<Item = (&'a str, &'a [f64])>) -> String {
    let mut out = String::new();
    for (w, v) in rows {
        out.push_str(w);
        for x in v {
            let _ = write!(out, " {x}");
        }
        out.push('\n');
    }
    out
}

fn domain_str(d: Domain) -> &'static str {
    d.as_str()
}

pub fn write_features<W: Write>(dump: &FeatureDump, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["id".to_string(), "domain".to_string(), "label".to_string()];
    header.extend((0..dump.width).map(|i| format!("f_{i}")));
    let csv_err = |e: csv::Error| DanError::Data(format!("feature CSV: {e}"));
    w.write_record(&header).map_err(csv_err)?;
    for r in &dump.rows {
        let mut rec = vec![
            r.id.clone(),
            domain_str(r.domain).to_string(),
            r.label.map(|s| s.as_str().to_string()).unwrap_or_default(),
        ];
        rec.extend(r.values.iter().map(|v| format!("{v}")));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| DanError::Data(format!("feature CSV: {e}")))?;
    Ok(())
}

pub fn write_features_file(path: &Path, dump: &FeatureDump) -> Result<()> {
    let f = fs::File::create(path).map_err(|e| DanError::io(path, e))?;
    write_features(dump, std::io::BufWriter::new(f))
}

pub fn read_features(path: &Path, view: FeatureView) -> Result<FeatureDump> {
    let origin = path.display().to_string();
    let mut r = csv::Reader::from_path(path).map_err(|e| DanError::Data(format!("{origin}: {e}")))?;
    let header = r.headers().map_err(|e| DanError::Data(format!("{origin}: {e}")))?.clone();
    if header.len() < 4 || &header[0] != "id" || &header[1] != "domain" || &header[2] != "label" {
        return Err(DanError::Data(format!("{origin}: header must be id,domain,label,f_0,...")));
    }
    let width = header.len() - 3;
    let mut dump = FeatureDump::new(view, width);
    for (i, rec) in r.records().enumerate() {
        let n = i + 2;
        let rec = rec.map_err(|e| data_err(&origin, n, e))?;
        let domain = Domain::parse(&rec[1]).map_err(|e| data_err(&origin, n, e))?;
        let label = if rec[2].is_empty() {
            None
        } else {
            Stance::parse(&rec[2]).map_err(|e| data_err(&origin, n, e))?
        };
        let values = (3..rec.len())
            .map(|j| {
                rec[j]
                    .parse::<f64>()
                    .map_err(|_| data_err(&origin, n, format!("bad number {:?}", &rec[j])))
            })
            .collect::<Result<Vec<f64>>>()?;
        dump.push(FeatureRow {
            id: rec[0].to_string(),
            domain,
            label,
            values,
        })
        .map_err(|e| data_err(&origin, n, e))?;
    }
    Ok(dump)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

pub fn log_line(r: &IterationRecord) -> String {
    let l = &r.losses;
    format!(
        "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
        r.iteration,
        r.lr,
        l.stance,
        opt(l.subj),
        opt(l.obj),
        opt(l.conf_subj),
        opt(l.conf_obj),
        opt(r.val_macro_f1)
    )
}

/// One-line JSON record.
pub fn pad_record(est: &PadEstimate, view: &str) -> String {
    format!(
        "{{\"epsilon\": {}, \"pad\": {}, \"n_source\": {}, \"n_target\": {}, \"view\": \"{view}\"}}",
        est.epsilon, est.pad, est.n_source, est.n_target
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "id\ttopic\ttext\tstance\n1\tT\tWomen are STRONG!\tFAVOR\n2\tT\tno way\tAGAINST\n3\tT\tsee http://x.co\tUNKNOWN\n";

    #[test]
    fn corpus_rows_parse() {
        let c = parse_corpus(SAMPLE, Domain::Source, "s").unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c.examples[0].tokens, ["women", "are", "strong", "!"]);
        assert_eq!(c.examples[2].stance, None);
        assert_eq!(c.topic, "T");
    }

    #[test]
    fn corpus_errors_name_the_line() {
        let bad = "id\ttopic\ttext\tstance\n1\tT\tok\tFAVOR\n2\tT\tshort\n";
        let e = parse_corpus(bad, Domain::Source, "f.tsv").unwrap_err().to_string();
        assert!(e.contains("f.tsv:3"), "{e}");
        let bad = "id\ttopic\ttext\tstance\n1\tT\tok\tMAYBE\n";
        let e = parse_corpus(bad, Domain::Source, "f.tsv").unwrap_err().to_string();
        assert!(e.contains("f.tsv:2"), "{e}");
        assert!(parse_corpus("", Domain::Source, "f").is_err());
    }

    #[test]
    fn corpus_round_trips() {
        let c = parse_corpus(SAMPLE, Domain::Target, "s").unwrap();
        let again = parse_corpus(&format_corpus(&c).unwrap(), Domain::Target, "s").unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn silver_round_trips() {
        let mut c = parse_corpus(SAMPLE, Domain::Source, "s").unwrap();
        for (i, e) in c.examples.iter_mut().enumerate() {
            e.silver_subj = Some(i % 2 == 0);
            e.silver_obj = Some(i > 0);
        }
        let labels = parse_silver(&format_silver(&c).unwrap(), "x").unwrap();
        let mut d = parse_corpus(SAMPLE, Domain::Source, "s").unwrap();
        apply_silver(&mut d, &labels).unwrap();
        assert_eq!(c, d);
        assert!(parse_silver("1\t2\t0\n", "x").is_err());
    }

    #[test]
    fn subjectivity_lines() {
        let s = parse_subjectivity("subj\tI love it\nobj\tthe film runs\n", "x").unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].label, SubjectivityLabel::Subjective);
        assert!(parse_subjectivity("meh\tx\n", "x").is_err());
    }

    #[test]
    fn embedding_widths_are_checked() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.txt");
        fs::write(&p, "2 3\na 1 2 3\nb 4 5 6\n").unwrap();
        let v = read_embeddings(&p, None).unwrap();
        assert_eq!(v.dim, 3);
        assert_eq!(v.vectors["b"], [4.0, 5.0, 6.0]);
        let keep: BTreeSet<String> = ["a".to_string()].into();
        assert_eq!(read_embeddings(&p, Some(&keep)).unwrap().vectors.len(), 1);
        fs::write(&p, "a 1 2 3\nb 4 5\n").unwrap();
        let e = read_embeddings(&p, None).unwrap_err().to_string();
        assert!(e.contains(":2:"), "{e}");
    }

    #[test]
    fn feature_csv_round_trips() {
        let mut d = FeatureDump::new(FeatureView::Dual, 2);
        d.push(FeatureRow {
            id: "a,1".into(),
            domain: Domain::Source,
            label: Some(Stance::Against),
            values: vec![0.1, -1e-300],
        })
        .unwrap();
        d.push(FeatureRow {
            id: "b".into(),
            domain: Domain::Target,
            label: None,
            values: vec![1.0 / 3.0, 2.0],
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        write_features_file(&p, &d).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("id,domain,label,f_0,f_1\n"));
        assert_eq!(read_features(&p, FeatureView::Dual).unwrap(), d);
    }
}
