//! Labeled sequence corpora: CSV ingestion, imbalance construction and
//! stratified splitting.
//!
//! The interchange format is a UTF-8 CSV with a header row. Sequences are
//! strings of single-character tokens; labels are `0` (negative, majority)
//! or `1` (positive, minority). Lines starting with `#` are comments.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::index;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hmm::{TokenSequence, Vocabulary};

/// Where a dataset came from and how it was derived.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    pub seed: Option<u64>,
    pub imbalance_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    sequences: Vec<TokenSequence>,
    labels: Vec<bool>,
    vocabulary: Vocabulary,
    pub provenance: Provenance,
}

impl LabeledDataset {
    pub fn new(
        sequences: Vec<TokenSequence>,
        labels: Vec<bool>,
        vocabulary: Vocabulary,
        provenance: Provenance,
    ) -> Result<Self> {
        if sequences.len() != labels.len() {
            return Err(Error::data(format!(
                "{} sequences but {} labels",
                sequences.len(),
                labels.len()
            )));
        }
        for (i, s) in sequences.iter().enumerate() {
            s.check_vocab(vocabulary.len()).map_err(|e| Error::Sequence {
                index: i,
                source: Box::new(e),
            })?;
        }
        Ok(Self {
            sequences,
            labels,
            vocabulary,
            provenance,
        })
    }

    pub fn sequences(&self) -> &[TokenSequence] {
        &self.sequences
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocabulary
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn n_positive(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    pub fn n_negative(&self) -> usize {
        self.len() - self.n_positive()
    }

    /// Indices of the sequences carrying `label`, in dataset order.
    pub fn class_indices(&self, label: bool) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] == label).collect()
    }

    /// Sequences carrying `label`, in dataset order.
    pub fn class_sequences(&self, label: bool) -> Vec<TokenSequence> {
        self.class_indices(label)
            .into_iter()
            .map(|i| self.sequences[i].clone())
            .collect()
    }

    /// A new dataset made of the given rows, in the given order.
    pub fn select(&self, indices: &[usize], provenance: Provenance) -> Self {
        Self {
            sequences: indices.iter().map(|&i| self.sequences[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            vocabulary: self.vocabulary.clone(),
            provenance,
        }
    }

    /// Keeps every negative and a uniform random subset of
    /// `floor(n_neg / ratio)` positives. Row order is preserved.
    pub fn subsample_imbalance(&self, ratio: f64, seed: u64) -> Result<Self> {
        if !ratio.is_finite() || ratio < 1.0 {
            return Err(Error::param(format!("imbalance ratio must be >= 1, got {ratio}")));
        }
        let positives = self.class_indices(true);
        let n_neg = self.n_negative();
        let keep = (n_neg as f64 / ratio).floor() as usize;
        if keep == 0 || keep > positives.len() {
            return Err(Error::param(format!(
                "ratio {ratio}:1 needs {keep} positives out of {} available (n_neg = {n_neg})",
                positives.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut retained = vec![false; self.len()];
        for k in index::sample(&mut rng, positives.len(), keep) {
            retained[positives[k]] = true;
        }
        let rows: Vec<usize> = (0..self.len())
            .filter(|&i| !self.labels[i] || retained[i])
            .collect();
        Ok(self.select(
            &rows,
            Provenance {
                source: self.provenance.source.clone(),
                seed: Some(seed),
                imbalance_ratio: Some(ratio),
            },
        ))
    }

    /// Stratified split: each class independently sends
    /// `round_half_up(fraction * class_size)` rows to the first part.
    pub fn split(&self, fraction: f64, seed: u64) -> Result<(Self, Self)> {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(Error::param(format!("split fraction must be in (0, 1), got {fraction}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut in_a = vec![false; self.len()];
        for label in [false, true] {
            let mut idx = self.class_indices(label);
            let take = (fraction * idx.len() as f64 + 0.5).floor() as usize;
            if take == 0 || take == idx.len() {
                return Err(Error::param(format!(
                    "split fraction {fraction} leaves a part without class {} ({} rows)",
                    u8::from(label),
                    idx.len()
                )));
            }
            idx.shuffle(&mut rng);
            for &i in &idx[..take] {
                in_a[i] = true;
            }
        }
        let (a, b): (Vec<usize>, Vec<usize>) = (0..self.len()).partition(|&i| in_a[i]);
        let prov = Provenance {
            seed: Some(seed),
            ..self.provenance.clone()
        };
        Ok((self.select(&a, prov.clone()), self.select(&b, prov)))
    }

    /// Writes the `sequence,label` CSV layout.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["sequence", "label"])?;
        for (s, &l) in self.sequences.iter().zip(&self.labels) {
            w.write_record([self.vocabulary.decode(s)?.as_str(), if l { "1" } else { "0" }])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Sequences read against a fixed vocabulary; labels are present when the
/// file has a label column.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub sequences: Vec<TokenSequence>,
    pub labels: Option<Vec<bool>>,
}

struct RawRow {
    line: u64,
    sequence: String,
    label: Option<bool>,
}

fn read_rows<R: Read>(
    reader: R,
    seq_column: &str,
    label_column: Option<&str>,
    label_required: bool,
) -> Result<Vec<RawRow>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() {
        return Err(Error::data("empty file: no header row"));
    }
    let find = |name: &str| headers.iter().position(|h| h == name);
    let seq_idx = find(seq_column)
        .ok_or_else(|| Error::data(format!("missing column {seq_column:?} in header")))?;
    let label_idx = match label_column {
        Some(name) => match find(name) {
            Some(i) => Some(i),
            None if label_required => {
                return Err(Error::data(format!("missing column {name:?} in header")))
            }
            None => None,
        },
        None => None,
    };

    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let sequence = record
            .get(seq_idx)
            .ok_or_else(|| Error::data(format!("line {line}: missing sequence field")))?;
        if sequence.is_empty() {
            return Err(Error::data(format!("line {line}: empty sequence")));
        }
        let label = match label_idx {
            Some(li) => match record.get(li) {
                Some("0") => Some(false),
                Some("1") => Some(true),
                Some(other) => {
                    return Err(Error::data(format!(
                        "line {line}: label {other:?} is not 0 or 1"
                    )))
                }
                None => return Err(Error::data(format!("line {line}: missing label field"))),
            },
            None => None,
        };
        rows.push(RawRow {
            line,
            sequence: sequence.to_string(),
            label,
        });
    }
    if rows.is_empty() {
        return Err(Error::data("file contains no records"));
    }
    Ok(rows)
}

/// Reads a labeled dataset, building the vocabulary from the characters in
/// first-seen order.
pub fn load_csv_from<R: Read>(
    reader: R,
    source: &str,
    seq_column: &str,
    label_column: &str,
) -> Result<LabeledDataset> {
    let rows = read_rows(reader, seq_column, Some(label_column), true)?;
    let mut tokens: Vec<String> = Vec::new();
    for row in &rows {
        for ch in row.sequence.chars() {
            let s = ch.to_string();
            if !tokens.contains(&s) {
                tokens.push(s);
            }
        }
    }
    let vocabulary = Vocabulary::new(tokens)
        .map_err(|e| Error::data(format!("{source}: cannot build vocabulary: {e}")))?;
    let mut sequences = Vec::with_capacity(rows.len());
    let mut labels = Vec::with_capacity(rows.len());
    for row in rows {
        sequences.push(vocabulary.encode_chars(&row.sequence)?);
        labels.push(row.label.expect("label column is required"));
    }
    LabeledDataset::new(
        sequences,
        labels,
        vocabulary,
        Provenance {
            source: source.to_string(),
            ..Provenance::default()
        },
    )
}

pub fn load_csv(path: &Path, seq_column: &str, label_column: &str) -> Result<LabeledDataset> {
    let file = File::open(path)
        .map_err(|e| Error::data(format!("cannot open {}: {e}", path.display())))?;
    load_csv_from(file, &path.display().to_string(), seq_column, label_column)
}

/// Reads sequences against an existing vocabulary. A character outside the
/// vocabulary is a data error naming the line.
pub fn load_corpus_from<R: Read>(
    reader: R,
    vocabulary: &Vocabulary,
    seq_column: &str,
    label_column: Option<&str>,
) -> Result<Corpus> {
    let rows = read_rows(reader, seq_column, label_column, false)?;
    let has_labels = rows.iter().all(|r| r.label.is_some()) && label_column.is_some();
    let mut sequences = Vec::with_capacity(rows.len());
    let mut labels = Vec::with_capacity(rows.len());
    for row in rows {
        let seq = vocabulary.encode_chars(&row.sequence).map_err(|e| {
            Error::data(format!("line {}: vocabulary mismatch: {e}", row.line))
        })?;
        sequences.push(seq);
        labels.extend(row.label);
    }
    Ok(Corpus {
        sequences,
        labels: has_labels.then_some(labels),
    })
}

pub fn load_corpus(
    path: &Path,
    vocabulary: &Vocabulary,
    seq_column: &str,
    label_column: Option<&str>,
) -> Result<Corpus> {
    let file = File::open(path)
        .map_err(|e| Error::data(format!("cannot open {}: {e}", path.display())))?;
    load_corpus_from(file, vocabulary, seq_column, label_column)
}
