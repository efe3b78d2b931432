//! CSV writers for scores, features and sampled sequences.
//!
//! Every file starts with `# key=value` lines carrying provenance (config
//! hash, seed and so on); the CSV readers in this crate skip them.

use std::io::Write;

use crate::ensemble::{CompositeScore, FeatureVector, LikelihoodProfile};
use crate::error::{Error, Result};
use crate::hmm::{TokenSequence, Vocabulary};

/// Ordered `key=value` provenance lines.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Header(pub Vec<(String, String)>);

impl Header {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.0.push((key.to_string(), value.to_string()));
        self
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        for (k, v) in &self.0 {
            if k.contains(['\n', '=']) || v.contains('\n') {
                return Err(Error::Data(format!("header entry {k:?} is not a single line")));
            }
            writeln!(w, "# {k}={v}")?;
        }
        Ok(())
    }
}

/// One row per sequence: index, composite score, then every member log-likelihood.
pub fn write_scores<W: Write>(
    mut w: W,
    header: &Header,
    scores: &[CompositeScore],
    profiles: &[LikelihoodProfile],
) -> Result<()> {
    if scores.len() != profiles.len() {
        return Err(Error::Data("scores and likelihood profiles differ in length".into()));
    }
    header.write(&mut w)?;
    let mut out = csv::Writer::from_writer(w);
    let (n, m) = profiles
        .first()
        .map(|p| (p.positive.len(), p.negative.len()))
        .unwrap_or((0, 0));
    let mut head = vec!["index".to_string(), "score".to_string()];
    head.extend((0..n).map(|i| format!("pos_{i}")));
    head.extend((0..m).map(|j| format!("neg_{j}")));
    out.write_record(&head)?;
    for (i, (s, p)) in scores.iter().zip(profiles).enumerate() {
        let mut row = vec![i.to_string(), s.0.to_string()];
        row.extend(p.concatenated().iter().map(f64::to_string));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// One row per sequence: index, then the normalized feature values.
pub fn write_features<W: Write>(mut w: W, header: &Header, features: &[FeatureVector], n_positive: usize) -> Result<()> {
    header.write(&mut w)?;
    let mut out = csv::Writer::from_writer(w);
    let width = features.first().map(FeatureVector::len).unwrap_or(0);
    let mut head = vec!["index".to_string()];
    head.extend((0..width).map(|k| {
        if k < n_positive {
            format!("pos_{k}")
        } else {
            format!("neg_{}", k - n_positive)
        }
    }));
    out.write_record(&head)?;
    for (i, f) in features.iter().enumerate() {
        let mut row = vec![i.to_string()];
        row.extend(f.values().iter().map(f64::to_string));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// Sequences decoded back to text, one per row.
pub fn write_sequences<W: Write>(
    mut w: W,
    header: &Header,
    vocabulary: &Vocabulary,
    sequences: &[TokenSequence],
    label: Option<bool>,
) -> Result<()> {
    header.write(&mut w)?;
    let mut out = csv::Writer::from_writer(w);
    match label {
        Some(_) => out.write_record(["sequence", "label"])?,
        None => out.write_record(["sequence"])?,
    }
    for s in sequences {
        let text = vocabulary.decode(s)?;
        match label {
            Some(l) => out.write_record([text.as_str(), if l { "1" } else { "0" }])?,
            None => out.write_record([text.as_str()])?,
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads a numeric matrix (features) written by [`write_features`], dropping the index column.
pub fn read_features<R: std::io::Read>(reader: R) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(reader);
    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .skip(1)
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Data(format!("feature row {}: {e}", line + 1)))?;
        rows.push(row);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_lines() {
        let mut buf = Vec::new();
        Header::new().with("seed", 7).with("config_hash", "ab").write(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "# seed=7\n# config_hash=ab\n");
        assert!(Header::new().with("a", "x\ny").write(Vec::new()).is_err());
    }

    #[test]
    fn scores_layout() {
        let p = LikelihoodProfile {
            positive: vec![-1.5, -2.0],
            negative: vec![-3.25],
        };
        let mut buf = Vec::new();
        write_scores(&mut buf, &Header::new().with("seed", 1), &[p.composite()], &[p]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "# seed=1\nindex,score,pos_0,pos_1,neg_0\n0,2,-1.5,-2,-3.25\n"
        );
    }

    #[test]
    fn features_round_trip() {
        let f = vec![FeatureVector::from_raw(vec![3.0, 4.0]).unwrap()];
        let mut buf = Vec::new();
        write_features(&mut buf, &Header::new().with("k", "v"), &f, 1).unwrap();
        assert_eq!(read_features(buf.as_slice()).unwrap(), vec![vec![0.6, 0.8]]);
    }
}
