//! LIBSVM / SVMlight text format: `label idx:val idx:val ...` with 1-based,
//! strictly ascending indices. Blank lines and `#` comments are skipped.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::vector::SparseVector;

/// How raw labels were turned into the stored ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelRule {
    /// Labels kept as read (already ±1, single-valued, or regression targets).
    Identity,
    /// Two distinct labels: the smaller maps to −1, the larger to +1.
    Binary { negative: f64, positive: f64 },
}

#[derive(Debug, Clone)]
pub struct ParsedLibsvm {
    pub dataset: Dataset,
    pub label_rule: LabelRule,
}

/// Parses a whole stream. `dimension` may raise d above the largest index seen.
pub fn parse_libsvm<R: BufRead>(reader: R, dimension: Option<usize>) -> Result<ParsedLibsvm> {
    let mut samples = Vec::new();
    let mut max_index = 0usize;
    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| Error::Parse { line: lineno, msg: e.to_string() })?;
        let content = match line.find('#') {
            Some(pos) => &line[..pos],
            None => &line[..],
        };
        let mut tokens = content.split_whitespace();
        let Some(label_tok) = tokens.next() else { continue };
        let label: f64 = label_tok.parse().map_err(|_| Error::Parse {
            line: lineno,
            msg: format!("non-numeric label {label_tok:?}"),
        })?;
        if !label.is_finite() {
            return Err(Error::Parse { line: lineno, msg: format!("non-finite label {label_tok:?}") });
        }
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for tok in tokens {
            let (idx, val) = tok.split_once(':').ok_or_else(|| Error::Parse {
                line: lineno,
                msg: format!("expected idx:val, got {tok:?}"),
            })?;
            let idx: usize = idx.parse().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("non-numeric index in {tok:?}"),
            })?;
            if idx == 0 {
                return Err(Error::Parse { line: lineno, msg: "indices are 1-based; found 0".into() });
            }
            let val: f64 = val.parse().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("non-numeric value in {tok:?}"),
            })?;
            if !val.is_finite() {
                return Err(Error::Parse { line: lineno, msg: format!("non-finite value in {tok:?}") });
            }
            let j = idx - 1;
            if let Some(&prev) = indices.last() {
                if j <= prev {
                    return Err(Error::Parse {
                        line: lineno,
                        msg: format!("non-ascending indices ({} then {idx})", prev + 1),
                    });
                }
            }
            max_index = max_index.max(idx);
            indices.push(j);
            values.push(val);
        }
        let features = SparseVector::new(indices, values)
            .map_err(|e| Error::Parse { line: lineno, msg: e.to_string() })?;
        samples.push(Sample { features, label });
    }
    let d = match dimension {
        Some(d) if d < max_index => {
            return Err(Error::InvalidDataset(format!(
                "dimension override {d} is smaller than the largest index {max_index}"
            )))
        }
        Some(d) => d,
        None => max_index.max(1),
    };
    let label_rule = infer_label_rule(&samples);
    if let LabelRule::Binary { positive, .. } = label_rule {
        for s in &mut samples {
            s.label = if s.label == positive { 1.0 } else { -1.0 };
        }
    }
    Ok(ParsedLibsvm { dataset: Dataset::new(samples, d)?, label_rule })
}

fn infer_label_rule(samples: &[Sample]) -> LabelRule {
    let distinct: BTreeSet<u64> = samples.iter().map(|s| s.label.to_bits()).collect();
    let labels: Vec<f64> = distinct.into_iter().map(f64::from_bits).collect();
    if labels.len() != 2 {
        return LabelRule::Identity;
    }
    let (lo, hi) = if labels[0] < labels[1] { (labels[0], labels[1]) } else { (labels[1], labels[0]) };
    if lo == -1.0 && hi == 1.0 {
        LabelRule::Identity
    } else {
        LabelRule::Binary { negative: lo, positive: hi }
    }
}

/// Canonical writer: one line per sample, shortest round-trip float text.
pub fn write_libsvm<W: Write>(dataset: &Dataset, mut out: W) -> std::io::Result<()> {
    for s in dataset.samples() {
        write!(out, "{}", s.label)?;
        for (j, v) in s.features.iter() {
            write!(out, " {}:{}", j + 1, v)?;
        }
        writeln!(out)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ParsedLibsvm> {
        parse_libsvm(text.as_bytes(), None)
    }

    #[test]
    fn single_line() {
        let p = parse("+1 1:0.5 3:2.0\n").unwrap();
        let s = &p.dataset.samples()[0];
        assert_eq!(s.features.indices(), &[0, 2]);
        assert_eq!(s.features.values(), &[0.5, 2.0]);
        assert_eq!(s.label, 1.0);
        assert_eq!(p.dataset.dimension(), 3);
        assert_eq!(p.label_rule, LabelRule::Identity);
    }

    #[test]
    fn one_two_labels_are_remapped() {
        let p = parse("2 1:1.0\n1 2:1.0\n").unwrap();
        assert_eq!(p.dataset.samples()[0].label, 1.0);
        assert_eq!(p.dataset.samples()[1].label, -1.0);
        assert_eq!(p.label_rule, LabelRule::Binary { negative: 1.0, positive: 2.0 });
        let p = parse("0 1:1\n1 1:2\n").unwrap();
        assert_eq!(p.dataset.samples()[0].label, -1.0);
    }

    #[test]
    fn non_ascending_is_an_error() {
        let err = parse("1 3:1 2:1\n").unwrap_err();
        match err {
            Error::Parse { line, msg } => {
                assert_eq!(line, 1);
                assert!(msg.contains("non-ascending"), "{msg}");
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn reports_line_numbers_and_skips_comments() {
        let err = parse("# header\n\n1 1:1\n-1 2:x\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 4, .. }), "{err:?}");
        let p = parse("# c\n1 1:1 # trailing\n\n-1 2:3\n").unwrap();
        assert_eq!(p.dataset.len(), 2);
        assert!(matches!(parse("abc 1:1\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse("1 0:1\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse("1 1-1\n"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn dimension_override() {
        let p = parse_libsvm("1 2:1\n".as_bytes(), Some(10)).unwrap();
        assert_eq!(p.dataset.dimension(), 10);
        assert!(parse_libsvm("1 20:1\n".as_bytes(), Some(10)).is_err());
    }
}
