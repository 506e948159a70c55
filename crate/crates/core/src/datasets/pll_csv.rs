//! PLL-CSV: the plain-text interchange format for partial-label datasets.
//!
//! ```text
//! # pll-csv v1 k=<K> corruption=<desc>
//! <true_label or ?>;<cand>|<cand>|...;<f_1>,<f_2>,...,<f_d>
//! ```
//!
//! UTF-8, LF line endings. Features are written with Rust's shortest
//! round-trip float formatting, so save → load is bit-exact and load → save
//! reproduces the file byte for byte.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use ndarray::Array2;

use super::{read_maybe_gzip, DatasetError, PllDataset};
use crate::loss::CandidateSet;

const MAGIC: &str = "# pll-csv v1";

pub fn to_pll_csv_string(dataset: &PllDataset) -> String {
    let mut out = String::new();
    writeln!(
        out,
        "{MAGIC} k={} corruption={}",
        dataset.num_classes(),
        dataset.corruption()
    )
    .unwrap();
    for i in 0..dataset.len() {
        match dataset.true_labels()[i] {
            Some(c) => write!(out, "{c}").unwrap(),
            None => out.push('?'),
        }
        out.push(';');
        for (n, c) in dataset.candidate_sets()[i].iter().enumerate() {
            if n > 0 {
                out.push('|');
            }
            write!(out, "{c}").unwrap();
        }
        out.push(';');
        for (n, v) in dataset.features().row(i).iter().enumerate() {
            if n > 0 {
                out.push(',');
            }
            write!(out, "{v:?}").unwrap();
        }
        out.push('\n');
    }
    out
}

/// Writes the dataset; a `.gz` extension selects gzip compression (with a
/// zero timestamp, so output stays byte-reproducible).
pub fn save_pll_csv(dataset: &PllDataset, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let path = path.as_ref();
    let text = to_pll_csv_string(dataset);
    if path.extension().is_some_and(|e| e == "gz") {
        let file = std::fs::File::create(path)?;
        let mut enc = flate2::GzBuilder::new()
            .mtime(0)
            .write(file, flate2::Compression::default());
        enc.write_all(text.as_bytes())?;
        enc.finish()?;
    } else {
        std::fs::write(path, text)?;
    }
    Ok(())
}

pub fn load_pll_csv(path: impl AsRef<Path>) -> Result<PllDataset, DatasetError> {
    let bytes = read_maybe_gzip(path.as_ref())?;
    let text = String::from_utf8(bytes).map_err(|_| DatasetError::Parse {
        line: 0,
        message: "file is not UTF-8".into(),
    })?;
    parse_pll_csv(&text)
}

fn parse_err(line: usize, message: impl Into<String>) -> DatasetError {
    DatasetError::Parse {
        line,
        message: message.into(),
    }
}

pub fn parse_pll_csv(text: &str) -> Result<PllDataset, DatasetError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines.next().ok_or_else(|| parse_err(1, "missing header"))?;
    let (num_classes, corruption) = parse_header(header)?;

    let mut labels = Vec::new();
    let mut sets = Vec::new();
    let mut values = Vec::new();
    let mut width: Option<usize> = None;
    for (line, row) in lines {
        if row.is_empty() {
            continue;
        }
        let mut fields = row.splitn(3, ';');
        let (Some(label), Some(cands), Some(feats)) = (fields.next(), fields.next(), fields.next())
        else {
            return Err(parse_err(line, "expected three ';'-separated fields"));
        };
        labels.push(match label {
            "?" => None,
            l => Some(
                l.parse::<usize>()
                    .map_err(|_| parse_err(line, format!("bad true label {l:?}")))?,
            ),
        });

        if cands.is_empty() {
            return Err(DatasetError::EmptyCandidates { line });
        }
        let mut members = Vec::new();
        for c in cands.split('|') {
            let class = c
                .parse::<usize>()
                .map_err(|_| parse_err(line, format!("bad candidate {c:?}")))?;
            if class >= num_classes {
                return Err(DatasetError::CandidateOutOfRange {
                    line,
                    class,
                    num_classes,
                });
            }
            members.push(class);
        }
        sets.push(
            CandidateSet::new(num_classes, members).map_err(|e| parse_err(line, e.to_string()))?,
        );

        let before = values.len();
        if !feats.is_empty() {
            for f in feats.split(',') {
                let v = f
                    .parse::<f64>()
                    .map_err(|_| parse_err(line, format!("bad feature {f:?}")))?;
                values.push(v);
            }
        }
        let found = values.len() - before;
        match width {
            None => width = Some(found),
            Some(expected) if expected != found => {
                return Err(DatasetError::Ragged {
                    line,
                    expected,
                    found,
                })
            }
            _ => {}
        }
    }
    let n = labels.len();
    let features = Array2::from_shape_vec((n, width.unwrap_or(0)), values)
        .map_err(|e| parse_err(0, e.to_string()))?;
    PllDataset::new(features, sets, labels, num_classes)?.with_corruption(corruption)
}

fn parse_header(header: &str) -> Result<(usize, String), DatasetError> {
    let rest = header
        .strip_prefix(MAGIC)
        .ok_or_else(|| parse_err(1, format!("header must start with {MAGIC:?}")))?;
    let rest = rest.trim_start();
    let rest = rest
        .strip_prefix("k=")
        .ok_or_else(|| parse_err(1, "header is missing k="))?;
    let (k, rest) = rest.split_once(' ').unwrap_or((rest, ""));
    let num_classes = k
        .parse::<usize>()
        .map_err(|_| parse_err(1, format!("bad class count {k:?}")))?;
    let corruption = rest
        .trim_start()
        .strip_prefix("corruption=")
        .ok_or_else(|| parse_err(1, "header is missing corruption="))?;
    Ok((num_classes, corruption.to_string()))
}
