//! LIBSVM sparse text and numeric CSV ingestion, plus the line codec used to
//! ship samples between map and reduce tasks.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetError, Label, Sample, SparseVector};

/// How raw numeric labels become `Label`s. Anything other than `Strict` is
/// opt-in; no mapping is ever applied silently.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMapping {
    /// Only `+1`/`1` and `-1` are accepted.
    #[default]
    Strict,
    /// Like `Strict`, and `0` maps to `-1`.
    ZeroAsNegative,
    /// The given class becomes `+1`, every other class `-1`.
    OneVsRest(f64),
    /// The most frequent class (smallest value on ties) becomes `+1`.
    MajorityVsRest,
}

/// A parsed line before label mapping. `label` is `None` for unlabeled input.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub line: usize,
    pub id: Option<u64>,
    pub label: Option<f64>,
    pub features: SparseVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsvOptions {
    /// Zero-based label column; `None` for unlabeled data.
    pub label_column: Option<usize>,
    pub has_header: bool,
    pub mapping: LabelMapping,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self {
            label_column: Some(0),
            has_header: false,
            mapping: LabelMapping::Strict,
        }
    }
}

/// Parses LIBSVM text into raw records. Lines may omit the label (the first
/// token then contains `:`). A trailing `# <id>` comment sets the record id.
pub fn parse_libsvm_records(text: &str) -> Result<Vec<RawRecord>, DatasetError> {
    let mut out = Vec::new();
    for (k, raw_line) in text.lines().enumerate() {
        let line = k + 1;
        let (body, comment) = match raw_line.split_once('#') {
            Some((b, c)) => (b, Some(c.trim())),
            None => (raw_line, None),
        };
        let mut tokens = body.split_whitespace().peekable();
        let Some(first) = tokens.peek() else {
            continue;
        };
        let label = if first.contains(':') {
            None
        } else {
            let tok = tokens.next().unwrap_or_default();
            let value: f64 = tok.parse().map_err(|_| DatasetError::Parse {
                line,
                message: format!("bad label `{tok}`"),
            })?;
            Some(value)
        };
        let mut entries = Vec::new();
        for tok in tokens {
            let (idx, val) = tok.split_once(':').ok_or_else(|| DatasetError::Parse {
                line,
                message: format!("expected <index>:<value>, got `{tok}`"),
            })?;
            let idx: u32 = idx.parse().map_err(|_| DatasetError::Parse {
                line,
                message: format!("bad feature index `{idx}`"),
            })?;
            let val: f64 = val.parse().map_err(|_| DatasetError::Parse {
                line,
                message: format!("bad feature value `{val}`"),
            })?;
            entries.push((idx, val));
        }
        let features = SparseVector::new(entries).map_err(|e| DatasetError::Parse {
            line,
            message: e.to_string(),
        })?;
        let id = comment.and_then(|c| c.parse::<u64>().ok());
        out.push(RawRecord {
            line,
            id,
            label,
            features,
        });
    }
    Ok(out)
}

/// Parses LIBSVM text into a dataset. Ids follow record order starting at 0.
pub fn parse_libsvm(text: &str, mapping: LabelMapping) -> Result<Dataset, DatasetError> {
    let records = parse_libsvm_records(text)?;
    records_to_dataset(records, mapping, 0, false)
}

/// Parses a rectangular numeric CSV into raw records; returns the records and
/// the column count.
pub fn parse_csv_records(
    text: &str,
    opts: &CsvOptions,
) -> Result<(Vec<RawRecord>, usize), DatasetError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(opts.has_header)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    let mut columns = None;
    for (k, rec) in reader.records().enumerate() {
        let row = k + 1;
        let rec = rec.map_err(|e| {
            let line = e
                .position()
                .map(|p| p.line() as usize)
                .unwrap_or(row);
            let message = match e.kind() {
                csv::ErrorKind::UnequalLengths {
                    expected_len, len, ..
                } => format!("ragged row: expected {expected_len} fields, found {len}"),
                _ => e.to_string(),
            };
            DatasetError::Parse { line, message }
        })?;
        let width = rec.len();
        let expected = *columns.get_or_insert(width);
        if width != expected {
            return Err(DatasetError::Parse {
                line: rec.position().map_or(row, |p| p.line() as usize),
                message: format!("ragged row: expected {expected} fields, found {width}"),
            });
        }
        if let Some(lc) = opts.label_column {
            if lc >= width {
                return Err(DatasetError::Argument(format!(
                    "label column {lc} out of range for {width} columns"
                )));
            }
        }
        let mut label = None;
        let mut dense = Vec::with_capacity(width);
        for (c, cell) in rec.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| DatasetError::Cell {
                row,
                column: c + 1,
                message: format!("non-numeric cell `{cell}`"),
            })?;
            if !v.is_finite() {
                return Err(DatasetError::Cell {
                    row,
                    column: c + 1,
                    message: format!("non-finite cell `{cell}`"),
                });
            }
            if Some(c) == opts.label_column {
                label = Some(v);
            } else {
                dense.push(v);
            }
        }
        out.push(RawRecord {
            line: rec.position().map_or(row, |p| p.line() as usize),
            id: None,
            label,
            features: SparseVector::from_dense(&dense)?,
        });
    }
    Ok((out, columns.unwrap_or(0)))
}

/// Parses a numeric CSV; dense rows become sparse samples with zeros dropped.
/// The dimension is the column count minus the label column.
pub fn parse_csv(text: &str, opts: &CsvOptions) -> Result<Dataset, DatasetError> {
    let (records, columns) = parse_csv_records(text, opts)?;
    let dim = columns.saturating_sub(usize::from(opts.label_column.is_some()));
    records_to_dataset(records, opts.mapping, dim, false)
}

/// Applies `mapping` to raw records. With `use_record_ids`, ids come from the
/// records (and must be present); otherwise ids are positions.
pub fn records_to_dataset(
    records: Vec<RawRecord>,
    mapping: LabelMapping,
    min_dim: usize,
    use_record_ids: bool,
) -> Result<Dataset, DatasetError> {
    let majority = match mapping {
        LabelMapping::MajorityVsRest => majority_value(&records),
        _ => None,
    };
    let mut samples = Vec::with_capacity(records.len());
    for (pos, r) in records.into_iter().enumerate() {
        let raw = r.label.ok_or_else(|| DatasetError::Label {
            line: r.line,
            value: "<missing>".into(),
        })?;
        let label = map_label(raw, mapping, majority).ok_or_else(|| DatasetError::Label {
            line: r.line,
            value: raw.to_string(),
        })?;
        let id = if use_record_ids {
            r.id.ok_or_else(|| DatasetError::Parse {
                line: r.line,
                message: "missing `# <id>` comment".into(),
            })?
        } else {
            pos as u64
        };
        samples.push(Sample::new(id, r.features, label));
    }
    Dataset::with_dim(samples, min_dim)
}

pub(crate) fn map_label(raw: f64, mapping: LabelMapping, majority: Option<f64>) -> Option<Label> {
    match mapping {
        LabelMapping::Strict => strict_label(raw),
        LabelMapping::ZeroAsNegative if raw == 0.0 => Some(Label::Negative),
        LabelMapping::ZeroAsNegative => strict_label(raw),
        LabelMapping::OneVsRest(class) => Some(Label::from_sign(raw == class)),
        LabelMapping::MajorityVsRest => majority.map(|m| Label::from_sign(raw == m)),
    }
}

fn strict_label(raw: f64) -> Option<Label> {
    if raw == 1.0 {
        Some(Label::Positive)
    } else if raw == -1.0 {
        Some(Label::Negative)
    } else {
        None
    }
}

fn majority_value(records: &[RawRecord]) -> Option<f64> {
    let mut counts: BTreeMap<u64, (f64, usize)> = BTreeMap::new();
    for v in records.iter().filter_map(|r| r.label) {
        // order by value, not bits, so ties resolve to the smallest class
        counts.entry(order_key(v)).or_insert((v, 0)).1 += 1;
    }
    let mut best: Option<(f64, usize)> = None;
    for &(v, n) in counts.values() {
        if best.map_or(true, |(_, bn)| n > bn) {
            best = Some((v, n));
        }
    }
    best.map(|(v, _)| v)
}

fn order_key(v: f64) -> u64 {
    let bits = v.to_bits();
    if v.is_sign_negative() {
        !bits
    } else {
        bits | (1 << 63)
    }
}

/// One LIBSVM line. With `with_id` the sample id is appended as `# <id>`.
pub fn format_sample_line(sample: &Sample, with_id: bool) -> String {
    let mut line = sample.label.to_string();
    for (i, v) in sample.features.iter() {
        let _ = write!(line, " {i}:{v}");
    }
    if with_id {
        let _ = write!(line, " # {}", sample.id);
    }
    line
}

/// Plain LIBSVM text, one line per sample, no ids.
pub fn serialize_libsvm(ds: &Dataset) -> String {
    let mut out = String::new();
    for s in ds.samples() {
        out.push_str(&format_sample_line(s, false));
        out.push('\n');
    }
    out
}

/// Encodes samples as LIBSVM lines carrying their ids. Values use the
/// shortest representation that parses back to the same `f64`.
pub fn encode_samples<'a>(samples: impl IntoIterator<Item = &'a Sample>) -> String {
    let mut out = String::new();
    for s in samples {
        out.push_str(&format_sample_line(s, true));
        out.push('\n');
    }
    out
}

/// Inverse of [`encode_samples`].
pub fn decode_samples(text: &str) -> Result<Vec<Sample>, DatasetError> {
    let records = parse_libsvm_records(text)?;
    records
        .into_iter()
        .map(|r| {
            let raw = r.label.ok_or_else(|| DatasetError::Label {
                line: r.line,
                value: "<missing>".into(),
            })?;
            let label = strict_label(raw).ok_or_else(|| DatasetError::Label {
                line: r.line,
                value: raw.to_string(),
            })?;
            let id = r.id.ok_or_else(|| DatasetError::Parse {
                line: r.line,
                message: "missing `# <id>` comment".into(),
            })?;
            Ok(Sample::new(id, r.features, label))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_basic_lines() {
        let ds = parse_libsvm("+1 1:0.5 3:-1.2\n-1 2:3\n", LabelMapping::Strict).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.dim(), 3);
        let a = &ds.samples()[0];
        assert_eq!(a.id, 0);
        assert_eq!(a.label, Label::Positive);
        assert_eq!(a.features.entries(), &[(1, 0.5), (3, -1.2)]);
        let b = &ds.samples()[1];
        assert_eq!(b.id, 1);
        assert_eq!(b.label, Label::Negative);
        assert_eq!(b.features.entries(), &[(2, 3.0)]);
    }

    #[test]
    fn blank_lines_and_crlf_are_skipped() {
        let ds = parse_libsvm("1 1:1\r\n\r\n   \n-1 1:2\r\n", LabelMapping::Strict).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.samples()[1].id, 1);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = parse_libsvm("+1 1:1\n-1 2-3\n", LabelMapping::Strict).unwrap_err();
        assert!(matches!(err, DatasetError::Parse { line: 2, .. }), "{err}");
        let err = parse_libsvm("+1 1:x\n", LabelMapping::Strict).unwrap_err();
        assert!(matches!(err, DatasetError::Parse { line: 1, .. }));
        let err = parse_libsvm("+1 0:1\n", LabelMapping::Strict).unwrap_err();
        assert!(matches!(err, DatasetError::Parse { line: 1, .. }));
        let err = parse_libsvm("+1 2:1 2:3\n", LabelMapping::Strict).unwrap_err();
        assert!(matches!(err, DatasetError::Parse { line: 1, .. }));
    }

    #[test]
    fn zero_label_needs_mapping() {
        let err = parse_libsvm("0 1:1\n", LabelMapping::Strict).unwrap_err();
        assert!(matches!(err, DatasetError::Label { line: 1, .. }));
        let err = parse_libsvm("2 1:1\n", LabelMapping::ZeroAsNegative).unwrap_err();
        assert!(matches!(err, DatasetError::Label { line: 1, .. }));
        let ds = parse_libsvm("0 1:1\n1 1:2\n", LabelMapping::ZeroAsNegative).unwrap();
        assert_eq!(ds.samples()[0].label, Label::Negative);
        assert_eq!(ds.samples()[1].label, Label::Positive);
    }

    #[test]
    fn one_vs_rest_and_majority_mappings() {
        let text = "3 1:1\n4 1:2\n3 1:3\n7 1:4\n";
        let ds = parse_libsvm(text, LabelMapping::OneVsRest(4.0)).unwrap();
        let labels: Vec<_> = ds.samples().iter().map(|s| s.label).collect();
        assert_eq!(
            labels,
            [Label::Negative, Label::Positive, Label::Negative, Label::Negative]
        );
        let ds = parse_libsvm(text, LabelMapping::MajorityVsRest).unwrap();
        assert_eq!(ds.class_counts(), (2, 2));
        assert_eq!(ds.samples()[0].label, Label::Positive);
        // tie between 1 and 2 resolves to the smaller class value
        let ds = parse_libsvm("2 1:1\n1 1:1\n", LabelMapping::MajorityVsRest).unwrap();
        assert_eq!(ds.samples()[1].label, Label::Positive);
    }

    #[test]
    fn missing_label_is_a_label_error() {
        let err = parse_libsvm("1:0.5 2:1\n", LabelMapping::Strict).unwrap_err();
        assert!(matches!(err, DatasetError::Label { line: 1, .. }));
        let recs = parse_libsvm_records("1:0.5 2:1\n").unwrap();
        assert_eq!(recs[0].label, None);
    }

    #[test]
    fn csv_dense_to_sparse() {
        let ds = parse_csv("1,0,2\n-1,3,0", &CsvOptions::default()).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.dim(), 2);
        assert_eq!(ds.samples()[0].features.entries(), &[(2, 2.0)]);
        assert_eq!(ds.samples()[1].features.entries(), &[(1, 3.0)]);
        assert_eq!(ds.samples()[1].label, Label::Negative);

        let ds = parse_csv("1,5", &CsvOptions::default()).unwrap();
        assert_eq!((ds.len(), ds.dim()), (1, 1));
    }

    #[test]
    fn csv_errors() {
        let err = parse_csv("1,a", &CsvOptions::default()).unwrap_err();
        assert_eq!(
            err,
            DatasetError::Cell {
                row: 1,
                column: 2,
                message: "non-numeric cell `a`".into()
            }
        );
        let err = parse_csv("1,2,3\n-1,2\n", &CsvOptions::default()).unwrap_err();
        assert!(matches!(err, DatasetError::Parse { line: 2, .. }), "{err:?}");
    }

    #[test]
    fn csv_label_column_and_header() {
        let opts = CsvOptions {
            label_column: Some(2),
            has_header: true,
            mapping: LabelMapping::ZeroAsNegative,
        };
        let ds = parse_csv("a,b,y\n1.5,0,1\n0,2,0\n", &opts).unwrap();
        assert_eq!(ds.dim(), 2);
        assert_eq!(ds.samples()[1].label, Label::Negative);
        assert_eq!(ds.samples()[1].features.entries(), &[(2, 2.0)]);
    }

    #[test]
    fn codec_keeps_ids() {
        let s = vec![
            Sample::new(
                17,
                SparseVector::new(vec![(1, 0.1), (4, -2.5e-7)]).unwrap(),
                Label::Positive,
            ),
            Sample::new(3, SparseVector::default(), Label::Negative),
        ];
        let text = encode_samples(&s);
        assert_eq!(text, "+1 1:0.1 4:-0.00000025 # 17\n-1 # 3\n");
        assert_eq!(decode_samples(&text).unwrap(), s);
        assert!(decode_samples("+1 1:1\n").is_err());
    }

    fn arb_dataset() -> impl Strategy<Value = Dataset> {
        let sample = (
            any::<bool>(),
            prop::collection::btree_map(1u32..40, -1e6f64..1e6, 0..6),
        );
        prop::collection::vec(sample, 1..20).prop_map(|rows| {
            let samples = rows
                .into_iter()
                .enumerate()
                .map(|(i, (pos, feats))| {
                    Sample::new(
                        i as u64,
                        SparseVector::new(feats.into_iter().collect()).unwrap(),
                        Label::from_sign(pos),
                    )
                })
                .collect();
            Dataset::new(samples).unwrap()
        })
    }

    proptest! {
        #[test]
        fn libsvm_round_trip(ds in arb_dataset()) {
            let text = serialize_libsvm(&ds);
            let again = parse_libsvm(&text, LabelMapping::Strict).unwrap();
            prop_assert_eq!(&again, &ds);
            prop_assert_eq!(serialize_libsvm(&again), text);
        }

        #[test]
        fn codec_round_trip(ds in arb_dataset()) {
            let decoded = decode_samples(&encode_samples(ds.samples())).unwrap();
            prop_assert_eq!(decoded.as_slice(), ds.samples());
        }
    }
}
