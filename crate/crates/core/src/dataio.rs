//! LibSVM ingestion, trace CSV persistence and the run-summary JSON schema.

use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{RateFit, TraceRecord};
use crate::error::{Error, Result};
use crate::vecmath::Vector;
use crate::seeded_rng;

/// Labelled sparse samples. Labels are always ±1.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub dim: usize,
    pub samples: Vec<(Vector, f64)>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn parse_label(token: &str, line: usize) -> Result<f64> {
    let value: f64 = token
        .parse()
        .map_err(|_| parse_err(line, format!("invalid label {token:?}")))?;
    if value == 1.0 {
        Ok(1.0)
    } else if value == 0.0 || value == -1.0 {
        Ok(-1.0)
    } else {
        Err(parse_err(line, format!("label {token:?} not in {{0, 1, -1, +1}}")))
    }
}

/// Parses one non-comment line into a label and 0-based feature pairs.
fn parse_line(content: &str, line: usize) -> Result<(f64, Vec<(usize, f64)>)> {
    let mut tokens = content.split_whitespace();
    let label = parse_label(tokens.next().expect("caller skips blank lines"), line)?;
    let mut pairs: Vec<(usize, f64)> = Vec::new();
    for token in tokens {
        let (idx, val) = token
            .split_once(':')
            .ok_or_else(|| parse_err(line, format!("token {token:?} is not index:value")))?;
        let idx: usize = idx
            .parse()
            .map_err(|_| parse_err(line, format!("invalid index in token {token:?}")))?;
        if idx == 0 {
            return Err(parse_err(line, format!("non-positive index in token {token:?}")));
        }
        let val: f64 = val
            .parse()
            .map_err(|_| parse_err(line, format!("invalid value in token {token:?}")))?;
        if !val.is_finite() {
            return Err(parse_err(line, format!("non-finite value in token {token:?}")));
        }
        if let Some(&(prev, _)) = pairs.last() {
            if idx - 1 <= prev {
                return Err(parse_err(line, format!("index not increasing at token {token:?}")));
            }
        }
        pairs.push((idx - 1, val));
    }
    Ok((label, pairs))
}

/// Streams a LibSVM text source, one line at a time.
///
/// `label idx:val idx:val ...` with 1-based increasing indices; `#` starts a
/// comment and blank lines are skipped. Labels 0 and -1 both map to -1.
pub fn parse_libsvm<R: BufRead>(reader: R, name: &str) -> Result<Dataset> {
    let mut rows = Vec::new();
    let mut dim = 0;
    for (n, line) in reader.lines().enumerate() {
        let line_no = n + 1;
        let line = line.map_err(|e| parse_err(line_no, e.to_string()))?;
        let content = match line.find('#') {
            Some(pos) => &line[..pos],
            None => &line[..],
        };
        if content.trim().is_empty() {
            continue;
        }
        let (label, pairs) = parse_line(content, line_no)?;
        if let Some(&(last, _)) = pairs.last() {
            dim = dim.max(last + 1);
        }
        rows.push((label, pairs));
    }
    let samples = rows
        .into_iter()
        .map(|(label, pairs)| Ok((Vector::sparse(dim, pairs)?, label)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        name: name.to_string(),
        dim,
        samples,
    })
}

pub fn parse_libsvm_str(text: &str, name: &str) -> Result<Dataset> {
    parse_libsvm(text.as_bytes(), name)
}

pub fn load_libsvm(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(|source| Error::Io {
        rows_flushed: 0,
        source,
    })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_libsvm(BufReader::new(file), &name)
}

/// Writes a linearly separable-with-noise binary problem in LibSVM format.
///
/// A hidden weight vector is drawn once; each sample has `nnz` distinct
/// features with values in `[-1, 1]`, labelled by the sign of its margin and
/// flipped with probability `flip`.
pub fn write_synthetic_libsvm<W: Write>(
    mut out: W,
    samples: usize,
    features: usize,
    nnz: usize,
    flip: f64,
    seed: u64,
) -> io::Result<()> {
    let nnz = nnz.min(features);
    let mut rng = seeded_rng(seed);
    let truth: Vec<f64> = (0..features)
        .map(|j| if j % 3 == 0 { rng.gen_range(-1.0..1.0) } else { 0.0 })
        .collect();
    for _ in 0..samples {
        let mut idx = rand::seq::index::sample(&mut rng, features, nnz).into_vec();
        idx.sort_unstable();
        // values are rounded before labelling so the file is self-consistent
        let vals: Vec<f64> = idx
            .iter()
            .map(|_| (rng.gen_range(-1.0..1.0f64) * 1000.0).round() / 1000.0)
            .collect();
        let margin: f64 = idx.iter().zip(&vals).map(|(&j, v)| truth[j] * v).sum();
        let mut label = if margin >= 0.0 { 1 } else { -1 };
        if rng.gen_bool(flip) {
            label = -label;
        }
        write!(out, "{}", if label > 0 { "+1" } else { "-1" })?;
        for (j, v) in idx.iter().zip(&vals) {
            if *v != 0.0 {
                write!(out, " {}:{}", j + 1, v)?;
            }
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Column order of the trace CSV.
pub const TRACE_COLUMNS: [&str; 10] = [
    "t",
    "f_individual",
    "f_averaged",
    "gap_individual",
    "gap_averaged",
    "alpha_t",
    "beta1_t",
    "beta2_t",
    "identity_residual",
    "lemma3_slack",
];

fn fmt_real(x: f64) -> String {
    // Debug formatting is the shortest representation that parses back exactly.
    format!("{x:?}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_real).unwrap_or_default()
}

fn optional_mask(r: &TraceRecord) -> [bool; 5] {
    [
        r.gap_individual.is_some(),
        r.gap_averaged.is_some(),
        r.beta2_t.is_some(),
        r.identity_residual.is_some(),
        r.lemma3_slack.is_some(),
    ]
}

/// Incremental trace CSV writer. The header is written on construction and
/// every record must carry the same set of optional columns.
pub struct TraceCsvWriter<W: Write> {
    out: W,
    rows: usize,
    mask: Option<[bool; 5]>,
}

impl<W: Write> TraceCsvWriter<W> {
    pub fn new(mut out: W) -> Result<Self> {
        writeln!(out, "{}", TRACE_COLUMNS.join(",")).map_err(|source| Error::Io {
            rows_flushed: 0,
            source,
        })?;
        Ok(Self {
            out,
            rows: 0,
            mask: None,
        })
    }

    pub fn write(&mut self, r: &TraceRecord) -> Result<()> {
        let mask = optional_mask(r);
        match self.mask {
            None => self.mask = Some(mask),
            Some(m) if m != mask => {
                return Err(Error::Trace {
                    row: self.rows + 1,
                    message: "record schema differs from earlier rows".into(),
                })
            }
            Some(_) => {}
        }
        let line = [
            r.t.to_string(),
            fmt_real(r.f_individual),
            fmt_real(r.f_averaged),
            fmt_opt(r.gap_individual),
            fmt_opt(r.gap_averaged),
            fmt_real(r.alpha_t),
            fmt_real(r.beta1_t),
            fmt_opt(r.beta2_t),
            fmt_opt(r.identity_residual),
            fmt_opt(r.lemma3_slack),
        ]
        .join(",");
        writeln!(self.out, "{line}").map_err(|source| Error::Io {
            rows_flushed: self.rows,
            source,
        })?;
        self.rows += 1;
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(|source| Error::Io {
            rows_flushed: self.rows,
            source,
        })
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// Writes the header and one row per record; returns the number of rows.
pub fn write_trace_csv<'a, W: Write>(
    records: impl IntoIterator<Item = &'a TraceRecord>,
    sink: W,
) -> Result<usize> {
    let mut writer = TraceCsvWriter::new(sink)?;
    for r in records {
        writer.write(r)?;
    }
    writer.flush()?;
    Ok(writer.rows())
}

fn trace_err(row: usize, message: impl Into<String>) -> Error {
    Error::Trace {
        row,
        message: message.into(),
    }
}

/// Reads a CSV produced by [`write_trace_csv`]. Row numbers in errors count
/// the header as row 1.
pub fn read_trace_csv<R: BufRead>(source: R) -> Result<Vec<TraceRecord>> {
    let mut lines = source.lines();
    let header = match lines.next() {
        Some(h) => h.map_err(|e| trace_err(1, e.to_string()))?,
        None => return Err(trace_err(1, "missing header")),
    };
    let names: Vec<&str> = header.split(',').map(str::trim).collect();
    for col in TRACE_COLUMNS {
        if !names.contains(&col) {
            return Err(trace_err(1, format!("missing column {col:?}")));
        }
    }
    if names != TRACE_COLUMNS {
        return Err(trace_err(1, format!("header {header:?} does not match the trace schema")));
    }

    let mut out = Vec::new();
    for (n, line) in lines.enumerate() {
        let row = n + 2;
        let line = line.map_err(|e| trace_err(row, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != TRACE_COLUMNS.len() {
            return Err(trace_err(
                row,
                format!("expected {} fields, found {}", TRACE_COLUMNS.len(), fields.len()),
            ));
        }
        let opt = |k: usize| -> Result<Option<f64>> {
            if fields[k].is_empty() {
                Ok(None)
            } else {
                fields[k]
                    .parse()
                    .map(Some)
                    .map_err(|_| trace_err(row, format!("column {}: invalid number {:?}", TRACE_COLUMNS[k], fields[k])))
            }
        };
        let req = |k: usize| -> Result<f64> {
            opt(k)?.ok_or_else(|| trace_err(row, format!("column {} is required", TRACE_COLUMNS[k])))
        };
        let t = fields[0]
            .parse()
            .map_err(|_| trace_err(row, format!("invalid step {:?}", fields[0])))?;
        out.push(TraceRecord {
            t,
            f_individual: req(1)?,
            f_averaged: req(2)?,
            gap_individual: opt(3)?,
            gap_averaged: opt(4)?,
            alpha_t: req(5)?,
            beta1_t: req(6)?,
            beta2_t: opt(7)?,
            identity_residual: opt(8)?,
            lemma3_slack: opt(9)?,
        });
    }
    Ok(out)
}

/// Outcome of one named invariant or acceptance check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub threshold: f64,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedRateFit {
    pub quantity: String,
    #[serde(flatten)]
    pub fit: RateFit,
}

/// The JSON document written next to each trace.
///
/// ```json
/// {
///   "config": { ...echo of the run configuration... },
///   "optimizer": "hb_tv",
///   "iterations": 1000,
///   "f_star": 0.0,
///   "final_f_individual": 0.0012,
///   "final_f_averaged": 0.0031,
///   "final_gap_individual": 0.0012,
///   "final_gap_averaged": 0.0031,
///   "rate_fits": [{"quantity": "individual", "slope": -0.5, ...}],
///   "checks": [{"name": "lemma3", "passed": true, "value": 0.1, "threshold": -1e-9}]
/// }
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config: serde_json::Value,
    pub optimizer: String,
    pub iterations: usize,
    pub f_star: Option<f64>,
    pub final_f_individual: f64,
    pub final_f_averaged: f64,
    pub final_gap_individual: Option<f64>,
    pub final_gap_averaged: Option<f64>,
    #[serde(default)]
    pub rate_fits: Vec<NamedRateFit>,
    #[serde(default)]
    pub checks: Vec<CheckResult>,
}

impl RunSummary {
    pub fn all_checks_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_basic_line() {
        let d = parse_libsvm_str("+1 1:0.5 3:-2.0\n", "t").unwrap();
        assert_eq!(d.dim, 3);
        assert_eq!(d.samples[0].1, 1.0);
        assert_eq!(d.samples[0].0.iter().collect::<Vec<_>>(), vec![(0, 0.5), (2, -2.0)]);
    }

    #[test]
    fn label_only_line() {
        let d = parse_libsvm_str("-1\n", "t").unwrap();
        assert_eq!(d.samples[0].1, -1.0);
        assert_eq!(d.samples[0].0.nnz(), 0);
    }

    #[test]
    fn malformed_value_reports_line_and_token() {
        let err = parse_libsvm_str("1 2:abc\n", "t").unwrap_err();
        match err {
            Error::Parse { line, message } => {
                assert_eq!(line, 1);
                assert!(message.contains("2:abc"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn labels_normalized_and_comments_skipped() {
        let text = "# header comment\n0 1:1\n\n1 2:1 # trailing\n-1.0 1:2\n+1.0 3:1\n";
        let d = parse_libsvm_str(text, "t").unwrap();
        let labels: Vec<f64> = d.samples.iter().map(|s| s.1).collect();
        assert_eq!(labels, vec![-1.0, 1.0, -1.0, 1.0]);
        assert_eq!(d.dim, 3);
    }

    #[test]
    fn grammar_errors() {
        for (text, line) in [
            ("1 0:1\n", 1),
            ("1 1:1\n1 -2:1\n", 2),
            ("1 3:1 2:1\n", 1),
            ("1 2:1 2:1\n", 1),
            ("2 1:1\n", 1),
            ("1 1:1\n\n1 1\n", 3),
            ("x 1:1\n", 1),
        ] {
            match parse_libsvm_str(text, "t") {
                Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
                other => panic!("{text:?} gave {other:?}"),
            }
        }
    }

    fn record(t: usize) -> TraceRecord {
        TraceRecord {
            t,
            f_individual: 0.1 * t as f64,
            f_averaged: 1.0 / 3.0,
            gap_individual: Some(1e-300),
            gap_averaged: None,
            alpha_t: 0.3,
            beta1_t: 0.5,
            beta2_t: None,
            identity_residual: Some(0.0),
            lemma3_slack: None,
        }
    }

    #[test]
    fn empty_trace_is_header_only() {
        let mut buf = Vec::new();
        assert_eq!(write_trace_csv([], &mut buf).unwrap(), 0);
        assert_eq!(String::from_utf8(buf).unwrap(), format!("{}\n", TRACE_COLUMNS.join(",")));
    }

    #[test]
    fn one_record_two_lines() {
        let mut buf = Vec::new();
        assert_eq!(write_trace_csv([&record(1)], &mut buf).unwrap(), 1);
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.lines().nth(1).unwrap().contains(",,"));
    }

    #[test]
    fn mixed_schema_rejected() {
        let mut other = record(2);
        other.beta2_t = Some(0.9);
        let mut buf = Vec::new();
        assert!(matches!(
            write_trace_csv([&record(1), &other], &mut buf),
            Err(Error::Trace { row: 2, .. })
        ));
    }

    #[test]
    fn missing_column_named() {
        let text = "t,f_individual,f_averaged,gap_individual,gap_averaged,alpha_t,beta1_t,beta2_t,identity_residual\n";
        let err = read_trace_csv(text.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("lemma3_slack"), "{err}");
    }

    #[test]
    fn arity_mismatch_has_row_number() {
        let mut buf = Vec::new();
        write_trace_csv([&record(1)], &mut buf).unwrap();
        let mut text = String::from_utf8(buf).unwrap();
        text.push_str("2,1.0\n");
        match read_trace_csv(text.as_bytes()) {
            Err(Error::Trace { row, .. }) => assert_eq!(row, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn trailing_whitespace_tolerated() {
        let mut buf = Vec::new();
        write_trace_csv([&record(4)], &mut buf).unwrap();
        let text: String = String::from_utf8(buf)
            .unwrap()
            .lines()
            .map(|l| format!("{l}   \n"))
            .collect();
        assert_eq!(read_trace_csv(text.as_bytes()).unwrap(), vec![record(4)]);
    }

    #[test]
    fn synthetic_generator_parses_back() {
        let mut buf = Vec::new();
        write_synthetic_libsvm(&mut buf, 50, 20, 5, 0.1, 1).unwrap();
        let d = parse_libsvm_str(std::str::from_utf8(&buf).unwrap(), "s").unwrap();
        assert_eq!(d.len(), 50);
        assert!(d.dim <= 20);
    }

    fn any_real() -> impl Strategy<Value = f64> {
        prop_oneof![
            any::<f64>().prop_filter("finite", |x| x.is_finite()),
            -1e3..1e3f64,
        ]
    }

    fn any_record() -> impl Strategy<Value = TraceRecord> {
        (
            1usize..1_000_000,
            prop::collection::vec(any_real(), 10),
        )
            .prop_map(|(t, v)| TraceRecord {
                t,
                f_individual: v[0],
                f_averaged: v[1],
                gap_individual: Some(v[2]),
                gap_averaged: Some(v[3]),
                alpha_t: v[4],
                beta1_t: v[5],
                beta2_t: Some(v[6]),
                identity_residual: None,
                lemma3_slack: Some(v[9]),
            })
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_bit_exact(records in prop::collection::vec(any_record(), 0..20)) {
            let mut buf = Vec::new();
            write_trace_csv(&records, &mut buf).unwrap();
            let back = read_trace_csv(buf.as_slice()).unwrap();
            prop_assert_eq!(back.len(), records.len());
            for (a, b) in back.iter().zip(&records) {
                prop_assert_eq!(a.f_individual.to_bits(), b.f_individual.to_bits());
                prop_assert_eq!(a.lemma3_slack.map(f64::to_bits), b.lemma3_slack.map(f64::to_bits));
                prop_assert_eq!(a, b);
            }
            let mut again = Vec::new();
            write_trace_csv(&back, &mut again).unwrap();
            prop_assert_eq!(buf, again);
        }

        #[test]
        fn valid_lines_always_parse(
            rows in prop::collection::vec(
                (prop_oneof![Just("+1"), Just("-1"), Just("0"), Just("1")],
                 prop::collection::btree_map(1usize..200, -1e6..1e6f64, 0..12)),
                1..20)
        ) {
            let text: String = rows.iter().map(|(label, feats)| {
                let mut line = label.to_string();
                for (i, v) in feats {
                    line.push_str(&format!(" {i}:{v}"));
                }
                line + "\n"
            }).collect();
            let d = parse_libsvm_str(&text, "p").unwrap();
            prop_assert_eq!(d.len(), rows.len());
            let max_idx = rows.iter().flat_map(|(_, f)| f.keys().copied()).max().unwrap_or(0);
            prop_assert_eq!(d.dim, max_idx);
        }

        #[test]
        fn corrupted_lines_report_their_line(
            good in 0usize..10,
            junk in prop_oneof![Just("1 a:1"), Just("1 2:x"), Just("7 1:1"), Just("1 0:3"), Just("1 4:1 2:1"), Just("1 5")]
        ) {
            let mut text = "+1 1:1 2:2\n".repeat(good);
            text.push_str(junk);
            text.push('\n');
            match parse_libsvm_str(&text, "p") {
                Err(Error::Parse { line, .. }) => prop_assert_eq!(line, good + 1),
                other => prop_assert!(false, "expected parse error, got {:?}", other),
            }
        }
    }
}
