//! Round-record CSV output.
//!
//! Columns, in order:
//!
//! ```text
//! round, selected_client, indicator_0..K-1, prob_0..K-1, jensen_gap,
//! payload_scalars, accuracy, pred_loglik, ms
//! ```
//!
//! Reals use `{:.16e}` (17 significant digits), which round-trips every
//! finite `f64`. Missing metrics are empty fields. A run that aborts ends
//! with a single `# error: ...` line.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Bumped whenever the column set changes.
pub const CSV_SCHEMA_VERSION: u32 = 1;

pub const ERROR_TRAILER_PREFIX: &str = "# error: ";

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    /// 1-based.
    pub round: usize,
    pub selected_client: usize,
    pub indicators: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub jensen_gap: f64,
    pub payload_scalars: usize,
    pub accuracy: Option<f64>,
    pub pred_loglik: Option<f64>,
    pub ms: f64,
}

pub fn csv_header(clients: usize) -> String {
    let mut cols = vec!["round".to_string(), "selected_client".to_string()];
    cols.extend((0..clients).map(|k| format!("indicator_{k}")));
    cols.extend((0..clients).map(|k| format!("prob_{k}")));
    for c in [
        "jensen_gap",
        "payload_scalars",
        "accuracy",
        "pred_loglik",
        "ms",
    ] {
        cols.push(c.to_string());
    }
    cols.join(",")
}

fn real(v: f64) -> String {
    format!("{v:.16e}")
}

fn optional(v: Option<f64>) -> String {
    v.map(real).unwrap_or_default()
}

pub fn csv_row(r: &RoundRecord) -> String {
    let mut f = vec![r.round.to_string(), r.selected_client.to_string()];
    f.extend(r.indicators.iter().copied().map(real));
    f.extend(r.probabilities.iter().copied().map(real));
    f.push(real(r.jensen_gap));
    f.push(r.payload_scalars.to_string());
    f.push(optional(r.accuracy));
    f.push(optional(r.pred_loglik));
    f.push(real(r.ms));
    f.join(",")
}

/// Streams records to disk, flushing after every row so an aborted run
/// leaves a readable prefix.
pub struct CsvWriter {
    path: PathBuf,
    out: BufWriter<File>,
    clients: usize,
}

impl CsvWriter {
    pub fn create(path: impl AsRef<Path>, clients: usize) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = CsvWriter {
            out: BufWriter::new(file),
            path,
            clients,
        };
        w.line(&csv_header(clients))?;
        Ok(w)
    }

    fn line(&mut self, text: &str) -> Result<()> {
        writeln!(self.out, "{text}")
            .and_then(|_| self.out.flush())
            .map_err(|e| Error::io(&self.path, e))
    }

    pub fn write(&mut self, record: &RoundRecord) -> Result<()> {
        if record.indicators.len() != self.clients || record.probabilities.len() != self.clients {
            return Err(Error::usage("record width does not match the CSV header"));
        }
        self.line(&csv_row(record))
    }

    pub fn write_error(&mut self, err: &Error) -> Result<()> {
        let msg = err.to_string().replace('\n', " ");
        self.line(&format!("{ERROR_TRAILER_PREFIX}{msg}"))
    }
}

/// Writes a complete CSV file for `clients` clients.
pub fn emit_csv(records: &[RoundRecord], clients: usize, path: impl AsRef<Path>) -> Result<()> {
    let mut w = CsvWriter::create(path, clients)?;
    for r in records {
        w.write(r)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedCsv {
    pub clients: usize,
    pub records: Vec<RoundRecord>,
    /// Message from an error trailer, if the run aborted.
    pub error: Option<String>,
}

pub fn parse_csv_text(text: &str, path: &Path) -> Result<ParsedCsv> {
    let perr = |line: usize, detail: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        detail,
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| perr(1, "missing header".into()))?;
    let n_cols = header.split(',').count();
    if n_cols < 7 || (n_cols - 7) % 2 != 0 {
        return Err(perr(1, format!("unexpected column count {n_cols}")));
    }
    let clients = (n_cols - 7) / 2;
    if header != csv_header(clients) {
        return Err(perr(1, "header does not match the schema".into()));
    }
    let mut records = Vec::new();
    let mut error = None;
    for (i, line) in lines {
        let lineno = i + 1;
        if let Some(msg) = line.strip_prefix(ERROR_TRAILER_PREFIX) {
            error = Some(msg.to_string());
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != n_cols {
            return Err(perr(
                lineno,
                format!("expected {n_cols} fields, found {}", f.len()),
            ));
        }
        let int = |s: &str| {
            s.parse::<usize>()
                .map_err(|e| perr(lineno, format!("{s:?}: {e}")))
        };
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| perr(lineno, format!("{s:?}: {e}")))
        };
        let opt = |s: &str| {
            if s.is_empty() {
                Ok(None)
            } else {
                num(s).map(Some)
            }
        };
        let k = clients;
        records.push(RoundRecord {
            round: int(f[0])?,
            selected_client: int(f[1])?,
            indicators: f[2..2 + k].iter().map(|s| num(s)).collect::<Result<_>>()?,
            probabilities: f[2 + k..2 + 2 * k]
                .iter()
                .map(|s| num(s))
                .collect::<Result<_>>()?,
            jensen_gap: num(f[2 + 2 * k])?,
            payload_scalars: int(f[3 + 2 * k])?,
            accuracy: opt(f[4 + 2 * k])?,
            pred_loglik: opt(f[5 + 2 * k])?,
            ms: num(f[6 + 2 * k])?,
        });
    }
    Ok(ParsedCsv {
        clients,
        records,
        error,
    })
}

pub fn parse_csv(path: impl AsRef<Path>) -> Result<ParsedCsv> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv_text(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_is_pinned() {
        assert_eq!(
            csv_header(2),
            "round,selected_client,indicator_0,indicator_1,prob_0,prob_1,jensen_gap,payload_scalars,accuracy,pred_loglik,ms"
        );
    }

    #[test]
    fn empty_records_give_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        emit_csv(&[], 3, &p).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), csv_header(3) + "\n");
        assert_eq!(parse_csv(&p).unwrap().records, vec![]);
    }

    #[test]
    fn trailer_is_recovered() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        let mut w = CsvWriter::create(&p, 1).unwrap();
        w.write_error(&Error::numerical("svgd", "nan")).unwrap();
        let parsed = parse_csv(&p).unwrap();
        assert!(parsed.error.unwrap().contains("nan"));
    }

    fn record_strategy() -> impl Strategy<Value = RoundRecord> {
        (1usize..5).prop_flat_map(|k| {
            (
                1usize..1000,
                0..k,
                prop::collection::vec(-1e6..1e6f64, k),
                prop::collection::vec(0.0..1.0f64, k),
                0.0..10.0f64,
                0usize..100_000,
                prop::option::of(0.0..=1.0f64),
                prop::option::of(-50.0..0.0f64),
            )
                .prop_map(|(round, sel, ind, prob, gap, payload, acc, ll)| {
                    RoundRecord {
                        round,
                        selected_client: sel,
                        indicators: ind,
                        probabilities: prob,
                        jensen_gap: gap,
                        payload_scalars: payload,
                        accuracy: acc,
                        pred_loglik: ll,
                        ms: 0.0,
                    }
                })
        })
    }

    proptest! {
        #[test]
        fn round_trip(recs in prop::collection::vec(record_strategy(), 1..6)) {
            let k = recs[0].indicators.len();
            let recs: Vec<RoundRecord> = recs.into_iter().filter(|r| r.indicators.len() == k).collect();
            let text: String = std::iter::once(csv_header(k))
                .chain(recs.iter().map(csv_row))
                .map(|l| l + "\n")
                .collect();
            let parsed = parse_csv_text(&text, Path::new("mem")).unwrap();
            prop_assert_eq!(parsed.records, recs);
        }
    }
}
