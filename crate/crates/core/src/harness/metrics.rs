use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::harness::format::g6;
use crate::harness::Mode;

pub const TRIAL_HEADER: [&str; 10] = [
    "trial",
    "iteration",
    "r_inc",
    "mode",
    "hf_samples_cum",
    "lf_samples_cum",
    "failures_cum",
    "hf_failures_cum",
    "current_fidelity",
    "converged_episode",
];

pub const AGGREGATE_HEADER: [&str; 9] = [
    "iteration",
    "r_inc",
    "mode",
    "mean_hf_samples",
    "mean_lf_samples",
    "mean_failures",
    "mean_hf_failures",
    "hf_lf_ratio",
    "failures_per_hf_sample",
];

/// State of one trial after one search iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub trial: usize,
    pub iteration: usize,
    pub r_inc: f64,
    pub mode: Mode,
    pub hf_samples_cum: u64,
    pub lf_samples_cum: u64,
    pub failures_cum: u64,
    pub hf_failures_cum: u64,
    pub current_fidelity: usize,
    pub converged_episode: bool,
}

impl MetricsRow {
    fn fields(&self) -> [String; 10] {
        [
            self.trial.to_string(),
            self.iteration.to_string(),
            g6(self.r_inc),
            self.mode.to_string(),
            g6(self.hf_samples_cum as f64),
            g6(self.lf_samples_cum as f64),
            g6(self.failures_cum as f64),
            g6(self.hf_failures_cum as f64),
            self.current_fidelity.to_string(),
            self.converged_episode.to_string(),
        ]
    }
}

/// Means over trials for one `(iteration, r_inc, mode)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregateRow {
    pub iteration: usize,
    pub r_inc: f64,
    pub mode: Mode,
    pub mean_hf_samples: f64,
    pub mean_lf_samples: f64,
    pub mean_failures: f64,
    pub mean_hf_failures: f64,
    pub hf_lf_ratio: f64,
    pub failures_per_hf_sample: f64,
}

impl AggregateRow {
    fn fields(&self) -> [String; 9] {
        [
            self.iteration.to_string(),
            g6(self.r_inc),
            self.mode.to_string(),
            g6(self.mean_hf_samples),
            g6(self.mean_lf_samples),
            g6(self.mean_failures),
            g6(self.mean_hf_failures),
            g6(self.hf_lf_ratio),
            g6(self.failures_per_hf_sample),
        ]
    }
}

/// `num / den`, zero when the denominator is zero.
pub fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

fn write_csv<const N: usize>(path: &Path, header: [&str; N], rows: impl Iterator<Item = [String; N]>) -> Result<()> {
    let mut out = Vec::new();
    {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(&mut out);
        let to_format = |e: csv::Error| Error::Format { path: path.to_path_buf(), reason: e.to_string() };
        w.write_record(header).map_err(to_format)?;
        for row in rows {
            w.write_record(&row).map_err(to_format)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&out).map_err(|e| Error::io(path, e))
}

pub fn write_trial_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    write_csv(path, TRIAL_HEADER, rows.iter().map(MetricsRow::fields))
}

pub fn write_aggregate_csv(path: &Path, rows: &[AggregateRow]) -> Result<()> {
    write_csv(path, AGGREGATE_HEADER, rows.iter().map(AggregateRow::fields))
}

fn parse<T: std::str::FromStr>(path: &Path, line: usize, column: &str, text: &str) -> Result<T> {
    text.parse().map_err(|_| Error::Format {
        path: path.to_path_buf(),
        reason: format!("line {line}: cannot parse {column} from {text:?}"),
    })
}

pub fn read_trial_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let format = |reason: String| Error::Format { path: path.to_path_buf(), reason };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => format(format!("{other:?}")),
        })?;
    let header = reader.headers().map_err(|e| format(e.to_string()))?.clone();
    if header.iter().ne(TRIAL_HEADER.iter().copied()) {
        return Err(format(format!(
            "header {:?} does not match the per-trial schema",
            header.iter().collect::<Vec<_>>()
        )));
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let r = record.map_err(|e| format(e.to_string()))?;
        let f = |k: usize| &r[k];
        rows.push(MetricsRow {
            trial: parse(path, line, "trial", f(0))?,
            iteration: parse(path, line, "iteration", f(1))?,
            r_inc: parse(path, line, "r_inc", f(2))?,
            mode: f(3).parse().map_err(|_| format(format!("line {line}: bad mode {:?}", f(3))))?,
            hf_samples_cum: parse::<f64>(path, line, "hf_samples_cum", f(4))? as u64,
            lf_samples_cum: parse::<f64>(path, line, "lf_samples_cum", f(5))? as u64,
            failures_cum: parse::<f64>(path, line, "failures_cum", f(6))? as u64,
            hf_failures_cum: parse::<f64>(path, line, "hf_failures_cum", f(7))? as u64,
            current_fidelity: parse(path, line, "current_fidelity", f(8))?,
            converged_episode: parse(path, line, "converged_episode", f(9))?,
        });
    }
    Ok(rows)
}

/// Per-`(mode, r_inc, iteration)` means over all rows given, sorted by that key.
pub fn aggregate_rows<'a>(rows: impl IntoIterator<Item = &'a MetricsRow>) -> Vec<AggregateRow> {
    #[derive(Default)]
    struct Acc {
        n: usize,
        hf: f64,
        lf: f64,
        failures: f64,
        hf_failures: f64,
    }
    // r_inc is non-negative, so its bit pattern orders like the value
    let mut groups: BTreeMap<(Mode, u64, usize), Acc> = BTreeMap::new();
    for r in rows {
        let acc = groups.entry((r.mode, r.r_inc.to_bits(), r.iteration)).or_default();
        acc.n += 1;
        acc.hf += r.hf_samples_cum as f64;
        acc.lf += r.lf_samples_cum as f64;
        acc.failures += r.failures_cum as f64;
        acc.hf_failures += r.hf_failures_cum as f64;
    }
    groups
        .into_iter()
        .map(|((mode, r_inc, iteration), acc)| {
            let n = acc.n as f64;
            let (hf, lf, failures, hf_failures) = (acc.hf / n, acc.lf / n, acc.failures / n, acc.hf_failures / n);
            AggregateRow {
                iteration,
                r_inc: f64::from_bits(r_inc),
                mode,
                mean_hf_samples: hf,
                mean_lf_samples: lf,
                mean_failures: failures,
                mean_hf_failures: hf_failures,
                hf_lf_ratio: ratio(hf, lf),
                failures_per_hf_sample: ratio(failures, hf),
            }
        })
        .collect()
}

/// Reads per-trial CSV files and averages them.
pub fn aggregate(files: &[PathBuf]) -> Result<Vec<AggregateRow>> {
    let mut all = Vec::new();
    for path in files {
        all.extend(read_trial_csv(path)?);
    }
    Ok(aggregate_rows(&all))
}

/// Per-trial CSV files directly inside `dir`, sorted by name.
pub fn trial_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|ext| ext == "csv") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}
