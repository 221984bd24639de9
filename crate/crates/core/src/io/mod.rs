//! CSV persistence of datasets, draws, summaries and replicates.
//!
//! Floats are written in Rust's shortest round-trip form, so reading a file
//! back yields bit-identical values and rewriting it yields identical bytes.

mod config;

use std::collections::HashMap;
use std::fs::File;
use std::path::Path;

use crate::diagnostics::{DrawsMatrix, SummaryRow, VarianceScreenResult};
use crate::error::{Error, Result};
use crate::model::SubjectData;

pub use config::RunConfig;

pub const LONGITUDINAL_HEADER: [&str; 5] = ["subject_id", "occasion", "time", "y", "z"];
pub const SURVIVAL_HEADER: [&str; 3] = ["subject_id", "time", "event"];
pub const SUMMARY_HEADER: [&str; 7] = ["parameter", "mean", "sd", "mcse", "q2.5", "q97.5", "rhat"];

pub fn format_f64(v: f64) -> String {
    format!("{v:?}")
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        kind => Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("{kind:?}"),
        },
    }
}

fn open_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(file))
}

fn create_writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::WriterBuilder::new().from_writer(file))
}

fn check_header(reader: &mut csv::Reader<File>, path: &Path, expected: &[&str]) -> Result<()> {
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let found: Vec<&str> = header.iter().map(str::trim).collect();
    if found != expected {
        let missing: Vec<&str> = expected
            .iter()
            .copied()
            .filter(|c| !found.contains(c))
            .collect();
        let message = if missing.is_empty() {
            format!(
                "header must be `{}`, found `{}`",
                expected.join(","),
                found.join(",")
            )
        } else {
            format!(
                "missing column(s) {}; header must be `{}`",
                missing.join(", "),
                expected.join(",")
            )
        };
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message,
        });
    }
    Ok(())
}

struct Field<'a> {
    path: &'a Path,
    line: u64,
}

impl Field<'_> {
    fn err(&self, message: String) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            line: self.line,
            message,
        }
    }

    fn f64(&self, record: &csv::StringRecord, i: usize, name: &str) -> Result<f64> {
        let raw = record.get(i).unwrap_or("").trim();
        let v: f64 = raw
            .parse()
            .map_err(|_| self.err(format!("column {name}: cannot parse {raw:?} as a number")))?;
        if !v.is_finite() {
            return Err(self.err(format!("column {name}: value {raw} is not finite")));
        }
        Ok(v)
    }

    fn flag(&self, record: &csv::StringRecord, i: usize, name: &str) -> Result<bool> {
        match record.get(i).unwrap_or("").trim() {
            "0" => Ok(false),
            "1" => Ok(true),
            raw => Err(self.err(format!("column {name}: expected 0 or 1, found {raw:?}"))),
        }
    }

    fn usize(&self, record: &csv::StringRecord, i: usize, name: &str) -> Result<usize> {
        let raw = record.get(i).unwrap_or("").trim();
        raw.parse().map_err(|_| {
            self.err(format!(
                "column {name}: expected a non-negative integer, found {raw:?}"
            ))
        })
    }

    fn id(&self, record: &csv::StringRecord) -> Result<String> {
        let id = record.get(0).unwrap_or("").trim();
        if id.is_empty() {
            return Err(self.err("empty subject_id".into()));
        }
        Ok(id.to_string())
    }
}

struct Partial {
    times: Vec<f64>,
    values: Vec<f64>,
    treatment: Vec<bool>,
}

/// Reads the longitudinal and survival files into validated subject records,
/// in order of first appearance in the longitudinal file.
pub fn read_dataset(long_path: &Path, surv_path: &Path) -> Result<Vec<SubjectData>> {
    let mut order: Vec<String> = Vec::new();
    let mut partial: HashMap<String, Partial> = HashMap::new();

    let mut reader = open_reader(long_path)?;
    check_header(&mut reader, long_path, &LONGITUDINAL_HEADER)?;
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(long_path, e))?;
        let f = Field {
            path: long_path,
            line: record.position().map(|p| p.line()).unwrap_or(0),
        };
        let id = f.id(&record)?;
        let occasion = f.usize(&record, 1, "occasion")?;
        let t = f.f64(&record, 2, "time")?;
        let y = f.f64(&record, 3, "y")?;
        let z = f.flag(&record, 4, "z")?;
        let entry = partial.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            Partial {
                times: Vec::new(),
                values: Vec::new(),
                treatment: Vec::new(),
            }
        });
        let expected = entry.times.len() + 1;
        if occasion != expected {
            return Err(f.err(format!(
                "subject {id}: occasion {occasion} out of sequence, expected {expected}"
            )));
        }
        if t <= 0.0 {
            return Err(f.err(format!("subject {id}: measurement time {t} must be > 0")));
        }
        if let Some(&prev) = entry.times.last() {
            if t <= prev {
                return Err(f.err(format!(
                    "subject {id}: times must be strictly increasing ({t} after {prev})"
                )));
            }
        }
        if entry.treatment.last() == Some(&true) && !z {
            return Err(f.err(format!(
                "subject {id}: rule \"treatment non-decreasing\" violated (z returns from 1 to 0 at occasion {occasion})"
            )));
        }
        entry.times.push(t);
        entry.values.push(y);
        entry.treatment.push(z);
    }

    let mut survival: HashMap<String, (f64, bool, u64)> = HashMap::new();
    let mut reader = open_reader(surv_path)?;
    check_header(&mut reader, surv_path, &SURVIVAL_HEADER)?;
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(surv_path, e))?;
        let f = Field {
            path: surv_path,
            line: record.position().map(|p| p.line()).unwrap_or(0),
        };
        let id = f.id(&record)?;
        let t = f.f64(&record, 1, "time")?;
        let event = f.flag(&record, 2, "event")?;
        if t < 0.0 {
            return Err(f.err(format!("subject {id}: survival time {t} is negative")));
        }
        if !partial.contains_key(&id) {
            return Err(f.err(format!(
                "orphan subject {id}: present in the survival file but not in {}",
                long_path.display()
            )));
        }
        if survival.insert(id.clone(), (t, event, f.line)).is_some() {
            return Err(f.err(format!("subject {id}: duplicate survival record")));
        }
    }

    let mut dataset = Vec::with_capacity(order.len());
    for id in order {
        let p = partial.remove(&id).expect("recorded id");
        let (t, event, line) = survival.get(&id).copied().ok_or_else(|| Error::Dataset {
            path: surv_path.to_path_buf(),
            message: format!(
                "orphan subject {id}: present in {} but missing from the survival file",
                long_path.display()
            ),
        })?;
        let subject =
            SubjectData::new(id, p.times, p.values, p.treatment, t, event).map_err(|e| {
                Error::Parse {
                    path: surv_path.to_path_buf(),
                    line,
                    message: e.to_string(),
                }
            })?;
        dataset.push(subject);
    }
    Ok(dataset)
}

pub fn write_dataset(dataset: &[SubjectData], long_path: &Path, surv_path: &Path) -> Result<()> {
    let mut w = create_writer(long_path)?;
    w.write_record(LONGITUDINAL_HEADER)
        .map_err(|e| csv_error(long_path, e))?;
    for s in dataset {
        for j in 0..s.n_obs() {
            w.write_record([
                s.id.clone(),
                (j + 1).to_string(),
                format_f64(s.times[j]),
                format_f64(s.values[j]),
                u8::from(s.treatment[j]).to_string(),
            ])
            .map_err(|e| csv_error(long_path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(long_path, e))?;

    let mut w = create_writer(surv_path)?;
    w.write_record(SURVIVAL_HEADER)
        .map_err(|e| csv_error(surv_path, e))?;
    for s in dataset {
        w.write_record([
            s.id.clone(),
            format_f64(s.survival_time),
            u8::from(s.event).to_string(),
        ])
        .map_err(|e| csv_error(surv_path, e))?;
    }
    w.flush().map_err(|e| Error::io(surv_path, e))
}

/// One row per retained iteration: `chain,iter,<names…>` with 1-based indices.
pub fn write_draws(draws: &DrawsMatrix, path: &Path) -> Result<()> {
    let mut w = create_writer(path)?;
    let mut header = vec!["chain".to_string(), "iter".to_string()];
    header.extend(draws.names().iter().cloned());
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for c in 0..draws.n_chains() {
        for i in 0..draws.n_iters() {
            let mut rec = vec![(c + 1).to_string(), (i + 1).to_string()];
            rec.extend(draws.row(c, i).iter().map(|&v| format_f64(v)));
            w.write_record(&rec).map_err(|e| csv_error(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_draws(path: &Path) -> Result<DrawsMatrix> {
    let mut reader = open_reader(path)?;
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.len() < 2 || &header[0] != "chain" || &header[1] != "iter" {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: "draws header must start with `chain,iter`".into(),
        });
    }
    let names: Vec<String> = header.iter().skip(2).map(str::to_string).collect();
    let mut values = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let f = Field {
            path,
            line: record.position().map(|p| p.line()).unwrap_or(0),
        };
        let chain = f.usize(&record, 0, "chain")?;
        let iter = f.usize(&record, 1, "iter")?;
        if chain == counts.len() + 1 {
            counts.push(0);
        }
        if chain != counts.len() || iter != counts[chain - 1] + 1 {
            return Err(f.err(format!(
                "draws must be ordered by chain then iteration; found chain {chain}, iter {iter}"
            )));
        }
        counts[chain - 1] += 1;
        for (k, name) in names.iter().enumerate() {
            values.push(f.f64(&record, k + 2, name)?);
        }
    }
    let iters = counts.first().copied().unwrap_or(0);
    if counts.iter().any(|&c| c != iters) {
        return Err(Error::Dataset {
            path: path.to_path_buf(),
            message: format!("chains have unequal lengths {counts:?}"),
        });
    }
    DrawsMatrix::new(names, counts.len(), iters, values)
}

pub fn write_summary(rows: &[SummaryRow], path: &Path) -> Result<()> {
    let mut w = create_writer(path)?;
    w.write_record(SUMMARY_HEADER)
        .map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.write_record([
            r.name.clone(),
            format_f64(r.mean),
            format_f64(r.sd),
            format_f64(r.mcse),
            format_f64(r.q2_5),
            format_f64(r.q97_5),
            format_f64(r.rhat),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Replicates in long form: `rep,subject_id,occasion,time,y_rep`.
pub fn write_replicates(
    replicates: &[Vec<f64>],
    dataset: &[SubjectData],
    path: &Path,
) -> Result<()> {
    let mut w = create_writer(path)?;
    w.write_record(["rep", "subject_id", "occasion", "time", "y_rep"])
        .map_err(|e| csv_error(path, e))?;
    for (r, rep) in replicates.iter().enumerate() {
        let mut k = 0;
        for s in dataset {
            for j in 0..s.n_obs() {
                w.write_record([
                    (r + 1).to_string(),
                    s.id.clone(),
                    (j + 1).to_string(),
                    format_f64(s.times[j]),
                    format_f64(rep[k]),
                ])
                .map_err(|e| csv_error(path, e))?;
                k += 1;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Per-subject screen output: `subject_id,q,df,s2,transformed`.
pub fn write_screen(result: &VarianceScreenResult, path: &Path) -> Result<()> {
    let mut w = create_writer(path)?;
    w.write_record(["subject_id", "q", "df", "s2", "transformed"])
        .map_err(|e| csv_error(path, e))?;
    for s in &result.subjects {
        w.write_record([
            s.id.clone(),
            s.q.to_string(),
            s.df.to_string(),
            format_f64(s.s2),
            format_f64(s.transformed),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
