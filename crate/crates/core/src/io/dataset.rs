//! Dataset CSV: `id,time,event,treat,pop,x1,...,xp`.

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::survival::{Arm, Cause, Cohort, EventRecord, Population};

/// Stream of the seeded generator reserved for tie jittering.
pub const JITTER_STREAM: u64 = 2;

const FIXED_COLUMNS: [&str; 5] = ["id", "time", "event", "treat", "pop"];

/// A parsed dataset and what preprocessing did to it.
#[derive(Debug, Clone)]
pub struct Ingested {
    pub cohort: Cohort,
    /// Rows dropped for a missing covariate.
    pub dropped_missing: usize,
    /// Rows whose time was jittered to break cross-cause ties.
    pub jittered: usize,
}

fn is_missing(cell: &str) -> bool {
    let c = cell.trim();
    c.is_empty() || c.eq_ignore_ascii_case("na")
}

fn parse_header(header: &csv::StringRecord) -> Result<usize> {
    let cells: Vec<&str> = header.iter().map(str::trim).collect();
    let fixed_ok = cells.len() >= FIXED_COLUMNS.len()
        && cells[..FIXED_COLUMNS.len()] == FIXED_COLUMNS;
    let p = cells.len().saturating_sub(FIXED_COLUMNS.len());
    let covariates_ok = cells
        .iter()
        .skip(FIXED_COLUMNS.len())
        .enumerate()
        .all(|(i, c)| *c == format!("x{}", i + 1));
    if !(fixed_ok && covariates_ok) {
        return Err(Error::Parse {
            line: 1,
            reason: format!(
                "header must be `id,time,event,treat,pop,x1,...,xp`, found `{}`",
                cells.join(",")
            ),
        });
    }
    Ok(p)
}

/// Parses one data row; `Ok(None)` means the row has a missing covariate.
fn parse_row(row: &csv::StringRecord, p: usize, line: usize) -> Result<Option<EventRecord>> {
    let err = |reason: String| Error::Parse { line, reason };
    if row.len() != FIXED_COLUMNS.len() + p {
        return Err(err(format!(
            "expected {} fields, found {}",
            FIXED_COLUMNS.len() + p,
            row.len()
        )));
    }
    let id = row[0].trim().to_string();
    if id.is_empty() {
        return Err(err("empty id".into()));
    }
    let time: f64 = row[1]
        .trim()
        .parse()
        .map_err(|_| err(format!("time `{}` is not a number", &row[1])))?;
    if !(time.is_finite() && time > 0.0) {
        return Err(err(format!("time must be positive and finite, got {time}")));
    }
    let cause = match row[2].trim() {
        "0" => Cause::Censored,
        "1" => Cause::Interest,
        "2" => Cause::Competing,
        other => return Err(err(format!("event must be 0, 1 or 2, got `{other}`"))),
    };
    let pop = match row[4].trim() {
        "0" => Population::External,
        "1" => Population::Trial,
        other => return Err(err(format!("pop must be 0 or 1, got `{other}`"))),
    };
    let treat = match (row[3].trim(), pop) {
        ("0", Population::Trial) => Some(Arm::Control),
        ("1", Population::Trial) => Some(Arm::Treated),
        (t, Population::External) if is_missing(t) => None,
        (t, Population::Trial) if is_missing(t) => {
            return Err(err("treat is NA for a trial row (pop = 1)".into()))
        }
        (t, Population::External) if t == "0" || t == "1" => {
            return Err(err(format!("treat = {t} for an external row (pop = 0); must be NA")))
        }
        (other, _) => return Err(err(format!("treat must be 0, 1 or NA, got `{other}`"))),
    };
    let mut covariates = Vec::with_capacity(p);
    for (k, cell) in row.iter().skip(FIXED_COLUMNS.len()).enumerate() {
        if is_missing(cell) {
            return Ok(None);
        }
        let v: f64 = cell
            .trim()
            .parse()
            .map_err(|_| err(format!("x{} `{cell}` is not a number", k + 1)))?;
        if !v.is_finite() {
            return Err(err(format!("x{} is not finite", k + 1)));
        }
        covariates.push(v);
    }
    Ok(Some(EventRecord {
        id,
        time,
        cause,
        treat,
        pop,
        covariates,
    }))
}

/// Adds uniform `(0, scale)` noise to every event time involved in a cross-cause
/// tie, repeating until none remain. Returns the number of distinct rows moved.
pub fn jitter_cross_cause_ties<R: Rng>(records: &mut [EventRecord], scale: f64, rng: &mut R) -> usize {
    let mut moved = BTreeSet::new();
    loop {
        let mut events: Vec<(f64, Cause, usize)> = records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.cause.is_event())
            .map(|(i, r)| (r.time, r.cause, i))
            .collect();
        events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.2.cmp(&b.2)));
        let mut tied = BTreeSet::new();
        for group in events.chunk_by(|a, b| a.0 == b.0) {
            if group.iter().any(|e| e.1 != group[0].1) {
                tied.extend(group.iter().map(|e| e.2));
            }
        }
        if tied.is_empty() {
            return moved.len();
        }
        // ascending row order keeps the draws reproducible
        for i in tied {
            let u: f64 = rng.gen();
            records[i].time += u * scale;
            moved.insert(i);
        }
    }
}

/// Reads a dataset, dropping rows with missing covariates and jittering
/// cross-cause ties with the generator seeded by `seed` on [`JITTER_STREAM`].
pub fn read_dataset<R: Read>(input: R, tau: f64, jitter_scale: f64, seed: u64) -> Result<Ingested> {
    if !(jitter_scale > 0.0 && jitter_scale.is_finite()) {
        return Err(Error::Config("jitter_scale must be positive".into()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(input);
    let p = parse_header(reader.headers()?)?;
    let mut records = Vec::new();
    let mut dropped_missing = 0;
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |pos| pos.line() as usize);
            Error::Parse {
                line,
                reason: e.to_string(),
            }
        })?;
        let line = row.position().map_or(0, |pos| pos.line() as usize);
        match parse_row(&row, p, line)? {
            Some(r) => records.push(r),
            None => dropped_missing += 1,
        }
    }
    if dropped_missing > 0 {
        log::info!("dropped {dropped_missing} rows with missing covariates");
    }
    if !records.iter().any(EventRecord::in_trial) {
        return Err(Error::InvalidCohort("no trial (pop = 1) rows".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(JITTER_STREAM);
    let jittered = jitter_cross_cause_ties(&mut records, jitter_scale, &mut rng);
    if jittered > 0 {
        log::info!("jittered {jittered} rows to break cross-cause ties");
    }
    Ok(Ingested {
        cohort: Cohort::new(records, p, tau)?,
        dropped_missing,
        jittered,
    })
}

pub fn read_dataset_path(path: &Path, tau: f64, jitter_scale: f64, seed: u64) -> Result<Ingested> {
    read_dataset(std::fs::File::open(path)?, tau, jitter_scale, seed)
}

/// Writes a cohort in dataset format. Floats use the shortest text that parses
/// back to the same value.
pub fn write_cohort<W: Write>(cohort: &Cohort, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend((1..=cohort.covariate_dim()).map(|k| format!("x{k}")));
    w.write_record(&header)?;
    for r in cohort.records() {
        let mut row = vec![
            r.id.clone(),
            r.time.to_string(),
            r.cause.code().to_string(),
            r.treat.map_or("NA".to_string(), |a| a.code().to_string()),
            (r.d() as u8).to_string(),
        ];
        row.extend(r.covariates.iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
