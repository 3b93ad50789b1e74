//! Trial records, the dataset container and CSV ingestion.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Treatment arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Arm {
    Control,
    Treated,
}

impl Arm {
    pub const BOTH: [Arm; 2] = [Arm::Treated, Arm::Control];

    /// 0 for control, 1 for treated.
    pub fn code(self) -> u8 {
        match self {
            Arm::Control => 0,
            Arm::Treated => 1,
        }
    }

    pub fn index(self) -> usize {
        self.code() as usize
    }

    pub fn from_code(code: u8) -> Option<Arm> {
        match code {
            0 => Some(Arm::Control),
            1 => Some(Arm::Treated),
            _ => None,
        }
    }
}

/// Why a record was censored.
///
/// Two reasons are supported; a richer taxonomy would add variants here and
/// a per-reason sensitivity parameter in the imputation config.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Reason {
    /// Censored by the planned end of follow-up; imputed under censoring at random.
    Administrative,
    /// Premature dropout; the target of the sensitivity adjustment.
    Dropout,
    /// The event was observed.
    NotApplicable,
}

/// One subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalRecord {
    pub id: String,
    pub arm: Arm,
    /// Observed time `min(T, C)`.
    pub time: f64,
    /// True when the event was observed.
    pub event: bool,
    pub reason: Reason,
    pub covariates: Vec<f64>,
}

/// A validated two-arm trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialDataset {
    records: Vec<SurvivalRecord>,
    covariate_names: Vec<String>,
    n1: usize,
    n0: usize,
}

impl TrialDataset {
    /// Validate and wrap `records`.
    pub fn new(records: Vec<SurvivalRecord>, covariate_names: Vec<String>) -> Result<Self> {
        let p = covariate_names.len();
        for (row, r) in records.iter().enumerate() {
            let bad = |column: &str, message: &str| Error::BadValue {
                row: row + 1,
                column: column.to_string(),
                message: message.to_string(),
            };
            if !(r.time.is_finite() && r.time >= 0.0) {
                return Err(bad("time", "must be finite and nonnegative"));
            }
            if r.event != (r.reason == Reason::NotApplicable) {
                return Err(bad("reason", "must be blank exactly when event = 1"));
            }
            if r.covariates.len() != p {
                return Err(bad("covariates", "wrong number of covariates"));
            }
            if let Some(j) = r.covariates.iter().position(|x| !x.is_finite()) {
                return Err(bad(&covariate_names[j], "covariate must be finite"));
            }
        }
        let n1 = records.iter().filter(|r| r.arm == Arm::Treated).count();
        let n0 = records.len() - n1;
        for (arm, count) in [(Arm::Treated, n1), (Arm::Control, n0)] {
            if count < 2 {
                return Err(Error::EmptyArm {
                    arm: arm.code(),
                    count,
                });
            }
            if !records.iter().any(|r| r.arm == arm && r.event) {
                return Err(Error::NoEventsInArm { arm: arm.code() });
            }
        }
        Ok(Self {
            records,
            covariate_names,
            n1,
            n0,
        })
    }

    pub fn records(&self) -> &[SurvivalRecord] {
        &self.records
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn n1(&self) -> usize {
        self.n1
    }

    pub fn n0(&self) -> usize {
        self.n0
    }

    pub fn n(&self) -> usize {
        self.records.len()
    }

    pub fn n_arm(&self, arm: Arm) -> usize {
        match arm {
            Arm::Treated => self.n1,
            Arm::Control => self.n0,
        }
    }

    /// Number of covariates.
    pub fn p(&self) -> usize {
        self.covariate_names.len()
    }

    /// Record indices of one arm, in file order.
    pub fn arm_indices(&self, arm: Arm) -> Vec<usize> {
        (0..self.records.len())
            .filter(|&i| self.records[i].arm == arm)
            .collect()
    }
}

/// Largest observed event time per arm and their minimum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TmaxInfo {
    pub t1_max: f64,
    pub t0_max: f64,
    pub t_tilde_max: f64,
}

pub fn tmax_info(dataset: &TrialDataset) -> Result<TmaxInfo> {
    let max_event = |arm: Arm| {
        dataset
            .records
            .iter()
            .filter(|r| r.arm == arm && r.event)
            .map(|r| r.time)
            .fold(None, |acc: Option<f64>, t| Some(acc.map_or(t, |a| a.max(t))))
            .ok_or(Error::NoEventsInArm { arm: arm.code() })
    };
    let t1_max = max_event(Arm::Treated)?;
    let t0_max = max_event(Arm::Control)?;
    Ok(TmaxInfo {
        t1_max,
        t0_max,
        t_tilde_max: t1_max.min(t0_max),
    })
}

/// Reclassify censored records: `time >= admin_after` is administrative,
/// anything earlier is a dropout. Event rows are untouched.
pub fn derive_reason(dataset: &TrialDataset, admin_after: f64) -> Result<TrialDataset> {
    if !(admin_after > 0.0 && admin_after.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "admin_after must be positive, got {admin_after}"
        )));
    }
    let mut out = dataset.clone();
    for r in out.records.iter_mut().filter(|r| !r.event) {
        r.reason = if r.time >= admin_after {
            Reason::Administrative
        } else {
            Reason::Dropout
        };
    }
    Ok(out)
}

const FIXED_COLUMNS: [&str; 5] = ["id", "arm", "time", "event", "reason"];

/// Load a trial from a CSV file with header `id,arm,time,event,reason,<covariates>`.
pub fn load_csv(path: impl AsRef<Path>, covariate_names: &[String]) -> Result<TrialDataset> {
    let file = std::fs::File::open(path)?;
    read_csv(file, covariate_names)
}

/// Like [`load_csv`] but from any reader.
pub fn read_csv(reader: impl Read, covariate_names: &[String]) -> Result<TrialDataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let fixed: Vec<usize> = FIXED_COLUMNS.iter().map(|c| column(c)).collect::<Result<_>>()?;
    let cov_cols: Vec<usize> = covariate_names
        .iter()
        .map(|c| column(c))
        .collect::<Result<_>>()?;

    let mut records = Vec::new();
    for (k, row) in rdr.records().enumerate() {
        let row = row?;
        let line = k + 1;
        let bad = |col: &str, message: String| Error::BadValue {
            row: line,
            column: col.to_string(),
            message,
        };
        let field = |idx: usize| row.get(idx).unwrap_or("");
        let parse_f64 = |idx: usize, name: &str| {
            field(idx)
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| bad(name, format!("`{}` is not a finite number", field(idx))))
        };
        let arm = match field(fixed[1]) {
            "0" => Arm::Control,
            "1" => Arm::Treated,
            other => return Err(bad("arm", format!("`{other}` is not 0 or 1"))),
        };
        let time = parse_f64(fixed[2], "time")?;
        if time < 0.0 {
            return Err(bad("time", format!("{time} is negative")));
        }
        let event = match field(fixed[3]) {
            "0" => false,
            "1" => true,
            other => return Err(bad("event", format!("`{other}` is not 0 or 1"))),
        };
        let reason = if event {
            Reason::NotApplicable
        } else {
            match field(fixed[4]) {
                "1" => Reason::Administrative,
                "2" => Reason::Dropout,
                "" => return Err(bad("reason", "censored row needs reason 1 or 2".into())),
                other => return Err(bad("reason", format!("`{other}` is not 1 or 2"))),
            }
        };
        let covariates = cov_cols
            .iter()
            .zip(covariate_names)
            .map(|(&idx, name)| parse_f64(idx, name))
            .collect::<Result<Vec<_>>>()?;
        records.push(SurvivalRecord {
            id: field(fixed[0]).to_string(),
            arm,
            time,
            event,
            reason,
            covariates,
        });
    }
    TrialDataset::new(records, covariate_names.to_vec())
}

/// Serialize in the same layout [`read_csv`] accepts. Numbers use the
/// shortest representation that parses back to the identical `f64`.
pub fn write_csv(dataset: &TrialDataset, writer: impl Write) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = FIXED_COLUMNS.to_vec();
    header.extend(dataset.covariate_names.iter().map(String::as_str));
    wtr.write_record(&header)?;
    for r in &dataset.records {
        let mut row = vec![
            r.id.clone(),
            r.arm.code().to_string(),
            r.time.to_string(),
            u8::from(r.event).to_string(),
            match r.reason {
                Reason::Administrative => "1".into(),
                Reason::Dropout => "2".into(),
                Reason::NotApplicable => String::new(),
            },
        ];
        row.extend(r.covariates.iter().map(f64::to_string));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}
