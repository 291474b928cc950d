//! Panel data model: one treated unit, `N` controls, a pre/post split.
//!
//! Panels travel as wide CSV. The header row is `time,<label>,<label>,...`
//! and each following row holds one period, one numeric cell per unit.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PanelError {
    #[error("malformed CSV: {0}")]
    Csv(String),
    #[error("header must start with a time column followed by at least two unit labels")]
    BadHeader,
    #[error("unknown treated unit `{0}`")]
    UnknownTreated(String),
    #[error("duplicate unit label `{0}`")]
    DuplicateLabel(String),
    #[error("row {row}, column {col} (`{label}`): missing value")]
    MissingCell { row: usize, col: usize, label: String },
    #[error("row {row}, column {col} (`{label}`): `{value}` is not a finite number")]
    BadCell {
        row: usize,
        col: usize,
        label: String,
        value: String,
    },
    #[error("row {row}: expected {expected} fields, found {found}")]
    RaggedRow {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("t0 = {t0} out of range: need 2 <= t0 < {periods}")]
    T0OutOfRange { t0: usize, periods: usize },
    #[error("time labels must be strictly increasing (`{prev}` then `{next}`)")]
    TimesNotIncreasing { prev: String, next: String },
    #[error("invalid panel: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Observed outcomes of one treated unit and `N` controls.
///
/// Rows are periods, columns are units. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    times: Vec<String>,
    outcomes: DMatrix<f64>,
    treated_col: usize,
    t0: usize,
    unit_labels: Vec<String>,
}

/// Pre/post blocks of a panel with the treated column pulled out.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelSplit {
    /// `T0 x N` control outcomes before treatment.
    pub x_pre: DMatrix<f64>,
    pub y_pre: DVector<f64>,
    /// `T1 x N` control outcomes after treatment.
    pub x_post: DMatrix<f64>,
    pub y_post: DVector<f64>,
}

impl Panel {
    pub fn new(
        times: Vec<String>,
        outcomes: DMatrix<f64>,
        treated_col: usize,
        t0: usize,
        unit_labels: Vec<String>,
    ) -> Result<Self, PanelError> {
        let (t, cols) = outcomes.shape();
        if times.len() != t {
            return Err(PanelError::Invalid(format!(
                "{} time labels for {} rows",
                times.len(),
                t
            )));
        }
        if unit_labels.len() != cols {
            return Err(PanelError::Invalid(format!(
                "{} unit labels for {} columns",
                unit_labels.len(),
                cols
            )));
        }
        if cols < 2 {
            return Err(PanelError::Invalid(
                "need the treated unit and at least one control".into(),
            ));
        }
        if treated_col >= cols {
            return Err(PanelError::Invalid(format!(
                "treated column {treated_col} out of range"
            )));
        }
        if t0 < 2 || t0 >= t {
            return Err(PanelError::T0OutOfRange { t0, periods: t });
        }
        for (i, label) in unit_labels.iter().enumerate() {
            if unit_labels[..i].contains(label) {
                return Err(PanelError::DuplicateLabel(label.clone()));
            }
        }
        for c in 0..cols {
            for r in 0..t {
                if !outcomes[(r, c)].is_finite() {
                    return Err(PanelError::BadCell {
                        row: r + 1,
                        col: c + 1,
                        label: unit_labels[c].clone(),
                        value: outcomes[(r, c)].to_string(),
                    });
                }
            }
        }
        check_increasing(&times)?;
        Ok(Self {
            times,
            outcomes,
            treated_col,
            t0,
            unit_labels,
        })
    }

    /// Builds a panel whose treated unit is column 0 and controls follow,
    /// with times labelled `1..=T`.
    pub fn from_columns(
        treated: &DVector<f64>,
        controls: &DMatrix<f64>,
        t0: usize,
    ) -> Result<Self, PanelError> {
        let t = treated.len();
        if controls.nrows() != t {
            return Err(PanelError::Invalid(format!(
                "treated has {t} periods, controls have {}",
                controls.nrows()
            )));
        }
        let n = controls.ncols();
        let mut outcomes = DMatrix::zeros(t, n + 1);
        outcomes.set_column(0, treated);
        outcomes.columns_mut(1, n).copy_from(controls);
        let times = (1..=t).map(|s| s.to_string()).collect();
        let mut labels = vec!["treated".to_string()];
        labels.extend((1..=n).map(|i| format!("control{i}")));
        Self::new(times, outcomes, 0, t0, labels)
    }

    pub fn times(&self) -> &[String] {
        &self.times
    }

    pub fn outcomes(&self) -> &DMatrix<f64> {
        &self.outcomes
    }

    pub fn treated_col(&self) -> usize {
        self.treated_col
    }

    pub fn treated_label(&self) -> &str {
        &self.unit_labels[self.treated_col]
    }

    pub fn unit_labels(&self) -> &[String] {
        &self.unit_labels
    }

    /// Total periods `T`.
    pub fn periods(&self) -> usize {
        self.outcomes.nrows()
    }

    pub fn t0(&self) -> usize {
        self.t0
    }

    pub fn t1(&self) -> usize {
        self.periods() - self.t0
    }

    /// Number of control units `N`.
    pub fn n_controls(&self) -> usize {
        self.outcomes.ncols() - 1
    }

    pub fn control_cols(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.outcomes.ncols()).filter(move |&c| c != self.treated_col)
    }

    /// `T x N` control matrix in file column order.
    pub fn controls(&self) -> DMatrix<f64> {
        self.outcomes.clone().remove_column(self.treated_col)
    }

    pub fn treated(&self) -> DVector<f64> {
        self.outcomes.column(self.treated_col).into_owned()
    }

    pub fn split_pre_post(&self) -> PanelSplit {
        let x = self.controls();
        let y = self.treated();
        let (t0, t1) = (self.t0, self.t1());
        PanelSplit {
            x_pre: x.rows(0, t0).into_owned(),
            y_pre: y.rows(0, t0).into_owned(),
            x_post: x.rows(t0, t1).into_owned(),
            y_post: y.rows(t0, t1).into_owned(),
        }
    }

    /// Copy of this panel with the treated column replaced.
    pub fn with_treated(&self, treated: &DVector<f64>) -> Result<Self, PanelError> {
        if treated.len() != self.periods() {
            return Err(PanelError::Invalid("treated series length mismatch".into()));
        }
        let mut outcomes = self.outcomes.clone();
        outcomes.set_column(self.treated_col, treated);
        Self::new(
            self.times.clone(),
            outcomes,
            self.treated_col,
            self.t0,
            self.unit_labels.clone(),
        )
    }

    /// Writes the panel back out in the wide CSV dialect `load_panel` reads.
    ///
    /// Values use Rust's shortest round-trip formatting, so reloading gives
    /// bit-identical outcomes.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), PanelError> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["time".to_string()];
        header.extend(self.unit_labels.iter().cloned());
        w.write_record(&header).map_err(csv_err)?;
        for (r, time) in self.times.iter().enumerate() {
            let mut rec = vec![time.clone()];
            rec.extend(self.outcomes.row(r).iter().map(|v| format!("{v}")));
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv output is utf-8")
    }
}

fn csv_err(e: csv::Error) -> PanelError {
    PanelError::Csv(e.to_string())
}

fn check_increasing(times: &[String]) -> Result<(), PanelError> {
    let numeric: Option<Vec<f64>> = times.iter().map(|s| s.trim().parse().ok()).collect();
    for i in 1..times.len() {
        let ok = match &numeric {
            Some(v) => v[i] > v[i - 1],
            None => times[i] > times[i - 1],
        };
        if !ok {
            return Err(PanelError::TimesNotIncreasing {
                prev: times[i - 1].clone(),
                next: times[i].clone(),
            });
        }
    }
    Ok(())
}

/// Reads a wide-format panel and designates `treated` as the treated unit.
///
/// Rows and columns in error messages are 1-based over the data rows and
/// the unit columns respectively.
pub fn load_panel<R: Read>(source: R, treated: &str, t0: usize) -> Result<Panel, PanelError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let header = reader.headers().map_err(csv_err)?.clone();
    if header.len() < 3 {
        return Err(PanelError::BadHeader);
    }
    let unit_labels: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let treated_col = unit_labels
        .iter()
        .position(|l| l == treated)
        .ok_or_else(|| PanelError::UnknownTreated(treated.to_string()))?;

    let width = header.len();
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let row = i + 1;
        if rec.len() != width {
            return Err(PanelError::RaggedRow {
                row,
                expected: width,
                found: rec.len(),
            });
        }
        times.push(rec[0].to_string());
        for (c, cell) in rec.iter().skip(1).enumerate() {
            let label = unit_labels[c].clone();
            if cell.is_empty() {
                return Err(PanelError::MissingCell {
                    row,
                    col: c + 1,
                    label,
                });
            }
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => values.push(v),
                _ => {
                    return Err(PanelError::BadCell {
                        row,
                        col: c + 1,
                        label,
                        value: cell.to_string(),
                    })
                }
            }
        }
    }
    let periods = times.len();
    if t0 < 2 || t0 >= periods {
        return Err(PanelError::T0OutOfRange { t0, periods });
    }
    let outcomes = DMatrix::from_row_slice(periods, unit_labels.len(), &values);
    Panel::new(times, outcomes, treated_col, t0, unit_labels)
}
