//! Series ingestion, variable transformations and the lag design.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A calendar quarter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Quarter {
    pub year: i32,
    /// 1..=4
    pub quarter: u8,
}

impl Quarter {
    pub fn new(year: i32, quarter: u8) -> Result<Self> {
        if !(1..=4).contains(&quarter) {
            return Err(Error::config(format!(
                "quarter must be 1..=4, got {quarter}"
            )));
        }
        Ok(Self { year, quarter })
    }

    fn ordinal(self) -> i64 {
        self.year as i64 * 4 + (self.quarter as i64 - 1)
    }

    pub fn next(self) -> Self {
        if self.quarter == 4 {
            Self {
                year: self.year + 1,
                quarter: 1,
            }
        } else {
            Self {
                year: self.year,
                quarter: self.quarter + 1,
            }
        }
    }

    pub fn is_successor_of(self, other: Quarter) -> bool {
        self.ordinal() == other.ordinal() + 1
    }
}

impl fmt::Display for Quarter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}Q{}", self.year, self.quarter)
    }
}

impl FromStr for Quarter {
    type Err = String;

    /// Accepts `YYYYQq`, `YYYY-Qq` and ISO dates `YYYY-MM-DD` (mapped to their quarter).
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let s = s.trim();
        let upper = s.to_ascii_uppercase();
        if let Some(pos) = upper.find('Q') {
            let year = upper[..pos].trim_end_matches(['-', ' ']);
            let q = &upper[pos + 1..];
            let year: i32 = year.parse().map_err(|_| format!("bad year in `{s}`"))?;
            let q: u8 = q.parse().map_err(|_| format!("bad quarter in `{s}`"))?;
            return Quarter::new(year, q).map_err(|e| e.to_string());
        }
        let parts: Vec<&str> = s.split('-').collect();
        if parts.len() == 3 {
            let year: i32 = parts[0].parse().map_err(|_| format!("bad year in `{s}`"))?;
            let month: u8 = parts[1]
                .parse()
                .map_err(|_| format!("bad month in `{s}`"))?;
            let day: u8 = parts[2].parse().map_err(|_| format!("bad day in `{s}`"))?;
            if !(1..=12).contains(&month) || !(1..=31).contains(&day) {
                return Err(format!("invalid date `{s}`"));
            }
            return Ok(Quarter {
                year,
                quarter: (month - 1) / 3 + 1,
            });
        }
        Err(format!(
            "unrecognised date `{s}` (expected YYYYQq or YYYY-MM-DD)"
        ))
    }
}

/// Variable transformation codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum TransformCode {
    /// Levels, untransformed.
    Level = 0,
    /// `400 * ln(x_t / x_{t-1})`.
    AnnLogDiff = 1,
    /// `100 * ln(x_t / x_{t-1})`.
    LogDiff = 2,
    /// `ln(x_t)`.
    Log = 3,
}

impl TryFrom<u8> for TransformCode {
    type Error = String;

    fn try_from(code: u8) -> std::result::Result<Self, Self::Error> {
        match code {
            0 => Ok(Self::Level),
            1 => Ok(Self::AnnLogDiff),
            2 => Ok(Self::LogDiff),
            3 => Ok(Self::Log),
            other => Err(format!("transform code must be 0..=3, got {other}")),
        }
    }
}

impl From<TransformCode> for u8 {
    fn from(c: TransformCode) -> u8 {
        c as u8
    }
}

impl TransformCode {
    pub fn is_differenced(self) -> bool {
        matches!(self, Self::AnnLogDiff | Self::LogDiff)
    }
}

/// One observed series on a quarterly index.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSeries {
    pub name: String,
    pub dates: Vec<Quarter>,
    pub values: Vec<f64>,
}

impl RawSeries {
    pub fn new(name: impl Into<String>, dates: Vec<Quarter>, values: Vec<f64>) -> Result<Self> {
        let name = name.into();
        if dates.len() != values.len() {
            return Err(Error::Alignment(format!(
                "series `{name}` has {} dates but {} values",
                dates.len(),
                values.len()
            )));
        }
        if let Some(i) = dates.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::Alignment(format!(
                "series `{name}` dates not strictly increasing at index {}",
                i + 1
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain {
                series: name,
                index: i,
                message: "missing or non-finite value".into(),
            });
        }
        Ok(Self {
            name,
            dates,
            values,
        })
    }
}

/// Applies one transformation code; differenced outputs lose their first element.
pub fn apply_transform(series: &RawSeries, code: TransformCode) -> Result<RawSeries> {
    if code != TransformCode::Level {
        if let Some(i) = series.values.iter().position(|&v| v <= 0.0) {
            return Err(Error::Domain {
                series: series.name.clone(),
                index: i,
                message: format!("log transform of non-positive value {}", series.values[i]),
            });
        }
    }
    let (dates, values) = match code {
        TransformCode::Level => (series.dates.clone(), series.values.clone()),
        TransformCode::Log => (
            series.dates.clone(),
            series.values.iter().map(|v| v.ln()).collect(),
        ),
        TransformCode::AnnLogDiff | TransformCode::LogDiff => {
            let scale = if code == TransformCode::AnnLogDiff {
                400.0
            } else {
                100.0
            };
            let values = series
                .values
                .windows(2)
                .map(|w| scale * (w[1] / w[0]).ln())
                .collect();
            (series.dates.iter().skip(1).copied().collect(), values)
        }
    };
    Ok(RawSeries {
        name: series.name.clone(),
        dates,
        values,
    })
}

/// Transformed data `y` together with the lag design `x`.
///
/// Row `t` of `x` is `(y'_{t-1}, ..., y'_{t-p})`, built from the full aligned
/// sample; the first `p` observations are consumed as initial conditions and do
/// not appear as rows of `y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Panel {
    pub y: DMatrix<f64>,
    pub x: DMatrix<f64>,
    pub names: Vec<String>,
    pub p: usize,
    pub dates: Vec<Quarter>,
    pub codes: Vec<TransformCode>,
}

impl Panel {
    /// Builds the panel from a full `T_all x n` matrix of transformed data.
    pub fn from_levels(
        y_all: &DMatrix<f64>,
        names: Vec<String>,
        p: usize,
        dates: Vec<Quarter>,
        codes: Vec<TransformCode>,
    ) -> Result<Self> {
        let (t_all, n) = y_all.shape();
        if n == 0 || names.len() != n {
            return Err(Error::dimension(format!(
                "{} names for {n} columns",
                names.len()
            )));
        }
        if p == 0 {
            return Err(Error::config("lag order p must be positive"));
        }
        if dates.len() != t_all {
            return Err(Error::dimension(format!(
                "{} dates for {t_all} rows",
                dates.len()
            )));
        }
        if p >= t_all || t_all <= n * p {
            return Err(Error::InsufficientData(format!(
                "{t_all} observations cannot support {n} variables with {p} lags"
            )));
        }
        let t = t_all - p;
        let k = n * p;
        let mut x = DMatrix::zeros(t, k);
        for row in 0..t {
            for lag in 1..=p {
                for i in 0..n {
                    x[(row, (lag - 1) * n + i)] = y_all[(row + p - lag, i)];
                }
            }
        }
        let y = y_all.rows(p, t).into_owned();
        Ok(Self {
            y,
            x,
            names,
            p,
            dates: dates[p..].to_vec(),
            codes,
        })
    }

    pub fn n(&self) -> usize {
        self.y.ncols()
    }

    pub fn t(&self) -> usize {
        self.y.nrows()
    }

    pub fn k(&self) -> usize {
        self.x.ncols()
    }

    /// Lag vector `x_{t+1} = (y'_t, ..., y'_{t-p+1})` that follows row `t`.
    pub fn lag_vector_after(&self, t: usize) -> DVector<f64> {
        let n = self.n();
        let k = self.k();
        let mut out = DVector::zeros(k);
        for i in 0..n {
            out[i] = self.y[(t, i)];
        }
        for j in n..k {
            out[j] = self.x[(t, j - n)];
        }
        out
    }

    /// Lag vector for a forecast starting after the last observation.
    pub fn final_lag_vector(&self) -> DVector<f64> {
        self.lag_vector_after(self.t() - 1)
    }

    /// Appends the rows of `path` (`H x n`) as additional observations, extending the lag design.
    pub fn augmented(&self, path: &DMatrix<f64>) -> Result<Panel> {
        if path.nrows() == 0 {
            return Ok(self.clone());
        }
        if path.ncols() != self.n() {
            return Err(Error::dimension(format!(
                "augmentation path has {} columns, panel has {}",
                path.ncols(),
                self.n()
            )));
        }
        let (t, n, k, h) = (self.t(), self.n(), self.k(), path.nrows());
        let mut y = self.y.clone().resize_vertically(t + h, 0.0);
        let mut x = self.x.clone().resize_vertically(t + h, 0.0);
        for r in 0..h {
            let lag = if r == 0 {
                self.final_lag_vector()
            } else {
                let mut v = DVector::zeros(k);
                for i in 0..n {
                    v[i] = y[(t + r - 1, i)];
                }
                for j in n..k {
                    v[j] = x[(t + r - 1, j - n)];
                }
                v
            };
            for j in 0..k {
                x[(t + r, j)] = lag[j];
            }
            for i in 0..n {
                y[(t + r, i)] = path[(r, i)];
            }
        }
        let mut dates = self.dates.clone();
        for _ in 0..h {
            let next = dates.last().map(|d| d.next()).unwrap_or(Quarter {
                year: 0,
                quarter: 1,
            });
            dates.push(next);
        }
        Ok(Panel {
            y,
            x,
            names: self.names.clone(),
            p: self.p,
            dates,
            codes: self.codes.clone(),
        })
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

/// Transforms each series, aligns them on their common dates and builds the lag design.
pub fn build_panel(series: &[RawSeries], codes: &[TransformCode], p: usize) -> Result<Panel> {
    if series.is_empty() {
        return Err(Error::Alignment("no series supplied".into()));
    }
    if series.len() != codes.len() {
        return Err(Error::dimension(format!(
            "{} series but {} transform codes",
            series.len(),
            codes.len()
        )));
    }
    let transformed: Vec<RawSeries> = series
        .iter()
        .zip(codes)
        .map(|(s, &c)| apply_transform(s, c))
        .collect::<Result<_>>()?;

    let mut common: BTreeSet<Quarter> = transformed[0].dates.iter().copied().collect();
    for s in &transformed[1..] {
        let other: BTreeSet<Quarter> = s.dates.iter().copied().collect();
        common = common.intersection(&other).copied().collect();
    }
    if common.is_empty() {
        return Err(Error::Alignment("series share no common dates".into()));
    }
    let dates: Vec<Quarter> = common.into_iter().collect();
    if let Some(w) = dates.windows(2).find(|w| !w[1].is_successor_of(w[0])) {
        return Err(Error::Alignment(format!(
            "common sample has a gap between {} and {}",
            w[0], w[1]
        )));
    }
    let n = transformed.len();
    let mut y_all = DMatrix::zeros(dates.len(), n);
    for (j, s) in transformed.iter().enumerate() {
        let lookup: BTreeMap<Quarter, f64> = s
            .dates
            .iter()
            .copied()
            .zip(s.values.iter().copied())
            .collect();
        for (t, d) in dates.iter().enumerate() {
            y_all[(t, j)] = lookup[d];
        }
    }
    if p >= dates.len() {
        return Err(Error::InsufficientData(format!(
            "lag order {p} needs more than {} aligned observations",
            dates.len()
        )));
    }
    let names = transformed.iter().map(|s| s.name.clone()).collect();
    Panel::from_levels(&y_all, names, p, dates, codes.to_vec())
}

fn is_missing(cell: &str) -> bool {
    matches!(cell.trim(), "" | "NA" | "NaN" | "nan" | ".")
}

/// Reads a CSV whose first column holds dates and whose remaining columns are
/// numeric series. Column order fixes the variable ordering; variables absent
/// from `transforms` enter in levels.
pub fn load_csv(
    path: impl AsRef<Path>,
    transforms: &[(String, TransformCode)],
    p: usize,
) -> Result<Panel> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)?;
    let headers: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if headers.len() < 2 {
        return Err(Error::Parse {
            row: 1,
            column: 1,
            message: "need a date column and at least one series".into(),
        });
    }
    let names = &headers[1..];
    for (name, _) in transforms {
        if !names.iter().any(|h| h == name) {
            return Err(Error::config(format!(
                "transform given for unknown variable `{name}`"
            )));
        }
    }

    let mut rows: Vec<(Quarter, Vec<Option<f64>>)> = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let row_no = r + 2;
        let date_cell = record.get(0).unwrap_or("");
        let date: Quarter = date_cell.parse().map_err(|message| Error::Parse {
            row: row_no,
            column: 1,
            message,
        })?;
        let mut values = Vec::with_capacity(names.len());
        for c in 0..names.len() {
            let cell = record.get(c + 1).unwrap_or("");
            if is_missing(cell) {
                values.push(None);
            } else {
                let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                    row: row_no,
                    column: c + 2,
                    message: format!("cannot parse `{cell}` as a number"),
                })?;
                values.push(Some(v));
            }
        }
        rows.push((date, values));
    }
    rows.sort_by_key(|(d, _)| *d);
    if let Some(w) = rows.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::Alignment(format!("duplicate date {}", w[0].0)));
    }

    let mut series = Vec::with_capacity(names.len());
    let mut codes = Vec::with_capacity(names.len());
    for (c, name) in names.iter().enumerate() {
        let present: Vec<usize> = (0..rows.len())
            .filter(|&t| rows[t].1[c].is_some())
            .collect();
        let (Some(&first), Some(&last)) = (present.first(), present.last()) else {
            return Err(Error::Alignment(format!(
                "series `{name}` has no observations"
            )));
        };
        let mut dates = Vec::new();
        let mut values = Vec::new();
        for (t, (date, row)) in rows.iter().enumerate().take(last + 1).skip(first) {
            match row[c] {
                Some(v) => {
                    dates.push(*date);
                    values.push(v);
                }
                None => {
                    return Err(Error::Domain {
                        series: name.clone(),
                        index: t,
                        message: format!("interior missing value at {date}"),
                    })
                }
            }
        }
        series.push(RawSeries::new(name.clone(), dates, values)?);
        let code = transforms
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, c)| *c)
            .unwrap_or(TransformCode::Level);
        codes.push(code);
    }
    build_panel(&series, &codes, p)
}
