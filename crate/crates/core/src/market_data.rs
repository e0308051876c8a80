//! Price history ingestion and cleaning.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Market {
    DayAhead,
    Intraday,
}

impl Market {
    /// Intervals per delivery day.
    pub fn intervals(self) -> usize {
        match self {
            Market::DayAhead => 24,
            Market::Intraday => 96,
        }
    }

    fn minutes(self) -> u32 {
        match self {
            Market::DayAhead => 60,
            Market::Intraday => 15,
        }
    }
}

impl fmt::Display for Market {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Market::DayAhead => "da",
            Market::Intraday => "id",
        })
    }
}

impl std::str::FromStr for Market {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "da" | "dayahead" | "day-ahead" => Ok(Market::DayAhead),
            "id" | "intraday" => Ok(Market::Intraday),
            other => Err(Error::InvalidArgument(format!("unknown market `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PricePoint {
    pub date: NaiveDate,
    pub interval: usize,
    pub price: f64,
    pub market: Market,
}

/// Days × intervals, EUR/MWh.
#[derive(Clone, Debug, PartialEq)]
pub struct PriceMatrix {
    pub market: Market,
    pub dates: Vec<NaiveDate>,
    pub rows: Vec<Vec<f64>>,
}

impl PriceMatrix {
    pub fn new(market: Market, dates: Vec<NaiveDate>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if dates.len() != rows.len() {
            return Err(Error::Shape(format!(
                "{} dates for {} rows",
                dates.len(),
                rows.len()
            )));
        }
        let width = market.intervals();
        if let Some(bad) = rows.iter().find(|r| r.len() != width) {
            return Err(Error::Shape(format!(
                "{market} row has {} columns, expected {width}",
                bad.len()
            )));
        }
        Ok(Self {
            market,
            dates,
            rows,
        })
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn num_cols(&self) -> usize {
        self.market.intervals()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[j]).collect()
    }

    pub fn min_max(&self) -> Option<(f64, f64)> {
        self.rows.iter().flatten().fold(None, |acc, &v| match acc {
            None => Some((v, v)),
            Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
        })
    }
}

#[derive(Clone, Debug)]
pub struct Ingested {
    pub matrix: PriceMatrix,
    /// Days dropped for missing intervals.
    pub dropped_days: usize,
}

#[derive(Deserialize)]
struct RawRow {
    timestamp: String,
    price_eur_per_mwh: String,
}

fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.naive_local());
    }
    [
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%d %H:%M",
    ]
    .iter()
    .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
}

/// Reads `timestamp,price_eur_per_mwh` rows into one matrix row per
/// complete day.
pub fn ingest_csv(path: &Path, market: Market) -> Result<Ingested> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers = reader.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["timestamp", "price_eur_per_mwh"] {
        return Err(Error::Parse {
            path: path.into(),
            line: 1,
            msg: format!(
                "expected header `timestamp,price_eur_per_mwh`, got `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }
    let width = market.intervals();
    let mut days: BTreeMap<NaiveDate, Vec<Option<f64>>> = BTreeMap::new();
    let mut any = false;
    for (k, rec) in reader.deserialize::<RawRow>().enumerate() {
        let line = k + 2;
        let parse_err = |msg: String| Error::Parse {
            path: path.into(),
            line,
            msg,
        };
        let row = rec.map_err(|e| parse_err(e.to_string()))?;
        any = true;
        let ts = parse_timestamp(&row.timestamp)
            .ok_or_else(|| parse_err(format!("bad timestamp `{}`", row.timestamp)))?;
        let price: f64 = row
            .price_eur_per_mwh
            .trim()
            .parse()
            .map_err(|_| parse_err(format!("bad price `{}`", row.price_eur_per_mwh)))?;
        if !price.is_finite() {
            return Err(parse_err(format!("non-finite price `{price}`")));
        }
        let minute = ts.hour() * 60 + ts.minute();
        if minute % market.minutes() != 0 || ts.second() != 0 {
            return Err(parse_err(format!(
                "timestamp `{}` is not on a {market} interval boundary",
                row.timestamp
            )));
        }
        let idx = (minute / market.minutes()) as usize;
        let slots = days.entry(ts.date()).or_insert_with(|| vec![None; width]);
        if slots[idx].replace(price).is_some() {
            return Err(parse_err(format!(
                "duplicate interval {idx} on {}",
                ts.date()
            )));
        }
    }
    if !any {
        return Err(Error::EmptyInput(path.into()));
    }
    let mut dates = Vec::new();
    let mut rows = Vec::new();
    let mut dropped_days = 0;
    for (date, slots) in days {
        match slots.into_iter().collect::<Option<Vec<f64>>>() {
            Some(r) => {
                dates.push(date);
                rows.push(r);
            }
            None => dropped_days += 1,
        }
    }
    Ok(Ingested {
        matrix: PriceMatrix::new(market, dates, rows)?,
        dropped_days,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZScope {
    /// One μ, σ over every entry.
    #[default]
    Global,
    /// μ, σ per interval column.
    PerColumn,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Removes every day containing an entry with |x − μ|/σ > `threshold`
/// (population σ; σ = 0 keeps everything).
pub fn zscore_filter(matrix: &PriceMatrix, threshold: f64, scope: ZScope) -> Result<PriceMatrix> {
    if !(threshold > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "z-score threshold must be positive, got {threshold}"
        )));
    }
    if matrix.rows.is_empty() {
        return Ok(matrix.clone());
    }
    let width = matrix.num_cols();
    let stats: Vec<(f64, f64)> = match scope {
        ZScope::Global => vec![mean_std(matrix.rows.iter().flatten().copied()); width],
        ZScope::PerColumn => (0..width)
            .map(|j| mean_std(matrix.rows.iter().map(move |r| r[j])))
            .collect(),
    };
    let keep = |row: &Vec<f64>| {
        row.iter().zip(&stats).all(|(&x, &(mu, sigma))| {
            let z = if sigma > 0.0 { (x - mu) / sigma } else { 0.0 };
            z.abs() <= threshold
        })
    };
    let (dates, rows) = matrix
        .dates
        .iter()
        .zip(&matrix.rows)
        .filter(|(_, r)| keep(r))
        .map(|(d, r)| (*d, r.clone()))
        .unzip();
    PriceMatrix::new(matrix.market, dates, rows)
}

/// Linear-interpolation empirical quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Clips every column to its `[ε/2, 1 − ε/2]` empirical quantiles.
pub fn trim_confidence(matrix: &PriceMatrix, epsilon: f64) -> Result<PriceMatrix> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "confidence epsilon must lie in (0, 1), got {epsilon}"
        )));
    }
    if matrix.num_rows() < 2 {
        return Err(Error::InsufficientData(format!(
            "{} market has {} day(s), need at least 2",
            matrix.market,
            matrix.num_rows()
        )));
    }
    let mut out = matrix.clone();
    for j in 0..matrix.num_cols() {
        let mut col = matrix.column(j);
        col.sort_by(f64::total_cmp);
        let lo = quantile_sorted(&col, epsilon / 2.0);
        let hi = quantile_sorted(&col, 1.0 - epsilon / 2.0);
        for row in &mut out.rows {
            row[j] = row[j].clamp(lo, hi);
        }
    }
    Ok(out)
}

pub fn write_matrix_csv(path: &Path, matrix: &PriceMatrix) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["date".to_string()];
    header.extend((0..matrix.num_cols()).map(|j| format!("p{j}")));
    w.write_record(&header)?;
    for (d, row) in matrix.dates.iter().zip(&matrix.rows) {
        let mut rec = vec![d.to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_matrix_csv(path: &Path, market: Market) -> Result<PriceMatrix> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let mut dates = Vec::new();
    let mut rows = Vec::new();
    for (k, rec) in reader.records().enumerate() {
        let rec = rec?;
        let parse_err = |msg: String| Error::Parse {
            path: path.into(),
            line: k + 2,
            msg,
        };
        let date = NaiveDate::parse_from_str(&rec[0], "%Y-%m-%d")
            .map_err(|e| parse_err(format!("bad date: {e}")))?;
        let row = rec
            .iter()
            .skip(1)
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|e| parse_err(format!("bad price `{s}`: {e}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        dates.push(date);
        rows.push(row);
    }
    PriceMatrix::new(market, dates, rows)
}
