use std::fmt::Write as _;
use std::fs;

use chrono::NaiveDate;
use proptest::prelude::*;
use stationbid::market_data::{
    ingest_csv, quantile_sorted, trim_confidence, zscore_filter, Market, PriceMatrix, ZScope,
};
use stationbid::Error;
use tempfile::TempDir;

fn dates(n: usize) -> Vec<NaiveDate> {
    (0..n)
        .map(|k| NaiveDate::from_ymd_opt(2024, 1, 1).unwrap() + chrono::Duration::days(k as i64))
        .collect()
}

/// Day-ahead matrix with each row tiled out to 24 columns. Tiling by a
/// divisor of 24 leaves the global mean and population σ unchanged.
fn matrix(rows: Vec<Vec<f64>>) -> PriceMatrix {
    let rows: Vec<Vec<f64>> = rows
        .into_iter()
        .map(|r| r.iter().copied().cycle().take(24).collect())
        .collect();
    PriceMatrix::new(Market::DayAhead, dates(rows.len()), rows).unwrap()
}

fn da_csv(days: usize, skip: Option<(usize, usize)>) -> String {
    let mut s = String::from("timestamp,price_eur_per_mwh\n");
    for d in 0..days {
        for h in 0..24 {
            if skip == Some((d, h)) {
                continue;
            }
            writeln!(s, "2024-03-{:02}T{h:02}:00:00,{}", d + 1, 50 + h).unwrap();
        }
    }
    s
}

#[test]
fn ingest_two_complete_days() {
    let tmp = TempDir::new().unwrap();
    let path = tmp.path().join("da.csv");
    fs::write(&path, da_csv(2, None)).unwrap();
    let got = ingest_csv(&path, Market::DayAhead).unwrap();
    assert_eq!(got.matrix.num_rows(), 2);
    assert_eq!(got.matrix.num_cols(), 24);
    assert_eq!(got.dropped_days, 0);
    assert_eq!(got.matrix.rows[1][13], 63.0);
}

#[test]
fn ingest_drops_incomplete_day() {
    let tmp = TempDir::new().unwrap();
    let path = tmp.path().join("da.csv");
    fs::write(&path, da_csv(3, Some((1, 13)))).unwrap();
    let got = ingest_csv(&path, Market::DayAhead).unwrap();
    assert_eq!(got.matrix.num_rows(), 2);
    assert_eq!(got.dropped_days, 1);
}

#[test]
fn ingest_reports_line_of_bad_price() {
    let tmp = TempDir::new().unwrap();
    let path = tmp.path().join("da.csv");
    let text = da_csv(1, None).replacen("2024-03-01T05:00:00,55", "2024-03-01T05:00:00,abc", 1);
    fs::write(&path, text).unwrap();
    match ingest_csv(&path, Market::DayAhead) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 7),
        other => panic!("expected parse error, got {other:?}"),
    }
}

#[test]
fn ingest_empty_file_is_empty_input() {
    let tmp = TempDir::new().unwrap();
    let path = tmp.path().join("da.csv");
    fs::write(&path, "timestamp,price_eur_per_mwh\n").unwrap();
    assert!(matches!(
        ingest_csv(&path, Market::DayAhead),
        Err(Error::EmptyInput(_))
    ));
}

#[test]
fn ingest_quarter_hour_market() {
    let tmp = TempDir::new().unwrap();
    let path = tmp.path().join("id.csv");
    let mut s = String::from("timestamp,price_eur_per_mwh\n");
    for q in 0..96 {
        writeln!(s, "2024-03-01T{:02}:{:02}:00,{}", q / 4, (q % 4) * 15, q).unwrap();
    }
    fs::write(&path, s).unwrap();
    let got = ingest_csv(&path, Market::Intraday).unwrap();
    assert_eq!(got.matrix.num_cols(), 96);
    assert_eq!(got.matrix.rows[0][95], 95.0);
}

#[test]
fn zscore_constant_matrix_is_unchanged() {
    let m = matrix(vec![vec![42.0]; 4]);
    assert_eq!(zscore_filter(&m, 3.0, ZScope::Global).unwrap(), m);
}

#[test]
fn zscore_removes_outlier_row() {
    let rows = vec![vec![10.0, 12.0], vec![11.0, 13.0], vec![50.0, 52.0]];
    // Independent hand computation of the population z-scores.
    let all: Vec<f64> = rows.iter().flatten().copied().collect();
    let mu = all.iter().sum::<f64>() / 6.0;
    let sigma = (all.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / 6.0).sqrt();
    assert!(((50.0 - mu) / sigma).abs() > 1.2);
    assert!(((13.0 - mu) / sigma).abs() <= 1.2);

    let m = matrix(rows);
    let out = zscore_filter(&m, 1.2, ZScope::Global).unwrap();
    assert_eq!(out.rows, m.rows[..2].to_vec());
}

#[test]
fn zscore_rejects_nonpositive_threshold() {
    let m = matrix(vec![vec![1.0, 2.0]]);
    assert!(zscore_filter(&m, 0.0, ZScope::Global).is_err());
}

#[test]
fn trim_band_on_one_to_hundred() {
    let rows: Vec<Vec<f64>> = (1..=100).map(|v| vec![v as f64]).collect();
    let out = trim_confidence(&matrix(rows), 0.5).unwrap();
    let col = out.column(0);
    let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // Quantile at p: 1 + 99p.
    assert!((lo - 25.75).abs() < 1e-12);
    assert!((hi - 75.25).abs() < 1e-12);
}

#[test]
fn trim_tiny_epsilon_keeps_matrix() {
    let rows: Vec<Vec<f64>> = (0..10).map(|v| vec![v as f64, (v * v) as f64]).collect();
    let m = matrix(rows);
    let out = trim_confidence(&m, 1e-12).unwrap();
    for (a, b) in out.rows.iter().flatten().zip(m.rows.iter().flatten()) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn trim_needs_two_rows() {
    let m = matrix(vec![vec![1.0]]);
    assert!(matches!(
        trim_confidence(&m, 0.2),
        Err(Error::InsufficientData(_))
    ));
}

#[test]
fn trim_uniform_keeps_central_share_of_distinct_values() {
    let rows: Vec<Vec<f64>> = (0..1000).map(|v| vec![v as f64 / 10.0]).collect();
    let out = trim_confidence(&matrix(rows), 0.4).unwrap();
    let mut distinct = out.column(0);
    distinct.dedup();
    let share = distinct.len() as f64 / 1000.0;
    assert!((share - 0.6).abs() < 0.01, "share {share}");
}

#[test]
fn quantile_endpoints() {
    let v = [1.0, 2.0, 4.0];
    assert_eq!(quantile_sorted(&v, 0.0), 1.0);
    assert_eq!(quantile_sorted(&v, 1.0), 4.0);
    assert_eq!(quantile_sorted(&v, 0.75), 3.0);
}

fn rows_strategy() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (2usize..12, prop::sample::select(vec![1usize, 2, 3, 4, 6]))
        .prop_flat_map(|(n, w)| prop::collection::vec(prop::collection::vec(-50.0f64..300.0, w), n))
}

proptest! {
    #[test]
    fn zscore_keeps_only_rows_inside_threshold(rows in rows_strategy(), th in 0.5f64..3.0) {
        let m = matrix(rows);
        let out = zscore_filter(&m, th, ZScope::Global).unwrap();
        let all: Vec<f64> = m.rows.iter().flatten().copied().collect();
        let n = all.len() as f64;
        let mu = all.iter().sum::<f64>() / n;
        let sigma = (all.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / n).sqrt();
        prop_assert_eq!(out.num_cols(), m.num_cols());
        for row in &m.rows {
            let inside = row.iter().all(|x| sigma == 0.0 || ((x - mu) / sigma).abs() <= th);
            prop_assert_eq!(inside, out.rows.contains(row));
        }
    }

    #[test]
    fn trim_bands_are_nested(rows in rows_strategy(), e1 in 0.01f64..0.5, d in 0.01f64..0.45) {
        let m = matrix(rows);
        let e2 = e1 + d;
        let a = trim_confidence(&m, e1).unwrap();
        let b = trim_confidence(&m, e2).unwrap();
        for j in 0..m.num_cols() {
            let (a_lo, a_hi) = span(&a.column(j));
            let (b_lo, b_hi) = span(&b.column(j));
            prop_assert!(b_lo >= a_lo - 1e-12 && b_hi <= a_hi + 1e-12);
        }
    }
}

fn span(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        })
}
