//! Weekly sales data, accuracy metrics and the forecast comparison table.
//!
//! The comparison follows the "MAPE of category means" convention: for each
//! category the mean forecast (retailer or network) is compared with the mean
//! actual sales, `100 * |f - x| / x`.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::io::{Read, Write};
use std::path::Path;

use chrono::{Days, NaiveDate};
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::{remove_outliers, DistError, DistTerm};
use crate::inference::{
    analytic_mean, analytic_state_mean, driver_node, equation_mean_ci, forward_sample, Evidence,
    InferenceError, MeanCi,
};
use crate::network::Network;

/// Category sizes of the retained observations: no promotion, in-store,
/// catalogue.
pub const SYNTHETIC_COUNTS: [usize; 3] = [39, 7, 41];

/// Target `(mean, sd)` of actual and forecast sales per category.
pub const TARGET_MOMENTS: [(PromoType, Moments, Moments); 3] = [
    (
        PromoType::None,
        Moments {
            mean: 15.92,
            sd: 4.4,
        },
        Moments {
            mean: 15.92,
            sd: 4.84,
        },
    ),
    (
        PromoType::InStore,
        Moments {
            mean: 90.54,
            sd: 52.54,
        },
        Moments {
            mean: 100.7,
            sd: 59.16,
        },
    ),
    (
        PromoType::Catalogue,
        Moments {
            mean: 312.89,
            sd: 88.0,
        },
        Moments {
            mean: 326.98,
            sd: 105.09,
        },
    ),
];

pub const SYNTHETIC_START: (i32, u32, u32) = (2016, 12, 26);
const REGULAR_PRICE: f64 = 10.0;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("row {row}: {message}")]
    Row { row: usize, message: String },
    #[error("csv error: {0}")]
    Csv(String),
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("MAPE undefined for non-positive actual {0}")]
    UndefinedMape(f64),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromoType {
    None,
    InStore,
    Catalogue,
}

impl PromoType {
    pub const ALL: [PromoType; 3] = [PromoType::None, PromoType::InStore, PromoType::Catalogue];

    /// Matching state of the network's promotions node.
    pub fn driver_state(self) -> &'static str {
        match self {
            PromoType::None => "NoPromotion",
            PromoType::InStore => "InStore",
            PromoType::Catalogue => "Catalogue",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            PromoType::None => "No promotion",
            PromoType::InStore => "In-store promotion",
            PromoType::Catalogue => "Catalogue promotion",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Location {
    Gondola,
    Fixture,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub sd: f64,
}

/// One week of sales with the retailer's forecast and promotion details.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeeklyRecord {
    pub week_start: NaiveDate,
    pub actual_units: f64,
    pub retailer_forecast_units: f64,
    pub promo_type: PromoType,
    pub price: f64,
    pub location: Location,
}

impl WeeklyRecord {
    pub fn check(&self) -> std::result::Result<(), String> {
        let expected = match self.promo_type {
            PromoType::Catalogue => Location::Fixture,
            _ => Location::Gondola,
        };
        if self.location != expected {
            return Err(format!(
                "promo_type {:?} requires location {:?}, found {:?}",
                self.promo_type, expected, self.location
            ));
        }
        for (field, v) in [
            ("actual_units", self.actual_units),
            ("retailer_forecast_units", self.retailer_forecast_units),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(format!("{field} must be a non-negative number, found {v}"));
            }
        }
        Ok(())
    }
}

/// Reads weekly records; rows are numbered from 1 (the first data row).
pub fn read_sales_csv<R: Read>(reader: R) -> Result<Vec<WeeklyRecord>> {
    let mut csv = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = csv
        .headers()
        .map_err(|e| EvalError::Csv(e.to_string()))?
        .clone();
    let expected = [
        "week_start",
        "actual_units",
        "retailer_forecast_units",
        "promo_type",
        "price",
        "location",
    ];
    if header.iter().ne(expected.iter().copied()) {
        return Err(EvalError::Csv(format!(
            "header must be `{}`, found `{}`",
            expected.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut records = Vec::new();
    for (i, row) in csv.deserialize::<WeeklyRecord>().enumerate() {
        let row_no = i + 1;
        let record = row.map_err(|e| EvalError::Row {
            row: row_no,
            message: e.to_string(),
        })?;
        record.check().map_err(|message| EvalError::Row {
            row: row_no,
            message,
        })?;
        records.push(record);
    }
    records.sort_by_key(|r| r.week_start);
    Ok(records)
}

pub fn load_sales_csv(path: impl AsRef<Path>) -> Result<Vec<WeeklyRecord>> {
    read_sales_csv(std::fs::File::open(path)?)
}

pub fn write_sales_csv<W: Write>(writer: W, records: &[WeeklyRecord]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    for r in records {
        csv.serialize(r)
            .map_err(|e| EvalError::Csv(e.to_string()))?;
    }
    csv.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Series {
    Actual,
    Forecast,
}

/// Per-category values of one series with Tukey outliers removed per
/// category. Categories with fewer than four values are kept as they are.
pub fn split_categories(
    records: &[WeeklyRecord],
    series: Series,
) -> Result<BTreeMap<PromoType, Vec<f64>>> {
    if records.is_empty() {
        return Err(EvalError::InsufficientData("no records".into()));
    }
    let mut out = BTreeMap::new();
    for promo in PromoType::ALL {
        let values: Vec<f64> = records
            .iter()
            .filter(|r| r.promo_type == promo)
            .map(|r| match series {
                Series::Actual => r.actual_units,
                Series::Forecast => r.retailer_forecast_units,
            })
            .collect();
        let cleaned = if values.len() >= 4 {
            remove_outliers(&values)?
        } else {
            values
        };
        out.insert(promo, cleaned);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryStats {
    pub category: String,
    pub count: usize,
    pub mean: f64,
    pub sd: f64,
}

impl fmt::Display for CategoryStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: {} (N ({:.2}, {:.2}))",
            self.category, self.count, self.mean, self.sd
        )
    }
}

/// Count, mean and n-1 standard deviation.
pub fn category_stats(category: &str, values: &[f64]) -> Result<CategoryStats> {
    if values.len() < 2 {
        return Err(EvalError::InsufficientData(format!(
            "{category}: need at least 2 values, got {}",
            values.len()
        )));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    Ok(CategoryStats {
        category: category.to_owned(),
        count: values.len(),
        mean,
        sd,
    })
}

/// Absolute percentage error `100 * |f - x| / x`.
pub fn mape(forecast: f64, actual: f64) -> Result<f64> {
    if !(actual > 0.0) {
        return Err(EvalError::UndefinedMape(actual));
    }
    Ok(100.0 * (forecast - actual).abs() / actual)
}

// ---------------------------------------------------------------------------
// Synthetic data

/// Log-space parameters of a lognormal with the given mean and sd.
fn lognormal_for(m: Moments) -> DistTerm {
    let s2 = (1.0 + (m.sd / m.mean).powi(2)).ln();
    DistTerm::lognormal(m.mean.ln() - s2 / 2.0, s2.sqrt()).expect("positive moments")
}

/// Draws `n` values and rescales them affinely so their mean and sd are
/// exactly `target`. Redraws until the result is non-negative and free of
/// Tukey outliers.
fn matched_series(rng: &mut ChaCha8Rng, shape: &DistTerm, n: usize, target: Moments) -> Vec<f64> {
    loop {
        let raw: Vec<f64> = (0..n).map(|_| shape.sample(rng)).collect();
        let mean = raw.iter().sum::<f64>() / n as f64;
        let sd = (raw.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        if !(sd > 0.0) {
            continue;
        }
        let adjusted: Vec<f64> = raw
            .iter()
            .map(|v| target.mean + target.sd * (v - mean) / sd)
            .collect();
        if adjusted.iter().any(|&v| v < 0.0) {
            continue;
        }
        if n >= 4 && remove_outliers(&adjusted).map_or(true, |kept| kept.len() != n) {
            continue;
        }
        return adjusted;
    }
}

/// 87 weekly records whose per-category moments match the retailer's
/// summary statistics exactly. Different seeds change the raw values but
/// not the realised moments.
pub fn generate_synthetic(seed: u64) -> Vec<WeeklyRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut slots: Vec<PromoType> = PromoType::ALL
        .iter()
        .zip(SYNTHETIC_COUNTS)
        .flat_map(|(&p, n)| std::iter::repeat_n(p, n))
        .collect();
    slots.shuffle(&mut rng);

    let mut values: BTreeMap<PromoType, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for ((promo, actual, forecast), n) in TARGET_MOMENTS.iter().zip(SYNTHETIC_COUNTS) {
        let shape = |m: Moments| match promo {
            PromoType::None => DistTerm::triangular(9.6, 12.0, 24.0).expect("valid triangular"),
            _ => lognormal_for(m),
        };
        let a = matched_series(&mut rng, &shape(*actual), n, *actual);
        let f = matched_series(&mut rng, &shape(*forecast), n, *forecast);
        values.insert(*promo, (a, f));
    }

    let (y, m, d) = SYNTHETIC_START;
    let start = NaiveDate::from_ymd_opt(y, m, d).expect("valid start date");
    let mut cursor: BTreeMap<PromoType, usize> = BTreeMap::new();
    slots
        .into_iter()
        .enumerate()
        .map(|(week, promo)| {
            let k = cursor.entry(promo).or_insert(0);
            let (actual, forecast) = &values[&promo];
            let record = WeeklyRecord {
                week_start: start + Days::new(7 * week as u64),
                actual_units: actual[*k],
                retailer_forecast_units: forecast[*k],
                promo_type: promo,
                price: match promo {
                    PromoType::None => REGULAR_PRICE,
                    _ => {
                        let discount = 0.31 + 0.19 * rand::Rng::random::<f64>(&mut rng);
                        (REGULAR_PRICE * (1.0 - discount) * 100.0).round() / 100.0
                    }
                },
                location: match promo {
                    PromoType::Catalogue => Location::Fixture,
                    _ => Location::Gondola,
                },
            };
            *k += 1;
            record
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Comparison table

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table3Row {
    /// `overall`, `none`, `instore` or `catalogue`.
    pub period: String,
    pub label: String,
    /// Observed state of the promotions node, if any.
    pub evidence: Option<String>,
    pub count: usize,
    pub actual_mean: f64,
    pub retailer_forecast_mean: f64,
    pub retailer_mape: f64,
    pub bn_mean: f64,
    pub bn_ci_lower: f64,
    pub bn_ci_upper: f64,
    pub bn_mape: f64,
    pub bn_analytic_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table3Report {
    pub iterations: usize,
    pub seed: u64,
    pub rows: Vec<Table3Row>,
}

impl Table3Report {
    /// Machine-readable form written to `table3.json`.
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn row(&self, period: &str) -> Option<&Table3Row> {
        self.rows.iter().find(|r| r.period == period)
    }

    /// Aligned text table.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<22} {:>5} {:>10} {:>10} {:>9} {:>10} {:>8} {:>22}",
            "Sales period",
            "N",
            "actual",
            "retailer",
            "ret.MAPE",
            "BN mean",
            "BN MAPE",
            "BN 95% CI"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<22} {:>5} {:>10.2} {:>10.2} {:>8.2}% {:>10.2} {:>7.2}% {:>22}",
                r.label,
                r.count,
                r.actual_mean,
                r.retailer_forecast_mean,
                r.retailer_mape,
                r.bn_mean,
                r.bn_mape,
                format!("({:.2}, {:.2})", r.bn_ci_lower, r.bn_ci_upper)
            );
        }
        let _ = writeln!(
            out,
            "BN means from {} forward-sampling iterations (seed {}); the overall row is a single unclamped run.",
            self.iterations, self.seed
        );
        out
    }
}

fn period_key(promo: PromoType) -> &'static str {
    match promo {
        PromoType::None => "none",
        PromoType::InStore => "instore",
        PromoType::Catalogue => "catalogue",
    }
}

/// Compares retailer forecasts and network forecasts against actual sales,
/// overall and per promotion category present in the data.
pub fn table3_report(
    records: &[WeeklyRecord],
    net: &Network,
    n: usize,
    seed: u64,
) -> Result<Table3Report> {
    let actual = split_categories(records, Series::Actual)?;
    let forecast = split_categories(records, Series::Forecast)?;
    let driver = driver_node(net)?.id.clone();

    let row = |period: &str,
               label: &str,
               evidence: Option<&str>,
               actual: &[f64],
               forecast: &[f64]|
     -> Result<Table3Row> {
        let stats = category_stats(label, actual)?;
        let forecast_stats = category_stats(label, forecast)?;
        let ev = evidence.map_or_else(Evidence::none, |s| Evidence::state(driver.clone(), s));
        let run = forward_sample(net, n, seed, &ev)?;
        let ci: MeanCi = equation_mean_ci(&run)?;
        let analytic = match evidence {
            Some(state) => analytic_state_mean(net, state)?,
            None => analytic_mean(net)?,
        };
        Ok(Table3Row {
            period: period.to_owned(),
            label: label.to_owned(),
            evidence: evidence.map(str::to_owned),
            count: stats.count,
            actual_mean: stats.mean,
            retailer_forecast_mean: forecast_stats.mean,
            retailer_mape: mape(forecast_stats.mean, stats.mean)?,
            bn_mean: ci.mean,
            bn_ci_lower: ci.lower,
            bn_ci_upper: ci.upper,
            bn_mape: mape(ci.mean, stats.mean)?,
            bn_analytic_mean: analytic,
        })
    };

    let all_actual: Vec<f64> = actual.values().flatten().copied().collect();
    let all_forecast: Vec<f64> = forecast.values().flatten().copied().collect();
    let mut rows = vec![row("overall", "Overall", None, &all_actual, &all_forecast)?];
    for promo in PromoType::ALL {
        if actual[&promo].is_empty() {
            continue;
        }
        rows.push(row(
            period_key(promo),
            promo.label(),
            Some(promo.driver_state()),
            &actual[&promo],
            &forecast[&promo],
        )?);
    }
    Ok(Table3Report {
        iterations: n,
        seed,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(promo: PromoType, actual: f64) -> WeeklyRecord {
        WeeklyRecord {
            week_start: NaiveDate::from_ymd_opt(2017, 1, 2).unwrap(),
            actual_units: actual,
            retailer_forecast_units: actual,
            promo_type: promo,
            price: 10.0,
            location: if promo == PromoType::Catalogue {
                Location::Fixture
            } else {
                Location::Gondola
            },
        }
    }

    #[test]
    fn mape_examples() {
        assert!((mape(326.49, 312.89).unwrap() - 4.3466).abs() < 1e-3);
        assert_eq!(mape(100.0, 100.0).unwrap(), 0.0);
        assert!((mape(15.20, 15.92).unwrap() - 4.5226).abs() < 1e-3);
        assert!(matches!(mape(1.0, 0.0), Err(EvalError::UndefinedMape(_))));
        assert!(mape(1.0, -3.0).is_err());
    }

    #[test]
    fn stats_examples() {
        let s = category_stats("x", &[5.0, 5.0]).unwrap();
        assert_eq!((s.mean, s.sd), (5.0, 0.0));
        let s = category_stats("x", &[1.0, 3.0]).unwrap();
        assert_eq!(s.mean, 2.0);
        assert!((s.sd - 2f64.sqrt()).abs() < 1e-12);
        assert!(category_stats("x", &[1.0]).is_err());
    }

    #[test]
    fn split_removes_outliers_per_category() {
        let mut records: Vec<WeeklyRecord> = [1.0, 2.0, 3.0, 4.0, 100.0]
            .iter()
            .map(|&v| record(PromoType::InStore, v))
            .collect();
        records.push(record(PromoType::None, 10.0));
        let split = split_categories(&records, Series::Actual).unwrap();
        assert_eq!(split[&PromoType::InStore], [1.0, 2.0, 3.0, 4.0]);
        assert_eq!(split[&PromoType::None], [10.0]);
        assert!(split[&PromoType::Catalogue].is_empty());
        assert!(split_categories(&[], Series::Actual).is_err());
    }

    #[test]
    fn record_invariants() {
        let mut r = record(PromoType::Catalogue, 5.0);
        assert!(r.check().is_ok());
        r.location = Location::Gondola;
        assert!(r.check().is_err());
        let mut r = record(PromoType::None, 5.0);
        r.actual_units = -1.0;
        assert!(r.check().is_err());
    }

    #[test]
    fn csv_errors_name_the_row() {
        let header = "week_start,actual_units,retailer_forecast_units,promo_type,price,location\n";
        assert!(read_sales_csv(header.as_bytes()).unwrap().is_empty());
        let bad = format!(
            "{header}2017-01-02,10,11,none,10,gondola\n2017-01-09,300,310,catalogue,6,gondola\n"
        );
        let err = read_sales_csv(bad.as_bytes()).unwrap_err();
        assert!(matches!(err, EvalError::Row { row: 2, .. }), "{err}");
        let malformed = format!("{header}2017-01-02,ten,11,none,10,gondola\n");
        assert!(matches!(
            read_sales_csv(malformed.as_bytes()).unwrap_err(),
            EvalError::Row { row: 1, .. }
        ));
        assert!(matches!(
            read_sales_csv("a,b\n".as_bytes()),
            Err(EvalError::Csv(_))
        ));
    }

    #[test]
    fn synthetic_data_matches_targets() {
        let records = generate_synthetic(42);
        assert_eq!(records.len(), 87);
        assert!(records.iter().all(|r| r.check().is_ok()));
        assert_eq!(
            records[0].week_start,
            NaiveDate::from_ymd_opt(2016, 12, 26).unwrap()
        );
        for (promo, actual, forecast) in TARGET_MOMENTS {
            let a: Vec<f64> = records
                .iter()
                .filter(|r| r.promo_type == promo)
                .map(|r| r.actual_units)
                .collect();
            let f: Vec<f64> = records
                .iter()
                .filter(|r| r.promo_type == promo)
                .map(|r| r.retailer_forecast_units)
                .collect();
            let sa = category_stats("a", &a).unwrap();
            let sf = category_stats("f", &f).unwrap();
            assert!((sa.mean - actual.mean).abs() < 1e-9 && (sa.sd - actual.sd).abs() < 1e-9);
            assert!((sf.mean - forecast.mean).abs() < 1e-9 && (sf.sd - forecast.sd).abs() < 1e-9);
        }
        let other = generate_synthetic(7);
        assert_ne!(records, other);
    }
}
