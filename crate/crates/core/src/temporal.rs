//! One-hot month / weekday / hour encodings and the hourly weather join.
//!
//! Time block layout: 12 month columns, 7 weekday columns (Monday = 0),
//! 24 hour columns.

use std::collections::{BTreeSet, HashMap};

use chrono::{Datelike, NaiveDateTime, Timelike};

use crate::dataset::{BlockKind, Dataset, FeatureBlock};
use crate::error::{Error, Result};
use crate::ingest::{truncate_to_hour, WeatherTable};
use crate::matrix::Matrix;

pub const TIME_WIDTH: usize = 12 + 7 + 24;

/// Column offsets of the one-hot bits set for `t`: (month, weekday, hour).
pub fn time_bits(t: &NaiveDateTime) -> [usize; 3] {
    let month = t.month0() as usize;
    let weekday = t.weekday().num_days_from_monday() as usize;
    let hour = t.hour() as usize;
    [month, 12 + weekday, 19 + hour]
}

pub fn time_columns() -> Vec<String> {
    const MONTHS: [&str; 12] = [
        "jan", "feb", "mar", "apr", "may", "jun", "jul", "aug", "sep", "oct", "nov", "dec",
    ];
    const DAYS: [&str; 7] = ["mon", "tue", "wed", "thu", "fri", "sat", "sun"];
    MONTHS
        .iter()
        .map(|m| format!("month_{m}"))
        .chain(DAYS.iter().map(|d| format!("weekday_{d}")))
        .chain((0..24).map(|h| format!("hour_{h:02}")))
        .collect()
}

pub fn time_block(name: &str, dataset: &Dataset) -> Result<FeatureBlock> {
    let mut m = Matrix::zeros(dataset.len(), TIME_WIDTH);
    for (i, r) in dataset.reports().iter().enumerate() {
        for j in time_bits(&r.timestamp) {
            m.set(i, j, 1.0);
        }
    }
    FeatureBlock::new(name, BlockKind::Raw, dataset.ids(), m, time_columns())
}

/// Joins each report to the weather row of its hour. Missing hours are an
/// error listing every missing hour; nothing is interpolated.
pub fn weather_block(name: &str, dataset: &Dataset, weather: &WeatherTable) -> Result<FeatureBlock> {
    let by_hour: HashMap<NaiveDateTime, usize> = weather
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| (r.timestamp, i))
        .collect();
    let width = weather.column_names.len();
    let mut m = Matrix::zeros(dataset.len(), width);
    let mut missing = BTreeSet::new();
    for (i, r) in dataset.reports().iter().enumerate() {
        let hour = truncate_to_hour(&r.timestamp);
        match by_hour.get(&hour) {
            Some(&k) => m.row_mut(i).copy_from_slice(&weather.rows[k].values),
            None => {
                missing.insert(hour);
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingWeather(
            missing
                .iter()
                .map(|h| h.format("%Y-%m-%d %H:00").to_string())
                .collect(),
        ));
    }
    let cols = weather
        .column_names
        .iter()
        .map(|c| format!("weather_{c}"))
        .collect();
    FeatureBlock::new(name, BlockKind::Raw, dataset.ids(), m, cols)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::tests::{report, taxonomy};
    use crate::ingest::{parse_datetime, WeatherRow};

    #[test]
    fn christmas_morning_bits() {
        let t = parse_datetime("2018-12-25T09:05:00").unwrap();
        let cols = time_columns();
        let bits = time_bits(&t);
        assert_eq!(cols[bits[0]], "month_dec");
        assert_eq!(cols[bits[1]], "weekday_tue");
        assert_eq!(cols[bits[2]], "hour_09");
    }

    #[test]
    fn rows_sum_to_three() {
        let mut a = report("a", "c0");
        a.timestamp = parse_datetime("2018-03-04T23:59:59").unwrap();
        let b = report("b", "c0");
        let mut c = report("c", "c0");
        c.timestamp = parse_datetime("2018-05-01T12:30:00").unwrap();
        let ds = Dataset::new(vec![a, b, c], taxonomy(1));
        let block = time_block("time", &ds).unwrap();
        for row in block.matrix().iter_rows() {
            assert_eq!(row.iter().sum::<f64>(), 3.0);
        }
        assert_eq!(block.matrix().row(1), block.matrix().row(2));
    }

    fn table(hours: &[&str]) -> WeatherTable {
        WeatherTable {
            column_names: vec!["temp".into(), "rain".into()],
            rows: hours
                .iter()
                .enumerate()
                .map(|(i, h)| WeatherRow {
                    timestamp: parse_datetime(h).unwrap(),
                    values: vec![i as f64 + 0.5, 0.1],
                })
                .collect(),
        }
    }

    #[test]
    fn weather_join_truncates_to_hour() {
        let mut r = report("a", "c0");
        r.timestamp = parse_datetime("2018-05-01T15:30:00").unwrap();
        let ds = Dataset::new(vec![r], taxonomy(1));
        let w = table(&["2018-05-01T14:00:00", "2018-05-01T15:00:00"]);
        let b = weather_block("weather", &ds, &w).unwrap();
        assert_eq!(b.matrix().row(0), &[1.5, 0.1]);
    }

    #[test]
    fn missing_hour_is_named() {
        let mut r = report("a", "c0");
        r.timestamp = parse_datetime("2018-05-01T15:30:00").unwrap();
        let ds = Dataset::new(vec![r], taxonomy(1));
        let w = table(&["2018-05-01T14:00:00"]);
        let err = weather_block("weather", &ds, &w).unwrap_err().to_string();
        assert!(err.contains("15:00"), "{err}");
    }
}
