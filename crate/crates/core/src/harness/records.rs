use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;

use super::{ForecastRecord, ModelFamily, Segment};
use crate::data::{format_value, DATE_FORMAT};
use crate::error::{Error, Result};

pub const FORECAST_HEADER: [&str; 6] = ["model", "window", "date", "pv", "rv", "segment"];

pub fn write_forecasts<W: Write>(records: &[ForecastRecord], writer: W) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(FORECAST_HEADER)?;
    for r in records {
        csv.write_record([
            r.model.as_str().to_string(),
            r.window.to_string(),
            r.date.format(DATE_FORMAT).to_string(),
            format_value(r.pv),
            format_value(r.rv),
            r.segment.as_str().to_string(),
        ])?;
    }
    csv.flush()?;
    Ok(())
}

pub fn save_forecasts(records: &[ForecastRecord], path: impl AsRef<Path>) -> Result<()> {
    write_forecasts(records, File::create(path)?)
}

pub fn load_forecasts(path: impl AsRef<Path>) -> Result<Vec<ForecastRecord>> {
    let path = path.as_ref();
    let file = File::open(path)
        .map_err(|e| Error::Schema(format!("cannot open {}: {e}", path.display())))?;
    read_forecasts(file)
}

pub fn read_forecasts<R: Read>(reader: R) -> Result<Vec<ForecastRecord>> {
    let mut csv = csv::Reader::from_reader(reader);
    let header: Vec<String> = csv
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if header != FORECAST_HEADER {
        return Err(Error::Schema(format!(
            "forecast file header is `{}`, expected `{}`",
            header.join(","),
            FORECAST_HEADER.join(",")
        )));
    }
    let mut out = Vec::new();
    for (i, row) in csv.records().enumerate() {
        let row = row?;
        let line = i + 2;
        let parse_err = |column: &str, message: String| Error::Parse {
            row: line,
            column: column.to_string(),
            message,
        };
        let num = |j: usize| -> Result<f64> {
            row[j]
                .trim()
                .parse::<f64>()
                .map_err(|e| parse_err(FORECAST_HEADER[j], e.to_string()))
        };
        out.push(ForecastRecord {
            model: row[0]
                .parse::<ModelFamily>()
                .map_err(|e| parse_err("model", e.to_string()))?,
            window: row[1]
                .trim()
                .parse()
                .map_err(|e: std::num::ParseIntError| parse_err("window", e.to_string()))?,
            date: NaiveDate::parse_from_str(row[2].trim(), DATE_FORMAT)
                .map_err(|e| parse_err("date", e.to_string()))?,
            pv: num(3)?,
            rv: num(4)?,
            segment: row[5]
                .parse::<Segment>()
                .map_err(|e| parse_err("segment", e.to_string()))?,
        });
    }
    Ok(out)
}
