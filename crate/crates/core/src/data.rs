//! Daily market panel: loading, validation, gap filling and series transforms.
//!
//! Panels are read from a plain CSV dialect (`date,<code>,<code>,...`, ISO
//! dates, `.` decimals). Missing cells are either empty or the literal `NA`
//! and are held as `NaN` until [`fill_missing`] replaces them.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;

use crate::error::{Error, Result};

pub const DATE_FORMAT: &str = "%Y-%m-%d";

macro_rules! variable_codes {
    ($($name:ident => $text:literal, $desc:literal;)*) => {
        /// Closed set of panel variables. `Gshea` is derived, the rest are raw inputs.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub enum VariableCode {
            $($name,)*
        }

        impl VariableCode {
            pub const ALL: &'static [VariableCode] = &[$(VariableCode::$name,)*];

            pub fn as_str(self) -> &'static str {
                match self {
                    $(VariableCode::$name => $text,)*
                }
            }

            pub fn description(self) -> &'static str {
                match self {
                    $(VariableCode::$name => $desc,)*
                }
            }
        }

        impl FromStr for VariableCode {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s.trim() {
                    $($text => Ok(VariableCode::$name),)*
                    other => Err(Error::Schema(format!("unknown variable code `{other}`"))),
                }
            }
        }
    };
}

variable_codes! {
    Shea => "SHEA", "Shanghai carbon emission quota closing price (yuan/ton)";
    Sza => "SZA", "Shenzhen carbon emission quota closing price (yuan/ton)";
    Gdea => "GDEA", "Guangdong carbon emission quota closing price (yuan/ton)";
    Hs300 => "HS300", "Shanghai and Shenzhen 300 index";
    Bp500 => "BP500", "Standard & Poor 500 index";
    Oy => "OY", "Central parity rate of euro against yuan";
    My => "MY", "Central parity rate of dollar against yuan";
    Cci500 => "CCI500", "Thermal coal price index (yuan/ton)";
    Yhq => "YHQ", "Shanghai market price of imported LPG (yuan/ton)";
    Qy => "QY", "Domestic spot price of gasoline (yuan/ton)";
    Fob => "FOB", "UK Brent crude oil price (USD/bbl)";
    Wired => "WIRED", "Wilder global new energy index";
    Trqqh => "TRQQH", "Natural gas futures";
    Tpfqh => "TPFQH", "Carbon futures";
    Cer => "CER", "CER continuous futures price (EUR/ton)";
    Eua => "EUA", "EUA continuous futures price (EUR/ton)";
    Szny => "SZNY", "Shanghai energy sector index";
    Szgy => "SZGY", "Shanghai industrial index";
    Szzr => "SZZR", "Shanghai natural resources index";
    Cky => "CKY", "Domestic mining index";
    Sszny => "SSZNY", "Shenzhen energy index";
    Zzy => "ZZY", "Domestic manufacturing index";
    Pm => "PM", "Daily mean PM2.5";
    Gshea => "GSHEA", "Rolling GARCH one-step SHEA price forecast (derived)";
}

impl VariableCode {
    /// The 23 raw input variables, in table order.
    pub fn raw() -> &'static [VariableCode] {
        &Self::ALL[..23]
    }

    pub fn is_derived(self) -> bool {
        self == VariableCode::Gshea
    }
}

impl fmt::Display for VariableCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Date-indexed matrix of variables. Missing cells are `NaN`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationPanel {
    dates: Vec<NaiveDate>,
    columns: BTreeMap<VariableCode, Vec<f64>>,
}

impl ObservationPanel {
    pub fn new(dates: Vec<NaiveDate>, columns: BTreeMap<VariableCode, Vec<f64>>) -> Result<Self> {
        check_dates(&dates)?;
        for (code, values) in &columns {
            if values.len() != dates.len() {
                return Err(Error::Shape(format!(
                    "column {code} has {} values for {} dates",
                    values.len(),
                    dates.len()
                )));
            }
        }
        Ok(Self { dates, columns })
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn codes(&self) -> impl Iterator<Item = VariableCode> + '_ {
        self.columns.keys().copied()
    }

    pub fn contains(&self, code: VariableCode) -> bool {
        self.columns.contains_key(&code)
    }

    pub fn column(&self, code: VariableCode) -> Result<&[f64]> {
        self.columns
            .get(&code)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Schema(format!("panel has no column {code}")))
    }

    pub fn column_mut(&mut self, code: VariableCode) -> Result<&mut Vec<f64>> {
        self.columns
            .get_mut(&code)
            .ok_or_else(|| Error::Schema(format!("panel has no column {code}")))
    }

    pub fn insert_column(&mut self, code: VariableCode, values: Vec<f64>) -> Result<()> {
        if values.len() != self.len() {
            return Err(Error::Shape(format!(
                "column {code} has {} values for {} dates",
                values.len(),
                self.len()
            )));
        }
        self.columns.insert(code, values);
        Ok(())
    }

    pub fn remove_column(&mut self, code: VariableCode) -> Option<Vec<f64>> {
        self.columns.remove(&code)
    }

    /// Rows `start..end` as a new panel.
    pub fn slice_rows(&self, start: usize, end: usize) -> ObservationPanel {
        ObservationPanel {
            dates: self.dates[start..end].to_vec(),
            columns: self
                .columns
                .iter()
                .map(|(code, values)| (*code, values[start..end].to_vec()))
                .collect(),
        }
    }

    pub fn missing_count(&self) -> usize {
        self.columns
            .values()
            .map(|v| v.iter().filter(|x| x.is_nan()).count())
            .sum()
    }

    pub fn ensure_clean(&self) -> Result<()> {
        for (code, values) in &self.columns {
            if let Some(i) = values.iter().position(|x| !x.is_finite()) {
                return Err(Error::DataGap(format!(
                    "column {code} is missing a value on {}",
                    self.dates[i]
                )));
            }
        }
        Ok(())
    }

    pub fn row_of(&self, date: NaiveDate) -> Option<usize> {
        self.dates.binary_search(&date).ok()
    }
}

fn check_dates(dates: &[NaiveDate]) -> Result<()> {
    for pair in dates.windows(2) {
        if pair[1] == pair[0] {
            return Err(Error::Ordering(format!("duplicate date {}", pair[1])));
        }
        if pair[1] < pair[0] {
            return Err(Error::Ordering(format!(
                "date {} follows {} (dates must be increasing)",
                pair[1], pair[0]
            )));
        }
    }
    Ok(())
}

fn is_missing_marker(cell: &str) -> bool {
    let cell = cell.trim();
    cell.is_empty() || cell == "NA"
}

pub fn load_panel(path: impl AsRef<Path>, schema: &[VariableCode]) -> Result<ObservationPanel> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })?;
    read_panel(file, schema)
}

/// Parse a panel whose columns must be exactly `schema` (in any order).
pub fn read_panel<R: Read>(reader: R, schema: &[VariableCode]) -> Result<ObservationPanel> {
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let header = csv.headers()?.clone();
    let mut fields = header.iter();
    match fields.next().map(str::trim) {
        Some("date") => {}
        Some(other) => {
            return Err(Error::Schema(format!(
                "first column must be `date`, found `{other}`"
            )))
        }
        None => return Err(Error::Schema("empty header row".into())),
    }
    let mut order = Vec::new();
    for name in fields {
        let code: VariableCode = name.parse()?;
        if !schema.contains(&code) {
            return Err(Error::Schema(format!(
                "column {code} is not in the expected schema"
            )));
        }
        if order.contains(&code) {
            return Err(Error::Schema(format!("column {code} appears twice")));
        }
        order.push(code);
    }
    if let Some(missing) = schema.iter().find(|c| !order.contains(c)) {
        return Err(Error::Schema(format!(
            "expected column {missing} is absent"
        )));
    }

    let mut dates = Vec::new();
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); order.len()];
    for (i, record) in csv.records().enumerate() {
        let record = record?;
        let row = i + 2;
        if record.len() != order.len() + 1 {
            return Err(Error::Parse {
                row,
                column: "*".into(),
                message: format!(
                    "expected {} fields, found {}",
                    order.len() + 1,
                    record.len()
                ),
            });
        }
        let date =
            NaiveDate::parse_from_str(record[0].trim(), DATE_FORMAT).map_err(|e| Error::Parse {
                row,
                column: "date".into(),
                message: format!("`{}`: {e}", &record[0]),
            })?;
        dates.push(date);
        for (j, code) in order.iter().enumerate() {
            let cell = &record[j + 1];
            let value = if is_missing_marker(cell) {
                f64::NAN
            } else {
                let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                    row,
                    column: code.to_string(),
                    message: format!("`{cell}` is not a number"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Parse {
                        row,
                        column: code.to_string(),
                        message: format!("`{cell}` is not finite"),
                    });
                }
                v
            };
            values[j].push(value);
        }
    }
    check_dates(&dates)?;
    let columns = order.into_iter().zip(values).collect();
    ObservationPanel::new(dates, columns)
}

/// Write `panel` in the canonical CSV dialect, columns in code order.
pub fn write_panel<W: Write>(panel: &ObservationPanel, writer: W) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    let mut header = vec!["date".to_string()];
    header.extend(panel.codes().map(|c| c.to_string()));
    csv.write_record(&header)?;
    for (i, date) in panel.dates().iter().enumerate() {
        let mut row = vec![date.format(DATE_FORMAT).to_string()];
        for values in panel.columns.values() {
            row.push(format_value(values[i]));
        }
        csv.write_record(&row)?;
    }
    csv.flush()?;
    Ok(())
}

pub fn save_panel(panel: &ObservationPanel, path: impl AsRef<Path>) -> Result<()> {
    write_panel(panel, File::create(path)?)
}

/// Shortest round-trip decimal, `NA` for missing.
pub fn format_value(v: f64) -> String {
    if v.is_nan() {
        "NA".to_string()
    } else {
        format!("{v}")
    }
}

/// Replace each missing cell by the mean of its nearest observed neighbours
/// before and after. Edge gaps copy the single nearest observed value.
pub fn fill_missing(panel: &ObservationPanel) -> Result<ObservationPanel> {
    let mut out = panel.clone();
    for (code, values) in out.columns.iter_mut() {
        fill_column(values).ok_or(Error::UnusableColumn(*code))?;
        if let Some(i) = values.iter().position(|v| *v <= 0.0) {
            return Err(Error::Domain(format!(
                "column {code} must be strictly positive, found {} on {}",
                values[i], panel.dates[i]
            )));
        }
    }
    Ok(out)
}

fn fill_column(values: &mut [f64]) -> Option<()> {
    let observed: Vec<usize> = (0..values.len()).filter(|&i| !values[i].is_nan()).collect();
    if observed.is_empty() {
        return None;
    }
    let mut next_obs: usize = 0;
    for i in 0..values.len() {
        if !values[i].is_nan() {
            next_obs += 1;
            continue;
        }
        let before = next_obs.checked_sub(1).map(|k| values[observed[k]]);
        let after = observed.get(next_obs).map(|&k| values[k]);
        values[i] = match (before, after) {
            (Some(b), Some(a)) => 0.5 * (b + a),
            (Some(b), None) => b,
            (None, Some(a)) => a,
            (None, None) => unreachable!(),
        };
    }
    Some(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransformKind {
    Level,
    LogReturn,
    FirstDifference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeriesTransform {
    pub kind: TransformKind,
    pub source: VariableCode,
}

pub fn transform_series(panel: &ObservationPanel, transform: SeriesTransform) -> Result<Vec<f64>> {
    let values = panel.column(transform.source)?;
    match transform.kind {
        TransformKind::Level => Ok(values.to_vec()),
        TransformKind::FirstDifference => Ok(first_difference(values)),
        TransformKind::LogReturn => {
            if let Some(i) = values.iter().position(|v| *v <= 0.0 || v.is_nan()) {
                return Err(Error::Domain(format!(
                    "log-return of {} needs positive values, found {} on {}",
                    transform.source,
                    values[i],
                    panel.dates()[i]
                )));
            }
            log_returns(values)
        }
    }
}

pub fn first_difference(values: &[f64]) -> Vec<f64> {
    values.windows(2).map(|w| w[1] - w[0]).collect()
}

pub fn log_returns(values: &[f64]) -> Result<Vec<f64>> {
    if let Some(v) = values.iter().find(|v| **v <= 0.0 || v.is_nan()) {
        return Err(Error::Domain(format!(
            "log-return of non-positive value {v}"
        )));
    }
    Ok(values.windows(2).map(|w| (w[1] / w[0]).ln()).collect())
}
