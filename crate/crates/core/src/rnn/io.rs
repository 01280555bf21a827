//! Plain-text model files.
//!
//! ```text
//! carbon-rnn 1 GRU input_dim=3 hidden_dim=4 dropout=0.2 learning_rate=0.01 epochs=150 seed=7
//! feature_shift 0.1 0.2 0.3
//! feature_scale 1 1 1
//! target 30.5 2.25
//! W_ir 4 3 0.01 -0.2 ...
//! ...
//! ```
//!
//! One tensor per line in row-major order. Values are written with the
//! shortest representation that parses back to the same `f64`.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::cell::{CellKind, RnnWeights};
use super::train::{Normalization, RnnModel, RnnSpec};
use crate::error::{Error, Result};

const MAGIC: &str = "carbon-rnn";
const VERSION: &str = "1";

fn join(values: &[f64]) -> String {
    let mut s = String::new();
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        write!(s, "{v:?}").unwrap();
    }
    s
}

pub fn model_to_string(model: &RnnModel) -> String {
    let s = &model.spec;
    let n = &model.normalization;
    let mut out = format!(
        "{MAGIC} {VERSION} {} input_dim={} hidden_dim={} dropout={:?} learning_rate={:?} epochs={} seed={}\n",
        s.cell.as_str(),
        s.input_dim,
        s.hidden_dim,
        s.dropout,
        s.learning_rate,
        s.epochs,
        s.seed
    );
    writeln!(out, "feature_shift {}", join(&n.feature_shift)).unwrap();
    writeln!(out, "feature_scale {}", join(&n.feature_scale)).unwrap();
    writeln!(out, "target {:?} {:?}", n.target_shift, n.target_scale).unwrap();
    for t in &model.weights.tensors {
        writeln!(out, "{} {} {} {}", t.name, t.rows, t.cols, join(&t.data)).unwrap();
    }
    out
}

pub fn write_model<W: Write>(model: &RnnModel, mut writer: W) -> Result<()> {
    writer.write_all(model_to_string(model).as_bytes())?;
    Ok(())
}

pub fn save_model(model: &RnnModel, path: &Path) -> Result<()> {
    std::fs::write(path, model_to_string(model))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<RnnModel> {
    read_model(std::fs::File::open(path)?)
}

fn bad(msg: impl Into<String>) -> Error {
    Error::ModelFormat(msg.into())
}

fn parse_f64(tok: &str) -> Result<f64> {
    tok.parse::<f64>()
        .map_err(|_| bad(format!("invalid number {tok:?}")))
}

fn parse_usize(tok: &str) -> Result<usize> {
    tok.parse::<usize>()
        .map_err(|_| bad(format!("invalid count {tok:?}")))
}

fn keyed<'a>(tok: Option<&'a str>, key: &str) -> Result<&'a str> {
    tok.and_then(|t| t.strip_prefix(key))
        .and_then(|t| t.strip_prefix('='))
        .ok_or_else(|| bad(format!("expected {key}=... in header")))
}

fn labelled_values(line: Option<String>, label: &str, expect: usize) -> Result<Vec<f64>> {
    let line = line.ok_or_else(|| bad(format!("missing {label} line")))?;
    let mut toks = line.split_whitespace();
    if toks.next() != Some(label) {
        return Err(bad(format!("expected {label} line")));
    }
    let values = toks.map(parse_f64).collect::<Result<Vec<_>>>()?;
    if values.len() != expect {
        return Err(bad(format!(
            "{label} has {} values, expected {expect}",
            values.len()
        )));
    }
    Ok(values)
}

pub fn read_model<R: Read>(reader: R) -> Result<RnnModel> {
    let mut lines = BufReader::new(reader)
        .lines()
        .filter(|l| !matches!(l, Ok(s) if s.trim().is_empty()));
    let mut next = || lines.next().transpose().map_err(Error::from);

    let header = next()?.ok_or_else(|| bad("empty model file"))?;
    let mut toks = header.split_whitespace();
    if toks.next() != Some(MAGIC) || toks.next() != Some(VERSION) {
        return Err(bad("not a carbon-rnn version 1 file"));
    }
    let cell = match toks.next() {
        Some(t) => t.parse::<CellKind>().map_err(|e| bad(e.to_string()))?,
        None => return Err(bad("missing cell kind")),
    };
    let spec = RnnSpec {
        cell,
        input_dim: parse_usize(keyed(toks.next(), "input_dim")?)?,
        hidden_dim: parse_usize(keyed(toks.next(), "hidden_dim")?)?,
        dropout: parse_f64(keyed(toks.next(), "dropout")?)?,
        learning_rate: parse_f64(keyed(toks.next(), "learning_rate")?)?,
        epochs: parse_usize(keyed(toks.next(), "epochs")?)?,
        seed: keyed(toks.next(), "seed")?
            .parse()
            .map_err(|_| bad("invalid seed"))?,
    };
    spec.validate().map_err(|e| bad(e.to_string()))?;

    let feature_shift = labelled_values(next()?, "feature_shift", spec.input_dim)?;
    let feature_scale = labelled_values(next()?, "feature_scale", spec.input_dim)?;
    let target = labelled_values(next()?, "target", 2)?;
    if feature_scale
        .iter()
        .chain(&target[1..])
        .any(|s| !(*s > 0.0 && s.is_finite()))
    {
        return Err(bad("normalization scales must be positive"));
    }
    let normalization = Normalization {
        feature_shift,
        feature_scale,
        target_shift: target[0],
        target_scale: target[1],
    };

    let mut weights = RnnWeights::zeros(cell, spec.input_dim, spec.hidden_dim);
    for t in &mut weights.tensors {
        let line = next()?.ok_or_else(|| bad(format!("missing tensor {}", t.name)))?;
        let mut toks = line.split_whitespace();
        if toks.next() != Some(t.name) {
            return Err(bad(format!("expected tensor {}", t.name)));
        }
        let rows = parse_usize(toks.next().unwrap_or(""))?;
        let cols = parse_usize(toks.next().unwrap_or(""))?;
        if (rows, cols) != (t.rows, t.cols) {
            return Err(bad(format!(
                "tensor {} is {rows}x{cols}, expected {}x{}",
                t.name, t.rows, t.cols
            )));
        }
        let values = toks.map(parse_f64).collect::<Result<Vec<_>>>()?;
        if values.len() != t.data.len() {
            return Err(bad(format!(
                "tensor {} has {} values",
                t.name,
                values.len()
            )));
        }
        t.data = values;
    }
    if next()?.is_some() {
        return Err(bad("trailing content after last tensor"));
    }
    if !weights.is_finite() {
        return Err(bad("non-finite weight"));
    }
    Ok(RnnModel {
        spec,
        weights,
        normalization,
        loss_history: Vec::new(),
    })
}
