//! GRU and LSTM cells with their hand-derived backward passes.
//!
//! Matrices are row-major `hidden × input` (or `hidden × hidden`) and act on
//! column vectors, so the LSTM input weights are stored already transposed.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CellKind {
    Gru,
    Lstm,
}

impl CellKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CellKind::Gru => "GRU",
            CellKind::Lstm => "LSTM",
        }
    }
}

impl std::fmt::Display for CellKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for CellKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gru" => Ok(CellKind::Gru),
            "lstm" => Ok(CellKind::Lstm),
            _ => Err(Error::InvalidArgument(format!("unknown cell kind {s:?}"))),
        }
    }
}

/// Tensor indices for a GRU.
pub mod gru {
    pub const W_IR: usize = 0;
    pub const W_IZ: usize = 1;
    pub const W_IN: usize = 2;
    pub const W_HR: usize = 3;
    pub const W_HZ: usize = 4;
    pub const W_HN: usize = 5;
    pub const B_IR: usize = 6;
    pub const B_IZ: usize = 7;
    pub const B_IN: usize = 8;
    pub const B_HR: usize = 9;
    pub const B_HZ: usize = 10;
    pub const B_HN: usize = 11;
    pub(crate) const NAMES: [&str; 12] = [
        "W_ir", "W_iz", "W_in", "W_hr", "W_hz", "W_hn", "b_ir", "b_iz", "b_in", "b_hr", "b_hz",
        "b_hn",
    ];
}

/// Tensor indices for an LSTM.
pub mod lstm {
    pub const W_XI: usize = 0;
    pub const W_XF: usize = 1;
    pub const W_XO: usize = 2;
    pub const W_XG: usize = 3;
    pub const W_HI: usize = 4;
    pub const W_HF: usize = 5;
    pub const W_HO: usize = 6;
    pub const W_HG: usize = 7;
    pub const B_I: usize = 8;
    pub const B_F: usize = 9;
    pub const B_O: usize = 10;
    pub const B_G: usize = 11;
    pub(crate) const NAMES: [&str; 12] = [
        "W_xi", "W_xf", "W_xo", "W_xg", "W_hi", "W_hf", "W_ho", "W_hg", "b_i", "b_f", "b_o", "b_g",
    ];
}

/// Read-out tensors follow the cell tensors for both kinds.
pub const W_OUT: usize = 12;
pub const B_OUT: usize = 13;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: &'static str,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    fn zeros(name: &'static str, rows: usize, cols: usize) -> Self {
        Self {
            name,
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }
}

/// Cell weights plus a linear scalar read-out of the final hidden state.
#[derive(Debug, Clone, PartialEq)]
pub struct RnnWeights {
    pub cell: CellKind,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub tensors: Vec<Tensor>,
}

impl RnnWeights {
    pub fn zeros(cell: CellKind, input_dim: usize, hidden_dim: usize) -> Self {
        let names = match cell {
            CellKind::Gru => &gru::NAMES,
            CellKind::Lstm => &lstm::NAMES,
        };
        let (n_input, n_hidden) = match cell {
            CellKind::Gru => (3, 3),
            CellKind::Lstm => (4, 4),
        };
        let mut tensors = Vec::with_capacity(14);
        for (i, name) in names.iter().enumerate() {
            let (rows, cols) = if i < n_input {
                (hidden_dim, input_dim)
            } else if i < n_input + n_hidden {
                (hidden_dim, hidden_dim)
            } else {
                (hidden_dim, 1)
            };
            tensors.push(Tensor::zeros(name, rows, cols));
        }
        tensors.push(Tensor::zeros("w_out", 1, hidden_dim));
        tensors.push(Tensor::zeros("b_out", 1, 1));
        Self {
            cell,
            input_dim,
            hidden_dim,
            tensors,
        }
    }

    /// Glorot-uniform weight matrices, zero biases.
    pub fn init(cell: CellKind, input_dim: usize, hidden_dim: usize, seed: u64) -> Self {
        let mut w = Self::zeros(cell, input_dim, hidden_dim);
        let mut rng = rng_from_seed(seed);
        let n_mats = match cell {
            CellKind::Gru => 6,
            CellKind::Lstm => 8,
        };
        for (i, t) in w.tensors.iter_mut().enumerate() {
            let (fan_in, fan_out) = if i < n_mats {
                (t.cols, t.rows)
            } else if i == W_OUT {
                (t.cols, 1)
            } else {
                continue;
            };
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in &mut t.data {
                *v = rng.random_range(-limit..limit);
            }
        }
        w
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.cell, self.input_dim, self.hidden_dim)
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.tensors.iter().flat_map(|t| t.data.iter())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.tensors.iter_mut().flat_map(|t| t.data.iter_mut())
    }

    pub fn fill(&mut self, value: f64) {
        self.values_mut().for_each(|v| *v = value);
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    pub(crate) fn t(&self, i: usize) -> &[f64] {
        &self.tensors[i].data
    }

    pub(crate) fn t_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.tensors[i].data
    }

    pub fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::Shape(format!(
                "input has {} features, cell expects {}",
                x.len(),
                self.input_dim
            )));
        }
        Ok(())
    }

    fn check_hidden(&self, h: &[f64], what: &str) -> Result<()> {
        if h.len() != self.hidden_dim {
            return Err(Error::Shape(format!(
                "{what} has length {}, cell expects {}",
                h.len(),
                self.hidden_dim
            )));
        }
        Ok(())
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `out += W x` for a row-major `out.len() × x.len()` matrix.
fn matvec_add(out: &mut [f64], w: &[f64], x: &[f64]) {
    let cols = x.len();
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `out += Wᵀ v`.
fn matvec_t_add(out: &mut [f64], w: &[f64], v: &[f64]) {
    let cols = out.len();
    for (vi, row) in v.iter().zip(w.chunks_exact(cols)) {
        for (o, a) in out.iter_mut().zip(row) {
            *o += vi * a;
        }
    }
}

/// `g += a bᵀ`.
fn outer_add(g: &mut [f64], a: &[f64], b: &[f64]) {
    let cols = b.len();
    for (ai, row) in a.iter().zip(g.chunks_exact_mut(cols)) {
        for (gij, bj) in row.iter_mut().zip(b) {
            *gij += ai * bj;
        }
    }
}

fn add_into(out: &mut [f64], v: &[f64]) {
    out.iter_mut().zip(v).for_each(|(o, x)| *o += x);
}

/// Saved activations of one time step.
#[derive(Debug, Clone)]
pub(crate) enum StepCache {
    Gru {
        x: Vec<f64>,
        h_prev: Vec<f64>,
        r: Vec<f64>,
        z: Vec<f64>,
        n: Vec<f64>,
        /// `W_hn h_prev + b_hn`, the term gated by `r`.
        hn: Vec<f64>,
    },
    Lstm {
        x: Vec<f64>,
        h_prev: Vec<f64>,
        c_prev: Vec<f64>,
        i: Vec<f64>,
        f: Vec<f64>,
        o: Vec<f64>,
        g: Vec<f64>,
        c: Vec<f64>,
    },
}

fn affine(w: &RnnWeights, wi: usize, x: &[f64], wh: usize, h: &[f64], b: usize) -> Vec<f64> {
    let mut a = w.t(b).to_vec();
    matvec_add(&mut a, w.t(wi), x);
    matvec_add(&mut a, w.t(wh), h);
    a
}

pub(crate) fn gru_step(w: &RnnWeights, x: &[f64], h_prev: &[f64]) -> (Vec<f64>, StepCache) {
    use gru::*;
    let mut r = affine(w, W_IR, x, W_HR, h_prev, B_IR);
    add_into(&mut r, w.t(B_HR));
    r.iter_mut().for_each(|v| *v = sigmoid(*v));
    let mut z = affine(w, W_IZ, x, W_HZ, h_prev, B_IZ);
    add_into(&mut z, w.t(B_HZ));
    z.iter_mut().for_each(|v| *v = sigmoid(*v));
    let mut hn = w.t(B_HN).to_vec();
    matvec_add(&mut hn, w.t(W_HN), h_prev);
    let mut n = w.t(B_IN).to_vec();
    matvec_add(&mut n, w.t(W_IN), x);
    for ((nj, rj), hj) in n.iter_mut().zip(&r).zip(&hn) {
        *nj = (*nj + rj * hj).tanh();
    }
    let h: Vec<f64> = (0..w.hidden_dim)
        .map(|j| (1.0 - z[j]) * n[j] + z[j] * h_prev[j])
        .collect();
    let cache = StepCache::Gru {
        x: x.to_vec(),
        h_prev: h_prev.to_vec(),
        r,
        z,
        n,
        hn,
    };
    (h, cache)
}

pub(crate) fn lstm_step(
    w: &RnnWeights,
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
) -> (Vec<f64>, Vec<f64>, StepCache) {
    use lstm::*;
    let mut i = affine(w, W_XI, x, W_HI, h_prev, B_I);
    let mut f = affine(w, W_XF, x, W_HF, h_prev, B_F);
    let mut o = affine(w, W_XO, x, W_HO, h_prev, B_O);
    let mut g = affine(w, W_XG, x, W_HG, h_prev, B_G);
    i.iter_mut().for_each(|v| *v = sigmoid(*v));
    f.iter_mut().for_each(|v| *v = sigmoid(*v));
    o.iter_mut().for_each(|v| *v = sigmoid(*v));
    g.iter_mut().for_each(|v| *v = v.tanh());
    let c: Vec<f64> = (0..w.hidden_dim)
        .map(|j| f[j] * c_prev[j] + i[j] * g[j])
        .collect();
    let h: Vec<f64> = (0..w.hidden_dim).map(|j| o[j] * c[j].tanh()).collect();
    let cache = StepCache::Lstm {
        x: x.to_vec(),
        h_prev: h_prev.to_vec(),
        c_prev: c_prev.to_vec(),
        i,
        f,
        o,
        g,
        c: c.clone(),
    };
    (h, c, cache)
}

/// One GRU step: reset gate, update gate, candidate state and interpolation.
pub fn gru_cell(x: &[f64], h_prev: &[f64], weights: &RnnWeights) -> Result<Vec<f64>> {
    if weights.cell != CellKind::Gru {
        return Err(Error::Shape("gru_cell called with LSTM weights".into()));
    }
    weights.check_input(x)?;
    weights.check_hidden(h_prev, "h_prev")?;
    Ok(gru_step(weights, x, h_prev).0)
}

/// One LSTM step, returning the new `(h, c)`.
pub fn lstm_cell(
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    weights: &RnnWeights,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if weights.cell != CellKind::Lstm {
        return Err(Error::Shape("lstm_cell called with GRU weights".into()));
    }
    weights.check_input(x)?;
    weights.check_hidden(h_prev, "h_prev")?;
    weights.check_hidden(c_prev, "c_prev")?;
    let (h, c, _) = lstm_step(weights, x, h_prev, c_prev);
    Ok((h, c))
}

/// Unrolled pass over a window from a zero state. Returns the final hidden
/// state and the per-step caches for backpropagation.
pub(crate) fn unroll(w: &RnnWeights, window: &[Vec<f64>]) -> (Vec<f64>, Vec<StepCache>) {
    let mut h = vec![0.0; w.hidden_dim];
    let mut c = vec![0.0; w.hidden_dim];
    let mut caches = Vec::with_capacity(window.len());
    for x in window {
        match w.cell {
            CellKind::Gru => {
                let (h_next, cache) = gru_step(w, x, &h);
                h = h_next;
                caches.push(cache);
            }
            CellKind::Lstm => {
                let (h_next, c_next, cache) = lstm_step(w, x, &h, &c);
                h = h_next;
                c = c_next;
                caches.push(cache);
            }
        }
    }
    (h, caches)
}

pub(crate) fn readout(w: &RnnWeights, h: &[f64]) -> f64 {
    w.t(B_OUT)[0] + w.t(W_OUT).iter().zip(h).map(|(a, b)| a * b).sum::<f64>()
}

/// Backpropagate `dh_last` (gradient w.r.t. the final hidden state) through
/// the cached steps, accumulating into `grad`.
pub(crate) fn backward(
    w: &RnnWeights,
    caches: &[StepCache],
    dh_last: Vec<f64>,
    grad: &mut RnnWeights,
) {
    let hd = w.hidden_dim;
    let mut dh = dh_last;
    let mut dc = vec![0.0; hd];
    for cache in caches.iter().rev() {
        match cache {
            StepCache::Gru {
                x,
                h_prev,
                r,
                z,
                n,
                hn,
            } => {
                use gru::*;
                let mut dh_prev: Vec<f64> = (0..hd).map(|j| dh[j] * z[j]).collect();
                let da_n: Vec<f64> = (0..hd)
                    .map(|j| dh[j] * (1.0 - z[j]) * (1.0 - n[j] * n[j]))
                    .collect();
                let da_z: Vec<f64> = (0..hd)
                    .map(|j| dh[j] * (h_prev[j] - n[j]) * z[j] * (1.0 - z[j]))
                    .collect();
                let dhn: Vec<f64> = (0..hd).map(|j| da_n[j] * r[j]).collect();
                let da_r: Vec<f64> = (0..hd)
                    .map(|j| da_n[j] * hn[j] * r[j] * (1.0 - r[j]))
                    .collect();

                outer_add(grad.t_mut(W_IN), &da_n, x);
                add_into(grad.t_mut(B_IN), &da_n);
                outer_add(grad.t_mut(W_HN), &dhn, h_prev);
                add_into(grad.t_mut(B_HN), &dhn);
                matvec_t_add(&mut dh_prev, w.t(W_HN), &dhn);

                outer_add(grad.t_mut(W_IZ), &da_z, x);
                add_into(grad.t_mut(B_IZ), &da_z);
                outer_add(grad.t_mut(W_HZ), &da_z, h_prev);
                add_into(grad.t_mut(B_HZ), &da_z);
                matvec_t_add(&mut dh_prev, w.t(W_HZ), &da_z);

                outer_add(grad.t_mut(W_IR), &da_r, x);
                add_into(grad.t_mut(B_IR), &da_r);
                outer_add(grad.t_mut(W_HR), &da_r, h_prev);
                add_into(grad.t_mut(B_HR), &da_r);
                matvec_t_add(&mut dh_prev, w.t(W_HR), &da_r);

                dh = dh_prev;
            }
            StepCache::Lstm {
                x,
                h_prev,
                c_prev,
                i,
                f,
                o,
                g,
                c,
            } => {
                use lstm::*;
                let mut da_i = vec![0.0; hd];
                let mut da_f = vec![0.0; hd];
                let mut da_o = vec![0.0; hd];
                let mut da_g = vec![0.0; hd];
                let mut dc_prev = vec![0.0; hd];
                for j in 0..hd {
                    let tc = c[j].tanh();
                    let dcj = dc[j] + dh[j] * o[j] * (1.0 - tc * tc);
                    da_o[j] = dh[j] * tc * o[j] * (1.0 - o[j]);
                    da_f[j] = dcj * c_prev[j] * f[j] * (1.0 - f[j]);
                    da_i[j] = dcj * g[j] * i[j] * (1.0 - i[j]);
                    da_g[j] = dcj * i[j] * (1.0 - g[j] * g[j]);
                    dc_prev[j] = dcj * f[j];
                }
                let mut dh_prev = vec![0.0; hd];
                for (wx, wh, b, da) in [
                    (W_XI, W_HI, B_I, &da_i),
                    (W_XF, W_HF, B_F, &da_f),
                    (W_XO, W_HO, B_O, &da_o),
                    (W_XG, W_HG, B_G, &da_g),
                ] {
                    outer_add(grad.t_mut(wx), da, x);
                    outer_add(grad.t_mut(wh), da, h_prev);
                    add_into(grad.t_mut(b), da);
                    matvec_t_add(&mut dh_prev, w.t(wh), da);
                }
                dh = dh_prev;
                dc = dc_prev;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BIG: f64 = 1e3;

    fn scalar(cell: CellKind) -> RnnWeights {
        let mut w = RnnWeights::zeros(cell, 1, 1);
        let n_mats = if cell == CellKind::Gru { 6 } else { 8 };
        for t in &mut w.tensors[..n_mats] {
            t.data[0] = 0.5;
        }
        w
    }

    #[test]
    fn gru_scalar_reference() {
        let w = scalar(CellKind::Gru);
        let h = gru_cell(&[1.0], &[0.0], &w).unwrap();
        // Independent recomputation.
        let s = 1.0 / (1.0 + (-0.5f64).exp());
        let n = (0.5f64).tanh();
        assert!((s - 0.62246).abs() < 1e-5 && (n - 0.46212).abs() < 1e-5);
        assert!((h[0] - (1.0 - s) * n).abs() < 1e-15);
        assert!((h[0] - 0.17449).abs() < 5e-5);
    }

    #[test]
    fn lstm_scalar_reference() {
        let w = scalar(CellKind::Lstm);
        let (h, c) = lstm_cell(&[1.0], &[0.0], &[0.0], &w).unwrap();
        let s = 1.0 / (1.0 + (-0.5f64).exp());
        let g = (0.5f64).tanh();
        assert!((c[0] - s * g).abs() < 1e-15);
        assert!((h[0] - s * (s * g).tanh()).abs() < 1e-15);
        assert!((c[0] - 0.28766).abs() < 5e-5);
        assert!((h[0] - 0.17431).abs() < 5e-5);
    }

    fn random_weights(cell: CellKind) -> RnnWeights {
        let mut w = RnnWeights::init(cell, 3, 4, 9);
        let mut rng = rng_from_seed(10);
        for v in w.values_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
        w
    }

    #[test]
    fn gru_update_gate_one_keeps_state() {
        let mut w = random_weights(CellKind::Gru);
        w.t_mut(gru::B_IZ).fill(BIG);
        let h_prev = vec![0.3, -0.7, 0.1, 0.9];
        let h = gru_cell(&[1.0, -2.0, 0.5], &h_prev, &w).unwrap();
        assert_eq!(h, h_prev);
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn gru_reduces_to_vanilla_rnn() {
        let mut w = random_weights(CellKind::Gru);
        w.t_mut(gru::B_IR).fill(BIG);
        w.t_mut(gru::B_IZ).fill(-BIG);
        let x = [0.2, -0.4, 1.1];
        let h_prev = [0.5, -0.1, 0.0, 0.3];
        let h = gru_cell(&x, &h_prev, &w).unwrap();
        for j in 0..4 {
            let mut a = w.t(gru::B_IN)[j] + w.t(gru::B_HN)[j];
            for k in 0..3 {
                a += w.t(gru::W_IN)[j * 3 + k] * x[k];
            }
            for k in 0..4 {
                a += w.t(gru::W_HN)[j * 4 + k] * h_prev[k];
            }
            assert!((h[j] - a.tanh()).abs() < 1e-15);
        }
    }

    #[test]
    fn lstm_saturated_gates() {
        let mut w = random_weights(CellKind::Lstm);
        w.t_mut(lstm::B_F).fill(BIG);
        w.t_mut(lstm::B_I).fill(-BIG);
        let c_prev = vec![0.4, -1.2, 2.0, 0.0];
        let (_, c) = lstm_cell(&[1.0, 0.0, -1.0], &[0.1, 0.2, 0.3, 0.4], &c_prev, &w).unwrap();
        assert_eq!(c, c_prev);

        w.t_mut(lstm::B_O).fill(-BIG);
        let (h, _) = lstm_cell(&[1.0, 0.0, -1.0], &[0.1, 0.2, 0.3, 0.4], &c_prev, &w).unwrap();
        assert!(h.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let w = RnnWeights::zeros(CellKind::Gru, 3, 4);
        assert!(matches!(
            gru_cell(&[1.0], &[0.0; 4], &w),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            gru_cell(&[1.0; 3], &[0.0; 2], &w),
            Err(Error::Shape(_))
        ));
        assert!(lstm_cell(&[1.0; 3], &[0.0; 4], &[0.0; 4], &w).is_err());
    }

    #[test]
    fn activations_stay_in_range() {
        for cell in [CellKind::Gru, CellKind::Lstm] {
            let w = random_weights(cell);
            let window: Vec<Vec<f64>> = (0..6).map(|t| vec![t as f64 * 3.0, -5.0, 0.5]).collect();
            let (_, caches) = unroll(&w, &window);
            for cache in caches {
                match cache {
                    StepCache::Gru { r, z, n, .. } => {
                        assert!(r.iter().chain(&z).all(|v| *v > 0.0 && *v < 1.0));
                        assert!(n.iter().all(|v| v.abs() < 1.0));
                    }
                    StepCache::Lstm { i, f, o, g, .. } => {
                        assert!(i.iter().chain(&f).chain(&o).all(|v| *v > 0.0 && *v < 1.0));
                        assert!(g.iter().all(|v| v.abs() < 1.0));
                    }
                }
            }
        }
    }

    #[test]
    fn forced_identities_hold_over_many_steps() {
        let mut w = random_weights(CellKind::Gru);
        w.t_mut(gru::B_IZ).fill(BIG);
        let mut h = vec![0.25, -0.5, 0.75, 0.0];
        let h0 = h.clone();
        for t in 0..20 {
            h = gru_cell(&[t as f64, 1.0, -1.0], &h, &w).unwrap();
        }
        assert_eq!(h, h0);

        let mut w = random_weights(CellKind::Lstm);
        w.t_mut(lstm::B_F).fill(BIG);
        w.t_mut(lstm::B_I).fill(-BIG);
        let c0 = vec![1.5, -0.5, 0.2, 0.9];
        let (mut h, mut c) = (vec![0.0; 4], c0.clone());
        for t in 0..20 {
            (h, c) = lstm_cell(&[t as f64, 1.0, -1.0], &h, &c, &w).unwrap();
        }
        assert_eq!(c, c0);
    }
}
