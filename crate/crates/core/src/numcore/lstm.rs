//! LSTM layer with exact backward pass.
//!
//! Gate order within the `4h` pre-activation is `[input, forget, cell, output]`.
//! Sequences are time-major: step `t`, row `r` lives at `t * rows + r`.
//! A row whose mask is 0 at step `t` carries its state through unchanged,
//! so the final state of a padded row is its state at its true length.

use super::tensor::{gemm, ParamStore, Tensor};
use super::NumError;

#[derive(Debug, Clone, Copy)]
pub struct LstmParams<'a> {
    pub w: &'a Tensor,
    pub u: &'a Tensor,
    pub b: &'a Tensor,
}

impl<'a> LstmParams<'a> {
    pub fn new(w: &'a Tensor, u: &'a Tensor, b: &'a Tensor) -> Result<Self, NumError> {
        let p = Self { w, u, b };
        let h = p.hidden();
        if w.shape().len() != 2 || w.shape()[0] != 4 * h || u.shape() != [4 * h, h] || b.shape() != [4 * h] {
            return Err(NumError::ShapeMismatch(format!(
                "lstm W {:?}, U {:?}, b {:?}",
                w.shape(),
                u.shape(),
                b.shape()
            )));
        }
        Ok(p)
    }

    /// Looks up `{prefix}.W`, `{prefix}.U`, `{prefix}.b`.
    pub fn from_store(store: &'a ParamStore, prefix: &str) -> Result<Self, NumError> {
        Self::new(
            store.get(&format!("{prefix}.W"))?,
            store.get(&format!("{prefix}.U"))?,
            store.get(&format!("{prefix}.b"))?,
        )
    }

    pub fn hidden(&self) -> usize {
        self.u.shape().get(1).copied().unwrap_or(0)
    }

    pub fn input_size(&self) -> usize {
        self.w.shape().get(1).copied().unwrap_or(0)
    }
}

/// Gradients of the three LSTM tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmGrads {
    pub w: Tensor,
    pub u: Tensor,
    pub b: Tensor,
}

impl LstmGrads {
    pub fn zeros_for(p: &LstmParams<'_>) -> Self {
        Self { w: Tensor::zeros(p.w.shape()), u: Tensor::zeros(p.u.shape()), b: Tensor::zeros(p.b.shape()) }
    }
}

/// Mutable views of gradient accumulators.
pub struct LstmGradsMut<'a> {
    pub w: &'a mut [f64],
    pub u: &'a mut [f64],
    pub b: &'a mut [f64],
}

/// Input for one step: either one-hot indices (one per row) or a dense
/// `rows × in` matrix.
#[derive(Debug, Clone, Copy)]
pub enum CellInput<'a> {
    OneHot(&'a [usize]),
    Dense(&'a Tensor),
}

/// Time-major sequence input.
#[derive(Debug, Clone)]
pub enum SeqInput {
    OneHot(Vec<usize>),
    Dense(Vec<f64>),
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Everything the backward pass needs from a forward run.
#[derive(Debug, Clone)]
pub struct LstmSeq {
    pub rows: usize,
    pub steps: usize,
    pub hidden: usize,
    input: SeqInput,
    /// `(steps + 1) × rows × hidden`; block 0 is the initial state.
    hs: Vec<f64>,
    cs: Vec<f64>,
    /// Activated gates, `steps × rows × 4h`.
    gates: Vec<f64>,
    /// tanh of the unmasked new cell state, `steps × rows × hidden`.
    tanh_c: Vec<f64>,
    masks: Vec<f64>,
}

impl LstmSeq {
    /// Hidden outputs of steps `1..=steps`, time-major `steps × rows × hidden`.
    pub fn outputs(&self) -> &[f64] {
        &self.hs[self.rows * self.hidden..]
    }

    pub fn h_at(&self, t: usize) -> &[f64] {
        let n = self.rows * self.hidden;
        &self.hs[t * n..(t + 1) * n]
    }

    pub fn c_at(&self, t: usize) -> &[f64] {
        let n = self.rows * self.hidden;
        &self.cs[t * n..(t + 1) * n]
    }

    pub fn final_h(&self) -> &[f64] {
        self.h_at(self.steps)
    }

    pub fn final_c(&self) -> &[f64] {
        self.c_at(self.steps)
    }
}

/// Result of backpropagating through a sequence.
#[derive(Debug, Clone)]
pub struct SeqGrads {
    /// Gradient w.r.t. dense inputs (time-major), `None` for one-hot input.
    pub dx: Option<Vec<f64>>,
    pub dh0: Vec<f64>,
    pub dc0: Vec<f64>,
}

/// Runs the LSTM over `steps` steps for `rows` rows.
pub fn lstm_seq_forward(
    p: &LstmParams<'_>,
    input: SeqInput,
    rows: usize,
    steps: usize,
    h0: &[f64],
    c0: &[f64],
    masks: &[f64],
) -> Result<LstmSeq, NumError> {
    let h = p.hidden();
    let g4 = 4 * h;
    let inp = p.input_size();
    let n = rows * h;
    if h0.len() != n || c0.len() != n || masks.len() != rows * steps {
        return Err(NumError::ShapeMismatch("lstm initial state or mask".into()));
    }
    let mut gates = vec![0.0; steps * rows * g4];
    match &input {
        SeqInput::OneHot(idx) => {
            if idx.len() != rows * steps || idx.iter().any(|&i| i >= inp) {
                return Err(NumError::ShapeMismatch("lstm one-hot input".into()));
            }
            // Column `i` of W, laid out contiguously.
            let w = p.w.data();
            let mut wt = vec![0.0; inp * g4];
            for gi in 0..g4 {
                for i in 0..inp {
                    wt[i * g4 + gi] = w[gi * inp + i];
                }
            }
            for (row, &i) in gates.chunks_exact_mut(g4).zip(idx) {
                row.copy_from_slice(&wt[i * g4..(i + 1) * g4]);
            }
        }
        SeqInput::Dense(x) => {
            if x.len() != rows * steps * inp {
                return Err(NumError::ShapeMismatch("lstm dense input".into()));
            }
            gemm(rows * steps, inp, g4, 1.0, x, false, p.w.data(), true, 0.0, &mut gates);
        }
    }
    let bias = p.b.data();
    for row in gates.chunks_exact_mut(g4) {
        row.iter_mut().zip(bias).for_each(|(z, b)| *z += b);
    }

    let mut hs = vec![0.0; (steps + 1) * n];
    let mut cs = vec![0.0; (steps + 1) * n];
    hs[..n].copy_from_slice(h0);
    cs[..n].copy_from_slice(c0);
    let mut tanh_c = vec![0.0; steps * n];
    let u = p.u.data();

    for t in 0..steps {
        let (h_done, h_rest) = hs.split_at_mut((t + 1) * n);
        let h_prev = &h_done[t * n..];
        let h_out = &mut h_rest[..n];
        let (c_done, c_rest) = cs.split_at_mut((t + 1) * n);
        let c_prev = &c_done[t * n..];
        let c_out = &mut c_rest[..n];
        let z = &mut gates[t * rows * g4..(t + 1) * rows * g4];
        gemm(rows, h, g4, 1.0, h_prev, false, u, true, 1.0, z);
        let tc = &mut tanh_c[t * n..(t + 1) * n];
        for r in 0..rows {
            let zr = &mut z[r * g4..(r + 1) * g4];
            let live = masks[t * rows + r] != 0.0;
            for j in 0..h {
                let i = sigmoid(zr[j]);
                let f = sigmoid(zr[h + j]);
                let g = zr[2 * h + j].tanh();
                let o = sigmoid(zr[3 * h + j]);
                zr[j] = i;
                zr[h + j] = f;
                zr[2 * h + j] = g;
                zr[3 * h + j] = o;
                let k = r * h + j;
                let c_new = f * c_prev[k] + i * g;
                let th = c_new.tanh();
                tc[k] = th;
                if live {
                    c_out[k] = c_new;
                    h_out[k] = o * th;
                } else {
                    c_out[k] = c_prev[k];
                    h_out[k] = h_prev[k];
                }
            }
        }
    }
    Ok(LstmSeq { rows, steps, hidden: h, input, hs, cs, gates, tanh_c, masks: masks.to_vec() })
}

/// Backpropagates through a sequence, accumulating parameter gradients.
///
/// `dh_out` is the gradient w.r.t. each step's hidden output (time-major,
/// optional); `dh_final`/`dc_final` are gradients w.r.t. the final state.
pub fn lstm_seq_backward(
    p: &LstmParams<'_>,
    seq: &LstmSeq,
    dh_out: Option<&[f64]>,
    dh_final: Option<&[f64]>,
    dc_final: Option<&[f64]>,
    grads: LstmGradsMut<'_>,
) -> Result<SeqGrads, NumError> {
    let (rows, steps, h) = (seq.rows, seq.steps, seq.hidden);
    let g4 = 4 * h;
    let n = rows * h;
    let inp = p.input_size();
    if dh_out.is_some_and(|d| d.len() != steps * n)
        || dh_final.is_some_and(|d| d.len() != n)
        || dc_final.is_some_and(|d| d.len() != n)
    {
        return Err(NumError::ShapeMismatch("lstm upstream gradient".into()));
    }
    let mut dh = dh_final.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
    let mut dc = dc_final.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
    let mut dz_all = vec![0.0; steps * rows * g4];
    let u = p.u.data();

    for t in (0..steps).rev() {
        if let Some(d) = dh_out {
            dh.iter_mut().zip(&d[t * n..(t + 1) * n]).for_each(|(a, b)| *a += b);
        }
        let gates = &seq.gates[t * rows * g4..(t + 1) * rows * g4];
        let tc = &seq.tanh_c[t * n..(t + 1) * n];
        let c_prev = seq.c_at(t);
        let dz = &mut dz_all[t * rows * g4..(t + 1) * rows * g4];
        let mut dh_pass = vec![0.0; n];
        for r in 0..rows {
            let k0 = r * h;
            if seq.masks[t * rows + r] == 0.0 {
                // State carried through: gradients pass straight to step t-1.
                dh_pass[k0..k0 + h].copy_from_slice(&dh[k0..k0 + h]);
                continue;
            }
            let gr = &gates[r * g4..(r + 1) * g4];
            let dzr = &mut dz[r * g4..(r + 1) * g4];
            for j in 0..h {
                let k = k0 + j;
                let (i, f, g, o) = (gr[j], gr[h + j], gr[2 * h + j], gr[3 * h + j]);
                let th = tc[k];
                let d_o = dh[k] * th;
                let dct = dc[k] + dh[k] * o * (1.0 - th * th);
                dzr[j] = dct * g * i * (1.0 - i);
                dzr[h + j] = dct * c_prev[k] * f * (1.0 - f);
                dzr[2 * h + j] = dct * i * (1.0 - g * g);
                dzr[3 * h + j] = d_o * o * (1.0 - o);
                dc[k] = dct * f;
            }
        }
        // dh_{t-1} = dz · U + carried-through part
        gemm(rows, g4, h, 1.0, dz, false, u, false, 0.0, &mut dh);
        dh.iter_mut().zip(&dh_pass).for_each(|(a, b)| *a += b);
    }

    let total = steps * rows;
    if total > 0 {
        // dU += dZᵀ · H_prev (all steps at once)
        gemm(g4, total, h, 1.0, &dz_all, true, &seq.hs[..total * h], false, 1.0, grads.u);
        for row in dz_all.chunks_exact(g4) {
            grads.b.iter_mut().zip(row).for_each(|(a, b)| *a += b);
        }
    }
    let dx = match &seq.input {
        SeqInput::OneHot(idx) => {
            for (row, &i) in dz_all.chunks_exact(g4).zip(idx) {
                for (gi, d) in row.iter().enumerate() {
                    grads.w[gi * inp + i] += d;
                }
            }
            None
        }
        SeqInput::Dense(x) => {
            gemm(g4, total, inp, 1.0, &dz_all, true, x, false, 1.0, grads.w);
            let mut dx = vec![0.0; total * inp];
            gemm(total, g4, inp, 1.0, &dz_all, false, p.w.data(), false, 0.0, &mut dx);
            Some(dx)
        }
    };
    Ok(SeqGrads { dx, dh0: dh, dc0: dc })
}

/// Cache of a single cell step.
#[derive(Debug, Clone)]
pub struct LstmCache {
    seq: LstmSeq,
}

/// Gradients returned by [`lstm_cell_backward`].
#[derive(Debug, Clone)]
pub struct LstmCellGrads {
    pub dx: Option<Tensor>,
    pub dh: Tensor,
    pub dc: Tensor,
    pub params: LstmGrads,
}

fn cell_input(x: CellInput<'_>, p: &LstmParams<'_>, rows: usize) -> Result<SeqInput, NumError> {
    match x {
        CellInput::OneHot(idx) if idx.len() == rows => Ok(SeqInput::OneHot(idx.to_vec())),
        CellInput::Dense(t) if t.rows() == rows && t.cols() == p.input_size() => Ok(SeqInput::Dense(t.data().to_vec())),
        _ => Err(NumError::ShapeMismatch("lstm cell input".into())),
    }
}

/// One LSTM step for a batch of rows (`h`, `c` are `rows × hidden`).
pub fn lstm_cell_forward(
    x: CellInput<'_>,
    h: &Tensor,
    c: &Tensor,
    p: &LstmParams<'_>,
) -> Result<(Tensor, Tensor, LstmCache), NumError> {
    let rows = h.rows();
    let hidden = p.hidden();
    if h.cols() != hidden || c.shape() != h.shape() {
        return Err(NumError::ShapeMismatch(format!("state {:?} for hidden {hidden}", h.shape())));
    }
    let input = cell_input(x, p, rows)?;
    let seq = lstm_seq_forward(p, input, rows, 1, h.data(), c.data(), &vec![1.0; rows])?;
    let h_new = Tensor::matrix(rows, hidden, seq.final_h().to_vec())?;
    let c_new = Tensor::matrix(rows, hidden, seq.final_c().to_vec())?;
    Ok((h_new, c_new, LstmCache { seq }))
}

/// Exact gradients of one step given upstream gradients w.r.t. `h'` and `c'`.
pub fn lstm_cell_backward(
    dh: &Tensor,
    dc: &Tensor,
    cache: &LstmCache,
    p: &LstmParams<'_>,
) -> Result<LstmCellGrads, NumError> {
    let seq = &cache.seq;
    let mut g = LstmGrads::zeros_for(p);
    let res = lstm_seq_backward(
        p,
        seq,
        None,
        Some(dh.data()),
        Some(dc.data()),
        LstmGradsMut { w: g.w.data_mut(), u: g.u.data_mut(), b: g.b.data_mut() },
    )?;
    let dx = res.dx.map(|d| Tensor::matrix(seq.rows, p.input_size(), d)).transpose()?;
    Ok(LstmCellGrads {
        dx,
        dh: Tensor::matrix(seq.rows, seq.hidden, res.dh0)?,
        dc: Tensor::matrix(seq.rows, seq.hidden, res.dc0)?,
        params: g,
    })
}
