//! Fused LSTM layer kernels. Sequences are stored time-major: row `t * B + b`
//! holds batch element `b` at step `t`. Gate columns are ordered i, f, g, o.

use super::kernels::{gemm, MatRef};

pub(crate) struct LstmDims {
    pub steps: usize,
    pub batch: usize,
    pub input: usize,
    pub hidden: usize,
}

/// Forward cache needed by the backward pass.
#[derive(Debug)]
pub(crate) struct LstmCache {
    /// Activated gates, `[T*B, 4H]`.
    pub gates: Vec<f64>,
    /// Cell states, `[T*B, H]`.
    pub cells: Vec<f64>,
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Returns the hidden states `[T*B, H]` and the cache.
pub(crate) fn lstm_forward(d: &LstmDims, x: &[f64], w: &[f64], u: &[f64], b: &[f64]) -> (Vec<f64>, LstmCache) {
    let (tb, h, g4) = (d.steps * d.batch, d.hidden, 4 * d.hidden);
    let mut gates = vec![0.0; tb * g4];
    for row in gates.chunks_mut(g4) {
        row.copy_from_slice(b);
    }
    gemm(MatRef::new(x, tb, d.input), MatRef::new(w, d.input, g4), 1.0, &mut gates);
    let mut hs = vec![0.0; tb * h];
    let mut cells = vec![0.0; tb * h];
    let um = MatRef::new(u, h, g4);
    let bh = d.batch * h;
    for t in 0..d.steps {
        let gt = &mut gates[t * d.batch * g4..(t + 1) * d.batch * g4];
        if t > 0 {
            gemm(MatRef::new(&hs[(t - 1) * bh..t * bh], d.batch, h), um, 1.0, gt);
        }
        for bi in 0..d.batch {
            let row = &mut gt[bi * g4..(bi + 1) * g4];
            let o0 = t * bh + bi * h;
            for j in 0..h {
                let o = o0 + j;
                let i_g = sigmoid(row[j]);
                let f_g = sigmoid(row[h + j]);
                let g_g = row[2 * h + j].tanh();
                let o_g = sigmoid(row[3 * h + j]);
                row[j] = i_g;
                row[h + j] = f_g;
                row[2 * h + j] = g_g;
                row[3 * h + j] = o_g;
                let c_prev = if t > 0 { cells[o - bh] } else { 0.0 };
                let c = f_g * c_prev + i_g * g_g;
                cells[o] = c;
                hs[o] = o_g * c.tanh();
            }
        }
    }
    (hs, LstmCache { gates, cells })
}

pub(crate) struct LstmGrads<'a> {
    pub dx: Option<&'a mut [f64]>,
    pub dw: Option<&'a mut [f64]>,
    pub du: Option<&'a mut [f64]>,
    pub db: Option<&'a mut [f64]>,
}

/// Backpropagation through time. `dh_out` is the upstream gradient on every
/// hidden state; results accumulate into `grads`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn lstm_backward(
    d: &LstmDims,
    x: &[f64],
    w: &[f64],
    u: &[f64],
    hs: &[f64],
    cache: &LstmCache,
    dh_out: &[f64],
    grads: LstmGrads<'_>,
) {
    let (tb, h, g4, bh) = (d.steps * d.batch, d.hidden, 4 * d.hidden, d.batch * d.hidden);
    let mut dgates = vec![0.0; tb * g4];
    let mut dh_next = vec![0.0; bh];
    let mut dc_next = vec![0.0; bh];
    let um = MatRef::new(u, h, g4);
    for t in (0..d.steps).rev() {
        for bi in 0..d.batch {
            let grow = (t * d.batch + bi) * g4;
            let o0 = t * bh + bi * h;
            for j in 0..h {
                let o = o0 + j;
                let (i_g, f_g, g_g, o_g) = (
                    cache.gates[grow + j],
                    cache.gates[grow + h + j],
                    cache.gates[grow + 2 * h + j],
                    cache.gates[grow + 3 * h + j],
                );
                let c = cache.cells[o];
                let c_prev = if t > 0 { cache.cells[o - bh] } else { 0.0 };
                let tc = c.tanh();
                let dh = dh_out[o] + dh_next[bi * h + j];
                let dc = dh * o_g * (1.0 - tc * tc) + dc_next[bi * h + j];
                dc_next[bi * h + j] = dc * f_g;
                dgates[grow + j] = dc * g_g * i_g * (1.0 - i_g);
                dgates[grow + h + j] = dc * c_prev * f_g * (1.0 - f_g);
                dgates[grow + 2 * h + j] = dc * i_g * (1.0 - g_g * g_g);
                dgates[grow + 3 * h + j] = dh * tc * o_g * (1.0 - o_g);
            }
        }
        if t > 0 {
            let dg = MatRef::new(&dgates[t * d.batch * g4..(t + 1) * d.batch * g4], d.batch, g4);
            gemm(dg, um.t(), 0.0, &mut dh_next);
        }
    }
    let dg_all = MatRef::new(&dgates, tb, g4);
    if let Some(dx) = grads.dx {
        gemm(dg_all, MatRef::new(w, d.input, g4).t(), 1.0, dx);
    }
    if let Some(dw) = grads.dw {
        gemm(MatRef::new(x, tb, d.input).t(), dg_all, 1.0, dw);
    }
    if let Some(du) = grads.du {
        if d.steps > 1 {
            let prev = MatRef::new(&hs[..(d.steps - 1) * bh], (d.steps - 1) * d.batch, h);
            let later = MatRef::new(&dgates[d.batch * g4..], (d.steps - 1) * d.batch, g4);
            gemm(prev.t(), later, 1.0, du);
        }
    }
    if let Some(db) = grads.db {
        for row in dgates.chunks(g4) {
            db.iter_mut().zip(row).for_each(|(a, b)| *a += b);
        }
    }
}
