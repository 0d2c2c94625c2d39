//! LSTM cell and batched sequence passes with backpropagation through time.
//!
//! Sequences are stored time-major: row `t * B + b` of a `(T*B) x width`
//! matrix holds step `t` of batch item `b`.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView2, ArrayViewMut2};
use serde::{Deserialize, Serialize};

use super::{CellBlocks, NeuralError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn deriv_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Borrowed weights of one cell.
#[derive(Debug, Clone, Copy)]
pub struct LstmWeights<'a> {
    /// `input x 4H`, gate columns i, f, g, o.
    pub wx: ArrayView2<'a, f64>,
    /// `H x 4H`.
    pub wh: ArrayView2<'a, f64>,
    /// `4H`.
    pub b: &'a [f64],
}

impl<'a> LstmWeights<'a> {
    pub fn from_theta(theta: &'a [f64], cell: &CellBlocks) -> Self {
        Self {
            wx: ArrayView2::from_shape((cell.wx.rows, cell.wx.cols), &theta[cell.wx.range()])
                .expect("layout"),
            wh: ArrayView2::from_shape((cell.wh.rows, cell.wh.cols), &theta[cell.wh.range()])
                .expect("layout"),
            b: &theta[cell.b.range()],
        }
    }

    pub fn input(&self) -> usize {
        self.wx.nrows()
    }

    pub fn hidden(&self) -> usize {
        self.wh.nrows()
    }

    fn check(&self) -> Result<(), NeuralError> {
        let h = self.hidden();
        if self.wx.ncols() != 4 * h || self.wh.ncols() != 4 * h || self.b.len() != 4 * h {
            return Err(NeuralError::Shape(
                "cell weights are not in gate-block form".into(),
            ));
        }
        Ok(())
    }
}

/// One step for a single sample: `(h_t, c_t)`.
pub fn lstm_cell(
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    w: &LstmWeights<'_>,
    act: Activation,
) -> Result<(Vec<f64>, Vec<f64>), NeuralError> {
    w.check()?;
    let h = w.hidden();
    if x.len() != w.input() || h_prev.len() != h || c_prev.len() != h {
        return Err(NeuralError::Shape(format!(
            "cell expects x[{}], h[{h}], c[{h}]; got x[{}], h[{}], c[{}]",
            w.input(),
            x.len(),
            h_prev.len(),
            c_prev.len()
        )));
    }
    let mut z = w.b.to_vec();
    for (i, xi) in x.iter().enumerate() {
        for (zj, wij) in z.iter_mut().zip(w.wx.row(i)) {
            *zj += xi * wij;
        }
    }
    for (i, hi) in h_prev.iter().enumerate() {
        for (zj, wij) in z.iter_mut().zip(w.wh.row(i)) {
            *zj += hi * wij;
        }
    }
    let mut h_t = vec![0.0; h];
    let mut c_t = vec![0.0; h];
    for j in 0..h {
        let i_g = sigmoid(z[j]);
        let f_g = sigmoid(z[h + j]);
        let g_g = act.apply(z[2 * h + j]);
        let o_g = sigmoid(z[3 * h + j]);
        c_t[j] = f_g * c_prev[j] + i_g * g_g;
        h_t[j] = o_g * act.apply(c_t[j]);
    }
    Ok((h_t, c_t))
}

/// Forward activations kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct SeqCache {
    pub steps: usize,
    pub batch: usize,
    pub act: Activation,
    pub x: Array2<f64>,
    /// Activated gates `[i, f, g, o]`, `(T*B) x 4H`.
    pub gates: Array2<f64>,
    pub c: Array2<f64>,
    /// `act(c)`.
    pub ac: Array2<f64>,
    pub h: Array2<f64>,
}

impl SeqCache {
    pub fn step_h(&self, t: usize) -> ArrayView2<'_, f64> {
        self.h.slice(s![t * self.batch..(t + 1) * self.batch, ..])
    }
}

/// Runs a cell over a time-major batch of sequences from zero state.
pub(crate) fn forward_seq(
    w: &LstmWeights<'_>,
    x: Array2<f64>,
    steps: usize,
    act: Activation,
) -> SeqCache {
    let h = w.hidden();
    let n = x.nrows();
    let batch = n / steps;
    let mut z = Array2::<f64>::zeros((n, 4 * h));
    for mut row in z.rows_mut() {
        row.as_slice_mut().expect("contiguous").copy_from_slice(w.b);
    }
    general_mat_mul(1.0, &x, &w.wx, 1.0, &mut z);

    let mut c = Array2::<f64>::zeros((n, h));
    let mut ac = Array2::<f64>::zeros((n, h));
    let mut hs = Array2::<f64>::zeros((n, h));
    for t in 0..steps {
        let rows = t * batch..(t + 1) * batch;
        if t > 0 {
            let prev = hs.slice(s![(t - 1) * batch..t * batch, ..]).to_owned();
            let mut zt = z.slice_mut(s![rows.clone(), ..]);
            general_mat_mul(1.0, &prev, &w.wh, 1.0, &mut zt);
        }
        for b in 0..batch {
            let r = t * batch + b;
            let zr = z.row_mut(r).into_slice().expect("contiguous");
            for j in 0..h {
                zr[j] = sigmoid(zr[j]);
                zr[h + j] = sigmoid(zr[h + j]);
                zr[2 * h + j] = act.apply(zr[2 * h + j]);
                zr[3 * h + j] = sigmoid(zr[3 * h + j]);
            }
            for j in 0..h {
                let c_prev = if t > 0 { c[[r - batch, j]] } else { 0.0 };
                let cv = zr[h + j] * c_prev + zr[j] * zr[2 * h + j];
                let a = act.apply(cv);
                c[[r, j]] = cv;
                ac[[r, j]] = a;
                hs[[r, j]] = zr[3 * h + j] * a;
            }
        }
    }
    SeqCache {
        steps,
        batch,
        act,
        x,
        gates: z,
        c,
        ac,
        h: hs,
    }
}

fn grad_view<'a>(grad: &'a mut [f64], b: &super::Block) -> ArrayViewMut2<'a, f64> {
    ArrayViewMut2::from_shape((b.rows, b.cols), &mut grad[b.range()]).expect("layout")
}

/// Backpropagates `dh` (upstream gradient on every step's hidden state,
/// `(T*B) x H`) through the sequence, accumulating weight gradients into
/// `grad` at the cell's blocks. Returns the gradient on the inputs when
/// requested.
pub(crate) fn backward_seq(
    w: &LstmWeights<'_>,
    blocks: &CellBlocks,
    cache: &SeqCache,
    dh: &Array2<f64>,
    grad: &mut [f64],
    need_dx: bool,
) -> Option<Array2<f64>> {
    let h = w.hidden();
    let (steps, batch, act) = (cache.steps, cache.batch, cache.act);
    let n = steps * batch;
    let mut dz = Array2::<f64>::zeros((n, 4 * h));
    let mut dh_next = Array2::<f64>::zeros((batch, h));
    let mut dc_next = Array2::<f64>::zeros((batch, h));
    for t in (0..steps).rev() {
        for b in 0..batch {
            let r = t * batch + b;
            let g = cache.gates.row(r);
            let gs = g.as_slice().expect("contiguous");
            let dzr = dz.row_mut(r).into_slice().expect("contiguous");
            for j in 0..h {
                let (ig, fg, gg, og) = (gs[j], gs[h + j], gs[2 * h + j], gs[3 * h + j]);
                let dht = dh[[r, j]] + dh_next[[b, j]];
                let a = cache.ac[[r, j]];
                let dc = dc_next[[b, j]] + dht * og * act.deriv_from_output(a);
                let c_prev = if t > 0 { cache.c[[r - batch, j]] } else { 0.0 };
                dzr[j] = dc * gg * ig * (1.0 - ig);
                dzr[h + j] = dc * c_prev * fg * (1.0 - fg);
                dzr[2 * h + j] = dc * ig * act.deriv_from_output(gg);
                dzr[3 * h + j] = dht * a * og * (1.0 - og);
                dc_next[[b, j]] = dc * fg;
            }
        }
        let dzt = dz.slice(s![t * batch..(t + 1) * batch, ..]);
        general_mat_mul(1.0, &dzt, &w.wh.t(), 0.0, &mut dh_next);
    }

    general_mat_mul(
        1.0,
        &cache.x.t(),
        &dz,
        1.0,
        &mut grad_view(grad, &blocks.wx),
    );
    if steps > 1 {
        let h_prev = cache.h.slice(s![..(steps - 1) * batch, ..]);
        let dz_later = dz.slice(s![batch.., ..]);
        general_mat_mul(
            1.0,
            &h_prev.t(),
            &dz_later,
            1.0,
            &mut grad_view(grad, &blocks.wh),
        );
    }
    let db = &mut grad[blocks.b.range()];
    for row in dz.rows() {
        for (d, v) in db.iter_mut().zip(row) {
            *d += v;
        }
    }
    need_dx.then(|| dz.dot(&w.wx.t()))
}
