//! Feed-forward coordinate regressor used as the random-configuration
//! reference: flattened features, two rectified hidden layers, linear output.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2, ArrayViewMut2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::train::{Network, Sample};
use super::{Block, NeuralError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpDims {
    /// Flattened input length (`steps * width`).
    pub input: usize,
    pub hidden: usize,
}

impl MlpDims {
    pub fn standard(input: usize) -> Self {
        Self { input, hidden: 64 }
    }

    /// `[w1, b1, w2, b2, w3, b3]`.
    pub fn blocks(&self) -> [Block; 6] {
        let (i, h) = (self.input, self.hidden);
        let mut off = 0;
        let mut take = |rows, cols| {
            let b = Block {
                offset: off,
                rows,
                cols,
            };
            off += rows * cols;
            b
        };
        [
            take(i, h),
            take(1, h),
            take(h, h),
            take(1, h),
            take(h, 2),
            take(1, 2),
        ]
    }

    pub fn n_params(&self) -> usize {
        self.blocks()[5].range().end
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MlpNet {
    pub dims: MlpDims,
}

fn view<'a>(theta: &'a [f64], b: &Block) -> ArrayView2<'a, f64> {
    ArrayView2::from_shape((b.rows, b.cols), &theta[b.range()]).expect("layout")
}

fn affine(x: &Array2<f64>, theta: &[f64], w: &Block, b: &Block, relu: bool) -> Array2<f64> {
    let mut y = Array2::zeros((x.nrows(), w.cols));
    for mut r in y.rows_mut() {
        r.as_slice_mut()
            .expect("contiguous")
            .copy_from_slice(&theta[b.range()]);
    }
    general_mat_mul(1.0, x, &view(theta, w), 1.0, &mut y);
    if relu {
        y.mapv_inplace(|v| v.max(0.0));
    }
    y
}

impl MlpNet {
    pub fn new(dims: MlpDims) -> Self {
        Self { dims }
    }

    fn inputs(&self, samples: &[&Sample]) -> Array2<f64> {
        let mut x = Array2::zeros((samples.len(), self.dims.input));
        for (mut r, s) in x.rows_mut().into_iter().zip(samples) {
            r.as_slice_mut()
                .expect("contiguous")
                .copy_from_slice(&s.x.data);
        }
        x
    }

    pub fn predict(&self, theta: &[f64], samples: &[&Sample]) -> Vec<[f64; 2]> {
        if samples.is_empty() {
            return Vec::new();
        }
        let [w1, b1, w2, b2, w3, b3] = self.dims.blocks();
        let h1 = affine(&self.inputs(samples), theta, &w1, &b1, true);
        let h2 = affine(&h1, theta, &w2, &b2, true);
        let y = affine(&h2, theta, &w3, &b3, false);
        y.rows().into_iter().map(|r| [r[0], r[1]]).collect()
    }
}

fn grad_view<'a>(grad: &'a mut [f64], b: &Block) -> ArrayViewMut2<'a, f64> {
    ArrayViewMut2::from_shape((b.rows, b.cols), &mut grad[b.range()]).expect("layout")
}

fn add_bias_grad(grad: &mut [f64], b: &Block, d: &Array2<f64>) {
    for row in d.rows() {
        for (g, v) in grad[b.range()].iter_mut().zip(row) {
            *g += v;
        }
    }
}

impl Network for MlpNet {
    fn n_params(&self) -> usize {
        self.dims.n_params()
    }

    fn init(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut theta = vec![0.0; self.n_params()];
        let [w1, _, w2, _, w3, _] = self.dims.blocks();
        for w in [w1, w2, w3] {
            let s = 1.0 / (w.rows as f64).sqrt();
            for v in &mut theta[w.range()] {
                *v = rng.random_range(-s..s);
            }
        }
        theta
    }

    fn check_sample(&self, s: &Sample) -> Result<(), NeuralError> {
        if s.x.data.len() != self.dims.input {
            return Err(NeuralError::Shape(format!(
                "flattened features have length {}, network expects {}",
                s.x.data.len(),
                self.dims.input
            )));
        }
        Ok(())
    }

    fn data_loss(
        &self,
        theta: &[f64],
        samples: &[&Sample],
        n: f64,
        grad: Option<&mut [f64]>,
    ) -> (f64, f64) {
        let [w1, b1, w2, b2, w3, b3] = self.dims.blocks();
        let x = self.inputs(samples);
        let h1 = affine(&x, theta, &w1, &b1, true);
        let h2 = affine(&h1, theta, &w2, &b2, true);
        let y = affine(&h2, theta, &w3, &b3, false);
        let mut coord = 0.0;
        let mut dy = Array2::zeros((samples.len(), 2));
        for (b, s) in samples.iter().enumerate() {
            for c in 0..2 {
                let e = y[[b, c]] - s.u[c];
                coord += e * e;
                dy[[b, c]] = 2.0 * e / n;
            }
        }
        if let Some(grad) = grad {
            general_mat_mul(1.0, &h2.t(), &dy, 1.0, &mut grad_view(grad, &w3));
            add_bias_grad(grad, &b3, &dy);
            let mut d2 = dy.dot(&view(theta, &w3).t());
            d2.zip_mut_with(&h2, |d, &h| {
                if h <= 0.0 {
                    *d = 0.0
                }
            });
            general_mat_mul(1.0, &h1.t(), &d2, 1.0, &mut grad_view(grad, &w2));
            add_bias_grad(grad, &b2, &d2);
            let mut d1 = d2.dot(&view(theta, &w2).t());
            d1.zip_mut_with(&h1, |d, &h| {
                if h <= 0.0 {
                    *d = 0.0
                }
            });
            general_mat_mul(1.0, &x.t(), &d1, 1.0, &mut grad_view(grad, &w1));
            add_bias_grad(grad, &b1, &d1);
        }
        (coord / n, 0.0)
    }
}
