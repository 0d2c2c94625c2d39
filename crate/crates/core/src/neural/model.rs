//! Forward pass, hybrid loss and exact gradients of the recurrent model.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView2, ArrayViewMut2};
use serde::{Deserialize, Serialize};

use crate::dataset::FeatureSequence;

use super::lstm::{backward_seq, forward_seq, SeqCache};
use super::train::{Network, Sample};
use super::{sq_norm, Activation, Block, LstmWeights, ModelDims, NeuralError};

/// Probabilities below this are clamped before taking the logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub alpha: f64,
    pub n_classes: usize,
}

/// Hybrid loss and its three terms; `total = coord + class + reg`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub coord: f64,
    pub class: f64,
    pub reg: f64,
    pub total: f64,
}

impl LossParts {
    pub fn new(coord: f64, class: f64, reg: f64) -> Self {
        Self {
            coord,
            class,
            reg,
            total: coord + class + reg,
        }
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// `(1/N) sum |u - u_hat|^2 + (1/N) sum -ln p_k + alpha |theta|^2`.
pub fn hybrid_loss(
    u_hat: &[[f64; 2]],
    probs: &[Vec<f64>],
    u: &[[f64; 2]],
    k_index: &[usize],
    theta: &[f64],
    spec: &LossSpec,
) -> Result<LossParts, NeuralError> {
    let n = u_hat.len();
    if n == 0 || probs.len() != n || u.len() != n || k_index.len() != n {
        return Err(NeuralError::Shape(
            "loss inputs must be nonempty and aligned".into(),
        ));
    }
    let mut coord = 0.0;
    let mut class = 0.0;
    for i in 0..n {
        coord += (u[i][0] - u_hat[i][0]).powi(2) + (u[i][1] - u_hat[i][1]).powi(2);
        let p = probs[i].get(k_index[i]).ok_or(NeuralError::ClassIndex {
            index: k_index[i],
            k: probs[i].len(),
        })?;
        class -= p.max(PROB_FLOOR).ln();
    }
    let nf = n as f64;
    Ok(LossParts::new(
        coord / nf,
        class / nf,
        spec.alpha * sq_norm(theta),
    ))
}

fn view<'a>(theta: &'a [f64], b: &Block) -> ArrayView2<'a, f64> {
    ArrayView2::from_shape((b.rows, b.cols), &theta[b.range()]).expect("layout")
}

fn view_mut<'a>(grad: &'a mut [f64], b: &Block) -> ArrayViewMut2<'a, f64> {
    ArrayViewMut2::from_shape((b.rows, b.cols), &mut grad[b.range()]).expect("layout")
}

/// Time-major stacking of equally long sequences.
pub(crate) fn stack_time_major(seqs: &[&FeatureSequence], reverse: bool) -> Array2<f64> {
    let (steps, width, batch) = (seqs[0].steps, seqs[0].width, seqs.len());
    let mut x = Array2::zeros((steps * batch, width));
    for t in 0..steps {
        let src_t = if reverse { steps - 1 - t } else { t };
        for (b, s) in seqs.iter().enumerate() {
            x.row_mut(t * batch + b)
                .as_slice_mut()
                .expect("contiguous")
                .copy_from_slice(s.step(src_t));
        }
    }
    x
}

struct Forward {
    fw: SeqCache,
    bw: SeqCache,
    l2: SeqCache,
    v: Array2<f64>,
    u_hat: Array2<f64>,
    probs: Array2<f64>,
}

/// The recurrent localizer/classifier as a trainable network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiLstmNet {
    pub dims: ModelDims,
}

impl BiLstmNet {
    pub fn new(dims: ModelDims) -> Self {
        Self { dims }
    }

    /// Per-step `[h_fw; h_bw]` for a time-major batch.
    fn bilstm(
        &self,
        theta: &[f64],
        seqs: &[&FeatureSequence],
    ) -> (SeqCache, SeqCache, Array2<f64>) {
        let l = self.dims.layout();
        let (steps, batch, h1) = (seqs[0].steps, seqs.len(), self.dims.hidden1);
        let fw = forward_seq(
            &LstmWeights::from_theta(theta, &l.bilstm_fw),
            stack_time_major(seqs, false),
            steps,
            Activation::Tanh,
        );
        let bw = forward_seq(
            &LstmWeights::from_theta(theta, &l.bilstm_bw),
            stack_time_major(seqs, true),
            steps,
            Activation::Tanh,
        );
        let mut cat = Array2::zeros((steps * batch, 2 * h1));
        cat.slice_mut(s![.., ..h1]).assign(&fw.h);
        for t in 0..steps {
            let rt = steps - 1 - t;
            cat.slice_mut(s![t * batch..(t + 1) * batch, h1..])
                .assign(&bw.step_h(rt));
        }
        (fw, bw, cat)
    }

    fn forward(&self, theta: &[f64], seqs: &[&FeatureSequence], ks: &[usize]) -> Forward {
        let d = &self.dims;
        let l = d.layout();
        let (steps, batch) = (seqs[0].steps, seqs.len());
        let (fw, bw, cat) = self.bilstm(theta, seqs);
        let l2 = forward_seq(
            &LstmWeights::from_theta(theta, &l.lstm2),
            cat,
            steps,
            Activation::Relu,
        );

        let mut v = Array2::zeros((batch, d.concat()));
        v.slice_mut(s![.., ..d.hidden2])
            .assign(&l2.step_h(steps - 1));
        let embed = view(theta, &l.embed);
        for (b, &k) in ks.iter().enumerate() {
            v.slice_mut(s![b, d.hidden2..]).assign(&embed.row(k));
        }

        let mut u_hat = Array2::zeros((batch, 2));
        for mut r in u_hat.rows_mut() {
            r.as_slice_mut()
                .expect("contiguous")
                .copy_from_slice(&theta[l.coord_b.range()]);
        }
        general_mat_mul(1.0, &v, &view(theta, &l.coord_w), 1.0, &mut u_hat);
        let mut logits = Array2::zeros((batch, d.n_classes));
        for mut r in logits.rows_mut() {
            r.as_slice_mut()
                .expect("contiguous")
                .copy_from_slice(&theta[l.class_b.range()]);
        }
        general_mat_mul(1.0, &v, &view(theta, &l.class_w), 1.0, &mut logits);
        let mut probs = Array2::zeros((batch, d.n_classes));
        for (mut p, z) in probs.rows_mut().into_iter().zip(logits.rows()) {
            let sm = softmax(z.as_slice().expect("contiguous"));
            p.as_slice_mut().expect("contiguous").copy_from_slice(&sm);
        }
        Forward {
            fw,
            bw,
            l2,
            v,
            u_hat,
            probs,
        }
    }

    fn check(&self, seq: &FeatureSequence, k: usize) -> Result<(), NeuralError> {
        if seq.width != self.dims.input || seq.steps == 0 || seq.data.len() != seq.steps * seq.width
        {
            return Err(NeuralError::Shape(format!(
                "sequence {}x{} does not match model input width {}",
                seq.steps, seq.width, self.dims.input
            )));
        }
        if k >= self.dims.n_classes {
            return Err(NeuralError::ClassIndex {
                index: k,
                k: self.dims.n_classes,
            });
        }
        Ok(())
    }

    /// Predictions for a batch of equally long sequences.
    pub fn predict(
        &self,
        theta: &[f64],
        seqs: &[&FeatureSequence],
        ks: &[usize],
    ) -> Result<Vec<([f64; 2], Vec<f64>)>, NeuralError> {
        if seqs.is_empty() {
            return Ok(Vec::new());
        }
        if seqs.len() != ks.len() {
            return Err(NeuralError::Shape("one class index per sequence".into()));
        }
        for (s, &k) in seqs.iter().zip(ks) {
            self.check(s, k)?;
            if s.steps != seqs[0].steps {
                return Err(NeuralError::Shape(
                    "sequences in a batch must share their length".into(),
                ));
            }
        }
        let f = self.forward(theta, seqs, ks);
        Ok((0..seqs.len())
            .map(|b| ([f.u_hat[[b, 0]], f.u_hat[[b, 1]]], f.probs.row(b).to_vec()))
            .collect())
    }
}

impl Network for BiLstmNet {
    fn n_params(&self) -> usize {
        self.dims.n_params()
    }

    fn init(&self, rng: &mut rand_chacha::ChaCha8Rng) -> Vec<f64> {
        self.dims.init(rng)
    }

    fn check_sample(&self, s: &Sample) -> Result<(), NeuralError> {
        self.check(&s.x, s.k)
    }

    fn data_loss(
        &self,
        theta: &[f64],
        samples: &[&Sample],
        n: f64,
        grad: Option<&mut [f64]>,
    ) -> (f64, f64) {
        let d = &self.dims;
        let l = d.layout();
        let seqs: Vec<&FeatureSequence> = samples.iter().map(|s| &s.x).collect();
        let ks: Vec<usize> = samples.iter().map(|s| s.k).collect();
        let f = self.forward(theta, &seqs, &ks);
        let batch = samples.len();

        let mut coord = 0.0;
        let mut class = 0.0;
        let mut du = Array2::zeros((batch, 2));
        let mut dlogit = Array2::zeros((batch, d.n_classes));
        for (b, s) in samples.iter().enumerate() {
            for c in 0..2 {
                let e = f.u_hat[[b, c]] - s.u[c];
                coord += e * e;
                du[[b, c]] = 2.0 * e / n;
            }
            let p = f.probs[[b, s.k]];
            class -= p.max(PROB_FLOOR).ln();
            if p >= PROB_FLOOR {
                for m in 0..d.n_classes {
                    dlogit[[b, m]] = f.probs[[b, m]] / n;
                }
                dlogit[[b, s.k]] -= 1.0 / n;
            }
        }
        let Some(grad) = grad else {
            return (coord / n, class / n);
        };

        general_mat_mul(1.0, &f.v.t(), &du, 1.0, &mut view_mut(grad, &l.coord_w));
        general_mat_mul(1.0, &f.v.t(), &dlogit, 1.0, &mut view_mut(grad, &l.class_w));
        for b in 0..batch {
            for c in 0..2 {
                grad[l.coord_b.offset + c] += du[[b, c]];
            }
            for m in 0..d.n_classes {
                grad[l.class_b.offset + m] += dlogit[[b, m]];
            }
        }
        let mut dv = du.dot(&view(theta, &l.coord_w).t());
        general_mat_mul(1.0, &dlogit, &view(theta, &l.class_w).t(), 1.0, &mut dv);

        for (b, &k) in ks.iter().enumerate() {
            let row = l.embed.offset + k * d.embed;
            for e in 0..d.embed {
                grad[row + e] += dv[[b, d.hidden2 + e]];
            }
        }

        let steps = seqs[0].steps;
        let mut dh2 = Array2::zeros((steps * batch, d.hidden2));
        dh2.slice_mut(s![(steps - 1) * batch.., ..])
            .assign(&dv.slice(s![.., ..d.hidden2]));
        let w2 = LstmWeights::from_theta(theta, &l.lstm2);
        let dcat = backward_seq(&w2, &l.lstm2, &f.l2, &dh2, grad, true).expect("requested");

        let h1 = d.hidden1;
        let dh_fw = dcat.slice(s![.., ..h1]).to_owned();
        let mut dh_bw = Array2::zeros((steps * batch, h1));
        for t in 0..steps {
            let rt = steps - 1 - t;
            dh_bw
                .slice_mut(s![rt * batch..(rt + 1) * batch, ..])
                .assign(&dcat.slice(s![t * batch..(t + 1) * batch, h1..]));
        }
        let wf = LstmWeights::from_theta(theta, &l.bilstm_fw);
        backward_seq(&wf, &l.bilstm_fw, &f.fw, &dh_fw, grad, false);
        let wb = LstmWeights::from_theta(theta, &l.bilstm_bw);
        backward_seq(&wb, &l.bilstm_bw, &f.bw, &dh_bw, grad, false);
        (coord / n, class / n)
    }
}

/// Per-step concatenated `[h_fw; h_bw]`, shape `F x 2H`.
pub fn bilstm_forward(
    seq: &FeatureSequence,
    theta: &[f64],
    dims: &ModelDims,
) -> Result<Array2<f64>, NeuralError> {
    let net = BiLstmNet::new(*dims);
    net.check(seq, 0)?;
    Ok(net.bilstm(theta, &[seq]).2)
}

/// Coordinates and class probabilities for one sequence.
pub fn model_forward(
    seq: &FeatureSequence,
    k_index: usize,
    theta: &[f64],
    dims: &ModelDims,
) -> Result<([f64; 2], Vec<f64>), NeuralError> {
    if theta.len() != dims.n_params() {
        return Err(NeuralError::Shape(format!(
            "expected {} parameters, got {}",
            dims.n_params(),
            theta.len()
        )));
    }
    let mut out = BiLstmNet::new(*dims).predict(theta, &[seq], &[k_index])?;
    Ok(out.pop().expect("one prediction"))
}
