//! Adam with bias-corrected moments.

use serde::{Deserialize, Serialize};

use super::NeuralError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    /// Moments at zero with the default betas and epsilon.
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    fn begin(&mut self, theta: &[f64], grad: &[f64]) -> Result<(f64, f64), NeuralError> {
        if theta.len() != grad.len() || theta.len() != self.m.len() {
            return Err(NeuralError::Shape(format!(
                "adam: {} parameters, {} gradients, {} moments",
                theta.len(),
                grad.len(),
                self.m.len()
            )));
        }
        if let Some(index) = grad.iter().position(|g| !g.is_finite()) {
            return Err(NeuralError::NonFiniteGradient { index });
        }
        self.step += 1;
        let t = self.step as i32;
        Ok((1.0 - self.beta1.powi(t), 1.0 - self.beta2.powi(t)))
    }
}

#[inline]
fn update(theta: &mut f64, g: f64, m: &mut f64, v: &mut f64, s: &AdamConsts) {
    *m = s.beta1 * *m + (1.0 - s.beta1) * g;
    *v = s.beta2 * *v + (1.0 - s.beta2) * g * g;
    let m_hat = *m / s.c1;
    let v_hat = *v / s.c2;
    *theta -= s.lr * m_hat / (v_hat.sqrt() + s.eps);
}

struct AdamConsts {
    beta1: f64,
    beta2: f64,
    eps: f64,
    lr: f64,
    c1: f64,
    c2: f64,
}

fn consts(st: &AdamState, c1: f64, c2: f64) -> AdamConsts {
    AdamConsts {
        beta1: st.beta1,
        beta2: st.beta2,
        eps: st.eps,
        lr: st.lr,
        c1,
        c2,
    }
}

/// One update over the whole parameter vector. Rejects non-finite
/// gradients before touching any state.
pub fn adam_step(theta: &mut [f64], grad: &[f64], st: &mut AdamState) -> Result<(), NeuralError> {
    let (c1, c2) = st.begin(theta, grad)?;
    let k = consts(st, c1, c2);
    theta
        .iter_mut()
        .zip(grad)
        .zip(st.m.iter_mut().zip(st.v.iter_mut()))
        .for_each(|((t, &g), (m, v))| update(t, g, m, v, &k));
    Ok(())
}

/// Index-loop reference implementation of [`adam_step`].
pub fn adam_step_scalar(
    theta: &mut [f64],
    grad: &[f64],
    st: &mut AdamState,
) -> Result<(), NeuralError> {
    let (c1, c2) = st.begin(theta, grad)?;
    for i in 0..theta.len() {
        let m = st.beta1 * st.m[i] + (1.0 - st.beta1) * grad[i];
        let v = st.beta2 * st.v[i] + (1.0 - st.beta2) * grad[i] * grad[i];
        st.m[i] = m;
        st.v[i] = v;
        theta[i] -= st.lr * (m / c1) / ((v / c2).sqrt() + st.eps);
    }
    Ok(())
}
