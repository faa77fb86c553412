use crate::error::{AevbError, Result};
use crate::numkit::{add_outer, add_transpose_product, affine, sigmoid, Matrix};

use super::gaussian::add_assign;
use super::Parameters;

/// Probabilities are clamped into `[PROB_CLAMP, 1 - PROB_CLAMP]` before logs.
pub const PROB_CLAMP: f64 = 1e-7;

/// Decoder for binary data: `y = sigmoid(W_out · tanh(W_hidden · z + b_hidden) + b_out)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BernoulliMlp {
    pub w_hidden: Matrix,
    pub b_hidden: Vec<f64>,
    pub w_out: Matrix,
    pub b_out: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct BernoulliTrace {
    pub hidden: Vec<f64>,
}

impl BernoulliMlp {
    pub fn zeros(latent: usize, hidden: usize, data: usize) -> Self {
        Self {
            w_hidden: Matrix::zeros(hidden, latent),
            b_hidden: vec![0.0; hidden],
            w_out: Matrix::zeros(data, hidden),
            b_out: vec![0.0; data],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_hidden.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_hidden.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.w_out.rows()
    }

    pub fn check_shapes(&self) -> Result<()> {
        if self.b_hidden.len() == self.hidden_dim()
            && self.w_out.cols() == self.hidden_dim()
            && self.b_out.len() == self.output_dim()
        {
            Ok(())
        } else {
            Err(AevbError::shape(
                "BernoulliMlp",
                format!("w_hidden {:?}, w_out {:?}", self.w_hidden.shape(), self.w_out.shape()),
                format!("b_hidden {}, b_out {}", self.b_hidden.len(), self.b_out.len()),
            ))
        }
    }

    pub fn forward(&self, z: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_traced(z)?.0)
    }

    pub fn forward_traced(&self, z: &[f64]) -> Result<(Vec<f64>, BernoulliTrace)> {
        if z.len() != self.input_dim() {
            return Err(AevbError::shape(
                "BernoulliMlp::forward",
                format!("z of length {}", z.len()),
                format!("w_hidden {}x{}", self.w_hidden.rows(), self.w_hidden.cols()),
            ));
        }
        let mut hidden = vec![0.0; self.hidden_dim()];
        affine(&self.w_hidden, z, &self.b_hidden, &mut hidden);
        hidden.iter_mut().for_each(|v| *v = v.tanh());
        let mut y = vec![0.0; self.output_dim()];
        affine(&self.w_out, &hidden, &self.b_out, &mut y);
        y.iter_mut().for_each(|v| *v = sigmoid(*v));
        Ok((y, BernoulliTrace { hidden }))
    }

    /// Backpropagate the gradient with respect to the output logits into the
    /// parameter gradient and/or the input gradient.
    pub fn backward(
        &self,
        z: &[f64],
        trace: &BernoulliTrace,
        d_logits: &[f64],
        grad: Option<&mut BernoulliMlp>,
        d_z: Option<&mut [f64]>,
    ) {
        let mut grad = grad;
        if let Some(g) = grad.as_deref_mut() {
            add_outer(&mut g.w_out, 1.0, d_logits, &trace.hidden);
            add_assign(&mut g.b_out, d_logits);
        }
        let mut d_pre = vec![0.0; self.hidden_dim()];
        add_transpose_product(&self.w_out, d_logits, &mut d_pre);
        for (d, h) in d_pre.iter_mut().zip(&trace.hidden) {
            *d *= 1.0 - h * h;
        }
        if let Some(g) = grad {
            add_outer(&mut g.w_hidden, 1.0, &d_pre, z);
            add_assign(&mut g.b_hidden, &d_pre);
        }
        if let Some(d_z) = d_z {
            add_transpose_product(&self.w_hidden, &d_pre, d_z);
        }
    }
}

/// `Σ xᵢ log yᵢ + (1 − xᵢ) log(1 − yᵢ)` with `y` clamped away from 0 and 1.
pub fn bernoulli_loglik(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(AevbError::shape(
            "bernoulli_loglik",
            format!("x of length {}", x.len()),
            format!("y of length {}", y.len()),
        ));
    }
    Ok(x.iter()
        .zip(y)
        .map(|(&xi, &yi)| {
            let p = yi.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            xi * p.ln() + (1.0 - xi) * (1.0 - p).ln()
        })
        .sum())
}

/// Derivative of [`bernoulli_loglik`] with respect to the logits, times
/// `scale`. Zero where the clamp is active.
pub fn bernoulli_loglik_grad_logits(x: &[f64], y: &[f64], scale: f64, out: &mut [f64]) {
    for ((o, &xi), &yi) in out.iter_mut().zip(x).zip(y) {
        *o = if yi > PROB_CLAMP && yi < 1.0 - PROB_CLAMP {
            scale * (xi - yi)
        } else {
            0.0
        };
    }
}

impl Parameters for BernoulliMlp {
    fn blocks(&self) -> Vec<(&'static str, &[f64])> {
        vec![
            ("w_hidden", self.w_hidden.as_slice()),
            ("b_hidden", &self.b_hidden),
            ("w_out", self.w_out.as_slice()),
            ("b_out", &self.b_out),
        ]
    }

    fn blocks_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        vec![
            ("w_hidden", self.w_hidden.as_mut_slice()),
            ("b_hidden", &mut self.b_hidden),
            ("w_out", self.w_out.as_mut_slice()),
            ("b_out", &mut self.b_out),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::{finite_diff_grad, max_relative_error, RngState};

    #[test]
    fn zero_net_gives_half() {
        let net = BernoulliMlp::zeros(2, 3, 4);
        assert_eq!(net.forward(&[0.7, -0.2]).unwrap(), vec![0.5; 4]);
    }

    #[test]
    fn saturates_with_large_bias() {
        let mut net = BernoulliMlp::zeros(2, 3, 4);
        net.b_out = vec![10.0; 4];
        assert!(net.forward(&[1.0, 1.0]).unwrap().iter().all(|&y| y >= 0.999));
    }

    #[test]
    fn matches_straight_line_formula() {
        let mut rng = RngState::from_seed(21);
        let mut net = BernoulliMlp::zeros(3, 2, 4);
        net.set_flat(&rng.standard_normal_vec(net.num_params())).unwrap();
        let z = rng.standard_normal_vec(3);
        let y = net.forward(&z).unwrap();
        for i in 0..4 {
            let mut o = net.b_out[i];
            for k in 0..2 {
                let a: f64 = net.b_hidden[k] + (0..3).map(|j| net.w_hidden.get(k, j) * z[j]).sum::<f64>();
                o += net.w_out.get(i, k) * a.tanh();
            }
            assert!((y[i] - 1.0 / (1.0 + (-o).exp())).abs() < 1e-14);
        }
    }

    #[test]
    fn loglik_values() {
        let v = bernoulli_loglik(&[1.0, 0.0], &[0.5, 0.5]).unwrap();
        assert!((v - 2.0 * 0.5f64.ln()).abs() < 1e-12);
        let near = bernoulli_loglik(&[1.0, 0.0], &[0.999_999, 0.000_001]).unwrap();
        assert!(near <= 0.0 && near > -1e-5);
        let clamped = bernoulli_loglik(&[1.0], &[0.0]).unwrap();
        assert!((clamped - PROB_CLAMP.ln()).abs() < 1e-12);
        assert!(bernoulli_loglik(&[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn loglik_matches_reference_sum() {
        let mut rng = RngState::from_seed(6);
        for _ in 0..50 {
            let x: Vec<f64> = (0..6).map(|_| rng.uniform()).collect();
            let y: Vec<f64> = (0..6).map(|_| rng.uniform_open()).collect();
            let mut expected = 0.0;
            for i in 0..6 {
                let p = y[i].max(1e-7).min(1.0 - 1e-7);
                expected += x[i] * p.ln() + (1.0 - x[i]) * (1.0 - p).ln();
            }
            let got = bernoulli_loglik(&x, &y).unwrap();
            assert!(got <= 0.0);
            assert!((got - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = RngState::from_seed(17);
        let mut net = BernoulliMlp::zeros(2, 3, 5);
        net.set_flat(&rng.standard_normal_vec(net.num_params())).unwrap();
        let z = rng.standard_normal_vec(2);
        let x: Vec<f64> = (0..5).map(|i| (i % 2) as f64).collect();
        let f = |n: &BernoulliMlp, zz: &[f64]| bernoulli_loglik(&x, &n.forward(zz).unwrap()).unwrap();

        let (y, trace) = net.forward_traced(&z).unwrap();
        let mut d_logits = vec![0.0; 5];
        bernoulli_loglik_grad_logits(&x, &y, 1.0, &mut d_logits);
        let mut grad = net.zeros_like();
        let mut d_z = vec![0.0; 2];
        net.backward(&z, &trace, &d_logits, Some(&mut grad), Some(&mut d_z));

        let numeric = finite_diff_grad(
            |flat| {
                let mut n = net.clone();
                n.set_flat(flat).unwrap();
                f(&n, &z)
            },
            &net.to_flat(),
            1e-5,
        )
        .unwrap();
        assert!(max_relative_error(&grad.to_flat(), &numeric, 1e-8) < 1e-5);
        let numeric_z = finite_diff_grad(|zz| f(&net, zz), &z, 1e-5).unwrap();
        assert!(max_relative_error(&d_z, &numeric_z, 1e-8) < 1e-5);
    }
}
