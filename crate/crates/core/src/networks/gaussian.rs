use crate::error::{AevbError, Result};
use crate::numkit::{add_outer, add_transpose_product, affine, sigmoid, Matrix, LN_2PI};

use super::Parameters;

/// Log-variances are projected onto `[-LOG_VAR_BOUND, LOG_VAR_BOUND]`.
pub const LOG_VAR_BOUND: f64 = 10.0;

/// Mean and log-variance of a diagonal Gaussian.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianParams {
    pub mean: Vec<f64>,
    pub log_var: Vec<f64>,
}

impl GaussianParams {
    pub fn new(mean: Vec<f64>, log_var: Vec<f64>) -> Result<Self> {
        if mean.len() != log_var.len() {
            return Err(AevbError::shape(
                "GaussianParams::new",
                format!("mean of length {}", mean.len()),
                format!("log_var of length {}", log_var.len()),
            ));
        }
        Ok(Self { mean, log_var })
    }

    /// The standard normal `N(0, I)` in `dim` dimensions.
    pub fn standard(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            log_var: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn variance(&self) -> Vec<f64> {
        self.log_var.iter().map(|lv| lv.exp()).collect()
    }

    pub fn std_dev(&self) -> Vec<f64> {
        self.log_var.iter().map(|lv| (0.5 * lv).exp()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.mean.iter().chain(&self.log_var).all(|v| v.is_finite())
    }

    /// Reparameterized draw `mean + std ⊙ eps`.
    pub fn reparameterize(&self, eps: &[f64]) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.log_var)
            .zip(eps)
            .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
            .collect()
    }
}

/// `Σⱼ −½ log 2π − ½ log σⱼ² − (xⱼ − μⱼ)² / 2σⱼ²`.
pub fn gaussian_loglik(x: &[f64], p: &GaussianParams) -> Result<f64> {
    if x.len() != p.dim() {
        return Err(AevbError::shape(
            "gaussian_loglik",
            format!("x of length {}", x.len()),
            format!("Gaussian of dim {}", p.dim()),
        ));
    }
    Ok(x.iter()
        .zip(&p.mean)
        .zip(&p.log_var)
        .map(|((xi, m), lv)| -0.5 * (LN_2PI + lv + (xi - m).powi(2) * (-lv).exp()))
        .sum())
}

/// Adds `scale · ∂ log N(x; μ, σ²)/∂(μ, log σ²)` into `d_mean`, `d_log_var`.
pub fn gaussian_loglik_grad(
    x: &[f64],
    p: &GaussianParams,
    scale: f64,
    d_mean: &mut [f64],
    d_log_var: &mut [f64],
) {
    for j in 0..x.len() {
        let inv_var = (-p.log_var[j]).exp();
        let diff = x[j] - p.mean[j];
        d_mean[j] += scale * diff * inv_var;
        d_log_var[j] += scale * 0.5 * (diff * diff * inv_var - 1.0);
    }
}

/// Single-hidden-layer MLP with diagonal-Gaussian output:
///
/// ```text
/// h       = tanh(W_hidden · input + b_hidden)
/// μ       = W_mean · h + b_mean          (sigmoid applied if clamped)
/// log σ²  = W_log_var · h + b_log_var    (projected onto [-10, 10])
/// ```
///
/// Used both as the encoder `q(z|x)` and as a decoder `p(x|z)` for
/// real-valued data.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianMlp {
    pub w_hidden: Matrix,
    pub b_hidden: Vec<f64>,
    pub w_mean: Matrix,
    pub b_mean: Vec<f64>,
    pub w_log_var: Matrix,
    pub b_log_var: Vec<f64>,
    pub clamp_mean_unit_interval: bool,
}

/// Intermediate values kept by [`GaussianMlp::forward_traced`].
#[derive(Clone, Debug)]
pub struct GaussianTrace {
    pub hidden: Vec<f64>,
    pub log_var_pre: Vec<f64>,
}

impl GaussianMlp {
    pub fn zeros(input: usize, hidden: usize, output: usize, clamp_mean: bool) -> Self {
        Self {
            w_hidden: Matrix::zeros(hidden, input),
            b_hidden: vec![0.0; hidden],
            w_mean: Matrix::zeros(output, hidden),
            b_mean: vec![0.0; output],
            w_log_var: Matrix::zeros(output, hidden),
            b_log_var: vec![0.0; output],
            clamp_mean_unit_interval: clamp_mean,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_hidden.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_hidden.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.w_mean.rows()
    }

    pub fn check_shapes(&self) -> Result<()> {
        let h = self.hidden_dim();
        let o = self.output_dim();
        let ok = self.b_hidden.len() == h
            && self.w_mean.cols() == h
            && self.b_mean.len() == o
            && self.w_log_var.shape() == (o, h)
            && self.b_log_var.len() == o;
        if ok {
            Ok(())
        } else {
            Err(AevbError::shape(
                "GaussianMlp",
                format!("hidden {h}, output {o}"),
                format!(
                    "b_hidden {}, w_mean {:?}, b_mean {}, w_log_var {:?}, b_log_var {}",
                    self.b_hidden.len(),
                    self.w_mean.shape(),
                    self.b_mean.len(),
                    self.w_log_var.shape(),
                    self.b_log_var.len()
                ),
            ))
        }
    }

    pub fn forward(&self, input: &[f64]) -> Result<GaussianParams> {
        Ok(self.forward_traced(input)?.0)
    }

    pub fn forward_traced(&self, input: &[f64]) -> Result<(GaussianParams, GaussianTrace)> {
        if input.len() != self.input_dim() {
            return Err(AevbError::shape(
                "GaussianMlp::forward",
                format!("input of length {}", input.len()),
                format!("w_hidden {}x{}", self.w_hidden.rows(), self.w_hidden.cols()),
            ));
        }
        let mut hidden = vec![0.0; self.hidden_dim()];
        affine(&self.w_hidden, input, &self.b_hidden, &mut hidden);
        hidden.iter_mut().for_each(|v| *v = v.tanh());

        let mut mean = vec![0.0; self.output_dim()];
        affine(&self.w_mean, &hidden, &self.b_mean, &mut mean);
        if self.clamp_mean_unit_interval {
            mean.iter_mut().for_each(|v| *v = sigmoid(*v));
        }

        let mut log_var_pre = vec![0.0; self.output_dim()];
        affine(&self.w_log_var, &hidden, &self.b_log_var, &mut log_var_pre);
        let log_var = log_var_pre
            .iter()
            .map(|v| v.clamp(-LOG_VAR_BOUND, LOG_VAR_BOUND))
            .collect();

        Ok((GaussianParams { mean, log_var }, GaussianTrace { hidden, log_var_pre }))
    }

    /// Backpropagate upstream gradients `d_mean`, `d_log_var` (with respect
    /// to the *outputs*) into `grad` and `d_input`, whichever are given.
    pub fn backward(
        &self,
        input: &[f64],
        out: &GaussianParams,
        trace: &GaussianTrace,
        d_mean: &[f64],
        d_log_var: &[f64],
        grad: Option<&mut GaussianMlp>,
        d_input: Option<&mut [f64]>,
    ) {
        let d_mean_pre: Vec<f64> = if self.clamp_mean_unit_interval {
            d_mean
                .iter()
                .zip(&out.mean)
                .map(|(d, m)| d * m * (1.0 - m))
                .collect()
        } else {
            d_mean.to_vec()
        };
        let d_log_var_pre: Vec<f64> = d_log_var
            .iter()
            .zip(&trace.log_var_pre)
            .map(|(d, pre)| if pre.abs() <= LOG_VAR_BOUND { *d } else { 0.0 })
            .collect();

        let mut grad = grad;
        if let Some(g) = grad.as_deref_mut() {
            add_outer(&mut g.w_mean, 1.0, &d_mean_pre, &trace.hidden);
            add_assign(&mut g.b_mean, &d_mean_pre);
            add_outer(&mut g.w_log_var, 1.0, &d_log_var_pre, &trace.hidden);
            add_assign(&mut g.b_log_var, &d_log_var_pre);
        }

        let mut d_pre = vec![0.0; self.hidden_dim()];
        add_transpose_product(&self.w_mean, &d_mean_pre, &mut d_pre);
        add_transpose_product(&self.w_log_var, &d_log_var_pre, &mut d_pre);
        for (d, h) in d_pre.iter_mut().zip(&trace.hidden) {
            *d *= 1.0 - h * h;
        }

        if let Some(g) = grad {
            add_outer(&mut g.w_hidden, 1.0, &d_pre, input);
            add_assign(&mut g.b_hidden, &d_pre);
        }
        if let Some(d_input) = d_input {
            add_transpose_product(&self.w_hidden, &d_pre, d_input);
        }
    }
}

#[inline]
pub(crate) fn add_assign(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

impl Parameters for GaussianMlp {
    fn blocks(&self) -> Vec<(&'static str, &[f64])> {
        vec![
            ("w_hidden", self.w_hidden.as_slice()),
            ("b_hidden", &self.b_hidden),
            ("w_mean", self.w_mean.as_slice()),
            ("b_mean", &self.b_mean),
            ("w_log_var", self.w_log_var.as_slice()),
            ("b_log_var", &self.b_log_var),
        ]
    }

    fn blocks_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        vec![
            ("w_hidden", self.w_hidden.as_mut_slice()),
            ("b_hidden", &mut self.b_hidden),
            ("w_mean", self.w_mean.as_mut_slice()),
            ("b_mean", &mut self.b_mean),
            ("w_log_var", self.w_log_var.as_mut_slice()),
            ("b_log_var", &mut self.b_log_var),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::{finite_diff_grad, max_relative_error, RngState};

    fn random_net(rng: &mut RngState, i: usize, h: usize, o: usize, clamp: bool) -> GaussianMlp {
        let mut net = GaussianMlp::zeros(i, h, o, clamp);
        let flat = rng.standard_normal_vec(net.num_params());
        net.set_flat(&flat).unwrap();
        net
    }

    #[test]
    fn zero_net_is_standard_normal() {
        let net = GaussianMlp::zeros(3, 4, 2, false);
        let p = net.forward(&[0.3, -1.0, 2.0]).unwrap();
        assert_eq!(p, GaussianParams::standard(2));
    }

    #[test]
    fn biases_pass_through() {
        let mut net = GaussianMlp::zeros(2, 3, 2, false);
        net.b_mean = vec![1.0, 2.0];
        let p = net.forward(&[0.5, 0.5]).unwrap();
        assert_eq!(p.mean, vec![1.0, 2.0]);
        assert_eq!(p.variance(), vec![1.0, 1.0]);
    }

    #[test]
    fn matches_straight_line_formula() {
        let mut rng = RngState::from_seed(12);
        for clamp in [false, true] {
            let net = random_net(&mut rng, 3, 4, 2, clamp);
            let x = rng.standard_normal_vec(3);
            let p = net.forward(&x).unwrap();
            for j in 0..2 {
                let mut m = net.b_mean[j];
                let mut lv = net.b_log_var[j];
                for k in 0..4 {
                    let mut a = net.b_hidden[k];
                    for i in 0..3 {
                        a += net.w_hidden.get(k, i) * x[i];
                    }
                    m += net.w_mean.get(j, k) * a.tanh();
                    lv += net.w_log_var.get(j, k) * a.tanh();
                }
                if clamp {
                    m = 1.0 / (1.0 + (-m).exp());
                    assert!(p.mean[j] > 0.0 && p.mean[j] < 1.0);
                }
                assert!((p.mean[j] - m).abs() < 1e-13);
                assert!((p.log_var[j] - lv.clamp(-10.0, 10.0)).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn log_var_is_clamped() {
        let mut net = GaussianMlp::zeros(1, 1, 2, false);
        net.b_log_var = vec![25.0, -40.0];
        let p = net.forward(&[0.0]).unwrap();
        assert_eq!(p.log_var, vec![10.0, -10.0]);
    }

    #[test]
    fn loglik_values() {
        let std1 = GaussianParams::standard(1);
        assert!((gaussian_loglik(&[0.0], &std1).unwrap() + 0.918_938_533_204_672_7).abs() < 1e-12);
        let p = GaussianParams::new(vec![1.0, -2.0], vec![0.3, -0.7]).unwrap();
        let at_mean = gaussian_loglik(&[1.0, -2.0], &p).unwrap();
        assert!((at_mean + 0.5 * (2.0 * LN_2PI + 0.3 - 0.7)).abs() < 1e-12);
        assert!(gaussian_loglik(&[1.0], &p).is_err());
    }

    #[test]
    fn loglik_matches_density_product() {
        let mut rng = RngState::from_seed(4);
        for _ in 0..20 {
            let x = rng.standard_normal_vec(3);
            let p = GaussianParams::new(rng.standard_normal_vec(3), rng.standard_normal_vec(3)).unwrap();
            let density: f64 = (0..3)
                .map(|j| {
                    let var = p.log_var[j].exp();
                    (-(x[j] - p.mean[j]).powi(2) / (2.0 * var)).exp()
                        / (2.0 * std::f64::consts::PI * var).sqrt()
                })
                .product();
            assert!((gaussian_loglik(&x, &p).unwrap() - density.ln()).abs() < 1e-10);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = RngState::from_seed(99);
        for clamp in [false, true] {
            let net = random_net(&mut rng, 3, 4, 2, clamp);
            let x = rng.standard_normal_vec(3);
            let target = rng.standard_normal_vec(2);
            // Objective: Gaussian log-density of `target` under the net's output.
            let f = |n: &GaussianMlp, input: &[f64]| gaussian_loglik(&target, &n.forward(input).unwrap()).unwrap();

            let (out, trace) = net.forward_traced(&x).unwrap();
            let mut d_mean = vec![0.0; 2];
            let mut d_lv = vec![0.0; 2];
            gaussian_loglik_grad(&target, &out, 1.0, &mut d_mean, &mut d_lv);
            let mut grad = net.zeros_like();
            let mut d_x = vec![0.0; 3];
            net.backward(&x, &out, &trace, &d_mean, &d_lv, Some(&mut grad), Some(&mut d_x));

            let numeric = finite_diff_grad(
                |flat| {
                    let mut n = net.clone();
                    n.set_flat(flat).unwrap();
                    f(&n, &x)
                },
                &net.to_flat(),
                1e-5,
            )
            .unwrap();
            assert!(max_relative_error(&grad.to_flat(), &numeric, 1e-8) < 1e-5);

            let numeric_x = finite_diff_grad(|xx| f(&net, xx), &x, 1e-5).unwrap();
            assert!(max_relative_error(&d_x, &numeric_x, 1e-8) < 1e-5);
        }
    }
}
