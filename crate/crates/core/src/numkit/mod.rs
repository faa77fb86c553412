//! Numeric substrate: dense matrices, the seeded generator and the
//! finite-difference gradient oracle.

mod finite_diff;
mod matrix;
mod rng;

pub use finite_diff::{finite_diff_grad, max_relative_error};
pub use matrix::{add_outer, add_transpose_product, affine, dot, matmul, Matrix};
pub use rng::{mix_seed, splitmix64, RngState};

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln Σ exp(vᵢ)`, stable for large magnitudes. Empty input gives `-∞`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Sample mean and unbiased variance.
pub fn mean_var(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var)
}


/// Standard normal CDF Φ.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal quantile Φ⁻¹ on (0, 1); `±∞` at the endpoints.
pub fn normal_quantile(u: f64) -> f64 {
    -std::f64::consts::SQRT_2 * statrs::function::erf::erfc_inv(2.0 * u)
}

#[cfg(test)]
mod quantile_tests {
    use super::*;

    #[test]
    fn quantile_inverts_cdf() {
        for i in 1..1000 {
            let u = i as f64 / 1000.0;
            assert!((normal_cdf(normal_quantile(u)) - u).abs() < 1e-10, "u={u}");
        }
        assert_eq!(normal_quantile(0.5), 0.0);
        // Reference values from scipy.special.ndtri.
        assert!((normal_quantile(0.023) + 1.995_393_310_167_824_7).abs() < 1e-12);
        assert!((normal_quantile(0.9) - 1.281_551_565_544_600_4).abs() < 1e-12);
        assert!((normal_quantile(0.975) - 1.959_963_984_540_054).abs() < 1e-9);
        assert!((normal_quantile(1e-10) + 6.361_340_902_404_056).abs() < 1e-8);
    }

    #[test]
    fn cdf_reference_values() {
        // scipy.special.ndtr
        for (x, want) in [
            (0.3, 0.617_911_422_188_952_6),
            (2.5, 0.993_790_334_674_223_8),
            (-4.0, 3.167_124_183_311_986e-5),
        ] {
            assert!((normal_cdf(x) - want).abs() < 1e-10, "x={x}");
        }
        assert_eq!(normal_cdf(0.0), 0.5);
    }
}
