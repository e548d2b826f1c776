//! Closed-form variance analysis of β-IPS versus SNIPS, and remainder
//! diagnostics for the exact decomposition `SNIPS = β-IPS(V) + R_n`.
//!
//! The variance formulas take a [`MomentSummary`] rather than a dataset so the
//! same code serves empirical moments and exact population moments from the
//! simulator.

use crate::dataset::WeightedSample;
use crate::error::{Error, Result};
use crate::estimators::{sample_means, MomentSummary};
use crate::scalar::{mean, Real};

/// `(1/n)(σ_wr² − 2β σ_{w,wr} + β² σ_w²)`.
fn baseline_quadratic<T: Real>(m: &MomentSummary<T>, beta: T) -> T {
    let two = T::lit(2.0);
    (m.var_wr - two * beta * m.cov_w_wr + beta * beta * m.var_w) / T::count(m.n)
}

/// Variance of β-IPS at a fixed baseline.
pub fn beta_ips_variance<T: Real>(m: &MomentSummary<T>, beta: T) -> T {
    baseline_quadratic(m, beta)
}

/// Delta-method asymptotic variance of SNIPS. It is the β-IPS variance with
/// the baseline pinned to the true value `V`.
pub fn snips_avar<T: Real>(m: &MomentSummary<T>, true_value: T) -> T {
    baseline_quadratic(m, true_value)
}

/// `(1/n)(σ_wr² − σ_{w,wr}² / σ_w²)`, the minimum of [`beta_ips_variance`].
pub fn optimal_variance<T: Real>(m: &MomentSummary<T>) -> Result<T> {
    if !(m.var_w > T::zero()) {
        return Err(Error::DegenerateWeights { positions: vec![] });
    }
    Ok((m.var_wr - m.cov_w_wr * m.cov_w_wr / m.var_w) / T::count(m.n))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceGapReport<T> {
    /// β-IPS variance at the baseline the report was built for
    /// (`V` itself for [`variance_gap`]).
    pub var_beta: T,
    pub var_beta_star: T,
    pub avar_snips: T,
    /// `Δ = (V σ_w² − σ_{w,wr})² / (n σ_w²)`.
    pub gap_delta: T,
    pub n: usize,
}

/// Exact gap between SNIPS's asymptotic variance and the optimal β-IPS variance.
pub fn variance_gap<T: Real>(m: &MomentSummary<T>, true_value: T) -> Result<VarianceGapReport<T>> {
    variance_gap_at(m, true_value, true_value)
}

/// As [`variance_gap`], with `var_beta` evaluated at an arbitrary `beta`.
pub fn variance_gap_at<T: Real>(
    m: &MomentSummary<T>,
    true_value: T,
    beta: T,
) -> Result<VarianceGapReport<T>> {
    let var_beta_star = optimal_variance(m)?;
    let excess = true_value * m.var_w - m.cov_w_wr;
    Ok(VarianceGapReport {
        var_beta: beta_ips_variance(m, beta),
        var_beta_star,
        avar_snips: snips_avar(m, true_value),
        gap_delta: excess * excess / (T::count(m.n) * m.var_w),
        n: m.n,
    })
}

/// Pieces of the exact decomposition of SNIPS around β-IPS at baseline `V`.
#[derive(Debug, Clone, PartialEq)]
pub struct RemainderDiagnostics<T> {
    /// `L_n = X̄ − V W̄`.
    pub l_n: T,
    pub w_bar: T,
    /// `R_n = L_n (1 − W̄) / W̄`, so that `SNIPS = β-IPS(V) + R_n` exactly.
    pub r_n: T,
    /// `L_n (1 − W̄)`, the first-order stand-in for `R_n` when `W̄ ≈ 1`.
    pub r_n_linearised: T,
    /// `W̄ >= 1/2`.
    pub event_holds: bool,
    /// `U_i = w_i (r_i − V)`.
    pub u_series: Vec<T>,
    /// `T_i = w_i − 1`.
    pub t_series: Vec<T>,
    reward_bound: T,
    weight_bound: T,
}

impl<T: Real> RemainderDiagnostics<T> {
    /// `max |U_i| <= R W (1 + W)` and `max |T_i| <= W` under the declared envelopes.
    ///
    /// The second bound presumes `W >= 1`, which any weight distribution with
    /// unit mean satisfies.
    pub fn centred_bounds_hold(&self) -> bool {
        let (r, w) = (self.reward_bound, self.weight_bound);
        let u_max = r * w * (T::one() + w);
        self.u_series.iter().all(|u| u.abs() <= u_max) && self.t_series.iter().all(|t| t.abs() <= w)
    }
}

pub fn remainder_diagnostics<T: Real, S: WeightedSample<T> + ?Sized>(
    d: &S,
    true_value: T,
) -> Result<RemainderDiagnostics<T>> {
    let (w_bar, x_bar) = sample_means(d);
    if w_bar == T::zero() {
        return Err(Error::ZeroWeightSum { position: None });
    }
    let l_n = x_bar - true_value * w_bar;
    let one_minus = T::one() - w_bar;
    Ok(RemainderDiagnostics {
        l_n,
        w_bar,
        r_n: l_n * one_minus / w_bar,
        r_n_linearised: l_n * one_minus,
        event_holds: w_bar >= T::lit(0.5),
        u_series: d
            .weights()
            .iter()
            .zip(d.rewards())
            .map(|(&w, &r)| w * (r - true_value))
            .collect(),
        t_series: d.weights().iter().map(|&w| w - T::one()).collect(),
        reward_bound: d.reward_bound(),
        weight_bound: d.weight_bound(),
    })
}

impl<T: Real> RemainderDiagnostics<T> {
    /// `mean(U)`, which equals `L_n` up to rounding.
    pub fn mean_u(&self) -> T {
        mean(&self.u_series)
    }

    /// `mean(T)`, which equals `W̄ − 1` up to rounding.
    pub fn mean_t(&self) -> T {
        mean(&self.t_series)
    }
}

/// Hoeffding bound `exp(−n / (2 W²))` on `P(W̄ < 1/2)` for weights in `[0, W]` with unit mean.
pub fn hoeffding_tail_bound(n: usize, weight_bound: f64) -> f64 {
    (-(n as f64) / (2.0 * weight_bound * weight_bound)).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Columns;
    use crate::estimators::{beta_ips, empirical_moments, snips};
    use crate::scalar::approx_eq_scaled;
    use proptest::prelude::*;

    fn moments(var_wr: f64, cov: f64, var_w: f64, n: usize) -> MomentSummary<f64> {
        MomentSummary {
            mean_w: 1.0,
            mean_wr: 0.0,
            var_w,
            var_wr,
            cov_w_wr: cov,
            n,
        }
    }

    #[test]
    fn beta_variance_examples() {
        assert!((beta_ips_variance(&moments(1.0, 0.0, 1.0, 10), 0.0) - 0.1).abs() < 1e-15);
        assert!((beta_ips_variance(&moments(1.0, 0.3, 0.25, 100), 1.2) - 0.0064).abs() < 1e-15);
        let m = moments(1.0, 0.3, 0.25, 100);
        let at_star = beta_ips_variance(&m, 0.3 / 0.25);
        assert!((at_star - optimal_variance(&m).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn snips_avar_examples() {
        let m = moments(1.0, 0.3, 0.25, 100);
        assert_eq!(snips_avar(&m, 0.0), 0.01);
        assert!((snips_avar(&m, 0.5) - 0.007625).abs() < 1e-15);
        for v in [-1.0, 0.0, 0.26, 3.0] {
            assert_eq!(
                snips_avar(&m, v).to_bits(),
                beta_ips_variance(&m, v).to_bits()
            );
        }
    }

    #[test]
    fn gap_examples() {
        let m = moments(1.0, 0.1, 0.25, 1000);
        let g = variance_gap(&m, 0.8).unwrap();
        assert!((g.gap_delta - 4.0e-5).abs() < 1e-18);
        assert!((g.avar_snips - g.var_beta_star - g.gap_delta).abs() < 1e-15);
        assert_eq!(g.var_beta, g.avar_snips);

        let g = variance_gap(&m, 0.1 / 0.25).unwrap();
        assert!(g.gap_delta.abs() < 1e-20);

        assert_eq!(
            variance_gap(&moments(1.0, 0.0, 0.0, 10), 0.5).unwrap_err(),
            Error::DegenerateWeights { positions: vec![] }
        );

        let g = variance_gap_at(&m, 0.8, 0.0).unwrap();
        assert!((g.var_beta - 1.0 / 1000.0).abs() < 1e-18);
    }

    #[test]
    fn remainder_example() {
        let w = [2.0f64, 0.5];
        let r = [1.0f64, 0.0];
        let d = Columns::new(&w[..], &r[..], 1.0, 5.0);
        let rd = remainder_diagnostics(&d, 0.5).unwrap();
        assert_eq!(rd.l_n, 0.375);
        assert_eq!(rd.w_bar, 1.25);
        assert!((rd.r_n + 0.075).abs() < 1e-15);
        assert!((snips(&d).unwrap().value - (beta_ips(&d, 0.5).value + rd.r_n)).abs() < 1e-15);
        assert!(rd.event_holds);
        assert!(rd.centred_bounds_hold());
        assert_eq!(rd.u_series, vec![1.0, -0.25]);
        assert_eq!(rd.t_series, vec![1.0, -0.5]);
    }

    #[test]
    fn remainder_vanishes_at_unit_mean_weight() {
        let w = [0.5, 1.5, 1.0, 1.0];
        let r = [1.0, 0.0, 1.0, 0.0];
        let d = Columns::new(&w[..], &r[..], 1.0, 5.0);
        for v in [-2.0, 0.0, 0.3, 9.0] {
            assert_eq!(remainder_diagnostics(&d, v).unwrap().r_n, 0.0);
        }
    }

    #[test]
    fn remainder_zero_weights() {
        let w = [0.0, 0.0];
        let r = [1.0, 1.0];
        assert_eq!(
            remainder_diagnostics(&Columns::new(&w[..], &r[..], 1.0, 5.0), 0.2).unwrap_err(),
            Error::ZeroWeightSum { position: None }
        );
    }

    #[test]
    fn low_mean_weight_flags_event() {
        let w = [0.1, 0.2, 0.0];
        let r = [1.0, 0.0, 1.0];
        let rd = remainder_diagnostics(&Columns::new(&w[..], &r[..], 1.0, 5.0), 0.2).unwrap();
        assert!(!rd.event_holds);
    }

    #[test]
    fn hoeffding_examples() {
        assert!((hoeffding_tail_bound(100, 5.0) - (-2.0f64).exp()).abs() < 1e-15);
        assert!((hoeffding_tail_bound(2, 1.0) - 0.367_879_441_171_442_3).abs() < 1e-15);
        let seq: Vec<f64> = [1, 10, 100, 1000, 10_000]
            .iter()
            .map(|&n| hoeffding_tail_bound(n, 3.0))
            .collect();
        assert!(seq.windows(2).all(|p| p[1] < p[0]));
    }

    proptest! {
        #[test]
        fn gap_identity(
            var_w in 1e-3f64..10.0,
            var_wr in 0.0f64..10.0,
            rho in -1.0f64..1.0,
            v in -3.0f64..3.0,
            n in 1usize..100_000,
        ) {
            let cov = rho * (var_w * var_wr).sqrt();
            let m = moments(var_wr, cov, var_w, n);
            let g = variance_gap(&m, v).unwrap();
            prop_assert!(g.gap_delta >= 0.0);
            prop_assert!(approx_eq_scaled(g.avar_snips - g.var_beta_star, g.gap_delta, &[g.avar_snips, g.var_beta_star], 1e-10));
        }

        #[test]
        fn quadratic_minimised_at_beta_star(
            var_w in 1e-3f64..10.0,
            var_wr in 0.0f64..10.0,
            rho in -1.0f64..1.0,
            probe in -20.0f64..20.0,
        ) {
            let m = moments(var_wr, rho * (var_w * var_wr).sqrt(), var_w, 50);
            let star = beta_ips_variance(&m, m.beta_star().unwrap());
            let scale = beta_ips_variance(&m, probe).abs() + star.abs();
            prop_assert!(star <= beta_ips_variance(&m, probe) + 1e-12 * scale);
        }

        #[test]
        fn decomposition_and_series(
            rows in prop::collection::vec((0.0f64..5.0, -1.0f64..1.0), 2..100),
            v in -2.0f64..2.0,
        ) {
            let (w, r): (Vec<f64>, Vec<f64>) = rows.into_iter().unzip();
            let d = Columns::new(&w, &r, 1.0, 5.0);
            prop_assume!(w.iter().any(|&x| x > 0.0));
            let rd = remainder_diagnostics(&d, v).unwrap();
            let s = snips(&d).unwrap().value;
            let b = beta_ips(&d, v).value;
            let m = empirical_moments(&d);
            prop_assert!(approx_eq_scaled(s, b + rd.r_n, &[m.mean_wr, v * rd.w_bar, v], 1e-12));
            prop_assert!(approx_eq_scaled(rd.mean_u(), rd.l_n, &[m.mean_wr, v * rd.w_bar], 1e-12));
            prop_assert!(approx_eq_scaled(rd.mean_t(), rd.w_bar - 1.0, &[rd.w_bar, 1.0], 1e-12));
            prop_assert!(rd.centred_bounds_hold());
        }
    }
}
