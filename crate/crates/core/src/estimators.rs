//! Scalar off-policy value estimators.
//!
//! All estimators are written in terms of the two sample means
//! `W̄ = (1/n) Σ w_i` and `X̄ = (1/n) Σ w_i r_i`:
//!
//! | estimator      | value                 |
//! |----------------|-----------------------|
//! | IPS            | `X̄`                   |
//! | SNIPS          | `X̄ / W̄`               |
//! | β-IPS          | `β + X̄ − β W̄`         |
//!
//! β-IPS is evaluated as `X̄ + β (1 − W̄)`, which is the same quantity but makes
//! `β = 0` and `W̄ = 1` reduce to IPS bit-exactly.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dataset::{Columns, WeightedSample};
use crate::error::{Error, Result};
use crate::scalar::{mean, Real};

/// Which member of the estimator family produced an [`Estimate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EstimatorKind {
    Ips,
    Snips,
    BetaIps,
    BetaStarIps,
    CrossFittedBetaStarIps,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Ips => "ips",
            EstimatorKind::Snips => "snips",
            EstimatorKind::BetaIps => "beta-ips",
            EstimatorKind::BetaStarIps => "beta-star-ips",
            EstimatorKind::CrossFittedBetaStarIps => "cross-fit-beta-star-ips",
        }
    }

    /// Whether the estimator carries an additive baseline.
    pub fn uses_baseline(self) -> bool {
        matches!(
            self,
            EstimatorKind::BetaIps
                | EstimatorKind::BetaStarIps
                | EstimatorKind::CrossFittedBetaStarIps
        )
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A point estimate of `V(π)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate<T> {
    pub value: T,
    pub estimator: EstimatorKind,
    pub n_used: usize,
    /// The baseline `β`; present exactly for the β-family. For the
    /// cross-fitted estimator this is the mean of the per-fold baselines.
    pub baseline: Option<T>,
}

/// Empirical first and second moments of `(w, w r)` with the `1/n` normaliser.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentSummary<T> {
    /// `W̄`
    pub mean_w: T,
    /// `X̄`
    pub mean_wr: T,
    pub var_w: T,
    pub var_wr: T,
    pub cov_w_wr: T,
    /// Sample size the variance formulas divide by.
    pub n: usize,
}

impl<T: Real> MomentSummary<T> {
    /// Same moments, different sample size. Population moments are
    /// per-sample quantities and are rescaled this way before use.
    pub fn with_n(self, n: usize) -> Self {
        Self { n, ..self }
    }

    /// `cov / var`; `None` when `var_w` is not positive.
    pub fn beta_star(&self) -> Option<T> {
        (self.var_w > T::zero()).then(|| self.cov_w_wr / self.var_w)
    }

    /// Cauchy–Schwarz `cov² <= var_w var_wr`, up to `1e-12` relative.
    pub fn is_consistent(&self) -> bool {
        let lhs = self.cov_w_wr * self.cov_w_wr;
        let rhs = self.var_w * self.var_wr;
        self.var_w >= T::zero()
            && self.var_wr >= T::zero()
            && lhs <= rhs + T::lit(1e-12) * rhs.max(lhs)
    }
}

/// `(W̄, X̄)`.
pub(crate) fn sample_means<T: Real, S: WeightedSample<T> + ?Sized>(d: &S) -> (T, T) {
    let n = T::count(d.len());
    let (sw, swr) = d
        .weights()
        .iter()
        .zip(d.rewards())
        .fold((T::zero(), T::zero()), |(sw, swr), (&w, &r)| {
            (sw + w, swr + w * r)
        });
    (sw / n, swr / n)
}

/// Two-pass centred moments of `(w_i, w_i r_i)`.
pub fn empirical_moments<T: Real, S: WeightedSample<T> + ?Sized>(d: &S) -> MomentSummary<T> {
    let n = d.len();
    let nt = T::count(n);
    let (mean_w, mean_wr) = sample_means(d);
    let (mut var_w, mut var_wr, mut cov) = (T::zero(), T::zero(), T::zero());
    for (&w, &r) in d.weights().iter().zip(d.rewards()) {
        let dw = w - mean_w;
        let dx = w * r - mean_wr;
        var_w += dw * dw;
        var_wr += dx * dx;
        cov += dw * dx;
    }
    MomentSummary {
        mean_w,
        mean_wr,
        var_w: var_w / nt,
        var_wr: var_wr / nt,
        cov_w_wr: cov / nt,
        n,
    }
}

/// Inverse propensity scoring, `(1/n) Σ w_i r_i`.
pub fn ips<T: Real, S: WeightedSample<T> + ?Sized>(d: &S) -> Estimate<T> {
    let (_, mean_wr) = sample_means(d);
    Estimate {
        value: mean_wr,
        estimator: EstimatorKind::Ips,
        n_used: d.len(),
        baseline: None,
    }
}

/// Self-normalised IPS, `Σ w_i r_i / Σ w_i`.
pub fn snips<T: Real, S: WeightedSample<T> + ?Sized>(d: &S) -> Result<Estimate<T>> {
    let (mean_w, mean_wr) = sample_means(d);
    if mean_w == T::zero() {
        return Err(Error::ZeroWeightSum { position: None });
    }
    Ok(Estimate {
        value: mean_wr / mean_w,
        estimator: EstimatorKind::Snips,
        n_used: d.len(),
        baseline: None,
    })
}

pub(crate) fn beta_ips_value<T: Real>(mean_w: T, mean_wr: T, beta: T) -> T {
    mean_wr + beta * (T::one() - mean_w)
}

/// IPS with a fixed additive baseline, `β + (1/n) Σ w_i (r_i − β)`.
///
/// Unbiased whenever `beta` does not depend on the data in `d`.
pub fn beta_ips<T: Real, S: WeightedSample<T> + ?Sized>(d: &S, beta: T) -> Estimate<T> {
    let (mean_w, mean_wr) = sample_means(d);
    Estimate {
        value: beta_ips_value(mean_w, mean_wr, beta),
        estimator: EstimatorKind::BetaIps,
        n_used: d.len(),
        baseline: Some(beta),
    }
}

/// How the plug-in optimal baseline is formed from the sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BetaStarForm {
    /// `Cov(w, wr) / Var(w)` with sample-centred moments.
    #[default]
    Centered,
    /// `(mean(w² r) − mean(w r)) / (mean(w²) − 1)`: centres at the population
    /// mean weight 1 instead of `W̄`. Agrees with `Centered` only when `W̄ = 1`.
    Uncentered,
}

fn all_equal<T: Real>(xs: &[T]) -> bool {
    xs.windows(2).all(|p| p[0] == p[1])
}

/// Plug-in variance-minimising baseline `β̂* = σ̂_{w,wr} / σ̂_w²`.
pub fn beta_star_hat<T: Real, S: WeightedSample<T> + ?Sized>(d: &S) -> Result<T> {
    beta_star_hat_with(d, BetaStarForm::Centered)
}

pub fn beta_star_hat_with<T: Real, S: WeightedSample<T> + ?Sized>(
    d: &S,
    form: BetaStarForm,
) -> Result<T> {
    // Zero variance in exact arithmetic; a rounded two-pass variance can be a
    // denormal instead of 0, so test the weights themselves.
    if all_equal(d.weights()) {
        return Err(Error::DegenerateWeights { positions: vec![] });
    }
    match form {
        BetaStarForm::Centered => {
            let m = empirical_moments(d);
            Ok(m.cov_w_wr / m.var_w)
        }
        BetaStarForm::Uncentered => {
            let n = T::count(d.len());
            let (mut sw2, mut sw2r, mut swr) = (T::zero(), T::zero(), T::zero());
            for (&w, &r) in d.weights().iter().zip(d.rewards()) {
                sw2 += w * w;
                sw2r += w * w * r;
                swr += w * r;
            }
            let denom = sw2 / n - T::one();
            if denom == T::zero() {
                return Err(Error::DegenerateWeights { positions: vec![] });
            }
            Ok((sw2r / n - swr / n) / denom)
        }
    }
}

/// β-IPS at the in-sample plug-in `β̂*`.
///
/// Because `β̂*` is estimated from the same data, this carries a bias of
/// order `1/n`; [`cross_fitted_beta_ips`] removes it.
pub fn beta_star_ips<T: Real, S: WeightedSample<T> + ?Sized>(d: &S) -> Result<Estimate<T>> {
    let beta = beta_star_hat(d)?;
    Ok(Estimate {
        estimator: EstimatorKind::BetaStarIps,
        ..beta_ips(d, beta)
    })
}

/// Fold layout for [`cross_fitted_beta_ips`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CrossFitConfig {
    pub folds_k: usize,
    pub seed: u64,
}

impl Default for CrossFitConfig {
    fn default() -> Self {
        Self {
            folds_k: 5,
            seed: 0,
        }
    }
}

/// Near-equal folds over a seeded permutation of `0..n`: the first `n % k`
/// folds get one extra index.
pub fn fold_assignment(n: usize, cfg: CrossFitConfig) -> Result<Vec<Vec<usize>>> {
    if cfg.folds_k < 2 {
        return Err(Error::InvalidFolds(cfg.folds_k));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let base = n / cfg.folds_k;
    let extra = n % cfg.folds_k;
    let mut folds = Vec::with_capacity(cfg.folds_k);
    let mut start = 0;
    for f in 0..cfg.folds_k {
        let size = base + usize::from(f < extra);
        if size < 2 {
            return Err(Error::FoldTooSmall { fold: f, size });
        }
        folds.push(order[start..start + size].to_vec());
        start += size;
    }
    Ok(folds)
}

/// Cross-fitted β̂*-IPS.
///
/// For each fold, `β̂*` is estimated on that fold alone and β-IPS is evaluated
/// on the remaining `k − 1` folds; the `k` values are averaged. The baseline
/// never sees the data it is applied to, so for a fixed fold layout the
/// estimator is exactly unbiased.
pub fn cross_fitted_beta_ips<T: Real, S: WeightedSample<T> + ?Sized>(
    d: &S,
    cfg: CrossFitConfig,
) -> Result<Estimate<T>> {
    let n = d.len();
    let folds = fold_assignment(n, cfg)?;
    let (w, r) = (d.weights(), d.rewards());
    let mut in_fold = vec![usize::MAX; n];
    for (f, idx) in folds.iter().enumerate() {
        for &i in idx {
            in_fold[i] = f;
        }
    }

    let mut values = Vec::with_capacity(folds.len());
    let mut baselines = Vec::with_capacity(folds.len());
    for (f, idx) in folds.iter().enumerate() {
        let fw: Vec<T> = idx.iter().map(|&i| w[i]).collect();
        let fr: Vec<T> = idx.iter().map(|&i| r[i]).collect();
        let beta = beta_star_hat(&Columns::new(&fw, &fr, d.reward_bound(), d.weight_bound()))?;
        let (cw, cr): (Vec<T>, Vec<T>) = (0..n)
            .filter(|&i| in_fold[i] != f)
            .map(|i| (w[i], r[i]))
            .unzip();
        let complement = Columns::new(&cw, &cr, d.reward_bound(), d.weight_bound());
        values.push(beta_ips(&complement, beta).value);
        baselines.push(beta);
    }
    Ok(Estimate {
        value: mean(&values),
        estimator: EstimatorKind::CrossFittedBetaStarIps,
        n_used: n,
        baseline: Some(mean(&baselines)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cols<'a>(w: &'a [f64], r: &'a [f64]) -> Columns<'a, f64> {
        Columns::new(w, r, 10.0, 10.0)
    }

    const EPS: f64 = 1e-12;

    #[test]
    fn moments_identity_weights() {
        let m = empirical_moments(&cols(&[1.0, 1.0], &[0.5, 0.7]));
        assert_eq!(m.mean_w, 1.0);
        assert!((m.mean_wr - 0.6).abs() < EPS);
        assert_eq!(m.var_w, 0.0);
        assert_eq!(m.n, 2);
    }

    #[test]
    fn moments_two_rows() {
        let m = empirical_moments(&cols(&[2.0, 0.5], &[1.0, 0.0]));
        assert_eq!(m.mean_w, 1.25);
        assert_eq!(m.mean_wr, 1.0);
        assert_eq!(m.var_w, 0.5625);
        assert_eq!(m.cov_w_wr, 0.75);
        assert_eq!(m.var_wr, 1.0);
        assert!(m.is_consistent());
    }

    #[test]
    fn moments_four_rows() {
        let m = empirical_moments(&cols(&[0.5, 1.5, 1.0, 1.0], &[1.0, 0.0, 1.0, 0.0]));
        assert_eq!(m.mean_w, 1.0);
        assert_eq!(m.mean_wr, 0.375);
    }

    #[test]
    fn ips_examples() {
        assert!((ips(&cols(&[1.0, 1.0], &[0.5, 0.7])).value - 0.6).abs() < EPS);
        assert_eq!(ips(&cols(&[2.0, 0.5], &[1.0, 0.0])).value, 1.0);
        let e = ips(&cols(&[0.5, 1.5, 1.0, 1.0], &[1.0, 0.0, 1.0, 0.0]));
        assert_eq!(e.value, 0.375);
        assert_eq!(e.estimator, EstimatorKind::Ips);
        assert_eq!(e.baseline, None);
        assert_eq!(e.n_used, 4);
    }

    #[test]
    fn snips_examples() {
        assert!((snips(&cols(&[1.0, 1.0], &[0.5, 0.7])).unwrap().value - 0.6).abs() < EPS);
        assert_eq!(snips(&cols(&[2.0, 0.5], &[1.0, 0.0])).unwrap().value, 0.8);
        assert_eq!(
            snips(&cols(&[0.0, 0.0], &[1.0, 1.0])).unwrap_err(),
            Error::ZeroWeightSum { position: None }
        );
    }

    #[test]
    fn beta_ips_examples() {
        let d = cols(&[2.0, 0.5], &[1.0, 0.0]);
        let e = beta_ips(&d, 0.5);
        assert_eq!(e.value, 0.875);
        assert_eq!(e.baseline, Some(0.5));
        assert_eq!(beta_ips(&d, 0.0).value, 1.0);
        let d = cols(&[0.5, 1.5, 1.0, 1.0], &[1.0, 0.0, 1.0, 0.0]);
        for beta in [-3.0, 0.0, 0.2, 7.5] {
            assert_eq!(beta_ips(&d, beta).value, 0.375);
        }
    }

    #[test]
    fn beta_star_examples() {
        let d = cols(&[2.0, 0.5], &[1.0, 0.0]);
        assert!((beta_star_hat(&d).unwrap() - 4.0 / 3.0).abs() < EPS);
        let e = beta_star_ips(&d).unwrap();
        assert!((e.value - 2.0 / 3.0).abs() < EPS);
        assert_eq!(e.estimator, EstimatorKind::BetaStarIps);
        assert!((e.baseline.unwrap() - 4.0 / 3.0).abs() < EPS);

        assert_eq!(
            beta_star_hat(&cols(&[1.0, 1.0], &[0.5, 0.7])).unwrap_err(),
            Error::DegenerateWeights { positions: vec![] }
        );

        let d = cols(&[0.5, 1.5], &[1.0, 0.0]);
        assert!((beta_star_hat(&d).unwrap() + 0.5).abs() < EPS);
        assert!((beta_star_ips(&d).unwrap().value - 0.25).abs() < EPS);
    }

    #[test]
    fn constant_reward_forces_baseline() {
        let w = [0.2, 3.0, 1.1, 0.7, 0.0];
        let r = [0.4; 5];
        let d = cols(&w, &r);
        assert!((beta_star_hat(&d).unwrap() - 0.4).abs() < EPS);
        assert!((beta_star_ips(&d).unwrap().value - 0.4).abs() < EPS);
    }

    #[test]
    fn uncentered_form_matches_when_mean_weight_is_one() {
        let d = cols(&[0.5, 1.5, 1.0, 1.0], &[1.0, 0.0, 1.0, 0.0]);
        let c = beta_star_hat_with(&d, BetaStarForm::Centered).unwrap();
        let u = beta_star_hat_with(&d, BetaStarForm::Uncentered).unwrap();
        assert!((c - u).abs() < EPS);
        // W̄ = 1.25 here, so the two forms differ.
        let d = cols(&[2.0, 0.5], &[1.0, 0.0]);
        let u = beta_star_hat_with(&d, BetaStarForm::Uncentered).unwrap();
        // (mean(w²r) − mean(wr)) / (mean(w²) − 1) = (2 − 1) / (2.125 − 1)
        assert!((u - 1.0 / 1.125).abs() < EPS);
    }

    #[test]
    fn cross_fit_identity_weights() {
        let w = [1.0; 4];
        let r = [1.0, 0.0, 1.0, 0.0];
        // Identity weights make every fold degenerate.
        assert!(matches!(
            cross_fitted_beta_ips(
                &cols(&w, &r),
                CrossFitConfig {
                    folds_k: 2,
                    seed: 3
                }
            ),
            Err(Error::DegenerateWeights { .. })
        ));
    }

    #[test]
    fn cross_fit_fold_errors() {
        let w = [1.0, 2.0, 0.5];
        let r = [1.0, 0.0, 1.0];
        assert_eq!(
            cross_fitted_beta_ips(
                &cols(&w, &r),
                CrossFitConfig {
                    folds_k: 4,
                    seed: 0
                }
            )
            .unwrap_err(),
            Error::FoldTooSmall { fold: 0, size: 1 }
        );
        assert_eq!(
            cross_fitted_beta_ips(
                &cols(&w, &r),
                CrossFitConfig {
                    folds_k: 1,
                    seed: 0
                }
            )
            .unwrap_err(),
            Error::InvalidFolds(1)
        );
    }

    #[test]
    fn fold_assignment_partitions() {
        let folds = fold_assignment(
            23,
            CrossFitConfig {
                folds_k: 5,
                seed: 9,
            },
        )
        .unwrap();
        let sizes: Vec<_> = folds.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![5, 5, 5, 4, 4]);
        let mut all: Vec<_> = folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..23).collect::<Vec<_>>());
        assert_eq!(
            folds,
            fold_assignment(
                23,
                CrossFitConfig {
                    folds_k: 5,
                    seed: 9
                }
            )
            .unwrap()
        );
    }

    #[test]
    fn cross_fit_hand_oracle() {
        // Recompute the protocol by hand from the published fold layout.
        let w = [0.2, 1.8, 0.6, 1.4, 2.5, 0.3, 0.9, 1.1, 0.4, 1.6];
        let r = [1.0, 0.0, 0.5, 1.0, 0.0, 1.0, 0.2, 0.8, 1.0, 0.0];
        let cfg = CrossFitConfig {
            folds_k: 2,
            seed: 17,
        };
        let folds = fold_assignment(w.len(), cfg).unwrap();
        let mut total = 0.0;
        for (f, fold) in folds.iter().enumerate() {
            let other = &folds[1 - f];
            let fm = |ix: &[usize], g: &dyn Fn(usize) -> f64| {
                ix.iter().map(|&i| g(i)).sum::<f64>() / ix.len() as f64
            };
            let mw = fm(fold, &|i| w[i]);
            let mx = fm(fold, &|i| w[i] * r[i]);
            let cov = fm(fold, &|i| (w[i] - mw) * (w[i] * r[i] - mx));
            let var = fm(fold, &|i| (w[i] - mw).powi(2));
            let beta = cov / var;
            let cw = fm(other, &|i| w[i]);
            let cx = fm(other, &|i| w[i] * r[i]);
            total += beta + cx - beta * cw;
        }
        let e = cross_fitted_beta_ips(&cols(&w, &r), cfg).unwrap();
        assert!((e.value - total / 2.0).abs() < 1e-12);
    }

    #[test]
    fn f32_path() {
        let w = [2.0f32, 0.5];
        let r = [1.0f32, 0.0];
        let d = Columns::new(&w[..], &r[..], 1.0, 5.0);
        assert_eq!(snips(&d).unwrap().value, 0.8f32);
        assert!((beta_star_ips(&d).unwrap().value - 2.0 / 3.0).abs() < 1e-6);
    }

    fn dataset() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (2usize..60).prop_flat_map(|n| {
            (
                prop::collection::vec(0.0f64..5.0, n),
                prop::collection::vec(-1.0f64..1.0, n),
            )
        })
    }

    proptest! {
        #[test]
        fn zero_baseline_is_ips((w, r) in dataset()) {
            let d = cols(&w, &r);
            prop_assert_eq!(beta_ips(&d, 0.0).value, ips(&d).value);
        }

        #[test]
        fn unit_mean_weight_collapses((_w, r) in dataset(), beta in -5.0f64..5.0) {
            let w = vec![1.0; r.len()];
            let d = cols(&w, &r);
            let v = ips(&d).value;
            prop_assert_eq!(snips(&d).unwrap().value, v);
            prop_assert_eq!(beta_ips(&d, beta).value, v);
        }

        #[test]
        fn plug_in_baseline_minimises_sample_quadratic((w, r) in dataset(), probe in -10.0f64..10.0) {
            let d = cols(&w, &r);
            prop_assume!(beta_star_hat(&d).is_ok());
            let m = empirical_moments(&d);
            prop_assert!(m.is_consistent());
            let b = beta_star_hat(&d).unwrap();
            let q = |beta: f64| m.var_wr - 2.0 * beta * m.cov_w_wr + beta * beta * m.var_w;
            let scale = m.var_wr + m.cov_w_wr.abs() * (1.0 + probe.abs()) + m.var_w * (1.0 + probe * probe);
            prop_assert!(q(b) <= q(probe) + 1e-12 * scale);
        }

        #[test]
        fn beta_ips_matches_definition((w, r) in dataset(), beta in -3.0f64..3.0) {
            let d = cols(&w, &r);
            let direct = beta + w.iter().zip(&r).map(|(w, r)| w * (r - beta)).sum::<f64>() / w.len() as f64;
            let scale = 1.0 + beta.abs() * 6.0;
            prop_assert!((beta_ips(&d, beta).value - direct).abs() <= 1e-12 * scale);
        }
    }
}
