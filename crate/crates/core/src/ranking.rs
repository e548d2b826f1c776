//! Item-position-model estimators over ranked logs.
//!
//! Under the item-position model the reward at position `j` depends only on
//! the item shown there, so a ranking estimate is a sum of scalar estimates
//! over the position marginals `(w_j, r_j)`. Each position is handled by the
//! scalar code in [`crate::estimators`] without modification, which is what
//! makes the `k = 1` case agree bit-exactly with the scalar estimators.
//! No cross-position covariance is estimated.

use crate::dataset::RankedDataset;
use crate::error::{Error, Result};
use crate::estimators::{beta_ips, beta_star_hat, empirical_moments, ips, snips, MomentSummary};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositionEstimate<T> {
    pub estimate: T,
    pub baseline: Option<T>,
    pub moments: MomentSummary<T>,
}

/// Per-position estimates and their sum.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionwiseReport<T> {
    pub per_position: Vec<PositionEstimate<T>>,
    pub total: T,
}

impl<T: Real> PositionwiseReport<T> {
    fn from_positions(per_position: Vec<PositionEstimate<T>>) -> Self {
        let total = per_position.iter().map(|p| p.estimate).sum();
        Self {
            per_position,
            total,
        }
    }

    pub fn estimates(&self) -> Vec<T> {
        self.per_position.iter().map(|p| p.estimate).collect()
    }

    pub fn baselines(&self) -> Option<Vec<T>> {
        self.per_position.iter().map(|p| p.baseline).collect()
    }
}

/// Sum of position-wise IPS estimates.
pub fn ipm<T: Real>(d: &RankedDataset<T>) -> PositionwiseReport<T> {
    PositionwiseReport::from_positions(
        d.positions()
            .map(|p| PositionEstimate {
                estimate: ips(&p).value,
                baseline: None,
                moments: empirical_moments(&p),
            })
            .collect(),
    )
}

/// Sum of position-wise SNIPS estimates.
pub fn snipm<T: Real>(d: &RankedDataset<T>) -> Result<PositionwiseReport<T>> {
    let per_position = d
        .positions()
        .enumerate()
        .map(|(j, p)| {
            let estimate = snips(&p)
                .map_err(|_| Error::ZeroWeightSum { position: Some(j) })?
                .value;
            Ok(PositionEstimate {
                estimate,
                baseline: None,
                moments: empirical_moments(&p),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PositionwiseReport::from_positions(per_position))
}

/// Position-wise β-IPS with one fixed baseline per position.
pub fn beta_ipm<T: Real>(d: &RankedDataset<T>, betas: &[T]) -> Result<PositionwiseReport<T>> {
    if betas.len() != d.k() {
        return Err(Error::LengthMismatch {
            expected: d.k(),
            actual: betas.len(),
        });
    }
    Ok(PositionwiseReport::from_positions(
        d.positions()
            .zip(betas)
            .map(|(p, &beta)| PositionEstimate {
                estimate: beta_ips(&p, beta).value,
                baseline: Some(beta),
                moments: empirical_moments(&p),
            })
            .collect(),
    ))
}

/// Independently optimised per-position baselines `Cov(w_j, w_j r_j) / Var(w_j)`.
///
/// Fails with every degenerate position listed, not just the first.
pub fn beta_perp_star_hat<T: Real>(d: &RankedDataset<T>) -> Result<Vec<T>> {
    let mut betas = Vec::with_capacity(d.k());
    let mut degenerate = Vec::new();
    for (j, p) in d.positions().enumerate() {
        match beta_star_hat(&p) {
            Ok(b) => betas.push(b),
            Err(Error::DegenerateWeights { .. }) => degenerate.push(j),
            Err(e) => return Err(e),
        }
    }
    if degenerate.is_empty() {
        Ok(betas)
    } else {
        Err(Error::DegenerateWeights {
            positions: degenerate,
        })
    }
}

/// [`beta_ipm`] at the plug-in per-position baselines.
pub fn beta_perp_star_ipm<T: Real>(d: &RankedDataset<T>) -> Result<PositionwiseReport<T>> {
    let betas = beta_perp_star_hat(d)?;
    beta_ipm(d, &betas)
}
