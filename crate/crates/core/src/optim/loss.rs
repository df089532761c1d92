//! SED and DOA losses. Both return the loss and its gradient with respect to
//! the predictions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PROB_CLAMP: f64 = 1e-7;

/// Mean binary cross-entropy over all elements.
pub fn bce_loss(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    if pred.len() != target.len() {
        return Err(Error::shape(format!(
            "BCE prediction has {} elements, target has {}",
            pred.len(),
            target.len()
        )));
    }
    if let Some(t) = target.iter().find(|&&t| t != 0.0 && t != 1.0) {
        return Err(Error::Input(format!("BCE targets must be 0 or 1, found {t}")));
    }
    if pred.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    let n = pred.len() as f64;
    let (lo, hi) = (PROB_CLAMP, 1.0 - PROB_CLAMP);
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (&p_raw, &t) in pred.iter().zip(target) {
        let p = p_raw.clamp(lo, hi);
        loss -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
        let g = if p_raw > lo && p_raw < hi { (p - t) / (p * (1.0 - p)) / n } else { 0.0 };
        grad.push(g);
    }
    Ok((loss / n, grad))
}

/// Squared error over the three coordinates of each `(frame, class)` pair that
/// is active in `mask`, averaged over `3 · active pairs`. Inactive pairs
/// contribute nothing; an all-inactive mask gives a zero loss.
///
/// `pred`/`target` are `[rows, 3N]` with class `c` at columns `3c..3c+3`;
/// `mask` is `[rows, N]`.
pub fn masked_mse_loss(pred: &[f64], target: &[f64], mask: &[f64], classes: usize) -> Result<(f64, Vec<f64>)> {
    if pred.len() != target.len() {
        return Err(Error::shape(format!(
            "MSE prediction has {} elements, target has {}",
            pred.len(),
            target.len()
        )));
    }
    if classes == 0 || !mask.len().is_multiple_of(classes) || mask.len() * 3 != pred.len() {
        return Err(Error::shape(format!(
            "mask of {} entries cannot gate {} coordinates for {classes} classes",
            mask.len(),
            pred.len()
        )));
    }
    let active = mask.iter().filter(|&&m| m != 0.0).count();
    let mut grad = vec![0.0; pred.len()];
    if active == 0 {
        return Ok((0.0, grad));
    }
    let denom = 3.0 * active as f64;
    let mut loss = 0.0;
    for (pair, &m) in mask.iter().enumerate() {
        if m == 0.0 {
            continue;
        }
        for k in 3 * pair..3 * pair + 3 {
            let d = pred[k] - target[k];
            loss += d * d;
            grad[k] = 2.0 * d / denom;
        }
    }
    Ok((loss / denom, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight λ of the DOA term in `L_SED + λ·L_DOA`.
    pub doa_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { doa_weight: 5.0 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.doa_weight >= 0.0 && self.doa_weight.is_finite()) {
            return Err(Error::config(format!("doa_weight must be a finite value >= 0, got {}", self.doa_weight)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeldLoss {
    pub sed: f64,
    pub doa: f64,
    pub total: f64,
    pub grad_sed: Vec<f64>,
    pub grad_doa: Vec<f64>,
}

/// `L_SED + λ·L_DOA` with the DOA term masked by ground-truth activity.
pub fn seld_loss(
    config: &LossConfig,
    sed_pred: &[f64],
    sed_target: &[f64],
    doa_pred: &[f64],
    doa_target: &[f64],
    classes: usize,
) -> Result<SeldLoss> {
    config.validate()?;
    let (sed, grad_sed) = bce_loss(sed_pred, sed_target)?;
    let (doa, mut grad_doa) = masked_mse_loss(doa_pred, doa_target, sed_target, classes)?;
    grad_doa.iter_mut().for_each(|g| *g *= config.doa_weight);
    Ok(SeldLoss { sed, doa, total: sed + config.doa_weight * doa, grad_sed, grad_doa })
}

/// Per-element contributions whose sum is the combined loss: one BCE term per
/// SED entry followed by one weighted squared error per DOA coordinate.
pub fn seld_loss_terms(
    config: &LossConfig,
    sed_pred: &[f64],
    sed_target: &[f64],
    doa_pred: &[f64],
    doa_target: &[f64],
    classes: usize,
) -> Result<Vec<f64>> {
    // validates shapes and targets
    seld_loss(config, sed_pred, sed_target, doa_pred, doa_target, classes)?;
    let n = sed_pred.len().max(1) as f64;
    let (lo, hi) = (PROB_CLAMP, 1.0 - PROB_CLAMP);
    let mut terms: Vec<f64> = sed_pred
        .iter()
        .zip(sed_target)
        .map(|(&p, &t)| {
            let p = p.clamp(lo, hi);
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln()) / n
        })
        .collect();
    let active = sed_target.iter().filter(|&&m| m != 0.0).count();
    let denom = 3.0 * active.max(1) as f64;
    for (k, (&p, &t)) in doa_pred.iter().zip(doa_target).enumerate() {
        let m = sed_target[k / 3];
        let d = p - t;
        terms.push(if m != 0.0 { config.doa_weight * d * d / denom } else { 0.0 });
    }
    Ok(terms)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bce_half_against_ones_is_ln2() {
        let (l, _) = bce_loss(&[0.5; 6], &[1.0; 6]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn bce_at_target_is_clamp_floor() {
        let (l, _) = bce_loss(&[1.0, 0.0, 1.0], &[1.0, 0.0, 1.0]).unwrap();
        assert!(l <= -(1.0 - PROB_CLAMP).ln() + 1e-18);
        assert!(l > 0.0);
    }

    #[test]
    fn bce_rejects_soft_targets_and_mismatch() {
        assert!(bce_loss(&[0.3], &[0.5]).is_err());
        assert!(bce_loss(&[0.3, 0.2], &[1.0]).is_err());
    }

    #[test]
    fn mse_zero_when_equal() {
        let p = [0.1, 0.2, 0.3, -0.5, 0.0, 0.9];
        let (l, g) = masked_mse_loss(&p, &p, &[1.0, 1.0], 2).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mse_single_pair() {
        // two classes, only class 1 of the single frame active
        let pred = [9.0, 9.0, 9.0, 1.0, 0.0, 0.0];
        let target = [0.0, 0.0, 0.0, 0.0, 1.0, 0.0];
        let (l, g) = masked_mse_loss(&pred, &target, &[0.0, 1.0], 2).unwrap();
        assert!((l - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(&g[..3], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn mse_all_inactive() {
        let (l, g) = masked_mse_loss(&[1.0; 6], &[0.0; 6], &[0.0, 0.0], 2).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn combined_is_weighted_sum() {
        let sed_p = [0.2, 0.7, 0.9, 0.4];
        let sed_t = [0.0, 1.0, 1.0, 0.0];
        let doa_p = [0.1, -0.2, 0.3, 0.5, 0.5, 0.1, -0.9, 0.0, 0.2, 0.0, 0.0, 0.3];
        let doa_t = [0.0, 0.0, 0.0, 0.0, 1.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        for lambda in [0.0, 1.0, 5.0] {
            let cfg = LossConfig { doa_weight: lambda };
            let l = seld_loss(&cfg, &sed_p, &sed_t, &doa_p, &doa_t, 2).unwrap();
            let (s, _) = bce_loss(&sed_p, &sed_t).unwrap();
            let (d, _) = masked_mse_loss(&doa_p, &doa_t, &sed_t, 2).unwrap();
            assert_eq!(l.total, s + lambda * d);
            if lambda == 0.0 {
                assert!(l.grad_doa.iter().all(|&g| g == 0.0));
            }
        }
        assert!(LossConfig { doa_weight: -1.0 }.validate().is_err());
        let cfg = LossConfig::default();
        let terms = seld_loss_terms(&cfg, &sed_p, &sed_t, &doa_p, &doa_t, 2).unwrap();
        let total = seld_loss(&cfg, &sed_p, &sed_t, &doa_p, &doa_t, 2).unwrap().total;
        assert!((terms.iter().sum::<f64>() - total).abs() < 1e-14);
    }
}
