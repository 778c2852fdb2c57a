//! Smooth-L1 trajectory regression and masked cross-entropy over candidate scores.

use candle_core::{Tensor, D};

use crate::error::Result;
use crate::nn::ops::{log_softmax_last, mask_to_bias};

/// Transition point between the quadratic and linear pieces.
pub const SMOOTH_L1_BETA: f64 = 1.0;

pub fn smooth_l1(err: f64) -> f64 {
    let a = err.abs();
    if a < SMOOTH_L1_BETA {
        0.5 * a * a / SMOOTH_L1_BETA
    } else {
        a - 0.5 * SMOOTH_L1_BETA
    }
}

/// Mean smooth-L1 over every element of two equal-length slices.
pub fn smooth_l1_mean(pred: &[f64], target: &[f64]) -> f64 {
    assert_eq!(pred.len(), target.len());
    pred.iter().zip(target).map(|(p, t)| smooth_l1(p - t)).sum::<f64>() / pred.len() as f64
}

/// Elementwise smooth-L1 on tensors.
pub fn smooth_l1_tensor(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    let a = (pred - target)?.abs()?;
    let quad = (a.sqr()? * (0.5 / SMOOTH_L1_BETA))?;
    let lin = (&a - 0.5 * SMOOTH_L1_BETA)?;
    let use_quad = a.lt(SMOOTH_L1_BETA)?;
    Ok(use_quad.where_cond(&quad, &lin)?)
}

/// Cross-entropy of `softmax(logits)` against `target` for one sample, skipping masked entries.
pub fn cross_entropy(logits: &[f64], valid: &[bool], target: usize) -> f64 {
    let max = logits.iter().zip(valid).filter(|(_, v)| **v).map(|(l, _)| *l).fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().zip(valid).filter(|(_, v)| **v).map(|(l, _)| (l - max).exp()).sum::<f64>().ln();
    lse - logits[target]
}

/// Selects row `index[b]` of `x[b]` for `x` of shape `[B, N, ...]`.
pub fn gather_rows(x: &Tensor, index: &[u32]) -> Result<Tensor> {
    let dims = x.dims().to_vec();
    let (b, n) = (dims[0], dims[1]);
    let flat = x.reshape([vec![b * n], dims[2..].to_vec()].concat())?;
    let idx: Vec<u32> = index.iter().enumerate().map(|(i, &k)| i as u32 * n as u32 + k).collect();
    let idx = Tensor::from_vec(idx, b, x.device())?;
    Ok(flat.index_select(&idx, 0)?)
}

#[derive(Debug, Clone)]
pub struct ImitationLoss {
    /// Scalar tensors averaged over the batch.
    pub reg: Tensor,
    pub cls: Tensor,
}

/// Regression on the target-indexed candidate and the free trajectory, plus score cross-entropy.
///
/// * `trajectories` `[B, N_T, T, 6]`, `scores` `[B, N_T]`, `score_mask` `[B, N_T]` (1 = usable)
/// * `free` `[B, T, 6]`, `target` `[B, T, 6]`, `target_index` flat candidate index per sample.
pub fn imitation_loss(
    trajectories: &Tensor,
    scores: &Tensor,
    score_mask: &Tensor,
    free: Option<&Tensor>,
    target: &Tensor,
    target_index: &[u32],
) -> Result<ImitationLoss> {
    let chosen = gather_rows(trajectories, target_index)?;
    let mut reg = smooth_l1_tensor(&chosen, target)?.mean_all()?;
    if let Some(free) = free {
        reg = (reg + smooth_l1_tensor(free, target)?.mean_all()?)?;
    }
    let logp = log_softmax_last(&scores.broadcast_add(&mask_to_bias(score_mask)?)?)?;
    let picked = gather_rows(&logp.unsqueeze(D::Minus1)?, target_index)?;
    let cls = picked.neg()?.mean_all()?;
    Ok(ImitationLoss { reg, cls })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::device;

    #[test]
    fn smooth_l1_pieces() {
        assert_eq!(smooth_l1(0.5), 0.125);
        assert_eq!(smooth_l1(2.0), 1.5);
        assert_eq!(smooth_l1(-2.0), 1.5);
        assert_eq!(smooth_l1(0.0), 0.0);
    }

    #[test]
    fn uniform_scores_give_log_n() {
        let scores = Tensor::zeros((1, 12), candle_core::DType::F64, &device()).unwrap();
        let mask = Tensor::ones((1, 12), candle_core::DType::F64, &device()).unwrap();
        let traj = Tensor::zeros((1, 12, 4, 6), candle_core::DType::F64, &device()).unwrap();
        let target = Tensor::zeros((1, 4, 6), candle_core::DType::F64, &device()).unwrap();
        let l = imitation_loss(&traj, &scores, &mask, Some(&target), &target, &[5]).unwrap();
        let cls = l.cls.to_scalar::<f64>().unwrap();
        assert!((cls - 12f64.ln()).abs() < 1e-12);
        assert_eq!(l.reg.to_scalar::<f64>().unwrap(), 0.0);
    }

    #[test]
    fn masked_entries_do_not_count() {
        let scores = Tensor::new(&[[0.3f64, -1.0, 7.0, 0.2]], &device()).unwrap();
        let mask = Tensor::new(&[[1.0f64, 1.0, 0.0, 1.0]], &device()).unwrap();
        let traj = Tensor::zeros((1, 4, 4, 6), candle_core::DType::F64, &device()).unwrap();
        let target = traj.get(0).unwrap().get(0).unwrap().unsqueeze(0).unwrap();
        let l = imitation_loss(&traj, &scores, &mask, None, &target, &[1]).unwrap();
        let oracle = cross_entropy(&[0.3, -1.0, 7.0, 0.2], &[true, true, false, true], 1);
        assert!((l.cls.to_scalar::<f64>().unwrap() - oracle).abs() < 1e-9);
    }

    #[test]
    fn tensor_smooth_l1_matches_scalar() {
        let p = [0.1f64, -0.7, 2.5, -3.0, 0.99, 1.01];
        let t = [0.0f64; 6];
        let pt = Tensor::new(&p, &device()).unwrap();
        let tt = Tensor::new(&t, &device()).unwrap();
        let got = smooth_l1_tensor(&pt, &tt).unwrap().mean_all().unwrap().to_scalar::<f64>().unwrap();
        assert!((got - smooth_l1_mean(&p, &t)).abs() < 1e-12);
    }
}
