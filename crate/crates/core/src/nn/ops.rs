//! Tensor operations missing from the candle core set.

use candle_core::{CpuStorage, CustomOp2, Layout, Shape, Tensor, D};

use crate::error::Result;

struct Atan2;

impl CustomOp2 for Atan2 {
    fn name(&self) -> &'static str {
        "atan2"
    }

    fn cpu_fwd(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
    ) -> candle_core::Result<(CpuStorage, Shape)> {
        let (CpuStorage::F64(y), CpuStorage::F64(x)) = (s1, s2) else {
            candle_core::bail!("atan2 is implemented for f64 only");
        };
        let (Some((y0, y1)), Some((x0, x1))) = (l1.contiguous_offsets(), l2.contiguous_offsets()) else {
            candle_core::bail!("atan2 expects contiguous inputs");
        };
        if l1.shape() != l2.shape() {
            candle_core::bail!("atan2 shape mismatch {:?} vs {:?}", l1.shape(), l2.shape());
        }
        let out: Vec<f64> = y[y0..y1].iter().zip(&x[x0..x1]).map(|(y, x)| y.atan2(*x)).collect();
        Ok((CpuStorage::F64(out), l1.shape().clone()))
    }

    fn bwd(
        &self,
        y: &Tensor,
        x: &Tensor,
        _res: &Tensor,
        grad: &Tensor,
    ) -> candle_core::Result<(Option<Tensor>, Option<Tensor>)> {
        let r2 = (x.sqr()? + y.sqr()?)?;
        let dy = (grad * (x / &r2)?)?;
        let dx = (grad * (y.neg()? / &r2)?)?;
        Ok((Some(dy), Some(dx)))
    }
}

/// Elementwise `atan2(y, x)` with gradients.
pub fn atan2(y: &Tensor, x: &Tensor) -> Result<Tensor> {
    Ok(y.contiguous()?.apply_op2(&x.contiguous()?, Atan2)?)
}

/// Additive bias used for masked attention logits; large enough that exp underflows to 0.
pub const MASK_BIAS: f64 = -1e9;

/// Softmax over the last dimension.
pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&max)?.exp()?;
    let s = e.sum_keepdim(D::Minus1)?;
    Ok(e.broadcast_div(&s)?)
}

/// Log-softmax over the last dimension.
pub fn log_softmax_last(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let shifted = x.broadcast_sub(&max)?;
    let lse = shifted.exp()?.sum_keepdim(D::Minus1)?.log()?;
    Ok(shifted.broadcast_sub(&lse)?)
}

/// Turns a {0,1} mask into additive logit bias {MASK_BIAS, 0}.
pub fn mask_to_bias(mask: &Tensor) -> Result<Tensor> {
    Ok(((mask - 1.0)? * -MASK_BIAS)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{Device, Var};

    #[test]
    fn atan2_values_and_grad() {
        let dev = Device::Cpu;
        let y = Var::from_vec(vec![1.0f64, -0.5, 0.3], 3, &dev).unwrap();
        let x = Var::from_vec(vec![-1.0f64, 2.0, 0.0], 3, &dev).unwrap();
        let out = atan2(y.as_tensor(), x.as_tensor()).unwrap();
        let v = out.to_vec1::<f64>().unwrap();
        for (i, (yy, xx)) in [(1.0f64, -1.0f64), (-0.5, 2.0), (0.3, 0.0)].iter().enumerate() {
            assert_eq!(v[i], yy.atan2(*xx));
        }
        let grads = out.sum_all().unwrap().backward().unwrap();
        let gy = grads.get(y.as_tensor()).unwrap().to_vec1::<f64>().unwrap();
        let gx = grads.get(x.as_tensor()).unwrap().to_vec1::<f64>().unwrap();
        let eps = 1e-6;
        for (i, (yy, xx)) in [(1.0f64, -1.0f64), (-0.5, 2.0), (0.3, 0.0)].iter().enumerate() {
            let fy = ((yy + eps).atan2(*xx) - (yy - eps).atan2(*xx)) / (2.0 * eps);
            let fx = (yy.atan2(xx + eps) - yy.atan2(xx - eps)) / (2.0 * eps);
            assert!((gy[i] - fy).abs() < 1e-6);
            assert!((gx[i] - fx).abs() < 1e-6);
        }
    }

    #[test]
    fn softmax_is_shift_invariant_and_masked() {
        let dev = Device::Cpu;
        let x = Tensor::new(&[[1.0f64, 2.0, 3.0]], &dev).unwrap();
        let a = softmax_last(&x).unwrap().to_vec2::<f64>().unwrap();
        let b = softmax_last(&(&x + 100.0).unwrap()).unwrap().to_vec2::<f64>().unwrap();
        for i in 0..3 {
            assert!((a[0][i] - b[0][i]).abs() < 1e-12);
        }
        let mask = Tensor::new(&[[1.0f64, 0.0, 1.0]], &dev).unwrap();
        let m = softmax_last(&(x + mask_to_bias(&mask).unwrap()).unwrap()).unwrap().to_vec2::<f64>().unwrap();
        assert_eq!(m[0][1], 0.0);
        let ls = log_softmax_last(&Tensor::new(&[[0.0f64; 12]], &dev).unwrap()).unwrap().to_vec2::<f64>().unwrap();
        assert!((ls[0][0] + 12f64.ln()).abs() < 1e-12);
    }
}
