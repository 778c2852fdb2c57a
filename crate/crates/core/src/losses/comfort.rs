//! Dynamic profile of a 6-channel trajectory and the hinge comfort penalty.
//!
//! Trajectory points are `[p_x, p_y, cos θ, sin θ, v_x, v_y]` sampled every `dt` seconds.
//! Derivatives use central differences in the interior and one-sided differences
//! at both ends. Heading increments are taken as the signed angle between
//! consecutive heading vectors, so the profile never sees a ±π wrap.

use candle_core::{Tensor, D};
use serde::{Deserialize, Serialize};

use crate::error::{LhpfError, Result};
use crate::nn::ops::atan2;
use crate::scenario::AgentState;

pub type TrajPoint = [f64; 6];

/// Published dynamic limits used by the comfort penalty and the comfort metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComfortLimits {
    pub lon_acc_min: f64,
    pub lon_acc_max: f64,
    pub lat_acc_abs_max: f64,
    pub yaw_acc_abs_max: f64,
    pub yaw_rate_abs_max: f64,
    pub lon_jerk_abs_max: f64,
    pub jerk_mag_abs_max: f64,
}

impl Default for ComfortLimits {
    fn default() -> Self {
        ComfortLimits {
            lon_acc_min: -4.05,
            lon_acc_max: 2.40,
            lat_acc_abs_max: 4.89,
            yaw_acc_abs_max: 1.93,
            yaw_rate_abs_max: 0.95,
            lon_jerk_abs_max: 4.13,
            jerk_mag_abs_max: 8.37,
        }
    }
}

impl ComfortLimits {
    pub fn validate(&self) -> Result<()> {
        let abs = [
            self.lat_acc_abs_max,
            self.yaw_acc_abs_max,
            self.yaw_rate_abs_max,
            self.lon_jerk_abs_max,
            self.jerk_mag_abs_max,
        ];
        if self.lon_acc_min >= self.lon_acc_max || abs.iter().any(|v| *v <= 0.0) {
            return Err(LhpfError::InvalidArgument("comfort limits must satisfy min < max and abs limits > 0".into()));
        }
        Ok(())
    }

    /// Sum of per-aspect hinge violations for one frame.
    pub fn frame_violation(&self, f: &DynamicFrame) -> f64 {
        let hinge = |x: f64| x.max(0.0);
        hinge(f.lon_acc - self.lon_acc_max)
            + hinge(self.lon_acc_min - f.lon_acc)
            + hinge(f.lat_acc.abs() - self.lat_acc_abs_max)
            + hinge(f.yaw_acc.abs() - self.yaw_acc_abs_max)
            + hinge(f.yaw_rate.abs() - self.yaw_rate_abs_max)
            + hinge(f.lon_jerk.abs() - self.lon_jerk_abs_max)
            + hinge(f.jerk_mag.abs() - self.jerk_mag_abs_max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DynamicFrame {
    pub lon_acc: f64,
    pub lat_acc: f64,
    pub yaw_acc: f64,
    pub yaw_rate: f64,
    pub lon_jerk: f64,
    pub jerk_mag: f64,
}

/// Minimum horizon for which every derivative is defined.
pub const MIN_PROFILE_POINTS: usize = 4;

fn gradient(x: &[f64], dt: f64) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|t| match t {
            0 => (x[1] - x[0]) / dt,
            t if t == n - 1 => (x[n - 1] - x[n - 2]) / dt,
            t => (x[t + 1] - x[t - 1]) / (2.0 * dt),
        })
        .collect()
}

/// Per-frame dynamic quantities of a trajectory.
pub fn dynamic_profile(traj: &[TrajPoint], dt: f64) -> Result<Vec<DynamicFrame>> {
    let n = traj.len();
    if n < MIN_PROFILE_POINTS {
        return Err(LhpfError::InsufficientHorizon { needed: MIN_PROFILE_POINTS, got: n });
    }
    let heading: Vec<(f64, f64)> = traj
        .iter()
        .map(|p| {
            let norm = p[2].hypot(p[3]);
            (p[2] / norm, p[3] / norm)
        })
        .collect();
    let dtheta: Vec<f64> = heading
        .windows(2)
        .map(|w| {
            let (c0, s0) = w[0];
            let (c1, s1) = w[1];
            (c0 * s1 - s0 * c1).atan2(c0 * c1 + s0 * s1)
        })
        .collect();
    let yaw_rate: Vec<f64> = (0..n)
        .map(|t| match t {
            0 => dtheta[0] / dt,
            t if t == n - 1 => dtheta[n - 2] / dt,
            t => (dtheta[t - 1] + dtheta[t]) / (2.0 * dt),
        })
        .collect();
    let yaw_acc = gradient(&yaw_rate, dt);
    let vx: Vec<f64> = traj.iter().map(|p| p[4]).collect();
    let vy: Vec<f64> = traj.iter().map(|p| p[5]).collect();
    let ax = gradient(&vx, dt);
    let ay = gradient(&vy, dt);
    let lon: Vec<f64> = (0..n).map(|t| ax[t] * heading[t].0 + ay[t] * heading[t].1).collect();
    let lat: Vec<f64> = (0..n).map(|t| -ax[t] * heading[t].1 + ay[t] * heading[t].0).collect();
    let lon_jerk = gradient(&lon, dt);
    let jx = gradient(&ax, dt);
    let jy = gradient(&ay, dt);
    Ok((0..n)
        .map(|t| DynamicFrame {
            lon_acc: lon[t],
            lat_acc: lat[t],
            yaw_acc: yaw_acc[t],
            yaw_rate: yaw_rate[t],
            lon_jerk: lon_jerk[t],
            jerk_mag: jx[t].hypot(jy[t]),
        })
        .collect())
}

/// Mean over frames of the summed hinge violations.
pub fn comfort_hinge(profile: &[DynamicFrame], limits: &ComfortLimits) -> f64 {
    if profile.is_empty() {
        return 0.0;
    }
    profile.iter().map(|f| limits.frame_violation(f)).sum::<f64>() / profile.len() as f64
}

pub fn comfort_loss(traj: &[TrajPoint], dt: f64, limits: &ComfortLimits) -> Result<f64> {
    Ok(comfort_hinge(&dynamic_profile(traj, dt)?, limits))
}

pub fn state_to_point(s: &AgentState) -> TrajPoint {
    [s.position.x, s.position.y, s.heading.cos(), s.heading.sin(), s.velocity.x, s.velocity.y]
}

pub fn states_to_points(states: &[AgentState]) -> Vec<TrajPoint> {
    states.iter().map(state_to_point).collect()
}

// ---- differentiable versions over [batch, T, 6] tensors ----

fn tensor_gradient(x: &Tensor, dt: f64) -> Result<Tensor> {
    // x: [B, T]
    let n = x.dim(1)?;
    let first = (x.narrow(1, 1, 1)? - x.narrow(1, 0, 1)?)?;
    let last = (x.narrow(1, n - 1, 1)? - x.narrow(1, n - 2, 1)?)?;
    let mid = ((x.narrow(1, 2, n - 2)? - x.narrow(1, 0, n - 2)?)? * 0.5)?;
    Ok((Tensor::cat(&[&first, &mid, &last], 1)? / dt)?)
}

/// Tensor counterpart of [`dynamic_profile`]: returns `[B, T, 6]` with channels
/// (lon_acc, lat_acc, yaw_acc, yaw_rate, lon_jerk, jerk_mag).
pub fn dynamic_profile_tensor(traj: &Tensor, dt: f64) -> Result<Tensor> {
    let (_b, n, _c) = traj.dims3()?;
    if n < MIN_PROFILE_POINTS {
        return Err(LhpfError::InsufficientHorizon { needed: MIN_PROFILE_POINTS, got: n });
    }
    let c_raw = traj.narrow(2, 2, 1)?.squeeze(2)?;
    let s_raw = traj.narrow(2, 3, 1)?.squeeze(2)?;
    let norm = (c_raw.sqr()? + s_raw.sqr()?)?.sqrt()?;
    let c = (&c_raw / &norm)?;
    let s = (&s_raw / &norm)?;
    let (c0, c1) = (c.narrow(1, 0, n - 1)?, c.narrow(1, 1, n - 1)?);
    let (s0, s1) = (s.narrow(1, 0, n - 1)?, s.narrow(1, 1, n - 1)?);
    let cross = ((&c0 * &s1)? - (&s0 * &c1)?)?;
    let dot = ((&c0 * &c1)? + (&s0 * &s1)?)?;
    let dtheta = atan2(&cross, &dot)?;
    let yaw_first = dtheta.narrow(1, 0, 1)?;
    let yaw_last = dtheta.narrow(1, n - 2, 1)?;
    let yaw_mid = ((dtheta.narrow(1, 0, n - 2)? + dtheta.narrow(1, 1, n - 2)?)? * 0.5)?;
    let yaw_rate = (Tensor::cat(&[&yaw_first, &yaw_mid, &yaw_last], 1)? / dt)?;
    let yaw_acc = tensor_gradient(&yaw_rate, dt)?;
    let vx = traj.narrow(2, 4, 1)?.squeeze(2)?;
    let vy = traj.narrow(2, 5, 1)?.squeeze(2)?;
    let ax = tensor_gradient(&vx, dt)?;
    let ay = tensor_gradient(&vy, dt)?;
    let lon = ((&ax * &c)? + (&ay * &s)?)?;
    let lat = ((&ay * &c)? - (&ax * &s)?)?;
    let lon_jerk = tensor_gradient(&lon, dt)?;
    let jx = tensor_gradient(&ax, dt)?;
    let jy = tensor_gradient(&ay, dt)?;
    // epsilon keeps the sqrt derivative finite at zero jerk
    let jerk_mag = ((jx.sqr()? + jy.sqr()?)? + 1e-12)?.sqrt()?;
    Ok(Tensor::stack(&[&lon, &lat, &yaw_acc, &yaw_rate, &lon_jerk, &jerk_mag], 2)?)
}

/// Comfort penalty per batch element, `[B]`.
pub fn comfort_loss_tensor(traj: &Tensor, dt: f64, limits: &ComfortLimits) -> Result<Tensor> {
    let profile = dynamic_profile_tensor(traj, dt)?;
    let ch = |i: usize| -> Result<Tensor> { Ok(profile.narrow(2, i, 1)?.squeeze(2)?) };
    let (lon, lat, yaw_acc, yaw_rate, lon_jerk, jerk) = (ch(0)?, ch(1)?, ch(2)?, ch(3)?, ch(4)?, ch(5)?);
    let terms = [
        (&lon - limits.lon_acc_max)?.relu()?,
        lon.affine(-1.0, limits.lon_acc_min)?.relu()?,
        (lat.abs()? - limits.lat_acc_abs_max)?.relu()?,
        (yaw_acc.abs()? - limits.yaw_acc_abs_max)?.relu()?,
        (yaw_rate.abs()? - limits.yaw_rate_abs_max)?.relu()?,
        (lon_jerk.abs()? - limits.lon_jerk_abs_max)?.relu()?,
        (jerk - limits.jerk_mag_abs_max)?.relu()?,
    ];
    let mut total = terms[0].clone();
    for t in &terms[1..] {
        total = (total + t)?;
    }
    Ok(total.mean(D::Minus1)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    fn straight(v0: f64, a: f64, n: usize, dt: f64) -> Vec<TrajPoint> {
        (0..n)
            .map(|i| {
                let t = i as f64 * dt;
                [v0 * t + 0.5 * a * t * t, 0.0, 1.0, 0.0, v0 + a * t, 0.0]
            })
            .collect()
    }

    fn circle(v: f64, r: f64, n: usize, dt: f64) -> Vec<TrajPoint> {
        (0..n)
            .map(|i| {
                let phi = v / r * i as f64 * dt;
                let heading = phi + std::f64::consts::FRAC_PI_2;
                [r * phi.cos(), r * phi.sin(), heading.cos(), heading.sin(), v * heading.cos(), v * heading.sin()]
            })
            .collect()
    }

    #[test]
    fn constant_velocity_is_quiet() {
        let prof = dynamic_profile(&straight(10.0, 0.0, 80, 0.1), 0.1).unwrap();
        for f in prof {
            assert_eq!(f.lon_acc, 0.0);
            assert_eq!(f.lat_acc, 0.0);
            assert_eq!(f.yaw_acc, 0.0);
            assert_eq!(f.yaw_rate, 0.0);
            assert_eq!(f.lon_jerk, 0.0);
            assert_eq!(f.jerk_mag, 0.0);
        }
    }

    #[test]
    fn uniform_acceleration() {
        let prof = dynamic_profile(&straight(3.0, 1.7, 80, 0.1), 0.1).unwrap();
        for f in prof {
            assert!((f.lon_acc - 1.7).abs() < 1e-6);
            assert!(f.lon_jerk.abs() < 1e-6);
            assert!(f.jerk_mag.abs() < 1e-6);
        }
    }

    #[test]
    fn circular_motion() {
        let (v, r) = (8.0, 40.0);
        let prof = dynamic_profile(&circle(v, r, 200, 0.1), 0.1).unwrap();
        for f in prof {
            assert!((f.lat_acc - v * v / r).abs() <= 0.02 * v * v / r, "lat {}", f.lat_acc);
            assert!((f.yaw_rate - v / r).abs() <= 0.02 * v / r, "yaw {}", f.yaw_rate);
        }
    }

    #[test]
    fn heading_wrap_is_harmless() {
        // circle crosses ±pi repeatedly
        let prof = dynamic_profile(&circle(10.0, 15.0, 300, 0.1), 0.1).unwrap();
        assert!(prof.iter().all(|f| (f.yaw_rate - 10.0 / 15.0).abs() < 0.02));
    }

    #[test]
    fn short_horizon_rejected() {
        let err = dynamic_profile(&straight(1.0, 0.0, 3, 0.1), 0.1).unwrap_err();
        assert!(matches!(err, LhpfError::InsufficientHorizon { needed: 4, got: 3 }));
    }

    #[test]
    fn single_frame_hinge() {
        let limits = ComfortLimits::default();
        let f = DynamicFrame { lon_acc: 3.40, ..Default::default() };
        assert!((comfort_hinge(&[f], &limits) - 1.0).abs() < 1e-12);
        let f = DynamicFrame { lon_acc: -5.05, ..Default::default() };
        assert!((comfort_hinge(&[f], &limits) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tensor_profile_matches_scalar() {
        let traj = circle(9.0, 12.0, 40, 0.1);
        let mut traj2 = straight(2.0, 3.5, 40, 0.1);
        for (i, p) in traj2.iter_mut().enumerate() {
            p[5] = (i as f64 * 0.3).sin() * 4.0;
        }
        let flat: Vec<f64> = traj.iter().chain(&traj2).flatten().copied().collect();
        let t = Tensor::from_vec(flat, (2, 40, 6), &Device::Cpu).unwrap();
        let prof = dynamic_profile_tensor(&t, 0.1).unwrap().to_vec3::<f64>().unwrap();
        for (b, tr) in [&traj, &traj2].iter().enumerate() {
            let exp = dynamic_profile(tr, 0.1).unwrap();
            for (i, f) in exp.iter().enumerate() {
                let got = &prof[b][i];
                let want = [f.lon_acc, f.lat_acc, f.yaw_acc, f.yaw_rate, f.lon_jerk, f.jerk_mag];
                for k in 0..6 {
                    assert!((got[k] - want[k]).abs() < 1e-5, "b{b} t{i} ch{k}: {} vs {}", got[k], want[k]);
                }
            }
        }
        let limits = ComfortLimits::default();
        let loss = comfort_loss_tensor(&t, 0.1, &limits).unwrap().to_dtype(DType::F64).unwrap().to_vec1::<f64>().unwrap();
        assert!((loss[0] - comfort_loss(&traj, 0.1, &limits).unwrap()).abs() < 1e-6);
        assert!((loss[1] - comfort_loss(&traj2, 0.1, &limits).unwrap()).abs() < 1e-6);
    }
}
