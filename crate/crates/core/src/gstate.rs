//! Generalized states from the unmotivated Kalman filter.
//!
//! The filter assumes no force acts on the vehicle and no motion either: the
//! predicted position is the previous filtered position. Velocity is not part
//! of the filter state; it is read back from the filtered displacement per
//! step. All three axes share one scalar gain, so the filter is linear in the
//! input positions.

use serde::{Deserialize, Serialize};

use crate::linalg::Vec6;
use crate::tracking::Track;
use crate::{Error, Result, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneralizedState {
    pub timestamp: f64,
    pub position: Vec3,
    pub velocity: Vec3,
}

impl GeneralizedState {
    pub(crate) fn as_vec6(&self) -> Vec6 {
        Vec6::new(
            self.position.x,
            self.position.y,
            self.position.z,
            self.velocity.x,
            self.velocity.y,
            self.velocity.z,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UmkfParams {
    /// Per-axis position random-walk variance per step (m^2).
    pub process_noise: f64,
    /// Per-axis measurement variance (m^2).
    pub measurement_noise: f64,
    /// Seconds between samples.
    pub dt: f64,
    /// Velocity magnitude cap (m/s).
    pub max_speed: f64,
}

impl Default for UmkfParams {
    fn default() -> Self {
        Self {
            process_noise: 0.01,
            measurement_noise: 0.04,
            dt: 0.1,
            max_speed: 30.0,
        }
    }
}

impl UmkfParams {
    pub fn validate(&self) -> Result<()> {
        if self.process_noise > 0.0 && self.measurement_noise > 0.0 && self.dt > 0.0 && self.max_speed > 0.0 {
            Ok(())
        } else {
            Err(Error::Config("gstate: noises, dt and max_speed must be > 0".into()))
        }
    }

    /// Steady-state gain of the scalar random-walk filter.
    pub fn steady_state_gain(&self) -> f64 {
        let (q, r) = (self.process_noise, self.measurement_noise);
        let p_pred = 0.5 * (q + (q * q + 4.0 * q * r).sqrt());
        p_pred / (p_pred + r)
    }
}

/// One generalized state per track sample, filled-in gap samples included.
pub fn umkf_filter(track: &Track, params: &UmkfParams) -> Result<Vec<GeneralizedState>> {
    let positions: Vec<(f64, Vec3)> = track.samples.iter().map(|s| (s.timestamp, s.position)).collect();
    umkf_positions(&positions, params)
}

pub fn umkf_positions(samples: &[(f64, Vec3)], params: &UmkfParams) -> Result<Vec<GeneralizedState>> {
    if samples.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: samples.len(),
        });
    }
    params.validate()?;
    let (q, r) = (params.process_noise, params.measurement_noise);
    let mut x = samples[0].1;
    let mut p = r;
    let mut out = Vec::with_capacity(samples.len());
    out.push(GeneralizedState {
        timestamp: samples[0].0,
        position: x,
        velocity: Vec3::zeros(),
    });
    for &(t, z) in &samples[1..] {
        let p_pred = p + q;
        let k = p_pred / (p_pred + r);
        let prev = x;
        x = prev + (z - prev) * k;
        p = (1.0 - k) * p_pred;
        let mut v = (x - prev) / params.dt;
        let speed = v.norm();
        if speed > params.max_speed {
            v *= params.max_speed / speed;
        }
        out.push(GeneralizedState {
            timestamp: t,
            position: x,
            velocity: v,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tracking::TrackSample;
    use proptest::prelude::*;

    fn track(points: &[(f64, Vec3)]) -> Track {
        Track::from_samples(
            1,
            points
                .iter()
                .map(|&(t, p)| TrackSample {
                    timestamp: t,
                    position: p,
                    observed: true,
                })
                .collect(),
        )
    }

    #[test]
    fn stationary_track_is_a_fixed_point() {
        let p = Vec3::new(-16.0, 3.0, 0.2);
        let tr = track(&(0..30).map(|k| (k as f64 * 0.1, p)).collect::<Vec<_>>());
        let gs = umkf_filter(&tr, &UmkfParams::default()).unwrap();
        assert_eq!(gs.len(), 30);
        for g in &gs {
            assert_eq!(g.position, p);
            assert_eq!(g.velocity, Vec3::zeros());
        }
    }

    #[test]
    fn constant_velocity_converges_within_burn_in() {
        let params = UmkfParams::default();
        // closed-form steady state: lag error contracts by (1 - K) per step
        let k = params.steady_state_gain();
        let burn_in = (0.01f64.ln() / (1.0 - k).ln()).ceil() as usize;
        assert!(burn_in <= 20, "burn-in {burn_in} too long for K = {k}");

        let v = 10.0;
        let tr = track(&(0..40).map(|i| (i as f64 * 0.1, Vec3::new(0.0, v * i as f64 * 0.1, 0.0))).collect::<Vec<_>>());
        let gs = umkf_filter(&tr, &params).unwrap();
        assert_eq!(gs[0].velocity, Vec3::zeros());
        for g in &gs[20..] {
            assert!((g.velocity - Vec3::new(0.0, v, 0.0)).norm() < 0.01 * v, "{:?}", g.velocity);
        }
    }

    #[test]
    fn filtered_error_contracts_geometrically() {
        let params = UmkfParams::default();
        let tr = track(&(0..50).map(|i| (i as f64 * 0.1, Vec3::new(5.0, 0.0, 0.0) * f64::from(u8::from(i > 0)))).collect::<Vec<_>>());
        let gs = umkf_filter(&tr, &params).unwrap();
        let k = params.steady_state_gain();
        let errs: Vec<f64> = gs.iter().map(|g| (g.position - Vec3::new(5.0, 0.0, 0.0)).norm()).collect();
        for w in errs[20..35].windows(2) {
            assert!((w[1] / w[0] - (1.0 - k)).abs() < 1e-6);
        }
    }

    #[test]
    fn too_short_track_is_rejected() {
        let tr = track(&[(0.0, Vec3::zeros())]);
        assert!(matches!(umkf_filter(&tr, &UmkfParams::default()), Err(Error::TooFewSamples { .. })));
    }

    proptest! {
        #[test]
        fn scaling_is_linear(scale in 0.1f64..10.0, pts in prop::collection::vec(prop::array::uniform3(-50.0f64..50.0), 2..30)) {
            let samples: Vec<(f64, Vec3)> = pts.iter().enumerate().map(|(i, p)| (i as f64 * 0.1, Vec3::from(*p))).collect();
            let scaled: Vec<(f64, Vec3)> = samples.iter().map(|&(t, p)| (t, p * scale)).collect();
            let params = UmkfParams { max_speed: f64::INFINITY, ..UmkfParams::default() };
            let a = umkf_positions(&samples, &params).unwrap();
            let b = umkf_positions(&scaled, &params).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert_eq!(x.timestamp, y.timestamp);
                prop_assert!((x.position * scale - y.position).norm() < 1e-9 * (1.0 + y.position.norm()));
                prop_assert!((x.velocity * scale - y.velocity).norm() < 1e-8 * (1.0 + y.velocity.norm()));
            }
        }
    }
}
