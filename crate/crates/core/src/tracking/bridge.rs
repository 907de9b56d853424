//! Re-identification of track fragments across blockages.
//!
//! Fragment B continues fragment A when B is born at most `max_gap` seconds
//! after A died and B's first position lies within `gate_radius` of A's
//! constant-velocity extrapolation to that instant. Candidate pairs are
//! accepted greedily by increasing residual, ties going to the lower fragment
//! ids, so each fragment has at most one predecessor and one successor.

use serde::{Deserialize, Serialize};

use crate::Vec3;

use super::{Track, TrackSample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BridgeParams {
    /// Meters.
    pub gate_radius: f64,
    /// Seconds.
    pub max_gap: f64,
}

impl Default for BridgeParams {
    fn default() -> Self {
        Self {
            gate_radius: 4.0,
            max_gap: 2.0,
        }
    }
}

/// Number of trailing samples used for the end-velocity estimate.
const VELOCITY_WINDOW: usize = 10;

/// Component-wise median of the per-step velocities over the last observed
/// samples. Robust to the centroid shift of a partially hidden vehicle.
pub(crate) fn end_velocity(track: &Track) -> Vec3 {
    velocity_until(track, f64::INFINITY)
}

/// [`end_velocity`] restricted to observed samples at or before `t`.
pub fn velocity_until(track: &Track, t: f64) -> Vec3 {
    let obs: Vec<&TrackSample> = track
        .samples
        .iter()
        .filter(|s| s.observed && s.timestamp <= t + 1e-9)
        .collect();
    let tail = &obs[obs.len().saturating_sub(VELOCITY_WINDOW)..];
    let steps: Vec<Vec3> = tail
        .windows(2)
        .filter(|w| w[1].timestamp > w[0].timestamp)
        .map(|w| (w[1].position - w[0].position) / (w[1].timestamp - w[0].timestamp))
        .collect();
    if steps.is_empty() {
        return Vec3::zeros();
    }
    let mut v = Vec3::zeros();
    for k in 0..3 {
        let mut c: Vec<f64> = steps.iter().map(|s| s[k]).collect();
        c.sort_by(f64::total_cmp);
        let m = c.len() / 2;
        v[k] = if c.len() % 2 == 0 { 0.5 * (c[m - 1] + c[m]) } else { c[m] };
    }
    v
}

fn last_observed(track: &Track) -> &TrackSample {
    track
        .samples
        .iter()
        .rev()
        .find(|s| s.observed)
        .unwrap_or(&track.samples[track.samples.len() - 1])
}

/// Smallest positive spacing between consecutive samples of any fragment.
fn frame_period(tracks: &[Track]) -> Option<f64> {
    tracks
        .iter()
        .flat_map(|t| t.samples.windows(2).map(|w| w[1].timestamp - w[0].timestamp))
        .filter(|d| *d > 1e-9)
        .min_by(f64::total_cmp)
}

/// Merges re-identified fragments. Merged tracks keep the id of their first
/// fragment and become abnormal when at least one frame had to be filled in.
pub fn bridge_gaps(fragments: &[Track], params: &BridgeParams) -> Vec<Track> {
    let n = fragments.len();
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (ai, a) in fragments.iter().enumerate() {
        let end = last_observed(a);
        let v = end_velocity(a);
        for (bi, b) in fragments.iter().enumerate() {
            let lag = b.birth_time - a.death_time;
            if ai == bi || lag <= 1e-9 || lag > params.max_gap {
                continue;
            }
            let predicted = end.position + v * (b.birth_time - end.timestamp);
            let residual = (b.samples[0].position - predicted).norm();
            if residual <= params.gate_radius {
                pairs.push((residual, ai, bi));
            }
        }
    }
    pairs.sort_by(|x, y| {
        x.0.total_cmp(&y.0)
            .then(fragments[x.1].id.cmp(&fragments[y.1].id))
            .then(fragments[x.2].id.cmp(&fragments[y.2].id))
    });

    let mut next: Vec<Option<usize>> = vec![None; n];
    let mut has_prev = vec![false; n];
    for (_, a, b) in pairs {
        if next[a].is_none() && !has_prev[b] && !closes_cycle(&next, b, a) {
            next[a] = Some(b);
            has_prev[b] = true;
        }
    }

    let dt = frame_period(fragments).unwrap_or(0.1);
    let mut out = Vec::new();
    for head in 0..n {
        if has_prev[head] {
            continue;
        }
        let mut samples = fragments[head].samples.clone();
        let mut cur = head;
        while let Some(nb) = next[cur] {
            let a_end = *samples.last().expect("fragments are non-empty");
            let b = &fragments[nb];
            let b_start = b.samples[0];
            let span = b_start.timestamp - a_end.timestamp;
            let mut k = 1;
            loop {
                let t = a_end.timestamp + k as f64 * dt;
                if t > b_start.timestamp - 0.5 * dt {
                    break;
                }
                let frac = (t - a_end.timestamp) / span;
                samples.push(TrackSample {
                    timestamp: t,
                    position: a_end.position + (b_start.position - a_end.position) * frac,
                    observed: false,
                });
                k += 1;
            }
            samples.extend_from_slice(&b.samples);
            cur = nb;
        }
        out.push(Track::from_samples(fragments[head].id, samples));
    }
    out.sort_by_key(|t| t.id);
    out
}

fn closes_cycle(next: &[Option<usize>], from: usize, target: usize) -> bool {
    let mut cur = Some(from);
    while let Some(c) = cur {
        if c == target {
            return true;
        }
        cur = next[c];
    }
    false
}
