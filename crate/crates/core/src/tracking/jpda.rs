//! Joint probabilistic data association with exhaustive event enumeration.
//!
//! Tracks use a 3D constant-velocity Kalman filter with state
//! `[x, y, z, vx, vy, vz]`. Each step gates detections per track, splits the
//! gating graph into independent groups and enumerates every feasible joint
//! event inside a group (each detection to at most one track, each track to at
//! most one detection). The event weight is
//!
//! ```text
//!   lambda^(#false alarms) * prod_assigned(P_D * N(nu; 0, S)) * prod_missed(1 - P_D * P_G)
//! ```
//!
//! and the marginal association probabilities drive the usual combined
//! innovation update with the spread-of-innovations covariance term.

use nalgebra::{Matrix3, SMatrix};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::linalg::{make_psd, Mat6, Vec6};
use crate::scene::Frame;
use crate::{Error, Result, Vec3};

use super::{detect, AppearanceTable, Detection, Track, TrackSample};

/// Upper bound on joint events enumerated for one group of interacting tracks.
pub const MAX_JOINT_EVENTS: usize = 1_000_000;

type Mat36 = SMatrix<f64, 3, 6>;
type Mat63 = SMatrix<f64, 6, 3>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JpdaParams {
    /// Squared Mahalanobis gate.
    pub gate_threshold: f64,
    pub detection_prob: f64,
    /// False alarms per cubic meter.
    pub clutter_density: f64,
    /// White-acceleration intensity of the constant-velocity model.
    pub process_noise: f64,
    /// Per-axis measurement variance (m^2).
    pub measurement_noise: f64,
    /// Per-axis velocity variance of a freshly born track ((m/s)^2).
    pub initial_velocity_var: f64,
    /// Confirm a tentative track after `m` hits within its first `n` updates.
    pub confirm_m_of_n: [usize; 2],
    /// Close a track after this many consecutive misses.
    pub delete_misses: usize,
}

impl Default for JpdaParams {
    fn default() -> Self {
        Self {
            gate_threshold: 9.21,
            detection_prob: 0.9,
            clutter_density: 1e-4,
            process_noise: 4.0,
            measurement_noise: 0.25,
            initial_velocity_var: 100.0,
            confirm_m_of_n: [3, 5],
            delete_misses: 3,
        }
    }
}

impl JpdaParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.gate_threshold > 0.0
            && self.detection_prob > 0.0
            && self.detection_prob <= 1.0
            && self.clutter_density >= 0.0
            && self.process_noise > 0.0
            && self.measurement_noise > 0.0
            && self.initial_velocity_var > 0.0
            && self.confirm_m_of_n[0] >= 1
            && self.confirm_m_of_n[0] <= self.confirm_m_of_n[1]
            && self.delete_misses >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::Config("tracking.jpda: parameter out of range".into()))
        }
    }

    fn gate_prob(&self) -> f64 {
        ChiSquared::new(3.0)
            .map(|c| c.cdf(self.gate_threshold))
            .unwrap_or(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackingConfig {
    pub cluster_radius: f64,
    pub min_cluster_size: usize,
    pub jpda: JpdaParams,
}

impl Default for TrackingConfig {
    fn default() -> Self {
        Self {
            cluster_radius: 1.5,
            min_cluster_size: 5,
            jpda: JpdaParams::default(),
        }
    }
}

/// Gaussian state of one track filter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanState {
    pub x: Vec6,
    pub p: Mat6,
}

impl KalmanState {
    pub fn position(&self) -> Vec3 {
        self.x.fixed_rows::<3>(0).into()
    }

    pub fn velocity(&self) -> Vec3 {
        self.x.fixed_rows::<3>(3).into()
    }

    fn born_at(z: &Vec3, params: &JpdaParams) -> Self {
        let mut x = Vec6::zeros();
        x.fixed_rows_mut::<3>(0).copy_from(z);
        let mut p = Mat6::zeros();
        for k in 0..3 {
            p[(k, k)] = params.measurement_noise;
            p[(k + 3, k + 3)] = params.initial_velocity_var;
        }
        Self { x, p }
    }

    pub fn predict(&mut self, dt: f64, q: f64) {
        let (f, qm) = transition(dt, q);
        self.x = f * self.x;
        self.p = make_psd(&(f * self.p * f.transpose() + qm));
    }
}

fn transition(dt: f64, q: f64) -> (Mat6, Mat6) {
    let mut f = Mat6::identity();
    let mut qm = Mat6::zeros();
    let (dt2, dt3) = (dt * dt, dt * dt * dt);
    for k in 0..3 {
        f[(k, k + 3)] = dt;
        qm[(k, k)] = q * dt3 / 3.0;
        qm[(k, k + 3)] = q * dt2 / 2.0;
        qm[(k + 3, k)] = q * dt2 / 2.0;
        qm[(k + 3, k + 3)] = q * dt;
    }
    (f, qm)
}

fn observation() -> Mat36 {
    let mut h = Mat36::zeros();
    for k in 0..3 {
        h[(k, k)] = 1.0;
    }
    h
}

#[derive(Debug, Clone)]
struct LiveTrack {
    key: u64,
    id: Option<u32>,
    filter: KalmanState,
    samples: Vec<TrackSample>,
    updates: usize,
    hits: usize,
    misses: usize,
}

/// Per-track association probabilities of the last step.
#[derive(Debug, Clone, PartialEq)]
pub struct Association {
    /// Internal key; stable for the lifetime of the track, confirmed or not.
    pub track_key: u64,
    pub track_id: Option<u32>,
    pub beta_miss: f64,
    /// `(detection index, beta)` for every gated detection.
    pub betas: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepReport {
    pub associations: Vec<Association>,
    /// Detections that started a new tentative track.
    pub births: Vec<usize>,
}

/// Mutable state of one tracker instance.
#[derive(Debug, Clone, Default)]
pub struct TrackerState {
    live: Vec<LiveTrack>,
    closed: Vec<Track>,
    next_key: u64,
    next_id: u32,
    last_time: Option<f64>,
}

impl TrackerState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Filters of confirmed live tracks, by track id.
    pub fn confirmed(&self) -> Vec<(u32, KalmanState)> {
        self.live
            .iter()
            .filter_map(|t| t.id.map(|id| (id, t.filter)))
            .collect()
    }

    /// `(key, confirmed id, filter, consecutive misses)` for every live track.
    pub fn live_tracks(&self) -> Vec<(u64, Option<u32>, KalmanState, usize)> {
        self.live
            .iter()
            .map(|t| (t.key, t.id, t.filter, t.misses))
            .collect()
    }

    /// Closes every confirmed track and returns all closed tracks ordered by id.
    pub fn finish(mut self) -> Vec<Track> {
        for t in std::mem::take(&mut self.live) {
            if let Some(id) = t.id {
                self.closed.push(Track::from_samples(id, t.samples));
            }
        }
        self.closed.sort_by_key(|t| t.id);
        self.closed
    }
}

struct Gated {
    det: usize,
    innovation: Vec3,
    likelihood: f64,
}

/// Advances the tracker by one scan of detections sharing one timestamp.
pub fn jpda_step(state: &mut TrackerState, detections: &[Detection], timestamp: f64, params: &JpdaParams) -> Result<StepReport> {
    let dt = state.last_time.map_or(0.0, |t| timestamp - t);
    state.last_time = Some(timestamp);
    if dt > 0.0 {
        for t in &mut state.live {
            t.filter.predict(dt, params.process_noise);
        }
    }

    let h = observation();
    let r = Matrix3::identity() * params.measurement_noise;
    let norm = (2.0 * std::f64::consts::PI).powf(1.5);

    // gating
    let mut gated: Vec<Vec<Gated>> = Vec::with_capacity(state.live.len());
    let mut gains: Vec<(Mat63, Matrix3<f64>)> = Vec::with_capacity(state.live.len());
    for t in &state.live {
        let s = h * t.filter.p * h.transpose() + r;
        let s = (s + s.transpose()) * 0.5;
        let s_inv = s.try_inverse().unwrap_or_else(Matrix3::identity);
        let k = t.filter.p * h.transpose() * s_inv;
        let det_s = s.determinant().max(f64::MIN_POSITIVE);
        let pred = h * t.filter.x;
        let mut g = Vec::new();
        for (j, d) in detections.iter().enumerate() {
            let nu = d.position - pred;
            let d2 = (nu.transpose() * s_inv * nu)[(0, 0)];
            if d2 <= params.gate_threshold {
                g.push(Gated {
                    det: j,
                    innovation: nu,
                    likelihood: (-0.5 * d2).exp() / (norm * det_s.sqrt()),
                });
            }
        }
        gated.push(g);
        gains.push((k, s));
    }

    let betas = association_probabilities(&gated, detections.len(), params)?;

    let mut report = StepReport::default();
    for (ti, t) in state.live.iter_mut().enumerate() {
        let (beta_miss, beta) = &betas[ti];
        report.associations.push(Association {
            track_key: t.key,
            track_id: t.id,
            beta_miss: *beta_miss,
            betas: gated[ti].iter().zip(beta).map(|(g, &b)| (g.det, b)).collect(),
        });
        t.updates += 1;
        if gated[ti].is_empty() {
            t.misses += 1;
            continue;
        }
        let (k, s) = &gains[ti];
        let mut combined = Vec3::zeros();
        let mut spread = Matrix3::zeros();
        for (g, &b) in gated[ti].iter().zip(beta) {
            combined += g.innovation * b;
            spread += g.innovation * g.innovation.transpose() * b;
        }
        spread -= combined * combined.transpose();
        let prior = t.filter.p;
        let corrected = prior - k * s * k.transpose();
        t.filter.x += k * combined;
        t.filter.p = make_psd(&(prior * *beta_miss + corrected * (1.0 - beta_miss) + k * spread * k.transpose()));
        t.hits += 1;
        t.misses = 0;
        t.samples.push(TrackSample {
            timestamp,
            position: t.filter.position(),
            observed: true,
        });
    }

    // births from detections outside every gate
    let mut claimed = vec![false; detections.len()];
    for g in gated.iter().flatten() {
        claimed[g.det] = true;
    }
    for (j, d) in detections.iter().enumerate() {
        if claimed[j] {
            continue;
        }
        let filter = KalmanState::born_at(&d.position, params);
        state.live.push(LiveTrack {
            key: state.next_key,
            id: None,
            filter,
            samples: vec![TrackSample {
                timestamp,
                position: d.position,
                observed: true,
            }],
            updates: 1,
            hits: 1,
            misses: 0,
        });
        state.next_key += 1;
        report.births.push(j);
    }

    // confirmation and deletion
    let [m, n] = params.confirm_m_of_n;
    let mut keep = Vec::with_capacity(state.live.len());
    for mut t in std::mem::take(&mut state.live) {
        if t.id.is_none() {
            if t.hits >= m {
                state.next_id += 1;
                t.id = Some(state.next_id);
            } else if t.updates >= n || t.misses >= params.delete_misses {
                continue;
            }
        }
        if t.misses >= params.delete_misses {
            if let Some(id) = t.id {
                state.closed.push(Track::from_samples(id, t.samples));
            }
            continue;
        }
        keep.push(t);
    }
    state.live = keep;
    Ok(report)
}

/// Marginal `(beta_miss, beta per gated detection)` for every track.
fn association_probabilities(gated: &[Vec<Gated>], n_det: usize, params: &JpdaParams) -> Result<Vec<(f64, Vec<f64>)>> {
    let n_tracks = gated.len();
    let mut out: Vec<(f64, Vec<f64>)> = gated.iter().map(|g| (1.0, vec![0.0; g.len()])).collect();

    // group tracks that share detections
    let mut group_of: Vec<usize> = (0..n_tracks).collect();
    let mut det_owner: Vec<Option<usize>> = vec![None; n_det];
    for (ti, g) in gated.iter().enumerate() {
        for gd in g {
            match det_owner[gd.det] {
                None => det_owner[gd.det] = Some(ti),
                Some(other) => {
                    let (a, b) = (root(&mut group_of, ti), root(&mut group_of, other));
                    group_of[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for ti in 0..n_tracks {
        if !gated[ti].is_empty() {
            let r = root(&mut group_of, ti);
            groups.entry(r).or_default().push(ti);
        }
    }

    let miss_weight = 1.0 - params.detection_prob * params.gate_prob();
    for tracks in groups.values() {
        let mut dets: Vec<usize> = tracks.iter().flat_map(|&t| gated[t].iter().map(|g| g.det)).collect();
        dets.sort_unstable();
        dets.dedup();
        let mut lambda = params.clutter_density;
        let mut acc = enumerate_group(tracks, gated, &dets, params.detection_prob, miss_weight, lambda)?;
        if acc.total <= 0.0 && lambda == 0.0 {
            // no event explains every detection without clutter
            lambda = 1e-12;
            acc = enumerate_group(tracks, gated, &dets, params.detection_prob, miss_weight, lambda)?;
        }
        for (local, &ti) in tracks.iter().enumerate() {
            out[ti].0 = acc.miss[local] / acc.total;
            out[ti].1 = acc.assoc[local].iter().map(|w| w / acc.total).collect();
        }
    }
    Ok(out)
}

fn root(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

struct EventSums {
    total: f64,
    miss: Vec<f64>,
    assoc: Vec<Vec<f64>>,
}

fn enumerate_group(tracks: &[usize], gated: &[Vec<Gated>], dets: &[usize], pd: f64, miss_weight: f64, lambda: f64) -> Result<EventSums> {
    let mut sums = EventSums {
        total: 0.0,
        miss: vec![0.0; tracks.len()],
        assoc: tracks.iter().map(|&t| vec![0.0; gated[t].len()]).collect(),
    };
    let mut used = vec![false; dets.len()];
    let mut choice: Vec<Option<usize>> = vec![None; tracks.len()];
    let mut count = 0usize;
    let ctx = Ctx {
        tracks,
        gated,
        dets,
        pd,
        miss_weight,
        lambda,
    };
    ctx.recurse(0, 1.0, 0, &mut used, &mut choice, &mut sums, &mut count)?;
    Ok(sums)
}

struct Ctx<'a> {
    tracks: &'a [usize],
    gated: &'a [Vec<Gated>],
    dets: &'a [usize],
    pd: f64,
    miss_weight: f64,
    lambda: f64,
}

impl Ctx<'_> {
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        &self,
        depth: usize,
        weight: f64,
        assigned: usize,
        used: &mut [bool],
        choice: &mut [Option<usize>],
        sums: &mut EventSums,
        count: &mut usize,
    ) -> Result<()> {
        if depth == self.tracks.len() {
            *count += 1;
            if *count > MAX_JOINT_EVENTS {
                return Err(Error::TooManyEvents {
                    limit: MAX_JOINT_EVENTS,
                });
            }
            let w = weight * self.lambda.powi((self.dets.len() - assigned) as i32);
            sums.total += w;
            for (local, c) in choice.iter().enumerate() {
                match c {
                    None => sums.miss[local] += w,
                    Some(g) => sums.assoc[local][*g] += w,
                }
            }
            return Ok(());
        }
        let t = self.tracks[depth];
        choice[depth] = None;
        self.recurse(depth + 1, weight * self.miss_weight, assigned, used, choice, sums, count)?;
        for (gi, g) in self.gated[t].iter().enumerate() {
            let slot = self.dets.binary_search(&g.det).expect("gated detection belongs to its group");
            if used[slot] {
                continue;
            }
            used[slot] = true;
            choice[depth] = Some(gi);
            self.recurse(depth + 1, weight * self.pd * g.likelihood, assigned + 1, used, choice, sums, count)?;
            used[slot] = false;
        }
        choice[depth] = None;
        Ok(())
    }
}

/// Detects and tracks objects over a time-ordered frame sequence.
pub fn run_tracker(frames: &[Frame], config: &TrackingConfig) -> Result<(Vec<Track>, AppearanceTable)> {
    config.jpda.validate()?;
    let mut state = TrackerState::new();
    for f in frames {
        let dets = detect(f, config.cluster_radius, config.min_cluster_size);
        jpda_step(&mut state, &dets, f.timestamp, &config.jpda)?;
    }
    let tracks = state.finish();
    let table = AppearanceTable::from_tracks(&tracks);
    Ok((tracks, table))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(p: Vec3, t: f64) -> Detection {
        Detection {
            position: p,
            timestamp: t,
            point_count: 10,
        }
    }

    /// Brings a single track to a settled state along +y at 10 m/s.
    fn settled_tracker(params: &JpdaParams) -> TrackerState {
        let mut st = TrackerState::new();
        for k in 0..15 {
            let t = k as f64 * 0.1;
            jpda_step(&mut st, &[det(Vec3::new(0.0, t * 10.0, 0.0), t)], t, params).unwrap();
        }
        st
    }

    #[test]
    fn single_target_matches_plain_kalman_update() {
        // without clutter the lone gated detection has beta = 1
        let params = JpdaParams {
            clutter_density: 0.0,
            ..JpdaParams::default()
        };
        let mut st = settled_tracker(&params);
        let before = st.live[0].filter;
        let z = Vec3::new(0.02, 15.05, -0.01);
        let report = jpda_step(&mut st, &[det(z, 1.5)], 1.5, &params).unwrap();
        let a = &report.associations[0];
        assert!((a.betas[0].1 - 1.0).abs() < 1e-12, "beta = {}", a.betas[0].1);

        let mut oracle = before;
        oracle.predict(0.1, params.process_noise);
        let h = observation();
        let s = h * oracle.p * h.transpose() + Matrix3::identity() * params.measurement_noise;
        let k = oracle.p * h.transpose() * s.try_inverse().unwrap();
        let x = oracle.x + k * (z - h * oracle.x);
        assert!((st.live[0].filter.x - x).amax() < 1e-6);
    }

    #[test]
    fn separated_targets_have_no_cross_association() {
        let params = JpdaParams::default();
        let mut st = TrackerState::new();
        for k in 0..6 {
            let t = k as f64 * 0.1;
            let dets = [det(Vec3::new(0.0, t * 10.0, 0.0), t), det(Vec3::new(50.0, -t * 10.0, 0.0), t)];
            let rep = jpda_step(&mut st, &dets, t, &params).unwrap();
            for a in &rep.associations {
                assert!(a.betas.len() <= 1, "cross gating at step {k}");
                let total: f64 = a.beta_miss + a.betas.iter().map(|b| b.1).sum::<f64>();
                assert!((total - 1.0).abs() < 1e-9);
            }
        }
        assert_eq!(st.confirmed().len(), 2);
    }

    #[test]
    fn no_detections_only_predicts() {
        let params = JpdaParams::default();
        let mut st = settled_tracker(&params);
        let before = st.live[0].filter;
        jpda_step(&mut st, &[], 1.5, &params).unwrap();
        let mut expect = before;
        expect.predict(0.1, params.process_noise);
        assert_eq!(st.live[0].filter.x, expect.x);
        assert_eq!(st.live[0].misses, 1);
    }

    #[test]
    fn betas_sum_to_one_under_ambiguity() {
        let params = JpdaParams {
            gate_threshold: 50.0,
            ..JpdaParams::default()
        };
        let mut st = TrackerState::new();
        for k in 0..8 {
            let t = k as f64 * 0.1;
            let dets = [
                det(Vec3::new(0.0, t, 0.0), t),
                det(Vec3::new(0.6, t, 0.0), t),
                det(Vec3::new(0.3, t + 0.2, 0.1), t),
            ];
            let rep = jpda_step(&mut st, &dets, t, &params).unwrap();
            for a in &rep.associations {
                let total: f64 = a.beta_miss + a.betas.iter().map(|b| b.1).sum::<f64>();
                assert!((total - 1.0).abs() < 1e-9);
            }
            for t in &st.live {
                let min_eig = t.filter.p.symmetric_eigen().eigenvalues.min();
                assert!(min_eig >= -1e-9);
                assert_eq!(t.filter.p, t.filter.p.transpose());
            }
        }
    }

    #[test]
    fn event_explosion_is_reported() {
        let params = JpdaParams {
            gate_threshold: 1e12,
            ..JpdaParams::default()
        };
        let mut st = TrackerState::new();
        let dets: Vec<Detection> = (0..9).map(|i| det(Vec3::new(i as f64 * 3.0, 0.0, 0.0), 0.0)).collect();
        jpda_step(&mut st, &dets, 0.0, &params).unwrap();
        let err = jpda_step(&mut st, &dets, 0.1, &params).unwrap_err();
        assert!(matches!(err, Error::TooManyEvents { .. }));
    }

    #[test]
    fn empty_sequence_gives_no_tracks() {
        let (tracks, table) = run_tracker(&[], &TrackingConfig::default()).unwrap();
        assert!(tracks.is_empty());
        assert!(table.0.is_empty());
    }
}
