//! Detection, JPDA multi-target tracking and gap bridging.

mod bridge;
mod detect;
mod jpda;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::Vec3;

pub use bridge::{bridge_gaps, velocity_until, BridgeParams};
pub use detect::detect;
pub use jpda::{jpda_step, run_tracker, Association, JpdaParams, KalmanState, StepReport, TrackerState, TrackingConfig, MAX_JOINT_EVENTS};

/// Point-cluster centroid fed to the tracker.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub position: Vec3,
    pub timestamp: f64,
    pub point_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackSample {
    pub timestamp: f64,
    pub position: Vec3,
    /// `false` for positions filled in across a blockage.
    pub observed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrackStatus {
    Normal,
    Abnormal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: u32,
    pub samples: Vec<TrackSample>,
    pub birth_time: f64,
    pub death_time: f64,
    /// `(first, last)` timestamps of each run of unobserved samples.
    pub gaps: Vec<(f64, f64)>,
    pub status: TrackStatus,
}

impl Track {
    /// Builds a track from time-ordered samples, deriving lifetime, gaps and status.
    ///
    /// Panics if `samples` is empty.
    pub fn from_samples(id: u32, samples: Vec<TrackSample>) -> Self {
        assert!(!samples.is_empty(), "track {id} has no samples");
        let mut gaps = Vec::new();
        let mut open: Option<(f64, f64)> = None;
        for s in &samples {
            if s.observed {
                if let Some(g) = open.take() {
                    gaps.push(g);
                }
            } else {
                open = Some(match open {
                    Some((a, _)) => (a, s.timestamp),
                    None => (s.timestamp, s.timestamp),
                });
            }
        }
        // a trailing unobserved run is not a gap, the track simply ends there
        let status = if gaps.is_empty() {
            TrackStatus::Normal
        } else {
            TrackStatus::Abnormal
        };
        Self {
            id,
            birth_time: samples[0].timestamp,
            death_time: samples[samples.len() - 1].timestamp,
            samples,
            gaps,
            status,
        }
    }

    pub fn positions(&self) -> Vec<Vec3> {
        self.samples.iter().map(|s| s.position).collect()
    }

    pub fn is_active(&self, t: f64) -> bool {
        t >= self.birth_time - 1e-9 && t <= self.death_time + 1e-9
    }
}

/// Track id -> `(birth, death)` in seconds.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AppearanceTable(pub BTreeMap<u32, (f64, f64)>);

impl AppearanceTable {
    pub fn from_tracks(tracks: &[Track]) -> Self {
        Self(
            tracks
                .iter()
                .map(|t| (t.id, (t.birth_time, t.death_time)))
                .collect(),
        )
    }
}
