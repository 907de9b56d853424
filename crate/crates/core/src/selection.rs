//! Choosing the GDBN model that best explains a test track.
//!
//! Each test position is charged the distance to the nearest cluster mean of a
//! model (positions only). A model's error is the sum of these charges; the
//! model with the smallest error wins, ties going to the lowest model id.

use serde::{Deserialize, Serialize};

use crate::gng::Cluster;
use crate::vocabulary::GdbnVocabulary;
use crate::{Error, Result, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelError {
    pub model_id: u32,
    /// Meters.
    pub total: f64,
    pub per_position: Vec<f64>,
    /// Nearest cluster id for each position.
    pub nearest: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSelectionReport {
    /// Sorted by model id.
    pub models: Vec<ModelError>,
    pub selected: u32,
}

impl ModelSelectionReport {
    pub fn selected_error(&self) -> &ModelError {
        self.models
            .iter()
            .find(|m| m.model_id == self.selected)
            .expect("selected model is in the table")
    }
}

/// Euclidean distance between `p` and the position part of the cluster mean.
pub fn position_cluster_distance(p: &Vec3, cluster: &Cluster) -> f64 {
    (p - cluster.mean_position()).norm()
}

/// Nearest cluster by position and its distance; ties go to the lowest id.
pub fn nearest_cluster<'a>(p: &Vec3, clusters: impl IntoIterator<Item = &'a Cluster>) -> Option<(usize, f64)> {
    clusters
        .into_iter()
        .map(|c| (c.id, position_cluster_distance(p, c)))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
}

fn model_error(positions: &[Vec3], model: &GdbnVocabulary) -> Result<ModelError> {
    let mut per_position = Vec::with_capacity(positions.len());
    let mut nearest = Vec::with_capacity(positions.len());
    for p in positions {
        let (id, e) = nearest_cluster(p, &model.clusters).ok_or(Error::NoClusters)?;
        per_position.push(e);
        nearest.push(id);
    }
    Ok(ModelError {
        model_id: model.model_id,
        total: per_position.iter().sum(),
        per_position,
        nearest,
    })
}

pub fn select_model(positions: &[Vec3], models: &[GdbnVocabulary]) -> Result<ModelSelectionReport> {
    if models.is_empty() {
        return Err(Error::NoModels);
    }
    if positions.is_empty() {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    let mut table = models
        .iter()
        .map(|m| model_error(positions, m))
        .collect::<Result<Vec<_>>>()?;
    table.sort_by_key(|m| m.model_id);
    let selected = table
        .iter()
        .min_by(|a, b| a.total.total_cmp(&b.total).then(a.model_id.cmp(&b.model_id)))
        .map(|m| m.model_id)
        .expect("non-empty");
    Ok(ModelSelectionReport { models: table, selected })
}
