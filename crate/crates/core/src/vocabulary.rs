//! Per-track GDBN vocabularies and dummy blockage models.
//!
//! A vocabulary holds the clusters of one track, the label sequence obtained by
//! assigning each generalized state to its nearest cluster, the overall
//! transition matrix of that sequence and dwell-conditioned transition
//! matrices. The row of the last visited cluster is forced to a self-loop so
//! the end of the track is recognizable.

use serde::{Deserialize, Serialize};

use crate::gng::{assign_scaled, Cluster};
use crate::gstate::GeneralizedState;
use crate::linalg::Vec6;
use crate::{Error, Result, Vec3, DUMMY_ID_BASE};

/// Row-stochastic matrix stored row-major.
pub type Matrix = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VocabularyParams {
    /// Lower edges (in steps) of the dwell bins. Must start at 1 and increase.
    pub dwell_bins: Vec<usize>,
    /// Lloyd refinement rounds for dummy clusters.
    pub dummy_refine_iters: usize,
}

impl Default for VocabularyParams {
    fn default() -> Self {
        Self {
            dwell_bins: vec![1, 3, 6],
            dummy_refine_iters: 20,
        }
    }
}

impl VocabularyParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.dwell_bins.first() == Some(&1) && self.dwell_bins.windows(2).all(|w| w[0] < w[1]);
        if ok {
            Ok(())
        } else {
            Err(Error::Config("vocabulary: dwell_bins must start at 1 and increase".into()))
        }
    }

    /// Index of the bin holding `dwell` (>= 1).
    pub fn bin_of(&self, dwell: usize) -> usize {
        self.dwell_bins.iter().rposition(|&lo| dwell >= lo).unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GdbnVocabulary {
    pub model_id: u32,
    /// Track the model was learned from.
    pub track_id: u32,
    pub clusters: Vec<Cluster>,
    pub tm: Matrix,
    pub dwell_bins: Vec<usize>,
    /// One matrix per dwell bin, same order as `dwell_bins`.
    pub temporal_tms: Vec<Matrix>,
    pub terminal_cluster: usize,
    pub labels: Vec<usize>,
    pub timestamps: Vec<f64>,
    /// Per-dimension weights of the labeling metric, as used for clustering.
    #[serde(default)]
    pub scale: Option<[f64; 6]>,
}

impl GdbnVocabulary {
    pub fn is_dummy(&self) -> bool {
        self.model_id >= DUMMY_ID_BASE
    }

    /// Label of an observed state: nearest regular cluster under the model's
    /// metric, the same rule that produced `labels`.
    pub fn label_state(&self, gs: &GeneralizedState) -> Result<usize> {
        let n = self.clusters.iter().take_while(|c| !c.is_dummy).count();
        assign_scaled(gs, &self.clusters[..n], self.scale)
    }

    pub fn dummy_clusters(&self) -> impl Iterator<Item = &Cluster> {
        self.clusters.iter().filter(|c| c.is_dummy)
    }

    /// Label at `timestamp`, if the track covers it.
    pub fn label_at(&self, timestamp: f64) -> Option<usize> {
        self.timestamps
            .iter()
            .position(|t| (t - timestamp).abs() < 1e-6)
            .map(|i| self.labels[i])
    }
}

/// Blockage interval of an abnormal track and the positions predicted for the
/// hidden frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockageSegment {
    pub start: f64,
    pub end: f64,
    pub positions: Vec<(f64, Vec3)>,
}

impl BlockageSegment {
    pub fn new(start: f64, end: f64, positions: Vec<(f64, Vec3)>) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::EmptyGap);
        }
        if end < start || positions.iter().any(|(t, _)| *t < start - 1e-9 || *t > end + 1e-9) {
            return Err(Error::Config(format!("blockage positions fall outside [{start}, {end}]")));
        }
        Ok(Self { start, end, positions })
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.start - 1e-9 && t <= self.end + 1e-9
    }
}

/// Number of steps spent in the current label at each index, counting the
/// current step.
pub fn dwell_times(labels: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(labels.len());
    for (i, l) in labels.iter().enumerate() {
        let d = if i > 0 && labels[i - 1] == *l { out[i - 1] + 1 } else { 1 };
        out.push(d);
    }
    out
}

/// Lengths of maximal runs of equal labels.
pub fn run_lengths(labels: &[usize]) -> Vec<usize> {
    let mut runs: Vec<usize> = Vec::new();
    for (i, l) in labels.iter().enumerate() {
        if i > 0 && labels[i - 1] == *l {
            *runs.last_mut().expect("run started") += 1;
        } else {
            runs.push(1);
        }
    }
    runs
}

/// Normalizes transition counts; empty rows and the `terminal` row become
/// self-indicators.
pub fn normalize_counts(counts: &[Vec<f64>], terminal: Option<usize>) -> Matrix {
    counts
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let total: f64 = row.iter().sum();
            if Some(i) == terminal || total <= 0.0 {
                let mut r = vec![0.0; row.len()];
                r[i] = 1.0;
                r
            } else {
                row.iter().map(|c| c / total).collect()
            }
        })
        .collect()
}

fn transition_tables(labels: &[usize], k: usize, params: &VocabularyParams) -> (Matrix, Vec<Matrix>) {
    let mut tm = vec![vec![0.0; k]; k];
    let mut temporal = vec![vec![vec![0.0; k]; k]; params.dwell_bins.len()];
    let dwell = dwell_times(labels);
    for t in 0..labels.len().saturating_sub(1) {
        let (i, j) = (labels[t], labels[t + 1]);
        tm[i][j] += 1.0;
        temporal[params.bin_of(dwell[t])][i][j] += 1.0;
    }
    let terminal = labels.last().copied();
    (
        normalize_counts(&tm, terminal),
        temporal.iter().map(|c| normalize_counts(c, terminal)).collect(),
    )
}

/// Labels `gs` with `clusters` and estimates the transition statistics.
pub fn learn_vocabulary(
    model_id: u32,
    track_id: u32,
    gs: &[GeneralizedState],
    clusters: &[Cluster],
    scale: Option<[f64; 6]>,
    params: &VocabularyParams,
) -> Result<GdbnVocabulary> {
    if gs.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: gs.len(),
        });
    }
    if model_id >= DUMMY_ID_BASE {
        return Err(Error::ModelId(model_id));
    }
    params.validate()?;
    let labels = gs
        .iter()
        .map(|g| assign_scaled(g, clusters, scale))
        .collect::<Result<Vec<_>>>()?;
    let mut v = assemble(
        model_id,
        track_id,
        clusters.to_vec(),
        labels,
        gs.iter().map(|g| g.timestamp).collect(),
        params,
    );
    v.scale = scale;
    Ok(v)
}

fn assemble(
    model_id: u32,
    track_id: u32,
    clusters: Vec<Cluster>,
    labels: Vec<usize>,
    timestamps: Vec<f64>,
    params: &VocabularyParams,
) -> GdbnVocabulary {
    let (tm, temporal_tms) = transition_tables(&labels, clusters.len(), params);
    GdbnVocabulary {
        model_id,
        track_id,
        terminal_cluster: *labels.last().expect("at least two labels"),
        clusters,
        tm,
        dwell_bins: params.dwell_bins.clone(),
        temporal_tms,
        labels,
        timestamps,
        scale: None,
    }
}

fn median(v: &mut [usize]) -> f64 {
    v.sort_unstable();
    let m = v.len() / 2;
    if v.len() % 2 == 0 {
        0.5 * (v[m - 1] + v[m]) as f64
    } else {
        v[m] as f64
    }
}

fn nearest_position(p: &Vec3, centers: &[Vec3]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centers.iter().enumerate() {
        let d = (c - p).norm();
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}

/// Number of dummy clusters for a gap of `gap_frames` steps.
pub fn dummy_cluster_count(gap_frames: usize, base_labels: &[usize]) -> usize {
    let med = median(&mut run_lengths(base_labels)).max(1.0);
    ((gap_frames as f64 / med).ceil() as usize).clamp(1, gap_frames.max(1))
}

/// Splits the gap states into contiguous chunks, refines them with a few
/// Lloyd rounds on position and returns the per-state dummy index.
fn dummy_partition(gap: &[GeneralizedState], d: usize, iters: usize) -> Vec<usize> {
    let n = gap.len();
    let mut part: Vec<usize> = (0..n).map(|i| i * d / n).collect();
    for _ in 0..iters {
        let mut sums = vec![Vec3::zeros(); d];
        let mut counts = vec![0usize; d];
        for (g, &p) in gap.iter().zip(&part) {
            sums[p] += g.position;
            counts[p] += 1;
        }
        if counts.contains(&0) {
            break;
        }
        let centers: Vec<Vec3> = sums.iter().zip(&counts).map(|(s, c)| s / *c as f64).collect();
        let next: Vec<usize> = gap.iter().map(|g| nearest_position(&g.position, &centers)).collect();
        let mut seen = vec![false; d];
        next.iter().for_each(|&p| seen[p] = true);
        if next == part || seen.contains(&false) {
            break;
        }
        part = next;
    }
    part
}

/// Builds a blockage-aware model from a normal one: the gap states become
/// dummy clusters appended after the base clusters, the base labels inside
/// the gap are replaced by the dummy cluster nearest to the segment position
/// at that time (the gap state itself when the segment has none) and all
/// transition statistics are recomputed. `base` is left untouched.
pub fn build_dummy_model(
    base: &GdbnVocabulary,
    segment: &BlockageSegment,
    gs_in_gap: &[GeneralizedState],
    model_id: u32,
    params: &VocabularyParams,
) -> Result<GdbnVocabulary> {
    if base.is_dummy() {
        return Err(Error::ModelId(base.model_id));
    }
    if model_id < DUMMY_ID_BASE {
        return Err(Error::ModelId(model_id));
    }
    if gs_in_gap.is_empty() {
        return Err(Error::EmptyGap);
    }
    if gs_in_gap.iter().any(|g| !segment.contains(g.timestamp)) {
        return Err(Error::Config("gap states fall outside the blockage segment".into()));
    }
    params.validate()?;

    let k = base.clusters.len();
    let d = dummy_cluster_count(gs_in_gap.len(), &base.labels);
    let part = dummy_partition(gs_in_gap, d, params.dummy_refine_iters);

    let mut clusters = base.clusters.clone();
    for j in 0..d {
        let members: Vec<Vec6> = gs_in_gap
            .iter()
            .zip(&part)
            .filter(|(_, p)| **p == j)
            .map(|(g, _)| g.as_vec6())
            .collect();
        if members.is_empty() {
            continue;
        }
        let id = clusters.len();
        clusters.push(Cluster::from_members(id, &members, true));
    }
    let dummy_means: Vec<Vec3> = clusters[k..].iter().map(Cluster::mean_position).collect();

    let mut labels = base.labels.clone();
    let mut spliced = 0;
    for g in gs_in_gap {
        let Some(i) = base.timestamps.iter().position(|t| (t - g.timestamp).abs() < 1e-6) else {
            continue;
        };
        let p = segment
            .positions
            .iter()
            .find(|(t, _)| (t - g.timestamp).abs() < 1e-6)
            .map_or(g.position, |(_, p)| *p);
        labels[i] = k + nearest_position(&p, &dummy_means);
        spliced += 1;
    }
    if spliced == 0 {
        return Err(Error::EmptyGap);
    }
    let mut v = assemble(model_id, base.track_id, clusters, labels, base.timestamps.clone(), params);
    v.scale = base.scale;
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gs_line(n: usize, dt: f64) -> Vec<GeneralizedState> {
        (0..n)
            .map(|i| GeneralizedState {
                timestamp: i as f64 * dt,
                position: Vec3::new(0.0, i as f64, 0.0),
                velocity: Vec3::new(0.0, 10.0, 0.0),
            })
            .collect()
    }

    fn point_cluster(id: usize, y: f64) -> Cluster {
        Cluster::from_members(id, &[Vec6::new(0.0, y, 0.0, 0.0, 10.0, 0.0)], false)
    }

    fn vocab_from_labels(labels: Vec<usize>, k: usize) -> GdbnVocabulary {
        let clusters = (0..k).map(|i| point_cluster(i, i as f64)).collect();
        let ts = (0..labels.len()).map(|i| i as f64 * 0.1).collect();
        assemble(1, 1, clusters, labels, ts, &VocabularyParams::default())
    }

    fn assert_stochastic(m: &Matrix) {
        for row in m {
            assert!(row.iter().all(|v| *v >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn hand_counted_transitions() {
        let v = vocab_from_labels(vec![0, 0, 1, 1], 2);
        assert_eq!(v.tm, vec![vec![0.5, 0.5], vec![0.0, 1.0]]);
        assert_eq!(v.terminal_cluster, 1);
        // dwell of the 0 -> 0 step is 1, the 0 -> 1 step is 2: both bin 0
        assert_eq!(v.temporal_tms[0][0], vec![0.5, 0.5]);
        assert_eq!(v.temporal_tms[1][0], vec![1.0, 0.0]);
    }

    #[test]
    fn single_cluster_track() {
        let gs = gs_line(5, 0.1);
        let v = learn_vocabulary(3, 3, &gs, &[point_cluster(0, 2.0)], None, &VocabularyParams::default()).unwrap();
        assert_eq!(v.tm, vec![vec![1.0]]);
        assert_eq!(v.labels, vec![0; 5]);
    }

    #[test]
    fn learn_rejects_short_input_and_dummy_ids() {
        let gs = gs_line(1, 0.1);
        let c = [point_cluster(0, 0.0)];
        let p = VocabularyParams::default();
        assert!(learn_vocabulary(1, 1, &gs, &c, None, &p).is_err());
        assert!(learn_vocabulary(DUMMY_ID_BASE, 1, &gs_line(3, 0.1), &c, None, &p).is_err());
    }

    #[test]
    fn one_dummy_cluster_when_gap_equals_median_dwell() {
        let base = vocab_from_labels(vec![0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 2, 2, 2, 2, 2], 3);
        assert_eq!(dummy_cluster_count(5, &base.labels), 1);
        let before = serde_json::to_string(&base).unwrap();
        let gap: Vec<GeneralizedState> = gs_line(15, 0.1)[5..10].to_vec();
        let seg = BlockageSegment::new(0.5, 0.9, gap.iter().map(|g| (g.timestamp, g.position)).collect()).unwrap();
        let dummy = build_dummy_model(&base, &seg, &gap, DUMMY_ID_BASE, &VocabularyParams::default()).unwrap();
        assert_eq!(serde_json::to_string(&base).unwrap(), before);

        assert_eq!(dummy.clusters.len(), 4);
        assert!(dummy.clusters[3].is_dummy);
        assert_eq!(dummy.labels, vec![0, 0, 0, 0, 0, 3, 3, 3, 3, 3, 2, 2, 2, 2, 2]);
        assert_eq!(dummy.tm[0], vec![0.8, 0.0, 0.0, 0.2]);
        assert_eq!(dummy.tm[3], vec![0.0, 0.0, 0.2, 0.8]);
        assert_eq!(dummy.tm[1], vec![0.0, 1.0, 0.0, 0.0]);

        // with one bin per dwell the path into and out of the gap is certain
        let exact = VocabularyParams {
            dwell_bins: vec![1, 2, 3, 4, 5],
            ..VocabularyParams::default()
        };
        let dummy = build_dummy_model(&base, &seg, &gap, DUMMY_ID_BASE, &exact).unwrap();
        assert_eq!(dummy.temporal_tms[4][0], vec![0.0, 0.0, 0.0, 1.0]);
        assert_eq!(dummy.temporal_tms[4][3], vec![0.0, 0.0, 1.0, 0.0]);
        assert_eq!(dummy.temporal_tms[3][3], vec![0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn dummy_model_errors() {
        let base = vocab_from_labels(vec![0, 0, 1, 1], 2);
        let seg = BlockageSegment::new(0.1, 0.2, vec![(0.1, Vec3::zeros())]).unwrap();
        let p = VocabularyParams::default();
        assert!(matches!(build_dummy_model(&base, &seg, &[], 1000, &p), Err(Error::EmptyGap)));
        let gap = &gs_line(4, 0.1)[1..3];
        assert!(build_dummy_model(&base, &seg, gap, 7, &p).is_err());
        assert!(BlockageSegment::new(0.0, 1.0, vec![]).is_err());
        assert!(BlockageSegment::new(0.0, 1.0, vec![(2.0, Vec3::zeros())]).is_err());
    }

    #[test]
    fn dummy_labels_are_contiguous_chunks() {
        let labels: Vec<usize> = (0..40).map(|i| i / 2).collect();
        let base = vocab_from_labels(labels, 20);
        let gs = gs_line(40, 0.1);
        let gap = &gs[10..20];
        let seg = BlockageSegment::new(1.0, 1.9, gap.iter().map(|g| (g.timestamp, g.position)).collect()).unwrap();
        let dummy = build_dummy_model(&base, &seg, gap, 1001, &VocabularyParams::default()).unwrap();
        assert_eq!(dummy.dummy_clusters().count(), 5);
        assert_eq!(&dummy.labels[10..20], &[20, 20, 21, 21, 22, 22, 23, 23, 24, 24]);
        assert!(dummy.clusters.iter().filter(|c| c.is_dummy).all(|c| c.id >= 20));
    }

    proptest! {
        #[test]
        fn tm_equals_recount(labels in prop::collection::vec(0usize..5, 2..60)) {
            let v = vocab_from_labels(labels.clone(), 5);
            assert_stochastic(&v.tm);
            for m in &v.temporal_tms {
                assert_stochastic(m);
            }
            let last = *labels.last().unwrap();
            prop_assert_eq!(v.tm[last][last], 1.0);
            for m in &v.temporal_tms {
                prop_assert_eq!(m[last][last], 1.0);
            }
            for i in 0..5 {
                if i == last {
                    continue;
                }
                let from: Vec<usize> = (0..labels.len() - 1).filter(|&t| labels[t] == i).collect();
                for j in 0..5 {
                    let expect = if from.is_empty() {
                        f64::from(u8::from(i == j))
                    } else {
                        from.iter().filter(|&&t| labels[t + 1] == j).count() as f64 / from.len() as f64
                    };
                    prop_assert!((v.tm[i][j] - expect).abs() < 1e-12);
                }
            }
        }
    }
}
