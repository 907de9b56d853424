//! Offline training and online testing built from the individual stages.
//!
//! Training: preprocess, track, bridge, filter into generalized states, fit
//! one GNG per track on its observed states, learn the vocabularies, derive a
//! dummy model per blockage and couple everything into a word book. The book
//! is built from the base scene plus one variant per dummy model in which that
//! model stands in for its base, so the words seen with and without the
//! blockage explanation are both known.
//!
//! Testing: the same front end, one model selection per track, then the word
//! level particle filter over every frame.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::coupling::{build_wordbook_multi, SceneLabelSequence, WordBook, WordId};
use crate::gng;
use crate::gstate::{umkf_filter, GeneralizedState};
use crate::imjpf::{run_inference, FrameObservation, InferenceStep, TrackObservation};
use crate::scene::{preprocess_frame, Frame};
use crate::selection::{select_model, ModelSelectionReport};
use crate::tracking::{bridge_gaps, run_tracker, velocity_until, Track};
use crate::vocabulary::{build_dummy_model, learn_vocabulary, BlockageSegment, GdbnVocabulary};
use crate::{Error, Result, Vec3, DUMMY_ID_BASE};

/// Frames to track, or tracks produced elsewhere.
#[derive(Debug, Clone)]
pub enum Input {
    Frames(Vec<Frame>),
    Tracks(Vec<Track>),
}

/// Time-matching tolerance (s).
const TIME_EPS: f64 = 1e-6;

/// Preprocessed, tracked and bridged tracks long enough to learn from.
pub fn extract_tracks(frames: &[Frame], config: &RunConfig) -> Result<Vec<Track>> {
    let p = &config.preprocess;
    let clean: Vec<Frame> = frames
        .iter()
        .map(|f| preprocess_frame(f, &p.crop, p.ground_z, p.denoise_k, p.denoise_radius))
        .collect();
    let (fragments, _) = run_tracker(&clean, &config.tracking)?;
    let tracks = bridge_gaps(&fragments, &config.bridge);
    Ok(keep_long(tracks, config))
}

fn keep_long(tracks: Vec<Track>, config: &RunConfig) -> Vec<Track> {
    tracks
        .into_iter()
        .filter(|t| t.samples.len() >= config.learning.min_track_samples)
        .collect()
}

/// Tracks and the timestamps of every step of the input.
fn resolve(input: &Input, config: &RunConfig) -> Result<(Vec<Track>, Vec<f64>)> {
    match input {
        Input::Frames(frames) => Ok((extract_tracks(frames, config)?, frames.iter().map(|f| f.timestamp).collect())),
        Input::Tracks(tracks) => {
            let mut ts: Vec<f64> = tracks.iter().flat_map(|t| t.samples.iter().map(|s| s.timestamp)).collect();
            ts.sort_by(f64::total_cmp);
            ts.dedup_by(|a, b| (*a - *b).abs() < TIME_EPS);
            Ok((keep_long(tracks.clone(), config), ts))
        }
    }
}

/// Position assumed for every unobserved sample: constant-velocity motion
/// from the generalized state of the last observed sample, with the track's
/// robust end velocity at that time. Indexed like `track.samples`; `None` for
/// observed samples.
pub fn predicted_positions(track: &Track, gs: &[GeneralizedState]) -> Vec<Option<Vec3>> {
    let mut out = Vec::with_capacity(track.samples.len());
    let mut anchor: Option<(f64, Vec3, Vec3)> = None;
    for (s, g) in track.samples.iter().zip(gs) {
        if s.observed {
            anchor = None;
            out.push(None);
            continue;
        }
        if anchor.is_none() {
            let last = track.samples.iter().zip(gs).rev().find(|(x, _)| x.observed && x.timestamp < s.timestamp);
            anchor = Some(match last {
                Some((x, lg)) => (x.timestamp, lg.position, velocity_until(track, x.timestamp)),
                None => (s.timestamp, g.position, Vec3::zeros()),
            });
        }
        let (t0, p0, v) = anchor.expect("set above");
        out.push(Some(p0 + v * (s.timestamp - t0)));
    }
    out
}

fn generalized_states(tracks: &[Track], config: &RunConfig) -> Result<BTreeMap<u32, Vec<GeneralizedState>>> {
    tracks.iter().map(|t| Ok((t.id, umkf_filter(t, &config.gstate)?))).collect()
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub tracks: Vec<Track>,
    pub states: BTreeMap<u32, Vec<GeneralizedState>>,
    /// Normal models first (by id), then dummy models.
    pub models: Vec<GdbnVocabulary>,
    pub book: WordBook,
    pub timestamps: Vec<f64>,
    /// Word sequence of the base scene followed by one per dummy variant.
    pub word_sequences: Vec<Vec<WordId>>,
    pub scenes: Vec<SceneLabelSequence>,
}

pub fn train(input: &Input, config: &RunConfig) -> Result<TrainOutput> {
    config.validate()?;
    let (tracks, timestamps) = resolve(input, config)?;
    if tracks.is_empty() {
        return Err(Error::NoTracks);
    }
    if let Some(t) = tracks.iter().find(|t| t.id >= DUMMY_ID_BASE) {
        return Err(Error::ModelId(t.id));
    }
    let states = generalized_states(&tracks, config)?;

    let mut normal = Vec::new();
    let mut dummies = Vec::new();
    let mut next_dummy = DUMMY_ID_BASE;
    for track in &tracks {
        let gs = &states[&track.id];
        let observed: Vec<GeneralizedState> = gs
            .iter()
            .zip(&track.samples)
            .filter(|(_, s)| s.observed)
            .map(|(g, _)| *g)
            .collect();
        let clusters = gng::fit(&observed, &config.gng)?;
        let base = learn_vocabulary(track.id, track.id, gs, &clusters, config.gng.scale, &config.vocabulary)?;
        let predicted = predicted_positions(track, gs);
        for &(start, end) in &track.gaps {
            let in_gap: Vec<GeneralizedState> = gs
                .iter()
                .filter(|g| g.timestamp >= start - TIME_EPS && g.timestamp <= end + TIME_EPS)
                .copied()
                .collect();
            let positions = track
                .samples
                .iter()
                .zip(&predicted)
                .filter_map(|(s, p)| p.map(|p| (s.timestamp, p)))
                .filter(|(t, _)| *t >= start - TIME_EPS && *t <= end + TIME_EPS)
                .collect();
            let segment = BlockageSegment::new(start, end, positions)?;
            dummies.push(build_dummy_model(&base, &segment, &in_gap, next_dummy, &config.vocabulary)?);
            next_dummy += 1;
        }
        normal.push(base);
    }

    let base_refs: Vec<&GdbnVocabulary> = normal.iter().collect();
    let mut scenes = vec![SceneLabelSequence::from_vocabularies(&timestamps, &base_refs)];
    for d in &dummies {
        let variant: Vec<&GdbnVocabulary> = normal
            .iter()
            .map(|m| if m.track_id == d.track_id { d } else { m })
            .collect();
        scenes.push(SceneLabelSequence::from_vocabularies(&timestamps, &variant));
    }
    let (book, word_sequences) = build_wordbook_multi(&scenes, &config.coupling)?;

    let mut models = normal;
    models.extend(dummies);
    Ok(TrainOutput {
        tracks,
        states,
        models,
        book,
        timestamps,
        word_sequences,
        scenes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackSelection {
    pub track_id: u32,
    pub report: ModelSelectionReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub total_frames: usize,
    pub anomaly_count: usize,
    pub anomaly_rate: f64,
    pub unknown_word_frames: usize,
    /// Timestamps whose estimated word was never seen in training.
    pub unknown_word_timestamps: Vec<f64>,
}

impl Summary {
    pub fn from_steps(steps: &[InferenceStep]) -> Self {
        let anomaly_count = steps.iter().filter(|s| s.anomaly).count();
        let unknown: Vec<f64> = steps
            .iter()
            .filter(|s| s.estimated_word.is_none())
            .map(|s| s.timestamp)
            .collect();
        Self {
            total_frames: steps.len(),
            anomaly_count,
            anomaly_rate: if steps.is_empty() {
                0.0
            } else {
                anomaly_count as f64 / steps.len() as f64
            },
            unknown_word_frames: unknown.len(),
            unknown_word_timestamps: unknown,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TestOutput {
    pub tracks: Vec<Track>,
    pub states: BTreeMap<u32, Vec<GeneralizedState>>,
    pub selections: Vec<TrackSelection>,
    pub steps: Vec<InferenceStep>,
    pub summary: Summary,
}

/// Per-frame observations of every active track under its selected model.
/// Hidden samples take their predicted position.
pub fn frame_observations(
    timestamps: &[f64],
    tracks: &[Track],
    states: &BTreeMap<u32, Vec<GeneralizedState>>,
    selections: &[TrackSelection],
) -> Vec<FrameObservation> {
    let predicted: Vec<Vec<Option<Vec3>>> = tracks.iter().map(|t| predicted_positions(t, &states[&t.id])).collect();
    timestamps
        .iter()
        .map(|&t| {
            let mut obs = Vec::new();
            for ((track, sel), predicted) in tracks.iter().zip(selections).zip(&predicted) {
                let gs = &states[&track.id];
                if let Some(i) = track.samples.iter().position(|s| (s.timestamp - t).abs() < TIME_EPS) {
                    obs.push(TrackObservation {
                        track_id: track.id,
                        model_id: sel.report.selected,
                        position: predicted[i].unwrap_or(gs[i].position),
                        velocity: gs[i].velocity,
                        missing: !track.samples[i].observed,
                    });
                }
            }
            FrameObservation { timestamp: t, tracks: obs }
        })
        .collect()
}

pub fn test(input: &Input, models: &[GdbnVocabulary], book: &WordBook, config: &RunConfig) -> Result<TestOutput> {
    config.validate()?;
    let (tracks, timestamps) = resolve(input, config)?;
    let states = generalized_states(&tracks, config)?;
    let selections = tracks
        .iter()
        .map(|t| {
            let positions: Vec<_> = states[&t.id].iter().map(|g| g.position).collect();
            Ok(TrackSelection {
                track_id: t.id,
                report: select_model(&positions, models)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let frames = frame_observations(&timestamps, &tracks, &states, &selections);
    let steps = run_inference(&frames, models, book, &config.imjpf)?;
    let summary = Summary::from_steps(&steps);
    Ok(TestOutput {
        tracks,
        states,
        selections,
        steps,
        summary,
    })
}
