//! Browser demo. The page trains on the canonical blockage scene, then tests
//! the same street with the car hidden for a chosen span of frames and shows
//! which frames the word-level filter flags.
//!
//! Exports take and return JSON strings; the logic lives in plain functions so
//! it can be tested natively.

use std::cell::RefCell;

use serde::Serialize;
use wasm_bindgen::prelude::*;

use igdbn::config::RunConfig;
use igdbn::pipeline::{self, Input, Summary, TrainOutput};
use igdbn::plot;
use igdbn::scene::{generate_scene, SceneConfig};

thread_local! {
    static TRAINED: RefCell<Option<Session>> = const { RefCell::new(None) };
}

pub struct Session {
    cfg: RunConfig,
    scene: SceneConfig,
    out: TrainOutput,
    last_timeline: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct ModelInfo {
    pub model_id: u32,
    pub dummy: bool,
    pub clusters: usize,
}

#[derive(Debug, Serialize)]
pub struct TrainInfo {
    pub tracks: usize,
    pub gaps: Vec<(u32, f64, f64)>,
    pub models: Vec<ModelInfo>,
    pub words: usize,
}

#[derive(Debug, Serialize)]
pub struct StepInfo {
    pub t: f64,
    pub predicted: u32,
    pub estimated: Option<u32>,
    pub anomaly: bool,
}

#[derive(Debug, Serialize)]
pub struct TestInfo {
    pub selected: Vec<(u32, u32)>,
    pub steps: Vec<StepInfo>,
    pub summary: Summary,
}

/// Trains on the canonical scene with the given seed and bus entry time.
pub fn train_session(seed: u64, bus_entry: f64) -> Result<(Session, TrainInfo), String> {
    let mut cfg = RunConfig::default();
    cfg.override_seed(seed);
    let mut scene = cfg.scene.clone();
    scene.occluders[0].entry_time = bus_entry;
    let frames = generate_scene(&scene).map_err(|e| e.to_string())?.frames;
    let out = pipeline::train(&Input::Frames(frames), &cfg).map_err(|e| e.to_string())?;
    let info = TrainInfo {
        tracks: out.tracks.len(),
        gaps: out
            .tracks
            .iter()
            .flat_map(|t| t.gaps.iter().map(move |g| (t.id, g.0, g.1)))
            .collect(),
        models: out
            .models
            .iter()
            .map(|m| ModelInfo {
                model_id: m.model_id,
                dummy: m.is_dummy(),
                clusters: m.clusters.len(),
            })
            .collect(),
        words: out.book.len(),
    };
    Ok((
        Session {
            cfg,
            scene,
            out,
            last_timeline: None,
        },
        info,
    ))
}

/// Tests the training street with the car additionally hidden on frames
/// `first..=last` (no extra dropout when `last < first`).
pub fn test_session(s: &mut Session, first: usize, last: usize) -> Result<TestInfo, String> {
    let mut scene = s.scene.clone();
    if first <= last {
        scene.vehicles[0].dropout_frames = vec![[first, last]];
    }
    let frames = generate_scene(&scene).map_err(|e| e.to_string())?.frames;
    let te = pipeline::test(&Input::Frames(frames), &s.out.models, &s.out.book, &s.cfg).map_err(|e| e.to_string())?;
    s.last_timeline = Some(plot::word_timeline(&te.steps));
    Ok(TestInfo {
        selected: te.selections.iter().map(|x| (x.track_id, x.report.selected)).collect(),
        steps: te
            .steps
            .iter()
            .map(|st| StepInfo {
                t: st.timestamp,
                predicted: st.predicted_word,
                estimated: st.estimated_word,
                anomaly: st.anomaly,
            })
            .collect(),
        summary: te.summary,
    })
}

/// `kind` is "clusters", "tm" or "timeline" (the last test; `model_id` ignored).
pub fn figure(s: &Session, kind: &str, model_id: u32) -> Result<String, String> {
    if kind == "timeline" {
        return s.last_timeline.clone().ok_or_else(|| "run a test first".to_owned());
    }
    let m = s
        .out
        .models
        .iter()
        .find(|m| m.model_id == model_id)
        .ok_or_else(|| format!("no model {model_id}"))?;
    match kind {
        "clusters" => Ok(plot::cluster_map(m)),
        "tm" => Ok(plot::tm_heatmap(m)),
        other => Err(format!("unknown figure {other:?}")),
    }
}

fn js(e: String) -> JsValue {
    JsValue::from_str(&e)
}

fn with_session<T>(f: impl FnOnce(&mut Session) -> Result<T, String>) -> Result<T, JsValue> {
    TRAINED.with(|cell| match cell.borrow_mut().as_mut() {
        Some(s) => f(s).map_err(js),
        None => Err(js("train first".into())),
    })
}

#[wasm_bindgen]
pub fn train(seed: u32, bus_entry: f64) -> Result<String, JsValue> {
    let (session, info) = train_session(u64::from(seed), bus_entry).map_err(js)?;
    TRAINED.with(|cell| *cell.borrow_mut() = Some(session));
    serde_json::to_string(&info).map_err(|e| js(e.to_string()))
}

#[wasm_bindgen]
pub fn test(first_hidden: u32, last_hidden: u32) -> Result<String, JsValue> {
    with_session(|s| {
        let info = test_session(s, first_hidden as usize, last_hidden as usize)?;
        serde_json::to_string(&info).map_err(|e| e.to_string())
    })
}

#[wasm_bindgen]
pub fn svg(kind: &str, model_id: u32) -> Result<String, JsValue> {
    with_session(|s| figure(s, kind, model_id))
}
