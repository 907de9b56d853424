//! Text interchange formats and the model store.
//!
//! Every line-oriented format is whitespace separated, one record per line,
//! '.' decimal separator; blank lines and lines starting with '#' are skipped.
//! Floats are written in Rust's shortest round-trip form, so parsing what was
//! written gives back the same values bit for bit.
//!
//! | file | record |
//! |------|--------|
//! | tracks | `track_id timestamp x y z visible_flag` |
//! | appearance sidecar | `track_id birth death` |
//! | generalized states | `track_id timestamp x y z vx vy vz` |
//! | inference log | `timestamp predicted estimated anomaly [track_id px py pz]...` |
//!
//! In the inference log an estimated word that was never trained is `-1`.

mod store;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::gstate::GeneralizedState;
use crate::imjpf::InferenceStep;
use crate::tracking::{AppearanceTable, Track, TrackSample};
use crate::{Error, Result, Vec3};

pub use store::{Manifest, ModelStore, STORE_VERSION};

/// Reads a UTF-8 file; the error names the path.
pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io(path.to_path_buf(), e))
}

/// Writes a file; the error names the path.
pub fn write(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::Io(path.to_path_buf(), e))
}

/// Splits records and parses their fields, tracking the line for errors.
struct Records<'a> {
    path: &'a Path,
    line: usize,
}

impl<'a> Records<'a> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            line: self.line,
            msg: msg.into(),
        }
    }

    fn field<'s, T: FromStr>(&self, it: &mut impl Iterator<Item = &'s str>, name: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let raw = it.next().ok_or_else(|| self.err(format!("missing {name}")))?;
        raw.parse().map_err(|e| self.err(format!("bad {name} {raw:?}: {e}")))
    }

    fn float<'s>(&self, it: &mut impl Iterator<Item = &'s str>, name: &str) -> Result<f64> {
        let v: f64 = self.field(it, name)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(self.err(format!("{name} is not finite")))
        }
    }

    fn vec3<'s>(&self, it: &mut impl Iterator<Item = &'s str>, name: &str) -> Result<Vec3> {
        Ok(Vec3::new(self.float(it, name)?, self.float(it, name)?, self.float(it, name)?))
    }

    fn end<'s>(&self, it: &mut impl Iterator<Item = &'s str>) -> Result<()> {
        match it.next() {
            Some(extra) => Err(self.err(format!("unexpected field {extra:?}"))),
            None => Ok(()),
        }
    }

    /// Calls `f` on the fields of every non-comment line.
    fn each(text: &str, path: &'a Path, mut f: impl FnMut(&Self, &mut std::str::SplitWhitespace) -> Result<()>) -> Result<()> {
        let mut r = Records { path, line: 0 };
        for (i, raw) in text.lines().enumerate() {
            r.line = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            f(&r, &mut line.split_whitespace())?;
        }
        Ok(())
    }
}

/// Sidecar path for a tracks file: same stem, `.appearance` extension.
pub fn appearance_path(tracks_path: &Path) -> PathBuf {
    tracks_path.with_extension("appearance")
}

pub fn write_tracks(tracks: &[Track]) -> String {
    let mut out = String::new();
    for t in tracks {
        for s in &t.samples {
            let p = s.position;
            let _ = writeln!(out, "{} {} {} {} {} {}", t.id, s.timestamp, p.x, p.y, p.z, u8::from(s.observed));
        }
    }
    out
}

/// Tracks ordered by id. Samples of one track must have increasing
/// timestamps; records of different tracks may interleave.
pub fn parse_tracks(text: &str, path: &Path) -> Result<Vec<Track>> {
    let mut by_id: BTreeMap<u32, Vec<TrackSample>> = BTreeMap::new();
    Records::each(text, path, |r, it| {
        let id: u32 = r.field(it, "track_id")?;
        let timestamp = r.float(it, "timestamp")?;
        let position = r.vec3(it, "coordinate")?;
        let observed = match r.field::<u8>(it, "visible_flag")? {
            0 => false,
            1 => true,
            v => return Err(r.err(format!("visible_flag must be 0 or 1, got {v}"))),
        };
        r.end(it)?;
        let samples = by_id.entry(id).or_default();
        if let Some(prev) = samples.last() {
            if timestamp <= prev.timestamp {
                return Err(r.err(format!("track {id}: timestamp {timestamp} does not increase")));
            }
        }
        samples.push(TrackSample {
            timestamp,
            position,
            observed,
        });
        Ok(())
    })?;
    Ok(by_id
        .into_iter()
        .map(|(id, samples)| Track::from_samples(id, samples))
        .collect())
}

pub fn write_appearance(table: &AppearanceTable) -> String {
    let mut out = String::new();
    for (id, (birth, death)) in &table.0 {
        let _ = writeln!(out, "{id} {birth} {death}");
    }
    out
}

pub fn parse_appearance(text: &str, path: &Path) -> Result<AppearanceTable> {
    let mut table = BTreeMap::new();
    Records::each(text, path, |r, it| {
        let id: u32 = r.field(it, "track_id")?;
        let birth = r.float(it, "birth")?;
        let death = r.float(it, "death")?;
        r.end(it)?;
        if death < birth {
            return Err(r.err(format!("track {id}: death before birth")));
        }
        if table.insert(id, (birth, death)).is_some() {
            return Err(r.err(format!("track {id} listed twice")));
        }
        Ok(())
    })?;
    Ok(AppearanceTable(table))
}

/// Writes the tracks file and its appearance sidecar.
pub fn save_tracks(path: &Path, tracks: &[Track]) -> Result<()> {
    write(path, &write_tracks(tracks))?;
    write(&appearance_path(path), &write_appearance(&AppearanceTable::from_tracks(tracks)))
}

/// Reads a tracks file. When the sidecar exists it must agree with the samples.
pub fn load_tracks(path: &Path) -> Result<Vec<Track>> {
    let tracks = parse_tracks(&read_text(path)?, path)?;
    let side = appearance_path(path);
    if side.exists() {
        let table = parse_appearance(&read_text(&side)?, &side)?;
        if table != AppearanceTable::from_tracks(&tracks) {
            return Err(Error::Parse {
                path: side,
                line: 0,
                msg: "appearance table does not match the track samples".into(),
            });
        }
    }
    Ok(tracks)
}

pub fn write_states(states: &BTreeMap<u32, Vec<GeneralizedState>>) -> String {
    let mut out = String::new();
    for (id, gs) in states {
        for g in gs {
            let (p, v) = (g.position, g.velocity);
            let _ = writeln!(out, "{id} {} {} {} {} {} {} {}", g.timestamp, p.x, p.y, p.z, v.x, v.y, v.z);
        }
    }
    out
}

pub fn parse_states(text: &str, path: &Path) -> Result<BTreeMap<u32, Vec<GeneralizedState>>> {
    let mut out: BTreeMap<u32, Vec<GeneralizedState>> = BTreeMap::new();
    Records::each(text, path, |r, it| {
        let id: u32 = r.field(it, "track_id")?;
        let timestamp = r.float(it, "timestamp")?;
        let position = r.vec3(it, "position")?;
        let velocity = r.vec3(it, "velocity")?;
        r.end(it)?;
        out.entry(id).or_default().push(GeneralizedState {
            timestamp,
            position,
            velocity,
        });
        Ok(())
    })?;
    Ok(out)
}

pub fn write_inference_log(steps: &[InferenceStep]) -> String {
    let mut out = String::new();
    for s in steps {
        let est = s.estimated_word.map_or(-1, i64::from);
        let _ = write!(out, "{} {} {est} {}", s.timestamp, s.predicted_word, u8::from(s.anomaly));
        for (id, p) in &s.predicted_positions {
            let _ = write!(out, " {id} {} {} {}", p.x, p.y, p.z);
        }
        out.push('\n');
    }
    out
}

pub fn parse_inference_log(text: &str, path: &Path) -> Result<Vec<InferenceStep>> {
    let mut steps = Vec::new();
    Records::each(text, path, |r, it| {
        let timestamp = r.float(it, "timestamp")?;
        let predicted_word = r.field(it, "predicted_word")?;
        let estimated_word = match r.field::<i64>(it, "estimated_word")? {
            -1 => None,
            w => Some(u32::try_from(w).map_err(|_| r.err(format!("bad estimated_word {w}")))?),
        };
        let anomaly = match r.field::<u8>(it, "anomaly")? {
            0 => false,
            1 => true,
            v => return Err(r.err(format!("anomaly must be 0 or 1, got {v}"))),
        };
        let mut predicted_positions = Vec::new();
        let rest: Vec<&str> = it.collect();
        if rest.len() % 4 != 0 {
            return Err(r.err("track fields must come in groups of 4"));
        }
        for chunk in rest.chunks(4) {
            let mut f = chunk.iter().copied();
            let id: u32 = r.field(&mut f, "track_id")?;
            predicted_positions.push((id, r.vec3(&mut f, "predicted position")?));
        }
        steps.push(InferenceStep {
            timestamp,
            predicted_word,
            estimated_word,
            anomaly,
            predicted_positions,
        });
        Ok(())
    })?;
    Ok(steps)
}
