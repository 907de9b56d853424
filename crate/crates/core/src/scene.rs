//! Synthetic two-way street scenes and frame I/O.
//!
//! A scene is a set of straight lanes, vehicles driving along them at constant
//! speed, and optional occluders (buses) that are themselves visible but cut
//! the line of sight from the sensor at the origin to anything behind them.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geom::{Aabb, Grid};
use crate::tracking::{Track, TrackSample};
use crate::{Error, Result, Vec3};

/// Seed of the surface-sampling stream. Kept apart from the noise seed so that
/// visibility does not depend on `rng_seed`.
const SURFACE_SEED: u64 = 0x5eed_5afe_0f_cafe;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaneSegment {
    pub start: [f64; 3],
    pub end: [f64; 3],
}

impl LaneSegment {
    fn start(&self) -> Vec3 {
        Vec3::from(self.start)
    }

    fn length(&self) -> f64 {
        (Vec3::from(self.end) - self.start()).norm()
    }

    fn direction(&self) -> Vec3 {
        (Vec3::from(self.end) - self.start()).normalize()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleSpec {
    /// Seconds.
    pub entry_time: f64,
    /// m/s along the lane.
    pub speed: f64,
    pub lane: usize,
    /// Full box side lengths along x, y, z in meters.
    pub extents: [f64; 3],
    /// Inclusive frame-index ranges during which the sensor returns nothing for
    /// this object (sensor dropout).
    #[serde(default)]
    pub dropout_frames: Vec<[usize; 2]>,
}

impl VehicleSpec {
    /// Center of the box at time `t`, or `None` when the vehicle is not on its lane.
    pub fn position(&self, lanes: &[LaneSegment], t: f64) -> Option<Vec3> {
        let lane = &lanes[self.lane];
        let travelled = self.speed * (t - self.entry_time);
        if t + 1e-12 < self.entry_time || travelled > lane.length() + 1e-9 {
            return None;
        }
        Some(lane.start() + lane.direction() * travelled)
    }

    fn dropped(&self, frame: usize) -> bool {
        self.dropout_frames
            .iter()
            .any(|&[a, b]| (a..=b).contains(&frame))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub lanes: Vec<LaneSegment>,
    pub vehicles: Vec<VehicleSpec>,
    pub occluders: Vec<VehicleSpec>,
    /// Hz.
    pub frame_rate: f64,
    /// Standard deviation of per-point sensor noise in meters.
    pub noise_sigma: f64,
    pub rng_seed: u64,
    /// Seconds.
    pub duration: f64,
    pub points_per_vehicle: usize,
    pub points_per_occluder: usize,
    /// Number of ground returns per frame, scattered over the lane area.
    pub ground_points: usize,
    pub ground_level: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self::two_lane_blockage()
    }
}

impl SceneConfig {
    /// A car on the far lane heading +y and a bus on the near lane heading -y.
    /// The bus fully hides the car during frames 18..=22.
    pub fn two_lane_blockage() -> Self {
        Self {
            lanes: vec![
                LaneSegment {
                    start: [-16.0, -13.0, 0.0],
                    end: [-16.0, 35.0, 0.0],
                },
                LaneSegment {
                    start: [-10.0, 35.0, 0.0],
                    end: [-10.0, -13.0, 0.0],
                },
            ],
            vehicles: vec![VehicleSpec {
                entry_time: 0.0,
                speed: 10.0,
                lane: 0,
                extents: [1.8, 4.5, 1.4],
                dropout_frames: vec![],
            }],
            occluders: vec![VehicleSpec {
                entry_time: -1.9,
                speed: 8.0,
                lane: 1,
                extents: [2.5, 9.0, 1.8],
                dropout_frames: vec![],
            }],
            frame_rate: 10.0,
            noise_sigma: 0.03,
            rng_seed: 7,
            duration: 5.0,
            points_per_vehicle: 200,
            points_per_occluder: 600,
            ground_points: 300,
            ground_level: -1.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("scene: {m}")));
        if !(self.frame_rate > 0.0) {
            return bad("frame_rate must be > 0");
        }
        if !(self.duration > 0.0) {
            return bad("duration must be > 0");
        }
        if !(self.noise_sigma >= 0.0) {
            return bad("noise_sigma must be >= 0");
        }
        if self.vehicles.is_empty() {
            return Err(Error::NoVehicles);
        }
        for lane in &self.lanes {
            if !(lane.length() > 0.0) {
                return bad("lane segments must have positive length");
            }
        }
        for v in self.vehicles.iter().chain(&self.occluders) {
            if !(v.speed >= 0.0) {
                return bad("speeds must be >= 0");
            }
            if v.lane >= self.lanes.len() {
                return bad("vehicle lane index out of range");
            }
            if v.extents.iter().any(|e| !(*e > 0.0)) {
                return bad("vehicle extents must be > 0");
            }
        }
        Ok(())
    }

    pub fn frame_count(&self) -> usize {
        (self.duration * self.frame_rate).round() as usize
    }

    pub fn frame_time(&self, index: usize) -> f64 {
        index as f64 / self.frame_rate
    }
}

/// One sensor sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub timestamp: f64,
    pub points: Vec<Vec3>,
}

/// Axis-aligned crop region in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CropBox {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub z_min: f64,
    pub z_max: f64,
}

impl CropBox {
    /// Region kept after preprocessing the street-level capture.
    pub const STREET: CropBox = CropBox {
        x_min: -28.0,
        x_max: -4.0,
        y_min: -13.0,
        y_max: 35.0,
        z_min: -1.0,
        z_max: 1.0,
    };

    pub fn validate(&self) -> Result<()> {
        if self.x_min < self.x_max && self.y_min < self.y_max && self.z_min < self.z_max {
            Ok(())
        } else {
            Err(Error::Config("crop box needs min < max on every axis".into()))
        }
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (self.x_min..=self.x_max).contains(&p.x)
            && (self.y_min..=self.y_max).contains(&p.y)
            && (self.z_min..=self.z_max).contains(&p.z)
    }
}

/// Ground-truth state of one object at one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthSample {
    pub frame: usize,
    pub timestamp: f64,
    /// Analytic box center.
    pub position: Vec3,
    /// Number of returns that survived occlusion and dropout.
    pub point_count: usize,
}

impl TruthSample {
    pub fn visible(&self) -> bool {
        self.point_count > 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruthTrack {
    /// 1-based; vehicles first, then occluders.
    pub id: u32,
    pub is_occluder: bool,
    pub samples: Vec<TruthSample>,
}

impl TruthTrack {
    /// Noiseless track of the box center, trimmed to the first and last
    /// visible frames; hidden frames in between are unobserved samples.
    /// `None` if the object is never visible.
    pub fn to_track(&self) -> Option<Track> {
        let first = self.samples.iter().position(TruthSample::visible)?;
        let last = self.samples.iter().rposition(TruthSample::visible)?;
        let samples = self.samples[first..=last]
            .iter()
            .map(|s| TrackSample {
                timestamp: s.timestamp,
                position: s.position,
                observed: s.visible(),
            })
            .collect();
        Some(Track::from_samples(self.id, samples))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneOutput {
    pub frames: Vec<Frame>,
    pub truth: Vec<TruthTrack>,
}

pub fn generate_scene(config: &SceneConfig) -> Result<SceneOutput> {
    config.validate()?;
    let objects: Vec<(&VehicleSpec, bool)> = config
        .vehicles
        .iter()
        .map(|v| (v, false))
        .chain(config.occluders.iter().map(|v| (v, true)))
        .collect();
    let noise = Normal::new(0.0, config.noise_sigma.max(0.0))
        .map_err(|e| Error::Config(format!("scene: {e}")))?;
    let origin = Vec3::zeros();

    let mut truth: Vec<TruthTrack> = objects
        .iter()
        .enumerate()
        .map(|(i, &(_, occ))| TruthTrack {
            id: i as u32 + 1,
            is_occluder: occ,
            samples: Vec::new(),
        })
        .collect();
    let mut frames = Vec::with_capacity(config.frame_count());

    for fi in 0..config.frame_count() {
        let t = config.frame_time(fi);
        let mut surface_rng = ChaCha8Rng::seed_from_u64(SURFACE_SEED);
        surface_rng.set_stream(fi as u64);
        let mut noise_rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        noise_rng.set_stream(fi as u64);

        let boxes: Vec<Option<Aabb>> = objects
            .iter()
            .map(|(v, _)| {
                v.position(&config.lanes, t)
                    .map(|c| Aabb::from_center(c, v.extents))
            })
            .collect();

        let mut points = Vec::new();
        for (oi, &(spec, is_occ)) in objects.iter().enumerate() {
            let Some(center) = spec.position(&config.lanes, t) else {
                continue;
            };
            let budget = if is_occ {
                config.points_per_occluder
            } else {
                config.points_per_vehicle
            };
            let surface = sample_box_surface(center, spec.extents, budget, &mut surface_rng);
            let mut kept = 0;
            if !spec.dropped(fi) {
                for p in surface {
                    let occluded = objects.iter().enumerate().any(|(oj, (_, is_occ))| {
                        *is_occ
                            && oj != oi
                            && boxes[oj].is_some_and(|b| b.intersects_segment(&origin, &p))
                    });
                    if occluded {
                        continue;
                    }
                    kept += 1;
                    points.push(p + jitter(&noise, &mut noise_rng));
                }
            }
            truth[oi].samples.push(TruthSample {
                frame: fi,
                timestamp: t,
                position: center,
                point_count: kept,
            });
        }
        if config.ground_points > 0 {
            let (lo, hi) = lane_bounds(&config.lanes, 3.0);
            for _ in 0..config.ground_points {
                let p = Vec3::new(
                    surface_rng.gen_range(lo.x..hi.x),
                    surface_rng.gen_range(lo.y..hi.y),
                    config.ground_level,
                );
                points.push(p + jitter(&noise, &mut noise_rng));
            }
        }
        frames.push(Frame {
            timestamp: t,
            points,
        });
    }
    truth.retain(|t| !t.samples.is_empty());
    Ok(SceneOutput { frames, truth })
}

fn jitter(noise: &Normal<f64>, rng: &mut ChaCha8Rng) -> Vec3 {
    if noise.std_dev() == 0.0 {
        return Vec3::zeros();
    }
    Vec3::new(noise.sample(rng), noise.sample(rng), noise.sample(rng))
}

/// Samples `n` points on the box surface, area-weighted, in mirrored pairs so
/// the point centroid equals the box center exactly.
fn sample_box_surface(center: Vec3, extents: [f64; 3], n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec3> {
    let half = Vec3::new(extents[0], extents[1], extents[2]) * 0.5;
    let areas = [extents[1] * extents[2], extents[0] * extents[2], extents[0] * extents[1]];
    let total: f64 = areas.iter().sum();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n / 2 {
        let pick = rng.gen_range(0.0..total);
        let axis = if pick < areas[0] {
            0
        } else if pick < areas[0] + areas[1] {
            1
        } else {
            2
        };
        let mut d = Vec3::zeros();
        for k in 0..3 {
            d[k] = if k == axis {
                half[k]
            } else {
                rng.gen_range(-half[k]..=half[k])
            };
        }
        if rng.gen_bool(0.5) {
            d = -d;
        }
        out.push(center + d);
        out.push(center - d);
    }
    out
}

fn lane_bounds(lanes: &[LaneSegment], margin: f64) -> (Vec3, Vec3) {
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for l in lanes {
        for p in [Vec3::from(l.start), Vec3::from(l.end)] {
            lo = lo.inf(&p);
            hi = hi.sup(&p);
        }
    }
    (lo.add_scalar(-margin), hi.add_scalar(margin))
}

/// Crop, ground threshold and k-neighbor denoising.
///
/// Denoising removes points with fewer than `denoise_k` neighbors within
/// `denoise_radius` and repeats until no point is removed, which makes the
/// whole operation idempotent.
pub fn preprocess_frame(frame: &Frame, crop: &CropBox, ground_z: f64, denoise_k: usize, denoise_radius: f64) -> Frame {
    let kept: Vec<Vec3> = frame
        .points
        .iter()
        .filter(|p| crop.contains(p) && p.z > ground_z)
        .copied()
        .collect();
    if kept.is_empty() || denoise_k == 0 {
        return Frame {
            timestamp: frame.timestamp,
            points: kept,
        };
    }

    let grid = Grid::new(&kept, denoise_radius.max(1e-6));
    let mut alive = vec![true; kept.len()];
    let mut buf = Vec::new();
    loop {
        let mut removed = false;
        for i in 0..kept.len() {
            if !alive[i] {
                continue;
            }
            grid.neighbors(i, denoise_radius, &alive, &mut buf);
            if buf.len() < denoise_k {
                alive[i] = false;
                removed = true;
            }
        }
        if !removed {
            break;
        }
    }
    Frame {
        timestamp: frame.timestamp,
        points: kept
            .into_iter()
            .zip(alive)
            .filter_map(|(p, a)| a.then_some(p))
            .collect(),
    }
}

pub fn write_frames(frames: &[Frame]) -> String {
    let mut out = String::new();
    for f in frames {
        let _ = writeln!(out, "frame {}", f.timestamp);
        for p in &f.points {
            let _ = writeln!(out, "{} {} {}", p.x, p.y, p.z);
        }
    }
    out
}

pub fn parse_frames(text: &str, path: &Path) -> Result<Vec<Frame>> {
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut frames: Vec<Frame> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(rest) = line.strip_prefix("frame") {
            let ts: f64 = rest
                .trim()
                .parse()
                .map_err(|e| err(line_no, format!("bad timestamp: {e}")))?;
            if !ts.is_finite() {
                return Err(err(line_no, "timestamp is not finite".into()));
            }
            if let Some(prev) = frames.last() {
                if ts <= prev.timestamp {
                    return Err(err(
                        line_no,
                        format!("timestamp {ts} does not increase (previous {})", prev.timestamp),
                    ));
                }
            }
            frames.push(Frame {
                timestamp: ts,
                points: Vec::new(),
            });
            continue;
        }
        let Some(frame) = frames.last_mut() else {
            return Err(err(line_no, "point before any `frame` header".into()));
        };
        let coords: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|e| err(line_no, format!("bad coordinate: {e}")))?;
        if coords.len() != 3 {
            return Err(err(line_no, format!("expected 3 coordinates, got {}", coords.len())));
        }
        frame.points.push(Vec3::new(coords[0], coords[1], coords[2]));
    }
    Ok(frames)
}

pub fn load_frames(path: &Path) -> Result<Vec<Frame>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(path.to_path_buf(), e))?;
    parse_frames(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_vehicle() -> SceneConfig {
        SceneConfig {
            vehicles: vec![VehicleSpec {
                entry_time: 0.3,
                speed: 7.5,
                lane: 0,
                extents: [1.8, 4.5, 1.4],
                dropout_frames: vec![],
            }],
            occluders: vec![],
            noise_sigma: 0.0,
            ground_points: 0,
            ..SceneConfig::two_lane_blockage()
        }
    }

    #[test]
    fn noiseless_centroid_follows_kinematics() {
        let cfg = single_vehicle();
        let out = generate_scene(&cfg).unwrap();
        let lane = &cfg.lanes[0];
        let mut checked = 0;
        for f in &out.frames {
            if f.points.is_empty() {
                continue;
            }
            let c = f.points.iter().sum::<Vec3>() / f.points.len() as f64;
            let expect = lane.start() + lane.direction() * 7.5 * (f.timestamp - 0.3);
            assert!((c - expect).norm() < 1e-9, "t={} {c:?} vs {expect:?}", f.timestamp);
            checked += 1;
        }
        assert!(checked > 20);
    }

    #[test]
    fn canonical_blockage_hides_car_in_frames_18_to_22() {
        let out = generate_scene(&SceneConfig::two_lane_blockage()).unwrap();
        let car = &out.truth[0];
        let hidden: Vec<usize> = car
            .samples
            .iter()
            .filter(|s| !s.visible())
            .map(|s| s.frame)
            .collect();
        assert_eq!(hidden, (18..=22).collect::<Vec<_>>());
    }

    #[test]
    fn seeds_change_noise_but_not_visibility() {
        let a = generate_scene(&SceneConfig::two_lane_blockage()).unwrap();
        let b = generate_scene(&SceneConfig {
            rng_seed: 99,
            ..SceneConfig::two_lane_blockage()
        })
        .unwrap();
        let again = generate_scene(&SceneConfig::two_lane_blockage()).unwrap();
        assert_eq!(a, again);
        assert_eq!(a.truth, b.truth);
        assert_ne!(a.frames, b.frames);
    }

    #[test]
    fn rejects_empty_vehicle_list() {
        let cfg = SceneConfig {
            vehicles: vec![],
            ..SceneConfig::default()
        };
        assert!(matches!(generate_scene(&cfg), Err(Error::NoVehicles)));
    }

    #[test]
    fn dropout_frames_remove_returns() {
        let mut cfg = single_vehicle();
        cfg.vehicles[0].dropout_frames = vec![[10, 12]];
        let out = generate_scene(&cfg).unwrap();
        for s in &out.truth[0].samples {
            assert_eq!(s.visible(), !(10..=12).contains(&s.frame), "frame {}", s.frame);
        }
    }

    #[test]
    fn occlusion_matches_brute_force_ray_test() {
        let cfg = SceneConfig {
            noise_sigma: 0.0,
            ground_points: 0,
            ..SceneConfig::two_lane_blockage()
        };
        let out = generate_scene(&cfg).unwrap();
        let bus = &cfg.occluders[0];
        for f in &out.frames {
            let Some(c) = bus.position(&cfg.lanes, f.timestamp) else {
                continue;
            };
            let b = Aabb::from_center(c, bus.extents);
            let inside = |p: &Vec3| (0..3).all(|k| p[k] >= b.min[k] - 1e-9 && p[k] <= b.max[k] + 1e-9);
            for p in &f.points {
                // surviving non-bus points must have a clear line of sight
                if !inside(p) {
                    assert!(!brute_force_hits(&b, p), "occluded point survived at t={}", f.timestamp);
                }
            }
        }
    }

    fn brute_force_hits(b: &Aabb, p: &Vec3) -> bool {
        (0..=4000).any(|i| {
            let q = p * (i as f64 / 4000.0);
            (0..3).all(|k| q[k] > b.min[k] + 1e-6 && q[k] < b.max[k] - 1e-6)
        })
    }

    #[test]
    fn preprocess_rules() {
        let below = Frame {
            timestamp: 0.0,
            points: vec![Vec3::new(-10.0, 0.0, -2.0); 5],
        };
        assert!(preprocess_frame(&below, &CropBox::STREET, -1.5, 1, 0.5).points.is_empty());

        let isolated = Frame {
            timestamp: 0.0,
            points: vec![Vec3::new(-10.0, 0.0, 0.0), Vec3::new(-20.0, 0.0, 0.0), Vec3::new(-20.1, 0.0, 0.0), Vec3::new(-20.0, 0.1, 0.0)],
        };
        let out = preprocess_frame(&isolated, &CropBox::STREET, -1.5, 2, 0.5);
        assert_eq!(out.points.len(), 3);
        assert!(out.points.iter().all(|p| p.x < -15.0));
    }

    #[test]
    fn street_crop_keeps_only_in_box_points() {
        let mut points = Vec::new();
        for x in (-82..=89).step_by(3) {
            for y in (-126..=78).step_by(3) {
                for z in [-2.0, -0.5, 0.5, 16.0] {
                    points.push(Vec3::new(x as f64, y as f64, z));
                }
            }
        }
        let f = Frame { timestamp: 0.0, points };
        let out = preprocess_frame(&f, &CropBox::STREET, -5.0, 1, 3.5);
        assert!(!out.points.is_empty());
        assert!(out.points.iter().all(|p| CropBox::STREET.contains(p)));
        let expected = f.points.iter().filter(|p| CropBox::STREET.contains(p)).count();
        assert_eq!(out.points.len(), expected);
    }

    #[test]
    fn frame_text_round_trip() {
        let out = generate_scene(&SceneConfig::default()).unwrap();
        let text = write_frames(&out.frames);
        let back = parse_frames(&text, Path::new("mem")).unwrap();
        assert_eq!(back, out.frames);
        assert!(parse_frames("", Path::new("mem")).unwrap().is_empty());
    }

    #[test]
    fn parse_errors_name_the_line() {
        let e = parse_frames("frame 0.1\n1 2 3\nframe 0.05\n", Path::new("f.txt")).unwrap_err();
        assert!(e.to_string().starts_with("f.txt:3:"), "{e}");
        let e = parse_frames("frame 0\n1 2\n", Path::new("f.txt")).unwrap_err();
        assert!(e.to_string().starts_with("f.txt:2:"), "{e}");
    }
}
