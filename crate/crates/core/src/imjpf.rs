//! Particle filter over interaction words.
//!
//! Every particle holds a word and the number of steps it has spent in that
//! word. Prediction draws the next word from the book's dwell-conditioned row
//! (or the plain global row when `dwell_aware` is off). The MAP word of the
//! predicted set is compared with the word estimated from the observations;
//! a mismatch raises the anomaly bit. Weights are then updated with an
//! epsilon-smoothed match likelihood and resampled systematically when the
//! effective sample size drops.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::coupling::{WordBook, WordId, EMPTY_WORD};
use crate::gstate::GeneralizedState;
use crate::selection::nearest_cluster;
use crate::vocabulary::GdbnVocabulary;
use crate::{Error, Result, Vec3};

/// Lower clamp on the smoothing probability.
pub const MIN_SMOOTHING: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImjpfConfig {
    pub n_particles: usize,
    pub smoothing_eps: f64,
    /// Fraction of `n_particles` below which the effective sample size
    /// triggers resampling.
    pub resample_threshold: f64,
    pub rng_seed: u64,
    /// Condition word transitions on the time spent in the current word.
    pub dwell_aware: bool,
}

impl Default for ImjpfConfig {
    fn default() -> Self {
        Self {
            n_particles: 100,
            smoothing_eps: 0.05,
            resample_threshold: 0.5,
            rng_seed: 11,
            dwell_aware: true,
        }
    }
}

impl ImjpfConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.n_particles >= 2
            && self.smoothing_eps > 0.0
            && self.smoothing_eps < 1.0
            && (0.0..=1.0).contains(&self.resample_threshold);
        if ok {
            Ok(())
        } else {
            Err(Error::Config("imjpf: need n_particles >= 2, 0 < smoothing_eps < 1, resample_threshold in [0, 1]".into()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub word: WordId,
    pub dwell: usize,
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub struct ParticleFilter {
    pub particles: Vec<Particle>,
    config: ImjpfConfig,
    rng: ChaCha8Rng,
}

impl ParticleFilter {
    /// Uniform words, unit dwell, equal weights.
    pub fn init(book: &WordBook, config: &ImjpfConfig) -> Result<Self> {
        config.validate()?;
        if book.is_empty() {
            return Err(Error::EmptyWordBook);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        let n = config.n_particles;
        let w = book.len() as WordId;
        let particles = (0..n)
            .map(|_| Particle {
                word: rng.gen_range(0..w),
                dwell: 1,
                weight: 1.0 / n as f64,
            })
            .collect();
        Ok(Self {
            particles,
            config: config.clone(),
            rng,
        })
    }

    /// Moves every particle to a sampled next word.
    pub fn predict(&mut self, book: &WordBook) {
        for p in &mut self.particles {
            let row = if self.config.dwell_aware {
                book.transition_row(p.word, p.dwell)
            } else {
                book.global_row(p.word)
            };
            let next = sample(&row, self.rng.gen::<f64>()).unwrap_or(p.word);
            p.dwell = if next == p.word { p.dwell + 1 } else { 1 };
            p.word = next;
        }
    }

    /// Word with the largest total weight; ties go to the lowest id.
    pub fn map_word(&self) -> WordId {
        let mut mass: BTreeMap<WordId, f64> = BTreeMap::new();
        for p in &self.particles {
            *mass.entry(p.word).or_default() += p.weight;
        }
        mass.into_iter()
            .fold((EMPTY_WORD, f64::NEG_INFINITY), |best, (w, m)| if m > best.1 { (w, m) } else { best })
            .0
    }

    pub fn effective_sample_size(&self) -> f64 {
        1.0 / self.particles.iter().map(|p| p.weight * p.weight).sum::<f64>()
    }

    /// Reweights by the smoothed match likelihood and resamples when the
    /// effective sample size falls below the threshold. An unknown word
    /// carries no information and leaves the set as it is. Returns whether
    /// any particle held the estimated word.
    pub fn update_and_resample(&mut self, estimated: Option<WordId>, n_words: usize) -> bool {
        let Some(est) = estimated else {
            return true;
        };
        let supported = self.particles.iter().any(|p| p.word == est);
        let eps = self.config.smoothing_eps.max(MIN_SMOOTHING);
        let miss = eps / (n_words.max(2) - 1) as f64;
        for p in &mut self.particles {
            p.weight *= if p.word == est { 1.0 - eps } else { miss };
        }
        let total: f64 = self.particles.iter().map(|p| p.weight).sum();
        debug_assert!(total > 0.0);
        for p in &mut self.particles {
            p.weight /= total;
        }
        let n = self.particles.len() as f64;
        if self.effective_sample_size() < self.config.resample_threshold * n {
            self.resample();
        }
        supported
    }

    /// Puts every particle on `word` with the given dwell and equal weights.
    pub fn reseed(&mut self, word: WordId, dwell: usize) {
        let w = 1.0 / self.particles.len() as f64;
        for p in &mut self.particles {
            *p = Particle { word, dwell, weight: w };
        }
    }

    fn resample(&mut self) {
        let n = self.particles.len();
        let step = 1.0 / n as f64;
        let u0 = self.rng.gen::<f64>() * step;
        let mut out = Vec::with_capacity(n);
        let mut cum = self.particles[0].weight;
        let mut i = 0;
        for k in 0..n {
            let u = u0 + k as f64 * step;
            while u > cum && i + 1 < n {
                i += 1;
                cum += self.particles[i].weight;
            }
            out.push(Particle {
                weight: step,
                ..self.particles[i]
            });
        }
        self.particles = out;
    }
}

fn sample(row: &[(WordId, f64)], u: f64) -> Option<WordId> {
    let mut cum = 0.0;
    for &(w, p) in row {
        cum += p;
        if u < cum {
            return Some(w);
        }
    }
    row.last().map(|r| r.0)
}

/// One track's contribution to a frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackObservation {
    pub track_id: u32,
    /// Model selected for the track.
    pub model_id: u32,
    pub position: Vec3,
    pub velocity: Vec3,
    /// No sensor return this frame; the position is the filled-in trajectory.
    pub missing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameObservation {
    pub timestamp: f64,
    pub tracks: Vec<TrackObservation>,
}

/// Word of the observed frame. Observed tracks are labeled like the training
/// states of their model; missing ones take the dummy cluster nearest to their
/// position. `None` when a missing
/// track's model has no dummy clusters or the combination was never trained.
pub fn estimate_word(
    tracks: &[TrackObservation],
    models: &HashMap<u32, &GdbnVocabulary>,
    book: &WordBook,
) -> Result<Option<WordId>> {
    let mut key = Vec::with_capacity(tracks.len());
    for t in tracks {
        let model = models.get(&t.model_id).ok_or(Error::ModelId(t.model_id))?;
        if t.missing {
            match nearest_cluster(&t.position, model.dummy_clusters()) {
                Some((c, _)) => key.push((t.model_id, c)),
                None => return Ok(None),
            }
        } else {
            let gs = GeneralizedState {
                timestamp: 0.0,
                position: t.position,
                velocity: t.velocity,
            };
            key.push((t.model_id, model.label_state(&gs)?));
        }
    }
    key.sort_unstable();
    Ok(book.lookup(&key))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceStep {
    pub timestamp: f64,
    pub predicted_word: WordId,
    pub estimated_word: Option<WordId>,
    pub anomaly: bool,
    /// Cluster-mean positions of the predicted word, per track.
    pub predicted_positions: Vec<(u32, Vec3)>,
}

fn predicted_positions(
    word: WordId,
    tracks: &[TrackObservation],
    models: &HashMap<u32, &GdbnVocabulary>,
    book: &WordBook,
) -> Vec<(u32, Vec3)> {
    let Some(key) = book.key(word) else {
        return Vec::new();
    };
    let mut used = vec![false; key.len()];
    let mut out = Vec::new();
    for t in tracks {
        let slot = key
            .iter()
            .enumerate()
            .find(|(i, (m, _))| !used[*i] && *m == t.model_id);
        if let Some((i, &(m, c))) = slot {
            used[i] = true;
            if let Some(cl) = models.get(&m).and_then(|v| v.clusters.get(c)) {
                out.push((t.track_id, cl.mean_position()));
            }
        }
    }
    out
}

/// Runs the filter over `frames`, one step per frame. The first step compares
/// the initial particle set with the first estimate. When no particle holds a
/// known estimated word the set has lost the scene and is re-seeded on it,
/// with the dwell taken from the run of identical estimates.
pub fn run_inference(
    frames: &[FrameObservation],
    models: &[GdbnVocabulary],
    book: &WordBook,
    config: &ImjpfConfig,
) -> Result<Vec<InferenceStep>> {
    let by_id: HashMap<u32, &GdbnVocabulary> = models.iter().map(|m| (m.model_id, m)).collect();
    let mut pf = ParticleFilter::init(book, config)?;
    let mut steps = Vec::with_capacity(frames.len());
    let mut run: (Option<WordId>, usize) = (None, 0);
    for (i, f) in frames.iter().enumerate() {
        if i > 0 {
            pf.predict(book);
        }
        let predicted = pf.map_word();
        let estimated = estimate_word(&f.tracks, &by_id, book)?;
        steps.push(InferenceStep {
            timestamp: f.timestamp,
            predicted_word: predicted,
            estimated_word: estimated,
            anomaly: estimated != Some(predicted),
            predicted_positions: predicted_positions(predicted, &f.tracks, &by_id, book),
        });
        run = if estimated.is_some() && estimated == run.0 {
            (estimated, run.1 + 1)
        } else {
            (estimated, 1)
        };
        if !pf.update_and_resample(estimated, book.len()) {
            if let Some(w) = estimated {
                pf.reseed(w, run.1);
            }
        }
    }
    Ok(steps)
}
