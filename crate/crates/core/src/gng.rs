//! Growing neural gas over 6D generalized states.
//!
//! Standard GNG: two seed units, winner/neighbor adaptation, edge aging, unit
//! insertion every `lambda_insert` signals next to the unit with the largest
//! accumulated error, global error decay. After training every state is mapped
//! to its nearest unit and each non-empty unit becomes a [`Cluster`] whose
//! mean and covariance are the sample statistics of its members. Cluster ids
//! follow the order in which the input sequence first visits them.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::gstate::GeneralizedState;
use crate::linalg::{mean_cov, Mat6, Vec6};
use crate::{Error, Result, Vec3};

/// Ridge added to every cluster covariance.
pub const COVARIANCE_RIDGE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GngParams {
    pub eps_b: f64,
    pub eps_n: f64,
    pub age_max: u32,
    pub lambda_insert: usize,
    pub alpha: f64,
    pub d: f64,
    pub max_nodes: usize,
    pub epochs: usize,
    pub rng_seed: u64,
    /// Optional per-dimension weights applied before distances are taken.
    pub scale: Option<[f64; 6]>,
}

impl Default for GngParams {
    fn default() -> Self {
        Self {
            eps_b: 0.2,
            eps_n: 0.006,
            age_max: 50,
            lambda_insert: 100,
            alpha: 0.5,
            d: 0.995,
            max_nodes: 20,
            epochs: 30,
            rng_seed: 1,
            scale: None,
        }
    }
}

impl GngParams {
    pub fn validate(&self) -> Result<()> {
        let ok = 0.0 < self.eps_n
            && self.eps_n < self.eps_b
            && self.eps_b < 1.0
            && 0.0 < self.alpha
            && self.alpha < 1.0
            && 0.0 < self.d
            && self.d < 1.0
            && self.age_max >= 1
            && self.lambda_insert >= 1
            && self.max_nodes >= 1
            && self.epochs >= 1
            && self.scale.is_none_or(|s| s.iter().all(|v| *v > 0.0));
        if ok {
            Ok(())
        } else {
            Err(Error::Config("gng: parameter out of range".into()))
        }
    }

    fn scale_vec(&self) -> Vec6 {
        self.scale.map_or(Vec6::repeat(1.0), Vec6::from)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub id: usize,
    /// Position (m) followed by velocity (m/s).
    pub mean: [f64; 6],
    pub covariance: [[f64; 6]; 6],
    pub member_count: usize,
    pub is_dummy: bool,
}

impl Cluster {
    pub(crate) fn from_members(id: usize, members: &[Vec6], is_dummy: bool) -> Self {
        let (mean, cov) = mean_cov(members, COVARIANCE_RIDGE);
        Self {
            id,
            mean: mean.into(),
            covariance: mat_to_rows(&cov),
            member_count: members.len(),
            is_dummy,
        }
    }

    pub fn mean_vec(&self) -> Vec6 {
        Vec6::from(self.mean)
    }

    pub fn mean_position(&self) -> Vec3 {
        Vec3::new(self.mean[0], self.mean[1], self.mean[2])
    }

    pub fn mean_velocity(&self) -> Vec3 {
        Vec3::new(self.mean[3], self.mean[4], self.mean[5])
    }
}

fn mat_to_rows(m: &Mat6) -> [[f64; 6]; 6] {
    let mut out = [[0.0; 6]; 6];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = m[(i, j)];
        }
    }
    out
}

struct Unit {
    w: Vec6,
    error: f64,
}

struct Network {
    units: Vec<Unit>,
    /// `(low, high)` unit index -> age.
    edges: BTreeMap<(usize, usize), u32>,
}

fn edge(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

impl Network {
    fn two_nearest(&self, x: &Vec6) -> (usize, usize) {
        let mut best = (usize::MAX, f64::INFINITY);
        let mut second = (usize::MAX, f64::INFINITY);
        for (i, u) in self.units.iter().enumerate() {
            let d = (u.w - x).norm_squared();
            if d < best.1 {
                second = best;
                best = (i, d);
            } else if d < second.1 {
                second = (i, d);
            }
        }
        (best.0, second.0)
    }

    fn neighbors(&self, i: usize) -> Vec<usize> {
        self.edges
            .keys()
            .filter_map(|&(a, b)| {
                if a == i {
                    Some(b)
                } else if b == i {
                    Some(a)
                } else {
                    None
                }
            })
            .collect()
    }

    fn prune(&mut self, age_max: u32) {
        self.edges.retain(|_, age| *age <= age_max);
        let mut connected = vec![false; self.units.len()];
        for &(a, b) in self.edges.keys() {
            connected[a] = true;
            connected[b] = true;
        }
        if connected.iter().all(|c| *c) {
            return;
        }
        let mut remap = vec![usize::MAX; self.units.len()];
        let mut kept = Vec::with_capacity(self.units.len());
        for (i, u) in std::mem::take(&mut self.units).into_iter().enumerate() {
            if connected[i] {
                remap[i] = kept.len();
                kept.push(u);
            }
        }
        self.units = kept;
        self.edges = std::mem::take(&mut self.edges)
            .into_iter()
            .map(|((a, b), age)| ((remap[a], remap[b]), age))
            .collect();
    }

    fn insert(&mut self, alpha: f64) {
        let Some(q) = (0..self.units.len()).max_by(|&a, &b| self.units[a].error.total_cmp(&self.units[b].error).then(b.cmp(&a))) else {
            return;
        };
        let Some(f) = self
            .neighbors(q)
            .into_iter()
            .max_by(|&a, &b| self.units[a].error.total_cmp(&self.units[b].error).then(b.cmp(&a)))
        else {
            return;
        };
        let r = self.units.len();
        self.units[q].error *= alpha;
        self.units[f].error *= alpha;
        self.units.push(Unit {
            w: (self.units[q].w + self.units[f].w) * 0.5,
            error: self.units[q].error,
        });
        self.edges.remove(&edge(q, f));
        self.edges.insert(edge(q, r), 0);
        self.edges.insert(edge(r, f), 0);
    }
}

/// Trains a GNG on `states` and returns the non-empty clusters.
pub fn fit(states: &[GeneralizedState], params: &GngParams) -> Result<Vec<Cluster>> {
    if states.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: states.len(),
        });
    }
    params.validate()?;
    let scale = params.scale_vec();
    let raw: Vec<Vec6> = states.iter().map(GeneralizedState::as_vec6).collect();
    let data: Vec<Vec6> = raw.iter().map(|x| x.component_mul(&scale)).collect();

    let units = train(&data, params);

    // map every state to its nearest unit and summarize in original units
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); units.len()];
    for (i, x) in data.iter().enumerate() {
        members[nearest(&units, x)].push(i);
    }
    let mut order: Vec<usize> = (0..units.len()).filter(|&u| !members[u].is_empty()).collect();
    order.sort_by_key(|&u| members[u][0]);
    Ok(order
        .into_iter()
        .enumerate()
        .map(|(id, u)| {
            let pts: Vec<Vec6> = members[u].iter().map(|&i| raw[i]).collect();
            Cluster::from_members(id, &pts, false)
        })
        .collect())
}

/// Unit positions after training, in scaled coordinates. Also used to get the
/// 2-unit initialization when `max_nodes` or `epochs` is tiny.
fn train(data: &[Vec6], params: &GngParams) -> Vec<Vec6> {
    let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);
    let (a, b) = seed_pair(data.len(), &mut rng);
    let mut net = Network {
        units: vec![
            Unit {
                w: data[a],
                error: 0.0,
            },
            Unit {
                w: data[b],
                error: 0.0,
            },
        ],
        edges: BTreeMap::new(),
    };
    if params.max_nodes == 1 {
        net.units.truncate(1);
    }

    let mut signals = 0usize;
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..params.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let x = &data[i];
            let (s1, s2) = net.two_nearest(x);
            if s2 == usize::MAX {
                let w = net.units[s1].w;
                net.units[s1].w += (x - w) * params.eps_b;
                continue;
            }
            for (&(p, q), age) in net.edges.iter_mut() {
                if p == s1 || q == s1 {
                    *age += 1;
                }
            }
            let w = net.units[s1].w;
            net.units[s1].error += (w - x).norm_squared();
            net.units[s1].w += (x - w) * params.eps_b;
            for n in net.neighbors(s1) {
                let w = net.units[n].w;
                net.units[n].w += (x - w) * params.eps_n;
            }
            net.edges.insert(edge(s1, s2), 0);
            net.prune(params.age_max);

            signals += 1;
            if signals % params.lambda_insert == 0 && net.units.len() < params.max_nodes {
                net.insert(params.alpha);
            }
            for u in &mut net.units {
                u.error *= params.d;
            }
        }
    }
    net.units.into_iter().map(|u| u.w).collect()
}

fn seed_pair(n: usize, rng: &mut ChaCha8Rng) -> (usize, usize) {
    let a = rng.gen_range(0..n);
    let mut b = rng.gen_range(0..n - 1);
    if b >= a {
        b += 1;
    }
    (a, b)
}

/// Seed units the network starts from, in original coordinates.
pub fn initial_units(states: &[GeneralizedState], params: &GngParams) -> Result<Vec<Vec6>> {
    if states.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: states.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);
    let (a, b) = seed_pair(states.len(), &mut rng);
    Ok(vec![states[a].as_vec6(), states[b].as_vec6()])
}

fn nearest(units: &[Vec6], x: &Vec6) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, u) in units.iter().enumerate() {
        let d = (u - x).norm_squared();
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}

/// Id of the cluster whose mean is nearest in 6D; ties go to the lowest id.
pub fn assign(gs: &GeneralizedState, clusters: &[Cluster]) -> Result<usize> {
    assign_scaled(gs, clusters, None)
}

pub fn assign_scaled(gs: &GeneralizedState, clusters: &[Cluster], scale: Option<[f64; 6]>) -> Result<usize> {
    let s = scale.map_or(Vec6::repeat(1.0), Vec6::from);
    let x = gs.as_vec6().component_mul(&s);
    clusters
        .iter()
        .map(|c| (c.id, (c.mean_vec().component_mul(&s) - x).norm_squared()))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .map(|(id, _)| id)
        .ok_or(Error::NoClusters)
}

/// Mean squared 6D distance from each state to the nearest of `centers`.
pub fn quantization_error(states: &[GeneralizedState], centers: &[Vec6]) -> f64 {
    let total: f64 = states
        .iter()
        .map(|g| {
            let x = g.as_vec6();
            centers.iter().map(|c| (c - x).norm_squared()).fold(f64::INFINITY, f64::min)
        })
        .sum();
    total / states.len() as f64
}
