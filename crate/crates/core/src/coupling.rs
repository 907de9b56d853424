//! Interaction-level words.
//!
//! At each timestep the active `(model_id, cluster_id)` pairs, sorted, form a
//! combination key. Keys are numbered in order of first appearance starting at
//! 1; the empty key is word 0. Besides the global word transition matrix the
//! book keeps sparse dwell-conditioned rows: the distribution of the next word
//! given the current word and how many steps it has lasted.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::vocabulary::{normalize_counts, GdbnVocabulary, Matrix};
use crate::{Error, Result};

pub type WordId = u32;
pub type CombinationKey = Vec<(u32, usize)>;

/// Word of the empty scene.
pub const EMPTY_WORD: WordId = 0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CouplingParams {
    /// Dwell values at or above this share one row.
    pub max_exact_dwell: usize,
}

impl Default for CouplingParams {
    fn default() -> Self {
        Self { max_exact_dwell: 50 }
    }
}

impl CouplingParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_exact_dwell >= 1 {
            Ok(())
        } else {
            Err(Error::Config("coupling: max_exact_dwell must be >= 1".into()))
        }
    }
}

/// Active pairs per timestep.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SceneLabelSequence {
    pub timestamps: Vec<f64>,
    pub active: Vec<CombinationKey>,
}

impl SceneLabelSequence {
    pub fn push(&mut self, timestamp: f64, mut pairs: CombinationKey) {
        pairs.sort_unstable();
        self.timestamps.push(timestamp);
        self.active.push(pairs);
    }

    /// A model is active at every timestamp its label sequence covers.
    pub fn from_vocabularies(timestamps: &[f64], models: &[&GdbnVocabulary]) -> Self {
        let mut seq = Self::default();
        for &t in timestamps {
            let pairs = models
                .iter()
                .filter_map(|m| m.label_at(t).map(|l| (m.model_id, l)))
                .collect();
            seq.push(t, pairs);
        }
        seq
    }

    pub fn len(&self) -> usize {
        self.active.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordEntry {
    pub id: WordId,
    pub key: CombinationKey,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DwellRow {
    pub word: WordId,
    /// Capped at `max_exact_dwell`.
    pub dwell: usize,
    pub next: Vec<(WordId, f64)>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WordBookRepr {
    words: Vec<WordEntry>,
    global_tm: Matrix,
    max_exact_dwell: usize,
    dwell_rows: Vec<DwellRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WordBookRepr", into = "WordBookRepr")]
pub struct WordBook {
    keys: Vec<CombinationKey>,
    index: HashMap<CombinationKey, WordId>,
    pub global_tm: Matrix,
    pub max_exact_dwell: usize,
    dwell_rows: BTreeMap<(WordId, usize), Vec<(WordId, f64)>>,
}

impl TryFrom<WordBookRepr> for WordBook {
    type Error = String;

    fn try_from(r: WordBookRepr) -> std::result::Result<Self, String> {
        let n = r.words.len();
        if n == 0 || !r.words[0].key.is_empty() {
            return Err("word 0 must be the empty combination".into());
        }
        let mut keys = Vec::with_capacity(n);
        let mut index = HashMap::with_capacity(n);
        for (i, e) in r.words.into_iter().enumerate() {
            if e.id as usize != i {
                return Err(format!("word ids must be 0..{n} in order"));
            }
            if index.insert(e.key.clone(), e.id).is_some() {
                return Err(format!("duplicate combination for word {}", e.id));
            }
            keys.push(e.key);
        }
        if r.global_tm.len() != n || r.global_tm.iter().any(|row| row.len() != n) {
            return Err("global_tm shape does not match the word count".into());
        }
        let dwell_rows = r.dwell_rows.into_iter().map(|d| ((d.word, d.dwell), d.next)).collect();
        Ok(Self {
            keys,
            index,
            global_tm: r.global_tm,
            max_exact_dwell: r.max_exact_dwell,
            dwell_rows,
        })
    }
}

impl From<WordBook> for WordBookRepr {
    fn from(b: WordBook) -> Self {
        Self {
            words: b
                .keys
                .into_iter()
                .enumerate()
                .map(|(i, key)| WordEntry { id: i as WordId, key })
                .collect(),
            global_tm: b.global_tm,
            max_exact_dwell: b.max_exact_dwell,
            dwell_rows: b
                .dwell_rows
                .into_iter()
                .map(|((word, dwell), next)| DwellRow { word, dwell, next })
                .collect(),
        }
    }
}

impl WordBook {
    /// Number of words, the empty word included.
    pub fn len(&self) -> usize {
        self.keys.len()
    }

    /// A book always holds the empty word; it is "empty" when that is all.
    pub fn is_empty(&self) -> bool {
        self.keys.len() <= 1
    }

    pub fn key(&self, word: WordId) -> Option<&CombinationKey> {
        self.keys.get(word as usize)
    }

    pub fn entries(&self) -> impl Iterator<Item = (WordId, &CombinationKey)> {
        self.keys.iter().enumerate().map(|(i, k)| (i as WordId, k))
    }

    /// Word of a sorted combination, `None` when the book has never seen it.
    pub fn lookup(&self, key: &[(u32, usize)]) -> Option<WordId> {
        self.index.get(key).copied()
    }

    /// Adds a word with a self-loop row.
    fn insert(&mut self, key: CombinationKey) -> WordId {
        let id = self.keys.len() as WordId;
        self.index.insert(key.clone(), id);
        self.keys.push(key);
        for row in &mut self.global_tm {
            row.push(0.0);
        }
        let mut row = vec![0.0; self.keys.len()];
        row[id as usize] = 1.0;
        self.global_tm.push(row);
        id
    }

    /// Next-word distribution for `word` after `dwell` steps in it. Falls
    /// back to the global row when training never saw that dwell.
    pub fn transition_row(&self, word: WordId, dwell: usize) -> Vec<(WordId, f64)> {
        let capped = dwell.clamp(1, self.max_exact_dwell);
        if let Some(row) = self.dwell_rows.get(&(word, capped)) {
            return row.clone();
        }
        self.global_row(word)
    }

    pub fn global_row(&self, word: WordId) -> Vec<(WordId, f64)> {
        self.global_tm[word as usize]
            .iter()
            .enumerate()
            .filter(|(_, p)| **p > 0.0)
            .map(|(j, p)| (j as WordId, *p))
            .collect()
    }
}

/// Word of `key` (sorted here). In testing mode (`insert_if_missing` false)
/// unseen combinations give `None` and leave the book untouched.
pub fn word_of(key: &[(u32, usize)], book: &mut WordBook, insert_if_missing: bool) -> Option<WordId> {
    let mut key = key.to_vec();
    key.sort_unstable();
    match book.lookup(&key) {
        Some(w) => Some(w),
        None if insert_if_missing => Some(book.insert(key)),
        None => None,
    }
}

/// Accumulates words and transition counts over one or more sequences.
/// Transitions are never counted across sequence boundaries.
#[derive(Debug, Clone)]
pub struct WordBookBuilder {
    keys: Vec<CombinationKey>,
    index: HashMap<CombinationKey, WordId>,
    counts: BTreeMap<(WordId, WordId), f64>,
    dwell_counts: BTreeMap<(WordId, usize), BTreeMap<WordId, f64>>,
    max_exact_dwell: usize,
}

impl WordBookBuilder {
    pub fn new(params: &CouplingParams) -> Result<Self> {
        params.validate()?;
        let mut index = HashMap::new();
        index.insert(Vec::new(), EMPTY_WORD);
        Ok(Self {
            keys: vec![Vec::new()],
            index,
            counts: BTreeMap::new(),
            dwell_counts: BTreeMap::new(),
            max_exact_dwell: params.max_exact_dwell,
        })
    }

    fn word(&mut self, key: &CombinationKey) -> WordId {
        if let Some(&w) = self.index.get(key) {
            return w;
        }
        let w = self.keys.len() as WordId;
        self.keys.push(key.clone());
        self.index.insert(key.clone(), w);
        w
    }

    /// Numbers the keys of `scene` and returns its word sequence.
    pub fn observe(&mut self, scene: &SceneLabelSequence) -> Vec<WordId> {
        let words: Vec<WordId> = scene.active.iter().map(|k| self.word(k)).collect();
        let mut dwell = 1;
        for t in 0..words.len().saturating_sub(1) {
            if t > 0 && words[t] == words[t - 1] {
                dwell += 1;
            } else {
                dwell = 1;
            }
            let (a, b) = (words[t], words[t + 1]);
            *self.counts.entry((a, b)).or_default() += 1.0;
            let slot = dwell.min(self.max_exact_dwell);
            *self.dwell_counts.entry((a, slot)).or_default().entry(b).or_default() += 1.0;
        }
        words
    }

    pub fn finish(self) -> WordBook {
        let n = self.keys.len();
        let mut counts = vec![vec![0.0; n]; n];
        for ((a, b), c) in self.counts {
            counts[a as usize][b as usize] = c;
        }
        let dwell_rows = self
            .dwell_counts
            .into_iter()
            .map(|(slot, next)| {
                let total: f64 = next.values().sum();
                (slot, next.into_iter().map(|(w, c)| (w, c / total)).collect())
            })
            .collect();
        WordBook {
            keys: self.keys,
            index: self.index,
            global_tm: normalize_counts(&counts, None),
            max_exact_dwell: self.max_exact_dwell,
            dwell_rows,
        }
    }
}

/// Builds a book from a single scene and returns it with the word sequence.
pub fn build_wordbook(scene: &SceneLabelSequence, params: &CouplingParams) -> Result<(WordBook, Vec<WordId>)> {
    let mut b = WordBookBuilder::new(params)?;
    let words = b.observe(scene);
    Ok((b.finish(), words))
}

/// Builds a book from several scenes; returns one word sequence per scene.
pub fn build_wordbook_multi(
    scenes: &[SceneLabelSequence],
    params: &CouplingParams,
) -> Result<(WordBook, Vec<Vec<WordId>>)> {
    let mut b = WordBookBuilder::new(params)?;
    let words = scenes.iter().map(|s| b.observe(s)).collect();
    Ok((b.finish(), words))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scene(keys: &[&[(u32, usize)]]) -> SceneLabelSequence {
        let mut s = SceneLabelSequence::default();
        for (i, k) in keys.iter().enumerate() {
            s.push(i as f64 * 0.1, k.to_vec());
        }
        s
    }

    #[test]
    fn changing_clusters_yield_the_next_word() {
        let mut b = WordBookBuilder::new(&CouplingParams::default()).unwrap();
        let history: Vec<Vec<(u32, usize)>> = (0..9).map(|c| vec![(7, c)]).collect();
        let refs: Vec<&[(u32, usize)]> = history.iter().map(|k| k.as_slice()).collect();
        b.observe(&scene(&refs));
        let words = b.observe(&scene(&[
            &[(7, 0)],
            &[(7, 1)],
            &[(7, 2)],
            &[(7, 3)],
            &[(2, 3), (1, 2)],
            &[(1, 3), (2, 4)],
        ]));
        assert_eq!(words[4], 10);
        assert_eq!(words[5], 11);
    }

    #[test]
    fn empty_timestep_is_word_zero() {
        let (book, words) = build_wordbook(&scene(&[&[(1, 0)], &[], &[(1, 0)]]), &CouplingParams::default()).unwrap();
        assert_eq!(words, vec![1, 0, 1]);
        assert_eq!(book.key(0).unwrap(), &Vec::<(u32, usize)>::new());
    }

    #[test]
    fn constant_scene_is_a_single_self_loop() {
        let one: &[(u32, usize)] = &[(3, 1)];
        let (book, words) = build_wordbook(&scene(&[one; 6]), &CouplingParams::default()).unwrap();
        assert_eq!(words, vec![1; 6]);
        assert_eq!(book.global_tm[1], vec![0.0, 1.0]);
        assert_eq!(book.transition_row(1, 3), vec![(1, 1.0)]);
    }

    #[test]
    fn testing_mode_never_mutates() {
        let (mut book, _) = build_wordbook(&scene(&[&[(1, 0)], &[(1, 1)]]), &CouplingParams::default()).unwrap();
        let before = book.clone();
        assert_eq!(word_of(&[(1, 1)], &mut book, false), Some(2));
        assert_eq!(word_of(&[], &mut book, false), Some(0));
        assert_eq!(word_of(&[(9, 9)], &mut book, false), None);
        assert_eq!(book, before);
        assert_eq!(word_of(&[(9, 9)], &mut book, true), Some(3));
        assert_eq!(book.len(), 4);
        assert!(book.global_tm.iter().all(|r| (r.iter().sum::<f64>() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn sequences_do_not_chain() {
        let (book, _) = build_wordbook_multi(
            &[scene(&[&[(1, 0)], &[(1, 1)]]), scene(&[&[(1, 2)], &[(1, 3)]])],
            &CouplingParams::default(),
        )
        .unwrap();
        // word 2 ends the first sequence, so it has no outgoing counts
        assert_eq!(book.global_tm[2], vec![0.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn dwell_rows_separate_what_the_global_row_mixes() {
        let (book, _) = build_wordbook(
            &scene(&[&[(1, 0)], &[(1, 0)], &[(1, 1)], &[(1, 0)], &[(1, 2)]]),
            &CouplingParams::default(),
        )
        .unwrap();
        assert_eq!(book.global_tm[1], vec![0.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]);
        assert_eq!(book.transition_row(1, 1), vec![(1, 0.5), (3, 0.5)]);
        assert_eq!(book.transition_row(1, 2), vec![(2, 1.0)]);
        // dwell 7 was never seen: global row
        assert_eq!(book.transition_row(1, 7), book.global_row(1));
    }

    #[test]
    fn serde_round_trip_rebuilds_the_index() {
        let (book, _) = build_wordbook(&scene(&[&[(1, 0), (2, 1)], &[(1, 1)]]), &CouplingParams::default()).unwrap();
        let text = serde_json::to_string_pretty(&book).unwrap();
        let back: WordBook = serde_json::from_str(&text).unwrap();
        assert_eq!(back, book);
        assert_eq!(serde_json::to_string_pretty(&back).unwrap(), text);
        assert_eq!(back.lookup(&[(1, 1)]), Some(2));
        assert!(serde_json::from_str::<WordBook>(&text.replacen("\"id\": 1", "\"id\": 5", 1)).is_err());
    }

    proptest! {
        #[test]
        fn replay_reproduces_training_words(raw in prop::collection::vec(prop::collection::vec((0u32..3, 0usize..3), 0..3), 1..40)) {
            let mut s = SceneLabelSequence::default();
            for (i, mut k) in raw.into_iter().enumerate() {
                k.sort_unstable();
                k.dedup_by_key(|p| p.0);
                s.push(i as f64, k);
            }
            let (mut book, words) = build_wordbook(&s, &CouplingParams::default()).unwrap();
            for (k, w) in s.active.iter().zip(&words) {
                prop_assert_eq!(word_of(k, &mut book, false), Some(*w));
                prop_assert_eq!(*w == 0, k.is_empty());
            }
            // first appearances are strictly increasing
            let mut seen = 0;
            for w in &words {
                if *w > seen {
                    prop_assert_eq!(*w, seen + 1);
                    seen = *w;
                }
            }
            let ids: std::collections::HashSet<_> = book.entries().map(|(_, k)| k.clone()).collect();
            prop_assert_eq!(ids.len(), book.len());
            for (i, row) in book.global_tm.iter().enumerate() {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                let from: Vec<usize> = (0..words.len() - 1).filter(|&t| words[t] as usize == i).collect();
                for (j, p) in row.iter().enumerate() {
                    let expect = if from.is_empty() {
                        f64::from(u8::from(i == j))
                    } else {
                        from.iter().filter(|&&t| words[t + 1] as usize == j).count() as f64 / from.len() as f64
                    };
                    prop_assert!((p - expect).abs() < 1e-12);
                }
            }
        }
    }
}
