use std::collections::{BTreeMap, HashMap, HashSet};

use gist_core::rng;
use gist_core::ImageRecord;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::{BlindTestError, Result};

/// A rater's judgment, and the hidden truth of an item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Real,
    Synthetic,
}

/// Sizes and seed of a new session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SessionConfig {
    pub n_real: usize,
    pub n_synth: usize,
    pub n_orientation: usize,
    pub seed: u64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self { n_real: 50, n_synth: 50, n_orientation: 20, seed: 0 }
    }
}

/// A test item; `truth` and `source` never leave the server before completion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Item {
    pub item_id: String,
    pub truth: Label,
    /// Index into the pool named by `truth`.
    pub source: usize,
}

/// A disclosed real training image shown before rating.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrientationItem {
    pub item_id: String,
    pub source: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlindTestSession {
    pub session_id: String,
    pub config: SessionConfig,
    pub items: Vec<Item>,
    pub orientation: Vec<OrientationItem>,
    pub responses: HashMap<String, Label>,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    Open,
    Complete,
}

/// Where an item id points.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageRef {
    Real(usize),
    Synthetic(usize),
}

impl BlindTestSession {
    pub fn state(&self) -> SessionState {
        if self.responses.len() == self.items.len() {
            SessionState::Complete
        } else {
            SessionState::Open
        }
    }

    pub fn remaining(&self) -> usize {
        self.items.len() - self.responses.len()
    }

    /// First unanswered item with its position.
    pub fn next_item(&self) -> Option<(usize, &Item)> {
        self.items.iter().enumerate().find(|(_, it)| !self.responses.contains_key(&it.item_id))
    }

    pub fn is_orientation(&self, item_id: &str) -> bool {
        self.orientation.iter().any(|o| o.item_id == item_id)
    }

    /// Pool image behind a test or orientation id.
    pub fn image_ref(&self, item_id: &str) -> Option<ImageRef> {
        if let Some(o) = self.orientation.iter().find(|o| o.item_id == item_id) {
            return Some(ImageRef::Real(o.source));
        }
        self.items.iter().find(|it| it.item_id == item_id).map(|it| match it.truth {
            Label::Real => ImageRef::Real(it.source),
            Label::Synthetic => ImageRef::Synthetic(it.source),
        })
    }
}

fn opaque_id(rng: &mut impl rand::Rng, taken: &mut HashSet<String>) -> String {
    loop {
        let id = format!("{:016x}", rng.random::<u64>());
        if taken.insert(id.clone()) {
            return id;
        }
    }
}

/// Largest-remainder allocation of `n` slots proportional to `counts`.
fn proportional(counts: &[usize], n: usize) -> Vec<usize> {
    let total: usize = counts.iter().sum();
    let mut alloc: Vec<usize> = counts.iter().map(|&c| c * n / total).collect();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by_key(|&i| (std::cmp::Reverse((counts[i] * n) % total), i));
    let short = n - alloc.iter().sum::<usize>();
    for &i in order.iter().take(short) {
        alloc[i] += 1;
    }
    alloc
}

/// Build a shuffled, relabelled session.
///
/// Orientation images are drawn from `real_pool` in proportion to its class
/// distribution (uniformly when unlabeled); test reals come from the rest of
/// the pool, so the two sets never overlap. Every draw follows `config.seed`.
pub fn create_session(
    session_id: impl Into<String>,
    real_pool: &[ImageRecord],
    synth_pool: &[ImageRecord],
    config: SessionConfig,
    created_at: u64,
) -> Result<BlindTestSession> {
    let needed_real = config.n_real + config.n_orientation;
    if needed_real > real_pool.len() {
        return Err(BlindTestError::PoolTooSmall { pool: "real", needed: needed_real, available: real_pool.len() });
    }
    if config.n_synth > synth_pool.len() {
        return Err(BlindTestError::PoolTooSmall { pool: "synthetic", needed: config.n_synth, available: synth_pool.len() });
    }
    if config.n_real + config.n_synth == 0 {
        return Err(BlindTestError::EmptySession);
    }
    let mut rng = rng::seeded(config.seed);

    let mut by_class: BTreeMap<Option<u32>, Vec<usize>> = BTreeMap::new();
    for (i, r) in real_pool.iter().enumerate() {
        by_class.entry(r.label).or_default().push(i);
    }
    let counts: Vec<usize> = by_class.values().map(Vec::len).collect();
    let alloc = proportional(&counts, config.n_orientation);
    let mut orientation_src = Vec::with_capacity(config.n_orientation);
    let mut rest = Vec::with_capacity(real_pool.len());
    for (idx, take) in by_class.values_mut().zip(alloc) {
        idx.shuffle(&mut rng);
        orientation_src.extend_from_slice(&idx[..take]);
        rest.extend_from_slice(&idx[take..]);
    }
    rest.shuffle(&mut rng);
    let mut synth: Vec<usize> = (0..synth_pool.len()).collect();
    synth.shuffle(&mut rng);

    let mut taken = HashSet::new();
    let mut items: Vec<Item> = rest[..config.n_real]
        .iter()
        .map(|&s| (Label::Real, s))
        .chain(synth[..config.n_synth].iter().map(|&s| (Label::Synthetic, s)))
        .map(|(truth, source)| Item { item_id: opaque_id(&mut rng, &mut taken), truth, source })
        .collect();
    items.shuffle(&mut rng);
    let orientation = orientation_src
        .into_iter()
        .map(|source| OrientationItem { item_id: opaque_id(&mut rng, &mut taken), source })
        .collect();
    Ok(BlindTestSession {
        session_id: session_id.into(),
        config,
        items,
        orientation,
        responses: HashMap::new(),
        created_at,
    })
}

/// Acknowledgment of a recorded response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ack {
    pub accepted: bool,
    pub remaining: usize,
}

pub fn submit_response(session: &mut BlindTestSession, item_id: &str, label: Label) -> Result<Ack> {
    if session.state() == SessionState::Complete {
        return Err(BlindTestError::SessionComplete);
    }
    if !session.items.iter().any(|it| it.item_id == item_id) {
        return Err(BlindTestError::UnknownItem(item_id.to_string()));
    }
    if session.responses.contains_key(item_id) {
        return Err(BlindTestError::DuplicateResponse(item_id.to_string()));
    }
    session.responses.insert(item_id.to_string(), label);
    Ok(Ack { accepted: true, remaining: session.remaining() })
}

/// Scores with "real" as the positive class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlindTestReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    /// `[[real->real, real->synthetic], [synthetic->real, synthetic->synthetic]]`,
    /// rows = truth, columns = response.
    pub confusion: [[u64; 2]; 2],
    pub positive_class: String,
    pub n_items: usize,
}

/// Pure scoring of paired truths and responses. A zero denominator scores 0.
pub fn score(pairs: impl IntoIterator<Item = (Label, Label)>) -> BlindTestReport {
    let mut m = [[0u64; 2]; 2];
    for (truth, said) in pairs {
        m[(truth == Label::Synthetic) as usize][(said == Label::Synthetic) as usize] += 1;
    }
    let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let total = m[0][0] + m[0][1] + m[1][0] + m[1][1];
    BlindTestReport {
        accuracy: ratio(m[0][0] + m[1][1], total),
        precision: ratio(m[0][0], m[0][0] + m[1][0]),
        recall: ratio(m[0][0], m[0][0] + m[0][1]),
        confusion: m,
        positive_class: "real".into(),
        n_items: total as usize,
    }
}

pub fn score_session(session: &BlindTestSession) -> Result<BlindTestReport> {
    if session.state() != SessionState::Complete {
        return Err(BlindTestError::SessionIncomplete { remaining: session.remaining() });
    }
    Ok(score(session.items.iter().map(|it| (it.truth, session.responses[&it.item_id]))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use gist_core::corpus::generate_toy_corpus;
    use proptest::prelude::*;

    fn pools(n_real: usize, n_synth: usize) -> (Vec<ImageRecord>, Vec<ImageRecord>) {
        (generate_toy_corpus(n_real, 32, 2, 1), generate_toy_corpus(n_synth, 32, 2, 2))
    }

    fn cfg(n_real: usize, n_synth: usize, n_orientation: usize, seed: u64) -> SessionConfig {
        SessionConfig { n_real, n_synth, n_orientation, seed }
    }

    #[test]
    fn default_session_sizes() {
        let (r, s) = pools(200, 200);
        let sess = create_session("a", &r, &s, SessionConfig::default(), 0).unwrap();
        assert_eq!((sess.items.len(), sess.orientation.len()), (100, 20));
        assert_eq!(sess.items.iter().filter(|i| i.truth == Label::Real).count(), 50);
        let test_reals: HashSet<usize> = sess.items.iter().filter(|i| i.truth == Label::Real).map(|i| i.source).collect();
        assert!(sess.orientation.iter().all(|o| !test_reals.contains(&o.source)));
        // toy pool is balanced, so the orientation set is too
        assert_eq!(sess.orientation.iter().filter(|o| r[o.source].label == Some(0)).count(), 10);
        let ids: HashSet<&str> = sess.items.iter().map(|i| i.item_id.as_str()).chain(sess.orientation.iter().map(|o| o.item_id.as_str())).collect();
        assert_eq!(ids.len(), 120);
    }

    #[test]
    fn small_and_oversized_pools() {
        let (r, s) = pools(20, 20);
        let sess = create_session("a", &r, &s, cfg(5, 5, 0, 3), 0).unwrap();
        assert_eq!(sess.items.iter().filter(|i| i.truth == Label::Synthetic).count(), 5);
        let (r, s) = pools(60, 200);
        assert!(matches!(
            create_session("a", &r, &s, SessionConfig::default(), 0),
            Err(BlindTestError::PoolTooSmall { pool: "real", needed: 70, available: 60 })
        ));
    }

    #[test]
    fn seeded_creation_is_reproducible() {
        let (r, s) = pools(40, 40);
        let a = create_session("x", &r, &s, cfg(10, 10, 4, 8), 5).unwrap();
        let b = create_session("x", &r, &s, cfg(10, 10, 4, 8), 5).unwrap();
        assert_eq!(a, b);
        let c = create_session("x", &r, &s, cfg(10, 10, 4, 9), 5).unwrap();
        assert_ne!(a.items, c.items);
    }

    #[test]
    fn response_lifecycle() {
        let (r, s) = pools(10, 10);
        let mut sess = create_session("a", &r, &s, cfg(2, 1, 1, 0), 0).unwrap();
        let ids: Vec<String> = sess.items.iter().map(|i| i.item_id.clone()).collect();
        assert_eq!(submit_response(&mut sess, &ids[0], Label::Real).unwrap(), Ack { accepted: true, remaining: 2 });
        assert_eq!(sess.state(), SessionState::Open);
        assert!(matches!(submit_response(&mut sess, &ids[0], Label::Real), Err(BlindTestError::DuplicateResponse(_))));
        let orient = sess.orientation[0].item_id.clone();
        assert!(matches!(submit_response(&mut sess, &orient, Label::Real), Err(BlindTestError::UnknownItem(_))));
        assert!(matches!(score_session(&sess), Err(BlindTestError::SessionIncomplete { remaining: 2 })));
        submit_response(&mut sess, &ids[1], Label::Synthetic).unwrap();
        assert_eq!(submit_response(&mut sess, &ids[2], Label::Real).unwrap().remaining, 0);
        assert_eq!(sess.state(), SessionState::Complete);
        assert!(matches!(submit_response(&mut sess, &ids[2], Label::Real), Err(BlindTestError::SessionComplete)));
        assert_eq!(score_session(&sess).unwrap().n_items, 3);
    }

    #[test]
    fn crafted_confusion_case() {
        use Label::*;
        let pairs = std::iter::repeat_n((Real, Real), 29)
            .chain(std::iter::repeat_n((Real, Synthetic), 21))
            .chain(std::iter::repeat_n((Synthetic, Real), 24))
            .chain(std::iter::repeat_n((Synthetic, Synthetic), 26));
        let rep = score(pairs);
        assert_eq!(rep.accuracy, 0.55);
        assert_eq!(rep.precision, 29.0 / 53.0);
        assert_eq!(rep.recall, 0.58);
        assert_eq!(rep.confusion, [[29, 21], [24, 26]]);
        let all_real = score((0..10).map(|i| (if i < 5 { Real } else { Synthetic }, Real)));
        assert_eq!((all_real.accuracy, all_real.precision, all_real.recall), (0.5, 0.5, 1.0));
    }

    #[test]
    fn proportional_allocation() {
        assert_eq!(proportional(&[100, 100], 20), [10, 10]);
        assert_eq!(proportional(&[1, 1, 1], 2), [1, 1, 0]);
        assert_eq!(proportional(&[30, 10], 3), [2, 1]);
        assert_eq!(proportional(&[5], 0), [0]);
    }

    #[test]
    fn real_positions_are_centred() {
        let (r, s) = pools(60, 60);
        let mut total = 0.0;
        let mut count = 0.0;
        for seed in 0..200 {
            let sess = create_session("a", &r, &s, cfg(20, 20, 0, seed), 0).unwrap();
            let n = sess.items.len() as f64 - 1.0;
            for (i, it) in sess.items.iter().enumerate() {
                if it.truth == Label::Real {
                    total += i as f64 / n;
                    count += 1.0;
                }
            }
        }
        let mean = total / count;
        assert!((0.45..=0.55).contains(&mean), "{mean}");
    }

    proptest! {
        #[test]
        fn score_matches_recount(pairs in proptest::collection::vec((any::<bool>(), any::<bool>()), 1..300)) {
            let lab = |b: bool| if b { Label::Real } else { Label::Synthetic };
            let rep = score(pairs.iter().map(|&(t, s)| (lab(t), lab(s))));
            let n = pairs.len() as f64;
            let correct = pairs.iter().filter(|(t, s)| t == s).count() as f64;
            let tp = pairs.iter().filter(|&&(t, s)| t && s).count() as f64;
            let pred = pairs.iter().filter(|p| p.1).count() as f64;
            let act = pairs.iter().filter(|p| p.0).count() as f64;
            prop_assert_eq!(rep.accuracy, correct / n);
            prop_assert_eq!(rep.precision, if pred > 0.0 { tp / pred } else { 0.0 });
            prop_assert_eq!(rep.recall, if act > 0.0 { tp / act } else { 0.0 });
            prop_assert_eq!(rep.confusion.iter().flatten().sum::<u64>() as usize, pairs.len());
        }

        #[test]
        fn proportional_sums_to_n(counts in proptest::collection::vec(1usize..50, 1..6), frac in 0.0f64..1.0) {
            let n = (frac * counts.iter().sum::<usize>() as f64) as usize;
            let alloc = proportional(&counts, n);
            prop_assert_eq!(alloc.iter().sum::<usize>(), n);
            prop_assert!(alloc.iter().zip(&counts).all(|(a, c)| a <= c));
        }
    }
}
