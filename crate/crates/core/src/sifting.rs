//! Frequent-string filtering and decision trees over candidate strings.
//!
//! Indices inside a tree are 0-based positions within the interval; the
//! caller adds the interval's offset before querying the source.

use std::collections::{BTreeMap, BTreeSet};

use crate::bits::BitString;
use crate::error::SimError;
use crate::model::{PeerId, Ratio};

/// Multiset of equal-width strings with their occurrence counts.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StringMultiset {
    width: usize,
    entries: BTreeMap<BitString, u64>,
}

impl StringMultiset {
    pub fn new(width: usize) -> Self {
        StringMultiset {
            width,
            entries: BTreeMap::new(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn add(&mut self, s: BitString, count: u64) -> Result<(), SimError> {
        if s.len() != self.width {
            return Err(SimError::Sifting(format!(
                "string of width {} in a multiset of width {}",
                s.len(),
                self.width
            )));
        }
        if count > 0 {
            *self.entries.entry(s).or_default() += count;
        }
        Ok(())
    }

    /// Builds the multiset from per-peer submissions for one interval. A
    /// peer that submitted two different strings is dropped entirely; a
    /// repeated identical string counts once.
    pub fn from_submissions<'a>(
        width: usize,
        subs: impl IntoIterator<Item = (PeerId, &'a BitString)>,
    ) -> Result<Self, SimError> {
        let mut per_peer: BTreeMap<PeerId, Option<&BitString>> = BTreeMap::new();
        for (p, s) in subs {
            match per_peer.get(&p) {
                None => {
                    per_peer.insert(p, Some(s));
                }
                Some(Some(prev)) if *prev != s => {
                    per_peer.insert(p, None);
                }
                _ => {}
            }
        }
        let mut m = StringMultiset::new(width);
        for s in per_peer.into_values().flatten() {
            m.add(s.clone(), 1)?;
        }
        Ok(m)
    }

    pub fn count(&self, s: &BitString) -> u64 {
        self.entries.get(s).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.entries.values().sum()
    }

    pub fn distinct(&self) -> usize {
        self.entries.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&BitString, u64)> {
        self.entries.iter().map(|(s, c)| (s, *c))
    }
}

/// Strings occurring at least `t` times, in lexicographic order.
pub fn frequent_strings(s: &StringMultiset, t: Ratio) -> Result<Vec<BitString>, SimError> {
    if t <= Ratio::from_integer(0) {
        return Err(SimError::Sifting(format!("threshold must be positive, got {t}")));
    }
    Ok(s
        .entries
        .iter()
        .filter(|(_, &c)| Ratio::from_integer(c as i64) >= t)
        .map(|(s, _)| s.clone())
        .collect())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Node {
    Leaf(usize),
    Inner { index: usize, zero: Box<Node>, one: Box<Node> },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecisionTree {
    width: usize,
    root: Node,
    leaves: Vec<BitString>,
    internal: Vec<usize>,
}

/// How much checking `determine` does on the leaf it reaches.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Validation {
    /// Compare the leaf with every bit already queried. Free.
    Queried,
    /// Also read every other bit from the oracle. For tests only.
    Full,
}

pub fn build_decision_tree(candidates: &[BitString]) -> Result<DecisionTree, SimError> {
    let Some(first) = candidates.first() else {
        return Err(SimError::Sifting("cannot build a tree over no strings".into()));
    };
    let width = first.len();
    let mut seen = BTreeSet::new();
    for s in candidates {
        if s.len() != width {
            return Err(SimError::Sifting("candidate strings differ in width".into()));
        }
        if !seen.insert(s) {
            return Err(SimError::Sifting(format!("duplicate candidate {s}")));
        }
    }
    let mut internal = Vec::new();
    let ids: Vec<usize> = (0..candidates.len()).collect();
    let root = build(candidates, ids, &mut internal);
    Ok(DecisionTree {
        width,
        root,
        leaves: candidates.to_vec(),
        internal,
    })
}

fn build(all: &[BitString], ids: Vec<usize>, internal: &mut Vec<usize>) -> Node {
    if ids.len() == 1 {
        return Node::Leaf(ids[0]);
    }
    // Smallest index on which two members differ: the minimum first
    // difference against the first member.
    let base = &all[ids[0]];
    let index = ids[1..]
        .iter()
        .filter_map(|&i| base.first_difference(&all[i]))
        .min()
        .expect("distinct strings differ somewhere");
    internal.push(index);
    let (one, zero): (Vec<usize>, Vec<usize>) = ids.into_iter().partition(|&i| all[i].get(index));
    Node::Inner {
        index,
        zero: Box::new(build(all, zero, internal)),
        one: Box::new(build(all, one, internal)),
    }
}

impl DecisionTree {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn leaves(&self) -> &[BitString] {
        &self.leaves
    }

    pub fn internal_count(&self) -> usize {
        self.internal.len()
    }

    /// Index of every internal node, one entry per node in pre-order.
    pub fn query_plan(&self) -> &[usize] {
        &self.internal
    }

    /// Walks the tree using already-queried bits.
    pub fn resolve(&self, bit: impl Fn(usize) -> Option<bool>) -> Result<&BitString, SimError> {
        let mut node = &self.root;
        loop {
            match node {
                Node::Leaf(i) => {
                    let leaf = &self.leaves[*i];
                    for &q in &self.internal {
                        if let Some(b) = bit(q) {
                            if leaf.get(q) != b {
                                return Err(SimError::Inconsistency(format!(
                                    "leaf {leaf} disagrees with the source at position {q}"
                                )));
                            }
                        }
                    }
                    return Ok(leaf);
                }
                Node::Inner { index, zero, one } => {
                    let b = bit(*index).ok_or_else(|| {
                        SimError::Sifting(format!("position {index} was not queried"))
                    })?;
                    node = if b { one } else { zero };
                }
            }
        }
    }
}

/// Queries every internal node's index (one call per node), walks to a
/// leaf and returns it with the number of queries used.
pub fn determine(
    tree: &DecisionTree,
    mut oracle: impl FnMut(usize) -> bool,
    validation: Validation,
) -> Result<(BitString, usize), SimError> {
    let mut answers: BTreeMap<usize, bool> = BTreeMap::new();
    for &i in tree.query_plan() {
        answers.insert(i, oracle(i));
    }
    let used = tree.query_plan().len();
    let leaf = tree.resolve(|i| answers.get(&i).copied())?.clone();
    if validation == Validation::Full {
        for i in 0..tree.width() {
            if !answers.contains_key(&i) && oracle(i) != leaf.get(i) {
                return Err(SimError::Inconsistency(format!(
                    "leaf {leaf} disagrees with the source at position {i}"
                )));
            }
        }
    }
    Ok((leaf, used))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bs(s: &str) -> BitString {
        BitString::parse(s).unwrap()
    }

    fn multiset(items: &[(&str, u64)]) -> StringMultiset {
        let mut m = StringMultiset::new(items[0].0.len());
        for (s, c) in items {
            m.add(bs(s), *c).unwrap();
        }
        m
    }

    #[test]
    fn threshold_filtering() {
        let m = multiset(&[("01", 3), ("10", 2)]);
        assert_eq!(frequent_strings(&m, Ratio::from_integer(2)).unwrap(), vec![bs("01"), bs("10")]);
        assert_eq!(frequent_strings(&m, Ratio::from_integer(3)).unwrap(), vec![bs("01")]);
        let m = multiset(&[("01", 3)]);
        assert!(frequent_strings(&m, Ratio::new(7, 2)).unwrap().is_empty());
    }

    #[test]
    fn width_mismatch_is_an_error() {
        let mut m = StringMultiset::new(2);
        assert!(m.add(bs("011"), 1).is_err());
    }

    #[test]
    fn double_submitters_are_dropped() {
        let a = bs("01");
        let b = bs("10");
        let p = PeerId::new;
        let subs = vec![(p(1), &a), (p(1), &b), (p(2), &a), (p(3), &a), (p(3), &a)];
        let m = StringMultiset::from_submissions(2, subs).unwrap();
        assert_eq!(m.count(&a), 2);
        assert_eq!(m.count(&b), 0);
    }

    #[test]
    fn tree_shape_follows_smallest_difference() {
        let t = build_decision_tree(&[bs("00"), bs("01"), bs("11")]).unwrap();
        assert_eq!(t.internal_count(), 2);
        match t.root() {
            Node::Inner { index: 0, zero, one } => {
                assert!(matches!(**zero, Node::Inner { index: 1, .. }));
                assert!(matches!(**one, Node::Leaf(2)));
            }
            other => panic!("unexpected root {other:?}"),
        }
    }

    #[test]
    fn determine_walks_to_truth() {
        let t = build_decision_tree(&[bs("00"), bs("01"), bs("11")]).unwrap();
        let truth = bs("01");
        let mut asked = Vec::new();
        let (s, used) = determine(&t, |i| {
            asked.push(i);
            truth.get(i)
        }, Validation::Queried)
        .unwrap();
        assert_eq!(s, truth);
        assert_eq!(used, 2);
        asked.sort();
        assert_eq!(asked, vec![0, 1]);
    }

    #[test]
    fn singleton_costs_nothing() {
        let t = build_decision_tree(&[bs("0110")]).unwrap();
        let (s, used) = determine(&t, |_| panic!("no queries expected"), Validation::Queried).unwrap();
        assert_eq!(s, bs("0110"));
        assert_eq!(used, 0);
    }

    #[test]
    fn missing_truth_is_detected() {
        let t = build_decision_tree(&[bs("00"), bs("11")]).unwrap();
        let truth = bs("01");
        let err = determine(&t, |i| truth.get(i), Validation::Full).unwrap_err();
        assert!(matches!(err, SimError::Inconsistency(_)));
    }

    #[test]
    fn bad_inputs() {
        assert!(build_decision_tree(&[]).is_err());
        assert!(build_decision_tree(&[bs("01"), bs("01")]).is_err());
    }

    proptest! {
        #[test]
        fn internal_nodes_are_one_less_than_leaves(words in proptest::collection::btree_set(0u32..(1 << 6), 1..16)) {
            let strings: Vec<BitString> = words
                .iter()
                .map(|w| BitString::from_bools(&(0..6).map(|i| (w >> i) & 1 == 1).collect::<Vec<_>>()))
                .collect();
            let t = build_decision_tree(&strings).unwrap();
            prop_assert_eq!(t.internal_count(), strings.len() - 1);
            for truth in &strings {
                let (s, used) = determine(&t, |i| truth.get(i), Validation::Full).unwrap();
                prop_assert_eq!(&s, truth);
                prop_assert_eq!(used, strings.len() - 1);
            }
        }

        #[test]
        fn frequent_set_is_bounded_by_total_over_t(counts in proptest::collection::vec(1u64..6, 1..8), t in 1i64..5) {
            let mut m = StringMultiset::new(3);
            for (i, c) in counts.iter().enumerate() {
                let s = BitString::from_bools(&[(i & 1) == 1, (i & 2) == 2, (i & 4) == 4]);
                m.add(s, *c).unwrap();
            }
            let fs = frequent_strings(&m, Ratio::from_integer(t)).unwrap();
            prop_assert!(fs.len() as u64 <= m.total() / t as u64);
        }
    }
}
