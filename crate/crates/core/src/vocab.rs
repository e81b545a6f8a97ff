//! Frequent-delta vocabulary, binary delta labels, vocabulary refresh and the
//! per-table frequent-delta lookup.
//!
//! Class layout: indices `0..ds` are the active classes, `ds` is the default
//! class, and `ds + 1 .. ds + 1 + void` are void classes that can absorb new
//! offsets at refresh time without resizing the output head.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::address::{DeltaSet, TableDelta, TableId};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SlotState {
    Active,
    Void,
    Unassigned,
}

impl SlotState {
    fn as_str(self) -> &'static str {
        match self {
            SlotState::Active => "active",
            SlotState::Void => "void",
            SlotState::Unassigned => "unassigned",
        }
    }
}

/// One changed class after a refresh.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Remap {
    pub class: usize,
    pub old: Option<i64>,
    pub new: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeltaVocabulary {
    ds: usize,
    /// Offset per non-default class: `ds` active slots then the void slots.
    slots: Vec<Option<i64>>,
    pub freq: BTreeMap<i64, u64>,
}

/// Counts each distinct offset once per query.
fn offset_counts<'a, I>(sets: I) -> BTreeMap<i64, u64>
where
    I: IntoIterator<Item = &'a DeltaSet>,
{
    let mut counts = BTreeMap::new();
    for s in sets {
        for off in s.offsets() {
            *counts.entry(off).or_insert(0) += 1;
        }
    }
    counts
}

/// Offsets by descending count, then smaller magnitude, then positive first.
fn ranked(counts: &BTreeMap<i64, u64>) -> Vec<i64> {
    let mut v: Vec<(i64, u64)> = counts.iter().map(|(o, c)| (*o, *c)).collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.unsigned_abs().cmp(&b.0.unsigned_abs())).then(b.0.cmp(&a.0)));
    v.into_iter().map(|(o, _)| o).collect()
}

/// Builds the vocabulary from training delta sets. Table ids are ignored.
pub fn build_vocab<'a, I>(train: I, ds: usize, void: usize) -> Result<DeltaVocabulary>
where
    I: IntoIterator<Item = &'a DeltaSet>,
{
    if ds == 0 {
        return Err(Error::InvalidArgument("ds must be at least 1".into()));
    }
    let freq = offset_counts(train);
    let mut slots: Vec<Option<i64>> = ranked(&freq).into_iter().take(ds).map(Some).collect();
    slots.resize(ds + void, None);
    Ok(DeltaVocabulary { ds, slots, freq })
}

impl DeltaVocabulary {
    pub fn ds(&self) -> usize {
        self.ds
    }

    pub fn void_slots(&self) -> usize {
        self.slots.len() - self.ds
    }

    pub fn default_class(&self) -> usize {
        self.ds
    }

    pub fn class_count(&self) -> usize {
        self.slots.len() + 1
    }

    /// Offset of a class, `None` for the default class and unassigned slots.
    pub fn offset(&self, class: usize) -> Option<i64> {
        match class.cmp(&self.ds) {
            std::cmp::Ordering::Less => self.slots[class],
            std::cmp::Ordering::Equal => None,
            std::cmp::Ordering::Greater => self.slots.get(class - 1).copied().flatten(),
        }
    }

    pub fn state(&self, class: usize) -> Option<SlotState> {
        if class == self.ds || class >= self.class_count() {
            return None;
        }
        Some(match (class < self.ds, self.offset(class)) {
            (_, None) => SlotState::Unassigned,
            (true, Some(_)) => SlotState::Active,
            (false, Some(_)) => SlotState::Void,
        })
    }

    fn slot_to_class(&self, slot: usize) -> usize {
        if slot < self.ds {
            slot
        } else {
            slot + 1
        }
    }

    /// Class currently holding `offset`.
    pub fn class_of(&self, offset: i64) -> Option<usize> {
        self.slots.iter().position(|s| *s == Some(offset)).map(|i| self.slot_to_class(i))
    }

    /// All assigned offsets with their classes, by class index.
    pub fn assigned(&self) -> Vec<(usize, i64)> {
        self.slots.iter().enumerate().filter_map(|(i, s)| s.map(|o| (self.slot_to_class(i), o))).collect()
    }

    /// Recomputes the top-ds offsets over `recent`. Offsets already assigned
    /// keep their class; new offsets take unassigned active slots, then void
    /// slots, then evict the least frequent assigned offsets outside the new
    /// top-ds.
    pub fn refresh<'a, I>(&mut self, recent: I) -> Vec<Remap>
    where
        I: IntoIterator<Item = &'a DeltaSet>,
    {
        let counts = offset_counts(recent);
        for (o, c) in &counts {
            *self.freq.entry(*o).or_insert(0) += c;
        }
        let top: Vec<i64> = ranked(&counts).into_iter().take(self.ds).collect();
        let top_set: BTreeSet<i64> = top.iter().copied().collect();
        let incoming: Vec<i64> = top.iter().copied().filter(|o| self.class_of(*o).is_none()).collect();
        if incoming.is_empty() {
            return Vec::new();
        }
        let mut free: Vec<usize> = (0..self.slots.len()).filter(|i| self.slots[*i].is_none()).collect();
        // eviction order: lowest recent count, then lowest historical count,
        // then larger magnitude
        let mut evictable: Vec<usize> =
            (0..self.slots.len()).filter(|i| matches!(self.slots[*i], Some(o) if !top_set.contains(&o))).collect();
        evictable.sort_by_key(|i| {
            let o = self.slots[*i].expect("assigned");
            (
                counts.get(&o).copied().unwrap_or(0),
                self.freq.get(&o).copied().unwrap_or(0),
                std::cmp::Reverse(o.unsigned_abs()),
                std::cmp::Reverse(*i),
            )
        });
        free.reverse();
        evictable.reverse();
        let mut remap = Vec::new();
        for o in incoming {
            let Some(slot) = free.pop().or_else(|| evictable.pop()) else { break };
            remap.push(Remap { class: self.slot_to_class(slot), old: self.slots[slot], new: o });
            self.slots[slot] = Some(o);
        }
        remap.sort_by_key(|r| r.class);
        remap
    }

    /// Text form: a `#vocab ds void` header, then one line per non-default
    /// class `index offset freq state` (offset `-` when unassigned).
    pub fn to_text(&self) -> String {
        let mut out = format!("#vocab {} {}\n", self.ds, self.void_slots());
        for class in (0..self.class_count()).filter(|c| *c != self.ds) {
            let state = self.state(class).expect("non-default class");
            match self.offset(class) {
                Some(o) => writeln!(out, "{class} {o} {} {}", self.freq.get(&o).copied().unwrap_or(0), state.as_str()),
                None => writeln!(out, "{class} - 0 {}", state.as_str()),
            }
            .expect("string write");
        }
        out
    }

    pub fn parse_text(text: &str) -> Result<Self> {
        let bad =
            |line: usize, field: &'static str, reason: &str| Error::Parse { line, field, reason: reason.to_string() };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| bad(1, "header", "empty vocabulary file"))?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 3 || parts[0] != "#vocab" {
            return Err(bad(1, "header", "expected '#vocab <ds> <void>'"));
        }
        let ds: usize = parts[1].parse().map_err(|_| bad(1, "ds", "not an integer"))?;
        let void: usize = parts[2].parse().map_err(|_| bad(1, "void", "not an integer"))?;
        if ds == 0 {
            return Err(bad(1, "ds", "must be at least 1"));
        }
        let mut v = DeltaVocabulary { ds, slots: vec![None; ds + void], freq: BTreeMap::new() };
        for (i, line) in lines {
            let n = i + 1;
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 4 {
                return Err(bad(n, "line", "expected 'index offset freq state'"));
            }
            let class: usize = f[0].parse().map_err(|_| bad(n, "index", "not an integer"))?;
            if class == ds || class >= v.class_count() {
                return Err(bad(n, "index", "out of range"));
            }
            let slot = if class < ds { class } else { class - 1 };
            let freq: u64 = f[2].parse().map_err(|_| bad(n, "freq", "not an integer"))?;
            if f[1] != "-" {
                let o: i64 = f[1].parse().map_err(|_| bad(n, "offset", "not an integer"))?;
                if v.class_of(o).is_some() {
                    return Err(bad(n, "offset", "duplicate offset"));
                }
                v.slots[slot] = Some(o);
                v.freq.insert(o, freq);
            }
            let expected = v.state(class).expect("non-default class").as_str();
            if f[3] != expected {
                return Err(bad(n, "state", "state does not match index and offset"));
            }
        }
        Ok(v)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse_text(&std::fs::read_to_string(path)?)
    }
}

/// Free-function form of [`DeltaVocabulary::refresh`] that leaves `v` untouched.
pub fn refresh_vocab<'a, I>(v: &DeltaVocabulary, recent: I) -> (DeltaVocabulary, Vec<Remap>)
where
    I: IntoIterator<Item = &'a DeltaSet>,
{
    let mut out = v.clone();
    let remap = out.refresh(recent);
    (out, remap)
}

/// Multi-hot label over all classes of `v`.
pub type BinaryDelta = Vec<f64>;

pub fn encode_bi_delta(delta_q: &BTreeSet<i64>, v: &DeltaVocabulary) -> BinaryDelta {
    let mut bits = vec![0.0; v.class_count()];
    for off in delta_q {
        match v.class_of(*off) {
            Some(c) => bits[c] = 1.0,
            None => bits[v.default_class()] = 1.0,
        }
    }
    bits
}

/// The `n` most probable assigned classes, as offsets in descending
/// probability. Ties go to the lower class index.
pub fn decode_top_deltas(delta_probs: &[f64], v: &DeltaVocabulary, n: usize) -> Vec<i64> {
    let mut classes: Vec<(usize, i64)> = v.assigned();
    classes.retain(|(c, _)| *c < delta_probs.len());
    classes.sort_by(|a, b| delta_probs[b.0].total_cmp(&delta_probs[a.0]).then(a.0.cmp(&b.0)));
    classes.into_iter().take(n).map(|(_, o)| o).collect()
}

/// Sliding-window counts of observed (table, offset) deltas.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableDeltaLookup {
    pub window: usize,
    pub min_count: u64,
    recent: VecDeque<Vec<TableDelta>>,
    #[serde(with = "pair_list")]
    counts: BTreeMap<(TableId, i64), u64>,
}

/// JSON maps need string keys, so the counts travel as a list of pairs.
mod pair_list {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::address::TableId;

    type Counts = BTreeMap<(TableId, i64), u64>;

    pub fn serialize<S: Serializer>(m: &Counts, s: S) -> Result<S::Ok, S::Error> {
        m.iter().collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Counts, D::Error> {
        Ok(Vec::<((TableId, i64), u64)>::deserialize(d)?.into_iter().collect())
    }
}

impl TableDeltaLookup {
    pub fn new(window: usize, min_count: u64) -> Self {
        Self { window, min_count, recent: VecDeque::new(), counts: BTreeMap::new() }
    }

    /// Records one query's delta set, dropping the oldest once the window is full.
    pub fn observe(&mut self, ds: &DeltaSet) {
        let members: Vec<TableDelta> = ds.members.iter().copied().collect();
        for d in &members {
            *self.counts.entry((d.target_table_id, d.offset)).or_insert(0) += 1;
        }
        self.recent.push_back(members);
        while self.recent.len() > self.window {
            for d in self.recent.pop_front().expect("non-empty") {
                let key = (d.target_table_id, d.offset);
                let c = self.counts.get_mut(&key).expect("counted");
                *c -= 1;
                if *c == 0 {
                    self.counts.remove(&key);
                }
            }
        }
    }

    pub fn count(&self, d: TableDelta) -> u64 {
        self.counts.get(&(d.target_table_id, d.offset)).copied().unwrap_or(0)
    }

    pub fn queries_in_window(&self) -> usize {
        self.recent.len()
    }

    /// Window counts keyed by (table, offset).
    pub fn counts(&self) -> &BTreeMap<(TableId, i64), u64> {
        &self.counts
    }
}

impl Default for TableDeltaLookup {
    fn default() -> Self {
        Self::new(2000, 2)
    }
}

pub fn lookup_filter(candidates: &[TableDelta], lk: &TableDeltaLookup) -> Vec<TableDelta> {
    candidates.iter().copied().filter(|d| lk.count(*d) >= lk.min_count).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::address::LogicalLba;
    use proptest::prelude::*;

    fn set(offsets: &[i64]) -> DeltaSet {
        DeltaSet { reference: LogicalLba::new(0, 0), members: offsets.iter().map(|o| TableDelta::new(0, *o)).collect() }
    }

    fn stream(spec: &[(i64, usize)]) -> Vec<DeltaSet> {
        spec.iter().flat_map(|(o, n)| std::iter::repeat_n(set(&[*o]), *n)).collect()
    }

    #[test]
    fn build_ranks_by_frequency() {
        let v = build_vocab(&stream(&[(0, 100), (1, 50), (-3, 10)]), 2, 0).unwrap();
        assert_eq!(v.assigned(), vec![(0, 0), (1, 1)]);
        assert_eq!(v.class_count(), 3);
    }

    #[test]
    fn build_tie_break() {
        let v = build_vocab(&stream(&[(-2, 5), (2, 5), (-1, 5)]), 3, 0).unwrap();
        assert_eq!(v.assigned(), vec![(0, -1), (1, 2), (2, -2)]);
    }

    #[test]
    fn build_pads_unassigned() {
        let v = build_vocab(&stream(&[(1, 3), (2, 2), (3, 1)]), 8, 0).unwrap();
        assert_eq!(v.assigned().len(), 3);
        assert_eq!((3..8).filter(|c| v.state(*c) == Some(SlotState::Unassigned)).count(), 5);
        assert!(build_vocab(&stream(&[(1, 1)]), 0, 0).is_err());
    }

    #[test]
    fn same_offset_in_two_tables_counts_once_per_query() {
        let mut s = set(&[4]);
        s.members.insert(TableDelta::new(1, 4));
        let v = build_vocab(&[s], 1, 0).unwrap();
        assert_eq!(v.freq[&4], 1);
    }

    fn eight() -> DeltaVocabulary {
        let offs = [-2, -1, 0, 1, 2, 3, 5, 8];
        let sets: Vec<DeltaSet> =
            offs.iter().enumerate().flat_map(|(i, o)| std::iter::repeat_n(set(&[*o]), 100 - i)).collect();
        build_vocab(&sets, 8, 8).unwrap()
    }

    #[test]
    fn encode_examples() {
        let v = eight();
        assert_eq!(v.assigned().iter().map(|a| a.1).collect::<Vec<_>>(), vec![-2, -1, 0, 1, 2, 3, 5, 8]);
        let on = |b: &BinaryDelta| b.iter().enumerate().filter(|(_, x)| **x == 1.0).map(|(i, _)| i).collect::<Vec<_>>();
        assert_eq!(on(&encode_bi_delta(&[1, 5].into(), &v)), vec![3, 6]);
        assert_eq!(on(&encode_bi_delta(&[99].into(), &v)), vec![8]);
        assert_eq!(on(&encode_bi_delta(&[1, 99].into(), &v)), vec![3, 8]);
        assert!(encode_bi_delta(&BTreeSet::new(), &v).iter().all(|x| *x == 0.0));
        assert_eq!(encode_bi_delta(&[1].into(), &v).len(), 17);
    }

    #[test]
    fn decode_examples() {
        let v = eight();
        let mut p = vec![0.1; v.class_count()];
        p[0] = 0.9;
        p[3] = 0.8;
        p[8] = 0.99; // default never decoded
        assert_eq!(decode_top_deltas(&p, &v, 2), vec![-2, 1]);
        assert!(decode_top_deltas(&p, &v, 0).is_empty());
        assert_eq!(decode_top_deltas(&p, &v, 100).len(), 8);
        // ties by class index
        assert_eq!(decode_top_deltas(&[0.5; 17], &v, 3), vec![-2, -1, 0]);
    }

    #[test]
    fn refresh_fixpoint_is_empty() {
        let mut v = eight();
        let recent = stream(&[(0, 10), (1, 9), (-2, 8)]);
        assert!(v.refresh(&recent).is_empty());
        let before = v.assigned();
        assert!(v.refresh(&recent).is_empty());
        assert_eq!(v.assigned(), before);
    }

    #[test]
    fn refresh_uses_void_slot_before_evicting() {
        let mut v = eight();
        let remap = v.refresh(&stream(&[(40, 10), (0, 5)]));
        assert_eq!(remap, vec![Remap { class: 9, old: None, new: 40 }]);
        assert_eq!(v.class_of(0), Some(2));
        assert_eq!(v.state(9), Some(SlotState::Void));
    }

    #[test]
    fn refresh_evicts_lowest_frequency() {
        // ds=3, no void: {a:50, b:40, c:30}
        let mut v = build_vocab(&stream(&[(1, 50), (2, 40), (3, 30)]), 3, 0).unwrap();
        // recent: 1 stays hot, 2 and 3 cool down unequally, 7 and 9 appear
        let recent = stream(&[(1, 20), (7, 15), (9, 12), (2, 3), (3, 1)]);
        let remap = v.refresh(&recent);
        // top-3 recent = {1, 7, 9}; evict 3 (count 1) then 2 (count 3)
        assert_eq!(remap, vec![Remap { class: 1, old: Some(2), new: 9 }, Remap { class: 2, old: Some(3), new: 7 }]);
        assert_eq!(v.class_of(1), Some(0));
    }

    #[test]
    fn text_round_trip() {
        let mut v = eight();
        v.refresh(&stream(&[(40, 10)]));
        let text = v.to_text();
        assert!(text.starts_with("#vocab 8 8\n"));
        assert!(text.contains("\n9 40 10 void\n"));
        assert!(text.contains("\n10 - 0 unassigned\n"));
        assert_eq!(DeltaVocabulary::parse_text(&text).unwrap(), v);
        assert!(DeltaVocabulary::parse_text("#vocab 1 0\n0 5 1 void\n").is_err());
        assert!(DeltaVocabulary::parse_text("").is_err());
    }

    #[test]
    fn lookup_filter_examples() {
        let mut lk = TableDeltaLookup::new(2000, 2);
        for _ in 0..30 {
            lk.observe(&DeltaSet { reference: LogicalLba::new(0, 0), members: [TableDelta::new(0, 1)].into() });
        }
        let cands = [TableDelta::new(0, 1), TableDelta::new(1, 7)];
        assert_eq!(lookup_filter(&cands, &lk), vec![TableDelta::new(0, 1)]);
        lk.min_count = 0;
        assert_eq!(lookup_filter(&cands, &lk), cands.to_vec());
    }

    #[test]
    fn lookup_survives_json() {
        let mut lk = TableDeltaLookup::new(4, 1);
        lk.observe(&DeltaSet {
            reference: crate::address::LogicalLba::new(0, 0),
            members: [TableDelta { target_table_id: 1, offset: -3 }].into(),
        });
        let back: TableDeltaLookup = serde_json::from_str(&serde_json::to_string(&lk).unwrap()).unwrap();
        assert_eq!(back, lk);
    }

    #[test]
    fn lookup_window_expires() {
        let mut lk = TableDeltaLookup::new(3, 1);
        let d = TableDelta::new(0, 5);
        lk.observe(&DeltaSet { reference: LogicalLba::new(0, 0), members: [d].into() });
        for _ in 0..3 {
            lk.observe(&set(&[0]));
        }
        assert_eq!(lk.count(d), 0);
        assert_eq!(lk.queries_in_window(), 3);
        assert_eq!(lk.count(TableDelta::new(0, 0)), 3);
    }

    proptest! {
        #[test]
        fn encode_then_decode(pick in proptest::collection::btree_set(0usize..8, 0..8)) {
            let v = eight();
            let offs: BTreeSet<i64> = pick.iter().map(|c| v.offset(*c).unwrap()).collect();
            let bits = encode_bi_delta(&offs, &v);
            let back: BTreeSet<i64> = decode_top_deltas(&bits, &v, offs.len()).into_iter().collect();
            prop_assert_eq!(back, offs);
        }

        #[test]
        fn raising_min_count_never_adds(seq in proptest::collection::vec((0u16..3, -4i64..4), 0..60), lo in 0u64..4, extra in 0u64..4) {
            let mut lk = TableDeltaLookup::new(20, lo);
            for (t, o) in &seq {
                lk.observe(&DeltaSet { reference: LogicalLba::new(0, 0), members: [TableDelta::new(*t, *o)].into() });
            }
            let cands: Vec<TableDelta> = (0..3).flat_map(|t| (-4..4).map(move |o| TableDelta::new(t, o))).collect();
            let a = lookup_filter(&cands, &lk);
            lk.min_count = lo + extra;
            let b = lookup_filter(&cands, &lk);
            prop_assert!(b.iter().all(|d| a.contains(d)));
        }

        #[test]
        fn surviving_offsets_keep_class(seq in proptest::collection::vec(-6i64..6, 1..80)) {
            let mut v = build_vocab(&stream(&[(0, 5), (1, 4), (2, 3), (3, 2)]), 4, 4).unwrap();
            let before = v.assigned();
            let recent: Vec<DeltaSet> = seq.iter().map(|o| set(&[*o])).collect();
            v.refresh(&recent);
            for (c, o) in before {
                if let Some(now) = v.class_of(o) {
                    prop_assert_eq!(now, c);
                }
            }
            let offs: Vec<i64> = v.assigned().into_iter().map(|a| a.1).collect();
            let uniq: BTreeSet<i64> = offs.iter().copied().collect();
            prop_assert_eq!(uniq.len(), offs.len());
        }
    }
}
