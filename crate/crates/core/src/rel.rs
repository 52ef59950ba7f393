//! Finite binary relations over events.
//!
//! A [`Rel`] always lives on an explicit [`Carrier`]: the finite universe of
//! events it may relate. Keeping the carrier explicit means the identity and
//! the empty relation are well defined and composition of two empty relations
//! still knows what it ranges over. Internally a relation is a boolean
//! adjacency matrix stored as bit rows, which keeps closures cheap for the
//! litmus-sized graphs this crate works with.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Identity of an event: owning thread plus a serial position.
///
/// Thread 0 is the initialization thread; its events carry the index of the
/// location they initialize in `serial`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EventId {
    pub tid: u32,
    pub serial: u32,
}

impl EventId {
    pub const fn new(tid: u32, serial: u32) -> Self {
        EventId { tid, serial }
    }

    /// The initialization event for the location with index `loc`.
    pub const fn init(loc: u32) -> Self {
        EventId {
            tid: 0,
            serial: loc,
        }
    }

    pub fn is_init(self) -> bool {
        self.tid == 0
    }
}

impl fmt::Display for EventId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_init() {
            write!(f, "init{}", self.serial)
        } else {
            write!(f, "e{}.{}", self.tid, self.serial)
        }
    }
}

pub type EventSet = BTreeSet<EventId>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RelError {
    #[error("relations range over different carriers")]
    CarrierMismatch,
    #[error("event {0} is not in the carrier")]
    NotInCarrier(EventId),
}

/// The sorted, duplicate-free universe of a relation.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Carrier {
    events: Vec<EventId>,
}

impl Carrier {
    pub fn new<I: IntoIterator<Item = EventId>>(events: I) -> Arc<Carrier> {
        let mut events: Vec<EventId> = events.into_iter().collect();
        events.sort_unstable();
        events.dedup();
        Arc::new(Carrier { events })
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn events(&self) -> &[EventId] {
        &self.events
    }

    pub fn index_of(&self, e: EventId) -> Option<usize> {
        self.events.binary_search(&e).ok()
    }

    pub fn contains(&self, e: EventId) -> bool {
        self.index_of(e).is_some()
    }

    pub fn to_set(&self) -> EventSet {
        self.events.iter().copied().collect()
    }
}

/// Which closure [`Rel::closure`] computes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClosureKind {
    /// `R ∪ id`
    Reflexive,
    /// `R⁺`
    Transitive,
    /// `R*`
    ReflexiveTransitive,
    /// `R?`, the reflexive closure under its customary name.
    ReflexiveOf,
}

#[inline]
fn ones(row: &[u64]) -> impl Iterator<Item = usize> + '_ {
    row.iter().enumerate().flat_map(|(wi, &w)| {
        let mut w = w;
        std::iter::from_fn(move || {
            if w == 0 {
                return None;
            }
            let b = w.trailing_zeros() as usize;
            w &= w - 1;
            Some(wi * 64 + b)
        })
    })
}

/// A binary relation on a finite carrier of events.
///
/// Equality is extensional: two relations are equal when they have the same
/// carrier and the same pairs.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Rel {
    carrier: Arc<Carrier>,
    words: usize,
    bits: Vec<u64>,
}

impl Rel {
    pub fn empty(carrier: &Arc<Carrier>) -> Rel {
        let n = carrier.len();
        let words = n.div_ceil(64);
        Rel {
            carrier: Arc::clone(carrier),
            words,
            bits: vec![0; n * words],
        }
    }

    #[inline]
    fn row(&self, i: usize) -> &[u64] {
        &self.bits[i * self.words..(i + 1) * self.words]
    }

    #[inline]
    fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.words + j / 64] >> (j % 64) & 1 == 1
    }

    #[inline]
    fn set(&mut self, i: usize, j: usize) {
        self.bits[i * self.words + j / 64] |= 1 << (j % 64);
    }

    /// `row(dst) |= row(src)`, where `src` may be a row of `from`.
    #[inline]
    fn or_row_from(&mut self, dst: usize, from: &[u64]) {
        let w = self.words;
        for (a, b) in self.bits[dst * w..(dst + 1) * w].iter_mut().zip(from) {
            *a |= b;
        }
    }

    fn zip_with(&self, other: &Rel, f: impl Fn(u64, u64) -> u64) -> Rel {
        self.check_carrier(other);
        let mut r = self.clone();
        for (a, b) in r.bits.iter_mut().zip(&other.bits) {
            *a = f(*a, *b);
        }
        r
    }

    pub fn identity(carrier: &Arc<Carrier>) -> Rel {
        let mut r = Rel::empty(carrier);
        for i in 0..carrier.len() {
            r.set(i, i);
        }
        r
    }

    /// `[A]`: the identity restricted to `set` (events outside the carrier are ignored).
    pub fn id_on(carrier: &Arc<Carrier>, set: &EventSet) -> Rel {
        let mut r = Rel::empty(carrier);
        for e in set {
            if let Some(i) = carrier.index_of(*e) {
                r.set(i, i);
            }
        }
        r
    }

    /// `A × B` (events outside the carrier are ignored).
    pub fn product(carrier: &Arc<Carrier>, a: &EventSet, b: &EventSet) -> Rel {
        let mut r = Rel::empty(carrier);
        let cols: Vec<usize> = b.iter().filter_map(|e| carrier.index_of(*e)).collect();
        for e in a {
            if let Some(i) = carrier.index_of(*e) {
                for &j in &cols {
                    r.set(i, j);
                }
            }
        }
        r
    }

    pub fn from_pairs<I>(carrier: &Arc<Carrier>, pairs: I) -> Result<Rel, RelError>
    where
        I: IntoIterator<Item = (EventId, EventId)>,
    {
        let mut r = Rel::empty(carrier);
        for (a, b) in pairs {
            r.insert(a, b)?;
        }
        Ok(r)
    }

    /// All pairs `(a, b)` of carrier events satisfying `pred`.
    pub fn from_fn(carrier: &Arc<Carrier>, mut pred: impl FnMut(EventId, EventId) -> bool) -> Rel {
        let mut r = Rel::empty(carrier);
        let ev = carrier.events();
        for (i, &a) in ev.iter().enumerate() {
            for (j, &b) in ev.iter().enumerate() {
                if pred(a, b) {
                    r.set(i, j);
                }
            }
        }
        r
    }

    pub fn carrier(&self) -> &Arc<Carrier> {
        &self.carrier
    }

    pub fn same_carrier(&self, other: &Rel) -> bool {
        Arc::ptr_eq(&self.carrier, &other.carrier) || self.carrier == other.carrier
    }

    fn check_carrier(&self, other: &Rel) {
        assert!(
            self.same_carrier(other),
            "relation operation on mismatched carriers"
        );
    }

    fn idx(&self, e: EventId) -> Result<usize, RelError> {
        self.carrier.index_of(e).ok_or(RelError::NotInCarrier(e))
    }

    /// Adds `(a, b)`; returns whether the pair was new.
    pub fn insert(&mut self, a: EventId, b: EventId) -> Result<bool, RelError> {
        let (i, j) = (self.idx(a)?, self.idx(b)?);
        let fresh = !self.get(i, j);
        self.set(i, j);
        Ok(fresh)
    }

    pub fn remove(&mut self, a: EventId, b: EventId) {
        if let (Ok(i), Ok(j)) = (self.idx(a), self.idx(b)) {
            self.bits[i * self.words + j / 64] &= !(1 << (j % 64));
        }
    }

    pub fn contains(&self, a: EventId, b: EventId) -> bool {
        match (self.carrier.index_of(a), self.carrier.index_of(b)) {
            (Some(i), Some(j)) => self.get(i, j),
            _ => false,
        }
    }

    pub fn len(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.iter().all(|w| *w == 0)
    }

    pub fn pairs(&self) -> impl Iterator<Item = (EventId, EventId)> + '_ {
        let ev = self.carrier.events();
        (0..ev.len()).flat_map(move |i| ones(self.row(i)).map(move |j| (ev[i], ev[j])))
    }

    pub fn successors(&self, a: EventId) -> impl Iterator<Item = EventId> + '_ {
        let ev = self.carrier.events();
        self.carrier
            .index_of(a)
            .into_iter()
            .flat_map(move |i| ones(self.row(i)).map(move |j| ev[j]))
    }

    pub fn predecessors(&self, b: EventId) -> impl Iterator<Item = EventId> + '_ {
        let ev = self.carrier.events();
        let j = self.carrier.index_of(b);
        (0..ev.len())
            .filter(move |&i| j.is_some_and(|j| self.get(i, j)))
            .map(move |i| ev[i])
    }

    pub fn union(&self, other: &Rel) -> Rel {
        self.zip_with(other, |a, b| a | b)
    }

    pub fn inter(&self, other: &Rel) -> Rel {
        self.zip_with(other, |a, b| a & b)
    }

    pub fn minus(&self, other: &Rel) -> Rel {
        self.zip_with(other, |a, b| a & !b)
    }

    pub fn inverse(&self) -> Rel {
        let mut r = Rel::empty(&self.carrier);
        for i in 0..self.carrier.len() {
            for j in ones(self.row(i)) {
                r.set(j, i);
            }
        }
        r
    }

    /// Sequential composition `self ; other`.
    pub fn compose(&self, other: &Rel) -> Result<Rel, RelError> {
        if !self.same_carrier(other) {
            return Err(RelError::CarrierMismatch);
        }
        let mut r = Rel::empty(&self.carrier);
        for i in 0..self.carrier.len() {
            for k in ones(self.row(i)) {
                r.or_row_from(i, other.row(k));
            }
        }
        Ok(r)
    }

    /// [`Rel::compose`] for relations known to share a carrier.
    ///
    /// Panics on a carrier mismatch.
    pub fn seq(&self, other: &Rel) -> Rel {
        self.compose(other)
            .expect("relation composition on mismatched carriers")
    }

    pub fn closure(&self, kind: ClosureKind) -> Rel {
        match kind {
            ClosureKind::Reflexive | ClosureKind::ReflexiveOf => {
                let mut r = self.clone();
                for i in 0..self.carrier.len() {
                    r.set(i, i);
                }
                r
            }
            ClosureKind::Transitive => {
                // Warshall over bit rows.
                let mut r = self.clone();
                let n = self.carrier.len();
                let w = self.words;
                let mut row_k = vec![0u64; w];
                for k in 0..n {
                    row_k.copy_from_slice(r.row(k));
                    for i in 0..n {
                        if r.get(i, k) {
                            r.or_row_from(i, &row_k);
                        }
                    }
                }
                r
            }
            ClosureKind::ReflexiveTransitive => self
                .closure(ClosureKind::Transitive)
                .closure(ClosureKind::Reflexive),
        }
    }

    /// `R⁺`
    pub fn plus(&self) -> Rel {
        self.closure(ClosureKind::Transitive)
    }

    /// `R*`
    pub fn star(&self) -> Rel {
        self.closure(ClosureKind::ReflexiveTransitive)
    }

    /// `R?`
    pub fn opt(&self) -> Rel {
        self.closure(ClosureKind::ReflexiveOf)
    }

    pub fn is_irreflexive(&self) -> bool {
        (0..self.carrier.len()).all(|i| !self.get(i, i))
    }

    pub fn is_acyclic(&self) -> bool {
        self.plus().is_irreflexive()
    }

    pub fn is_transitive(&self) -> bool {
        self.seq(self).subset_of(self)
    }

    pub fn subset_of(&self, other: &Rel) -> bool {
        self.check_carrier(other);
        self.bits.iter().zip(&other.bits).all(|(x, y)| x & !y == 0)
    }

    /// `[dom_set] ; self ; [cod_set]`
    pub fn restrict(&self, dom_set: &EventSet, cod_set: &EventSet) -> Rel {
        let mut mask = vec![0u64; self.words];
        for e in cod_set {
            if let Some(j) = self.carrier.index_of(*e) {
                mask[j / 64] |= 1 << (j % 64);
            }
        }
        let mut r = Rel::empty(&self.carrier);
        let w = self.words;
        for e in dom_set {
            if let Some(i) = self.carrier.index_of(*e) {
                for k in 0..w {
                    r.bits[i * w + k] = self.bits[i * w + k] & mask[k];
                }
            }
        }
        r
    }

    /// Keeps the pairs satisfying `pred`.
    pub fn filter(&self, mut pred: impl FnMut(EventId, EventId) -> bool) -> Rel {
        let mut r = Rel::empty(&self.carrier);
        let ev = self.carrier.events();
        for i in 0..ev.len() {
            for j in ones(self.row(i)) {
                if pred(ev[i], ev[j]) {
                    r.set(i, j);
                }
            }
        }
        r
    }

    pub fn dom(&self) -> EventSet {
        let ev = self.carrier.events();
        (0..ev.len())
            .filter(|&i| self.row(i).iter().any(|w| *w != 0))
            .map(|i| ev[i])
            .collect()
    }

    pub fn codom(&self) -> EventSet {
        let mut acc = vec![0u64; self.words];
        for i in 0..self.carrier.len() {
            for (a, b) in acc.iter_mut().zip(self.row(i)) {
                *a |= b;
            }
        }
        let ev = self.carrier.events();
        ones(&acc).map(|j| ev[j]).collect()
    }

    /// Re-embeds the relation into another carrier containing all its pairs.
    pub fn with_carrier(&self, carrier: &Arc<Carrier>) -> Result<Rel, RelError> {
        Rel::from_pairs(carrier, self.pairs())
    }

    /// A shortest cycle, if any, as the list of events visited (the first
    /// event is not repeated at the end). Starting points are tried in
    /// ascending order and successors are explored in ascending order, so the
    /// result is deterministic.
    pub fn find_cycle(&self) -> Option<Vec<EventId>> {
        let n = self.carrier.len();
        let ev = self.carrier.events();
        let mut best: Option<Vec<usize>> = None;
        for s in 0..n {
            if self.get(s, s) {
                return Some(vec![ev[s]]);
            }
            let mut parent = vec![usize::MAX; n];
            let mut seen = vec![false; n];
            let mut queue = VecDeque::new();
            for j in ones(self.row(s)) {
                seen[j] = true;
                parent[j] = s;
                queue.push_back(j);
            }
            let mut closing = None;
            'bfs: while let Some(u) = queue.pop_front() {
                for v in ones(self.row(u)) {
                    if v == s {
                        closing = Some(u);
                        break 'bfs;
                    }
                    if !seen[v] {
                        seen[v] = true;
                        parent[v] = u;
                        queue.push_back(v);
                    }
                }
            }
            if let Some(mut u) = closing {
                let mut path = vec![u];
                while parent[u] != s {
                    u = parent[u];
                    path.push(u);
                }
                path.push(s);
                path.reverse();
                if best.as_ref().is_none_or(|b| path.len() < b.len()) {
                    best = Some(path);
                }
            }
        }
        best.map(|p| p.into_iter().map(|i| ev[i]).collect())
    }
}

impl fmt::Debug for Rel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set()
            .entries(self.pairs().map(|(a, b)| format!("{a}->{b}")))
            .finish()
    }
}
