//! Weakestmo event structures: construction, consistency and execution
//! extraction.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;
use std::ops::ControlFlow;

use serde_json::{json, Value};
use thiserror::Error;

use crate::graph::{immediate, ExecutionGraph};
use crate::lang::{Instruction, Label, LangError, Loc, Program, Registers, ThreadState, Val};
use crate::models::Verdict;
use crate::rel::{Carrier, EventId, EventSet, Rel};

pub const CF_IMM_READ: &str = "cf-imm-read";
pub const CF_IMM_JUSTIFICATION: &str = "cf-imm-justification";
pub const ECF_IRREFLEXIVE: &str = "ecf-irreflexivity";
pub const JF_NON_CONFLICT: &str = "jf-non-conflict";
pub const JFE_VISIBLE: &str = "jfe-visible";
pub const COHERENCE: &str = crate::models::COHERENCE;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EsError {
    #[error("invalid thread step: {0}")]
    InvalidStep(String),
    #[error("justification {0} conflicts with the new event")]
    ConflictingJustification(EventId),
    #[error("ill-typed construction: {0}")]
    Typing(String),
    #[error("step rejected, {0}")]
    Inconsistent(Verdict),
    #[error("not an extracted set: {0}")]
    NotExtracted(String),
    #[error(transparent)]
    Lang(#[from] LangError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum WritePlacement {
    /// Join the ew class of an existing write.
    JoinEw(EventId),
    /// Start a new class immediately co-after the class of this write.
    CoAfter(EventId),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConstructionChoice {
    pub thread: u32,
    pub label: Label,
    /// `None` starts a new root for the thread.
    pub po_predecessor: Option<EventId>,
    pub justification: Option<EventId>,
    pub placement: Option<WritePlacement>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EsEvent {
    pub label: Label,
    pub po_pred: Option<EventId>,
    pub jf: Option<EventId>,
}

/// An event structure. Non-init events are named `(tid, n)` where `n` counts
/// the thread's events in construction order; init events are `init(loc)`.
/// co is kept as an ordered list of ew classes per location.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EventStructure {
    pub locations: Vec<String>,
    threads: Vec<u32>,
    events: BTreeMap<EventId, EsEvent>,
    order: Vec<EventId>,
    classes: BTreeMap<Loc, Vec<Vec<EventId>>>,
}

#[derive(Clone, Debug)]
pub struct EsDerived {
    pub po: Rel,
    pub po_imm: Rel,
    pub jf: Rel,
    pub ew: Rel,
    pub co: Rel,
    pub cf: Rel,
    pub cf_imm: Rel,
    pub jfe: Rel,
    pub rf: Rel,
    pub fr: Rel,
    pub eco: Rel,
    pub hb: Rel,
    pub ecf: Rel,
    pub vis: EventSet,
}

impl EventStructure {
    /// The structure holding only the initialization writes.
    pub fn new(p: &Program) -> Self {
        let mut events = BTreeMap::new();
        let mut classes = BTreeMap::new();
        let mut order = Vec::new();
        for l in 0..p.locations.len() as Loc {
            let e = EventId::init(l);
            events.insert(
                e,
                EsEvent {
                    label: Label::init(l),
                    po_pred: None,
                    jf: None,
                },
            );
            classes.insert(l, vec![vec![e]]);
            order.push(e);
        }
        EventStructure {
            locations: p.locations.clone(),
            threads: p.thread_ids().collect(),
            events,
            order,
            classes,
        }
    }

    pub fn threads(&self) -> &[u32] {
        &self.threads
    }

    pub fn events(&self) -> EventSet {
        self.events.keys().copied().collect()
    }

    pub fn event(&self, e: EventId) -> Option<&EsEvent> {
        self.events.get(&e)
    }

    pub fn label(&self, e: EventId) -> Option<Label> {
        self.events.get(&e).map(|x| x.label)
    }

    /// Events in construction order, init first.
    pub fn order(&self) -> &[EventId] {
        &self.order
    }

    /// Number of non-init events.
    pub fn size(&self) -> usize {
        self.order.iter().filter(|e| !e.is_init()).count()
    }

    pub fn thread_events(&self, t: u32) -> Vec<EventId> {
        self.order
            .iter()
            .copied()
            .filter(|e| e.tid == t && !e.is_init())
            .collect()
    }

    pub fn jf_source(&self, r: EventId) -> Option<EventId> {
        self.events.get(&r).and_then(|x| x.jf)
    }

    /// The po-chain from the thread's root down to `e`, inclusive.
    pub fn path(&self, e: EventId) -> Vec<EventId> {
        let mut out = vec![e];
        let mut cur = e;
        while let Some(p) = self.events[&cur].po_pred {
            out.push(p);
            cur = p;
        }
        out.reverse();
        out
    }

    pub fn depth(&self, e: EventId) -> u32 {
        self.path(e).len() as u32
    }

    pub fn children(&self, t: u32, pred: Option<EventId>) -> Vec<EventId> {
        self.order
            .iter()
            .copied()
            .filter(|e| e.tid == t && !e.is_init() && self.events[e].po_pred == pred)
            .collect()
    }

    /// Events of thread `t` without po-successors.
    pub fn leaves(&self, t: u32) -> Vec<EventId> {
        let preds: BTreeSet<EventId> = self.events.values().filter_map(|x| x.po_pred).collect();
        self.thread_events(t)
            .into_iter()
            .filter(|e| !preds.contains(e))
            .collect()
    }

    /// Strict po between two events.
    pub fn po_before(&self, a: EventId, b: EventId) -> bool {
        if a.is_init() {
            return !b.is_init();
        }
        if a.tid != b.tid || b.is_init() || a == b {
            return false;
        }
        let mut cur = self.events[&b].po_pred;
        while let Some(c) = cur {
            if c == a {
                return true;
            }
            cur = self.events[&c].po_pred;
        }
        false
    }

    pub fn conflict(&self, a: EventId, b: EventId) -> bool {
        a.tid == b.tid
            && !a.is_init()
            && !b.is_init()
            && a != b
            && !self.po_before(a, b)
            && !self.po_before(b, a)
    }

    /// The ew class containing write `w`.
    pub fn ew_class(&self, w: EventId) -> Option<&[EventId]> {
        let loc = self.label(w)?.loc()?;
        self.classes
            .get(&loc)?
            .iter()
            .find(|c| c.contains(&w))
            .map(Vec::as_slice)
    }

    /// The co-ordered ew classes of location `loc`, init's class first.
    pub fn co_classes(&self, loc: Loc) -> &[Vec<EventId>] {
        self.classes.get(&loc).map(Vec::as_slice).unwrap_or(&[])
    }

    fn class_index(&self, w: EventId) -> Option<(Loc, usize)> {
        let loc = self.label(w)?.loc()?;
        let i = self
            .classes
            .get(&loc)?
            .iter()
            .position(|c| c.contains(&w))?;
        Some((loc, i))
    }

    pub fn derive(&self) -> EsDerived {
        let carrier = Carrier::new(self.events.keys().copied());
        let po = Rel::from_fn(&carrier, |a, b| self.po_before(a, b));
        let po_imm = immediate(&po);
        let jf = Rel::from_pairs(
            &carrier,
            self.events
                .iter()
                .filter_map(|(e, x)| x.jf.map(|w| (w, *e))),
        )
        .expect("jf sources are events");
        let mut ew = Rel::empty(&carrier);
        let mut co = Rel::empty(&carrier);
        for cls in self.classes.values() {
            for (i, c) in cls.iter().enumerate() {
                for &a in c {
                    for &b in c {
                        ew.insert(a, b).expect("class member");
                    }
                    for later in &cls[i + 1..] {
                        for &b in later {
                            co.insert(a, b).expect("class member");
                        }
                    }
                }
            }
        }
        let cf = Rel::from_fn(&carrier, |a, b| self.conflict(a, b));
        let cf_imm = cf.inter(&po_imm.inverse().seq(&po_imm));
        let jfe = jf.minus(&po);
        let rf = ew.seq(&jf).minus(&cf);
        let fr = rf.inverse().seq(&co);
        let eco = co.union(&rf).union(&fr).plus();
        let hb = po.clone();
        let ecf = hb.inverse().opt().seq(&cf).seq(&hb.opt());
        let reach = jfe.seq(&po.union(&jf).star());
        let bad = cf
            .inter(&reach)
            .minus(&ew.seq(&po.union(&po.inverse()).opt()));
        let vis = carrier
            .events()
            .iter()
            .copied()
            .filter(|&e| bad.predecessors(e).next().is_none())
            .collect();
        EsDerived {
            po,
            po_imm,
            jf,
            ew,
            co,
            cf,
            cf_imm,
            jfe,
            rf,
            fr,
            eco,
            hb,
            ecf,
            vis,
        }
    }

    /// Replays the thread semantics along `path`, returning the state after it.
    fn replay<'p>(
        &self,
        p: &'p Program,
        t: u32,
        path: &[EventId],
    ) -> Result<ThreadState<'p>, EsError> {
        let mut st = ThreadState::new(p, t)?;
        for &e in path {
            let l = self.events[&e].label;
            let step = st.step(l.val().unwrap_or(0)).ok_or_else(|| {
                EsError::InvalidStep(format!("{e} lies past the end of thread {t}"))
            })?;
            if step.label != l {
                return Err(EsError::InvalidStep(format!(
                    "{e} does not follow the thread's code"
                )));
            }
        }
        Ok(st)
    }

    /// Adds one event. The result is returned only if it is consistent.
    pub fn add_event(
        &self,
        c: &ConstructionChoice,
        p: &Program,
    ) -> Result<(EventStructure, EventId), EsError> {
        let t = c.thread;
        if !self.threads.contains(&t) {
            return Err(EsError::InvalidStep(format!("no thread {t}")));
        }
        let path = match c.po_predecessor {
            None => Vec::new(),
            Some(pr) => {
                if pr.tid != t || !self.events.contains_key(&pr) {
                    return Err(EsError::InvalidStep(format!(
                        "{pr} is not an event of thread {t}"
                    )));
                }
                self.path(pr)
            }
        };
        let mut st = self.replay(p, t, &path)?;
        let step = st.step(c.label.val().unwrap_or(0)).ok_or_else(|| {
            EsError::InvalidStep(format!("thread {t} has no further instruction"))
        })?;
        if step.label != c.label {
            return Err(EsError::InvalidStep(format!(
                "thread {t} cannot perform {}",
                c.label.render(&self.locations)
            )));
        }
        let id = EventId::new(t, self.thread_events(t).len() as u32 + 1);
        let on_path = |e: EventId| path.contains(&e);
        let conflicts_new = |e: EventId| e.tid == t && !e.is_init() && !on_path(e);

        let mut next = self.clone();
        match c.label {
            Label::Read { loc, val, .. } => {
                let j = c
                    .justification
                    .ok_or_else(|| EsError::Typing("read without justification".into()))?;
                let jl = self
                    .label(j)
                    .ok_or_else(|| EsError::Typing(format!("unknown justification {j}")))?;
                if !jl.is_write() || jl.loc() != Some(loc) || jl.val() != Some(val) {
                    return Err(EsError::Typing(format!("{j} cannot justify this read")));
                }
                if conflicts_new(j) {
                    return Err(EsError::ConflictingJustification(j));
                }
                if c.placement.is_some() {
                    return Err(EsError::Typing("placement given for a read".into()));
                }
            }
            Label::Write { loc, .. } => {
                if c.justification.is_some() {
                    return Err(EsError::Typing("justification given for a write".into()));
                }
                let placement = c
                    .placement
                    .ok_or_else(|| EsError::Typing("write without co placement".into()))?;
                let anchor = match placement {
                    WritePlacement::JoinEw(w) | WritePlacement::CoAfter(w) => w,
                };
                let (aloc, idx) = self
                    .class_index(anchor)
                    .ok_or_else(|| EsError::Typing(format!("{anchor} is not a write")))?;
                if aloc != loc {
                    return Err(EsError::Typing(format!("{anchor} writes another location")));
                }
                let cls = next.classes.get_mut(&loc).expect("location has classes");
                match placement {
                    WritePlacement::JoinEw(w) => {
                        if w.is_init() || self.label(w) != Some(c.label) {
                            return Err(EsError::Typing(format!("{w} is not an equal write")));
                        }
                        if let Some(m) = cls[idx].iter().find(|&&m| !conflicts_new(m)) {
                            return Err(EsError::Typing(format!(
                                "{m} does not conflict with the new write"
                            )));
                        }
                        cls[idx].push(id);
                    }
                    WritePlacement::CoAfter(_) => cls.insert(idx + 1, vec![id]),
                }
            }
            Label::Fence { .. } => {
                if c.justification.is_some() || c.placement.is_some() {
                    return Err(EsError::Typing(
                        "fences take no justification or placement".into(),
                    ));
                }
            }
        }
        next.events.insert(
            id,
            EsEvent {
                label: c.label,
                po_pred: c.po_predecessor,
                jf: c.justification,
            },
        );
        next.order.push(id);
        let d = next.derive();
        assert!(d.po.union(&d.jf).is_acyclic(), "po ∪ jf must stay acyclic");
        let v = check_derived(&next, &d);
        if !v.consistent {
            return Err(EsError::Inconsistent(v));
        }
        Ok((next, id))
    }

    /// Every construction step available from this structure (not yet
    /// checked for consistency). With `max_forks`, steps that would give a
    /// thread more than `max_forks + 1` leaves are skipped.
    pub fn choices(&self, p: &Program, max_forks: Option<usize>) -> Vec<ConstructionChoice> {
        let mut out = Vec::new();
        for &t in &self.threads {
            let leaves = self.leaves(t).len();
            let mut preds: Vec<Option<EventId>> = vec![None];
            preds.extend(self.thread_events(t).into_iter().map(Some));
            for pred in preds {
                let forks = !self.children(t, pred).is_empty();
                let is_leaf = pred.is_some_and(|e| self.children(t, Some(e)).is_empty());
                let new_leaves =
                    if forks || (pred.is_none() && leaves > 0) || (!is_leaf && pred.is_some()) {
                        leaves + 1
                    } else {
                        leaves.max(1)
                    };
                if max_forks.is_some_and(|m| new_leaves > m + 1) {
                    continue;
                }
                let path = pred.map(|e| self.path(e)).unwrap_or_default();
                let Ok(st) = self.replay(p, t, &path) else {
                    continue;
                };
                let Some(ins) = st.next_instruction() else {
                    continue;
                };
                let conflicts_new = |e: EventId| e.tid == t && !e.is_init() && !path.contains(&e);
                match ins {
                    Instruction::Load { mode, loc, .. } => {
                        for (&w, x) in &self.events {
                            if x.label.is_write()
                                && x.label.loc() == Some(*loc)
                                && !conflicts_new(w)
                            {
                                out.push(ConstructionChoice {
                                    thread: t,
                                    label: Label::Read {
                                        mode: *mode,
                                        loc: *loc,
                                        val: x.label.val().unwrap_or(0),
                                    },
                                    po_predecessor: pred,
                                    justification: Some(w),
                                    placement: None,
                                });
                            }
                        }
                    }
                    Instruction::Store { .. } | Instruction::Fence { .. } => {
                        let mut st = st.clone();
                        let label = st.step(0).expect("instruction available").label;
                        let Some(loc) = label.loc() else {
                            out.push(ConstructionChoice {
                                thread: t,
                                label,
                                po_predecessor: pred,
                                justification: None,
                                placement: None,
                            });
                            continue;
                        };
                        for cls in self.co_classes(loc) {
                            let rep = cls[0];
                            let mut placements = vec![WritePlacement::CoAfter(rep)];
                            if !rep.is_init()
                                && self.label(rep) == Some(label)
                                && cls.iter().all(|&m| conflicts_new(m))
                            {
                                placements.push(WritePlacement::JoinEw(rep));
                            }
                            for pl in placements {
                                out.push(ConstructionChoice {
                                    thread: t,
                                    label,
                                    po_predecessor: pred,
                                    justification: None,
                                    placement: Some(pl),
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Whether `x` satisfies the extraction conditions and is a maximal
    /// conflict-free set.
    pub fn is_extracted(&self, x: &EventSet) -> bool {
        self.extraction_failure(&self.derive(), x).is_none()
    }

    fn extraction_failure(&self, d: &EsDerived, x: &EventSet) -> Option<String> {
        if let Some(e) = x.iter().find(|e| !self.events.contains_key(e)) {
            return Some(format!("{e} is not an event"));
        }
        for &a in x {
            if let Some(b) = d.cf.successors(a).find(|b| x.contains(b)) {
                return Some(format!("{a} conflicts with {b}"));
            }
            if self.events[&a].label.is_read() && !d.rf.predecessors(a).any(|w| x.contains(&w)) {
                return Some(format!("{a} reads from outside the set"));
            }
            if !d.vis.contains(&a) {
                return Some(format!("{a} is not visible"));
            }
            if let Some(b) = d.hb.predecessors(a).find(|b| !x.contains(b)) {
                return Some(format!("{b} happens before {a} but is missing"));
            }
        }
        self.events
            .keys()
            .find(|e| !x.contains(e) && x.iter().all(|&a| !d.cf.contains(a, **e)))
            .map(|e| format!("{e} could be added"))
    }

    /// All extracted sets. A maximal conflict-free downward-closed set picks
    /// one full branch per non-empty thread, so only those are tried.
    pub fn extract_candidates(&self) -> Vec<EventSet> {
        let d = self.derive();
        let mut acc: Vec<EventSet> = vec![self
            .events
            .keys()
            .copied()
            .filter(|e| e.is_init())
            .collect()];
        for &t in &self.threads {
            let leaves = self.leaves(t);
            if leaves.is_empty() {
                continue;
            }
            let mut next = Vec::new();
            for base in &acc {
                for &l in &leaves {
                    let mut s = base.clone();
                    s.extend(self.path(l));
                    next.push(s);
                }
            }
            acc = next;
        }
        acc.retain(|x| self.extraction_failure(&d, x).is_none());
        acc.sort();
        acc
    }

    /// The execution graph induced by an extracted set, events renamed to
    /// `(tid, depth)`.
    pub fn associated_graph(&self, x: &EventSet, p: &Program) -> Result<ExecutionGraph, EsError> {
        let d = self.derive();
        if let Some(why) = self.extraction_failure(&d, x) {
            return Err(EsError::NotExtracted(why));
        }
        let rename = |e: EventId| {
            if e.is_init() {
                e
            } else {
                EventId::new(e.tid, self.depth(e))
            }
        };
        let labels: BTreeMap<EventId, Label> = x
            .iter()
            .map(|&e| (rename(e), self.events[&e].label))
            .collect();
        let restrict = |r: &Rel| -> Vec<(EventId, EventId)> {
            r.restrict(x, x)
                .pairs()
                .map(|(a, b)| (rename(a), rename(b)))
                .collect()
        };
        let mut data = Vec::new();
        for &t in &self.threads {
            let mut chain: Vec<EventId> = x
                .iter()
                .copied()
                .filter(|e| e.tid == t && !e.is_init())
                .collect();
            chain.sort_by_key(|&e| self.depth(e));
            let mut st = ThreadState::new(p, t)?;
            for e in chain {
                let l = self.events[&e].label;
                let serial = st.serial();
                let step = st.step(l.val().unwrap_or(0)).ok_or_else(|| {
                    EsError::InvalidStep(format!("{e} lies past the end of thread {t}"))
                })?;
                data.extend(
                    step.deps
                        .iter()
                        .map(|&s| (EventId::new(t, s), EventId::new(t, serial))),
                );
            }
        }
        ExecutionGraph::new(
            self.locations.clone(),
            labels,
            restrict(&d.rf),
            restrict(&d.co),
            data,
        )
        .map_err(|e| EsError::NotExtracted(e.to_string()))
    }

    /// Whether `x` runs every thread of `p` to completion.
    pub fn is_complete(&self, x: &EventSet, p: &Program) -> bool {
        self.threads.iter().all(|&t| {
            let n = x.iter().filter(|e| e.tid == t && !e.is_init()).count();
            p.code(t).map(|c| c.len() == n).unwrap_or(false)
        })
    }

    /// Name invariant under construction order: thread plus the labels and
    /// justification sources along the po path.
    fn canonical_names(&self) -> BTreeMap<EventId, String> {
        let mut names: BTreeMap<EventId, String> = BTreeMap::new();
        fn name(s: &EventStructure, e: EventId, memo: &mut BTreeMap<EventId, String>) -> String {
            if let Some(n) = memo.get(&e) {
                return n.clone();
            }
            let n = if e.is_init() {
                format!("i{}", e.serial)
            } else {
                let mut n = format!("t{}", e.tid);
                for x in s.path(e) {
                    let ev = &s.events[&x];
                    let _ = write!(n, "/{:?}", ev.label);
                    if let Some(j) = ev.jf {
                        let _ = write!(n, "<{}>", name(s, j, memo));
                    }
                }
                n
            };
            memo.insert(e, n.clone());
            n
        }
        for &e in &self.order {
            name(self, e, &mut names);
        }
        names
    }

    /// A key equal for structures that differ only in construction order.
    pub fn canonical_key(&self) -> String {
        let names = self.canonical_names();
        let mut ev: Vec<&String> = names.values().collect();
        ev.sort();
        let mut co = Vec::new();
        for cls in self.classes.values() {
            let mut cs: Vec<Vec<&String>> = cls
                .iter()
                .map(|c| {
                    let mut v: Vec<&String> = c.iter().map(|e| &names[e]).collect();
                    v.sort();
                    v
                })
                .collect();
            co.push(std::mem::take(&mut cs));
        }
        format!("{ev:?}|{co:?}")
    }

    pub fn to_json(&self) -> Value {
        let d = self.derive();
        let id = |e: EventId| json!([e.tid, e.serial]);
        let edges = |r: &Rel, sym: bool| -> Value {
            r.pairs()
                .filter(|(a, b)| !sym || a < b)
                .map(|(a, b)| json!([id(a), id(b)]))
                .collect()
        };
        let events: Vec<Value> = self
            .order
            .iter()
            .map(|&e| {
                let l = self.events[&e].label;
                json!({
                    "id": id(e),
                    "tid": e.tid,
                    "label": l.render(&self.locations),
                })
            })
            .collect();
        json!({
            "events": events,
            "po": edges(&d.po_imm, false),
            "jf": edges(&d.jf, false),
            "ew": edges(&d.ew.minus(&Rel::identity(d.ew.carrier())), true),
            "co": edges(&immediate(&d.co), false),
            "cf": edges(&d.cf_imm, true),
        })
    }

    pub fn to_dot(&self) -> String {
        let d = self.derive();
        let node = |e: EventId| {
            if e.is_init() {
                "init".to_string()
            } else {
                format!("e{}_{}", e.tid, e.serial)
            }
        };
        let mut s = String::from(
            "digraph S {\n  node [shape=box, fontname=\"monospace\"];\n  init [label=\"Init\"];\n",
        );
        for &e in &self.order {
            if !e.is_init() {
                let _ = writeln!(
                    s,
                    "  {} [label=\"{}: {}\"];",
                    node(e),
                    e,
                    self.events[&e].label.render(&self.locations)
                );
            }
        }
        let mut lines = BTreeSet::new();
        for (a, b) in d.po_imm.pairs() {
            if !(a.is_init() && b.is_init()) {
                lines.insert(format!("  {} -> {} [color=black];", node(a), node(b)));
            }
        }
        for (a, b) in d.jf.pairs() {
            lines.insert(format!(
                "  {} -> {} [color=darkgreen, label=jf, fontcolor=darkgreen];",
                node(a),
                node(b)
            ));
        }
        for (a, b) in d.ew.pairs().filter(|(a, b)| a < b) {
            lines.insert(format!(
                "  {} -> {} [color=\"black:black\", dir=none, label=ew];",
                node(a),
                node(b)
            ));
        }
        for (a, b) in immediate(&d.co).pairs() {
            lines.insert(format!(
                "  {} -> {} [color=blue, label=co, fontcolor=blue];",
                node(a),
                node(b)
            ));
        }
        for (a, b) in d.cf_imm.pairs().filter(|(a, b)| a < b) {
            lines.insert(format!(
                "  {} -> {} [color=red, style=dashed, dir=none, label=cf];",
                node(a),
                node(b)
            ));
        }
        for l in lines {
            s.push_str(&l);
            s.push('\n');
        }
        s.push_str("}\n");
        s
    }
}

fn check_derived(s: &EventStructure, d: &EsDerived) -> Verdict {
    let mut v = Verdict::default();
    if let Some(e) = d
        .cf_imm
        .dom()
        .into_iter()
        .find(|e| !s.events[e].label.is_read())
    {
        v.fail(CF_IMM_READ, Some(vec![e]));
    }
    let icf = d.jf.seq(&d.cf_imm).seq(&d.jf.inverse()).seq(&d.ew);
    if let Some(&w) = icf.carrier().events().iter().find(|&&w| icf.contains(w, w)) {
        v.fail(CF_IMM_JUSTIFICATION, Some(vec![w]));
    }
    if let Some(&e) = d
        .ecf
        .carrier()
        .events()
        .iter()
        .find(|&&e| d.ecf.contains(e, e))
    {
        v.fail(ECF_IRREFLEXIVE, Some(vec![e]));
    }
    if let Some((w, r)) = d.jf.inter(&d.ecf).pairs().next() {
        v.fail(JF_NON_CONFLICT, Some(vec![w, r]));
    }
    if let Some(w) = d.jfe.dom().into_iter().find(|w| !d.vis.contains(w)) {
        v.fail(JFE_VISIBLE, Some(vec![w]));
    }
    let coh = d.hb.seq(&d.eco.opt());
    if let Some(&e) = coh.carrier().events().iter().find(|&&e| coh.contains(e, e)) {
        v.fail(COHERENCE, Some(vec![e]));
    }
    v
}

pub fn check_es_consistent(s: &EventStructure) -> Verdict {
    check_derived(s, &s.derive())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EnumBounds {
    /// Maximum number of non-init events.
    pub max_events: usize,
    /// Maximum number of extra branches per thread.
    pub max_forks: Option<usize>,
}

/// Breadth-first search over consistent structures, deduplicated up to
/// construction order. `visit` sees each structure once and may stop the
/// search.
pub fn explore_structures(
    p: &Program,
    bounds: EnumBounds,
    mut visit: impl FnMut(&EventStructure) -> ControlFlow<()>,
) -> ControlFlow<()> {
    let root = EventStructure::new(p);
    let mut seen: HashSet<String> = HashSet::new();
    seen.insert(root.canonical_key());
    visit(&root)?;
    let mut frontier = vec![root];
    while !frontier.is_empty() {
        let mut next = Vec::new();
        for s in &frontier {
            if s.size() >= bounds.max_events {
                continue;
            }
            for c in s.choices(p, bounds.max_forks) {
                let Ok((n, _)) = s.add_event(&c, p) else {
                    continue;
                };
                if seen.insert(n.canonical_key()) {
                    visit(&n)?;
                    next.push(n);
                }
            }
        }
        frontier = next;
    }
    ControlFlow::Continue(())
}

/// All consistent structures with at most `max_events` non-init events.
pub fn enumerate_structures(p: &Program, max_events: usize) -> Vec<EventStructure> {
    let mut out = Vec::new();
    let _ = explore_structures(
        p,
        EnumBounds {
            max_events,
            max_forks: None,
        },
        |s| {
            out.push(s.clone());
            ControlFlow::Continue(())
        },
    );
    out
}

/// Default search bounds for deciding a program's Weakestmo outcomes. This
/// bounds the part of the semantics explored, not the model.
pub fn default_bounds(_p: &Program) -> EnumBounds {
    EnumBounds {
        max_events: 12,
        max_forks: Some(2),
    }
}

/// Registers of complete executions extracted from consistent structures
/// within `bounds` whose graph is coherent (with release/acquire
/// synchronization) and has an acyclic psc. Stops early once `stop` returns
/// true for an outcome. Also returns the number of structures visited.
pub fn weakestmo_outcomes(
    p: &Program,
    bounds: EnumBounds,
    mut stop: impl FnMut(&Registers) -> bool,
) -> Result<(BTreeSet<Registers>, usize), EsError> {
    let mut out = BTreeSet::new();
    let mut err = None;
    let mut explored = 0;
    let _ = explore_structures(p, bounds, |s| {
        explored += 1;
        for x in s.extract_candidates() {
            if !s.is_complete(&x, p) {
                continue;
            }
            let regs = s.associated_graph(&x, p).and_then(|g| {
                let d = g.derive_unchecked();
                let coherent = d.hb.seq(&d.eco.opt()).is_irreflexive();
                if !coherent || !d.psc_base.union(&d.psc_f).is_acyclic() {
                    return Ok(None);
                }
                p.registers(&g).map(Some).map_err(EsError::from)
            });
            match regs {
                Ok(Some(r)) => {
                    let done = stop(&r);
                    out.insert(r);
                    if done {
                        return ControlFlow::Break(());
                    }
                }
                Ok(None) => {}
                Err(e) => {
                    err = Some(e);
                    return ControlFlow::Break(());
                }
            }
        }
        ControlFlow::Continue(())
    });
    match err {
        Some(e) => Err(e),
        None => Ok((out, explored)),
    }
}

/// Read values of thread `t` along the branch ending at `leaf`.
pub fn branch_reads(s: &EventStructure, leaf: EventId) -> Vec<Val> {
    s.path(leaf)
        .into_iter()
        .filter_map(|e| {
            let l = s.label(e)?;
            l.is_read().then(|| l.val().unwrap_or(0))
        })
        .collect()
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::fixtures::{LB, LB_DATA, LB_FAKE};
    use crate::graph::tests::{e, g_lb};
    use crate::lang::{parse_litmus, Mode};
    use proptest::prelude::*;

    fn rd(loc: Loc, val: Val) -> Label {
        Label::Read {
            mode: Mode::Rlx,
            loc,
            val,
        }
    }

    fn wr(loc: Loc, val: Val) -> Label {
        Label::Write {
            mode: Mode::Rlx,
            loc,
            val,
        }
    }

    pub fn read(t: u32, pred: Option<EventId>, label: Label, j: EventId) -> ConstructionChoice {
        ConstructionChoice {
            thread: t,
            label,
            po_predecessor: pred,
            justification: Some(j),
            placement: None,
        }
    }

    pub fn write(
        t: u32,
        pred: Option<EventId>,
        label: Label,
        pl: WritePlacement,
    ) -> ConstructionChoice {
        ConstructionChoice {
            thread: t,
            label,
            po_predecessor: pred,
            justification: None,
            placement: Some(pl),
        }
    }

    /// ES_a .. ES_f of the LB walkthrough; index 0 is the initial structure.
    /// e11¹ = (1,1), e12¹ = (1,2), e21 = (2,1), e22 = (2,2), e11² = (1,3),
    /// e12² = (1,4).
    pub fn lb_run() -> Vec<EventStructure> {
        let p = parse_litmus(LB).unwrap();
        let (x, y) = (EventId::init(0), EventId::init(1));
        let steps = [
            read(1, None, rd(0, 0), x),
            write(1, Some(e(1, 1)), wr(1, 1), WritePlacement::CoAfter(y)),
            read(2, None, rd(1, 1), e(1, 2)),
            write(2, Some(e(2, 1)), wr(0, 1), WritePlacement::CoAfter(x)),
            read(1, None, rd(0, 1), e(2, 2)),
            write(1, Some(e(1, 3)), wr(1, 1), WritePlacement::JoinEw(e(1, 2))),
        ];
        let mut out = vec![EventStructure::new(&p)];
        for c in steps {
            let (n, _) = out.last().unwrap().add_event(&c, &p).unwrap();
            out.push(n);
        }
        out
    }

    fn set(es: &[EventId]) -> EventSet {
        let mut s: EventSet = es.iter().copied().collect();
        s.insert(EventId::init(0));
        s.insert(EventId::init(1));
        s
    }

    #[test]
    fn walkthrough_structures_are_consistent() {
        for s in lb_run() {
            assert!(check_es_consistent(&s).consistent);
        }
    }

    #[test]
    fn es_e_conflict_and_f_rf() {
        let run = lb_run();
        let d = run[5].derive();
        let pairs: Vec<_> = d.cf_imm.pairs().collect();
        assert_eq!(pairs, vec![(e(1, 1), e(1, 3)), (e(1, 3), e(1, 1))]);
        let f = run[6].derive();
        assert!(f.rf.contains(e(1, 2), e(2, 1)));
        assert!(f.rf.contains(e(1, 4), e(2, 1)));
        assert!(f.ew.contains(e(1, 2), e(1, 4)));
    }

    #[test]
    fn conflict_free_structure_basics() {
        let s = &lb_run()[4];
        let d = s.derive();
        assert!(d.cf.is_empty());
        assert_eq!(d.rf, d.jf);
        assert_eq!(d.vis, s.events());
        assert_eq!(s.extract_candidates(), vec![s.events()]);
        let g = s
            .associated_graph(&s.events(), &parse_litmus(LB).unwrap())
            .unwrap();
        assert_eq!(g.rf.len(), 2);
    }

    #[test]
    fn extraction_of_es_f() {
        let run = lb_run();
        let f = &run[6];
        assert_eq!(
            f.extract_candidates(),
            vec![
                set(&[e(1, 1), e(1, 2), e(2, 1), e(2, 2)]),
                set(&[e(1, 3), e(1, 4), e(2, 1), e(2, 2)]),
            ]
        );
        assert_eq!(run[5].extract_candidates().len(), 1);
    }

    #[test]
    fn associated_graphs_of_es_f() {
        let p = parse_litmus(LB).unwrap();
        let f = &lb_run()[6];
        let xs = f.extract_candidates();
        let g1 = f.associated_graph(&xs[0], &p).unwrap();
        let regs = p.registers(&g1).unwrap();
        assert_eq!(regs[&(1, "a".into())], 0);
        assert_eq!(regs[&(2, "b".into())], 1);
        let g2 = f.associated_graph(&xs[1], &p).unwrap();
        assert_eq!(g2, g_lb());
        assert!(f.associated_graph(&set(&[e(1, 1)]), &p).is_err());
    }

    #[test]
    fn es_f_without_ew_hides_the_branch() {
        let p = parse_litmus(LB).unwrap();
        let e_s = &lb_run()[5];
        let c = write(1, Some(e(1, 3)), wr(1, 1), WritePlacement::CoAfter(e(1, 2)));
        let (s, _) = e_s.add_event(&c, &p).unwrap();
        let d = s.derive();
        assert!(!d.vis.contains(&e(1, 3)));
        assert!(!d.vis.contains(&e(1, 4)));
        assert!(!d.rf.contains(e(1, 4), e(2, 1)));
        assert_eq!(s.extract_candidates().len(), 1);
        // Neither conflicting write justifies anything externally, so the
        // structure itself stays consistent.
        assert!(check_es_consistent(&s).consistent);
    }

    #[test]
    fn rejected_steps() {
        let p = parse_litmus(LB).unwrap();
        let run = lb_run();
        let x = EventId::init(0);
        // Two conflicting reads both justified by init_x.
        let twin = read(1, None, rd(0, 0), x);
        match run[1].add_event(&twin, &p) {
            Err(EsError::Inconsistent(v)) => {
                assert!(v.violated.contains(&CF_IMM_JUSTIFICATION.to_string()))
            }
            other => panic!("{other:?}"),
        }
        // Write values must follow the code.
        let bad = write(
            1,
            Some(e(1, 1)),
            wr(1, 7),
            WritePlacement::CoAfter(EventId::init(1)),
        );
        assert!(matches!(
            run[1].add_event(&bad, &p),
            Err(EsError::InvalidStep(_))
        ));
        // A load where the code has a store.
        let misplaced = read(1, Some(e(1, 3)), rd(0, 0), x);
        assert!(matches!(
            run[6].add_event(&misplaced, &p),
            Err(EsError::InvalidStep(_))
        ));
        let cj = ConstructionChoice {
            thread: 1,
            label: rd(0, 1),
            po_predecessor: None,
            justification: Some(e(1, 2)),
            placement: None,
        };
        assert!(matches!(run[2].add_event(&cj, &p), Err(EsError::Typing(_))));
        // Joining a class whose member is po-before the new write.
        let p2 = parse_litmus("locations x;\nstore(rlx, x, 1)\nstore(rlx, x, 1)\n").unwrap();
        let s0 = EventStructure::new(&p2);
        let (s1, _) = s0
            .add_event(&write(1, None, wr(0, 1), WritePlacement::CoAfter(x)), &p2)
            .unwrap();
        let join = write(1, Some(e(1, 1)), wr(0, 1), WritePlacement::JoinEw(e(1, 1)));
        assert!(matches!(s1.add_event(&join, &p2), Err(EsError::Typing(_))));
    }

    #[test]
    fn conflicting_justification_is_rejected() {
        // Thread 1 reads x twice in two branches; the second may not read from
        // a write in a sibling branch of its own thread.
        let p = parse_litmus("locations x;\na = load(rlx, x)\nstore(rlx, x, 2)\n").unwrap();
        let x = EventId::init(0);
        let s0 = EventStructure::new(&p);
        let (s1, _) = s0.add_event(&read(1, None, rd(0, 0), x), &p).unwrap();
        let (s2, _) = s1
            .add_event(
                &write(1, Some(e(1, 1)), wr(0, 2), WritePlacement::CoAfter(x)),
                &p,
            )
            .unwrap();
        let c = read(1, None, rd(0, 2), e(1, 2));
        assert_eq!(
            s2.add_event(&c, &p),
            Err(EsError::ConflictingJustification(e(1, 2)))
        );
    }

    fn brute_force(s: &EventStructure) -> Vec<EventSet> {
        let evs: Vec<EventId> = s.events().into_iter().collect();
        let mut out = Vec::new();
        for mask in 0u32..(1 << evs.len()) {
            let x: EventSet = evs
                .iter()
                .enumerate()
                .filter(|(i, _)| mask >> i & 1 == 1)
                .map(|(_, e)| *e)
                .collect();
            if s.is_extracted(&x) {
                out.push(x);
            }
        }
        out.sort();
        out
    }

    #[test]
    fn extraction_matches_brute_force() {
        for s in lb_run() {
            assert_eq!(s.extract_candidates(), brute_force(&s));
        }
        let p = parse_litmus(LB_FAKE).unwrap();
        for s in enumerate_structures(&p, 5)
            .iter()
            .filter(|s| s.events().len() <= 10)
        {
            assert_eq!(s.extract_candidates(), brute_force(s));
        }
    }

    #[test]
    fn enumeration_bounds() {
        let p = parse_litmus(LB).unwrap();
        assert_eq!(enumerate_structures(&p, 0).len(), 1);
        let all = enumerate_structures(&p, 6);
        let f = lb_run().pop().unwrap();
        let key = f.canonical_key();
        assert!(all.iter().any(|s| s.canonical_key() == key));
        let keys: HashSet<String> = all.iter().map(|s| s.canonical_key()).collect();
        assert_eq!(keys.len(), all.len());
    }

    #[test]
    fn lb_data_has_no_thin_air_extraction() {
        let p = parse_litmus(LB_DATA).unwrap();
        for s in enumerate_structures(&p, 6) {
            for x in s
                .extract_candidates()
                .into_iter()
                .filter(|x| s.is_complete(x, &p))
            {
                let g = s.associated_graph(&x, &p).unwrap();
                let r = p.registers(&g).unwrap();
                let a = r.get(&(1, "a".into())).copied();
                let b = r.get(&(2, "b".into())).copied();
                assert!(!(a == Some(1) && b == Some(1)));
            }
        }
    }

    fn ab(r: &Registers) -> (Val, Val) {
        (r[&(1, "a".to_string())], r[&(2, "b".to_string())])
    }

    #[test]
    fn weakestmo_lb_triptych() {
        let lb = parse_litmus(LB).unwrap();
        let (out, _) = weakestmo_outcomes(&lb, default_bounds(&lb), |_| false).unwrap();
        let got: BTreeSet<(Val, Val)> = out.iter().map(ab).collect();
        // Thread 2 copies b into x, so a = 1 forces b = 1.
        assert_eq!(got, [(0, 0), (0, 1), (1, 1)].into_iter().collect());
        let fake = parse_litmus(LB_FAKE).unwrap();
        let (out, _) = weakestmo_outcomes(&fake, default_bounds(&fake), |_| false).unwrap();
        assert!(out.iter().any(|r| ab(r) == (1, 1)));
        let data = parse_litmus(LB_DATA).unwrap();
        let (out, _) = weakestmo_outcomes(&data, default_bounds(&data), |_| false).unwrap();
        let got: BTreeSet<(Val, Val)> = out.iter().map(ab).collect();
        assert_eq!(got, [(0, 0)].into_iter().collect());
    }

    #[test]
    fn canonical_key_ignores_construction_order() {
        let p = parse_litmus(LB).unwrap();
        let (x, y) = (EventId::init(0), EventId::init(1));
        let a = EventStructure::new(&p)
            .add_event(&read(1, None, rd(0, 0), x), &p)
            .unwrap()
            .0
            .add_event(&read(2, None, rd(1, 0), y), &p)
            .unwrap()
            .0;
        let b = EventStructure::new(&p)
            .add_event(&read(2, None, rd(1, 0), y), &p)
            .unwrap()
            .0
            .add_event(&read(1, None, rd(0, 0), x), &p)
            .unwrap()
            .0;
        assert_eq!(a.canonical_key(), b.canonical_key());
    }

    #[test]
    fn json_and_dot_groups() {
        let f = lb_run().pop().unwrap();
        let j = f.to_json();
        for k in ["events", "po", "jf", "ew", "co", "cf"] {
            assert!(j.get(k).is_some(), "{k}");
        }
        assert_eq!(j["ew"].as_array().unwrap().len(), 1);
        assert_eq!(j["cf"].as_array().unwrap().len(), 1);
        let dot = f.to_dot();
        assert!(dot.contains("style=dashed"));
        assert!(dot.contains("black:black"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        /// Random construction walks keep the structural invariants.
        #[test]
        fn random_walk_invariants(picks in proptest::collection::vec(any::<prop::sample::Index>(), 1..7)) {
            let p = parse_litmus(LB_FAKE).unwrap();
            let mut s = EventStructure::new(&p);
            for ix in picks {
                let cs = s.choices(&p, Some(2));
                if cs.is_empty() { break; }
                if let Ok((n, _)) = s.add_event(ix.get(&cs), &p) { s = n; }
            }
            let d = s.derive();
            prop_assert!(check_es_consistent(&s).consistent);
            prop_assert_eq!(d.cf.inverse(), d.cf.clone());
            prop_assert!(d.cf.is_irreflexive());
            prop_assert!(d.cf.seq(&d.po).subset_of(&d.cf));
            prop_assert!(d.po.union(&d.jf).is_acyclic());
            let closed = d.rf.union(&d.co.seq(&d.rf.opt())).union(&d.fr.seq(&d.rf.opt()));
            prop_assert_eq!(closed, d.eco.clone());
            for x in s.extract_candidates() {
                let rfx = d.rf.restrict(&x, &x);
                for r in rfx.codom() {
                    prop_assert_eq!(rfx.predecessors(r).count(), 1);
                }
                let g = s.associated_graph(&x, &p).unwrap();
                prop_assert!(g.is_well_formed());
                prop_assert_eq!(g.rf.codom(), g.reads());
            }
        }
    }
}
