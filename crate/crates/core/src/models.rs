//! Consistency predicates (IMM, IMM_SC, RC11, x86-TSO, ARMv8), the hardware
//! graph mappings and the SC-splitting transformation.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::graph::{po_from_ids, ExecutionGraph};
use crate::lang::{Kind, Label, Loc, Mode, Val};
use crate::rel::{Carrier, EventId, EventSet, Rel};

pub const COMPLETENESS: &str = "completeness";
pub const COHERENCE: &str = "coherence";
pub const NO_THIN_AIR: &str = "no-thin-air";
pub const PSC: &str = "psc";
pub const SC_PER_LOC: &str = "sc-per-loc";
pub const TSO_NO_THIN_AIR: &str = "tso-no-thin-air";
pub const EXTERNAL: &str = "external";
pub const PO_RF_ACYCLIC: &str = "po-rf-acyclic";

/// A path witnessing the first violated axiom. For acyclicity axioms the
/// events form a cycle of the named relation (the last event steps back to
/// the first). For the coherence axiom it is `[a]` with `(a, a) ∈ hb`, or
/// `[a, b]` with `(a, b) ∈ hb` and `(b, a) ∈ eco`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Witness {
    pub axiom: String,
    pub events: Vec<EventId>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Verdict {
    pub consistent: bool,
    pub violated: Vec<String>,
    pub witness: Option<Witness>,
}

impl Default for Verdict {
    fn default() -> Self {
        Verdict {
            consistent: true,
            violated: Vec::new(),
            witness: None,
        }
    }
}

impl Verdict {
    pub fn fail(&mut self, axiom: &str, path: Option<Vec<EventId>>) {
        self.consistent = false;
        if !self.violated.iter().any(|a| a == axiom) {
            self.violated.push(axiom.to_string());
        }
        if self.witness.is_none() {
            self.witness = path.map(|events| Witness {
                axiom: axiom.to_string(),
                events,
            });
        }
    }

    /// Records a failure of `axiom` unless `r` is acyclic.
    pub fn require_acyclic(&mut self, axiom: &str, r: &Rel) {
        if let Some(c) = r.find_cycle() {
            self.fail(axiom, Some(c));
        }
    }

    pub fn merge(&mut self, other: Verdict) {
        for a in &other.violated {
            self.fail(a, None);
        }
        if self.witness.is_none() {
            self.witness = other.witness;
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.consistent {
            f.write_str("consistent")
        } else {
            write!(f, "inconsistent ({})", self.violated.join(", "))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("unsupported feature: {0}")]
    Unsupported(String),
}

/// Relates events of different threads (init counts as its own thread).
pub fn external(r: &Rel) -> Rel {
    r.filter(|a, b| a.tid != b.tid)
}

/// Relates events of the same non-init thread.
pub fn internal(r: &Rel) -> Rel {
    r.filter(|a, b| a.tid == b.tid && !a.is_init())
}

fn check_coherence(v: &mut Verdict, hb: &Rel, eco: &Rel) {
    if let Some(a) = hb.carrier().events().iter().find(|&&a| hb.contains(a, a)) {
        v.fail(COHERENCE, Some(vec![*a]));
        return;
    }
    let bad = hb.seq(eco);
    if let Some(&a) = bad.carrier().events().iter().find(|&&a| bad.contains(a, a)) {
        let b = hb
            .successors(a)
            .find(|&b| eco.contains(b, a))
            .expect("hb;eco loop has a midpoint");
        v.fail(COHERENCE, Some(vec![a, b]));
    }
}

fn check_completeness(v: &mut Verdict, rf: &Rel, reads: &EventSet) {
    let covered = rf.codom();
    if let Some(r) = reads.iter().find(|r| !covered.contains(r)) {
        v.fail(COMPLETENESS, Some(vec![*r]));
    }
}

/// IMM bob for the fragment: `po;[W^⊒rel] ∪ [R^⊒acq];po ∪ po;[F] ∪ [F];po`.
pub fn bob(g: &ExecutionGraph) -> Rel {
    let all = g.events();
    let wrel = g.filter(|_, l| l.is_write() && l.mode().is_rel());
    let racq = g.filter(|_, l| l.is_read() && l.mode().is_acq());
    let f = g.fences();
    g.po.restrict(&all, &wrel)
        .union(&g.po.restrict(&racq, &all))
        .union(&g.po.restrict(&all, &f))
        .union(&g.po.restrict(&f, &all))
}

fn imm_core(g: &ExecutionGraph, strict: bool) -> (Verdict, crate::graph::Derived) {
    let d = g.derive_unchecked();
    let mut v = Verdict::default();
    check_completeness(&mut v, &g.rf, &g.reads());
    check_coherence(&mut v, &d.hb, &d.eco);
    let rfe = g.rf.minus(&g.po);
    let mut nta = rfe.union(&g.ppo).union(&bob(g)).union(&d.psc_f);
    if strict {
        nta = nta.union(&d.psc_base);
    }
    v.require_acyclic(NO_THIN_AIR, &nta);
    (v, d)
}

/// IMM for the relaxed fragment: completeness, coherence and acyclicity of
/// `rf ∪ ppo ∪ psc_f` (the last term only matters with SC fences).
pub fn check_imm(g: &ExecutionGraph) -> Verdict {
    imm_core(g, false).0
}

/// IMM plus acyclicity of `psc_base ∪ psc_f`.
pub fn check_immsc(g: &ExecutionGraph) -> Verdict {
    immsc(g, false)
}

/// IMM_SC with `psc_base` folded into the no-thin-air acyclicity.
pub fn check_immsc_strict(g: &ExecutionGraph) -> Verdict {
    immsc(g, true)
}

fn immsc(g: &ExecutionGraph, strict: bool) -> Verdict {
    let (mut v, d) = imm_core(g, strict);
    v.require_acyclic(PSC, &d.psc_base.union(&d.psc_f));
    v
}

pub fn check_rc11(g: &ExecutionGraph) -> Verdict {
    let d = g.derive_unchecked();
    let mut v = Verdict::default();
    check_completeness(&mut v, &g.rf, &g.reads());
    check_coherence(&mut v, &d.hb, &d.eco);
    v.require_acyclic(PSC, &d.psc_base.union(&d.psc_f));
    v.require_acyclic(PO_RF_ACYCLIC, &g.po.union(&g.rf));
    v
}

// ---------------------------------------------------------- hardware graphs

/// Label alphabet of an architecture graph.
pub trait HwLabel: Copy + Eq + fmt::Debug {
    fn kind(&self) -> Kind;
    fn loc(&self) -> Option<Loc>;
    fn val(&self) -> Option<Val>;
    fn render(&self, locations: &[String]) -> String;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum TsoLabel {
    R { loc: Loc, val: Val },
    W { loc: Loc, val: Val },
    MFence,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ArmRead {
    Rlx,
    /// acquirePC (`ldapr`)
    Q,
    /// acquire (`ldar`)
    A,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ArmWrite {
    Rlx,
    /// release (`stlr`)
    L,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ArmFence {
    /// `dmb.ld`
    Ld,
    /// `dmb.sy`
    Sy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ArmLabel {
    R { mode: ArmRead, loc: Loc, val: Val },
    W { mode: ArmWrite, loc: Loc, val: Val },
    F(ArmFence),
}

fn loc_name(locations: &[String], l: Loc) -> String {
    locations
        .get(l as usize)
        .cloned()
        .unwrap_or_else(|| format!("l{l}"))
}

impl HwLabel for TsoLabel {
    fn kind(&self) -> Kind {
        match self {
            TsoLabel::R { .. } => Kind::R,
            TsoLabel::W { .. } => Kind::W,
            TsoLabel::MFence => Kind::F,
        }
    }

    fn loc(&self) -> Option<Loc> {
        match *self {
            TsoLabel::R { loc, .. } | TsoLabel::W { loc, .. } => Some(loc),
            TsoLabel::MFence => None,
        }
    }

    fn val(&self) -> Option<Val> {
        match *self {
            TsoLabel::R { val, .. } | TsoLabel::W { val, .. } => Some(val),
            TsoLabel::MFence => None,
        }
    }

    fn render(&self, locations: &[String]) -> String {
        match *self {
            TsoLabel::R { loc, val } => format!("R({},{val})", loc_name(locations, loc)),
            TsoLabel::W { loc, val } => format!("W({},{val})", loc_name(locations, loc)),
            TsoLabel::MFence => "MFENCE".into(),
        }
    }
}

impl HwLabel for ArmLabel {
    fn kind(&self) -> Kind {
        match self {
            ArmLabel::R { .. } => Kind::R,
            ArmLabel::W { .. } => Kind::W,
            ArmLabel::F(_) => Kind::F,
        }
    }

    fn loc(&self) -> Option<Loc> {
        match *self {
            ArmLabel::R { loc, .. } | ArmLabel::W { loc, .. } => Some(loc),
            ArmLabel::F(_) => None,
        }
    }

    fn val(&self) -> Option<Val> {
        match *self {
            ArmLabel::R { val, .. } | ArmLabel::W { val, .. } => Some(val),
            ArmLabel::F(_) => None,
        }
    }

    fn render(&self, locations: &[String]) -> String {
        match *self {
            ArmLabel::R { mode, loc, val } => {
                let m = match mode {
                    ArmRead::Rlx => "",
                    ArmRead::Q => "Q",
                    ArmRead::A => "A",
                };
                format!("R{m}({},{val})", loc_name(locations, loc))
            }
            ArmLabel::W { mode, loc, val } => {
                let m = if mode == ArmWrite::L { "L" } else { "" };
                format!("W{m}({},{val})", loc_name(locations, loc))
            }
            ArmLabel::F(ArmFence::Ld) => "DMB.LD".into(),
            ArmLabel::F(ArmFence::Sy) => "DMB.SY".into(),
        }
    }
}

/// An architecture-level execution graph. Events keep the source graph's
/// thread ids; serials may be sparse.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HwGraph<L> {
    pub locations: Vec<String>,
    labels: BTreeMap<EventId, L>,
    carrier: Arc<Carrier>,
    pub po: Rel,
    pub rf: Rel,
    pub co: Rel,
    pub data: Rel,
}

pub type TsoGraph = HwGraph<TsoLabel>;
pub type ArmGraph = HwGraph<ArmLabel>;

impl<L: HwLabel> HwGraph<L> {
    pub fn new<A, B, C>(
        locations: Vec<String>,
        labels: BTreeMap<EventId, L>,
        rf: A,
        co: B,
        data: C,
    ) -> Result<Self, crate::rel::RelError>
    where
        A: IntoIterator<Item = (EventId, EventId)>,
        B: IntoIterator<Item = (EventId, EventId)>,
        C: IntoIterator<Item = (EventId, EventId)>,
    {
        let carrier = Carrier::new(labels.keys().copied());
        Ok(HwGraph {
            po: po_from_ids(&carrier),
            rf: Rel::from_pairs(&carrier, rf)?,
            co: Rel::from_pairs(&carrier, co)?,
            data: Rel::from_pairs(&carrier, data)?,
            locations,
            labels,
            carrier,
        })
    }

    pub fn labels(&self) -> &BTreeMap<EventId, L> {
        &self.labels
    }

    pub fn label(&self, e: EventId) -> Option<L> {
        self.labels.get(&e).copied()
    }

    pub fn carrier(&self) -> &Arc<Carrier> {
        &self.carrier
    }

    pub fn events(&self) -> EventSet {
        self.carrier.to_set()
    }

    pub fn filter(&self, pred: impl Fn(&L) -> bool) -> EventSet {
        self.labels
            .iter()
            .filter(|(_, l)| pred(l))
            .map(|(e, _)| *e)
            .collect()
    }

    pub fn of_kind(&self, k: Kind) -> EventSet {
        self.filter(|l| l.kind() == k)
    }

    pub fn fr(&self) -> Rel {
        self.rf.inverse().seq(&self.co)
    }

    pub fn same_loc(&self) -> Rel {
        Rel::from_fn(&self.carrier, |a, b| {
            let la = self.labels[&a].loc();
            la.is_some() && la == self.labels[&b].loc()
        })
    }

    /// Violations of rf typing/functionality and co totality.
    pub fn well_formed(&self) -> Vec<String> {
        let mut d = Vec::new();
        for (w, r) in self.rf.pairs() {
            let (lw, lr) = (self.labels[&w], self.labels[&r]);
            if lw.kind() != Kind::W
                || lr.kind() != Kind::R
                || lw.loc() != lr.loc()
                || lw.val() != lr.val()
            {
                d.push(format!("bad rf edge {w}->{r}"));
            }
        }
        for r in self.rf.codom() {
            if self.rf.predecessors(r).count() > 1 {
                d.push(format!("read {r} has several rf sources"));
            }
        }
        let ws: Vec<EventId> = self.of_kind(Kind::W).into_iter().collect();
        for (i, &a) in ws.iter().enumerate() {
            for &b in &ws[i + 1..] {
                let same = self.labels[&a].loc() == self.labels[&b].loc();
                if same && !self.co.contains(a, b) && !self.co.contains(b, a) {
                    d.push(format!("co does not order {a} and {b}"));
                }
            }
        }
        if !self.co.is_irreflexive() || !self.co.is_transitive() {
            d.push("co is not a strict order".into());
        }
        d
    }

    fn base_verdict(&self) -> Verdict {
        let mut v = Verdict::default();
        check_completeness(&mut v, &self.rf, &self.of_kind(Kind::R));
        if !self.well_formed().is_empty() {
            v.fail(COHERENCE, None);
        }
        let po_loc = self.po.inter(&self.same_loc());
        let fr = self.fr();
        v.require_acyclic(
            SC_PER_LOC,
            &po_loc.union(&self.rf).union(&fr).union(&self.co),
        );
        v
    }

    pub fn to_dot(&self) -> String {
        use std::fmt::Write as _;
        let node = |e: EventId| {
            if e.is_init() {
                "init".to_string()
            } else {
                format!("e{}_{}", e.tid, e.serial)
            }
        };
        let mut s = String::from(
            "digraph G {\n  node [shape=box, fontname=\"monospace\"];\n  init [label=\"Init\"];\n",
        );
        for (e, l) in &self.labels {
            if !e.is_init() {
                let _ = writeln!(
                    s,
                    "  {} [label=\"{}: {}\"];",
                    node(*e),
                    e,
                    l.render(&self.locations)
                );
            }
        }
        let mut edges = std::collections::BTreeSet::new();
        let po_imm = crate::graph::immediate(&self.po);
        for (name, r) in [
            ("po", &po_imm),
            ("rf", &self.rf),
            ("co", &crate::graph::immediate(&self.co)),
        ] {
            for (a, b) in r.pairs() {
                edges.insert((node(a), node(b), name));
            }
        }
        for (a, b, name) in edges {
            let _ = writeln!(s, "  {a} -> {b} [label={name}];");
        }
        s.push_str("}\n");
        s
    }
}

/// x86-TSO: sc-per-loc plus acyclicity of
/// `ppo_TSO ∪ fence_TSO ∪ rfe ∪ co ∪ fr`.
pub fn check_tso(gt: &TsoGraph) -> Verdict {
    let mut v = gt.base_verdict();
    let rw: EventSet = gt.filter(|l| l.kind() != Kind::F);
    let w = gt.of_kind(Kind::W);
    let r = gt.of_kind(Kind::R);
    let mf = gt.of_kind(Kind::F);
    let ppo = gt.po.restrict(&rw, &rw).minus(&gt.po.restrict(&w, &r));
    let all = gt.events();
    let fence = gt.po.restrict(&rw, &mf).seq(&gt.po.restrict(&all, &rw));
    let hb = ppo
        .union(&fence)
        .union(&external(&gt.rf))
        .union(&gt.co)
        .union(&gt.fr());
    v.require_acyclic(TSO_NO_THIN_AIR, &hb);
    v
}

/// ARMv8: sc-per-loc plus acyclicity of `obs ∪ dob ∪ aob ∪ bob`; address
/// and control dependencies and RMWs are empty.
pub fn check_armv8(ga: &ArmGraph) -> Verdict {
    let mut v = ga.base_verdict();
    let all = ga.events();
    let w = ga.of_kind(Kind::W);
    let r = ga.of_kind(Kind::R);
    let fr = ga.fr();
    let obs = external(&ga.rf)
        .union(&external(&fr))
        .union(&external(&ga.co));
    let rfi_opt = internal(&ga.rf).opt();
    let coi_opt = internal(&ga.co).opt();
    let dob = ga
        .data
        .seq(&rfi_opt)
        .union(&ga.data.restrict(&all, &w).seq(&coi_opt));
    let f_sy = ga.filter(|l| matches!(l, ArmLabel::F(ArmFence::Sy)));
    let f_ld = ga.filter(|l| matches!(l, ArmLabel::F(ArmFence::Ld)));
    let r_q = ga.filter(|l| {
        matches!(
            l,
            ArmLabel::R {
                mode: ArmRead::Q | ArmRead::A,
                ..
            }
        )
    });
    let r_a = ga.filter(|l| {
        matches!(
            l,
            ArmLabel::R {
                mode: ArmRead::A,
                ..
            }
        )
    });
    let w_l = ga.filter(|l| {
        matches!(
            l,
            ArmLabel::W {
                mode: ArmWrite::L,
                ..
            }
        )
    });
    let po = &ga.po;
    let bob = po
        .restrict(&all, &f_sy)
        .seq(po)
        .union(&po.restrict(&r, &f_ld).seq(po))
        .union(&po.restrict(&r_q, &all))
        .union(&po.restrict(&all, &w_l).seq(&coi_opt))
        .union(&po.restrict(&w_l, &r_a));
    v.require_acyclic(EXTERNAL, &obs.union(&dob).union(&bob));
    v
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum TsoScheme {
    /// `mov; mfence` for SC stores.
    FenceAfterW,
    /// `mfence; mov` for SC loads.
    FenceBeforeR,
}

impl TsoScheme {
    pub fn as_str(self) -> &'static str {
        match self {
            TsoScheme::FenceAfterW => "fence-after-w",
            TsoScheme::FenceBeforeR => "fence-before-r",
        }
    }
}

/// Doubles serials so events can be inserted on either side: `n` becomes
/// `2n`, `2n - 1` sits before it and `2n + 1` after it.
fn doubled(e: EventId) -> EventId {
    if e.is_init() {
        e
    } else {
        EventId::new(e.tid, 2 * e.serial)
    }
}

fn doubled_pairs(r: &Rel) -> Vec<(EventId, EventId)> {
    r.pairs().map(|(a, b)| (doubled(a), doubled(b))).collect()
}

pub fn map_to_tso(g: &ExecutionGraph, scheme: TsoScheme) -> Result<TsoGraph, ModelError> {
    let mut labels = BTreeMap::new();
    for (&e, l) in g.labels() {
        let d = doubled(e);
        match *l {
            Label::Read { mode, loc, val } => {
                labels.insert(d, TsoLabel::R { loc, val });
                if mode == Mode::Sc && scheme == TsoScheme::FenceBeforeR {
                    labels.insert(EventId::new(e.tid, d.serial - 1), TsoLabel::MFence);
                }
            }
            Label::Write { mode, loc, val } => {
                labels.insert(d, TsoLabel::W { loc, val });
                if mode == Mode::Sc && scheme == TsoScheme::FenceAfterW && !e.is_init() {
                    labels.insert(EventId::new(e.tid, d.serial + 1), TsoLabel::MFence);
                }
            }
            Label::Fence { mode: Mode::Sc } => {
                labels.insert(d, TsoLabel::MFence);
            }
            Label::Fence { .. } => {}
        }
    }
    let locs = g.locations.clone();
    HwGraph::new(
        locs,
        labels,
        doubled_pairs(&g.rf),
        doubled_pairs(&g.co),
        doubled_pairs(&g.data),
    )
    .map_err(|e| ModelError::Unsupported(e.to_string()))
}

pub fn map_to_armv8(g: &ExecutionGraph) -> Result<ArmGraph, ModelError> {
    let labels = g
        .labels()
        .iter()
        .map(|(&e, l)| {
            let a = match *l {
                Label::Read { mode, loc, val } => ArmLabel::R {
                    mode: match mode {
                        Mode::Sc => ArmRead::A,
                        Mode::Acq | Mode::AcqRel => ArmRead::Q,
                        _ => ArmRead::Rlx,
                    },
                    loc,
                    val,
                },
                Label::Write { mode, loc, val } => ArmLabel::W {
                    mode: if mode.is_rel() {
                        ArmWrite::L
                    } else {
                        ArmWrite::Rlx
                    },
                    loc,
                    val,
                },
                Label::Fence { mode: Mode::Acq } => ArmLabel::F(ArmFence::Ld),
                Label::Fence { .. } => ArmLabel::F(ArmFence::Sy),
            };
            (e, a)
        })
        .collect();
    HwGraph::new(
        g.locations.clone(),
        labels,
        g.rf.pairs(),
        g.co.pairs(),
        g.data.pairs(),
    )
    .map_err(|e| ModelError::Unsupported(e.to_string()))
}

/// Inserts an SC fence before every SC read and write and weakens them to
/// acquire and release respectively.
pub fn split_sc(g: &ExecutionGraph) -> ExecutionGraph {
    let mut labels = BTreeMap::new();
    for (&e, l) in g.labels() {
        let d = doubled(e);
        let sc_access = !l.is_fence() && l.mode() == Mode::Sc;
        if sc_access {
            labels.insert(
                EventId::new(e.tid, d.serial - 1),
                Label::Fence { mode: Mode::Sc },
            );
            let weak = if l.is_read() { Mode::Acq } else { Mode::Rel };
            labels.insert(d, l.with_mode(weak));
        } else {
            labels.insert(d, *l);
        }
    }
    ExecutionGraph::new(
        g.locations.clone(),
        labels,
        doubled_pairs(&g.rf),
        doubled_pairs(&g.co),
        doubled_pairs(&g.data),
    )
    .expect("doubling keeps every edge inside the carrier")
}
