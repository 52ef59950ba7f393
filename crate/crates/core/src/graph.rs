//! Execution graphs and their derived relations.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::sync::Arc;

use serde_json::{json, Value};
use thiserror::Error;

use crate::lang::{Label, Loc};
use crate::rel::{Carrier, EventId, EventSet, Rel, RelError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("ill-formed graph: {}", .0.join("; "))]
    IllFormed(Vec<String>),
    #[error(transparent)]
    Rel(#[from] RelError),
}

/// `⟨E, tid, lab, po, rf, co, data, ppo⟩`. Thread ids live in the event ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExecutionGraph {
    pub locations: Vec<String>,
    labels: BTreeMap<EventId, Label>,
    carrier: Arc<Carrier>,
    pub po: Rel,
    pub rf: Rel,
    pub co: Rel,
    pub data: Rel,
    pub ppo: Rel,
}

#[derive(Clone, Debug)]
pub struct Derived {
    pub fr: Rel,
    pub eco: Rel,
    pub sw: Rel,
    pub hb: Rel,
    pub scb: Rel,
    pub psc_base: Rel,
    pub psc_f: Rel,
}

/// Program order induced by event ids: init events first, then serial order
/// within each thread.
pub fn po_from_ids(carrier: &Arc<Carrier>) -> Rel {
    Rel::from_fn(carrier, |a, b| {
        (a.is_init() && !b.is_init()) || (!a.is_init() && a.tid == b.tid && a.serial < b.serial)
    })
}

/// Immediate edges of a strict order.
pub fn immediate(r: &Rel) -> Rel {
    r.minus(&r.seq(r))
}

impl ExecutionGraph {
    /// Builds a graph, deriving po from the event ids and ppo from data and
    /// internal reads-from.
    pub fn new<A, B, C>(
        locations: Vec<String>,
        labels: BTreeMap<EventId, Label>,
        rf: A,
        co: B,
        data: C,
    ) -> Result<Self, GraphError>
    where
        A: IntoIterator<Item = (EventId, EventId)>,
        B: IntoIterator<Item = (EventId, EventId)>,
        C: IntoIterator<Item = (EventId, EventId)>,
    {
        let carrier = Carrier::new(labels.keys().copied());
        let po = po_from_ids(&carrier);
        let rf = Rel::from_pairs(&carrier, rf)?;
        let co = Rel::from_pairs(&carrier, co)?;
        let data = Rel::from_pairs(&carrier, data)?;
        let mut g = ExecutionGraph {
            locations,
            labels,
            ppo: Rel::empty(&carrier),
            carrier,
            po,
            rf,
            co,
            data,
        };
        g.ppo = g.compute_ppo();
        Ok(g)
    }

    /// `[R]; (data ∪ rfi)⁺; [W]`
    pub fn compute_ppo(&self) -> Rel {
        let rfi = self.rf.inter(&self.po);
        self.data
            .union(&rfi)
            .plus()
            .restrict(&self.reads(), &self.writes())
    }

    pub fn carrier(&self) -> &Arc<Carrier> {
        &self.carrier
    }

    pub fn labels(&self) -> &BTreeMap<EventId, Label> {
        &self.labels
    }

    pub fn label(&self, e: EventId) -> Option<Label> {
        self.labels.get(&e).copied()
    }

    pub fn events(&self) -> EventSet {
        self.carrier.to_set()
    }

    pub fn filter(&self, pred: impl Fn(EventId, &Label) -> bool) -> EventSet {
        self.labels
            .iter()
            .filter(|(e, l)| pred(**e, l))
            .map(|(e, _)| *e)
            .collect()
    }

    pub fn reads(&self) -> EventSet {
        self.filter(|_, l| l.is_read())
    }

    pub fn writes(&self) -> EventSet {
        self.filter(|_, l| l.is_write())
    }

    pub fn fences(&self) -> EventSet {
        self.filter(|_, l| l.is_fence())
    }

    pub fn init_events(&self) -> EventSet {
        self.filter(|e, _| e.is_init())
    }

    /// `E^sc`: SC reads, writes and fences.
    pub fn sc_events(&self) -> EventSet {
        self.filter(|_, l| l.mode() == crate::lang::Mode::Sc)
    }

    /// `F^sc`
    pub fn sc_fences(&self) -> EventSet {
        self.filter(|_, l| l.is_fence() && l.mode() == crate::lang::Mode::Sc)
    }

    pub fn threads(&self) -> BTreeSet<u32> {
        self.labels
            .keys()
            .filter(|e| !e.is_init())
            .map(|e| e.tid)
            .collect()
    }

    /// Events of thread `tid` in program order.
    pub fn thread_events(&self, tid: u32) -> Vec<EventId> {
        self.labels
            .keys()
            .filter(|e| !e.is_init() && e.tid == tid)
            .copied()
            .collect()
    }

    pub fn loc(&self, e: EventId) -> Option<Loc> {
        self.labels.get(&e).and_then(Label::loc)
    }

    /// `=loc`, only between events that have a location.
    pub fn same_loc(&self) -> Rel {
        Rel::from_fn(&self.carrier, |a, b| {
            let la = self.loc(a);
            la.is_some() && la == self.loc(b)
        })
    }

    /// `R|≠loc`; events without a location differ from everything.
    pub fn diff_loc(&self, r: &Rel) -> Rel {
        r.filter(|a, b| {
            let la = self.loc(a);
            la.is_none() || la != self.loc(b)
        })
    }

    /// The write `r` reads from, if any.
    pub fn rf_source(&self, r: EventId) -> Option<EventId> {
        self.rf.predecessors(r).next()
    }

    pub fn id_on(&self, s: &EventSet) -> Rel {
        Rel::id_on(&self.carrier, s)
    }

    pub fn rfe(&self) -> Rel {
        self.rf.minus(&self.po)
    }

    pub fn rfi(&self) -> Rel {
        self.rf.inter(&self.po)
    }

    /// Every violated field invariant, empty when the graph is well formed.
    pub fn well_formed(&self) -> Vec<String> {
        let mut d = Vec::new();
        let lab = |e: EventId| self.labels[&e];
        for e in self.labels.keys() {
            if e.is_init() {
                let l = lab(*e);
                if !l.is_write() || l.val() != Some(0) || l.loc() != Some(e.serial) {
                    d.push(format!("init event {e} must write 0 to its own location"));
                }
            }
            if let Some(l) = lab(*e).loc() {
                if l as usize >= self.locations.len() {
                    d.push(format!("{e} uses an undeclared location"));
                }
            }
        }
        if self.po != po_from_ids(&self.carrier) {
            d.push("po is not the per-thread total order with init first".into());
        }
        for (w, r) in self.rf.pairs() {
            let (lw, lr) = (lab(w), lab(r));
            if !lw.is_write() || !lr.is_read() {
                d.push(format!("rf edge {w}->{r} is not write-to-read"));
            } else if lw.loc() != lr.loc() || lw.val() != lr.val() {
                d.push(format!("rf edge {w}->{r} disagrees on location or value"));
            }
        }
        for r in self.rf.codom() {
            if self.rf.predecessors(r).count() > 1 {
                d.push(format!("read {r} has several rf sources"));
            }
        }
        for (a, b) in self.co.pairs() {
            if !lab(a).is_write() || !lab(b).is_write() || lab(a).loc() != lab(b).loc() {
                d.push(format!(
                    "co edge {a}->{b} is not between same-location writes"
                ));
            }
        }
        if !self.co.is_irreflexive() || !self.co.is_transitive() {
            d.push("co is not a strict order".into());
        }
        let ws: Vec<EventId> = self.writes().into_iter().collect();
        for (i, &a) in ws.iter().enumerate() {
            for &b in &ws[i + 1..] {
                if lab(a).loc() == lab(b).loc()
                    && !self.co.contains(a, b)
                    && !self.co.contains(b, a)
                {
                    d.push(format!("co does not order {a} and {b}"));
                }
            }
        }
        let r_po = Rel::product(&self.carrier, &self.reads(), &self.events()).inter(&self.po);
        if !self.data.subset_of(&r_po) {
            d.push("data is not contained in [R];po".into());
        }
        let r_po_w = r_po.restrict(&self.events(), &self.writes());
        if !self.ppo.subset_of(&r_po_w) {
            d.push("ppo is not contained in [R];po;[W]".into());
        }
        d
    }

    pub fn is_well_formed(&self) -> bool {
        self.well_formed().is_empty()
    }

    /// Derived relations; fails on ill-formed graphs.
    pub fn derive(&self) -> Result<Derived, GraphError> {
        let d = self.well_formed();
        if !d.is_empty() {
            return Err(GraphError::IllFormed(d));
        }
        Ok(self.derive_unchecked())
    }

    pub(crate) fn derive_unchecked(&self) -> Derived {
        let fr = self.rf.inverse().seq(&self.co);
        let eco = self.co.union(&self.rf).union(&fr).plus();
        let rel_w = self.filter(|_, l| l.is_write() && l.mode().is_rel());
        let acq_r = self.filter(|_, l| l.is_read() && l.mode().is_acq());
        let sw = self.rf.restrict(&rel_w, &acq_r);
        let hb = self.po.union(&sw).plus();
        let po_nl = self.diff_loc(&self.po);
        let hb_loc = hb.inter(&self.same_loc());
        let scb = self
            .po
            .union(&po_nl.seq(&hb).seq(&po_nl))
            .union(&hb_loc)
            .union(&self.co)
            .union(&fr);
        let esc = self.id_on(&self.sc_events());
        let fsc = self.id_on(&self.sc_fences());
        let hb_opt = hb.opt();
        let left = esc.union(&fsc.seq(&hb_opt));
        let right = esc.union(&hb_opt.seq(&fsc));
        let psc_base = left.seq(&scb).seq(&right);
        let psc_f = fsc.seq(&hb.union(&hb.seq(&eco).seq(&hb))).seq(&fsc);
        Derived {
            fr,
            eco,
            sw,
            hb,
            scb,
            psc_base,
            psc_f,
        }
    }

    /// `rf ∪ co;rf? ∪ fr;rf?`
    pub fn eco_closed_form(&self, d: &Derived) -> Rel {
        let rf_opt = self.rf.opt();
        self.rf
            .union(&self.co.seq(&rf_opt))
            .union(&d.fr.seq(&rf_opt))
    }

    fn node(e: EventId) -> String {
        if e.is_init() {
            "init".into()
        } else {
            format!("e{}_{}", e.tid, e.serial)
        }
    }

    /// The edges drawn by [`ExecutionGraph::to_dot`], init events collapsed.
    pub fn dot_edges(&self) -> BTreeSet<(String, String, &'static str)> {
        let d = self.derive_unchecked();
        let mut out = BTreeSet::new();
        let groups: [(&'static str, Rel); 5] = [
            ("po", immediate(&self.po)),
            ("rf", self.rf.clone()),
            ("co", immediate(&self.co)),
            ("fr", d.fr.clone()),
            ("ppo", self.ppo.clone()),
        ];
        for (name, r) in groups {
            for (a, b) in r.pairs() {
                out.insert((Self::node(a), Self::node(b), name));
            }
        }
        out
    }

    pub fn to_dot(&self) -> String {
        let mut s = String::from("digraph G {\n  node [shape=box, fontname=\"monospace\"];\n");
        s.push_str("  init [label=\"Init\"];\n");
        for t in self.threads() {
            let _ = writeln!(
                s,
                "  subgraph cluster_t{t} {{\n    label=\"T{t}\"; style=dotted;"
            );
            for e in self.thread_events(t) {
                let _ = writeln!(
                    s,
                    "    {} [label=\"{}: {}\"];",
                    Self::node(e),
                    e,
                    self.labels[&e].render(&self.locations)
                );
            }
            s.push_str("  }\n");
        }
        for (a, b, kind) in self.dot_edges() {
            let style = match kind {
                "po" => "color=black".to_string(),
                "rf" => "color=darkgreen, label=rf, fontcolor=darkgreen".to_string(),
                "co" => "color=blue, label=co, fontcolor=blue".to_string(),
                "fr" => "color=orange, style=dashed, label=fr, fontcolor=orange".to_string(),
                _ => "color=purple, style=bold, label=ppo, fontcolor=purple".to_string(),
            };
            let _ = writeln!(s, "  {a} -> {b} [{style}];");
        }
        s.push_str("}\n");
        s
    }

    pub fn event_json(&self, e: EventId) -> Value {
        let l = self.labels[&e];
        let mut v = json!({
            "tid": e.tid,
            "serial": e.serial,
            "kind": format!("{:?}", l.kind()),
            "mode": l.mode().as_str(),
        });
        if let Some(loc) = l.loc() {
            v["loc"] = json!(self
                .locations
                .get(loc as usize)
                .cloned()
                .unwrap_or_default());
            v["val"] = json!(l.val());
        }
        v
    }

    pub fn to_json(&self) -> Value {
        let edges = |r: &Rel| -> Value {
            r.pairs()
                .map(|(a, b)| json!([[a.tid, a.serial], [b.tid, b.serial]]))
                .collect()
        };
        json!({
            "events": self.labels.keys().map(|e| self.event_json(*e)).collect::<Vec<_>>(),
            "po": edges(&immediate(&self.po)),
            "rf": edges(&self.rf),
            "co": edges(&self.co),
            "data": edges(&self.data),
            "ppo": edges(&self.ppo),
        })
    }
}
