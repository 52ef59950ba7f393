//! Traversals of execution graphs: covered/issued configurations, the step
//! relation, full-traversal search and the observation relations used to
//! certify branches.

use std::collections::HashSet;
use std::fmt;

use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::graph::ExecutionGraph;
use crate::models::{check_immsc, Verdict};
use crate::rel::{EventId, EventSet, Rel};

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct TraversalConfig {
    pub covered: EventSet,
    pub issued: EventSet,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Issue,
    Cover,
}

/// One traversal step. A cover of a not-yet-issued write issues it in the
/// same step (`fused`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TravStep {
    pub action: Action,
    pub event: EventId,
    pub fused: bool,
}

impl TravStep {
    pub fn to_json(&self) -> Value {
        json!({
            "action": self.action,
            "event": [self.event.tid, self.event.serial],
        })
    }
}

impl fmt::Display for TravStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let a = match self.action {
            Action::Issue => "issue",
            Action::Cover if self.fused => "issue+cover",
            Action::Cover => "cover",
        };
        write!(f, "{a} {}", self.event)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TraversalError {
    #[error("graph is not IMM_SC-consistent: {0}")]
    Inconsistent(Verdict),
    #[error("theorem violation: no full traversal, stuck with covered {covered:?} issued {issued:?}", covered = .0.covered, issued = .0.issued)]
    Stuck(TraversalConfig),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Traversal {
    /// `configs[0]` is the initial configuration; `configs[i + 1]` follows
    /// `steps[i]`.
    pub configs: Vec<TraversalConfig>,
    pub steps: Vec<TravStep>,
}

impl Traversal {
    pub fn to_json(&self) -> Value {
        Value::Array(self.steps.iter().map(TravStep::to_json).collect())
    }
}

pub fn init_config(g: &ExecutionGraph) -> Result<TraversalConfig, TraversalError> {
    let v = check_immsc(g);
    if !v.consistent {
        return Err(TraversalError::Inconsistent(v));
    }
    Ok(TraversalConfig {
        covered: g.init_events(),
        issued: g.init_events(),
    })
}

pub fn final_config(g: &ExecutionGraph) -> TraversalConfig {
    TraversalConfig {
        covered: g.events(),
        issued: g.writes(),
    }
}

/// Violations of the configuration invariants.
pub fn config_violations(g: &ExecutionGraph, tc: &TraversalConfig) -> Vec<String> {
    let mut out = Vec::new();
    let all = g.events();
    let writes = g.writes();
    if !tc.covered.is_subset(&all) || !tc.issued.is_subset(&writes) {
        out.push("sets leave the graph".into());
    }
    let init = g.init_events();
    if !init.is_subset(&tc.covered) || !init.is_subset(&tc.issued) {
        out.push("init not covered and issued".into());
    }
    for &c in &tc.covered {
        if g.po.predecessors(c).any(|p| !tc.covered.contains(&p)) {
            out.push(format!("{c} covered before a po-predecessor"));
        }
        if writes.contains(&c) && !tc.issued.contains(&c) {
            out.push(format!("{c} covered but not issued"));
        }
    }
    out
}

fn rf_po(g: &ExecutionGraph) -> Rel {
    g.rf.inter(&g.po)
}

/// `C ∪ I ∪ dom((rf ∩ po)?;ppo;[I]) ∪ codom([I];(rf ∩ po))`
pub fn determined(g: &ExecutionGraph, tc: &TraversalConfig) -> EventSet {
    let rfi = rf_po(g);
    let all = g.events();
    let mut out: EventSet = tc.covered.union(&tc.issued).copied().collect();
    out.extend(rfi.opt().seq(&g.ppo).restrict(&all, &tc.issued).dom());
    out.extend(rfi.restrict(&tc.issued, &all).codom());
    out
}

/// `[W];(rf;[C])?;hb? ∪ rf;[determined];po?`
pub fn vf(g: &ExecutionGraph, tc: &TraversalConfig) -> Rel {
    let d = g.derive_unchecked();
    let all = g.events();
    let w = g.id_on(&g.writes());
    let rf_c = g.rf.restrict(&all, &tc.covered);
    let rf_det = g.rf.restrict(&all, &determined(g, tc));
    w.seq(&rf_c.opt())
        .seq(&d.hb.opt())
        .union(&rf_det.seq(&g.po.opt()))
}

/// `([W];(vf ∩ =loc);[R]) \ (co;vf)`
pub fn sjf(g: &ExecutionGraph, tc: &TraversalConfig) -> Rel {
    let vf = vf(g, tc);
    vf.inter(&g.same_loc())
        .restrict(&g.writes(), &g.reads())
        .minus(&g.co.seq(&vf))
}

fn issuable(g: &ExecutionGraph, tc: &TraversalConfig, w: EventId) -> bool {
    if tc.issued.contains(&w) {
        return false;
    }
    let l = g.label(w).expect("event of g");
    if !l.is_write() {
        return false;
    }
    // Releases wait for everything before them.
    if l.mode().is_rel() && g.po.predecessors(w).any(|p| !tc.covered.contains(&p)) {
        return false;
    }
    let rfe = g.rf.minus(&g.po);
    let deps = std::iter::once(w).chain(g.ppo.predecessors(w));
    deps.into_iter()
        .all(|r| rfe.predecessors(r).all(|src| tc.issued.contains(&src)))
}

fn coverable(g: &ExecutionGraph, tc: &TraversalConfig, e: EventId) -> Option<bool> {
    if tc.covered.contains(&e) || g.po.predecessors(e).any(|p| !tc.covered.contains(&p)) {
        return None;
    }
    let l = g.label(e).expect("event of g");
    if l.is_read() {
        let src = g.rf_source(e)?;
        return tc.issued.contains(&src).then_some(false);
    }
    if l.is_write() && !tc.issued.contains(&e) {
        return issuable(g, tc, e).then_some(true);
    }
    Some(false)
}

/// Successor configurations in search order: covers first, then issues,
/// each by ascending event id.
pub fn trav_steps(g: &ExecutionGraph, tc: &TraversalConfig) -> Vec<(TravStep, TraversalConfig)> {
    let mut out = Vec::new();
    for e in g.events() {
        if let Some(fused) = coverable(g, tc, e) {
            let mut n = tc.clone();
            n.covered.insert(e);
            if fused {
                n.issued.insert(e);
            }
            out.push((
                TravStep {
                    action: Action::Cover,
                    event: e,
                    fused,
                },
                n,
            ));
        }
    }
    for w in g.writes() {
        if issuable(g, tc, w) {
            let mut n = tc.clone();
            n.issued.insert(w);
            out.push((
                TravStep {
                    action: Action::Issue,
                    event: w,
                    fused: false,
                },
                n,
            ));
        }
    }
    out
}

/// Applies a step if it is one of the successors of `tc`.
pub fn apply_step(
    g: &ExecutionGraph,
    tc: &TraversalConfig,
    step: TravStep,
) -> Option<TraversalConfig> {
    trav_steps(g, tc)
        .into_iter()
        .find(|(s, _)| s.action == step.action && s.event == step.event)
        .map(|(_, n)| n)
}

/// Depth-first search for a traversal from the initial to the final
/// configuration.
pub fn full_traversal(g: &ExecutionGraph) -> Result<Traversal, TraversalError> {
    let start = init_config(g)?;
    let goal = final_config(g);
    let mut dead: HashSet<TraversalConfig> = HashSet::new();
    let mut tr = Traversal {
        configs: vec![start.clone()],
        steps: Vec::new(),
    };
    fn go(
        g: &ExecutionGraph,
        goal: &TraversalConfig,
        dead: &mut HashSet<TraversalConfig>,
        tr: &mut Traversal,
    ) -> bool {
        let cur = tr.configs.last().expect("non-empty").clone();
        if &cur == goal {
            return true;
        }
        if dead.contains(&cur) {
            return false;
        }
        for (s, n) in trav_steps(g, &cur) {
            tr.steps.push(s);
            tr.configs.push(n);
            if go(g, goal, dead, tr) {
                return true;
            }
            tr.steps.pop();
            tr.configs.pop();
        }
        dead.insert(cur);
        false
    }
    if go(g, &goal, &mut dead, &mut tr) {
        Ok(tr)
    } else {
        Err(TraversalError::Stuck(start))
    }
}
