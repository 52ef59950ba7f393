//! Follows a traversal of an IMM_SC-consistent graph and grows a Weakestmo
//! event structure alongside it, checking the simulation relation after
//! every step.

use serde_json::{json, Value};
use thiserror::Error;

use crate::es::{check_es_consistent, ConstructionChoice, EsError, EventStructure, WritePlacement};
use crate::graph::ExecutionGraph;
use crate::lang::{Instruction, Label, Program, ThreadState};
use crate::models::{check_immsc, Verdict};
use crate::rel::{EventId, EventSet, Rel};
use crate::traversal::{
    full_traversal, init_config, sjf, vf, TravStep, Traversal, TraversalConfig, TraversalError,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error(transparent)]
    Traversal(#[from] TraversalError),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("theorem violation at step {step}: {msg}")]
    TheoremViolation { step: usize, msg: String },
}

#[derive(Clone, Debug)]
pub struct SimState<'a> {
    pub program: &'a Program,
    pub graph: &'a ExecutionGraph,
    pub tc: TraversalConfig,
    pub es: EventStructure,
    pub x: EventSet,
}

/// What one simulation step did to the event structure.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StepRecord {
    pub step: TravStep,
    pub added: Vec<EventId>,
    pub jf: Vec<(EventId, EventId)>,
    pub ew: Vec<(EventId, EventId)>,
    pub co_after: Vec<(EventId, EventId)>,
    pub fallbacks: Vec<String>,
    pub verdict: Verdict,
}

fn id_json(e: EventId) -> Value {
    json!([e.tid, e.serial])
}

fn pairs_json(ps: &[(EventId, EventId)]) -> Value {
    ps.iter()
        .map(|&(a, b)| json!([id_json(a), id_json(b)]))
        .collect()
}

impl StepRecord {
    pub fn to_json(&self) -> Value {
        json!({
            "action": self.step.to_json()["action"],
            "event": id_json(self.step.event),
            "added": self.added.iter().map(|&e| id_json(e)).collect::<Vec<_>>(),
            "jf": pairs_json(&self.jf),
            "ew": pairs_json(&self.ew),
            "co_after": pairs_json(&self.co_after),
            "fallbacks": self.fallbacks,
            "simrel": {
                "consistent": self.verdict.consistent,
                "violated": self.verdict.violated,
            },
        })
    }
}

impl<'a> SimState<'a> {
    /// Image of a structure event in the graph: same thread, same po depth.
    pub fn s2g(&self, e: EventId) -> EventId {
        s2g(&self.es, e)
    }

    /// `⌊A⌋`: structure events whose image lies in `a`.
    pub fn preimage(&self, a: &EventSet) -> EventSet {
        self.es
            .events()
            .into_iter()
            .filter(|&e| a.contains(&self.s2g(e)))
            .collect()
    }

    /// The member of X standing for graph event `g`.
    pub fn representative(&self, g: EventId) -> Option<EventId> {
        self.x.iter().copied().find(|&e| self.s2g(e) == g)
    }
}

fn s2g(es: &EventStructure, e: EventId) -> EventId {
    if e.is_init() {
        e
    } else {
        EventId::new(e.tid, es.depth(e))
    }
}

/// `⌈r⌉` on the graph's carrier; pairs leaving the graph are dropped and
/// reported through the second component.
fn lift(st: &SimState, r: &Rel) -> (Rel, bool) {
    let mut out = Rel::empty(st.graph.carrier());
    let mut escaped = false;
    for (a, b) in r.pairs() {
        if out.insert(st.s2g(a), st.s2g(b)).is_err() {
            escaped = true;
        }
    }
    (out, escaped)
}

/// The twelve clauses of the simulation relation. Failing clauses are
/// reported by number.
pub fn check_simrel(st: &SimState) -> Verdict {
    let g = st.graph;
    let s = &st.es;
    let mut v = Verdict::default();
    if !check_immsc(g).consistent {
        v.fail("1", None);
    }
    if !check_es_consistent(s).consistent {
        v.fail("2", None);
    }
    if !s.is_extracted(&st.x) {
        v.fail("3", None);
    }
    let tc = &st.tc;
    let all = g.events();
    let mut target: EventSet = tc.covered.clone();
    target.extend(g.po.opt().restrict(&all, &tc.issued).dom());
    let img_s: EventSet = s.events().into_iter().map(|e| st.s2g(e)).collect();
    let img_x: EventSet = st.x.iter().map(|&e| st.s2g(e)).collect();
    if img_s != target || img_x != target {
        v.fail("4", None);
    }
    let ci: EventSet = tc.covered.union(&tc.issued).copied().collect();
    let x_ci: EventSet = st.preimage(&ci).intersection(&st.x).copied().collect();
    for e in s.events() {
        let (Some(l), Some(gl)) = (s.label(e), g.label(st.s2g(e))) else {
            v.fail("5a", Some(vec![e]));
            continue;
        };
        if !l.same_shape(&gl) {
            v.fail("5a", Some(vec![e]));
        }
        if x_ci.contains(&e) && l != gl {
            v.fail("5b", Some(vec![e]));
        }
    }
    let d = s.derive();
    let (po, esc) = lift(st, &d.po);
    if esc || !po.subset_of(&g.po) {
        v.fail("6", None);
    }
    for a in s.events() {
        for b in s.events() {
            if a != b && st.s2g(a) == st.s2g(b) && !d.cf.contains(a, b) {
                v.fail("7", Some(vec![a, b]));
            }
        }
    }
    let gd = g.derive_unchecked();
    let (jf, esc) = lift(st, &d.jf);
    if esc || !jf.subset_of(&g.rf.opt().seq(&gd.hb.opt())) {
        v.fail("8a", None);
    }
    let x_c: EventSet = st
        .preimage(&tc.covered)
        .intersection(&st.x)
        .copied()
        .collect();
    let (jf_c, _) = lift(st, &d.jf.restrict(&s.events(), &x_c));
    if !jf_c.subset_of(&g.rf) {
        v.fail("8b", None);
    }
    let x_i: EventSet = st
        .preimage(&tc.issued)
        .intersection(&st.x)
        .copied()
        .collect();
    let anchored = d.ew.restrict(&s.events(), &x_i).dom();
    if let Some(w) = d.jfe.dom().into_iter().find(|w| !anchored.contains(w)) {
        v.fail("9", Some(vec![w]));
    }
    if d.ew.pairs().any(|(a, b)| st.s2g(a) != st.s2g(b)) {
        v.fail("10", None);
    }
    let through = d.ew.restrict(&s.events(), &x_i).seq(&d.ew).opt();
    if !d.ew.subset_of(&through) {
        v.fail("11", None);
    }
    if d.co.pairs().any(|(a, b)| {
        let (ga, gb) = (st.s2g(a), st.s2g(b));
        ga != gb && !g.co.contains(ga, gb)
    }) {
        v.fail("12", None);
    }
    v
}

pub fn sim_init<'a>(p: &'a Program, g: &'a ExecutionGraph) -> Result<SimState<'a>, SimError> {
    let tc = init_config(g)?;
    let es = EventStructure::new(p);
    let x = es.events();
    let st = SimState {
        program: p,
        graph: g,
        tc,
        es,
        x,
    };
    let v = check_simrel(&st);
    if !v.consistent {
        return Err(SimError::Precondition(format!(
            "initial state fails clauses {}",
            v.violated.join(", ")
        )));
    }
    Ok(st)
}

/// Advances the state along one traversal step, re-running the step's
/// thread with reads dictated by the new configuration.
pub fn sim_step<'a>(
    st: &SimState<'a>,
    step: TravStep,
    next: &TraversalConfig,
    index: usize,
) -> Result<(SimState<'a>, StepRecord), SimError> {
    let violation = |msg: String| SimError::TheoremViolation { step: index, msg };
    let g = st.graph;
    let p = st.program;
    let t = step.event.tid;
    let all = g.events();
    let mut reach: EventSet = next.covered.clone();
    reach.extend(g.po.opt().restrict(&all, &next.issued).dom());
    let len = reach
        .iter()
        .filter(|e| e.tid == t && !e.is_init())
        .map(|e| e.serial)
        .max()
        .unwrap_or(0);
    let sjf_n = sjf(g, next);
    let vf_n = vf(g, next);
    let issued_prev = &st.tc.issued;

    let mut es = st.es.clone();
    let mut thread = ThreadState::new(p, t).map_err(|e| violation(e.to_string()))?;
    let mut path: Vec<EventId> = Vec::new();
    let mut rec = StepRecord {
        step,
        added: Vec::new(),
        jf: Vec::new(),
        ew: Vec::new(),
        co_after: Vec::new(),
        fallbacks: Vec::new(),
        verdict: Verdict::default(),
    };
    for k in 1..=len {
        let gev = EventId::new(t, k);
        let ins = thread
            .next_instruction()
            .ok_or_else(|| violation(format!("thread {t} ends before {gev}")))?;
        let mut just = None;
        let label = if let Instruction::Load { .. } = ins {
            let available = |w: EventId| -> Option<EventId> {
                if w.is_init() {
                    Some(w)
                } else if w.tid == t && w.serial < k {
                    Some(path[w.serial as usize - 1])
                } else if issued_prev.contains(&w) {
                    st.representative(w)
                } else {
                    None
                }
            };
            let src = sjf_n.predecessors(gev).next();
            let j = match src.and_then(available) {
                Some(j) => j,
                None => {
                    let best = vf_n
                        .predecessors(gev)
                        .filter(|&w| {
                            g.label(w).is_some_and(|l| l.is_write()) && g.loc(w) == g.loc(gev)
                        })
                        .filter(|&w| available(w).is_some())
                        .max_by(|&a, &b| {
                            if g.co.contains(a, b) {
                                std::cmp::Ordering::Less
                            } else if g.co.contains(b, a) {
                                std::cmp::Ordering::Greater
                            } else {
                                std::cmp::Ordering::Equal
                            }
                        })
                        .ok_or_else(|| violation(format!("no write can justify {gev}")))?;
                    rec.fallbacks.push(format!(
                        "{gev}: source {} unavailable, using {best}",
                        src.map(|s| s.to_string()).unwrap_or_else(|| "none".into())
                    ));
                    available(best).expect("filtered on availability")
                }
            };
            just = Some(j);
            let val = es.label(j).and_then(|l| l.val()).unwrap_or(0);
            thread.step(val).expect("load available").label
        } else {
            thread.step(0).expect("instruction available").label
        };
        let pred = path.last().copied();
        let reuse = es.children(t, pred).into_iter().find(|&c| {
            es.label(c) == Some(label)
                && match just {
                    Some(j) => es
                        .jf_source(c)
                        .and_then(|cj| es.ew_class(cj))
                        .is_some_and(|cls| cls.contains(&j)),
                    None => true,
                }
        });
        if let Some(c) = reuse {
            path.push(c);
            continue;
        }
        let placement = match label {
            Label::Write { loc, .. } => {
                let join = st.x.iter().copied().find(|&w| {
                    issued_prev.contains(&st.s2g(w))
                        && st.s2g(w) == gev
                        && es.label(w) == Some(label)
                });
                Some(match join {
                    Some(w) => WritePlacement::JoinEw(w),
                    None => {
                        let classes = es.co_classes(loc);
                        let anchor = classes
                            .iter()
                            .rev()
                            .find(|c| {
                                let img = s2g(&es, c[0]);
                                img.is_init() || g.co.contains(img, gev)
                            })
                            .map(|c| c[0])
                            .unwrap_or(EventId::init(loc));
                        WritePlacement::CoAfter(anchor)
                    }
                })
            }
            _ => None,
        };
        let choice = ConstructionChoice {
            thread: t,
            label,
            po_predecessor: pred,
            justification: just,
            placement,
        };
        let (n, id) = es.add_event(&choice, p).map_err(|e: EsError| {
            violation(format!(
                "cannot add {} for {gev}: {e}",
                label.render(&g.locations)
            ))
        })?;
        es = n;
        rec.added.push(id);
        if let Some(j) = just {
            rec.jf.push((j, id));
        }
        match placement {
            Some(WritePlacement::JoinEw(w)) => rec.ew.push((w, id)),
            Some(WritePlacement::CoAfter(w)) => rec.co_after.push((w, id)),
            None => {}
        }
        path.push(id);
    }
    let mut x: EventSet =
        st.x.iter()
            .copied()
            .filter(|e| e.tid != t || e.is_init())
            .collect();
    x.extend(path.iter().copied());
    let out = SimState {
        program: p,
        graph: g,
        tc: next.clone(),
        es,
        x,
    };
    rec.verdict = check_simrel(&out);
    if !rec.verdict.consistent {
        return Err(violation(format!(
            "simulation relation fails clauses {} after {step}",
            rec.verdict.violated.join(", ")
        )));
    }
    Ok((out, rec))
}

#[derive(Clone, Debug)]
pub struct SimRun {
    pub es: EventStructure,
    pub x: EventSet,
    pub traversal: Traversal,
    pub records: Vec<StepRecord>,
}

/// Runs the whole construction for `g` and checks that the final selected
/// set induces `g` again.
pub fn run_simulation(p: &Program, g: &ExecutionGraph) -> Result<SimRun, SimError> {
    run_simulation_observed(p, g, |_, _| {})
}

/// `run_simulation`, calling `observe` with the step index (0 for the
/// initial state) after every state change.
pub fn run_simulation_observed(
    p: &Program,
    g: &ExecutionGraph,
    mut observe: impl FnMut(usize, &SimState),
) -> Result<SimRun, SimError> {
    if !g.is_well_formed() {
        return Err(SimError::Precondition("graph is not well formed".into()));
    }
    let v = check_immsc(g);
    if !v.consistent {
        return Err(SimError::Precondition(format!("graph is {v}")));
    }
    let traversal = full_traversal(g)?;
    let mut st = sim_init(p, g)?;
    observe(0, &st);
    let mut records = Vec::new();
    for (i, step) in traversal.steps.iter().enumerate() {
        let (n, rec) = sim_step(&st, *step, &traversal.configs[i + 1], i + 1)?;
        st = n;
        observe(i + 1, &st);
        records.push(rec);
    }
    let end = traversal.steps.len();
    if !st.es.is_extracted(&st.x) {
        return Err(SimError::TheoremViolation {
            step: end,
            msg: "final selection is not extracted".into(),
        });
    }
    let back = st
        .es
        .associated_graph(&st.x, p)
        .map_err(|e| SimError::TheoremViolation {
            step: end,
            msg: e.to_string(),
        })?;
    if &back != g {
        return Err(SimError::TheoremViolation {
            step: end,
            msg: "extracted graph differs from the target".into(),
        });
    }
    Ok(SimRun {
        es: st.es,
        x: st.x,
        traversal,
        records,
    })
}
