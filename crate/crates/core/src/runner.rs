//! Evaluating a litmus program under a model: which `exists` clauses are
//! reachable, and how that compares with the annotated expectations.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use crate::es::{default_bounds, weakestmo_outcomes, EnumBounds, EsError};
use crate::graph::ExecutionGraph;
use crate::lang::{enumerate_executions, LangError, Program, Registers};
use crate::models::{
    check_armv8, check_imm, check_immsc, check_immsc_strict, check_rc11, check_tso, map_to_armv8,
    map_to_tso, split_sc, ModelError, TsoScheme, Verdict,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Model {
    Imm,
    ImmSc,
    Rc11,
    Tso(TsoScheme),
    Armv8,
    Weakestmo,
}

impl Model {
    /// The key used by `expect` annotations; both TSO schemes share `tso`.
    pub fn expectation_key(self) -> &'static str {
        match self {
            Model::Imm => "imm",
            Model::ImmSc => "immsc",
            Model::Rc11 => "rc11",
            Model::Tso(_) => "tso",
            Model::Armv8 => "armv8",
            Model::Weakestmo => "weakestmo",
        }
    }

    pub fn is_axiomatic(self) -> bool {
        self != Model::Weakestmo
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Model::Tso(s) => write!(f, "tso:{}", s.as_str()),
            m => f.write_str(m.expectation_key()),
        }
    }
}

impl FromStr for Model {
    type Err = RunError;

    /// Accepts `imm`, `immsc`, `rc11`, `armv8`, `weakestmo` and
    /// `tso:<scheme>`.
    fn from_str(s: &str) -> Result<Self, RunError> {
        Ok(match s {
            "imm" => Model::Imm,
            "immsc" => Model::ImmSc,
            "rc11" => Model::Rc11,
            "armv8" => Model::Armv8,
            "weakestmo" => Model::Weakestmo,
            "tso:fence-after-w" => Model::Tso(TsoScheme::FenceAfterW),
            "tso:fence-before-r" => Model::Tso(TsoScheme::FenceBeforeR),
            other => return Err(RunError::UnknownModel(other.to_string())),
        })
    }
}

impl FromStr for TsoScheme {
    type Err = RunError;

    fn from_str(s: &str) -> Result<Self, RunError> {
        match s {
            "fence-after-w" => Ok(TsoScheme::FenceAfterW),
            "fence-before-r" => Ok(TsoScheme::FenceBeforeR),
            other => Err(RunError::UnknownModel(format!("tso scheme {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RunError {
    #[error("unknown model `{0}`")]
    UnknownModel(String),
    #[error(transparent)]
    Lang(#[from] LangError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Es(#[from] EsError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct Options {
    /// Fold psc_base into IMM_SC's thin-air acyclicity.
    pub strict_psc: bool,
    /// Overrides the Weakestmo search bounds.
    pub bounds: Option<EnumBounds>,
}

/// The verdict of `model` on one execution graph. Weakestmo is not an
/// axiomatic model and is rejected here.
pub fn verdict(g: &ExecutionGraph, model: Model, opts: Options) -> Result<Verdict, RunError> {
    Ok(match model {
        Model::Imm => check_imm(g),
        Model::ImmSc if opts.strict_psc => check_immsc_strict(g),
        Model::ImmSc => check_immsc(g),
        Model::Rc11 => check_rc11(g),
        Model::Tso(s) => check_tso(&map_to_tso(g, s)?),
        Model::Armv8 => check_armv8(&map_to_armv8(g)?),
        Model::Weakestmo => {
            return Err(RunError::UnknownModel(
                "weakestmo has no graph predicate".into(),
            ))
        }
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ClauseOutcome {
    pub clause: String,
    pub allowed: bool,
    pub expected: Option<bool>,
}

impl ClauseOutcome {
    pub fn matches(&self) -> bool {
        self.expected.is_none_or(|e| e == self.allowed)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TestOutcome {
    pub name: String,
    pub model: String,
    /// Candidates enumerated (structures explored for Weakestmo).
    pub candidates: usize,
    /// Consistent candidates (distinct outcomes for Weakestmo).
    pub consistent: usize,
    pub clauses: Vec<ClauseOutcome>,
}

impl TestOutcome {
    pub fn matches(&self) -> bool {
        self.clauses.iter().all(ClauseOutcome::matches)
    }
}

/// Final register states reachable under `model`, with the candidate and
/// consistent counts.
pub fn outcomes(
    p: &Program,
    model: Model,
    opts: Options,
) -> Result<(BTreeSet<Registers>, usize, usize), RunError> {
    if model == Model::Weakestmo {
        let bounds = opts.bounds.unwrap_or_else(|| default_bounds(p));
        let (outs, explored) = weakestmo_outcomes(p, bounds, |_| false)?;
        let n = outs.len();
        return Ok((outs, explored, n));
    }
    let gs = enumerate_executions(p)?;
    let mut outs = BTreeSet::new();
    let mut consistent = 0;
    for g in &gs {
        if verdict(g, model, opts)?.consistent {
            consistent += 1;
            outs.insert(p.registers(g)?);
        }
    }
    Ok((outs, gs.len(), consistent))
}

/// Evaluates every `exists` clause of `p` under `model`.
pub fn evaluate(p: &Program, model: Model, opts: Options) -> Result<TestOutcome, RunError> {
    let name = p.name.clone().unwrap_or_else(|| "unnamed".into());
    let (candidates, consistent, outs) = if model == Model::Weakestmo {
        // Stop as soon as every clause is witnessed.
        let bounds = opts.bounds.unwrap_or_else(|| default_bounds(p));
        let mut open: Vec<bool> = vec![true; p.exists.len()];
        let (outs, explored) = weakestmo_outcomes(p, bounds, |r| {
            for (i, c) in p.exists.iter().enumerate() {
                if c.holds(r) {
                    open[i] = false;
                }
            }
            !open.is_empty() && open.iter().all(|o| !o)
        })?;
        (explored, outs.len(), outs)
    } else {
        let (outs, n, c) = outcomes(p, model, opts)?;
        (n, c, outs)
    };
    let clauses = p
        .exists
        .iter()
        .map(|c| ClauseOutcome {
            clause: c.text.clone(),
            allowed: outs.iter().any(|r| c.holds(r)),
            expected: c.expectation(model.expectation_key()),
        })
        .collect();
    Ok(TestOutcome {
        name,
        model: model.to_string(),
        candidates,
        consistent,
        clauses,
    })
}

/// Compilation and strength implications that must hold on every
/// candidate; returns a description of each one that fails.
pub fn implication_violations(g: &ExecutionGraph) -> Result<Vec<String>, RunError> {
    let immsc = check_immsc(g).consistent;
    if immsc {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for s in [TsoScheme::FenceAfterW, TsoScheme::FenceBeforeR] {
        if check_tso(&map_to_tso(g, s)?).consistent {
            out.push(format!("tso:{} consistent but immsc not", s.as_str()));
        }
    }
    if check_armv8(&map_to_armv8(g)?).consistent {
        out.push("armv8 consistent but immsc not".into());
    }
    if check_imm(&split_sc(g)).consistent {
        out.push("imm(split_sc) consistent but immsc not".into());
    }
    if check_rc11(g).consistent {
        out.push("rc11 consistent but immsc not".into());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{LB, LB_DATA, LB_FAKE};
    use crate::lang::parse_litmus;

    fn allowed(src: &str, m: Model) -> bool {
        evaluate(&parse_litmus(src).unwrap(), m, Options::default())
            .unwrap()
            .clauses[0]
            .allowed
    }

    #[test]
    fn model_names_round_trip() {
        for m in [
            Model::Imm,
            Model::ImmSc,
            Model::Rc11,
            Model::Tso(TsoScheme::FenceAfterW),
            Model::Tso(TsoScheme::FenceBeforeR),
            Model::Armv8,
            Model::Weakestmo,
        ] {
            assert_eq!(m.to_string().parse::<Model>().unwrap(), m);
        }
        assert!("power".parse::<Model>().is_err());
    }

    #[test]
    fn lb_family() {
        assert!(allowed(LB, Model::Imm));
        assert!(!allowed(LB_FAKE, Model::Imm));
        assert!(!allowed(LB_DATA, Model::ImmSc));
        assert!(allowed(LB_FAKE, Model::Weakestmo));
        assert!(!allowed(LB_DATA, Model::Weakestmo));
        assert!(!allowed(LB, Model::Tso(TsoScheme::FenceAfterW)));
        assert!(allowed(LB, Model::Armv8));
    }

    #[test]
    fn no_violations_on_lb() {
        let p = parse_litmus(LB_FAKE).unwrap();
        for g in enumerate_executions(&p).unwrap() {
            assert!(implication_violations(&g).unwrap().is_empty());
        }
    }
}
