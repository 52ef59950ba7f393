//! The litmus language: programs, parsing, thread semantics and execution
//! enumeration.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::ExecutionGraph;
use crate::rel::{Carrier, EventId, Rel};

pub type Loc = u32;
pub type Val = i64;

/// Access mode. `rlx ⊏ acq, rel ⊏ acqrel ⊏ sc`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Rlx,
    Acq,
    Rel,
    AcqRel,
    Sc,
}

impl Mode {
    /// `⊒acq`
    pub fn is_acq(self) -> bool {
        matches!(self, Mode::Acq | Mode::AcqRel | Mode::Sc)
    }

    /// `⊒rel`
    pub fn is_rel(self) -> bool {
        matches!(self, Mode::Rel | Mode::AcqRel | Mode::Sc)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Rlx => "rlx",
            Mode::Acq => "acq",
            Mode::Rel => "rel",
            Mode::AcqRel => "acqrel",
            Mode::Sc => "sc",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "rlx" => Mode::Rlx,
            "acq" => Mode::Acq,
            "rel" => Mode::Rel,
            "acqrel" => Mode::AcqRel,
            "sc" => Mode::Sc,
            _ => return Err(format!("unknown mode `{s}`")),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Kind {
    R,
    W,
    F,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Label {
    Read { mode: Mode, loc: Loc, val: Val },
    Write { mode: Mode, loc: Loc, val: Val },
    Fence { mode: Mode },
}

impl Label {
    /// The label of the initialization write for `loc`.
    pub fn init(loc: Loc) -> Label {
        Label::Write {
            mode: Mode::Rlx,
            loc,
            val: 0,
        }
    }

    pub fn kind(&self) -> Kind {
        match self {
            Label::Read { .. } => Kind::R,
            Label::Write { .. } => Kind::W,
            Label::Fence { .. } => Kind::F,
        }
    }

    pub fn is_read(&self) -> bool {
        self.kind() == Kind::R
    }

    pub fn is_write(&self) -> bool {
        self.kind() == Kind::W
    }

    pub fn is_fence(&self) -> bool {
        self.kind() == Kind::F
    }

    pub fn mode(&self) -> Mode {
        match *self {
            Label::Read { mode, .. } | Label::Write { mode, .. } | Label::Fence { mode } => mode,
        }
    }

    pub fn loc(&self) -> Option<Loc> {
        match *self {
            Label::Read { loc, .. } | Label::Write { loc, .. } => Some(loc),
            Label::Fence { .. } => None,
        }
    }

    pub fn val(&self) -> Option<Val> {
        match *self {
            Label::Read { val, .. } | Label::Write { val, .. } => Some(val),
            Label::Fence { .. } => None,
        }
    }

    /// Same type, mode and location; values may differ.
    pub fn same_shape(&self, other: &Label) -> bool {
        self.kind() == other.kind() && self.mode() == other.mode() && self.loc() == other.loc()
    }

    pub fn with_mode(self, mode: Mode) -> Label {
        match self {
            Label::Read { loc, val, .. } => Label::Read { mode, loc, val },
            Label::Write { loc, val, .. } => Label::Write { mode, loc, val },
            Label::Fence { .. } => Label::Fence { mode },
        }
    }

    pub fn render(&self, locations: &[String]) -> String {
        let name = |l: Loc| {
            locations
                .get(l as usize)
                .cloned()
                .unwrap_or_else(|| format!("l{l}"))
        };
        match *self {
            Label::Read { mode, loc, val } => format!("R{mode}({},{val})", name(loc)),
            Label::Write { mode, loc, val } => format!("W{mode}({},{val})", name(loc)),
            Label::Fence { mode } => format!("F{mode}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Expr {
    Const(Val),
    Reg(String),
    Add(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
}

impl Expr {
    fn regs(&self, out: &mut Vec<String>) {
        match self {
            Expr::Const(_) => {}
            Expr::Reg(r) => out.push(r.clone()),
            Expr::Add(a, b) | Expr::Mul(a, b) => {
                a.regs(out);
                b.regs(out);
            }
        }
    }

    fn eval(&self, regs: &BTreeMap<String, (Val, u32)>) -> Val {
        match self {
            Expr::Const(v) => *v,
            Expr::Reg(r) => regs[r].0,
            Expr::Add(a, b) => a.eval(regs).wrapping_add(b.eval(regs)),
            Expr::Mul(a, b) => a.eval(regs).wrapping_mul(b.eval(regs)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Instruction {
    Load { mode: Mode, reg: String, loc: Loc },
    Store { mode: Mode, loc: Loc, expr: Expr },
    Fence { mode: Mode },
}

/// `reg = val` in thread `tid`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Atom {
    pub tid: u32,
    pub reg: String,
    pub val: Val,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Expectation {
    pub model: String,
    pub allowed: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExistsClause {
    pub text: String,
    pub atoms: Vec<Atom>,
    pub expectations: Vec<Expectation>,
}

impl ExistsClause {
    pub fn expectation(&self, model: &str) -> Option<bool> {
        self.expectations
            .iter()
            .find(|e| e.model == model)
            .map(|e| e.allowed)
    }

    pub fn holds(&self, regs: &Registers) -> bool {
        self.atoms
            .iter()
            .all(|a| regs.get(&(a.tid, a.reg.clone())) == Some(&a.val))
    }
}

/// Final register values keyed by (thread, register).
pub type Registers = BTreeMap<(u32, String), Val>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Program {
    pub name: Option<String>,
    pub locations: Vec<String>,
    pub values: Vec<Val>,
    /// Thread `i + 1` runs `threads[i]`.
    pub threads: Vec<Vec<Instruction>>,
    pub exists: Vec<ExistsClause>,
}

impl Default for Program {
    fn default() -> Self {
        Program {
            name: None,
            locations: Vec::new(),
            values: vec![0, 1],
            threads: Vec::new(),
            exists: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LangError {
    #[error("{line}:{col}: {msg}")]
    Syntax {
        line: usize,
        col: usize,
        msg: String,
    },
    #[error("{line}:{col}: register `{reg}` used before assignment")]
    UnassignedRegister {
        line: usize,
        col: usize,
        reg: String,
    },
    #[error("thread {tid} needs more than the {given} read values supplied")]
    Arity { tid: u32, given: usize },
    #[error("program has no thread {0}")]
    NoThread(u32),
    #[error("execution does not match thread {0}")]
    Mismatch(u32),
}

impl Program {
    pub fn thread_ids(&self) -> impl Iterator<Item = u32> {
        1..=self.threads.len() as u32
    }

    pub fn code(&self, tid: u32) -> Result<&[Instruction], LangError> {
        tid.checked_sub(1)
            .and_then(|i| self.threads.get(i as usize))
            .map(Vec::as_slice)
            .ok_or(LangError::NoThread(tid))
    }

    pub fn loads(&self, tid: u32) -> usize {
        self.code(tid)
            .map(|c| {
                c.iter()
                    .filter(|i| matches!(i, Instruction::Load { .. }))
                    .count()
            })
            .unwrap_or(0)
    }

    pub fn loc_index(&self, name: &str) -> Option<Loc> {
        self.locations
            .iter()
            .position(|l| l == name)
            .map(|i| i as Loc)
    }

    /// Final registers of an execution, obtained by re-running each thread
    /// with the values its reads return in `g`.
    pub fn registers(&self, g: &ExecutionGraph) -> Result<Registers, LangError> {
        let mut out = Registers::new();
        for tid in self.thread_ids() {
            let reads: Vec<Val> = g
                .thread_events(tid)
                .into_iter()
                .filter_map(|e| match g.label(e) {
                    Some(Label::Read { val, .. }) => Some(val),
                    _ => None,
                })
                .collect();
            let tr = run_thread(self, tid, &reads)?;
            for (r, v) in tr.regs {
                out.insert((tid, r), v);
            }
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------- parsing

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Num(Val),
    Sym(&'static str),
}

struct Lexer<'a> {
    line: usize,
    src: &'a str,
    toks: Vec<(usize, Tok)>,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn new(line: usize, src: &'a str) -> Result<Self, LangError> {
        let mut toks = Vec::new();
        let b = src.as_bytes();
        let mut i = 0;
        while i < b.len() {
            let c = b[i] as char;
            let col = i + 1;
            if c.is_whitespace() {
                i += 1;
            } else if c.is_ascii_alphabetic() || c == '_' {
                let s = i;
                while i < b.len() && ((b[i] as char).is_ascii_alphanumeric() || b[i] == b'_') {
                    i += 1;
                }
                toks.push((col, Tok::Ident(src[s..i].to_string())));
            } else if c.is_ascii_digit() {
                let s = i;
                while i < b.len() && (b[i] as char).is_ascii_digit() {
                    i += 1;
                }
                let v = src[s..i].parse().map_err(|_| LangError::Syntax {
                    line,
                    col,
                    msg: "number out of range".into(),
                })?;
                toks.push((col, Tok::Num(v)));
            } else {
                let sym = ["|||", "&&", "(", ")", ",", ";", "=", "+", "*", ":"]
                    .into_iter()
                    .find(|s| src[i..].starts_with(s))
                    .ok_or_else(|| LangError::Syntax {
                        line,
                        col,
                        msg: format!("unexpected character `{c}`"),
                    })?;
                toks.push((col, Tok::Sym(sym)));
                i += sym.len();
            }
        }
        Ok(Lexer {
            line,
            src,
            toks,
            pos: 0,
        })
    }

    fn col(&self) -> usize {
        self.toks
            .get(self.pos)
            .map(|t| t.0)
            .unwrap_or(self.src.len() + 1)
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, LangError> {
        Err(LangError::Syntax {
            line: self.line,
            col: self.col(),
            msg: msg.into(),
        })
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.1)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|t| t.1.clone());
        self.pos += 1;
        t
    }

    fn at_end(&self) -> bool {
        self.pos >= self.toks.len()
    }

    fn eat(&mut self, sym: &str) -> bool {
        if matches!(self.peek(), Some(Tok::Sym(s)) if *s == sym) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, sym: &str) -> Result<(), LangError> {
        if self.eat(sym) {
            Ok(())
        } else {
            self.err(format!("expected `{sym}`"))
        }
    }

    fn ident(&mut self) -> Result<String, LangError> {
        match self.peek() {
            Some(Tok::Ident(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => self.err("expected an identifier"),
        }
    }

    fn num(&mut self) -> Result<Val, LangError> {
        match self.peek() {
            Some(Tok::Num(v)) => {
                let v = *v;
                self.pos += 1;
                Ok(v)
            }
            _ => self.err("expected a number"),
        }
    }

    fn finish(&mut self) -> Result<(), LangError> {
        self.eat(";");
        if self.at_end() {
            Ok(())
        } else {
            self.err("unexpected trailing input")
        }
    }
}

struct Parser {
    prog: Program,
    locations_declared: bool,
    /// Registers assigned so far in each thread.
    assigned: Vec<Vec<String>>,
    saw_separator: bool,
}

impl Parser {
    fn current_thread(&mut self) -> usize {
        if self.prog.threads.is_empty() {
            self.prog.threads.push(Vec::new());
            self.assigned.push(Vec::new());
        }
        self.prog.threads.len() - 1
    }

    fn location(&self, lx: &mut Lexer) -> Result<Loc, LangError> {
        let col = lx.col();
        let name = lx.ident()?;
        self.prog.loc_index(&name).ok_or(LangError::Syntax {
            line: lx.line,
            col,
            msg: format!("undeclared location `{name}`"),
        })
    }

    fn mode(lx: &mut Lexer) -> Result<Mode, LangError> {
        let col = lx.col();
        let m = lx.ident()?;
        m.parse().map_err(|msg| LangError::Syntax {
            line: lx.line,
            col,
            msg,
        })
    }

    fn expr(&self, lx: &mut Lexer, t: usize) -> Result<Expr, LangError> {
        let mut e = self.term(lx, t)?;
        while lx.eat("+") {
            e = Expr::Add(Box::new(e), Box::new(self.term(lx, t)?));
        }
        Ok(e)
    }

    fn term(&self, lx: &mut Lexer, t: usize) -> Result<Expr, LangError> {
        let mut e = self.factor(lx, t)?;
        while lx.eat("*") {
            e = Expr::Mul(Box::new(e), Box::new(self.factor(lx, t)?));
        }
        Ok(e)
    }

    fn factor(&self, lx: &mut Lexer, t: usize) -> Result<Expr, LangError> {
        let col = lx.col();
        match lx.peek() {
            Some(Tok::Num(_)) => Ok(Expr::Const(lx.num()?)),
            Some(Tok::Ident(_)) => {
                let r = lx.ident()?;
                if !self.assigned[t].contains(&r) {
                    return Err(LangError::UnassignedRegister {
                        line: lx.line,
                        col,
                        reg: r,
                    });
                }
                Ok(Expr::Reg(r))
            }
            Some(Tok::Sym("(")) => {
                lx.next();
                let e = self.expr(lx, t)?;
                lx.expect(")")?;
                Ok(e)
            }
            _ => lx.err("expected an expression"),
        }
    }

    fn instruction(&mut self, lx: &mut Lexer) -> Result<(), LangError> {
        let t = self.current_thread();
        let first = lx.ident()?;
        let ins = if lx.eat("=") {
            let col = lx.col();
            if lx.ident()? != "load" {
                return Err(LangError::Syntax {
                    line: lx.line,
                    col,
                    msg: "expected `load`".into(),
                });
            }
            lx.expect("(")?;
            let col = lx.col();
            let mode = Self::mode(lx)?;
            if matches!(mode, Mode::Rel | Mode::AcqRel) {
                return Err(LangError::Syntax {
                    line: lx.line,
                    col,
                    msg: format!("loads cannot be `{mode}`"),
                });
            }
            lx.expect(",")?;
            let loc = self.location(lx)?;
            lx.expect(")")?;
            Instruction::Load {
                mode,
                reg: first.clone(),
                loc,
            }
        } else if first == "store" {
            lx.expect("(")?;
            let col = lx.col();
            let mode = Self::mode(lx)?;
            if matches!(mode, Mode::Acq | Mode::AcqRel) {
                return Err(LangError::Syntax {
                    line: lx.line,
                    col,
                    msg: format!("stores cannot be `{mode}`"),
                });
            }
            lx.expect(",")?;
            let loc = self.location(lx)?;
            lx.expect(",")?;
            let expr = self.expr(lx, t)?;
            lx.expect(")")?;
            Instruction::Store { mode, loc, expr }
        } else if first == "fence" {
            lx.expect("(")?;
            let col = lx.col();
            let mode = Self::mode(lx)?;
            if mode == Mode::Rlx {
                return Err(LangError::Syntax {
                    line: lx.line,
                    col,
                    msg: "fences cannot be `rlx`".into(),
                });
            }
            lx.expect(")")?;
            Instruction::Fence { mode }
        } else {
            return lx.err(format!("unknown instruction `{first}`"));
        };
        lx.finish()?;
        if let Instruction::Load { reg, .. } = &ins {
            if self.prog.locations.contains(reg) {
                return lx.err(format!("register `{reg}` shadows a location"));
            }
            if !self.assigned[t].contains(reg) {
                self.assigned[t].push(reg.clone());
            }
        }
        self.prog.threads[t].push(ins);
        Ok(())
    }

    fn exists(&mut self, lx: &mut Lexer, text: &str) -> Result<(), LangError> {
        lx.expect("(")?;
        let mut atoms = Vec::new();
        loop {
            let col = lx.col();
            let (tid, reg) = match (lx.next(), lx.peek().cloned()) {
                (Some(Tok::Num(t)), Some(Tok::Sym(":"))) => {
                    lx.next();
                    (Some(t as u32), lx.ident()?)
                }
                (Some(Tok::Ident(r)), _) => (None, r),
                _ => {
                    lx.pos -= 1;
                    return lx.err("expected `reg = value` or `T:reg = value`");
                }
            };
            lx.expect("=")?;
            let val = lx.num()?;
            let owners: Vec<u32> = self
                .assigned
                .iter()
                .enumerate()
                .filter(|(i, regs)| regs.contains(&reg) && tid.is_none_or(|t| t == *i as u32 + 1))
                .map(|(i, _)| i as u32 + 1)
                .collect();
            let tid = match owners.as_slice() {
                [t] => *t,
                [] => {
                    return Err(LangError::Syntax {
                        line: lx.line,
                        col,
                        msg: format!("register `{reg}` is never assigned"),
                    })
                }
                _ => {
                    return Err(LangError::Syntax {
                        line: lx.line,
                        col,
                        msg: format!("register `{reg}` is ambiguous; qualify it as `T:{reg}`"),
                    })
                }
            };
            atoms.push(Atom { tid, reg, val });
            if !lx.eat("&&") {
                break;
            }
        }
        lx.expect(")")?;
        lx.finish()?;
        self.prog.exists.push(ExistsClause {
            text: text.trim().trim_end_matches(';').to_string(),
            atoms,
            expectations: Vec::new(),
        });
        Ok(())
    }

    fn line(&mut self, lx: &mut Lexer, text: &str) -> Result<(), LangError> {
        if lx.eat("|||") {
            if self.prog.threads.is_empty() {
                self.current_thread();
            }
            self.prog.threads.push(Vec::new());
            self.assigned.push(Vec::new());
            self.saw_separator = true;
            return lx.finish();
        }
        let kw = match lx.peek() {
            Some(Tok::Ident(s)) => s.clone(),
            _ => return lx.err("expected a declaration or an instruction"),
        };
        let is_assign = matches!(lx.toks.get(1), Some((_, Tok::Sym("="))));
        match kw.as_str() {
            "name" if !is_assign => {
                lx.next();
                let rest = text.trim_start()["name".len()..]
                    .trim()
                    .trim_end_matches(';');
                self.prog.name = Some(rest.trim().to_string());
                Ok(())
            }
            "locations" if !is_assign => {
                lx.next();
                if self.locations_declared {
                    return lx.err("locations declared twice");
                }
                if !self.prog.threads.is_empty() {
                    return lx.err("locations must be declared before the threads");
                }
                while let Some(Tok::Ident(_)) = lx.peek() {
                    let col = lx.col();
                    let l = lx.ident()?;
                    if self.prog.locations.contains(&l) {
                        return Err(LangError::Syntax {
                            line: lx.line,
                            col,
                            msg: format!("duplicate location `{l}`"),
                        });
                    }
                    self.prog.locations.push(l);
                }
                self.locations_declared = true;
                lx.finish()
            }
            "values" if !is_assign => {
                lx.next();
                let mut vals = Vec::new();
                while let Some(Tok::Num(_)) = lx.peek() {
                    vals.push(lx.num()?);
                }
                if vals.is_empty() {
                    return lx.err("expected at least one value");
                }
                vals.sort_unstable();
                vals.dedup();
                self.prog.values = vals;
                lx.finish()
            }
            "exists" if !is_assign => {
                lx.next();
                self.exists(lx, &text.trim_start()["exists".len()..])
            }
            "expect" if !is_assign => {
                lx.next();
                let model = lx.ident()?;
                let col = lx.col();
                let allowed = match lx.ident()?.as_str() {
                    "allow" => true,
                    "forbid" => false,
                    other => {
                        return Err(LangError::Syntax {
                            line: lx.line,
                            col,
                            msg: format!("expected `allow` or `forbid`, found `{other}`"),
                        })
                    }
                };
                lx.finish()?;
                match self.prog.exists.last_mut() {
                    Some(c) => {
                        c.expectations.push(Expectation { model, allowed });
                        Ok(())
                    }
                    None => Err(LangError::Syntax {
                        line: lx.line,
                        col: 1,
                        msg: "`expect` without a preceding `exists`".into(),
                    }),
                }
            }
            _ => {
                if !self.prog.exists.is_empty() {
                    return lx.err("instructions must precede the `exists` clauses");
                }
                self.instruction(lx)
            }
        }
    }
}

/// Parses the line-oriented litmus format.
pub fn parse_litmus(text: &str) -> Result<Program, LangError> {
    let mut p = Parser {
        prog: Program::default(),
        locations_declared: false,
        assigned: Vec::new(),
        saw_separator: false,
    };
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split("//").next().unwrap_or("");
        if line.trim().is_empty() {
            continue;
        }
        let mut lx = Lexer::new(i + 1, line)?;
        p.line(&mut lx, line)?;
    }
    let _ = p.saw_separator;
    Ok(p.prog)
}

// ------------------------------------------------------- thread semantics

/// Deterministic state of one thread: program counter and registers. Each
/// register remembers the serial of the load that defined it.
#[derive(Clone, Debug)]
pub struct ThreadState<'a> {
    code: &'a [Instruction],
    tid: u32,
    pc: usize,
    regs: BTreeMap<String, (Val, u32)>,
}

/// One reduction of the thread semantics.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Step {
    pub label: Label,
    /// Serials of the loads this event depends on through registers.
    pub deps: Vec<u32>,
}

impl<'a> ThreadState<'a> {
    pub fn new(p: &'a Program, tid: u32) -> Result<Self, LangError> {
        Ok(ThreadState {
            code: p.code(tid)?,
            tid,
            pc: 0,
            regs: BTreeMap::new(),
        })
    }

    pub fn tid(&self) -> u32 {
        self.tid
    }

    /// Serial of the next event (1-based).
    pub fn serial(&self) -> u32 {
        self.pc as u32 + 1
    }

    pub fn next_instruction(&self) -> Option<&'a Instruction> {
        self.code.get(self.pc)
    }

    pub fn is_done(&self) -> bool {
        self.pc >= self.code.len()
    }

    /// Executes the next instruction. Loads take `read_val`; other
    /// instructions ignore it. Returns `None` when the thread is finished.
    pub fn step(&mut self, read_val: Val) -> Option<Step> {
        let ins = self.code.get(self.pc)?;
        let serial = self.serial();
        let step = match ins {
            Instruction::Load { mode, reg, loc } => {
                self.regs.insert(reg.clone(), (read_val, serial));
                Step {
                    label: Label::Read {
                        mode: *mode,
                        loc: *loc,
                        val: read_val,
                    },
                    deps: Vec::new(),
                }
            }
            Instruction::Store { mode, loc, expr } => {
                let mut used = Vec::new();
                expr.regs(&mut used);
                let mut deps: Vec<u32> = used.iter().map(|r| self.regs[r].1).collect();
                deps.sort_unstable();
                deps.dedup();
                Step {
                    label: Label::Write {
                        mode: *mode,
                        loc: *loc,
                        val: expr.eval(&self.regs),
                    },
                    deps,
                }
            }
            Instruction::Fence { mode } => Step {
                label: Label::Fence { mode: *mode },
                deps: Vec::new(),
            },
        };
        self.pc += 1;
        Some(step)
    }

    pub fn registers(&self) -> BTreeMap<String, Val> {
        self.regs
            .iter()
            .map(|(r, (v, _))| (r.clone(), *v))
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct Trace {
    pub tid: u32,
    pub events: Vec<(EventId, Label)>,
    /// Load-to-event register flow.
    pub data: Rel,
    pub regs: BTreeMap<String, Val>,
}

/// Runs thread `tid` to completion, loads taking `read_values` in order.
pub fn run_thread(p: &Program, tid: u32, read_values: &[Val]) -> Result<Trace, LangError> {
    let mut st = ThreadState::new(p, tid)?;
    let mut vals = read_values.iter();
    let mut events = Vec::new();
    let mut deps = Vec::new();
    while let Some(ins) = st.next_instruction() {
        let v = match ins {
            Instruction::Load { .. } => *vals.next().ok_or(LangError::Arity {
                tid,
                given: read_values.len(),
            })?,
            _ => 0,
        };
        let serial = st.serial();
        let step = st.step(v).expect("instruction available");
        let id = EventId::new(tid, serial);
        deps.extend(step.deps.iter().map(|&d| (EventId::new(tid, d), id)));
        events.push((id, step.label));
    }
    let carrier = Carrier::new(events.iter().map(|e| e.0));
    let data = Rel::from_pairs(&carrier, deps).expect("trace events");
    Ok(Trace {
        tid,
        events,
        data,
        regs: st.registers(),
    })
}

/// Every read-value assignment over the value domain for thread `tid`.
fn thread_traces(p: &Program, tid: u32) -> Result<Vec<Trace>, LangError> {
    let n = p.loads(tid);
    let d = p.values.len();
    let total = d.checked_pow(n as u32).unwrap_or(usize::MAX);
    let mut out = Vec::with_capacity(total);
    for mut k in 0..total {
        let mut vals = vec![0; n];
        for v in vals.iter_mut().rev() {
            *v = p.values[k % d];
            k /= d;
        }
        out.push(run_thread(p, tid, &vals)?);
    }
    Ok(out)
}

fn permutations<T: Clone>(items: &[T]) -> Vec<Vec<T>> {
    if items.is_empty() {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, head.clone());
            out.push(tail);
        }
    }
    out
}

/// Odometer over a list of radices; `f` sees each index vector once.
fn for_each_choice(radices: &[usize], mut f: impl FnMut(&[usize])) {
    if radices.contains(&0) {
        return;
    }
    let mut idx = vec![0; radices.len()];
    loop {
        f(&idx);
        let mut i = radices.len();
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            idx[i] += 1;
            if idx[i] < radices[i] {
                break;
            }
            idx[i] = 0;
        }
    }
}

/// All complete, well-formed execution candidates of `p` over its value
/// domain, in a fixed order.
pub fn enumerate_executions(p: &Program) -> Result<Vec<ExecutionGraph>, LangError> {
    let per_thread: Vec<Vec<Trace>> = p
        .thread_ids()
        .map(|t| thread_traces(p, t))
        .collect::<Result<_, _>>()?;
    let radices: Vec<usize> = per_thread.iter().map(Vec::len).collect();
    let mut out = Vec::new();
    for_each_choice(&radices, |choice| {
        let traces: Vec<&Trace> = choice
            .iter()
            .zip(&per_thread)
            .map(|(&i, ts)| &ts[i])
            .collect();
        emit_candidates(p, &traces, &mut out);
    });
    Ok(out)
}

fn emit_candidates(p: &Program, traces: &[&Trace], out: &mut Vec<ExecutionGraph>) {
    let mut labels = BTreeMap::new();
    for l in 0..p.locations.len() as Loc {
        labels.insert(EventId::init(l), Label::init(l));
    }
    let mut data = Vec::new();
    for tr in traces {
        labels.extend(tr.events.iter().copied());
        data.extend(tr.data.pairs());
    }
    let reads: Vec<(EventId, Label)> = labels
        .iter()
        .filter(|(_, l)| l.is_read())
        .map(|(e, l)| (*e, *l))
        .collect();
    let mut sources = Vec::new();
    for (_, rl) in &reads {
        let ws: Vec<EventId> = labels
            .iter()
            .filter(|(_, wl)| wl.is_write() && wl.loc() == rl.loc() && wl.val() == rl.val())
            .map(|(e, _)| *e)
            .collect();
        if ws.is_empty() {
            return;
        }
        sources.push(ws);
    }
    let co_orders: Vec<Vec<Vec<EventId>>> = (0..p.locations.len() as Loc)
        .map(|l| {
            let ws: Vec<EventId> = labels
                .iter()
                .filter(|(e, wl)| !e.is_init() && wl.is_write() && wl.loc() == Some(l))
                .map(|(e, _)| *e)
                .collect();
            permutations(&ws)
        })
        .collect();
    let rf_radices: Vec<usize> = sources.iter().map(Vec::len).collect();
    let co_radices: Vec<usize> = co_orders.iter().map(Vec::len).collect();
    for_each_choice(&rf_radices, |rc| {
        let rf: Vec<(EventId, EventId)> = rc
            .iter()
            .enumerate()
            .map(|(i, &k)| (sources[i][k], reads[i].0))
            .collect();
        for_each_choice(&co_radices, |cc| {
            let mut co = Vec::new();
            for (l, &k) in cc.iter().enumerate() {
                let mut chain = vec![EventId::init(l as Loc)];
                chain.extend(co_orders[l][k].iter().copied());
                for i in 0..chain.len() {
                    for j in i + 1..chain.len() {
                        co.push((chain[i], chain[j]));
                    }
                }
            }
            let g = ExecutionGraph::new(
                p.locations.clone(),
                labels.clone(),
                rf.iter().copied(),
                co,
                data.iter().copied(),
            )
            .expect("enumerated candidates only relate their own events");
            out.push(g);
        });
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    use crate::fixtures::LB;

    fn lb_with(store: &str) -> String {
        LB.replace("store(rlx, y, 1)", store)
    }

    #[test]
    fn parses_lb() {
        let p = parse_litmus(LB).unwrap();
        assert_eq!(p.threads.len(), 2);
        assert!(p.threads.iter().all(|t| t.len() == 2));
        assert_eq!(p.locations, vec!["x", "y"]);
        assert_eq!(p.values, vec![0, 1]);
        assert_eq!(p.exists.len(), 1);
        assert_eq!(
            p.exists[0].atoms[1],
            Atom {
                tid: 2,
                reg: "b".into(),
                val: 1
            }
        );
    }

    #[test]
    fn empty_text_has_no_threads() {
        let p = parse_litmus("").unwrap();
        assert!(p.threads.is_empty());
        let p = parse_litmus("// nothing\n\nlocations x;\n").unwrap();
        assert!(p.threads.is_empty());
    }

    #[test]
    fn rejects_unknown_mode() {
        let e = parse_litmus("locations x;\na = load(rlxx, x)\n").unwrap_err();
        assert!(
            matches!(
                e,
                LangError::Syntax {
                    line: 2,
                    col: 10,
                    ..
                }
            ),
            "{e:?}"
        );
    }

    #[test]
    fn rejects_unassigned_register() {
        let e = parse_litmus("locations x;\nstore(rlx, x, r1 + 1)\n").unwrap_err();
        assert_eq!(
            e,
            LangError::UnassignedRegister {
                line: 2,
                col: 15,
                reg: "r1".into()
            }
        );
        // Registers are per thread.
        let e =
            parse_litmus("locations x;\nr = load(rlx, x)\n|||\nstore(rlx, x, r)\n").unwrap_err();
        assert!(matches!(e, LangError::UnassignedRegister { line: 4, .. }));
    }

    #[test]
    fn rejects_bad_modes_and_locations() {
        assert!(parse_litmus("locations x;\na = load(rel, x)\n").is_err());
        assert!(parse_litmus("locations x;\nstore(acq, x, 1)\n").is_err());
        assert!(parse_litmus("locations x;\nfence(rlx)\n").is_err());
        assert!(parse_litmus("locations x;\na = load(rlx, y)\n").is_err());
        assert!(parse_litmus("locations x;\na = load(rlx, x) extra\n").is_err());
        assert!(parse_litmus("expect imm allow\n").is_err());
    }

    #[test]
    fn parses_header_and_expectations() {
        let src = "name SB;\nlocations x y;\nvalues 2 0 1 2;\nstore(sc, x, 1)\nfence(sc)\na = load(sc, y)\n|||\nstore(sc, y, 1)\na = load(sc, x)\nexists (1:a = 0 && 2:a = 0)\nexpect imm allow\nexpect rc11 forbid\n";
        let p = parse_litmus(src).unwrap();
        assert_eq!(p.name.as_deref(), Some("SB"));
        assert_eq!(p.values, vec![0, 1, 2]);
        assert_eq!(p.threads[0].len(), 3);
        let c = &p.exists[0];
        assert_eq!(c.expectation("imm"), Some(true));
        assert_eq!(c.expectation("rc11"), Some(false));
        assert_eq!(c.expectation("tso"), None);
        assert_eq!(c.atoms[0].tid, 1);
        assert_eq!(c.atoms[1].tid, 2);
        // Unqualified and ambiguous.
        let amb = src.replace("1:a = 0 && 2:a = 0", "a = 0");
        assert!(parse_litmus(&amb).is_err());
    }

    #[test]
    fn expression_precedence() {
        let p = parse_litmus("locations x;\na = load(rlx, x)\nstore(rlx, x, 1 + a * 2)\nstore(rlx, x, (1 + a) * 2)\n").unwrap();
        let tr = run_thread(&p, 1, &[3]).unwrap();
        assert_eq!(tr.events[1].1.val(), Some(7));
        assert_eq!(tr.events[2].1.val(), Some(8));
    }

    #[test]
    fn run_thread_lb_variants() {
        let p = parse_litmus(LB).unwrap();
        let tr = run_thread(&p, 1, &[1]).unwrap();
        assert_eq!(
            tr.events,
            vec![
                (
                    EventId::new(1, 1),
                    Label::Read {
                        mode: Mode::Rlx,
                        loc: 0,
                        val: 1
                    }
                ),
                (
                    EventId::new(1, 2),
                    Label::Write {
                        mode: Mode::Rlx,
                        loc: 1,
                        val: 1
                    }
                ),
            ]
        );
        assert!(tr.data.is_empty());

        let data = parse_litmus(&lb_with("store(rlx, y, a)")).unwrap();
        let tr = run_thread(&data, 1, &[1]).unwrap();
        assert_eq!(tr.events[1].1.val(), Some(1));
        assert_eq!(
            tr.data.pairs().collect::<Vec<_>>(),
            vec![(EventId::new(1, 1), EventId::new(1, 2))]
        );

        let fake = parse_litmus(&lb_with("store(rlx, y, 1 + a * 0)")).unwrap();
        let tr = run_thread(&fake, 1, &[7]).unwrap();
        assert_eq!(tr.events[1].1.val(), Some(1));
        assert_eq!(tr.data.len(), 1);
        assert_eq!(tr.regs["a"], 7);
    }

    #[test]
    fn run_thread_arity() {
        let p = parse_litmus(LB).unwrap();
        assert_eq!(
            run_thread(&p, 1, &[]).unwrap_err(),
            LangError::Arity { tid: 1, given: 0 }
        );
        assert_eq!(run_thread(&p, 3, &[]).unwrap_err(), LangError::NoThread(3));
    }

    #[test]
    fn single_store_has_one_candidate() {
        let p = parse_litmus("locations x;\nstore(rlx, x, 1)\n").unwrap();
        let gs = enumerate_executions(&p).unwrap();
        assert_eq!(gs.len(), 1);
        let g = &gs[0];
        assert!(g.co.contains(EventId::init(0), EventId::new(1, 1)));
        assert!(g.rf.is_empty());
    }

    /// Independent count: for each read-value vector, the product over reads
    /// of the number of same-location same-value writes, times the product
    /// over locations of (number of non-init writes)!.
    fn brute_force_count(p: &Program) -> usize {
        let n1 = p.loads(1);
        let n2 = p.loads(2);
        let mut total = 0;
        let d = &p.values;
        let vectors = |n: usize| -> Vec<Vec<Val>> {
            let mut v = vec![vec![]];
            for _ in 0..n {
                v = v
                    .into_iter()
                    .flat_map(|pre| {
                        d.iter().map(move |x| {
                            let mut q = pre.clone();
                            q.push(*x);
                            q
                        })
                    })
                    .collect();
            }
            v
        };
        for v1 in vectors(n1) {
            for v2 in vectors(n2) {
                let t1 = run_thread(p, 1, &v1).unwrap();
                let t2 = run_thread(p, 2, &v2).unwrap();
                let all: Vec<Label> = t1.events.iter().chain(&t2.events).map(|e| e.1).collect();
                let mut prod = 1usize;
                for r in all.iter().filter(|l| l.is_read()) {
                    let n = all
                        .iter()
                        .filter(|w| w.is_write() && w.loc() == r.loc() && w.val() == r.val())
                        .count()
                        + usize::from(r.val() == Some(0));
                    prod *= n;
                }
                for l in 0..p.locations.len() as Loc {
                    let k = all
                        .iter()
                        .filter(|w| w.is_write() && w.loc() == Some(l))
                        .count();
                    prod *= (1..=k).product::<usize>();
                }
                total += prod;
            }
        }
        total
    }

    #[test]
    fn lb_candidate_count_matches_oracle() {
        let p = parse_litmus(LB).unwrap();
        let gs = enumerate_executions(&p).unwrap();
        assert_eq!(gs.len(), brute_force_count(&p));
        assert_eq!(gs.len(), 4);
        for src in [
            lb_with("store(rlx, y, a)"),
            lb_with("store(rlx, y, 1 + a * 0)"),
        ] {
            let p = parse_litmus(&src).unwrap();
            assert_eq!(
                enumerate_executions(&p).unwrap().len(),
                brute_force_count(&p)
            );
        }
        let two = parse_litmus("locations x;\nstore(rlx, x, 1)\na = load(rlx, x)\n|||\nstore(rlx, x, 1)\nb = load(rlx, x)\n").unwrap();
        assert_eq!(
            enumerate_executions(&two).unwrap().len(),
            brute_force_count(&two)
        );
    }

    #[test]
    fn lb_contains_g_lb() {
        let p = parse_litmus(LB).unwrap();
        let gs = enumerate_executions(&p).unwrap();
        let hit = gs.iter().any(|g| {
            g.rf.contains(EventId::new(2, 2), EventId::new(1, 1))
                && g.rf.contains(EventId::new(1, 2), EventId::new(2, 1))
        });
        assert!(hit);
    }

    #[test]
    fn enumerated_graphs_are_complete_and_ppo_is_in_po() {
        for src in [LB.to_string(), lb_with("store(rlx, y, a)")] {
            let p = parse_litmus(&src).unwrap();
            for g in enumerate_executions(&p).unwrap() {
                assert_eq!(g.rf.codom(), g.reads());
                assert!(g.well_formed().is_empty());
                let r_po_w = Rel::product(g.carrier(), &g.reads(), &g.writes()).inter(&g.po);
                assert!(g.ppo.subset_of(&r_po_w));
            }
        }
    }

    #[test]
    fn lb_fake_and_lb_data_share_dependency_shapes() {
        let fake = parse_litmus(&lb_with("store(rlx, y, 1 + a * 0)")).unwrap();
        let data = parse_litmus(&lb_with("store(rlx, y, a)")).unwrap();
        let gf = enumerate_executions(&fake).unwrap();
        let gd = enumerate_executions(&data).unwrap();
        let ones = |gs: &[ExecutionGraph]| -> Vec<ExecutionGraph> {
            gs.iter()
                .filter(|g| {
                    g.reads()
                        .iter()
                        .all(|r| g.label(*r).unwrap().val() == Some(1))
                })
                .cloned()
                .collect()
        };
        // The a = b = 1 executions coincide exactly, dependencies included.
        let (f1, d1) = (ones(&gf), ones(&gd));
        assert_eq!(f1.len(), 1);
        assert_eq!(f1, d1);
        // Every candidate of either program carries the same data and ppo shape.
        for g in gf.iter().chain(&gd) {
            assert_eq!(g.data, f1[0].data);
        }
    }

    #[test]
    fn registers_from_graph() {
        let p = parse_litmus(LB).unwrap();
        for g in enumerate_executions(&p).unwrap() {
            let regs = p.registers(&g).unwrap();
            let a = g.label(EventId::new(1, 1)).unwrap().val().unwrap();
            assert_eq!(regs[&(1, "a".to_string())], a);
        }
    }

    use proptest::prelude::*;

    proptest! {
        #[test]
        fn run_thread_is_deterministic(vals in proptest::collection::vec(0i64..5, 2)) {
            let p = parse_litmus("locations x y;\na = load(rlx, x)\nb = load(acq, y)\nstore(rel, x, a * b + 1)\nfence(sc)\n").unwrap();
            let t1 = run_thread(&p, 1, &vals).unwrap();
            let t2 = run_thread(&p, 1, &vals).unwrap();
            prop_assert_eq!(&t1.events, &t2.events);
            prop_assert_eq!(&t1.data, &t2.data);
            prop_assert_eq!(t1.events[2].1.val(), Some(vals[0] * vals[1] + 1));
            for (i, (e, _)) in t1.events.iter().enumerate() {
                prop_assert_eq!(e.serial as usize, i + 1);
            }
        }
    }
}
