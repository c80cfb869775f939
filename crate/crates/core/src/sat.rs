//! Embedded CDCL SAT solver.
//!
//! Two-watched-literal propagation, first-UIP clause learning with local
//! minimization, optional Luby restarts and activity-based learnt clause
//! reduction. Solving under assumptions is supported; when the assumptions
//! are refuted the solver reports the subset of assumptions involved in the
//! final conflict.
//!
//! Every run is deterministic for a fixed input, assumption list and
//! [`SolverConfig`]: no hashing, clocks or thread-dependent state influence
//! the search. Wall time is measured but only reported.
//!
//! No preprocessing is performed; clause indices therefore keep their meaning
//! for core extraction.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cnf::{Cnf, Literal};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branching {
    Vsids,
    LowestIndex,
    /// Uniform start position, first unassigned variable found cyclically.
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhasePolicy {
    AlwaysFalse,
    AlwaysTrue,
    /// Reuse the last value a variable had before backtracking.
    Saved,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SolverConfig {
    pub branching: Branching,
    pub phase: PhasePolicy,
    /// Base interval of the Luby restart sequence, in conflicts. `None`
    /// disables restarts.
    pub restart_interval: Option<u64>,
    /// Per-call conflict budget; exceeding it yields [`Status::Unknown`].
    pub conflict_limit: Option<u64>,
    pub rng_seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            branching: Branching::Vsids,
            phase: PhasePolicy::Saved,
            restart_interval: Some(100),
            conflict_limit: None,
            rng_seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn with_conflict_limit(mut self, limit: Option<u64>) -> Self {
        self.conflict_limit = limit;
        self
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub conflicts: u64,
    pub decisions: u64,
    pub propagations: u64,
    pub wall_seconds: f64,
}

impl SolveStats {
    /// Equality ignoring wall time.
    pub fn same_counts(&self, other: &SolveStats) -> bool {
        self.conflicts == other.conflicts
            && self.decisions == other.decisions
            && self.propagations == other.propagations
    }
}

/// A total assignment; index `v - 1` holds the value of variable `v`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Model(Vec<bool>);

impl Model {
    pub fn values(&self) -> &[bool] {
        &self.0
    }

    pub fn value(&self, lit: Literal) -> bool {
        self.0[lit.var_index()] == lit.is_positive()
    }

    pub fn var(&self, var: u32) -> bool {
        self.0[(var - 1) as usize]
    }

    pub fn satisfies(&self, cnf: &Cnf) -> bool {
        self.0.len() >= cnf.num_vars() as usize && cnf.is_satisfied_by(&self.0)
    }

    pub fn truncated(mut self, n: usize) -> Model {
        self.0.truncate(n);
        self
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Status {
    Sat(Model),
    /// `failed` is a subset of the assumptions that is already refuted; it is
    /// empty when the clauses alone are unsatisfiable.
    Unsat { failed: Vec<Literal> },
    Unknown,
}

#[derive(Clone, Debug)]
pub struct SolveResult {
    pub status: Status,
    pub stats: SolveStats,
}

impl SolveResult {
    pub fn is_sat(&self) -> bool {
        matches!(self.status, Status::Sat(_))
    }

    pub fn is_unsat(&self) -> bool {
        matches!(self.status, Status::Unsat { .. })
    }

    pub fn model(&self) -> Option<&Model> {
        match &self.status {
            Status::Sat(m) => Some(m),
            _ => None,
        }
    }
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
#[error("solver hit its conflict limit after {conflicts} conflicts")]
pub struct LimitReached {
    pub conflicts: u64,
}

/// Solves `cnf` under `assumptions` with a fresh solver.
pub fn solve(cnf: &Cnf, assumptions: &[Literal], config: &SolverConfig) -> SolveResult {
    let mut solver = Solver::from_cnf(cnf, *config);
    let mut res = solver.solve_with(assumptions);
    if let Status::Sat(m) = res.status {
        res.status = Status::Sat(m.truncated(cnf.num_vars() as usize));
    }
    res
}

pub fn is_unsat(cnf: &Cnf, config: &SolverConfig) -> Result<bool, LimitReached> {
    let res = solve(cnf, &[], config);
    match res.status {
        Status::Sat(_) => Ok(false),
        Status::Unsat { .. } => Ok(true),
        Status::Unknown => Err(LimitReached { conflicts: res.stats.conflicts }),
    }
}

const NO_REASON: u32 = u32::MAX;
const UNDEF: i8 = 0;
const TRUE: i8 = 1;
const FALSE: i8 = -1;

#[derive(Clone, Copy)]
struct Watch {
    cref: u32,
    blocker: u32,
}

struct ClauseData {
    lits: Vec<u32>,
    learnt: bool,
    removed: bool,
    activity: f64,
}

/// Max-heap of variables keyed by activity.
#[derive(Default)]
struct VarHeap {
    heap: Vec<u32>,
    pos: Vec<u32>,
}

const NOT_IN_HEAP: u32 = u32::MAX;

impl VarHeap {
    fn grow(&mut self, n: usize) {
        self.pos.resize(n, NOT_IN_HEAP);
    }

    fn contains(&self, v: u32) -> bool {
        self.pos[v as usize] != NOT_IN_HEAP
    }

    fn less(act: &[f64], a: u32, b: u32) -> bool {
        // Higher activity first; lower index breaks ties.
        let (x, y) = (act[a as usize], act[b as usize]);
        x > y || (x == y && a < b)
    }

    fn up(&mut self, mut i: usize, act: &[f64]) {
        let v = self.heap[i];
        while i > 0 {
            let parent = (i - 1) / 2;
            if !Self::less(act, v, self.heap[parent]) {
                break;
            }
            self.heap[i] = self.heap[parent];
            self.pos[self.heap[i] as usize] = i as u32;
            i = parent;
        }
        self.heap[i] = v;
        self.pos[v as usize] = i as u32;
    }

    fn down(&mut self, mut i: usize, act: &[f64]) {
        let v = self.heap[i];
        let n = self.heap.len();
        loop {
            let l = 2 * i + 1;
            if l >= n {
                break;
            }
            let r = l + 1;
            let child = if r < n && Self::less(act, self.heap[r], self.heap[l]) { r } else { l };
            if !Self::less(act, self.heap[child], v) {
                break;
            }
            self.heap[i] = self.heap[child];
            self.pos[self.heap[i] as usize] = i as u32;
            i = child;
        }
        self.heap[i] = v;
        self.pos[v as usize] = i as u32;
    }

    fn insert(&mut self, v: u32, act: &[f64]) {
        if self.contains(v) {
            return;
        }
        self.pos[v as usize] = self.heap.len() as u32;
        self.heap.push(v);
        self.up(self.heap.len() - 1, act);
    }

    fn increased(&mut self, v: u32, act: &[f64]) {
        if self.contains(v) {
            self.up(self.pos[v as usize] as usize, act);
        }
    }

    fn pop(&mut self, act: &[f64]) -> Option<u32> {
        if self.heap.is_empty() {
            return None;
        }
        let top = self.heap[0];
        let last = self.heap.pop().unwrap();
        self.pos[top as usize] = NOT_IN_HEAP;
        if !self.heap.is_empty() {
            self.heap[0] = last;
            self.pos[last as usize] = 0;
            self.down(0, act);
        }
        Some(top)
    }
}

enum SearchOutcome {
    Sat,
    Unsat(Vec<Literal>),
    Restart,
    Limit,
}

/// Incremental CDCL solver. Clauses may be added between calls to
/// [`Solver::solve_with`]; learnt clauses are kept across calls.
pub struct Solver {
    config: SolverConfig,
    num_vars: usize,
    clauses: Vec<ClauseData>,
    learnts: Vec<u32>,
    watches: Vec<Vec<Watch>>,
    assigns: Vec<i8>,
    level: Vec<u32>,
    reason: Vec<u32>,
    saved_phase: Vec<bool>,
    trail: Vec<u32>,
    trail_lim: Vec<usize>,
    qhead: usize,
    activity: Vec<f64>,
    var_inc: f64,
    cla_inc: f64,
    heap: VarHeap,
    seen: Vec<bool>,
    ok: bool,
    rng: ChaCha8Rng,
    max_learnts: f64,
    totals: SolveStats,
}

impl Solver {
    pub fn new(num_vars: u32, config: SolverConfig) -> Solver {
        let mut s = Solver {
            config,
            num_vars: 0,
            clauses: Vec::new(),
            learnts: Vec::new(),
            watches: Vec::new(),
            assigns: Vec::new(),
            level: Vec::new(),
            reason: Vec::new(),
            saved_phase: Vec::new(),
            trail: Vec::new(),
            trail_lim: Vec::new(),
            qhead: 0,
            activity: Vec::new(),
            var_inc: 1.0,
            cla_inc: 1.0,
            heap: VarHeap::default(),
            seen: Vec::new(),
            ok: true,
            rng: ChaCha8Rng::seed_from_u64(config.rng_seed),
            max_learnts: 0.0,
            totals: SolveStats::default(),
        };
        s.add_vars(num_vars);
        s
    }

    pub fn from_cnf(cnf: &Cnf, config: SolverConfig) -> Solver {
        let mut s = Solver::new(cnf.num_vars(), config);
        for c in cnf.clauses() {
            s.add_clause(c.literals());
        }
        s
    }

    pub fn num_vars(&self) -> u32 {
        self.num_vars as u32
    }

    /// Adds `n` variables and returns the first new one (1-based).
    pub fn add_vars(&mut self, n: u32) -> u32 {
        let first = self.num_vars as u32 + 1;
        let total = self.num_vars + n as usize;
        self.watches.resize_with(2 * total, Vec::new);
        self.assigns.resize(total, UNDEF);
        self.level.resize(total, 0);
        self.reason.resize(total, NO_REASON);
        self.saved_phase.resize(total, false);
        self.activity.resize(total, 0.0);
        self.seen.resize(total, false);
        self.heap.grow(total);
        for v in self.num_vars..total {
            self.heap.insert(v as u32, &self.activity);
        }
        self.num_vars = total;
        first
    }

    /// Cumulative statistics over all calls.
    pub fn total_stats(&self) -> SolveStats {
        self.totals
    }

    /// Adds a clause at decision level 0. Returns false once the clause set
    /// is known to be unsatisfiable.
    pub fn add_clause(&mut self, lits: &[Literal]) -> bool {
        if !self.ok {
            return false;
        }
        debug_assert!(self.trail_lim.is_empty());
        let mut c: Vec<u32> = Vec::with_capacity(lits.len());
        for l in lits {
            assert!(l.var_index() < self.num_vars, "literal {l} beyond solver variables");
            let code = l.code();
            match self.value(code) {
                TRUE => return true,
                FALSE => continue,
                _ => {}
            }
            if c.contains(&(code ^ 1)) {
                return true;
            }
            if !c.contains(&code) {
                c.push(code);
            }
        }
        match c.len() {
            0 => {
                self.ok = false;
                false
            }
            1 => {
                self.enqueue(c[0], NO_REASON);
                if self.propagate().is_some() {
                    self.ok = false;
                }
                self.ok
            }
            _ => {
                self.attach(c, false);
                true
            }
        }
    }

    #[inline]
    fn value(&self, lit: u32) -> i8 {
        let a = self.assigns[(lit >> 1) as usize];
        if lit & 1 == 0 {
            a
        } else {
            -a
        }
    }

    fn decision_level(&self) -> usize {
        self.trail_lim.len()
    }

    fn attach(&mut self, lits: Vec<u32>, learnt: bool) -> u32 {
        let cref = self.clauses.len() as u32;
        self.watches[lits[0] as usize].push(Watch { cref, blocker: lits[1] });
        self.watches[lits[1] as usize].push(Watch { cref, blocker: lits[0] });
        self.clauses.push(ClauseData { lits, learnt, removed: false, activity: 0.0 });
        if learnt {
            self.learnts.push(cref);
        }
        cref
    }

    fn enqueue(&mut self, lit: u32, reason: u32) {
        let v = (lit >> 1) as usize;
        debug_assert_eq!(self.assigns[v], UNDEF);
        self.assigns[v] = if lit & 1 == 0 { TRUE } else { FALSE };
        self.level[v] = self.decision_level() as u32;
        self.reason[v] = reason;
        self.trail.push(lit);
    }

    /// Returns the conflicting clause, if any.
    fn propagate(&mut self) -> Option<u32> {
        let mut conflict = None;
        while self.qhead < self.trail.len() {
            let p = self.trail[self.qhead];
            self.qhead += 1;
            self.totals.propagations += 1;
            let false_lit = p ^ 1;
            let mut ws = std::mem::take(&mut self.watches[false_lit as usize]);
            let (mut i, mut j) = (0, 0);
            while i < ws.len() {
                let w = ws[i];
                i += 1;
                if self.value(w.blocker) == TRUE {
                    ws[j] = w;
                    j += 1;
                    continue;
                }
                let cref = w.cref as usize;
                if self.clauses[cref].removed {
                    continue;
                }
                {
                    let lits = &mut self.clauses[cref].lits;
                    if lits[0] == false_lit {
                        lits.swap(0, 1);
                    }
                }
                let first = self.clauses[cref].lits[0];
                let kept = Watch { cref: w.cref, blocker: first };
                if first != w.blocker && self.value(first) == TRUE {
                    ws[j] = kept;
                    j += 1;
                    continue;
                }
                let len = self.clauses[cref].lits.len();
                let mut moved = false;
                for k in 2..len {
                    let lk = self.clauses[cref].lits[k];
                    if self.value(lk) != FALSE {
                        self.clauses[cref].lits.swap(1, k);
                        self.watches[lk as usize].push(Watch { cref: w.cref, blocker: first });
                        moved = true;
                        break;
                    }
                }
                if moved {
                    continue;
                }
                ws[j] = kept;
                j += 1;
                if self.value(first) == FALSE {
                    conflict = Some(w.cref);
                    while i < ws.len() {
                        ws[j] = ws[i];
                        j += 1;
                        i += 1;
                    }
                    self.qhead = self.trail.len();
                } else {
                    self.enqueue(first, w.cref);
                }
            }
            ws.truncate(j);
            self.watches[false_lit as usize] = ws;
            if conflict.is_some() {
                break;
            }
        }
        conflict
    }

    fn bump_var(&mut self, v: usize) {
        self.activity[v] += self.var_inc;
        if self.activity[v] > 1e100 {
            for a in self.activity.iter_mut() {
                *a *= 1e-100;
            }
            self.var_inc *= 1e-100;
        }
        self.heap.increased(v as u32, &self.activity);
    }

    fn bump_clause(&mut self, cref: u32) {
        let c = &mut self.clauses[cref as usize];
        if !c.learnt {
            return;
        }
        c.activity += self.cla_inc;
        if c.activity > 1e20 {
            for &l in &self.learnts {
                self.clauses[l as usize].activity *= 1e-20;
            }
            self.cla_inc *= 1e-20;
        }
    }

    /// First-UIP analysis. Returns the learnt clause (asserting literal
    /// first) and the backjump level.
    fn analyze(&mut self, mut confl: u32) -> (Vec<u32>, usize) {
        let mut out: Vec<u32> = vec![0];
        let mut path = 0usize;
        let mut p: Option<u32> = None;
        let mut index = self.trail.len();
        let dl = self.decision_level() as u32;
        loop {
            self.bump_clause(confl);
            let start = usize::from(p.is_some());
            let len = self.clauses[confl as usize].lits.len();
            for k in start..len {
                let q = self.clauses[confl as usize].lits[k];
                let v = (q >> 1) as usize;
                if !self.seen[v] && self.level[v] > 0 {
                    self.seen[v] = true;
                    self.bump_var(v);
                    if self.level[v] >= dl {
                        path += 1;
                    } else {
                        out.push(q);
                    }
                }
            }
            loop {
                index -= 1;
                if self.seen[(self.trail[index] >> 1) as usize] {
                    break;
                }
            }
            let lit = self.trail[index];
            let v = (lit >> 1) as usize;
            self.seen[v] = false;
            p = Some(lit);
            path -= 1;
            if path == 0 {
                break;
            }
            confl = self.reason[v];
        }
        out[0] = p.unwrap() ^ 1;

        // Local minimization: drop literals implied by other learnt literals.
        let mut keep = vec![out[0]];
        for &q in &out[1..] {
            let v = (q >> 1) as usize;
            let r = self.reason[v];
            let redundant = r != NO_REASON
                && self.clauses[r as usize].lits[1..].iter().all(|&x| {
                    let xv = (x >> 1) as usize;
                    self.seen[xv] || self.level[xv] == 0
                });
            if !redundant {
                keep.push(q);
            }
        }
        for &q in &out[1..] {
            self.seen[(q >> 1) as usize] = false;
        }
        let mut out = keep;

        let mut bt = 0usize;
        if out.len() > 1 {
            let mut max_i = 1;
            for k in 2..out.len() {
                if self.level[(out[k] >> 1) as usize] > self.level[(out[max_i] >> 1) as usize] {
                    max_i = k;
                }
            }
            out.swap(1, max_i);
            bt = self.level[(out[1] >> 1) as usize] as usize;
        }
        (out, bt)
    }

    /// Assumptions responsible for `p` (an assumption) being false.
    fn analyze_final(&mut self, p: u32) -> Vec<Literal> {
        let mut out = vec![Literal::from_code(p)];
        if self.decision_level() == 0 {
            return out;
        }
        let pv = (p >> 1) as usize;
        self.seen[pv] = true;
        for i in (self.trail_lim[0]..self.trail.len()).rev() {
            let lit = self.trail[i];
            let v = (lit >> 1) as usize;
            if !self.seen[v] {
                continue;
            }
            let r = self.reason[v];
            if r == NO_REASON {
                out.push(Literal::from_code(lit));
            } else {
                for k in 1..self.clauses[r as usize].lits.len() {
                    let x = (self.clauses[r as usize].lits[k] >> 1) as usize;
                    if self.level[x] > 0 {
                        self.seen[x] = true;
                    }
                }
            }
            self.seen[v] = false;
        }
        self.seen[pv] = false;
        out.sort_unstable();
        out.dedup();
        out
    }

    fn cancel_until(&mut self, level: usize) {
        if self.decision_level() <= level {
            return;
        }
        let lim = self.trail_lim[level];
        for i in (lim..self.trail.len()).rev() {
            let lit = self.trail[i];
            let v = (lit >> 1) as usize;
            self.saved_phase[v] = lit & 1 == 0;
            self.assigns[v] = UNDEF;
            self.reason[v] = NO_REASON;
            self.heap.insert(v as u32, &self.activity);
        }
        self.trail.truncate(lim);
        self.trail_lim.truncate(level);
        self.qhead = lim;
    }

    fn pick_branch(&mut self) -> Option<u32> {
        let var = match self.config.branching {
            Branching::Vsids => loop {
                let v = self.heap.pop(&self.activity)?;
                if self.assigns[v as usize] == UNDEF {
                    break v as usize;
                }
            },
            Branching::LowestIndex => (0..self.num_vars).find(|&v| self.assigns[v] == UNDEF)?,
            Branching::Random => {
                if self.num_vars == 0 {
                    return None;
                }
                let start = self.rng.random_range(0..self.num_vars);
                (0..self.num_vars)
                    .map(|k| (start + k) % self.num_vars)
                    .find(|&v| self.assigns[v] == UNDEF)?
            }
        };
        let positive = match self.config.phase {
            PhasePolicy::AlwaysFalse => false,
            PhasePolicy::AlwaysTrue => true,
            PhasePolicy::Saved => self.saved_phase[var],
        };
        Some(2 * var as u32 + u32::from(!positive))
    }

    fn locked(&self, cref: u32) -> bool {
        let c0 = self.clauses[cref as usize].lits[0];
        self.reason[(c0 >> 1) as usize] == cref && self.value(c0) == TRUE
    }

    /// Removes the less active half of the long learnt clauses.
    fn reduce_db(&mut self) {
        let mut order: Vec<u32> = self.learnts.clone();
        order.sort_by(|&a, &b| {
            let (ca, cb) = (&self.clauses[a as usize], &self.clauses[b as usize]);
            (ca.lits.len() > 2)
                .cmp(&(cb.lits.len() > 2))
                .then(ca.activity.total_cmp(&cb.activity))
                .then(a.cmp(&b))
        });
        let half = order.len() / 2;
        let mut removed_any = false;
        for &cref in &order[..half] {
            if self.clauses[cref as usize].lits.len() > 2 && !self.locked(cref) {
                self.clauses[cref as usize].removed = true;
                removed_any = true;
            }
        }
        if removed_any {
            let clauses = &self.clauses;
            for ws in self.watches.iter_mut() {
                ws.retain(|w| !clauses[w.cref as usize].removed);
            }
            self.learnts.retain(|&c| !clauses[c as usize].removed);
            for &cref in order[..half].iter() {
                if self.clauses[cref as usize].removed {
                    self.clauses[cref as usize].lits = Vec::new();
                }
            }
        }
    }

    fn luby(mut x: u64) -> u64 {
        let (mut size, mut seq) = (1u64, 0u32);
        while size < x + 1 {
            seq += 1;
            size = 2 * size + 1;
        }
        while size - 1 != x {
            size = (size - 1) >> 1;
            seq -= 1;
            x %= size;
        }
        1u64 << seq
    }

    fn search(&mut self, assumptions: &[Literal], restart_after: Option<u64>, budget: &mut Option<u64>) -> SearchOutcome {
        let mut conflicts_here = 0u64;
        loop {
            if let Some(confl) = self.propagate() {
                self.totals.conflicts += 1;
                conflicts_here += 1;
                if self.decision_level() == 0 {
                    self.ok = false;
                    return SearchOutcome::Unsat(Vec::new());
                }
                let (learnt, bt) = self.analyze(confl);
                self.cancel_until(bt);
                if learnt.len() == 1 {
                    self.enqueue(learnt[0], NO_REASON);
                } else {
                    let first = learnt[0];
                    let cref = self.attach(learnt, true);
                    self.bump_clause(cref);
                    self.enqueue(first, cref);
                }
                self.var_inc /= 0.95;
                self.cla_inc /= 0.999;
                if let Some(b) = budget {
                    if *b == 0 {
                        return SearchOutcome::Limit;
                    }
                    *b -= 1;
                }
                continue;
            }
            if restart_after.is_some_and(|r| conflicts_here >= r) {
                self.cancel_until(0);
                return SearchOutcome::Restart;
            }
            if self.learnts.len() as f64 - self.trail.len() as f64 >= self.max_learnts {
                self.reduce_db();
                self.max_learnts *= 1.1;
            }
            let mut next = None;
            while self.decision_level() < assumptions.len() {
                let p = assumptions[self.decision_level()].code();
                match self.value(p) {
                    TRUE => self.trail_lim.push(self.trail.len()),
                    FALSE => return SearchOutcome::Unsat(self.analyze_final(p)),
                    _ => {
                        next = Some(p);
                        break;
                    }
                }
            }
            let lit = match next {
                Some(p) => p,
                None => match self.pick_branch() {
                    Some(p) => {
                        self.totals.decisions += 1;
                        p
                    }
                    None => return SearchOutcome::Sat,
                },
            };
            self.trail_lim.push(self.trail.len());
            self.enqueue(lit, NO_REASON);
        }
    }

    /// Solves under `assumptions`, which are decided in the given order
    /// before any heuristic decision.
    pub fn solve_with(&mut self, assumptions: &[Literal]) -> SolveResult {
        let start = Instant::now();
        let before = self.totals;
        for a in assumptions {
            assert!(a.var_index() < self.num_vars, "assumption {a} beyond solver variables");
        }
        let status = if !self.ok {
            Status::Unsat { failed: Vec::new() }
        } else {
            if self.max_learnts == 0.0 {
                self.max_learnts = (self.clauses.len() as f64 / 3.0).max(1000.0);
            }
            let mut budget = self.config.conflict_limit;
            let mut round = 0u64;
            loop {
                let restart_after = self.config.restart_interval.map(|r| r * Self::luby(round));
                round += 1;
                match self.search(assumptions, restart_after, &mut budget) {
                    SearchOutcome::Restart => continue,
                    SearchOutcome::Sat => {
                        let model = self.assigns.iter().map(|&a| a == TRUE).collect();
                        break Status::Sat(Model(model));
                    }
                    SearchOutcome::Unsat(failed) => break Status::Unsat { failed },
                    SearchOutcome::Limit => break Status::Unknown,
                }
            }
        };
        self.cancel_until(0);
        let mut stats = SolveStats {
            conflicts: self.totals.conflicts - before.conflicts,
            decisions: self.totals.decisions - before.decisions,
            propagations: self.totals.propagations - before.propagations,
            wall_seconds: 0.0,
        };
        stats.wall_seconds = start.elapsed().as_secs_f64();
        self.totals.wall_seconds += stats.wall_seconds;
        SolveResult { status, stats }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cnf::{parse_dimacs, Clause};
    use crate::testutil::{brute_force_sat, random_cnf};
    use rand::SeedableRng;

    fn trivial_core() -> Cnf {
        parse_dimacs("p cnf 2 4\n1 2 0\n-1 2 0\n1 -2 0\n-1 -2 0").unwrap()
    }

    fn all_configs() -> Vec<SolverConfig> {
        let mut out = Vec::new();
        for branching in [Branching::Vsids, Branching::LowestIndex, Branching::Random] {
            for phase in [PhasePolicy::AlwaysFalse, PhasePolicy::AlwaysTrue, PhasePolicy::Saved] {
                for restart_interval in [None, Some(2)] {
                    out.push(SolverConfig { branching, phase, restart_interval, conflict_limit: None, rng_seed: 7 });
                }
            }
        }
        out
    }

    #[test]
    fn trivial_core_unsat() {
        assert!(is_unsat(&trivial_core(), &SolverConfig::default()).unwrap());
    }

    #[test]
    fn decored_trivial_core_sat() {
        let cnf = trivial_core().add_literal(0, Literal::positive(3)).unwrap();
        let res = solve(&cnf, &[], &SolverConfig::default());
        let model = res.model().expect("sat");
        assert!(model.satisfies(&cnf));
        // The only models have A=B=false; C must then be true for clause 0.
        assert!(!model.var(1) && !model.var(2));
    }

    #[test]
    fn empty_formula() {
        let res = solve(&Cnf::new(3, vec![]), &[], &SolverConfig::default());
        assert!(res.is_sat());
        assert_eq!(res.stats.conflicts, 0);
        assert_eq!(res.model().unwrap().values().len(), 3);
    }

    #[test]
    fn empty_clause_unsat() {
        let cnf = Cnf::new(1, vec![Clause::empty()]);
        assert!(is_unsat(&cnf, &SolverConfig::default()).unwrap());
    }

    #[test]
    fn single_positive_clause() {
        let cnf = Cnf::from_dimacs_clauses(1, &[&[1]]);
        assert!(!is_unsat(&cnf, &SolverConfig::default()).unwrap());
    }

    #[test]
    fn propagation_only_has_no_conflicts() {
        let cnf = Cnf::from_dimacs_clauses(4, &[&[1], &[-1, 2], &[-2, 3], &[-3, -1, 4]]);
        for config in all_configs() {
            let res = solve(&cnf, &[], &config);
            assert!(res.is_sat());
            assert_eq!(res.stats.conflicts, 0);
        }
    }

    #[test]
    fn three_var_exhaustive_agreement() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..400 {
            let m = rng.random_range(0..=8);
            let cnf = random_cnf(&mut rng, 3, m, 1..=3);
            let expected = brute_force_sat(&cnf).is_some();
            for config in all_configs() {
                let res = solve(&cnf, &[], &config);
                assert_eq!(res.is_sat(), expected, "{cnf:?} {config:?}");
                if let Some(m) = res.model() {
                    assert!(m.satisfies(&cnf));
                }
            }
        }
    }

    #[test]
    fn assumptions_and_failed_subset() {
        // x1 -> x2, x2 -> x3; assuming x1 and -x3 fails, x4 is irrelevant.
        let cnf = Cnf::from_dimacs_clauses(4, &[&[-1, 2], &[-2, 3]]);
        let mut solver = Solver::from_cnf(&cnf, SolverConfig::default());
        let a = [Literal::from_dimacs(4), Literal::from_dimacs(1), Literal::from_dimacs(-3)];
        let res = solver.solve_with(&a);
        match res.status {
            Status::Unsat { failed } => {
                let mut f: Vec<i32> = failed.iter().map(|l| l.to_dimacs()).collect();
                f.sort();
                assert_eq!(f, vec![-3, 1]);
            }
            other => panic!("{other:?}"),
        }
        // Still usable afterwards, without the conflicting assumption.
        let res = solver.solve_with(&a[..2]);
        let m = res.model().unwrap();
        assert!(m.var(1) && m.var(2) && m.var(3) && m.var(4));
    }

    #[test]
    fn failed_assumptions_are_refuted_subset() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let n = rng.random_range(3..=8);
            let m = rng.random_range(1..=20);
            let cnf = random_cnf(&mut rng, n, m, 2..=3);
            let mut assumptions = Vec::new();
            for v in 1..=n {
                if rng.random_bool(0.5) {
                    assumptions.push(Literal::new(v, rng.random_bool(0.5)));
                }
            }
            let mut with_units = cnf.clone();
            for a in &assumptions {
                with_units = with_units.extended(&[Clause::new(vec![*a]).unwrap()]);
            }
            let expected = brute_force_sat(&with_units).is_some();
            let res = solve(&cnf, &assumptions, &SolverConfig::default());
            assert_eq!(res.is_sat(), expected);
            if let Status::Unsat { failed } = res.status {
                assert!(failed.iter().all(|f| assumptions.contains(f)));
                let mut restricted = cnf.clone();
                for a in &failed {
                    restricted = restricted.extended(&[Clause::new(vec![*a]).unwrap()]);
                }
                assert!(brute_force_sat(&restricted).is_none());
            }
        }
    }

    #[test]
    fn conflict_limit_yields_unknown() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cnf = loop {
            let c = random_cnf(&mut rng, 40, 200, 3..=3);
            if is_unsat(&c, &SolverConfig::default()).unwrap() {
                break c;
            }
        };
        let config = SolverConfig::default().with_conflict_limit(Some(1));
        let res = solve(&cnf, &[], &config);
        assert_eq!(res.status, Status::Unknown);
        assert!(is_unsat(&cnf, &config).is_err());
    }

    #[test]
    fn deterministic_runs() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cnf = random_cnf(&mut rng, 60, 260, 3..=3);
        for config in all_configs() {
            let a = solve(&cnf, &[], &config);
            let b = solve(&cnf, &[], &config);
            assert_eq!(a.status, b.status);
            assert!(a.stats.same_counts(&b.stats));
        }
    }

    #[test]
    fn luby_sequence() {
        let seq: Vec<u64> = (0..15).map(Solver::luby).collect();
        assert_eq!(seq, vec![1, 1, 2, 1, 1, 2, 4, 1, 1, 2, 1, 1, 2, 4, 8]);
    }
}
