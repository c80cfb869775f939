//! Hard instance generation: seed core extraction, clause sampling,
//! candidate assembly and the detect/break core refinement loop.
//!
//! # Clause sampler
//!
//! [`sample_clauses_ps`] draws clauses over the seed's variables
//! `1..=N`, placed on a ring by index. For clause `j` of `count`:
//!
//! * size: let `w_j = (j + 1)^(-beta_c)` and
//!   `s_j = avg_clause_size * count * w_j / sum(w)`. The size is
//!   `floor(s_j)` plus one with probability `frac(s_j)`, clamped to
//!   `[2, N]`. With `beta_c = 0` every clause has the average size (up to
//!   rounding); larger `beta_c` gives a few long clauses and many short ones.
//!   Clause positions are shuffled afterwards.
//! * variables: an anchor `a` is drawn uniformly from the ring, then
//!   variables are drawn without replacement with weight
//!   `(occ_v + 1)^beta_v * (1 + d(a, v))^(-1 / T)`, where `occ_v` counts the
//!   occurrences of `v` in the seed and `d` is ring distance. With
//!   `beta_v = 0` the process is rotation invariant, so every variable is
//!   equally likely to be chosen.
//! * polarity: positive with probability `(pos_v + 1) / (occ_v + 2)`.
//!
//! A clause equal (as a literal set) to a seed clause or an earlier sample
//! is rejected and redrawn.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use log::{debug, warn};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cnf::{parse_dimacs, serialize_dimacs, Clause, Cnf, DimacsError, Literal};
use crate::eval::Augmenter;
use crate::gnn::{GnnError, GnnModel, TrainingPair};
use crate::lcg::Lcg;
use crate::oracle::{
    extract_mus, extract_mus_avoiding, verify_mus, CoreLabel, CoreLabelFile, LabelSource, MusProgress, OracleError, SelectorSolver,
    SubsetStatus,
};
use crate::sat::{self, Model, SolverConfig, Status};

/// Subsets of at most this many clauses are shrunk to an exact core.
pub const EXACT_SHRINK_LIMIT: usize = 32;
/// Attempts at finding a necessary clause in a predicted core before the
/// oracle takes over.
pub const PRUNE_RETRIES: usize = 5;

#[derive(Debug, Error)]
pub enum GenError {
    #[error("cannot draw {m} distinct {k}-clauses over {n} variables")]
    Infeasible { m: usize, n: u32, k: usize },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("seed instance is satisfiable")]
    SeedSatisfiable,
    #[error("seed core does not verify as a minimal unsatisfiable subset")]
    BadSeedCore,
    #[error("solver hit its conflict limit")]
    LimitReached,
    #[error("generated instance is not unsatisfiable")]
    LostUnsat,
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Gnn(#[from] GnnError),
    #[error("pair store: {0}")]
    Io(#[from] std::io::Error),
    #[error("pair store: {0}")]
    Dimacs(#[from] DimacsError),
    #[error("pair store: {0}")]
    Json(#[from] serde_json::Error),
}

impl From<sat::LimitReached> for GenError {
    fn from(_: sat::LimitReached) -> Self {
        GenError::LimitReached
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KsatParams {
    pub mu_m: f64,
    pub sigma_m: f64,
    pub mu_c: f64,
    pub sigma_c: f64,
    pub k: usize,
    pub rng_seed: u64,
    /// Fixes the clause count instead of sampling it.
    #[serde(default)]
    pub m: Option<usize>,
    /// Fixes the variable count instead of deriving it from `m / c`.
    #[serde(default)]
    pub n: Option<u32>,
}

impl Default for KsatParams {
    fn default() -> Self {
        KsatParams { mu_m: 400.0, sigma_m: 100.0, mu_c: 4.4, sigma_c: 0.05, k: 3, rng_seed: 0, m: None, n: None }
    }
}

fn count_k_clauses(n: u32, k: usize) -> f64 {
    let mut c = 1.0f64;
    for i in 0..k {
        c = c * (n as f64 - i as f64) / (i + 1) as f64;
    }
    c * 2f64.powi(k as i32)
}

/// Uniform random k-CNF with a sampled size.
pub fn sample_ksat(params: &KsatParams) -> Result<Cnf, GenError> {
    if params.k == 0 {
        return Err(GenError::InvalidParams("k must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);
    let normal = |mu: f64, sigma: f64| {
        Normal::new(mu, sigma.max(0.0)).map_err(|e| GenError::InvalidParams(e.to_string()))
    };
    let m_draw = normal(params.mu_m, params.sigma_m)?.sample(&mut rng);
    let c_draw = normal(params.mu_c, params.sigma_c)?.sample(&mut rng);
    let m = params.m.unwrap_or_else(|| m_draw.round().max(1.0) as usize);
    let n = params.n.unwrap_or_else(|| ((m as f64 / c_draw.max(1e-9)) as u32).max(params.k as u32));
    if (n as usize) < params.k || count_k_clauses(n, params.k) < m as f64 {
        return Err(GenError::Infeasible { m, n, k: params.k });
    }
    let vars: Vec<u32> = (1..=n).collect();
    let mut seen = HashSet::with_capacity(m);
    let mut clauses = Vec::with_capacity(m);
    while clauses.len() < m {
        let lits: Vec<Literal> =
            vars.choose_multiple(&mut rng, params.k).map(|&v| Literal::new(v, rng.random_bool(0.5))).collect();
        let clause = Clause::new(lits).expect("distinct variables");
        if seen.insert(clause.key()) {
            clauses.push(clause);
        }
    }
    Ok(Cnf::new(n, clauses))
}

/// Draws k-CNFs from consecutive seeds starting at `params.rng_seed` until
/// one is unsatisfiable; returns it with the seed that produced it.
pub fn sample_unsat_ksat(params: &KsatParams, max_attempts: usize, solver: &SolverConfig) -> Result<(Cnf, u64), GenError> {
    for i in 0..max_attempts as u64 {
        let p = KsatParams { rng_seed: params.rng_seed.wrapping_add(i), ..*params };
        let cnf = sample_ksat(&p)?;
        if sat::is_unsat(&cnf, solver)? {
            return Ok((cnf, p.rng_seed));
        }
    }
    Err(GenError::InvalidParams(format!("no unsatisfiable instance in {max_attempts} draws")))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsParams {
    /// Mean clause size; the seed's mean when absent.
    pub avg_clause_size: Option<f64>,
    pub beta_c: f64,
    pub beta_v: f64,
    pub temperature: f64,
    pub rng_seed: u64,
}

impl Default for PsParams {
    fn default() -> Self {
        PsParams { avg_clause_size: None, beta_c: 0.0, beta_v: 1.0, temperature: 4.0, rng_seed: 0 }
    }
}

/// Per-variable statistics of a seed instance.
#[derive(Clone, Debug)]
pub struct SeedStats {
    pub num_vars: u32,
    pub occurrences: Vec<u32>,
    pub positive: Vec<u32>,
    pub mean_clause_size: f64,
    existing: HashSet<Vec<u32>>,
}

impl SeedStats {
    pub fn from_cnf(cnf: &Cnf) -> SeedStats {
        let n = cnf.num_vars() as usize;
        let mut occurrences = vec![0; n];
        let mut positive = vec![0; n];
        for c in cnf.clauses() {
            for l in c.literals() {
                occurrences[l.var_index()] += 1;
                if l.is_positive() {
                    positive[l.var_index()] += 1;
                }
            }
        }
        let mean_clause_size =
            if cnf.num_clauses() == 0 { 0.0 } else { cnf.num_literals() as f64 / cnf.num_clauses() as f64 };
        SeedStats {
            num_vars: cnf.num_vars(),
            occurrences,
            positive,
            mean_clause_size,
            existing: cnf.clauses().iter().map(|c| c.key()).collect(),
        }
    }
}

/// Samples `count` new clauses shaped after `stats`; see the module docs
/// for the exact distribution.
pub fn sample_clauses_ps(stats: &SeedStats, count: usize, params: &PsParams) -> Result<Vec<Clause>, GenError> {
    if count == 0 {
        return Ok(Vec::new());
    }
    let avg = params.avg_clause_size.unwrap_or(stats.mean_clause_size).max(2.0);
    if !(params.temperature > 0.0) {
        return Err(GenError::InvalidParams("temperature must be positive".into()));
    }
    let n = stats.num_vars as usize;
    if n < 2 {
        return Err(GenError::InvalidParams("clause sampling needs at least two variables".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);
    let weights: Vec<f64> = (0..count).map(|j| ((j + 1) as f64).powf(-params.beta_c)).collect();
    let total: f64 = weights.iter().sum();
    let popularity: Vec<f64> =
        stats.occurrences.iter().map(|&o| (o as f64 + 1.0).powf(params.beta_v)).collect();
    let exponent = -1.0 / params.temperature;
    let kernel: Vec<f64> = (0..=n / 2).map(|d| (1.0 + d as f64).powf(exponent)).collect();
    let vars: Vec<usize> = (0..n).collect();
    let mut seen = stats.existing.clone();
    let mut out = Vec::with_capacity(count);
    let budget = 1000 * count + 10_000;
    let mut draws = 0;
    for &w in &weights {
        let target = avg * count as f64 * w / total;
        loop {
            draws += 1;
            if draws > budget {
                return Err(GenError::Infeasible { m: count, n: stats.num_vars, k: avg.round() as usize });
            }
            let mut size = target.floor() as usize;
            if rng.random::<f64>() < target.fract() {
                size += 1;
            }
            let size = size.clamp(2, n);
            let anchor = rng.random_range(0..n);
            let chosen: Vec<usize> = vars
                .choose_multiple_weighted(&mut rng, size, |&v| {
                    let d = v.abs_diff(anchor);
                    popularity[v] * kernel[d.min(n - d)]
                })
                .expect("positive weights")
                .copied()
                .collect();
            let lits: Vec<Literal> = chosen
                .iter()
                .map(|&v| {
                    let p = (stats.positive[v] as f64 + 1.0) / (stats.occurrences[v] as f64 + 2.0);
                    Literal::new(v as u32 + 1, rng.random::<f64>() < p)
                })
                .collect();
            let clause = Clause::new(lits).expect("distinct variables");
            if seen.insert(clause.key()) {
                out.push(clause);
                break;
            }
        }
    }
    out.shuffle(&mut rng);
    Ok(out)
}

/// A seed core followed by generated clauses.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub cnf: Cnf,
    /// Indices `0..num_protected` hold the seed core.
    num_protected: usize,
}

impl Candidate {
    pub fn num_protected(&self) -> usize {
        self.num_protected
    }

    pub fn is_protected(&self, clause: usize) -> bool {
        clause < self.num_protected
    }

    pub fn protected(&self) -> std::ops::Range<usize> {
        0..self.num_protected
    }

    pub fn generated(&self) -> std::ops::Range<usize> {
        self.num_protected..self.cnf.num_clauses()
    }
}

/// Places the seed-core clauses first, then `new_clauses`.
pub fn assemble_candidate(
    seed: &Cnf,
    seed_core: &CoreLabel,
    new_clauses: &[Clause],
    solver: &SolverConfig,
) -> Result<Candidate, GenError> {
    if !verify_mus(seed, seed_core, solver)? {
        return Err(GenError::BadSeedCore);
    }
    Ok(assemble_unchecked(seed, seed_core, new_clauses))
}

fn assemble_unchecked(seed: &Cnf, seed_core: &CoreLabel, new_clauses: &[Clause]) -> Candidate {
    let core = seed.subformula(seed_core.indices());
    let max_var = new_clauses.iter().map(Clause::max_var).max().unwrap_or(0).max(seed.num_vars());
    Candidate { cnf: core.with_num_vars(max_var).extended(new_clauses), num_protected: seed_core.len() }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecorePolicy {
    /// Add a literal over an existing variable, consistent with a model of
    /// the rest of the core.
    ModelGuided,
    /// Add a positive literal over a new variable.
    FreshVariable,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Iterations {
    Fixed(usize),
    /// As many iterations as there are generated clauses.
    Auto,
}

#[derive(Clone, Copy, Debug)]
pub enum Predictor<'a> {
    Gnn(&'a GnnModel),
    Oracle,
}

#[derive(Clone, Copy, Debug)]
pub struct RefineConfig<'a> {
    pub max_iterations: Iterations,
    pub predictor: Predictor<'a>,
    pub policy: DecorePolicy,
    pub protect_seed_core: bool,
    pub rng_seed: u64,
    pub solver: SolverConfig,
}

impl<'a> RefineConfig<'a> {
    pub fn new(predictor: Predictor<'a>) -> RefineConfig<'a> {
        RefineConfig {
            max_iterations: Iterations::Auto,
            predictor,
            policy: DecorePolicy::ModelGuided,
            protect_seed_core: true,
            rng_seed: 0,
            solver: SolverConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Detection {
    /// Exact core inside the predicted set.
    Predicted,
    /// Predicted set pruned to a smaller unsatisfiable subset.
    Pruned,
    Oracle,
}

/// One de-coring step.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoreEvent {
    pub iteration: usize,
    pub detection: Detection,
    pub core_size: usize,
    pub target: usize,
    /// Added literal in DIMACS form.
    pub literal: i32,
    pub fresh_variable: bool,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DecoreError {
    #[error("every core clause is protected")]
    AllProtected,
    #[error("core without clause {0} is still unsatisfiable")]
    NotMinimal(usize),
    #[error("solver hit its conflict limit")]
    LimitReached,
}

/// Breaks `core` by adding one literal to one of its unprotected clauses.
/// The modified core clauses are satisfiable afterwards.
pub fn decore(
    candidate: &Candidate,
    core: &CoreLabel,
    policy: DecorePolicy,
    protect_seed_core: bool,
    rng: &mut impl Rng,
    solver: &SolverConfig,
) -> Result<(Candidate, DecoreEvent), DecoreError> {
    let targets: Vec<usize> =
        core.indices().iter().copied().filter(|&i| !protect_seed_core || !candidate.is_protected(i)).collect();
    let &target = targets.choose(rng).ok_or(DecoreError::AllProtected)?;
    let rest: Vec<usize> = core.indices().iter().copied().filter(|&i| i != target).collect();
    let model = match sat::solve(&candidate.cnf.subformula(&rest), &[], solver).status {
        Status::Sat(m) => m,
        Status::Unsat { .. } => return Err(DecoreError::NotMinimal(target)),
        Status::Unknown => return Err(DecoreError::LimitReached),
    };
    Ok(decore_with_model(candidate, core.indices(), target, &model, policy, rng, 0))
}

fn decore_with_model(
    candidate: &Candidate,
    core: &[usize],
    target: usize,
    model: &Model,
    policy: DecorePolicy,
    rng: &mut impl Rng,
    iteration: usize,
) -> (Candidate, DecoreEvent) {
    let cnf = &candidate.cnf;
    let clause = cnf.clause(target);
    let rest_vars: HashSet<u32> = core
        .iter()
        .filter(|&&i| i != target)
        .flat_map(|&i| cnf.clause(i).literals().iter().map(|l| l.var()))
        .collect();
    let mut lit = None;
    if policy == DecorePolicy::ModelGuided {
        let free: Vec<u32> = (1..=cnf.num_vars()).filter(|&v| !clause.contains_var(v)).collect();
        match free.choose(rng) {
            Some(&v) => {
                let value = if rest_vars.contains(&v) { model.var(v) } else { rng.random_bool(0.5) };
                lit = Some(Literal::new(v, value));
            }
            None => warn!("clause {target} mentions every variable; adding a fresh one"),
        }
    }
    let (lit, fresh, base) = match lit {
        Some(l) => (l, false, cnf.clone()),
        None => (Literal::positive(cnf.num_vars() + 1), true, cnf.clone().with_num_vars(cnf.num_vars() + 1)),
    };
    let modified = base.add_literal(target, lit).expect("literal is admissible");
    // The model of the other core clauses, extended by the new literal,
    // satisfies the modified core.
    let mut values = model.values().to_vec();
    values.resize(modified.num_vars() as usize, false);
    values[lit.var_index()] = lit.is_positive();
    for &i in core {
        debug_assert!(modified.clause(i).is_satisfied_by(&values), "decore left clause {i} unsatisfied");
    }
    let event = DecoreEvent {
        iteration,
        detection: Detection::Oracle,
        core_size: core.len(),
        target,
        literal: lit.to_dimacs(),
        fresh_variable: fresh,
    };
    (Candidate { cnf: modified, num_protected: candidate.num_protected }, event)
}

enum Detected {
    /// An unsatisfiable subset, with a necessary clause and a model of the
    /// rest when already known.
    Core { core: Vec<usize>, hint: Option<(usize, Model)>, how: Detection },
    /// Only protected clauses remain in the detected core.
    Done { core: Vec<usize> },
}

struct Refiner<'a, 'c> {
    config: &'c RefineConfig<'a>,
    rng: ChaCha8Rng,
}

impl Refiner<'_, '_> {
    fn oracle(&self, cand: &Candidate) -> Result<Detected, GenError> {
        let avoid: Vec<usize> = if self.config.protect_seed_core { cand.protected().collect() } else { Vec::new() };
        let mus = match extract_mus_avoiding(&cand.cnf, &avoid, &self.config.solver) {
            Err(OracleError::Satisfiable) => return Err(GenError::LostUnsat),
            r => r?,
        };
        let core = mus.indices().to_vec();
        if self.config.protect_seed_core && core.iter().all(|&i| cand.is_protected(i)) {
            return Ok(Detected::Done { core });
        }
        Ok(Detected::Core { core, hint: None, how: Detection::Oracle })
    }

    fn unprotected(&self, cand: &Candidate, set: &[usize]) -> Vec<usize> {
        set.iter().copied().filter(|&i| !self.config.protect_seed_core || !cand.is_protected(i)).collect()
    }

    fn gnn(&mut self, model: &GnnModel, cand: &Candidate) -> Result<Detected, GenError> {
        let probs = model.forward(&Lcg::build(&cand.cnf))?;
        let predicted: Vec<usize> = (0..probs.len()).filter(|&i| probs[i] > model.config().threshold).collect();
        if predicted.is_empty() {
            debug!("empty prediction, using the oracle");
            return self.oracle(cand);
        }
        let mut ss = SelectorSolver::new(&cand.cnf, self.config.solver);
        let mut set = match ss.check(&predicted) {
            SubsetStatus::Unsat(s) => s,
            SubsetStatus::Sat(_) => {
                // Prediction missed part of every core: start from the
                // final conflict of the whole formula instead.
                let all: Vec<usize> = (0..cand.cnf.num_clauses()).collect();
                match ss.check(&all) {
                    SubsetStatus::Unsat(s) => s,
                    SubsetStatus::Sat(_) => return Err(GenError::LostUnsat),
                    SubsetStatus::Unknown => return Err(GenError::LimitReached),
                }
            }
            SubsetStatus::Unknown => return Err(GenError::LimitReached),
        };
        for _ in 0..=PRUNE_RETRIES {
            if set.len() <= EXACT_SHRINK_LIMIT {
                let core = ss.shrink(MusProgress { confirmed: vec![], untested: set })?;
                if self.unprotected(cand, &core).is_empty() {
                    return self.oracle(cand);
                }
                return Ok(Detected::Core { core, hint: None, how: Detection::Predicted });
            }
            // The clause the model is surest about is the likeliest to be
            // necessary.
            if self.config.protect_seed_core && cand.protected().all(|i| set.binary_search(&i).is_ok()) {
                // The protected clauses are unsatisfiable on their own, so
                // no unprotected clause of this set can be necessary.
                break;
            }
            let options = self.unprotected(cand, &set);
            let Some(&target) = options.iter().max_by(|&&a, &&b| probs[a].total_cmp(&probs[b])) else {
                return self.oracle(cand);
            };
            let rest: Vec<usize> = set.iter().copied().filter(|&i| i != target).collect();
            match ss.check(&rest) {
                SubsetStatus::Sat(m) => {
                    return Ok(Detected::Core { core: set, hint: Some((target, m)), how: Detection::Pruned })
                }
                SubsetStatus::Unsat(s) => set = s,
                SubsetStatus::Unknown => return Err(GenError::LimitReached),
            }
        }
        debug!("pruning did not settle, using the oracle");
        self.oracle(cand)
    }

    fn detect(&mut self, cand: &Candidate) -> Result<Detected, GenError> {
        match self.config.predictor {
            Predictor::Oracle => self.oracle(cand),
            Predictor::Gnn(model) => self.gnn(model, cand),
        }
    }
}

/// Result of a refinement run.
#[derive(Clone, Debug)]
pub struct Refined {
    pub cnf: Cnf,
    pub iterations_run: usize,
    pub events: Vec<DecoreEvent>,
    /// True when the loop stopped because only protected clauses were left
    /// in the detected core.
    pub converged: bool,
}

/// Snapshot passed to refinement observers: the instance before an
/// iteration's de-coring and the core detected in it.
pub struct Observation<'x> {
    pub cnf: &'x Cnf,
    pub core: &'x [usize],
    pub detection: Detection,
}

pub fn refine(candidate: &Candidate, config: &RefineConfig) -> Result<Refined, GenError> {
    refine_observed(candidate, config, &mut |_| {})
}

/// Runs the refinement loop, calling `observer` once per detected core.
pub fn refine_observed(
    candidate: &Candidate,
    config: &RefineConfig,
    observer: &mut dyn FnMut(&Observation),
) -> Result<Refined, GenError> {
    let max = match config.max_iterations {
        Iterations::Fixed(n) => n,
        Iterations::Auto => candidate.generated().len(),
    };
    let mut refiner = Refiner { config, rng: ChaCha8Rng::seed_from_u64(config.rng_seed) };
    let mut cand = candidate.clone();
    let mut events = Vec::new();
    let mut converged = false;
    let mut iterations_run = 0;
    while iterations_run < max {
        let detected = refiner.detect(&cand)?;
        iterations_run += 1;
        let (core, hint, how) = match detected {
            Detected::Done { core } => {
                observer(&Observation { cnf: &cand.cnf, core: &core, detection: Detection::Oracle });
                converged = true;
                break;
            }
            Detected::Core { core, hint, how } => (core, hint, how),
        };
        observer(&Observation { cnf: &cand.cnf, core: &core, detection: how });
        let (target, model) = match hint {
            Some(h) => h,
            None => {
                let options = refiner.unprotected(&cand, &core);
                let &target = options.choose(&mut refiner.rng).expect("detected core has an unprotected clause");
                let rest: Vec<usize> = core.iter().copied().filter(|&i| i != target).collect();
                match sat::solve(&cand.cnf.subformula(&rest), &[], &config.solver).status {
                    Status::Sat(m) => (target, m),
                    Status::Unsat { .. } => unreachable!("detected core is minimal"),
                    Status::Unknown => return Err(GenError::LimitReached),
                }
            }
        };
        let (next, mut event) =
            decore_with_model(&cand, &core, target, &model, config.policy, &mut refiner.rng, iterations_run - 1);
        event.detection = how;
        if !config.protect_seed_core && !sat::is_unsat(&next.cnf, &config.solver)? {
            debug!("de-coring clause {target} made the instance satisfiable; stopping");
            converged = true;
            break;
        }
        cand = next;
        events.push(event);
    }
    if !sat::is_unsat(&cand.cnf, &config.solver)? {
        return Err(GenError::LostUnsat);
    }
    Ok(Refined { cnf: cand.cnf, iterations_run, events, converged })
}

#[derive(Clone, Copy, Debug)]
pub struct GenerateConfig<'a> {
    pub refine: RefineConfig<'a>,
    pub sampler: PsParams,
    /// Number of sampled clauses; defaults to the seed's clause count minus
    /// its core size.
    pub num_new_clauses: Option<usize>,
    /// Root seed; sampler and refinement seeds are derived from it.
    pub rng_seed: u64,
}

impl<'a> GenerateConfig<'a> {
    pub fn new(predictor: Predictor<'a>, rng_seed: u64) -> GenerateConfig<'a> {
        GenerateConfig { refine: RefineConfig::new(predictor), sampler: PsParams::default(), num_new_clauses: None, rng_seed }
    }
}

#[derive(Clone, Debug)]
pub struct Generated {
    pub cnf: Cnf,
    pub seed_core: CoreLabel,
    pub iterations_run: usize,
    pub events: Vec<DecoreEvent>,
    pub converged: bool,
    pub rng_seed: u64,
}

/// Per-output record written next to each generated file.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub seed_path: String,
    pub core_indices: Vec<usize>,
    pub iterations_run: usize,
    pub decore_events: Vec<DecoreEvent>,
    pub rng_seed: u64,
}

impl Generated {
    pub fn manifest(&self, seed_path: impl Into<String>) -> Manifest {
        Manifest {
            seed_path: seed_path.into(),
            core_indices: self.seed_core.indices().to_vec(),
            iterations_run: self.iterations_run,
            decore_events: self.events.clone(),
            rng_seed: self.rng_seed,
        }
    }
}

fn prepare<'a>(seed: &Cnf, config: &GenerateConfig<'a>) -> Result<(Candidate, CoreLabel, RefineConfig<'a>), GenError> {
    let seed_core = match extract_mus(seed, &config.refine.solver) {
        Err(OracleError::Satisfiable) => return Err(GenError::SeedSatisfiable),
        r => r?,
    };
    let mut root = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let sampler = PsParams { rng_seed: root.next_u64(), ..config.sampler };
    let refine = RefineConfig { rng_seed: root.next_u64(), ..config.refine };
    let count = config.num_new_clauses.unwrap_or(seed.num_clauses() - seed_core.len());
    let new = sample_clauses_ps(&SeedStats::from_cnf(seed), count, &sampler)?;
    Ok((assemble_unchecked(seed, &seed_core, &new), seed_core, refine))
}

/// Extracts the seed's core, adds sampled clauses and refines.
pub fn generate(seed: &Cnf, config: &GenerateConfig) -> Result<Generated, GenError> {
    let (candidate, seed_core, refine_config) = prepare(seed, config)?;
    let refined = refine(&candidate, &refine_config)?;
    Ok(Generated {
        cnf: refined.cnf,
        seed_core,
        iterations_run: refined.iterations_run,
        events: refined.events,
        converged: refined.converged,
        rng_seed: config.rng_seed,
    })
}

/// Runs the pipeline with oracle detection on each seed and keeps every
/// (instance, core) pair seen along the way. Pairs are verified.
pub fn build_training_pairs(
    seeds: &[Cnf],
    iterations_per_seed: usize,
    config: &GenerateConfig,
) -> Result<Vec<TrainingPair>, GenError> {
    let mut pairs = Vec::new();
    for (i, seed) in seeds.iter().enumerate() {
        pairs.extend(harvest_seed(seed, iterations_per_seed, config, i as u64)?);
    }
    Ok(pairs)
}

/// Pairs from a single seed; `index` offsets the root seed so that seeds
/// in a batch get independent streams.
pub fn harvest_seed(
    seed: &Cnf,
    iterations: usize,
    config: &GenerateConfig,
    index: u64,
) -> Result<Vec<TrainingPair>, GenError> {
    let config = GenerateConfig {
        refine: RefineConfig { predictor: Predictor::Oracle, max_iterations: Iterations::Fixed(iterations), ..config.refine },
        rng_seed: task_seed(config.rng_seed, index),
        ..*config
    };
    let (candidate, _, refine_config) = prepare(seed, &config)?;
    let mut found = Vec::new();
    refine_observed(&candidate, &refine_config, &mut |obs| {
        found.push((obs.cnf.clone(), CoreLabel::new(obs.core.to_vec(), LabelSource::Oracle)));
    })?;
    let mut pairs = Vec::with_capacity(found.len());
    for (cnf, label) in found {
        if !verify_mus(&cnf, &label, &config.refine.solver)? {
            return Err(GenError::Oracle(OracleError::Satisfiable));
        }
        pairs.push(TrainingPair::new(cnf, label)?);
    }
    Ok(pairs)
}

/// Writes `<name>.cnf` and `<name>.core.json` into `dir`.
pub fn write_pair(dir: &Path, name: &str, pair: &TrainingPair) -> Result<(), GenError> {
    fs::create_dir_all(dir)?;
    let cnf_name = format!("{name}.cnf");
    fs::write(dir.join(&cnf_name), serialize_dimacs(&pair.cnf))?;
    let label = CoreLabelFile::new(cnf_name, &pair.label);
    fs::write(dir.join(format!("{name}.core.json")), serde_json::to_string(&label)? + "\n")?;
    Ok(())
}

/// Reads every `*.core.json` in `dir` with its DIMACS file, sorted by name.
pub fn read_pairs(dir: &Path) -> Result<Vec<TrainingPair>, GenError> {
    let mut labels: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with(".core.json"))
        .collect();
    labels.sort();
    let mut pairs = Vec::with_capacity(labels.len());
    for path in labels {
        let file: CoreLabelFile = serde_json::from_str(&fs::read_to_string(&path)?)?;
        let cnf = parse_dimacs(&fs::read_to_string(dir.join(&file.instance))?)?;
        pairs.push(TrainingPair::new(cnf, file.label())?);
    }
    Ok(pairs)
}

/// Seed of task `index` under `root`. Independent of scheduling, so serial
/// and parallel runs agree.
pub fn task_seed(root: u64, index: u64) -> u64 {
    // splitmix64 finalizer over the pair
    let mut z = root ^ index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// The full generation pipeline as an augmentation source. Copy `j` of
/// original `i` uses root seed `task_seed(task_seed(rng_seed, i), j)`.
pub struct GeneratorAugmenter<'a> {
    pub config: GenerateConfig<'a>,
}

impl Augmenter for GeneratorAugmenter<'_> {
    fn name(&self) -> &str {
        match self.config.refine.predictor {
            Predictor::Gnn(_) => "generate-gnn",
            Predictor::Oracle => "generate-oracle",
        }
    }

    fn augment(&self, original: &Cnf, index: usize, count: usize) -> Result<Vec<Cnf>, String> {
        let base = task_seed(self.config.rng_seed, index as u64);
        (0..count)
            .map(|j| {
                let config = GenerateConfig { rng_seed: task_seed(base, j as u64), ..self.config };
                generate(original, &config).map(|g| g.cnf).map_err(|e| e.to_string())
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::extract_mus;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn trivial_core() -> Cnf {
        parse_dimacs("p cnf 2 4\n1 2 0\n-1 2 0\n1 -2 0\n-1 -2 0").unwrap()
    }

    fn solver() -> SolverConfig {
        SolverConfig::default()
    }

    fn all_of(n: usize) -> CoreLabel {
        CoreLabel::new((0..n).collect(), LabelSource::Oracle)
    }

    #[test]
    fn ksat_forced_size() {
        let p = KsatParams { m: Some(5), n: Some(10), rng_seed: 3, ..KsatParams::default() };
        let cnf = sample_ksat(&p).unwrap();
        assert_eq!(cnf.num_clauses(), 5);
        assert_eq!(cnf.num_vars(), 10);
        let keys: HashSet<_> = cnf.clauses().iter().map(|c| c.key()).collect();
        assert_eq!(keys.len(), 5);
        assert!(cnf.clauses().iter().all(|c| c.len() == 3 && c.max_var() <= 10));
        assert_eq!(cnf, sample_ksat(&p).unwrap());
    }

    #[test]
    fn ksat_infeasible() {
        let p = KsatParams { m: Some(9), n: Some(3), ..KsatParams::default() };
        assert!(matches!(sample_ksat(&p), Err(GenError::Infeasible { .. })));
        let p = KsatParams { m: Some(8), n: Some(3), ..KsatParams::default() };
        assert_eq!(sample_ksat(&p).unwrap().num_clauses(), 8);
    }

    #[test]
    fn ksat_mean_clause_count() {
        let counts: Vec<usize> = (0..200)
            .map(|s| sample_ksat(&KsatParams { rng_seed: s, ..KsatParams::default() }).unwrap().num_clauses())
            .collect();
        let mean = counts.iter().sum::<usize>() as f64 / 200.0;
        assert!((mean - 400.0).abs() <= 3.0 * 100.0 / 200f64.sqrt(), "mean {mean}");
    }

    fn uniform_stats(n: u32) -> SeedStats {
        let clauses: Vec<Clause> = (1..=n).map(|v| Clause::from_dimacs(&[v as i32])).collect();
        SeedStats::from_cnf(&Cnf::new(n, clauses))
    }

    #[test]
    fn sampler_uniform_when_beta_v_zero() {
        let n = 40u32;
        let mut stats = uniform_stats(n);
        // Skew occurrence counts; with beta_v = 0 they must not matter.
        for (i, o) in stats.occurrences.iter_mut().enumerate() {
            *o = i as u32 * 7;
        }
        let p = PsParams { avg_clause_size: Some(3.0), beta_v: 0.0, temperature: 1.0, rng_seed: 1, ..PsParams::default() };
        let clauses = sample_clauses_ps(&stats, 3334, &p).unwrap();
        let mut counts = vec![0f64; n as usize];
        for c in &clauses {
            for l in c.literals() {
                counts[l.var_index()] += 1.0;
            }
        }
        let total: f64 = counts.iter().sum();
        assert_eq!(total, 10_002.0);
        let expected = total / n as f64;
        let chi2: f64 = counts.iter().map(|c| (c - expected).powi(2) / expected).sum();
        let p_value = 1.0 - ChiSquared::new((n - 1) as f64).unwrap().cdf(chi2);
        assert!(p_value > 0.01, "chi2 {chi2} p {p_value}");
    }

    #[test]
    fn sampler_favours_popular_variables() {
        let n = 50u32;
        let mut stats = uniform_stats(n);
        for (i, o) in stats.occurrences.iter_mut().enumerate() {
            *o = if i < 5 { 10 } else { 4 };
        }
        let p = PsParams { avg_clause_size: Some(3.0), beta_v: 5.0, rng_seed: 2, ..PsParams::default() };
        let clauses = sample_clauses_ps(&stats, 300, &p).unwrap();
        let top = clauses.iter().flat_map(|c| c.literals()).filter(|l| l.var() <= 5).count();
        let total: usize = clauses.iter().map(Clause::len).sum();
        assert!(top as f64 / total as f64 > 0.2, "{top} of {total}");
    }

    #[test]
    fn sampler_sizes_and_novelty() {
        let seed = sample_ksat(&KsatParams { m: Some(250), n: Some(60), rng_seed: 4, ..KsatParams::default() }).unwrap();
        let stats = SeedStats::from_cnf(&seed);
        assert!(sample_clauses_ps(&stats, 0, &PsParams::default()).unwrap().is_empty());
        let out = sample_clauses_ps(&stats, 200, &PsParams::default()).unwrap();
        assert_eq!(out.len(), 200);
        assert!(out.iter().all(|c| c.len() == 3));
        let seed_keys: HashSet<_> = seed.clauses().iter().map(|c| c.key()).collect();
        let keys: HashSet<_> = out.iter().map(|c| c.key()).collect();
        assert_eq!(keys.len(), 200);
        assert!(keys.is_disjoint(&seed_keys));
        let skewed = PsParams { beta_c: 0.5, avg_clause_size: Some(4.0), ..PsParams::default() };
        let out = sample_clauses_ps(&stats, 200, &skewed).unwrap();
        let mean = out.iter().map(Clause::len).sum::<usize>() as f64 / 200.0;
        assert!(out.iter().any(|c| c.len() > 6));
        assert!((mean - 4.0).abs() < 0.5, "mean {mean}");
    }

    #[test]
    fn assemble_puts_core_first() {
        let seed = trivial_core();
        let cand = assemble_candidate(&seed, &all_of(4), &[Clause::from_dimacs(&[3, 4])], &solver()).unwrap();
        assert_eq!(cand.cnf.num_clauses(), 5);
        assert_eq!(cand.cnf.num_vars(), 4);
        assert_eq!(cand.protected(), 0..4);
        assert_eq!(cand.generated(), 4..5);
        assert!(sat::is_unsat(&cand.cnf, &solver()).unwrap());
        let bare = assemble_candidate(&seed, &all_of(4), &[], &solver()).unwrap();
        assert_eq!(bare.cnf, seed);
        let bad = CoreLabel::new(vec![0, 1, 2], LabelSource::Oracle);
        assert!(matches!(assemble_candidate(&seed, &bad, &[], &solver()), Err(GenError::BadSeedCore)));
    }

    fn unprotected_trivial() -> Candidate {
        Candidate { cnf: trivial_core(), num_protected: 0 }
    }

    #[test]
    fn decore_fresh_variable() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (next, event) =
            decore(&unprotected_trivial(), &all_of(4), DecorePolicy::FreshVariable, true, &mut rng, &solver()).unwrap();
        assert!(event.fresh_variable);
        assert_eq!(event.literal, 3);
        assert_eq!(next.cnf.num_vars(), 3);
        assert_eq!(next.cnf.clause(event.target).len(), 3);
        assert!(!sat::is_unsat(&next.cnf, &solver()).unwrap());
    }

    #[test]
    fn decore_model_guided() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cand = Candidate { cnf: trivial_core().with_num_vars(4), num_protected: 0 };
            let (next, event) =
                decore(&cand, &all_of(4), DecorePolicy::ModelGuided, true, &mut rng, &solver()).unwrap();
            assert!(!event.fresh_variable);
            assert!(event.literal.unsigned_abs() >= 3);
            assert!(!sat::is_unsat(&next.cnf, &solver()).unwrap());
        }
        // No variable is left to add: falls back to a fresh one.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (next, event) =
            decore(&unprotected_trivial(), &all_of(4), DecorePolicy::ModelGuided, true, &mut rng, &solver()).unwrap();
        assert!(event.fresh_variable);
        assert!(!sat::is_unsat(&next.cnf, &solver()).unwrap());
    }

    #[test]
    fn decore_all_protected() {
        let cand = Candidate { cnf: trivial_core(), num_protected: 4 };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(
            decore(&cand, &all_of(4), DecorePolicy::ModelGuided, true, &mut rng, &solver()).unwrap_err(),
            DecoreError::AllProtected
        );
    }

    /// Protected trivial core over variables 1-2 plus a generated trivial
    /// core over variables 3-4 that an ascending oracle finds first.
    fn two_cores() -> Candidate {
        let seed = trivial_core();
        let extra: Vec<Clause> =
            [[3, 4], [-3, 4], [3, -4], [-3, -4]].iter().map(|c| Clause::from_dimacs(c)).collect();
        assemble_candidate(&seed.with_num_vars(4), &all_of(4), &extra, &solver()).unwrap()
    }

    #[test]
    fn refine_breaks_generated_core() {
        for predictor in [Predictor::Oracle] {
            let cand = two_cores();
            let cfg = RefineConfig { rng_seed: 5, max_iterations: Iterations::Fixed(100), ..RefineConfig::new(predictor) };
            let out = refine(&cand, &cfg).unwrap();
            assert!(out.converged);
            assert!(!out.events.is_empty());
            assert_eq!(extract_mus(&out.cnf, &solver()).unwrap().indices(), &[0, 1, 2, 3]);
            assert_eq!(&out.cnf.clauses()[..4], &cand.cnf.clauses()[..4]);
        }
    }

    #[test]
    fn refine_with_gnn_predictor() {
        let model = GnnModel::new(crate::gnn::GnnConfig::default()).unwrap();
        let cand = two_cores();
        let out = refine(&cand, &RefineConfig { rng_seed: 5, ..RefineConfig::new(Predictor::Gnn(&model)) }).unwrap();
        assert!(sat::is_unsat(&out.cnf, &solver()).unwrap());
        assert_eq!(&out.cnf.clauses()[..4], &cand.cnf.clauses()[..4]);
    }

    #[test]
    fn refine_zero_iterations_is_identity() {
        let cand = two_cores();
        let cfg = RefineConfig { max_iterations: Iterations::Fixed(0), ..RefineConfig::new(Predictor::Oracle) };
        let out = refine(&cand, &cfg).unwrap();
        assert_eq!(out.cnf, cand.cnf);
        assert_eq!(out.iterations_run, 0);
    }

    #[test]
    fn generate_trivial_seed_is_identity() {
        let cfg = GenerateConfig::new(Predictor::Oracle, 0);
        let out = generate(&trivial_core(), &cfg).unwrap();
        assert_eq!(out.cnf, trivial_core());
        assert_eq!(out.seed_core.indices(), &[0, 1, 2, 3]);
    }

    #[test]
    fn generate_rejects_satisfiable_seed() {
        let cfg = GenerateConfig::new(Predictor::Oracle, 0);
        let seed = Cnf::from_dimacs_clauses(2, &[&[1, 2]]);
        assert!(matches!(generate(&seed, &cfg), Err(GenError::SeedSatisfiable)));
    }

    fn small_unsat_seed(seed: u64) -> Cnf {
        let p = KsatParams { m: Some(110), n: Some(25), rng_seed: seed, ..KsatParams::default() };
        sample_unsat_ksat(&p, 100, &solver()).unwrap().0
    }

    #[test]
    fn generate_ksat_seed() {
        let seed = small_unsat_seed(10);
        for predictor in [Predictor::Oracle] {
            let cfg = GenerateConfig::new(predictor, 42);
            let out = generate(&seed, &cfg).unwrap();
            assert!(sat::is_unsat(&out.cnf, &solver()).unwrap());
            assert_eq!(out.cnf.num_clauses(), seed.num_clauses());
            let core = seed.subformula(out.seed_core.indices());
            assert_eq!(&out.cnf.clauses()[..core.num_clauses()], core.clauses());
            let again = generate(&seed, &cfg).unwrap();
            assert_eq!(again.cnf, out.cnf);
        }
    }

    #[test]
    fn harvest_counts_and_verifies() {
        let seed = small_unsat_seed(11);
        let cfg = GenerateConfig::new(Predictor::Oracle, 1);
        let pairs = build_training_pairs(std::slice::from_ref(&seed), 5, &cfg).unwrap();
        assert!(!pairs.is_empty() && pairs.len() <= 5);
        let mus = extract_mus(&seed, &solver()).unwrap();
        let core = seed.subformula(mus.indices());
        for p in &pairs {
            assert!(verify_mus(&p.cnf, &p.label, &solver()).unwrap());
            assert_eq!(&p.cnf.clauses()[..core.num_clauses()], core.clauses());
        }
    }

    #[test]
    fn pair_store_round_trip() {
        let dir = std::env::temp_dir().join(format!("coregen-pairs-{}", std::process::id()));
        let pair = TrainingPair::new(trivial_core(), all_of(4)).unwrap();
        write_pair(&dir, "p0", &pair).unwrap();
        let back = read_pairs(&dir).unwrap();
        fs::remove_dir_all(&dir).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].cnf, pair.cnf);
        assert_eq!(back[0].label, pair.label);
    }
}
