//! Exact minimal unsatisfiable subset extraction and verification.
//!
//! Each clause `c_i` is guarded by a selector variable `s_i` and loaded as
//! `(!s_i | c_i)`; assuming `s_i` switches the clause on. Extraction first
//! shrinks the clause set to the final-conflict subset of a full check, then
//! tries to drop the remaining clauses one at a time in ascending index
//! order. A successful drop also discards every clause outside the new
//! final-conflict subset. The result is subset-minimal; it is not
//! necessarily the smallest core, and which core is found depends on the
//! clause order: later clauses are kept in preference to earlier ones.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cnf::{Clause, Cnf, Literal};
use crate::sat::{self, Model, SolveStats, Solver, SolverConfig, Status};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    Oracle,
    Predicted,
}

/// A set of clause indices marked as core members.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoreLabel {
    clause_indices: Vec<usize>,
    pub source: LabelSource,
}

impl CoreLabel {
    pub fn new(mut clause_indices: Vec<usize>, source: LabelSource) -> CoreLabel {
        clause_indices.sort_unstable();
        clause_indices.dedup();
        CoreLabel { clause_indices, source }
    }

    /// Sorted, without repetition.
    pub fn indices(&self) -> &[usize] {
        &self.clause_indices
    }

    pub fn len(&self) -> usize {
        self.clause_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clause_indices.is_empty()
    }

    pub fn contains(&self, index: usize) -> bool {
        self.clause_indices.binary_search(&index).is_ok()
    }

    /// Per-clause membership flags for a formula with `num_clauses` clauses.
    pub fn to_mask(&self, num_clauses: usize) -> Vec<bool> {
        let mut mask = vec![false; num_clauses];
        for &i in &self.clause_indices {
            mask[i] = true;
        }
        mask
    }

    pub fn check_range(&self, num_clauses: usize) -> Result<(), OracleError> {
        match self.clause_indices.last() {
            Some(&i) if i >= num_clauses => Err(OracleError::IndexOutOfRange { index: i, len: num_clauses }),
            _ => Ok(()),
        }
    }
}

/// On-disk form of a core label.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoreLabelFile {
    pub instance: String,
    pub core: Vec<usize>,
    pub source: LabelSource,
}

impl CoreLabelFile {
    pub fn new(instance: impl Into<String>, label: &CoreLabel) -> CoreLabelFile {
        CoreLabelFile { instance: instance.into(), core: label.indices().to_vec(), source: label.source }
    }

    pub fn label(&self) -> CoreLabel {
        CoreLabel::new(self.core.clone(), self.source)
    }
}

/// State of an interrupted extraction, sufficient to resume it.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct MusProgress {
    /// Clauses shown to be necessary.
    pub confirmed: Vec<usize>,
    /// Clauses not yet tested, ascending.
    pub untested: Vec<usize>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OracleError {
    #[error("input is satisfiable")]
    Satisfiable,
    #[error("solver hit its conflict limit; {} clauses confirmed, {} untested", progress.confirmed.len(), progress.untested.len())]
    LimitReached { progress: MusProgress },
    #[error("clause index {index} out of range (formula has {len} clauses)")]
    IndexOutOfRange { index: usize, len: usize },
}

#[derive(Clone, Debug)]
pub enum SubsetStatus {
    Sat(Model),
    /// Clause indices whose selectors took part in the final conflict.
    Unsat(Vec<usize>),
    Unknown,
}

/// Incremental solver over a formula whose clauses can be switched on and
/// off through assumptions.
pub struct SelectorSolver {
    solver: Solver,
    clauses: Vec<Clause>,
    /// Clauses mentioning each variable.
    occurs: Vec<Vec<usize>>,
    first_selector: u32,
    num_vars: u32,
    num_clauses: usize,
    stats: SolveStats,
    calls: u64,
}

impl SelectorSolver {
    pub fn new(cnf: &Cnf, config: SolverConfig) -> SelectorSolver {
        let mut solver = Solver::new(cnf.num_vars(), config);
        let first_selector = solver.add_vars(cnf.num_clauses() as u32);
        let mut occurs = vec![Vec::new(); cnf.num_vars() as usize];
        for (i, c) in cnf.clauses().iter().enumerate() {
            for l in c.literals() {
                occurs[l.var_index()].push(i);
            }
            let mut lits = Vec::with_capacity(c.len() + 1);
            lits.push(Literal::negative(first_selector + i as u32));
            lits.extend_from_slice(c.literals());
            solver.add_clause(&lits);
        }
        SelectorSolver {
            solver,
            clauses: cnf.clauses().to_vec(),
            occurs,
            first_selector,
            num_vars: cnf.num_vars(),
            num_clauses: cnf.num_clauses(),
            stats: SolveStats::default(),
            calls: 0,
        }
    }

    fn selector(&self, clause: usize) -> Literal {
        Literal::positive(self.first_selector + clause as u32)
    }

    /// Solves with exactly the clauses in `active` switched on (plus any
    /// clause fixed by [`SelectorSolver::keep`]). Selectors are assumed from
    /// the highest clause index down, so final conflicts lean towards later
    /// clauses.
    pub fn check(&mut self, active: &[usize]) -> SubsetStatus {
        let mut order = active.to_vec();
        order.sort_unstable_by(|a, b| b.cmp(a));
        let assumptions: Vec<Literal> = order.iter().map(|&i| self.selector(i)).collect();
        let res = self.solver.solve_with(&assumptions);
        self.calls += 1;
        self.stats.conflicts += res.stats.conflicts;
        self.stats.decisions += res.stats.decisions;
        self.stats.propagations += res.stats.propagations;
        self.stats.wall_seconds += res.stats.wall_seconds;
        match res.status {
            Status::Sat(model) => SubsetStatus::Sat(model.truncated(self.num_vars as usize)),
            Status::Unsat { failed } => {
                let mut core: Vec<usize> =
                    failed.iter().map(|l| (l.var() - self.first_selector) as usize).collect();
                core.sort_unstable();
                SubsetStatus::Unsat(core)
            }
            Status::Unknown => SubsetStatus::Unknown,
        }
    }

    /// Permanently switches a clause off.
    pub fn discard(&mut self, clause: usize) {
        let s = self.selector(clause);
        self.solver.add_clause(&[!s]);
    }

    /// Permanently switches a clause on.
    pub fn keep(&mut self, clause: usize) {
        let s = self.selector(clause);
        self.solver.add_clause(&[s]);
    }

    pub fn num_clauses(&self) -> usize {
        self.num_clauses
    }

    pub fn calls(&self) -> u64 {
        self.calls
    }

    pub fn stats(&self) -> SolveStats {
        self.stats
    }

    /// Deletion-based shrinking of `untested` given already necessary
    /// clauses. Requires `confirmed ∪ untested` to be unsatisfiable.
    pub fn shrink(&mut self, progress: MusProgress) -> Result<Vec<usize>, OracleError> {
        let MusProgress { mut confirmed, untested } = progress;
        let mut untested: VecDeque<usize> = untested.into();
        let mut in_set = vec![false; self.num_clauses];
        let mut is_confirmed = vec![false; self.num_clauses];
        for &i in confirmed.iter().chain(untested.iter()) {
            in_set[i] = true;
        }
        for &i in &confirmed {
            is_confirmed[i] = true;
        }
        while let Some(idx) = untested.pop_front() {
            if is_confirmed[idx] {
                continue;
            }
            let trial: Vec<usize> = confirmed.iter().chain(untested.iter().filter(|&&i| !is_confirmed[i])).copied().collect();
            match self.check(&trial) {
                SubsetStatus::Unsat(core) => {
                    self.discard(idx);
                    in_set[idx] = false;
                    untested.retain(|i| {
                        let keep = is_confirmed[*i] || core.binary_search(i).is_ok();
                        in_set[*i] = keep;
                        keep
                    });
                }
                SubsetStatus::Sat(model) => {
                    let mut found = vec![idx];
                    self.rotate(idx, model.values().to_vec(), &in_set, &mut is_confirmed, &mut found);
                    for c in found {
                        self.keep(c);
                        is_confirmed[c] = true;
                        confirmed.push(c);
                    }
                }
                SubsetStatus::Unknown => {
                    untested.push_front(idx);
                    untested.retain(|&i| !is_confirmed[i]);
                    confirmed.sort_unstable();
                    return Err(OracleError::LimitReached {
                        progress: MusProgress { confirmed, untested: untested.into() },
                    });
                }
            }
        }
        confirmed.sort_unstable();
        Ok(confirmed)
    }

    /// Model rotation: `model` satisfies every clause of the current set
    /// except `start`. Flipping one variable of `start` that leaves exactly
    /// one other clause falsified proves that clause necessary too.
    fn rotate(&self, start: usize, model: Vec<bool>, in_set: &[bool], is_confirmed: &mut [bool], found: &mut Vec<usize>) {
        is_confirmed[start] = true;
        let mut work = vec![(start, model)];
        while let Some((clause, model)) = work.pop() {
            for lit in self.clauses[clause].literals() {
                let v = lit.var_index();
                let mut flipped = model.clone();
                flipped[v] = !flipped[v];
                let mut falsified = self.occurs[v]
                    .iter()
                    .copied()
                    .filter(|&c| in_set[c] && c != clause && !self.clauses[c].is_satisfied_by(&flipped));
                if let (Some(c), None) = (falsified.next(), falsified.next()) {
                    if !is_confirmed[c] {
                        is_confirmed[c] = true;
                        found.push(c);
                        work.push((c, flipped));
                    }
                }
            }
        }
    }
}

/// Extracts a minimal unsatisfiable subset of `cnf`.
pub fn extract_mus(cnf: &Cnf, config: &SolverConfig) -> Result<CoreLabel, OracleError> {
    let mut ss = SelectorSolver::new(cnf, *config);
    let all: Vec<usize> = (0..cnf.num_clauses()).collect();
    let untested = match ss.check(&all) {
        SubsetStatus::Sat(_) => return Err(OracleError::Satisfiable),
        SubsetStatus::Unknown => {
            return Err(OracleError::LimitReached { progress: MusProgress { confirmed: vec![], untested: all } })
        }
        SubsetStatus::Unsat(core) => core,
    };
    let mus = ss.shrink(MusProgress { confirmed: vec![], untested })?;
    Ok(CoreLabel::new(mus, LabelSource::Oracle))
}

/// Extracts a minimal unsatisfiable subset that uses clauses in `avoid`
/// as little as the deletion order allows. A core free of `avoid` is
/// returned whenever one exists; a core made only of `avoid` clauses is
/// returned only when every core contains all of them.
pub fn extract_mus_avoiding(cnf: &Cnf, avoid: &[usize], config: &SolverConfig) -> Result<CoreLabel, OracleError> {
    let n = cnf.num_clauses();
    let mut avoided = vec![false; n];
    for &i in avoid {
        if i >= n {
            return Err(OracleError::IndexOutOfRange { index: i, len: n });
        }
        avoided[i] = true;
    }
    let mut ss = SelectorSolver::new(cnf, *config);
    let all: Vec<usize> = (0..n).collect();
    let limit = |untested: Vec<usize>| OracleError::LimitReached { progress: MusProgress { confirmed: vec![], untested } };
    match ss.check(&all) {
        SubsetStatus::Sat(_) => return Err(OracleError::Satisfiable),
        SubsetStatus::Unknown => return Err(limit(all)),
        SubsetStatus::Unsat(_) => {}
    }
    let preferred: Vec<usize> = (0..n).filter(|&i| !avoided[i]).collect();
    let untested = match ss.check(&preferred) {
        SubsetStatus::Unsat(core) => core,
        SubsetStatus::Sat(_) => avoid.iter().copied().chain(preferred).collect(),
        SubsetStatus::Unknown => return Err(limit(all)),
    };
    let mus = ss.shrink(MusProgress { confirmed: vec![], untested })?;
    Ok(CoreLabel::new(mus, LabelSource::Oracle))
}

/// Continues an extraction interrupted by [`OracleError::LimitReached`],
/// typically with a larger conflict limit.
pub fn resume_mus(cnf: &Cnf, progress: MusProgress, config: &SolverConfig) -> Result<CoreLabel, OracleError> {
    for &i in progress.confirmed.iter().chain(&progress.untested) {
        if i >= cnf.num_clauses() {
            return Err(OracleError::IndexOutOfRange { index: i, len: cnf.num_clauses() });
        }
    }
    let mut ss = SelectorSolver::new(cnf, *config);
    let mus = ss.shrink(progress)?;
    Ok(CoreLabel::new(mus, LabelSource::Oracle))
}

/// Extracts a minimal unsatisfiable subset among the clauses in `subset`.
pub fn extract_mus_within(cnf: &Cnf, subset: &[usize], config: &SolverConfig) -> Result<CoreLabel, OracleError> {
    let mut subset = subset.to_vec();
    subset.sort_unstable();
    subset.dedup();
    let label = CoreLabel::new(subset.clone(), LabelSource::Oracle);
    label.check_range(cnf.num_clauses())?;
    let sub = cnf.subformula(&subset);
    let local = extract_mus(&sub, config)?;
    Ok(CoreLabel::new(local.indices().iter().map(|&i| subset[i]).collect(), LabelSource::Oracle))
}

fn subset_unsat(cnf: &Cnf, indices: &[usize], config: &SolverConfig) -> Result<bool, OracleError> {
    let sub = cnf.subformula(indices);
    sat::is_unsat(&sub, config)
        .map_err(|_| OracleError::LimitReached { progress: MusProgress::default() })
}

/// True iff the labelled clauses are unsatisfiable and removing any single
/// one of them makes the rest satisfiable. Uses a fresh solver per check.
pub fn verify_mus(cnf: &Cnf, label: &CoreLabel, config: &SolverConfig) -> Result<bool, OracleError> {
    label.check_range(cnf.num_clauses())?;
    let idx = label.indices();
    if !subset_unsat(cnf, idx, config)? {
        return Ok(false);
    }
    for skip in 0..idx.len() {
        let rest: Vec<usize> = idx.iter().enumerate().filter(|&(k, _)| k != skip).map(|(_, &i)| i).collect();
        if subset_unsat(cnf, &rest, config)? {
            return Ok(false);
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cnf::{parse_dimacs, Clause};
    use crate::testutil::{brute_force_sat, random_cnf};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn trivial_core() -> Cnf {
        parse_dimacs("p cnf 2 4\n1 2 0\n-1 2 0\n1 -2 0\n-1 -2 0").unwrap()
    }

    fn config() -> SolverConfig {
        SolverConfig::default()
    }

    /// All subset-minimal unsatisfiable subsets, by enumerating every subset.
    fn all_muses(cnf: &Cnf) -> Vec<Vec<usize>> {
        let n = cnf.num_clauses();
        assert!(n <= 14);
        let unsat: Vec<bool> = (0u32..1 << n)
            .map(|mask| {
                let idx: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
                brute_force_sat(&cnf.subformula(&idx)).is_none()
            })
            .collect();
        (0u32..1 << n)
            .filter(|&mask| unsat[mask as usize] && (0..n).all(|i| mask >> i & 1 == 0 || !unsat[(mask & !(1 << i)) as usize]))
            .map(|mask| (0..n).filter(|i| mask >> i & 1 == 1).collect())
            .collect()
    }

    #[test]
    fn trivial_core_is_its_own_mus() {
        let cnf = trivial_core();
        let label = extract_mus(&cnf, &config()).unwrap();
        assert_eq!(label.indices(), &[0, 1, 2, 3]);
        assert_eq!(label.source, LabelSource::Oracle);
        assert!(verify_mus(&cnf, &label, &config()).unwrap());
    }

    #[test]
    fn irrelevant_clause_excluded() {
        let cnf = trivial_core().extended(&[Clause::from_dimacs(&[3])]);
        assert_eq!(all_muses(&cnf), vec![vec![0, 1, 2, 3]]);
        let label = extract_mus(&cnf, &config()).unwrap();
        assert_eq!(label.indices(), &[0, 1, 2, 3]);
        let everything = CoreLabel::new((0..5).collect(), LabelSource::Oracle);
        assert!(!verify_mus(&cnf, &everything, &config()).unwrap());
    }

    #[test]
    fn satisfiable_input_rejected() {
        let cnf = trivial_core().add_literal(0, Literal::positive(3)).unwrap();
        assert_eq!(extract_mus(&cnf, &config()), Err(OracleError::Satisfiable));
    }

    #[test]
    fn verify_rejects_satisfiable_subset() {
        let label = CoreLabel::new(vec![0, 1, 2], LabelSource::Oracle);
        assert!(!verify_mus(&trivial_core(), &label, &config()).unwrap());
        let bad = CoreLabel::new(vec![0, 9], LabelSource::Oracle);
        assert_eq!(
            verify_mus(&trivial_core(), &bad, &config()),
            Err(OracleError::IndexOutOfRange { index: 9, len: 4 })
        );
    }

    #[test]
    fn matches_enumerated_mus_family() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut checked = 0;
        while checked < 60 {
            let n = rng.random_range(2..=4);
            let m = rng.random_range(4..=11);
            let cnf = random_cnf(&mut rng, n, m, 1..=3);
            if brute_force_sat(&cnf).is_some() {
                continue;
            }
            let family = all_muses(&cnf);
            let label = extract_mus(&cnf, &config()).unwrap();
            assert!(family.contains(&label.indices().to_vec()), "{cnf:?}: {label:?} not in {family:?}");
            assert!(verify_mus(&cnf, &label, &config()).unwrap());
            checked += 1;
        }
    }

    #[test]
    fn deterministic_extraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cnf = loop {
            let c = random_cnf(&mut rng, 20, 100, 3..=3);
            if brute_force_sat(&c).is_none() {
                break c;
            }
        };
        let a = extract_mus(&cnf, &config()).unwrap();
        let b = extract_mus(&cnf, &config()).unwrap();
        assert_eq!(a, b);
        assert!(verify_mus(&cnf, &a, &config()).unwrap());
    }

    #[test]
    fn limit_is_resumable() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let cnf = loop {
            let c = random_cnf(&mut rng, 20, 100, 3..=3);
            if brute_force_sat(&c).is_none() {
                break c;
            }
        };
        let tight = config().with_conflict_limit(Some(3));
        let mut label = None;
        // Alternate a tight budget with a generous one until done.
        let mut progress = match extract_mus(&cnf, &tight) {
            Ok(l) => {
                label = Some(l);
                MusProgress::default()
            }
            Err(OracleError::LimitReached { progress }) => progress,
            Err(e) => panic!("{e}"),
        };
        while label.is_none() {
            match resume_mus(&cnf, progress.clone(), &config()) {
                Ok(l) => label = Some(l),
                Err(OracleError::LimitReached { progress: p }) => progress = p,
                Err(e) => panic!("{e}"),
            }
        }
        assert!(verify_mus(&cnf, &label.unwrap(), &config()).unwrap());
    }

    #[test]
    fn within_subset() {
        let cnf = Cnf::from_dimacs_clauses(3, &[&[3], &[1, 2], &[-1, 2], &[1, -2], &[-1, -2], &[-3]]);
        let label = extract_mus_within(&cnf, &[1, 2, 3, 4], &config()).unwrap();
        assert_eq!(label.indices(), &[1, 2, 3, 4]);
        let label = extract_mus(&cnf, &config()).unwrap();
        assert_eq!(label.indices(), &[0, 5]);
    }

    #[test]
    fn avoiding_prefers_other_clauses() {
        // Two disjoint trivial cores; the first is to be avoided.
        let cnf = Cnf::from_dimacs_clauses(
            4,
            &[&[1, 2], &[-1, 2], &[1, -2], &[-1, -2], &[3, 4], &[-3, 4], &[3, -4], &[-3, -4]],
        );
        let label = extract_mus_avoiding(&cnf, &[0, 1, 2, 3], &config()).unwrap();
        assert_eq!(label.indices(), &[4, 5, 6, 7]);
        // Core mixing avoided and free clauses.
        let cnf = Cnf::from_dimacs_clauses(2, &[&[1, 2], &[-1, 2], &[1, -2], &[-1, -2], &[1]]);
        let label = extract_mus_avoiding(&cnf, &[0, 1, 2, 3], &config()).unwrap();
        assert!(label.contains(4));
        assert!(verify_mus(&cnf, &label, &config()).unwrap());
        let label = extract_mus_avoiding(&trivial_core(), &[0, 1, 2, 3], &config()).unwrap();
        assert_eq!(label.indices(), &[0, 1, 2, 3]);
    }

    #[test]
    fn avoiding_matches_enumerated_family() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut checked = 0;
        while checked < 40 {
            let cnf = random_cnf(&mut rng, 3, 9, 1..=3);
            if brute_force_sat(&cnf).is_some() {
                continue;
            }
            let family = all_muses(&cnf);
            let avoid = [0, 1, 2, 3];
            let label = extract_mus_avoiding(&cnf, &avoid, &config()).unwrap();
            assert!(family.contains(&label.indices().to_vec()));
            let free_exists = family.iter().any(|m| m.iter().all(|i| !avoid.contains(i)));
            if free_exists {
                assert!(label.indices().iter().all(|i| !avoid.contains(i)));
            }
            checked += 1;
        }
    }

    #[test]
    fn label_json_shape() {
        let file = CoreLabelFile::new("a.cnf", &CoreLabel::new(vec![3, 1], LabelSource::Oracle));
        let json = serde_json::to_string(&file).unwrap();
        assert_eq!(json, r#"{"instance":"a.cnf","core":[1,3],"source":"oracle"}"#);
        let back: CoreLabelFile = serde_json::from_str(&json).unwrap();
        assert_eq!(back.label().indices(), &[1, 3]);
    }
}
