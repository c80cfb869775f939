//! Brute-force oracles and random instance helpers shared by unit tests.

use std::ops::RangeInclusive;

use rand::Rng;

use crate::cnf::{Clause, Cnf, Literal};

/// Exhaustive truth-table search; returns a model if one exists.
pub fn brute_force_sat(cnf: &Cnf) -> Option<Vec<bool>> {
    let n = cnf.num_vars() as usize;
    assert!(n <= 24, "truth table too large");
    let masks: Vec<(u32, u32)> = cnf
        .clauses()
        .iter()
        .map(|c| {
            c.literals().iter().fold((0, 0), |(p, q), l| {
                let bit = 1u32 << l.var_index();
                if l.is_positive() {
                    (p | bit, q)
                } else {
                    (p, q | bit)
                }
            })
        })
        .collect();
    (0u32..(1u32 << n))
        .find(|&a| masks.iter().all(|&(p, q)| a & p != 0 || !a & q != 0))
        .map(|a| (0..n).map(|i| a >> i & 1 == 1).collect())
}

/// `m` clauses over `n` variables with sizes drawn from `sizes`; variables
/// within a clause are distinct.
pub fn random_cnf(rng: &mut impl Rng, n: u32, m: usize, sizes: RangeInclusive<usize>) -> Cnf {
    let clauses = (0..m)
        .map(|_| {
            let k = rng.random_range(sizes.clone()).min(n as usize);
            let mut vars: Vec<u32> = Vec::new();
            while vars.len() < k {
                let v = rng.random_range(1..=n);
                if !vars.contains(&v) {
                    vars.push(v);
                }
            }
            Clause::new(vars.into_iter().map(|v| Literal::new(v, rng.random_bool(0.5))).collect()).unwrap()
        })
        .collect();
    Cnf::new(n, clauses)
}
