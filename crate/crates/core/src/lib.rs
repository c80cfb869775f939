//! Generation of hard UNSAT CNF instances by embedding the minimal
//! unsatisfiable subset of a seed instance, adding sampled clauses and
//! repeatedly breaking the easy cores that appear, using a learned
//! clause-level core predictor on the literal-clause graph.

pub mod cnf;
pub mod eval;
pub mod gnn;
pub mod hardgen;
pub mod lcg;
pub mod oracle;
pub mod sat;

#[cfg(test)]
mod testutil;
