//! Directed literal-clause graph with initial node features.
//!
//! Nodes are numbered in one space: literal nodes first
//! (`2 * (var - 1) + polarity_bit`, polarity bit 1 for negative literals),
//! then clause nodes (`2 * num_vars + clause_index`).

use std::fmt::Write as _;

use crate::cnf::Cnf;

/// Number of initial features per node.
pub const FEATURE_DIM: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EdgeType {
    /// Clause to literal.
    Cl,
    /// Literal to clause.
    Lc,
    /// Between the two literals of a variable.
    Ll,
}

impl EdgeType {
    pub const ALL: [EdgeType; 3] = [EdgeType::Cl, EdgeType::Lc, EdgeType::Ll];

    pub fn name(self) -> &'static str {
        match self {
            EdgeType::Cl => "cl",
            EdgeType::Lc => "lc",
            EdgeType::Ll => "ll",
        }
    }

    fn slot(self) -> usize {
        self as usize
    }
}

/// In-neighbour lists in compressed form: sources of node `v` are
/// `sources[offsets[v]..offsets[v + 1]]`, in edge insertion order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Adjacency {
    offsets: Vec<usize>,
    sources: Vec<u32>,
}

impl Adjacency {
    fn from_edges(num_nodes: usize, edges: &[(u32, u32)]) -> Adjacency {
        let mut offsets = vec![0usize; num_nodes + 1];
        for &(_, dst) in edges {
            offsets[dst as usize + 1] += 1;
        }
        for i in 0..num_nodes {
            offsets[i + 1] += offsets[i];
        }
        let mut fill = offsets.clone();
        let mut sources = vec![0u32; edges.len()];
        for &(src, dst) in edges {
            sources[fill[dst as usize]] = src;
            fill[dst as usize] += 1;
        }
        Adjacency { offsets, sources }
    }

    pub fn in_neighbors(&self, node: usize) -> &[u32] {
        &self.sources[self.offsets[node]..self.offsets[node + 1]]
    }
}

#[derive(Clone, Debug)]
pub struct Lcg {
    num_vars: u32,
    num_clauses: usize,
    edges: [Vec<(u32, u32)>; 3],
    adjacency: [Adjacency; 3],
    features: Vec<f64>,
}

impl Lcg {
    pub fn build(cnf: &Cnf) -> Lcg {
        let n_lit = 2 * cnf.num_vars() as usize;
        let num_nodes = n_lit + cnf.num_clauses();
        let mut lc = Vec::with_capacity(cnf.num_literals());
        let mut cl = Vec::with_capacity(cnf.num_literals());
        let mut degree = vec![0usize; num_nodes];
        for (i, clause) in cnf.clauses().iter().enumerate() {
            let c = (n_lit + i) as u32;
            for &lit in clause.literals() {
                let l = lit.code();
                lc.push((l, c));
                cl.push((c, l));
                degree[l as usize] += 1;
            }
            degree[c as usize] = clause.len();
        }
        let mut ll = Vec::with_capacity(n_lit);
        for v in 0..cnf.num_vars() {
            ll.push((2 * v, 2 * v + 1));
            ll.push((2 * v + 1, 2 * v));
        }
        let max_degree = degree.iter().copied().max().unwrap_or(0);
        let mut features = vec![0.0; num_nodes * FEATURE_DIM];
        for (node, row) in features.chunks_exact_mut(FEATURE_DIM).enumerate() {
            let is_literal = node < n_lit;
            row[0] = if is_literal { 1.0 } else { 0.0 };
            row[1] = if is_literal { 0.0 } else { 1.0 };
            row[2] = if max_degree == 0 { 0.0 } else { degree[node] as f64 / max_degree as f64 };
            row[3] = if is_literal && node % 2 == 1 { 1.0 } else { 0.0 };
        }
        let adjacency = [
            Adjacency::from_edges(num_nodes, &cl),
            Adjacency::from_edges(num_nodes, &lc),
            Adjacency::from_edges(num_nodes, &ll),
        ];
        Lcg { num_vars: cnf.num_vars(), num_clauses: cnf.num_clauses(), edges: [cl, lc, ll], adjacency, features }
    }

    pub fn num_vars(&self) -> u32 {
        self.num_vars
    }

    pub fn num_literal_nodes(&self) -> usize {
        2 * self.num_vars as usize
    }

    pub fn num_clause_nodes(&self) -> usize {
        self.num_clauses
    }

    pub fn num_nodes(&self) -> usize {
        self.num_literal_nodes() + self.num_clauses
    }

    pub fn clause_node(&self, clause: usize) -> usize {
        self.num_literal_nodes() + clause
    }

    /// Directed edges `(src, dst)` of one type, in construction order.
    pub fn edges(&self, ty: EdgeType) -> &[(u32, u32)] {
        &self.edges[ty.slot()]
    }

    pub fn adjacency(&self, ty: EdgeType) -> &Adjacency {
        &self.adjacency[ty.slot()]
    }

    /// Row-major `num_nodes x FEATURE_DIM` matrix.
    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn feature_row(&self, node: usize) -> &[f64] {
        &self.features[node * FEATURE_DIM..(node + 1) * FEATURE_DIM]
    }

    /// Edge list as CSV with header `src,dst,type`.
    pub fn edges_csv(&self) -> String {
        let mut out = String::from("src,dst,type\n");
        for ty in EdgeType::ALL {
            for &(s, d) in self.edges(ty) {
                let _ = writeln!(out, "{s},{d},{}", ty.name());
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cnf::parse_dimacs;
    use crate::testutil::random_cnf;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_clause_counts() {
        let g = Lcg::build(&Cnf::from_dimacs_clauses(2, &[&[1, -2]]));
        assert_eq!(g.num_literal_nodes(), 4);
        assert_eq!(g.num_clause_nodes(), 1);
        assert_eq!(g.edges(EdgeType::Lc).len(), 2);
        assert_eq!(g.edges(EdgeType::Cl).len(), 2);
        assert_eq!(g.edges(EdgeType::Ll).len(), 4);
        // +1 is node 0, -2 is node 3, the clause is node 4.
        assert_eq!(g.edges(EdgeType::Lc), &[(0, 4), (3, 4)]);
        assert_eq!(g.adjacency(EdgeType::Cl).in_neighbors(3), &[4]);
    }

    #[test]
    fn trivial_core_counts() {
        let g = Lcg::build(&parse_dimacs("p cnf 2 4\n1 2 0\n-1 2 0\n1 -2 0\n-1 -2 0").unwrap());
        assert_eq!(g.num_literal_nodes(), 4);
        assert_eq!(g.num_clause_nodes(), 4);
        assert_eq!(g.edges(EdgeType::Lc).len(), 8);
        for lit in 0..4 {
            assert_eq!(g.feature_row(lit)[2], 1.0);
        }
    }

    #[test]
    fn unused_variable_is_isolated_except_pair() {
        let g = Lcg::build(&Cnf::from_dimacs_clauses(3, &[&[1, 2]]));
        for node in [4usize, 5] {
            assert!(g.adjacency(EdgeType::Cl).in_neighbors(node).is_empty());
            assert_eq!(g.adjacency(EdgeType::Ll).in_neighbors(node).len(), 1);
            assert_eq!(g.feature_row(node)[2], 0.0);
        }
        assert_eq!(g.feature_row(4), &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(g.feature_row(5), &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(g.feature_row(6), &[0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn csv_dump() {
        let g = Lcg::build(&Cnf::from_dimacs_clauses(1, &[&[-1]]));
        assert_eq!(g.edges_csv(), "src,dst,type\n2,1,cl\n1,2,lc\n0,1,ll\n1,0,ll\n");
    }

    proptest! {
        #[test]
        fn structural_invariants(seed in any::<u64>(), n in 1u32..8, m in 0usize..15) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cnf = random_cnf(&mut rng, n, m, 1..=4);
            let g = Lcg::build(&cnf);
            let lc = g.edges(EdgeType::Lc);
            let cl = g.edges(EdgeType::Cl);
            prop_assert_eq!(lc.len(), cnf.num_literals());
            prop_assert_eq!(cl.len(), cnf.num_literals());
            prop_assert_eq!(g.edges(EdgeType::Ll).len(), 2 * n as usize);
            let nl = g.num_literal_nodes() as u32;
            for &(l, c) in lc {
                prop_assert!(l < nl && c >= nl);
                prop_assert_eq!(cl.iter().filter(|&&e| e == (c, l)).count(), 1);
            }
            for &(c, l) in cl {
                prop_assert_eq!(lc.iter().filter(|&&e| e == (l, c)).count(), 1);
            }
            for ty in EdgeType::ALL {
                let total: usize = (0..g.num_nodes()).map(|v| g.adjacency(ty).in_neighbors(v).len()).sum();
                prop_assert_eq!(total, g.edges(ty).len());
            }
        }
    }

    #[test]
    fn clause_permutation_permutes_nodes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cnf = random_cnf(&mut rng, 6, 10, 1..=3);
        let perm: Vec<usize> = (0..10).rev().collect();
        let permuted = cnf.subformula(&perm);
        let a = Lcg::build(&cnf);
        let b = Lcg::build(&permuted);
        for (new, &old) in perm.iter().enumerate() {
            assert_eq!(a.feature_row(a.clause_node(old)), b.feature_row(b.clause_node(new)));
            let mut na = a.adjacency(EdgeType::Lc).in_neighbors(a.clause_node(old)).to_vec();
            let mut nb = b.adjacency(EdgeType::Lc).in_neighbors(b.clause_node(new)).to_vec();
            na.sort_unstable();
            nb.sort_unstable();
            assert_eq!(na, nb);
        }
        assert_eq!(&a.features()[..12 * FEATURE_DIM], &b.features()[..12 * FEATURE_DIM]);
    }
}
