//! Binary adjacency matrices. `get(i, j) == true` means an edge `i -> j`.

use std::collections::VecDeque;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Adjacency {
    n: usize,
    cells: Vec<bool>,
}

impl Adjacency {
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            cells: vec![false; n * n],
        }
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut adj = Self::empty(n);
        for i in 0..n {
            for j in 0..n {
                adj.cells[i * n + j] = f(i, j);
            }
        }
        adj
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut adj = Self::empty(n);
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::invalid(format!("edge ({i}, {j}) out of range for {n} nodes")));
            }
            adj.set(i, j, true);
        }
        Ok(adj)
    }

    /// Support of a real matrix: an edge wherever `|m_ij| > threshold`.
    pub fn from_matrix(m: &DMatrix<f64>, threshold: f64) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::invalid("adjacency matrix must be square"));
        }
        Ok(Self::from_fn(m.nrows(), |i, j| m[(i, j)].abs() > threshold))
    }

    #[inline]
    pub fn nodes(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.cells[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: bool) {
        self.cells[i * self.n + j] = value;
    }

    pub fn nnz(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    /// Edges in row-major order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in 0..self.n {
                if self.get(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn has_self_loop(&self) -> bool {
        (0..self.n).any(|i| self.get(i, i))
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| if self.get(i, j) { 1.0 } else { 0.0 })
    }

    /// Relabels nodes so that old node `k` becomes `mapping[k]`.
    pub fn relabel(&self, mapping: &[usize]) -> Self {
        let mut out = Self::empty(self.n);
        for (i, j) in self.edges() {
            out.set(mapping[i], mapping[j], true);
        }
        out
    }

    /// Whether a directed path leads from `from` to `to` (a node reaches itself).
    pub fn reaches(&self, from: usize, to: usize) -> bool {
        let mut seen = vec![false; self.n];
        let mut stack = vec![from];
        seen[from] = true;
        while let Some(v) = stack.pop() {
            if v == to {
                return true;
            }
            for w in 0..self.n {
                if self.get(v, w) && !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        false
    }

    /// Kahn elimination; `None` when a directed cycle exists.
    pub fn topological_order(&self) -> Option<Vec<usize>> {
        let n = self.n;
        let mut indegree = vec![0usize; n];
        for (_, j) in self.edges() {
            indegree[j] += 1;
        }
        let mut queue: VecDeque<usize> = (0..n).filter(|&v| indegree[v] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            for w in 0..n {
                if self.get(v, w) {
                    indegree[w] -= 1;
                    if indegree[w] == 0 {
                        queue.push_back(w);
                    }
                }
            }
        }
        (order.len() == n).then_some(order)
    }
}
