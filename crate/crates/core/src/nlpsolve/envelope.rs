//! Symmetric envelope (profile) storage with an LDL^T factorization, plus a
//! reverse Cuthill-McKee ordering to keep the envelope narrow.
//!
//! The factorization does not pivot. It reports the inertia from the signs of
//! `D`, which is what the interior-point method needs to detect a step that is
//! not a descent direction.

use std::collections::VecDeque;

/// Lower-triangular envelope of a symmetric matrix. Row `i` stores columns
/// `first[i]..=i`.
#[derive(Debug, Clone)]
pub struct EnvelopeMatrix {
    n: usize,
    first: Vec<usize>,
    start: Vec<usize>,
    vals: Vec<f64>,
}

impl EnvelopeMatrix {
    /// Builds the envelope from lower or upper pattern entries (any order).
    pub fn from_pattern(n: usize, pattern: &[(usize, usize)]) -> Self {
        let mut first: Vec<usize> = (0..n).collect();
        for &(r, c) in pattern {
            let (i, j) = if r >= c { (r, c) } else { (c, r) };
            if j < first[i] {
                first[i] = j;
            }
        }
        let mut start = Vec::with_capacity(n + 1);
        let mut off = 0;
        for i in 0..n {
            start.push(off);
            off += i - first[i] + 1;
        }
        start.push(off);
        Self { n, first, start, vals: vec![0.0; off] }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn clear(&mut self) {
        self.vals.iter_mut().for_each(|v| *v = 0.0);
    }

    /// Storage slot of entry `(r, c)`; `None` when outside the envelope.
    pub fn slot(&self, r: usize, c: usize) -> Option<usize> {
        let (i, j) = if r >= c { (r, c) } else { (c, r) };
        if j < self.first[i] {
            None
        } else {
            Some(self.start[i] + j - self.first[i])
        }
    }

    #[inline]
    pub fn add_at(&mut self, slot: usize, v: f64) {
        self.vals[slot] += v;
    }

    pub fn add(&mut self, r: usize, c: usize, v: f64) {
        let s = self.slot(r, c).expect("entry outside envelope");
        self.vals[s] += v;
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.slot(r, c).map_or(0.0, |s| self.vals[s])
    }

    /// `y = A x` using the symmetric envelope.
    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..self.n {
            let f = self.first[i];
            let row = &self.vals[self.start[i]..self.start[i + 1]];
            let mut acc = 0.0;
            for (k, &a) in row.iter().enumerate() {
                let j = f + k;
                acc += a * x[j];
                if j != i {
                    y[j] += a * x[i];
                }
            }
            y[i] += acc;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.vals.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Inertia {
    pub positive: usize,
    pub negative: usize,
    pub zero: usize,
}

/// `A = L D L^T` with unit lower `L` sharing the envelope of `A`.
#[derive(Debug, Clone)]
pub struct EnvelopeLdl {
    l: EnvelopeMatrix,
    d: Vec<f64>,
}

impl EnvelopeLdl {
    /// Factors `a`. Pivots with magnitude below `pivot_tol` times the largest
    /// entry in their row of `A` are counted as zero eigenvalues and the
    /// factorization stops there.
    pub fn factor(a: &EnvelopeMatrix, pivot_tol: f64) -> (Option<Self>, Inertia) {
        let n = a.n;
        let mut l = a.clone();
        let mut d = vec![0.0; n];
        let mut scale = vec![1e-300f64; n];
        for i in 0..n {
            let fi = a.first[i];
            let si = a.start[i];
            for j in fi..=i {
                let v = a.vals[si + j - fi].abs();
                scale[i] = scale[i].max(v);
                scale[j] = scale[j].max(v);
            }
        }
        let mut inertia = Inertia { positive: 0, negative: 0, zero: 0 };
        let mut work = vec![0.0; n];
        for i in 0..n {
            let fi = l.first[i];
            let si = l.start[i];
            for j in fi..i {
                let fj = l.first[j];
                let sj = l.start[j];
                let k0 = fi.max(fj);
                let mut s = l.vals[si + j - fi];
                for k in k0..j {
                    s -= work[k] * l.vals[sj + k - fj];
                }
                work[j] = s;
                l.vals[si + j - fi] = s / d[j];
            }
            let mut dii = l.vals[si + i - fi];
            for k in fi..i {
                dii -= work[k] * l.vals[si + k - fi];
            }
            if !dii.is_finite() || dii.abs() <= pivot_tol * scale[i] {
                inertia.zero = n - inertia.positive - inertia.negative;
                return (None, inertia);
            }
            if dii > 0.0 {
                inertia.positive += 1;
            } else {
                inertia.negative += 1;
            }
            d[i] = dii;
            l.vals[si + i - fi] = 1.0;
        }
        (Some(Self { l, d }), inertia)
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.l.n;
        let l = &self.l;
        for i in 0..n {
            let fi = l.first[i];
            let si = l.start[i];
            let mut s = b[i];
            for k in fi..i {
                s -= l.vals[si + k - fi] * b[k];
            }
            b[i] = s;
        }
        for i in 0..n {
            b[i] /= self.d[i];
        }
        for i in (0..n).rev() {
            let fi = l.first[i];
            let si = l.start[i];
            let bi = b[i];
            for k in fi..i {
                b[k] -= l.vals[si + k - fi] * bi;
            }
        }
    }
}

/// Reverse Cuthill-McKee ordering of an undirected graph given as adjacency lists.
/// Returns `perm` with `perm[new] = old`.
pub fn reverse_cuthill_mckee(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let degree: Vec<usize> = adj.iter().map(|a| a.len()).collect();
    while order.len() < n {
        // lowest-degree unvisited node seeds the next component
        let seed = (0..n)
            .filter(|&i| !visited[i])
            .min_by_key(|&i| (degree[i], i))
            .unwrap();
        let root = pseudo_peripheral(adj, &degree, seed, &visited);
        let mut queue = VecDeque::new();
        visited[root] = true;
        queue.push_back(root);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut nbrs: Vec<usize> = adj[v].iter().copied().filter(|&w| !visited[w]).collect();
            nbrs.sort_by_key(|&w| (degree[w], w));
            for w in nbrs {
                if !visited[w] {
                    visited[w] = true;
                    queue.push_back(w);
                }
            }
        }
    }
    order.reverse();
    order
}

fn bfs_levels(adj: &[Vec<usize>], root: usize, blocked: &[bool]) -> Vec<Vec<usize>> {
    let mut seen = vec![false; adj.len()];
    seen[root] = true;
    let mut levels = vec![vec![root]];
    loop {
        let mut next = Vec::new();
        for &v in levels.last().unwrap() {
            for &w in &adj[v] {
                if !seen[w] && !blocked[w] {
                    seen[w] = true;
                    next.push(w);
                }
            }
        }
        if next.is_empty() {
            break;
        }
        levels.push(next);
    }
    levels
}

fn pseudo_peripheral(adj: &[Vec<usize>], degree: &[usize], seed: usize, blocked: &[bool]) -> usize {
    let mut root = seed;
    let mut ecc = bfs_levels(adj, root, blocked).len();
    for _ in 0..8 {
        let levels = bfs_levels(adj, root, blocked);
        let cand = *levels
            .last()
            .unwrap()
            .iter()
            .min_by_key(|&&w| (degree[w], w))
            .unwrap();
        let e = bfs_levels(adj, cand, blocked).len();
        if e > ecc {
            ecc = e;
            root = cand;
        } else {
            break;
        }
    }
    root
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dense_from(a: &EnvelopeMatrix) -> Vec<Vec<f64>> {
        let n = a.dim();
        let mut m = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                m[i][j] = a.get(i, j);
            }
        }
        m
    }

    #[test]
    fn banded_indefinite_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n: usize = 40;
        let mut pattern = Vec::new();
        for i in 0..n {
            for j in i.saturating_sub(3)..=i {
                pattern.push((i, j));
            }
        }
        pattern.push((n - 1, 0));
        let mut a = EnvelopeMatrix::from_pattern(n, &pattern);
        for &(i, j) in &pattern {
            let v = if i == j {
                if i % 3 == 2 { -6.0 } else { 6.0 }
            } else {
                rng.gen_range(-1.0..1.0)
            };
            a.add(i, j, v);
        }
        let (f, inertia) = EnvelopeLdl::factor(&a, 1e-14);
        let f = f.unwrap();
        assert_eq!(inertia.positive + inertia.negative, n);
        let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut b = vec![0.0; n];
        a.mul_vec(&x, &mut b);
        f.solve_in_place(&mut b);
        for i in 0..n {
            assert!((b[i] - x[i]).abs() < 1e-10);
        }
        // inertia matches the eigenvalue sign count of a dense Sylvester check
        let m = dense_from(&a);
        let mut neg = 0;
        let mut dd = m.clone();
        for k in 0..n {
            let p = dd[k][k];
            if p < 0.0 {
                neg += 1;
            }
            for i in k + 1..n {
                let f = dd[i][k] / p;
                for j in k..n {
                    dd[i][j] -= f * dd[k][j];
                }
            }
        }
        assert_eq!(neg, inertia.negative);
    }

    #[test]
    fn singular_pivot_reported() {
        let pattern = vec![(0, 0), (1, 0), (1, 1)];
        let mut a = EnvelopeMatrix::from_pattern(2, &pattern);
        a.add(0, 0, 1.0);
        a.add(1, 0, 2.0);
        a.add(1, 1, 4.0);
        let (f, inertia) = EnvelopeLdl::factor(&a, 1e-12);
        assert!(f.is_none());
        assert_eq!(inertia.zero, 1);
    }

    #[test]
    fn rcm_recovers_band_of_shuffled_path() {
        let n = 30;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut label: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = rng.gen_range(0..=i);
            label.swap(i, j);
        }
        let mut adj = vec![Vec::new(); n];
        for i in 0..n - 1 {
            adj[label[i]].push(label[i + 1]);
            adj[label[i + 1]].push(label[i]);
        }
        let perm = reverse_cuthill_mckee(&adj);
        let mut pos = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            pos[old] = new;
        }
        for i in 0..n - 1 {
            let a = pos[label[i]] as i64;
            let b = pos[label[i + 1]] as i64;
            assert_eq!((a - b).abs(), 1);
        }
    }
}
