//! Up-looking sparse Cholesky for symmetric positive-definite systems assembled from
//! 3×3 pose blocks. The elimination tree drives the symbolic phase; callers reduce
//! fill by ordering the blocks with [`reverse_cuthill_mckee`].

use crate::scalar::Scalar;
use std::collections::VecDeque;

/// Reverse Cuthill-McKee ordering of an undirected graph: `order[k]` is the vertex placed k-th.
pub(crate) fn reverse_cuthill_mckee(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Vec<usize> {
    let mut adj = vec![Vec::new(); n];
    for (a, b) in edges {
        if a != b {
            adj[a].push(b);
            adj[b].push(a);
        }
    }
    for list in &mut adj {
        list.sort_unstable();
        list.dedup();
    }
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&v| (adj[v].len(), v));
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut queue = VecDeque::new();
    for &start in &by_degree {
        if visited[start] {
            continue;
        }
        visited[start] = true;
        queue.push_back(start);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = adj[v].iter().copied().filter(|&u| !visited[u]).collect();
            next.sort_by_key(|&u| (adj[u].len(), u));
            for u in next {
                visited[u] = true;
                queue.push_back(u);
            }
        }
    }
    order.reverse();
    order
}

/// Symmetric matrix stored as its upper triangle in compressed-column form.
#[derive(Debug, Clone)]
pub(crate) struct UpperCsc<T> {
    pub n: usize,
    pub col_ptr: Vec<usize>,
    pub row_idx: Vec<usize>,
    pub values: Vec<T>,
}

impl<T: Scalar> UpperCsc<T> {
    /// Builds from `(row, col, value)` triplets with `row <= col`; duplicates are summed.
    pub fn from_triplets(n: usize, mut trip: Vec<(usize, usize, T)>) -> Self {
        trip.sort_by(|a, b| (a.1, a.0).cmp(&(b.1, b.0)));
        let mut col_ptr = vec![0usize; n + 1];
        let mut row_idx = Vec::with_capacity(trip.len());
        let mut values: Vec<T> = Vec::with_capacity(trip.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in trip {
            debug_assert!(r <= c && c < n);
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                row_idx.push(r);
                values.push(v);
                col_ptr[c + 1] += 1;
                last = Some((r, c));
            }
        }
        for c in 0..n {
            col_ptr[c + 1] += col_ptr[c];
        }
        Self { n, col_ptr, row_idx, values }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Symbolic {
    parent: Vec<Option<usize>>,
    l_col_ptr: Vec<usize>,
}

fn etree<T>(a: &UpperCsc<T>) -> Vec<Option<usize>> {
    let n = a.n;
    let mut parent = vec![None; n];
    let mut ancestor: Vec<Option<usize>> = vec![None; n];
    for k in 0..n {
        for p in a.col_ptr[k]..a.col_ptr[k + 1] {
            let mut i = Some(a.row_idx[p]);
            while let Some(ii) = i {
                if ii >= k {
                    break;
                }
                let next = ancestor[ii];
                ancestor[ii] = Some(k);
                if next.is_none() {
                    parent[ii] = Some(k);
                }
                i = next;
            }
        }
    }
    parent
}

/// Row pattern of `L(k, :)` (excluding the diagonal), written into `stack[top..]`.
fn ereach<T>(a: &UpperCsc<T>, k: usize, parent: &[Option<usize>], stack: &mut [usize], mark: &mut [bool]) -> usize {
    let n = a.n;
    let mut top = n;
    mark[k] = true;
    let mut path = Vec::new();
    for p in a.col_ptr[k]..a.col_ptr[k + 1] {
        let mut i = a.row_idx[p];
        if i > k {
            continue;
        }
        path.clear();
        while !mark[i] {
            path.push(i);
            mark[i] = true;
            match parent[i] {
                Some(pi) => i = pi,
                None => break,
            }
        }
        while let Some(v) = path.pop() {
            top -= 1;
            stack[top] = v;
        }
    }
    for &v in &stack[top..n] {
        mark[v] = false;
    }
    mark[k] = false;
    top
}

impl Symbolic {
    pub fn analyze<T>(a: &UpperCsc<T>) -> Self {
        let n = a.n;
        let parent = etree(a);
        let mut counts = vec![1usize; n];
        let mut stack = vec![0usize; n];
        let mut mark = vec![false; n];
        for k in 0..n {
            let top = ereach(a, k, &parent, &mut stack, &mut mark);
            for &i in &stack[top..n] {
                counts[i] += 1;
            }
        }
        let mut l_col_ptr = vec![0usize; n + 1];
        for i in 0..n {
            l_col_ptr[i + 1] = l_col_ptr[i] + counts[i];
        }
        Self { parent, l_col_ptr }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Factor<T> {
    n: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct NotPositiveDefinite;

pub(crate) fn factorize<T: Scalar>(a: &UpperCsc<T>, sym: &Symbolic) -> Result<Factor<T>, NotPositiveDefinite> {
    let n = a.n;
    let nnz = sym.l_col_ptr[n];
    let mut row_idx = vec![0usize; nnz];
    let mut values = vec![T::zero(); nnz];
    let mut next = sym.l_col_ptr[..n].to_vec();
    let mut x = vec![T::zero(); n];
    let mut stack = vec![0usize; n];
    let mut mark = vec![false; n];
    for k in 0..n {
        let top = ereach(a, k, &sym.parent, &mut stack, &mut mark);
        x[k] = T::zero();
        for p in a.col_ptr[k]..a.col_ptr[k + 1] {
            let i = a.row_idx[p];
            if i <= k {
                x[i] = a.values[p];
            }
        }
        let mut d = x[k];
        x[k] = T::zero();
        for &i in &stack[top..n] {
            let lki = x[i] / values[sym.l_col_ptr[i]];
            x[i] = T::zero();
            for p in (sym.l_col_ptr[i] + 1)..next[i] {
                x[row_idx[p]] -= values[p] * lki;
            }
            d -= lki * lki;
            let p = next[i];
            next[i] += 1;
            row_idx[p] = k;
            values[p] = lki;
        }
        if !(d > T::zero()) {
            return Err(NotPositiveDefinite);
        }
        let p = next[k];
        next[k] += 1;
        row_idx[p] = k;
        values[p] = d.sqrt();
    }
    Ok(Factor { n, col_ptr: sym.l_col_ptr.clone(), row_idx, values })
}

impl<T: Scalar> Factor<T> {
    /// Solves `L Lᵀ x = b` in place.
    pub fn solve_in_place(&self, b: &mut [T]) {
        for j in 0..self.n {
            let p0 = self.col_ptr[j];
            b[j] /= self.values[p0];
            let bj = b[j];
            for p in (p0 + 1)..self.col_ptr[j + 1] {
                b[self.row_idx[p]] -= self.values[p] * bj;
            }
        }
        for j in (0..self.n).rev() {
            let p0 = self.col_ptr[j];
            let mut s = b[j];
            for p in (p0 + 1)..self.col_ptr[j + 1] {
                s -= self.values[p] * b[self.row_idx[p]];
            }
            b[j] = s / self.values[p0];
        }
    }
}
