//! Sparse LU factorization of simplex bases.
//!
//! Left-looking (Gilbert-Peierls) elimination: columns are processed in order
//! of increasing fill, each is solved against the part of `L` built so far
//! through a depth-first reachability pass, and the pivot row is picked by a
//! threshold test biased toward sparse rows.

const UNSET: usize = usize::MAX;
/// Candidate pivots must be at least this fraction of the largest entry.
const PIVOT_THRESHOLD: f64 = 0.01;

#[derive(Debug)]
pub(crate) struct Singular {
    /// Basis slots whose columns were linearly dependent.
    pub slots: Vec<usize>,
    /// Rows left without a pivot, one per dependent slot.
    pub rows: Vec<usize>,
}

#[derive(Clone, Debug, Default)]
pub(crate) struct Lu {
    m: usize,
    piv_row: Vec<usize>,
    piv_slot: Vec<usize>,
    /// Column k of `L` below the diagonal, keyed by original row.
    l_cols: Vec<Vec<(usize, f64)>>,
    /// Column k of `U` above the diagonal, keyed by pivot position.
    u_cols: Vec<Vec<(usize, f64)>>,
    u_diag: Vec<f64>,
}

impl Lu {
    /// Factorizes the `m × m` matrix whose slot-`s` column is `cols[s]`
    /// (entries keyed by row).
    pub(crate) fn factorize(
        m: usize,
        cols: &[Vec<(usize, f64)>],
        pivot_tol: f64,
    ) -> Result<Lu, Singular> {
        debug_assert_eq!(cols.len(), m);
        let mut row_count = vec![0usize; m];
        for col in cols {
            for &(r, _) in col {
                row_count[r] += 1;
            }
        }
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by_key(|&s| (cols[s].len(), s));

        let mut row_pos = vec![UNSET; m];
        let mut lu = Lu {
            m,
            piv_row: Vec::with_capacity(m),
            piv_slot: Vec::with_capacity(m),
            l_cols: Vec::with_capacity(m),
            u_cols: Vec::with_capacity(m),
            u_diag: Vec::with_capacity(m),
        };

        let mut work = vec![0.0f64; m];
        let mut touched: Vec<usize> = Vec::new();
        let mut is_touched = vec![false; m];
        let mut visited = vec![false; m];
        let mut topo: Vec<usize> = Vec::new();
        let mut stack: Vec<(usize, usize)> = Vec::new();
        let mut dependent: Vec<usize> = Vec::new();

        for &slot in &order {
            let k = lu.piv_row.len();
            for &(r, v) in &cols[slot] {
                if !is_touched[r] {
                    is_touched[r] = true;
                    touched.push(r);
                }
                work[r] += v;
            }

            // Reachable pivots in topological order.
            topo.clear();
            for &(r, _) in &cols[slot] {
                let p = row_pos[r];
                if p == UNSET || visited[p] {
                    continue;
                }
                visited[p] = true;
                stack.push((p, 0));
                while let Some(top) = stack.last_mut() {
                    let node = top.0;
                    let lcol = &lu.l_cols[node];
                    let mut pushed = None;
                    while top.1 < lcol.len() {
                        let row = lcol[top.1].0;
                        top.1 += 1;
                        let child = row_pos[row];
                        if child != UNSET && !visited[child] {
                            visited[child] = true;
                            pushed = Some(child);
                            break;
                        }
                    }
                    match pushed {
                        Some(child) => stack.push((child, 0)),
                        None => {
                            topo.push(node);
                            stack.pop();
                        }
                    }
                }
            }
            for &p in topo.iter().rev() {
                visited[p] = false;
                let xr = work[lu.piv_row[p]];
                if xr == 0.0 {
                    continue;
                }
                for &(r, l) in &lu.l_cols[p] {
                    if !is_touched[r] {
                        is_touched[r] = true;
                        touched.push(r);
                    }
                    work[r] -= l * xr;
                }
            }

            let mut best_abs = 0.0f64;
            for &r in &touched {
                if row_pos[r] == UNSET {
                    best_abs = best_abs.max(work[r].abs());
                }
            }
            if best_abs <= pivot_tol {
                dependent.push(slot);
                for &r in &touched {
                    work[r] = 0.0;
                    is_touched[r] = false;
                }
                touched.clear();
                continue;
            }
            let mut pivot = UNSET;
            let mut pivot_key = (usize::MAX, 0.0f64);
            for &r in &touched {
                if row_pos[r] != UNSET {
                    continue;
                }
                let a = work[r].abs();
                if a >= PIVOT_THRESHOLD * best_abs {
                    let key = (row_count[r], a);
                    if pivot == UNSET
                        || key.0 < pivot_key.0
                        || (key.0 == pivot_key.0 && key.1 > pivot_key.1)
                        || (key.0 == pivot_key.0 && key.1 == pivot_key.1 && r < pivot)
                    {
                        pivot = r;
                        pivot_key = key;
                    }
                }
            }
            let diag = work[pivot];
            let mut lcol = Vec::new();
            let mut ucol = Vec::new();
            touched.sort_unstable();
            for &r in &touched {
                let v = work[r];
                work[r] = 0.0;
                is_touched[r] = false;
                if r == pivot || v == 0.0 {
                    continue;
                }
                let p = row_pos[r];
                if p == UNSET {
                    lcol.push((r, v / diag));
                } else {
                    ucol.push((p, v));
                }
            }
            touched.clear();
            row_pos[pivot] = k;
            lu.piv_row.push(pivot);
            lu.piv_slot.push(slot);
            lu.l_cols.push(lcol);
            lu.u_cols.push(ucol);
            lu.u_diag.push(diag);
        }

        if !dependent.is_empty() {
            let rows: Vec<usize> = (0..m).filter(|&r| row_pos[r] == UNSET).collect();
            debug_assert_eq!(rows.len(), dependent.len());
            return Err(Singular {
                slots: dependent,
                rows,
            });
        }
        Ok(lu)
    }

    /// Solves `B x = rhs`. `rhs` is keyed by row and is consumed; the
    /// solution is written by basis slot.
    pub(crate) fn ftran(&self, rhs: &mut [f64], out: &mut [f64]) {
        for k in 0..self.m {
            let xr = rhs[self.piv_row[k]];
            if xr != 0.0 {
                for &(r, l) in &self.l_cols[k] {
                    rhs[r] -= l * xr;
                }
            }
        }
        let mut y: Vec<f64> = self.piv_row.iter().map(|&r| rhs[r]).collect();
        for k in (0..self.m).rev() {
            let z = y[k] / self.u_diag[k];
            y[k] = z;
            if z != 0.0 {
                for &(p, u) in &self.u_cols[k] {
                    y[p] -= u * z;
                }
            }
        }
        for k in 0..self.m {
            out[self.piv_slot[k]] = y[k];
        }
    }

    /// Solves `Bᵀ y = c` with `c` keyed by slot; `y` is written by row.
    pub(crate) fn btran(&self, c: &[f64], y: &mut [f64]) {
        let mut v = vec![0.0f64; self.m];
        for k in 0..self.m {
            let mut s = c[self.piv_slot[k]];
            for &(p, u) in &self.u_cols[k] {
                s -= u * v[p];
            }
            v[k] = s / self.u_diag[k];
        }
        for k in 0..self.m {
            y[self.piv_row[k]] = v[k];
        }
        for k in (0..self.m).rev() {
            let mut s = 0.0;
            for &(r, l) in &self.l_cols[k] {
                s += l * y[r];
            }
            if s != 0.0 {
                y[self.piv_row[k]] -= s;
            }
        }
    }
}
