//! Right-looking sparse LU with threshold partial pivoting.
//!
//! Columns are eliminated in order of their first nonzero row, which keeps the
//! fill of stage-ordered (block banded) matrices inside the band. Row-space
//! vectors are indexed by matrix row, slot-space vectors by input column.

const THRESHOLD: f64 = 0.1;
const SINGULAR_REL: f64 = 1e-10;

struct Step {
    prow: usize,
    slot: usize,
    diag: f64,
    l: Vec<(usize, f64)>,
    u: Vec<(usize, f64)>,
}

pub(crate) struct LuFactors {
    steps: Vec<Step>,
}

/// Columns that could not be pivoted and rows left without a pivot.
#[derive(Debug, Clone)]
pub(crate) struct Deficiency {
    pub dropped: Vec<usize>,
    pub unpivoted_rows: Vec<usize>,
}

fn lookup(row: &[(usize, f64)], c: usize) -> Option<f64> {
    row.binary_search_by_key(&c, |e| e.0).ok().map(|k| row[k].1)
}

/// `target - l * source`, both without column `skip`; reports columns new to `target`.
fn merge(
    target: &[(usize, f64)],
    source: &[(usize, f64)],
    l: f64,
    skip: usize,
    out: &mut Vec<(usize, f64)>,
    fresh: &mut Vec<usize>,
) {
    out.clear();
    let (mut a, mut b) = (0, 0);
    while a < target.len() || b < source.len() {
        let ca = target.get(a).map_or(usize::MAX, |e| e.0);
        let cb = source.get(b).map_or(usize::MAX, |e| e.0);
        if ca == skip {
            a += 1;
            continue;
        }
        if cb == skip {
            b += 1;
            continue;
        }
        if ca < cb {
            out.push(target[a]);
            a += 1;
        } else if cb < ca {
            let v = -l * source[b].1;
            if v != 0.0 {
                out.push((cb, v));
                fresh.push(cb);
            }
            b += 1;
        } else {
            let t = target[a].1;
            let s = l * source[b].1;
            let v = t - s;
            if v.abs() > 1e-14 * t.abs().max(s.abs()) {
                out.push((ca, v));
            }
            a += 1;
            b += 1;
        }
    }
}

/// Factorize the `n`-row matrix whose columns are `cols`.
///
/// Succeeds only for a square nonsingular matrix; otherwise reports which
/// columns were dropped as dependent and which rows received no pivot.
pub(crate) fn factorize<C: AsRef<[(usize, f64)]>>(n: usize, cols: &[C]) -> Result<LuFactors, Deficiency> {
    let k = cols.len();
    let mut first_row = vec![usize::MAX; k];
    let mut colmax = vec![0.0f64; k];
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut col_rows: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (c, col) in cols.iter().enumerate() {
        for &(r, v) in col.as_ref() {
            if v != 0.0 {
                rows[r].push((c, v));
                col_rows[c].push(r);
                first_row[c] = first_row[c].min(r);
                colmax[c] = colmax[c].max(v.abs());
            }
        }
    }
    for row in rows.iter_mut() {
        row.sort_unstable_by_key(|e| e.0);
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by_key(|&c| (first_row[c], c));

    let mut pivoted = vec![false; n];
    let mut steps = Vec::with_capacity(n.min(k));
    let mut dropped = Vec::new();
    let mut cands: Vec<(usize, f64)> = Vec::new();
    let mut buf = Vec::new();
    let mut fresh = Vec::new();

    for &c in &order {
        cands.clear();
        let mut best = 0.0f64;
        for &r in &col_rows[c] {
            if pivoted[r] {
                continue;
            }
            if let Some(v) = lookup(&rows[r], c) {
                cands.push((r, v));
                best = best.max(v.abs());
            }
        }
        if best == 0.0 || best <= SINGULAR_REL * colmax[c] {
            dropped.push(c);
            continue;
        }
        let mut piv = usize::MAX;
        for (idx, &(r, v)) in cands.iter().enumerate() {
            if v.abs() < THRESHOLD * best {
                continue;
            }
            if piv == usize::MAX {
                piv = idx;
                continue;
            }
            let (pr, _) = cands[piv];
            let (lr, lp) = (rows[r].len(), rows[pr].len());
            if lr < lp || (lr == lp && r < pr) {
                piv = idx;
            }
        }
        let (pr, pv) = cands[piv];
        let prow = std::mem::take(&mut rows[pr]);
        let mut l = Vec::with_capacity(cands.len().saturating_sub(1));
        for &(r, v) in &cands {
            if r == pr {
                continue;
            }
            let mult = v / pv;
            fresh.clear();
            merge(&rows[r], &prow, mult, c, &mut buf, &mut fresh);
            std::mem::swap(&mut rows[r], &mut buf);
            for &fc in &fresh {
                col_rows[fc].push(r);
            }
            l.push((r, mult));
        }
        let u = prow.into_iter().filter(|e| e.0 != c).collect();
        pivoted[pr] = true;
        steps.push(Step {
            prow: pr,
            slot: c,
            diag: pv,
            l,
            u,
        });
    }
    if dropped.is_empty() && steps.len() == n && k == n {
        Ok(LuFactors { steps })
    } else {
        Err(Deficiency {
            dropped,
            unpivoted_rows: (0..n).filter(|&r| !pivoted[r]).collect(),
        })
    }
}

impl LuFactors {
    /// Solve `B x = b`; `b` (row space) is overwritten, `x` (slot space) receives the result.
    pub(crate) fn ftran(&self, b: &mut [f64], x: &mut [f64]) {
        for s in &self.steps {
            let bp = b[s.prow];
            if bp != 0.0 {
                for &(r, l) in &s.l {
                    b[r] -= l * bp;
                }
            }
        }
        for s in self.steps.iter().rev() {
            let mut acc = b[s.prow];
            for &(c, v) in &s.u {
                acc -= v * x[c];
            }
            x[s.slot] = acc / s.diag;
        }
    }

    /// Solve `Bᵀ y = c`; `c` (slot space) is overwritten, `y` (row space) receives the result.
    pub(crate) fn btran(&self, c: &mut [f64], y: &mut [f64]) {
        for s in &self.steps {
            let w = c[s.slot] / s.diag;
            y[s.prow] = w;
            if w != 0.0 {
                for &(j, v) in &s.u {
                    c[j] -= v * w;
                }
            }
        }
        for s in self.steps.iter().rev() {
            let mut acc = y[s.prow];
            for &(r, l) in &s.l {
                acc -= l * y[r];
            }
            y[s.prow] = acc;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    fn to_cols(a: &DMatrix<f64>) -> Vec<Vec<(usize, f64)>> {
        (0..a.ncols())
            .map(|j| {
                (0..a.nrows())
                    .filter(|&i| a[(i, j)] != 0.0)
                    .map(|i| (i, a[(i, j)]))
                    .collect()
            })
            .collect()
    }

    #[test]
    fn solves_match_dense() {
        let a = DMatrix::from_row_slice(
            4,
            4,
            &[
                0.0, 2.0, 0.0, 1.0, //
                1.0, 0.0, 0.0, 0.0, //
                3.0, 1.0, -1.0, 0.0, //
                0.0, 0.0, 2.0, 5.0,
            ],
        );
        let lu = factorize(4, &to_cols(&a)).unwrap();
        let b = DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0]);
        let mut bw = b.as_slice().to_vec();
        let mut x = vec![0.0; 4];
        lu.ftran(&mut bw, &mut x);
        let r = &a * DVector::from_vec(x) - &b;
        assert!(r.amax() < 1e-12);

        let mut cw = b.as_slice().to_vec();
        let mut y = vec![0.0; 4];
        lu.btran(&mut cw, &mut y);
        let r = a.transpose() * DVector::from_vec(y) - &b;
        assert!(r.amax() < 1e-12);
    }

    #[test]
    fn reports_dependent_columns() {
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 0.0, 1.0, 2.0, 1.0, 0.0, 0.0, 1.0]);
        let def = factorize(3, &to_cols(&a)).err().unwrap();
        assert_eq!(def.dropped, vec![1]);
        assert_eq!(def.unpivoted_rows.len(), 1);
    }
}
