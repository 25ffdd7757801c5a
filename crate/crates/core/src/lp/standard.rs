//! Conversion of `Gz ≥ d` into the bounded equality form used by the simplex:
//! singleton rows become variable bounds, every other row joins a ranged row
//! group `g·z - s = 0` with `lo ≤ s ≤ hi`. Paired rows `±g·z ≥ ±c` share one group.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::model::CompactLp;

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum RowRole {
    Zero,
    Bound { var: usize, lower: bool, coef: f64 },
    Group { group: usize, lower: bool },
}

pub(crate) struct StandardForm {
    pub nz: usize,
    pub ng: usize,
    pub col_start: Vec<usize>,
    pub col_row: Vec<usize>,
    pub col_val: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub cost: Vec<f64>,
    pub roles: Vec<RowRole>,
    pub lower_row: Vec<Option<usize>>,
    pub upper_row: Vec<Option<usize>>,
    pub feas_tol: f64,
    pub opt_tol: f64,
}

pub(crate) fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, b| a.max(b.abs()))
}

impl StandardForm {
    pub fn ncols(&self) -> usize {
        self.nz + self.ng
    }

    pub fn slack(&self, group: usize) -> usize {
        self.nz + group
    }

    pub fn column(&self, j: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.col_start[j], self.col_start[j + 1]);
        (&self.col_row[a..b], &self.col_val[a..b])
    }

    pub fn build(lp: &CompactLp, feas_rel: f64, opt_rel: f64) -> Result<Self> {
        let nz = lp.nz();
        let d = lp.d();
        let feas_tol = feas_rel * (1.0 + inf_norm(d));
        let opt_tol = opt_rel * (1.0 + inf_norm(lp.p()));

        let mut lo = vec![f64::NEG_INFINITY; nz];
        let mut hi = vec![f64::INFINITY; nz];
        let mut lower_row: Vec<Option<usize>> = vec![None; nz];
        let mut upper_row: Vec<Option<usize>> = vec![None; nz];
        let mut roles = Vec::with_capacity(lp.nrows());

        let mut group_rows: Vec<Vec<(usize, f64)>> = Vec::new();
        let mut glo: Vec<f64> = Vec::new();
        let mut ghi: Vec<f64> = Vec::new();
        let mut g_lower: Vec<Option<usize>> = Vec::new();
        let mut g_upper: Vec<Option<usize>> = Vec::new();
        let mut index: HashMap<Vec<(usize, u64)>, usize> = HashMap::new();

        for r in 0..lp.nrows() {
            let row = lp.row(r);
            match row.len() {
                0 => {
                    if d[r] > feas_tol {
                        return Err(Error::Infeasible);
                    }
                    roles.push(RowRole::Zero);
                }
                1 => {
                    let (j, c) = row[0];
                    let bound = d[r] / c;
                    if c > 0.0 {
                        if lower_row[j].is_none() || bound > lo[j] {
                            lo[j] = bound;
                            lower_row[j] = Some(r);
                        }
                    } else if upper_row[j].is_none() || bound < hi[j] {
                        hi[j] = bound;
                        upper_row[j] = Some(r);
                    }
                    roles.push(RowRole::Bound {
                        var: j,
                        lower: c > 0.0,
                        coef: c,
                    });
                }
                _ => {
                    let sign = if row[0].1 > 0.0 { 1.0 } else { -1.0 };
                    let key: Vec<(usize, u64)> =
                        row.iter().map(|&(j, v)| (j, (sign * v).to_bits())).collect();
                    let g = *index.entry(key).or_insert_with(|| {
                        group_rows.push(row.iter().map(|&(j, v)| (j, sign * v)).collect());
                        glo.push(f64::NEG_INFINITY);
                        ghi.push(f64::INFINITY);
                        g_lower.push(None);
                        g_upper.push(None);
                        group_rows.len() - 1
                    });
                    let lower = sign > 0.0;
                    if lower {
                        if g_lower[g].is_none() || d[r] > glo[g] {
                            glo[g] = d[r];
                            g_lower[g] = Some(r);
                        }
                    } else if g_upper[g].is_none() || -d[r] < ghi[g] {
                        ghi[g] = -d[r];
                        g_upper[g] = Some(r);
                    }
                    roles.push(RowRole::Group { group: g, lower });
                }
            }
        }

        let ng = group_rows.len();
        for (l, h) in lo.iter_mut().zip(hi.iter_mut()).chain(glo.iter_mut().zip(ghi.iter_mut())) {
            if *l > *h {
                if *l > *h + feas_tol {
                    return Err(Error::Infeasible);
                }
                *h = *l;
            }
        }

        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nz];
        for (g, row) in group_rows.iter().enumerate() {
            for &(j, v) in row {
                cols[j].push((g, v));
            }
        }
        let mut col_start = Vec::with_capacity(nz + ng + 1);
        let mut col_row = Vec::new();
        let mut col_val = Vec::new();
        col_start.push(0);
        for col in &cols {
            for &(g, v) in col {
                col_row.push(g);
                col_val.push(v);
            }
            col_start.push(col_row.len());
        }
        for g in 0..ng {
            col_row.push(g);
            col_val.push(-1.0);
            col_start.push(col_row.len());
        }

        let mut cost = lp.p().to_vec();
        cost.resize(nz + ng, 0.0);
        lo.extend(glo);
        hi.extend(ghi);
        lower_row.extend(g_lower);
        upper_row.extend(g_upper);

        Ok(StandardForm {
            nz,
            ng,
            col_start,
            col_row,
            col_val,
            lo,
            hi,
            cost,
            roles,
            lower_row,
            upper_row,
            feas_tol,
            opt_tol,
        })
    }
}
