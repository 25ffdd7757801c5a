//! Stage-wise MPC data and its lossless reduction to a block-banded LP
//! `min pᵀz s.t. Gz ≥ d`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::LpSolver;

/// Per-stage primal and constraint dimensions `(n, m)`.
pub fn stage_dims(nx: usize, nu: usize, nw: usize) -> (usize, usize) {
    (nx + nu, 4 * nx + 2 * nu + 2 * nw)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Dims {
    pub nx: usize,
    pub nu: usize,
    pub nw: usize,
}

impl Dims {
    pub fn new(nx: usize, nu: usize, nw: usize) -> Self {
        Dims { nx, nu, nw }
    }

    pub fn n(&self) -> usize {
        stage_dims(self.nx, self.nu, self.nw).0
    }

    pub fn m(&self) -> usize {
        stage_dims(self.nx, self.nu, self.nw).1
    }

    pub fn layout(&self) -> RowLayout {
        RowLayout { dims: *self }
    }
}

/// Offsets of the named row groups inside one stage block of `d` and `G`.
///
/// Order: `v, -v, w, -w, x_lo, -x_hi, u_lo, -u_hi`.
#[derive(Clone, Copy, Debug)]
pub struct RowLayout {
    dims: Dims,
}

impl RowLayout {
    pub fn dyn_pos(&self, k: usize) -> usize {
        k
    }
    pub fn dyn_neg(&self, k: usize) -> usize {
        self.dims.nx + k
    }
    pub fn alg_pos(&self, k: usize) -> usize {
        2 * self.dims.nx + k
    }
    pub fn alg_neg(&self, k: usize) -> usize {
        2 * self.dims.nx + self.dims.nw + k
    }
    pub fn x_lo(&self, k: usize) -> usize {
        2 * self.dims.nx + 2 * self.dims.nw + k
    }
    pub fn x_hi(&self, k: usize) -> usize {
        3 * self.dims.nx + 2 * self.dims.nw + k
    }
    pub fn u_lo(&self, k: usize) -> usize {
        4 * self.dims.nx + 2 * self.dims.nw + k
    }
    pub fn u_hi(&self, k: usize) -> usize {
        4 * self.dims.nx + 2 * self.dims.nw + self.dims.nu + k
    }
}

/// Data of one stage. `a`, `b` describe the transition *out of* this stage.
#[derive(Clone, Debug, PartialEq)]
pub struct StageSpec {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub e: DMatrix<f64>,
    pub f: DMatrix<f64>,
    pub q: DVector<f64>,
    pub r: DVector<f64>,
    pub v: DVector<f64>,
    pub w: DVector<f64>,
    pub x_lo: DVector<f64>,
    pub x_hi: DVector<f64>,
    pub u_lo: DVector<f64>,
    pub u_hi: DVector<f64>,
}

impl StageSpec {
    /// A stage with zero matrices, zero data and unit box bounds.
    pub fn zeros(dims: Dims) -> Self {
        let Dims { nx, nu, nw } = dims;
        StageSpec {
            a: DMatrix::zeros(nx, nx),
            b: DMatrix::zeros(nx, nu),
            e: DMatrix::zeros(nw, nx),
            f: DMatrix::zeros(nw, nu),
            q: DVector::zeros(nx),
            r: DVector::zeros(nu),
            v: DVector::zeros(nx),
            w: DVector::zeros(nw),
            x_lo: DVector::from_element(nx, -1.0),
            x_hi: DVector::from_element(nx, 1.0),
            u_lo: DVector::from_element(nu, -1.0),
            u_hi: DVector::from_element(nu, 1.0),
        }
    }

    pub fn dims(&self) -> Dims {
        Dims::new(self.a.nrows(), self.b.ncols(), self.e.nrows())
    }

    fn validate(&self, dims: Dims, stage: usize) -> Result<()> {
        let Dims { nx, nu, nw } = dims;
        let shapes = [
            ("A", self.a.shape(), (nx, nx)),
            ("B", self.b.shape(), (nx, nu)),
            ("E", self.e.shape(), (nw, nx)),
            ("F", self.f.shape(), (nw, nu)),
            ("q", self.q.shape(), (nx, 1)),
            ("r", self.r.shape(), (nu, 1)),
            ("v", self.v.shape(), (nx, 1)),
            ("w", self.w.shape(), (nw, 1)),
            ("x_lo", self.x_lo.shape(), (nx, 1)),
            ("x_hi", self.x_hi.shape(), (nx, 1)),
            ("u_lo", self.u_lo.shape(), (nu, 1)),
            ("u_hi", self.u_hi.shape(), (nu, 1)),
        ];
        for (name, got, want) in shapes {
            if got != want {
                return Err(Error::DimensionMismatch(format!(
                    "stage {}: {name} is {}x{}, expected {}x{}",
                    stage + 1,
                    got.0,
                    got.1,
                    want.0,
                    want.1
                )));
            }
        }
        for (lo, hi, name) in [(&self.x_lo, &self.x_hi, "x"), (&self.u_lo, &self.u_hi, "u")] {
            for k in 0..lo.len() {
                if !lo[k].is_finite() || !hi[k].is_finite() {
                    return Err(Error::InvalidBounds(format!(
                        "stage {}: {name}[{}] has a non-finite bound",
                        stage + 1,
                        k + 1
                    )));
                }
                if lo[k] > hi[k] {
                    return Err(Error::InvalidBounds(format!(
                        "stage {}: {name}_lo[{}] > {name}_hi[{}]",
                        stage + 1,
                        k + 1,
                        k + 1
                    )));
                }
            }
        }
        Ok(())
    }
}

/// An MPC problem over a horizon of `N = stages.len()` stages.
#[derive(Clone, Debug, PartialEq)]
pub struct MpcProblem {
    stages: Vec<StageSpec>,
    dims: Dims,
}

impl MpcProblem {
    pub fn new(stages: Vec<StageSpec>) -> Result<Self> {
        let first = stages
            .first()
            .ok_or_else(|| Error::DimensionMismatch("horizon must have at least one stage".into()))?;
        let dims = first.dims();
        if dims.nx == 0 {
            return Err(Error::DimensionMismatch("n_x must be at least 1".into()));
        }
        for (i, s) in stages.iter().enumerate() {
            s.validate(dims, i)?;
        }
        Ok(MpcProblem { stages, dims })
    }

    pub fn stages(&self) -> &[StageSpec] {
        &self.stages
    }

    pub fn into_stages(self) -> Vec<StageSpec> {
        self.stages
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn horizon(&self) -> usize {
        self.stages.len()
    }

    pub fn to_compact(&self) -> CompactLp {
        let Dims { nx, nu, nw } = self.dims;
        let (n, m) = stage_dims(nx, nu, nw);
        let lay = self.dims.layout();
        let nn = self.stages.len();
        let mut p = Vec::with_capacity(n * nn);
        let mut d = Vec::with_capacity(m * nn);
        let mut g_diag = Vec::with_capacity(nn);
        let mut g_sub = Vec::with_capacity(nn.saturating_sub(1));
        for (i, s) in self.stages.iter().enumerate() {
            p.extend(s.q.iter());
            p.extend(s.r.iter());
            d.extend(s.v.iter());
            d.extend(s.v.iter().map(|x| -x));
            d.extend(s.w.iter());
            d.extend(s.w.iter().map(|x| -x));
            d.extend(s.x_lo.iter());
            d.extend(s.x_hi.iter().map(|x| -x));
            d.extend(s.u_lo.iter());
            d.extend(s.u_hi.iter().map(|x| -x));

            let mut g = DMatrix::zeros(m, n);
            for k in 0..nx {
                g[(lay.dyn_pos(k), k)] = 1.0;
                g[(lay.dyn_neg(k), k)] = -1.0;
                g[(lay.x_lo(k), k)] = 1.0;
                g[(lay.x_hi(k), k)] = -1.0;
            }
            for k in 0..nu {
                g[(lay.u_lo(k), nx + k)] = 1.0;
                g[(lay.u_hi(k), nx + k)] = -1.0;
            }
            for k in 0..nw {
                for j in 0..nx {
                    g[(lay.alg_pos(k), j)] = s.e[(k, j)];
                    g[(lay.alg_neg(k), j)] = -s.e[(k, j)];
                }
                for j in 0..nu {
                    g[(lay.alg_pos(k), nx + j)] = s.f[(k, j)];
                    g[(lay.alg_neg(k), nx + j)] = -s.f[(k, j)];
                }
            }
            g_diag.push(g);

            if i > 0 {
                let prev = &self.stages[i - 1];
                let mut g = DMatrix::zeros(m, n);
                for k in 0..nx {
                    for j in 0..nx {
                        g[(lay.dyn_pos(k), j)] = -prev.a[(k, j)];
                        g[(lay.dyn_neg(k), j)] = prev.a[(k, j)];
                    }
                    for j in 0..nu {
                        g[(lay.dyn_pos(k), nx + j)] = -prev.b[(k, j)];
                        g[(lay.dyn_neg(k), nx + j)] = prev.b[(k, j)];
                    }
                }
                g_sub.push(g);
            }
        }
        CompactLp {
            n_stages: nn,
            n,
            m,
            p,
            d,
            g_diag,
            g_sub,
        }
    }

    /// Split a compact primal vector into state and control trajectories.
    pub fn trajectory(&self, z: &[f64]) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
        let Dims { nx, nu, .. } = self.dims;
        let n = nx + nu;
        let xs = (0..self.horizon())
            .map(|i| DVector::from_column_slice(&z[i * n..i * n + nx]))
            .collect();
        let us = (0..self.horizon())
            .map(|i| DVector::from_column_slice(&z[i * n + nx..(i + 1) * n]))
            .collect();
        (xs, us)
    }

    /// Stage-wise cost `Σ qᵢᵀxᵢ + rᵢᵀuᵢ`.
    pub fn objective(&self, xs: &[DVector<f64>], us: &[DVector<f64>]) -> f64 {
        self.stages
            .iter()
            .zip(xs.iter().zip(us))
            .map(|(s, (x, u))| s.q.dot(x) + s.r.dot(u))
            .sum()
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let file: InstanceFile = serde_json::from_str(s)?;
        file.into_problem()
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&InstanceFile::from_problem(self)?)?)
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json_string()?)?;
        Ok(())
    }
}

/// Compact inequality-form LP with block lower-bidiagonal `G`.
///
/// `g_sub[i - 1]` holds `G_{i,i-1}` for 0-based stage `i >= 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct CompactLp {
    n_stages: usize,
    n: usize,
    m: usize,
    p: Vec<f64>,
    d: Vec<f64>,
    g_diag: Vec<DMatrix<f64>>,
    g_sub: Vec<DMatrix<f64>>,
}

impl CompactLp {
    pub fn new(
        n: usize,
        m: usize,
        p: Vec<f64>,
        d: Vec<f64>,
        g_diag: Vec<DMatrix<f64>>,
        g_sub: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        let nn = g_diag.len();
        if nn == 0 {
            return Err(Error::DimensionMismatch("no stages".into()));
        }
        if g_sub.len() != nn - 1 {
            return Err(Error::DimensionMismatch(format!(
                "{} sub-diagonal blocks for {nn} stages",
                g_sub.len()
            )));
        }
        if p.len() != n * nn || d.len() != m * nn {
            return Err(Error::DimensionMismatch("cost or data length".into()));
        }
        if g_diag.iter().chain(&g_sub).any(|g| g.shape() != (m, n)) {
            return Err(Error::DimensionMismatch(format!("blocks must be {m}x{n}")));
        }
        Ok(CompactLp {
            n_stages: nn,
            n,
            m,
            p,
            d,
            g_diag,
            g_sub,
        })
    }

    pub fn n_stages(&self) -> usize {
        self.n_stages
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn m(&self) -> usize {
        self.m
    }
    /// Number of primal variables `nN`.
    pub fn nz(&self) -> usize {
        self.n * self.n_stages
    }
    /// Number of constraint rows `mN`.
    pub fn nrows(&self) -> usize {
        self.m * self.n_stages
    }
    pub fn p(&self) -> &[f64] {
        &self.p
    }
    pub fn d(&self) -> &[f64] {
        &self.d
    }
    pub fn diag(&self, i: usize) -> &DMatrix<f64> {
        &self.g_diag[i]
    }
    /// `G_{i,i-1}`, absent for the first stage.
    pub fn sub(&self, i: usize) -> Option<&DMatrix<f64>> {
        if i == 0 {
            None
        } else {
            Some(&self.g_sub[i - 1])
        }
    }

    pub fn with_data(&self, d: Vec<f64>) -> Self {
        assert_eq!(d.len(), self.d.len());
        CompactLp { d, ..self.clone() }
    }

    pub fn with_cost(&self, p: Vec<f64>) -> Self {
        assert_eq!(p.len(), self.p.len());
        CompactLp { p, ..self.clone() }
    }

    pub fn objective(&self, z: &[f64]) -> f64 {
        self.p.iter().zip(z).map(|(a, b)| a * b).sum()
    }

    /// Rows of stage `i` of `Gz`.
    pub fn stage_product(&self, z: &[f64], i: usize) -> DVector<f64> {
        let n = self.n;
        let zi = DVector::from_column_slice(&z[i * n..(i + 1) * n]);
        let mut out = &self.g_diag[i] * zi;
        if let Some(g) = self.sub(i) {
            out += g * DVector::from_column_slice(&z[(i - 1) * n..i * n]);
        }
        out
    }

    pub fn mul_g(&self, z: &[f64]) -> Vec<f64> {
        assert_eq!(z.len(), self.nz());
        let mut out = Vec::with_capacity(self.nrows());
        for i in 0..self.n_stages {
            out.extend(self.stage_product(z, i).iter());
        }
        out
    }

    pub fn mul_gt(&self, lambda: &[f64]) -> Vec<f64> {
        assert_eq!(lambda.len(), self.nrows());
        let (n, m) = (self.n, self.m);
        let mut out = vec![0.0; self.nz()];
        for i in 0..self.n_stages {
            let li = DVector::from_column_slice(&lambda[i * m..(i + 1) * m]);
            let own = self.g_diag[i].tr_mul(&li);
            for k in 0..n {
                out[i * n + k] += own[k];
            }
            if let Some(g) = self.sub(i) {
                let prev = g.tr_mul(&li);
                for k in 0..n {
                    out[(i - 1) * n + k] += prev[k];
                }
            }
        }
        out
    }

    /// Sparse row `r` of `G` as `(column, value)` pairs in column order.
    pub fn row(&self, r: usize) -> Vec<(usize, f64)> {
        let (n, m) = (self.n, self.m);
        let (i, k) = (r / m, r % m);
        let mut out = Vec::new();
        if let Some(g) = self.sub(i) {
            for j in 0..n {
                let v = g[(k, j)];
                if v != 0.0 {
                    out.push(((i - 1) * n + j, v));
                }
            }
        }
        for j in 0..n {
            let v = self.g_diag[i][(k, j)];
            if v != 0.0 {
                out.push((i * n + j, v));
            }
        }
        out
    }

    /// Sparse rows of `G` restricted to the given row set, as columns of `G[rows,:]`.
    pub(crate) fn columns_of_rows(&self, rows: &[usize]) -> Vec<Vec<(usize, f64)>> {
        let mut cols = vec![Vec::new(); self.nz()];
        for (pos, &r) in rows.iter().enumerate() {
            for (j, v) in self.row(r) {
                cols[j].push((pos, v));
            }
        }
        cols
    }

    pub fn dense_g(&self) -> DMatrix<f64> {
        let (n, m) = (self.n, self.m);
        let mut g = DMatrix::zeros(self.nrows(), self.nz());
        for i in 0..self.n_stages {
            g.view_mut((i * m, i * n), (m, n)).copy_from(&self.g_diag[i]);
            if let Some(s) = self.sub(i) {
                g.view_mut((i * m, (i - 1) * n), (m, n)).copy_from(s);
            }
        }
        g
    }

    pub fn stage<'a>(&self, v: &'a [f64], i: usize, width: usize) -> &'a [f64] {
        &v[i * width..(i + 1) * width]
    }
}

/// Outcome of an admissibility test.
#[derive(Clone, Debug, PartialEq)]
pub struct AdmissibleDataFlag {
    pub feasible: bool,
    /// A point with `Gz ≥ d - tol` when feasible.
    pub certificate: Option<Vec<f64>>,
}

/// Test whether `P(d)` has a feasible point.
pub fn check_admissible(lp: &CompactLp, tol: f64) -> AdmissibleDataFlag {
    let mut solver = LpSolver::new();
    match solver.find_feasible(lp) {
        Ok(z) => {
            let gz = lp.mul_g(&z);
            let ok = gz.iter().zip(lp.d()).all(|(a, b)| *a >= b - tol);
            AdmissibleDataFlag {
                feasible: ok,
                certificate: ok.then_some(z),
            }
        }
        Err(_) => AdmissibleDataFlag {
            feasible: false,
            certificate: None,
        },
    }
}

#[derive(Serialize, Deserialize)]
struct InstanceDims {
    nx: usize,
    nu: usize,
    nw: usize,
    #[serde(rename = "N")]
    n: usize,
}

#[allow(non_snake_case)]
#[derive(Serialize, Deserialize)]
struct TimeInvariant {
    A: Vec<Vec<f64>>,
    B: Vec<Vec<f64>>,
    E: Vec<Vec<f64>>,
    F: Vec<Vec<f64>>,
    q: Vec<f64>,
    r: Vec<f64>,
    x_lo: Vec<f64>,
    x_hi: Vec<f64>,
    u_lo: Vec<f64>,
    u_hi: Vec<f64>,
}

#[derive(Serialize, Deserialize, Default)]
struct Series {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    v: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    w: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    q: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    r: Option<Vec<Vec<f64>>>,
}

#[derive(Serialize, Deserialize)]
struct InstanceFile {
    dims: InstanceDims,
    time_invariant: TimeInvariant,
    #[serde(default)]
    series: Series,
}

fn matrix_from_rows(rows: &[Vec<f64>], nr: usize, nc: usize, name: &str) -> Result<DMatrix<f64>> {
    if rows.len() != nr || rows.iter().any(|r| r.len() != nc) {
        return Err(Error::DimensionMismatch(format!("{name} must be {nr}x{nc}")));
    }
    Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn vector(v: &[f64], len: usize, name: &str) -> Result<DVector<f64>> {
    if v.len() != len {
        return Err(Error::DimensionMismatch(format!("{name} must have length {len}")));
    }
    Ok(DVector::from_column_slice(v))
}

fn series_entry(
    series: &Option<Vec<Vec<f64>>>,
    i: usize,
    horizon: usize,
    len: usize,
    name: &str,
) -> Result<Option<DVector<f64>>> {
    match series {
        None => Ok(None),
        Some(s) if s.len() != horizon => Err(Error::DimensionMismatch(format!(
            "series {name} has {} entries for horizon {horizon}",
            s.len()
        ))),
        Some(s) => vector(&s[i], len, &format!("{name}[{}]", i + 1)).map(Some),
    }
}

impl InstanceFile {
    fn into_problem(self) -> Result<MpcProblem> {
        let InstanceDims { nx, nu, nw, n } = self.dims;
        let ti = &self.time_invariant;
        let base = StageSpec {
            a: matrix_from_rows(&ti.A, nx, nx, "A")?,
            b: matrix_from_rows(&ti.B, nx, nu, "B")?,
            e: matrix_from_rows(&ti.E, nw, nx, "E")?,
            f: matrix_from_rows(&ti.F, nw, nu, "F")?,
            q: vector(&ti.q, nx, "q")?,
            r: vector(&ti.r, nu, "r")?,
            v: DVector::zeros(nx),
            w: DVector::zeros(nw),
            x_lo: vector(&ti.x_lo, nx, "x_lo")?,
            x_hi: vector(&ti.x_hi, nx, "x_hi")?,
            u_lo: vector(&ti.u_lo, nu, "u_lo")?,
            u_hi: vector(&ti.u_hi, nu, "u_hi")?,
        };
        let mut stages = Vec::with_capacity(n);
        for i in 0..n {
            let mut s = base.clone();
            if let Some(v) = series_entry(&self.series.v, i, n, nx, "v")? {
                s.v = v;
            }
            if let Some(w) = series_entry(&self.series.w, i, n, nw, "w")? {
                s.w = w;
            }
            if let Some(q) = series_entry(&self.series.q, i, n, nx, "q")? {
                s.q = q;
            }
            if let Some(r) = series_entry(&self.series.r, i, n, nu, "r")? {
                s.r = r;
            }
            stages.push(s);
        }
        MpcProblem::new(stages)
    }

    fn from_problem(p: &MpcProblem) -> Result<Self> {
        let s0 = &p.stages[0];
        for s in &p.stages[1..] {
            if s.a != s0.a
                || s.b != s0.b
                || s.e != s0.e
                || s.f != s0.f
                || s.x_lo != s0.x_lo
                || s.x_hi != s0.x_hi
                || s.u_lo != s0.u_lo
                || s.u_hi != s0.u_hi
            {
                return Err(Error::InvalidConfig(
                    "instance files require time-invariant matrices and bounds".into(),
                ));
            }
        }
        let Dims { nx, nu, nw } = p.dims;
        let col = |f: &dyn Fn(&StageSpec) -> &DVector<f64>| -> Option<Vec<Vec<f64>>> {
            Some(p.stages.iter().map(|s| f(s).iter().copied().collect()).collect())
        };
        Ok(InstanceFile {
            dims: InstanceDims {
                nx,
                nu,
                nw,
                n: p.horizon(),
            },
            time_invariant: TimeInvariant {
                A: matrix_rows(&s0.a),
                B: matrix_rows(&s0.b),
                E: matrix_rows(&s0.e),
                F: matrix_rows(&s0.f),
                q: s0.q.iter().copied().collect(),
                r: s0.r.iter().copied().collect(),
                x_lo: s0.x_lo.iter().copied().collect(),
                x_hi: s0.x_hi.iter().copied().collect(),
                u_lo: s0.u_lo.iter().copied().collect(),
                u_hi: s0.u_hi.iter().copied().collect(),
            },
            series: Series {
                v: col(&|s| &s.v),
                w: col(&|s| &s.w),
                q: col(&|s| &s.q),
                r: col(&|s| &s.r),
            },
        })
    }
}
