//! Bounded-variable primal revised simplex on the standard form.
//!
//! Phase 1 is composite: basic variables may violate their bounds and are
//! priced with cost ±1 until none does. Ratio test is Harris two-pass with
//! bound flips; Dantzig pricing falls back to Bland's rule after a stall.

use crate::error::{Error, Result};
use crate::linalg::lu::{factorize, LuFactors};
use crate::lp::standard::StandardForm;

const NONE: usize = usize::MAX;
const PIVOT_TOL: f64 = 1e-9;
const DROP_TOL: f64 = 1e-14;
const PHASE1_TOL: f64 = 1e-9;
const STALL_LIMIT: usize = 60;

pub(crate) enum InitialBasis<'a> {
    /// All slacks basic, structurals at the bound favoured by their cost.
    Cold,
    /// Per-column `Some(true)` nonbasic at lower, `Some(false)` at upper, `None` basic candidate.
    Statuses(&'a [Option<bool>]),
    /// All slacks basic, structurals nonbasic at the given values (clamped to bounds).
    Point(&'a [f64]),
}

pub(crate) struct Outcome {
    pub x: Vec<f64>,
    pub basic: Vec<bool>,
    pub dj: Vec<f64>,
    pub iterations: usize,
}

struct Eta {
    slot: usize,
    pivot: f64,
    entries: Vec<(usize, f64)>,
}

struct Simplex<'a> {
    sf: &'a StandardForm,
    m: usize,
    nc: usize,
    x: Vec<f64>,
    head: Vec<usize>,
    pos: Vec<usize>,
    lu: Option<LuFactors>,
    etas: Vec<Eta>,
    refactor_every: usize,
    row_buf: Vec<f64>,
    slot_buf: Vec<f64>,
    alpha: Vec<f64>,
    y: Vec<f64>,
    cb: Vec<f64>,
}

pub(crate) struct RunOptions {
    pub phase1_only: bool,
    pub max_iterations: usize,
    pub refactor_every: usize,
}

pub(crate) fn run(sf: &StandardForm, start: InitialBasis<'_>, opts: &RunOptions) -> Result<Outcome> {
    let m = sf.ng;
    let nc = sf.ncols();
    let mut s = Simplex {
        sf,
        m,
        nc,
        x: vec![0.0; nc],
        head: Vec::with_capacity(m),
        pos: vec![NONE; nc],
        lu: None,
        etas: Vec::new(),
        refactor_every: opts.refactor_every,
        row_buf: vec![0.0; m],
        slot_buf: vec![0.0; m],
        alpha: vec![0.0; m],
        y: vec![0.0; m],
        cb: vec![0.0; m],
    };
    s.init(start)?;
    s.iterate(opts)
}

impl<'a> Simplex<'a> {
    fn cold_value(&self, j: usize) -> f64 {
        let (l, h) = (self.sf.lo[j], self.sf.hi[j]);
        let prefer_lo = self.sf.cost[j] >= 0.0;
        match (l.is_finite(), h.is_finite()) {
            (true, true) => {
                if prefer_lo {
                    l
                } else {
                    h
                }
            }
            (true, false) => l,
            (false, true) => h,
            (false, false) => 0.0,
        }
    }

    fn nearest_bound(&self, j: usize, v: f64) -> f64 {
        let (l, h) = (self.sf.lo[j], self.sf.hi[j]);
        match (l.is_finite(), h.is_finite()) {
            (true, true) => {
                if (v - l).abs() <= (h - v).abs() {
                    l
                } else {
                    h
                }
            }
            (true, false) => l,
            (false, true) => h,
            (false, false) => 0.0,
        }
    }

    fn column_vec(&self, j: usize) -> Vec<(usize, f64)> {
        let (r, v) = self.sf.column(j);
        r.iter().copied().zip(v.iter().copied()).collect()
    }

    fn init(&mut self, start: InitialBasis<'_>) -> Result<()> {
        let nz = self.sf.nz;
        let mut cands = Vec::with_capacity(self.m);
        match start {
            InitialBasis::Cold => {
                for j in 0..nz {
                    self.x[j] = self.cold_value(j);
                }
                cands.extend(nz..self.nc);
            }
            InitialBasis::Point(z) => {
                for j in 0..nz {
                    self.x[j] = z[j].max(self.sf.lo[j]).min(self.sf.hi[j]);
                    if !self.x[j].is_finite() {
                        self.x[j] = self.cold_value(j);
                    }
                }
                cands.extend(nz..self.nc);
            }
            InitialBasis::Statuses(st) => {
                for j in 0..self.nc {
                    match st[j] {
                        None => cands.push(j),
                        Some(at_lo) => {
                            let b = if at_lo { self.sf.lo[j] } else { self.sf.hi[j] };
                            self.x[j] = if b.is_finite() { b } else { self.cold_value(j) };
                        }
                    }
                }
            }
        }
        let cols: Vec<_> = cands.iter().map(|&j| self.column_vec(j)).collect();
        match factorize(self.m, &cols) {
            Ok(lu) => {
                self.set_head(cands);
                self.lu = Some(lu);
            }
            Err(def) => {
                let mut keep = vec![true; cands.len()];
                for &c in &def.dropped {
                    keep[c] = false;
                    let j = cands[c];
                    self.x[j] = if j < nz {
                        self.cold_value(j)
                    } else {
                        self.nearest_bound(j, 0.0)
                    };
                }
                let mut head: Vec<usize> = cands
                    .iter()
                    .zip(&keep)
                    .filter(|(_, k)| **k)
                    .map(|(j, _)| *j)
                    .collect();
                head.extend(def.unpivoted_rows.iter().map(|&r| nz + r));
                if head.len() != self.m {
                    return Err(Error::NumericalFailure("crash basis has wrong size".into()));
                }
                self.set_head(head);
                self.factor()?;
            }
        }
        self.recompute_xb();
        Ok(())
    }

    fn set_head(&mut self, head: Vec<usize>) {
        for &j in &self.head {
            self.pos[j] = NONE;
        }
        for (s, &j) in head.iter().enumerate() {
            self.pos[j] = s;
        }
        self.head = head;
    }

    /// Factorize the current basis, swapping dependent columns for slacks.
    fn factor(&mut self) -> Result<()> {
        for _ in 0..4 {
            let cols: Vec<_> = self.head.iter().map(|&j| self.column_vec(j)).collect();
            match factorize(self.m, &cols) {
                Ok(lu) => {
                    self.lu = Some(lu);
                    self.etas.clear();
                    return Ok(());
                }
                Err(def) => {
                    if def.dropped.len() != def.unpivoted_rows.len() {
                        break;
                    }
                    for (&slot, &r) in def.dropped.iter().zip(&def.unpivoted_rows) {
                        let old = self.head[slot];
                        self.x[old] = self.nearest_bound(old, self.x[old]);
                        self.pos[old] = NONE;
                        let s = self.sf.slack(r);
                        self.head[slot] = s;
                        self.pos[s] = slot;
                    }
                }
            }
        }
        Err(Error::NumericalFailure("basis repair failed".into()))
    }

    fn refactor(&mut self) -> Result<()> {
        self.factor()?;
        self.recompute_xb();
        Ok(())
    }

    fn recompute_xb(&mut self) {
        self.row_buf.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..self.nc {
            if self.pos[j] != NONE || self.x[j] == 0.0 {
                continue;
            }
            let xj = self.x[j];
            let (rows, vals) = self.sf.column(j);
            for (&r, &v) in rows.iter().zip(vals) {
                self.row_buf[r] -= v * xj;
            }
        }
        let mut out = std::mem::take(&mut self.slot_buf);
        self.solve_b(&mut out);
        for (s, &j) in self.head.iter().enumerate() {
            self.x[j] = out[s];
        }
        self.slot_buf = out;
    }

    /// `out = B⁻¹ row_buf`; consumes `row_buf`.
    fn solve_b(&mut self, out: &mut [f64]) {
        self.lu.as_ref().unwrap().ftran(&mut self.row_buf, out);
        for eta in &self.etas {
            let xr = out[eta.slot] / eta.pivot;
            out[eta.slot] = xr;
            if xr != 0.0 {
                for &(i, a) in &eta.entries {
                    out[i] -= a * xr;
                }
            }
        }
    }

    fn ftran_column(&mut self, j: usize) {
        self.row_buf.iter_mut().for_each(|v| *v = 0.0);
        let (rows, vals) = self.sf.column(j);
        for (&r, &v) in rows.iter().zip(vals) {
            self.row_buf[r] = v;
        }
        let mut out = std::mem::take(&mut self.alpha);
        self.solve_b(&mut out);
        self.alpha = out;
    }

    /// `y = B⁻ᵀ cb`.
    fn btran(&mut self) {
        self.slot_buf.copy_from_slice(&self.cb);
        for eta in self.etas.iter().rev() {
            let mut acc = self.slot_buf[eta.slot];
            for &(i, a) in &eta.entries {
                acc -= a * self.slot_buf[i];
            }
            self.slot_buf[eta.slot] = acc / eta.pivot;
        }
        self.lu.as_ref().unwrap().btran(&mut self.slot_buf, &mut self.y);
    }

    fn reduced_cost(&self, j: usize, phase2: bool) -> f64 {
        let mut dj = if phase2 { self.sf.cost[j] } else { 0.0 };
        let (rows, vals) = self.sf.column(j);
        for (&r, &v) in rows.iter().zip(vals) {
            dj -= self.y[r] * v;
        }
        dj
    }

    /// Fill `cb` with phase costs; returns true when some basic variable is infeasible.
    fn phase_costs(&mut self) -> bool {
        let tol = self.sf.feas_tol;
        let mut infeasible = false;
        for s in 0..self.m {
            let j = self.head[s];
            let v = self.x[j];
            self.cb[s] = if v < self.sf.lo[j] - tol {
                infeasible = true;
                -1.0
            } else if v > self.sf.hi[j] + tol {
                infeasible = true;
                1.0
            } else {
                0.0
            };
        }
        if !infeasible {
            for s in 0..self.m {
                self.cb[s] = self.sf.cost[self.head[s]];
            }
        }
        infeasible
    }

    fn price(&self, phase2: bool, bland: bool) -> Option<(usize, f64)> {
        let tol = if phase2 { self.sf.opt_tol } else { PHASE1_TOL };
        let mut best: Option<(usize, f64)> = None;
        let mut best_score = 0.0;
        for j in 0..self.nc {
            if self.pos[j] != NONE {
                continue;
            }
            let (l, h) = (self.sf.lo[j], self.sf.hi[j]);
            if l == h {
                continue;
            }
            let dj = self.reduced_cost(j, phase2);
            let dir = if dj < -tol && self.x[j] < h {
                1.0
            } else if dj > tol && self.x[j] > l {
                -1.0
            } else {
                continue;
            };
            if bland {
                return Some((j, dir));
            }
            let score = dj.abs();
            if score > best_score {
                best_score = score;
                best = Some((j, dir));
            }
        }
        best
    }

    /// Harris two-pass ratio test. Returns `(theta, leaving slot, target value)`;
    /// slot `NONE` means a bound flip of the entering variable.
    fn ratio_test(&self, q: usize, dir: f64, bland: bool) -> Option<(f64, usize, f64)> {
        let tol = self.sf.feas_tol;
        let flip = if dir > 0.0 {
            self.sf.hi[q] - self.x[q]
        } else {
            self.x[q] - self.sf.lo[q]
        };
        let mut relaxed = f64::INFINITY;
        for s in 0..self.m {
            let a = self.alpha[s];
            if a.abs() <= PIVOT_TOL {
                continue;
            }
            let delta = -dir * a;
            let j = self.head[s];
            let (v, l, h) = (self.x[j], self.sf.lo[j], self.sf.hi[j]);
            let t = if delta < 0.0 {
                if v > h + tol {
                    (v - h + tol) / -delta
                } else if l.is_finite() && v >= l - tol {
                    (v - l + tol) / -delta
                } else {
                    continue;
                }
            } else if v < l - tol {
                (l + tol - v) / delta
            } else if h.is_finite() && v <= h + tol {
                (h + tol - v) / delta
            } else {
                continue;
            };
            relaxed = relaxed.min(t);
        }
        if flip <= relaxed {
            return if flip.is_finite() { Some((flip, NONE, 0.0)) } else { None };
        }
        if !relaxed.is_finite() {
            return None;
        }
        let mut pick = NONE;
        let mut pick_val = 0.0;
        let mut pick_theta = 0.0;
        let mut pick_key = 0.0;
        for s in 0..self.m {
            let a = self.alpha[s];
            if a.abs() <= PIVOT_TOL {
                continue;
            }
            let delta = -dir * a;
            let j = self.head[s];
            let (v, l, h) = (self.x[j], self.sf.lo[j], self.sf.hi[j]);
            let (t, target) = if delta < 0.0 {
                if v > h + tol {
                    ((v - h) / -delta, h)
                } else if l.is_finite() && v >= l - tol {
                    ((v - l) / -delta, l)
                } else {
                    continue;
                }
            } else if v < l - tol {
                ((l - v) / delta, l)
            } else if h.is_finite() && v <= h + tol {
                ((h - v) / delta, h)
            } else {
                continue;
            };
            if t > relaxed {
                continue;
            }
            let better = if pick == NONE {
                true
            } else if bland {
                t < pick_theta - 1e-12 || (t <= pick_theta + 1e-12 && j < self.head[pick])
            } else {
                a.abs() > pick_key
            };
            if better {
                pick = s;
                pick_val = target;
                pick_theta = t;
                pick_key = a.abs();
            }
        }
        if pick == NONE {
            return None;
        }
        Some((pick_theta.max(0.0), pick, pick_val))
    }

    fn iterate(&mut self, opts: &RunOptions) -> Result<Outcome> {
        let mut iterations = 0;
        let mut fresh = true;
        let mut stall = 0;
        let mut rescues = 0;
        loop {
            if iterations >= opts.max_iterations {
                return Err(Error::NumericalFailure("iteration limit reached".into()));
            }
            if self.etas.len() >= self.refactor_every {
                self.refactor()?;
                fresh = true;
            }
            let infeasible = self.phase_costs();
            if !infeasible && opts.phase1_only {
                if !fresh {
                    self.refactor()?;
                    fresh = true;
                    continue;
                }
                return Ok(self.outcome(iterations));
            }
            let phase2 = !infeasible;
            self.btran();
            let bland = stall > STALL_LIMIT;
            let Some((q, dir)) = self.price(phase2, bland) else {
                if !fresh {
                    self.refactor()?;
                    fresh = true;
                    continue;
                }
                if infeasible {
                    return Err(Error::Infeasible);
                }
                return Ok(self.outcome(iterations));
            };
            self.ftran_column(q);
            let Some((theta, slot, target)) = self.ratio_test(q, dir, bland) else {
                if !fresh {
                    self.refactor()?;
                    fresh = true;
                    continue;
                }
                if phase2 {
                    return Err(Error::Unbounded);
                }
                rescues += 1;
                if rescues > 3 {
                    return Err(Error::NumericalFailure("phase 1 direction unblocked".into()));
                }
                continue;
            };
            iterations += 1;
            fresh = false;
            if theta <= 1e-12 {
                stall += 1;
            } else {
                stall = 0;
            }
            for s in 0..self.m {
                let a = self.alpha[s];
                if a != 0.0 {
                    self.x[self.head[s]] -= dir * a * theta;
                }
            }
            if slot == NONE {
                self.x[q] = if dir > 0.0 { self.sf.hi[q] } else { self.sf.lo[q] };
                continue;
            }
            self.x[q] += dir * theta;
            let leaving = self.head[slot];
            self.x[leaving] = target;
            self.pos[leaving] = NONE;
            self.head[slot] = q;
            self.pos[q] = slot;
            let pivot = self.alpha[slot];
            let entries = self
                .alpha
                .iter()
                .enumerate()
                .filter(|&(s, a)| s != slot && a.abs() > DROP_TOL)
                .map(|(s, &a)| (s, a))
                .collect();
            self.etas.push(Eta {
                slot,
                pivot,
                entries,
            });
        }
    }

    fn outcome(&mut self, iterations: usize) -> Outcome {
        for s in 0..self.m {
            self.cb[s] = self.sf.cost[self.head[s]];
        }
        self.btran();
        let dj = (0..self.nc)
            .map(|j| if self.pos[j] != NONE { 0.0 } else { self.reduced_cost(j, true) })
            .collect();
        Outcome {
            x: self.x.clone(),
            basic: self.pos.iter().map(|&p| p != NONE).collect(),
            dj,
            iterations,
        }
    }
}
