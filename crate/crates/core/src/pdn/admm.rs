//! Operator-splitting solver for conic programs with a diagonal quadratic
//! objective:
//!
//! ```text
//! minimize   1/2 x'Px + q'x
//! subject to Ax = z,  z in C
//! ```
//!
//! where `C` is a product of boxes `[lo, hi]` (equalities when `lo == hi`)
//! and second-order cones `{(t, u) : ||u|| <= t}`. Iterates follow the usual
//! relaxed ADMM scheme with a cached Cholesky factor of `P + sigma I + A' R A`
//! and adaptive step size.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

/// Compressed sparse rows.
#[derive(Debug, Clone, Default)]
pub struct Csr {
    pub rows: usize,
    pub cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl Csr {
    /// Build from (row, col, value) triplets; duplicates are summed.
    pub fn from_triplets(rows: usize, cols: usize, mut t: Vec<(usize, usize, f64)>) -> Self {
        t.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut indptr = vec![0; rows + 1];
        let mut indices = Vec::with_capacity(t.len());
        let mut values: Vec<f64> = Vec::with_capacity(t.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in t {
            assert!(r < rows && c < cols, "triplet ({r}, {c}) out of bounds");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            indices.push(c);
            values.push(v);
            indptr[r + 1] += 1;
            last = Some((r, c));
        }
        for r in 0..rows {
            indptr[r + 1] += indptr[r];
        }
        Self {
            rows,
            cols,
            indptr,
            indices,
            values,
        }
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    pub fn mul(&self, x: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            *o = self.row(r).map(|(c, v)| v * x[c]).sum();
        }
    }

    pub fn mul_t(&self, y: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (r, &yr) in y.iter().enumerate() {
            if yr != 0.0 {
                for (c, v) in self.row(r) {
                    out[c] += v * yr;
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConeProgram {
    pub p_diag: Vec<f64>,
    pub q: Vec<f64>,
    pub a: Csr,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    /// Second-order cone blocks as (first row, dimension). Rows inside a cone
    /// ignore `lo`/`hi`; the first row of each block is the cone's `t`.
    pub cones: Vec<(usize, usize)>,
}

impl ConeProgram {
    pub fn n(&self) -> usize {
        self.q.len()
    }

    pub fn m(&self) -> usize {
        self.lo.len()
    }

    fn in_cone(&self) -> Vec<bool> {
        let mut mark = vec![false; self.m()];
        for &(s, d) in &self.cones {
            mark[s..s + d].iter_mut().for_each(|v| *v = true);
        }
        mark
    }

    fn project(&self, in_cone: &[bool], z: &mut [f64]) {
        for i in 0..z.len() {
            if !in_cone[i] {
                z[i] = z[i].clamp(self.lo[i], self.hi[i]);
            }
        }
        for &(s, d) in &self.cones {
            project_soc(&mut z[s..s + d]);
        }
    }
}

pub fn project_soc(v: &mut [f64]) {
    let t = v[0];
    let norm = v[1..].iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm <= t {
        return;
    }
    if norm <= -t {
        v.iter_mut().for_each(|x| *x = 0.0);
        return;
    }
    let a = (t + norm) / 2.0;
    v[0] = a;
    let s = a / norm;
    v[1..].iter_mut().for_each(|x| *x *= s);
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdmmSettings {
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_iter: usize,
    pub rho: f64,
    pub sigma: f64,
    pub alpha: f64,
    /// Step size multiplier for equality rows.
    pub eq_scale: f64,
    pub check_every: usize,
    pub adapt_every: usize,
}

impl Default for AdmmSettings {
    fn default() -> Self {
        Self {
            eps_abs: 1e-7,
            eps_rel: 1e-7,
            max_iter: 40_000,
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            eq_scale: 1e3,
            check_every: 10,
            adapt_every: 50,
        }
    }
}

/// Iterates kept between solves of structurally identical programs.
#[derive(Debug, Clone, PartialEq)]
pub struct WarmStart {
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub y: Vec<f64>,
    pub rho: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdmmStatus {
    Solved,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct AdmmResult {
    pub status: AdmmStatus,
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub y: Vec<f64>,
    pub iterations: usize,
    pub prim_res: f64,
    pub dual_res: f64,
    pub rho: f64,
}

impl AdmmResult {
    pub fn warm_start(&self) -> WarmStart {
        WarmStart {
            x: self.x.clone(),
            z: self.z.clone(),
            y: self.y.clone(),
            rho: self.rho,
        }
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

struct Factor {
    chol: Cholesky<f64, Dyn>,
    rho_vec: Vec<f64>,
}

fn factor(prog: &ConeProgram, s: &AdmmSettings, rho: f64) -> Factor {
    let n = prog.n();
    let rho_vec: Vec<f64> = (0..prog.m())
        .map(|i| {
            if prog.lo[i] == prog.hi[i] {
                rho * s.eq_scale
            } else {
                rho
            }
        })
        .collect();
    let mut k = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        k[(j, j)] = prog.p_diag[j] + s.sigma;
    }
    for (r, &rr) in rho_vec.iter().enumerate() {
        let entries: Vec<(usize, f64)> = prog.a.row(r).collect();
        for &(i, vi) in &entries {
            for &(j, vj) in &entries {
                k[(i, j)] += rr * vi * vj;
            }
        }
    }
    let chol = Cholesky::new(k).expect("P + sigma I + A'RA is positive definite");
    Factor { chol, rho_vec }
}

pub fn solve(prog: &ConeProgram, s: &AdmmSettings, warm: Option<&WarmStart>) -> AdmmResult {
    let (n, m) = (prog.n(), prog.m());
    let in_cone = prog.in_cone();
    let usable = warm.filter(|w| w.x.len() == n && w.z.len() == m);
    let (mut x, mut z, mut y, mut rho) = match usable {
        Some(w) => (w.x.clone(), w.z.clone(), w.y.clone(), w.rho),
        None => (vec![0.0; n], vec![0.0; m], vec![0.0; m], s.rho),
    };
    if usable.is_none() {
        prog.project(&in_cone, &mut z);
    }
    let mut f = factor(prog, s, rho);
    let mut rhs = DVector::<f64>::zeros(n);
    let mut tmp_m = vec![0.0; m];
    let mut tmp_n = vec![0.0; n];
    let mut ax = vec![0.0; m];
    let mut z_tilde = vec![0.0; m];
    let (mut prim, mut dual) = (f64::INFINITY, f64::INFINITY);

    for it in 1..=s.max_iter {
        for i in 0..m {
            tmp_m[i] = f.rho_vec[i] * z[i] - y[i];
        }
        prog.a.mul_t(&tmp_m, &mut tmp_n);
        for j in 0..n {
            rhs[j] = s.sigma * x[j] - prog.q[j] + tmp_n[j];
        }
        let x_tilde = f.chol.solve(&rhs);
        prog.a.mul(x_tilde.as_slice(), &mut z_tilde);
        for j in 0..n {
            x[j] = s.alpha * x_tilde[j] + (1.0 - s.alpha) * x[j];
        }
        for i in 0..m {
            let zr = s.alpha * z_tilde[i] + (1.0 - s.alpha) * z[i];
            tmp_m[i] = zr;
            z_tilde[i] = zr + y[i] / f.rho_vec[i];
        }
        prog.project(&in_cone, &mut z_tilde);
        for i in 0..m {
            y[i] += f.rho_vec[i] * (tmp_m[i] - z_tilde[i]);
        }
        std::mem::swap(&mut z, &mut z_tilde);

        let check = it % s.check_every == 0;
        let adapt = it % s.adapt_every == 0;
        if !(check || adapt) {
            continue;
        }
        prog.a.mul(&x, &mut ax);
        let r_prim: Vec<f64> = ax.iter().zip(&z).map(|(a, b)| a - b).collect();
        prim = inf_norm(&r_prim);
        prog.a.mul_t(&y, &mut tmp_n);
        let aty = inf_norm(&tmp_n);
        let px: Vec<f64> = x.iter().zip(&prog.p_diag).map(|(a, p)| a * p).collect();
        let r_dual: Vec<f64> = (0..n).map(|j| px[j] + prog.q[j] + tmp_n[j]).collect();
        dual = inf_norm(&r_dual);
        let prim_scale = inf_norm(&ax).max(inf_norm(&z));
        let dual_scale = inf_norm(&px).max(aty).max(inf_norm(&prog.q));
        if prim <= s.eps_abs + s.eps_rel * prim_scale && dual <= s.eps_abs + s.eps_rel * dual_scale {
            return AdmmResult {
                status: AdmmStatus::Solved,
                x,
                z,
                y,
                iterations: it,
                prim_res: prim,
                dual_res: dual,
                rho,
            };
        }
        if adapt {
            let num = prim / prim_scale.max(1e-12);
            let den = dual / dual_scale.max(1e-12);
            let proposed = (rho * (num / den.max(1e-30)).sqrt()).clamp(1e-6, 1e6);
            if proposed > 5.0 * rho || proposed < rho / 5.0 {
                rho = proposed;
                f = factor(prog, s, rho);
            }
        }
    }
    AdmmResult {
        status: AdmmStatus::MaxIterations,
        x,
        z,
        y,
        iterations: s.max_iter,
        prim_res: prim,
        dual_res: dual,
        rho,
    }
}
