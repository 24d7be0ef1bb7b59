use nalgebra::{DMatrix, DVector};

use super::program::{ConeProgram, ConstraintId};
use super::standard::{compile, equilibrate, ConeLayout, Layout, RowRef, StandardForm};
use crate::error::Result;

/// Termination status of an interior-point solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    /// Primal infeasible (a dual improving ray was found).
    Infeasible,
    /// Primal unbounded (dual infeasible).
    Unbounded,
    MaxIter,
    NumericalFailure,
}

/// Relative residuals of the returned iterate.
#[derive(Debug, Clone, Copy, Default)]
pub struct Residuals {
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
}

/// Solver output. Objectives are reported in the IR's maximize sense; duals
/// are blocks per constraint in the original constraint geometry, for the
/// internal minimization convention (see [`check_kkt`](super::check_kkt)).
#[derive(Debug, Clone)]
pub struct ConeSolution {
    pub status: SolveStatus,
    pub primal: Vec<f64>,
    pub duals: Vec<Vec<f64>>,
    /// Multipliers of the (lower, upper) variable bounds.
    pub bound_duals: Vec<(f64, f64)>,
    pub objective: f64,
    pub dual_objective: f64,
    pub iterations: usize,
    pub residuals: Residuals,
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub tolerance: f64,
    pub max_iters: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tolerance: 1e-8,
            max_iters: 200,
        }
    }
}

/// Solve a cone program with a primal-dual path-following method
/// (Nesterov-Todd scaling, Mehrotra predictor-corrector) on the homogeneous
/// self-dual embedding. Deterministic for identical inputs.
pub fn solve(program: &ConeProgram, options: &SolverOptions) -> Result<ConeSolution> {
    let (form, layout) = compile(program)?;
    let mut ipm = Ipm::new(form, options);
    let raw = ipm.run();
    Ok(finish_solution(program, &layout, &ipm, raw))
}

// ---------------------------------------------------------------------------
// Cone algebra over the slack layout
// ---------------------------------------------------------------------------

fn cone_identity(cones: &ConeLayout) -> DVector<f64> {
    let mut e = DVector::zeros(cones.total_rows());
    for i in 0..cones.n_orthant {
        e[i] = 1.0;
    }
    let mut row = cones.n_orthant;
    for dim in &cones.soc_dims {
        e[row] = 1.0;
        row += dim;
    }
    e
}

// Largest step to the cone boundary from interior point u along du.
fn max_step(cones: &ConeLayout, u: &DVector<f64>, du: &DVector<f64>) -> f64 {
    let mut alpha = f64::INFINITY;
    for i in 0..cones.n_orthant {
        if du[i] < 0.0 {
            alpha = alpha.min(-u[i] / du[i]);
        }
    }
    let mut row = cones.n_orthant;
    for &dim in &cones.soc_dims {
        let (u0, du0) = (u[row], du[row]);
        let mut u1s = 0.0;
        let mut du1s = 0.0;
        let mut cross = 0.0;
        for r in row + 1..row + dim {
            u1s += u[r] * u[r];
            du1s += du[r] * du[r];
            cross += u[r] * du[r];
        }
        let c0 = u0 * u0 - u1s;
        let c1 = 2.0 * (u0 * du0 - cross);
        let c2 = du0 * du0 - du1s;
        alpha = alpha.min(smallest_positive_root(c2, c1, c0));
        row += dim;
    }
    alpha
}

// Smallest positive root of c2·α² + c1·α + c0 with c0 > 0 (∞ if none).
fn smallest_positive_root(c2: f64, c1: f64, c0: f64) -> f64 {
    let tiny = 1e-14 * (c1.abs() + c0.abs() + 1.0);
    if c2.abs() <= tiny {
        return if c1 < 0.0 { -c0 / c1 } else { f64::INFINITY };
    }
    let disc = c1 * c1 - 4.0 * c2 * c0;
    if disc <= 0.0 {
        // No crossing (opens up) or a degenerate tangent.
        return if c2 > 0.0 {
            f64::INFINITY
        } else {
            (-c1 / (2.0 * c2)).max(0.0)
        };
    }
    let sq = disc.sqrt();
    let q = -0.5 * (c1 + c1.signum() * sq);
    let mut roots = [f64::INFINITY; 2];
    if c2 != 0.0 {
        roots[0] = q / c2;
    }
    if q != 0.0 {
        roots[1] = c0 / q;
    }
    let mut best = f64::INFINITY;
    for r in roots {
        if r > 0.0 && r < best {
            best = r;
        }
    }
    best
}

// Jordan product u∘v.
fn jordan_mul(cones: &ConeLayout, u: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(u.len());
    for i in 0..cones.n_orthant {
        out[i] = u[i] * v[i];
    }
    let mut row = cones.n_orthant;
    for &dim in &cones.soc_dims {
        let mut dot = 0.0;
        for r in row..row + dim {
            dot += u[r] * v[r];
        }
        out[row] = dot;
        for r in row + 1..row + dim {
            out[r] = u[row] * v[r] + v[row] * u[r];
        }
        row += dim;
    }
    out
}

// Solve λ∘x = d for x.
fn arrow_solve(cones: &ConeLayout, lambda: &DVector<f64>, d: &DVector<f64>) -> DVector<f64> {
    let mut x = DVector::zeros(d.len());
    for i in 0..cones.n_orthant {
        x[i] = d[i] / lambda[i];
    }
    let mut row = cones.n_orthant;
    for &dim in &cones.soc_dims {
        let a = lambda[row];
        let mut b2 = 0.0;
        let mut bd = 0.0;
        for r in row + 1..row + dim {
            b2 += lambda[r] * lambda[r];
            bd += lambda[r] * d[r];
        }
        let det = a * a - b2;
        let x0 = (a * d[row] - bd) / det;
        x[row] = x0;
        for r in row + 1..row + dim {
            x[r] = (d[r] - x0 * lambda[r]) / a;
        }
        row += dim;
    }
    x
}

struct SocScale {
    eta: f64,
    wbar: Vec<f64>,
}

// Nesterov-Todd scaling point: W z = W⁻¹ s = λ.
struct Scaling {
    w_orth: Vec<f64>,
    socs: Vec<SocScale>,
    lambda: DVector<f64>,
}

impl Scaling {
    fn identity(cones: &ConeLayout) -> Self {
        let socs = cones
            .soc_dims
            .iter()
            .map(|&dim| {
                let mut wbar = vec![0.0; dim];
                wbar[0] = 1.0;
                SocScale { eta: 1.0, wbar }
            })
            .collect();
        Scaling {
            w_orth: vec![1.0; cones.n_orthant],
            socs,
            lambda: cone_identity(cones),
        }
    }

    fn update(cones: &ConeLayout, s: &DVector<f64>, z: &DVector<f64>) -> Option<Self> {
        let mut w_orth = Vec::with_capacity(cones.n_orthant);
        for i in 0..cones.n_orthant {
            if s[i] <= 0.0 || z[i] <= 0.0 {
                return None;
            }
            w_orth.push((s[i] / z[i]).sqrt());
        }
        let mut socs = Vec::with_capacity(cones.soc_dims.len());
        let mut row = cones.n_orthant;
        for &dim in &cones.soc_dims {
            let res_s = soc_residual(&s.as_slice()[row..row + dim]);
            let res_z = soc_residual(&z.as_slice()[row..row + dim]);
            if res_s <= 0.0 || res_z <= 0.0 {
                return None;
            }
            let rho_s = res_s.sqrt();
            let rho_z = res_z.sqrt();
            let mut sbar: Vec<f64> = s.as_slice()[row..row + dim].iter().map(|v| v / rho_s).collect();
            let zbar: Vec<f64> = z.as_slice()[row..row + dim].iter().map(|v| v / rho_z).collect();
            let dot: f64 = sbar.iter().zip(&zbar).map(|(a, b)| a * b).sum();
            let gamma = ((1.0 + dot) / 2.0).sqrt();
            // w̄ = (s̄ + Jz̄)/(2γ)
            sbar[0] += zbar[0];
            for r in 1..dim {
                sbar[r] -= zbar[r];
            }
            let wbar: Vec<f64> = sbar.iter().map(|v| v / (2.0 * gamma)).collect();
            socs.push(SocScale {
                eta: (rho_s / rho_z).sqrt(),
                wbar,
            });
            row += dim;
        }
        let mut scaling = Scaling {
            w_orth,
            socs,
            lambda: DVector::zeros(s.len()),
        };
        scaling.lambda = scaling.apply_w(cones, z);
        Some(scaling)
    }

    // W̄ v for one SOC block: head = w̄₀v₀ + w̄₁ᵀv₁,
    // tail = v₁ + (v₀ + w̄₁ᵀv₁/(1+w̄₀))·w̄₁.
    fn wbar_apply(wbar: &[f64], v: &mut [f64]) {
        let w0 = wbar[0];
        let dot: f64 = wbar[1..]
            .iter()
            .zip(v[1..].iter())
            .map(|(a, b)| a * b)
            .sum();
        let head = w0 * v[0] + dot;
        let coef = v[0] + dot / (1.0 + w0);
        for (vi, wi) in v[1..].iter_mut().zip(&wbar[1..]) {
            *vi += coef * wi;
        }
        v[0] = head;
    }

    fn apply_w(&self, cones: &ConeLayout, v: &DVector<f64>) -> DVector<f64> {
        let mut out = v.clone();
        for i in 0..cones.n_orthant {
            out[i] *= self.w_orth[i];
        }
        let mut row = cones.n_orthant;
        for (scale, &dim) in self.socs.iter().zip(&cones.soc_dims) {
            let block = &mut out.as_mut_slice()[row..row + dim];
            Self::wbar_apply(&scale.wbar, block);
            for b in block.iter_mut() {
                *b *= scale.eta;
            }
            row += dim;
        }
        out
    }

    fn apply_w_inv(&self, cones: &ConeLayout, v: &DVector<f64>) -> DVector<f64> {
        let mut out = v.clone();
        for i in 0..cones.n_orthant {
            out[i] /= self.w_orth[i];
        }
        let mut row = cones.n_orthant;
        for (scale, &dim) in self.socs.iter().zip(&cones.soc_dims) {
            let block = &mut out.as_mut_slice()[row..row + dim];
            // W̄⁻¹ = J W̄ J
            for b in block[1..].iter_mut() {
                *b = -*b;
            }
            Self::wbar_apply(&scale.wbar, block);
            for b in block[1..].iter_mut() {
                *b = -*b;
            }
            for b in block.iter_mut() {
                *b /= scale.eta;
            }
            row += dim;
        }
        out
    }

    // W² v = η²(2w̄(w̄ᵀv) − Jv) per SOC block; diagonal on the orthant.
    fn apply_w_sq(&self, cones: &ConeLayout, v: &DVector<f64>) -> DVector<f64> {
        let mut out = v.clone();
        for i in 0..cones.n_orthant {
            out[i] *= self.w_orth[i] * self.w_orth[i];
        }
        let mut row = cones.n_orthant;
        for (scale, &dim) in self.socs.iter().zip(&cones.soc_dims) {
            let eta2 = scale.eta * scale.eta;
            let dot: f64 = scale
                .wbar
                .iter()
                .zip(&v.as_slice()[row..row + dim])
                .map(|(a, b)| a * b)
                .sum();
            out[row] = eta2 * (2.0 * scale.wbar[0] * dot - v[row]);
            for r in row + 1..row + dim {
                out[r] = eta2 * (2.0 * scale.wbar[r - row] * dot + v[r]);
            }
            row += dim;
        }
        out
    }

    fn apply_w_inv_sq(&self, cones: &ConeLayout, v: &DVector<f64>) -> DVector<f64> {
        let mut out = v.clone();
        for i in 0..cones.n_orthant {
            out[i] /= self.w_orth[i] * self.w_orth[i];
        }
        let mut row = cones.n_orthant;
        for (scale, &dim) in self.socs.iter().zip(&cones.soc_dims) {
            let eta2 = scale.eta * scale.eta;
            // v̂ = Jw̄
            let mut dot = scale.wbar[0] * v[row];
            for r in row + 1..row + dim {
                dot -= scale.wbar[r - row] * v[r];
            }
            out[row] = (2.0 * scale.wbar[0] * dot - v[row]) / eta2;
            for r in row + 1..row + dim {
                out[r] = (-2.0 * scale.wbar[r - row] * dot + v[r]) / eta2;
            }
            row += dim;
        }
        out
    }
}

fn soc_residual(u: &[f64]) -> f64 {
    let tail: f64 = u[1..].iter().map(|v| v * v).sum();
    u[0] * u[0] - tail
}

// ---------------------------------------------------------------------------
// KKT system: factor once per iteration, solve several right-hand sides
// ---------------------------------------------------------------------------

enum Factor {
    Chol(nalgebra::Cholesky<f64, nalgebra::Dyn>),
    Lu(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
    Empty,
}

struct KktSolver {
    factor: Factor,
}

impl KktSolver {
    // Assemble M = Gᵀ W⁻² G (+ δI) and factor. Falls back to larger shifts
    // if the Cholesky factorization fails.
    fn factor(form: &StandardForm, scaling: &Scaling) -> Option<KktSolver> {
        let n = form.n();
        let p = form.p();
        if n == 0 {
            return Some(KktSolver {
                factor: Factor::Empty,
            });
        }
        let mut m_mat = DMatrix::zeros(n, n);
        let g = &form.g;
        let cones = &form.cones;

        let rank1 = |m: &mut DMatrix<f64>, row: &[(usize, f64)], coeff: f64| {
            for &(i, a) in row {
                for &(j, b) in row {
                    m[(i, j)] += coeff * a * b;
                }
            }
        };

        for (r, row) in g.rows.iter().take(cones.n_orthant).enumerate() {
            let w = scaling.w_orth[r];
            rank1(&mut m_mat, row, 1.0 / (w * w));
        }
        let mut row0 = cones.n_orthant;
        let mut scratch: Vec<f64> = vec![0.0; n];
        let mut marked: Vec<bool> = vec![false; n];
        let mut touched: Vec<usize> = Vec::new();
        for (scale, &dim) in scaling.socs.iter().zip(&cones.soc_dims) {
            let inv_eta2 = 1.0 / (scale.eta * scale.eta);
            // u = Σᵢ v̂ᵢ gᵢ with v̂ = Jw̄ (sparse accumulation)
            touched.clear();
            for r in 0..dim {
                let sign = if r == 0 { 1.0 } else { -1.0 };
                let coef = sign * scale.wbar[r];
                for &(j, a) in &g.rows[row0 + r] {
                    if !marked[j] {
                        marked[j] = true;
                        touched.push(j);
                    }
                    scratch[j] += coef * a;
                }
            }
            // 2uuᵀ
            for &i in &touched {
                for &j in &touched {
                    m_mat[(i, j)] += inv_eta2 * 2.0 * scratch[i] * scratch[j];
                }
            }
            // −GᵀJG = −g₀g₀ᵀ + Σᵢ₌₁ gᵢgᵢᵀ
            rank1(&mut m_mat, &g.rows[row0], -inv_eta2);
            for r in 1..dim {
                rank1(&mut m_mat, &g.rows[row0 + r], inv_eta2);
            }
            for &j in &touched {
                scratch[j] = 0.0;
                marked[j] = false;
            }
            row0 += dim;
        }

        let mut delta = 1e-9;
        for _ in 0..4 {
            if p == 0 {
                let mut reg = m_mat.clone();
                for i in 0..n {
                    reg[(i, i)] += delta;
                }
                if let Some(chol) = nalgebra::Cholesky::new(reg) {
                    return Some(KktSolver {
                        factor: Factor::Chol(chol),
                    });
                }
            } else {
                let mut aug = DMatrix::zeros(n + p, n + p);
                aug.view_mut((0, 0), (n, n)).copy_from(&m_mat);
                for (r, row) in form.a.rows.iter().enumerate() {
                    for &(j, v) in row {
                        aug[(n + r, j)] = v;
                        aug[(j, n + r)] = v;
                    }
                }
                for i in 0..n {
                    aug[(i, i)] += delta;
                }
                for i in n..n + p {
                    aug[(i, i)] -= delta;
                }
                let lu = nalgebra::LU::new(aug);
                if lu.is_invertible() {
                    return Some(KktSolver {
                        factor: Factor::Lu(lu),
                    });
                }
            }
            delta *= 100.0;
        }
        None
    }

    // One raw solve of [M Aᵀ; A 0]·(dx,dy) = (r1, r2).
    fn solve_reduced(
        &self,
        form: &StandardForm,
        r1: &DVector<f64>,
        r2: &DVector<f64>,
    ) -> (DVector<f64>, DVector<f64>) {
        let n = form.n();
        let p = form.p();
        match &self.factor {
            Factor::Empty => (DVector::zeros(0), DVector::zeros(p)),
            Factor::Chol(chol) => (chol.solve(r1), DVector::zeros(0)),
            Factor::Lu(lu) => {
                let mut rhs = DVector::zeros(n + p);
                rhs.rows_mut(0, n).copy_from(r1);
                rhs.rows_mut(n, p).copy_from(r2);
                let sol = lu.solve(&rhs).unwrap_or_else(|| DVector::zeros(n + p));
                (sol.rows(0, n).into_owned(), sol.rows(n, p).into_owned())
            }
        }
    }

    /// Solve the 3×3 system
    ///   Aᵀdy + Gᵀdz = g1,  A dx = g2,  G dx − W² dz = g3
    /// with one round of iterative refinement.
    fn solve3(
        &self,
        form: &StandardForm,
        scaling: &Scaling,
        g1: &DVector<f64>,
        g2: &DVector<f64>,
        g3: &DVector<f64>,
    ) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let cones = &form.cones;
        let solve_once = |b1: &DVector<f64>, b2: &DVector<f64>, b3: &DVector<f64>| {
            let winv2_b3 = scaling.apply_w_inv_sq(cones, b3);
            let r1 = b1 + form.g.tr_mul_vec(&winv2_b3);
            let (dx, dy) = self.solve_reduced(form, &r1, b2);
            let gdx = form.g.mul_vec(&dx);
            let dz = scaling.apply_w_inv_sq(cones, &(gdx - b3));
            (dx, dy, dz)
        };
        let inf_norm = |v: &DVector<f64>| v.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
        let (mut dx, mut dy, mut dz) = solve_once(g1, g2, g3);
        for _ in 0..2 {
            // Residuals of the full 3×3 system.
            let r1 = g1 - form.a.tr_mul_vec(&dy) - form.g.tr_mul_vec(&dz);
            let r2 = g2 - form.a.mul_vec(&dx);
            let r3 = g3 - (form.g.mul_vec(&dx) - scaling.apply_w_sq(cones, &dz));
            let worst = inf_norm(&r1).max(inf_norm(&r2)).max(inf_norm(&r3));
            if !worst.is_finite() || worst < 1e-11 {
                break;
            }
            let (ex, ey, ez) = solve_once(&r1, &r2, &r3);
            dx += ex;
            dy += ey;
            dz += ez;
        }
        (dx, dy, dz)
    }
}

// ---------------------------------------------------------------------------
// The homogeneous self-dual interior-point iteration
// ---------------------------------------------------------------------------

struct RawOutcome {
    status: SolveStatus,
    iterations: usize,
    residuals: Residuals,
    pobj_min: f64,
    dobj_min: f64,
}

struct Ipm {
    orig: StandardForm,
    sf: StandardForm,
    col: Vec<f64>,
    row_g: Vec<f64>,
    row_a: Vec<f64>,
    opts: SolverOptions,
    x: DVector<f64>,
    y: DVector<f64>,
    z: DVector<f64>,
    s: DVector<f64>,
    tau: f64,
    kappa: f64,
    norm_bh: f64,
    norm_c: f64,
}

impl Ipm {
    fn new(form: StandardForm, opts: &SolverOptions) -> Self {
        let (sf, eq) = equilibrate(&form, 5);
        let n = form.n();
        let p = form.p();
        let m = form.m();
        let norm_bh = (form.b.norm_squared() + form.h.norm_squared()).sqrt();
        let norm_c = form.c.norm();
        Ipm {
            orig: form,
            sf,
            col: eq.col,
            row_g: eq.row_g,
            row_a: eq.row_a,
            opts: *opts,
            x: DVector::zeros(n),
            y: DVector::zeros(p),
            z: DVector::zeros(m),
            s: DVector::zeros(m),
            tau: 1.0,
            kappa: 1.0,
            norm_bh,
            norm_c,
        }
    }

    // Iterates live in the equilibrated space; map back for reporting.
    fn unscaled(&self) -> (DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>) {
        let n = self.x.len();
        let mut x = self.x.clone();
        for j in 0..n {
            x[j] *= self.col[j];
        }
        let mut y = self.y.clone();
        for i in 0..y.len() {
            y[i] *= self.row_a[i];
        }
        let mut z = self.z.clone();
        let mut s = self.s.clone();
        for i in 0..z.len() {
            z[i] *= self.row_g[i];
            s[i] /= self.row_g[i];
        }
        (x, y, z, s)
    }

    fn run(&mut self) -> RawOutcome {
        let cones = self.sf.cones.clone();
        let nu = (cones.degree() + 1) as f64;

        if self.sf.m() == 0 {
            return self.no_cone_case();
        }

        // Initial point: two least-squares solves with identity scaling,
        // then shift the slack estimates into the cone interior.
        let ident = Scaling::identity(&cones);
        let kkt0 = match KktSolver::factor(&self.sf, &ident) {
            Some(k) => k,
            None => return self.fail(0),
        };
        let zero_n = DVector::zeros(self.sf.n());
        let zero_p = DVector::zeros(self.sf.p());
        let zero_m = DVector::zeros(self.sf.m());
        let (x0, _, zs) = kkt0.solve3(&self.sf, &ident, &zero_n, &self.sf.b.clone(), &self.sf.h.clone());
        let s_raw = -zs;
        self.x = x0;
        self.s = shift_into_cone(&cones, s_raw);
        let minus_c = -self.sf.c.clone();
        let (_, y0, z_raw) = kkt0.solve3(&self.sf, &ident, &minus_c, &zero_p, &zero_m);
        self.y = y0;
        self.z = shift_into_cone(&cones, z_raw);
        self.tau = 1.0;
        self.kappa = 1.0;

        let e = cone_identity(&cones);
        let mut tiny_steps = 0usize;

        for iter in 0..self.opts.max_iters {
            // Residuals in the scaled space drive the Newton system.
            let rx = self.sf.a.tr_mul_vec(&self.y) + self.sf.g.tr_mul_vec(&self.z)
                + &self.sf.c * self.tau;
            let ry = self.sf.a.mul_vec(&self.x) - &self.sf.b * self.tau;
            let rz = self.sf.g.mul_vec(&self.x) + &self.s - &self.sf.h * self.tau;
            let rtau = self.sf.c.dot(&self.x)
                + self.sf.b.dot(&self.y)
                + self.sf.h.dot(&self.z)
                + self.kappa;

            if let Some(outcome) = self.check_termination(iter) {
                return outcome;
            }

            let mu = (self.s.dot(&self.z) + self.tau * self.kappa) / nu;
            if !mu.is_finite() {
                return self.fail(iter);
            }

            let scaling = match Scaling::update(&cones, &self.s, &self.z) {
                Some(sc) => sc,
                None => return self.fail(iter),
            };
            let kkt = match KktSolver::factor(&self.sf, &scaling) {
                Some(k) => k,
                None => return self.fail(iter),
            };

            // Constant column for the τ elimination.
            let (ux, uy, uz) = kkt.solve3(
                &self.sf,
                &scaling,
                &(-self.sf.c.clone()),
                &self.sf.b.clone(),
                &self.sf.h.clone(),
            );
            let xi_u = self.sf.c.dot(&ux) + self.sf.b.dot(&uy) + self.sf.h.dot(&uz);

            let lambda_sq = jordan_mul(&cones, &scaling.lambda, &scaling.lambda);

            let solve_direction = |d1: &DVector<f64>,
                                       d2: &DVector<f64>,
                                       d3: &DVector<f64>,
                                       d4: f64,
                                       dcomp: &DVector<f64>,
                                       dcomp_tau: f64|
             -> Option<(DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>, f64, f64)> {
                let dsigma = arrow_solve(&cones, &scaling.lambda, dcomp);
                let w_dsigma = scaling.apply_w(&cones, &dsigma);
                let g3 = d3 - &w_dsigma;
                let (vx, vy, vz) = kkt.solve3(&self.sf, &scaling, d1, d2, &g3);
                let xi_v = self.sf.c.dot(&vx) + self.sf.b.dot(&vy) + self.sf.h.dot(&vz);
                let denom = xi_u - self.kappa / self.tau;
                if denom == 0.0 || !denom.is_finite() {
                    return None;
                }
                let dtau = (d4 - dcomp_tau / self.tau - xi_v) / denom;
                let dx = &vx + &ux * dtau;
                let dy = &vy + &uy * dtau;
                let dz = &vz + &uz * dtau;
                let w_dz = scaling.apply_w_sq(&cones, &dz);
                let ds = w_dsigma - w_dz;
                let dkappa = (dcomp_tau - self.kappa * dtau) / self.tau;
                Some((dx, dy, dz, ds, dtau, dkappa))
            };

            // Predictor (affine) direction.
            let neg = |v: &DVector<f64>| -v;
            let aff = solve_direction(
                &neg(&rx),
                &neg(&ry),
                &neg(&rz),
                -rtau,
                &(-&lambda_sq),
                -self.tau * self.kappa,
            );
            let (_adx, _ady, adz, ads, adtau, adkappa) = match aff {
                Some(d) => d,
                None => return self.fail(iter),
            };

            let mut alpha_aff = max_step(&cones, &self.s, &ads)
                .min(max_step(&cones, &self.z, &adz));
            if adtau < 0.0 {
                alpha_aff = alpha_aff.min(-self.tau / adtau);
            }
            if adkappa < 0.0 {
                alpha_aff = alpha_aff.min(-self.kappa / adkappa);
            }
            let alpha_aff = alpha_aff.min(1.0);

            let mu_aff = ((&self.s + &ads * alpha_aff).dot(&(&self.z + &adz * alpha_aff))
                + (self.tau + alpha_aff * adtau) * (self.kappa + alpha_aff * adkappa))
                / nu;
            let sigma = (mu_aff / mu).max(0.0).min(1.0).powi(3);

            // Combined (corrector) direction with Mehrotra second-order term.
            let w_inv_ds = scaling.apply_w_inv(&cones, &ads);
            let w_dz = scaling.apply_w(&cones, &adz);
            let gamma_corr = jordan_mul(&cones, &w_inv_ds, &w_dz);
            let dcomp = &e * (sigma * mu) - &lambda_sq - &gamma_corr;
            let dcomp_tau = sigma * mu - self.tau * self.kappa - adtau * adkappa;
            let one_ms = 1.0 - sigma;
            let comb = solve_direction(
                &(&rx * -one_ms),
                &(&ry * -one_ms),
                &(&rz * -one_ms),
                -one_ms * rtau,
                &dcomp,
                dcomp_tau,
            );
            let (dx, dy, dz, ds, dtau, dkappa) = match comb {
                Some(d) => d,
                None => return self.fail(iter),
            };

            let mut alpha = max_step(&cones, &self.s, &ds).min(max_step(&cones, &self.z, &dz));
            if dtau < 0.0 {
                alpha = alpha.min(-self.tau / dtau);
            }
            if dkappa < 0.0 {
                alpha = alpha.min(-self.kappa / dkappa);
            }
            let mut alpha = (0.99 * alpha).min(1.0);
            if alpha.is_nan() {
                return self.fail(iter);
            }
            // The boundary step comes from a quadratic with heavy
            // cancellation near convergence; back off until the stepped
            // point is strictly interior.
            let mut tries = 0;
            while tries < 60 {
                let s_new = &self.s + &ds * alpha;
                let z_new = &self.z + &dz * alpha;
                if cone_margin(&cones, &s_new) > 0.0
                    && cone_margin(&cones, &z_new) > 0.0
                    && self.tau + alpha * dtau > 0.0
                    && self.kappa + alpha * dkappa > 0.0
                {
                    break;
                }
                alpha *= 0.8;
                tries += 1;
            }
            if tries == 60 {
                return self.fail(iter);
            }
            let alpha = alpha;
            if alpha < 1e-11 {
                tiny_steps += 1;
                if tiny_steps >= 2 {
                    return self.fail(iter);
                }
            } else {
                tiny_steps = 0;
            }

            self.x += &dx * alpha;
            self.y += &dy * alpha;
            self.z += &dz * alpha;
            self.s += &ds * alpha;
            self.tau += alpha * dtau;
            self.kappa += alpha * dkappa;

            if !self.tau.is_finite() || self.tau <= 0.0 || self.kappa < 0.0 {
                return self.fail(iter);
            }
        }

        let (res, pobj, dobj) = self.current_residuals();
        RawOutcome {
            status: SolveStatus::MaxIter,
            iterations: self.opts.max_iters,
            residuals: res,
            pobj_min: pobj,
            dobj_min: dobj,
        }
    }

    // Relative residuals of the τ-scaled iterate against the original data.
    fn current_residuals(&self) -> (Residuals, f64, f64) {
        let (x, y, z, s) = self.unscaled();
        let t = self.tau;
        let ry = self.orig.a.mul_vec(&x) / t - &self.orig.b;
        let rz = self.orig.g.mul_vec(&x) / t + s / t - &self.orig.h;
        let pres = (ry.norm_squared() + rz.norm_squared()).sqrt() / self.norm_bh.max(1.0);
        let rd = self.orig.a.tr_mul_vec(&y) / t + self.orig.g.tr_mul_vec(&z) / t + &self.orig.c;
        let dres = rd.norm() / self.norm_c.max(1.0);
        let pobj = self.orig.c.dot(&x) / t;
        let dobj = -(self.orig.b.dot(&y) + self.orig.h.dot(&z)) / t;
        let gap_abs = self.s.dot(&self.z) / (t * t);
        let gap = gap_abs / pobj.abs().max(1.0);
        (
            Residuals {
                primal: pres,
                dual: dres,
                gap,
            },
            pobj,
            dobj,
        )
    }

    fn check_termination(&self, iter: usize) -> Option<RawOutcome> {
        let tol = self.opts.tolerance;
        let (res, pobj, dobj) = self.current_residuals();
        let gap_abs = self.s.dot(&self.z) / (self.tau * self.tau);
        if res.primal <= tol && res.dual <= tol && (gap_abs <= tol || res.gap <= tol) {
            return Some(RawOutcome {
                status: SolveStatus::Optimal,
                iterations: iter,
                residuals: res,
                pobj_min: pobj,
                dobj_min: dobj,
            });
        }

        // Certificate checks on the raw (un-normalized) iterate.
        let (x, y, z, s) = self.unscaled();
        let bty_htz = self.orig.b.dot(&y) + self.orig.h.dot(&z);
        if bty_htz < 0.0 {
            let inf_res =
                (self.orig.a.tr_mul_vec(&y) + self.orig.g.tr_mul_vec(&z)).norm();
            if inf_res * self.norm_bh.max(1.0) <= -bty_htz * tol {
                return Some(RawOutcome {
                    status: SolveStatus::Infeasible,
                    iterations: iter,
                    residuals: res,
                    pobj_min: f64::NAN,
                    dobj_min: f64::NAN,
                });
            }
        }
        let ctx = self.orig.c.dot(&x);
        if ctx < 0.0 {
            let ray_res = (self.orig.a.mul_vec(&x).norm_squared()
                + (self.orig.g.mul_vec(&x) + &s).norm_squared())
            .sqrt();
            if ray_res * self.norm_c.max(1.0) <= -ctx * tol {
                return Some(RawOutcome {
                    status: SolveStatus::Unbounded,
                    iterations: iter,
                    residuals: res,
                    pobj_min: f64::NAN,
                    dobj_min: f64::NAN,
                });
            }
        }
        None
    }

    fn fail(&self, iter: usize) -> RawOutcome {
        let (res, pobj, dobj) = self.current_residuals();
        RawOutcome {
            status: SolveStatus::NumericalFailure,
            iterations: iter,
            residuals: res,
            pobj_min: pobj,
            dobj_min: dobj,
        }
    }

    // Programs with no cone rows: either trivially solvable or unbounded.
    fn no_cone_case(&mut self) -> RawOutcome {
        let n = self.sf.n();
        let p = self.sf.p();
        if n == 0 {
            return RawOutcome {
                status: SolveStatus::Optimal,
                iterations: 0,
                residuals: Residuals::default(),
                pobj_min: 0.0,
                dobj_min: 0.0,
            };
        }
        if p == 0 {
            let status = if self.orig.c.amax() == 0.0 {
                SolveStatus::Optimal
            } else {
                SolveStatus::Unbounded
            };
            return RawOutcome {
                status,
                iterations: 0,
                residuals: Residuals::default(),
                pobj_min: 0.0,
                dobj_min: 0.0,
            };
        }
        // Equality-constrained linear objective: solve the stationarity
        // system and classify by residuals.
        let ident = Scaling::identity(&self.sf.cones);
        match KktSolver::factor(&self.sf, &ident) {
            Some(kkt) => {
                let (x, y, _) = kkt.solve3(
                    &self.sf,
                    &ident,
                    &(-self.sf.c.clone()),
                    &self.sf.b.clone(),
                    &DVector::zeros(0),
                );
                self.x = x;
                self.y = y;
                self.tau = 1.0;
                let (res, pobj, dobj) = self.current_residuals();
                let tol = (self.opts.tolerance * 1e3).max(1e-6);
                let status = if res.primal <= tol && res.dual <= tol {
                    SolveStatus::Optimal
                } else if res.primal > tol {
                    SolveStatus::Infeasible
                } else {
                    SolveStatus::Unbounded
                };
                RawOutcome {
                    status,
                    iterations: 0,
                    residuals: res,
                    pobj_min: pobj,
                    dobj_min: dobj,
                }
            }
            None => self.fail(0),
        }
    }
}

fn shift_into_cone(cones: &ConeLayout, mut v: DVector<f64>) -> DVector<f64> {
    let margin = cone_margin(cones, &v);
    if margin <= 0.0 {
        let shift = 1.0 - margin;
        for i in 0..cones.n_orthant {
            v[i] += shift;
        }
        let mut row = cones.n_orthant;
        for &dim in &cones.soc_dims {
            v[row] += shift;
            row += dim;
        }
    }
    v
}

fn cone_margin(cones: &ConeLayout, v: &DVector<f64>) -> f64 {
    let mut margin = f64::INFINITY;
    for i in 0..cones.n_orthant {
        margin = margin.min(v[i]);
    }
    let mut row = cones.n_orthant;
    for &dim in &cones.soc_dims {
        let tail: f64 = (row + 1..row + dim).map(|r| v[r] * v[r]).sum::<f64>().sqrt();
        margin = margin.min(v[row] - tail);
        row += dim;
    }
    margin
}

// Map the final iterate back to the IR: primal per variable, dual blocks per
// constraint in original geometry.
fn finish_solution(
    program: &ConeProgram,
    layout: &Layout,
    ipm: &Ipm,
    raw: RawOutcome,
) -> ConeSolution {
    let (x, y, z, _s) = ipm.unscaled();
    let t = if ipm.tau > 0.0 { ipm.tau } else { 1.0 };
    let normalizer = match raw.status {
        SolveStatus::Optimal | SolveStatus::MaxIter | SolveStatus::NumericalFailure => t,
        // Certificates are rays; report them unnormalized by τ.
        SolveStatus::Infeasible | SolveStatus::Unbounded => 1.0,
    };
    let primal: Vec<f64> = (0..program.n_vars()).map(|j| x[j] / normalizer).collect();

    let mut duals = Vec::with_capacity(layout.constraint_rows.len());
    for row_ref in &layout.constraint_rows {
        let block = match row_ref {
            RowRef::Orthant(r) => vec![z[*r] / normalizer],
            RowRef::Equality(r) => vec![y[*r] / normalizer],
            RowRef::Soc { start, dim } => {
                (*start..start + dim).map(|r| z[r] / normalizer).collect()
            }
            RowRef::Rotated { start, dim } => {
                // Adjoint of (u,v,w) → (u+v, u−v, √2w).
                let zb: Vec<f64> = (*start..start + dim).map(|r| z[r] / normalizer).collect();
                let mut out = Vec::with_capacity(*dim);
                out.push(zb[0] + zb[1]);
                out.push(zb[0] - zb[1]);
                for v in &zb[2..] {
                    out.push(std::f64::consts::SQRT_2 * v);
                }
                out
            }
        };
        duals.push(block);
    }

    let mut bound_duals = vec![(0.0, 0.0); program.n_vars()];
    for (j, bd) in bound_duals.iter_mut().enumerate() {
        if let Some(r) = layout.lower_rows[j] {
            bd.0 = z[r] / normalizer;
        }
        if let Some(r) = layout.upper_rows[j] {
            bd.1 = z[r] / normalizer;
        }
    }

    let objective = match raw.status {
        SolveStatus::Optimal | SolveStatus::MaxIter => -raw.pobj_min,
        _ => f64::NAN,
    };
    let dual_objective = match raw.status {
        SolveStatus::Optimal | SolveStatus::MaxIter => -raw.dobj_min,
        _ => f64::NAN,
    };

    ConeSolution {
        status: raw.status,
        primal,
        duals,
        bound_duals,
        objective,
        dual_objective,
        iterations: raw.iterations,
        residuals: raw.residuals,
    }
}

impl ConeSolution {
    /// Dual block of one constraint (length 1 for linear constraints).
    pub fn dual(&self, id: ConstraintId) -> &[f64] {
        &self.duals[id.0]
    }
}
