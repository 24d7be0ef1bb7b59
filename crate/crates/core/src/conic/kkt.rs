use super::program::{ConeProgram, Constraint};
use super::solver::ConeSolution;

/// Max-norm KKT residuals of a primal-dual pair for the internal
/// minimization convention (min −objective).
#[derive(Debug, Clone, Copy, Default)]
pub struct KktReport {
    /// ‖c + Aᵀy + Gᵀz‖∞ over the variables.
    pub stationarity: f64,
    /// Worst primal constraint violation (equalities by absolute residual).
    pub primal: f64,
    /// Worst dual-cone membership violation.
    pub dual_cone: f64,
    /// |Σ sᵀz| including bound slacks.
    pub complementarity: f64,
}

impl KktReport {
    pub fn max_residual(&self) -> f64 {
        self.stationarity
            .max(self.primal)
            .max(self.dual_cone)
            .max(self.complementarity)
    }
}

/// Evaluate KKT residuals of `solution` against `program` without trusting
/// any solver state: every quantity is recomputed from the primal values and
/// the per-constraint dual blocks.
pub fn check_kkt(program: &ConeProgram, solution: &ConeSolution) -> KktReport {
    let x = &solution.primal;
    let n = program.n_vars();
    let mut grad: Vec<f64> = program.objective.iter().map(|c| -c).collect(); // min form
    let mut primal = 0.0f64;
    let mut dual_cone = 0.0f64;
    let mut comp = 0.0f64;

    for (idx, constraint) in program.constraints.iter().enumerate() {
        let dual = &solution.duals[idx];
        match constraint {
            Constraint::LinearLe { expr, rhs } => {
                let z = dual[0];
                let s = rhs - expr.eval(x);
                primal = primal.max(-s);
                dual_cone = dual_cone.max(-z);
                comp += s * z;
                for (v, a) in &expr.terms {
                    grad[v.0] += a * z;
                }
            }
            Constraint::LinearEq { expr, rhs } => {
                let y = dual[0];
                primal = primal.max((expr.eval(x) - rhs).abs());
                for (v, a) in &expr.terms {
                    grad[v.0] += a * y;
                }
            }
            Constraint::Soc { norm_args, bound } => {
                let z0 = dual[0];
                let s0 = bound.eval(x);
                let mut args_sq = 0.0;
                let mut comp_block = s0 * z0;
                for (arg, zi) in norm_args.iter().zip(&dual[1..]) {
                    let si = arg.eval(x);
                    args_sq += si * si;
                    comp_block += si * zi;
                    for (v, a) in &arg.terms {
                        grad[v.0] -= a * zi;
                    }
                }
                for (v, a) in &bound.terms {
                    grad[v.0] -= a * z0;
                }
                primal = primal.max(args_sq.sqrt() - s0);
                let z_tail: f64 = dual[1..].iter().map(|v| v * v).sum::<f64>().sqrt();
                dual_cone = dual_cone.max(z_tail - z0);
                comp += comp_block;
            }
            Constraint::RotatedCone { u, v, w } => {
                let (zu, zv) = (dual[0], dual[1]);
                let (su, sv) = (u.eval(x), v.eval(x));
                let mut w_sq = 0.0;
                let mut zw_sq = 0.0;
                let mut comp_block = su * zu + sv * zv;
                for (arg, zi) in w.iter().zip(&dual[2..]) {
                    let si = arg.eval(x);
                    w_sq += si * si;
                    zw_sq += zi * zi;
                    comp_block += si * zi;
                    for (vr, a) in &arg.terms {
                        grad[vr.0] -= a * zi;
                    }
                }
                for (vr, a) in &u.terms {
                    grad[vr.0] -= a * zu;
                }
                for (vr, a) in &v.terms {
                    grad[vr.0] -= a * zv;
                }
                primal = primal
                    .max(w_sq - 2.0 * su * sv)
                    .max(-su)
                    .max(-sv);
                dual_cone = dual_cone
                    .max(zw_sq - 2.0 * zu * zv)
                    .max(-zu)
                    .max(-zv);
                comp += comp_block;
            }
        }
    }

    // Variable bounds: lower x ≥ l contributes −μ_l, upper x ≤ u contributes +μ_u.
    for j in 0..n {
        let (mu_l, mu_u) = solution
            .bound_duals
            .get(j)
            .copied()
            .unwrap_or((0.0, 0.0));
        if let Some(l) = program.vars[j].lower {
            let s = x[j] - l;
            primal = primal.max(-s);
            dual_cone = dual_cone.max(-mu_l);
            comp += s * mu_l;
            grad[j] -= mu_l;
        }
        if let Some(u) = program.vars[j].upper {
            let s = u - x[j];
            primal = primal.max(-s);
            dual_cone = dual_cone.max(-mu_u);
            comp += s * mu_u;
            grad[j] += mu_u;
        }
    }

    let stationarity = grad.iter().fold(0.0f64, |acc, g| acc.max(g.abs()));
    KktReport {
        stationarity,
        primal: primal.max(0.0),
        dual_cone: dual_cone.max(0.0),
        complementarity: comp.abs(),
    }
}
