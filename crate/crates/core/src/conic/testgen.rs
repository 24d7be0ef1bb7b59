//! Random SOCP instances with optima known by construction, for solver
//! conformance testing. Not part of the public API surface.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::program::{ConeProgram, LinExpr, VarId};

/// Build a random feasible SOCP whose optimal value is known from a
/// primal-dual certificate constructed alongside the data.
///
/// A random point x* is sampled, then every constraint is generated to pass
/// through it (active, with a complementary boundary dual) or to hold with
/// slack (inactive, zero dual). The objective is the negated sum of dual
/// gradient contributions, which makes (x*, duals) a KKT pair by
/// construction. Returns the program and its maximize-sense optimum.
pub fn random_certificate_instance(seed: u64) -> (ConeProgram, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9).wrapping_add(7));
    let n = rng.random_range(3..7);
    let x_star: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();

    // Inactive boxes keep the optimal face bounded (x* is well inside, so
    // the bound duals are zero and the certified optimum is unchanged).
    let mut p = ConeProgram::new();
    let vars: Vec<VarId> = (0..n)
        .map(|j| p.add_var(format!("x{j}"), Some(-10.0), Some(10.0)))
        .collect();

    // Accumulate c = −Σ Gᵀz over active constraints (internal min form,
    // where linear rows enter G with +coeffs and cone rows with −coeffs).
    let mut c_min = vec![0.0f64; n];

    let n_lin = rng.random_range(2..5);
    for _ in 0..n_lin {
        let coeffs: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut expr = LinExpr::default();
        for (j, a) in coeffs.iter().enumerate() {
            expr = expr.add_term(vars[j], *a);
        }
        let val: f64 = coeffs.iter().zip(&x_star).map(|(a, b)| a * b).sum();
        if rng.random_bool(0.5) {
            let z = rng.random_range(0.2..1.5);
            p.add_linear_le(expr, val);
            for (cj, a) in c_min.iter_mut().zip(&coeffs) {
                *cj -= a * z;
            }
        } else {
            p.add_linear_le(expr, val + rng.random_range(0.5..2.0));
        }
    }

    let n_soc = rng.random_range(1..3);
    for _ in 0..n_soc {
        let dim = rng.random_range(2..4);
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(dim);
        let mut args = Vec::with_capacity(dim);
        let mut arg_vals = Vec::with_capacity(dim);
        for _ in 0..dim {
            let coeffs: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let shift = rng.random_range(-0.5..0.5);
            let mut expr = LinExpr::constant(shift);
            for (j, a) in coeffs.iter().enumerate() {
                expr = expr.add_term(vars[j], *a);
            }
            arg_vals.push(coeffs.iter().zip(&x_star).map(|(a, b)| a * b).sum::<f64>() + shift);
            rows.push(coeffs);
            args.push(expr);
        }
        let norm: f64 = arg_vals.iter().map(|v| v * v).sum::<f64>().sqrt();
        let bound_coeffs: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let bound_val: f64 = bound_coeffs.iter().zip(&x_star).map(|(a, b)| a * b).sum();
        let active = rng.random_bool(0.5) && norm > 1e-3;
        let margin = if active {
            0.0
        } else {
            rng.random_range(0.5..2.0)
        };
        let mut bound = LinExpr::constant(norm + margin - bound_val);
        for (j, a) in bound_coeffs.iter().enumerate() {
            bound = bound.add_term(vars[j], *a);
        }
        p.add_soc(args, bound);
        if active {
            // Complementary boundary dual z = γ·(1, −args/‖args‖); the cone
            // block enters G with negated coefficient rows, so its
            // stationarity contribution is +Σ rowsᵀ·z.
            let gamma = rng.random_range(0.2..1.5);
            for (j, cj) in c_min.iter_mut().enumerate() {
                let mut g_t_z = -bound_coeffs[j] * gamma;
                for (row, av) in rows.iter().zip(&arg_vals) {
                    g_t_z -= row[j] * (-gamma * av / norm);
                }
                *cj -= g_t_z;
            }
        }
    }

    for (j, cj) in c_min.iter().enumerate() {
        p.set_objective(vars[j], -cj);
    }
    let opt: f64 = c_min.iter().zip(&x_star).map(|(c, x)| -c * x).sum();
    (p, opt)
}
