//! Solver-neutral second-order-cone programs and the embedded primal-dual
//! interior-point solver.
//!
//! [`ConeProgram`] holds a linear maximize objective over linear, second-order
//! and rotated-cone constraints plus variable bounds. [`solve`] lowers it to
//! the standard form min cᵀx s.t. Ax=b, Gx+s=h, s∈K and runs a path-following
//! method with Nesterov-Todd scaling and a Mehrotra predictor-corrector on
//! the homogeneous self-dual embedding, so infeasibility and unboundedness
//! come out as statuses rather than crashes.

mod kkt;
mod program;
mod solver;
mod standard;
#[doc(hidden)]
pub mod testgen;

pub use kkt::{check_kkt, KktReport};
pub use program::{
    geometric_mean_hypograph, ConeProgram, Constraint, ConstraintId, LinExpr, VarId,
};
pub use solver::{solve, ConeSolution, Residuals, SolveStatus, SolverOptions};

#[cfg(test)]
mod tests {
    use super::*;

    fn solve_default(p: &ConeProgram) -> ConeSolution {
        solve(p, &SolverOptions::default()).expect("well-formed program")
    }

    #[test]
    fn euclidean_norm_instance() {
        // maximize −x s.t. x ≥ ‖(3,4)‖  →  x = 5.
        let mut p = ConeProgram::new();
        let x = p.add_var("x", None, None);
        p.set_objective(x, -1.0);
        p.add_soc(
            vec![LinExpr::constant(3.0), LinExpr::constant(4.0)],
            LinExpr::var(x),
        );
        let sol = solve_default(&p);
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.primal[0] - 5.0).abs() < 1e-7, "x = {}", sol.primal[0]);
        assert!((sol.objective + 5.0).abs() < 1e-7);
        let report = check_kkt(&p, &sol);
        assert!(report.max_residual() < 1e-6, "{report:?}");
    }

    #[test]
    fn pure_lp() {
        // max x s.t. x ≤ 7.
        let mut p = ConeProgram::new();
        let x = p.add_var("x", None, None);
        p.set_objective(x, 1.0);
        p.add_linear_le(LinExpr::var(x), 7.0);
        let sol = solve_default(&p);
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.primal[0] - 7.0).abs() < 1e-7);
    }

    #[test]
    fn lp_with_equality_and_bounds() {
        // max x + y s.t. x + y + w = 2, 0 ≤ all ≤ 1.5, w ≥ 0.3.
        let mut p = ConeProgram::new();
        let x = p.add_var("x", Some(0.0), Some(1.5));
        let y = p.add_var("y", Some(0.0), Some(1.5));
        let w = p.add_var("w", Some(0.3), None);
        p.set_objective(x, 1.0);
        p.set_objective(y, 1.0);
        p.add_linear_eq(
            LinExpr::var(x).add_term(y, 1.0).add_term(w, 1.0),
            2.0,
        );
        let sol = solve_default(&p);
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.objective - 1.7).abs() < 1e-7, "obj {}", sol.objective);
        assert!((sol.primal[2] - 0.3).abs() < 1e-7);
    }

    #[test]
    fn infeasible_detected() {
        let mut p = ConeProgram::new();
        let x = p.add_var("x", Some(0.0), None);
        p.set_objective(x, 1.0);
        p.add_linear_le(LinExpr::var(x), -1.0);
        let sol = solve_default(&p);
        assert_eq!(sol.status, SolveStatus::Infeasible);
    }

    #[test]
    fn unbounded_detected() {
        let mut p = ConeProgram::new();
        let x = p.add_var("x", Some(0.0), None);
        p.set_objective(x, 1.0);
        let y = p.add_var("y", Some(0.0), None);
        p.add_linear_le(LinExpr::var(y).add_term(x, -1.0), 5.0); // y ≤ 5 + x
        let sol = solve_default(&p);
        assert_eq!(sol.status, SolveStatus::Unbounded);
    }

    #[test]
    fn geomean_single_term_is_linear() {
        let mut p = ConeProgram::new();
        let t = p.add_var("t", Some(0.0), None);
        let v = p.add_var("v", Some(0.0), Some(3.0));
        p.set_objective(t, 1.0);
        geometric_mean_hypograph(&mut p, t, &[LinExpr::var(v)]).unwrap();
        let sol = solve_default(&p);
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.objective - 3.0).abs() < 1e-7);
    }

    #[test]
    fn geomean_two_terms() {
        // max t ≤ sqrt(4·1) = 2.
        let mut p = ConeProgram::new();
        let t = p.add_var("t", Some(0.0), None);
        p.set_objective(t, 1.0);
        geometric_mean_hypograph(
            &mut p,
            t,
            &[LinExpr::constant(4.0), LinExpr::constant(1.0)],
        )
        .unwrap();
        let sol = solve_default(&p);
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.objective - 2.0).abs() < 1e-7, "t = {}", sol.objective);
    }

    #[test]
    fn geomean_four_terms() {
        // max t ≤ (1·2·3·4)^(1/4) = 24^(1/4).
        let mut p = ConeProgram::new();
        let t = p.add_var("t", Some(0.0), None);
        p.set_objective(t, 1.0);
        let exprs: Vec<LinExpr> = [1.0, 2.0, 3.0, 4.0]
            .iter()
            .map(|c| LinExpr::constant(*c))
            .collect();
        geometric_mean_hypograph(&mut p, t, &exprs).unwrap();
        let sol = solve_default(&p);
        assert_eq!(sol.status, SolveStatus::Optimal);
        let expect = 24f64.powf(0.25);
        assert!((sol.objective - expect).abs() < 1e-7);
    }

    #[test]
    fn geomean_three_terms_padded() {
        // Padding with t: t ≤ (2·8·4)^(1/3) = 4.
        let mut p = ConeProgram::new();
        let t = p.add_var("t", Some(0.0), None);
        p.set_objective(t, 1.0);
        let exprs: Vec<LinExpr> = [2.0, 8.0, 4.0]
            .iter()
            .map(|c| LinExpr::constant(*c))
            .collect();
        geometric_mean_hypograph(&mut p, t, &exprs).unwrap();
        let sol = solve_default(&p);
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.objective - 4.0).abs() < 1e-7, "t = {}", sol.objective);
    }

    #[test]
    fn geomean_rejects_empty() {
        let mut p = ConeProgram::new();
        let t = p.add_var("t", Some(0.0), None);
        assert!(geometric_mean_hypograph(&mut p, t, &[]).is_err());
    }

    #[test]
    fn rotated_cone_square() {
        // max q s.t. q² ≤ 2·x·y, x = 2, y = 1  →  q = 2.
        let mut p = ConeProgram::new();
        let q = p.add_var("q", Some(0.0), None);
        let x = p.add_var("x", Some(0.0), Some(2.0));
        let y = p.add_var("y", Some(0.0), Some(1.0));
        p.set_objective(q, 1.0);
        p.add_rotated_cone(LinExpr::var(x), LinExpr::var(y), vec![LinExpr::var(q)]);
        let sol = solve_default(&p);
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.objective - 2.0).abs() < 1e-7);
    }

    #[test]
    fn square_epigraph_cone() {
        // min s s.t. q² ≤ s, q = 1.5 → s = 2.25.
        let mut p = ConeProgram::new();
        let q = p.add_var("q", Some(1.5), Some(1.5 + 1e-9));
        let s = p.add_var("s", Some(0.0), None);
        p.set_objective(s, -1.0);
        p.add_square_le(LinExpr::var(q), LinExpr::var(s));
        let sol = solve_default(&p);
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.primal[1] - 2.25).abs() < 1e-6, "s = {}", sol.primal[1]);
    }

    #[test]
    fn determinism_bit_for_bit() {
        let mut p = ConeProgram::new();
        let x = p.add_var("x", Some(0.0), Some(10.0));
        let y = p.add_var("y", Some(0.0), Some(10.0));
        p.set_objective(x, 1.0);
        p.set_objective(y, 2.0);
        p.add_soc(
            vec![LinExpr::var(x), LinExpr::var(y)],
            LinExpr::constant(3.0),
        );
        let a = solve_default(&p);
        let b = solve_default(&p);
        assert_eq!(a.primal, b.primal);
        assert_eq!(a.objective.to_bits(), b.objective.to_bits());
        assert_eq!(a.iterations, b.iterations);
    }

    #[test]
    fn objective_scaling_leaves_argmax() {
        // Unique vertex optimum (1.5, 0.5).
        let build = |scale: f64| {
            let mut p = ConeProgram::new();
            let x = p.add_var("x", Some(0.0), Some(1.5));
            let y = p.add_var("y", Some(0.0), Some(1.5));
            p.set_objective(x, scale * 1.0);
            p.set_objective(y, scale * 0.7);
            p.add_linear_le(LinExpr::var(x).add_term(y, 1.0), 2.0);
            p
        };
        let a = solve_default(&build(1.0));
        let b = solve_default(&build(37.5));
        for (xa, xb) in a.primal.iter().zip(&b.primal) {
            assert!((xa - xb).abs() < 1e-7, "{xa} vs {xb}");
        }
    }

    use super::testgen::random_certificate_instance;

    #[test]
    fn weak_duality_on_optimal_solves() {
        for seed in 0..10u64 {
            let (p, _) = random_certificate_instance(seed);
            let sol = solve_default(&p);
            assert_eq!(sol.status, SolveStatus::Optimal, "seed {seed}");
            assert!(
                sol.objective <= sol.dual_objective + 1e-7,
                "seed {seed}: primal {} dual {}",
                sol.objective,
                sol.dual_objective
            );
        }
    }

    #[test]
    fn certificate_instances_recover_known_optimum() {
        for seed in 0..25u64 {
            let (p, opt) = random_certificate_instance(seed);
            let sol = solve_default(&p);
            assert_eq!(sol.status, SolveStatus::Optimal, "seed {seed}");
            assert!(
                (sol.objective - opt).abs() <= 1e-6 * (1.0 + opt.abs()),
                "seed {seed}: got {}, want {opt}",
                sol.objective
            );
            let report = check_kkt(&p, &sol);
            assert!(report.max_residual() <= 1e-7, "seed {seed}: {report:?}");
        }
    }

    #[test]
    fn hand_built_kkt_pair() {
        // Optimal pair for the ‖(3,4)‖ instance.
        let mut p = ConeProgram::new();
        let x = p.add_var("x", None, None);
        p.set_objective(x, -1.0);
        p.add_soc(
            vec![LinExpr::constant(3.0), LinExpr::constant(4.0)],
            LinExpr::var(x),
        );
        let sol = ConeSolution {
            status: SolveStatus::Optimal,
            primal: vec![5.0],
            duals: vec![vec![1.0, -0.6, -0.8]],
            bound_duals: vec![(0.0, 0.0)],
            objective: -5.0,
            dual_objective: -5.0,
            iterations: 0,
            residuals: Residuals::default(),
        };
        let report = check_kkt(&p, &sol);
        assert!(report.max_residual() <= 1e-10, "{report:?}");

        // Perturbing the primal by 0.1 must show up as a primal residual.
        let mut perturbed = sol.clone();
        perturbed.primal[0] = 4.9;
        let report = check_kkt(&p, &perturbed);
        assert!(report.primal >= 0.09, "{report:?}");
    }

    #[test]
    fn empty_program_vacuously_passes() {
        let p = ConeProgram::new();
        let sol = solve_default(&p);
        assert_eq!(sol.status, SolveStatus::Optimal);
        let report = check_kkt(&p, &sol);
        assert_eq!(report.max_residual(), 0.0);
    }

    #[test]
    fn dump_lists_every_constraint() {
        let mut p = ConeProgram::new();
        let x = p.add_var("x", Some(0.0), Some(1.0));
        let y = p.add_var("y", Some(0.0), None);
        p.set_objective(x, 1.0);
        p.add_linear_le(LinExpr::var(x).add_term(y, 2.0), 3.0);
        p.add_linear_eq(LinExpr::var(y), 1.0);
        p.add_soc(vec![LinExpr::var(x)], LinExpr::var(y));
        p.add_rotated_cone(LinExpr::var(x), LinExpr::var(y), vec![LinExpr::var(x)]);
        let text = p.dump_text();
        for needle in ["lin[0]", "eq[1]", "soc[2]", "rsoc[3]", "maximize", "var x0"] {
            assert!(text.contains(needle), "missing {needle} in:\n{text}");
        }
    }

}

