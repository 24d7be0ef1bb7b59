use ndarray::Array2;

use crate::conic::{
    geometric_mean_hypograph, ConeProgram, ConeSolution, ConstraintId, LinExpr, VarId,
};
use crate::error::{Error, Result};
use crate::model::{Allocation, ChannelSet, Scheme, SystemConfig};

use super::{linearize_bilinear_lower, linearize_bilinear_upper, Iterate, ReweightState, SlackPoint};

/// Variable handles of an assembled subproblem. Entries are `None` where the
/// assembly substituted a constant (fixed assignments, or rows pinned by the
/// degree geometry).
#[derive(Debug, Clone)]
pub struct SubproblemVars {
    pub f_s: Array2<Option<VarId>>,
    pub f_w: Array2<Option<VarId>>,
    pub p_s: Array2<Option<VarId>>,
    pub p_w: Array2<Option<VarId>>,
    pub t_s: Array2<Option<VarId>>,
    pub t_w: Array2<Option<VarId>>,
    pub z: Vec<VarId>,
    pub tau: VarId,
    pub gamma_w: Array2<Option<VarId>>,
    pub beta_w: Array2<Option<VarId>>,
    pub gamma_s: Array2<Option<VarId>>,
    pub beta_s: Array2<Option<VarId>>,
    pub gamma_w_grp: Vec<Option<VarId>>,
    pub beta_w_grp: Vec<Option<VarId>>,
}

/// Cone-program constraint handles grouped by transformation family, for
/// verification of the restriction and exactness properties.
#[derive(Debug, Clone, Default)]
pub struct FamilyIds {
    pub z_link: Vec<ConstraintId>,
    pub bilinear_s: Vec<(usize, usize, ConstraintId)>,
    pub bilinear_w: Vec<(usize, usize, ConstraintId)>,
    pub sinr_w: Vec<(usize, usize, ConstraintId)>,
    pub sinr_s: Vec<(usize, usize, ConstraintId)>,
    pub sinr_w_grp: Vec<(usize, ConstraintId)>,
}

/// One assembled inner convex subproblem.
///
/// Powers are normalized to the budget (p̂ = p/P̄, t̂ = t/P̄), interference
/// slacks to the noise floor (β̂ = β/σ²), and the objective hypograph to the
/// geometric mean of the expansion z's, so the conic data is well scaled.
#[derive(Debug, Clone)]
pub struct Subproblem {
    pub program: ConeProgram,
    pub vars: SubproblemVars,
    pub families: FamilyIds,
    /// Geometric mean of the expansion-point z values (ẑ = z / z_scale).
    pub z_scale: f64,
    /// Number of z factors in the objective product (K, or 2K for SCMA).
    pub m_z: usize,
    /// Expansion-point values per variable; NaN for geometric-mean tree
    /// internals whose values are not tracked.
    pub expansion: Vec<f64>,
    config: SystemConfig,
    fixed_f: Option<(Array2<f64>, Array2<f64>)>,
}

enum Mode<'a> {
    Free(&'a ReweightState),
    FixedF,
}

/// Assemble the relaxed subproblem at `iterate` with reweighted-ℓ1 penalty.
pub fn build_subproblem(
    config: &SystemConfig,
    channels: &ChannelSet,
    iterate: &Iterate,
    reweight: &ReweightState,
) -> Result<Subproblem> {
    assemble(config, channels, iterate, Mode::Free(reweight))
}

/// Assemble the power-only subproblem with the assignment frozen to the
/// binary matrices of `iterate.alloc` (penalty dropped, f constants).
pub fn build_power_subproblem(
    config: &SystemConfig,
    channels: &ChannelSet,
    iterate: &Iterate,
) -> Result<Subproblem> {
    if !iterate.alloc.binary {
        return Err(Error::Domain(
            "power subproblem requires a binary assignment".into(),
        ));
    }
    assemble(config, channels, iterate, Mode::FixedF)
}

fn geomean(values: &[f64]) -> f64 {
    (values.iter().map(|v| v.ln()).sum::<f64>() / values.len() as f64).exp()
}

fn assemble(
    config: &SystemConfig,
    channels: &ChannelSet,
    iterate: &Iterate,
    mode: Mode<'_>,
) -> Result<Subproblem> {
    config.validate()?;
    iterate.alloc.dims_match(config)?;
    let (j_s, j_w, kc) = (config.j_s, config.j_w, config.k);
    let p_bar = config.p_bar;
    if !(p_bar > 0.0) {
        return Err(Error::InvalidConfig(
            "subproblem assembly needs p_bar > 0".into(),
        ));
    }
    let s2 = config.sigma2;
    let m_z = match config.scheme {
        Scheme::Scma => 2 * kc,
        _ => kc,
    };
    if iterate.slacks.z.len() != m_z {
        return Err(Error::DimensionMismatch(format!(
            "slack z has {} entries, scheme wants {m_z}",
            iterate.slacks.z.len()
        )));
    }

    // Per-entry maximum-SNR coefficients ḡ = eff·P̄/σ² (hat units).
    let gbar_s = channels.eff_gain_s.mapv(|g| g * p_bar / s2);
    let gbar_w = channels.eff_gain_w.mapv(|g| g * p_bar / s2);

    let z_scale = geomean(&iterate.slacks.z);
    let sp = &iterate.slacks;

    let mut prog = ConeProgram::new();
    let mut x0: Vec<f64> = Vec::new();
    // Keeps x0 aligned with variable indices even after calls that create
    // untracked internals (geometric-mean tree nodes get NaN).
    let mut add_var = |prog: &mut ConeProgram, name: String, lb: Option<f64>, ub: Option<f64>, v0: f64| {
        let id = prog.add_var(name, lb, ub);
        x0.resize(id.index(), f64::NAN);
        x0.push(v0);
        id
    };

    // Rows pinned at the full carrier set force f ≡ 1 in the relaxation.
    let pinned_s = config.per_user_cap_s == kc;
    let pinned_w = config.per_user_cap_w == kc;

    // Entry activity and fixed-f values.
    let fixed = matches!(mode, Mode::FixedF);
    let f_const = |group_pinned: bool, f_fix: f64| -> Option<f64> {
        if fixed {
            Some(if f_fix > 0.5 { 1.0 } else { 0.0 })
        } else if group_pinned {
            Some(1.0)
        } else {
            None
        }
    };

    // f variables (or constants).
    let mut f_s: Array2<Option<VarId>> = Array2::from_elem((j_s, kc), None);
    let mut f_w: Array2<Option<VarId>> = Array2::from_elem((j_w, kc), None);
    let mut fconst_s: Array2<f64> = Array2::zeros((j_s, kc));
    let mut fconst_w: Array2<f64> = Array2::zeros((j_w, kc));
    for (grid, consts, pinned, f0, j_count, tag) in [
        (&mut f_s, &mut fconst_s, pinned_s, &iterate.alloc.f_s, j_s, "s"),
        (&mut f_w, &mut fconst_w, pinned_w, &iterate.alloc.f_w, j_w, "w"),
    ] {
        for u in 0..j_count {
            for k in 0..kc {
                match f_const(pinned, f0[[u, k]]) {
                    Some(c) => consts[[u, k]] = c,
                    None => {
                        let id = add_var(
                            &mut prog,
                            format!("f_{tag}[{u},{k}]"),
                            Some(0.0),
                            Some(1.0),
                            f0[[u, k]],
                        );
                        grid[[u, k]] = Some(id);
                    }
                }
            }
        }
    }
    // An entry participates unless its assignment is fixed to zero.
    let active_s =
        |u: usize, k: usize| -> bool { f_s[[u, k]].is_some() || fconst_s[[u, k]] > 0.5 };
    let active_w =
        |u: usize, k: usize| -> bool { f_w[[u, k]].is_some() || fconst_w[[u, k]] > 0.5 };

    // p̂ and t̂ variables on active entries.
    let mut p_s: Array2<Option<VarId>> = Array2::from_elem((j_s, kc), None);
    let mut p_w: Array2<Option<VarId>> = Array2::from_elem((j_w, kc), None);
    let mut t_s: Array2<Option<VarId>> = Array2::from_elem((j_s, kc), None);
    let mut t_w: Array2<Option<VarId>> = Array2::from_elem((j_w, kc), None);
    for k in 0..kc {
        for u in 0..j_s {
            if active_s(u, k) {
                p_s[[u, k]] = Some(add_var(
                    &mut prog,
                    format!("p_s[{u},{k}]"),
                    Some(0.0),
                    Some(1.0),
                    (iterate.alloc.p_s[[u, k]] / p_bar).clamp(0.0, 1.0),
                ));
            }
        }
    }
    for k in 0..kc {
        for u in 0..j_w {
            if active_w(u, k) {
                p_w[[u, k]] = Some(add_var(
                    &mut prog,
                    format!("p_w[{u},{k}]"),
                    Some(0.0),
                    Some(1.0),
                    (iterate.alloc.p_w[[u, k]] / p_bar).clamp(0.0, 1.0),
                ));
            }
        }
    }
    for k in 0..kc {
        for u in 0..j_s {
            if active_s(u, k) {
                t_s[[u, k]] = Some(add_var(
                    &mut prog,
                    format!("t_s[{u},{k}]"),
                    Some(0.0),
                    Some(1.0),
                    (sp.t_s[[u, k]] / p_bar).clamp(0.0, 1.0),
                ));
            }
        }
    }
    for k in 0..kc {
        for u in 0..j_w {
            if active_w(u, k) {
                t_w[[u, k]] = Some(add_var(
                    &mut prog,
                    format!("t_w[{u},{k}]"),
                    Some(0.0),
                    Some(1.0),
                    (sp.t_w[[u, k]] / p_bar).clamp(0.0, 1.0),
                ));
            }
        }
    }

    // ẑ hypograph inputs.
    let z: Vec<VarId> = (0..m_z)
        .map(|k| {
            add_var(
                &mut prog,
                format!("z[{k}]"),
                Some(0.0),
                None,
                sp.z[k] / z_scale,
            )
        })
        .collect();

    // Which QoS blocks exist.
    let wu_qos: Vec<bool> = (0..j_w).map(|j| config.r_bar_w[j] > 0.0).collect();
    let su_qos = config.scheme != Scheme::Scma && config.r_bar_s > 0.0 && j_s > 0;

    // Per-WU SIC slacks for QoS.
    let mut gamma_w: Array2<Option<VarId>> = Array2::from_elem((j_w, kc), None);
    let mut beta_w: Array2<Option<VarId>> = Array2::from_elem((j_w, kc), None);
    for j in 0..j_w {
        if !wu_qos[j] {
            continue;
        }
        for k in 0..kc {
            if !active_w(j, k) {
                continue; // γ pinned at 0, leaf contributes 1
            }
            gamma_w[[j, k]] = Some(add_var(
                &mut prog,
                format!("gam_w[{j},{k}]"),
                Some(0.0),
                None,
                sp.gamma_w[[j, k]],
            ));
            beta_w[[j, k]] = Some(add_var(
                &mut prog,
                format!("bet_w[{j},{k}]"),
                Some(0.0),
                None,
                sp.beta_w[[j, k]] / s2,
            ));
        }
    }

    // SU-side slacks: QoS for HD/PD, objective for SCMA.
    let su_rows = sp.gamma_s.nrows();
    let mut gamma_s: Array2<Option<VarId>> = Array2::from_elem((su_rows, kc), None);
    let mut beta_s: Array2<Option<VarId>> = Array2::from_elem((su_rows, kc), None);
    let su_blocks = su_qos || config.scheme == Scheme::Scma;
    if su_blocks {
        for r in 0..su_rows {
            for k in 0..kc {
                if config.scheme == Scheme::Pd && !active_s(r, k) {
                    continue;
                }
                gamma_s[[r, k]] = Some(add_var(
                    &mut prog,
                    format!("gam_s[{r},{k}]"),
                    Some(0.0),
                    None,
                    sp.gamma_s[[r, k]],
                ));
                beta_s[[r, k]] = Some(add_var(
                    &mut prog,
                    format!("bet_s[{r},{k}]"),
                    Some(0.0),
                    None,
                    sp.beta_s[[r, k]] / s2,
                ));
            }
        }
    }

    // SCMA WU-side objective slacks.
    let mut gamma_w_grp: Vec<Option<VarId>> = vec![None; if config.scheme == Scheme::Scma { kc } else { 0 }];
    let mut beta_w_grp: Vec<Option<VarId>> = vec![None; gamma_w_grp.len()];
    if config.scheme == Scheme::Scma {
        for k in 0..kc {
            gamma_w_grp[k] = Some(add_var(
                &mut prog,
                format!("gam_wg[{k}]"),
                Some(0.0),
                None,
                sp.gamma_w_grp[k],
            ));
            beta_w_grp[k] = Some(add_var(
                &mut prog,
                format!("bet_wg[{k}]"),
                Some(0.0),
                None,
                sp.beta_w_grp[k] / s2,
            ));
        }
    }

    // Objective hypograph: τ̂ ≤ geomean(ẑ); at the expansion point the
    // geometric mean of ẑ is exactly 1.
    let tau = add_var(&mut prog, "tau".into(), Some(0.0), None, 1.0);

    // ---- constraints ----
    let mut families = FamilyIds::default();

    // Helper sums in hat units over active entries.
    let su_mass_expr = |k: usize| -> LinExpr {
        let mut e = LinExpr::default();
        for i in 0..j_s {
            if let Some(t) = t_s[[i, k]] {
                e = e.add_term(t, gbar_s[[i, k]]);
            }
        }
        e
    };
    let wu_mass_expr = |k: usize| -> LinExpr {
        let mut e = LinExpr::default();
        for j in 0..j_w {
            if let Some(t) = t_w[[j, k]] {
                e = e.add_term(t, gbar_w[[j, k]]);
            }
        }
        e
    };

    // z links.
    match config.scheme {
        Scheme::Hd | Scheme::Pd => {
            // Z₀·ẑ_k − Σ ḡ t̂ ≤ 1.
            for k in 0..kc {
                let expr = LinExpr::term(z[k], z_scale)
                    .minus(&su_mass_expr(k))
                    .minus(&wu_mass_expr(k));
                families.z_link.push(prog.add_linear_le(expr, 1.0));
            }
        }
        Scheme::Scma => {
            for k in 0..kc {
                let gs = gamma_s[[0, k]].expect("scma su slack");
                let expr = LinExpr::term(z[k], z_scale).add_term(gs, -1.0);
                families.z_link.push(prog.add_linear_le(expr, 1.0));
            }
            for k in 0..kc {
                let gw = gamma_w_grp[k].expect("scma wu slack");
                let expr = LinExpr::term(z[kc + k], z_scale).add_term(gw, -1.0);
                families.z_link.push(prog.add_linear_le(expr, 1.0));
            }
        }
    }

    let z_exprs: Vec<LinExpr> = z.iter().map(|id| LinExpr::var(*id)).collect();
    geometric_mean_hypograph(&mut prog, tau, &z_exprs)?;

    // Bilinear t̂ ≤ f·p̂ restrictions (free) or t̂ ≤ p̂ (fixed, f = 1).
    let bilinear = |prog: &mut ConeProgram,
                        families_vec: &mut Vec<(usize, usize, ConstraintId)>,
                        u: usize,
                        k: usize,
                        fv: Option<VarId>,
                        pv: VarId,
                        tv: VarId,
                        f0: f64,
                        p0_hat: f64| {
        match fv {
            None => {
                // assignment constant 1: linear t̂ − p̂ ≤ 0
                let id = prog.add_linear_le(LinExpr::var(tv).add_term(pv, -1.0), 0.0);
                families_vec.push((u, k, id));
            }
            Some(f) => {
                let m = linearize_bilinear_lower(f0, p0_hat);
                // (f−p̂)²/4 ≤ minorant − t̂
                let q = LinExpr::term(f, 0.5).add_term(pv, -0.5);
                let s_expr = LinExpr::constant(m.a - m.b * (m.f0 + m.p0))
                    .add_term(f, m.b)
                    .add_term(pv, m.b)
                    .add_term(tv, -1.0);
                let id = prog.add_square_le(q, s_expr);
                families_vec.push((u, k, id));
            }
        }
    };
    for u in 0..j_s {
        for k in 0..kc {
            if let (Some(pv), Some(tv)) = (p_s[[u, k]], t_s[[u, k]]) {
                let f0 = if f_s[[u, k]].is_some() { iterate.alloc.f_s[[u, k]] } else { fconst_s[[u, k]] };
                bilinear(
                    &mut prog,
                    &mut families.bilinear_s,
                    u,
                    k,
                    f_s[[u, k]],
                    pv,
                    tv,
                    f0,
                    (iterate.alloc.p_s[[u, k]] / p_bar).clamp(0.0, 1.0),
                );
            }
        }
    }
    for u in 0..j_w {
        for k in 0..kc {
            if let (Some(pv), Some(tv)) = (p_w[[u, k]], t_w[[u, k]]) {
                let f0 = if f_w[[u, k]].is_some() { iterate.alloc.f_w[[u, k]] } else { fconst_w[[u, k]] };
                bilinear(
                    &mut prog,
                    &mut families.bilinear_w,
                    u,
                    k,
                    f_w[[u, k]],
                    pv,
                    tv,
                    f0,
                    (iterate.alloc.p_w[[u, k]] / p_bar).clamp(0.0, 1.0),
                );
            }
        }
    }

    // SINR cone helper: (γ+β̂)²/4 ≤ signal_expr + minorant(γ, β̂).
    let sinr_cone = |prog: &mut ConeProgram,
                     gv: VarId,
                     bv: VarId,
                     g0: f64,
                     b0_hat: f64,
                     signal: LinExpr|
     -> ConstraintId {
        let m = linearize_bilinear_upper(g0, b0_hat);
        let q = LinExpr::term(gv, 0.5).add_term(bv, 0.5);
        let s_expr = signal
            .add_constant(m.a - m.slope * m.g0 + m.slope * m.b0)
            .add_term(gv, m.slope)
            .add_term(bv, -m.slope);
        prog.add_square_le(q, s_expr)
    };

    // WU QoS blocks.
    for j in 0..j_w {
        if !wu_qos[j] {
            continue;
        }
        for k in 0..kc {
            let (Some(gv), Some(bv)) = (gamma_w[[j, k]], beta_w[[j, k]]) else {
                continue;
            };
            // β̂ ≥ interference-below + 1 (SCMA adds the whole SU mass).
            let mut floor = LinExpr::term(bv, -1.0);
            for m in 0..j {
                if let Some(t) = t_w[[m, k]] {
                    floor = floor.add_term(t, gbar_w[[m, k]]);
                }
            }
            if config.scheme == Scheme::Scma {
                floor = floor.plus(&su_mass_expr(k));
            }
            prog.add_linear_le(floor, -1.0);

            let signal = match t_w[[j, k]] {
                Some(t) => LinExpr::term(t, gbar_w[[j, k]]),
                None => LinExpr::constant(0.0),
            };
            let id = sinr_cone(
                &mut prog,
                gv,
                bv,
                sp.gamma_w[[j, k]],
                sp.beta_w[[j, k]] / s2,
                signal,
            );
            families.sinr_w.push((j, k, id));
        }
        // ∏_k (1+γ) ≥ 2^R̄ through a hypograph variable bounded below.
        let target = (config.r_bar_w[j] / kc as f64).exp2();
        let q = add_var(
            &mut prog,
            format!("q_w[{j}]"),
            Some(target),
            None,
            geomean(
                &(0..kc)
                    .map(|k| 1.0 + sp.gamma_w[[j, k]])
                    .collect::<Vec<_>>(),
            ),
        );
        let leaves: Vec<LinExpr> = (0..kc)
            .map(|k| match gamma_w[[j, k]] {
                Some(g) => LinExpr::constant(1.0).add_term(g, 1.0),
                None => LinExpr::constant(1.0),
            })
            .collect();
        geometric_mean_hypograph(&mut prog, q, &leaves)?;
    }

    // SU-side blocks: β floors and SINR cones.
    if su_blocks {
        for r in 0..su_rows {
            for k in 0..kc {
                let (Some(gv), Some(bv)) = (gamma_s[[r, k]], beta_s[[r, k]]) else {
                    continue;
                };
                let mut floor = LinExpr::term(bv, -1.0).plus(&wu_mass_expr(k));
                if config.scheme == Scheme::Pd {
                    for m in 0..r {
                        if let Some(t) = t_s[[m, k]] {
                            floor = floor.add_term(t, gbar_s[[m, k]]);
                        }
                    }
                }
                prog.add_linear_le(floor, -1.0);

                let signal = match config.scheme {
                    Scheme::Pd => match t_s[[r, k]] {
                        Some(t) => LinExpr::term(t, gbar_s[[r, k]]),
                        None => LinExpr::constant(0.0),
                    },
                    _ => su_mass_expr(k),
                };
                let id = sinr_cone(
                    &mut prog,
                    gv,
                    bv,
                    sp.gamma_s[[r, k]],
                    sp.beta_s[[r, k]] / s2,
                    signal,
                );
                families.sinr_s.push((r, k, id));
            }
        }
    }
    if su_qos {
        // ∏ over all SU SINR factors ≥ 2^R̄s.
        let m_count = su_rows * kc;
        let target = (config.r_bar_s / m_count as f64).exp2();
        let mut leaf_vals = Vec::with_capacity(m_count);
        let mut leaves = Vec::with_capacity(m_count);
        for r in 0..su_rows {
            for k in 0..kc {
                leaf_vals.push(1.0 + sp.gamma_s[[r, k]]);
                leaves.push(match gamma_s[[r, k]] {
                    Some(g) => LinExpr::constant(1.0).add_term(g, 1.0),
                    None => LinExpr::constant(1.0),
                });
            }
        }
        let q = add_var(
            &mut prog,
            "q_s".into(),
            Some(target),
            None,
            geomean(&leaf_vals),
        );
        geometric_mean_hypograph(&mut prog, q, &leaves)?;
    }

    // SCMA WU-side objective blocks.
    if config.scheme == Scheme::Scma {
        for k in 0..kc {
            let (Some(gv), Some(bv)) = (gamma_w_grp[k], beta_w_grp[k]) else {
                continue;
            };
            let floor = LinExpr::term(bv, -1.0).plus(&su_mass_expr(k));
            prog.add_linear_le(floor, -1.0);
            let id = sinr_cone(
                &mut prog,
                gv,
                bv,
                sp.gamma_w_grp[k],
                sp.beta_w_grp[k] / s2,
                wu_mass_expr(k),
            );
            families.sinr_w_grp.push((k, id));
        }
    }

    // Per-user power budgets Σ_k t̂ ≤ 1.
    for u in 0..j_s {
        let mut e = LinExpr::default();
        for k in 0..kc {
            if let Some(t) = t_s[[u, k]] {
                e = e.add_term(t, 1.0);
            }
        }
        if !e.terms.is_empty() {
            prog.add_linear_le(e, 1.0);
        }
    }
    for u in 0..j_w {
        let mut e = LinExpr::default();
        for k in 0..kc {
            if let Some(t) = t_w[[u, k]] {
                e = e.add_term(t, 1.0);
            }
        }
        if !e.terms.is_empty() {
            prog.add_linear_le(e, 1.0);
        }
    }

    // Degree geometry of the relaxation (free mode only): rows pinned at the
    // per-user cap, columns kept under the per-carrier cap with the implied
    // lower bound max(0, J·row_cap − (K−1)·col_cap) forcing the spread the
    // reweighted penalty pushes down onto.
    if !fixed {
        let degree_rows = |prog: &mut ConeProgram,
                               grid: &Array2<Option<VarId>>,
                               j_count: usize,
                               row_cap: usize|
         -> Result<()> {
            for u in 0..j_count {
                let mut e = LinExpr::default();
                let mut n_vars = 0;
                for k in 0..kc {
                    if let Some(f) = grid[[u, k]] {
                        e = e.add_term(f, 1.0);
                        n_vars += 1;
                    }
                }
                if n_vars > 0 {
                    prog.add_linear_eq(e, row_cap as f64);
                }
            }
            Ok(())
        };
        if !pinned_s && j_s > 0 {
            degree_rows(&mut prog, &f_s, j_s, config.per_user_cap_s)?;
        }
        if !pinned_w && j_w > 0 {
            degree_rows(&mut prog, &f_w, j_w, config.per_user_cap_w)?;
        }

        let col_bounds = |prog: &mut ConeProgram,
                          grids: &[(&Array2<Option<VarId>>, &Array2<f64>, usize)],
                          col_cap: usize,
                          total_mass: usize|
         -> Result<()> {
            // Row pinning plus the other columns' caps imply this lower
            // bound; when it meets the cap the column sum is forced, and an
            // equality keeps the relaxation strictly feasible.
            let lb = total_mass as f64 - ((kc - 1) * col_cap) as f64;
            if lb > col_cap as f64 {
                return Err(Error::InvalidConfig(format!(
                    "degree caps cannot host {total_mass} assignments on {kc} carriers"
                )));
            }
            for k in 0..kc {
                let mut e = LinExpr::default();
                for (grid, consts, j_count) in grids {
                    for u in 0..*j_count {
                        match grid[[u, k]] {
                            Some(f) => e = e.add_term(f, 1.0),
                            None => e = e.add_constant(consts[[u, k]]),
                        }
                    }
                }
                if e.terms.is_empty() {
                    continue;
                }
                if lb == col_cap as f64 {
                    prog.add_linear_eq(e, col_cap as f64);
                } else {
                    prog.add_linear_le(e.clone(), col_cap as f64);
                    if lb > 0.0 {
                        prog.add_linear_ge(e, lb);
                    }
                }
            }
            Ok(())
        };
        match config.scheme {
            Scheme::Pd => {
                let total = j_s * config.per_user_cap_s + j_w * config.per_user_cap_w;
                col_bounds(
                    &mut prog,
                    &[(&f_s, &fconst_s, j_s), (&f_w, &fconst_w, j_w)],
                    config.combined_carrier_cap(),
                    total,
                )?;
            }
            _ => {
                if j_s > 0 && !pinned_s {
                    col_bounds(
                        &mut prog,
                        &[(&f_s, &fconst_s, j_s)],
                        config.per_carrier_cap_s,
                        j_s * config.per_user_cap_s,
                    )?;
                }
                if j_w > 0 && !pinned_w {
                    col_bounds(
                        &mut prog,
                        &[(&f_w, &fconst_w, j_w)],
                        config.per_carrier_cap_w,
                        j_w * config.per_user_cap_w,
                    )?;
                }
            }
        }
    }

    // Objective: m·τ̂ plus the reweighted penalty (normalized by the
    // hypograph scale so coefficients stay O(1)).
    prog.set_objective(tau, m_z as f64);
    if let Mode::Free(rw) = mode {
        let lambda_hat = rw.lambda / z_scale.powi(m_z as i32);
        if lambda_hat > 0.0 {
            for u in 0..j_s {
                for k in 0..kc {
                    if let Some(f) = f_s[[u, k]] {
                        prog.add_objective(f, -lambda_hat * rw.w_s[[u, k]]);
                    }
                }
            }
            for u in 0..j_w {
                for k in 0..kc {
                    if let Some(f) = f_w[[u, k]] {
                        prog.add_objective(f, -lambda_hat * rw.w_w[[u, k]]);
                    }
                }
            }
        }
    }

    // Geometric-mean internals get NaN expansion values (not tracked).
    let mut expansion = x0;
    expansion.resize(prog.n_vars(), f64::NAN);

    prog.validate_well_formed()?;

    Ok(Subproblem {
        program: prog,
        vars: SubproblemVars {
            f_s,
            f_w,
            p_s,
            p_w,
            t_s,
            t_w,
            z,
            tau,
            gamma_w,
            beta_w,
            gamma_s,
            beta_s,
            gamma_w_grp,
            beta_w_grp,
        },
        families,
        z_scale,
        m_z,
        expansion,
        config: config.clone(),
        fixed_f: if fixed {
            Some((
                iterate.alloc.f_s.mapv(|v| if v > 0.5 { 1.0 } else { 0.0 }),
                iterate.alloc.f_w.mapv(|v| if v > 0.5 { 1.0 } else { 0.0 }),
            ))
        } else {
            None
        },
    })
}

impl Subproblem {
    /// Map a solver point back to an allocation in physical units. Box
    /// violations at solver tolerance are clamped away.
    pub fn extract_allocation(&self, sol: &ConeSolution) -> Allocation {
        let cfg = &self.config;
        let p_bar = cfg.p_bar;
        let pull_f = |grid: &Array2<Option<VarId>>, fixed: Option<&Array2<f64>>, pinned: bool| {
            let mut out = Array2::zeros(grid.dim());
            for ((u, k), slot) in grid.indexed_iter() {
                out[[u, k]] = match slot {
                    Some(id) => sol.primal[id.index()].clamp(0.0, 1.0),
                    None => match fixed {
                        Some(fx) => fx[[u, k]],
                        None => {
                            debug_assert!(pinned);
                            1.0
                        }
                    },
                };
            }
            out
        };
        let pull_p = |grid: &Array2<Option<VarId>>| {
            let mut out = Array2::zeros(grid.dim());
            for ((u, k), slot) in grid.indexed_iter() {
                if let Some(id) = slot {
                    out[[u, k]] = sol.primal[id.index()].clamp(0.0, 1.0) * p_bar;
                }
            }
            out
        };
        let (fx_s, fx_w) = match &self.fixed_f {
            Some((a, b)) => (Some(a), Some(b)),
            None => (None, None),
        };
        let pinned_s = cfg.per_user_cap_s == cfg.k;
        let pinned_w = cfg.per_user_cap_w == cfg.k;
        Allocation {
            f_s: pull_f(&self.vars.f_s, fx_s, pinned_s),
            f_w: pull_f(&self.vars.f_w, fx_w, pinned_w),
            p_s: pull_p(&self.vars.p_s),
            p_w: pull_p(&self.vars.p_w),
            binary: self.fixed_f.is_some(),
        }
    }

    /// Raw slack values of a solver point in physical units (β floors filled
    /// in where the variable was pruned).
    pub fn extract_slacks(&self, sol: &ConeSolution) -> SlackPoint {
        let cfg = &self.config;
        let s2 = cfg.sigma2;
        let p_bar = cfg.p_bar;
        let val = |slot: &Option<VarId>| slot.map(|id| sol.primal[id.index()]);
        let grid = |g: &Array2<Option<VarId>>, scale: f64| {
            let mut out = Array2::zeros(g.dim());
            for ((u, k), slot) in g.indexed_iter() {
                out[[u, k]] = val(slot).unwrap_or(0.0) * scale;
            }
            out
        };
        SlackPoint {
            z: self
                .vars
                .z
                .iter()
                .map(|id| sol.primal[id.index()] * self.z_scale)
                .collect(),
            t_s: grid(&self.vars.t_s, p_bar),
            t_w: grid(&self.vars.t_w, p_bar),
            gamma_w: grid(&self.vars.gamma_w, 1.0),
            beta_w: grid(&self.vars.beta_w, s2),
            gamma_s: grid(&self.vars.gamma_s, 1.0),
            beta_s: grid(&self.vars.beta_s, s2),
            gamma_w_grp: self
                .vars
                .gamma_w_grp
                .iter()
                .map(|slot| val(slot).unwrap_or(0.0))
                .collect(),
            beta_w_grp: self
                .vars
                .beta_w_grp
                .iter()
                .map(|slot| val(slot).unwrap_or(0.0) * s2)
                .collect(),
        }
    }

    /// Hypograph value τ̂ at a solver point.
    pub fn tau_value(&self, sol: &ConeSolution) -> f64 {
        sol.primal[self.vars.tau.index()]
    }

    /// Magnitude-scaled violations of every constraint whose variables all
    /// carry tracked expansion values, evaluated at the expansion point.
    /// Geometric-mean tree internals are untracked, so their cones are
    /// skipped.
    pub fn expansion_violations(&self) -> Vec<f64> {
        (0..self.program.n_constraints())
            .map(|i| self.program.violation_scaled(ConstraintId(i), &self.expansion))
            .filter(|v| v.is_finite())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::super::{lift_to_slacks, ReweightState};
    use super::*;
    use crate::conic::{solve, SolveStatus, SolverOptions};
    use crate::model::{draw_channels, Topology};

    fn canonical_binomial_f() -> Array2<f64> {
        let mut f = Array2::zeros((6, 4));
        let pairs = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];
        for (u, (a, b)) in pairs.iter().enumerate() {
            f[[u, *a]] = 1.0;
            f[[u, *b]] = 1.0;
        }
        f
    }

    fn hd_iterate(cfg: &SystemConfig, ch: &crate::model::ChannelSet) -> Iterate {
        let mut alloc = Allocation::zeros(cfg);
        alloc.f_s = canonical_binomial_f();
        alloc.f_w = canonical_binomial_f();
        for u in 0..6 {
            for k in 0..4 {
                if alloc.f_s[[u, k]] > 0.5 {
                    alloc.p_s[[u, k]] = cfg.p_bar / 2.0;
                }
                if alloc.f_w[[u, k]] > 0.5 {
                    alloc.p_w[[u, k]] = cfg.p_bar / 2.0;
                }
            }
        }
        let slacks = lift_to_slacks(cfg, ch, &alloc).unwrap();
        Iterate {
            alloc,
            slacks,
            index: 0,
        }
    }

    #[test]
    fn hd_variable_inventory() {
        let cfg = SystemConfig::default_for(Scheme::Hd);
        let ch = draw_channels(1, &cfg, &Topology::Uniform).unwrap();
        let it = hd_iterate(&cfg, &ch);
        let rw = ReweightState::new(&it.alloc, 1e-3, 1.0);
        let sub = build_subproblem(&cfg, &ch, &it, &rw).unwrap();
        // f,p: 2·(2·6·4); t: 2·6·4; z: 4; γ_w, β_w: 6·4 each; γ_s, β_s: 4
        // each; hypograph auxiliaries: τ + 2 objective-tree internals, 6
        // WU hypographs with 2 internals each, 1 SU hypograph with 2.
        let expect = 96 + 48 + 4 + 24 + 24 + 4 + 4 + (1 + 2) + 6 * (1 + 2) + (1 + 2);
        assert_eq!(sub.program.n_vars(), expect);
        sub.program.validate_well_formed().unwrap();
    }

    #[test]
    fn expansion_point_is_feasible() {
        // The lifted iterate satisfies every tracked constraint of the new
        // subproblem (first-order exactness makes the DC cones tight).
        for scheme in [Scheme::Hd, Scheme::Scma, Scheme::Pd] {
            let cfg = SystemConfig::default_for(scheme);
            let ch = draw_channels(7, &cfg, &Topology::Uniform).unwrap();
            let it = match scheme {
                Scheme::Pd => {
                    let mut alloc = Allocation::zeros(&cfg);
                    for u in 0..6 {
                        alloc.f_s[[u, u % 4]] = 1.0;
                        alloc.p_s[[u, u % 4]] = cfg.p_bar;
                        let kw = (u + 2) % 4;
                        alloc.f_w[[u, kw]] = 1.0;
                        alloc.p_w[[u, kw]] = cfg.p_bar;
                    }
                    let slacks = lift_to_slacks(&cfg, &ch, &alloc).unwrap();
                    Iterate { alloc, slacks, index: 0 }
                }
                _ => hd_iterate(&cfg, &ch),
            };
            let rw = ReweightState::new(&it.alloc, 1e-3, 1.0);
            let sub = build_subproblem(&cfg, &ch, &it, &rw).unwrap();
            let worst = sub
                .expansion_violations()
                .into_iter()
                .fold(f64::NEG_INFINITY, f64::max);
            assert!(worst <= 1e-12, "{scheme:?}: worst violation {worst}");
        }
    }

    #[test]
    fn lambda_zero_objective_is_pure_hypograph() {
        let cfg = SystemConfig::default_for(Scheme::Hd);
        let ch = draw_channels(2, &cfg, &Topology::Uniform).unwrap();
        let it = hd_iterate(&cfg, &ch);
        let rw = ReweightState::new(&it.alloc, 1e-3, 0.0);
        let sub = build_subproblem(&cfg, &ch, &it, &rw).unwrap();
        let nonzero: Vec<usize> = sub
            .program
            .objective
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != 0.0)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(nonzero, vec![sub.vars.tau.index()]);
        assert_eq!(sub.program.objective[sub.vars.tau.index()], sub.m_z as f64);
    }

    #[test]
    fn power_subproblem_solves_single_user() {
        // One SU, one carrier, no QoS: the optimum pushes power to the cap.
        let mut cfg = SystemConfig::default_for(Scheme::Hd);
        cfg.k = 1;
        cfg.j_s = 1;
        cfg.j_w = 0;
        cfg.n_r = 1;
        cfg.per_user_cap_s = 1;
        cfg.per_user_cap_w = 1;
        cfg.per_carrier_cap_s = 1;
        cfg.per_carrier_cap_w = 1;
        cfg.r_bar_w = vec![];
        cfg.r_bar_s = 0.0;
        let ch = draw_channels(5, &cfg, &Topology::Uniform).unwrap();
        let mut alloc = Allocation::zeros(&cfg);
        alloc.f_s[[0, 0]] = 1.0;
        alloc.p_s[[0, 0]] = 0.1 * cfg.p_bar;
        let slacks = lift_to_slacks(&cfg, &ch, &alloc).unwrap();
        let it = Iterate {
            alloc,
            slacks,
            index: 0,
        };
        let sub = build_power_subproblem(&cfg, &ch, &it).unwrap();
        let sol = solve(&sub.program, &SolverOptions::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        let out = sub.extract_allocation(&sol);
        // t̂ ≤ p̂ ≤ 1 and the objective is increasing in t̂, so p̂ → 1.
        assert!(out.p_s[[0, 0]] > 0.95 * cfg.p_bar, "p = {}", out.p_s[[0, 0]]);
    }
}
