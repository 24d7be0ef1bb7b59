use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Handle to a decision variable of a [`ConeProgram`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VarId(pub(crate) usize);

impl VarId {
    pub fn index(&self) -> usize {
        self.0
    }
}

/// Handle to a constraint, usable to look up dual values in a solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConstraintId(pub(crate) usize);

/// Affine expression Σ aᵢ·xᵢ + constant.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinExpr {
    pub terms: Vec<(VarId, f64)>,
    pub constant: f64,
}

impl LinExpr {
    pub fn constant(c: f64) -> Self {
        LinExpr {
            terms: Vec::new(),
            constant: c,
        }
    }

    pub fn var(v: VarId) -> Self {
        LinExpr {
            terms: vec![(v, 1.0)],
            constant: 0.0,
        }
    }

    pub fn term(v: VarId, coeff: f64) -> Self {
        LinExpr {
            terms: vec![(v, coeff)],
            constant: 0.0,
        }
    }

    pub fn add_term(mut self, v: VarId, coeff: f64) -> Self {
        self.terms.push((v, coeff));
        self
    }

    pub fn add_constant(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    pub fn scaled(mut self, c: f64) -> Self {
        for (_, a) in &mut self.terms {
            *a *= c;
        }
        self.constant *= c;
        self
    }

    pub fn minus(mut self, other: &LinExpr) -> Self {
        for (v, a) in &other.terms {
            self.terms.push((*v, -a));
        }
        self.constant -= other.constant;
        self
    }

    pub fn plus(mut self, other: &LinExpr) -> Self {
        self.terms.extend(other.terms.iter().copied());
        self.constant += other.constant;
        self
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(v, a)| a * x[v.0])
            .sum::<f64>()
            + self.constant
    }

    fn is_finite(&self) -> bool {
        self.constant.is_finite() && self.terms.iter().all(|(_, a)| a.is_finite())
    }

    fn max_var(&self) -> Option<usize> {
        self.terms.iter().map(|(v, _)| v.0).max()
    }
}

#[derive(Debug, Clone)]
pub(crate) struct VarInfo {
    pub name: String,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

/// One constraint in solver-neutral geometry.
#[derive(Debug, Clone)]
pub enum Constraint {
    /// expr ≤ rhs
    LinearLe { expr: LinExpr, rhs: f64 },
    /// expr = rhs
    LinearEq { expr: LinExpr, rhs: f64 },
    /// ‖norm_args‖₂ ≤ bound
    Soc { norm_args: Vec<LinExpr>, bound: LinExpr },
    /// 2·u·v ≥ ‖w‖₂², u ≥ 0, v ≥ 0
    RotatedCone { u: LinExpr, v: LinExpr, w: Vec<LinExpr> },
}

/// Solver-neutral second-order-cone program with a linear maximize objective.
#[derive(Debug, Clone, Default)]
pub struct ConeProgram {
    pub(crate) vars: Vec<VarInfo>,
    pub(crate) objective: Vec<f64>,
    pub(crate) constraints: Vec<Constraint>,
}

impl ConeProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, name: impl Into<String>, lower: Option<f64>, upper: Option<f64>) -> VarId {
        self.vars.push(VarInfo {
            name: name.into(),
            lower,
            upper,
        });
        self.objective.push(0.0);
        VarId(self.vars.len() - 1)
    }

    /// Set the maximize-objective coefficient of `v`.
    pub fn set_objective(&mut self, v: VarId, coeff: f64) {
        self.objective[v.0] = coeff;
    }

    pub fn add_objective(&mut self, v: VarId, coeff: f64) {
        self.objective[v.0] += coeff;
    }

    pub fn n_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn n_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn var_name(&self, v: VarId) -> &str {
        &self.vars[v.0].name
    }

    pub fn add_linear_le(&mut self, expr: LinExpr, rhs: f64) -> ConstraintId {
        self.constraints.push(Constraint::LinearLe { expr, rhs });
        ConstraintId(self.constraints.len() - 1)
    }

    pub fn add_linear_ge(&mut self, expr: LinExpr, rhs: f64) -> ConstraintId {
        self.add_linear_le(expr.scaled(-1.0), -rhs)
    }

    pub fn add_linear_eq(&mut self, expr: LinExpr, rhs: f64) -> ConstraintId {
        self.constraints.push(Constraint::LinearEq { expr, rhs });
        ConstraintId(self.constraints.len() - 1)
    }

    pub fn add_soc(&mut self, norm_args: Vec<LinExpr>, bound: LinExpr) -> ConstraintId {
        self.constraints.push(Constraint::Soc { norm_args, bound });
        ConstraintId(self.constraints.len() - 1)
    }

    pub fn add_rotated_cone(&mut self, u: LinExpr, v: LinExpr, w: Vec<LinExpr>) -> ConstraintId {
        self.constraints.push(Constraint::RotatedCone { u, v, w });
        ConstraintId(self.constraints.len() - 1)
    }

    /// Convex quadratic epigraph q² ≤ s lowered to ‖(1−s, 2q)‖ ≤ 1+s.
    pub fn add_square_le(&mut self, q: LinExpr, s: LinExpr) -> ConstraintId {
        let one_minus = LinExpr::constant(1.0).minus(&s);
        let one_plus = LinExpr::constant(1.0).plus(&s);
        self.add_soc(vec![one_minus, q.scaled(2.0)], one_plus)
    }

    /// Checks that every constraint references declared variables, all data is
    /// finite, and cone dimensions are at least one.
    pub fn validate_well_formed(&self) -> Result<()> {
        let n = self.vars.len();
        let check_expr = |e: &LinExpr, what: &str| -> Result<()> {
            if let Some(mv) = e.max_var() {
                if mv >= n {
                    return Err(Error::MalformedProgram(format!(
                        "{what} references undeclared variable #{mv}"
                    )));
                }
            }
            if !e.is_finite() {
                return Err(Error::MalformedProgram(format!("{what} has non-finite data")));
            }
            Ok(())
        };
        for (i, c) in self.constraints.iter().enumerate() {
            match c {
                Constraint::LinearLe { expr, rhs } | Constraint::LinearEq { expr, rhs } => {
                    check_expr(expr, &format!("constraint #{i}"))?;
                    if !rhs.is_finite() {
                        return Err(Error::MalformedProgram(format!(
                            "constraint #{i} has non-finite rhs"
                        )));
                    }
                }
                Constraint::Soc { norm_args, bound } => {
                    if norm_args.is_empty() {
                        return Err(Error::MalformedProgram(format!(
                            "soc constraint #{i} has empty norm"
                        )));
                    }
                    for a in norm_args {
                        check_expr(a, &format!("soc constraint #{i}"))?;
                    }
                    check_expr(bound, &format!("soc constraint #{i}"))?;
                }
                Constraint::RotatedCone { u, v, w } => {
                    if w.is_empty() {
                        return Err(Error::MalformedProgram(format!(
                            "rotated cone #{i} has empty norm"
                        )));
                    }
                    check_expr(u, &format!("rotated cone #{i}"))?;
                    check_expr(v, &format!("rotated cone #{i}"))?;
                    for a in w {
                        check_expr(a, &format!("rotated cone #{i}"))?;
                    }
                }
            }
        }
        for (i, info) in self.vars.iter().enumerate() {
            if let (Some(l), Some(u)) = (info.lower, info.upper) {
                if l > u {
                    return Err(Error::MalformedProgram(format!(
                        "variable #{i} has empty box [{l}, {u}]"
                    )));
                }
            }
        }
        if self.objective.iter().any(|c| !c.is_finite()) {
            return Err(Error::MalformedProgram("non-finite objective".into()));
        }
        Ok(())
    }

    /// Signed violation of constraint `id` at point `x` (positive = violated).
    /// Equality constraints report the absolute residual.
    pub fn violation(&self, id: ConstraintId, x: &[f64]) -> f64 {
        match &self.constraints[id.0] {
            Constraint::LinearLe { expr, rhs } => expr.eval(x) - rhs,
            Constraint::LinearEq { expr, rhs } => (expr.eval(x) - rhs).abs(),
            Constraint::Soc { norm_args, bound } => {
                let norm = norm_args
                    .iter()
                    .map(|a| a.eval(x).powi(2))
                    .sum::<f64>()
                    .sqrt();
                norm - bound.eval(x)
            }
            Constraint::RotatedCone { u, v, w } => {
                let uu = u.eval(x);
                let vv = v.eval(x);
                let ww: f64 = w.iter().map(|a| a.eval(x).powi(2)).sum();
                (ww - 2.0 * uu * vv).max(-uu).max(-vv)
            }
        }
    }

    /// Violation normalized by the constraint's magnitude at `x`, so
    /// constraints of very different scales are comparable.
    pub fn violation_scaled(&self, id: ConstraintId, x: &[f64]) -> f64 {
        let scale = match &self.constraints[id.0] {
            Constraint::LinearLe { expr, rhs } | Constraint::LinearEq { expr, rhs } => {
                expr.terms
                    .iter()
                    .map(|(v, a)| (a * x[v.0]).abs())
                    .sum::<f64>()
                    + expr.constant.abs()
                    + rhs.abs()
            }
            Constraint::Soc { norm_args, bound } => {
                norm_args
                    .iter()
                    .map(|a| a.eval(x).abs())
                    .sum::<f64>()
                    + bound.eval(x).abs()
            }
            Constraint::RotatedCone { u, v, w } => {
                (2.0 * u.eval(x) * v.eval(x)).abs()
                    + w.iter().map(|a| a.eval(x).powi(2)).sum::<f64>()
            }
        };
        self.violation(id, x) / (1.0 + scale)
    }

    /// Maximize-objective value at `x`.
    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    fn fmt_expr(&self, e: &LinExpr) -> String {
        let mut out = String::new();
        for (v, a) in &e.terms {
            if !out.is_empty() {
                out.push_str(" + ");
            }
            let _ = write!(out, "{}*{}", a, self.vars[v.0].name);
        }
        if e.constant != 0.0 || out.is_empty() {
            if out.is_empty() {
                let _ = write!(out, "{}", e.constant);
            } else {
                let _ = write!(out, " + {}", e.constant);
            }
        }
        out
    }

    /// Plain-text dump, one constraint per line, for cross-checking against
    /// external solvers.
    pub fn dump_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# cone program: {} vars, {} constraints", self.vars.len(), self.constraints.len());
        for (i, v) in self.vars.iter().enumerate() {
            let lb = v.lower.map_or("-inf".to_string(), |b| b.to_string());
            let ub = v.upper.map_or("+inf".to_string(), |b| b.to_string());
            let _ = writeln!(out, "var x{i} {} in [{lb}, {ub}]", v.name);
        }
        let obj_terms: Vec<String> = self
            .objective
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != 0.0)
            .map(|(i, c)| format!("{}*{}", c, self.vars[i].name))
            .collect();
        let _ = writeln!(out, "maximize {}", if obj_terms.is_empty() { "0".into() } else { obj_terms.join(" + ") });
        for (i, c) in self.constraints.iter().enumerate() {
            match c {
                Constraint::LinearLe { expr, rhs } => {
                    let _ = writeln!(out, "lin[{i}]: {} <= {}", self.fmt_expr(expr), rhs);
                }
                Constraint::LinearEq { expr, rhs } => {
                    let _ = writeln!(out, "eq[{i}]: {} == {}", self.fmt_expr(expr), rhs);
                }
                Constraint::Soc { norm_args, bound } => {
                    let args: Vec<String> = norm_args.iter().map(|a| self.fmt_expr(a)).collect();
                    let _ = writeln!(out, "soc[{i}]: ||({})|| <= {}", args.join("; "), self.fmt_expr(bound));
                }
                Constraint::RotatedCone { u, v, w } => {
                    let args: Vec<String> = w.iter().map(|a| self.fmt_expr(a)).collect();
                    let _ = writeln!(
                        out,
                        "rsoc[{i}]: 2*({})*({}) >= ||({})||^2",
                        self.fmt_expr(u),
                        self.fmt_expr(v),
                        args.join("; ")
                    );
                }
            }
        }
        out
    }
}

// Geometric-mean tree node: either an input expression or the hypograph
// variable itself (used for power-of-two padding).
enum Node {
    Expr(LinExpr),
    T,
}

/// Append cone constraints enforcing t ≤ (∏ exprs)^(1/m).
///
/// Pads the leaf list to the next power of two with copies of `t` and emits
/// one rotated cone per internal node of the binary tree. Callers must keep
/// the expressions nonnegative (the cones force internal nodes nonnegative).
pub fn geometric_mean_hypograph(
    program: &mut ConeProgram,
    t: VarId,
    exprs: &[LinExpr],
) -> Result<()> {
    let m = exprs.len();
    if m == 0 {
        return Err(Error::MalformedProgram(
            "geometric mean of zero terms".into(),
        ));
    }
    if m == 1 {
        program.add_linear_le(LinExpr::var(t).minus(&exprs[0]), 0.0);
        return Ok(());
    }
    let size = m.next_power_of_two();
    let mut nodes: Vec<Node> = exprs.iter().cloned().map(Node::Expr).collect();
    nodes.extend((m..size).map(|_| Node::T));

    let sqrt2 = std::f64::consts::SQRT_2;
    let mut level = 0usize;
    while nodes.len() > 2 {
        let mut next = Vec::with_capacity(nodes.len() / 2);
        for (pair_idx, pair) in nodes.chunks(2).enumerate() {
            match pair {
                // geomean(t, t) = t: reuse the hypograph variable directly.
                [Node::T, Node::T] => next.push(Node::T),
                [a, b] => {
                    let node = program.add_var(
                        format!("_gm{level}_{pair_idx}"),
                        Some(0.0),
                        None,
                    );
                    let (ea, eb) = (node_expr(a, t), node_expr(b, t));
                    program.add_rotated_cone(ea, eb, vec![LinExpr::term(node, sqrt2)]);
                    next.push(Node::Expr(LinExpr::var(node)));
                }
                _ => unreachable!("chunks(2) over a power-of-two list"),
            }
        }
        nodes = next;
        level += 1;
    }
    let (a, b) = (node_expr(&nodes[0], t), node_expr(&nodes[1], t));
    program.add_rotated_cone(a, b, vec![LinExpr::term(t, sqrt2)]);
    Ok(())
}

fn node_expr(n: &Node, t: VarId) -> LinExpr {
    match n {
        Node::Expr(e) => e.clone(),
        Node::T => LinExpr::var(t),
    }
}
