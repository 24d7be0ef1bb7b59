use nalgebra::DVector;

use super::program::{ConeProgram, Constraint, LinExpr};
use crate::error::{Error, Result};

/// Row-major sparse matrix; small problems only, no column index.
#[derive(Debug, Clone, Default)]
pub(crate) struct SparseMat {
    pub ncols: usize,
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl SparseMat {
    pub fn new(ncols: usize) -> Self {
        SparseMat {
            ncols,
            rows: Vec::new(),
        }
    }

    pub fn nrows(&self) -> usize {
        self.rows.len()
    }

    pub fn push_row(&mut self, row: Vec<(usize, f64)>) {
        self.rows.push(row);
    }

    /// y = M x
    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut y = DVector::zeros(self.nrows());
        for (i, row) in self.rows.iter().enumerate() {
            y[i] = row.iter().map(|(j, a)| a * x[*j]).sum();
        }
        y
    }

    /// y = Mᵀ x
    pub fn tr_mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut y = DVector::zeros(self.ncols);
        for (i, row) in self.rows.iter().enumerate() {
            for (j, a) in row {
                y[*j] += a * x[i];
            }
        }
        y
    }

    pub fn scale_rows(&mut self, scale: &[f64]) {
        for (row, s) in self.rows.iter_mut().zip(scale) {
            for (_, a) in row.iter_mut() {
                *a *= s;
            }
        }
    }

    pub fn scale_cols(&mut self, scale: &[f64]) {
        for row in &mut self.rows {
            for (j, a) in row.iter_mut() {
                *a *= scale[*j];
            }
        }
    }
}

/// Cone layout of the slack vector: `n_orthant` nonnegative rows followed by
/// second-order cone blocks of the listed dimensions.
#[derive(Debug, Clone, Default)]
pub(crate) struct ConeLayout {
    pub n_orthant: usize,
    pub soc_dims: Vec<usize>,
}

impl ConeLayout {
    pub fn total_rows(&self) -> usize {
        self.n_orthant + self.soc_dims.iter().sum::<usize>()
    }

    /// Barrier degree: orthant rows count 1 each, each SOC counts 1.
    pub fn degree(&self) -> usize {
        self.n_orthant + self.soc_dims.len()
    }
}

/// Where each IR constraint landed in the standard form.
#[derive(Debug, Clone)]
pub(crate) enum RowRef {
    /// Orthant row index (into the cone section of G).
    Orthant(usize),
    /// Equality row index (into A).
    Equality(usize),
    /// SOC block: starting row and dimension.
    Soc { start: usize, dim: usize },
    /// Rotated cone lowered to an SOC block of the same dimension.
    Rotated { start: usize, dim: usize },
}

#[derive(Debug, Clone, Default)]
pub(crate) struct Layout {
    pub constraint_rows: Vec<RowRef>,
    /// Per-variable orthant rows for finite lower/upper bounds.
    pub lower_rows: Vec<Option<usize>>,
    pub upper_rows: Vec<Option<usize>>,
}

/// Internal minimization standard form:
/// min cᵀx  s.t.  A x = b,  G x + s = h,  s ∈ K.
#[derive(Debug, Clone)]
pub(crate) struct StandardForm {
    pub c: DVector<f64>,
    pub a: SparseMat,
    pub b: DVector<f64>,
    pub g: SparseMat,
    pub h: DVector<f64>,
    pub cones: ConeLayout,
}

impl StandardForm {
    pub fn n(&self) -> usize {
        self.c.len()
    }
    pub fn p(&self) -> usize {
        self.a.nrows()
    }
    pub fn m(&self) -> usize {
        self.g.nrows()
    }
}

fn expr_row(e: &LinExpr, negate: bool) -> Vec<(usize, f64)> {
    // Collapse duplicate variables so downstream algebra sees each column once.
    let mut terms: Vec<(usize, f64)> = e.terms.iter().map(|(v, a)| (v.0, *a)).collect();
    terms.sort_by_key(|(j, _)| *j);
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(terms.len());
    for (j, a) in terms {
        match out.last_mut() {
            Some((lj, la)) if *lj == j => *la += a,
            _ => out.push((j, a)),
        }
    }
    if negate {
        for (_, a) in &mut out {
            *a = -*a;
        }
    }
    out.retain(|(_, a)| *a != 0.0);
    out
}

/// Lower the IR to standard form.
///
/// Orthant section ordering: linear ≤ rows in constraint order, then lower
/// bounds, then upper bounds. Cone section: SOC and rotated blocks in
/// constraint order (rotated cones via the orthogonal map
/// (u,v,w) → (u+v, u−v, √2·w)).
pub(crate) fn compile(program: &ConeProgram) -> Result<(StandardForm, Layout)> {
    program.validate_well_formed()?;
    let n = program.n_vars();

    let mut a = SparseMat::new(n);
    let mut b = Vec::new();
    let mut g_orth = SparseMat::new(n);
    let mut h_orth = Vec::new();
    let mut g_soc = SparseMat::new(n);
    let mut h_soc = Vec::new();
    let mut soc_dims = Vec::new();

    let mut constraint_rows = Vec::with_capacity(program.n_constraints());

    // First pass: linear constraints fill the orthant / equality sections.
    for c in &program.constraints {
        match c {
            Constraint::LinearLe { expr, rhs } => {
                constraint_rows.push(RowRef::Orthant(g_orth.nrows()));
                g_orth.push_row(expr_row(expr, false));
                h_orth.push(rhs - expr.constant);
            }
            Constraint::LinearEq { expr, rhs } => {
                constraint_rows.push(RowRef::Equality(a.nrows()));
                a.push_row(expr_row(expr, false));
                b.push(rhs - expr.constant);
            }
            Constraint::Soc { .. } | Constraint::RotatedCone { .. } => {
                // Placeholder; fixed up in the cone pass below.
                constraint_rows.push(RowRef::Soc { start: 0, dim: 0 });
            }
        }
    }

    // Variable bounds extend the orthant section.
    let mut lower_rows = vec![None; n];
    let mut upper_rows = vec![None; n];
    for (j, info) in program.vars.iter().enumerate() {
        if let Some(l) = info.lower {
            lower_rows[j] = Some(g_orth.nrows());
            g_orth.push_row(vec![(j, -1.0)]);
            h_orth.push(-l);
        }
        if let Some(u) = info.upper {
            upper_rows[j] = Some(g_orth.nrows());
            g_orth.push_row(vec![(j, 1.0)]);
            h_orth.push(u);
        }
    }

    // Cone pass. s = h − Gx must equal (bound, args...) for SOC rows.
    let n_orthant = g_orth.nrows();
    let sqrt2 = std::f64::consts::SQRT_2;
    for (idx, c) in program.constraints.iter().enumerate() {
        match c {
            Constraint::Soc { norm_args, bound } => {
                let start = n_orthant + g_soc.nrows();
                let dim = 1 + norm_args.len();
                g_soc.push_row(expr_row(bound, true));
                h_soc.push(bound.constant);
                for arg in norm_args {
                    g_soc.push_row(expr_row(arg, true));
                    h_soc.push(arg.constant);
                }
                soc_dims.push(dim);
                constraint_rows[idx] = RowRef::Soc { start, dim };
            }
            Constraint::RotatedCone { u, v, w } => {
                let start = n_orthant + g_soc.nrows();
                let dim = 2 + w.len();
                let head = u.clone().plus(v);
                let diff = u.clone().minus(v);
                g_soc.push_row(expr_row(&head, true));
                h_soc.push(head.constant);
                g_soc.push_row(expr_row(&diff, true));
                h_soc.push(diff.constant);
                for arg in w {
                    let scaled = arg.clone().scaled(sqrt2);
                    g_soc.push_row(expr_row(&scaled, true));
                    h_soc.push(scaled.constant);
                }
                soc_dims.push(dim);
                constraint_rows[idx] = RowRef::Rotated { start, dim };
            }
            _ => {}
        }
    }

    let mut g = g_orth;
    let mut h = h_orth;
    for (row, hv) in g_soc.rows.into_iter().zip(h_soc) {
        g.push_row(row);
        h.push(hv);
    }

    for dim in &soc_dims {
        if *dim < 1 {
            return Err(Error::MalformedProgram("empty cone block".into()));
        }
    }

    // Maximize in the IR, minimize internally.
    let c = DVector::from_iterator(n, program.objective.iter().map(|v| -v));

    Ok((
        StandardForm {
            c,
            a,
            b: DVector::from_vec(b),
            g,
            h: DVector::from_vec(h),
            cones: ConeLayout {
                n_orthant,
                soc_dims,
            },
        },
        Layout {
            constraint_rows,
            lower_rows,
            upper_rows,
        },
    ))
}

/// Diagonal Ruiz equilibration of the standard form. SOC blocks share one
/// row scale so the cone geometry is preserved.
#[derive(Debug, Clone)]
pub(crate) struct Equilibration {
    pub col: Vec<f64>,
    pub row_g: Vec<f64>,
    pub row_a: Vec<f64>,
}

pub(crate) fn equilibrate(form: &StandardForm, iters: usize) -> (StandardForm, Equilibration) {
    let n = form.n();
    let m = form.m();
    let p = form.p();
    let mut scaled = form.clone();
    let mut eq = Equilibration {
        col: vec![1.0; n],
        row_g: vec![1.0; m],
        row_a: vec![1.0; p],
    };

    for _ in 0..iters {
        // Row infinity norms.
        let mut rg: Vec<f64> = scaled
            .g
            .rows
            .iter()
            .map(|r| r.iter().fold(0.0f64, |acc, (_, a)| acc.max(a.abs())))
            .collect();
        // Uniform scale per SOC block (geometric mean of row norms).
        let mut row = scaled.cones.n_orthant;
        for dim in &scaled.cones.soc_dims {
            let block = &rg[row..row + dim];
            let nonzero: Vec<f64> = block.iter().copied().filter(|v| *v > 0.0).collect();
            let gm = if nonzero.is_empty() {
                1.0
            } else {
                (nonzero.iter().map(|v| v.ln()).sum::<f64>() / nonzero.len() as f64).exp()
            };
            for r in &mut rg[row..row + dim] {
                *r = gm;
            }
            row += dim;
        }
        let ra: Vec<f64> = scaled
            .a
            .rows
            .iter()
            .map(|r| r.iter().fold(0.0f64, |acc, (_, a)| acc.max(a.abs())))
            .collect();

        let inv_sqrt = |v: f64| if v > 0.0 { 1.0 / v.sqrt() } else { 1.0 };
        let rg_s: Vec<f64> = rg.iter_mut().map(|v| inv_sqrt(*v)).collect();
        let ra_s: Vec<f64> = ra.iter().map(|v| inv_sqrt(*v)).collect();
        scaled.g.scale_rows(&rg_s);
        scaled.a.scale_rows(&ra_s);
        for i in 0..m {
            scaled.h[i] *= rg_s[i];
            eq.row_g[i] *= rg_s[i];
        }
        for i in 0..p {
            scaled.b[i] *= ra_s[i];
            eq.row_a[i] *= ra_s[i];
        }

        // Column infinity norms over both matrices.
        let mut cn = vec![0.0f64; n];
        for mat in [&scaled.g, &scaled.a] {
            for r in &mat.rows {
                for (j, a) in r {
                    cn[*j] = cn[*j].max(a.abs());
                }
            }
        }
        let cs: Vec<f64> = cn.iter().map(|v| inv_sqrt(*v)).collect();
        scaled.g.scale_cols(&cs);
        scaled.a.scale_cols(&cs);
        for j in 0..n {
            scaled.c[j] *= cs[j];
            eq.col[j] *= cs[j];
        }
    }

    (scaled, eq)
}
