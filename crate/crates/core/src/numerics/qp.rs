//! Convex QP interface: problem container, interior-point solve with an
//! active-set polish pass, and independent KKT residual accounting.

use super::{Matrix, NumericsError, Vector};
use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, NonnegativeConeT, SolverStatus,
    SupportedConeT, ZeroConeT,
};

/// Convex quadratic program
///
/// ```text
/// minimize   1/2 x' H x + g' x + c0
/// s.t.       Aeq x  = beq
///            Ain x <= bin
///            lb <= x <= ub
/// ```
///
/// `H` must be symmetric positive semidefinite. Bounds may be ±infinity.
#[derive(Debug, Clone)]
pub struct QpProblem {
    pub h: Matrix,
    pub g: Vector,
    pub c0: f64,
    pub aeq: Matrix,
    pub beq: Vector,
    pub ain: Matrix,
    pub bin: Vector,
    pub lb: Vector,
    pub ub: Vector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: Vector,
    pub objective: f64,
    pub status: QpStatus,
    /// Scaled max of stationarity, primal feasibility and complementarity
    /// residuals at the returned iterate.
    pub kkt_residual: f64,
    /// Certified lower bound on the optimal value (objective minus the
    /// residual-based margin). Never above `objective`.
    pub dual_bound: f64,
    /// Multipliers for all constraint rows in assembly order
    /// (equalities, inequalities, upper bounds, lower bounds).
    pub multipliers: Vector,
}

impl QpProblem {
    /// Unconstrained problem; attach constraints with the `with_*` builders.
    pub fn new(h: Matrix, g: Vector) -> Result<Self, NumericsError> {
        let n = g.len();
        if h.nrows() != n || h.ncols() != n {
            return Err(NumericsError::DimensionMismatch(format!(
                "H is {}x{}, g has length {n}",
                h.nrows(),
                h.ncols()
            )));
        }
        let asym = (&h - h.transpose()).abs().max();
        let scale = h.abs().max().max(1.0);
        if asym > 1e-12 * scale {
            return Err(NumericsError::NotSymmetric(asym));
        }
        Ok(Self {
            h,
            g,
            c0: 0.0,
            aeq: Matrix::zeros(0, n),
            beq: Vector::zeros(0),
            ain: Matrix::zeros(0, n),
            bin: Vector::zeros(0),
            lb: Vector::from_element(n, f64::NEG_INFINITY),
            ub: Vector::from_element(n, f64::INFINITY),
        })
    }

    pub fn with_eq(mut self, aeq: Matrix, beq: Vector) -> Result<Self, NumericsError> {
        if aeq.ncols() != self.n_vars() || aeq.nrows() != beq.len() {
            return Err(NumericsError::DimensionMismatch(
                "equality constraint dimensions".into(),
            ));
        }
        self.aeq = aeq;
        self.beq = beq;
        Ok(self)
    }

    pub fn with_ineq(mut self, ain: Matrix, bin: Vector) -> Result<Self, NumericsError> {
        if ain.ncols() != self.n_vars() || ain.nrows() != bin.len() {
            return Err(NumericsError::DimensionMismatch(
                "inequality constraint dimensions".into(),
            ));
        }
        self.ain = ain;
        self.bin = bin;
        Ok(self)
    }

    pub fn with_bounds(mut self, lb: Vector, ub: Vector) -> Result<Self, NumericsError> {
        if lb.len() != self.n_vars() || ub.len() != self.n_vars() {
            return Err(NumericsError::DimensionMismatch("bound dimensions".into()));
        }
        self.lb = lb;
        self.ub = ub;
        Ok(self)
    }

    pub fn with_offset(mut self, c0: f64) -> Self {
        self.c0 = c0;
        self
    }

    pub fn n_vars(&self) -> usize {
        self.g.len()
    }

    pub fn objective(&self, x: &Vector) -> f64 {
        0.5 * (x.transpose() * &self.h * x)[(0, 0)] + self.g.dot(x) + self.c0
    }

    /// Largest constraint violation at `x` (0 for an interior point).
    pub fn violation(&self, x: &Vector) -> f64 {
        let mut v: f64 = 0.0;
        if self.aeq.nrows() > 0 {
            v = v.max((&self.aeq * x - &self.beq).abs().max());
        }
        if self.ain.nrows() > 0 {
            let r = &self.ain * x - &self.bin;
            v = v.max(r.iter().fold(0.0, |acc: f64, &ri| acc.max(ri)));
        }
        for i in 0..x.len() {
            v = v.max(self.lb[i] - x[i]).max(x[i] - self.ub[i]);
        }
        v
    }

    fn check_finite(&self) -> Result<(), NumericsError> {
        if !self.h.iter().all(|v| v.is_finite()) {
            return Err(NumericsError::NonFinite("H"));
        }
        if !self.g.iter().all(|v| v.is_finite()) {
            return Err(NumericsError::NonFinite("g"));
        }
        if !self.aeq.iter().all(|v| v.is_finite()) || !self.beq.iter().all(|v| v.is_finite()) {
            return Err(NumericsError::NonFinite("equality constraints"));
        }
        if !self.ain.iter().all(|v| v.is_finite()) || !self.bin.iter().all(|v| v.is_finite()) {
            return Err(NumericsError::NonFinite("inequality constraints"));
        }
        Ok(())
    }

    /// Rejects indefinite cost matrices. Diagonal H is checked entrywise,
    /// anything else through a symmetric eigendecomposition.
    pub fn check_psd(&self) -> Result<(), NumericsError> {
        let n = self.n_vars();
        let scale = self.h.abs().max().max(1.0);
        let diagonal_only = (0..n).all(|i| {
            (0..n).all(|j| i == j || self.h[(i, j)] == 0.0)
        });
        let min_eig = if diagonal_only {
            self.h.diagonal().min()
        } else {
            self.h.clone().symmetric_eigen().eigenvalues.min()
        };
        if min_eig < -1e-8 * scale {
            return Err(NumericsError::NotPsd(min_eig));
        }
        Ok(())
    }
}

/// Constraint rows in the assembly order shared by the solver and polish
/// passes: equalities, inequalities, finite upper bounds, finite lower bounds.
struct RowSystem {
    a: Matrix,
    b: Vector,
    n_eq: usize,
}

fn assemble_rows(p: &QpProblem) -> RowSystem {
    let n = p.n_vars();
    let ub_rows: Vec<usize> = (0..n).filter(|&i| p.ub[i].is_finite()).collect();
    let lb_rows: Vec<usize> = (0..n).filter(|&i| p.lb[i].is_finite()).collect();
    let m = p.aeq.nrows() + p.ain.nrows() + ub_rows.len() + lb_rows.len();
    let mut a = Matrix::zeros(m, n);
    let mut b = Vector::zeros(m);
    let mut r = 0;
    for i in 0..p.aeq.nrows() {
        a.row_mut(r).copy_from(&p.aeq.row(i));
        b[r] = p.beq[i];
        r += 1;
    }
    for i in 0..p.ain.nrows() {
        a.row_mut(r).copy_from(&p.ain.row(i));
        b[r] = p.bin[i];
        r += 1;
    }
    for &i in &ub_rows {
        a[(r, i)] = 1.0;
        b[r] = p.ub[i];
        r += 1;
    }
    for &i in &lb_rows {
        a[(r, i)] = -1.0;
        b[r] = -p.lb[i];
        r += 1;
    }
    RowSystem {
        a,
        b,
        n_eq: p.aeq.nrows(),
    }
}

fn dense_to_csc(m: &Matrix, upper_triangular: bool) -> CscMatrix<f64> {
    let (rows, cols) = (m.nrows(), m.ncols());
    let mut colptr = Vec::with_capacity(cols + 1);
    let mut rowval = Vec::new();
    let mut nzval = Vec::new();
    colptr.push(0);
    for j in 0..cols {
        let row_limit = if upper_triangular { j + 1 } else { rows };
        for i in 0..row_limit {
            let v = m[(i, j)];
            if v != 0.0 {
                rowval.push(i);
                nzval.push(v);
            }
        }
        colptr.push(rowval.len());
    }
    CscMatrix::new(rows, cols, colptr, rowval, nzval)
}

/// KKT residuals of the primal/dual pair `(x, z)` for the row system.
/// Returns (scaled residual, stationarity in absolute terms, comp sum).
fn kkt_residuals(p: &QpProblem, rows: &RowSystem, x: &Vector, z: &Vector) -> (f64, f64, f64) {
    let stat = (&p.h * x + &p.g + rows.a.transpose() * z).abs().max();
    let mut pri: f64 = 0.0;
    let mut comp: f64 = 0.0;
    let resid = &rows.a * x - &rows.b;
    for i in 0..rows.a.nrows() {
        if i < rows.n_eq {
            pri = pri.max(resid[i].abs());
        } else {
            pri = pri.max(resid[i]);
            comp += z[i] * resid[i];
        }
    }
    let g_scale = 1.0 + p.g.abs().max();
    let b_scale = 1.0 + if rows.b.len() > 0 { rows.b.abs().max() } else { 0.0 };
    let scaled = (stat / g_scale).max(pri / b_scale).max(comp.abs() / g_scale);
    (scaled, stat, comp)
}

/// Refine the interior-point iterate by solving the equality-constrained QP
/// on the detected active set. Returns the polished pair when it improves
/// the residual and stays feasible.
fn polish(
    p: &QpProblem,
    rows: &RowSystem,
    x: &Vector,
    z: &Vector,
) -> Option<(Vector, Vector)> {
    let n = p.n_vars();
    let m = rows.a.nrows();
    let resid = &rows.a * x - &rows.b;
    let b_scale = 1.0 + if rows.b.len() > 0 { rows.b.abs().max() } else { 0.0 };
    let z_scale = 1.0 + z.abs().max();
    let mut active: Vec<usize> = Vec::new();
    for i in 0..m {
        let is_active = i < rows.n_eq
            || resid[i].abs() <= 1e-6 * b_scale
            || z[i] >= 1e-6 * z_scale;
        if is_active {
            active.push(i);
        }
    }
    let na = active.len();

    // KKT system of the equality-constrained subproblem, with a tiny dual
    // regularization so redundant active rows stay solvable.
    let dim = n + na;
    let mut k = Matrix::zeros(dim, dim);
    k.view_mut((0, 0), (n, n)).copy_from(&p.h);
    for (j, &row) in active.iter().enumerate() {
        for c in 0..n {
            k[(n + j, c)] = rows.a[(row, c)];
            k[(c, n + j)] = rows.a[(row, c)];
        }
        k[(n + j, n + j)] = -1e-12;
    }
    let mut rhs = Vector::zeros(dim);
    for i in 0..n {
        rhs[i] = -p.g[i];
    }
    for (j, &row) in active.iter().enumerate() {
        rhs[n + j] = rows.b[row];
    }

    let lu = k.clone().full_piv_lu();
    let mut sol = lu.solve(&rhs)?;
    // One round of iterative refinement.
    let correction = lu.solve(&(&rhs - &k * &sol))?;
    sol += correction;

    let x_new = sol.rows(0, n).into_owned();
    let mut z_new = Vector::zeros(m);
    for (j, &row) in active.iter().enumerate() {
        z_new[row] = sol[n + j];
    }

    // Reject if the polished point leaves the feasible set or produces
    // negative multipliers on inequality rows.
    let resid_new = &rows.a * &x_new - &rows.b;
    for i in 0..m {
        let tol = 1e-7 * b_scale;
        if i < rows.n_eq {
            if resid_new[i].abs() > tol {
                return None;
            }
        } else if resid_new[i] > tol {
            return None;
        }
    }
    for i in rows.n_eq..m {
        if z_new[i] < -1e-7 * z_scale {
            return None;
        }
    }
    Some((x_new, z_new))
}

/// Solve a convex QP to the requested KKT tolerance.
///
/// On `Optimal` the returned iterate satisfies stationarity, feasibility and
/// complementarity within `tol` (scaled). `Infeasible` carries a certificate
/// from the backend; `MaxIter` returns the best iterate found.
pub fn solve_qp(p: &QpProblem, tol: f64) -> Result<QpSolution, NumericsError> {
    p.check_finite()?;
    p.check_psd()?;
    solve_qp_prechecked(p, tol)
}

/// Same as [`solve_qp`] but skips the PSD check; used by branch-and-bound
/// where the cost matrix is fixed across many node solves.
pub(crate) fn solve_qp_prechecked(
    p: &QpProblem,
    tol: f64,
) -> Result<QpSolution, NumericsError> {
    for i in 0..p.n_vars() {
        if p.lb[i] > p.ub[i] {
            // Crossed bounds make the whole problem trivially infeasible.
            return Ok(QpSolution {
                x: Vector::zeros(p.n_vars()),
                objective: f64::INFINITY,
                status: QpStatus::Infeasible,
                kkt_residual: f64::INFINITY,
                dual_bound: f64::INFINITY,
                multipliers: Vector::zeros(0),
            });
        }
    }

    let rows = assemble_rows(p);
    let p_csc = dense_to_csc(&p.h, true);
    let a_csc = dense_to_csc(&rows.a, false);
    let q: Vec<f64> = p.g.iter().copied().collect();
    let b: Vec<f64> = rows.b.iter().copied().collect();
    let cones: Vec<SupportedConeT<f64>> = vec![
        ZeroConeT(rows.n_eq),
        NonnegativeConeT(rows.a.nrows() - rows.n_eq),
    ];
    let settings = DefaultSettingsBuilder::default()
        .verbose(false)
        .tol_gap_abs(1e-10)
        .tol_gap_rel(1e-10)
        .tol_feas(1e-10)
        .max_iter(200)
        .build()
        .map_err(|e| NumericsError::Backend(e.to_string()))?;
    let mut solver = DefaultSolver::new(&p_csc, &q, &a_csc, &b, &cones, settings)
        .map_err(|e| NumericsError::Backend(format!("{e:?}")))?;
    solver.solve();

    match solver.solution.status {
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            return Ok(QpSolution {
                x: Vector::zeros(p.n_vars()),
                objective: f64::INFINITY,
                status: QpStatus::Infeasible,
                kkt_residual: f64::INFINITY,
                dual_bound: f64::INFINITY,
                multipliers: Vector::zeros(0),
            });
        }
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => {
            return Err(NumericsError::Unbounded);
        }
        _ => {}
    }

    let mut x = Vector::from_vec(solver.solution.x.clone());
    let mut z = Vector::from_vec(solver.solution.z.clone());
    let (mut res, _, _) = kkt_residuals(p, &rows, &x, &z);

    if let Some((x_pol, z_pol)) = polish(p, &rows, &x, &z) {
        let (res_pol, _, _) = kkt_residuals(p, &rows, &x_pol, &z_pol);
        if res_pol <= res {
            x = x_pol;
            z = z_pol;
            res = res_pol;
        }
    }

    let objective = p.objective(&x);
    let (_, stat_abs, comp) = kkt_residuals(p, &rows, &x, &z);
    let margin = stat_abs * (1.0 + x.abs().sum()) + comp.abs();
    let status = if res <= tol {
        QpStatus::Optimal
    } else {
        QpStatus::MaxIter
    };
    Ok(QpSolution {
        x,
        objective,
        status,
        kkt_residual: res,
        dual_bound: objective - margin,
        multipliers: z,
    })
}
