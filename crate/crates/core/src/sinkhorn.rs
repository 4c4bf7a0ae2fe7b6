//! Entropic optimal transport between discrete measures via Sinkhorn
//! fixed-point iterations on the dual potentials.
//!
//! The plan has density `exp((f(x) + g(y) - c(x, y)) / lambda)` with respect
//! to the product of the marginals. Potentials are iterated as
//!
//! ```text
//! f = -lambda * log sum_j nu_j exp((g_j - c_ij) / lambda)
//! g = -lambda * log sum_i mu_i exp((f_i - c_ij) / lambda)
//! ```
//!
//! either in the log domain (max-shifted log-sum-exp, default) or on the
//! scaling vectors `exp(f / lambda)`, `exp(g / lambda)` when the kernel
//! `exp(-c / lambda)` is representable.

use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::measure::{CostMatrix, DiscreteMeasure};
use crate::scalar::Scalar;
use crate::stabilized::iterate_sparse;

/// Solver parameters. `lambda` is in cost units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig<T> {
    pub lambda: T,
    pub max_iters: usize,
    /// L1 tolerance on the column marginal after a full sweep.
    pub marginal_tol: T,
    pub log_domain: bool,
    /// Iterate on a truncated kernel with absorption (see the `stabilized`
    /// module); takes precedence over `log_domain`.
    pub truncated: bool,
    /// Geometric factor in `(0, 1)` for solving a decreasing sequence of
    /// regularizations ending at `lambda`, each warm-starting the next.
    /// `None` runs plain Sinkhorn at `lambda`, which needs a number of
    /// sweeps that grows like `1 / tol` once `lambda` is small next to the
    /// cost gaps. Ignored with a warm start unless `eps_start` is set.
    pub eps_scaling: Option<T>,
    /// First regularization of the sequence; defaults to the largest cost.
    pub eps_start: Option<T>,
    /// Over-relaxation factor in `(0, 2)` for the truncated solver.
    pub relaxation: T,
}

impl<T: Scalar> SolverConfig<T> {
    pub const DEFAULT_MAX_ITERS: usize = 10_000;
    pub const DEFAULT_MARGINAL_TOL: f64 = 1e-9;
    pub const DEFAULT_EPS_SCALING: f64 = 0.5;

    pub fn new(lambda: T) -> Self {
        Self {
            lambda,
            max_iters: Self::DEFAULT_MAX_ITERS,
            marginal_tol: T::lit(Self::DEFAULT_MARGINAL_TOL),
            log_domain: true,
            truncated: false,
            eps_scaling: Some(T::lit(Self::DEFAULT_EPS_SCALING)),
            eps_start: None,
            relaxation: T::one(),
        }
    }

    /// Loosest marginal tolerance used on intermediate regularizations.
    pub const STAGE_TOL: f64 = 1e-3;

    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }

    pub fn with_marginal_tol(mut self, tol: T) -> Self {
        self.marginal_tol = tol;
        self
    }

    pub fn with_log_domain(mut self, on: bool) -> Self {
        self.log_domain = on;
        self
    }

    pub fn with_truncation(mut self, on: bool) -> Self {
        self.truncated = on;
        self
    }

    pub fn with_eps_scaling(mut self, factor: Option<T>) -> Self {
        self.eps_scaling = factor;
        self
    }

    pub fn with_relaxation(mut self, omega: T) -> Self {
        self.relaxation = omega;
        self
    }

    pub fn with_eps_start(mut self, start: Option<T>) -> Self {
        self.eps_start = start;
        self
    }

    /// Regularizations visited by the solver, ending with `lambda`.
    pub fn schedule(&self, max_cost: T) -> Vec<T> {
        let mut out = Vec::new();
        if let Some(factor) = self.eps_scaling {
            let mut eps = self.eps_start.unwrap_or(max_cost);
            while eps > self.lambda {
                out.push(eps);
                eps = eps * factor;
            }
        }
        out.push(self.lambda);
        out
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(f) = self.eps_scaling {
            if !(f > T::zero() && f < T::one()) {
                return Err(invalid("eps_scaling", format!("factor must lie in (0, 1), got {f}")));
            }
        }
        if !(self.relaxation > T::zero() && self.relaxation < T::lit(2.0)) {
            return Err(invalid("relaxation", format!("must lie in (0, 2), got {}", self.relaxation)));
        }
        if let Some(e) = self.eps_start {
            if !(e > T::zero()) || !e.is_finite() {
                return Err(invalid("eps_start", "must be positive and finite"));
            }
        }
        if !(self.lambda > T::zero()) || !self.lambda.is_finite() {
            return Err(invalid("lambda", format!("must be positive and finite, got {}", self.lambda)));
        }
        if !(self.marginal_tol > T::zero()) {
            return Err(invalid("marginal_tol", "must be positive"));
        }
        if self.max_iters == 0 {
            return Err(invalid("max_iters", "must be at least 1"));
        }
        Ok(())
    }
}

/// Dual potentials on the source (`f`) and target (`g`) supports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Potentials<T> {
    pub f: Vec<T>,
    pub g: Vec<T>,
}

impl<T: Scalar> Potentials<T> {
    pub fn zeros(m: usize, n: usize) -> Self {
        Self {
            f: vec![T::zero(); m],
            g: vec![T::zero(); n],
        }
    }

    /// Potentials restricted to a subset of atoms, e.g. as a warm start for a
    /// resampled problem.
    pub fn restrict(&self, rows: &[usize], cols: &[usize]) -> Self {
        Self {
            f: rows.iter().map(|&i| self.f[i]).collect(),
            g: cols.iter().map(|&j| self.g[j]).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EotSolution<T> {
    pub lambda: T,
    pub potentials: Potentials<T>,
    /// `m x n` transport plan, rows indexed by source atoms.
    pub plan: Array2<T>,
    pub primal_value: T,
    pub dual_value: T,
    /// Number of full sweeps performed.
    pub iterations: usize,
    pub final_marginal_error: T,
    pub converged: bool,
}

impl<T: Scalar> EotSolution<T> {
    /// Fails with [`Error::NotConverged`] unless the tolerance was met.
    pub fn into_converged(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::NotConverged {
                iterations: self.iterations,
                marginal_error: self.final_marginal_error.as_f64(),
            })
        }
    }

    pub fn summary(&self) -> SolutionSummary {
        SolutionSummary {
            lambda: self.lambda.as_f64(),
            iterations: self.iterations,
            converged: self.converged,
            final_marginal_error: self.final_marginal_error.as_f64(),
            primal_value: self.primal_value.as_f64(),
            dual_value: self.dual_value.as_f64(),
            f: self.potentials.f.iter().map(|x| x.as_f64()).collect(),
            g: self.potentials.g.iter().map(|x| x.as_f64()).collect(),
        }
    }

    pub fn write_plan_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        write_plan(&self.plan, std::io::BufWriter::new(file))
    }
}

/// JSON form of a solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionSummary {
    pub lambda: f64,
    pub iterations: usize,
    pub converged: bool,
    pub final_marginal_error: f64,
    pub primal_value: f64,
    pub dual_value: f64,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
}

/// Dense plan as headerless CSV, one line per source atom.
pub fn write_plan<T: Scalar, W: Write>(plan: &Array2<T>, writer: W) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    for row in plan.rows() {
        wtr.write_record(row.iter().map(|x| format!("{:e}", x.as_f64())))?;
    }
    wtr.flush()?;
    Ok(())
}

/// Solves the entropic problem; non-convergence is an error.
pub fn solve<T: Scalar>(
    src: &DiscreteMeasure<T>,
    tgt: &DiscreteMeasure<T>,
    cost: &CostMatrix<T>,
    cfg: &SolverConfig<T>,
) -> Result<EotSolution<T>> {
    solve_with(src, tgt, cost, cfg, None)?.into_converged()
}

/// Solves the entropic problem from optional warm-start potentials.
///
/// Returns the last iterate even when `max_iters` is exhausted; check
/// [`EotSolution::converged`] or call [`EotSolution::into_converged`].
pub fn solve_with<T: Scalar>(
    src: &DiscreteMeasure<T>,
    tgt: &DiscreteMeasure<T>,
    cost: &CostMatrix<T>,
    cfg: &SolverConfig<T>,
    warm: Option<&Potentials<T>>,
) -> Result<EotSolution<T>> {
    cfg.validate()?;
    let (m, n) = (src.len(), tgt.len());
    check_shape(cost, m, n)?;
    if let Some(w) = warm {
        if w.f.len() != m || w.g.len() != n {
            return Err(Error::LengthMismatch {
                what: "warm-start potentials",
                expected: m + n,
                got: w.f.len() + w.g.len(),
            });
        }
    }

    let (mu, nu) = (src.weights(), tgt.weights());
    // warm potentials are taken to be close to the solution at `lambda`
    // unless the caller asks for a specific starting level
    let schedule = if warm.is_some() && cfg.eps_start.is_none() {
        vec![cfg.lambda]
    } else {
        cfg.schedule(cost.max_cost())
    };
    let stage_tol = cfg.marginal_tol.max(T::lit(SolverConfig::<T>::STAGE_TOL));
    let state = if cfg.truncated {
        let p = warm.cloned().unwrap_or_else(|| Potentials::zeros(m, n));
        iterate_sparse(
            mu,
            nu,
            cost,
            &schedule,
            cfg.marginal_tol,
            stage_tol,
            cfg.max_iters,
            cfg.relaxation,
            p.f,
            p.g,
        )
    } else {
        iterate_dense(mu, nu, cost, cfg, &schedule, stage_tol, warm)?
    };
    let IterState {
        mut f,
        mut g,
        iterations,
        error,
        converged,
    } = state;

    // Fix the additive gauge so that g has zero mean under nu.
    let shift: T = g.iter().zip(tgt.weights()).map(|(&gj, &w)| gj * w).sum();
    g.iter_mut().for_each(|x| *x = *x - shift);
    f.iter_mut().for_each(|x| *x = *x + shift);

    let potentials = Potentials { f, g };
    let plan = assemble_plan(src, tgt, cost, &potentials, cfg.lambda);
    let primal_value = primal_objective(&plan, cost, src, tgt, cfg.lambda)?;
    let dual_value = dual_objective(src, tgt, cost, &potentials, cfg.lambda)?;
    Ok(EotSolution {
        lambda: cfg.lambda,
        potentials,
        plan,
        primal_value,
        dual_value,
        iterations,
        final_marginal_error: error,
        converged,
    })
}

/// Dense iterations over the regularizations in `schedule`.
fn iterate_dense<T: Scalar>(
    mu: &[T],
    nu: &[T],
    cost: &CostMatrix<T>,
    cfg: &SolverConfig<T>,
    schedule: &[T],
    stage_tol: T,
    warm: Option<&Potentials<T>>,
) -> Result<IterState<T>> {
    let mut current = warm.cloned();
    let mut iterations = 0;
    for (k, &eps) in schedule.iter().enumerate() {
        let last = k + 1 == schedule.len();
        let stage = SolverConfig {
            lambda: eps,
            max_iters: cfg.max_iters - iterations,
            marginal_tol: if last { cfg.marginal_tol } else { stage_tol },
            ..*cfg
        };
        let mut state = if cfg.log_domain {
            iterate_log(mu, nu, cost, &stage, current.as_ref())
        } else {
            iterate_scaling(mu, nu, cost, &stage, current.as_ref())?
        };
        iterations += state.iterations;
        let exhausted = iterations >= cfg.max_iters || !state.error.is_finite();
        if last || exhausted {
            state.iterations = iterations;
            // a budget spent on an intermediate level never reached `lambda`
            state.converged &= last;
            return Ok(state);
        }
        current = Some(Potentials {
            f: state.f,
            g: state.g,
        });
    }
    unreachable!("the schedule ends with lambda")
}

fn check_shape<T: Scalar>(cost: &CostMatrix<T>, m: usize, n: usize) -> Result<()> {
    if cost.shape() != (m, n) {
        return Err(Error::LengthMismatch {
            what: "cost matrix",
            expected: m * n,
            got: cost.rows() * cost.cols(),
        });
    }
    Ok(())
}

pub(crate) struct IterState<T> {
    pub f: Vec<T>,
    pub g: Vec<T>,
    pub iterations: usize,
    pub error: T,
    pub converged: bool,
}

/// Terms more than this far below the row maximum (in log space) are skipped;
/// together they change the sum by well under one ulp.
pub(crate) fn underflow_cutoff<T: Scalar>(len: usize) -> T {
    T::epsilon().ln() - T::from_usize_lossy(len.max(1)).ln() - T::lit(2.0)
}

/// `-lambda * log sum_k exp(a_k)` for the row `a`, max-shifted.
#[inline]
pub(crate) fn neg_lse<T: Scalar>(a: impl Iterator<Item = T> + Clone, lambda: T, cutoff: T) -> T {
    let max = a.clone().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for x in a {
        let z = x - max;
        if z > cutoff {
            sum = sum + z.exp();
        }
    }
    -lambda * (max + sum.ln())
}

fn iterate_log<T: Scalar>(
    mu: &[T],
    nu: &[T],
    cost: &CostMatrix<T>,
    cfg: &SolverConfig<T>,
    warm: Option<&Potentials<T>>,
) -> IterState<T> {
    let lambda = cfg.lambda;
    let inv = T::one() / lambda;
    let (cutoff_f, cutoff_g) = (underflow_cutoff::<T>(nu.len()), underflow_cutoff::<T>(mu.len()));
    let scaled = cost.entries().mapv(|c| c * inv);
    let scaled_t = scaled.t().as_standard_layout().into_owned();
    let log_mu: Vec<T> = mu.iter().map(|w| w.ln()).collect();
    let log_nu: Vec<T> = nu.iter().map(|w| w.ln()).collect();
    let (m, n) = (mu.len(), nu.len());

    let mut g = warm.map_or_else(|| vec![T::zero(); n], |w| w.g.clone());
    let mut f = vec![T::zero(); m];
    let mut aux = vec![T::zero(); n.max(m)];

    let update_f = |g: &[T], f: &mut [T], aux: &mut [T]| {
        for ((a, &gj), &ln) in aux.iter_mut().zip(g).zip(&log_nu) {
            *a = gj * inv + ln;
        }
        let aux = &aux[..n];
        for (fi, row) in f.iter_mut().zip(scaled.rows()) {
            let row = row.to_slice().expect("standard layout");
            *fi = neg_lse(aux.iter().zip(row).map(|(&a, &c)| a - c), lambda, cutoff_f);
        }
    };
    let update_g = |f: &[T], out: &mut [T], aux: &mut [T]| {
        for ((a, &fi), &lm) in aux.iter_mut().zip(f).zip(&log_mu) {
            *a = fi * inv + lm;
        }
        let aux = &aux[..m];
        for (gj, col) in out.iter_mut().zip(scaled_t.rows()) {
            let col = col.to_slice().expect("standard layout");
            *gj = neg_lse(aux.iter().zip(col).map(|(&a, &c)| a - c), lambda, cutoff_g);
        }
    };

    update_f(&g, &mut f, &mut aux);
    let mut g_next = vec![T::zero(); n];
    let mut iterations = 0;
    loop {
        update_g(&f, &mut g_next, &mut aux);
        // Column marginal of the current iterate is nu_j * exp((g_j - g_next_j) / lambda).
        let error: T = g
            .iter()
            .zip(&g_next)
            .zip(nu)
            .map(|((&gj, &gn), &w)| w * (((gj - gn) * inv).exp() - T::one()).abs())
            .sum();
        let converged = error <= cfg.marginal_tol;
        if converged || iterations >= cfg.max_iters || !error.is_finite() {
            return IterState {
                f,
                g,
                iterations,
                error,
                converged,
            };
        }
        std::mem::swap(&mut g, &mut g_next);
        update_f(&g, &mut f, &mut aux);
        iterations += 1;
    }
}

fn iterate_scaling<T: Scalar>(
    mu: &[T],
    nu: &[T],
    cost: &CostMatrix<T>,
    cfg: &SolverConfig<T>,
    warm: Option<&Potentials<T>>,
) -> Result<IterState<T>> {
    let lambda = cfg.lambda;
    let inv = T::one() / lambda;
    let kernel = cost.entries().mapv(|c| (-c * inv).exp());
    let (m, n) = (mu.len(), nu.len());

    // u_i = exp(f_i / lambda), v_j = exp(g_j / lambda)
    let mut v: Vec<T> = match warm {
        Some(w) => w.g.iter().map(|&x| (x * inv).exp()).collect(),
        None => vec![T::one(); n],
    };
    let finite_positive = |x: &T| x.is_finite() && *x > T::zero();
    if !v.iter().all(finite_positive) {
        return Err(Error::Overflow);
    }
    let mut u = vec![T::zero(); m];
    let mut weighted = vec![T::zero(); n.max(m)];
    let mut col_sums = vec![T::zero(); n];

    let update_u = |v: &[T], u: &mut [T], weighted: &mut [T]| -> Result<()> {
        for ((w, &vj), &nj) in weighted.iter_mut().zip(v).zip(nu) {
            *w = vj * nj;
        }
        let weighted = &weighted[..n];
        for (ui, row) in u.iter_mut().zip(kernel.rows()) {
            let row = row.to_slice().expect("standard layout");
            let s: T = row.iter().zip(weighted).map(|(&k, &w)| k * w).sum();
            *ui = T::one() / s;
            if !finite_positive(ui) {
                return Err(Error::Overflow);
            }
        }
        Ok(())
    };
    // col_sums_j = sum_i K_ij mu_i u_i, streamed row by row.
    let column_sums = |u: &[T], col_sums: &mut [T]| {
        col_sums.iter_mut().for_each(|s| *s = T::zero());
        for ((&ui, &mi), row) in u.iter().zip(mu).zip(kernel.rows()) {
            let a = ui * mi;
            let row = row.to_slice().expect("standard layout");
            for (s, &k) in col_sums.iter_mut().zip(row) {
                *s = *s + k * a;
            }
        }
    };

    update_u(&v, &mut u, &mut weighted)?;
    let mut iterations = 0;
    loop {
        column_sums(&u, &mut col_sums);
        let error: T = v
            .iter()
            .zip(&col_sums)
            .zip(nu)
            .map(|((&vj, &s), &w)| w * (vj * s - T::one()).abs())
            .sum();
        if !error.is_finite() {
            return Err(Error::Overflow);
        }
        let converged = error <= cfg.marginal_tol;
        if converged || iterations >= cfg.max_iters {
            let f = u.iter().map(|&x| lambda * x.ln()).collect();
            let g = v.iter().map(|&x| lambda * x.ln()).collect();
            return Ok(IterState {
                f,
                g,
                iterations,
                error,
                converged,
            });
        }
        for (vj, &s) in v.iter_mut().zip(&col_sums) {
            *vj = T::one() / s;
            if !finite_positive(vj) {
                return Err(Error::Overflow);
            }
        }
        update_u(&v, &mut u, &mut weighted)?;
        iterations += 1;
    }
}

/// `pi_ij = mu_i nu_j exp((f_i + g_j - c_ij) / lambda)`.
pub fn assemble_plan<T: Scalar>(
    src: &DiscreteMeasure<T>,
    tgt: &DiscreteMeasure<T>,
    cost: &CostMatrix<T>,
    potentials: &Potentials<T>,
    lambda: T,
) -> Array2<T> {
    let inv = T::one() / lambda;
    let mut plan = Array2::zeros(cost.shape());
    for (i, (mut out, c)) in plan.rows_mut().into_iter().zip(cost.entries().rows()).enumerate() {
        let (mi, fi) = (src.weights()[i], potentials.f[i]);
        for (j, (p, &cij)) in out.iter_mut().zip(c.iter()).enumerate() {
            let nj = tgt.weights()[j];
            *p = mi * nj * ((fi + potentials.g[j] - cij) * inv).exp();
        }
    }
    plan
}

/// Dual objective `sum mu_i nu_j (f_i + g_j - lambda exp((f_i + g_j - c_ij)/lambda)) + lambda`.
pub fn dual_objective<T: Scalar>(
    src: &DiscreteMeasure<T>,
    tgt: &DiscreteMeasure<T>,
    cost: &CostMatrix<T>,
    potentials: &Potentials<T>,
    lambda: T,
) -> Result<T> {
    let (m, n) = (src.len(), tgt.len());
    check_shape(cost, m, n)?;
    if potentials.f.len() != m || potentials.g.len() != n {
        return Err(Error::LengthMismatch {
            what: "potentials",
            expected: m + n,
            got: potentials.f.len() + potentials.g.len(),
        });
    }
    let inv = T::one() / lambda;
    let mut total = T::zero();
    for (i, c) in cost.entries().rows().into_iter().enumerate() {
        let (mi, fi) = (src.weights()[i], potentials.f[i]);
        let mut row = T::zero();
        for (j, &cij) in c.iter().enumerate() {
            let s = fi + potentials.g[j];
            row = row + tgt.weights()[j] * (s - lambda * ((s - cij) * inv).exp());
        }
        total = total + mi * row;
    }
    Ok(total + lambda)
}

/// Primal objective `sum c pi + lambda KL(pi | mu x nu)` with `0 log 0 = 0`.
pub fn primal_objective<T: Scalar>(
    plan: &Array2<T>,
    cost: &CostMatrix<T>,
    src: &DiscreteMeasure<T>,
    tgt: &DiscreteMeasure<T>,
    lambda: T,
) -> Result<T> {
    let (m, n) = (src.len(), tgt.len());
    check_shape(cost, m, n)?;
    if plan.dim() != (m, n) {
        return Err(Error::LengthMismatch {
            what: "plan",
            expected: m * n,
            got: plan.len(),
        });
    }
    let mut transport = T::zero();
    let mut kl = T::zero();
    for ((i, j), &p) in plan.indexed_iter() {
        if p == T::zero() {
            continue;
        }
        let reference = src.weights()[i] * tgt.weights()[j];
        if reference <= T::zero() {
            return Err(Error::InfiniteKl {
                row: i,
                col: j,
                mass: p.as_f64(),
            });
        }
        transport = transport + cost.entries()[[i, j]] * p;
        kl = kl + p * (p / reference).ln();
    }
    Ok(transport + lambda * kl)
}

/// Largest deviation of the plan from the independent coupling `mu x nu`.
pub fn independent_coupling_limit_check<T: Scalar>(
    solution: &EotSolution<T>,
    src: &DiscreteMeasure<T>,
    tgt: &DiscreteMeasure<T>,
) -> T {
    solution
        .plan
        .indexed_iter()
        .map(|((i, j), &p)| (p - src.weights()[i] * tgt.weights()[j]).abs())
        .fold(T::zero(), T::max)
}

/// Row and column sums of a plan.
pub fn marginals<T: Scalar>(plan: &Array2<T>) -> (Vec<T>, Vec<T>) {
    let rows = plan.rows().into_iter().map(|r| r.iter().copied().sum()).collect();
    let mut cols = vec![T::zero(); plan.ncols()];
    for r in plan.rows() {
        for (c, &p) in cols.iter_mut().zip(r.iter()) {
            *c = *c + p;
        }
    }
    (rows, cols)
}
