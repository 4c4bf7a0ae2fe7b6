//! Sinkhorn on a truncated kernel with absorption of the scalings into the
//! potentials, for small `lambda` where the plan is nearly sparse.
//!
//! The kernel `exp((f_i + g_j - c_ij) / eps)` is stored only where the
//! exponent is above a threshold. Scalings `u`, `v` are iterated on that
//! kernel and absorbed into `f`, `g` when they leave `[exp(-TAU), exp(TAU)]`.
//! Every dropped pair is known to satisfy `f_i + g_j - c_ij <= bound`; the
//! full cost matrix is rescanned only when that bound, shifted by the current
//! scalings, no longer keeps the dropped mass of each row far below the
//! marginal tolerance (or machine precision, whichever is larger).

use crate::measure::CostMatrix;
use crate::scalar::Scalar;
use crate::sinkhorn::{neg_lse, underflow_cutoff, IterState};

const TAU: f64 = 5.0;
/// Extra room below the drop threshold, in units of `eps`, so that
/// potentials may drift for a while before a full rescan.
const MARGIN: f64 = 10.0;

/// Dropped entries must stay below `exp(-negligible)` relative to their row:
/// a thousandth of `tol`, and no finer than machine precision.
fn negligible<T: Scalar>(tol: T) -> T {
    let precision = T::lit(2.0) - T::epsilon().ln();
    let target = T::lit(1000.0f64.ln()) - tol.ln();
    precision.min(target)
}

/// Kernel entries, assembled as triplets and stored compressed by rows and by
/// columns.
#[derive(Default)]
struct SparseKernel<T> {
    rows: Vec<u32>,
    cols: Vec<u32>,
    values: Vec<T>,
    by_row: Compressed<T>,
    by_col: Compressed<T>,
    /// Upper bound on `f_i + g_j - c_ij` over dropped pairs at the last scan,
    /// in cost units; `drift_*` accumulate potential changes since then.
    bound: T,
    drift_f: Vec<T>,
    drift_g: Vec<T>,
    negligible: T,
    theta: T,
}

#[derive(Default)]
struct Compressed<T> {
    start: Vec<usize>,
    index: Vec<u32>,
    values: Vec<T>,
}

impl<T: Scalar> Compressed<T> {
    /// Counting sort of the triplets on `major`.
    fn fill(&mut self, len: usize, major: &[u32], minor: &[u32], values: &[T]) {
        self.start.clear();
        self.start.resize(len + 1, 0);
        for &a in major {
            self.start[a as usize + 1] += 1;
        }
        for k in 0..len {
            self.start[k + 1] += self.start[k];
        }
        let mut next = self.start[..len].to_vec();
        self.index.clear();
        self.index.resize(major.len(), 0);
        self.values.clear();
        self.values.resize(major.len(), T::zero());
        for ((&a, &b), &x) in major.iter().zip(minor).zip(values) {
            let slot = &mut next[a as usize];
            self.index[*slot] = b;
            self.values[*slot] = x;
            *slot += 1;
        }
    }

    fn has_empty_line(&self) -> bool {
        self.start.windows(2).any(|w| w[0] == w[1])
    }

    /// `out[a] = sum_k values[a, k] * w[index[a, k]]`.
    fn apply(&self, w: &[T], out: &mut [T]) {
        for (a, o) in out.iter_mut().enumerate() {
            let range = self.start[a]..self.start[a + 1];
            *o = self.index[range.clone()]
                .iter()
                .zip(&self.values[range])
                .fold(T::zero(), |acc, (&b, &x)| acc + x * w[b as usize]);
        }
    }
}

impl<T: Scalar> SparseKernel<T> {
    fn set_tolerance(&mut self, tol: T) {
        self.negligible = negligible(tol);
        self.theta = T::lit(2.0 * TAU + MARGIN) + self.negligible;
    }

    fn push(&mut self, i: usize, j: usize, value: T) {
        self.rows.push(i as u32);
        self.cols.push(j as u32);
        self.values.push(value);
    }

    fn compress(&mut self, m: usize, n: usize) {
        self.by_row.fill(m, &self.rows, &self.cols, &self.values);
        self.by_col.fill(n, &self.cols, &self.rows, &self.values);
    }

    /// Full rescan: exact log-domain `f` update, then every pair with
    /// exponent at least `-theta`. Columns left empty get an exact `g` update
    /// and are rescanned.
    fn rebuild(&mut self, mu: &[T], nu: &[T], cost: &CostMatrix<T>, eps: T, f: &mut [T], g: &mut [T]) {
        let inv = T::one() / eps;
        let theta = self.theta;
        let (cut_f, cut_g) = (underflow_cutoff::<T>(nu.len()), underflow_cutoff::<T>(mu.len()));
        let log_nu: Vec<T> = nu.iter().map(|w| w.ln()).collect();
        let c = cost.entries();
        self.rows.clear();
        self.cols.clear();
        self.values.clear();
        let mut col_max = vec![T::neg_infinity(); nu.len()];
        let mut buf = vec![T::zero(); nu.len()];

        for (i, row) in c.rows().into_iter().enumerate() {
            let row = row.to_slice().expect("standard layout");
            for ((b, (&gj, &cij)), &ln) in buf.iter_mut().zip(g.iter().zip(row)).zip(&log_nu) {
                *b = (gj - cij) * inv + ln;
            }
            f[i] = neg_lse(buf.iter().copied(), eps, cut_f);
            let fi = f[i] * inv;
            for (j, (&gj, &cij)) in g.iter().zip(row).enumerate() {
                let z = fi + (gj - cij) * inv;
                if z > col_max[j] {
                    col_max[j] = z;
                }
                if z >= -theta {
                    self.push(i, j, z.exp());
                }
            }
        }

        let log_mu: Vec<T> = mu.iter().map(|w| w.ln()).collect();
        for (j, &cm) in col_max.iter().enumerate() {
            if cm >= -theta {
                continue;
            }
            let col = c.column(j);
            g[j] = neg_lse(
                f.iter().zip(col.iter()).zip(&log_mu).map(|((&fi, &cij), &lm)| (fi - cij) * inv + lm),
                eps,
                cut_g,
            );
            for (i, (&fi, &cij)) in f.iter().zip(col.iter()).enumerate() {
                let z = (fi + g[j] - cij) * inv;
                if z >= -theta {
                    self.push(i, j, z.exp());
                }
            }
        }
        self.bound = -theta * eps;
        self.reset_drift(mu.len(), nu.len());
        self.compress(mu.len(), nu.len());
    }

    fn reset_drift(&mut self, m: usize, n: usize) {
        self.drift_f.clear();
        self.drift_f.resize(m, T::zero());
        self.drift_g.clear();
        self.drift_g.resize(n, T::zero());
    }

    /// Current bound on `f_i + g_j - c_ij` over dropped pairs.
    fn current_bound(&self) -> T {
        self.bound + max_of(&self.drift_f) + max_of(&self.drift_g)
    }

    /// Moves the scalings into the potentials and rescales stored entries
    /// accordingly.
    fn absorb(&mut self, eps: T, f: &mut [T], g: &mut [T], u: &mut [T], v: &mut [T]) {
        for (a, ((p, d), s)) in f.iter_mut().zip(&mut self.drift_f).zip(u.iter()).enumerate() {
            let shift = eps * s.ln();
            *p = *p + shift;
            *d = *d + shift;
            let range = self.by_row.start[a]..self.by_row.start[a + 1];
            for (x, &b) in self.by_row.values[range.clone()].iter_mut().zip(&self.by_row.index[range]) {
                *x = *x * *s * v[b as usize];
            }
        }
        for (b, ((p, d), s)) in g.iter_mut().zip(&mut self.drift_g).zip(v.iter()).enumerate() {
            let shift = eps * s.ln();
            *p = *p + shift;
            *d = *d + shift;
            let range = self.by_col.start[b]..self.by_col.start[b + 1];
            for (x, &a) in self.by_col.values[range.clone()].iter_mut().zip(&self.by_col.index[range]) {
                *x = *x * *s * u[a as usize];
            }
        }
        u.iter_mut().for_each(|x| *x = T::one());
        v.iter_mut().for_each(|x| *x = T::one());
    }

    /// Recomputes stored entries for the current potentials and `eps`,
    /// dropping those that fell below `-theta`. Returns `false` when a full
    /// rescan is required instead.
    fn refilter(&mut self, cost: &CostMatrix<T>, eps: T, f: &[T], g: &[T]) -> bool {
        let inv = T::one() / eps;
        let theta = self.theta;
        let bound = self.current_bound().max(-theta * eps);
        if bound > -self.negligible * eps {
            return false;
        }
        let c = cost.entries();
        let mut kept = 0;
        for k in 0..self.values.len() {
            let (i, j) = (self.rows[k] as usize, self.cols[k] as usize);
            let z = (f[i] + g[j] - c[[i, j]]) * inv;
            if z >= -theta {
                self.rows[kept] = self.rows[k];
                self.cols[kept] = self.cols[k];
                self.values[kept] = z.exp();
                kept += 1;
            }
        }
        self.rows.truncate(kept);
        self.cols.truncate(kept);
        self.values.truncate(kept);
        self.bound = bound;
        self.reset_drift(f.len(), g.len());
        self.compress(f.len(), g.len());
        !(self.by_row.has_empty_line() || self.by_col.has_empty_line())
    }
}

/// Over-relaxed scaling update `old^(1 - omega) / sum^omega`; plain Sinkhorn
/// at `omega = 1`. The fixed point does not depend on `omega`.
#[inline]
fn relax<T: Scalar>(old: T, sum: T, omega: T) -> T {
    if omega == T::one() {
        T::one() / sum
    } else {
        (old.ln() * (T::one() - omega) - sum.ln() * omega).exp()
    }
}

fn max_of<T: Scalar>(xs: &[T]) -> T {
    xs.iter().copied().fold(T::neg_infinity(), T::max)
}

/// Truncated Sinkhorn over the regularizations in `schedule`, each started
/// from the potentials of the previous one. Intermediate levels stop at
/// `stage_tol`, the last at `tol`; `max_iters` bounds the total.
#[allow(clippy::too_many_arguments)]
pub(crate) fn iterate_sparse<T: Scalar>(
    mu: &[T],
    nu: &[T],
    cost: &CostMatrix<T>,
    schedule: &[T],
    tol: T,
    stage_tol: T,
    max_iters: usize,
    omega: T,
    mut f: Vec<T>,
    mut g: Vec<T>,
) -> IterState<T> {
    let (m, n) = (mu.len(), nu.len());
    let (lo, hi) = (T::lit((-TAU).exp()), T::lit(TAU.exp()));
    let in_range = |x: &T| *x >= lo && *x <= hi;
    let mut kernel = SparseKernel::default();
    let mut u = vec![T::one(); m];
    let mut v = vec![T::one(); n];
    let mut weighted = vec![T::zero(); n.max(m)];
    let mut sums = vec![T::zero(); n.max(m)];
    let mut iterations = 0;
    kernel.set_tolerance(if schedule.len() == 1 { tol } else { stage_tol });
    kernel.rebuild(mu, nu, cost, schedule[0], &mut f, &mut g);

    for (level, &eps) in schedule.iter().enumerate() {
        let last = level + 1 == schedule.len();
        let tol = if last { tol } else { stage_tol };
        kernel.set_tolerance(tol);
        if level > 0 && !kernel.refilter(cost, eps, &f, &g) {
            kernel.rebuild(mu, nu, cost, eps, &mut f, &mut g);
        }
        let mut omega = omega;
        let mut best = T::infinity();
        loop {
            for ((w, &vj), &nj) in weighted.iter_mut().zip(&v).zip(nu) {
                *w = vj * nj;
            }
            kernel.by_row.apply(&weighted[..n], &mut sums[..m]);
            for (ui, &s) in u.iter_mut().zip(&sums[..m]) {
                *ui = relax(*ui, s, omega);
            }
            for ((w, &ui), &mi) in weighted.iter_mut().zip(&u).zip(mu) {
                *w = ui * mi;
            }
            kernel.by_col.apply(&weighted[..m], &mut sums[..n]);
            let error: T = v
                .iter()
                .zip(&sums[..n])
                .zip(nu)
                .map(|((&vj, &s), &w)| w * (vj * s - T::one()).abs())
                .sum();
            // over-relaxation can diverge far from the fixed point
            if error > best * T::lit(10.0) && omega != T::one() {
                omega = T::one();
            }
            best = best.min(error);
            let exhausted = iterations >= max_iters || !error.is_finite();
            if error <= tol || exhausted {
                kernel.absorb(eps, &mut f, &mut g, &mut u, &mut v);
                if last || exhausted {
                    return IterState {
                        f,
                        g,
                        iterations,
                        error,
                        converged: last && error <= tol,
                    };
                }
                break;
            }
            for (vj, &s) in v.iter_mut().zip(&sums[..n]) {
                *vj = relax(*vj, s, omega);
            }
            iterations += 1;

            // dropped pairs are scaled by at most max u * max v
            let growth = eps * (max_of(&u).ln() + max_of(&v).ln());
            if kernel.current_bound() + growth > -kernel.negligible * eps {
                kernel.absorb(eps, &mut f, &mut g, &mut u, &mut v);
                kernel.rebuild(mu, nu, cost, eps, &mut f, &mut g);
            } else if !u.iter().all(in_range) || !v.iter().all(in_range) {
                kernel.absorb(eps, &mut f, &mut g, &mut u, &mut v);
            }
        }
    }
    unreachable!("the last level always returns")
}
