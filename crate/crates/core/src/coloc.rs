//! Kernel functionals of a transport plan and colocalization curves.
//!
//! The colocalization curve of a plan is the distribution function of the cost
//! under the plan, `t -> sum_{c_ij <= t} pi_ij`, evaluated on a threshold grid.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::measure::CostMatrix;
use crate::scalar::Scalar;
use crate::sinkhorn::EotSolution;

/// Plans with at most this many entries are bucketed directly; larger ones go
/// through a sort of (cost, mass) pairs.
pub const EXACT_PATH_MAX_ENTRIES: usize = 10_000_000;

pub const DEFAULT_RESOLUTION: usize = 200;

/// Strictly increasing, non-negative thresholds.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdGrid<T> {
    thresholds: Vec<T>,
}

impl<T: Scalar> ThresholdGrid<T> {
    pub fn new(thresholds: Vec<T>) -> Result<Self> {
        if thresholds.is_empty() {
            return Err(Error::InvalidGrid("no thresholds".into()));
        }
        if thresholds.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidGrid("non-finite threshold".into()));
        }
        if thresholds[0] < T::zero() {
            return Err(Error::InvalidGrid("negative threshold".into()));
        }
        if thresholds.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGrid("thresholds are not strictly increasing".into()));
        }
        Ok(Self { thresholds })
    }

    pub fn thresholds(&self) -> &[T] {
        &self.thresholds
    }

    pub fn len(&self) -> usize {
        self.thresholds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thresholds.is_empty()
    }

    pub fn last(&self) -> T {
        *self.thresholds.last().expect("non-empty grid")
    }

    /// Index of the first threshold `>= c`, or `len()` if none.
    #[inline]
    fn bucket(&self, c: T) -> usize {
        self.thresholds.partition_point(|&t| t < c)
    }
}

/// A colocalization curve sampled on a threshold grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ColocCurve<T> {
    pub grid: ThresholdGrid<T>,
    pub values: Vec<T>,
}

impl<T: Scalar> ColocCurve<T> {
    pub fn new(grid: ThresholdGrid<T>, values: Vec<T>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::LengthMismatch {
                what: "curve values",
                expected: grid.len(),
                got: values.len(),
            });
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "curve value",
                index: k,
            });
        }
        Ok(Self { grid, values })
    }

    pub fn thresholds(&self) -> &[T] {
        self.grid.thresholds()
    }

    /// Writes `t,phi`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["t", "phi"])?;
        for (t, v) in self.thresholds().iter().zip(&self.values) {
            wtr.write_record([fmt(*t), fmt(*v)])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn write_csv_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    /// Reads `t,phi` (extra columns are ignored).
    pub fn read_csv_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let origin = path.display().to_string();
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)?;
        let headers = rdr.headers()?.clone();
        let col = |name: &str| {
            headers.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
                path: origin.clone(),
                line: 1,
                reason: format!("missing column `{name}`"),
            })
        };
        let (tc, pc) = (col("t")?, col("phi")?);
        let mut ts = Vec::new();
        let mut vs = Vec::new();
        for (k, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let get = |c: usize| -> Result<T> {
                rec.get(c)
                    .and_then(|s| s.parse::<f64>().ok())
                    .map(T::lit)
                    .ok_or_else(|| Error::Parse {
                        path: origin.clone(),
                        line: k + 2,
                        reason: "expected a number".into(),
                    })
            };
            ts.push(get(tc)?);
            vs.push(get(pc)?);
        }
        Self::new(ThresholdGrid::new(ts)?, vs)
    }
}

fn fmt<T: Scalar>(x: T) -> String {
    format!("{}", x.as_f64())
}

/// Threshold grid for a cost matrix: its distinct entries when there are at
/// most `resolution` of them, otherwise `resolution` equispaced points on
/// `[0, max_cost]`.
pub fn default_grid<T: Scalar>(cost: &CostMatrix<T>, resolution: usize) -> Result<ThresholdGrid<T>> {
    if resolution < 2 {
        return Err(Error::InvalidGrid("resolution must be at least 2".into()));
    }
    let max_cost = cost.max_cost();
    let mut distinct: HashSet<u64> = HashSet::with_capacity(resolution + 1);
    let mut few = true;
    for &c in cost.entries().iter() {
        distinct.insert(c.as_f64().to_bits());
        if distinct.len() > resolution {
            few = false;
            break;
        }
    }
    if few {
        let mut values: Vec<T> = distinct.into_iter().map(|b| T::lit(f64::from_bits(b))).collect();
        values.sort_by(|a, b| a.partial_cmp(b).expect("finite costs"));
        values.dedup();
        return ThresholdGrid::new(values);
    }
    let steps = T::from_usize_lossy(resolution - 1);
    let mut thresholds: Vec<T> = (0..resolution)
        .map(|k| max_cost * T::from_usize_lossy(k) / steps)
        .collect();
    *thresholds.last_mut().expect("resolution >= 2") = max_cost;
    ThresholdGrid::new(thresholds)
}

/// Colocalization curve of a solved plan.
///
/// The grid must reach the largest cost so the curve ends at one; thresholds
/// beyond it are allowed and simply carry the full mass.
pub fn coloc_curve<T: Scalar>(
    solution: &EotSolution<T>,
    cost: &CostMatrix<T>,
    grid: &ThresholdGrid<T>,
) -> Result<ColocCurve<T>> {
    plan_curve(&solution.plan, cost, grid)
}

/// Colocalization curve of an arbitrary plan (e.g. an unregularized one).
pub fn plan_curve<T: Scalar>(
    plan: &Array2<T>,
    cost: &CostMatrix<T>,
    grid: &ThresholdGrid<T>,
) -> Result<ColocCurve<T>> {
    check_plan(plan, cost)?;
    if grid.last() < cost.max_cost() {
        return Err(Error::InvalidGrid(format!(
            "last threshold {} is below the largest cost {}",
            grid.last(),
            cost.max_cost()
        )));
    }
    let mut values = if plan.len() <= EXACT_PATH_MAX_ENTRIES {
        curve_by_buckets(plan, cost, grid)
    } else {
        curve_by_sorting(plan, cost, grid)
    };
    // the plan's mass is one only up to the marginal tolerance
    values.iter_mut().for_each(|v| *v = v.min(T::one()));
    ColocCurve::new(grid.clone(), values)
}

fn check_plan<T: Scalar>(plan: &Array2<T>, cost: &CostMatrix<T>) -> Result<()> {
    if plan.dim() != cost.shape() {
        return Err(Error::LengthMismatch {
            what: "plan",
            expected: cost.rows() * cost.cols(),
            got: plan.len(),
        });
    }
    Ok(())
}

/// Adds each entry's mass to the first threshold covering its cost, then
/// accumulates.
pub fn curve_by_buckets<T: Scalar>(plan: &Array2<T>, cost: &CostMatrix<T>, grid: &ThresholdGrid<T>) -> Vec<T> {
    let mut mass = vec![T::zero(); grid.len() + 1];
    for (&p, &c) in plan.iter().zip(cost.entries().iter()) {
        mass[grid.bucket(c)] = mass[grid.bucket(c)] + p;
    }
    prefix_sums(&mass[..grid.len()])
}

/// Sorts `(cost, mass)` pairs by cost and reads the running total at each
/// threshold.
pub fn curve_by_sorting<T: Scalar>(plan: &Array2<T>, cost: &CostMatrix<T>, grid: &ThresholdGrid<T>) -> Vec<T> {
    let mut pairs: Vec<(T, T)> = cost.entries().iter().copied().zip(plan.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite costs"));
    let mut out = Vec::with_capacity(grid.len());
    let mut acc = T::zero();
    let mut k = 0;
    for &t in grid.thresholds() {
        while k < pairs.len() && pairs[k].0 <= t {
            acc = acc + pairs[k].1;
            k += 1;
        }
        out.push(acc);
    }
    out
}

fn prefix_sums<T: Scalar>(xs: &[T]) -> Vec<T> {
    xs.iter()
        .scan(T::zero(), |acc, &x| {
            *acc = *acc + x;
            Some(*acc)
        })
        .collect()
}

/// `sum_ij kernel_ij * plan_ij`.
pub fn eval_kernel_functional<T: Scalar>(solution: &EotSolution<T>, kernel: &Array2<T>) -> Result<T> {
    if kernel.dim() != solution.plan.dim() {
        return Err(Error::LengthMismatch {
            what: "kernel",
            expected: solution.plan.len(),
            got: kernel.len(),
        });
    }
    if let Some(k) = kernel.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite {
            what: "kernel entry",
            index: k,
        });
    }
    Ok(kernel.iter().zip(solution.plan.iter()).map(|(&u, &p)| u * p).sum())
}

/// Indicator kernel `1{c <= t}`.
pub fn indicator_kernel<T: Scalar>(cost: &CostMatrix<T>, t: T) -> Array2<T> {
    cost.entries().mapv(|c| if c <= t { T::one() } else { T::zero() })
}

/// Sup-norm distance between two curves on the same grid.
pub fn sup_distance<T: Scalar>(a: &ColocCurve<T>, b: &ColocCurve<T>) -> Result<T> {
    if a.grid != b.grid {
        return Err(Error::GridMismatch);
    }
    Ok(a.values
        .iter()
        .zip(&b.values)
        .map(|(&x, &y)| (x - y).abs())
        .fold(T::zero(), T::max))
}
