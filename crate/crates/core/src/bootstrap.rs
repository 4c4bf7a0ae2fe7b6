//! Bootstrap uniform confidence bands for colocalization curves.
//!
//! Both empirical measures are resampled with replacement, the curve is
//! recomputed on a shared grid, and the `1 - alpha` quantile of the scaled
//! sup-deviation `sqrt(mn/(m+n)) * ||phi* - phi||` sets the band half-width.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coloc::{coloc_curve, plan_curve, ColocCurve, ThresholdGrid};
use crate::error::{invalid, Error, Result};
use crate::measure::{realize_cost, CostMatrix, CostSpec, DiscreteMeasure};
use crate::rng::{derive_seed, stream};
use crate::scalar::Scalar;
use crate::sinkhorn::{solve, solve_with, EotSolution, Potentials, SolverConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub alpha: f64,
    /// Resample size for the source; `None` means the number of source atoms.
    pub resample_m: Option<usize>,
    pub resample_n: Option<usize>,
    pub seed: u64,
    pub warm_start: bool,
}

impl BootstrapConfig {
    pub fn new(replicates: usize, alpha: f64, seed: u64) -> Self {
        Self {
            replicates,
            alpha,
            resample_m: None,
            resample_n: None,
            seed,
            warm_start: true,
        }
    }

    pub fn with_resample_sizes(mut self, m: usize, n: usize) -> Self {
        self.resample_m = Some(m);
        self.resample_n = Some(n);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(invalid("alpha", format!("must lie in (0, 1), got {}", self.alpha)));
        }
        if self.replicates == 0 {
            return Err(invalid("replicates", "must be at least 1"));
        }
        if self.resample_m == Some(0) || self.resample_n == Some(0) {
            return Err(invalid("resample size", "must be at least 1"));
        }
        order_statistic_rank(self.replicates, self.alpha)?;
        Ok(())
    }
}

/// A uniform band `center -/+ q_star / rate`, clamped to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BandResult<T> {
    pub alpha: f64,
    pub replicates: usize,
    pub center: ColocCurve<T>,
    pub q_star: T,
    pub rate: T,
    pub half_width: T,
    pub lower: Vec<T>,
    pub upper: Vec<T>,
    pub replicate_sups: Vec<T>,
}

/// JSON form of a band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandSummary {
    pub alpha: f64,
    #[serde(rename = "B")]
    pub replicates: usize,
    pub q_star: f64,
    pub rate: f64,
    pub half_width: f64,
    pub grid: Vec<f64>,
    pub center: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

fn to_f64<T: Scalar>(xs: &[T]) -> Vec<f64> {
    xs.iter().map(|x| x.as_f64()).collect()
}

impl<T: Scalar> BandResult<T> {
    /// Whether `curve` lies inside the band at every grid point.
    pub fn contains(&self, curve: &ColocCurve<T>) -> Result<bool> {
        if curve.grid != self.center.grid {
            return Err(Error::GridMismatch);
        }
        Ok(curve
            .values
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(&v, (&lo, &hi))| lo <= v && v <= hi))
    }

    pub fn summary(&self) -> BandSummary {
        BandSummary {
            alpha: self.alpha,
            replicates: self.replicates,
            q_star: self.q_star.as_f64(),
            rate: self.rate.as_f64(),
            half_width: self.half_width.as_f64(),
            grid: to_f64(self.center.thresholds()),
            center: to_f64(&self.center.values),
            lower: to_f64(&self.lower),
            upper: to_f64(&self.upper),
        }
    }

    /// Writes `t,phi,lower,upper`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["t", "phi", "lower", "upper"])?;
        for k in 0..self.lower.len() {
            wtr.write_record(
                [
                    self.center.thresholds()[k],
                    self.center.values[k],
                    self.lower[k],
                    self.upper[k],
                ]
                .map(|x| format!("{}", x.as_f64())),
            )?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn write_csv_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Writes replicate sup-deviations as the single CSV column `sup_dev`.
pub fn write_sups_csv<T: Scalar>(sups: &[T], path: impl AsRef<Path>) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    wtr.write_record(["sup_dev"])?;
    for s in sups {
        wtr.write_record([format!("{}", s.as_f64())])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Reads the `sup_dev` column written by [`write_sups_csv`].
pub fn read_sups_csv(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let path = path.as_ref();
    let origin = path.display().to_string();
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let col = rdr
        .headers()?
        .iter()
        .position(|h| h == "sup_dev")
        .ok_or_else(|| Error::Parse {
            path: origin.clone(),
            line: 1,
            reason: "missing column `sup_dev`".into(),
        })?;
    let mut out = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let v = rec
            .get(col)
            .and_then(|s| s.parse::<f64>().ok())
            .ok_or_else(|| Error::Parse {
                path: origin.clone(),
                line: k + 2,
                reason: "expected a number".into(),
            })?;
        out.push(v);
    }
    Ok(out)
}

/// Multinomial counts of `size` draws over `weights`, by sequential
/// conditional binomials. Returns the hit atoms and their counts.
pub(crate) fn multinomial_counts<T: Scalar, R: Rng + ?Sized>(
    weights: &[T],
    size: usize,
    rng: &mut R,
) -> Vec<(usize, u64)> {
    let mut remaining = size as u64;
    let mut mass_left = 1.0f64;
    let mut out = Vec::new();
    for (i, w) in weights.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        let w = w.as_f64();
        let count = if i + 1 == weights.len() || w >= mass_left {
            remaining
        } else {
            let p = (w / mass_left).clamp(0.0, 1.0);
            Binomial::new(remaining, p).expect("p in [0, 1]").sample(rng)
        };
        mass_left -= w;
        if count > 0 {
            out.push((i, count));
            remaining -= count;
        }
    }
    out
}

/// Empirical measure of `size` i.i.d. draws from `measure`. The support is the
/// set of atoms drawn at least once, in their original order.
pub fn resample<T: Scalar, R: Rng + ?Sized>(
    measure: &DiscreteMeasure<T>,
    size: usize,
    rng: &mut R,
) -> Result<DiscreteMeasure<T>> {
    let (indices, weights) = resample_indexed(measure, size, rng)?;
    Ok(measure.restrict(&indices, weights))
}

fn resample_indexed<T: Scalar, R: Rng + ?Sized>(
    measure: &DiscreteMeasure<T>,
    size: usize,
    rng: &mut R,
) -> Result<(Vec<usize>, Vec<T>)> {
    if size == 0 {
        return Err(invalid("size", "resample size must be at least 1"));
    }
    let total = T::from_usize_lossy(size);
    Ok(multinomial_counts(measure.weights(), size, rng)
        .into_iter()
        .map(|(i, c)| (i, T::from_u64(c).expect("count fits") / total))
        .unzip())
}

/// One-based rank `ceil(B (1 - alpha))` of the upper empirical quantile.
pub fn order_statistic_rank(replicates: usize, alpha: f64) -> Result<usize> {
    let x = replicates as f64 * (1.0 - alpha);
    // absorb representation error in products such as 100 * 0.95
    let k = (x - 1e-9 * replicates as f64).ceil();
    if x < 1.0 - 1e-12 || k < 1.0 {
        return Err(invalid(
            "replicates",
            format!("B(1 - alpha) = {x} is below 1; increase B or alpha"),
        ));
    }
    Ok((k as usize).min(replicates))
}

/// The `ceil(B (1 - alpha))`-th smallest replicate sup-deviation.
pub fn bootstrap_quantile<T: Scalar>(sups: &[T], alpha: f64) -> Result<T> {
    let k = order_statistic_rank(sups.len(), alpha)?;
    let mut sorted = sups.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite sup-deviations"));
    Ok(sorted[k - 1])
}

/// `sqrt(m n / (m + n))`.
pub fn balanced_rate<T: Scalar>(m: usize, n: usize) -> T {
    let (m, n) = (T::from_usize_lossy(m), T::from_usize_lossy(n));
    (m * n / (m + n)).sqrt()
}

/// Assembles the band from the center curve and replicate sups.
pub fn band_from_replicates<T: Scalar>(
    center: ColocCurve<T>,
    replicate_sups: Vec<T>,
    rate: T,
    alpha: f64,
) -> Result<BandResult<T>> {
    let q_star = bootstrap_quantile(&replicate_sups, alpha)?;
    let half_width = q_star / rate;
    let clamp = |x: T| x.max(T::zero()).min(T::one());
    let lower = center.values.iter().map(|&v| clamp(v - half_width)).collect();
    let upper = center.values.iter().map(|&v| clamp(v + half_width)).collect();
    Ok(BandResult {
        alpha,
        replicates: replicate_sups.len(),
        center,
        q_star,
        rate,
        half_width,
        lower,
        upper,
        replicate_sups,
    })
}

struct CenterFit<'a, T> {
    src: &'a DiscreteMeasure<T>,
    tgt: &'a DiscreteMeasure<T>,
    cost: CostMatrix<T>,
    solution: EotSolution<T>,
    curve: ColocCurve<T>,
}

fn solve_robust<T: Scalar>(
    src: &DiscreteMeasure<T>,
    tgt: &DiscreteMeasure<T>,
    cost: &CostMatrix<T>,
    cfg: &SolverConfig<T>,
    warm: Option<&Potentials<T>>,
) -> Result<EotSolution<T>> {
    match solve_with(src, tgt, cost, cfg, warm) {
        Err(Error::Overflow) if !cfg.log_domain => solve_with(src, tgt, cost, &cfg.with_log_domain(true), warm),
        other => other,
    }
    .and_then(EotSolution::into_converged)
}

/// Scaled sup-deviation of one bootstrap replicate.
fn replicate_sup<T: Scalar>(
    fit: &CenterFit<'_, T>,
    solver_cfg: &SolverConfig<T>,
    boot: &BootstrapConfig,
    sizes: (usize, usize),
    rate: T,
    index: usize,
) -> Result<T> {
    let mut rng = stream(boot.seed, index as u64);
    let (rows, mu_w) = resample_indexed(fit.src, sizes.0, &mut rng)?;
    let (cols, nu_w) = resample_indexed(fit.tgt, sizes.1, &mut rng)?;
    let src = fit.src.restrict(&rows, mu_w);
    let tgt = fit.tgt.restrict(&cols, nu_w);
    let cost = fit.cost.select(&rows, &cols);
    let warm = boot
        .warm_start
        .then(|| fit.solution.potentials.restrict(&rows, &cols));
    let sol = solve_robust(&src, &tgt, &cost, solver_cfg, warm.as_ref())?;
    let curve = plan_curve(&sol.plan, &cost, &fit.curve.grid)?;
    Ok(rate * crate::coloc::sup_distance(&curve, &fit.curve)?)
}

/// Bootstrap confidence band for the colocalization curve of `(src, tgt)`.
///
/// Replicates run in parallel on the current rayon pool; replicate `b` draws
/// from `stream(seed, b)`, so the result does not depend on the pool size.
pub fn bootstrap_band<T: Scalar>(
    src: &DiscreteMeasure<T>,
    tgt: &DiscreteMeasure<T>,
    cost_spec: &CostSpec<T>,
    solver_cfg: &SolverConfig<T>,
    grid: &ThresholdGrid<T>,
    boot_cfg: &BootstrapConfig,
) -> Result<BandResult<T>> {
    boot_cfg.validate()?;
    solver_cfg.validate()?;
    let cost = realize_cost(src, tgt, cost_spec)?;
    let solution = match solve(src, tgt, &cost, solver_cfg) {
        Err(Error::Overflow) => solve(src, tgt, &cost, &solver_cfg.with_log_domain(true)),
        other => other,
    }?;
    let curve = coloc_curve(&solution, &cost, grid)?;
    let fit = CenterFit {
        src,
        tgt,
        cost,
        solution,
        curve,
    };
    let sizes = (
        boot_cfg.resample_m.unwrap_or(src.len()),
        boot_cfg.resample_n.unwrap_or(tgt.len()),
    );
    let rate = balanced_rate::<T>(sizes.0, sizes.1);

    let results: Vec<Result<T>> = (0..boot_cfg.replicates)
        .into_par_iter()
        .map(|b| replicate_sup(&fit, solver_cfg, boot_cfg, sizes, rate, b))
        .collect();
    let sups = results
        .into_iter()
        .enumerate()
        .map(|(index, r)| r.map_err(|e| Error::Replicate { index, source: Box::new(e) }))
        .collect::<Result<Vec<T>>>()?;
    band_from_replicates(fit.curve, sups, rate, boot_cfg.alpha)
}

/// Empirical quantile (linear interpolation between order statistics).
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Matched empirical quantiles at `(k - 0.5) / K`, `K` the shorter length.
pub fn qq_data(boot: &[f64], mc: &[f64]) -> Result<Vec<(f64, f64)>> {
    if boot.is_empty() || mc.is_empty() {
        return Err(invalid("sups", "both samples must be non-empty"));
    }
    if boot.iter().chain(mc).any(|x| !x.is_finite()) {
        return Err(invalid("sups", "samples must be finite"));
    }
    let sort = |xs: &[f64]| {
        let mut v = xs.to_vec();
        v.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        v
    };
    let (a, b) = (sort(boot), sort(mc));
    let k = a.len().min(b.len());
    Ok((1..=k)
        .map(|i| {
            let p = (i as f64 - 0.5) / k as f64;
            (quantile_sorted(&a, p), quantile_sorted(&b, p))
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub repetitions: usize,
    pub covered: usize,
    pub coverage: f64,
}

/// Repeatedly subsamples `(src, tgt)` to sizes `(resample_m, resample_n)`,
/// builds a band from each subsample and counts how often `truth` lies
/// entirely inside it.
#[allow(clippy::too_many_arguments)]
pub fn coverage_experiment<T: Scalar>(
    truth: &ColocCurve<T>,
    src: &DiscreteMeasure<T>,
    tgt: &DiscreteMeasure<T>,
    cost_spec: &CostSpec<T>,
    solver_cfg: &SolverConfig<T>,
    grid: &ThresholdGrid<T>,
    boot_cfg: &BootstrapConfig,
    repetitions: usize,
    master_seed: u64,
) -> Result<CoverageReport> {
    if repetitions == 0 {
        return Err(invalid("repetitions", "must be at least 1"));
    }
    if &truth.grid != grid {
        return Err(Error::GridMismatch);
    }
    boot_cfg.validate()?;
    let sizes = (
        boot_cfg.resample_m.unwrap_or(src.len()),
        boot_cfg.resample_n.unwrap_or(tgt.len()),
    );
    let mut covered = 0;
    for r in 0..repetitions {
        let mut rng = stream(master_seed, r as u64);
        let sub_src = resample(src, sizes.0, &mut rng)?;
        let sub_tgt = resample(tgt, sizes.1, &mut rng)?;
        let cfg = BootstrapConfig {
            seed: derive_seed(master_seed, r as u64),
            resample_m: Some(sizes.0),
            resample_n: Some(sizes.1),
            ..*boot_cfg
        };
        let cost_spec = match cost_spec {
            CostSpec::ExplicitMatrix(_) => {
                return Err(invalid(
                    "cost",
                    "explicit matrices cannot follow subsampled supports in a coverage run",
                ))
            }
            other => other.clone(),
        };
        let band = bootstrap_band(&sub_src, &sub_tgt, &cost_spec, solver_cfg, grid, &cfg)?;
        if band.contains(truth)? {
            covered += 1;
        }
    }
    Ok(CoverageReport {
        repetitions,
        covered,
        coverage: covered as f64 / repetitions as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coloc::default_grid;
    use crate::measure::make_measure;
    use crate::rng::seeded;

    #[test]
    fn resample_single_atom() {
        let m = DiscreteMeasure::dirac(vec![1.0, 2.0]).unwrap();
        let r = resample(&m, 17, &mut seeded(1)).unwrap();
        assert_eq!(r, m);
    }

    #[test]
    fn resample_uniform_pair_concentrates() {
        let m = make_measure(vec![vec![0.0], vec![1.0]], None).unwrap();
        let r = resample(&m, 1_000_000, &mut seeded(2)).unwrap();
        assert_eq!(r.len(), 2);
        for &w in r.weights() {
            assert!((w - 0.5f64).abs() < 0.005);
        }
    }

    #[test]
    fn resample_closure() {
        let m = make_measure(vec![vec![0.0], vec![1.0]], Some(vec![0.3, 0.7])).unwrap();
        for seed in 0..20 {
            let counts = multinomial_counts(m.weights(), 10, &mut seeded(seed));
            assert_eq!(counts.iter().map(|c| c.1).sum::<u64>(), 10);
            let r = resample(&m, 10, &mut seeded(seed)).unwrap();
            assert!((r.weights().iter().sum::<f64>() - 1.0).abs() < 1e-15);
            assert!(r.weights().iter().all(|&w| w > 0.0));
        }
        assert!(resample(&m, 0, &mut seeded(0)).is_err());
    }

    #[test]
    fn order_statistic_from_injected_sups() {
        let sups: Vec<f64> = (1..=10).map(|k| k as f64 / 10.0).collect();
        // ceil(10 * 0.95) = ceil(9.5) = 10
        assert_eq!(order_statistic_rank(10, 0.05).unwrap(), 10);
        assert_eq!(bootstrap_quantile(&sups, 0.05).unwrap(), 1.0);
        assert_eq!(order_statistic_rank(100, 0.05).unwrap(), 95);
        assert_eq!(order_statistic_rank(1000, 0.05).unwrap(), 950);
        assert_eq!(order_statistic_rank(10, 0.5).unwrap(), 5);
        assert!(order_statistic_rank(1, 0.5).is_err());
    }

    #[test]
    fn quantile_monotone_in_alpha() {
        let sups: Vec<f64> = (0..37).map(|k| ((k * 7919) % 37) as f64).collect();
        let mut prev = f64::INFINITY;
        for alpha in [0.01, 0.05, 0.1, 0.2, 0.5, 0.9] {
            let q = bootstrap_quantile(&sups, alpha).unwrap();
            assert!(q <= prev);
            prev = q;
        }
    }

    #[test]
    fn band_assembly_clamps() {
        let grid = ThresholdGrid::new(vec![0.0, 1.0, 2.0]).unwrap();
        let center = ColocCurve::new(grid, vec![0.05, 0.5, 1.0]).unwrap();
        let band = band_from_replicates(center, vec![0.2; 20], 2.0, 0.05).unwrap();
        assert_eq!(band.half_width, 0.1);
        assert_eq!(band.lower, vec![0.0, 0.4, 0.9]);
        assert_eq!(band.upper, vec![0.15000000000000002, 0.6, 1.0]);
        assert!(band.contains(&band.center).unwrap());
    }

    #[test]
    fn degenerate_band_for_single_atoms() {
        let x = DiscreteMeasure::dirac(vec![0.0, 0.0]).unwrap();
        let y = DiscreteMeasure::dirac(vec![1.0, 1.0]).unwrap();
        let cost = realize_cost(&x, &y, &CostSpec::Euclidean).unwrap();
        let grid = default_grid(&cost, 200).unwrap();
        let cfg = BootstrapConfig::new(50, 0.05, 3);
        let band = bootstrap_band(&x, &y, &CostSpec::Euclidean, &SolverConfig::new(0.1), &grid, &cfg).unwrap();
        assert!(band.replicate_sups.iter().all(|&s| s == 0.0));
        assert_eq!(band.q_star, 0.0);
        assert_eq!(band.lower, band.center.values);
        assert_eq!(band.upper, band.center.values);
    }

    #[test]
    fn qq_examples() {
        let a = [3.0, 1.0, 2.0, 4.0];
        for (x, y) in qq_data(&a, &a).unwrap() {
            assert_eq!(x, y);
        }
        for (_, y) in qq_data(&a, &[0.7; 9]).unwrap() {
            assert_eq!(y, 0.7);
        }
        let pairs = qq_data(&[1.0, 2.0, 3.0, 4.0], &[2.0, 4.0, 6.0, 8.0]).unwrap();
        assert_eq!(pairs.len(), 4);
        for (x, y) in pairs {
            assert!((y - 2.0 * x).abs() < 1e-12);
        }
        assert!(qq_data(&[], &[1.0]).is_err());
    }

    #[test]
    fn bad_configs() {
        assert!(BootstrapConfig::new(10, 0.0, 0).validate().is_err());
        assert!(BootstrapConfig::new(10, 1.0, 0).validate().is_err());
        assert!(BootstrapConfig::new(0, 0.05, 0).validate().is_err());
        assert!(BootstrapConfig::new(10, 0.05, 0).with_resample_sizes(0, 3).validate().is_err());
    }

    #[test]
    fn coverage_of_fixed_degenerate_truth() {
        let x = DiscreteMeasure::dirac(vec![0.0]).unwrap();
        let y = DiscreteMeasure::dirac(vec![2.0]).unwrap();
        let cost = realize_cost(&x, &y, &CostSpec::Euclidean).unwrap();
        let grid = ThresholdGrid::new(vec![0.0, 1.0, 2.0]).unwrap();
        let sol = solve(&x, &y, &cost, &SolverConfig::new(0.5)).unwrap();
        let truth = coloc_curve(&sol, &cost, &grid).unwrap();
        let boot = BootstrapConfig::new(20, 0.05, 1).with_resample_sizes(5, 5);
        let cfg = SolverConfig::new(0.5);
        let rep = coverage_experiment(&truth, &x, &y, &CostSpec::Euclidean, &cfg, &grid, &boot, 4, 9).unwrap();
        assert_eq!(rep.coverage, 1.0);

        let shifted = ColocCurve::new(grid.clone(), truth.values.iter().map(|v| v + 2.0).collect()).unwrap();
        let rep = coverage_experiment(&shifted, &x, &y, &CostSpec::Euclidean, &cfg, &grid, &boot, 4, 9).unwrap();
        assert_eq!(rep.coverage, 0.0);
        assert!(coverage_experiment(&truth, &x, &y, &CostSpec::Euclidean, &cfg, &grid, &boot, 0, 9).is_err());
    }
}
