//! Point-cloud generators for the simulation scenarios: planar Gaussian
//! mixtures and von Mises-Fisher mixtures on the two-sphere.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Result};
use crate::measure::{make_measure, DiscreteMeasure};
use crate::scalar::Scalar;

const SIMPLEX_TOL: f64 = 1e-12;
const UNIT_TOL: f64 = 1e-9;

fn check_simplex(weights: &[f64]) -> Result<()> {
    if weights.is_empty() {
        return Err(invalid("weights", "mixture needs at least one component"));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(invalid("weights", "must be finite and non-negative"));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > SIMPLEX_TOL {
        return Err(invalid("weights", format!("sum to {total}, expected 1")));
    }
    Ok(())
}

/// Mixture of bivariate normals `sum_i p_i N(a_i, Sigma_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixtureSpec {
    pub weights: Vec<f64>,
    pub means: Vec<[f64; 2]>,
    pub covariances: Vec<[[f64; 2]; 2]>,
}

impl GaussianMixtureSpec {
    pub fn standard_normal() -> Self {
        Self {
            weights: vec![1.0],
            means: vec![[0.0, 0.0]],
            covariances: vec![[[1.0, 0.0], [0.0, 1.0]]],
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_simplex(&self.weights)?;
        let k = self.weights.len();
        if self.means.len() != k || self.covariances.len() != k {
            return Err(invalid("components", "weights, means and covariances differ in length"));
        }
        for cov in &self.covariances {
            psd_sqrt(cov)?;
        }
        Ok(())
    }

    fn sampler(&self) -> Result<GaussianSampler<'_>> {
        self.validate()?;
        Ok(GaussianSampler {
            spec: self,
            pick: WeightedIndex::new(&self.weights).map_err(|e| invalid("weights", e.to_string()))?,
            roots: self.covariances.iter().map(psd_sqrt).collect::<Result<_>>()?,
        })
    }

    /// Draws `n` points, each tagged with its component.
    pub fn draw_labeled<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<(usize, [f64; 2])>> {
        let s = self.sampler()?;
        Ok((0..n).map(|_| s.draw(rng)).collect())
    }
}

struct GaussianSampler<'a> {
    spec: &'a GaussianMixtureSpec,
    pick: WeightedIndex<f64>,
    roots: Vec<[[f64; 2]; 2]>,
}

impl GaussianSampler<'_> {
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, [f64; 2]) {
        let k = self.pick.sample(rng);
        let z0: f64 = rng.sample(StandardNormal);
        let z1: f64 = rng.sample(StandardNormal);
        let [[a, b], [c, d]] = self.roots[k];
        let m = self.spec.means[k];
        (k, [m[0] + a * z0 + b * z1, m[1] + c * z0 + d * z1])
    }
}

/// Symmetric positive semi-definite square root of a 2x2 covariance, from its
/// eigenvalues: `sqrt(A) = (A + sqrt(l1 l2) I) / (sqrt(l1) + sqrt(l2))`.
pub fn psd_sqrt(cov: &[[f64; 2]; 2]) -> Result<[[f64; 2]; 2]> {
    let [[a, b], [c, d]] = *cov;
    if [a, b, c, d].iter().any(|x| !x.is_finite()) {
        return Err(invalid("covariance", "non-finite entry"));
    }
    let scale = a.abs().max(d.abs()).max(b.abs()).max(1.0);
    if (b - c).abs() > 1e-12 * scale {
        return Err(invalid("covariance", "not symmetric"));
    }
    let mid = 0.5 * (a + d);
    let rad = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    let (l1, l2) = (mid + rad, mid - rad);
    if l2 < -1e-12 * scale {
        return Err(invalid("covariance", format!("not positive semi-definite (eigenvalue {l2})")));
    }
    let (r1, r2) = (l1.max(0.0).sqrt(), l2.max(0.0).sqrt());
    let t = r1 + r2;
    if t == 0.0 {
        return Ok([[0.0, 0.0], [0.0, 0.0]]);
    }
    let s = r1 * r2;
    Ok([[(a + s) / t, b / t], [b / t, (d + s) / t]])
}

/// `n` i.i.d. draws from a Gaussian mixture as a uniform-weight measure.
pub fn sample_gaussian_mixture<T: Scalar, R: Rng + ?Sized>(
    spec: &GaussianMixtureSpec,
    n: usize,
    rng: &mut R,
) -> Result<DiscreteMeasure<T>> {
    if n == 0 {
        return Err(invalid("n", "must be at least 1"));
    }
    let s = spec.sampler()?;
    let points = (0..n)
        .map(|_| s.draw(rng).1.iter().map(|&x| T::lit(x)).collect())
        .collect();
    make_measure(points, None)
}

/// Mixture of von Mises-Fisher laws on the unit sphere in `R^3`, each with
/// density proportional to `exp(kappa a.x)` against the uniform measure.
#[derive(Debug, Clone, PartialEq)]
pub struct VmfMixtureSpec {
    pub weights: Vec<f64>,
    pub directions: Vec<[f64; 3]>,
    pub concentrations: Vec<f64>,
}

impl VmfMixtureSpec {
    pub fn single(direction: [f64; 3], kappa: f64) -> Self {
        Self {
            weights: vec![1.0],
            directions: vec![direction],
            concentrations: vec![kappa],
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_simplex(&self.weights)?;
        let k = self.weights.len();
        if self.directions.len() != k || self.concentrations.len() != k {
            return Err(invalid("components", "weights, directions and concentrations differ in length"));
        }
        for a in &self.directions {
            let norm = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !((norm - 1.0).abs() <= UNIT_TOL) {
                return Err(invalid("direction", format!("norm {norm} is not 1")));
            }
        }
        for &kappa in &self.concentrations {
            if !(kappa > 0.0) || !kappa.is_finite() {
                return Err(invalid("kappa", format!("must be positive and finite, got {kappa}")));
            }
        }
        Ok(())
    }

    /// Draws `n` unit vectors, each tagged with its component.
    pub fn draw_labeled<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<(usize, [f64; 3])>> {
        self.validate()?;
        let pick = WeightedIndex::new(&self.weights).map_err(|e| invalid("weights", e.to_string()))?;
        Ok((0..n)
            .map(|_| {
                let k = pick.sample(rng);
                (k, draw_vmf(self.directions[k], self.concentrations[k], rng))
            })
            .collect())
    }
}

/// Cosine of the angle to the mean direction by inverse CDF:
/// `w = 1 + log(u + (1 - u) e^{-2 kappa}) / kappa`. Returns `(w, 1 - w)`, the
/// second computed without cancellation.
pub fn sample_vmf_cosine<R: Rng + ?Sized>(kappa: f64, rng: &mut R) -> (f64, f64) {
    // u in (0, 1]
    let u = 1.0 - rng.gen::<f64>();
    let delta = -(u + (1.0 - u) * (-2.0 * kappa).exp()).ln() / kappa;
    let delta = delta.clamp(0.0, 2.0);
    (1.0 - delta, delta)
}

fn draw_vmf<R: Rng + ?Sized>(a: [f64; 3], kappa: f64, rng: &mut R) -> [f64; 3] {
    let (w, delta) = sample_vmf_cosine(kappa, rng);
    let r = (delta * (2.0 - delta)).max(0.0).sqrt();
    let theta = std::f64::consts::TAU * rng.gen::<f64>();
    let v = [r * theta.cos(), r * theta.sin(), w];
    let x = rotate_north_pole_to(a, v);
    let norm = x.iter().map(|c| c * c).sum::<f64>().sqrt();
    [x[0] / norm, x[1] / norm, x[2] / norm]
}

/// Applies the Householder reflection that sends `(0, 0, 1)` to `a`.
fn rotate_north_pole_to(a: [f64; 3], v: [f64; 3]) -> [f64; 3] {
    let h = [-a[0], -a[1], 1.0 - a[2]];
    let hh: f64 = h.iter().map(|x| x * x).sum();
    if hh < 1e-30 {
        return v;
    }
    let proj = 2.0 * (h[0] * v[0] + h[1] * v[1] + h[2] * v[2]) / hh;
    [v[0] - proj * h[0], v[1] - proj * h[1], v[2] - proj * h[2]]
}

/// `n` i.i.d. unit vectors from a vMF mixture as a uniform-weight measure.
pub fn sample_vmf_mixture<T: Scalar, R: Rng + ?Sized>(
    spec: &VmfMixtureSpec,
    n: usize,
    rng: &mut R,
) -> Result<DiscreteMeasure<T>> {
    if n == 0 {
        return Err(invalid("n", "must be at least 1"));
    }
    let points = spec
        .draw_labeled(n, rng)?
        .into_iter()
        .map(|(_, x)| x.iter().map(|&c| T::lit(c)).collect())
        .collect();
    make_measure(points, None)
}

/// Mean resultant length `E[a.X] = coth(kappa) - 1/kappa` of the 3-d vMF law.
pub fn vmf_mean_resultant(kappa: f64) -> f64 {
    1.0 / kappa.tanh() - 1.0 / kappa
}

/// CDF of `w = a.X`: `(e^{kappa w} - e^{-kappa}) / (e^{kappa} - e^{-kappa})`.
pub fn vmf_cosine_cdf(kappa: f64, w: f64) -> f64 {
    let w = w.clamp(-1.0, 1.0);
    let tail = (-2.0 * kappa).exp();
    (((kappa * (w - 1.0)).exp() - tail) / (1.0 - tail)).clamp(0.0, 1.0)
}

/// The two simulation scenarios with their source and target laws.
#[derive(Debug, Clone, PartialEq)]
pub enum Scenario {
    /// Standard planar normal against a three-component Gaussian mixture.
    GaussianPlanar {
        source: GaussianMixtureSpec,
        target: GaussianMixtureSpec,
    },
    /// vMF(north pole, 50) against a three-component vMF mixture.
    VonMisesFisherSphere {
        source: VmfMixtureSpec,
        target: VmfMixtureSpec,
    },
}

impl Scenario {
    pub fn scenario_i() -> Self {
        let sigma = [[1.0, -0.8], [-0.8, 1.0]];
        Scenario::GaussianPlanar {
            source: GaussianMixtureSpec::standard_normal(),
            target: GaussianMixtureSpec {
                weights: vec![0.3, 0.3, 0.4],
                means: vec![[-1.0, 3.0], [10.0, -1.0], [15.0, 5.0]],
                covariances: vec![sigma; 3],
            },
        }
    }

    pub fn scenario_ii() -> Self {
        let (s2, s3) = (2f64.sqrt(), 3f64.sqrt());
        let h = -s2 / 2.0;
        Scenario::VonMisesFisherSphere {
            source: VmfMixtureSpec::single([0.0, 0.0, 1.0], 50.0),
            target: VmfMixtureSpec {
                weights: vec![0.3, 0.3, 0.4],
                directions: vec![[s3 / 3.0, s2 / 3.0, 2.0 / 3.0], [0.0, -1.0, 0.0], [h, 0.0, h]],
                concentrations: vec![60.0, 70.0, 80.0],
            },
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "i" | "1" | "scenario-i" => Some(Self::scenario_i()),
            "ii" | "2" | "scenario-ii" => Some(Self::scenario_ii()),
            _ => None,
        }
    }

    /// Cost matching the scenario geometry.
    pub fn cost_spec<T: Scalar>(&self) -> crate::measure::CostSpec<T> {
        match self {
            Scenario::GaussianPlanar { .. } => crate::measure::CostSpec::Euclidean,
            Scenario::VonMisesFisherSphere { .. } => crate::measure::CostSpec::SphereGeodesic,
        }
    }

    /// Independent source and target samples of size `n` each.
    pub fn sample<T: Scalar, R: Rng + ?Sized>(
        &self,
        n: usize,
        rng: &mut R,
    ) -> Result<(DiscreteMeasure<T>, DiscreteMeasure<T>)> {
        match self {
            Scenario::GaussianPlanar { source, target } => Ok((
                sample_gaussian_mixture(source, n, rng)?,
                sample_gaussian_mixture(target, n, rng)?,
            )),
            Scenario::VonMisesFisherSphere { source, target } => Ok((
                sample_vmf_mixture(source, n, rng)?,
                sample_vmf_mixture(target, n, rng)?,
            )),
        }
    }
}
