//! Finitely supported probability measures and ground costs.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1};

use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;

/// A probability measure with finitely many atoms in `R^d`.
///
/// Atoms are stored row-wise in `points`; every weight is strictly positive and
/// the weights sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure<T> {
    points: Array2<T>,
    weights: Vec<T>,
    label: Option<String>,
}

impl<T: Scalar> DiscreteMeasure<T> {
    /// Dirac mass at `point`.
    pub fn dirac(point: Vec<T>) -> Result<Self> {
        make_measure(vec![point], None)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn points(&self) -> &Array2<T> {
        &self.points
    }

    pub fn point(&self, i: usize) -> ArrayView1<'_, T> {
        self.points.row(i)
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn label(&self) -> Option<&str> {
        self.label.as_deref()
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    /// Sub-measure on the atoms `indices` with the given (already normalized,
    /// strictly positive) weights. Used by resampling, where the support of the
    /// result is always a subset of the parent support.
    pub(crate) fn restrict(&self, indices: &[usize], weights: Vec<T>) -> Self {
        debug_assert_eq!(indices.len(), weights.len());
        let d = self.dim();
        let mut points = Array2::zeros((indices.len(), d));
        for (row, &i) in indices.iter().enumerate() {
            points.row_mut(row).assign(&self.points.row(i));
        }
        Self {
            points,
            weights,
            label: self.label.clone(),
        }
    }

    /// Mean of the atoms under the weights.
    pub fn mean(&self) -> Vec<T> {
        let mut out = vec![T::zero(); self.dim()];
        for (row, &w) in self.points.rows().into_iter().zip(&self.weights) {
            for (o, &x) in out.iter_mut().zip(row.iter()) {
                *o = *o + w * x;
            }
        }
        out
    }
}

/// Builds a measure from atoms and optional non-negative weights.
///
/// Weights are normalized to sum to one (uniform when absent). Atoms with zero
/// weight are dropped; the remaining atoms keep their input order.
pub fn make_measure<T: Scalar>(
    points: Vec<Vec<T>>,
    weights: Option<Vec<T>>,
) -> Result<DiscreteMeasure<T>> {
    if points.is_empty() {
        return Err(Error::EmptySupport);
    }
    let d = points[0].len();
    for (i, p) in points.iter().enumerate() {
        if p.len() != d {
            return Err(Error::DimensionMismatch {
                index: i,
                expected: d,
                got: p.len(),
            });
        }
        if p.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                what: "coordinate",
                index: i,
            });
        }
    }
    let raw = match weights {
        Some(w) => {
            if w.len() != points.len() {
                return Err(Error::LengthMismatch {
                    what: "weights",
                    expected: points.len(),
                    got: w.len(),
                });
            }
            for (i, &x) in w.iter().enumerate() {
                if !x.is_finite() {
                    return Err(Error::NonFinite {
                        what: "weight",
                        index: i,
                    });
                }
                if x < T::zero() {
                    return Err(Error::NegativeWeight {
                        index: i,
                        value: x.as_f64(),
                    });
                }
            }
            w
        }
        None => vec![T::one(); points.len()],
    };
    let total: T = raw.iter().copied().sum();
    if total <= T::zero() {
        return Err(Error::ZeroTotalWeight);
    }

    let kept: Vec<usize> = (0..raw.len()).filter(|&i| raw[i] > T::zero()).collect();
    let mut flat = Vec::with_capacity(kept.len() * d);
    for &i in &kept {
        flat.extend_from_slice(&points[i]);
    }
    let weights = kept.iter().map(|&i| raw[i] / total).collect();
    let points = Array2::from_shape_vec((kept.len(), d), flat).expect("rectangular support");
    Ok(DiscreteMeasure {
        points,
        weights,
        label: None,
    })
}

/// Declaration of a ground cost.
#[derive(Debug, Clone, PartialEq)]
pub enum CostSpec<T> {
    /// `|x - y|` in the coordinates of the atoms.
    Euclidean,
    /// Great-circle distance `arccos(x . y)` between unit vectors.
    SphereGeodesic,
    /// Euclidean distance between atoms given in pixel units, times `pitch`.
    GridEuclidean { pitch: T },
    /// A user supplied `m x n` matrix indexed by atom position.
    ExplicitMatrix(Array2<T>),
}

impl<T: Scalar> CostSpec<T> {
    pub fn is_symmetric_kind(&self) -> bool {
        !matches!(self, CostSpec::ExplicitMatrix(_))
    }
}

/// A realized `m x n` cost matrix together with its largest entry.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix<T> {
    entries: Array2<T>,
    max_cost: T,
}

impl<T: Scalar> CostMatrix<T> {
    /// Wraps a matrix after checking that every entry is finite and non-negative.
    /// Entries are stored in row-major order.
    pub fn new(entries: Array2<T>) -> Result<Self> {
        let entries = entries.as_standard_layout().into_owned();
        let mut max_cost = T::zero();
        for (k, &c) in entries.iter().enumerate() {
            if !c.is_finite() {
                return Err(Error::NonFinite {
                    what: "cost entry",
                    index: k,
                });
            }
            if c < T::zero() {
                return Err(invalid("cost", format!("entry {k} is negative")));
            }
            max_cost = max_cost.max(c);
        }
        if entries.is_empty() {
            return Err(Error::EmptySupport);
        }
        Ok(Self { entries, max_cost })
    }

    pub fn entries(&self) -> &Array2<T> {
        &self.entries
    }

    pub fn max_cost(&self) -> T {
        self.max_cost
    }

    pub fn rows(&self) -> usize {
        self.entries.nrows()
    }

    pub fn cols(&self) -> usize {
        self.entries.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows(), self.cols())
    }

    /// Sub-matrix on the given row and column indices.
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> Self {
        let mut out = Array2::zeros((rows.len(), cols.len()));
        let mut max_cost = T::zero();
        for (r, &i) in rows.iter().enumerate() {
            let src = self.entries.row(i);
            let mut dst = out.row_mut(r);
            for (c, &j) in cols.iter().enumerate() {
                let v = src[j];
                dst[c] = v;
                max_cost = max_cost.max(v);
            }
        }
        Self {
            entries: out,
            max_cost,
        }
    }

    pub fn transpose(&self) -> Self {
        Self {
            entries: self.entries.t().as_standard_layout().into_owned(),
            max_cost: self.max_cost,
        }
    }
}

const SPHERE_TOL: f64 = 1e-9;

/// Evaluates the ground cost on every pair of atoms.
pub fn realize_cost<T: Scalar>(
    src: &DiscreteMeasure<T>,
    tgt: &DiscreteMeasure<T>,
    spec: &CostSpec<T>,
) -> Result<CostMatrix<T>> {
    let (m, n) = (src.len(), tgt.len());
    if let CostSpec::ExplicitMatrix(c) = spec {
        if c.dim() != (m, n) {
            return Err(Error::LengthMismatch {
                what: "explicit cost matrix",
                expected: m * n,
                got: c.len(),
            });
        }
        return CostMatrix::new(c.clone());
    }
    if src.dim() != tgt.dim() {
        return Err(Error::DimensionMismatch {
            index: 0,
            expected: src.dim(),
            got: tgt.dim(),
        });
    }
    let mut entries = Array2::zeros((m, n));
    match spec {
        CostSpec::Euclidean | CostSpec::GridEuclidean { .. } => {
            let scale = match spec {
                CostSpec::GridEuclidean { pitch } => {
                    if !(*pitch > T::zero()) || !pitch.is_finite() {
                        return Err(invalid("pitch", "must be positive and finite"));
                    }
                    *pitch
                }
                _ => T::one(),
            };
            for i in 0..m {
                let x = src.point(i);
                let mut row = entries.row_mut(i);
                for j in 0..n {
                    let y = tgt.point(j);
                    let sq: T = x.iter().zip(y.iter()).map(|(&a, &b)| (a - b) * (a - b)).sum();
                    row[j] = scale * sq.sqrt();
                }
            }
        }
        CostSpec::SphereGeodesic => {
            check_on_sphere(src)?;
            check_on_sphere(tgt)?;
            for i in 0..m {
                let x = src.point(i);
                let mut row = entries.row_mut(i);
                for j in 0..n {
                    let dot: T = x.iter().zip(tgt.point(j).iter()).map(|(&a, &b)| a * b).sum();
                    row[j] = dot.max(-T::one()).min(T::one()).acos();
                }
            }
        }
        CostSpec::ExplicitMatrix(_) => unreachable!(),
    }
    CostMatrix::new(entries)
}

fn check_on_sphere<T: Scalar>(measure: &DiscreteMeasure<T>) -> Result<()> {
    let tol = T::tolerance(SPHERE_TOL);
    for (i, row) in measure.points.rows().into_iter().enumerate() {
        let norm = row.iter().map(|&x| x * x).sum::<T>().sqrt();
        if (norm - T::one()).abs() > tol {
            return Err(Error::OffSphere {
                index: i,
                norm: norm.as_f64(),
            });
        }
    }
    Ok(())
}

/// Reads a measure from CSV with header `x1,...,xd[,weight]`.
pub fn read_measure_csv<T: Scalar>(path: impl AsRef<Path>) -> Result<DiscreteMeasure<T>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    read_measure(file, &path.display().to_string())
}

pub fn read_measure<T: Scalar, R: Read>(reader: R, origin: &str) -> Result<DiscreteMeasure<T>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let weight_col = headers.iter().position(|h| h.eq_ignore_ascii_case("weight"));
    let coord_cols: Vec<usize> = (0..headers.len()).filter(|&c| Some(c) != weight_col).collect();
    if coord_cols.is_empty() {
        return Err(Error::Parse {
            path: origin.to_string(),
            line: 1,
            reason: "no coordinate columns".into(),
        });
    }
    let mut points = Vec::new();
    let mut weights = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = k + 2;
        let parse = |c: usize| -> Result<T> {
            let field = rec.get(c).ok_or_else(|| Error::Parse {
                path: origin.to_string(),
                line,
                reason: format!("missing column {}", c + 1),
            })?;
            field
                .parse::<f64>()
                .map(T::lit)
                .map_err(|e| Error::Parse {
                    path: origin.to_string(),
                    line,
                    reason: format!("column {}: {e}", c + 1),
                })
        };
        points.push(coord_cols.iter().map(|&c| parse(c)).collect::<Result<Vec<_>>>()?);
        if let Some(c) = weight_col {
            weights.push(parse(c)?);
        }
    }
    let weights = weight_col.map(|_| weights);
    make_measure(points, weights)
}

/// Writes a measure as CSV with header `x1,...,xd,weight`.
pub fn write_measure<T: Scalar, W: Write>(measure: &DiscreteMeasure<T>, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = (1..=measure.dim()).map(|k| format!("x{k}")).collect();
    header.push("weight".into());
    wtr.write_record(&header)?;
    for (row, &w) in measure.points.rows().into_iter().zip(&measure.weights) {
        let mut rec: Vec<String> = row.iter().map(|x| format!("{}", x.as_f64())).collect();
        rec.push(format!("{}", w.as_f64()));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_measure_csv<T: Scalar>(measure: &DiscreteMeasure<T>, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_measure(measure, std::io::BufWriter::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_atom_gets_unit_weight() {
        let m = make_measure(vec![vec![1.0, 2.0]], None).unwrap();
        assert_eq!(m.weights(), &[1.0]);
    }

    #[test]
    fn uniform_normalization() {
        let pts = vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0]];
        let m = make_measure(pts, Some(vec![1.0; 4])).unwrap();
        assert_eq!(m.weights(), &[0.25; 4]);
    }

    #[test]
    fn zero_atoms_are_pruned() {
        let a = vec![0.0, 0.0];
        let b = vec![5.0, 1.0];
        let m = make_measure(vec![a, b.clone()], Some(vec![0.0, 3.0])).unwrap();
        // normalize, then drop zero entries
        let expect: Vec<f64> = [0.0, 3.0].iter().map(|w| w / 3.0).filter(|&w| w > 0.0).collect();
        assert_eq!(m.weights(), expect.as_slice());
        assert_eq!(m.point(0).to_vec(), b);
    }

    #[test]
    fn construction_errors() {
        assert!(matches!(
            make_measure::<f64>(vec![], None),
            Err(Error::EmptySupport)
        ));
        assert!(matches!(
            make_measure(vec![vec![0.0], vec![1.0]], Some(vec![1.0, -0.5])),
            Err(Error::NegativeWeight { index: 1, .. })
        ));
        assert!(matches!(
            make_measure(vec![vec![0.0]], Some(vec![0.0])),
            Err(Error::ZeroTotalWeight)
        ));
        assert!(matches!(
            make_measure(vec![vec![f64::NAN]], None),
            Err(Error::NonFinite { .. })
        ));
        assert!(matches!(
            make_measure(vec![vec![0.0], vec![0.0, 1.0]], None),
            Err(Error::DimensionMismatch { index: 1, .. })
        ));
    }

    #[test]
    fn identical_atoms_cost_zero() {
        let x = DiscreteMeasure::dirac(vec![0.3, -1.0]).unwrap();
        let c = realize_cost(&x, &x, &CostSpec::Euclidean).unwrap();
        assert_eq!(c.entries()[[0, 0]], 0.0);
        assert_eq!(c.max_cost(), 0.0);
    }

    #[test]
    fn antipodal_geodesic_is_pi() {
        let x = DiscreteMeasure::dirac(vec![0.0, 0.0, 1.0]).unwrap();
        let y = DiscreteMeasure::dirac(vec![0.0, 0.0, -1.0]).unwrap();
        let c = realize_cost(&x, &y, &CostSpec::SphereGeodesic).unwrap();
        assert_eq!(c.entries()[[0, 0]], std::f64::consts::PI);
    }

    #[test]
    fn three_four_five() {
        let x = DiscreteMeasure::dirac(vec![0.0, 0.0]).unwrap();
        let y = DiscreteMeasure::dirac(vec![3.0, 4.0]).unwrap();
        let c = realize_cost(&x, &y, &CostSpec::Euclidean).unwrap();
        let direct = ((3.0f64 - 0.0).powi(2) + (4.0f64 - 0.0).powi(2)).sqrt();
        assert_eq!(c.entries()[[0, 0]], direct);
        assert_eq!(direct, 5.0);
    }

    #[test]
    fn grid_euclidean_scales_by_pitch() {
        let x = DiscreteMeasure::dirac(vec![0.5, 0.5]).unwrap();
        let y = DiscreteMeasure::dirac(vec![3.5, 4.5]).unwrap();
        let c = realize_cost(&x, &y, &CostSpec::GridEuclidean { pitch: 20.0 }).unwrap();
        assert!((c.entries()[[0, 0]] - 100.0f64).abs() < 1e-12);
    }

    #[test]
    fn off_sphere_rejected() {
        let x = DiscreteMeasure::dirac(vec![0.0, 0.0, 1.1]).unwrap();
        let err = realize_cost(&x, &x, &CostSpec::SphereGeodesic).unwrap_err();
        assert!(matches!(err, Error::OffSphere { index: 0, .. }));
    }

    #[test]
    fn nearly_parallel_unit_vectors_do_not_produce_nan() {
        let v = [0.6f64, 0.8, 0.0];
        let x = DiscreteMeasure::dirac(v.to_vec()).unwrap();
        let c = realize_cost(&x, &x, &CostSpec::SphereGeodesic).unwrap();
        assert!(c.entries()[[0, 0]].is_finite());
    }

    #[test]
    fn explicit_matrix_checks() {
        let x = make_measure(vec![vec![0.0], vec![1.0]], None).unwrap();
        let y = DiscreteMeasure::dirac(vec![0.0]).unwrap();
        let bad = CostSpec::ExplicitMatrix(Array2::from_elem((1, 2), 1.0));
        assert!(matches!(
            realize_cost(&x, &y, &bad),
            Err(Error::LengthMismatch { .. })
        ));
        let neg = CostSpec::ExplicitMatrix(ndarray::array![[1.0], [-1.0]]);
        assert!(realize_cost(&x, &y, &neg).is_err());
        let inf = CostSpec::ExplicitMatrix(ndarray::array![[1.0], [f64::INFINITY]]);
        assert!(realize_cost(&x, &y, &inf).is_err());
        let ok = CostSpec::ExplicitMatrix(ndarray::array![[1.0], [2.0]]);
        assert_eq!(realize_cost(&x, &y, &ok).unwrap().max_cost(), 2.0);
    }

    #[test]
    fn csv_round_trip() {
        let m = make_measure(
            vec![vec![0.5, 1.25], vec![-3.0, 2.0]],
            Some(vec![1.0, 3.0]),
        )
        .unwrap();
        let mut buf = Vec::new();
        write_measure(&m, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x1,x2,weight\n"));
        let back: DiscreteMeasure<f64> = read_measure(buf.as_slice(), "mem").unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn csv_without_weight_column_is_uniform() {
        let text = "x1,x2\n0,0\n1,1\n";
        let m: DiscreteMeasure<f64> = read_measure(text.as_bytes(), "mem").unwrap();
        assert_eq!(m.weights(), &[0.5, 0.5]);
    }

    #[test]
    fn csv_reports_bad_line() {
        let text = "x1,weight\n0,1\nabc,1\n";
        let err = read_measure::<f64, _>(text.as_bytes(), "mem").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    fn cloud(max: usize, d: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
        prop::collection::vec(prop::collection::vec(-1.0..1.0f64, d), 1..max)
    }

    fn sphere_cloud(max: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
        cloud(max, 3).prop_map(|pts| {
            pts.into_iter()
                .map(|p| {
                    let n = p.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-3);
                    if n <= 1e-3 {
                        vec![0.0, 0.0, 1.0]
                    } else {
                        p.iter().map(|x| x / n).collect()
                    }
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn euclidean_cost_transposes(a in cloud(8, 2), b in cloud(8, 2)) {
            let x = make_measure(a, None).unwrap();
            let y = make_measure(b, None).unwrap();
            let xy = realize_cost(&x, &y, &CostSpec::Euclidean).unwrap();
            let yx = realize_cost(&y, &x, &CostSpec::Euclidean).unwrap();
            prop_assert_eq!(xy.transpose(), yx);
        }

        #[test]
        fn geodesic_in_range_and_symmetric(a in sphere_cloud(8), b in sphere_cloud(8)) {
            let x = make_measure(a, None).unwrap();
            let y = make_measure(b, None).unwrap();
            let xy = realize_cost(&x, &y, &CostSpec::SphereGeodesic).unwrap();
            let yx = realize_cost(&y, &x, &CostSpec::SphereGeodesic).unwrap();
            prop_assert!(xy.entries().iter().all(|&c| (0.0..=std::f64::consts::PI).contains(&c)));
            prop_assert_eq!(xy.transpose(), yx);
        }

        #[test]
        fn rewrapping_is_idempotent(
            pts in cloud(10, 2),
            w in prop::collection::vec(0.0..5.0f64, 10),
        ) {
            let mut w = w[..pts.len()].to_vec();
            w[0] += 1.0;
            let once = make_measure(pts, Some(w)).unwrap();
            let rows: Vec<Vec<f64>> = once.points().rows().into_iter().map(|r| r.to_vec()).collect();
            let twice = make_measure(rows, Some(once.weights().to_vec())).unwrap();
            prop_assert_eq!(once.points(), twice.points());
            for (a, b) in once.weights().iter().zip(twice.weights()) {
                prop_assert!((a - b).abs() <= 1e-15);
            }
            let total: f64 = twice.weights().iter().sum();
            prop_assert!((total - 1.0).abs() <= 1e-12);
        }
    }
}
