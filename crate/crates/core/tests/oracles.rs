use eot_coloc::*;
use itertools::Itertools;
use ndarray::Array2;
use rand::Rng;

/// Cheapest assignment of a square cost matrix by enumerating permutations.
fn best_assignment(cost: &Array2<f64>) -> (f64, Vec<usize>) {
    let n = cost.nrows();
    (0..n)
        .permutations(n)
        .map(|p| (p.iter().enumerate().map(|(i, &j)| cost[[i, j]]).sum::<f64>(), p))
        .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap())
        .unwrap()
}

#[test]
fn small_lambda_approaches_assignment() {
    let mut rng = seeded(11);
    let n = 5;
    for _ in 0..20 {
        let mu = make_measure((0..n).map(|i| vec![i as f64]).collect(), None).unwrap();
        let nu = mu.clone();
        let raw = Array2::from_shape_fn((n, n), |_| rng.gen::<f64>());
        let cost = realize_cost(&mu, &nu, &CostSpec::ExplicitMatrix(raw.clone())).unwrap();
        let lambda = 1e-3 * cost.max_cost();
        let cfg = SolverConfig::new(lambda).with_max_iters(1_000_000);
        let sol = solve(&mu, &nu, &cost, &cfg).unwrap();

        let (best, perm) = best_assignment(&raw);
        let exact = best / n as f64;
        assert!((sol.primal_value - exact).abs() <= 0.02 * exact, "{} vs {exact}", sol.primal_value);

        let mut plan = Array2::zeros((n, n));
        for (i, &j) in perm.iter().enumerate() {
            plan[[i, j]] = 1.0 / n as f64;
        }
        let grid = default_grid(&cost, 200).unwrap();
        let ot = plan_curve(&plan, &cost, &grid).unwrap();
        let eot = coloc_curve(&sol, &cost, &grid).unwrap();
        assert!(sup_distance(&ot, &eot).unwrap() <= 0.05);
    }
}

#[test]
fn eot_curve_converges_as_lambda_shrinks() {
    let mut rng = seeded(5);
    let pts = |rng: &mut RngStream| (0..6).map(|_| vec![rng.gen::<f64>(), rng.gen::<f64>()]).collect();
    let mu = make_measure(pts(&mut rng), None).unwrap();
    let nu = make_measure(pts(&mut rng), None).unwrap();
    let cost = realize_cost(&mu, &nu, &CostSpec::Euclidean).unwrap();
    let (_, perm) = best_assignment(cost.entries());
    let mut plan = Array2::zeros((6, 6));
    for (i, &j) in perm.iter().enumerate() {
        plan[[i, j]] = 1.0 / 6.0;
    }
    let grid = default_grid(&cost, 200).unwrap();
    let ot = plan_curve(&plan, &cost, &grid).unwrap();
    let dist = |lambda: f64| {
        // Sinkhorn balances mass between nearly disconnected blocks of
        // the plan very slowly at small lambda, so the tolerance is loose here
        let cfg = SolverConfig::new(lambda).with_marginal_tol(1e-7).with_max_iters(1_000_000);
        let sol = solve(&mu, &nu, &cost, &cfg).unwrap();
        sup_distance(&ot, &coloc_curve(&sol, &cost, &grid).unwrap()).unwrap()
    };
    let d = [dist(1.0), dist(0.1), dist(0.001)];
    assert!(d[0] > d[1] && d[1] > d[2], "{d:?}");
    assert!(d[2] < 0.01);
}

/// Asymptotic Kolmogorov tail `P(sqrt(n) D > x)`.
fn kolmogorov_tail(x: f64) -> f64 {
    let s: f64 = (1..=100)
        .map(|k| {
            let k = k as f64;
            let sign = if k as u64 % 2 == 1 { 1.0 } else { -1.0 };
            sign * (-2.0 * k * k * x * x).exp()
        })
        .sum();
    (2.0 * s).clamp(0.0, 1.0)
}

/// Mean of `w` under the density `kappa e^{kappa w} / (2 sinh kappa)` on
/// `[-1, 1]`, by Simpson's rule.
fn vmf_mean_by_quadrature(kappa: f64) -> f64 {
    let steps = 200_000;
    let h = 2.0 / steps as f64;
    let dens = |w: f64| kappa * (kappa * (w - 1.0)).exp() / (1.0 - (-2.0 * kappa).exp());
    let mut acc = 0.0;
    for k in 0..=steps {
        let w = -1.0 + k as f64 * h;
        let c = if k == 0 || k == steps { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += c * w * dens(w);
    }
    acc * h / 3.0
}

#[test]
fn vmf_cosine_passes_ks() {
    for (kappa, seed) in [(50.0, 1u64), (80.0, 2)] {
        let n = 100_000;
        let a = [0.0, 0.6, 0.8];
        let spec = VmfMixtureSpec::single(a, kappa);
        let sample: Measure = sample_vmf_mixture(&spec, n, &mut seeded(seed)).unwrap();
        let mut w: Vec<f64> = (0..n)
            .map(|i| sample.point(i).iter().zip(a).map(|(x, y)| x * y).sum())
            .collect();
        w.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let cdf = |x: f64| {
            let num = (kappa * x).exp() - (-kappa).exp();
            let den = kappa.exp() - (-kappa).exp();
            num / den
        };
        let d = w
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = cdf(x);
                (f - i as f64 / n as f64).max((i + 1) as f64 / n as f64 - f)
            })
            .fold(0.0, f64::max);
        let p = kolmogorov_tail((n as f64).sqrt() * d);
        assert!(p > 1e-3, "kappa {kappa}: D = {d}, p = {p}");

        let mean = w.iter().sum::<f64>() / n as f64;
        let oracle = vmf_mean_by_quadrature(kappa);
        assert!((oracle - (1.0 / kappa.tanh() - 1.0 / kappa)).abs() < 1e-8);
        assert!((mean - oracle).abs() < 0.005);
    }
}

#[test]
fn subsample_weights_are_unbiased() {
    let grid = parse_grid::<f64>("1 0 2\n0 4 1\n", 1.0, "mem").unwrap();
    let full = to_measure(&grid);
    let reps = 1000;
    let n = 50;
    let mut totals = vec![0.0; full.len()];
    for r in 0..reps {
        let sub = subsample_grid(&grid, n, &mut stream(3, r)).unwrap();
        for (i, &w) in sub.weights().iter().enumerate() {
            let p = sub.point(i).to_vec();
            let k = (0..full.len()).find(|&k| full.point(k).to_vec() == p).expect("support subset");
            totals[k] += w;
        }
    }
    for (k, &p) in full.weights().iter().enumerate() {
        let se = (p * (1.0 - p) / (n * reps as usize) as f64).sqrt();
        let mean = totals[k] / reps as f64;
        assert!((mean - p).abs() <= 3.0 * se, "pixel {k}: {mean} vs {p}");
    }
}

#[test]
fn dyadic_intensities_keep_exact_ratios() {
    let grid = parse_grid::<f64>("0.5 0.25\n0.125 1.125\n", 1.0, "mem").unwrap();
    let m = to_measure(&grid);
    assert_eq!(m.weights(), &[0.25, 0.125, 0.0625, 0.5625]);
}
