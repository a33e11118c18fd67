//! Randomized invariants: properties that must hold for *every* input, not
//! just the worked examples in the unit tests.

use ndarray::Array2;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use spectral_risk::backtest::{
    run_backtest, turnover, turnover_components, CostConvention, CostModel,
};
use spectral_risk::experiment::{format_sig, rep_seed};
use spectral_risk::market_data::{prices_to_returns, ReturnMatrix, ReturnPanel};
use spectral_risk::metrics::{max_drawdown, summarize};
use spectral_risk::optimizers::{
    min_cvar, min_var_quantile, min_variance, project_simplex, sample_covariance,
};
use spectral_risk::spectral::{
    classify_scenario, enhanced_signal, normalized_spectrum, rr_signal, singular_values,
    vertex_distance, NormalizedSpectrum,
};
use spectral_risk::strategies::{random_exposure_path, sample_simplex, Allocation, StrategyKind, StrategySpec};
use spectral_risk::synthetic::{two_regime_panel, RegimePanelConfig};

/// Random return windows with more rows than columns.
fn return_matrix(max_t: usize, max_n: usize) -> impl Strategy<Value = ReturnMatrix> {
    (2usize..=max_n)
        .prop_flat_map(move |n| ((n + 1)..=max_t).prop_map(move |t| (t, n)))
        .prop_flat_map(|(t, n)| {
            proptest::collection::vec(-0.08f64..0.08, t * n).prop_map(move |cells| {
                ReturnMatrix::new(Array2::from_shape_vec((t, n), cells).unwrap(), 0).unwrap()
            })
        })
}

/// Random points that already are valid normalized spectra.
fn spectrum() -> impl Strategy<Value = NormalizedSpectrum> {
    (2usize..=8).prop_flat_map(|dim| {
        proptest::collection::vec(0.0f64..=1.0, dim).prop_map(|mut v| {
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            NormalizedSpectrum::from_values(v).unwrap()
        })
    })
}

fn frobenius_sq(m: &ReturnMatrix) -> f64 {
    m.values().iter().map(|v| v * v).sum()
}

proptest! {
    #[test]
    fn singular_values_preserve_total_energy(m in return_matrix(24, 6)) {
        prop_assume!(m.values().iter().any(|v| *v != 0.0));
        let sv = singular_values(&m).unwrap();
        prop_assert_eq!(sv.len(), m.num_cols());
        for pair in sv.windows(2) {
            prop_assert!(pair[0] >= pair[1], "descending order");
        }
        prop_assert!(sv.iter().all(|s| *s >= 0.0));
        // Jacobi rotations preserve the trace of the Gram matrix, so the
        // squared singular values must sum to the squared Frobenius norm.
        let energy: f64 = sv.iter().map(|s| s * s).sum();
        let frob = frobenius_sq(&m);
        prop_assert!((energy - frob).abs() <= 1e-8 * frob.max(1e-30), "{energy} vs {frob}");
    }

    #[test]
    fn normalized_spectrum_is_ascending_in_the_unit_cube(m in return_matrix(24, 6)) {
        prop_assume!(m.values().iter().any(|v| *v != 0.0));
        let s = normalized_spectrum(&m).unwrap();
        prop_assert_eq!(s.dimension(), m.num_cols() - 1);
        prop_assert_eq!(s.universe_size(), m.num_cols());
        for v in s.values() {
            prop_assert!((0.0..=1.0).contains(v), "entry {v} outside the cube");
        }
        for pair in s.values().windows(2) {
            prop_assert!(pair[1] >= pair[0], "not ascending");
        }
    }

    #[test]
    fn normalized_spectrum_ignores_uniform_leverage(
        m in return_matrix(20, 5),
        c in 0.2f64..5.0,
    ) {
        prop_assume!(m.values().iter().any(|v| *v != 0.0));
        let scaled =
            ReturnMatrix::new(m.values().to_owned().mapv_into(|v| v * c), 0).unwrap();
        let s = normalized_spectrum(&m).unwrap();
        let sc = normalized_spectrum(&scaled).unwrap();
        for (a, b) in s.values().iter().zip(sc.values()) {
            prop_assert!((a - b).abs() <= 1e-9, "{a} vs {b} after scaling by {c}");
        }
    }

    #[test]
    fn classification_picks_the_nearest_vertex_breaking_ties_riskier(s in spectrum()) {
        let scenario = classify_scenario(&s);
        let dim = s.dimension();
        prop_assert_eq!(scenario.level + scenario.closest_vertex_ones, dim);
        let best = vertex_distance(&s, scenario.closest_vertex_ones).unwrap();
        for k in 0..=dim {
            let d = vertex_distance(&s, k).unwrap();
            prop_assert!(best <= d, "vertex {k} is closer: {d} < {best}");
            if k < scenario.closest_vertex_ones {
                // Ties break toward fewer trailing ones, so every vertex
                // left of the winner must be strictly farther.
                prop_assert!(d > best, "tie at {k} should have won");
            }
        }
    }

    #[test]
    fn signals_restate_their_defining_inequalities(s in spectrum()) {
        let d0 = vertex_distance(&s, 0).unwrap();
        let d1 = vertex_distance(&s, 1).unwrap();
        prop_assert_eq!(rr_signal(&s), d0 < d1);
        let mean = (s.values()[0] + s.values()[1]) / 2.0;
        let threshold = 1.0 / (s.universe_size() - 1) as f64;
        prop_assert_eq!(enhanced_signal(&s).unwrap(), mean < threshold);
    }

    #[test]
    fn simplex_projection_returns_the_nearest_feasible_point(
        v in proptest::collection::vec(-3.0f64..3.0, 2..8),
        seed in any::<u64>(),
    ) {
        let p = project_simplex(&v);
        prop_assert_eq!(p.len(), v.len());
        let sum: f64 = p.iter().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-9, "sum {sum}");
        prop_assert!(p.iter().all(|x| *x >= 0.0));
        // Idempotent on its own output.
        let again = project_simplex(&p);
        for (a, b) in p.iter().zip(&again) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
        // No random feasible point is closer to the input.
        let dist = |q: &[f64]| -> f64 {
            q.iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..8 {
            let q = sample_simplex(v.len(), &mut rng).unwrap();
            prop_assert!(dist(&p) <= dist(q.as_slice()) + 1e-9);
        }
    }
}

/// The discrete expected-shortfall functional minimized by the tail-risk
/// linear program, evaluated at its best threshold for fixed weights.
fn shortfall_objective(m: &ReturnMatrix, w: &[f64], alpha: f64) -> f64 {
    let v = m.values();
    let t = v.nrows();
    let losses: Vec<f64> = (0..t)
        .map(|i| -(0..w.len()).map(|j| w[j] * v[(i, j)]).sum::<f64>())
        .collect();
    let scale = 1.0 / (alpha * t as f64);
    losses
        .iter()
        .map(|zeta| {
            zeta + scale * losses.iter().map(|l| (l - zeta).max(0.0)).sum::<f64>()
        })
        .fold(f64::INFINITY, f64::min)
}

/// The empirical tail quantile: the `ceil(alpha t)`-th worst loss.
fn quantile_objective(m: &ReturnMatrix, w: &[f64], alpha: f64) -> f64 {
    let v = m.values();
    let t = v.nrows();
    let mut losses: Vec<f64> = (0..t)
        .map(|i| -(0..w.len()).map(|j| w[j] * v[(i, j)]).sum::<f64>())
        .collect();
    losses.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let k = ((alpha * t as f64).ceil() as usize).max(1);
    losses[k - 1]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn min_variance_output_is_consistent_and_beats_its_start(m in return_matrix(16, 4)) {
        let out = min_variance(&m).unwrap();
        prop_assert_eq!(out.weights.len(), m.num_cols());
        let sigma = sample_covariance(&m);
        let w = ndarray::Array1::from_vec(out.weights.as_slice().to_vec());
        let recomputed = w.dot(&sigma.dot(&w));
        prop_assert!(
            (out.objective - recomputed).abs() <= 1e-12 * recomputed.max(1e-12),
            "objective {} vs recomputed {recomputed}", out.objective
        );
        let n = m.num_cols();
        let e = ndarray::Array1::from_elem(n, 1.0 / n as f64);
        let equal_obj = e.dot(&sigma.dot(&e));
        prop_assert!(out.objective <= equal_obj + 1e-15, "worse than the equal start");
    }

    #[test]
    fn min_cvar_solves_its_own_functional(
        m in return_matrix(16, 4),
        alpha in 0.05f64..0.4,
    ) {
        let out = min_cvar(&m, alpha).unwrap();
        let at_solution = shortfall_objective(&m, out.weights.as_slice(), alpha);
        prop_assert!(
            (out.objective - at_solution).abs() <= 1e-6,
            "LP value {} but functional at solution is {at_solution}", out.objective
        );
        let n = m.num_cols();
        let equal = vec![1.0 / n as f64; n];
        prop_assert!(
            out.objective <= shortfall_objective(&m, &equal, alpha) + 1e-6,
            "worse than equal weights"
        );
    }

    #[test]
    fn min_var_quantile_never_loses_to_its_starts(
        m in return_matrix(16, 4),
        alpha in 0.05f64..0.4,
    ) {
        let out = min_var_quantile(&m, alpha).unwrap();
        let recomputed = quantile_objective(&m, out.weights.as_slice(), alpha);
        prop_assert!(
            (out.objective - recomputed).abs() <= 1e-9,
            "objective {} vs recomputed {recomputed}", out.objective
        );
        let n = m.num_cols();
        let equal = vec![1.0 / n as f64; n];
        prop_assert!(out.objective <= quantile_objective(&m, &equal, alpha) + 1e-12);
        for i in 0..n {
            let mut single = vec![0.0; n];
            single[i] = 1.0;
            prop_assert!(
                out.objective <= quantile_objective(&m, &single, alpha) + 1e-12,
                "worse than holding only asset {i}"
            );
        }
    }
}

proptest! {
    #[test]
    fn metric_summaries_obey_the_moment_and_tail_inequalities(
        returns in proptest::collection::vec(-0.4f64..0.4, 8..120),
        alpha in 0.01f64..0.5,
    ) {
        prop_assume!(returns.iter().any(|r| *r != returns[0]));
        let s = summarize(&returns, alpha).unwrap();
        prop_assert!(s.cvar >= s.var - 1e-12, "mean tail loss under its quantile");
        prop_assert!(s.st_dev > 0.0);
        prop_assert!((0.0..1.0).contains(&s.mdd), "mdd {}", s.mdd);
        // Pearson's inequality holds for every empirical distribution.
        prop_assert!(s.k >= s.sk * s.sk + 1.0 - 1e-9, "K {} vs Sk {}", s.k, s.sk);
    }

    #[test]
    fn leverage_scales_location_and_tails_linearly(
        returns in proptest::collection::vec(-0.3f64..0.3, 8..60),
        c in 0.2f64..2.4,
    ) {
        prop_assume!(returns.iter().any(|r| *r != returns[0]));
        let base = summarize(&returns, 0.1).unwrap();
        let levered: Vec<f64> = returns.iter().map(|r| r * c).collect();
        let l = summarize(&levered, 0.1).unwrap();
        let close = |a: f64, b: f64, tol: f64| (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-9);
        prop_assert!(close(l.a_r, c * base.a_r, 1e-9));
        prop_assert!(close(l.st_dev, c * base.st_dev, 1e-9));
        prop_assert!(close(l.var, c * base.var, 1e-9));
        prop_assert!(close(l.cvar, c * base.cvar, 1e-9));
        prop_assert!(close(l.sr, base.sr, 1e-7), "Sharpe must ignore leverage");
        prop_assert!(close(l.sk, base.sk, 1e-7));
        prop_assert!(close(l.k, base.k, 1e-7));
    }

    #[test]
    fn streaming_drawdown_matches_the_quadratic_scan(
        returns in proptest::collection::vec(-0.5f64..0.5, 1..80),
    ) {
        let mut wealth = vec![1.0];
        for r in &returns {
            wealth.push(wealth.last().unwrap() * (1.0 + r));
        }
        let mut worst = 0.0f64;
        for i in 0..wealth.len() {
            for j in i + 1..wealth.len() {
                worst = worst.max(1.0 - wealth[j] / wealth[i]);
            }
        }
        prop_assert_eq!(max_drawdown(&returns), worst);
    }

    #[test]
    fn turnover_is_bounded_and_vanishes_without_trades(
        prev_seed in any::<u64>(),
        next_seed in any::<u64>(),
        realized in proptest::collection::vec(-0.2f64..0.2, 2..6),
        e_prev in 0.0f64..=1.0,
        e_next in 0.0f64..=1.0,
        rate in 0.0f64..0.01,
        uniform in -0.2f64..0.2,
    ) {
        let n = realized.len();
        let mut rng = ChaCha8Rng::seed_from_u64(prev_seed);
        let prev = Allocation {
            weights: sample_simplex(n, &mut rng).unwrap(),
            exposure: e_prev,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(next_seed);
        let next = Allocation {
            weights: sample_simplex(n, &mut rng).unwrap(),
            exposure: e_next,
        };
        let (risky, liquidity) = turnover_components(&prev, &realized, &next);
        prop_assert!(risky >= 0.0 && liquidity >= 0.0);
        // Both the drifted and the target books are probability vectors over
        // n + 1 buckets, so their L1 distance cannot exceed 2.
        prop_assert!(risky + liquidity <= 2.0 + 1e-9, "turnover {}", risky + liquidity);

        // Keeping the same book through a uniform move trades nothing.
        let held = Allocation { weights: prev.weights.clone(), exposure: 1.0 };
        let same = Allocation { weights: prev.weights.clone(), exposure: 1.0 };
        prop_assert!(turnover(&held, &vec![uniform; n], &same) <= 1e-12);

        // Convention and liquidity-sleeve knobs behave as documented.
        let full = CostModel { rate, convention: CostConvention::L1, charge_liquidity: true };
        let half = CostModel { rate, convention: CostConvention::HalfL1, charge_liquidity: true };
        let risky_only = CostModel { rate, convention: CostConvention::L1, charge_liquidity: false };
        let f = full.charge(&prev, &realized, &next);
        prop_assert!((half.charge(&prev, &realized, &next) - f / 2.0).abs() <= f64::EPSILON);
        prop_assert!(risky_only.charge(&prev, &realized, &next) <= f + 1e-15);
    }

    #[test]
    fn six_significant_digits_round_trip(
        mantissa in 1.0f64..10.0,
        exp in -9i32..9,
        negative in any::<bool>(),
    ) {
        let x = if negative { -mantissa } else { mantissa } * 10f64.powi(exp);
        let s = format_sig(x, 6);
        let parsed: f64 = s.parse().unwrap();
        prop_assert!(
            (parsed - x).abs() <= 1.1e-5 * x.abs(),
            "{x} printed as {s}, parses back to {parsed}"
        );
    }

    #[test]
    fn rep_seeds_depend_on_every_coordinate(
        master in any::<u64>(),
        n in 0usize..1000,
        w in 0usize..1000,
        rep in 0usize..1000,
    ) {
        let s = rep_seed(master, n, w, rep);
        prop_assert_eq!(s, rep_seed(master, n, w, rep), "must be a pure function");
        prop_assert_ne!(s, rep_seed(master.wrapping_add(1), n, w, rep));
        prop_assert_ne!(s, rep_seed(master, n + 1, w, rep));
        prop_assert_ne!(s, rep_seed(master, n, w + 1, rep));
        prop_assert_ne!(s, rep_seed(master, n, w, rep + 1));
    }

    #[test]
    fn exposure_paths_hit_the_requested_day_count(
        seed in any::<u64>(),
        num_days in 0usize..200,
        frac in 0.0f64..=1.0,
        reduction in 0.0f64..1.0,
    ) {
        let num_reduced = (frac * num_days as f64).floor() as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let path = random_exposure_path(num_days, num_reduced, reduction, &mut rng).unwrap();
        prop_assert_eq!(path.len(), num_days);
        prop_assert_eq!(path.iter().filter(|e| **e == reduction).count(), num_reduced);
        prop_assert!(path.iter().all(|e| *e == reduction || *e == 1.0));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let again = random_exposure_path(num_days, num_reduced, reduction, &mut rng).unwrap();
        prop_assert_eq!(path, again);
    }

    #[test]
    fn simplex_samples_are_strictly_positive_and_sum_to_one(
        seed in any::<u64>(),
        n in 1usize..12,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = sample_simplex(n, &mut rng).unwrap();
        prop_assert_eq!(w.len(), n);
        prop_assert!(w.as_slice().iter().all(|x| *x > 0.0));
        let sum: f64 = w.as_slice().iter().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn panel_csv_round_trips_exactly(
        t in 2usize..12,
        n in 1usize..6,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = Array2::from_shape_fn((t, n), |_| {
            use rand::Rng;
            rng.random_range(-0.5..0.5)
        });
        let dates = (0..t).map(|i| format!("d{i:04}")).collect();
        let tickers = (0..n).map(|j| format!("A{j:03}")).collect();
        let panel = ReturnPanel::new(dates, tickers, values).unwrap();
        let parsed = ReturnPanel::from_csv_reader(panel.to_csv_string().as_bytes()).unwrap();
        prop_assert_eq!(parsed.dates(), panel.dates());
        prop_assert_eq!(parsed.tickers(), panel.tickers());
        // `{}` prints the shortest string that parses back to the same bits.
        prop_assert_eq!(parsed.values(), panel.values());
    }

    #[test]
    fn price_conversion_recompounds_to_the_last_price(
        t in 3usize..12,
        n in 1usize..4,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = Array2::from_shape_fn((t, n), |_| {
            use rand::Rng;
            rng.random_range(5.0..200.0)
        });
        let dates: Vec<String> = (0..t).map(|i| format!("d{i:04}")).collect();
        let tickers = (0..n).map(|j| format!("A{j:03}")).collect();
        let prices = ReturnPanel::new(dates.clone(), tickers, values.clone()).unwrap();
        let returns = prices_to_returns(&prices).unwrap();
        prop_assert_eq!(returns.num_days(), t - 1);
        prop_assert_eq!(returns.dates(), &dates[1..]);
        for j in 0..n {
            let mut wealth = values[(0, j)];
            for i in 0..t - 1 {
                wealth *= 1.0 + returns.values()[(i, j)];
            }
            let last = values[(t - 1, j)];
            prop_assert!((wealth - last).abs() <= 1e-10 * last.abs());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn backtests_are_deterministic_and_internally_consistent(
        panel_seed in any::<u64>(),
        kind_ix in 0usize..8,
        rate in 0.0f64..0.003,
        run_seed in any::<u64>(),
    ) {
        let kind = StrategyKind::ALL[kind_ix];
        let config = RegimePanelConfig {
            num_assets: 4,
            calm_days: 18,
            crash_days: 6,
            cycles: 1,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(panel_seed);
        let panel = two_regime_panel(&config, &mut rng).unwrap();
        let window = 8;
        let mut spec = StrategySpec::new(kind);
        if kind == StrategyKind::RandomBenchmark {
            let mut wrng = ChaCha8Rng::seed_from_u64(run_seed ^ 0xB0B);
            spec = spec.with_benchmark_weights(sample_simplex(4, &mut wrng).unwrap());
        }
        let cost = CostModel::with_rate(rate);
        let universe = [0usize, 1, 2, 3];

        let mut rng_a = ChaCha8Rng::seed_from_u64(run_seed);
        let a = run_backtest(&panel, &universe, &spec, window, &cost, &mut rng_a).unwrap();
        let mut rng_b = ChaCha8Rng::seed_from_u64(run_seed);
        let b = run_backtest(&panel, &universe, &spec, window, &cost, &mut rng_b).unwrap();
        prop_assert_eq!(&a, &b, "same seed must reproduce the run exactly");

        prop_assert_eq!(a.wealth.len(), a.records.len() + 1);
        prop_assert_eq!(a.wealth[0], 1.0);
        if !a.wipeout {
            prop_assert_eq!(a.records.len(), panel.num_days() - window);
        }
        let mut reduced = 0;
        for (i, rec) in a.records.iter().enumerate() {
            prop_assert_eq!(rec.day, window + i, "days must be consecutive");
            prop_assert!((0.0..=1.0).contains(&rec.exposure));
            prop_assert!(rec.cost >= 0.0);
            prop_assert_eq!(rec.net_return, rec.gross_return - rec.cost);
            prop_assert_eq!(a.wealth[i + 1], a.wealth[i] * (1.0 + rec.net_return));
            if rec.exposure < 1.0 {
                reduced += 1;
            }
        }
        prop_assert_eq!(a.reduced_days, reduced);
    }
}
