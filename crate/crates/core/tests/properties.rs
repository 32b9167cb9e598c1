use agwx::battery::*;
use agwx::econometrics::{cluster_robust_vcov, fit_statistics, ols_fit, DofParams, SpecKind};
use agwx::extract::ObfuscationScheme;
use agwx::grid::{GridHeader, RasterStack, VariableKind};
use agwx::metrics::MetricId;
use agwx::survey::Outcome;
use chrono::NaiveDate;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn header(n_rows: usize, n_cols: usize, n_days: usize, lon: f64, lat: f64, size: f64) -> GridHeader {
    GridHeader {
        variable_kind: VariableKind::Rainfall,
        product_id: "chirps".into(),
        origin_lon: lon,
        origin_lat: lat,
        cell_size_lon: size,
        cell_size_lat: size * 0.5,
        n_rows,
        n_cols,
        start_date: NaiveDate::from_ymd_opt(1983, 1, 1).unwrap(),
        n_days,
    }
}

fn row(p: f64) -> ResultRow {
    let key = RunKey {
        country: "c".into(),
        product: "p".into(),
        product2: String::new(),
        scheme: ObfuscationScheme::DEFAULT,
        selection: MetricSel::Single(MetricId::RainTotal),
        outcome: Outcome::Yield,
        spec: SpecKind::LinearFe,
    };
    ResultRow {
        beta1: Some(0.1),
        se1: Some(0.05),
        p1: Some(p),
        p_joint: Some(p),
        adj_r2: Some(0.3),
        n: Some(30),
        g: Some(10),
        ..ResultRow::failed(key, STATUS_OK)
    }
}

proptest! {
    #[test]
    fn agwx_bytes_round_trip(
        n_rows in 1usize..6,
        n_cols in 1usize..6,
        n_days in 1usize..5,
        lon in -180.0f64..170.0,
        lat in -60.0f64..60.0,
        seed in any::<u64>(),
    ) {
        let h = header(n_rows, n_cols, n_days, lon, lat, 0.25);
        let values: Vec<f32> = (0..h.len())
            .map(|i| if (seed >> (i % 64)) & 7 == 0 { f32::NAN } else { ((seed.wrapping_mul(i as u64 + 1) % 1000) as f32) / 10.0 })
            .collect();
        let s = RasterStack::new(h, values).unwrap();
        let back = RasterStack::from_bytes(&s.to_bytes()).unwrap();
        prop_assert_eq!(back.header(), s.header());
        prop_assert_eq!(back.to_bytes(), s.to_bytes());
    }

    #[test]
    fn cell_of_center_is_identity(n_rows in 1usize..40, n_cols in 1usize..40, lon in -20.0f64..40.0, lat in -30.0f64..30.0, size in 0.01f64..1.0) {
        let h = header(n_rows, n_cols, 1, lon, lat, size);
        for r in 0..n_rows {
            for c in 0..n_cols {
                prop_assert_eq!(h.cell_of(h.cell_center(r, c)).unwrap(), (r, c));
            }
        }
    }

    #[test]
    fn strong_implies_weak(a in prop::array::uniform3(-5.0f64..5.0), b in prop::array::uniform3(-5.0f64..5.0)) {
        let ci = |mut v: [f64; 3]| {
            v.sort_by(f64::total_cmp);
            EstimateCI::new(v[1], v[0], v[2]).unwrap()
        };
        let (a, b) = (ci(a), ci(b));
        prop_assert!(!strong_test(&a, &b) || weak_test(&a, &b));
        prop_assert!(!weak_test(&a, &a));
    }

    #[test]
    fn shares_at_extreme_p(n in 1usize..60) {
        let zeros: Vec<ResultRow> = (0..n).map(|_| row(0.0)).collect();
        let ones: Vec<ResultRow> = (0..n).map(|_| row(1.0)).collect();
        for (rows, share) in [(zeros, 1.0), (ones, 0.0)] {
            let s = significance_shares(&rows, &[GroupBy::Scheme], &SIGNIFICANCE_LEVELS, SignificanceRule::Joint).unwrap();
            prop_assert_eq!(s.len(), 3);
            for r in s {
                prop_assert_eq!(r.share, share);
                prop_assert!(r.lower <= share && share <= r.upper);
            }
        }
    }

    #[test]
    fn wilson_contains_share(n in 1usize..500, frac in 0.0f64..=1.0) {
        let k = ((n as f64) * frac).round() as usize;
        let (lo, hi) = wilson_interval(k, n, Z_95);
        let p = k as f64 / n as f64;
        prop_assert!(0.0 <= lo && lo <= p && p <= hi && hi <= 1.0);
    }

    #[test]
    fn singleton_clusters_match_hc1(xs in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 6..40)) {
        let n = xs.len();
        let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { xs[i].0 });
        let y: Vec<f64> = xs.iter().map(|(a, e)| 1.0 + 0.5 * a + e).collect();
        let spread = xs.iter().map(|p| p.0).fold(f64::MIN, f64::max) - xs.iter().map(|p| p.0).fold(f64::MAX, f64::min);
        prop_assume!(spread > 0.5);
        let fit = ols_fit(&y, &x).unwrap();
        let clusters: Vec<usize> = (0..n).collect();
        let v = cluster_robust_vcov(&x, &fit.residuals, &clusters, DofParams { n, k: 2 }).unwrap();
        // HC1: n/(n-k) (X'X)^-1 X' diag(u^2) X (X'X)^-1; CR1 adds G/(G-1) * (N-1)/(N-K) with G = N
        let mut meat = DMatrix::zeros(2, 2);
        for i in 0..n {
            let xi = x.row(i).transpose();
            meat += &xi * xi.transpose() * fit.residuals[i].powi(2);
        }
        let bread = (x.transpose() * &x).try_inverse().unwrap();
        let hc1 = &bread * meat * &bread * (n as f64 / (n as f64 - 2.0));
        for k in 0..4 {
            let (a, b) = (v[(k / 2, k % 2)], hc1[(k / 2, k % 2)]);
            prop_assert!((a - b).abs() <= 1e-9 * b.abs().max(1e-12));
        }
    }

    #[test]
    fn saturated_adjusted_r2(seed in 0u64..1000) {
        // as many regressors as leaves one residual degree of freedom
        let n = 8;
        let x = DMatrix::from_fn(n, n - 1, |i, j| if j == 0 { 1.0 } else { (((i + 1) * (j + 3)) as f64 + seed as f64).sin() });
        let y: Vec<f64> = (0..n).map(|i| ((i as f64) * 0.7 + seed as f64).cos()).collect();
        let fit = ols_fit(&y, &x).unwrap();
        let clusters: Vec<usize> = (0..n).map(|i| i % 4).collect();
        let v = cluster_robust_vcov(&x, &fit.residuals, &clusters, DofParams { n, k: n - 1 }).unwrap();
        let names = (0..n - 1).map(|j| format!("x{j}")).collect();
        let stats = fit_statistics(names, &fit, v, vec![1], &y, 4, 0, 0).unwrap();
        let (r2, adj) = (stats.r2, stats.adj_r2);
        prop_assert!(r2 <= 1.0 + 1e-12);
        prop_assert!(adj <= r2 + 1e-12);
    }

    #[test]
    fn enumeration_matches_closed_form(n_countries in 1usize..3, n_rain in 0usize..3, n_temp in 0usize..3, n_schemes in 1usize..11, combos in any::<bool>()) {
        prop_assume!(n_rain + n_temp > 0);
        let cfg = BatteryConfig {
            countries: (0..n_countries).map(|i| format!("c{i}")).collect(),
            rain_products: (0..n_rain).map(|i| format!("r{i}")).collect(),
            temp_products: (0..n_temp).map(|i| format!("t{i}")).collect(),
            schemes: ObfuscationScheme::ALL[..n_schemes].to_vec(),
            combos: if combos { ComboBlock::ALL.to_vec() } else { vec![] },
            ..Default::default()
        };
        let keys = enumerate_runs(&cfg).unwrap();
        prop_assert_eq!(keys.len(), cfg.single_run_count() + cfg.combo_run_count());
        prop_assert!(keys.windows(2).all(|w| w[0] < w[1]));
    }
}
