use proptest::prelude::*;

use distdiff_core::data::Standardization;
use distdiff_core::metrics::{coverage, quantile_sorted};
use distdiff_core::noisedist::transform_cholesky;
use distdiff_core::scoring::crps_empirical;
use distdiff_core::Matrix;

fn double_loop_crps(xs: &[f64], y: f64) -> f64 {
    let m = xs.len() as f64;
    let first = xs.iter().map(|x| (x - y).abs()).sum::<f64>() / m;
    let mut pairs = 0.0;
    for a in xs {
        for b in xs {
            pairs += (a - b).abs();
        }
    }
    first - pairs / (2.0 * m * (m - 1.0))
}

proptest! {
    #[test]
    fn sorted_crps_matches_double_loop(xs in prop::collection::vec(-50.0..50.0f64, 2..40), y in -60.0..60.0f64) {
        let m = Matrix::from_vec(xs.len(), 1, xs.clone()).unwrap();
        let fast = crps_empirical(&m, &[y]).unwrap();
        let slow = double_loop_crps(&xs, y);
        prop_assert!((fast - slow).abs() <= 1e-10 * (1.0 + slow.abs()));
    }

    #[test]
    fn cholesky_transform_is_positive_definite(
        raw in prop::collection::vec(-1e3..1e3f64, 1..=36usize),
    ) {
        let d = (raw.len() as f64).sqrt() as usize;
        let l = Matrix::from_vec(d, d, raw[..d * d].to_vec()).unwrap();
        let p = transform_cholesky(&vec![0.0; d], &l).unwrap();
        for k in 0..d {
            prop_assert!(p.chol()[(k, k)] >= 1e-6);
            let norm: f64 = (k + 1..d).map(|r| p.chol()[(r, k)].powi(2)).sum::<f64>().sqrt();
            prop_assert!(norm <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn standardization_round_trips(
        rows in prop::collection::vec((-1e3..1e3f64, -1e3..1e3f64), 2..30),
    ) {
        let c = Matrix::from_vec(rows.len(), 1, rows.iter().map(|r| r.0).collect()).unwrap();
        let y = Matrix::from_vec(rows.len(), 1, rows.iter().map(|r| r.1).collect()).unwrap();
        let all: Vec<usize> = (0..rows.len()).collect();
        let s = Standardization::fit(&c, &y, &all).unwrap();
        for r in &rows {
            let back = s.destandardize_targets(&s.standardize_targets(&[r.1]).unwrap()).unwrap()[0];
            prop_assert!((back - r.1).abs() <= 1e-9 * (1.0 + r.1.abs()));
            let back = s.destandardize_features(&s.standardize_features(&[r.0]).unwrap()).unwrap()[0];
            prop_assert!((back - r.0).abs() <= 1e-9 * (1.0 + r.0.abs()));
        }
    }

    #[test]
    fn quantiles_are_monotone(mut xs in prop::collection::vec(-1e6..1e6f64, 1..50), p in 0.0..1.0f64, q in 0.0..1.0f64) {
        xs.sort_by(f64::total_cmp);
        let (lo, hi) = if p <= q { (p, q) } else { (q, p) };
        prop_assert!(quantile_sorted(&xs, lo) <= quantile_sorted(&xs, hi));
        prop_assert!(quantile_sorted(&xs, 0.0) == xs[0]);
        prop_assert!(quantile_sorted(&xs, 1.0) == xs[xs.len() - 1]);
    }

    #[test]
    fn coverage_is_a_fraction(xs in prop::collection::vec(-10.0..10.0f64, 4..40), y in -12.0..12.0f64) {
        let m = Matrix::from_vec(xs.len() / 2, 2, xs[..xs.len() / 2 * 2].to_vec()).unwrap();
        let c = coverage(&m, &[y, 0.0], 0.05).unwrap();
        prop_assert!([0.0, 0.5, 1.0].contains(&c));
    }
}
