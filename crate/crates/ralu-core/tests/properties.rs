//! Property-based invariants over the grid, schedule and selection math.

use proptest::prelude::*;

use ralu_core::caching::similarity_rank;
use ralu_core::io::{read_lat1, write_lat1};
use ralu_core::latent_grid::{BlockCovariance, LatentGrid, Level, TokenSet};
use ralu_core::region_select::{select_topk, EdgeScoreMap};
use ralu_core::schedule::{
    cdf_shift, discretize_timesteps, injection_coefficients, inv_cdf_shift, jsd, Density,
};

fn low_grid_strategy() -> impl Strategy<Value = LatentGrid> {
    (1usize..5, 1usize..5, 1usize..3).prop_flat_map(|(h, w, c)| {
        proptest::collection::vec(-100.0f64..100.0, h * w * c)
            .prop_map(move |values| LatentGrid::new(h, w, c, Level::Low, values).unwrap())
    })
}

proptest! {
    #[test]
    fn upsample_then_downsample_is_identity(grid in low_grid_strategy()) {
        let round = grid.upsample_nn().unwrap().downsample_avg().unwrap();
        prop_assert_eq!(round, grid);
    }

    #[test]
    fn sigma_is_symmetric_and_near_idempotent(
        x in proptest::collection::vec(-10.0f64..10.0, 16),
        y in proptest::collection::vec(-10.0f64..10.0, 16),
    ) {
        let cov = BlockCovariance::new(4, 2, 2).unwrap();
        let sx = cov.apply(&x).unwrap();
        let sy = cov.apply(&y).unwrap();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
        prop_assert!((dot(&sx, &y) - dot(&x, &sy)).abs() < 1e-9);
        let ssx = cov.apply(&sx).unwrap();
        for (twice, once) in ssx.iter().zip(sx.iter()) {
            prop_assert!((twice - 4.0 * once).abs() < 1e-9);
        }
    }

    #[test]
    fn selection_preserves_coverage(
        grid in low_grid_strategy(),
        picks in proptest::collection::vec((0usize..5, 0usize..5), 0..8),
    ) {
        let tokens = TokenSet::from_low_grid(&grid).unwrap();
        let mut selection: Vec<(usize, usize)> = picks
            .into_iter()
            .filter(|&(r, c)| r < grid.height && c < grid.width)
            .collect();
        selection.sort();
        selection.dedup();
        let mixed = tokens.upsample_selected(&selection).unwrap();
        mixed.validate_coverage().unwrap();
        prop_assert_eq!(
            mixed.token_count(),
            grid.height * grid.width + 3 * selection.len()
        );
        // assembling always yields the full high grid
        let assembled = mixed.assemble_high().unwrap();
        prop_assert_eq!(assembled.height, 2 * grid.height);
    }

    #[test]
    fn cdf_roundtrip_tight(t in 0.0f64..=1.0, h in 0.05f64..16.0) {
        let u = cdf_shift(t, h).unwrap();
        let back = inv_cdf_shift(u, h).unwrap();
        prop_assert!((back - t).abs() <= 1e-12, "t {} back {}", t, back);
    }

    #[test]
    fn injection_identities(e in 0.01f64..=1.0, c in 0.001f64..=0.25) {
        let coef = injection_coefficients(e, c).unwrap();
        prop_assert!((coef.a * e - coef.s_next).abs() <= 1e-12);
        prop_assert!((coef.b - (1.0 - coef.s_next)).abs() <= 1e-12);
        if e < 1.0 {
            prop_assert!(coef.s_next < e);
        }
    }

    #[test]
    fn injection_start_monotone_in_noise_strength(e in 0.05f64..0.95) {
        let mut prev = 0.0;
        for i in 1..=20 {
            let c = 0.25 * i as f64 / 20.0;
            let s = injection_coefficients(e, c).unwrap().s_next;
            prop_assert!(s > prev);
            prev = s;
        }
        prop_assert!(prev < e); // even at c = 1/4 the start stays before e
    }

    #[test]
    fn topk_size_and_nesting(
        scores in proptest::collection::vec(0.0f64..50.0, 12),
        ratio_a in 0.0f64..=1.0,
        ratio_b in 0.0f64..=1.0,
    ) {
        let map = EdgeScoreMap {
            base_height: 3,
            base_width: 4,
            scores,
            selected: Vec::new(),
            ratio: 0.0,
        };
        let (lo, hi) = if ratio_a <= ratio_b { (ratio_a, ratio_b) } else { (ratio_b, ratio_a) };
        let small = select_topk(&map, lo).unwrap();
        let big = select_topk(&map, hi).unwrap();
        prop_assert_eq!(small.selected.len(), (lo * 12.0 - 1e-9).ceil().max(0.0) as usize);
        for p in &small.selected {
            prop_assert!(big.selected.contains(p));
        }
    }

    #[test]
    fn discretize_monotone_with_exact_endpoints(
        s in 0.0f64..0.8,
        span in 0.05f64..0.99,
        h in 0.2f64..16.0,
        n in 1u32..40,
    ) {
        let e = (s + span).min(1.0);
        prop_assume!(e > s);
        let ts = discretize_timesteps(s, e, h, n).unwrap();
        prop_assert_eq!(ts.len(), n as usize + 1);
        prop_assert_eq!(ts[0], s);
        prop_assert_eq!(ts[n as usize], e);
        prop_assert!(ts.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn lat1_roundtrip(grid in low_grid_strategy()) {
        // narrow to f32 first so the round trip is exact
        let narrowed = LatentGrid::new(
            grid.height,
            grid.width,
            grid.channels,
            grid.level,
            grid.values.iter().map(|v| f64::from(*v as f32)).collect(),
        )
        .unwrap();
        let back = read_lat1(&write_lat1(&narrowed)).unwrap();
        prop_assert_eq!(back, narrowed);
    }

    #[test]
    fn similarity_rank_is_permutation(
        first in proptest::collection::vec(-5.0f64..5.0, 24),
        second in proptest::collection::vec(-5.0f64..5.0, 24),
    ) {
        let order = similarity_rank(&first, &second, 2).unwrap();
        let mut sorted = order.clone();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, (0..12).collect::<Vec<_>>());
    }

    #[test]
    fn jsd_bounds_on_random_densities(
        a in proptest::collection::vec(0.01f64..10.0, 16),
        b in proptest::collection::vec(0.01f64..10.0, 16),
    ) {
        let p = Density::from_fn(512, |t| {
            let idx = ((t * 15.99) as usize).min(15);
            a[idx]
        })
        .unwrap();
        let q = Density::from_fn(512, |t| {
            let idx = ((t * 15.99) as usize).min(15);
            b[idx]
        })
        .unwrap();
        let d_pq = jsd(&p, &q).unwrap();
        let d_qp = jsd(&q, &p).unwrap();
        prop_assert!(d_pq >= 0.0);
        prop_assert!(d_pq <= std::f64::consts::LN_2 + 1e-12);
        prop_assert!((d_pq - d_qp).abs() < 1e-12);
        prop_assert_eq!(jsd(&p, &p).unwrap(), 0.0);
    }
}
