use proptest::prelude::*;

use caqzo::diagnostics::grid_span;
use caqzo::{
    sample_directions, BlockCalibration, CompanderFamily, CompanderSpec, DirectionKind, GridSpec,
    Quantizer,
};

fn family() -> impl Strategy<Value = CompanderFamily> {
    prop_oneof![
        Just(CompanderFamily::Identity),
        Just(CompanderFamily::MuLaw),
        Just(CompanderFamily::ALaw),
        Just(CompanderFamily::GaussianQuantile),
    ]
}

fn quantizer(family: CompanderFamily, bits: u32, alpha: f64) -> Quantizer {
    let spec = CompanderSpec::new(family, family.default_strength(), 1.0).unwrap();
    let grid = GridSpec::for_compander(&spec, bits).unwrap();
    Quantizer::new(spec, grid, BlockCalibration::uniform(1, alpha)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn grid_points_are_fixed_points(f in family(), bits in 1u32..=12, frac in 0.0f64..1.0) {
        let spec = CompanderSpec::new(f, f.default_strength(), 1.0).unwrap();
        let grid = GridSpec::for_compander(&spec, bits).unwrap();
        let i = ((frac * f64::from(grid.levels)) as u32).min(grid.last());
        prop_assert_eq!(grid.quantize_uniform(grid.value(i)).unwrap().index, i);
        prop_assert!(!grid.quantize_uniform(grid.value(i)).unwrap().clipped);
    }

    #[test]
    fn uniform_rounding_is_nearest(bits in 1u32..=10, z in -1.0f64..1.0) {
        let grid = GridSpec::new(bits, -1.0, 1.0).unwrap();
        let i = grid.quantize_uniform(z).unwrap().index;
        let err = (grid.value(i) - z).abs();
        prop_assert!(err <= grid.delta / 2.0 * (1.0 + 1e-12));
        for j in [i.saturating_sub(1), (i + 1).min(grid.last())] {
            prop_assert!(err <= (grid.value(j) - z).abs());
        }
    }

    #[test]
    fn quantizer_is_monotone(f in family(), bits in 1u32..=8, alpha in 0.1f64..5.0,
                             a in -6.0f64..6.0, b in -6.0f64..6.0) {
        let q = quantizer(f, bits, alpha);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let mut clips = 0;
        let ql = q.quantize(&[lo], &mut clips).unwrap()[0];
        let qh = q.quantize(&[hi], &mut clips).unwrap()[0];
        prop_assert!(ql <= qh);
    }

    #[test]
    fn quantizer_is_idempotent(f in family(), bits in 1u32..=10, alpha in 0.1f64..5.0, x in -6.0f64..6.0) {
        let q = quantizer(f, bits, alpha);
        let mut clips = 0;
        let once = q.quantize(&[x], &mut clips).unwrap();
        let twice = q.quantize(&once, &mut clips).unwrap();
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn compander_roundtrip(f in family(), alpha in 0.1f64..5.0, t in -1.0f64..1.0) {
        let spec = CompanderSpec::new(f, f.default_strength(), alpha).unwrap();
        let x = t * spec.x_bound();
        let back = spec.phi_inv(spec.phi(x).unwrap()).unwrap();
        prop_assert!((back - x).abs() <= 1e-12 * alpha, "{} {} {}", f, x, back);
    }

    #[test]
    fn rounding_residual_is_bounded_by_slope(f in family(), bits in 2u32..=10, alpha in 0.1f64..5.0,
                                             t in -1.0f64..1.0) {
        let q = quantizer(f, bits, alpha);
        let spec = q.compander_at(0);
        let x = t * spec.x_bound();
        let mut clips = 0;
        let qx = q.quantize(&[x], &mut clips).unwrap()[0];
        prop_assert_eq!(clips, 0);
        // mean value theorem on [x, Q(x)]: |Q(x) - x| <= (delta / 2) / min phi'
        let (min_slope, _) = spec.phi_prime_bounds(x, qx);
        prop_assert!((qx - x).abs() <= q.grid.delta / 2.0 / min_slope * (1.0 + 1e-9) + 1e-15 * alpha);
    }

    #[test]
    fn span_obeys_mean_value_bracket(f in family(), alpha in 0.1f64..5.0, t in -0.9f64..0.9,
                                     u in -1.0f64..1.0, m in 0.001f64..0.05, bits in 2u32..=8) {
        let spec = CompanderSpec::new(f, f.default_strength(), alpha).unwrap();
        let (lo, hi) = spec.z_range();
        let grid = GridSpec::new(bits, lo, hi).unwrap();
        let b = spec.x_bound();
        let (x, mu) = (t * b, m * b);
        let r = grid_span(x, u, mu, &spec, &grid).unwrap();
        prop_assume!(!r.clipped);
        prop_assert!(r.within_bracket(u, mu, grid.delta, 1e-8), "{:?}", r);
    }

    #[test]
    fn on_grid_stencils_are_fixed_points(f in family(), bits in 2u32..=10, frac in 0.0f64..1.0) {
        let spec = CompanderSpec::new(f, f.default_strength(), 1.0).unwrap();
        let grid = GridSpec::for_compander(&spec, bits).unwrap();
        let c = 1 + ((frac * f64::from(grid.levels - 2)) as u32).min(grid.levels - 3);
        for (s, want) in [(1.0, c + 1), (-1.0, c - 1)] {
            let z = grid.value(c) + s * grid.delta;
            prop_assert_eq!(grid.quantize_uniform(z).unwrap().index, want);
        }
    }

    #[test]
    fn rademacher_entries_are_signs(k in 1usize..6, d in 1usize..40, seed in any::<u64>()) {
        let dirs = sample_directions(DirectionKind::Rademacher, k, d, seed).unwrap();
        prop_assert!(dirs.values().iter().all(|v| *v == 1.0 || *v == -1.0));
        prop_assert_eq!(dirs.clone(), sample_directions(DirectionKind::Rademacher, k, d, seed).unwrap());
    }
}
