//! Property-based invariants over images, aggregation, the loss, blurring and
//! rank statistics.

use microiqa::degrade::apply_blur;
use microiqa::eval::{build_ranking, kendall_tau};
use microiqa::image::{partition_patches, rescale_unit};
use microiqa::net::{aggregate, weighted_mean, PatchPrediction};
use microiqa::train::{loss_wp, loss_wp_gradients};
use microiqa::{Image, PATCH_SIZE};
use proptest::prelude::*;

fn image_strategy(max_side: usize) -> impl Strategy<Value = Image> {
    (8..=max_side, 8..=max_side).prop_flat_map(|(h, w)| {
        prop::collection::vec(-2.0f32..3.0, h * w).prop_map(move |px| Image::new(h, w, px).unwrap())
    })
}

fn prediction_strategy() -> impl Strategy<Value = PatchPrediction> {
    (1usize..64).prop_flat_map(|n| {
        (
            prop::collection::vec(-4.0f64..4.0, n),
            prop::collection::vec(1e-6f64..20.0, n),
        )
            .prop_map(|(qualities, weights)| PatchPrediction { qualities, weights })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rescale_lands_in_unit_range(img in image_strategy(40)) {
        let out = rescale_unit(&img);
        let (lo, hi) = out.min_max();
        prop_assert!(lo >= 0.0 && hi <= 1.0);
        if img.pixels().iter().any(|&v| v > 0.0) {
            prop_assert!(lo == 0.0 || hi == 1.0);
        }
    }

    #[test]
    fn partition_then_reassemble_is_identity(rows in 1usize..4, cols in 1usize..4, seed in any::<u64>()) {
        let (h, w) = (rows * PATCH_SIZE, cols * PATCH_SIZE);
        let img = Image::from_fn(h, w, |r, c| ((r * 31 + c * 17) as u64 ^ seed) as f32 % 97.0 / 97.0);
        let grid = partition_patches(&img).unwrap();
        prop_assert_eq!(grid.len(), rows * cols);
        prop_assert_eq!(grid.reassemble(), img);
    }

    #[test]
    fn aggregate_is_convex_and_homogeneous(pred in prediction_strategy(), c in 1e-3f64..1e3) {
        let y = aggregate(&pred);
        let lo = pred.qualities.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = pred.qualities.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(y >= lo - 1e-12 && y <= hi + 1e-12);
        let scaled: Vec<f64> = pred.weights.iter().map(|a| a * c).collect();
        prop_assert!((weighted_mean(&pred.qualities, &scaled) - y).abs() <= 1e-12 * (1.0 + y.abs()));
    }

    #[test]
    fn loss_is_sum_of_parts(pred in prediction_strategy(), target in -3.0f64..3.0) {
        let l = loss_wp(&pred, target);
        prop_assert!(l.e_w >= 0.0 && l.e_p >= 0.0);
        prop_assert!((l.e_wp - (l.e_w + l.e_p)).abs() <= 1e-12);
        let worst = pred.qualities.iter().map(|y| (y - target).abs()).fold(0.0, f64::max);
        prop_assert!(l.e_w <= worst + 1e-12);
        let (again, dq, da) = loss_wp_gradients(&pred, target);
        prop_assert_eq!(again, l);
        prop_assert_eq!(dq.len(), pred.len());
        prop_assert_eq!(da.len(), pred.len());
    }

    #[test]
    fn blur_commutes_with_transpose(img in image_strategy(24), sigma in 0.3f64..3.0) {
        let a = apply_blur(&img, sigma).unwrap().transpose();
        let b = apply_blur(&img.transpose(), sigma).unwrap();
        for (x, y) in a.pixels().iter().zip(b.pixels()) {
            prop_assert!((x - y).abs() <= 1e-5, "{} vs {}", x, y);
        }
    }

    #[test]
    fn kendall_reversal_flips_sign(values in prop::collection::hash_set(-1000i32..1000, 2..30)) {
        let x: Vec<f64> = values.iter().map(|&v| v as f64).collect();
        let y: Vec<f64> = (0..x.len()).map(|i| ((i * 7919) % 101) as f64 + i as f64 * 1e-3).collect();
        let reversed: Vec<f64> = y.iter().map(|v| -v).collect();
        let t = kendall_tau(&x, &y).unwrap();
        prop_assert!((kendall_tau(&x, &reversed).unwrap() + t).abs() < 1e-12);
    }

    #[test]
    fn kendall_ignores_monotone_transforms(
        pairs in prop::collection::vec((-50i32..50, -50i32..50), 2..40),
    ) {
        let x: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
        let y: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
        let fx: Vec<f64> = x.iter().map(|v| (v / 10.0).exp()).collect();
        let fy: Vec<f64> = y.iter().map(|v| v * v * v + 3.0 * v).collect();
        match (kendall_tau(&x, &y), kendall_tau(&fx, &fy)) {
            (Ok(a), Ok(b)) => prop_assert!((a - b).abs() < 1e-12),
            (a, b) => prop_assert!(a.is_err() && b.is_err()),
        }
    }

    #[test]
    fn ranking_ignores_positive_affine_maps(
        scores in prop::collection::vec(-100.0f64..100.0, 1..30),
        scale in 0.01f64..100.0,
        shift in -50.0f64..50.0,
        higher in any::<bool>(),
    ) {
        let ids: Vec<String> = (0..scores.len()).map(|i| format!("img{i:03}")).collect();
        let mapped: Vec<f64> = scores.iter().map(|s| s * scale + shift).collect();
        let a: Vec<String> = build_ranking(&ids, &scores, higher).unwrap().into_iter().map(|r| r.id).collect();
        let b: Vec<String> = build_ranking(&ids, &mapped, higher).unwrap().into_iter().map(|r| r.id).collect();
        // Affine maps in floating point may merge or split near-ties.
        let distinct = {
            let mut s = scores.clone();
            s.sort_by(f64::total_cmp);
            s.windows(2).all(|w| w[1] - w[0] > 1e-9)
        };
        if distinct {
            prop_assert_eq!(a, b);
        }
    }
}
