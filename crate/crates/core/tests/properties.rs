use std::convert::Infallible;
use std::f64::consts::{PI, TAU};
use std::sync::OnceLock;

use num_complex::Complex64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use scattrack::bayesopt::{expected_improvement, gp_posterior, minimize_angle, GPModel};
use scattrack::forward::{direction_grid, solve_far_field, FarFieldVector, WaveContext};
use scattrack::geometry::{
    boundary_point, discretize, min_origin_distance_bound, random_shape, PerturbedEllipse, Pose, ShapeRanges, Vec2,
};
use scattrack::inneropt::{minimize_tau, ObjectiveContext};
use scattrack::motion::{build_rotation_library, translate_far_field, RotationLibrary};
use scattrack::nn::{weighted_complex_loss, ShapeTarget, DEFAULT_LOSS_WEIGHTS, SLOTS};

fn ctx() -> WaveContext {
    WaveContext::new(1.0, Vec2::new(1.0, 0.0), 1.0).unwrap()
}

fn shape_from(seed: u64) -> PerturbedEllipse {
    random_shape(&mut ChaCha8Rng::seed_from_u64(seed), &ShapeRanges::default()).unwrap()
}

fn library() -> &'static RotationLibrary {
    static LIB: OnceLock<RotationLibrary> = OnceLock::new();
    LIB.get_or_init(|| build_rotation_library(&shape_from(7), &ctx(), 128, 128).unwrap())
}

fn base_field() -> &'static FarFieldVector {
    static U: OnceLock<FarFieldVector> = OnceLock::new();
    U.get_or_init(|| solve_far_field(&shape_from(8), &Pose::identity(), &ctx(), 128, &direction_grid(32)).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn generated_shapes_enclose_origin(seed in any::<u64>()) {
        let shape = shape_from(seed);
        prop_assert!(shape.satisfies_enclosure_condition());
        let bound = min_origin_distance_bound(&shape);
        let closest = (0..10_000)
            .map(|i| boundary_point(&shape, TAU * i as f64 / 10_000.0).0.norm())
            .fold(f64::INFINITY, f64::min);
        prop_assert!(closest >= bound, "{closest} < {bound}");
    }

    #[test]
    fn boundary_closes(seed in any::<u64>(), t in 0.0..TAU) {
        let shape = shape_from(seed);
        let (a, _) = boundary_point(&shape, t);
        let (b, _) = boundary_point(&shape, t + TAU);
        prop_assert!((a - b).norm() <= 1e-12 * a.norm());
    }

    #[test]
    fn translations_compose_in_discretization(
        seed in any::<u64>(),
        t1 in prop::array::uniform2(-10.0..10.0f64),
        t2 in prop::array::uniform2(-10.0..10.0f64),
    ) {
        let shape = shape_from(seed);
        let (a, b) = (Vec2::new(t1[0], t1[1]), Vec2::new(t2[0], t2[1]));
        let once = discretize(&shape, &Pose::new(a + b, 0.0), 64).unwrap();
        let twice = discretize(&shape, &Pose::new(a, 0.0), 64).unwrap();
        for (p, q) in once.nodes.iter().zip(&twice.nodes) {
            prop_assert!((p - (q + b)).norm() <= 1e-13 * (1.0 + p.norm()));
        }
    }

    #[test]
    fn far_field_translations_compose(
        t1 in prop::array::uniform2(-10.0..10.0f64),
        t2 in prop::array::uniform2(-10.0..10.0f64),
    ) {
        let (a, b) = (Vec2::new(t1[0], t1[1]), Vec2::new(t2[0], t2[1]));
        let u = base_field();
        let stepwise = translate_far_field(&translate_far_field(u, &a), &b);
        prop_assert!(stepwise.max_diff(&translate_far_field(u, &(a + b))) <= 1e-12 * u.max_abs());
    }

    #[test]
    fn expected_improvement_is_nonnegative(mean in -10.0..10.0f64, var in 0.0..10.0f64, best in -10.0..10.0f64, xi in 0.0..1.0f64) {
        prop_assert!(expected_improvement(mean, var, best, xi) >= 0.0);
    }

    #[test]
    fn noiseless_gp_interpolates(xs in prop::collection::btree_set(-300i32..300, 1..8), seed in any::<u64>()) {
        let obs: Vec<(f64, f64)> = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| (x as f64 / 100.0, ((seed.wrapping_add(i as u64) % 1000) as f64 / 100.0) - 5.0))
            .collect();
        let model = GPModel::new(0.8, 2.0, 0.0).unwrap().with_observations(obs.clone());
        let post = gp_posterior(&model, &obs.iter().map(|o| o.0).collect::<Vec<_>>()).unwrap();
        for ((_, y), (m, _)) in obs.iter().zip(post) {
            prop_assert!((m - y).abs() <= 1e-8, "{m} vs {y}");
        }
    }

    #[test]
    fn variance_shrinks_with_more_data(xs in prop::collection::vec(-3.0..3.0f64, 1..8), q in -4.0..4.0f64) {
        let obs: Vec<(f64, f64)> = xs.iter().map(|&x| (x, x.sin())).collect();
        let mut previous = f64::INFINITY;
        for n in 0..=obs.len() {
            let model = GPModel::new(0.6, 1.5, 1e-4).unwrap().with_observations(obs[..n].to_vec());
            let (_, var) = gp_posterior(&model, &[q]).unwrap()[0];
            prop_assert!(var <= previous + 1e-12);
            previous = var;
        }
    }

    #[test]
    fn angle_search_stays_in_bracket_and_returns_best(
        center in -PI..PI,
        phi in 0.1..PI,
        a in 0.1..3.0f64,
        shift in -4.0..4.0f64,
        budget in 4usize..12,
    ) {
        let f = |x: f64| -> Result<f64, Infallible> { Ok(a * (1.0 - (x - shift).cos()) + 0.1 * (3.0 * x).sin()) };
        let search = minimize_angle(f, center, phi, budget).unwrap();
        prop_assert_eq!(search.trace.len(), budget);
        for e in &search.trace {
            prop_assert!(e.theta >= center - phi - 1e-12 && e.theta <= center + phi + 1e-12);
            prop_assert!(search.value <= e.value);
        }
        prop_assert!(search.trace.iter().any(|e| e.theta == search.theta_star && e.value == search.value));
    }

    #[test]
    fn shape_codec_round_trips(seed in any::<u64>()) {
        let shape = shape_from(seed);
        let decoded = ShapeTarget::encode(&shape).unwrap().decode(&ShapeRanges::default());
        prop_assert!((decoded.r() - shape.r()).abs() <= 1e-12);
        prop_assert!((decoded.e1() - shape.e1()).norm() <= 1e-12);
        for (f, g) in decoded.fourier().iter().zip(shape.fourier()) {
            prop_assert!((f - g).norm() <= 1e-12);
        }
    }

    #[test]
    fn loss_ignores_full_turns_of_arguments(
        values in prop::collection::vec(-2.0..2.0f64, 2 * SLOTS),
        target in prop::collection::vec(-2.0..2.0f64, 2 * SLOTS),
        turns in prop::collection::vec(-3i32..3, SLOTS),
    ) {
        let pred = ShapeTarget::from_slice(&values).unwrap();
        let mut shifted = pred.clone();
        for (a, k) in shifted.arguments.iter_mut().zip(&turns) {
            *a += TAU * *k as f64;
        }
        let t = ShapeTarget::from_slice(&target).unwrap();
        let l0 = weighted_complex_loss(&pred, &t, &DEFAULT_LOSS_WEIGHTS);
        let l1 = weighted_complex_loss(&shifted, &t, &DEFAULT_LOSS_WEIGHTS);
        prop_assert!((l0 - l1).abs() <= 1e-10 * (1.0 + l0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn translation_search_respects_ball(
        theta in 0.0..TAU,
        planted in prop::array::uniform2(-6.0..6.0f64),
        center in prop::array::uniform2(-1.0..1.0f64),
        radius in 0.5..3.0f64,
    ) {
        let lib = library();
        let dirs = direction_grid(24);
        let measured = translate_far_field(&lib.query(theta + 0.3, &dirs), &Vec2::new(planted[0], planted[1]));
        let c = Vec2::new(center[0], center[1]);
        let octx = ObjectiveContext::new(measured, lib, c, radius).unwrap();
        let found = minimize_tau(theta, &octx);
        prop_assert!((found.tau - c).norm() <= radius * (1.0 + 1e-12));
        prop_assert!(found.value.is_finite() && found.value >= 0.0);
    }

    #[test]
    fn library_reproduces_unrotated_grid(p in 0usize..128, q in 0usize..128) {
        let lib = library();
        let entry = lib.entry(p, q);
        prop_assert!(entry.is_finite());
        prop_assert!(entry != Complex64::default());
    }
}
