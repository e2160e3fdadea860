//! Bulk invariants and a bisection oracle for the 6-D hypersphere clamp.

use align_core::{hypersphere_clamp, Stage, TwistCommand, VelocityBounds};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn combined_norm(t: &TwistCommand, b: &VelocityBounds) -> f64 {
    ((t.linear / b.eff_lin_mm_s).norm_squared() + (t.angular / b.eff_rot_rad_s).norm_squared())
        .sqrt()
}

fn random_case(rng: &mut ChaCha8Rng) -> (TwistCommand, VelocityBounds) {
    let v = || Vector3::from_fn(|_, _| 0.0);
    let mut raw = TwistCommand { linear: v(), angular: v(), stage: Stage::Raw };
    raw.linear = Vector3::from_fn(|_, _| rng.random_range(-500.0..500.0));
    raw.angular = Vector3::from_fn(|_, _| rng.random_range(-3.0..3.0));
    let lin = rng.random_range(1.0..120.0);
    let rot = rng.random_range(0.01..1.0);
    let bounds = VelocityBounds {
        base_lin_mm_s: lin,
        base_rot_rad_s: rot,
        eff_lin_mm_s: lin,
        eff_rot_rad_s: rot,
    };
    (raw, bounds)
}

/// 100k random twists: the clamped result stays on or inside the unit ball
/// of the bound-normalized 6-D space, passes through untouched when already
/// inside, and when active only rescales (never re-aims) the command.
#[test]
fn clamp_invariants_hold_over_100k_random_twists() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC1A3);
    for i in 0..100_000 {
        let (raw, bounds) = random_case(&mut rng);
        let clamped = hypersphere_clamp(&raw, &bounds);

        assert!(clamped.is_finite(), "case {i}");
        let norm_after = combined_norm(&clamped, &bounds);
        assert!(norm_after <= 1.0 + 1e-9, "case {i}: norm {norm_after}");

        let norm_before = combined_norm(&raw, &bounds);
        if norm_before <= 1.0 {
            assert_eq!(clamped.linear, raw.linear, "case {i}: inside ball must pass through");
            assert_eq!(clamped.angular, raw.angular, "case {i}");
        } else {
            assert!(
                (norm_after - 1.0).abs() <= 1e-12,
                "case {i}: active clamp must land on the sphere, norm {norm_after}"
            );
            // Single scale on both parts: same factor within rounding.
            let s_lin = clamped.linear.norm() / raw.linear.norm();
            let s_ang = if raw.angular.norm() > 0.0 {
                clamped.angular.norm() / raw.angular.norm()
            } else {
                s_lin
            };
            assert!((s_lin - s_ang).abs() <= 1e-12, "case {i}: {s_lin} vs {s_ang}");
            assert!(
                clamped.linear.cross(&raw.linear).norm()
                    <= 1e-9 * raw.linear.norm() * clamped.linear.norm().max(1.0),
                "case {i}: direction changed"
            );
            assert!(clamped.linear.dot(&raw.linear) >= 0.0, "case {i}");
            assert!(clamped.angular.dot(&raw.angular) >= 0.0, "case {i}");
        }
    }
}

/// Independent oracle: find the scale factor by bisection on
/// `‖s·u‖ − 1 = 0` and compare the whole clamped twist against `s*·raw`.
#[test]
fn active_clamp_matches_bisection_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xB15E);
    let mut checked = 0;
    while checked < 10_000 {
        let (raw, bounds) = random_case(&mut rng);
        if combined_norm(&raw, &bounds) <= 1.0 {
            continue;
        }
        checked += 1;

        let scaled_norm = |s: f64| {
            let t = TwistCommand {
                linear: raw.linear * s,
                angular: raw.angular * s,
                stage: Stage::Raw,
            };
            combined_norm(&t, &bounds)
        };
        let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if scaled_norm(mid) > 1.0 {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi - lo < 1e-16 {
                break;
            }
        }
        let s_star = 0.5 * (lo + hi);

        let clamped = hypersphere_clamp(&raw, &bounds);
        let lin_err = (clamped.linear - raw.linear * s_star).norm();
        let ang_err = (clamped.angular - raw.angular * s_star).norm();
        let scale = raw.linear.norm().max(raw.angular.norm()).max(1.0);
        assert!(
            lin_err <= 1e-9 * scale && ang_err <= 1e-9 * scale,
            "case {checked}: lin_err {lin_err}, ang_err {ang_err}"
        );
    }
}

/// Asymmetric effective bounds push the clamp toward the tighter axis: a
/// pure-translation twist saturates exactly at the linear cap, a
/// pure-rotation twist at the rotational cap.
#[test]
fn pure_component_twists_saturate_at_their_own_caps() {
    let bounds = VelocityBounds {
        base_lin_mm_s: 60.0,
        base_rot_rad_s: 0.5,
        eff_lin_mm_s: 15.0,
        eff_rot_rad_s: 0.125,
    };
    let lin_only = TwistCommand {
        linear: Vector3::new(-300.0, 400.0, 0.0),
        angular: Vector3::zeros(),
        stage: Stage::Raw,
    };
    let c = hypersphere_clamp(&lin_only, &bounds);
    assert!((c.linear.norm() - 15.0).abs() <= 1e-12);
    assert_eq!(c.angular, Vector3::zeros());

    let rot_only = TwistCommand {
        linear: Vector3::zeros(),
        angular: Vector3::new(0.0, 2.0, 0.0),
        stage: Stage::Raw,
    };
    let c = hypersphere_clamp(&rot_only, &bounds);
    assert!((c.angular.norm() - 0.125).abs() <= 1e-12);
    assert_eq!(c.linear, Vector3::zeros());
}

/// A twist exactly on the sphere passes through unchanged.
#[test]
fn on_sphere_twist_is_untouched() {
    let bounds = VelocityBounds {
        base_lin_mm_s: 10.0,
        base_rot_rad_s: 0.1,
        eff_lin_mm_s: 10.0,
        eff_rot_rad_s: 0.1,
    };
    let raw = TwistCommand {
        linear: Vector3::new(10.0, 0.0, 0.0), // normalized norm exactly 1
        angular: Vector3::zeros(),
        stage: Stage::Raw,
    };
    let c = hypersphere_clamp(&raw, &bounds);
    assert_eq!(c.linear, raw.linear);
    assert_eq!(c.angular, raw.angular);
}
