use std::f64::consts::PI;

use proptest::prelude::*;
use qsd_core::bloch::{constant_of_motion, BlochVector};
use qsd_core::engine::step;
use qsd_core::entropy::fpe::{evolve, FpeOperator, FpeOptions, Implicit, Pdf1DGrid};
use qsd_core::entropy::{ds_env_general, ds_env_theta, ds_env_z};
use qsd_core::io::fmt_f64;
use qsd_core::lindblad::raising_lowering;
use qsd_core::reduction::verify_constant;
use qsd_core::stats::Histogram;
use qsd_core::system::{BallChart, Chart, PureZ, Theta};
use std::sync::Arc;

fn interior_bloch() -> impl Strategy<Value = [f64; 3]> {
    (-0.9..0.9f64, 0.05..0.9f64, -0.9..0.9f64)
        .prop_filter("inside the ball", |(x, y, z)| x * x + y * y + z * z < 0.97)
        .prop_map(|(x, y, z)| [x, y, z])
}

fn f_of(r: &[f64]) -> f64 {
    constant_of_motion(BlochVector::from_slice(r)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn f_has_no_drift_or_noise(r in interior_bloch()) {
        let res = verify_constant(&raising_lowering(), f_of, &r, 1e-5);
        prop_assert!(res.max_abs() < 1e-5 * f_of(&r).max(1.0), "{res:?}");
    }

    #[test]
    fn chart_steps_keep_f(r in interior_bloch(), w1 in -3.0..3.0f64, w2 in -3.0..3.0f64) {
        let dt: f64 = 1e-4;
        let next = step(&raising_lowering(), &r, &[w1 * dt.sqrt(), w2 * dt.sqrt()], dt).unwrap();
        let (a, b) = (f_of(&r), f_of(&next));
        prop_assert!(((a - b) / a).abs() < 1e-9, "{a} {b}");
    }

    #[test]
    fn general_matches_closed_form_z(z in -0.95..0.95f64, dz in -0.05..0.05f64, k in 3..6i32) {
        let dt = 10f64.powi(-k);
        let sys = PureZ::new(0.0).unwrap();
        let g = ds_env_general(&sys, &[z], &[dz], dt).unwrap();
        prop_assert!((g - ds_env_z(z, dz, dt).unwrap()).abs() < 1e-8);
    }

    #[test]
    fn general_matches_closed_form_theta(t in 0.05..3.09f64, dt_ in -0.05..0.05f64, k in 3..6i32) {
        let dt = 10f64.powi(-k);
        let g = ds_env_general(&Theta, &[t], &[dt_], dt).unwrap();
        prop_assert!((g - ds_env_theta(t, dt_, dt).unwrap()).abs() < 1e-8);
    }

    #[test]
    fn ball_chart_round_trips(r in interior_bloch()) {
        let (mut xi, mut back) = ([0.0; 3], [0.0; 3]);
        prop_assert!(BallChart.forward(&r, &mut xi));
        BallChart.inverse(&xi, &mut back);
        for (a, b) in r.iter().zip(&back) {
            prop_assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn fpe_conserves_mass(centre in 0.3..2.8f64, width in 0.05..0.5f64, cells in 50usize..300) {
        let edges = Pdf1DGrid::uniform_edges(0.0, PI, cells);
        let mut init = Pdf1DGrid::from_fn(edges.clone(), |t| (-((t - centre) / width).powi(2)).exp()).unwrap();
        init.normalize();
        let op = FpeOperator::new(&Theta, &edges).unwrap();
        let options = FpeOptions { scheme: Arc::new(Implicit), snapshots: Vec::new() };
        let sol = evolve(&op, &init, 1e-2, 0.5, &options).unwrap();
        prop_assert!((sol.last.mass() - 1.0).abs() < 1e-11);
        prop_assert!(sol.last.p.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn csv_floats_round_trip(v in any::<f64>().prop_filter("finite", |v| v.is_finite())) {
        prop_assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
    }

    #[test]
    fn histogram_accounts_for_every_sample(xs in prop::collection::vec(-2.0..2.0f64, 0..500), bins in 1usize..50) {
        let mut h = Histogram::new(-1.0, 1.0, bins).unwrap();
        h.extend(xs.iter().copied());
        prop_assert_eq!(h.total(), xs.len() as u64);
        let inside = xs.iter().filter(|x| (-1.0..=1.0).contains(*x)).count() as u64;
        prop_assert_eq!(h.counts.iter().sum::<u64>(), inside);
        prop_assert_eq!(h.outside, xs.len() as u64 - inside);
    }

    #[test]
    fn projection_keeps_one_dimensional_models_in_domain(x in -1.0..1.0f64, w in -50.0..50.0f64) {
        let dt: f64 = 1e-3;
        let z = step(&PureZ::new(0.3).unwrap(), &[x], &[w * dt.sqrt()], dt).unwrap()[0];
        prop_assert!((-1.0..=1.0).contains(&z));
        let t = step(&Theta, &[(x + 1.0) * PI / 2.0], &[w * dt.sqrt()], dt).unwrap()[0];
        prop_assert!((0.0..=PI).contains(&t));
    }
}
