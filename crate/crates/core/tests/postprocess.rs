use dpfair::montecarlo::{self, McConfig};
use dpfair::postprocess::{
    clip_lower, expected_clipped, project_sum, projected_bias, stochastic_round, temperature_clip, temperature_spread,
    tune_temperature,
};
use dpfair::{Pipeline, PostStep, PrivacySpec, RngStream};
use proptest::prelude::*;

proptest! {
    #[test]
    fn clip_is_idempotent_and_monotone(z in -1e6f64..1e6, w in -1e6f64..1e6, l in -100.0f64..100.0) {
        let c = clip_lower(z, l);
        prop_assert_eq!(clip_lower(c, l), c);
        prop_assert!(c >= l);
        if z <= w {
            prop_assert!(c <= clip_lower(w, l));
        }
    }

    #[test]
    fn temperature_clip_stays_above_level(z in -1e4f64..1e4, l in -50.0f64..50.0, t in 0.0f64..1e3) {
        prop_assert!(temperature_clip(z, l, t) >= l);
        prop_assert_eq!(temperature_clip(z, l, 0.0), clip_lower(z, l));
        // the correction never raises a value
        prop_assert!(temperature_clip(z, l, t) <= clip_lower(z, l));
    }

    #[test]
    fn stochastic_round_brackets_input(z in -1e6f64..1e6, seed in any::<u64>()) {
        let r = stochastic_round(z, &mut RngStream::new(seed, 0).rng());
        prop_assert_eq!(r.fract(), 0.0);
        prop_assert!(r == z.floor() || r == z.floor() + 1.0);
    }

    #[test]
    fn projection_is_the_nearest_point_on_the_hyperplane(
        z in prop::collection::vec(-100.0f64..100.0, 1..20),
        target in -50.0f64..50.0,
        dir in prop::collection::vec(-10.0f64..10.0, 20),
    ) {
        let y = project_sum(&z, target).unwrap();
        let n = z.len();
        prop_assert!((y.iter().sum::<f64>() - target).abs() < 1e-9);
        // any other point on the hyperplane: y plus a zero-sum direction
        let mean = dir[..n].iter().sum::<f64>() / n as f64;
        let w: Vec<f64> = y.iter().zip(&dir[..n]).map(|(y, d)| y + d - mean).collect();
        let dist = |v: &[f64]| v.iter().zip(&z).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        prop_assert!(dist(&y) <= dist(&w) + 1e-9);
    }

    #[test]
    fn projection_preserves_pairwise_bias_differences(b in prop::collection::vec(-1.0f64..1.0, 2..30)) {
        let p = projected_bias(&b);
        prop_assert!(p.iter().sum::<f64>().abs() < 1e-12);
        for i in 0..b.len() {
            for j in 0..b.len() {
                prop_assert!(((p[i] - p[j]) - (b[i] - b[j])).abs() < 1e-14);
            }
        }
    }
}

#[test]
fn stochastic_rounding_is_unbiased() {
    let z = [0.25, -1.7, 3.5, 10.01];
    let cfg = McConfig::new(200_000, 4);
    let s = montecarlo::run(&z, &cfg, || {
        let mut buf = z;
        move |noise: &mut dpfair::Noise<'_>, out: &mut [f64]| {
            dpfair::postprocess::apply_steps(&[PostStep::StochasticRound], &mut buf, 1, || noise.uniform());
            out.copy_from_slice(&buf);
            buf = z;
            Ok(())
        }
    })
    .unwrap();
    for (i, &zi) in z.iter().enumerate() {
        assert!(
            (s.mean[i] - zi).abs() < 4.0 * s.std_error[i],
            "{zi}: mean {}",
            s.mean[i]
        );
    }
}

#[test]
fn clipped_mean_matches_closed_form_spot_checks() {
    for (x, l, lambda) in [(1.0, 0.0, 10.0), (5.0, 2.0, 1.0), (0.5, -3.0, 4.0)] {
        let cfg = McConfig::new(400_000, 17);
        let s = montecarlo::run(&[x], &cfg, || {
            move |noise: &mut dpfair::Noise<'_>, out: &mut [f64]| {
                out[0] = clip_lower(x + noise.laplace(lambda), l);
                Ok(())
            }
        })
        .unwrap();
        let e = expected_clipped(x, l, lambda).unwrap();
        assert!(
            (s.mean[0] - e).abs() < 4.0 * s.std_error[0],
            "x={x} l={l}: {} vs {e}",
            s.mean[0]
        );
    }
    assert!((expected_clipped(1.0, 0.0, 10.0).unwrap() - (1.0 + 5.0 * (-0.1f64).exp())).abs() < 1e-12);
    assert!(expected_clipped(1.0, 1.0, 1.0).is_err());
}

#[test]
fn pipeline_json_uses_step_names() {
    let p: Vec<PostStep<f64>> = serde_json::from_str(r#"[{"clip_lower":0}, "stochastic_round"]"#).unwrap();
    assert_eq!(p, Pipeline::<f64>::nonnegative_integral().input);
    let err = serde_json::from_str::<Vec<PostStep<f64>>>(r#"["round_half_even"]"#).unwrap_err();
    assert!(err.to_string().contains("round_half_even"));
    assert!(PostStep::TemperatureClip {
        level: 0.0,
        temperature: -1.0
    }
    .validate()
    .is_err());
}

#[test]
fn zero_only_grid_scores_the_plain_clip() {
    let domain: Vec<f64> = (0..30).map(|i| i as f64).collect();
    let spec = PrivacySpec::counting(0.2).unwrap();
    let cfg = McConfig::new(4096, 2);
    let t = tune_temperature(&domain, 0.0, &spec, &[0.0], &cfg).unwrap();
    assert_eq!(t.temperature, 0.0);
    assert_eq!(t.score, temperature_spread(&domain, 0.0, &spec, 0.0, &cfg).unwrap());
    assert!(!t.private);
}
