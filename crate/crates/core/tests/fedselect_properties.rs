mod common;

use common::{quantile_oracle, tau_integral};
use fedsiam_core::fedselect::{
    boundary, fsm_values, select_layers, CurveKind, DivergenceLog, FsmVector, TauSchedule,
};
use fedsiam_core::nn::{Activation, LayeredParams};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::LogNormal;

fn log_of(values: &[f64]) -> DivergenceLog {
    let mut log = DivergenceLog::new(1);
    log.update(vec![FsmVector {
        values: values.to_vec(),
        client_id: 0,
        round: 1,
    }]);
    log
}

proptest! {
    #[test]
    fn boundary_matches_oracle(
        values in prop::collection::vec(-1e3f64..1e3, 1..2000),
        step in 0usize..=10,
    ) {
        let tau = step as f64 / 10.0;
        let got = boundary(&log_of(&values), tau);
        let want = quantile_oracle(&values, tau);
        prop_assert_eq!(got.to_bits(), want.to_bits());
    }

    #[test]
    fn selection_is_strict_less(values in prop::collection::vec(0.0f64..2.0, 1..8), b in 0.0f64..2.0) {
        let fsm = FsmVector { values: values.clone(), client_id: 0, round: 1 };
        let mask = select_layers(&fsm, b);
        for (v, up) in values.iter().zip(mask) {
            prop_assert_eq!(up, !(*v < b));
        }
    }

    #[test]
    fn fsm_scale_and_permutation_invariant(seed in any::<u64>(), c in 0.01f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let online = LayeredParams::glorot(5, &[4], 3, Activation::Relu, &mut rng).unwrap();
        let target = LayeredParams::glorot(5, &[4], 3, Activation::Relu, &mut rng).unwrap();
        let base = fsm_values(&online, &target).unwrap();

        let (mut so, mut st) = (online.clone(), target.clone());
        so.scale(c);
        st.scale(c);
        for (a, b) in base.iter().zip(fsm_values(&so, &st).unwrap()) {
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }

        // the same permutation of each layer's weights in both nets
        let (mut po, mut pt) = (online, target);
        for (lo, lt) in po.layers.iter_mut().zip(&mut pt.layers) {
            lo.weights.reverse();
            lt.weights.reverse();
            lo.bias.reverse();
            lt.bias.reverse();
        }
        for (a, b) in base.iter().zip(fsm_values(&po, &pt).unwrap()) {
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn tau_in_unit_interval_and_zero_outside_window(
        rectangle in any::<bool>(),
        mu in 0.0f64..=1.0,
        phi in 1usize..20,
        gap in 1usize..30,
        tail in 0usize..30,
    ) {
        let s = TauSchedule {
            kind: if rectangle { CurveKind::Rectangle } else { CurveKind::Linear },
            mu,
            phi_g: phi,
            varphi_g: phi + gap,
            total_rounds: phi + gap + tail,
        };
        for r in 0..=s.total_rounds + 5 {
            let t = s.tau(r);
            prop_assert!((0.0..=1.0).contains(&t));
            if r <= phi || r > s.total_rounds || (rectangle && r >= s.varphi_g) {
                prop_assert_eq!(t, 0.0);
            }
        }
    }

    #[test]
    fn both_curves_spend_the_same_budget(mu in 0.0f64..=1.0, phi in 1usize..20, gap in 1usize..30, tail in 0usize..30) {
        let total = phi + gap + tail;
        for kind in [CurveKind::Linear, CurveKind::Rectangle] {
            let s = TauSchedule { kind, mu, phi_g: phi, varphi_g: phi + gap, total_rounds: total };
            let budget = tau_integral(&s, 64);
            prop_assert!((budget - (1.0 - mu) * total as f64).abs() < 1e-6, "{kind:?}: {budget}");
        }
    }
}

#[test]
fn realized_skip_fraction_tracks_tau() {
    let tau = 0.4;
    let window = 5;
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let dist = LogNormal::new(-3.0, 0.7).unwrap();
    let mut log = DivergenceLog::new(window);
    let mut worst: f64 = 0.0;
    for round in 1..=60 {
        let vectors: Vec<FsmVector> = (0..100)
            .map(|c| FsmVector {
                values: (0..4).map(|_| rng.sample(dist)).collect(),
                client_id: c,
                round,
            })
            .collect();
        if round > window {
            let b = boundary(&log, tau);
            let skipped = vectors
                .iter()
                .flat_map(|v| select_layers(v, b))
                .filter(|up| !up)
                .count();
            let frac = skipped as f64 / 400.0;
            worst = worst.max((frac - tau).abs());
        }
        log.update(vectors);
    }
    assert!(worst <= 0.1, "skip fraction strayed {worst} from tau");
}
