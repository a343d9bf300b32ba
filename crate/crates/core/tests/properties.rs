use optibench_core::attacks::{run_attack, AttackConfig, AttackMethod};
use optibench_core::autodiff::{argmax, gradient_check, init_mlp, loss_value, LossKind, MlpModel};
use optibench_core::norm::{apply, in_box, project, project_ball, Norm};
use optibench_core::optimality::{asr, AttackResult, EnvelopeStore, ModelSamples, RobustnessCurve};
use optibench_core::tracker::{PerturbationRecord, TrackedModel, TrackerError};
use optibench_core::zoo::{generate_dataset, DatasetKind, DatasetSpec};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn unit_vec(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..=1.0f64, len)
}

fn model(seed: u64, d: usize, classes: usize) -> MlpModel {
    init_mlp(d, &[6, 5], classes, seed).unwrap()
}

fn distance() -> impl Strategy<Value = f64> {
    prop_oneof![3 => 0.0..2.0f64, 1 => Just(f64::INFINITY), 1 => Just(0.0)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn forward_is_bitwise_deterministic(seed in any::<u64>(), x in unit_vec(3)) {
        let m = model(seed, 3, 4);
        let a: Vec<u64> = m.forward(&x).unwrap().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = m.forward(&x).unwrap().iter().map(|v| v.to_bits()).collect();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn moving_mass_to_runner_up_lowers_every_loss(
        z in prop::collection::vec(-5.0..5.0f64, 4),
        y in 0usize..4,
        t in 0.01..1.0f64,
    ) {
        let runner = (0..4).filter(|j| *j != y).max_by(|a, b| z[*a].total_cmp(&z[*b]).then(b.cmp(a))).unwrap();
        let mut moved = z.clone();
        moved[y] -= t;
        moved[runner] += t;
        let mut kinds = vec![LossKind::NegCrossEntropy, LossKind::DifferenceOfLogits];
        // the ratio's scale z(1) - z(3) grows with the runner-up once it leads
        if z.iter().enumerate().all(|(j, v)| j == y || *v < z[y]) {
            kinds.push(LossKind::DifferenceOfLogitsRatio);
        }
        for kind in kinds {
            match (loss_value(&z, y, kind), loss_value(&moved, y, kind)) {
                (Ok(before), Ok(after)) => prop_assert!(after < before, "{kind}: {before} -> {after}"),
                _ => prop_assume!(false),
            }
        }
    }

    #[test]
    fn difference_of_logits_is_translation_invariant(
        z in prop::collection::vec(-10.0..10.0f64, 2..6),
        c in -100.0..100.0f64,
        pick in any::<prop::sample::Index>(),
    ) {
        let y = pick.index(z.len());
        let shifted: Vec<f64> = z.iter().map(|v| v + c).collect();
        let a = loss_value(&z, y, LossKind::DifferenceOfLogits).unwrap();
        let b = loss_value(&shifted, y, LossKind::DifferenceOfLogits).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * (1.0 + c.abs()));
        prop_assert_eq!(a < 0.0, argmax(&z) != y && z[argmax(&z)] > z[y]);
    }

    #[test]
    fn analytic_gradients_match_finite_differences(seed in any::<u64>(), x in unit_vec(3), y in 0usize..4) {
        let m = model(seed, 3, 4);
        for kind in [LossKind::NegCrossEntropy, LossKind::DifferenceOfLogits] {
            let err = gradient_check(&m, &x, y, kind, 1e-5).unwrap();
            prop_assert!(err < 1e-4, "{kind}: {err}");
        }
    }

    #[test]
    fn projection_is_feasible_and_idempotent(
        x in unit_vec(5),
        delta in prop::collection::vec(-2.0..2.0f64, 5),
        eps in 0.0..1.5f64,
        l2 in any::<bool>(),
    ) {
        let norm = if l2 { Norm::L2 } else { Norm::LInf };
        let p = project(&delta, &x, norm, eps).unwrap();
        prop_assert!(norm.length(&p) <= eps);
        prop_assert!(in_box(&apply(&x, &p)));
        let pp = project(&p, &x, norm, eps).unwrap();
        prop_assert_eq!(
            p.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            pp.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn ball_projection_respects_radius(delta in prop::collection::vec(-3.0..3.0f64, 1..8), r in 0.0..2.0f64) {
        for norm in [Norm::L1, Norm::L2, Norm::LInf] {
            let mut d = delta.clone();
            project_ball(&mut d, norm, r).unwrap();
            prop_assert!(norm.length(&d) <= r * (1.0 + 1e-12) + 1e-15, "{norm}: {}", norm.length(&d));
        }
    }

    #[test]
    fn tracker_respects_budget_and_only_improves(
        seed in any::<u64>(),
        budget in 1u64..40,
        steps in prop::collection::vec((any::<bool>(), prop::collection::vec(-0.2..1.2f64, 2)), 1..60),
    ) {
        let m = model(seed, 2, 3);
        let x = [0.5, 0.5];
        let y = m.predict(&x).unwrap();
        let mut t = TrackedModel::wrap(&m, [(0u64, &x[..], y)], Norm::L2, budget).unwrap();
        let mut best = t.record(0).unwrap().best_distance;
        for (forward, cand) in &steps {
            let result = if *forward {
                t.forward(0, cand).map(drop)
            } else {
                t.backward(0, cand.iter().map(|v| v.clamp(0.0, 1.0)).collect::<Vec<_>>().as_slice(), LossKind::DifferenceOfLogits).map(drop)
            };
            let ledger = t.ledger(0).unwrap();
            prop_assert!(ledger.used() <= budget);
            if let Err(e) = result {
                prop_assert_eq!(e, TrackerError::BudgetExhausted(0));
                prop_assert!(ledger.is_exhausted());
            }
            let now = t.record(0).unwrap().best_distance;
            prop_assert!(now <= best);
            best = now;
        }
        let r = t.record(0).unwrap();
        if r.succeeded {
            let delta = r.best_delta.as_ref().unwrap();
            let cand = apply(&x, delta);
            prop_assert!(in_box(&cand));
            prop_assert!(m.predict(&cand).unwrap() != y);
            prop_assert_eq!(Norm::L2.length(delta), r.best_distance);
        }
    }

    #[test]
    fn asr_and_robust_accuracy_are_monotone(
        dists in prop::collection::vec(distance(), 1..20),
        a in 0.0..2.0f64,
        b in 0.0..2.0f64,
    ) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let records: Vec<PerturbationRecord> = dists.iter().enumerate().map(|(i, d)| {
            let mut r = PerturbationRecord::unbroken(i as u64, Norm::L2);
            if d.is_finite() { r.best_distance = *d; r.succeeded = true; }
            r
        }).collect();
        prop_assert!(asr(&records, lo).unwrap() <= asr(&records, hi).unwrap());
        let clean: Vec<bool> = dists.iter().map(|d| *d != 0.0).collect();
        let c = RobustnessCurve::new("m", Norm::L2, &dists, &clean, 2.5).unwrap();
        prop_assert!(c.robust_accuracy(lo) >= c.robust_accuracy(hi));
        prop_assert!(c.robust_accuracy(0.0) <= c.clean_accuracy());
        prop_assert!((0.0..=1.0).contains(&c.robust_accuracy(lo)));
    }

    #[test]
    fn envelope_dominates_and_scores_are_order_free(
        attacks in prop::collection::vec(prop::collection::vec(distance(), 6), 1..5),
        clean in prop::collection::vec(prop::bool::weighted(0.85), 6),
        seed in any::<u64>(),
    ) {
        let samples = ModelSamples {
            sample_ids: (0..6).collect(),
            clean_correct: clean,
            eps_max: [(Norm::L2, 1.5)].into_iter().collect(),
        };
        let results: Vec<AttackResult> = attacks.iter().enumerate().map(|(i, d)| AttackResult {
            attack: format!("a{i}"),
            model: "m".into(),
            norm: Norm::L2,
            distances: d.clone(),
            queries_at_best: (0..6).map(|q| q * (i as u64 + 1)).collect(),
        }).collect();

        let mut store = EnvelopeStore::new();
        store.register_model("m", samples.clone()).unwrap();
        let board = store.incremental_update(results.clone()).unwrap();
        let env = store.lower_envelope("m", Norm::L2).unwrap();
        prop_assert_eq!(optibench_core::optimality::local_optimality(&env, &env).unwrap(), 1.0);
        for r in &results {
            let curve = store.attack_curve(&r.attack, "m", Norm::L2).unwrap();
            for (e, _) in curve.step_points().into_iter().chain(env.step_points()) {
                prop_assert!(env.robust_accuracy(e) <= curve.robust_accuracy(e));
            }
            let s = store.local_optimality(&r.attack, "m", Norm::L2).unwrap().value;
            prop_assert!((0.0..=1.0).contains(&s));
        }

        let mut shuffled = results.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, rng.gen_range(0..=i));
        }
        let mut one_by_one = EnvelopeStore::new();
        one_by_one.register_model("m", samples).unwrap();
        let mut last = None;
        for r in shuffled {
            last = Some(one_by_one.incremental_update(vec![r]).unwrap());
        }
        prop_assert_eq!(serde_json::to_string(&last.unwrap()).unwrap(), serde_json::to_string(&board).unwrap());
        prop_assert_eq!(one_by_one.envelope_points("m", Norm::L2), store.envelope_points("m", Norm::L2));
    }

    #[test]
    fn lowering_the_envelope_never_raises_scores(
        base in prop::collection::vec(prop::collection::vec(distance(), 5), 1..4),
        extra in prop::collection::vec(distance(), 5),
    ) {
        let samples = ModelSamples {
            sample_ids: (0..5).collect(),
            clean_correct: vec![true; 5],
            eps_max: [(Norm::LInf, 1.0)].into_iter().collect(),
        };
        let result = |name: String, d: &Vec<f64>| AttackResult {
            attack: name, model: "m".into(), norm: Norm::LInf, distances: d.clone(), queries_at_best: vec![1; 5],
        };
        let mut store = EnvelopeStore::new();
        store.register_model("m", samples).unwrap();
        store.incremental_update(base.iter().enumerate().map(|(i, d)| result(format!("b{i}"), d)).collect()).unwrap();
        let before: Vec<f64> = (0..base.len()).map(|i| store.local_optimality(&format!("b{i}"), "m", Norm::LInf).unwrap().value).collect();
        store.incremental_update(vec![result("new".into(), &extra)]).unwrap();
        for (i, b) in before.iter().enumerate() {
            let after = store.local_optimality(&format!("b{i}"), "m", Norm::LInf).unwrap().value;
            prop_assert!(after <= *b + 1e-15, "b{i}: {b} -> {after}");
        }
    }

    #[test]
    fn datasets_stay_in_the_box(seed in any::<u64>(), noise in 0.0..3.0f64, d in 2usize..6, kind in 0usize..3) {
        let kind = [DatasetKind::GaussianBlobs, DatasetKind::ConcentricRings, DatasetKind::XorGrid][kind];
        let spec = DatasetSpec { kind, dimension: d, class_count: 2, sample_count: 30, noise_scale: noise, seed };
        let data = generate_dataset(&spec).unwrap();
        prop_assert_eq!(data.samples.len(), 30);
        prop_assert!(data.samples.iter().all(|s| in_box(&s.x) && s.y < 2));
        prop_assert_eq!(&data, &generate_dataset(&spec).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn more_steps_and_budget_never_hurt(seed in any::<u64>(), xs in prop::collection::vec(unit_vec(3), 1..6)) {
        let m = model(seed, 3, 3);
        let samples: Vec<(u64, &[f64], usize)> = xs.iter().enumerate().map(|(i, x)| (i as u64, x.as_slice(), (i % 3))).collect();
        let methods = |steps| vec![
            AttackMethod::Fmn { norm: Norm::L2, steps, gamma: 0.05, alpha: 1.0 },
            AttackMethod::Ddn { steps, gamma: 0.05, init_radius: 0.2 },
            AttackMethod::Pgd { norm: Norm::LInf, epsilon: 0.3, steps, step_size: Some(0.02), random_start: true },
        ];
        for (short, long) in methods(20).into_iter().zip(methods(60)) {
            let run = |method: AttackMethod, budget: u64| {
                let mut t = TrackedModel::wrap(&m, samples.iter().copied(), method_norm(&method), budget).unwrap();
                run_attack(&AttackConfig::new("a", method), &mut t, 5).unwrap()
            };
            let pairs = [(run(short.clone(), 1000), run(long.clone(), 1000)), (run(long.clone(), 100), run(long.clone(), 200))];
            for (a, b) in pairs {
                for (ra, rb) in a.records().zip(b.records()) {
                    prop_assert!(rb.best_distance <= ra.best_distance, "{:?}: {} vs {}", long, ra.best_distance, rb.best_distance);
                }
            }
        }
    }

    #[test]
    fn fixed_budget_candidates_stay_feasible(seed in any::<u64>(), x in unit_vec(4), eps in 0.01..0.5f64, l2 in any::<bool>()) {
        let norm = if l2 { Norm::L2 } else { Norm::LInf };
        let m = model(seed, 4, 3);
        let y = m.predict(&x).unwrap();
        let mut t = TrackedModel::wrap(&m, [(0u64, &x[..], y)], norm, 400).unwrap().with_history();
        let method = AttackMethod::Pgd { norm, epsilon: eps, steps: 30, step_size: None, random_start: true };
        run_attack(&AttackConfig::new("pgd", method), &mut t, seed).unwrap();
        for s in t.history() {
            prop_assert!(in_box(&s.candidate));
            prop_assert!(norm.distance(&s.candidate, &x) <= eps * (1.0 + 1e-12));
        }
    }
}

#[test]
fn ratio_loss_can_rise_after_the_label_loses_the_lead() {
    let z = [-2.0, 1.75, 4.0, 3.6];
    let moved = [-2.01, 1.75, 4.01, 3.6];
    let before = loss_value(&z, 0, LossKind::DifferenceOfLogitsRatio).unwrap();
    let after = loss_value(&moved, 0, LossKind::DifferenceOfLogitsRatio).unwrap();
    assert!(after > before);
}

fn method_norm(m: &AttackMethod) -> Norm {
    AttackConfig::new("probe", m.clone()).norm()
}
