//! Randomized checks of the invariants each module promises.

use std::sync::Arc;

use ndarray::{Array2, ArrayView1, Axis};
use proptest::prelude::*;

use preffuse_core::discriminability::{
    td_high, trj_vol, vd_high, wasserstein, DiscriminabilityScores, StateEmbedder,
};
use preffuse_core::evaluators::{
    noisy_judgment, scripted_teacher, EvaluatorProfile, Judgment, Modality, RewardFn, ScriptedTeacher,
};
use preffuse_core::intra_fusion::{calibrated_confidence, fuse_intra, ModalResult};
use preffuse_core::keyframes::{
    extract_keyframes, near_zero_velocity_signal, smoothing_residual_peaks_signal, KeyframeConfig,
};
use preffuse_core::psl::{build_problem, fuse_inter, PslConfig};
use preffuse_core::reward::loss::{causal_aux_loss, preference_loss, preference_prob, IndecisionMode};
use preffuse_core::reward::{uncertainty_select, RewardEnsemble, RewardInput};
use preffuse_core::synthesis::{
    default_threshold, foresight_generate, generate_counterfactual, minimal_edit_filter, EnvSpec, Intervention,
    ScriptedForesight, ToyEnv,
};
use preffuse_core::trajectory::{load_dataset, save_dataset, EnvTag, PreferenceLabel, Trajectory, TrajectoryPair};

fn traj_strategy(len: std::ops::RangeInclusive<usize>, sd: usize, ad: usize) -> impl Strategy<Value = Trajectory> {
    len.prop_flat_map(move |t| {
        (
            prop::collection::vec(-2.0f64..2.0, t * sd),
            prop::collection::vec(-1.0f64..1.0, t * ad),
        )
            .prop_map(move |(s, a)| {
                let states = Array2::from_shape_vec((t, sd), s).unwrap();
                let actions = Array2::from_shape_vec((t, ad), a).unwrap();
                Trajectory::new("p", EnvTag::Custom, states, actions, None).unwrap()
            })
    })
}

fn label_strategy() -> impl Strategy<Value = PreferenceLabel> {
    prop::sample::select(PreferenceLabel::ALL.to_vec())
}

fn point_set(max: usize, dim: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-3.0f64..3.0, dim), 1..=max)
}

fn simplex_point() -> impl Strategy<Value = [f64; 3]> {
    (0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0).prop_map(|(a, b, c)| {
        let s = a + b + c + 1e-12;
        [a / s, b / s, c / s]
    })
}

fn modal(modality: Modality, label: PreferenceLabel, confidence: f64) -> ModalResult {
    ModalResult {
        label,
        confidence,
        modality,
        raw: vec![],
    }
}

fn reach() -> Arc<dyn ToyEnv> {
    EnvSpec::from_name("reach").unwrap().build()
}

fn linear_reward(w: Vec<f64>) -> impl RewardFn {
    move |s: ArrayView1<'_, f64>, a: ArrayView1<'_, f64>| -> Result<f64, String> {
        Ok(s.iter().chain(a.iter()).zip(&w).map(|(x, w)| x * w).sum())
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // trajectory-core

    #[test]
    fn dataset_round_trip(trajs in prop::collection::vec(traj_strategy(3..=12, 3, 2), 1..5)) {
        let trajs: Vec<Trajectory> = trajs.iter().enumerate().map(|(i, t)| t.with_id(format!("t{i}"))).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        save_dataset(&path, &trajs).unwrap();
        prop_assert_eq!(load_dataset(&path).unwrap(), trajs);
    }

    #[test]
    fn segments_compose(t in traj_strategy(3..=30, 2, 1), u in (0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0)) {
        // Well-formed bounds: 1 <= a, a + n - 1 <= T, 1 <= b, b + m - 1 <= n, with n, m >= 3.
        let pick = |lo: usize, hi: usize, f: f64| lo + ((hi - lo + 1) as f64 * f) as usize;
        let n = pick(3, t.len(), u.0).min(t.len());
        let a = pick(1, t.len() - n + 1, u.1).min(t.len() - n + 1);
        let m = pick(3, n, u.2).min(n);
        let b = pick(1, n - m + 1, u.3).min(n - m + 1);
        let nested = t.segment(a, n).unwrap().segment(b, m).unwrap();
        prop_assert_eq!(nested, t.segment(a + b - 1, m).unwrap());
    }

    #[test]
    fn projection_separates_distinct_roundings(x in traj_strategy(3..=6, 2, 1), y in traj_strategy(3..=6, 2, 1)) {
        let names = ["x", "y", "u"];
        let round = |t: &Trajectory| t.combined().mapv(|v| (v * 1000.0).round() / 1000.0);
        let same_text = x.textual_projection(&names).unwrap() == y.textual_projection(&names).unwrap();
        let same_rounded = x.len() == y.len() && round(&x) == round(&y);
        prop_assert_eq!(same_text, same_rounded);
    }

    // keyframes

    #[test]
    fn keyframes_keep_endpoints(t in traj_strategy(5..=60, 3, 2)) {
        let k = extract_keyframes(&t, &KeyframeConfig::default()).unwrap();
        let idx = k.indices();
        prop_assert_eq!(idx.first(), Some(&1));
        prop_assert_eq!(idx.last(), Some(&t.len()));
        prop_assert!(idx.iter().all(|&i| (1..=t.len()).contains(&i)));
    }

    #[test]
    fn pause_detection_grows_with_threshold(t in traj_strategy(3..=40, 2, 1), d1 in 0.0f64..2.0, d2 in 0.0f64..2.0) {
        let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
        let x = t.combined();
        let small = near_zero_velocity_signal(x.view(), lo);
        let large = near_zero_velocity_signal(x.view(), hi);
        prop_assert!(small.is_subset(&large));
    }

    #[test]
    fn residual_peaks_are_capped(t in traj_strategy(3..=60, 2, 2), k in 0usize..8, hw in 1usize..4) {
        prop_assume!(t.len() > 2 * hw);
        let peaks = smoothing_residual_peaks_signal(t.combined().view(), hw, k, 0.0).unwrap();
        prop_assert!(peaks.len() <= k);
    }

    // discriminability

    #[test]
    fn wasserstein_is_a_metric(a in point_set(5, 2), b in point_set(5, 2), c in point_set(5, 2)) {
        let w = |x: &[Vec<f64>], y: &[Vec<f64>]| wasserstein(x, y).unwrap();
        prop_assert!((w(&a, &b) - w(&b, &a)).abs() <= 1e-9);
        prop_assert!(w(&a, &a).abs() <= 1e-9);
        prop_assert!(w(&a, &c) <= w(&a, &b) + w(&b, &c) + 1e-9);
    }

    #[test]
    fn volatility_ignores_time_direction(t in traj_strategy(3..=40, 3, 2)) {
        let rev = |m: ndarray::ArrayView2<'_, f64>| {
            let mut r = m.to_owned();
            r.invert_axis(Axis(0));
            r
        };
        let back = Trajectory::new("r", EnvTag::Custom, rev(t.states()), rev(t.actions()), None).unwrap();
        let (f, b) = (trj_vol(&t).unwrap(), trj_vol(&back).unwrap());
        prop_assert!((f - b).abs() <= 1e-12 * f.abs().max(1.0));
    }

    #[test]
    fn context_atoms_are_bounded(a in traj_strategy(5..=30, 2, 1), b in traj_strategy(5..=30, 2, 1),
                                 tau_v in 0.01f64..5.0, tau_t in 0.01f64..5.0) {
        let cfg = KeyframeConfig::default();
        let (ka, kb) = (extract_keyframes(&a, &cfg).unwrap(), extract_keyframes(&b, &cfg).unwrap());
        let embed = StateEmbedder { dim: 2 };
        let vd = vd_high(&a, &b, &ka, &kb, &embed, tau_v).unwrap();
        let td = td_high(&a, &b, tau_t).unwrap();
        prop_assert!((0.0..=1.0).contains(&vd) && (0.0..=1.0).contains(&td));
        prop_assert_eq!(vd_high(&a, &a, &ka, &ka, &embed, tau_v).unwrap(), 0.0);
        prop_assert_eq!(td_high(&a, &a, tau_t).unwrap(), 0.0);
    }

    // evaluators

    #[test]
    fn scripted_teacher_is_antisymmetric(a in traj_strategy(5..=5, 2, 1), b in traj_strategy(5..=5, 2, 1),
                                         w in prop::collection::vec(-1.0f64..1.0, 3)) {
        let reward = linear_reward(w);
        let pair = TrajectoryPair::new(a, b).unwrap();
        let fwd = scripted_teacher(&pair, &reward).unwrap();
        let back = scripted_teacher(&pair.swapped(), &reward).unwrap();
        prop_assert_eq!(back.label, fwd.label.swapped());
        prop_assert_eq!(scripted_teacher(&TrajectoryPair::new(pair.a.clone(), pair.a.clone()).unwrap(), &reward).unwrap().label,
                        PreferenceLabel::Indecision);
    }

    // intra-fusion

    #[test]
    fn calibrated_confidence_is_bounded_and_monotone(
        raw in prop::collection::vec((label_strategy(), 0.0f64..=1.0), 1..10),
        target in label_strategy(),
        a1 in 0.0f64..=1.0,
        a2 in 0.0f64..=1.0,
    ) {
        let js: Vec<Judgment> = raw.iter().map(|&(label, confidence)| Judgment { label, confidence }).collect();
        let c1 = calibrated_confidence(&js, target, a1).unwrap();
        let c2 = calibrated_confidence(&js, target, a2).unwrap();
        prop_assert!((0.0..=1.0).contains(&c1) && (0.0..=1.0).contains(&c2));
        let agreeing: Vec<f64> = js.iter().filter(|j| j.label == target).map(|j| j.confidence).collect();
        if !agreeing.is_empty() {
            let mean = agreeing.iter().sum::<f64>() / agreeing.len() as f64;
            let ratio = agreeing.len() as f64 / js.len() as f64;
            if mean > ratio + 1e-12 {
                let (lo, hi) = if a1 <= a2 { (c1, c2) } else { (c2, c1) };
                prop_assert!(lo <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn crowd_result_ignores_seed(a in traj_strategy(4..=4, 2, 1), b in traj_strategy(4..=4, 2, 1),
                                 w in prop::collection::vec(-1.0f64..1.0, 3), s1: u64, s2: u64, k in 1usize..8) {
        let teacher = ScriptedTeacher::new(Arc::new(linear_reward(w)), Modality::Llm);
        let pair = TrajectoryPair::new(a, b).unwrap();
        let r1 = fuse_intra(&teacher, &pair, None, k, 0.5, s1).unwrap();
        let r2 = fuse_intra(&teacher, &pair, None, k, 0.5, s2).unwrap();
        prop_assert_eq!(r1.label, r2.label);
        prop_assert_eq!(r1.confidence, r2.confidence);
    }

    // psl

    #[test]
    fn fusion_objective_is_convex(lv in label_strategy(), ll in label_strategy(), cv in 0.0f64..=1.0, cl in 0.0f64..=1.0,
                                  vd in 0.0f64..=1.0, td in 0.0f64..=1.0, p in 1u8..=2, y1 in simplex_point(), y2 in simplex_point()) {
        let cfg = PslConfig { exponent: p, ..PslConfig::default() };
        let ctx = DiscriminabilityScores::new(vd, td).unwrap();
        let (_, problem) = build_problem(&modal(Modality::Vlm, lv, cv), &modal(Modality::Llm, ll, cl), ctx, &cfg).unwrap();
        let mid = [(y1[0] + y2[0]) / 2.0, (y1[1] + y2[1]) / 2.0, (y1[2] + y2[2]) / 2.0];
        let f = |y: &[f64; 3]| problem.objective(y);
        prop_assert!(f(&mid) <= (f(&y1) + f(&y2)) / 2.0 + 1e-12);
    }

    #[test]
    fn potentials_are_nonnegative(lv in label_strategy(), ll in label_strategy(), cv in 0.0f64..=1.0, cl in 0.0f64..=1.0,
                                  vd in 0.0f64..=1.0, td in 0.0f64..=1.0, y in simplex_point()) {
        let ctx = DiscriminabilityScores::new(vd, td).unwrap();
        let (_, problem) = build_problem(&modal(Modality::Vlm, lv, cv), &modal(Modality::Llm, ll, cl), ctx, &PslConfig::default()).unwrap();
        for pot in &problem.potentials {
            let v = pot.value(&y);
            prop_assert!(v >= 0.0);
            if pot.distance(&y) <= 0.0 {
                prop_assert_eq!(v, 0.0);
            }
        }
    }

    #[test]
    fn fusion_is_modality_symmetric(lv in label_strategy(), ll in label_strategy(), cv in 0.0f64..=1.0, cl in 0.0f64..=1.0,
                                    vd in 0.0f64..=1.0, td in 0.0f64..=1.0, wv in 0.1f64..2.0, wl in 0.1f64..2.0) {
        let cfg = PslConfig { vlm_conflict_weight: wv, llm_conflict_weight: wl, ..PslConfig::default() };
        let swapped_cfg = PslConfig { vlm_conflict_weight: wl, llm_conflict_weight: wv, ..PslConfig::default() };
        let fwd = fuse_inter(&modal(Modality::Vlm, lv, cv), &modal(Modality::Llm, ll, cl),
                             DiscriminabilityScores::new(vd, td).unwrap(), &cfg).unwrap();
        let back = fuse_inter(&modal(Modality::Vlm, ll, cl), &modal(Modality::Llm, lv, cv),
                              DiscriminabilityScores::new(td, vd).unwrap(), &swapped_cfg).unwrap();
        prop_assert_eq!(fwd.label, back.label);
    }

    // reward-learning

    #[test]
    fn preference_prob_orders_sum_to_one(a in -50.0f64..50.0, b in -50.0f64..50.0) {
        prop_assert_eq!(preference_prob(a, b).unwrap() + preference_prob(b, a).unwrap(), 1.0);
    }

    #[test]
    fn preference_loss_ignores_constant_shift(
        recs in prop::collection::vec((prop::collection::vec(-1.0f64..1.0, 6), prop::collection::vec(-1.0f64..1.0, 6), label_strategy()), 1..6),
        c in -3.0f64..3.0,
    ) {
        prop_assume!(recs.iter().any(|r| r.2.is_clear()));
        let sums = |shift: f64| -> Vec<(f64, f64, PreferenceLabel)> {
            recs.iter()
                .map(|(a, b, l)| (a.iter().map(|r| r + shift).sum(), b.iter().map(|r| r + shift).sum(), *l))
                .collect()
        };
        let base = preference_loss(&sums(0.0), IndecisionMode::Skip).unwrap();
        let moved = preference_loss(&sums(c), IndecisionMode::Skip).unwrap();
        prop_assert!((base - moved).abs() <= 1e-9);
    }

    #[test]
    fn aux_loss_is_nonnegative(rs in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0, any::<bool>()), 1..20)) {
        let r_star: Vec<f64> = rs.iter().map(|r| r.0).collect();
        let r_cf: Vec<f64> = rs.iter().map(|r| r.1).collect();
        let mask: Vec<bool> = rs.iter().map(|r| r.2).collect();
        let (v, _, _) = causal_aux_loss(&r_star, &r_cf, &mask).unwrap();
        prop_assert!(v >= 0.0);
        if mask.iter().any(|&m| m) {
            prop_assert!(v > 0.0);
        }
        let (same, _, _) = causal_aux_loss(&r_star, &r_star, &vec![false; r_star.len()]).unwrap();
        prop_assert_eq!(same, 0.0);
    }

    #[test]
    fn selection_follows_permutation(pairs in prop::collection::vec((traj_strategy(4..=4, 2, 1), traj_strategy(4..=4, 2, 1)), 2..8),
                                     perm_seed: u64, n in 1usize..8, seed in 0u64..1000) {
        let n = n.min(pairs.len());
        let candidates: Vec<TrajectoryPair> = pairs.into_iter().map(|(a, b)| TrajectoryPair::new(a, b).unwrap()).collect();
        let ensemble = RewardEnsemble::new(3, &[6], 3, RewardInput::StateAction, seed).unwrap();
        let mut order: Vec<usize> = (0..candidates.len()).collect();
        let mut s = perm_seed;
        for i in (1..order.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            order.swap(i, (s >> 33) as usize % (i + 1));
        }
        let permuted: Vec<TrajectoryPair> = order.iter().map(|&i| candidates[i].clone()).collect();
        let mut direct = uncertainty_select(&candidates, &ensemble, n).unwrap();
        let mut mapped: Vec<usize> = uncertainty_select(&permuted, &ensemble, n).unwrap().into_iter().map(|i| order[i]).collect();
        direct.sort_unstable();
        mapped.sort_unstable();
        prop_assert_eq!(direct, mapped);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn noisy_accuracy_matches_profile(base in 0.3f64..0.95, sens in 0.0f64..0.5, vd in 0.0f64..=1.0, seed: u64) {
        let profile = EvaluatorProfile {
            base_accuracy: base,
            context_sensitivity: sens,
            confidence_noise: 0.05,
            modality: Modality::Vlm,
            rng_seed: seed,
        };
        let ctx = DiscriminabilityScores::new(vd, 0.0).unwrap();
        let n = 10_000;
        let hits = (0..n)
            .filter(|&d| noisy_judgment(&profile, ctx, PreferenceLabel::APreferred, d).label == PreferenceLabel::APreferred)
            .count();
        let p = profile.accuracy(ctx);
        prop_assert!((hits as f64 / n as f64 - p).abs() <= 0.02, "empirical {} vs {p}", hits as f64 / n as f64);
    }

    #[test]
    fn foresight_accounts_for_every_index(n in 1usize..40, seed: u64) {
        let batch = foresight_generate(&ScriptedForesight::new(reach()), n, seed).unwrap();
        prop_assert_eq!(batch.trajectories.len() + batch.failures.len(), n);
        prop_assert_eq!(batch.trajectories.len(), batch.meta.len());
    }

    #[test]
    fn edit_filter_is_monotone(index in 0usize..30, t_star in 1usize..50, mag in 0.0f64..0.2, angle in 0.0f64..6.28,
                               t1 in 0.0f64..1.0, t2 in 0.0f64..1.0) {
        let env = reach();
        let traj = foresight_generate(&ScriptedForesight::new(env.clone()), index + 1, 3).unwrap().trajectories[index].clone();
        let iv = Intervention::position_offset(t_star, mag, vec![angle.cos(), angle.sin()]);
        let sample = generate_counterfactual(&traj, &iv, env.as_ref()).unwrap();
        let base = default_threshold(&traj, 1.0);
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        if minimal_edit_filter(&sample, lo * base) {
            prop_assert!(minimal_edit_filter(&sample, hi * base));
        }
    }
}
