mod common;

use common::{identity_residuals, random_bound_terms, refined_grid_max, small_instance};
use confmdp::advantage::{
    expected_model_advantage, expected_policy_advantage, relative_advantages,
};
use confmdp::bounds::{
    closed_form_model_only, closed_form_policy_only, decoupled_bound_quadratic,
    optimal_coefficients, sup_variant_bound, CandidateKind,
};
use confmdp::diagnostics::premetric_check;
use confmdp::mdp::{evaluate, occupancy, value_functions};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-10;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn improvement_identity_is_exact(seed in any::<u64>()) {
        let r = identity_residuals(seed);
        prop_assert!(r.improvement_identity <= TOL, "{r:?}");
    }

    #[test]
    fn distribution_shift_bounds(seed in any::<u64>()) {
        let r = identity_residuals(seed);
        prop_assert!(r.kernel_distribution_bound <= TOL, "{r:?}");
        prop_assert!(r.split_distribution_bound <= TOL, "{r:?}");
    }

    #[test]
    fn coupled_advantage_decomposes(seed in any::<u64>()) {
        let r = identity_residuals(seed);
        prop_assert!(r.decomposition <= TOL, "{r:?}");
        prop_assert!(r.cross_term_bound <= TOL, "{r:?}");
        prop_assert!(r.spread_bound <= TOL, "{r:?}");
    }

    #[test]
    fn weighted_vertex_advantages_vanish(seed in any::<u64>()) {
        prop_assert!(identity_residuals(seed).vertex_zero_sum <= TOL);
    }

    #[test]
    fn decoupled_bound_is_a_lower_bound(seed in any::<u64>()) {
        let r = identity_residuals(seed);
        prop_assert!(r.lower_bound <= 1e-9, "{r:?}");
    }

    #[test]
    fn on_pair_expectations_vanish(seed in any::<u64>()) {
        let inst = small_instance(seed, 0);
        let rel = relative_advantages(&inst.mdp, &inst.model, &inst.policy, &inst.model, &inst.policy).unwrap();
        prop_assert!(rel.expected_policy.abs() <= 1e-12);
        prop_assert!(rel.expected_model.abs() <= 1e-12);
        prop_assert!(rel.expected_coupled.abs() <= 1e-12);
    }

    #[test]
    fn evaluation_invariants(seed in any::<u64>()) {
        let inst = small_instance(seed, 0);
        let (mdp, p, pi) = (&inst.mdp, &inst.model, &inst.policy);
        let occ = occupancy(mdp, p, pi).unwrap();
        prop_assert!((occ.d_state.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        let vf = value_functions(mdp, p, pi).unwrap();
        for s in 0..mdp.n_states() {
            let v: f64 = (0..mdp.n_actions()).map(|a| pi.prob(s, a) * vf.q(s, a)).sum();
            prop_assert!((v - vf.v(s)).abs() <= 1e-10);
            for a in 0..mdp.n_actions() {
                prop_assert_eq!(occ.state_action(s, a), pi.prob(s, a) * occ.state(s));
                let q: f64 = p.row(s, a).iter().zip(vf.u_row(s, a)).map(|(x, u)| x * u).sum();
                prop_assert!((q - vf.q(s, a)).abs() <= 1e-10);
            }
        }
        // Shared and separate factorizations agree.
        let ev = evaluate(mdp, p, pi).unwrap();
        for (a, b) in ev.occupancy.d_state.iter().zip(&occ.d_state) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn sup_variant_never_exceeds_expected(seed in any::<u64>(), alpha in 0.0..=1.0f64, beta in 0.0..=1.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let terms = random_bound_terms(&mut rng);
        prop_assert!(sup_variant_bound(&terms, alpha, beta, 0.9) <= decoupled_bound_quadratic(&terms, alpha, beta, 0.9) + 1e-12);
    }

    #[test]
    fn chosen_candidate_beats_every_edge_point(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let terms = random_bound_terms(&mut rng);
        let gamma = 0.9;
        let chosen = optimal_coefficients(&terms, gamma).chosen;
        prop_assert!(chosen.value >= 0.0);
        prop_assert!((0.0..=1.0).contains(&chosen.alpha) && (0.0..=1.0).contains(&chosen.beta));
        prop_assert!((decoupled_bound_quadratic(&terms, chosen.alpha, chosen.beta, gamma) - chosen.value).abs() <= 1e-12 || chosen.kind == CandidateKind::NoUpdate);
        for k in 0..=100 {
            let t = k as f64 / 100.0;
            for (a, b) in [(t, 0.0), (0.0, t), (t, 1.0), (1.0, t)] {
                prop_assert!(decoupled_bound_quadratic(&terms, a, b, gamma) <= chosen.value + 1e-12);
            }
        }
    }

    #[test]
    fn unclipped_closed_forms(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let terms = random_bound_terms(&mut rng);
        let gamma = 0.9;
        let d = terms.dissim;
        let c = gamma * terms.delta_q / (1.0 - gamma);
        if terms.adv_policy > 0.0 && d.d_e_pi * d.d_inf_pi * c > 0.0 {
            let alpha = terms.adv_policy / (c * d.d_e_pi * d.d_inf_pi);
            if alpha < 1.0 {
                let q = decoupled_bound_quadratic(&terms, alpha, 0.0, gamma);
                prop_assert!((q - closed_form_policy_only(&terms, gamma)).abs() <= 1e-10 * q.abs().max(1.0));
            }
        }
        if terms.adv_model > 0.0 && d.d_e_p * d.d_inf_p * c > 0.0 {
            let beta = terms.adv_model / (gamma * c * d.d_e_p * d.d_inf_p);
            if beta < 1.0 {
                let q = decoupled_bound_quadratic(&terms, 0.0, beta, gamma);
                prop_assert!((q - closed_form_model_only(&terms, gamma)).abs() <= 1e-10 * q.abs().max(1.0));
            }
        }
    }

    #[test]
    fn premetric_on_random_pairs(seed in any::<u64>()) {
        let inst = small_instance(seed, 0);
        prop_assert!(premetric_check(&inst.mdp, (&inst.model, &inst.policy), (&inst.alt_model, &inst.alt_policy)).unwrap());
        prop_assert!(premetric_check(&inst.mdp, (&inst.model, &inst.policy), (&inst.model, &inst.policy)).unwrap());
    }

    #[test]
    fn expected_advantages_scale_like_returns(seed in any::<u64>()) {
        // A target equal to the current pair on one side leaves that side's advantage at zero.
        let inst = small_instance(seed, 0);
        let ev = evaluate(&inst.mdp, &inst.model, &inst.policy).unwrap();
        prop_assert!(expected_policy_advantage(&ev, &inst.policy).abs() <= 1e-12);
        prop_assert!(expected_model_advantage(&ev, &inst.model).abs() <= 1e-12);
    }
}

#[test]
fn chosen_candidate_matches_refined_grid() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..5 {
        let terms = random_bound_terms(&mut rng);
        let chosen = optimal_coefficients(&terms, 0.9).chosen;
        let (coarse, fine) = refined_grid_max(&terms, 0.9);
        assert!(chosen.value >= coarse - 1e-6);
        assert!(
            (chosen.value - fine).abs() <= 1e-6,
            "{} vs {fine}",
            chosen.value
        );
    }
}
