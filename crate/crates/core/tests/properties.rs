use proptest::prelude::*;

use rdmatch::bounds::{binary_bounds, trimming_bounds_continuous};
use rdmatch::economy::{simulate, DgpConfig, OptionId, ReportModel, ScoreMode, ScoreModel, ScoreVector};
use rdmatch::localpref::{budget_set, counterfactual_sets};
use rdmatch::mechanism::{
    audit_cutoff_characterization, audit_stability_wrt_p, extract_cutoffs, run_da, run_sd, CutoffFloor, CutoffProfile,
    Relation,
};
use rdmatch::qsets::{build_qset_local, qset_for_regime, LocalBudget, OrderAssumption, Regime, UmasRelation};
use rdmatch::qsets::detect_umas;

fn small_config(seed: u64, num_schools: usize, cap: usize, n: usize, sd: bool, skip: bool) -> DgpConfig {
    DgpConfig {
        num_schools,
        list_cap: cap.min(num_schools),
        num_students: n,
        seed,
        scores: ScoreModel {
            mode: if sd { ScoreMode::Sd } else { ScoreMode::Da },
            ..ScoreModel::default()
        },
        reports: if skip {
            ReportModel::BeliefSkip(Default::default())
        } else {
            ReportModel::TruthTopK
        },
        repair_reports: false,
        ..DgpConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn deferred_acceptance_is_stable(
        seed in 0u64..10_000, j in 2usize..8, cap in 1usize..5, n in 20usize..400, sd: bool, skip: bool,
    ) {
        let e = simulate(&small_config(seed, j, cap, n, sd, skip)).unwrap();
        let m = run_da(&e).unwrap();
        let c = extract_cutoffs(&m, &e, CutoffFloor::BelowMinimum);
        prop_assert!(audit_stability_wrt_p(&m, &e, &c).is_empty());
        prop_assert!(audit_cutoff_characterization(&m, &e, &c, Relation::Reported).unwrap().is_empty());
        for s in 1..=j as u16 {
            prop_assert!(m.fill(OptionId(s)) <= e.capacities[s as usize - 1]);
        }
        if sd {
            let serial = run_sd(&e).unwrap();
            prop_assert_eq!(serial.assignment(), m.assignment());
        }
    }

    #[test]
    fn counterfactual_sets_bracket_budget(
        scores in prop::collection::vec(0.0f64..100.0, 4),
        cutoffs in prop::collection::vec(0.0f64..100.0, 4),
        groups in prop::collection::vec(0u16..2, 4),
        j in 1u16..=4,
    ) {
        let s = ScoreVector(scores);
        let c = CutoffProfile::from_values(cutoffs);
        let b = budget_set(&s, &c);
        let (minus, plus) = counterfactual_sets(&s, &c, OptionId(j), &groups);
        prop_assert!(minus.is_subset(&b));
        prop_assert!(b.is_subset(&plus));
        prop_assert!(plus.contains(OptionId(j)) && !minus.contains(OptionId(j)));
        prop_assert!(minus.contains(OptionId::OUTSIDE));
    }

    #[test]
    fn candidate_sets_shrink_with_assumptions(seed in 0u64..10_000, j in 2usize..6, cap in 1usize..4, skip: bool) {
        let e = simulate(&small_config(seed, j, cap, 150, true, skip)).unwrap();
        let m = run_da(&e).unwrap();
        let c = extract_cutoffs(&m, &e, CutoffFloor::BelowMinimum);
        let umas = detect_umas(&e, &c, 1);
        let groups = vec![0u16; j];
        for st in &e.students {
            for school in 1..=j as u16 {
                let budget = LocalBudget::at(&st.scores, &c, OptionId(school), &groups);
                let q = |r: Regime| qset_for_regime(&st.report, &budget, e.list_cap, r, &umas);
                let (wpo, spo, wu, su) = (q(Regime::WPO), q(Regime::SPO), q(Regime::WPO_UMAS), q(Regime::SPO_UMAS));
                prop_assert!(spo.is_subset(&wpo));
                prop_assert!(wu.is_subset(&wpo));
                prop_assert!(su.is_subset(&spo));
                prop_assert!(su.is_subset(&wu));
                prop_assert!(!su.is_empty());
                prop_assert_eq!(&wpo, &build_qset_local(&st.report, &budget, e.list_cap, OrderAssumption::Wpo));
                prop_assert_eq!(&wpo, &qset_for_regime(&st.report, &budget, e.list_cap, Regime::WPO, &UmasRelation::default()));
            }
        }
    }

    #[test]
    fn trimming_bounds_widen_as_delta_falls(
        values in prop::collection::vec((-5.0f64..5.0, 0.1f64..2.0), 1..40),
        d1 in 0.01f64..1.0, d2 in 0.01f64..1.0,
    ) {
        let (small, large) = if d1 < d2 { (d1, d2) } else { (d2, d1) };
        let (lo_s, hi_s) = trimming_bounds_continuous(&values, small).unwrap();
        let (lo_l, hi_l) = trimming_bounds_continuous(&values, large).unwrap();
        prop_assert!(lo_s <= lo_l + 1e-9 && hi_l <= hi_s + 1e-9);
        prop_assert!(lo_s <= hi_s + 1e-9);
        let binary: Vec<(f64, f64)> = values.iter().map(|(y, w)| (f64::from(u8::from(*y > 0.0)), *w)).collect();
        let (blo_s, bhi_s) = binary_bounds(&binary, small).unwrap();
        let (blo_l, bhi_l) = binary_bounds(&binary, large).unwrap();
        prop_assert!(blo_s <= blo_l + 1e-12 && bhi_l <= bhi_s + 1e-12);
        prop_assert!((0.0..=1.0).contains(&blo_s) && (0.0..=1.0).contains(&bhi_s));
    }
}
