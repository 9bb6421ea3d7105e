//! Packaged economies and generator settings.

use crate::economy::{
    BeliefSkip, DgpConfig, Economy, OptionId, OutcomeModel, PotentialOutcomes, Preference, PreferenceModel,
    ReportModel, ReportedList, ScoreModel, ScoreMode, ScoreVector, Student,
};
use crate::error::{Error, Result};

pub const NAMES: [&str; 4] = ["golden-sd", "rigged", "strategic", "truthful"];

fn ids(v: &[u16]) -> Vec<OptionId> {
    v.iter().map(|i| OptionId(*i)).collect()
}

fn student(id: u32, score: f64, pref: &[u16], report: &[u16]) -> Student {
    let preference = Preference::new(ids(pref), 4).expect("valid order");
    let y = (0..=4u32).map(|d| f64::from(u8::from(!(id + 2 * d).is_multiple_of(3)))).collect();
    Student {
        id,
        scores: ScoreVector(vec![score; 4]),
        preference: Some(preference),
        outcomes: Some(PotentialOutcomes(y)),
        observed: None,
        latent: 0.0,
        report: ReportedList::new(ids(report), 4, 3).expect("valid list"),
    }
}

/// Four schools, one common score, lists capped at three. Serial dictatorship
/// gives cutoffs 400 < 450 < 500 < 600.
///
/// Within 30 points above the top cutoff, 10 students list `{4,2,3}`, 30 list
/// `{4,3,2}` and 60 list `{4,2,1}`, so the candidate sets `{(4,2)}`,
/// `{(4,3)}` and `{(4,2),(4,3)}` have masses 0.1, 0.3 and 0.6 under the
/// strong partial order with accessibility refinement. Below the cutoff,
/// 10 list `{4,2,1}` and 90 list `{4,3,1}`.
pub fn golden_sd_economy() -> Economy {
    const Q42: [u16; 5] = [4, 2, 3, 1, 0];
    const Q43: [u16; 5] = [4, 3, 2, 1, 0];
    let mut students = Vec::new();
    let mut next = 0u32;
    let mut push = |score: f64, pref: &[u16], report: &[u16]| {
        students.push(student(next, score, pref, report));
        next += 1;
    };
    for i in 0..100 {
        let score = 600.0 + f64::from(i) * 0.29;
        match i {
            0..10 => push(score, &Q42, &[4, 2, 3]),
            10..40 => push(score, &Q43, &[4, 3, 2]),
            _ if i % 2 == 0 => push(score, &Q42, &[4, 2, 1]),
            _ => push(score, &Q43, &[4, 2, 1]),
        }
    }
    for i in 0..100 {
        let score = 570.5 + f64::from(i) * 0.29;
        if i < 10 {
            push(score, &Q42, &[4, 2, 1]);
        } else {
            push(score, &Q43, &[4, 3, 1]);
        }
    }
    for i in 0..160 {
        push(400.0 + f64::from(i), &[3, 2, 1, 4, 0], &[3, 2, 1]);
    }
    for i in 0..20 {
        push(380.0 + f64::from(i), &[1, 0, 2, 3, 4], &[1]);
    }
    let mut e = Economy::new(4, 3, vec![50, 60, 150, 100], vec![0; 4], students).expect("valid economy");
    e.seed = 0;
    e
}

/// Identical true preferences `4 > 2 > 3 > 1`; students below the truthful
/// cutoff of school 4 swap their second and third choices, which breaks the
/// partial-order assumption right at that cutoff.
pub fn rigged_config() -> DgpConfig {
    DgpConfig {
        num_schools: 4,
        list_cap: 4,
        num_students: 2000,
        seed: 11,
        capacities: Some(vec![500; 4]),
        preferences: PreferenceModel {
            quality: Some(vec![1.0, 3.0, 2.0, 4.0]),
            taste_sd: 0.0,
            ..PreferenceModel::default()
        },
        outcomes: OutcomeModel {
            binary_threshold: Some(0.0),
            ..OutcomeModel::default()
        },
        reports: ReportModel::Adversarial {
            pivot_school: 4,
            pivot_score: None,
            swap: (1, 2),
        },
        repair_reports: false,
        ..DgpConfig::default()
    }
}

/// Students skip schools they believe out of reach, with optimism tied to a
/// latent trait that also raises outcomes. Report repair after the match
/// makes list composition jump at the cutoffs. Tastes are close to common so
/// that most skipped schools are still preferred, which keeps the bounds
/// tight enough for the naive contrast to land outside them.
pub fn strategic_config() -> DgpConfig {
    DgpConfig {
        num_schools: 5,
        list_cap: 3,
        num_students: 20000,
        seed: 7,
        constrained: true,
        seat_ratio: 0.8,
        scores: ScoreModel {
            mode: ScoreMode::Sd,
            ..ScoreModel::default()
        },
        preferences: PreferenceModel {
            taste_sd: 0.3,
            latent_loading: Some(vec![0.0, 0.2, 0.4, 0.6, 0.8]),
            ..PreferenceModel::default()
        },
        outcomes: OutcomeModel {
            rank_slope: 0.3,
            latent_coef: 1.0,
            noise_sd: 0.1,
            binary_threshold: Some(0.0),
            ..OutcomeModel::default()
        },
        reports: ReportModel::BeliefSkip(BeliefSkip {
            noise_sd: 10.0,
            spread: 8.0,
            threshold: 0.3,
            latent_corr: 0.8,
            fill_to_cap: true,
            ..BeliefSkip::default()
        }),
        repair_reports: true,
        ..DgpConfig::default()
    }
}

/// Unconstrained lists and truthful reports.
pub fn truthful_config() -> DgpConfig {
    DgpConfig {
        num_schools: 4,
        list_cap: 4,
        num_students: 4000,
        seed: 3,
        outcomes: OutcomeModel {
            binary_threshold: Some(0.0),
            ..OutcomeModel::default()
        },
        reports: ReportModel::TruthTopK,
        ..DgpConfig::default()
    }
}

/// Generator settings for a named preset; the golden economy is fixed data
/// and has none.
pub fn dgp_preset(name: &str) -> Result<DgpConfig> {
    match name {
        "rigged" => Ok(rigged_config()),
        "strategic" => Ok(strategic_config()),
        "truthful" => Ok(truthful_config()),
        _ => Err(Error::Config(format!("unknown generator preset `{name}`"))),
    }
}
