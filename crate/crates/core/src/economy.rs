//! Finite economies: schools, students, preferences, scores and potential
//! outcomes, plus the synthetic data-generating process.
//!
//! Options are numbered `0..=J`, with `0` the outside option and `1..=J` the
//! schools. Score vectors and capacities are indexed by `school - 1`.

use std::fmt;

use fixedbitset::FixedBitSet;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mechanism::{self, CutoffFloor, CutoffProfile};

/// A school (`1..=J`) or the outside option (`0`).
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OptionId(pub u16);

impl OptionId {
    pub const OUTSIDE: OptionId = OptionId(0);

    pub fn school(number: usize) -> OptionId {
        assert!(number >= 1, "school numbers start at 1");
        OptionId(number as u16)
    }

    pub fn is_outside(self) -> bool {
        self.0 == 0
    }

    pub fn is_school(self) -> bool {
        self.0 != 0
    }

    /// Position in option-indexed vectors (`0` is the outside option).
    pub fn index(self) -> usize {
        self.0 as usize
    }

    /// Position in school-indexed vectors. Panics on the outside option.
    pub fn school_index(self) -> usize {
        assert!(self.is_school(), "outside option has no school index");
        self.0 as usize - 1
    }
}

impl fmt::Display for OptionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Iterator over the schools `1..=J`.
pub fn schools(num_schools: usize) -> impl Iterator<Item = OptionId> + Clone {
    (1..=num_schools).map(OptionId::school)
}

/// A subset of the options `0..=J`.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct OptionSet {
    bits: FixedBitSet,
}

impl OptionSet {
    pub fn empty(num_schools: usize) -> Self {
        OptionSet {
            bits: FixedBitSet::with_capacity(num_schools + 1),
        }
    }

    pub fn from_options(num_schools: usize, options: impl IntoIterator<Item = OptionId>) -> Self {
        let mut set = Self::empty(num_schools);
        for o in options {
            set.insert(o);
        }
        set
    }

    pub fn insert(&mut self, o: OptionId) {
        self.bits.insert(o.index());
    }

    pub fn remove(&mut self, o: OptionId) {
        self.bits.set(o.index(), false);
    }

    pub fn contains(&self, o: OptionId) -> bool {
        self.bits.contains(o.index())
    }

    pub fn len(&self) -> usize {
        self.bits.count_ones(..)
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_clear()
    }

    pub fn is_subset(&self, other: &OptionSet) -> bool {
        self.bits.is_subset(&other.bits)
    }

    pub fn union(&self, other: &OptionSet) -> OptionSet {
        let mut bits = self.bits.clone();
        bits.union_with(&other.bits);
        OptionSet { bits }
    }

    pub fn difference(&self, other: &OptionSet) -> OptionSet {
        let mut bits = self.bits.clone();
        bits.difference_with(&other.bits);
        OptionSet { bits }
    }

    pub fn iter(&self) -> impl Iterator<Item = OptionId> + '_ {
        self.bits.ones().map(|i| OptionId(i as u16))
    }
}

/// Strict preference over all options; schools ranked before the outside
/// option are acceptable.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Preference {
    order: Vec<OptionId>,
    rank: Vec<u16>,
}

impl Preference {
    pub fn new(order: Vec<OptionId>, num_schools: usize) -> Result<Self> {
        if order.len() != num_schools + 1 {
            return Err(Error::Validation(format!(
                "preference must rank {} options, got {}",
                num_schools + 1,
                order.len()
            )));
        }
        let mut rank = vec![u16::MAX; num_schools + 1];
        for (r, o) in order.iter().enumerate() {
            if o.index() > num_schools || rank[o.index()] != u16::MAX {
                return Err(Error::Validation(format!("option {o} invalid or repeated in preference")));
            }
            rank[o.index()] = r as u16;
        }
        if rank[0] == 0 {
            return Err(Error::Validation("preference has no acceptable school".into()));
        }
        Ok(Preference { order, rank })
    }

    pub fn order(&self) -> &[OptionId] {
        &self.order
    }

    pub fn num_schools(&self) -> usize {
        self.order.len() - 1
    }

    /// Zero-based position of `o` in the order.
    pub fn rank(&self, o: OptionId) -> usize {
        self.rank[o.index()] as usize
    }

    pub fn prefers(&self, a: OptionId, b: OptionId) -> bool {
        self.rank(a) < self.rank(b)
    }

    pub fn is_acceptable(&self, school: OptionId) -> bool {
        school.is_school() && self.prefers(school, OptionId::OUTSIDE)
    }

    /// Acceptable schools in preference order.
    pub fn acceptable(&self) -> &[OptionId] {
        &self.order[..self.rank(OptionId::OUTSIDE)]
    }
}

/// Choice rule over a set of options.
pub trait Ranking {
    /// The best member of `set`, which always contains the outside option
    /// when called from budget-set code.
    fn best_in(&self, set: &OptionSet) -> OptionId;
}

impl Ranking for Preference {
    fn best_in(&self, set: &OptionSet) -> OptionId {
        self.order
            .iter()
            .copied()
            .find(|o| set.contains(*o))
            .unwrap_or(OptionId::OUTSIDE)
    }
}

/// Submitted rank-order list. Unlisted schools rank below the outside option.
#[derive(Clone, PartialEq, Eq, Hash, Debug, Default)]
pub struct ReportedList(Vec<OptionId>);

impl ReportedList {
    pub fn new(list: Vec<OptionId>, num_schools: usize, cap: usize) -> Result<Self> {
        if list.is_empty() || list.len() > cap {
            return Err(Error::Validation(format!(
                "reported list length {} outside 1..={cap}",
                list.len()
            )));
        }
        let mut seen = vec![false; num_schools + 1];
        for s in &list {
            if s.is_outside() || s.index() > num_schools {
                return Err(Error::Validation(format!("reported list contains invalid school {s}")));
            }
            if seen[s.index()] {
                return Err(Error::Validation(format!("reported list repeats school {s}")));
            }
            seen[s.index()] = true;
        }
        Ok(ReportedList(list))
    }

    /// Builds a list without validation; used by generators that construct
    /// lists known to be well formed.
    pub(crate) fn from_vec_unchecked(list: Vec<OptionId>) -> Self {
        ReportedList(list)
    }

    pub fn schools(&self) -> &[OptionId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn position(&self, school: OptionId) -> Option<usize> {
        self.0.iter().position(|s| *s == school)
    }

    pub fn contains(&self, school: OptionId) -> bool {
        self.position(school).is_some()
    }

    /// Rank under the reported relation: listed schools by position, then the
    /// outside option, then every unlisted school.
    fn reported_rank(&self, o: OptionId) -> usize {
        if o.is_outside() {
            self.0.len()
        } else {
            self.position(o).unwrap_or(self.0.len() + 1)
        }
    }

    /// Strict reported preference. Unlisted schools are never preferred to
    /// anything.
    pub fn prefers(&self, a: OptionId, b: OptionId) -> bool {
        let ra = self.reported_rank(a);
        ra <= self.0.len() && ra < self.reported_rank(b)
    }

    pub fn weakly_prefers(&self, a: OptionId, b: OptionId) -> bool {
        a == b || self.prefers(a, b)
    }
}

impl Ranking for ReportedList {
    fn best_in(&self, set: &OptionSet) -> OptionId {
        self.0
            .iter()
            .copied()
            .find(|s| set.contains(*s))
            .unwrap_or(OptionId::OUTSIDE)
    }
}

impl fmt::Display for ReportedList {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|s| s.to_string()).collect();
        write!(f, "{{{}}}", parts.join(","))
    }
}

/// Placement scores, one per school.
#[derive(Clone, PartialEq, Debug)]
pub struct ScoreVector(pub Vec<f64>);

impl ScoreVector {
    pub fn get(&self, school: OptionId) -> f64 {
        self.0[school.school_index()]
    }
}

/// Potential outcome for every option, indexed by option.
#[derive(Clone, PartialEq, Debug)]
pub struct PotentialOutcomes(pub Vec<f64>);

impl PotentialOutcomes {
    pub fn get(&self, o: OptionId) -> f64 {
        self.0[o.index()]
    }
}

#[derive(Clone, Debug)]
pub struct Student {
    pub id: u32,
    pub scores: ScoreVector,
    /// Ground truth; absent for ingested data.
    pub preference: Option<Preference>,
    /// Ground truth; absent for ingested data.
    pub outcomes: Option<PotentialOutcomes>,
    /// Observed outcome when potential outcomes are unknown.
    pub observed: Option<f64>,
    /// Student-level latent trait shared by tastes, beliefs and outcomes.
    pub latent: f64,
    pub report: ReportedList,
}

/// Parameters and per-school belief cutoffs used by the belief-skip model.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct BeliefRecord {
    pub profile: Vec<f64>,
    pub noise_sd: f64,
    pub spread: f64,
    pub threshold: f64,
    pub latent_corr: f64,
    pub stream_seed: u64,
}

#[derive(Clone, Debug)]
pub struct Economy {
    pub num_schools: usize,
    pub list_cap: usize,
    pub capacities: Vec<u32>,
    /// Schools with equal group share one placement score.
    pub score_groups: Vec<u16>,
    pub students: Vec<Student>,
    pub seed: u64,
    pub beliefs: Option<BeliefRecord>,
    /// Number of report-repair rounds run to restore cutoff characterization.
    pub repair_rounds: usize,
}

impl Economy {
    pub fn new(
        num_schools: usize,
        list_cap: usize,
        capacities: Vec<u32>,
        score_groups: Vec<u16>,
        students: Vec<Student>,
    ) -> Result<Self> {
        if num_schools == 0 {
            return Err(Error::Validation("economy needs at least one school".into()));
        }
        if list_cap == 0 {
            return Err(Error::Validation("list cap must be at least 1".into()));
        }
        if capacities.len() != num_schools || score_groups.len() != num_schools {
            return Err(Error::Validation("capacities and score groups need one entry per school".into()));
        }
        for s in &students {
            if s.scores.0.len() != num_schools {
                return Err(Error::Validation(format!("student {} has wrong score count", s.id)));
            }
            if s.scores.0.iter().any(|x| !x.is_finite()) {
                return Err(Error::Validation(format!("student {} has a non-finite score", s.id)));
            }
        }
        Ok(Economy {
            num_schools,
            list_cap,
            capacities,
            score_groups,
            students,
            seed: 0,
            beliefs: None,
            repair_rounds: 0,
        })
    }

    pub fn has_ground_truth(&self) -> bool {
        self.students
            .iter()
            .all(|s| s.preference.is_some() && s.outcomes.is_some())
    }

    /// Whether schools `a` and `b` share a placement score.
    pub fn shares_score(&self, a: OptionId, b: OptionId) -> bool {
        self.score_groups[a.school_index()] == self.score_groups[b.school_index()]
    }

    /// True when every school uses the same placement score.
    pub fn is_single_score(&self) -> bool {
        self.score_groups.windows(2).all(|w| w[0] == w[1])
    }

    /// Observed outcome of student `i` given their assignment.
    pub fn observed_outcome(&self, i: usize, assigned: OptionId) -> Option<f64> {
        let s = &self.students[i];
        match &s.outcomes {
            Some(y) => Some(y.get(assigned)),
            None => s.observed,
        }
    }
}

// ---------------------------------------------------------------------------
// Data-generating process
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum ScoreMode {
    /// One common score (serial dictatorship).
    Sd,
    /// One score per score group, correlated through a common ability.
    Da,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreModel {
    pub mode: ScoreMode,
    pub mean: f64,
    pub sd: f64,
    /// Share of score variance coming from the common ability (DA mode).
    pub correlation: f64,
    /// Score group per school (DA mode); defaults to one group per school.
    pub groups: Option<Vec<u16>>,
}

impl Default for ScoreModel {
    fn default() -> Self {
        ScoreModel {
            mode: ScoreMode::Sd,
            mean: 500.0,
            sd: 100.0,
            correlation: 0.7,
            groups: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct PreferenceModel {
    /// Mean utility per school; defaults to `spread * (j-1)/(J-1)`.
    pub quality: Option<Vec<f64>>,
    pub quality_spread: f64,
    pub taste_sd: f64,
    /// Loading of the latent trait on each school's utility.
    pub latent_loading: Option<Vec<f64>>,
    pub all_acceptable: bool,
    /// Mean utility of the outside option when not every school is acceptable.
    pub outside_utility: f64,
}

impl Default for PreferenceModel {
    fn default() -> Self {
        PreferenceModel {
            quality: None,
            quality_spread: 1.5,
            taste_sd: 1.0,
            latent_loading: None,
            all_acceptable: true,
            outside_utility: 0.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct OutcomeModel {
    /// Outcome drop per position down the true preference order.
    pub rank_slope: f64,
    /// Effect per school; the outside option has effect 0.
    pub school_effects: Option<Vec<f64>>,
    pub latent_coef: f64,
    pub noise_sd: f64,
    /// When set, outcomes are `1{latent outcome > threshold}`.
    pub binary_threshold: Option<f64>,
}

impl Default for OutcomeModel {
    fn default() -> Self {
        OutcomeModel {
            rank_slope: 0.3,
            school_effects: None,
            latent_coef: 0.5,
            noise_sd: 1.0,
            binary_threshold: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct BeliefSkip {
    /// Believed cutoff per school. `None` means "cutoffs of a truthful
    /// previous run", filled in by [`simulate`].
    pub beliefs: Option<Vec<f64>>,
    /// Scale of the per-student, per-school Gaussian belief error.
    pub noise_sd: f64,
    /// Perceived uncertainty: admission probability is
    /// `logistic((score - believed cutoff) / spread)`.
    pub spread: f64,
    /// Schools with believed admission probability below this are dropped.
    pub threshold: f64,
    /// Correlation between the latent trait and optimism about cutoffs.
    pub latent_corr: f64,
    /// Refill dropped schools (most accessible first) until the list reaches
    /// `min(K, #acceptable)`, making the output a strong partial order.
    pub fill_to_cap: bool,
}

impl Default for BeliefSkip {
    fn default() -> Self {
        BeliefSkip {
            beliefs: None,
            noise_sd: 10.0,
            spread: 10.0,
            threshold: 0.2,
            latent_corr: 0.0,
            fill_to_cap: false,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
#[derive(Default)]
pub enum ReportModel {
    /// List the `min(K, #acceptable)` best acceptable schools in true order.
    #[default]
    TruthTopK,
    BeliefSkip(BeliefSkip),
    /// Students scoring below `pivot_score` on `pivot_school` swap two entries
    /// of their truthful list. Violates the partial-order assumption.
    Adversarial {
        pivot_school: u16,
        /// `None`: cutoff of `pivot_school` in a truthful previous run.
        pivot_score: Option<f64>,
        swap: (usize, usize),
    },
}


#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct DgpConfig {
    pub num_schools: usize,
    pub list_cap: usize,
    pub num_students: usize,
    pub seed: u64,
    /// Require `K < J`.
    pub constrained: bool,
    pub capacities: Option<Vec<u32>>,
    /// Total seats as a share of students when `capacities` is absent.
    pub seat_ratio: f64,
    pub scores: ScoreModel,
    pub preferences: PreferenceModel,
    pub outcomes: OutcomeModel,
    pub reports: ReportModel,
    /// Repair reports so the matching is each student's best feasible option
    /// under true preferences.
    pub repair_reports: bool,
    pub cutoff_floor: Option<f64>,
}

impl Default for DgpConfig {
    fn default() -> Self {
        DgpConfig {
            num_schools: 4,
            list_cap: 3,
            num_students: 2000,
            seed: 1,
            constrained: false,
            capacities: None,
            seat_ratio: 0.8,
            scores: ScoreModel::default(),
            preferences: PreferenceModel::default(),
            outcomes: OutcomeModel::default(),
            reports: ReportModel::TruthTopK,
            repair_reports: true,
            cutoff_floor: None,
        }
    }
}

impl DgpConfig {
    pub fn validate(&self) -> Result<()> {
        let j = self.num_schools;
        if j == 0 {
            return Err(Error::Config("num_schools must be at least 1".into()));
        }
        if self.num_students == 0 {
            return Err(Error::Config("num_students must be at least 1".into()));
        }
        if self.list_cap == 0 {
            return Err(Error::Config("list_cap must be at least 1".into()));
        }
        if self.constrained && self.list_cap >= j {
            return Err(Error::Config(format!(
                "constrained regime needs list_cap < num_schools ({} >= {j})",
                self.list_cap
            )));
        }
        let check_len = |name: &str, len: Option<usize>| -> Result<()> {
            match len {
                Some(l) if l != j => Err(Error::Config(format!("{name} needs {j} entries, got {l}"))),
                _ => Ok(()),
            }
        };
        check_len("capacities", self.capacities.as_ref().map(Vec::len))?;
        check_len("scores.groups", self.scores.groups.as_ref().map(Vec::len))?;
        check_len("preferences.quality", self.preferences.quality.as_ref().map(Vec::len))?;
        check_len(
            "preferences.latent_loading",
            self.preferences.latent_loading.as_ref().map(Vec::len),
        )?;
        check_len("outcomes.school_effects", self.outcomes.school_effects.as_ref().map(Vec::len))?;
        if !(self.scores.sd > 0.0) || !(0.0..=1.0).contains(&self.scores.correlation) {
            return Err(Error::Config("scores.sd must be positive and correlation in [0,1]".into()));
        }
        if let ReportModel::BeliefSkip(b) = &self.reports {
            check_len("reports.beliefs", b.beliefs.as_ref().map(Vec::len))?;
            if !(b.spread > 0.0) || !(0.0..=1.0).contains(&b.threshold) || !(-1.0..=1.0).contains(&b.latent_corr) {
                return Err(Error::Config("belief spread must be positive, threshold and latent_corr in range".into()));
            }
        }
        if let ReportModel::Adversarial { pivot_school, .. } = &self.reports {
            if *pivot_school == 0 || *pivot_school as usize > j {
                return Err(Error::Config(format!("pivot_school {pivot_school} out of range")));
            }
        }
        Ok(())
    }

    pub fn floor(&self) -> CutoffFloor {
        match self.cutoff_floor {
            Some(x) => CutoffFloor::Fixed(x),
            None => CutoffFloor::BelowMinimum,
        }
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Draws an economy with ground truth and truthful top-K reports. Reports
/// are replaced by [`generate_reports`].
pub fn generate_economy(config: &DgpConfig) -> Result<Economy> {
    config.validate()?;
    let j = config.num_schools;
    let n = config.num_students;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let groups: Vec<u16> = match config.scores.mode {
        ScoreMode::Sd => vec![0; j],
        ScoreMode::Da => config
            .scores
            .groups
            .clone()
            .unwrap_or_else(|| (0..j as u16).collect()),
    };
    let num_groups = groups.iter().copied().max().unwrap_or(0) as usize + 1;

    let capacities = config.capacities.clone().unwrap_or_else(|| {
        let total = (config.seat_ratio * n as f64).round() as u32;
        let base = total / j as u32;
        let extra = total % j as u32;
        (0..j as u32).map(|i| base + u32::from(i < extra)).collect()
    });

    let quality: Vec<f64> = config.preferences.quality.clone().unwrap_or_else(|| {
        (0..j)
            .map(|i| {
                if j == 1 {
                    0.0
                } else {
                    config.preferences.quality_spread * i as f64 / (j - 1) as f64
                }
            })
            .collect()
    });
    let loading = config
        .preferences
        .latent_loading
        .clone()
        .unwrap_or_else(|| vec![0.0; j]);
    let effects = config
        .outcomes
        .school_effects
        .clone()
        .unwrap_or_else(|| (0..j).map(|i| 0.2 * (i + 1) as f64 / j as f64).collect());

    let rho = config.scores.correlation;
    let mut students = Vec::with_capacity(n);
    for id in 0..n {
        let latent = normal(&mut rng);

        let ability = normal(&mut rng);
        let group_scores: Vec<f64> = (0..num_groups)
            .map(|_| {
                let z = match config.scores.mode {
                    ScoreMode::Sd => ability,
                    ScoreMode::Da => rho.sqrt() * ability + (1.0 - rho).sqrt() * normal(&mut rng),
                };
                config.scores.mean + config.scores.sd * z
            })
            .collect();
        let scores: Vec<f64> = groups.iter().map(|g| group_scores[*g as usize]).collect();

        let pm = &config.preferences;
        let mut utilities: Vec<(f64, OptionId)> = schools(j)
            .map(|s| {
                let i = s.school_index();
                (quality[i] + loading[i] * latent + pm.taste_sd * normal(&mut rng), s)
            })
            .collect();
        let outside = if pm.all_acceptable {
            f64::NEG_INFINITY
        } else {
            pm.outside_utility + pm.taste_sd * normal(&mut rng)
        };
        utilities.push((outside, OptionId::OUTSIDE));
        // Descending utility; ties broken toward the lower option number.
        utilities.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut order: Vec<OptionId> = utilities.into_iter().map(|(_, o)| o).collect();
        if order[0].is_outside() {
            order.swap(0, 1);
        }
        let preference = Preference::new(order, j)?;

        let om = &config.outcomes;
        let mut y = vec![0.0; j + 1];
        for (idx, slot) in y.iter_mut().enumerate() {
            let o = OptionId(idx as u16);
            let effect = if o.is_school() { effects[o.school_index()] } else { 0.0 };
            let raw = -om.rank_slope * preference.rank(o) as f64
                + effect
                + om.latent_coef * latent
                + om.noise_sd * normal(&mut rng);
            *slot = match om.binary_threshold {
                Some(t) => f64::from(u8::from(raw > t)),
                None => raw,
            };
        }

        let report = truth_top_k(&preference, config.list_cap);
        students.push(Student {
            id: id as u32,
            scores: ScoreVector(scores),
            preference: Some(preference),
            outcomes: Some(PotentialOutcomes(y)),
            observed: None,
            latent,
            report,
        });
    }
    break_score_ties(&mut students, j);

    let mut economy = Economy::new(j, config.list_cap, capacities, groups, students)?;
    economy.seed = config.seed;
    Ok(economy)
}

/// Nudges repeated values within a score column upward by one ulp at a time
/// so no two students tie. Shared columns stay identical.
fn break_score_ties(students: &mut [Student], num_schools: usize) {
    for col in 0..num_schools {
        let mut idx: Vec<usize> = (0..students.len()).collect();
        idx.sort_by(|&a, &b| {
            students[a].scores.0[col]
                .total_cmp(&students[b].scores.0[col])
                .then(a.cmp(&b))
        });
        let mut last = f64::NEG_INFINITY;
        for i in idx {
            let v = students[i].scores.0[col];
            if v <= last {
                let nudged = last.next_up();
                // keep shared columns identical
                let old = v;
                for c in 0..num_schools {
                    if students[i].scores.0[c] == old {
                        students[i].scores.0[c] = nudged;
                    }
                }
                last = nudged;
            } else {
                last = v;
            }
        }
    }
}

/// Strong partial order listing the best `min(K, #acceptable)` schools.
pub fn truth_top_k(preference: &Preference, cap: usize) -> ReportedList {
    let acc = preference.acceptable();
    ReportedList::from_vec_unchecked(acc[..acc.len().min(cap)].to_vec())
}

/// Checks the partial-order conditions of a reported list against a true
/// preference: (i) between 1 and K acceptable schools; (ii) ranked as in the
/// true order; with `strong`, also (iii) length `min(K, #acceptable)`.
pub fn is_partial_order(report: &ReportedList, preference: &Preference, cap: usize, strong: bool) -> bool {
    let list = report.schools();
    if list.is_empty() || list.len() > cap {
        return false;
    }
    if !list.iter().all(|s| preference.is_acceptable(*s)) {
        return false;
    }
    if !list.windows(2).all(|w| preference.prefers(w[0], w[1])) {
        return false;
    }
    !strong || list.len() == cap.min(preference.acceptable().len())
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Fills every student's reported list according to `model`.
///
/// With `repair`, reports are adjusted after each deferred-acceptance run so
/// that no student is matched below their best feasible school under true
/// preferences: the best feasible school is inserted in true order and the
/// least preferred other entry is dropped when the list would exceed `K`.
pub fn generate_reports(
    economy: &Economy,
    model: &ReportModel,
    repair: bool,
    floor: CutoffFloor,
) -> Result<Economy> {
    if !economy.has_ground_truth() {
        return Err(Error::Validation("report generation needs true preferences".into()));
    }
    let mut out = economy.clone();
    let cap = out.list_cap;
    let stream_seed = economy.seed ^ 0x9e37_79b9_7f4a_7c15;
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed);

    match model {
        ReportModel::TruthTopK => {
            for s in &mut out.students {
                s.report = truth_top_k(s.preference.as_ref().unwrap(), cap);
            }
        }
        ReportModel::BeliefSkip(b) => {
            let profile = b.beliefs.clone().ok_or(Error::MissingBeliefs)?;
            if profile.len() != out.num_schools {
                return Err(Error::Config("belief profile needs one cutoff per school".into()));
            }
            let corr = b.latent_corr;
            for s in &mut out.students {
                let pref = s.preference.as_ref().unwrap();
                let acceptable = pref.acceptable();
                // Optimism lowers every perceived cutoff; correlated with the latent trait.
                let optimism = corr * s.latent;
                let idiosyncratic = (1.0 - corr * corr).sqrt();
                let probs: Vec<f64> = acceptable
                    .iter()
                    .map(|d| {
                        let err = b.noise_sd * (idiosyncratic * normal(&mut rng) - optimism);
                        let believed = profile[d.school_index()] + err;
                        logistic((s.scores.get(*d) - believed) / b.spread)
                    })
                    .collect();
                let mut kept: Vec<usize> = (0..acceptable.len()).filter(|&i| probs[i] >= b.threshold).collect();
                kept.truncate(cap);
                let target = if b.fill_to_cap { cap.min(acceptable.len()) } else { 1 };
                if kept.len() < target {
                    let mut dropped: Vec<usize> = (0..acceptable.len()).filter(|i| !kept.contains(i)).collect();
                    dropped.sort_by(|&x, &y| probs[y].total_cmp(&probs[x]).then(x.cmp(&y)));
                    kept.extend(dropped.into_iter().take(target - kept.len()));
                    kept.sort_unstable();
                }
                s.report = ReportedList::from_vec_unchecked(kept.into_iter().map(|i| acceptable[i]).collect());
            }
            out.beliefs = Some(BeliefRecord {
                profile,
                noise_sd: b.noise_sd,
                spread: b.spread,
                threshold: b.threshold,
                latent_corr: b.latent_corr,
                stream_seed,
            });
        }
        ReportModel::Adversarial {
            pivot_school,
            pivot_score,
            swap,
        } => {
            let pivot = OptionId(*pivot_school);
            let threshold = match pivot_score {
                Some(x) => *x,
                None => truthful_cutoffs(economy, floor)?.get(pivot),
            };
            for s in &mut out.students {
                let mut list = truth_top_k(s.preference.as_ref().unwrap(), cap).schools().to_vec();
                if s.scores.get(pivot) < threshold && swap.0 < list.len() && swap.1 < list.len() {
                    list.swap(swap.0, swap.1);
                }
                s.report = ReportedList::from_vec_unchecked(list);
            }
            return Ok(out);
        }
    }

    if repair {
        out.repair_rounds = repair_reports(&mut out, floor)?;
    }
    Ok(out)
}

/// Cutoffs produced by truthful top-K reports, repaired when the repair
/// settles. Short lists in tight markets can make it cycle; the unrepaired
/// reports are used then.
pub fn truthful_cutoffs(economy: &Economy, floor: CutoffFloor) -> Result<CutoffProfile> {
    let truthful = match generate_reports(economy, &ReportModel::TruthTopK, true, floor) {
        Err(Error::RepairDiverged(_)) => generate_reports(economy, &ReportModel::TruthTopK, false, floor)?,
        other => other?,
    };
    let matching = mechanism::run_da(&truthful)?;
    Ok(mechanism::extract_cutoffs(&matching, &truthful, floor))
}

const MAX_REPAIR_ROUNDS: usize = 500;

fn repair_reports(economy: &mut Economy, floor: CutoffFloor) -> Result<usize> {
    for round in 0..MAX_REPAIR_ROUNDS {
        let matching = mechanism::run_da(economy)?;
        let cutoffs = mechanism::extract_cutoffs(&matching, economy, floor);
        let mut changed = false;
        for (i, s) in economy.students.iter_mut().enumerate() {
            let pref = s.preference.as_ref().unwrap();
            let budget = crate::localpref::budget_set(&s.scores, &cutoffs);
            let best = pref.best_in(&budget);
            if best == matching.assigned(i) || best.is_outside() || s.report.contains(best) {
                continue;
            }
            let mut list = s.report.schools().to_vec();
            let pos = list
                .iter()
                .position(|d| pref.prefers(best, *d))
                .unwrap_or(list.len());
            list.insert(pos, best);
            if list.len() > economy.list_cap {
                let drop = if *list.last().unwrap() == best { list.len() - 2 } else { list.len() - 1 };
                list.remove(drop);
            }
            s.report = ReportedList::from_vec_unchecked(list);
            changed = true;
        }
        if !changed {
            return Ok(round);
        }
    }
    Err(Error::RepairDiverged(MAX_REPAIR_ROUNDS))
}

/// Runs the full generator: economy, beliefs (from a truthful previous run
/// when not supplied), and reports.
pub fn simulate(config: &DgpConfig) -> Result<Economy> {
    let economy = generate_economy(config)?;
    let floor = config.floor();
    let model = match &config.reports {
        ReportModel::BeliefSkip(b) if b.beliefs.is_none() => {
            let prior = truthful_cutoffs(&economy, floor)?;
            ReportModel::BeliefSkip(BeliefSkip {
                beliefs: Some(prior.values().to_vec()),
                ..b.clone()
            })
        }
        m => m.clone(),
    };
    generate_reports(&economy, &model, config.repair_reports, floor)
}

/// Deterministic shuffle helper used by presets and tests.
pub fn shuffled<T>(mut items: Vec<T>, seed: u64) -> Vec<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    items.shuffle(&mut rng);
    items
}
