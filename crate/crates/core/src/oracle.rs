//! Ground truth for synthetic data: enumeration over a finite economy, and an
//! exact population model whose side-limit probabilities are known in closed
//! form.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bounds::OutcomeTransform;
use crate::economy::{is_partial_order, Economy, OptionId, OptionSet, Preference, Ranking, ReportedList};
use crate::error::{Error, Result};
use crate::identify::SideObservation;
use crate::localpref::{local_pair_from_sets, select_local_sample, Bandwidth, LocalPrefPair, Side};
use crate::mechanism::CutoffProfile;
use crate::qsets::{qset_for_regime, true_local_pair, LocalBudget, LocalPrefSet, Regime, UmasRelation};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SideTruth {
    pub n: usize,
    /// Students whose true local preference is the pair.
    pub n_target: usize,
    /// Students whose candidate set contains the pair.
    pub n_containing: usize,
    pub share: f64,
    /// `n_target / n_containing`.
    pub delta: Option<f64>,
    /// Mean of `g(Y(j))` and `g(Y(k))` over target students.
    pub mean_first: Option<f64>,
    pub mean_second: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OracleReport {
    pub pair: LocalPrefPair,
    pub regime: Regime,
    pub plus: SideTruth,
    pub minus: SideTruth,
    pub pooled_share: f64,
    /// Mean of `g(Y(j)) - g(Y(k))` over target students on both sides.
    pub ate: Option<f64>,
    /// Plus-side mean of `g(Y(j))` minus minus-side mean of `g(Y(k))`.
    pub side_contrast: Option<f64>,
}

/// Enumerates the window around `c_j` using true preferences and potential
/// outcomes.
pub fn oracle_truth(
    economy: &Economy,
    cutoffs: &CutoffProfile,
    pair: LocalPrefPair,
    bandwidth: Bandwidth,
    regime: Regime,
    umas: &UmasRelation,
    g: &OutcomeTransform,
) -> Result<OracleReport> {
    if !economy.has_ground_truth() {
        return Err(Error::Validation("oracle needs true preferences and potential outcomes".into()));
    }
    let sample = select_local_sample(economy, cutoffs, pair, bandwidth);
    if let Some(side) = sample.empty_side() {
        return Err(Error::EmptySide {
            j: pair.first,
            k: pair.second,
            side: side.as_str(),
        });
    }
    let mut effects = Vec::new();
    let mut side_truth = |idx: &[usize]| -> Result<SideTruth> {
        let (mut n_target, mut n_containing) = (0, 0);
        let (mut s1, mut s2) = (0.0, 0.0);
        for &i in idx {
            let s = &economy.students[i];
            let pref = s.preference.as_ref().expect("checked");
            let y = s.outcomes.as_ref().expect("checked");
            let budget = LocalBudget::at(&s.scores, cutoffs, pair.first, &economy.score_groups);
            let q = qset_for_regime(&s.report, &budget, economy.list_cap, regime, umas);
            if q.contains(&pair) {
                n_containing += 1;
            }
            if true_local_pair(pref, &budget) == pair {
                n_target += 1;
                let (a, b) = (g.apply(y.get(pair.first))?, g.apply(y.get(pair.second))?);
                s1 += a;
                s2 += b;
                effects.push(a - b);
            }
        }
        let mean = |s: f64| (n_target > 0).then(|| s / n_target as f64);
        Ok(SideTruth {
            n: idx.len(),
            n_target,
            n_containing,
            share: n_target as f64 / idx.len() as f64,
            delta: (n_containing > 0).then(|| n_target as f64 / n_containing as f64),
            mean_first: mean(s1),
            mean_second: mean(s2),
        })
    };
    let plus = side_truth(&sample.plus)?;
    let minus = side_truth(&sample.minus)?;
    let ate = (!effects.is_empty()).then(|| effects.iter().sum::<f64>() / effects.len() as f64);
    let side_contrast = match (plus.mean_first, minus.mean_second) {
        (Some(a), Some(b)) => Some(a - b),
        _ => None,
    };
    Ok(OracleReport {
        pair,
        regime,
        pooled_share: (plus.n_target + minus.n_target) as f64 / (plus.n + minus.n) as f64,
        plus,
        minus,
        ate,
        side_contrast,
    })
}

/// One student type at the cutoff of the target school. Types have the same
/// weight on both sides; reports may differ by side.
#[derive(Clone, Debug, PartialEq)]
pub struct PopulationType {
    pub weight: f64,
    pub preference: Preference,
    pub minus_set: OptionSet,
    pub plus_set: OptionSet,
    pub report_plus: ReportedList,
    pub report_minus: ReportedList,
    /// `P[Y(d) = 1]` indexed by option.
    pub success: Vec<f64>,
}

impl PopulationType {
    pub fn budget(&self, side: Side) -> LocalBudget {
        LocalBudget {
            minus: self.minus_set.clone(),
            plus: self.plus_set.clone(),
            above: side == Side::Plus,
        }
    }

    pub fn report(&self, side: Side) -> &ReportedList {
        match side {
            Side::Plus => &self.report_plus,
            Side::Minus => &self.report_minus,
        }
    }

    pub fn true_pair(&self) -> LocalPrefPair {
        local_pair_from_sets(&self.preference, &self.minus_set, &self.plus_set)
    }

    /// Option the type is matched to on `side`.
    pub fn assigned(&self, side: Side) -> OptionId {
        let p = local_pair_from_sets(self.report(side), &self.minus_set, &self.plus_set);
        match side {
            Side::Plus => p.first,
            Side::Minus => p.second,
        }
    }
}

/// Finite mixture of types near one cutoff with binary outcomes.
#[derive(Clone, Debug, PartialEq)]
pub struct PopulationModel {
    pub num_schools: usize,
    pub cap: usize,
    pub pair: LocalPrefPair,
    /// Reports satisfy the strong partial order, not only the weak one.
    pub strong: bool,
    pub umas: UmasRelation,
    pub types: Vec<PopulationType>,
}

fn closed_under(set: &OptionSet, umas: &UmasRelation) -> bool {
    umas.pairs().all(|(d, e)| !set.contains(*d) || set.contains(*e))
}

fn close(set: &mut OptionSet, umas: &UmasRelation) {
    loop {
        let missing: Vec<OptionId> = umas
            .pairs()
            .filter(|(d, e)| set.contains(*d) && !set.contains(*e))
            .map(|(_, e)| *e)
            .collect();
        if missing.is_empty() {
            return;
        }
        for e in missing {
            set.insert(e);
        }
    }
}

/// Checks that a type is admissible on one side: the report is a partial
/// order of the true preference, the matched option is the best feasible one
/// under both the report and the true preference, feasible sets are closed
/// under the UMAS relation, and listed schools beat unlisted more accessible
/// ones.
fn admissible(t: &PopulationType, side: Side, cap: usize, strong: bool, umas: &UmasRelation) -> bool {
    let report = t.report(side);
    let set = match side {
        Side::Plus => &t.plus_set,
        Side::Minus => &t.minus_set,
    };
    if !is_partial_order(report, &t.preference, cap, strong) {
        return false;
    }
    if report.best_in(set) != t.preference.best_in(set) {
        return false;
    }
    if !closed_under(&t.minus_set, umas) || !closed_under(&t.plus_set, umas) {
        return false;
    }
    umas.pairs()
        .all(|(d, e)| !(report.contains(*d) && !report.contains(*e)) || t.preference.prefers(*d, *e))
}

fn random_preference(rng: &mut ChaCha8Rng, num_schools: usize) -> Preference {
    let mut order: Vec<OptionId> = (0..=num_schools as u16).map(OptionId).collect();
    order.shuffle(rng);
    if order[0].is_outside() {
        let at = rng.random_range(1..order.len());
        order.swap(0, at);
    }
    Preference::new(order, num_schools).expect("permutation")
}

fn random_report(
    rng: &mut ChaCha8Rng,
    pref: &Preference,
    set: &OptionSet,
    cap: usize,
    strong: bool,
) -> Option<ReportedList> {
    let acc = pref.acceptable();
    let must = pref.best_in(set);
    let size = if strong {
        acc.len().min(cap)
    } else {
        rng.random_range(1..=acc.len().min(cap))
    };
    let mut chosen: Vec<OptionId> = Vec::with_capacity(size);
    if must.is_school() {
        chosen.push(must);
    }
    let mut rest: Vec<OptionId> = acc.iter().copied().filter(|s| *s != must).collect();
    rest.shuffle(rng);
    for s in rest {
        if chosen.len() >= size {
            break;
        }
        chosen.push(s);
    }
    if chosen.len() > size {
        return None;
    }
    chosen.sort_by_key(|s| pref.rank(*s));
    ReportedList::new(chosen, pref.num_schools(), cap).ok()
}

impl PopulationModel {
    /// Draws a random admissible model. The first type always has the target
    /// pair as a singleton candidate set on both sides, so the target share
    /// is bounded away from zero.
    pub fn random(seed: u64, strong: bool) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let num_schools = rng.random_range(3..=5usize);
        let cap = rng.random_range(2..num_schools);
        let j = OptionId::school(rng.random_range(1..=num_schools));
        let k = loop {
            let k = OptionId::school(rng.random_range(1..=num_schools));
            if k != j {
                break k;
            }
        };
        let mut umas = if rng.random_bool(0.3) {
            UmasRelation::default()
        } else {
            let levels: Vec<u8> = (0..num_schools).map(|_| rng.random_range(0..3)).collect();
            UmasRelation::from_pairs(crate::economy::schools(num_schools).flat_map(|d| {
                let levels = levels.clone();
                crate::economy::schools(num_schools)
                    .filter(move |e| levels[d.school_index()] > levels[e.school_index()])
                    .map(move |e| (d, e))
            }))
        };
        let anchor = match Self::anchor_type(&mut rng, num_schools, cap, j, k, strong, &umas) {
            Some(t) => t,
            None => {
                umas = UmasRelation::default();
                Self::anchor_type(&mut rng, num_schools, cap, j, k, strong, &umas).expect("anchor without relation")
            }
        };
        let mut types = vec![anchor];
        let extra = rng.random_range(3..=9);
        for _ in 0..extra {
            if let Some(t) = Self::random_type(&mut rng, num_schools, cap, j, strong, &umas) {
                types.push(t);
            }
        }
        PopulationModel {
            num_schools,
            cap,
            pair: LocalPrefPair::new(j, k),
            strong,
            umas,
            types,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn anchor_type(
        rng: &mut ChaCha8Rng,
        num_schools: usize,
        cap: usize,
        j: OptionId,
        k: OptionId,
        strong: bool,
        umas: &UmasRelation,
    ) -> Option<PopulationType> {
        let mut feasible = OptionSet::from_options(num_schools, [OptionId::OUTSIDE, k]);
        for (d, e) in umas.pairs() {
            if *d == j {
                feasible.insert(*e);
            }
        }
        close(&mut feasible, umas);
        if feasible.contains(j) {
            return None;
        }
        let mut others: Vec<OptionId> = feasible.iter().filter(|m| m.is_school() && *m != k).collect();
        others.shuffle(rng);
        if others.len() + 2 > cap {
            return None;
        }
        let mut tail: Vec<OptionId> = (0..=num_schools as u16)
            .map(OptionId)
            .filter(|o| *o != j && *o != k && !others.contains(o))
            .collect();
        tail.shuffle(rng);
        if strong {
            // Every school is acceptable only up to the listed ones.
            tail.retain(|o| !o.is_outside());
            tail.insert(0, OptionId::OUTSIDE);
        }
        let mut order = vec![j, k];
        order.extend(others.iter().copied());
        let listed = order.clone();
        order.extend(tail);
        let preference = Preference::new(order, num_schools).ok()?;
        let report = ReportedList::new(listed, num_schools, cap).ok()?;
        let mut plus_set = feasible.clone();
        plus_set.insert(j);
        let t = PopulationType {
            weight: rng.random_range(0.3..1.0),
            preference,
            minus_set: feasible,
            plus_set,
            report_plus: report.clone(),
            report_minus: report,
            success: (0..=num_schools).map(|_| rng.random_range(0.0..1.0)).collect(),
        };
        (admissible(&t, Side::Plus, cap, strong, umas) && admissible(&t, Side::Minus, cap, strong, umas)).then_some(t)
    }

    fn random_type(
        rng: &mut ChaCha8Rng,
        num_schools: usize,
        cap: usize,
        j: OptionId,
        strong: bool,
        umas: &UmasRelation,
    ) -> Option<PopulationType> {
        for _ in 0..500 {
            let mut minus_set = OptionSet::empty(num_schools);
            minus_set.insert(OptionId::OUTSIDE);
            for m in crate::economy::schools(num_schools) {
                if m != j && rng.random_bool(0.5) {
                    minus_set.insert(m);
                }
            }
            for (d, e) in umas.pairs() {
                if *d == j {
                    minus_set.insert(*e);
                }
            }
            close(&mut minus_set, umas);
            if minus_set.contains(j) {
                continue;
            }
            let mut plus_set = minus_set.clone();
            plus_set.insert(j);
            let preference = random_preference(rng, num_schools);
            let Some(report_plus) = random_report(rng, &preference, &plus_set, cap, strong) else {
                continue;
            };
            let Some(report_minus) = random_report(rng, &preference, &minus_set, cap, strong) else {
                continue;
            };
            let t = PopulationType {
                weight: rng.random_range(0.1..1.0),
                preference,
                minus_set,
                plus_set,
                report_plus,
                report_minus,
                success: (0..=num_schools).map(|_| rng.random_range(0.0..1.0)).collect(),
            };
            if admissible(&t, Side::Plus, cap, strong, umas) && admissible(&t, Side::Minus, cap, strong, umas) {
                return Some(t);
            }
        }
        None
    }

    /// Every type satisfies the behavioural assumptions on both sides.
    pub fn is_admissible(&self) -> bool {
        self.types.iter().all(|t| {
            admissible(t, Side::Plus, self.cap, self.strong, &self.umas)
                && admissible(t, Side::Minus, self.cap, self.strong, &self.umas)
        })
    }

    /// Regimes whose assumptions hold in this model.
    pub fn valid_regimes(&self) -> Vec<Regime> {
        Regime::ALL
            .into_iter()
            .filter(|r| self.strong || r.order == crate::qsets::OrderAssumption::Wpo)
            .collect()
    }

    fn total_weight(&self) -> f64 {
        self.types.iter().map(|t| t.weight).sum()
    }

    pub fn qset(&self, t: &PopulationType, side: Side, regime: Regime) -> LocalPrefSet {
        qset_for_regime(t.report(side), &t.budget(side), self.cap, regime, &self.umas)
    }

    /// `P[Q_j = pair]`.
    pub fn true_share(&self) -> f64 {
        let w: f64 = self.types.iter().filter(|t| t.true_pair() == self.pair).map(|t| t.weight).sum();
        w / self.total_weight()
    }

    /// `P[Q_j = pair] / P[pair in candidate set | side]`.
    pub fn true_delta(&self, side: Side, regime: Regime) -> f64 {
        let hit: f64 = self
            .types
            .iter()
            .filter(|t| self.qset(t, side, regime).contains(&self.pair))
            .map(|t| t.weight)
            .sum();
        self.true_share() * self.total_weight() / hit
    }

    /// `E[Y(j) - Y(k) | Q_j = (j,k)]`.
    pub fn true_ate(&self) -> f64 {
        let (mut w, mut s) = (0.0, 0.0);
        for t in self.types.iter().filter(|t| t.true_pair() == self.pair) {
            w += t.weight;
            s += t.weight * (t.success[self.pair.first.index()] - t.success[self.pair.second.index()]);
        }
        s / w
    }

    /// Exact side-limit data: each type contributes its outcome distribution
    /// as two weighted observations.
    pub fn observations(&self, side: Side, regime: Regime) -> Vec<SideObservation> {
        let mut out = Vec::new();
        for t in &self.types {
            let qset = self.qset(t, side, regime);
            let reported = local_pair_from_sets(t.report(side), &t.minus_set, &t.plus_set);
            let pi = t.success[t.assigned(side).index()];
            for (y, w) in [(1.0, t.weight * pi), (0.0, t.weight * (1.0 - pi))] {
                if w > 0.0 {
                    out.push(SideObservation {
                        qset: qset.clone(),
                        reported,
                        outcome: y,
                        weight: w,
                    });
                }
            }
        }
        out
    }

    /// Draws `n` students: a type, a side of the cutoff and an outcome each.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<(usize, Side, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = WeightedIndex::new(self.types.iter().map(|t| t.weight)).expect("positive weights");
        (0..n)
            .map(|_| {
                let i = dist.sample(&mut rng);
                let side = if rng.random_bool(0.5) { Side::Plus } else { Side::Minus };
                let t = &self.types[i];
                let y = if rng.random_bool(t.success[t.assigned(side).index()]) { 1.0 } else { 0.0 };
                (i, side, y)
            })
            .collect()
    }

    /// Unit-weight observations for a drawn sample, split by side.
    pub fn sample_observations(
        &self,
        draws: &[(usize, Side, f64)],
        regime: Regime,
    ) -> (Vec<SideObservation>, Vec<SideObservation>) {
        let mut plus = Vec::new();
        let mut minus = Vec::new();
        let cache: Vec<[LocalPrefSet; 2]> = self
            .types
            .iter()
            .map(|t| [self.qset(t, Side::Plus, regime), self.qset(t, Side::Minus, regime)])
            .collect();
        for &(i, side, y) in draws {
            let t = &self.types[i];
            let obs = SideObservation {
                qset: cache[i][(side == Side::Minus) as usize].clone(),
                reported: local_pair_from_sets(t.report(side), &t.minus_set, &t.plus_set),
                outcome: y,
                weight: 1.0,
            };
            match side {
                Side::Plus => plus.push(obs),
                Side::Minus => minus.push(obs),
            }
        }
        (plus, minus)
    }
}
