//! Sets of candidate true local preferences consistent with a reported list,
//! under weak or strong partial order, optionally refined with the uniformly
//! more accessible school (UMAS) relation.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use fixedbitset::FixedBitSet;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::economy::{schools, Economy, OptionId, OptionSet, Ranking, ReportedList, ScoreVector};
use crate::error::{Error, Result};
use crate::localpref::{counterfactual_sets, local_pair_from_sets, LocalPrefPair};
use crate::mechanism::CutoffProfile;

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Serialize, Deserialize)]
pub enum OrderAssumption {
    /// Listed schools are acceptable and ranked truthfully.
    Wpo,
    /// Additionally, a list shorter than the cap contains every acceptable school.
    Spo,
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct Regime {
    pub order: OrderAssumption,
    pub umas: bool,
}

impl Regime {
    pub const WPO: Regime = Regime { order: OrderAssumption::Wpo, umas: false };
    pub const SPO: Regime = Regime { order: OrderAssumption::Spo, umas: false };
    pub const WPO_UMAS: Regime = Regime { order: OrderAssumption::Wpo, umas: true };
    pub const SPO_UMAS: Regime = Regime { order: OrderAssumption::Spo, umas: true };
    pub const ALL: [Regime; 4] = [Regime::WPO, Regime::SPO, Regime::WPO_UMAS, Regime::SPO_UMAS];

    pub fn name(self) -> &'static str {
        match (self.order, self.umas) {
            (OrderAssumption::Wpo, false) => "WPO",
            (OrderAssumption::Spo, false) => "SPO",
            (OrderAssumption::Wpo, true) => "WPO+UMAS",
            (OrderAssumption::Spo, true) => "SPO+UMAS",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase().replace(['-', '_', ' '], "+");
        Regime::ALL
            .into_iter()
            .find(|r| r.name() == norm)
            .ok_or_else(|| Error::Config(format!("unknown regime '{s}' (expected WPO, SPO, WPO+UMAS or SPO+UMAS)")))
    }
}

impl Serialize for Regime {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Regime {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Sorted, deduplicated set of local preference pairs.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Default)]
pub struct LocalPrefSet(SmallVec<[LocalPrefPair; 4]>);

impl LocalPrefSet {
    pub fn new(pairs: impl IntoIterator<Item = LocalPrefPair>) -> Self {
        let mut v: SmallVec<[LocalPrefPair; 4]> = pairs.into_iter().collect();
        v.sort_unstable();
        v.dedup();
        LocalPrefSet(v)
    }

    pub fn singleton(pair: LocalPrefPair) -> Self {
        LocalPrefSet(smallvec::smallvec![pair])
    }

    pub fn pairs(&self) -> &[LocalPrefPair] {
        &self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = &LocalPrefPair> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, pair: &LocalPrefPair) -> bool {
        self.0.binary_search(pair).is_ok()
    }

    pub fn is_subset(&self, other: &LocalPrefSet) -> bool {
        self.0.iter().all(|p| other.contains(p))
    }

    pub fn union(&self, other: &LocalPrefSet) -> LocalPrefSet {
        LocalPrefSet::new(self.0.iter().chain(other.0.iter()).copied())
    }

    pub fn intersects(&self, other: &LocalPrefSet) -> bool {
        self.0.iter().any(|p| other.contains(p))
    }

    /// Parses the `a:b|c:d` form.
    pub fn parse(s: &str) -> Result<Self> {
        let mut out = Vec::new();
        for part in s.split('|').filter(|p| !p.is_empty()) {
            let (a, b) = part
                .split_once(':')
                .ok_or_else(|| Error::Validation(format!("bad pair '{part}'")))?;
            let parse = |x: &str| {
                x.trim()
                    .parse::<u16>()
                    .map_err(|_| Error::Validation(format!("bad option '{x}'")))
            };
            out.push(LocalPrefPair::new(OptionId(parse(a)?), OptionId(parse(b)?)));
        }
        Ok(LocalPrefSet::new(out))
    }
}

impl fmt::Display for LocalPrefSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, p) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("|")?;
            }
            write!(f, "{p}")?;
        }
        Ok(())
    }
}

impl Serialize for LocalPrefSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// Counterfactual budget sets of one student at one cutoff, and the side of
/// the cutoff the student is on.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalBudget {
    pub minus: OptionSet,
    pub plus: OptionSet,
    pub above: bool,
}

impl LocalBudget {
    pub fn at(scores: &ScoreVector, cutoffs: &CutoffProfile, j: OptionId, groups: &[u16]) -> Self {
        let (minus, plus) = counterfactual_sets(scores, cutoffs, j, groups);
        LocalBudget {
            minus,
            plus,
            above: scores.get(j) >= cutoffs.get(j),
        }
    }
}

/// `(N⁻_j, N⁺_j)`: feasible schools missing from the list.
pub fn unlisted_from(report: &ReportedList, budget: &LocalBudget) -> (Vec<OptionId>, Vec<OptionId>) {
    let pick = |set: &OptionSet| {
        set.iter()
            .filter(|m| m.is_school() && !report.contains(*m))
            .collect::<Vec<_>>()
    };
    (pick(&budget.minus), pick(&budget.plus))
}

pub fn unlisted_feasible(
    report: &ReportedList,
    scores: &ScoreVector,
    cutoffs: &CutoffProfile,
    j: OptionId,
    groups: &[u16],
) -> (Vec<OptionId>, Vec<OptionId>) {
    unlisted_from(report, &LocalBudget::at(scores, cutoffs, j, groups))
}

/// Candidate set from counterfactual budget sets.
pub fn build_qset_local(report: &ReportedList, budget: &LocalBudget, cap: usize, order: OrderAssumption) -> LocalPrefSet {
    let ab = local_pair_from_sets(report, &budget.minus, &budget.plus);
    if order == OrderAssumption::Spo && report.len() < cap {
        return LocalPrefSet::singleton(ab);
    }
    let (n_minus, n_plus) = unlisted_from(report, budget);
    if budget.above {
        if ab.first == ab.second {
            return LocalPrefSet::singleton(ab);
        }
        LocalPrefSet::new(
            std::iter::once(ab).chain(n_minus.iter().map(|e| LocalPrefPair::new(ab.first, *e))),
        )
    } else {
        LocalPrefSet::new(
            std::iter::once(ab).chain(
                n_plus
                    .iter()
                    .filter(|e| !n_minus.contains(e))
                    .map(|e| LocalPrefPair::new(*e, ab.second)),
            ),
        )
    }
}

#[allow(clippy::too_many_arguments)]
pub fn build_qset(
    report: &ReportedList,
    scores: &ScoreVector,
    cutoffs: &CutoffProfile,
    j: OptionId,
    groups: &[u16],
    cap: usize,
    order: OrderAssumption,
) -> LocalPrefSet {
    build_qset_local(report, &LocalBudget::at(scores, cutoffs, j, groups), cap, order)
}

/// Ordered school pairs `(d,e)`: everyone with access to `d` has access to `e`.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct UmasRelation {
    pairs: BTreeSet<(OptionId, OptionId)>,
    /// Cutoff fingerprint the relation was computed from, if any.
    fingerprint: Option<u64>,
}

impl UmasRelation {
    /// A relation given directly, not tied to a cutoff profile.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (OptionId, OptionId)>) -> Self {
        UmasRelation {
            pairs: pairs.into_iter().filter(|(d, e)| d != e).collect(),
            fingerprint: None,
        }
    }

    pub fn contains(&self, d: OptionId, e: OptionId) -> bool {
        self.pairs.contains(&(d, e))
    }

    pub fn pairs(&self) -> impl Iterator<Item = &(OptionId, OptionId)> {
        self.pairs.iter()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn check_fresh(&self, cutoffs: &CutoffProfile) -> Result<()> {
        match self.fingerprint {
            Some(f) if f != cutoffs.fingerprint() => Err(Error::StaleUmas),
            _ => Ok(()),
        }
    }
}

/// Access containment over all students. A pair enters when access to `d`
/// implies access to `e`, the reverse does not hold, and at least `min_mass`
/// students have access to `e` but not `d`.
pub fn detect_umas(economy: &Economy, cutoffs: &CutoffProfile, min_mass: usize) -> UmasRelation {
    let n = economy.students.len();
    let access: Vec<FixedBitSet> = schools(economy.num_schools)
        .map(|m| {
            let mut b = FixedBitSet::with_capacity(n);
            for (i, s) in economy.students.iter().enumerate() {
                if s.scores.get(m) >= cutoffs.get(m) {
                    b.insert(i);
                }
            }
            b
        })
        .collect();
    let mut pairs = BTreeSet::new();
    for d in schools(economy.num_schools) {
        for e in schools(economy.num_schools) {
            if d == e {
                continue;
            }
            let (ad, ae) = (&access[d.school_index()], &access[e.school_index()]);
            if !ad.is_subset(ae) || ae.is_subset(ad) {
                continue;
            }
            let extra = ae.difference(ad).count();
            if extra >= min_mass.max(1) {
                pairs.insert((d, e));
            }
        }
    }
    UmasRelation {
        pairs,
        fingerprint: Some(cutoffs.fingerprint()),
    }
}

/// Drops candidates ruled out by the UMAS relation. The reported pair is never
/// removed.
pub fn refine_umas_local(
    qset: &LocalPrefSet,
    report: &ReportedList,
    budget: &LocalBudget,
    umas: &UmasRelation,
) -> LocalPrefSet {
    let ab = local_pair_from_sets(report, &budget.minus, &budget.plus);
    let pivot = if budget.above { ab.second } else { ab.first };
    let excluded = |e: OptionId| {
        report
            .schools()
            .iter()
            .any(|d| umas.contains(*d, e) && report.weakly_prefers(pivot, *d))
    };
    LocalPrefSet::new(qset.iter().copied().filter(|p| {
        if *p == ab {
            return true;
        }
        let candidate = if budget.above { p.second } else { p.first };
        !excluded(candidate)
    }))
}

#[allow(clippy::too_many_arguments)]
pub fn refine_umas(
    qset: &LocalPrefSet,
    report: &ReportedList,
    scores: &ScoreVector,
    cutoffs: &CutoffProfile,
    j: OptionId,
    groups: &[u16],
    umas: &UmasRelation,
) -> Result<LocalPrefSet> {
    umas.check_fresh(cutoffs)?;
    Ok(refine_umas_local(qset, report, &LocalBudget::at(scores, cutoffs, j, groups), umas))
}

/// Candidate set under a full regime.
pub fn qset_for_regime(
    report: &ReportedList,
    budget: &LocalBudget,
    cap: usize,
    regime: Regime,
    umas: &UmasRelation,
) -> LocalPrefSet {
    let q = build_qset_local(report, budget, cap, regime.order);
    if regime.umas {
        refine_umas_local(&q, report, budget, umas)
    } else {
        q
    }
}

/// True local preference of a ranking at the given budget sets.
pub fn true_local_pair<R: Ranking>(rel: &R, budget: &LocalBudget) -> LocalPrefPair {
    local_pair_from_sets(rel, &budget.minus, &budget.plus)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn list(ids: &[u16]) -> ReportedList {
        ReportedList::new(ids.iter().map(|i| OptionId(*i)).collect(), 4, 3).unwrap()
    }

    fn sd() -> CutoffProfile {
        CutoffProfile::from_values(vec![400.0, 450.0, 500.0, 600.0])
    }

    fn q(pairs: &[(u16, u16)]) -> LocalPrefSet {
        LocalPrefSet::new(pairs.iter().map(|(a, b)| LocalPrefPair::of(*a, *b)))
    }

    const G: [u16; 4] = [0; 4];

    #[test]
    fn unlisted_sets_near_top_cutoff() {
        let (nm, _) = unlisted_feasible(&list(&[4, 2, 1]), &ScoreVector(vec![610.0; 4]), &sd(), OptionId(4), &G);
        assert_eq!(nm, vec![OptionId(3)]);
        let (nm, np) = unlisted_feasible(&list(&[3, 2, 1]), &ScoreVector(vec![550.0; 4]), &sd(), OptionId(4), &G);
        assert!(nm.is_empty());
        assert_eq!(np, vec![OptionId(4)]);
    }

    #[test]
    fn spo_examples() {
        let above = ScoreVector(vec![610.0; 4]);
        let below = ScoreVector(vec![590.0; 4]);
        let p = list(&[4, 2, 1]);
        assert_eq!(build_qset(&p, &above, &sd(), OptionId(4), &G, 3, OrderAssumption::Spo), q(&[(4, 2), (4, 3)]));
        assert_eq!(build_qset(&p, &below, &sd(), OptionId(4), &G, 3, OrderAssumption::Spo), q(&[(4, 2)]));
        let short = ReportedList::new(vec![OptionId(4), OptionId(2)], 4, 3).unwrap();
        assert_eq!(build_qset(&short, &above, &sd(), OptionId(4), &G, 3, OrderAssumption::Spo), q(&[(4, 2)]));
        assert_eq!(
            build_qset(&short, &above, &sd(), OptionId(4), &G, 3, OrderAssumption::Wpo),
            q(&[(4, 1), (4, 2), (4, 3)])
        );
    }

    #[test]
    fn below_cutoff_unlisted_target_school() {
        let below = ScoreVector(vec![590.0; 4]);
        let p = list(&[3, 2, 1]);
        assert_eq!(build_qset(&p, &below, &sd(), OptionId(4), &G, 3, OrderAssumption::Wpo), q(&[(3, 3), (4, 3)]));
    }

    #[test]
    fn sd_umas_relation() {
        use crate::economy::{Economy, Student};
        let students: Vec<Student> = [350.0, 420.0, 470.0, 520.0, 620.0]
            .iter()
            .enumerate()
            .map(|(i, s)| Student {
                id: i as u32,
                scores: ScoreVector(vec![*s; 4]),
                preference: None,
                outcomes: None,
                observed: None,
                latent: 0.0,
                report: list(&[1]),
            })
            .collect();
        let e = Economy::new(4, 3, vec![1; 4], vec![0; 4], students).unwrap();
        let u = detect_umas(&e, &sd(), 1);
        let expected: BTreeSet<_> = [(2, 1), (3, 2), (3, 1), (4, 3), (4, 2), (4, 1)]
            .iter()
            .map(|(d, e)| (OptionId(*d), OptionId(*e)))
            .collect();
        assert_eq!(u.pairs, expected);

        let equal = CutoffProfile::from_values(vec![450.0; 4]);
        assert!(detect_umas(&e, &equal, 1).is_empty());

        let other = CutoffProfile::from_values(vec![400.0, 450.0, 500.0, 601.0]);
        let qs = q(&[(4, 2)]);
        assert!(matches!(
            refine_umas(&qs, &list(&[4, 2]), &ScoreVector(vec![610.0; 4]), &other, OptionId(4), &G, &u),
            Err(Error::StaleUmas)
        ));
    }

    #[test]
    fn umas_refinement_example() {
        let umas = UmasRelation::from_pairs(
            [(2, 1), (3, 2), (3, 1), (4, 3), (4, 2), (4, 1)].map(|(d, e)| (OptionId(d), OptionId(e))),
        );
        let above = ScoreVector(vec![610.0; 4]);
        let p = list(&[4, 2, 3]);
        let base = build_qset(&p, &above, &sd(), OptionId(4), &G, 3, OrderAssumption::Wpo);
        assert_eq!(base, q(&[(4, 1), (4, 2)]));
        let refined = refine_umas(&base, &p, &above, &sd(), OptionId(4), &G, &umas).unwrap();
        assert_eq!(refined, q(&[(4, 2)]));
        // {4,2,1}: the only relevant d is 4, and 2 is not weakly preferred to 4.
        let p = list(&[4, 2, 1]);
        let base = build_qset(&p, &above, &sd(), OptionId(4), &G, 3, OrderAssumption::Spo);
        assert_eq!(refine_umas(&base, &p, &above, &sd(), OptionId(4), &G, &umas).unwrap(), base);
        let empty = UmasRelation::default();
        assert_eq!(refine_umas(&base, &p, &above, &sd(), OptionId(4), &G, &empty).unwrap(), base);
    }

    #[test]
    fn regime_names_round_trip() {
        for r in Regime::ALL {
            assert_eq!(r.name().parse::<Regime>().unwrap(), r);
        }
        assert_eq!("spo_umas".parse::<Regime>().unwrap(), Regime::SPO_UMAS);
        assert!("xyz".parse::<Regime>().is_err());
    }

    #[test]
    fn set_text_round_trip() {
        let s = q(&[(4, 3), (4, 2)]);
        assert_eq!(s.to_string(), "4:2|4:3");
        assert_eq!(LocalPrefSet::parse("4:3|4:2").unwrap(), s);
    }
}
