//! Budget sets, counterfactual budget sets around a cutoff, local preference
//! pairs, comparable pairs and local samples.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::economy::{schools, Economy, OptionId, OptionSet, Ranking, ScoreVector};
use crate::mechanism::CutoffProfile;

/// `{0} ∪ {m : S_m >= c_m}`.
pub fn budget_set(scores: &ScoreVector, cutoffs: &CutoffProfile) -> OptionSet {
    let j = cutoffs.len();
    let mut b = OptionSet::empty(j);
    b.insert(OptionId::OUTSIDE);
    for m in schools(j) {
        if scores.get(m) >= cutoffs.get(m) {
            b.insert(m);
        }
    }
    b
}

/// Schools that move in and out of the budget set together with `j`: same
/// score column and exactly the same cutoff.
pub fn twin_set(j: OptionId, cutoffs: &CutoffProfile, groups: &[u16]) -> OptionSet {
    let cj = cutoffs.get(j);
    let g = groups[j.school_index()];
    OptionSet::from_options(
        cutoffs.len(),
        schools(cutoffs.len()).filter(|m| groups[m.school_index()] == g && cutoffs.get(*m).to_bits() == cj.to_bits()),
    )
}

/// Counterfactual budget sets `(B⁻_j, B⁺_j)` with `S_j` just below and just
/// above `c_j`.
pub fn counterfactual_sets(
    scores: &ScoreVector,
    cutoffs: &CutoffProfile,
    j: OptionId,
    groups: &[u16],
) -> (OptionSet, OptionSet) {
    let b = budget_set(scores, cutoffs);
    let twins = twin_set(j, cutoffs, groups);
    (b.difference(&twins), b.union(&twins))
}

/// `(first, second)`: best option in `B⁺_j`, best option in `B⁻_j`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Serialize, Deserialize)]
pub struct LocalPrefPair {
    pub first: OptionId,
    pub second: OptionId,
}

impl LocalPrefPair {
    pub fn new(first: OptionId, second: OptionId) -> Self {
        LocalPrefPair { first, second }
    }

    pub fn of(first: u16, second: u16) -> Self {
        LocalPrefPair::new(OptionId(first), OptionId(second))
    }
}

impl fmt::Display for LocalPrefPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.first, self.second)
    }
}

/// Local preference pair from already computed counterfactual sets.
pub fn local_pair_from_sets<R: Ranking>(rel: &R, minus: &OptionSet, plus: &OptionSet) -> LocalPrefPair {
    LocalPrefPair::new(rel.best_in(plus), rel.best_in(minus))
}

pub fn local_pair<R: Ranking>(
    rel: &R,
    scores: &ScoreVector,
    cutoffs: &CutoffProfile,
    j: OptionId,
    groups: &[u16],
) -> LocalPrefPair {
    let (minus, plus) = counterfactual_sets(scores, cutoffs, j, groups);
    local_pair_from_sets(rel, &minus, &plus)
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Plus,
    Minus,
}

impl Side {
    pub fn as_str(self) -> &'static str {
        match self {
            Side::Plus => "plus",
            Side::Minus => "minus",
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bandwidth {
    pub minus: f64,
    pub plus: f64,
}

impl Default for Bandwidth {
    fn default() -> Self {
        Bandwidth { minus: 30.0, plus: 30.0 }
    }
}

impl Bandwidth {
    pub fn symmetric(h: f64) -> Self {
        Bandwidth { minus: h, plus: h }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairBandwidth {
    pub first: u16,
    pub second: u16,
    pub minus: f64,
    pub plus: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BandwidthConfig {
    pub minus: f64,
    pub plus: f64,
    pub overrides: Vec<PairBandwidth>,
}

impl Default for BandwidthConfig {
    fn default() -> Self {
        BandwidthConfig {
            minus: 30.0,
            plus: 30.0,
            overrides: Vec::new(),
        }
    }
}

impl BandwidthConfig {
    pub fn symmetric(h: f64) -> Self {
        BandwidthConfig {
            minus: h,
            plus: h,
            overrides: Vec::new(),
        }
    }

    pub fn for_pair(&self, pair: LocalPrefPair) -> Bandwidth {
        self.overrides
            .iter()
            .find(|o| o.first == pair.first.0 && o.second == pair.second.0)
            .map(|o| Bandwidth { minus: o.minus, plus: o.plus })
            .unwrap_or(Bandwidth {
                minus: self.minus,
                plus: self.plus,
            })
    }

    pub fn is_valid(&self) -> bool {
        let ok = |m: f64, p: f64| m > 0.0 && p > 0.0 && m.is_finite() && p.is_finite();
        ok(self.minus, self.plus) && self.overrides.iter().all(|o| ok(o.minus, o.plus))
    }
}

/// Per-side bandwidths after shrinking so no other cutoff on the same score
/// column falls strictly inside the window `(c_j - h⁻, c_j + h⁺)`.
pub fn trimmed_bandwidth(cutoffs: &CutoffProfile, j: OptionId, groups: &[u16], bw: Bandwidth) -> Bandwidth {
    let cj = cutoffs.get(j);
    let g = groups[j.school_index()];
    let mut out = bw;
    for l in schools(cutoffs.len()) {
        if l == j || groups[l.school_index()] != g || !cutoffs.is_binding(l) {
            continue;
        }
        let cl = cutoffs.get(l);
        if cl < cj && cj - cl < out.minus {
            out.minus = cj - cl;
        } else if cl > cj && cl - cj < out.plus {
            out.plus = cl - cj;
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalSample {
    pub pair: LocalPrefPair,
    pub cutoff: f64,
    pub bandwidth: Bandwidth,
    /// Student indices with `c_j <= S_j < c_j + h⁺`.
    pub plus: Vec<usize>,
    /// Student indices with `c_j - h⁻ < S_j < c_j`.
    pub minus: Vec<usize>,
}

impl LocalSample {
    pub fn side(&self, side: Side) -> &[usize] {
        match side {
            Side::Plus => &self.plus,
            Side::Minus => &self.minus,
        }
    }

    pub fn empty_side(&self) -> Option<Side> {
        if self.plus.is_empty() {
            Some(Side::Plus)
        } else if self.minus.is_empty() {
            Some(Side::Minus)
        } else {
            None
        }
    }
}

pub fn select_local_sample(
    economy: &Economy,
    cutoffs: &CutoffProfile,
    pair: LocalPrefPair,
    bw: Bandwidth,
) -> LocalSample {
    let j = pair.first;
    let bandwidth = trimmed_bandwidth(cutoffs, j, &economy.score_groups, bw);
    let cj = cutoffs.get(j);
    let mut plus = Vec::new();
    let mut minus = Vec::new();
    for (i, s) in economy.students.iter().enumerate() {
        let x = s.scores.get(j);
        if x >= cj && x < cj + bandwidth.plus {
            plus.push(i);
        } else if x < cj && x > cj - bandwidth.minus {
            minus.push(i);
        }
    }
    LocalSample {
        pair,
        cutoff: cj,
        bandwidth,
        plus,
        minus,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PairCounts {
    /// Students in the window with reported local preference equal to the pair.
    pub n_reported: usize,
    pub n_plus: usize,
    pub n_minus: usize,
    pub cutoff: f64,
    pub h_minus: f64,
    pub h_plus: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ComparablePairs {
    pub pairs: BTreeMap<LocalPrefPair, PairCounts>,
}

impl ComparablePairs {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn contains(&self, pair: LocalPrefPair) -> bool {
        self.pairs.contains_key(&pair)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&LocalPrefPair, &PairCounts)> {
        self.pairs.iter()
    }
}

/// Pairs `(j,k)` of distinct schools such that at least `min_local_n`
/// students inside the cutoff window of `j` report local preference `(j,k)`.
/// Only schools with a binding cutoff are considered.
pub fn find_comparable_pairs(
    economy: &Economy,
    cutoffs: &CutoffProfile,
    min_local_n: usize,
    bandwidths: &BandwidthConfig,
) -> ComparablePairs {
    let mut out = ComparablePairs::default();
    let groups = &economy.score_groups;
    for j in schools(economy.num_schools) {
        if !cutoffs.is_binding(j) || !cutoffs.get(j).is_finite() {
            continue;
        }
        for k in schools(economy.num_schools) {
            if k == j {
                continue;
            }
            let pair = LocalPrefPair::new(j, k);
            let sample = select_local_sample(economy, cutoffs, pair, bandwidths.for_pair(pair));
            let matches = |idx: &usize| {
                let s = &economy.students[*idx];
                local_pair(&s.report, &s.scores, cutoffs, j, groups) == pair
            };
            let n_plus = sample.plus.iter().filter(|i| matches(i)).count();
            let n_minus = sample.minus.iter().filter(|i| matches(i)).count();
            let n = n_plus + n_minus;
            if n >= min_local_n && n > 0 {
                out.pairs.insert(
                    pair,
                    PairCounts {
                        n_reported: n,
                        n_plus: sample.plus.len(),
                        n_minus: sample.minus.len(),
                        cutoff: sample.cutoff,
                        h_minus: sample.bandwidth.minus,
                        h_plus: sample.bandwidth.plus,
                    },
                );
            }
        }
    }
    out
}
