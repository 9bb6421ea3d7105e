//! Distribution of true local preferences at a cutoff: support families,
//! containment frequencies, the polytope of admissible distributions, event
//! bounds, lower bounds on the share of the target pair, and the
//! falsification screen.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::economy::OptionId;
use crate::error::{Error, Result};
use crate::localpref::{LocalPrefPair, Side};
use crate::lp::{round12, Cmp, LinearProgram, LpResult, TOLERANCE};
use crate::qsets::LocalPrefSet;

pub const DEFAULT_CLOSURE_CAP: usize = 4096;

/// One (possibly weighted) observation on one side of a cutoff.
#[derive(Clone, Debug, PartialEq)]
pub struct SideObservation {
    pub qset: LocalPrefSet,
    /// Local preference implied by the reported list.
    pub reported: LocalPrefPair,
    pub outcome: f64,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SupportFamily {
    pub side: Side,
    /// Distinct candidate sets observed with positive weight.
    pub members: Vec<LocalPrefSet>,
    /// All unions of members.
    pub closure: Vec<LocalPrefSet>,
}

impl SupportFamily {
    pub fn in_closure(&self, set: &LocalPrefSet) -> bool {
        self.closure.binary_search(set).is_ok()
    }

    /// Every pair appearing in some member.
    pub fn atoms(&self) -> BTreeSet<LocalPrefPair> {
        self.members.iter().flat_map(|m| m.iter().copied()).collect()
    }

    /// Whether the members inside `set` are linked by overlaps into one
    /// group. When they split into disjoint groups, containment in `set` is
    /// the sum of containment in each group's union, so the inequality for
    /// `set` is implied by theirs.
    pub fn is_essential(&self, set: &LocalPrefSet) -> bool {
        let inside: Vec<&LocalPrefSet> = self.members.iter().filter(|m| m.is_subset(set)).collect();
        if inside.is_empty() {
            return false;
        }
        let mut reached = vec![false; inside.len()];
        reached[0] = true;
        let mut stack = vec![0];
        while let Some(i) = stack.pop() {
            for k in 0..inside.len() {
                if !reached[k] && inside[i].intersects(inside[k]) {
                    reached[k] = true;
                    stack.push(k);
                }
            }
        }
        reached.iter().all(|r| *r)
    }
}

pub fn support_family(side: Side, observations: &[SideObservation], cap: usize) -> Result<SupportFamily> {
    let members: BTreeSet<LocalPrefSet> = observations
        .iter()
        .filter(|o| o.weight > 0.0)
        .map(|o| o.qset.clone())
        .collect();
    if members.is_empty() {
        return Err(Error::EmptySample("no observations on this side"));
    }
    let members: Vec<LocalPrefSet> = members.into_iter().collect();
    let closure = union_closure(&members, cap)?;
    Ok(SupportFamily { side, members, closure })
}

/// Fixed point of unions with members, capped at `cap` sets.
pub fn union_closure(members: &[LocalPrefSet], cap: usize) -> Result<Vec<LocalPrefSet>> {
    let mut all: BTreeSet<LocalPrefSet> = members.iter().cloned().collect();
    if all.len() > cap {
        return Err(Error::ClosureTooLarge { cap });
    }
    let mut frontier: Vec<LocalPrefSet> = all.iter().cloned().collect();
    while !frontier.is_empty() {
        let mut next = Vec::new();
        for a in &frontier {
            for m in members {
                if m.is_subset(a) {
                    continue;
                }
                let u = a.union(m);
                if all.insert(u.clone()) {
                    if all.len() > cap {
                        return Err(Error::ClosureTooLarge { cap });
                    }
                    next.push(u);
                }
            }
        }
        frontier = next;
    }
    Ok(all.into_iter().collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ContainmentStats {
    pub side: Side,
    pub total_weight: f64,
    /// Share of observations with each candidate set.
    pub masses: BTreeMap<LocalPrefSet, f64>,
    /// Containment frequency for every member of the union closure.
    pub containment: Vec<(LocalPrefSet, f64)>,
}

impl ContainmentStats {
    /// Share of observations whose candidate set lies inside `a`.
    pub fn prob_subset(&self, a: &LocalPrefSet) -> f64 {
        if let Ok(i) = self.containment.binary_search_by(|(s, _)| s.cmp(a)) {
            return self.containment[i].1;
        }
        self.masses
            .iter()
            .filter(|(q, _)| q.is_subset(a))
            .map(|(_, w)| w)
            .sum::<f64>()
            .min(1.0)
    }

    /// Share of observations whose candidate set contains `pair`.
    pub fn prob_hits(&self, pair: LocalPrefPair) -> f64 {
        self.masses
            .iter()
            .filter(|(q, _)| q.contains(&pair))
            .map(|(_, w)| w)
            .sum::<f64>()
            .min(1.0)
    }
}

pub fn containment_stats(observations: &[SideObservation], family: &SupportFamily) -> Result<ContainmentStats> {
    let total: f64 = observations.iter().map(|o| o.weight.max(0.0)).sum();
    if !(total > 0.0) {
        return Err(Error::EmptySample("containment frequencies need positive weight"));
    }
    let mut raw: BTreeMap<LocalPrefSet, f64> = BTreeMap::new();
    for o in observations.iter().filter(|o| o.weight > 0.0) {
        *raw.entry(o.qset.clone()).or_default() += o.weight;
    }
    let masses: BTreeMap<LocalPrefSet, f64> = raw.into_iter().map(|(k, w)| (k, w / total)).collect();
    let containment = family
        .closure
        .iter()
        .map(|a| {
            // Sum raw weights before dividing so exact shares stay exact.
            let w: f64 = observations
                .iter()
                .filter(|o| o.weight > 0.0 && o.qset.is_subset(a))
                .map(|o| o.weight)
                .sum();
            (a.clone(), (w / total).min(1.0))
        })
        .collect();
    Ok(ContainmentStats {
        side: family.side,
        total_weight: total,
        masses,
        containment,
    })
}

/// Support family and containment frequencies for one side.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SideData {
    pub family: SupportFamily,
    pub stats: ContainmentStats,
}

pub fn side_data(side: Side, observations: &[SideObservation], cap: usize) -> Result<SideData> {
    let family = support_family(side, observations, cap)?;
    let stats = containment_stats(observations, &family)?;
    Ok(SideData { family, stats })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RowCase {
    Both,
    PlusOnly,
    MinusOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PolytopeRow {
    pub set: LocalPrefSet,
    pub bound: f64,
    pub case: RowCase,
}

/// Distributions `p` over `atoms` plus a residual for every other pair, with
/// `sum_{t in A} p_t >= bound(A)` for each row and total mass one.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DistPolytope {
    pub atoms: Vec<LocalPrefPair>,
    pub rows: Vec<PolytopeRow>,
}

impl DistPolytope {
    pub fn atom_index(&self, pair: &LocalPrefPair) -> Option<usize> {
        self.atoms.binary_search(pair).ok()
    }

    /// Variables: one per atom, then the residual.
    pub fn to_lp(&self) -> LinearProgram {
        let n = self.atoms.len();
        let mut lp = LinearProgram::new(n + 1);
        lp.add_row((0..=n).map(|i| (i, 1.0)).collect(), Cmp::Eq, 1.0);
        for row in &self.rows {
            let coeffs: Vec<(usize, f64)> = row.set.iter().filter_map(|p| self.atom_index(p)).map(|i| (i, 1.0)).collect();
            lp.add_row(coeffs, Cmp::Ge, row.bound);
        }
        lp
    }

    /// Lowers every row bound by `allowance` (floored at zero), absorbing
    /// sampling noise in finite-sample frequencies.
    pub fn relaxed(mut self, allowance: f64) -> Self {
        if allowance > 0.0 {
            for row in &mut self.rows {
                row.bound = (row.bound - allowance).max(0.0);
            }
        }
        self
    }

    /// Whether a distribution over atoms (residual implied) satisfies every row.
    pub fn contains(&self, p: &[f64], tol: f64) -> bool {
        let total: f64 = p.iter().sum();
        if p.iter().any(|x| *x < -tol) || total > 1.0 + tol {
            return false;
        }
        self.rows.iter().all(|row| {
            let s: f64 = row.set.iter().filter_map(|q| self.atom_index(q)).map(|i| p[i]).sum();
            s >= row.bound - tol
        })
    }
}

/// Builds the polytope from whichever sides are supplied.
pub fn build_polytope<'a>(plus: Option<&'a SideData>, minus: Option<&'a SideData>) -> DistPolytope {
    let mut atoms = BTreeSet::new();
    for d in [plus, minus].into_iter().flatten() {
        atoms.extend(d.family.atoms());
    }
    let mut sets: BTreeSet<LocalPrefSet> = BTreeSet::new();
    for d in [plus, minus].into_iter().flatten() {
        sets.extend(d.family.closure.iter().cloned());
    }
    let rows = sets
        .into_iter()
        .filter_map(|set| {
            let term = |d: Option<&'a SideData>| d.filter(|d| d.family.in_closure(&set) && d.family.is_essential(&set));
            let (bound, case) = match (term(plus), term(minus)) {
                (Some(p), Some(m)) => (p.stats.prob_subset(&set).max(m.stats.prob_subset(&set)), RowCase::Both),
                (Some(p), None) => (p.stats.prob_subset(&set), RowCase::PlusOnly),
                (None, Some(m)) => (m.stats.prob_subset(&set), RowCase::MinusOnly),
                (None, None) => return None,
            };
            Some(PolytopeRow { set, bound, case })
        })
        .collect();
    DistPolytope {
        atoms: atoms.into_iter().collect(),
        rows,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sense {
    Min,
    Max,
}

/// Optimal probability of `event` over the polytope, rounded to 1e-12.
pub fn solve_bounds_on_event(polytope: &DistPolytope, event: &LocalPrefSet, sense: Sense) -> Result<f64> {
    let n = polytope.atoms.len();
    let mut c = vec![0.0; n + 1];
    for p in event.iter() {
        match polytope.atom_index(p) {
            Some(i) => c[i] = 1.0,
            None => c[n] = 1.0,
        }
    }
    let lp = polytope.to_lp();
    let r = match sense {
        Sense::Min => lp.minimize(&c),
        Sense::Max => lp.maximize(&c),
    };
    match r {
        LpResult::Optimal { value, .. } => Ok(round12(value.clamp(0.0, 1.0))),
        LpResult::Infeasible => Err(Error::Falsified("containment inequalities admit no distribution".into())),
        LpResult::Unbounded => Err(Error::Unbounded),
    }
}

pub fn event_interval(polytope: &DistPolytope, event: &LocalPrefSet) -> Result<(f64, f64)> {
    Ok((
        solve_bounds_on_event(polytope, event, Sense::Min)?,
        solve_bounds_on_event(polytope, event, Sense::Max)?,
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DeltaBounds {
    pub p_bar: f64,
    pub delta_plus: f64,
    pub delta_minus: f64,
    pub denom_plus: f64,
    pub denom_minus: f64,
    /// Set when a ratio exceeded one and was clipped.
    pub clipped: bool,
}

pub fn delta_bounds(
    p_bar: f64,
    plus: &ContainmentStats,
    minus: &ContainmentStats,
    pair: LocalPrefPair,
) -> Result<DeltaBounds> {
    let denom_plus = plus.prob_hits(pair);
    let denom_minus = minus.prob_hits(pair);
    if denom_plus <= 0.0 || denom_minus <= 0.0 {
        return Err(Error::ZeroDenominator(pair.first, pair.second));
    }
    let raw_plus = p_bar / denom_plus;
    let raw_minus = p_bar / denom_minus;
    let clipped = raw_plus > 1.0 + TOLERANCE || raw_minus > 1.0 + TOLERANCE;
    Ok(DeltaBounds {
        p_bar,
        delta_plus: raw_plus.clamp(0.0, 1.0),
        delta_minus: raw_minus.clamp(0.0, 1.0),
        denom_plus,
        denom_minus,
        clipped,
    })
}

/// One-sided variant: only the plus-side ratio is defined.
pub fn delta_plus_only(p_bar: f64, plus: &ContainmentStats, pair: LocalPrefPair) -> Result<f64> {
    let d = plus.prob_hits(pair);
    if d <= 0.0 {
        return Err(Error::ZeroDenominator(pair.first, pair.second));
    }
    Ok((p_bar / d).clamp(0.0, 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Partition {
    pub name: String,
    pub cells: Vec<LocalPrefSet>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FalsificationResult {
    pub partition: String,
    pub statistic: f64,
    pub rejected: bool,
}

/// All pairs of options `0..=J`.
pub fn universe(num_schools: usize) -> LocalPrefSet {
    let opts = (0..=num_schools as u16).map(OptionId);
    LocalPrefSet::new(opts.clone().flat_map(|a| opts.clone().map(move |b| LocalPrefPair::new(a, b))))
}

fn complement(universe: &LocalPrefSet, of: &LocalPrefSet) -> LocalPrefSet {
    LocalPrefSet::new(universe.iter().copied().filter(|p| !of.contains(p)))
}

/// Default screen: singleton cells for every atom of the merged support plus
/// the complement; and the target pair against everything else.
pub fn default_partitions(num_schools: usize, atoms: &[LocalPrefPair], pair: LocalPrefPair) -> Vec<Partition> {
    let u = universe(num_schools);
    let atom_set = LocalPrefSet::new(atoms.iter().copied());
    let mut cells: Vec<LocalPrefSet> = atoms.iter().map(|a| LocalPrefSet::singleton(*a)).collect();
    let rest = complement(&u, &atom_set);
    if !rest.is_empty() {
        cells.push(rest);
    }
    let target = LocalPrefSet::singleton(pair);
    vec![
        Partition {
            name: "atoms".into(),
            cells,
        },
        Partition {
            name: format!("pair:{pair}"),
            cells: vec![target.clone(), complement(&u, &target)],
        },
    ]
}

pub fn validate_partition(partition: &Partition, num_schools: usize) -> Result<()> {
    let u = universe(num_schools);
    let mut seen: BTreeSet<LocalPrefPair> = BTreeSet::new();
    for cell in &partition.cells {
        if cell.is_empty() {
            return Err(Error::NotAPartition(format!("{}: empty cell", partition.name)));
        }
        for p in cell.iter() {
            if !u.contains(p) {
                return Err(Error::NotAPartition(format!("{}: pair {p} outside the option space", partition.name)));
            }
            if !seen.insert(*p) {
                return Err(Error::NotAPartition(format!("{}: pair {p} in two cells", partition.name)));
            }
        }
    }
    if seen.len() != u.len() {
        return Err(Error::NotAPartition(format!(
            "{}: covers {} of {} pairs",
            partition.name,
            seen.len(),
            u.len()
        )));
    }
    Ok(())
}

/// Lower bound on `P[Q_j in A]` implied by the supplied sides. A side's term
/// is its containment frequency; for a cell outside that side's union set this
/// equals the frequency of the largest union-set member inside the cell.
pub fn cell_bound(cell: &LocalPrefSet, plus: Option<&SideData>, minus: Option<&SideData>) -> f64 {
    [plus, minus]
        .into_iter()
        .flatten()
        .map(|d| d.stats.prob_subset(cell))
        .fold(0.0, f64::max)
}

/// Sums cell lower bounds over each partition; rejects when a sum exceeds
/// `1 + tolerance + allowance`.
pub fn falsification_test(
    plus: Option<&SideData>,
    minus: Option<&SideData>,
    partitions: &[Partition],
    num_schools: usize,
    tolerance: f64,
    allowance: f64,
) -> Result<Vec<FalsificationResult>> {
    partitions
        .iter()
        .map(|p| {
            validate_partition(p, num_schools)?;
            let statistic = round12(p.cells.iter().map(|c| cell_bound(c, plus, minus)).sum());
            Ok(FalsificationResult {
                partition: p.name.clone(),
                statistic,
                rejected: statistic > 1.0 + tolerance + allowance,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(default)]
pub struct IdentifyOptions {
    pub closure_cap: usize,
    pub tolerance: f64,
    /// Slack for finite samples: subtracted from every containment lower
    /// bound and added to the falsification threshold. Zero for exact
    /// population probabilities.
    pub noise_allowance: f64,
}

impl Default for IdentifyOptions {
    fn default() -> Self {
        IdentifyOptions {
            closure_cap: DEFAULT_CLOSURE_CAP,
            tolerance: 1e-9,
            noise_allowance: 0.0,
        }
    }
}

/// `z` worst-case standard errors of a frequency estimated on the smaller
/// side, `z * 0.5 / sqrt(min(n_plus, n_minus))`.
pub fn sampling_allowance(n_plus: usize, n_minus: usize, z: f64) -> f64 {
    let n = n_plus.min(n_minus).max(1) as f64;
    z * 0.5 / n.sqrt()
}

/// Everything the identification step produces for one pair.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Identification {
    pub pair: LocalPrefPair,
    pub plus: SideData,
    pub minus: SideData,
    pub polytope: DistPolytope,
    /// `[min, max]` of `P[Q_j = pair]`; `None` when the polytope is empty.
    pub pair_interval: Option<(f64, f64)>,
    pub delta: Option<DeltaBounds>,
    pub falsification: Vec<FalsificationResult>,
    pub falsified: bool,
}

pub fn identify(
    pair: LocalPrefPair,
    plus_obs: &[SideObservation],
    minus_obs: &[SideObservation],
    num_schools: usize,
    opts: &IdentifyOptions,
) -> Result<Identification> {
    let plus = side_data(Side::Plus, plus_obs, opts.closure_cap)?;
    let minus = side_data(Side::Minus, minus_obs, opts.closure_cap)?;
    let polytope = build_polytope(Some(&plus), Some(&minus)).relaxed(opts.noise_allowance);
    let partitions = default_partitions(num_schools, &polytope.atoms, pair);
    let falsification = falsification_test(
        Some(&plus),
        Some(&minus),
        &partitions,
        num_schools,
        opts.tolerance,
        opts.noise_allowance,
    )?;
    let target = LocalPrefSet::singleton(pair);
    let (pair_interval, lp_falsified) = match event_interval(&polytope, &target) {
        Ok(iv) => (Some(iv), false),
        Err(Error::Falsified(_)) => (None, true),
        Err(e) => return Err(e),
    };
    let delta = match pair_interval {
        Some((p_bar, _)) => Some(delta_bounds(p_bar, &plus.stats, &minus.stats, pair)?),
        None => None,
    };
    let falsified = lp_falsified || falsification.iter().any(|f| f.rejected);
    Ok(Identification {
        pair,
        plus,
        minus,
        polytope,
        pair_interval,
        delta,
        falsification,
        falsified,
    })
}
