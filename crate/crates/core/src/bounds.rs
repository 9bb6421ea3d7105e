//! Bounds on mean potential outcomes and effects for students whose true
//! local preference is the target pair: trimming bounds, binary-outcome
//! bounds, sharp bounds for finite outcomes, and the naive RD contrast.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::identify::{DeltaBounds, SideData};
use crate::localpref::{LocalPrefPair, Side};
use crate::lp::{round12, Cmp, LinearProgram, LpResult};
use crate::qsets::LocalPrefSet;
use crate::identify::SideObservation;

pub const DEFAULT_SUPPORT_CAP: usize = 8;

/// Function applied to outcomes before averaging.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutcomeTransform {
    Identity,
    /// `1{y > threshold}`.
    Indicator { threshold: f64 },
    /// Finite lookup: `from[i]` maps to `to[i]`.
    Table { from: Vec<f64>, to: Vec<f64> },
}

impl OutcomeTransform {
    pub fn apply(&self, y: f64) -> Result<f64> {
        match self {
            OutcomeTransform::Identity => Ok(y),
            OutcomeTransform::Indicator { threshold } => Ok(f64::from(u8::from(y > *threshold))),
            OutcomeTransform::Table { from, to } => from
                .iter()
                .position(|x| *x == y)
                .map(|i| to[i])
                .ok_or_else(|| Error::Validation(format!("outcome {y} missing from lookup table"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let OutcomeTransform::Table { from, to } = self {
            if from.len() != to.len() || from.is_empty() {
                return Err(Error::Config("lookup table needs matching, nonempty from/to lists".into()));
            }
        }
        Ok(())
    }
}

impl fmt::Display for OutcomeTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OutcomeTransform::Identity => f.write_str("identity"),
            OutcomeTransform::Indicator { threshold } => write!(f, "indicator({threshold})"),
            OutcomeTransform::Table { .. } => f.write_str("table"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Hm,
    SharpLp,
    NaivePoint,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Hm => "hm",
            Method::SharpLp => "sharp_lp",
            Method::NaivePoint => "naive_point",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SideBounds {
    /// Bounds on the mean of g(Y(j)) from the plus side.
    pub plus: (f64, f64),
    /// Bounds on the mean of g(Y(k)) from the minus side.
    pub minus: (f64, f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EffectBounds {
    pub lower: f64,
    pub upper: f64,
    pub method: Method,
}

impl EffectBounds {
    pub fn point(value: f64) -> Self {
        EffectBounds {
            lower: value,
            upper: value,
            method: Method::NaivePoint,
        }
    }

    pub fn sign_identified(&self) -> bool {
        self.lower > 0.0 || self.upper < 0.0
    }

    pub fn contains(&self, x: f64, tol: f64) -> bool {
        x >= self.lower - tol && x <= self.upper + tol
    }

    pub fn is_within(&self, other: &EffectBounds, tol: f64) -> bool {
        self.lower >= other.lower - tol && self.upper <= other.upper + tol
    }
}

/// `[lower⁺ - upper⁻, upper⁺ - lower⁻]`.
pub fn effect_bounds(plus: (f64, f64), minus: (f64, f64)) -> EffectBounds {
    EffectBounds {
        lower: plus.0 - minus.1,
        upper: plus.1 - minus.0,
        method: Method::Hm,
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0) {
        return Err(Error::ZeroShare);
    }
    if delta > 1.0 + 1e-12 {
        return Err(Error::Validation(format!("share {delta} above one")));
    }
    Ok(())
}

/// Weighted mean of the first `mass` units of weight along `sorted`.
fn leading_mean(sorted: &[(f64, f64)], mass: f64) -> f64 {
    let mut left = mass;
    let mut acc = 0.0;
    for (v, w) in sorted {
        if left <= 0.0 {
            break;
        }
        let take = w.min(left);
        acc += v * take;
        left -= take;
    }
    acc / mass
}

/// Mean of the lowest and highest `delta` share of a weighted sample. Mass at
/// the quantile enters fractionally so each trimmed cell has weight exactly
/// `delta` times the total.
pub fn trimming_bounds_continuous(values: &[(f64, f64)], delta: f64) -> Result<(f64, f64)> {
    check_delta(delta)?;
    let delta = delta.min(1.0);
    let mut v: Vec<(f64, f64)> = values.iter().copied().filter(|(_, w)| *w > 0.0).collect();
    let total: f64 = v.iter().map(|(_, w)| w).sum();
    if v.is_empty() || !(total > 0.0) {
        return Err(Error::EmptySample("trimming needs a nonempty sample"));
    }
    if delta >= 1.0 {
        let mean = v.iter().map(|(x, w)| x * w).sum::<f64>() / total;
        return Ok((mean, mean));
    }
    v.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mass = delta * total;
    let lower = leading_mean(&v, mass);
    v.reverse();
    let upper = leading_mean(&v, mass);
    Ok((lower, upper))
}

/// `[max(1 - P(Y=0)/delta, 0), min(P(Y=1)/delta, 1)]`.
pub fn binary_bounds(values: &[(f64, f64)], delta: f64) -> Result<(f64, f64)> {
    check_delta(delta)?;
    let total: f64 = values.iter().filter(|(_, w)| *w > 0.0).map(|(_, w)| w).sum();
    if !(total > 0.0) {
        return Err(Error::EmptySample("binary bounds need a nonempty sample"));
    }
    let mut ones = 0.0;
    for (y, w) in values.iter().filter(|(_, w)| *w > 0.0) {
        if *y == 1.0 {
            ones += w;
        } else if *y != 0.0 {
            return Err(Error::Validation(format!("binary bounds got outcome {y}")));
        }
    }
    let p1 = ones / total;
    let p0 = 1.0 - p1;
    Ok(((1.0 - p0 / delta).max(0.0), (p1 / delta).min(1.0)))
}

pub fn is_binary(values: &[(f64, f64)]) -> bool {
    values.iter().all(|(y, _)| *y == 0.0 || *y == 1.0)
}

/// Transformed outcomes and weights of observations whose candidate set
/// contains `pair`.
pub fn candidate_values(obs: &[SideObservation], pair: LocalPrefPair, g: &OutcomeTransform) -> Result<Vec<(f64, f64)>> {
    obs.iter()
        .filter(|o| o.weight > 0.0 && o.qset.contains(&pair))
        .map(|o| Ok((g.apply(o.outcome)?, o.weight)))
        .collect()
}

fn side_interval(values: &[(f64, f64)], delta: f64) -> Result<(f64, f64)> {
    if is_binary(values) {
        binary_bounds(values, delta)
    } else {
        trimming_bounds_continuous(values, delta)
    }
}

/// Trimming bounds on both sides (binary formula when outcomes are 0/1) and
/// the implied effect interval.
pub fn hm_bounds(
    plus: &[SideObservation],
    minus: &[SideObservation],
    pair: LocalPrefPair,
    g: &OutcomeTransform,
    delta: &DeltaBounds,
) -> Result<(SideBounds, EffectBounds)> {
    if !(delta.p_bar > 0.0) {
        return Err(Error::ZeroShare);
    }
    let p = side_interval(&candidate_values(plus, pair, g)?, delta.delta_plus)?;
    let m = side_interval(&candidate_values(minus, pair, g)?, delta.delta_minus)?;
    let sides = SideBounds { plus: p, minus: m };
    let e = effect_bounds(p, m);
    Ok((
        sides,
        EffectBounds {
            lower: round12(e.lower),
            upper: round12(e.upper),
            method: Method::Hm,
        },
    ))
}

/// Difference of mean transformed outcomes between students reporting local
/// preference `pair` on each side.
pub fn naive_rd(plus: &[SideObservation], minus: &[SideObservation], pair: LocalPrefPair, g: &OutcomeTransform) -> Result<f64> {
    let mean = |obs: &[SideObservation], side: &'static str| -> Result<f64> {
        let mut sw = 0.0;
        let mut sy = 0.0;
        for o in obs.iter().filter(|o| o.weight > 0.0 && o.reported == pair) {
            sw += o.weight;
            sy += o.weight * g.apply(o.outcome)?;
        }
        if sw > 0.0 {
            Ok(sy / sw)
        } else {
            Err(Error::EmptySide {
                j: pair.first,
                k: pair.second,
                side,
            })
        }
    };
    Ok(round12(mean(plus, "plus")? - mean(minus, "minus")?))
}

/// Distinct transformed outcome values across both sides, sorted.
pub fn outcome_support(
    plus: &[SideObservation],
    minus: &[SideObservation],
    g: &OutcomeTransform,
    cap: usize,
) -> Result<Vec<f64>> {
    let mut vals: Vec<f64> = Vec::new();
    for o in plus.iter().chain(minus).filter(|o| o.weight > 0.0) {
        let y = g.apply(o.outcome)?;
        if !vals.contains(&y) {
            vals.push(y);
            if vals.len() > cap {
                return Err(Error::OutcomeSupportTooLarge { found: vals.len(), cap });
            }
        }
    }
    vals.sort_by(f64::total_cmp);
    Ok(vals)
}

/// `P[g(Y) = y, Q ⊆ B]` for every support value `y` and the given `B`.
fn joint_containment(obs: &[SideObservation], g: &OutcomeTransform, support: &[f64], b: &LocalPrefSet) -> Result<Vec<f64>> {
    let total: f64 = obs.iter().filter(|o| o.weight > 0.0).map(|o| o.weight).sum();
    let mut by_value = vec![0.0; support.len()];
    for o in obs.iter().filter(|o| o.weight > 0.0 && o.qset.is_subset(b)) {
        let y = g.apply(o.outcome)?;
        let v = support.iter().position(|s| *s == y).expect("support covers observations");
        by_value[v] += o.weight;
    }
    Ok(by_value.into_iter().map(|w| (w / total).min(1.0)).collect())
}

/// Sharp effect interval for a finite outcome. Variables are the joint masses
/// of the relevant potential outcome and each true local preference; the
/// ratio objective is linearized with the Charnes-Cooper substitution.
/// `allowance` is subtracted from every observed joint frequency.
#[allow(clippy::too_many_arguments)]
pub fn sharp_bounds_finite(
    plus: &[SideObservation],
    minus: &[SideObservation],
    plus_data: &SideData,
    minus_data: &SideData,
    pair: LocalPrefPair,
    g: &OutcomeTransform,
    p_bar: f64,
    support_cap: usize,
    allowance: f64,
) -> Result<EffectBounds> {
    if !(p_bar > 0.0) {
        return Err(Error::ZeroShare);
    }
    let support = outcome_support(plus, minus, g, support_cap)?;
    let m = support.len();
    let mut atoms: Vec<LocalPrefPair> = plus_data
        .family
        .atoms()
        .into_iter()
        .chain(minus_data.family.atoms())
        .collect();
    atoms.sort_unstable();
    atoms.dedup();
    let target = atoms.binary_search(&pair).map_err(|_| Error::ZeroShare)?;
    let na = atoms.len();
    let xp = |a: usize, v: usize| a * m + v;
    let xm = |a: usize, v: usize| na * m + a * m + v;
    let resid = 2 * na * m;
    let t = resid + 1;
    let mut lp = LinearProgram::new(t + 1);

    for (a, atom) in atoms.iter().enumerate() {
        let mut row: Vec<(usize, f64)> = (0..m).map(|v| (xp(a, v), 1.0)).collect();
        row.extend((0..m).map(|v| (xm(a, v), -1.0)));
        lp.add_row(row, Cmp::Eq, 0.0);
        if atom.first == atom.second {
            for v in 0..m {
                lp.add_row(vec![(xp(a, v), 1.0), (xm(a, v), -1.0)], Cmp::Eq, 0.0);
            }
        }
    }
    let mut simplex: Vec<(usize, f64)> = (0..na).flat_map(|a| (0..m).map(move |v| (xp(a, v), 1.0))).collect();
    simplex.push((resid, 1.0));
    simplex.push((t, -1.0));
    lp.add_row(simplex, Cmp::Eq, 0.0);

    for (side, obs, data) in [(Side::Plus, plus, plus_data), (Side::Minus, minus, minus_data)] {
        // Both sides of each inequality are additive over disjoint outcome
        // sets and over disjoint groups of members, so single outcome values
        // and overlap-connected unions suffice.
        for b in data.family.closure.iter().filter(|b| data.family.is_essential(b)) {
            let probs = joint_containment(obs, g, &support, b)?;
            let members: Vec<usize> = b.iter().filter_map(|p| atoms.binary_search(p).ok()).collect();
            for (v, prob) in probs.iter().enumerate() {
                let prob = prob - allowance;
                if prob <= 0.0 {
                    continue;
                }
                let mut row: Vec<(usize, f64)> = members
                    .iter()
                    .map(|&a| (if side == Side::Plus { xp(a, v) } else { xm(a, v) }, 1.0))
                    .collect();
                row.push((t, -prob));
                lp.add_row(row, Cmp::Ge, 0.0);
            }
        }
    }
    lp.add_row((0..m).map(|v| (xp(target, v), 1.0)).collect(), Cmp::Eq, 1.0);
    lp.add_row(vec![(t, 1.0)], Cmp::Le, 1.0 / p_bar);

    let mut c = vec![0.0; t + 1];
    for (v, y) in support.iter().enumerate() {
        c[xp(target, v)] = *y;
        c[xm(target, v)] = -*y;
    }
    let solve = |r: LpResult| match r {
        LpResult::Optimal { value, .. } => Ok(round12(value)),
        LpResult::Infeasible => Err(Error::Falsified("joint outcome inequalities admit no distribution".into())),
        LpResult::Unbounded => Err(Error::Unbounded),
    };
    let lower = solve(lp.minimize(&c))?;
    let upper = solve(lp.maximize(&c))?;
    Ok(EffectBounds {
        lower,
        upper,
        method: Method::SharpLp,
    })
}
