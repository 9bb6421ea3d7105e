//! Student-proposing deferred acceptance, serial dictatorship, cutoffs and
//! stability audits.
//!
//! Schools rank students by their placement score for that school. Exact
//! score ties (absent from generated data) are broken toward the lower
//! student index.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::economy::{schools, Economy, OptionId, OptionSet, Ranking};
use crate::error::{Error, Result};
use crate::localpref::budget_set;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Matching {
    assignment: Vec<OptionId>,
    fill: Vec<u32>,
}

impl Matching {
    /// Builds a matching from an explicit assignment (e.g. supplied data).
    pub fn from_assignment(assignment: Vec<OptionId>, num_schools: usize) -> Self {
        let mut fill = vec![0; num_schools];
        for a in &assignment {
            if a.is_school() {
                fill[a.school_index()] += 1;
            }
        }
        Matching { assignment, fill }
    }

    pub fn assigned(&self, student: usize) -> OptionId {
        self.assignment[student]
    }

    pub fn assignment(&self) -> &[OptionId] {
        &self.assignment
    }

    pub fn fill(&self, school: OptionId) -> u32 {
        self.fill[school.school_index()]
    }
}

/// Cutoff used for schools that do not fill.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
pub enum CutoffFloor {
    /// The smallest score in the economy minus one.
    #[default]
    BelowMinimum,
    Fixed(f64),
}

impl CutoffFloor {
    pub fn value(self, economy: &Economy) -> f64 {
        match self {
            CutoffFloor::Fixed(x) => x,
            CutoffFloor::BelowMinimum => {
                let min = economy
                    .students
                    .iter()
                    .flat_map(|s| s.scores.0.iter().copied())
                    .fold(f64::INFINITY, f64::min);
                if min.is_finite() {
                    min - 1.0
                } else {
                    -1.0
                }
            }
        }
    }
}

/// Admission cutoff per school. `binding[j]` is true when school `j` is full
/// with at least one admitted student, so its cutoff is an admitted score.
/// Zero-capacity schools get `+inf`.
#[derive(Clone, Debug, PartialEq)]
pub struct CutoffProfile {
    values: Vec<f64>,
    binding: Vec<bool>,
}

impl CutoffProfile {
    pub fn new(values: Vec<f64>, binding: Vec<bool>) -> Self {
        assert_eq!(values.len(), binding.len());
        CutoffProfile { values, binding }
    }

    /// Cutoffs supplied without matching information; finite values are
    /// treated as binding.
    pub fn from_values(values: Vec<f64>) -> Self {
        let binding = values.iter().map(|v| v.is_finite()).collect();
        CutoffProfile { values, binding }
    }

    pub fn get(&self, school: OptionId) -> f64 {
        self.values[school.school_index()]
    }

    pub fn is_binding(&self, school: OptionId) -> bool {
        self.binding[school.school_index()]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Stable digest of the exact cutoff bits.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Sha256::new();
        for (v, b) in self.values.iter().zip(&self.binding) {
            h.update(v.to_bits().to_le_bytes());
            h.update([u8::from(*b)]);
        }
        let d = h.finalize();
        u64::from_le_bytes(d[..8].try_into().unwrap())
    }
}

#[derive(Clone, Copy, PartialEq, Debug)]
struct Priority {
    score: f64,
    student: usize,
}

impl Eq for Priority {}

impl Ord for Priority {
    /// Higher score wins; on equal scores the lower index wins.
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then(other.student.cmp(&self.student))
    }
}

impl PartialOrd for Priority {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn priority(economy: &Economy, student: usize, school: OptionId) -> Priority {
    Priority {
        score: economy.students[student].scores.get(school),
        student,
    }
}

/// Student-proposing deferred acceptance on reported lists.
pub fn run_da(economy: &Economy) -> Result<Matching> {
    let n = economy.students.len();
    let j = economy.num_schools;
    let mut next = vec![0usize; n];
    let mut held: Vec<BinaryHeap<std::cmp::Reverse<Priority>>> = vec![BinaryHeap::new(); j];
    let mut queue: VecDeque<usize> = (0..n).collect();
    while let Some(i) = queue.pop_front() {
        let list = economy.students[i].report.schools();
        let Some(&school) = list.get(next[i]) else { continue };
        next[i] += 1;
        if school.is_outside() || school.index() > j {
            return Err(Error::Validation(format!(
                "student {} lists invalid school {school}",
                economy.students[i].id
            )));
        }
        let s = school.school_index();
        let cap = economy.capacities[s] as usize;
        if cap == 0 {
            queue.push_back(i);
            continue;
        }
        let p = priority(economy, i, school);
        if held[s].len() < cap {
            held[s].push(std::cmp::Reverse(p));
        } else {
            let weakest = held[s].peek().unwrap().0;
            if p > weakest {
                held[s].pop();
                held[s].push(std::cmp::Reverse(p));
                queue.push_back(weakest.student);
            } else {
                queue.push_back(i);
            }
        }
    }
    let mut assignment = vec![OptionId::OUTSIDE; n];
    for (s, heap) in held.iter().enumerate() {
        for p in heap {
            assignment[p.0.student] = OptionId::school(s + 1);
        }
    }
    Ok(Matching::from_assignment(assignment, j))
}

/// Serial dictatorship: one descending-score sweep. Requires every student's
/// score columns to be identical.
pub fn run_sd(economy: &Economy) -> Result<Matching> {
    for s in &economy.students {
        if s.scores.0.iter().any(|x| x.to_bits() != s.scores.0[0].to_bits()) {
            return Err(Error::ScoreColumnsDiffer { student: s.id });
        }
    }
    let n = economy.students.len();
    let mut order: Vec<usize> = (0..n).collect();
    let first = OptionId::school(1);
    order.sort_by(|&a, &b| priority(economy, b, first).cmp(&priority(economy, a, first)));
    let mut remaining = economy.capacities.clone();
    let mut assignment = vec![OptionId::OUTSIDE; n];
    for i in order {
        for &school in economy.students[i].report.schools() {
            let r = &mut remaining[school.school_index()];
            if *r > 0 {
                *r -= 1;
                assignment[i] = school;
                break;
            }
        }
    }
    Ok(Matching::from_assignment(assignment, economy.num_schools))
}

/// Per-school cutoffs: minimum admitted score for full schools, the floor for
/// schools with a vacant seat, `+inf` for zero-capacity schools.
pub fn extract_cutoffs(matching: &Matching, economy: &Economy, floor: CutoffFloor) -> CutoffProfile {
    let floor_value = floor.value(economy);
    let mut min_admitted = vec![f64::INFINITY; economy.num_schools];
    for (i, a) in matching.assignment.iter().enumerate() {
        if a.is_school() {
            let s = a.school_index();
            min_admitted[s] = min_admitted[s].min(economy.students[i].scores.get(*a));
        }
    }
    let mut values = Vec::with_capacity(economy.num_schools);
    let mut binding = Vec::with_capacity(economy.num_schools);
    for school in schools(economy.num_schools) {
        let s = school.school_index();
        let cap = economy.capacities[s];
        if cap == 0 {
            values.push(f64::INFINITY);
            binding.push(false);
        } else if matching.fill(school) < cap {
            values.push(floor_value);
            binding.push(false);
        } else {
            values.push(min_admitted[s]);
            binding.push(true);
        }
    }
    CutoffProfile { values, binding }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    OverCapacity { school: OptionId },
    /// Matched to a school not on the reported list.
    NotIndividuallyRational { student: u32, school: OptionId },
    /// Prefers a school that has a vacant seat.
    Waste { student: u32, school: OptionId },
    /// Prefers a school that admitted someone with lower priority.
    JustifiedEnvy { student: u32, school: OptionId },
    /// Matched option differs from the best feasible option.
    NotBestFeasible { student: u32, assigned: OptionId, best: OptionId },
}

/// Checks individual rationality, no waste and no justified envy with respect
/// to reported lists, using each school's lowest admitted priority.
pub fn audit_stability_wrt_p(matching: &Matching, economy: &Economy, _cutoffs: &CutoffProfile) -> Vec<Violation> {
    let j = economy.num_schools;
    let mut out = Vec::new();
    let mut weakest: Vec<Option<Priority>> = vec![None; j];
    for (i, a) in matching.assignment.iter().enumerate() {
        if a.is_school() {
            let p = priority(economy, i, *a);
            let w = &mut weakest[a.school_index()];
            if w.is_none_or(|cur| p < cur) {
                *w = Some(p);
            }
        }
    }
    for school in schools(j) {
        if matching.fill(school) > economy.capacities[school.school_index()] {
            out.push(Violation::OverCapacity { school });
        }
    }
    for (i, s) in economy.students.iter().enumerate() {
        let mu = matching.assigned(i);
        if mu.is_school() && !s.report.contains(mu) {
            out.push(Violation::NotIndividuallyRational { student: s.id, school: mu });
        }
        for &d in s.report.schools() {
            if !s.report.prefers(d, mu) {
                continue;
            }
            let idx = d.school_index();
            if matching.fill(d) < economy.capacities[idx] {
                out.push(Violation::Waste { student: s.id, school: d });
            } else if let Some(w) = weakest[idx] {
                if priority(economy, i, d) > w {
                    out.push(Violation::JustifiedEnvy { student: s.id, school: d });
                }
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Relation {
    /// Reported lists.
    Reported,
    /// True preferences.
    True,
}

/// Compares each student's matched option with the best option in their
/// budget set under the chosen relation.
pub fn audit_cutoff_characterization(
    matching: &Matching,
    economy: &Economy,
    cutoffs: &CutoffProfile,
    wrt: Relation,
) -> Result<Vec<Violation>> {
    let mut out = Vec::new();
    for (i, s) in economy.students.iter().enumerate() {
        let budget: OptionSet = budget_set(&s.scores, cutoffs);
        let best = match wrt {
            Relation::Reported => s.report.best_in(&budget),
            Relation::True => s
                .preference
                .as_ref()
                .ok_or_else(|| Error::Validation("true preferences unavailable".into()))?
                .best_in(&budget),
        };
        let mu = matching.assigned(i);
        if best != mu {
            out.push(Violation::NotBestFeasible {
                student: s.id,
                assigned: mu,
                best,
            });
        }
    }
    Ok(out)
}
