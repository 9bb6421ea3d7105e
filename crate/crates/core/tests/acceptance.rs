//! Acceptance suite. Runs each criterion, prints one PASS/FAIL line per
//! criterion and exits non-zero when any fails.

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use rdmatch::bounds::{
    binary_bounds, candidate_values, hm_bounds, sharp_bounds_finite, trimming_bounds_continuous, EffectBounds,
    OutcomeTransform,
};
use rdmatch::economy::{
    is_partial_order, simulate, BeliefSkip, DgpConfig, OptionId, OptionSet, Preference, Ranking, ReportModel,
    ReportedList, ScoreMode, ScoreModel,
};
use rdmatch::identify::{
    build_polytope, event_interval, identify, sampling_allowance, side_data, IdentifyOptions, SideObservation,
};
use rdmatch::localpref::{LocalPrefPair, Side};
use rdmatch::mechanism::{
    audit_cutoff_characterization, audit_stability_wrt_p, extract_cutoffs, run_da, run_sd, CutoffFloor, Relation,
};
use rdmatch::oracle::PopulationModel;
use rdmatch::pipeline::{run_pipeline, write_artifacts, RunConfig, Stage};
use rdmatch::qsets::{qset_for_regime, LocalBudget, LocalPrefSet, OrderAssumption, Regime, UmasRelation};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn main() {
    let criteria: [(u8, &str, Option<Duration>, fn() -> Outcome); 9] = [
        (1, "golden serial-dictatorship example", Some(Duration::from_secs(1)), golden),
        (2, "candidate sets against brute force", Some(Duration::from_secs(30)), qset_oracle),
        (3, "stability suite", Some(Duration::from_secs(20)), stability),
        (4, "program sharpness against grids", Some(Duration::from_secs(60)), lp_sharpness),
        (5, "oracle coverage", Some(Duration::from_secs(300)), coverage),
        (6, "nesting properties", None, nesting),
        (7, "falsification", None, falsification),
        (8, "naive estimate outside bounds", None, naive_outside),
        (9, "determinism", None, determinism),
    ];
    let mut failed = 0;
    for (n, name, limit, run) in criteria {
        let t = Instant::now();
        let o = run();
        let took = t.elapsed();
        let in_time = limit.is_none_or(|l| took < l);
        let pass = o.pass && in_time;
        if !pass {
            failed += 1;
        }
        let budget = limit.map_or_else(String::new, |l| format!(" (limit {:.0?})", l));
        println!(
            "criterion {n} {}: {name}: {} [{:.2?}{budget}]",
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            took
        );
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

// 1

fn golden() -> Outcome {
    let run = match run_pipeline(&RunConfig::preset("golden-sd").unwrap()) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("pipeline error: {e}")),
    };
    let target = LocalPrefPair::of(4, 2);
    let Some(rec) = run.identify.iter().find(|r| r.pair == target && r.regime == Regime::SPO_UMAS) else {
        return outcome(false, "pair (4,2) not analysed");
    };
    let plus_only = |p: LocalPrefPair| rec.event_bounds.iter().find(|e| e.pair == p).and_then(|e| e.plus_only);
    let close = |a: Option<(f64, f64)>, lo: f64, hi: f64| a.is_some_and(|(x, y)| (x - lo).abs() < 1e-12 && (y - hi).abs() < 1e-12);
    let b42 = plus_only(target);
    let b43 = plus_only(LocalPrefPair::of(4, 3));
    let delta = rec.identification.delta.map(|d| d.delta_plus);
    let ok = close(b42, 0.1, 0.7) && close(b43, 0.3, 0.9) && delta.is_some_and(|d| (d - 1.0 / 7.0).abs() < 1e-12);
    outcome(ok, format!("P[(4,2)] {b42:?}, P[(4,3)] {b43:?}, delta+ {delta:?}"))
}

// 2

fn permutations(items: &[OptionId]) -> Vec<Vec<OptionId>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, head);
            out.push(p);
        }
    }
    out
}

/// Ordered lists of distinct schools of length `1..=cap`.
fn all_lists(num_schools: usize, cap: usize) -> Vec<Vec<OptionId>> {
    let mut out = Vec::new();
    let mut frontier: Vec<Vec<OptionId>> = vec![Vec::new()];
    for _ in 0..cap {
        let mut next = Vec::new();
        for l in &frontier {
            for s in 1..=num_schools as u16 {
                let s = OptionId(s);
                if !l.contains(&s) {
                    let mut m = l.clone();
                    m.push(s);
                    next.push(m);
                }
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

fn umas_families(num_schools: usize, rng: &mut ChaCha8Rng) -> Vec<UmasRelation> {
    let from_levels = |levels: &[u8]| {
        let mut pairs = Vec::new();
        for d in 1..=num_schools {
            for e in 1..=num_schools {
                if levels[d - 1] > levels[e - 1] {
                    pairs.push((OptionId(d as u16), OptionId(e as u16)));
                }
            }
        }
        UmasRelation::from_pairs(pairs)
    };
    let mut out = vec![UmasRelation::default(), from_levels(&(0..num_schools as u8).collect::<Vec<_>>())];
    for _ in 0..2 {
        let levels: Vec<u8> = (0..num_schools).map(|_| rng.random_range(0..3)).collect();
        out.push(from_levels(&levels));
    }
    out
}

fn closed(set: &OptionSet, umas: &UmasRelation) -> bool {
    umas.pairs().all(|(d, e)| !set.contains(*d) || set.contains(*e))
}

/// Compares candidate sets with the set of true local preferences of every
/// strict order consistent with the report, the realized assignment and, with
/// accessibility refinement, the revealed preferences over unlisted schools.
fn qset_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut jobs = Vec::new();
    for num_schools in 2..=5usize {
        let families = umas_families(num_schools, &mut rng);
        for cap in 1..=3usize.min(num_schools) {
            for j in 1..=num_schools as u16 {
                for umas in &families {
                    jobs.push((num_schools, cap, OptionId(j), umas.clone()));
                }
            }
        }
    }
    let results: Vec<(usize, usize)> = jobs
        .par_iter()
        .map(|(num_schools, cap, j, umas)| {
            let num_schools = *num_schools;
            let options: Vec<OptionId> = (0..=num_schools as u16).map(OptionId).collect();
            let prefs: Vec<Preference> = permutations(&options)
                .into_iter()
                .filter(|o| !o[0].is_outside())
                .map(|o| Preference::new(o, num_schools).unwrap())
                .collect();
            let lists: Vec<ReportedList> = all_lists(num_schools, *cap)
                .into_iter()
                .map(|l| ReportedList::new(l, num_schools, *cap).unwrap())
                .collect();
            let others: Vec<OptionId> = (1..=num_schools as u16).map(OptionId).filter(|s| s != j).collect();
            let (mut checked, mut mismatches) = (0, 0);
            for mask in 0..(1u32 << others.len()) {
                let mut minus = OptionSet::from_options(num_schools, [OptionId::OUTSIDE]);
                for (b, s) in others.iter().enumerate() {
                    if mask & (1 << b) != 0 {
                        minus.insert(*s);
                    }
                }
                let mut plus = minus.clone();
                plus.insert(*j);
                let consistent_sets = closed(&minus, umas) && closed(&plus, umas);
                for above in [true, false] {
                    let budget = LocalBudget {
                        minus: minus.clone(),
                        plus: plus.clone(),
                        above,
                    };
                    let realized = if above { &plus } else { &minus };
                    for report in &lists {
                        let mu = report.best_in(realized);
                        let mut truth: [BTreeSet<LocalPrefPair>; 4] = Default::default();
                        for q in &prefs {
                            if q.best_in(realized) != mu || !is_partial_order(report, q, *cap, false) {
                                continue;
                            }
                            let strong = is_partial_order(report, q, *cap, true);
                            let revealed = umas.pairs().all(|(d, e)| {
                                !(report.contains(*d) && !report.contains(*e)) || q.prefers(*d, *e)
                            });
                            let pair = LocalPrefPair::new(q.best_in(&plus), q.best_in(&minus));
                            for (slot, r) in Regime::ALL.iter().enumerate() {
                                let order_ok = r.order == OrderAssumption::Wpo || strong;
                                if order_ok && (!r.umas || revealed) {
                                    truth[slot].insert(pair);
                                }
                            }
                        }
                        for (slot, r) in Regime::ALL.iter().enumerate() {
                            if r.umas && !consistent_sets {
                                continue;
                            }
                            if truth[slot].is_empty() {
                                continue;
                            }
                            checked += 1;
                            let built = qset_for_regime(report, &budget, *cap, *r, umas);
                            let expected = LocalPrefSet::new(truth[slot].iter().copied());
                            if built != expected {
                                mismatches += 1;
                            }
                        }
                    }
                }
            }
            (checked, mismatches)
        })
        .collect();
    let checked: usize = results.iter().map(|r| r.0).sum();
    let mismatches: usize = results.iter().map(|r| r.1).sum();
    outcome(
        mismatches == 0 && checked > 0,
        format!("{checked} configurations, {mismatches} mismatches"),
    )
}

// 3

fn stability() -> Outcome {
    let results: Vec<Result<(usize, usize, bool), String>> = (0..100u64)
        .into_par_iter()
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let num_schools = rng.random_range(2..=20usize);
            let sd = seed % 2 == 0;
            let groups: Vec<u16> = (0..num_schools).map(|_| rng.random_range(0..3)).collect();
            let cfg = DgpConfig {
                num_schools,
                list_cap: rng.random_range(1..=num_schools),
                num_students: rng.random_range(50..=2000),
                seed,
                scores: ScoreModel {
                    mode: if sd { ScoreMode::Sd } else { ScoreMode::Da },
                    groups: (!sd).then_some(groups),
                    ..ScoreModel::default()
                },
                reports: if seed % 3 == 0 {
                    ReportModel::BeliefSkip(BeliefSkip::default())
                } else {
                    ReportModel::TruthTopK
                },
                repair_reports: false,
                ..DgpConfig::default()
            };
            let e = simulate(&cfg).map_err(|e| format!("seed {seed}: {e}"))?;
            let m = run_da(&e).map_err(|e| e.to_string())?;
            let c = extract_cutoffs(&m, &e, CutoffFloor::BelowMinimum);
            let stab = audit_stability_wrt_p(&m, &e, &c).len();
            let cut = audit_cutoff_characterization(&m, &e, &c, Relation::Reported)
                .map_err(|e| e.to_string())?
                .len();
            let same = !sd || run_sd(&e).map_err(|e| e.to_string())?.assignment() == m.assignment();
            Ok((stab, cut, same))
        })
        .collect();
    let mut errors = Vec::new();
    let (mut stab, mut cut, mut sd_diff) = (0, 0, 0);
    for r in results {
        match r {
            Ok((s, c, same)) => {
                stab += s;
                cut += c;
                sd_diff += usize::from(!same);
            }
            Err(e) => errors.push(e),
        }
    }
    outcome(
        errors.is_empty() && stab == 0 && cut == 0 && sd_diff == 0,
        format!(
            "100 economies: {stab} stability and {cut} cutoff violations, {sd_diff} SD/DA differences{}",
            if errors.is_empty() { String::new() } else { format!(", errors {errors:?}") }
        ),
    )
}

// 4

const ATOM_POOL: [(u16, u16); 5] = [(4, 2), (4, 3), (4, 1), (3, 2), (1, 1)];

struct Unit {
    atom: usize,
    plus_set: Vec<usize>,
    minus_set: Vec<usize>,
    y_plus: f64,
    y_minus: f64,
}

/// Twenty equally weighted units with a true atom each and candidate sets
/// that contain it, so every containment bound is a multiple of 0.05.
fn random_units(rng: &mut ChaCha8Rng, num_atoms: usize) -> Vec<Unit> {
    let extra = |rng: &mut ChaCha8Rng, atom: usize| {
        let mut s: Vec<usize> = (0..num_atoms).filter(|b| *b == atom || rng.random_bool(0.35)).collect();
        s.sort_unstable();
        s
    };
    (0..20)
        .map(|_| {
            let atom = rng.random_range(0..num_atoms);
            Unit {
                atom,
                plus_set: extra(rng, atom),
                minus_set: extra(rng, atom),
                y_plus: f64::from(u8::from(rng.random_bool(0.5))),
                y_minus: f64::from(u8::from(rng.random_bool(0.5))),
            }
        })
        .collect()
}

fn unit_observations(units: &[Unit], atoms: &[LocalPrefPair], side: Side) -> Vec<SideObservation> {
    units
        .iter()
        .map(|u| {
            let (set, y) = match side {
                Side::Plus => (&u.plus_set, u.y_plus),
                Side::Minus => (&u.minus_set, u.y_minus),
            };
            SideObservation {
                qset: LocalPrefSet::new(set.iter().map(|a| atoms[*a])),
                reported: atoms[u.atom],
                outcome: y,
                weight: 1.0,
            }
        })
        .collect()
}

/// All unions of the distinct candidate sets as bitmasks over atoms.
fn closure_masks(sets: impl Iterator<Item = u32>) -> Vec<u32> {
    let members: BTreeSet<u32> = sets.collect();
    let mut all: BTreeSet<u32> = members.clone();
    loop {
        let mut added = false;
        let snapshot: Vec<u32> = all.iter().copied().collect();
        for a in &snapshot {
            for m in &members {
                if all.insert(a | m) {
                    added = true;
                }
            }
        }
        if !added {
            return all.into_iter().collect();
        }
    }
}

fn mask(set: &[usize]) -> u32 {
    set.iter().fold(0, |m, a| m | (1 << a))
}

/// Containment rows in hundredths: `(B, bound)` with `P(Q ⊆ B)`.
fn event_rows(units: &[Unit], side: Side) -> Vec<(u32, u32)> {
    let sets: Vec<u32> = units
        .iter()
        .map(|u| mask(if side == Side::Plus { &u.plus_set } else { &u.minus_set }))
        .collect();
    closure_masks(sets.iter().copied())
        .into_iter()
        .map(|b| (b, 5 * sets.iter().filter(|s| *s & !b == 0).count() as u32))
        .collect()
}

fn compositions(total: u32, parts: usize) -> Vec<Vec<u32>> {
    if parts == 1 {
        return vec![vec![total]];
    }
    let mut out = Vec::new();
    for first in 0..=total {
        for mut rest in compositions(total - first, parts - 1) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

fn lp_sharpness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut events, mut event_fail, mut infeasible) = (0, 0, 0);
    let mut worst: f64 = 0.0;
    for inst in 0..120 {
        let num_atoms = 1 + inst % 4;
        let atoms: Vec<LocalPrefPair> = ATOM_POOL[..num_atoms].iter().map(|(a, b)| LocalPrefPair::of(*a, *b)).collect();
        let units = random_units(&mut rng, num_atoms);
        let plus = side_data(Side::Plus, &unit_observations(&units, &atoms, Side::Plus), 4096).unwrap();
        let minus = side_data(Side::Minus, &unit_observations(&units, &atoms, Side::Minus), 4096).unwrap();
        let poly = build_polytope(Some(&plus), Some(&minus));
        let rows: Vec<(u32, u32)> = event_rows(&units, Side::Plus)
            .into_iter()
            .chain(event_rows(&units, Side::Minus))
            .collect();
        let grid: Vec<Vec<u32>> = compositions(100, poly.atoms.len())
            .into_iter()
            .filter(|p| {
                rows.iter().all(|(b, bound)| {
                    let mass: u32 = poly
                        .atoms
                        .iter()
                        .enumerate()
                        .filter(|(_, a)| atoms.iter().position(|x| x == *a).is_some_and(|i| b & (1 << i) != 0))
                        .map(|(i, _)| p[i])
                        .sum();
                    mass >= *bound
                })
            })
            .collect();
        if grid.is_empty() {
            infeasible += 1;
            event_fail += usize::from(event_interval(&poly, &LocalPrefSet::singleton(atoms[0])).is_ok());
            continue;
        }
        for (i, a) in poly.atoms.iter().enumerate() {
            let Ok((lo, hi)) = event_interval(&poly, &LocalPrefSet::singleton(*a)) else {
                event_fail += 1;
                continue;
            };
            let gl = grid.iter().map(|p| p[i]).min().unwrap() as f64 / 100.0;
            let gh = grid.iter().map(|p| p[i]).max().unwrap() as f64 / 100.0;
            events += 1;
            let err = (lo - gl).abs().max((hi - gh).abs());
            worst = worst.max(err);
            event_fail += usize::from(err > 0.01);
        }
    }

    // Two atoms with a binary outcome: the effect for the first atom.
    let (mut ates, mut ate_fail) = (0, 0);
    let mut worst_ate: f64 = 0.0;
    let atoms = [LocalPrefPair::of(4, 2), LocalPrefPair::of(4, 3)];
    for _ in 0..60 {
        let units = random_units(&mut rng, 2);
        let pobs = unit_observations(&units, &atoms, Side::Plus);
        let mobs = unit_observations(&units, &atoms, Side::Minus);
        let pd = side_data(Side::Plus, &pobs, 4096).unwrap();
        let md = side_data(Side::Minus, &mobs, 4096).unwrap();
        let poly = build_polytope(Some(&pd), Some(&md));
        let Ok((p_bar, _)) = event_interval(&poly, &LocalPrefSet::singleton(atoms[0])) else {
            continue;
        };
        if p_bar <= 0.0 {
            continue;
        }
        let lp = match sharp_bounds_finite(&pobs, &mobs, &pd, &md, atoms[0], &OutcomeTransform::Identity, p_bar, 8, 0.0) {
            Ok(b) => b,
            Err(_) => {
                ate_fail += 1;
                continue;
            }
        };
        let Some((gl, gh)) = grid_ate(&units) else {
            ate_fail += 1;
            continue;
        };
        ates += 1;
        let err = (lp.lower - gl).abs().max((lp.upper - gh).abs());
        worst_ate = worst_ate.max(err);
        ate_fail += usize::from(err > 0.01);
    }
    outcome(
        event_fail == 0 && ate_fail == 0 && events > 0 && ates > 0,
        format!(
            "{events} event intervals (max gap {worst:.2e}, {infeasible} empty instances agree), \
             {ates} effect intervals (max gap {worst_ate:.2e}), {} failures",
            event_fail + ate_fail
        ),
    )
}

/// Enumerates joint masses on a 0.01 grid. `p` is the share of the first
/// atom; `u` and `w` are the masses with outcome one on each side.
fn grid_ate(units: &[Unit]) -> Option<(f64, f64)> {
    let joint_rows = |side: Side| -> Vec<(u32, [u32; 2])> {
        let data: Vec<(u32, usize)> = units
            .iter()
            .map(|u| match side {
                Side::Plus => (mask(&u.plus_set), u.y_plus as usize),
                Side::Minus => (mask(&u.minus_set), u.y_minus as usize),
            })
            .collect();
        closure_masks(data.iter().map(|d| d.0))
            .into_iter()
            .map(|b| {
                let mut by_y = [0u32; 2];
                for (s, y) in &data {
                    if s & !b == 0 {
                        by_y[*y] += 5;
                    }
                }
                (b, by_y)
            })
            .collect()
    };
    let rows = [joint_rows(Side::Plus), joint_rows(Side::Minus)];
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for p0 in 1..=100u32 {
        let p = [p0, 100 - p0];
        // Feasible masses with outcome one for the first atom, per side.
        let mut range = [(u32::MAX, 0u32); 2];
        for (s, side_rows) in rows.iter().enumerate() {
            for u0 in 0..=p[0] {
                for u1 in 0..=p[1] {
                    let ones = [u0, u1];
                    let ok = side_rows.iter().all(|(b, by_y)| {
                        let sum = |f: &dyn Fn(usize) -> u32| (0..2).filter(|a| b & (1 << a) != 0).map(f).sum::<u32>();
                        sum(&|a| p[a] - ones[a]) >= by_y[0] && sum(&|a| ones[a]) >= by_y[1]
                    });
                    if ok {
                        range[s].0 = range[s].0.min(u0);
                        range[s].1 = range[s].1.max(u0);
                    }
                }
            }
        }
        if range.iter().any(|r| r.0 == u32::MAX) {
            continue;
        }
        let pf = f64::from(p0);
        lo = lo.min((f64::from(range[0].0) - f64::from(range[1].1)) / pf);
        hi = hi.max((f64::from(range[0].1) - f64::from(range[1].0)) / pf);
    }
    lo.is_finite().then_some((lo, hi))
}

// 5 and 6

struct PopulationCase {
    ate: f64,
    regime: Regime,
    hm: EffectBounds,
    sharp: EffectBounds,
}

fn population_bounds(model: &PopulationModel, regime: Regime) -> Result<PopulationCase, String> {
    let plus = model.observations(Side::Plus, regime);
    let minus = model.observations(Side::Minus, regime);
    let id = identify(model.pair, &plus, &minus, model.num_schools, &IdentifyOptions::default())
        .map_err(|e| e.to_string())?;
    let delta = id.delta.ok_or("empty polytope")?;
    let g = OutcomeTransform::Identity;
    let (_, hm) = hm_bounds(&plus, &minus, model.pair, &g, &delta).map_err(|e| e.to_string())?;
    let sharp = sharp_bounds_finite(&plus, &minus, &id.plus, &id.minus, model.pair, &g, delta.p_bar, 8, 0.0)
        .map_err(|e| e.to_string())?;
    Ok(PopulationCase {
        ate: model.true_ate(),
        regime,
        hm,
        sharp,
    })
}

fn models() -> Vec<PopulationModel> {
    (0..200u64).map(|s| PopulationModel::random(s, s % 2 == 0)).collect()
}

fn coverage() -> Outcome {
    let models = models();
    let exact: Vec<Result<Vec<PopulationCase>, String>> = models
        .par_iter()
        .map(|m| m.valid_regimes().into_iter().map(|r| population_bounds(m, r)).collect())
        .collect();
    let (mut cases, mut misses, mut errors) = (0, 0, 0);
    for r in &exact {
        match r {
            Ok(v) => {
                for c in v {
                    cases += 1;
                    misses += usize::from(!(c.hm.contains(c.ate, 1e-9) && c.sharp.contains(c.ate, 1e-9)));
                }
            }
            Err(_) => errors += 1,
        }
    }
    let sampled: Vec<(usize, usize)> = models
        .par_iter()
        .enumerate()
        .map(|(i, m)| {
            let draws = m.sample(20_000, 7_000 + i as u64);
            let (mut n, mut hit) = (0, 0);
            for r in m.valid_regimes() {
                n += 1;
                let (plus, minus) = m.sample_observations(&draws, r);
                let opts = IdentifyOptions {
                    noise_allowance: sampling_allowance(plus.len(), minus.len(), 3.0),
                    ..IdentifyOptions::default()
                };
                let Ok(id) = identify(m.pair, &plus, &minus, m.num_schools, &opts) else { continue };
                let Some(delta) = id.delta.filter(|d| d.p_bar > 0.0) else { continue };
                let g = OutcomeTransform::Identity;
                let ate = m.true_ate();
                let hm = hm_bounds(&plus, &minus, m.pair, &g, &delta).map(|b| b.1);
                let sharp = sharp_bounds_finite(
                    &plus,
                    &minus,
                    &id.plus,
                    &id.minus,
                    m.pair,
                    &g,
                    delta.p_bar,
                    8,
                    opts.noise_allowance,
                );
                if let (Ok(h), Ok(s)) = (hm, sharp) {
                    hit += usize::from(h.contains(ate, 1e-9) && s.contains(ate, 1e-9));
                }
            }
            (n, hit)
        })
        .collect();
    let n: usize = sampled.iter().map(|s| s.0).sum();
    let hit: usize = sampled.iter().map(|s| s.1).sum();
    let rate = hit as f64 / n as f64;
    outcome(
        misses == 0 && errors == 0 && cases > 0 && rate >= 0.95,
        format!(
            "exact: {cases} cases, {misses} misses, {errors} errors; n = 20000: {hit}/{n} covered ({:.1}%)",
            100.0 * rate
        ),
    )
}

fn nested(inner: &EffectBounds, outer: &EffectBounds) -> bool {
    inner.is_within(outer, 1e-9)
}

fn nesting() -> Outcome {
    let models = models();
    let per_model: Vec<(usize, usize, usize, usize)> = models
        .par_iter()
        .map(|m| {
            let cases: Vec<PopulationCase> =
                m.valid_regimes().into_iter().filter_map(|r| population_bounds(m, r).ok()).collect();
            let (mut checks, mut sharp_fail, mut regime_fail, mut sweep_fail) = (0, 0, 0, 0);
            for c in &cases {
                checks += 1;
                sharp_fail += usize::from(!nested(&c.sharp, &c.hm));
            }
            let get = |r: Regime| cases.iter().find(|c| c.regime == r);
            for (inner, outer) in [
                (Regime::SPO_UMAS, Regime::SPO),
                (Regime::SPO, Regime::WPO),
                (Regime::WPO_UMAS, Regime::WPO),
                (Regime::SPO_UMAS, Regime::WPO_UMAS),
            ] {
                if let (Some(i), Some(o)) = (get(inner), get(outer)) {
                    checks += 1;
                    regime_fail += usize::from(!(nested(&i.hm, &o.hm) && nested(&i.sharp, &o.sharp)));
                }
            }
            for r in m.valid_regimes() {
                for side in [Side::Plus, Side::Minus] {
                    let obs = m.observations(side, r);
                    let Ok(values) = candidate_values(&obs, m.pair, &OutcomeTransform::Identity) else { continue };
                    if values.is_empty() {
                        continue;
                    }
                    let mut prev: Option<((f64, f64), (f64, f64))> = None;
                    for step in 1..=20 {
                        let d = f64::from(step) * 0.05;
                        let (Ok(t), Ok(b)) = (trimming_bounds_continuous(&values, d), binary_bounds(&values, d)) else {
                            continue;
                        };
                        checks += 1;
                        if let Some((pt, pb)) = prev {
                            let inside = |a: (f64, f64), o: (f64, f64)| a.0 >= o.0 - 1e-12 && a.1 <= o.1 + 1e-12;
                            sweep_fail += usize::from(!(inside(t, pt) && inside(b, pb)));
                        }
                        prev = Some((t, b));
                    }
                }
            }
            (checks, sharp_fail, regime_fail, sweep_fail)
        })
        .collect();
    let sum = |f: fn(&(usize, usize, usize, usize)) -> usize| per_model.iter().map(f).sum::<usize>();
    let (checks, s, r, w) = (sum(|x| x.0), sum(|x| x.1), sum(|x| x.2), sum(|x| x.3));
    let golden = run_pipeline(&RunConfig::preset("golden-sd").unwrap()).unwrap();
    let mut golden_fail = 0;
    for b in golden.bounds.iter().filter(|b| b.method == "sharp_lp" && b.lower.is_some()) {
        let hm = golden
            .bounds
            .iter()
            .find(|h| h.method == "hm" && h.pair == b.pair && h.regime == b.regime && h.outcome == b.outcome)
            .unwrap();
        golden_fail += usize::from(b.lower.unwrap() < hm.lower.unwrap() - 1e-9 || b.upper.unwrap() > hm.upper.unwrap() + 1e-9);
    }
    outcome(
        s + r + w + golden_fail == 0 && checks > 0,
        format!(
            "{checks} checks: sharp outside trimming {}, regime order {r}, sweep {w}",
            s + golden_fail
        ),
    )
}

// 7

fn falsification() -> Outcome {
    let models = models();
    let worst = models
        .par_iter()
        .flat_map_iter(|m| {
            m.valid_regimes().into_iter().filter_map(move |r| {
                let plus = m.observations(Side::Plus, r);
                let minus = m.observations(Side::Minus, r);
                identify(m.pair, &plus, &minus, m.num_schools, &IdentifyOptions::default())
                    .ok()
                    .map(|id| id.falsification.iter().map(|f| f.statistic).fold(0.0, f64::max))
            })
        })
        .reduce(|| 0.0, f64::max);
    let rigged = match run_pipeline(&RunConfig::preset("rigged").unwrap()) {
        Ok(run) => run,
        Err(e) => return outcome(false, format!("rigged run crashed: {e}")),
    };
    let rejected = rigged.identify.iter().filter(|r| {
        r.identification.pair_interval.is_none() || r.identification.falsification.iter().any(|f| f.statistic > 1.0)
    });
    let max_rigged = rigged
        .identify
        .iter()
        .flat_map(|r| r.identification.falsification.iter().map(|f| f.statistic))
        .fold(0.0, f64::max);
    let n_rejected = rejected.count();
    outcome(
        worst <= 1.0 + 1e-9 && n_rejected > 0 && rigged.falsified(),
        format!(
            "consistent max statistic {worst:.12}; rigged: {n_rejected} pairs rejected, max statistic {max_rigged:.4}, flagged {}",
            rigged.falsified()
        ),
    )
}

// 8

fn naive_outside() -> Outcome {
    let mut cfg = RunConfig::preset("strategic").unwrap();
    cfg.regimes = vec![Regime::SPO_UMAS];
    let run = match run_pipeline(&cfg) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("pipeline error: {e}")),
    };
    let outside: Vec<String> = run
        .bounds
        .iter()
        .filter(|b| b.method == "hm" && b.naive_outside_bounds == Some(true))
        .map(|b| {
            format!(
                "({},{}) naive {:.3} vs [{:.3}, {:.3}]",
                b.pair.first,
                b.pair.second,
                b.naive_point.unwrap(),
                b.lower.unwrap(),
                b.upper.unwrap()
            )
        })
        .collect();
    let bounded = run.bounds.iter().filter(|b| b.method == "hm" && b.lower.is_some()).count();
    outcome(
        !outside.is_empty(),
        format!("{} of {bounded} bounded pairs: {}", outside.len(), outside.join("; ")),
    )
}

// 9

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut digests = Vec::new();
    for (k, threads) in [(0, 1usize), (1, 4)] {
        let mut cfg = RunConfig::preset("truthful").unwrap();
        cfg.threads = threads;
        let out = dir.path().join(format!("run{k}"));
        let mut run = match run_pipeline(&cfg) {
            Ok(r) => r,
            Err(e) => return outcome(false, format!("pipeline error: {e}")),
        };
        if let Err(e) = write_artifacts(&out, &mut run, Stage::Bounds) {
            return outcome(false, format!("write error: {e}"));
        }
        let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(&out)
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.file_name().unwrap() != "timings.json")
            .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
            .collect();
        files.sort();
        digests.push(files);
    }
    let same = digests[0] == digests[1];
    let names: Vec<&str> = digests[0].iter().map(|f| f.0.as_str()).collect();
    outcome(same, format!("{} artifacts compared ({})", names.len(), names.join(", ")))
}
