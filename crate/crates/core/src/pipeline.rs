//! End-to-end runs: load or simulate an economy, match, find comparable
//! pairs, build candidate sets, identify, bound, and write artifacts.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bounds::{hm_bounds, naive_rd, sharp_bounds_finite, OutcomeTransform, DEFAULT_SUPPORT_CAP};
use crate::economy::{simulate, DgpConfig, Economy};
use crate::error::{Error, Result};
use crate::identify::{
    build_polytope, event_interval, identify, sampling_allowance, side_data, IdentifyOptions, Identification,
    SideObservation, DEFAULT_CLOSURE_CAP,
};
use crate::io::{
    assignment_mismatches, read_assignments, read_cutoffs, read_economy, write_assignments, write_cutoffs,
    EconomyFiles,
};
use crate::localpref::{
    find_comparable_pairs, local_pair_from_sets, select_local_sample, BandwidthConfig, ComparablePairs, LocalPrefPair,
    LocalSample,
};
use crate::mechanism::{extract_cutoffs, run_da, CutoffFloor, CutoffProfile, Matching};
use crate::oracle::oracle_truth;
use crate::presets;
use crate::qsets::{detect_umas, qset_for_regime, LocalBudget, LocalPrefSet, Regime, UmasRelation};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Where the economy comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Source {
    /// A packaged economy or generator setting by name.
    Preset { name: String },
    /// Generator settings given inline.
    Dgp { config: DgpConfig },
    /// CSV files; cutoffs and assignments are recomputed when absent.
    Files {
        dir: PathBuf,
        list_cap: usize,
        cutoffs: Option<PathBuf>,
        assignments: Option<PathBuf>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeSpec {
    pub name: String,
    pub transform: OutcomeTransform,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FalsificationMode {
    /// Falsification anywhere makes the run exit with code 3.
    #[default]
    Fail,
    Warn,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub source: Source,
    /// Overrides the generator seed.
    pub seed: Option<u64>,
    pub bandwidth: BandwidthConfig,
    pub min_local_n: usize,
    pub regimes: Vec<Regime>,
    pub outcomes: Vec<OutcomeSpec>,
    /// Minimum number of students separating two access sets for a UMAS pair.
    pub umas_min_mass: usize,
    pub closure_cap: usize,
    pub support_cap: usize,
    pub tolerance: f64,
    /// Fixed slack added to every containment bound.
    pub noise_allowance: f64,
    /// Extra slack of `noise_z` worst-case standard errors of a side
    /// frequency, computed per pair from the smaller side.
    pub noise_z: f64,
    pub falsification: FalsificationMode,
    /// Worker threads; 0 uses all cores.
    pub threads: usize,
    pub output: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            source: Source::Preset {
                name: "golden-sd".into(),
            },
            seed: None,
            bandwidth: BandwidthConfig::default(),
            min_local_n: 50,
            regimes: Regime::ALL.to_vec(),
            outcomes: vec![OutcomeSpec {
                name: "y".into(),
                transform: OutcomeTransform::Identity,
            }],
            umas_min_mass: 1,
            closure_cap: DEFAULT_CLOSURE_CAP,
            support_cap: DEFAULT_SUPPORT_CAP,
            tolerance: 1e-9,
            noise_allowance: 0.0,
            noise_z: 0.0,
            falsification: FalsificationMode::Fail,
            threads: 0,
            output: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: RunConfig = toml::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut c: RunConfig = toml::from_str(&std::fs::read_to_string(path)?)?;
        // Relative paths in a config file are relative to the file.
        if let Source::Files {
            dir,
            cutoffs,
            assignments,
            ..
        } = &mut c.source
        {
            let base = path.parent().unwrap_or(Path::new("."));
            let fix = |p: &mut PathBuf| {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            };
            fix(dir);
            cutoffs.as_mut().map(fix);
            assignments.as_mut().map(fix);
        }
        c.validate()?;
        Ok(c)
    }

    /// A packaged configuration for a preset, tuned for its size.
    pub fn preset(name: &str) -> Result<Self> {
        let mut c = RunConfig {
            source: Source::Preset { name: name.into() },
            ..RunConfig::default()
        };
        match name {
            "golden-sd" => c.regimes = vec![Regime::SPO_UMAS],
            "rigged" => c.regimes = vec![Regime::WPO],
            "strategic" | "truthful" => c.noise_z = 3.0,
            _ => return Err(Error::Config(format!("unknown preset `{name}`"))),
        }
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.regimes.is_empty() {
            return Err(Error::Config("regimes must not be empty".into()));
        }
        if self.outcomes.is_empty() {
            return Err(Error::Config("outcomes must not be empty".into()));
        }
        if !self.bandwidth.is_valid() {
            return Err(Error::Config("bandwidths must be positive and finite".into()));
        }
        if !(self.noise_allowance >= 0.0) || !(self.noise_z >= 0.0) || !(self.tolerance >= 0.0) {
            return Err(Error::Config("tolerance and noise settings must be nonnegative".into()));
        }
        let mut names = BTreeSet::new();
        for o in &self.outcomes {
            o.transform.validate()?;
            if !names.insert(&o.name) {
                return Err(Error::Config(format!("duplicate outcome name `{}`", o.name)));
            }
        }
        if let Source::Files { dir, list_cap, .. } = &self.source {
            if *list_cap == 0 {
                return Err(Error::Config("list_cap must be at least 1".into()));
            }
            if !dir.is_dir() {
                return Err(Error::Config(format!("input directory {} does not exist", dir.display())));
            }
        }
        if let Source::Preset { name } = &self.source {
            if !presets::NAMES.contains(&name.as_str()) {
                return Err(Error::Config(format!("unknown preset `{name}`")));
            }
        }
        Ok(())
    }

    fn dgp(&self) -> Result<Option<DgpConfig>> {
        let mut cfg = match &self.source {
            Source::Preset { name } if name == "golden-sd" => return Ok(None),
            Source::Preset { name } => presets::dgp_preset(name)?,
            Source::Dgp { config } => config.clone(),
            Source::Files { .. } => return Ok(None),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(Some(cfg))
    }
}

/// Economy with its matching and cutoffs.
#[derive(Clone, Debug)]
pub struct Market {
    pub economy: Economy,
    pub matching: Matching,
    pub cutoffs: CutoffProfile,
    /// Checksums of input files, or of the generator settings.
    pub inputs: Vec<(String, String)>,
    pub warnings: Vec<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Loads or simulates the economy and computes matching and cutoffs.
pub fn load_market(config: &RunConfig) -> Result<Market> {
    config.validate()?;
    if let Some(dgp) = config.dgp()? {
        let economy = simulate(&dgp)?;
        let matching = run_da(&economy)?;
        let cutoffs = extract_cutoffs(&matching, &economy, dgp.floor());
        let echo = serde_json::to_vec(&dgp)?;
        return Ok(Market {
            economy,
            matching,
            cutoffs,
            inputs: vec![("dgp".into(), sha256_hex(&echo))],
            warnings: Vec::new(),
        });
    }
    match &config.source {
        Source::Files {
            dir,
            list_cap,
            cutoffs,
            assignments,
        } => {
            let files = EconomyFiles::in_dir(dir);
            let mut inputs = Vec::new();
            for p in files.paths().into_iter().chain(cutoffs.as_deref()).chain(assignments.as_deref()) {
                let name = p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned());
                inputs.push((name, sha256_hex(&std::fs::read(p)?)));
            }
            let economy = read_economy(&files, *list_cap)?;
            let computed = run_da(&economy)?;
            let mut warnings = Vec::new();
            let matching = match assignments {
                Some(p) => {
                    let supplied = read_assignments(p, &economy)?;
                    let bad = assignment_mismatches(&economy, &supplied, &computed);
                    if !bad.is_empty() {
                        let shown: Vec<String> = bad.iter().take(20).map(u32::to_string).collect();
                        warnings.push(format!(
                            "{} supplied assignments differ from deferred acceptance: ids {}{}",
                            bad.len(),
                            shown.join(","),
                            if bad.len() > 20 { ",..." } else { "" }
                        ));
                    }
                    supplied
                }
                None => computed,
            };
            let cutoffs = match cutoffs {
                Some(p) => read_cutoffs(p, economy.num_schools)?,
                None => extract_cutoffs(&matching, &economy, CutoffFloor::BelowMinimum),
            };
            Ok(Market {
                economy,
                matching,
                cutoffs,
                inputs,
                warnings,
            })
        }
        _ => {
            let economy = presets::golden_sd_economy();
            let matching = run_da(&economy)?;
            let cutoffs = extract_cutoffs(&matching, &economy, CutoffFloor::BelowMinimum);
            Ok(Market {
                economy,
                matching,
                cutoffs,
                inputs: vec![("preset".into(), sha256_hex(b"golden-sd"))],
                warnings: Vec::new(),
            })
        }
    }
}

/// Candidate-set observations on both sides of the cutoff for one regime.
pub fn local_observations(
    market: &Market,
    sample: &LocalSample,
    regime: Regime,
    umas: &UmasRelation,
) -> Result<(Vec<SideObservation>, Vec<SideObservation>)> {
    let e = &market.economy;
    let j = sample.pair.first;
    let build = |idx: &[usize]| -> Result<Vec<SideObservation>> {
        idx.iter()
            .map(|&i| {
                let s = &e.students[i];
                let budget = LocalBudget::at(&s.scores, &market.cutoffs, j, &e.score_groups);
                let outcome = e
                    .observed_outcome(i, market.matching.assigned(i))
                    .ok_or_else(|| Error::Validation(format!("no outcome for student {}", s.id)))?;
                Ok(SideObservation {
                    qset: qset_for_regime(&s.report, &budget, e.list_cap, regime, umas),
                    reported: local_pair_from_sets(&s.report, &budget.minus, &budget.plus),
                    outcome,
                    weight: 1.0,
                })
            })
            .collect()
    };
    Ok((build(&sample.plus)?, build(&sample.minus)?))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Falsified,
    SkippedEmptySide,
    /// The lower bound on the pair's share is zero.
    SkippedZeroShare,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EventBounds {
    pub pair: LocalPrefPair,
    pub both: Option<(f64, f64)>,
    pub plus_only: Option<(f64, f64)>,
    pub minus_only: Option<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IdentifyRecord {
    pub pair: LocalPrefPair,
    pub regime: Regime,
    pub n_plus: usize,
    pub n_minus: usize,
    pub allowance: f64,
    /// Distinct candidate sets per side at half the bandwidth.
    pub half_bandwidth_support: (usize, usize),
    pub event_bounds: Vec<EventBounds>,
    pub identification: Identification,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundsRecord {
    pub pair: LocalPrefPair,
    pub regime: Regime,
    pub outcome: String,
    pub method: String,
    pub status: Status,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub p_bar: Option<f64>,
    pub delta_bar_plus: Option<f64>,
    pub delta_bar_minus: Option<f64>,
    pub n_plus: usize,
    pub n_minus: usize,
    pub sign_identified: Option<bool>,
    pub naive_point: Option<f64>,
    pub naive_outside_bounds: Option<bool>,
    /// Ground-truth effect when the economy carries it.
    pub oracle_ate: Option<f64>,
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StatusEntry {
    pub pair: LocalPrefPair,
    pub regime: Regime,
    pub outcome: String,
    pub status: Status,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunManifest {
    pub version: String,
    /// The effective configuration with thread count and output directory
    /// reset, so that reruns elsewhere or on other machines match.
    pub config: RunConfig,
    pub inputs: Vec<(String, String)>,
    pub warnings: Vec<String>,
    pub num_students: usize,
    pub cutoffs: Vec<f64>,
    pub umas: Vec<(u16, u16)>,
    pub comparable_pairs: usize,
    pub statuses: Vec<StatusEntry>,
    pub falsified: bool,
    /// Checksums of the written artifacts, filled in by [`write_artifacts`].
    pub artifacts: Vec<(String, String)>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Timings {
    pub load_seconds: f64,
    pub pairs_seconds: f64,
    pub analysis_seconds: f64,
    pub per_pair_seconds: Vec<(LocalPrefPair, f64)>,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub market: Market,
    pub umas: UmasRelation,
    pub pairs: ComparablePairs,
    pub identify: Vec<IdentifyRecord>,
    pub bounds: Vec<BoundsRecord>,
    pub manifest: RunManifest,
    pub timings: Timings,
}

impl RunOutput {
    pub fn falsified(&self) -> bool {
        self.manifest.falsified
    }
}

struct PairResult {
    identify: Vec<IdentifyRecord>,
    bounds: Vec<BoundsRecord>,
    statuses: Vec<StatusEntry>,
    seconds: f64,
}

fn one_sided_interval(obs: &[SideObservation], side: crate::localpref::Side, opts: &IdentifyOptions, allowance: f64, event: &LocalPrefSet) -> Option<(f64, f64)> {
    let d = side_data(side, obs, opts.closure_cap).ok()?;
    let poly = match side {
        crate::localpref::Side::Plus => build_polytope(Some(&d), None),
        crate::localpref::Side::Minus => build_polytope(None, Some(&d)),
    };
    event_interval(&poly.relaxed(allowance), event).ok()
}

fn analyze_pair(config: &RunConfig, market: &Market, umas: &UmasRelation, pair: LocalPrefPair) -> PairResult {
    let start = Instant::now();
    let e = &market.economy;
    let sample = select_local_sample(e, &market.cutoffs, pair, config.bandwidth.for_pair(pair));
    let (n_plus, n_minus) = (sample.plus.len(), sample.minus.len());
    let mut out = PairResult {
        identify: Vec::new(),
        bounds: Vec::new(),
        statuses: Vec::new(),
        seconds: 0.0,
    };
    let blank = |regime: Regime, outcome: &str, method: &str, status: Status, note: Option<String>| BoundsRecord {
        pair,
        regime,
        outcome: outcome.to_string(),
        method: method.to_string(),
        status,
        lower: None,
        upper: None,
        p_bar: None,
        delta_bar_plus: None,
        delta_bar_minus: None,
        n_plus,
        n_minus,
        sign_identified: None,
        naive_point: None,
        naive_outside_bounds: None,
        oracle_ate: None,
        note,
    };
    for &regime in &config.regimes {
        let finish = |out: &mut PairResult, status: Status, note: Option<String>| {
            for o in &config.outcomes {
                out.statuses.push(StatusEntry {
                    pair,
                    regime,
                    outcome: o.name.clone(),
                    status,
                });
                out.bounds.push(blank(regime, &o.name, "hm", status, note.clone()));
            }
        };
        if sample.empty_side().is_some() {
            finish(&mut out, Status::SkippedEmptySide, None);
            continue;
        }
        let (plus, minus) = match local_observations(market, &sample, regime, umas) {
            Ok(v) => v,
            Err(err) => {
                finish(&mut out, Status::Failed, Some(err.to_string()));
                continue;
            }
        };
        let allowance = config.noise_allowance
            + if config.noise_z > 0.0 {
                sampling_allowance(n_plus, n_minus, config.noise_z)
            } else {
                0.0
            };
        let opts = IdentifyOptions {
            closure_cap: config.closure_cap,
            tolerance: config.tolerance,
            noise_allowance: allowance,
        };
        let id = match identify(pair, &plus, &minus, e.num_schools, &opts) {
            Ok(id) => id,
            Err(err) => {
                finish(&mut out, Status::Failed, Some(err.to_string()));
                continue;
            }
        };
        let event_bounds = id
            .polytope
            .atoms
            .iter()
            .map(|a| {
                let ev = LocalPrefSet::singleton(*a);
                EventBounds {
                    pair: *a,
                    both: event_interval(&id.polytope, &ev).ok(),
                    plus_only: one_sided_interval(&plus, crate::localpref::Side::Plus, &opts, allowance, &ev),
                    minus_only: one_sided_interval(&minus, crate::localpref::Side::Minus, &opts, allowance, &ev),
                }
            })
            .collect();
        let half = select_local_sample(e, &market.cutoffs, pair, {
            let b = config.bandwidth.for_pair(pair);
            crate::localpref::Bandwidth {
                minus: b.minus / 2.0,
                plus: b.plus / 2.0,
            }
        });
        let distinct = |idx: &[usize]| {
            idx.iter()
                .map(|&i| {
                    let s = &e.students[i];
                    let budget = LocalBudget::at(&s.scores, &market.cutoffs, pair.first, &e.score_groups);
                    qset_for_regime(&s.report, &budget, e.list_cap, regime, umas)
                })
                .collect::<BTreeSet<_>>()
                .len()
        };
        let half_bandwidth_support = (distinct(&half.plus), distinct(&half.minus));

        for o in &config.outcomes {
            let g = &o.transform;
            let naive = naive_rd(&plus, &minus, pair, g).ok();
            let oracle = if e.has_ground_truth() {
                oracle_truth(e, &market.cutoffs, pair, config.bandwidth.for_pair(pair), regime, umas, g)
                    .ok()
                    .and_then(|r| r.ate)
            } else {
                None
            };
            let mut base = blank(regime, &o.name, "hm", Status::Ok, None);
            base.naive_point = naive;
            base.oracle_ate = oracle;
            let status = if id.falsified {
                Status::Falsified
            } else if id.delta.is_none_or(|d| !(d.p_bar > 0.0)) {
                Status::SkippedZeroShare
            } else {
                Status::Ok
            };
            out.statuses.push(StatusEntry {
                pair,
                regime,
                outcome: o.name.clone(),
                status,
            });
            let Some(delta) = id.delta.filter(|_| status == Status::Ok) else {
                base.status = status;
                base.p_bar = id.delta.map(|d| d.p_bar);
                out.bounds.push(base);
                continue;
            };
            base.p_bar = Some(delta.p_bar);
            base.delta_bar_plus = Some(delta.delta_plus);
            base.delta_bar_minus = Some(delta.delta_minus);
            let fill = |mut r: BoundsRecord, lower: f64, upper: f64| {
                r.lower = Some(lower);
                r.upper = Some(upper);
                r.sign_identified = Some(lower > 0.0 || upper < 0.0);
                r.naive_outside_bounds = naive.map(|x| x < lower || x > upper);
                r
            };
            let hm = hm_bounds(&plus, &minus, pair, g, &delta).map(|(_, b)| b);
            match &hm {
                Ok(b) => out.bounds.push(fill(base.clone(), b.lower, b.upper)),
                Err(err) => {
                    let mut r = base.clone();
                    r.status = Status::Failed;
                    r.note = Some(err.to_string());
                    out.bounds.push(r);
                }
            }
            let mut sharp = base.clone();
            sharp.method = "sharp_lp".into();
            match sharp_bounds_finite(
                &plus,
                &minus,
                &id.plus,
                &id.minus,
                pair,
                g,
                delta.p_bar,
                config.support_cap,
                allowance,
            ) {
                // With a positive allowance the relaxed program no longer
                // implies the trimming bounds, so both are imposed.
                Ok(b) if allowance > 0.0 => match &hm {
                    Ok(h) if b.lower.max(h.lower) <= b.upper.min(h.upper) => {
                        out.bounds.push(fill(sharp, b.lower.max(h.lower), b.upper.min(h.upper)))
                    }
                    Ok(_) => {
                        sharp.status = Status::Falsified;
                        sharp.note = Some("program and trimming bounds are disjoint".into());
                        out.bounds.push(sharp);
                    }
                    Err(_) => out.bounds.push(fill(sharp, b.lower, b.upper)),
                },
                Ok(b) => out.bounds.push(fill(sharp, b.lower, b.upper)),
                Err(Error::OutcomeSupportTooLarge { .. }) => {}
                Err(err) => {
                    sharp.status = if err.is_falsification() { Status::Falsified } else { Status::Failed };
                    sharp.note = Some(err.to_string());
                    out.bounds.push(sharp);
                }
            }
        }
        out.identify.push(IdentifyRecord {
            pair,
            regime,
            n_plus,
            n_minus,
            allowance,
            half_bandwidth_support,
            event_bounds,
            identification: id,
        });
    }
    out.seconds = start.elapsed().as_secs_f64();
    out
}

/// Runs the analysis stages on a loaded market.
pub fn analyze(config: &RunConfig, market: Market, load_seconds: f64) -> Result<RunOutput> {
    let t = Instant::now();
    let umas = detect_umas(&market.economy, &market.cutoffs, config.umas_min_mass);
    let pairs = find_comparable_pairs(&market.economy, &market.cutoffs, config.min_local_n, &config.bandwidth);
    let pairs_seconds = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let list: Vec<LocalPrefPair> = pairs.iter().map(|(p, _)| *p).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let results: Vec<PairResult> =
        pool.install(|| list.par_iter().map(|p| analyze_pair(config, &market, &umas, *p)).collect());
    let mut identify_records = Vec::new();
    let mut bounds = Vec::new();
    let mut statuses = Vec::new();
    let mut per_pair_seconds = Vec::new();
    for (p, r) in list.iter().zip(results) {
        identify_records.extend(r.identify);
        bounds.extend(r.bounds);
        statuses.extend(r.statuses);
        per_pair_seconds.push((*p, r.seconds));
    }
    let falsified = statuses.iter().any(|s| s.status == Status::Falsified)
        || bounds.iter().any(|b| b.status == Status::Falsified);
    let manifest = RunManifest {
        version: VERSION.to_string(),
        config: RunConfig {
            threads: 0,
            output: RunConfig::default().output,
            ..config.clone()
        },
        inputs: market.inputs.clone(),
        warnings: market.warnings.clone(),
        num_students: market.economy.students.len(),
        cutoffs: market.cutoffs.values().to_vec(),
        umas: umas.pairs().map(|(d, e)| (d.0, e.0)).collect(),
        comparable_pairs: list.len(),
        statuses,
        falsified,
        artifacts: Vec::new(),
    };
    Ok(RunOutput {
        market,
        umas,
        pairs,
        identify: identify_records,
        bounds,
        manifest,
        timings: Timings {
            load_seconds,
            pairs_seconds,
            analysis_seconds: t.elapsed().as_secs_f64(),
            per_pair_seconds,
        },
    })
}

pub fn run_pipeline(config: &RunConfig) -> Result<RunOutput> {
    let t = Instant::now();
    let market = load_market(config)?;
    analyze(config, market, t.elapsed().as_secs_f64())
}

/// JSON with every float written as `{:.16e}` (17 significant digits), so
/// artifacts diff cleanly across runs.
struct FixedFloats<'a>(serde_json::ser::PrettyFormatter<'a>);

impl serde_json::ser::Formatter for FixedFloats<'_> {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> std::io::Result<()> {
        write!(w, "{value:.16e}")
    }
    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, value: f32) -> std::io::Result<()> {
        self.write_f64(w, f64::from(value))
    }
    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> std::io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> std::io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_object_value(w)
    }
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser =
        serde_json::Serializer::with_formatter(&mut buf, FixedFloats(serde_json::ser::PrettyFormatter::new()));
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json writes UTF-8"))
}

/// Writes `text` and returns its checksum entry.
fn put(dir: &Path, name: &str, text: &[u8]) -> Result<(String, String)> {
    std::fs::write(dir.join(name), text)?;
    Ok((name.to_string(), sha256_hex(text)))
}

pub fn pairs_csv(pairs: &ComparablePairs) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["j", "k", "n_reported", "n_plus", "n_minus", "cutoff", "h_minus", "h_plus"])?;
    for (p, c) in pairs.iter() {
        w.write_record([
            p.first.0.to_string(),
            p.second.0.to_string(),
            c.n_reported.to_string(),
            c.n_plus.to_string(),
            c.n_minus.to_string(),
            c.cutoff.to_string(),
            c.h_minus.to_string(),
            c.h_plus.to_string(),
        ])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Which artifacts to write.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Identify,
    Bounds,
}

/// Writes the run artifacts and the manifest into `dir`. Wall times go to
/// `timings.json`, kept apart so the other files are reproducible.
pub fn write_artifacts(dir: &Path, run: &mut RunOutput, stage: Stage) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut sums = Vec::new();
    let c = dir.join("cutoffs.csv");
    write_cutoffs(&c, &run.market.cutoffs)?;
    sums.push(("cutoffs.csv".into(), sha256_hex(&std::fs::read(&c)?)));
    let a = dir.join("assignments.csv");
    write_assignments(&a, &run.market.economy, &run.market.matching)?;
    sums.push(("assignments.csv".into(), sha256_hex(&std::fs::read(&a)?)));
    sums.push(put(dir, "pairs.csv", &pairs_csv(&run.pairs)?)?);
    sums.push(put(dir, "identify.json", to_json(&run.identify)?.as_bytes())?);
    if stage == Stage::Bounds {
        sums.push(put(dir, "bounds.json", to_json(&run.bounds)?.as_bytes())?);
        let (report, intervals) = report_tables(&run.bounds)?;
        sums.push(put(dir, "report.csv", &report)?);
        sums.push(put(dir, "intervals.csv", &intervals)?);
    }
    run.manifest.artifacts = sums;
    std::fs::write(dir.join("manifest.json"), to_json(&run.manifest)?)?;
    std::fs::write(dir.join("timings.json"), to_json(&run.timings)?)?;
    Ok(())
}

/// The subset of bounds records needed for summaries.
#[derive(Clone, Debug, Deserialize)]
pub struct BoundsRow {
    pub pair: LocalPrefPair,
    pub regime: String,
    pub outcome: String,
    pub method: String,
    pub status: String,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub sign_identified: Option<bool>,
    pub naive_point: Option<f64>,
    pub naive_outside_bounds: Option<bool>,
}

fn summarize(rows: &[BoundsRow]) -> Result<(Vec<u8>, Vec<u8>)> {
    let mut groups: Vec<(String, String, String)> = rows
        .iter()
        .map(|r| (r.regime.clone(), r.outcome.clone(), r.method.clone()))
        .collect();
    groups.sort();
    groups.dedup();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["regime", "outcome", "method", "pairs", "bounded", "sign_identified", "naive_outside", "falsified"])?;
    for (regime, outcome, method) in &groups {
        let sel: Vec<&BoundsRow> = rows
            .iter()
            .filter(|r| &r.regime == regime && &r.outcome == outcome && &r.method == method)
            .collect();
        let count = |f: &dyn Fn(&BoundsRow) -> bool| sel.iter().filter(|r| f(r)).count().to_string();
        w.write_record([
            regime.clone(),
            outcome.clone(),
            method.clone(),
            sel.len().to_string(),
            count(&|r| r.lower.is_some()),
            count(&|r| r.sign_identified == Some(true)),
            count(&|r| r.naive_outside_bounds == Some(true)),
            count(&|r| r.status == "falsified"),
        ])?;
    }
    let report = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["pair", "regime", "outcome", "method", "status", "lower", "upper", "naive"])?;
    let opt = |x: Option<f64>| x.map_or_else(String::new, |v| format!("{v:.16e}"));
    for r in rows {
        w.write_record([
            format!("{}-{}", r.pair.first.0, r.pair.second.0),
            r.regime.clone(),
            r.outcome.clone(),
            r.method.clone(),
            r.status.clone(),
            opt(r.lower),
            opt(r.upper),
            opt(r.naive_point),
        ])?;
    }
    let intervals = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok((report, intervals))
}

fn report_tables(records: &[BoundsRecord]) -> Result<(Vec<u8>, Vec<u8>)> {
    let rows: Vec<BoundsRow> = serde_json::from_str(&serde_json::to_string(records)?)?;
    summarize(&rows)
}

/// Rebuilds `report.csv` and `intervals.csv` from the `bounds.json` in `dir`.
pub fn report(dir: &Path) -> Result<Vec<u8>> {
    let path = dir.join("bounds.json");
    if !path.exists() {
        return Err(Error::Validation(format!("{} not found; run the bounds stage first", path.display())));
    }
    let rows: Vec<BoundsRow> = serde_json::from_str(&std::fs::read_to_string(&path)?)?;
    let (report, intervals) = summarize(&rows)?;
    std::fs::write(dir.join("report.csv"), &report)?;
    std::fs::write(dir.join("intervals.csv"), &intervals)?;
    Ok(report)
}

/// Per-student candidate sets within the window of every binding cutoff.
pub fn qsets_csv(market: &Market, config: &RunConfig, umas: &UmasRelation) -> Result<Vec<u8>> {
    let e = &market.economy;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["id", "school", "regime", "side", "reported", "qset"])?;
    for j in crate::economy::schools(e.num_schools) {
        if !market.cutoffs.is_binding(j) {
            continue;
        }
        let probe = LocalPrefPair::new(j, j);
        let sample = select_local_sample(e, &market.cutoffs, probe, config.bandwidth.for_pair(probe));
        for &regime in &config.regimes {
            for (side, idx) in [("plus", &sample.plus), ("minus", &sample.minus)] {
                for &i in idx.iter() {
                    let s = &e.students[i];
                    let budget = LocalBudget::at(&s.scores, &market.cutoffs, j, &e.score_groups);
                    let q = qset_for_regime(&s.report, &budget, e.list_cap, regime, umas);
                    let reported = local_pair_from_sets(&s.report, &budget.minus, &budget.plus);
                    w.write_record([
                        s.id.to_string(),
                        j.0.to_string(),
                        regime.name().to_string(),
                        side.to_string(),
                        reported.to_string(),
                        q.to_string(),
                    ])?;
                }
            }
        }
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}
