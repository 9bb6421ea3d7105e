//! CSV files for economies, matchings and cutoffs.
//!
//! | file            | columns                                   |
//! |-----------------|-------------------------------------------|
//! | students.csv    | `id, s_1 .. s_J`                          |
//! | rols.csv        | `id, rank, school_id`                     |
//! | schools.csv     | `school_id, capacity, score_group`        |
//! | outcomes.csv    | `id, y_observed`                          |
//! | truth.csv       | `id, preference, y_0 .. y_J` (synthetic)  |
//! | assignments.csv | `id, assigned_school`                     |
//! | cutoffs.csv     | `school_id, cutoff[, binding]`            |
//!
//! `preference` is the full true order, space separated, with 0 for the
//! outside option.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use csv::{ReaderBuilder, StringRecord, Writer};

use crate::economy::{Economy, OptionId, PotentialOutcomes, Preference, ReportedList, ScoreVector, Student};
use crate::error::{Error, Result};
use crate::mechanism::{CutoffProfile, Matching};

/// Locations of the economy files.
#[derive(Clone, Debug, PartialEq)]
pub struct EconomyFiles {
    pub students: PathBuf,
    pub rols: PathBuf,
    pub schools: PathBuf,
    pub outcomes: Option<PathBuf>,
    pub truth: Option<PathBuf>,
}

impl EconomyFiles {
    /// Standard file names inside `dir`; optional files are used when present.
    pub fn in_dir(dir: &Path) -> Self {
        let opt = |name: &str| {
            let p = dir.join(name);
            p.exists().then_some(p)
        };
        EconomyFiles {
            students: dir.join("students.csv"),
            rols: dir.join("rols.csv"),
            schools: dir.join("schools.csv"),
            outcomes: opt("outcomes.csv"),
            truth: opt("truth.csv"),
        }
    }

    pub fn paths(&self) -> Vec<&Path> {
        let mut v = vec![self.students.as_path(), self.rols.as_path(), self.schools.as_path()];
        v.extend(self.outcomes.as_deref());
        v.extend(self.truth.as_deref());
        v
    }
}

struct Table {
    file: String,
    headers: StringRecord,
    rows: Vec<(usize, StringRecord)>,
}

impl Table {
    fn read(path: &Path) -> Result<Table> {
        let file = path.display().to_string();
        let mut rdr = ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
        let headers = rdr.headers()?.clone();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::Row {
                file: file.clone(),
                row: e.position().map_or(0, |p| p.line() as usize),
                message: e.to_string(),
            })?;
            let line = rec.position().map_or(0, |p| p.line() as usize);
            rows.push((line, rec));
        }
        Ok(Table { file, headers, rows })
    }

    fn err(&self, row: usize, message: impl Into<String>) -> Error {
        Error::Row {
            file: self.file.clone(),
            row,
            message: message.into(),
        }
    }

    fn expect_headers(&self, want: &[&str]) -> Result<()> {
        for (i, w) in want.iter().enumerate() {
            if self.headers.get(i) != Some(*w) {
                return Err(self.err(1, format!("expected column {} to be `{w}`", i + 1)));
            }
        }
        Ok(())
    }

    fn field<T: FromStr>(&self, line: usize, rec: &StringRecord, idx: usize) -> Result<T> {
        let name = self.headers.get(idx).unwrap_or("?");
        let raw = rec.get(idx).ok_or_else(|| self.err(line, format!("missing column `{name}`")))?;
        raw.parse()
            .map_err(|_| self.err(line, format!("cannot parse `{raw}` in column `{name}`")))
    }
}

fn school_id(t: &Table, line: usize, raw: u16, num_schools: usize) -> Result<OptionId> {
    if raw == 0 || raw as usize > num_schools {
        return Err(t.err(line, format!("school id {raw} outside 1..={num_schools}")));
    }
    Ok(OptionId(raw))
}

/// Reads and validates an economy. Ground truth is attached when a truth file
/// is given; observed outcomes when an outcomes file is given.
pub fn read_economy(files: &EconomyFiles, list_cap: usize) -> Result<Economy> {
    let schools = Table::read(&files.schools)?;
    schools.expect_headers(&["school_id", "capacity", "score_group"])?;
    let num_schools = schools.rows.len();
    if num_schools == 0 {
        return Err(schools.err(1, "no schools"));
    }
    let mut capacities = vec![None; num_schools];
    let mut groups = vec![0u16; num_schools];
    for (line, rec) in &schools.rows {
        let id: u16 = schools.field(*line, rec, 0)?;
        let s = school_id(&schools, *line, id, num_schools)?;
        if capacities[s.school_index()].is_some() {
            return Err(schools.err(*line, format!("duplicate school {id}")));
        }
        capacities[s.school_index()] = Some(schools.field::<u32>(*line, rec, 1)?);
        groups[s.school_index()] = schools.field(*line, rec, 2)?;
    }
    let capacities: Vec<u32> = capacities.into_iter().map(|c| c.expect("each id seen once")).collect();

    let st = Table::read(&files.students)?;
    let mut want = vec!["id".to_string()];
    want.extend((1..=num_schools).map(|j| format!("s_{j}")));
    st.expect_headers(&want.iter().map(String::as_str).collect::<Vec<_>>())?;
    let mut index: HashMap<u32, usize> = HashMap::new();
    let mut scores = Vec::with_capacity(st.rows.len());
    let mut order = Vec::with_capacity(st.rows.len());
    for (line, rec) in &st.rows {
        let id: u32 = st.field(*line, rec, 0)?;
        if index.insert(id, order.len()).is_some() {
            return Err(st.err(*line, format!("duplicate student id {id}")));
        }
        let s: Vec<f64> = (1..=num_schools).map(|c| st.field(*line, rec, c)).collect::<Result<_>>()?;
        if s.iter().any(|x| !x.is_finite()) {
            return Err(st.err(*line, "non-finite score"));
        }
        scores.push(s);
        order.push(id);
    }
    let lookup = |t: &Table, line: usize, id: u32| -> Result<usize> {
        index
            .get(&id)
            .copied()
            .ok_or_else(|| t.err(line, format!("unknown student id {id}")))
    };

    let rols = Table::read(&files.rols)?;
    rols.expect_headers(&["id", "rank", "school_id"])?;
    let mut lists: Vec<BTreeMap<u32, (usize, OptionId)>> = vec![BTreeMap::new(); order.len()];
    for (line, rec) in &rols.rows {
        let i = lookup(&rols, *line, rols.field(*line, rec, 0)?)?;
        let rank: u32 = rols.field(*line, rec, 1)?;
        let raw: u16 = rols.field(*line, rec, 2)?;
        let s = school_id(&rols, *line, raw, num_schools)?;
        if rank == 0 {
            return Err(rols.err(*line, "ranks start at 1"));
        }
        if lists[i].insert(rank, (*line, s)).is_some() {
            return Err(rols.err(*line, format!("duplicate rank {rank} for student {}", order[i])));
        }
    }
    let mut reports = Vec::with_capacity(order.len());
    for (i, list) in lists.iter().enumerate() {
        for (pos, (rank, (line, _))) in list.iter().enumerate() {
            if *rank as usize != pos + 1 {
                return Err(rols.err(*line, format!("rank gap for student {}: expected {}, found {rank}", order[i], pos + 1)));
            }
        }
        if list.len() > list_cap {
            let (line, _) = list.values().last().expect("nonempty");
            return Err(rols.err(*line, format!("student {} lists {} schools, above the cap {list_cap}", order[i], list.len())));
        }
        let line = list.values().next().map_or(0, |(l, _)| *l);
        let report = ReportedList::new(list.values().map(|(_, s)| *s).collect(), num_schools, list_cap)
            .map_err(|e| rols.err(line, format!("student {}: {e}", order[i])))?;
        reports.push(report);
    }

    let mut observed = vec![None; order.len()];
    if let Some(path) = &files.outcomes {
        let t = Table::read(path)?;
        t.expect_headers(&["id", "y_observed"])?;
        for (line, rec) in &t.rows {
            let i = lookup(&t, *line, t.field(*line, rec, 0)?)?;
            observed[i] = Some(t.field::<f64>(*line, rec, 1)?);
        }
    }

    let mut truth: Vec<Option<(Preference, PotentialOutcomes)>> = vec![None; order.len()];
    if let Some(path) = &files.truth {
        let t = Table::read(path)?;
        let mut want = vec!["id".to_string(), "preference".to_string()];
        want.extend((0..=num_schools).map(|d| format!("y_{d}")));
        t.expect_headers(&want.iter().map(String::as_str).collect::<Vec<_>>())?;
        for (line, rec) in &t.rows {
            let i = lookup(&t, *line, t.field(*line, rec, 0)?)?;
            let raw = rec.get(1).unwrap_or("");
            let ord: Vec<OptionId> = raw
                .split_whitespace()
                .map(|x| x.parse::<u16>().map(OptionId))
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| t.err(*line, format!("cannot parse preference `{raw}`")))?;
            let pref = Preference::new(ord, num_schools).map_err(|e| t.err(*line, e.to_string()))?;
            let y: Vec<f64> = (2..=num_schools + 2).map(|c| t.field(*line, rec, c)).collect::<Result<_>>()?;
            truth[i] = Some((pref, PotentialOutcomes(y)));
        }
        if let Some(i) = truth.iter().position(Option::is_none) {
            return Err(t.err(0, format!("no truth row for student {}", order[i])));
        }
    }

    let students = order
        .iter()
        .zip(scores)
        .zip(reports)
        .zip(observed)
        .zip(truth)
        .map(|((((id, s), report), observed), truth)| {
            let (preference, outcomes) = match truth {
                Some((p, y)) => (Some(p), Some(y)),
                None => (None, None),
            };
            Student {
                id: *id,
                scores: ScoreVector(s),
                preference,
                outcomes,
                observed,
                latent: 0.0,
                report,
            }
        })
        .collect();
    Economy::new(num_schools, list_cap, capacities, groups, students)
}

fn fmt(x: f64) -> String {
    format!("{x}")
}

/// Writes the economy files into `dir`. Observed outcomes need a matching;
/// the truth file is written when ground truth is present.
pub fn write_economy(dir: &Path, economy: &Economy, matching: Option<&Matching>) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let j = economy.num_schools;

    let mut w = Writer::from_path(dir.join("schools.csv"))?;
    w.write_record(["school_id", "capacity", "score_group"])?;
    for s in 0..j {
        w.write_record([(s + 1).to_string(), economy.capacities[s].to_string(), economy.score_groups[s].to_string()])?;
    }
    w.flush()?;

    let mut w = Writer::from_path(dir.join("students.csv"))?;
    let mut head = vec!["id".to_string()];
    head.extend((1..=j).map(|c| format!("s_{c}")));
    w.write_record(&head)?;
    for s in &economy.students {
        let mut rec = vec![s.id.to_string()];
        rec.extend(s.scores.0.iter().map(|x| fmt(*x)));
        w.write_record(&rec)?;
    }
    w.flush()?;

    let mut w = Writer::from_path(dir.join("rols.csv"))?;
    w.write_record(["id", "rank", "school_id"])?;
    for s in &economy.students {
        for (r, school) in s.report.schools().iter().enumerate() {
            w.write_record([s.id.to_string(), (r + 1).to_string(), school.0.to_string()])?;
        }
    }
    w.flush()?;

    if let Some(m) = matching {
        let mut w = Writer::from_path(dir.join("outcomes.csv"))?;
        w.write_record(["id", "y_observed"])?;
        for (i, s) in economy.students.iter().enumerate() {
            if let Some(y) = economy.observed_outcome(i, m.assigned(i)) {
                w.write_record([s.id.to_string(), fmt(y)])?;
            }
        }
        w.flush()?;
    }

    if economy.has_ground_truth() {
        let mut w = Writer::from_path(dir.join("truth.csv"))?;
        let mut head = vec!["id".to_string(), "preference".to_string()];
        head.extend((0..=j).map(|d| format!("y_{d}")));
        w.write_record(&head)?;
        for s in &economy.students {
            let pref = s.preference.as_ref().expect("checked");
            let order: Vec<String> = pref.order().iter().map(|o| o.0.to_string()).collect();
            let mut rec = vec![s.id.to_string(), order.join(" ")];
            rec.extend(s.outcomes.as_ref().expect("checked").0.iter().map(|y| fmt(*y)));
            w.write_record(&rec)?;
        }
        w.flush()?;
    }
    Ok(())
}

pub fn write_assignments(path: &Path, economy: &Economy, matching: &Matching) -> Result<()> {
    let mut w = Writer::from_path(path)?;
    w.write_record(["id", "assigned_school"])?;
    for (i, s) in economy.students.iter().enumerate() {
        w.write_record([s.id.to_string(), matching.assigned(i).0.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads assignments in economy student order; 0 is the outside option.
pub fn read_assignments(path: &Path, economy: &Economy) -> Result<Matching> {
    let t = Table::read(path)?;
    t.expect_headers(&["id", "assigned_school"])?;
    let index: HashMap<u32, usize> = economy.students.iter().enumerate().map(|(i, s)| (s.id, i)).collect();
    let mut out: Vec<Option<OptionId>> = vec![None; economy.students.len()];
    for (line, rec) in &t.rows {
        let id: u32 = t.field(*line, rec, 0)?;
        let i = *index.get(&id).ok_or_else(|| t.err(*line, format!("unknown student id {id}")))?;
        let raw: u16 = t.field(*line, rec, 1)?;
        if raw as usize > economy.num_schools {
            return Err(t.err(*line, format!("school id {raw} outside 0..={}", economy.num_schools)));
        }
        if out[i].replace(OptionId(raw)).is_some() {
            return Err(t.err(*line, format!("duplicate assignment for student {id}")));
        }
    }
    let assignment = out
        .into_iter()
        .enumerate()
        .map(|(i, a)| a.ok_or_else(|| t.err(0, format!("no assignment for student {}", economy.students[i].id))))
        .collect::<Result<Vec<_>>>()?;
    Ok(Matching::from_assignment(assignment, economy.num_schools))
}

pub fn write_cutoffs(path: &Path, cutoffs: &CutoffProfile) -> Result<()> {
    let mut w = Writer::from_path(path)?;
    w.write_record(["school_id", "cutoff", "binding"])?;
    for (s, c) in cutoffs.values().iter().enumerate() {
        let school = OptionId::school(s + 1);
        w.write_record([(s + 1).to_string(), fmt(*c), cutoffs.is_binding(school).to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads cutoffs; without a `binding` column every finite cutoff binds.
pub fn read_cutoffs(path: &Path, num_schools: usize) -> Result<CutoffProfile> {
    let t = Table::read(path)?;
    t.expect_headers(&["school_id", "cutoff"])?;
    let has_binding = t.headers.get(2) == Some("binding");
    let mut values = vec![None; num_schools];
    let mut binding = vec![false; num_schools];
    for (line, rec) in &t.rows {
        let raw: u16 = t.field(*line, rec, 0)?;
        let s = school_id(&t, *line, raw, num_schools)?;
        let c: f64 = t.field(*line, rec, 1)?;
        if values[s.school_index()].replace(c).is_some() {
            return Err(t.err(*line, format!("duplicate cutoff for school {raw}")));
        }
        binding[s.school_index()] = if has_binding { t.field(*line, rec, 2)? } else { c.is_finite() };
    }
    let values = values
        .into_iter()
        .enumerate()
        .map(|(s, v)| v.ok_or_else(|| t.err(0, format!("no cutoff for school {}", s + 1))))
        .collect::<Result<Vec<_>>>()?;
    Ok(CutoffProfile::new(values, binding))
}

/// Ids of students whose supplied assignment differs from `computed`.
pub fn assignment_mismatches(economy: &Economy, supplied: &Matching, computed: &Matching) -> Vec<u32> {
    economy
        .students
        .iter()
        .enumerate()
        .filter(|(i, _)| supplied.assigned(*i) != computed.assigned(*i))
        .map(|(_, s)| s.id)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanism::{extract_cutoffs, run_da, CutoffFloor};
    use crate::presets::golden_sd_economy;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let e = golden_sd_economy();
        let m = run_da(&e).unwrap();
        write_economy(dir.path(), &e, Some(&m)).unwrap();
        let back = read_economy(&EconomyFiles::in_dir(dir.path()), 3).unwrap();
        assert_eq!(back.students.len(), e.students.len());
        assert_eq!(back.capacities, e.capacities);
        for (a, b) in back.students.iter().zip(&e.students) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.scores, b.scores);
            assert_eq!(a.report, b.report);
            assert_eq!(a.preference, b.preference);
            assert_eq!(a.outcomes, b.outcomes);
        }
        let c = extract_cutoffs(&m, &e, CutoffFloor::BelowMinimum);
        write_cutoffs(&dir.path().join("cutoffs.csv"), &c).unwrap();
        assert_eq!(read_cutoffs(&dir.path().join("cutoffs.csv"), 4).unwrap(), c);
        write_assignments(&dir.path().join("assignments.csv"), &e, &m).unwrap();
        let m2 = read_assignments(&dir.path().join("assignments.csv"), &e).unwrap();
        assert!(assignment_mismatches(&e, &m2, &m).is_empty());
    }

    #[test]
    fn rank_gap_is_rejected_with_row() {
        let dir = tempfile::tempdir().unwrap();
        let e = golden_sd_economy();
        write_economy(dir.path(), &e, None).unwrap();
        std::fs::write(dir.path().join("rols.csv"), "id,rank,school_id\n0,1,4\n0,3,2\n").unwrap();
        let err = read_economy(&EconomyFiles::in_dir(dir.path()), 3).unwrap_err();
        match err {
            Error::Row { row, message, .. } => {
                assert_eq!(row, 3);
                assert!(message.contains("rank gap"), "{message}");
            }
            other => panic!("unexpected {other}"),
        }
    }
}
