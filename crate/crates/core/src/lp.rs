//! Small dense linear programs: two-phase tableau simplex. Entering columns
//! follow the most negative reduced cost; after a run of degenerate pivots
//! the solver switches to Bland's rule for good, which rules out cycling.
//!
//! Every variable is nonnegative. Problems here have at most a few hundred
//! columns, so a dense tableau is simpler and fast enough.

/// Pivot and feasibility tolerance.
pub const TOLERANCE: f64 = 1e-9;

const DEGENERATE_LIMIT: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Cmp {
    Le,
    Ge,
    Eq,
}

#[derive(Clone, Debug)]
struct Row {
    coeffs: Vec<(usize, f64)>,
    cmp: Cmp,
    rhs: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LpResult {
    Optimal { value: f64, x: Vec<f64> },
    Infeasible,
    Unbounded,
}

impl LpResult {
    pub fn value(&self) -> Option<f64> {
        match self {
            LpResult::Optimal { value, .. } => Some(*value),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct LinearProgram {
    num_vars: usize,
    rows: Vec<Row>,
}

impl LinearProgram {
    pub fn new(num_vars: usize) -> Self {
        LinearProgram {
            num_vars,
            rows: Vec::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    /// Adds `sum coeffs[i].1 * x[coeffs[i].0]  cmp  rhs`.
    pub fn add_row(&mut self, coeffs: Vec<(usize, f64)>, cmp: Cmp, rhs: f64) {
        debug_assert!(coeffs.iter().all(|(i, _)| *i < self.num_vars));
        self.rows.push(Row { coeffs, cmp, rhs });
    }

    pub fn minimize(&self, objective: &[f64]) -> LpResult {
        assert_eq!(objective.len(), self.num_vars);
        Tableau::build(self).solve(objective)
    }

    pub fn maximize(&self, objective: &[f64]) -> LpResult {
        let neg: Vec<f64> = objective.iter().map(|c| -c).collect();
        match self.minimize(&neg) {
            LpResult::Optimal { value, x } => LpResult::Optimal { value: -value, x },
            other => other,
        }
    }
}

/// Rounds to the 1e-12 grid used for reported statistics.
pub fn round12(x: f64) -> f64 {
    if x.is_finite() {
        let r = (x * 1e12).round() / 1e12;
        if r == 0.0 {
            0.0
        } else {
            r
        }
    } else {
        x
    }
}

struct Tableau {
    /// `m` constraint rows followed by the objective row; last column is rhs.
    t: Vec<Vec<f64>>,
    basis: Vec<usize>,
    num_vars: usize,
    /// Columns at or above this index are artificial.
    first_artificial: usize,
    cols: usize,
    active: Vec<bool>,
}

impl Tableau {
    fn build(lp: &LinearProgram) -> Tableau {
        let m = lp.rows.len();
        let n = lp.num_vars;
        // Normalize so every rhs is nonnegative.
        let rows: Vec<(Vec<(usize, f64)>, Cmp, f64)> = lp
            .rows
            .iter()
            .map(|r| {
                if r.rhs < 0.0 {
                    let flipped = match r.cmp {
                        Cmp::Le => Cmp::Ge,
                        Cmp::Ge => Cmp::Le,
                        Cmp::Eq => Cmp::Eq,
                    };
                    (r.coeffs.iter().map(|(i, a)| (*i, -a)).collect(), flipped, -r.rhs)
                } else {
                    (r.coeffs.clone(), r.cmp, r.rhs)
                }
            })
            .collect();
        let num_slack = rows.iter().filter(|r| r.1 != Cmp::Eq).count();
        let num_art = rows.iter().filter(|r| r.1 != Cmp::Le).count();
        let first_artificial = n + num_slack;
        let cols = first_artificial + num_art;
        let mut t = vec![vec![0.0; cols + 1]; m + 1];
        let mut basis = vec![0; m];
        let mut slack = n;
        let mut art = first_artificial;
        for (i, (coeffs, cmp, rhs)) in rows.iter().enumerate() {
            for (j, a) in coeffs {
                t[i][*j] += a;
            }
            t[i][cols] = *rhs;
            match cmp {
                Cmp::Le => {
                    t[i][slack] = 1.0;
                    basis[i] = slack;
                    slack += 1;
                }
                Cmp::Ge => {
                    t[i][slack] = -1.0;
                    slack += 1;
                    t[i][art] = 1.0;
                    basis[i] = art;
                    art += 1;
                }
                Cmp::Eq => {
                    t[i][art] = 1.0;
                    basis[i] = art;
                    art += 1;
                }
            }
        }
        Tableau {
            t,
            basis,
            num_vars: n,
            first_artificial,
            cols,
            active: vec![true; m],
        }
    }

    fn m(&self) -> usize {
        self.basis.len()
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.t[r][c];
        for v in self.t[r].iter_mut() {
            *v /= p;
        }
        self.t[r][c] = 1.0;
        let nonzero: Vec<(usize, f64)> = self.t[r].iter().copied().enumerate().filter(|(_, v)| *v != 0.0).collect();
        for (i, row) in self.t.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[c];
            if f != 0.0 {
                for &(k, pv) in &nonzero {
                    row[k] -= f * pv;
                }
                row[c] = 0.0;
            }
        }
        self.basis[r] = c;
    }

    /// Sets the objective row to reduced costs of `costs` under the current basis.
    fn set_objective(&mut self, costs: &[f64]) {
        let m = self.m();
        let cols = self.cols;
        let mut z = vec![0.0; cols + 1];
        z[..costs.len()].copy_from_slice(costs);
        for i in 0..m {
            if !self.active[i] {
                continue;
            }
            let cb = costs[self.basis[i]];
            if cb != 0.0 {
                for (zv, tv) in z.iter_mut().zip(&self.t[i]) {
                    *zv -= cb * tv;
                }
            }
        }
        self.t[m] = z;
    }

    /// Runs simplex iterations on the current objective row. Returns false
    /// when unbounded.
    fn iterate(&mut self, allowed_cols: usize) -> bool {
        let m = self.m();
        let cols = self.cols;
        let mut degenerate_run = 0usize;
        let mut bland = false;
        loop {
            let entering = if bland {
                (0..allowed_cols).find(|&j| self.t[m][j] < -TOLERANCE)
            } else {
                (0..allowed_cols)
                    .filter(|&j| self.t[m][j] < -TOLERANCE)
                    .min_by(|&a, &b| self.t[m][a].total_cmp(&self.t[m][b]))
            };
            let Some(c) = entering else { return true };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..m {
                if !self.active[i] {
                    continue;
                }
                let a = self.t[i][c];
                if a > TOLERANCE {
                    let ratio = self.t[i][cols] / a;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((bi, br)) => {
                            if ratio < br - TOLERANCE
                                || (ratio <= br + TOLERANCE && self.basis[i] < self.basis[bi])
                            {
                                Some((i, ratio))
                            } else {
                                Some((bi, br))
                            }
                        }
                    };
                }
            }
            match leave {
                None => return false,
                Some((r, ratio)) => {
                    if ratio <= TOLERANCE {
                        degenerate_run += 1;
                        bland |= degenerate_run > DEGENERATE_LIMIT;
                    } else {
                        degenerate_run = 0;
                    }
                    self.pivot(r, c)
                }
            }
        }
    }

    fn solve(mut self, objective: &[f64]) -> LpResult {
        let m = self.m();
        let cols = self.cols;
        if self.first_artificial < cols {
            let mut phase1 = vec![0.0; cols];
            for c in phase1.iter_mut().skip(self.first_artificial) {
                *c = 1.0;
            }
            self.set_objective(&phase1);
            self.iterate(cols);
            let infeasibility = -self.t[m][cols];
            if infeasibility > TOLERANCE {
                return LpResult::Infeasible;
            }
            // Drive remaining artificials out of the basis or drop redundant rows.
            for i in 0..m {
                if self.basis[i] < self.first_artificial {
                    continue;
                }
                let replacement = (0..self.first_artificial)
                    .filter(|&j| self.t[i][j].abs() > TOLERANCE)
                    .max_by(|&a, &b| self.t[i][a].abs().total_cmp(&self.t[i][b].abs()).then(b.cmp(&a)));
                match replacement {
                    Some(j) => self.pivot(i, j),
                    None => self.active[i] = false,
                }
            }
        }
        let mut costs = vec![0.0; cols];
        costs[..self.num_vars].copy_from_slice(objective);
        self.set_objective(&costs);
        if !self.iterate(self.first_artificial) {
            return LpResult::Unbounded;
        }
        let mut x = vec![0.0; self.num_vars];
        for i in 0..m {
            if self.active[i] && self.basis[i] < self.num_vars {
                x[self.basis[i]] = self.t[i][cols].max(0.0);
            }
        }
        let value = objective.iter().zip(&x).map(|(c, v)| c * v).sum();
        LpResult::Optimal { value, x }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn textbook_maximum() {
        // max 3x + 5y st x <= 4, 2y <= 12, 3x + 2y <= 18
        let mut lp = LinearProgram::new(2);
        lp.add_row(vec![(0, 1.0)], Cmp::Le, 4.0);
        lp.add_row(vec![(1, 2.0)], Cmp::Le, 12.0);
        lp.add_row(vec![(0, 3.0), (1, 2.0)], Cmp::Le, 18.0);
        let r = lp.maximize(&[3.0, 5.0]);
        let LpResult::Optimal { value, x } = r else { panic!("{r:?}") };
        assert!((value - 36.0).abs() < 1e-9);
        assert!((x[0] - 2.0).abs() < 1e-9 && (x[1] - 6.0).abs() < 1e-9);
    }

    #[test]
    fn equality_and_ge_rows() {
        // min x + y st x + y = 1, x >= 0.3, y >= 0.2; min x
        let mut lp = LinearProgram::new(2);
        lp.add_row(vec![(0, 1.0), (1, 1.0)], Cmp::Eq, 1.0);
        lp.add_row(vec![(0, 1.0)], Cmp::Ge, 0.3);
        lp.add_row(vec![(1, 1.0)], Cmp::Ge, 0.2);
        assert!((lp.minimize(&[1.0, 0.0]).value().unwrap() - 0.3).abs() < 1e-12);
        assert!((lp.maximize(&[1.0, 0.0]).value().unwrap() - 0.8).abs() < 1e-12);
    }

    #[test]
    fn infeasible_detected() {
        let mut lp = LinearProgram::new(2);
        lp.add_row(vec![(0, 1.0), (1, 1.0)], Cmp::Eq, 1.0);
        lp.add_row(vec![(0, 1.0)], Cmp::Ge, 0.6);
        lp.add_row(vec![(1, 1.0)], Cmp::Ge, 0.6);
        assert_eq!(lp.minimize(&[1.0, 0.0]), LpResult::Infeasible);
    }

    #[test]
    fn unbounded_detected() {
        let mut lp = LinearProgram::new(2);
        lp.add_row(vec![(0, 1.0), (1, -1.0)], Cmp::Le, 1.0);
        assert_eq!(lp.maximize(&[1.0, 0.0]), LpResult::Unbounded);
    }

    #[test]
    fn redundant_equalities() {
        let mut lp = LinearProgram::new(3);
        lp.add_row(vec![(0, 1.0), (1, 1.0), (2, 1.0)], Cmp::Eq, 1.0);
        lp.add_row(vec![(0, 2.0), (1, 2.0), (2, 2.0)], Cmp::Eq, 2.0);
        lp.add_row(vec![(2, 1.0)], Cmp::Le, 0.25);
        assert!((lp.maximize(&[0.0, 0.0, 1.0]).value().unwrap() - 0.25).abs() < 1e-12);
        assert!((lp.minimize(&[1.0, 1.0, 0.0]).value().unwrap() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn degenerate_problem_terminates() {
        // Classic cycling example under the largest-coefficient rule.
        let mut lp = LinearProgram::new(4);
        lp.add_row(vec![(0, 0.5), (1, -5.5), (2, -2.5), (3, 9.0)], Cmp::Le, 0.0);
        lp.add_row(vec![(0, 0.5), (1, -1.5), (2, -0.5), (3, 1.0)], Cmp::Le, 0.0);
        lp.add_row(vec![(0, 1.0)], Cmp::Le, 1.0);
        let v = lp.maximize(&[10.0, -57.0, -9.0, -24.0]).value().unwrap();
        assert!((v - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rounding() {
        assert_eq!(round12(0.1 + 0.2), 0.3);
        assert_eq!(round12(-1e-15), 0.0);
        assert!(round12(f64::INFINITY).is_infinite());
    }
}
