//! Exact two-phase simplex for the small dense linear programs produced by
//! the relay-settings optimizer (tens of variables, tens of constraints).
//! Bland's rule throughout, so termination is guaranteed; solutions are
//! vertex solutions read straight off the final basis.

use crate::error::{Error, Result};

const EPS: f64 = 1e-9;
const MAX_PIVOTS: usize = 20_000;

/// One `coeffs . x >= rhs` constraint. `label` survives into infeasibility
/// reports.
#[derive(Debug, Clone)]
pub struct Constraint {
    pub coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
    pub label: String,
}

impl Constraint {
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(j, a)| a * x[j]).sum::<f64>() - self.rhs
    }
}

/// Minimize `objective . x` subject to `constraints` and box bounds.
#[derive(Debug, Clone)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub constraints: Vec<Constraint>,
}

#[derive(Debug, Clone)]
pub enum LpOutcome {
    Optimal { x: Vec<f64>, objective: f64 },
    /// Labels of an irreducible infeasible constraint subset (relative to
    /// the box bounds, found by a deletion filter).
    Infeasible { irreducible: Vec<String> },
}

struct Tableau {
    rows: usize,
    cols: usize, // structural + slack + artificial + rhs
    a: Vec<f64>,
    basis: Vec<usize>,
    n_structural: usize,
    n_slack: usize,
    artificials: Vec<usize>, // column index per artificial
}

impl Tableau {
    fn at(&self, r: usize, c: usize) -> f64 {
        self.a[r * self.cols + c]
    }
    fn at_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        &mut self.a[r * self.cols + c]
    }
    fn rhs(&self, r: usize) -> f64 {
        self.at(r, self.cols - 1)
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let piv = self.at(row, col);
        for c in 0..self.cols {
            *self.at_mut(row, c) /= piv;
        }
        for r in 0..self.rows {
            if r == row {
                continue;
            }
            let factor = self.at(r, col);
            if factor == 0.0 {
                continue;
            }
            for c in 0..self.cols {
                let v = self.at(row, c);
                *self.at_mut(r, c) -= factor * v;
            }
        }
        self.basis[row] = col;
    }

    /// Simplex iterations with Bland's rule on the given cost row. Returns
    /// false when the cost is unbounded below.
    fn run(&mut self, cost: &mut [f64], cost_value: &mut f64, allowed_cols: usize) -> Result<bool> {
        for _ in 0..MAX_PIVOTS {
            // reduced costs are maintained directly in `cost`
            let entering = (0..allowed_cols).find(|&j| cost[j] < -EPS);
            let Some(col) = entering else {
                return Ok(true);
            };
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.rows {
                let a = self.at(r, col);
                if a > EPS {
                    let ratio = self.rhs(r) / a;
                    let better = match leave {
                        None => true,
                        Some((lr, lratio)) => {
                            ratio < lratio - 1e-12
                                || ((ratio - lratio).abs() <= 1e-12
                                    && self.basis[r] < self.basis[lr])
                        }
                    };
                    if better {
                        leave = Some((r, ratio));
                    }
                }
            }
            let Some((row, _)) = leave else {
                return Ok(false);
            };
            self.pivot(row, col);
            // update the cost row
            let factor = cost[col];
            if factor != 0.0 {
                for c in 0..self.cols - 1 {
                    cost[c] -= factor * self.at(row, c);
                }
                *cost_value -= factor * self.rhs(row);
            }
        }
        Err(Error::InvalidSpec(
            "simplex pivot limit exceeded".to_string(),
        ))
    }
}

/// Validate dimensions and bounds ordering.
fn check(lp: &LinearProgram) -> Result<()> {
    let n = lp.objective.len();
    if lp.lower.len() != n || lp.upper.len() != n {
        return Err(Error::InvalidSpec(
            "lp bounds length mismatch".to_string(),
        ));
    }
    for j in 0..n {
        if lp.lower[j] > lp.upper[j] || !lp.lower[j].is_finite() || !lp.upper[j].is_finite() {
            return Err(Error::InvalidSpec(format!(
                "lp bounds disordered for variable {j}: [{}, {}]",
                lp.lower[j], lp.upper[j]
            )));
        }
    }
    for c in &lp.constraints {
        for &(j, _) in &c.coeffs {
            if j >= n {
                return Err(Error::InvalidSpec(format!(
                    "constraint `{}` references variable {j} out of range",
                    c.label
                )));
            }
        }
    }
    Ok(())
}

/// Build the phase-1 tableau for the shifted problem and drive the
/// artificial sum to zero. Returns the tableau ready for phase 2, or `None`
/// when infeasible.
fn phase1(lp: &LinearProgram) -> Result<Option<Tableau>> {
    let n = lp.objective.len();
    let shift: Vec<f64> = lp.lower.clone();
    let ubruns: Vec<f64> = (0..n).map(|j| lp.upper[j] - lp.lower[j]).collect();

    // Rows: every constraint (as >=, shifted), plus every finite upper range
    // (as x'_j <= u_j).
    struct Row {
        coeffs: Vec<(usize, f64)>,
        rhs: f64,
        ge: bool,
    }
    let mut rows: Vec<Row> = Vec::new();
    for c in &lp.constraints {
        let mut rhs = c.rhs;
        for &(j, a) in &c.coeffs {
            rhs -= a * shift[j];
        }
        rows.push(Row {
            coeffs: c.coeffs.clone(),
            rhs,
            ge: true,
        });
    }
    for (j, &u) in ubruns.iter().enumerate() {
        rows.push(Row {
            coeffs: vec![(j, 1.0)],
            rhs: u,
            ge: false,
        });
    }

    let m = rows.len();
    let n_slack = m;
    // worst case one artificial per row
    let mut artificial_of_row: Vec<Option<usize>> = vec![None; m];
    let mut n_art = 0;
    // normalize: slack sign per row, artificial needed when rhs stays
    // positive for a >= row (surplus basic would be negative)
    for (r, row) in rows.iter_mut().enumerate() {
        if row.ge {
            // a.x - s = rhs
            if row.rhs > EPS {
                artificial_of_row[r] = Some(n_art);
                n_art += 1;
            } else {
                // flip to (-a).x + s = -rhs with s basic
                for c in row.coeffs.iter_mut() {
                    c.1 = -c.1;
                }
                row.rhs = -row.rhs;
                row.ge = false;
            }
        }
        // <= rows always start with their slack basic (rhs >= 0 since u >= 0)
    }

    let cols = n + n_slack + n_art + 1;
    let mut t = Tableau {
        rows: m,
        cols,
        a: vec![0.0; m * cols],
        basis: vec![usize::MAX; m],
        n_structural: n,
        n_slack,
        artificials: (0..n_art).map(|i| n + n_slack + i).collect(),
    };

    let mut art_seen = 0;
    for (r, row) in rows.iter().enumerate() {
        for &(j, a) in &row.coeffs {
            *t.at_mut(r, j) += a;
        }
        *t.at_mut(r, t.cols - 1) = row.rhs;
        let slack_col = n + r;
        if row.ge {
            // surplus with artificial
            *t.at_mut(r, slack_col) = -1.0;
            let art_col = n + n_slack + art_seen;
            art_seen += 1;
            *t.at_mut(r, art_col) = 1.0;
            t.basis[r] = art_col;
        } else {
            *t.at_mut(r, slack_col) = 1.0;
            t.basis[r] = slack_col;
        }
    }
    debug_assert_eq!(art_seen, n_art);

    if n_art > 0 {
        // phase-1 cost: sum of artificials, reduced against the basis
        let mut cost = vec![0.0; t.cols - 1];
        for &c in &t.artificials {
            cost[c] = 1.0;
        }
        let mut value = 0.0;
        for r in 0..m {
            if t.artificials.contains(&t.basis[r]) {
                for c in 0..t.cols - 1 {
                    cost[c] -= t.at(r, c);
                }
                value -= t.rhs(r);
            }
        }
        let allowed = t.cols - 1;
        let bounded = t.run(&mut cost, &mut value, allowed)?;
        debug_assert!(bounded, "phase-1 objective is bounded by construction");
        // value now holds -(sum of artificials)
        if -value > 1e-7 {
            return Ok(None);
        }
        // pivot remaining artificials out of the basis where possible
        for r in 0..m {
            if t.artificials.contains(&t.basis[r]) {
                let col = (0..n + n_slack).find(|&c| t.at(r, c).abs() > EPS);
                if let Some(c) = col {
                    t.pivot(r, c);
                }
                // a fully zero row is redundant; its artificial stays basic
                // at zero and never re-enters (phase 2 excludes artificials)
            }
        }
    }
    Ok(Some(t))
}

/// Solve the LP exactly. Infeasibility comes back with an irreducible
/// infeasible subset of constraint labels.
pub fn solve(lp: &LinearProgram) -> Result<LpOutcome> {
    check(lp)?;
    let n = lp.objective.len();
    match phase1(lp)? {
        None => {
            let irreducible = deletion_filter(lp)?;
            Ok(LpOutcome::Infeasible { irreducible })
        }
        Some(mut t) => {
            // phase-2 cost on the shifted variables
            let mut cost = vec![0.0; t.cols - 1];
            cost[..n].copy_from_slice(&lp.objective);
            let mut value = 0.0;
            for r in 0..t.rows {
                let b = t.basis[r];
                if b < t.cols - 1 && cost[b] != 0.0 {
                    let factor = cost[b];
                    for c in 0..t.cols - 1 {
                        cost[c] -= factor * t.at(r, c);
                    }
                    value -= factor * t.rhs(r);
                }
            }
            let allowed = t.n_structural + t.n_slack; // artificials stay out
            let bounded = t.run(&mut cost, &mut value, allowed)?;
            if !bounded {
                return Err(Error::InvalidSpec(
                    "lp unbounded below (unexpected for bounded boxes)".to_string(),
                ));
            }
            let mut x_shift = vec![0.0; n];
            for r in 0..t.rows {
                let b = t.basis[r];
                if b < n {
                    x_shift[b] = t.rhs(r);
                }
            }
            let x: Vec<f64> = (0..n).map(|j| lp.lower[j] + x_shift[j]).collect();
            let objective = lp.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
            Ok(LpOutcome::Optimal { x, objective })
        }
    }
}

/// Feasibility of the constraint set alone (phase 1 only).
fn feasible(lp: &LinearProgram) -> Result<bool> {
    Ok(phase1(lp)?.is_some())
}

/// Deletion filter: drop constraints one at a time, keeping only those whose
/// removal restores feasibility. What remains is irreducible.
fn deletion_filter(lp: &LinearProgram) -> Result<Vec<String>> {
    let mut active: Vec<usize> = (0..lp.constraints.len()).collect();
    let mut i = 0;
    while i < active.len() {
        let mut trial = lp.clone();
        let removed = active[i];
        trial.constraints = active
            .iter()
            .filter(|&&k| k != removed)
            .map(|&k| lp.constraints[k].clone())
            .collect();
        if !feasible(&trial)? {
            // still infeasible without it: drop permanently
            active.remove(i);
        } else {
            i += 1;
        }
    }
    Ok(active
        .into_iter()
        .map(|k| lp.constraints[k].label.clone())
        .collect())
}

/// Re-check a solution against every constraint and bound at a tolerance.
/// Returns violations as (label, violation magnitude).
pub fn violations(lp: &LinearProgram, x: &[f64], tol: f64) -> Vec<(String, f64)> {
    let mut out = Vec::new();
    for (j, &v) in x.iter().enumerate() {
        if v < lp.lower[j] - tol {
            out.push((format!("lb[{j}]"), lp.lower[j] - v));
        }
        if v > lp.upper[j] + tol {
            out.push((format!("ub[{j}]"), v - lp.upper[j]));
        }
    }
    for c in &lp.constraints {
        let slack = c.evaluate(x);
        if slack < -tol {
            out.push((c.label.clone(), -slack));
        }
    }
    out
}
