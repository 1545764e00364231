use super::{
    LinearProgram, LpError, Relation, Solution, Status, FEAS_TOL, MAX_ITERATIONS, OPT_TOL,
};

const PIVOT_TOL: f64 = 1e-9;

/// Dense tableau over the shifted problem `v' = v - lo`, with one
/// upper-bound row per variable appended after the user rows.
struct Tableau {
    m: usize,
    cols: usize,
    data: Vec<f64>,
    basis: Vec<usize>,
    d: Vec<f64>,
    artificial: Vec<bool>,
    iterations: usize,
}

impl Tableau {
    fn width(&self) -> usize {
        self.cols + 1
    }

    fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.width() + c]
    }

    fn rhs(&self, r: usize) -> f64 {
        self.at(r, self.cols)
    }

    fn pivot(&mut self, r: usize, e: usize) {
        let w = self.width();
        let p = self.data[r * w + e];
        for v in &mut self.data[r * w..(r + 1) * w] {
            *v /= p;
        }
        let (before, rest) = self.data.split_at_mut(r * w);
        let (prow, after) = rest.split_at_mut(w);
        for row in before.chunks_exact_mut(w).chain(after.chunks_exact_mut(w)) {
            let f = row[e];
            if f != 0.0 {
                for (x, &pv) in row.iter_mut().zip(prow.iter()) {
                    *x -= f * pv;
                }
                row[e] = 0.0;
            }
        }
        let f = self.d[e];
        if f != 0.0 {
            for (x, &pv) in self.d.iter_mut().zip(prow.iter()) {
                *x -= f * pv;
            }
            self.d[e] = 0.0;
        }
        self.basis[r] = e;
    }

    /// Runs simplex iterations on the current cost row until optimal.
    /// Returns `false` if the problem is unbounded.
    fn run(&mut self) -> Result<bool, LpError> {
        let bland_after = 2 * (self.m + self.cols);
        let mut phase_iters = 0usize;
        let mut in_basis = vec![false; self.cols];
        for &b in &self.basis {
            in_basis[b] = true;
        }
        loop {
            let bland = phase_iters >= bland_after;
            let mut enter = None;
            let mut best = -OPT_TOL;
            for j in 0..self.cols {
                if in_basis[j] || self.artificial[j] {
                    continue;
                }
                let dj = self.d[j];
                if dj < best {
                    enter = Some(j);
                    if bland {
                        break;
                    }
                    best = dj;
                }
            }
            let Some(e) = enter else {
                return Ok(true);
            };

            let mut leave: Option<(usize, f64, f64)> = None;
            for r in 0..self.m {
                let a = self.at(r, e);
                if a <= PIVOT_TOL {
                    continue;
                }
                let ratio = self.rhs(r).max(0.0) / a;
                leave = match leave {
                    None => Some((r, ratio, a)),
                    Some((lr, lratio, la)) => {
                        let tie = (ratio - lratio).abs() <= 1e-12 * (1.0 + lratio.abs());
                        let better = if tie {
                            if bland {
                                self.basis[r] < self.basis[lr]
                            } else {
                                a > la
                            }
                        } else {
                            ratio < lratio
                        };
                        if better {
                            Some((r, ratio, a))
                        } else {
                            Some((lr, lratio, la))
                        }
                    }
                };
            }
            let Some((r, _, _)) = leave else {
                return Ok(false);
            };

            self.iterations += 1;
            phase_iters += 1;
            if self.iterations > MAX_ITERATIONS {
                return Err(LpError::Stalled {
                    iterations: self.iterations,
                });
            }
            in_basis[self.basis[r]] = false;
            in_basis[e] = true;
            self.pivot(r, e);
        }
    }
}

/// Solves `lp` with a two-phase dense tableau simplex.
///
/// Dantzig pricing is used until a phase has run `2·(rows+columns)`
/// pivots, after which Bland's rule takes over to break cycling.
pub fn solve(lp: &LinearProgram) -> Result<Solution, LpError> {
    lp.check()?;
    let n = lp.n_vars();
    let m_user = lp.rows.len();
    let m = m_user + n;

    // Normalized rows: coefficients (dense), relation, rhs, and sign flip.
    let mut rows: Vec<(Vec<f64>, Relation, f64, f64)> = Vec::with_capacity(m);
    for row in &lp.rows {
        let mut a = vec![0.0; n];
        for &(j, c) in &row.coeffs {
            a[j] += c;
        }
        let shift: f64 = a.iter().zip(&lp.bounds).map(|(c, b)| c * b.0).sum();
        rows.push((a, row.rel, row.rhs - shift, 1.0));
    }
    for (j, &(lo, hi)) in lp.bounds.iter().enumerate() {
        let mut a = vec![0.0; n];
        a[j] = 1.0;
        rows.push((a, Relation::Le, hi - lo, 1.0));
    }
    for row in &mut rows {
        if row.2 < 0.0 {
            for c in &mut row.0 {
                *c = -*c;
            }
            row.2 = -row.2;
            row.1 = match row.1 {
                Relation::Le => Relation::Ge,
                Relation::Ge => Relation::Le,
                Relation::Eq => Relation::Eq,
            };
            row.3 = -1.0;
        }
    }

    let n_slack = rows.iter().filter(|r| r.1 != Relation::Eq).count();
    let n_art = rows.iter().filter(|r| r.1 != Relation::Le).count();
    let cols = n + n_slack + n_art;
    let w = cols + 1;
    let mut data = vec![0.0; m * w];
    let mut basis = vec![0; m];
    let mut ident = vec![0; m];
    let mut artificial = vec![false; cols];
    let mut next_slack = n;
    let mut next_art = n + n_slack;
    for (r, (a, rel, b, _)) in rows.iter().enumerate() {
        let line = &mut data[r * w..(r + 1) * w];
        line[..n].copy_from_slice(a);
        line[cols] = *b;
        match rel {
            Relation::Le => {
                line[next_slack] = 1.0;
                basis[r] = next_slack;
                ident[r] = next_slack;
                next_slack += 1;
            }
            Relation::Ge | Relation::Eq => {
                if *rel == Relation::Ge {
                    line[next_slack] = -1.0;
                    next_slack += 1;
                }
                line[next_art] = 1.0;
                artificial[next_art] = true;
                basis[r] = next_art;
                ident[r] = next_art;
                next_art += 1;
            }
        }
    }

    let mut t = Tableau {
        m,
        cols,
        data,
        basis,
        d: vec![0.0; cols],
        artificial,
        iterations: 0,
    };

    // Phase 1: minimize the sum of artificials.
    if n_art > 0 {
        for r in 0..m {
            if t.artificial[t.basis[r]] {
                for j in 0..cols {
                    if !t.artificial[j] {
                        t.d[j] -= t.at(r, j);
                    }
                }
            }
        }
        t.run()?;
        let infeas: f64 = (0..m)
            .filter(|&r| t.artificial[t.basis[r]])
            .map(|r| t.rhs(r))
            .sum();
        let scale = rows.iter().map(|r| r.2).fold(1.0, f64::max);
        if infeas > FEAS_TOL * scale {
            return Ok(Solution {
                status: Status::Infeasible,
                values: Vec::new(),
                objective: f64::NAN,
                iterations: t.iterations,
                duals: Vec::new(),
                bound_duals: Vec::new(),
            });
        }
        // Drive zero-level artificials out of the basis where possible;
        // rows where that fails are redundant and stay inert.
        for r in 0..m {
            if !t.artificial[t.basis[r]] {
                continue;
            }
            let mut best: Option<(usize, f64)> = None;
            for j in 0..cols {
                let a = t.at(r, j).abs();
                if !t.artificial[j] && a > PIVOT_TOL && best.map_or(true, |(_, b)| a > b) {
                    best = Some((j, a));
                }
            }
            if let Some((j, _)) = best {
                t.data[r * w + cols] = 0.0;
                t.pivot(r, j);
            }
        }
    }

    // Phase 2.
    let cost = |j: usize| if j < n { lp.objective[j] } else { 0.0 };
    for j in 0..cols {
        t.d[j] = cost(j) - (0..m).map(|r| cost(t.basis[r]) * t.at(r, j)).sum::<f64>();
    }
    if !t.run()? {
        return Ok(Solution {
            status: Status::Unbounded,
            values: Vec::new(),
            objective: f64::NEG_INFINITY,
            iterations: t.iterations,
            duals: Vec::new(),
            bound_duals: Vec::new(),
        });
    }

    let mut values: Vec<f64> = lp.bounds.iter().map(|b| b.0).collect();
    for r in 0..m {
        let b = t.basis[r];
        if b < n {
            values[b] += t.rhs(r);
        }
    }
    let y: Vec<f64> = (0..m).map(|r| -t.d[ident[r]] * rows[r].3).collect();
    Ok(Solution {
        status: Status::Optimal,
        objective: lp.objective_value(&values),
        values,
        iterations: t.iterations,
        duals: y[..m_user].to_vec(),
        bound_duals: y[m_user..].to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-7
    }

    #[test]
    fn textbook_maximization() {
        // max 3x + 5y, x <= 4, 2y <= 12, 3x + 2y <= 18  ->  (2, 6), 36
        let mut lp = LinearProgram::new(2, 0.0, 100.0);
        lp.objective = vec![-3.0, -5.0];
        lp.add_row(vec![(0, 1.0)], Relation::Le, 4.0);
        lp.add_row(vec![(1, 2.0)], Relation::Le, 12.0);
        lp.add_row(vec![(0, 3.0), (1, 2.0)], Relation::Le, 18.0);
        let s = solve(&lp).unwrap();
        assert_eq!(s.status, Status::Optimal);
        assert!(close(s.values[0], 2.0) && close(s.values[1], 6.0));
        assert!(close(s.objective, -36.0));
        // Known shadow prices 0, 1.5, 1 (sign flipped for minimization).
        assert!(close(s.duals[0], 0.0));
        assert!(close(s.duals[1], -1.5));
        assert!(close(s.duals[2], -1.0));
    }

    #[test]
    fn equality_and_shifted_bounds() {
        let mut lp = LinearProgram::new(2, 0.0, 64.0);
        lp.bounds[0] = (3.0, 10.0);
        lp.objective = vec![1.0, 1.0];
        lp.add_row(vec![(0, 1.0), (1, -1.0)], Relation::Eq, -2.0);
        let s = solve(&lp).unwrap();
        assert_eq!(s.status, Status::Optimal);
        assert!(close(s.values[0], 3.0) && close(s.values[1], 5.0));
    }

    #[test]
    fn upper_bound_binds() {
        let mut lp = LinearProgram::new(1, -5.0, 7.0);
        lp.objective = vec![-2.0];
        let s = solve(&lp).unwrap();
        assert!(close(s.values[0], 7.0));
        assert!(close(s.bound_duals[0], -2.0));
    }

    #[test]
    fn infeasible_detected() {
        let mut lp = LinearProgram::new(2, 0.0, 64.0);
        lp.add_row(vec![(0, 1.0), (1, 1.0)], Relation::Ge, 200.0);
        assert_eq!(solve(&lp).unwrap().status, Status::Infeasible);

        let mut lp = LinearProgram::new(1, 0.0, 64.0);
        lp.add_row(vec![(0, 1.0)], Relation::Le, 1.0);
        lp.add_row(vec![(0, 1.0)], Relation::Ge, 2.0);
        assert_eq!(solve(&lp).unwrap().status, Status::Infeasible);
    }

    #[test]
    fn redundant_equalities() {
        let mut lp = LinearProgram::new(3, 0.0, 64.0);
        lp.objective = vec![1.0, 2.0, 3.0];
        lp.add_row(vec![(0, 1.0), (1, 1.0), (2, 1.0)], Relation::Eq, 10.0);
        lp.add_row(vec![(0, 2.0), (1, 2.0), (2, 2.0)], Relation::Eq, 20.0);
        lp.add_row(vec![(0, 1.0)], Relation::Le, 4.0);
        let s = solve(&lp).unwrap();
        assert_eq!(s.status, Status::Optimal);
        assert!(close(s.objective, 4.0 + 12.0));
    }

    #[test]
    fn degenerate_vertex() {
        // Several constraints meet at the optimum (0, 0).
        let mut lp = LinearProgram::new(2, 0.0, 64.0);
        lp.objective = vec![1.0, 1.0];
        lp.add_row(vec![(0, 1.0), (1, -1.0)], Relation::Le, 0.0);
        lp.add_row(vec![(0, -1.0), (1, 1.0)], Relation::Le, 0.0);
        lp.add_row(vec![(0, 1.0), (1, 1.0)], Relation::Ge, 0.0);
        let s = solve(&lp).unwrap();
        assert!(close(s.objective, 0.0));
    }

    #[test]
    fn malformed_rejected() {
        let mut lp = LinearProgram::new(1, 0.0, 1.0);
        lp.add_row(vec![(3, 1.0)], Relation::Le, 1.0);
        assert!(matches!(solve(&lp), Err(LpError::Malformed(_))));
        let mut lp = LinearProgram::new(1, 2.0, 1.0);
        lp.objective[0] = 1.0;
        assert!(matches!(solve(&lp), Err(LpError::Malformed(_))));
    }
}
