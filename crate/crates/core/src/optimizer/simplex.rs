//! Dense two-phase tableau simplex with Bland's rule, for problems
//! `min cᵀx  s.t.  rows, x ≥ 0`.

const EPS: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Cmp {
    Le,
    Ge,
    Eq,
}

#[derive(Clone, Debug)]
pub struct Row {
    pub a: Vec<f64>,
    pub cmp: Cmp,
    pub b: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LpOutcome {
    Optimal { x: Vec<f64>, objective: f64 },
    Infeasible,
    Unbounded,
}

struct Tableau {
    /// `m` constraint rows then the objective row; last column is the rhs.
    t: Vec<Vec<f64>>,
    basis: Vec<usize>,
    cols: usize,
}

impl Tableau {
    fn rhs(&self, r: usize) -> f64 {
        self.t[r][self.cols]
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.t[r][c];
        for v in self.t[r].iter_mut() {
            *v /= p;
        }
        let pivot_row = self.t[r].clone();
        for (i, row) in self.t.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[c];
            if f != 0.0 {
                for (v, pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
                row[c] = 0.0;
            }
        }
        self.basis[r] = c;
    }

    /// Minimizes the objective row over columns `< allowed`. Returns false
    /// when unbounded.
    fn run(&mut self, allowed: usize) -> bool {
        let m = self.basis.len();
        let obj = m;
        loop {
            let Some(enter) = (0..allowed).find(|&j| self.t[obj][j] < -EPS) else {
                return true;
            };
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..m {
                let a = self.t[r][enter];
                if a > EPS {
                    let ratio = self.rhs(r) / a;
                    leave = match leave {
                        None => Some((r, ratio)),
                        Some((lr, lratio)) => {
                            if ratio < lratio - EPS
                                || (ratio <= lratio + EPS && self.basis[r] < self.basis[lr])
                            {
                                Some((r, ratio))
                            } else {
                                Some((lr, lratio))
                            }
                        }
                    };
                }
            }
            match leave {
                Some((r, _)) => self.pivot(r, enter),
                None => return false,
            }
        }
    }
}

/// Rows are scaled to unit max coefficient before solving so that pu-per-kvar
/// sensitivities and kvar bounds share one tolerance.
pub fn solve_lp(c: &[f64], rows: &[Row]) -> LpOutcome {
    let n = c.len();
    let mut rows: Vec<Row> = rows
        .iter()
        .map(|r| {
            let s = r.a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if s > 0.0 {
                Row {
                    a: r.a.iter().map(|v| v / s).collect(),
                    cmp: r.cmp,
                    b: r.b / s,
                }
            } else {
                r.clone()
            }
        })
        .collect();
    // constant rows decide feasibility outright
    let mut kept = Vec::with_capacity(rows.len());
    for r in rows.drain(..) {
        if r.a.iter().all(|v| *v == 0.0) {
            let ok = match r.cmp {
                Cmp::Le => 0.0 <= r.b + EPS,
                Cmp::Ge => 0.0 >= r.b - EPS,
                Cmp::Eq => r.b.abs() <= EPS,
            };
            if !ok {
                return LpOutcome::Infeasible;
            }
        } else {
            kept.push(if r.b < 0.0 {
                Row {
                    a: r.a.iter().map(|v| -v).collect(),
                    cmp: match r.cmp {
                        Cmp::Le => Cmp::Ge,
                        Cmp::Ge => Cmp::Le,
                        Cmp::Eq => Cmp::Eq,
                    },
                    b: -r.b,
                }
            } else {
                r
            });
        }
    }
    let rows = kept;
    let m = rows.len();
    let n_slack = rows.iter().filter(|r| r.cmp != Cmp::Eq).count();
    let n_art = rows.iter().filter(|r| r.cmp != Cmp::Le).count();
    let cols = n + n_slack + n_art;
    let art_start = n + n_slack;

    let mut t = vec![vec![0.0; cols + 1]; m + 1];
    let mut basis = vec![0; m];
    let (mut si, mut ai) = (n, art_start);
    for (i, r) in rows.iter().enumerate() {
        t[i][..n].copy_from_slice(&r.a);
        t[i][cols] = r.b;
        match r.cmp {
            Cmp::Le => {
                t[i][si] = 1.0;
                basis[i] = si;
                si += 1;
            }
            Cmp::Ge => {
                t[i][si] = -1.0;
                si += 1;
                t[i][ai] = 1.0;
                basis[i] = ai;
                ai += 1;
            }
            Cmp::Eq => {
                t[i][ai] = 1.0;
                basis[i] = ai;
                ai += 1;
            }
        }
    }
    let mut tab = Tableau { t, basis, cols };

    if n_art > 0 {
        // phase 1: minimize the sum of artificials
        for j in art_start..cols {
            tab.t[m][j] = 1.0;
        }
        for i in 0..m {
            if tab.basis[i] >= art_start {
                for j in 0..=cols {
                    tab.t[m][j] -= tab.t[i][j];
                }
            }
        }
        tab.run(cols);
        if -tab.t[m][cols] > 1e-9 {
            return LpOutcome::Infeasible;
        }
        // drive zero-level artificials out of the basis
        let mut i = 0;
        while i < tab.basis.len() {
            if tab.basis[i] >= art_start {
                if let Some(j) = (0..art_start).find(|&j| tab.t[i][j].abs() > EPS) {
                    tab.pivot(i, j);
                } else {
                    // redundant row
                    tab.t.remove(i);
                    tab.basis.remove(i);
                    continue;
                }
            }
            i += 1;
        }
    }

    let m = tab.basis.len();
    let obj = m;
    tab.t[obj] = vec![0.0; cols + 1];
    tab.t[obj][..n].copy_from_slice(c);
    for i in 0..m {
        let f = tab.t[obj][tab.basis[i]];
        if f != 0.0 {
            for j in 0..=cols {
                tab.t[obj][j] -= f * tab.t[i][j];
            }
        }
    }
    if !tab.run(art_start) {
        return LpOutcome::Unbounded;
    }
    let mut x = vec![0.0; n];
    for (i, &b) in tab.basis.iter().enumerate() {
        if b < n {
            x[b] = tab.rhs(i).max(0.0);
        }
    }
    let objective = c.iter().zip(&x).map(|(a, b)| a * b).sum();
    LpOutcome::Optimal { x, objective }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(a: &[f64], cmp: Cmp, b: f64) -> Row {
        Row { a: a.to_vec(), cmp, b }
    }

    #[test]
    fn textbook_maximization() {
        // max 3x + 5y, x ≤ 4, 2y ≤ 12, 3x + 2y ≤ 18 → (2, 6), 36
        let out = solve_lp(
            &[-3.0, -5.0],
            &[
                row(&[1.0, 0.0], Cmp::Le, 4.0),
                row(&[0.0, 2.0], Cmp::Le, 12.0),
                row(&[3.0, 2.0], Cmp::Le, 18.0),
            ],
        );
        match out {
            LpOutcome::Optimal { x, objective } => {
                assert!((x[0] - 2.0).abs() < 1e-9 && (x[1] - 6.0).abs() < 1e-9);
                assert!((objective + 36.0).abs() < 1e-9);
            }
            o => panic!("{o:?}"),
        }
    }

    #[test]
    fn ge_and_eq_rows() {
        // min x + y, x + y ≥ 2, x − y = 1 → (1.5, 0.5)
        let out = solve_lp(
            &[1.0, 1.0],
            &[row(&[1.0, 1.0], Cmp::Ge, 2.0), row(&[1.0, -1.0], Cmp::Eq, 1.0)],
        );
        let LpOutcome::Optimal { x, .. } = out else { panic!("{out:?}") };
        assert!((x[0] - 1.5).abs() < 1e-9 && (x[1] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn infeasible_and_unbounded() {
        assert_eq!(
            solve_lp(&[1.0], &[row(&[1.0], Cmp::Le, 1.0), row(&[1.0], Cmp::Ge, 2.0)]),
            LpOutcome::Infeasible
        );
        assert_eq!(solve_lp(&[-1.0], &[row(&[1.0], Cmp::Ge, 1.0)]), LpOutcome::Unbounded);
        assert_eq!(solve_lp(&[1.0], &[row(&[0.0], Cmp::Ge, 1.0)]), LpOutcome::Infeasible);
    }

    #[test]
    fn degenerate_cycle_prone_problem_terminates() {
        // Beale's example, which cycles under the largest-coefficient rule
        let out = solve_lp(
            &[-0.75, 150.0, -0.02, 6.0],
            &[
                row(&[0.25, -60.0, -0.04, 9.0], Cmp::Le, 0.0),
                row(&[0.5, -90.0, -0.02, 3.0], Cmp::Le, 0.0),
                row(&[0.0, 0.0, 1.0, 0.0], Cmp::Le, 1.0),
            ],
        );
        let LpOutcome::Optimal { objective, .. } = out else { panic!("{out:?}") };
        assert!((objective + 0.05).abs() < 1e-9, "{objective}");
    }
}
