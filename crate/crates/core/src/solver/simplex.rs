//! Dense two-phase tableau simplex with Bland's anti-cycling rule.
//!
//! Solves `min c·x` subject to `A_eq x = b_eq`, `A_ub x ≤ b_ub`, `x ≥ 0`.

const PIVOT_TOL: f64 = 1e-11;
const FEASIBILITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub a_eq: Vec<Vec<f64>>,
    pub b_eq: Vec<f64>,
    pub a_ub: Vec<Vec<f64>>,
    pub b_ub: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { x: Vec<f64>, objective: f64, pivots: usize },
    Infeasible,
    Unbounded,
}

struct Tableau {
    /// `rows × (cols + 1)`, last column is the right-hand side.
    t: Vec<Vec<f64>>,
    basis: Vec<usize>,
    cols: usize,
    pivots: usize,
}

impl Tableau {
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
        self.pivots += 1;
    }

    /// Minimizes `cost·x` over columns `allowed`. Returns false if unbounded.
    fn optimize(&mut self, cost: &[f64], allowed: &dyn Fn(usize) -> bool) -> bool {
        let rhs = self.cols;
        loop {
            // reduced costs d_j = c_j - c_B B^{-1} A_j
            let mut entering = None;
            for j in (0..self.cols).filter(|&j| allowed(j)) {
                if self.basis.contains(&j) {
                    continue;
                }
                let d = cost[j] - self.basis.iter().enumerate().map(|(i, &b)| cost[b] * self.t[i][j]).sum::<f64>();
                if d < -PIVOT_TOL {
                    entering = Some(j);
                    break;
                }
            }
            let Some(c) = entering else { return true };
            let mut leave: Option<(usize, f64)> = None;
            for (i, row) in self.t.iter().enumerate() {
                if row[c] > PIVOT_TOL {
                    let ratio = row[rhs] / row[c];
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((li, lr)) => {
                            if ratio < lr - 1e-14 || (ratio <= lr + 1e-14 && self.basis[i] < self.basis[li]) {
                                Some((i, ratio))
                            } else {
                                Some((li, lr))
                            }
                        }
                    };
                }
            }
            let Some((r, _)) = leave else { return false };
            self.pivot(r, c);
        }
    }
}

pub fn solve_lp(lp: &LinearProgram) -> LpOutcome {
    let n = lp.objective.len();
    let m_eq = lp.a_eq.len();
    let m_ub = lp.a_ub.len();
    let m = m_eq + m_ub;
    // columns: x (n), slacks (m_ub), artificials (m)
    let slack0 = n;
    let art0 = n + m_ub;
    let cols = art0 + m;
    let mut t = Vec::with_capacity(m);
    for (i, (row, &b)) in lp.a_eq.iter().zip(&lp.b_eq).chain(lp.a_ub.iter().zip(&lp.b_ub)).enumerate() {
        let mut r = vec![0.0; cols + 1];
        r[..n].copy_from_slice(row);
        if i >= m_eq {
            r[slack0 + i - m_eq] = 1.0;
        }
        r[cols] = b;
        if b < 0.0 {
            for v in r.iter_mut() {
                *v = -*v;
            }
        }
        r[art0 + i] = 1.0;
        t.push(r);
    }
    let mut tab = Tableau {
        t,
        basis: (art0..art0 + m).collect(),
        cols,
        pivots: 0,
    };
    let phase1: Vec<f64> = (0..cols).map(|j| if j >= art0 { 1.0 } else { 0.0 }).collect();
    tab.optimize(&phase1, &|_| true);
    let infeasibility: f64 = tab
        .basis
        .iter()
        .enumerate()
        .filter(|&(_, &b)| b >= art0)
        .map(|(i, _)| tab.t[i][cols])
        .sum();
    if infeasibility > FEASIBILITY_TOL {
        return LpOutcome::Infeasible;
    }
    // drive remaining artificials out of the basis where possible
    for r in 0..m {
        if tab.basis[r] >= art0 {
            if let Some(c) = (0..art0).find(|&j| tab.t[r][j].abs() > PIVOT_TOL) {
                tab.pivot(r, c);
            }
        }
    }
    let mut phase2 = lp.objective.clone();
    phase2.resize(cols, 0.0);
    if !tab.optimize(&phase2, &|j| j < art0) {
        return LpOutcome::Unbounded;
    }
    let mut x = vec![0.0; n];
    for (i, &b) in tab.basis.iter().enumerate() {
        if b < n {
            x[b] = tab.t[i][cols].max(0.0);
        }
    }
    let objective = x.iter().zip(&lp.objective).map(|(a, b)| a * b).sum();
    LpOutcome::Optimal {
        x,
        objective,
        pivots: tab.pivots,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn optimal(o: LpOutcome) -> (Vec<f64>, f64) {
        match o {
            LpOutcome::Optimal { x, objective, .. } => (x, objective),
            other => panic!("expected optimum, got {other:?}"),
        }
    }

    #[test]
    fn textbook_maximization() {
        // max 3x + 5y, x ≤ 4, 2y ≤ 12, 3x + 2y ≤ 18 -> (2, 6), 36
        let lp = LinearProgram {
            objective: vec![-3.0, -5.0],
            a_eq: vec![],
            b_eq: vec![],
            a_ub: vec![vec![1.0, 0.0], vec![0.0, 2.0], vec![3.0, 2.0]],
            b_ub: vec![4.0, 12.0, 18.0],
        };
        let (x, obj) = optimal(solve_lp(&lp));
        assert!((obj + 36.0).abs() < 1e-12);
        assert!((x[0] - 2.0).abs() < 1e-12 && (x[1] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn equality_with_negative_rhs() {
        // min x + 2y, -x - y = -3, y ≥ 1 written as -y ≤ -1
        let lp = LinearProgram {
            objective: vec![1.0, 2.0],
            a_eq: vec![vec![-1.0, -1.0]],
            b_eq: vec![-3.0],
            a_ub: vec![vec![0.0, -1.0]],
            b_ub: vec![-1.0],
        };
        let (x, obj) = optimal(solve_lp(&lp));
        assert!((obj - 4.0).abs() < 1e-12);
        assert!((x[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn infeasible_and_unbounded() {
        let lp = LinearProgram {
            objective: vec![1.0],
            a_eq: vec![vec![1.0]],
            b_eq: vec![1.0],
            a_ub: vec![vec![1.0]],
            b_ub: vec![0.5],
        };
        assert_eq!(solve_lp(&lp), LpOutcome::Infeasible);
        let lp = LinearProgram {
            objective: vec![-1.0, 0.0],
            a_eq: vec![vec![1.0, -1.0]],
            b_eq: vec![0.0],
            a_ub: vec![],
            b_ub: vec![],
        };
        assert_eq!(solve_lp(&lp), LpOutcome::Unbounded);
    }

    #[test]
    fn redundant_equalities() {
        let lp = LinearProgram {
            objective: vec![1.0, 1.0],
            a_eq: vec![vec![1.0, 1.0], vec![2.0, 2.0]],
            b_eq: vec![1.0, 2.0],
            a_ub: vec![],
            b_ub: vec![],
        };
        let (_, obj) = optimal(solve_lp(&lp));
        assert!((obj - 1.0).abs() < 1e-12);
    }
}
