//! Dense two-phase simplex for the small linear programs used by the
//! completely-S test and the polytope projection code.
//!
//! Solves `maximize c'x subject to A x ≤ b, x ≥ 0` with Bland's rule, so it
//! terminates on degenerate problems. Intended for tens of variables.

const EPS: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { x: Vec<f64>, value: f64 },
    Infeasible,
    Unbounded,
}

impl LpOutcome {
    pub fn value(&self) -> Option<f64> {
        match self {
            LpOutcome::Optimal { value, .. } => Some(*value),
            _ => None,
        }
    }
}

struct Tableau {
    rows: Vec<Vec<f64>>,
    obj: Vec<f64>,
    basis: Vec<usize>,
    /// Columns that may never enter the basis.
    banned: Vec<bool>,
}

impl Tableau {
    fn width(&self) -> usize {
        self.obj.len()
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let w = self.width();
        let pv = self.rows[r][c];
        for k in 0..w {
            self.rows[r][k] /= pv;
        }
        let prow = self.rows[r].clone();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i != r {
                let f = row[c];
                if f != 0.0 {
                    for k in 0..w {
                        row[k] -= f * prow[k];
                    }
                }
            }
        }
        let f = self.obj[c];
        if f != 0.0 {
            for k in 0..w {
                self.obj[k] -= f * prow[k];
            }
        }
        self.basis[r] = c;
    }

    /// Runs Bland's-rule iterations. Returns false when unbounded.
    fn optimize(&mut self) -> bool {
        let rhs = self.width() - 1;
        loop {
            let entering = (0..rhs).find(|&c| !self.banned[c] && self.obj[c] < -EPS);
            let Some(c) = entering else { return true };
            let mut best: Option<(usize, f64)> = None;
            for (r, row) in self.rows.iter().enumerate() {
                if row[c] > EPS {
                    let ratio = row[rhs] / row[c];
                    best = match best {
                        None => Some((r, ratio)),
                        Some((br, bv)) => {
                            if ratio < bv - EPS
                                || (ratio <= bv + EPS && self.basis[r] < self.basis[br])
                            {
                                Some((r, ratio))
                            } else {
                                Some((br, bv))
                            }
                        }
                    };
                }
            }
            match best {
                None => return false,
                Some((r, _)) => self.pivot(r, c),
            }
        }
    }
}

/// Maximises `c'x` over `{x ≥ 0 : A x ≤ b}`.
pub fn maximize(c: &[f64], a: &[Vec<f64>], b: &[f64]) -> LpOutcome {
    let n = c.len();
    let m = a.len();
    let negative: Vec<usize> = (0..m).filter(|&i| b[i] < 0.0).collect();
    let n_art = negative.len();
    let width = n + m + n_art + 1;
    let rhs = width - 1;
    let mut rows = vec![vec![0.0; width]; m];
    let mut basis = vec![0; m];
    let mut art_of_row = vec![None; m];
    for (k, &i) in negative.iter().enumerate() {
        art_of_row[i] = Some(n + m + k);
    }
    for i in 0..m {
        let sign = if b[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            rows[i][j] = sign * a[i][j];
        }
        rows[i][n + i] = sign;
        rows[i][rhs] = sign * b[i];
        match art_of_row[i] {
            Some(col) => {
                rows[i][col] = 1.0;
                basis[i] = col;
            }
            None => basis[i] = n + i,
        }
    }
    let mut t = Tableau { rows, obj: vec![0.0; width], basis, banned: vec![false; width] };

    if n_art > 0 {
        for k in 0..n_art {
            t.obj[n + m + k] = 1.0;
        }
        for &i in &negative {
            for k in 0..width {
                t.obj[k] -= t.rows[i][k];
            }
        }
        t.optimize();
        if -t.obj[rhs] > 1e-8 * (1.0 + b.iter().fold(0.0_f64, |s, v| s.max(v.abs()))) {
            return LpOutcome::Infeasible;
        }
        // Drive zero-level artificials out of the basis where possible.
        for r in 0..m {
            if t.basis[r] >= n + m {
                if let Some(c) = (0..n + m).find(|&c| t.rows[r][c].abs() > EPS) {
                    t.pivot(r, c);
                }
            }
        }
        for k in 0..n_art {
            t.banned[n + m + k] = true;
        }
    }

    t.obj = vec![0.0; width];
    for j in 0..n {
        t.obj[j] = -c[j];
    }
    for r in 0..m {
        let bc = t.basis[r];
        let f = t.obj[bc];
        if f != 0.0 {
            let row = t.rows[r].clone();
            for k in 0..width {
                t.obj[k] -= f * row[k];
            }
        }
    }
    if !t.optimize() {
        return LpOutcome::Unbounded;
    }
    let mut x = vec![0.0; n];
    for (r, &bc) in t.basis.iter().enumerate() {
        if bc < n {
            x[bc] = t.rows[r][rhs];
        }
    }
    let value = c.iter().zip(&x).map(|(ci, xi)| ci * xi).sum();
    LpOutcome::Optimal { x, value }
}

/// Whether `{x ≥ 0 : A x ≤ b}` is nonempty.
pub fn feasible(a: &[Vec<f64>], b: &[f64]) -> bool {
    let n = a.first().map_or(0, Vec::len);
    !matches!(maximize(&vec![0.0; n], a, b), LpOutcome::Infeasible)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn textbook_problem() {
        // max 3x + 5y, x ≤ 4, 2y ≤ 12, 3x + 2y ≤ 18 → (2, 6), 36.
        let out = maximize(
            &[3.0, 5.0],
            &[vec![1.0, 0.0], vec![0.0, 2.0], vec![3.0, 2.0]],
            &[4.0, 12.0, 18.0],
        );
        match out {
            LpOutcome::Optimal { x, value } => {
                assert!((value - 36.0).abs() < 1e-9);
                assert!((x[0] - 2.0).abs() < 1e-9 && (x[1] - 6.0).abs() < 1e-9);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn needs_phase_one() {
        // min x + y s.t. x + y ≥ 2, x ≤ 3 → value 2.
        let out = maximize(&[-1.0, -1.0], &[vec![-1.0, -1.0], vec![1.0, 0.0]], &[-2.0, 3.0]);
        assert!((out.value().unwrap() + 2.0).abs() < 1e-9);
    }

    #[test]
    fn infeasible_and_unbounded() {
        assert_eq!(maximize(&[1.0], &[vec![1.0], vec![-1.0]], &[1.0, -2.0]), LpOutcome::Infeasible);
        assert_eq!(maximize(&[1.0, 0.0], &[vec![0.0, 1.0]], &[1.0]), LpOutcome::Unbounded);
    }

    #[test]
    fn degenerate_equalities() {
        // x + y = 1 written as two inequalities, maximise x.
        let out = maximize(&[1.0, 0.0], &[vec![1.0, 1.0], vec![-1.0, -1.0]], &[1.0, -1.0]);
        assert!((out.value().unwrap() - 1.0).abs() < 1e-9);
    }
}
