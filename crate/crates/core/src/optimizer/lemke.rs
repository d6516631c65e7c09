//! Lemke's complementary pivoting for `w = M z + q`, `w, z ≥ 0`, `wᵀz = 0`,
//! with a lexicographic ratio test so degenerate problems terminate.

const EPS: f64 = 1e-12;

#[derive(Debug, PartialEq)]
pub enum LcpOutcome {
    Solved(Vec<f64>),
    /// Secondary ray: for a convex QP this means the QP is infeasible.
    Ray,
}

pub fn solve_lcp(m: &[Vec<f64>], q: &[f64]) -> LcpOutcome {
    let n = q.len();
    if q.iter().all(|v| *v >= 0.0) {
        return LcpOutcome::Solved(vec![0.0; n]);
    }
    // columns: w 0..n, z n..2n, z0 2n, rhs 2n+1
    let z0 = 2 * n;
    let rhs = 2 * n + 1;
    let mut t = vec![vec![0.0; 2 * n + 2]; n];
    for i in 0..n {
        t[i][i] = 1.0;
        for j in 0..n {
            t[i][n + j] = -m[i][j];
        }
        t[i][z0] = -1.0;
        t[i][rhs] = q[i];
    }
    let mut basis: Vec<usize> = (0..n).collect();

    let pivot = |t: &mut Vec<Vec<f64>>, r: usize, c: usize| {
        let p = t[r][c];
        for v in t[r].iter_mut() {
            *v /= p;
        }
        let pr = t[r].clone();
        for (i, row) in t.iter_mut().enumerate() {
            if i != r {
                let f = row[c];
                if f != 0.0 {
                    for (v, pv) in row.iter_mut().zip(&pr) {
                        *v -= f * pv;
                    }
                    row[c] = 0.0;
                }
            }
        }
    };

    let mut r = (0..n)
        .min_by(|&a, &b| q[a].total_cmp(&q[b]).then(a.cmp(&b)))
        .expect("non-empty");
    pivot(&mut t, r, z0);
    let mut leaving = basis[r];
    basis[r] = z0;

    let max_iter = 100 * (n + 1) * (n + 1);
    for _ in 0..max_iter {
        let enter = if leaving < n { leaving + n } else { leaving - n };
        let cand: Vec<usize> = (0..n).filter(|&i| t[i][enter] > EPS).collect();
        if cand.is_empty() {
            return LcpOutcome::Ray;
        }
        // lexicographic minimum of (rhs, B⁻¹ row) / pivot entry
        let key = |i: usize, k: usize| -> f64 {
            let col = if k == 0 { rhs } else { k - 1 };
            t[i][col] / t[i][enter]
        };
        r = cand[0];
        for &i in &cand[1..] {
            for k in 0..=n {
                let (a, b) = (key(i, k), key(r, k));
                let tol = 1e-11 * a.abs().max(b.abs()).max(1.0);
                if a < b - tol {
                    r = i;
                    break;
                }
                if a > b + tol {
                    break;
                }
            }
        }
        // prefer z0 leaving when it ties
        if let Some(&i) = cand.iter().find(|&&i| basis[i] == z0) {
            if (key(i, 0) - key(r, 0)).abs() <= 1e-11 * key(r, 0).abs().max(1.0) {
                r = i;
            }
        }
        pivot(&mut t, r, enter);
        leaving = basis[r];
        basis[r] = enter;
        if leaving == z0 {
            let mut z = vec![0.0; n];
            for (i, &b) in basis.iter().enumerate() {
                if (n..2 * n).contains(&b) {
                    z[b - n] = t[i][rhs].max(0.0);
                }
            }
            return LcpOutcome::Solved(z);
        }
    }
    LcpOutcome::Ray
}

/// `min ½xᵀHx + cᵀx  s.t.  A x ≥ b, x ≥ 0` with `H` positive semidefinite.
/// Returns `None` when infeasible.
pub fn solve_qp(h: &[Vec<f64>], c: &[f64], a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = c.len();
    let mrows = b.len();
    let dim = n + mrows;
    let mut m = vec![vec![0.0; dim]; dim];
    let mut q = vec![0.0; dim];
    for i in 0..n {
        m[i][..n].copy_from_slice(&h[i]);
        for j in 0..mrows {
            m[i][n + j] = -a[j][i];
        }
        q[i] = c[i];
    }
    for j in 0..mrows {
        m[n + j][..n].copy_from_slice(&a[j]);
        q[n + j] = -b[j];
    }
    match solve_lcp(&m, &q) {
        LcpOutcome::Solved(z) => Some(z[..n].to_vec()),
        LcpOutcome::Ray => None,
    }
}
