//! Dense solves of `M v = r` where `M` is a nonsingular M-matrix (diagonal
//! positive, off-diagonal nonpositive) and `r` may contain `+∞`.

use nalgebra::DMatrix;

/// States whose value is infinite: those with `r = +∞` and every state with
/// a path of nonzero off-diagonal entries of `M` into one of them.
pub(crate) fn infinite_states(mat: &DMatrix<f64>, rhs: &[f64]) -> Vec<bool> {
    let n = rhs.len();
    let mut inf: Vec<bool> = rhs.iter().map(|r| *r == f64::INFINITY).collect();
    let mut stack: Vec<usize> = (0..n).filter(|&x| inf[x]).collect();
    while let Some(y) = stack.pop() {
        for x in 0..n {
            if !inf[x] && x != y && mat[(x, y)] != 0.0 {
                inf[x] = true;
                stack.push(x);
            }
        }
    }
    inf
}

/// Returns `None` when the reduced system is numerically singular.
pub(crate) fn solve_with_infinities(mat: &DMatrix<f64>, rhs: &[f64]) -> Option<Vec<f64>> {
    let inf = infinite_states(mat, rhs);
    let keep: Vec<usize> = (0..rhs.len()).filter(|&x| !inf[x]).collect();
    let k = keep.len();
    let mut out = vec![f64::INFINITY; rhs.len()];
    if k == 0 {
        return Some(out);
    }
    let reduced = DMatrix::from_fn(k, k, |i, j| mat[(keep[i], keep[j])]);
    let b = nalgebra::DVector::from_iterator(k, keep.iter().map(|&x| rhs[x]));
    let sol = reduced.lu().solve(&b)?;
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    for (i, &x) in keep.iter().enumerate() {
        out[x] = sol[i];
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn infinity_propagates_upstream_only() {
        // 0 -> 1 -> 2, state 1 has infinite cost
        let m = DMatrix::from_row_slice(3, 3, &[1.0, -0.5, 0.0, 0.0, 1.0, -0.5, 0.0, 0.0, 1.0]);
        let v = solve_with_infinities(&m, &[1.0, f64::INFINITY, 2.0]).unwrap();
        assert_eq!(v[0], f64::INFINITY);
        assert_eq!(v[1], f64::INFINITY);
        assert_eq!(v[2], 2.0);
    }

    #[test]
    fn singular_is_none() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        assert!(solve_with_infinities(&m, &[1.0, 1.0]).is_none());
    }
}
