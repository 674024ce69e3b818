use super::{QFunction, TransitionError};
use nalgebra::DMatrix;

/// Poisson tail mass below which the series is truncated.
pub const POISSON_TAIL: f64 = 1e-14;

/// Largest `Λt` handled in one Poisson mixture; longer horizons are split
/// into `2^k` equal steps and recombined by squaring.
const MAX_STEP_MASS: f64 = 30.0;

/// `e^{tQ}` for a homogeneous Q-function.
pub fn uniformization(q: &QFunction, t: f64) -> Result<DMatrix<f64>, TransitionError> {
    if !q.is_homogeneous() {
        return Err(TransitionError::InvalidQ("uniformization needs a homogeneous Q-function".into()));
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(TransitionError::Time(format!("t = {t}")));
    }
    let n = q.dim();
    let lambda = q.bound();
    if lambda == 0.0 || t == 0.0 {
        return Ok(DMatrix::identity(n, n));
    }
    let mut halvings = 0;
    let mut step = t;
    while lambda * step > MAX_STEP_MASS {
        step /= 2.0;
        halvings += 1;
    }
    let p = DMatrix::identity(n, n) + q.generators()[0].clone() / lambda;
    let mass = lambda * step;
    let mut weight = (-mass).exp();
    let mut cumulative = weight;
    let mut power = DMatrix::identity(n, n);
    let mut out = &power * weight;
    let cap = (mass + 20.0 * mass.sqrt() + 60.0) as usize;
    for j in 1..=cap {
        if 1.0 - cumulative < POISSON_TAIL {
            break;
        }
        power = &power * &p;
        weight *= mass / j as f64;
        cumulative += weight;
        out += &power * weight;
    }
    for _ in 0..halvings {
        out = &out * &out;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_generator_gives_identity() {
        let q = QFunction::homogeneous(DMatrix::zeros(3, 3)).unwrap();
        assert_eq!(uniformization(&q, 2.0).unwrap(), DMatrix::identity(3, 3));
    }

    #[test]
    fn two_state_closed_form() {
        for lambda in [0.3, 1.0, 7.0] {
            let g = DMatrix::from_row_slice(2, 2, &[-lambda, lambda, 0.0, 0.0]);
            let q = QFunction::homogeneous(g).unwrap();
            for t in [0.1, 1.0, 3.0] {
                let p = uniformization(&q, t).unwrap();
                let jump = 1.0 - (-lambda * t).exp();
                assert!((p[(0, 1)] - jump).abs() < 1e-12);
                assert!((p[(0, 0)] - (1.0 - jump)).abs() < 1e-12);
                assert!((p[(1, 1)] - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn long_horizons_are_split() {
        // symmetric flip-flop: p_00(t) = (1 + e^{-2 t})/2
        let g = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]);
        let q = QFunction::homogeneous(g * 20.0).unwrap();
        let t = 4.0;
        let p = uniformization(&q, t).unwrap();
        let exact = 0.5 * (1.0 + (-40.0 * t).exp());
        assert!((p[(0, 0)] - exact).abs() < 1e-12);
        for x in 0..2 {
            assert!((p.row(x).sum() - 1.0).abs() < 1e-12);
        }
    }
}
