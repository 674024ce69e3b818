use super::quadrature::{gauss_legendre, lagrange_basis};
use super::{QFunction, TransitionError};
use nalgebra::DMatrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FellerOptions {
    /// Largest jump count `n` summed.
    pub n_max: usize,
    /// Stop once every entry of a layer is below this.
    pub layer_tol: f64,
    /// Gauss–Legendre nodes per panel.
    pub nodes: usize,
    /// Panel width is at most `panel_scale / sup q_x`.
    pub panel_scale: f64,
}

impl Default for FellerOptions {
    fn default() -> Self {
        Self {
            n_max: 64,
            layer_tol: 1e-14,
            nodes: 8,
            panel_scale: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FellerSeriesResult {
    pub s: f64,
    pub t: f64,
    /// `p^(n)(s, ·, t, ·)` for `n = 0, 1, …`.
    pub layers: Vec<DMatrix<f64>>,
    /// `Σ_n p^(n)(s, ·, t, ·)`.
    pub total: DMatrix<f64>,
    /// Whether the last layer fell below the tolerance.
    pub converged: bool,
    /// Largest entry of the last layer, over all start times of the grid.
    pub last_layer_max: f64,
}

impl FellerSeriesResult {
    /// `Σ_{k ≤ n} p^(k)(s, ·, t, ·)`.
    pub fn partial_sum(&self, n: usize) -> DMatrix<f64> {
        let dim = self.total.nrows();
        self.layers
            .iter()
            .take(n + 1)
            .fold(DMatrix::zeros(dim, dim), |acc, l| acc + l)
    }

    /// `1 - Σ_y p̄(s, x, t, y)` per start state.
    pub fn defect(&self) -> Vec<f64> {
        row_defect(&self.total)
    }
}

/// Row defects `1 - Σ_y P(x, y)`.
pub fn row_defect(p: &DMatrix<f64>) -> Vec<f64> {
    (0..p.nrows()).map(|x| 1.0 - p.row(x).sum()).collect()
}

/// `1 - p̄(0, x, t, S)` per start state.
pub fn honesty_defect(q: &QFunction, t: f64, opts: &FellerOptions) -> Result<Vec<f64>, TransitionError> {
    Ok(feller_series(q, 0.0, t, opts)?.defect())
}

/// Quadrature data shared by every panel of one time segment.
struct PanelRule {
    q_diag: Vec<f64>,
    jumps: DMatrix<f64>,
    /// `coef[j][k][x]`: weight of `Q̃ F_n(node k)` in row `x` of `F_{n+1}(target j)`.
    coef: Vec<Vec<Vec<f64>>>,
    /// `decay[j][x] = exp(-q_x (b - u_j))`.
    decay: Vec<Vec<f64>>,
}

struct Panel {
    b: f64,
    rule: usize,
}

impl PanelRule {
    fn new(generator: &DMatrix<f64>, h: f64, xi: &[f64], w: &[f64]) -> Self {
        let n = generator.nrows();
        let np = xi.len();
        let q_diag: Vec<f64> = (0..n).map(|x| -generator[(x, x)]).collect();
        let mut jumps = generator.clone();
        jumps.fill_diagonal(0.0);
        let targets: Vec<f64> = xi.iter().copied().chain(std::iter::once(-1.0)).collect();
        let mut coef = Vec::with_capacity(np + 1);
        let mut decay = Vec::with_capacity(np + 1);
        for &tau in &targets {
            let half = (1.0 - tau) / 2.0;
            let mut c = vec![vec![0.0; n]; np];
            for m in 0..np {
                let zeta = tau + half * (xi[m] + 1.0);
                let weight = half * w[m] * h / 2.0;
                let dist = (zeta - tau) * h / 2.0;
                let basis = lagrange_basis(xi, zeta);
                for x in 0..n {
                    let e = weight * (-q_diag[x] * dist).exp();
                    for k in 0..np {
                        c[k][x] += e * basis[k];
                    }
                }
            }
            coef.push(c);
            let to_end = (1.0 - tau) * h / 2.0;
            decay.push(q_diag.iter().map(|q| (-q * to_end).exp()).collect());
        }
        Self {
            q_diag,
            jumps,
            coef,
            decay,
        }
    }
}

/// The minimal transition function `p̄(s, x, t, y)` as a sum over jump counts.
pub fn feller_series(q: &QFunction, s: f64, t: f64, opts: &FellerOptions) -> Result<FellerSeriesResult, TransitionError> {
    if !(s.is_finite() && t.is_finite() && 0.0 <= s && s <= t) {
        return Err(TransitionError::Time(format!("need 0 <= s <= t, got s = {s}, t = {t}")));
    }
    let n = q.dim();
    if s == t {
        let id = DMatrix::identity(n, n);
        return Ok(FellerSeriesResult {
            s,
            t,
            layers: vec![id.clone()],
            total: id,
            converged: true,
            last_layer_max: 0.0,
        });
    }
    let np = opts.nodes.max(1);
    let (xi, w) = gauss_legendre(np);
    let bound = q.bound();
    let max_width = if bound > 0.0 { opts.panel_scale / bound } else { f64::INFINITY };

    let mut cuts = vec![s];
    cuts.extend(q.breaks().iter().copied().filter(|&b| b > s && b < t));
    cuts.push(t);
    let mut rules = Vec::new();
    let mut panels = Vec::new();
    for seg in cuts.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let count = ((b - a) / max_width).ceil().max(1.0) as usize;
        let h = (b - a) / count as f64;
        rules.push(PanelRule::new(q.generator_at(a), h, &xi, &w));
        for i in 0..count {
            let end = if i + 1 == count { b } else { a + (i + 1) as f64 * h };
            panels.push(Panel {
                b: end,
                rule: rules.len() - 1,
            });
        }
    }

    // layer 0: no jump, survival exp(-∫_u^t q_x)
    let mut tail = vec![0.0_f64; n];
    let mut layer: Vec<Vec<DMatrix<f64>>> = vec![Vec::new(); panels.len()];
    for p in (0..panels.len()).rev() {
        let rule = &rules[panels[p].rule];
        layer[p] = rule
            .decay
            .iter()
            .map(|d| DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(n, (0..n).map(|x| d[x] * (-tail[x]).exp()))))
            .collect();
        let h = panels[p].b - if p == 0 { s } else { panels[p - 1].b };
        for x in 0..n {
            tail[x] += rule.q_diag[x] * h;
        }
    }
    let mut layers = vec![layer[0][np].clone()];
    let mut total = layer[0][np].clone();
    let mut last_layer_max = max_entry(&layer);
    let mut converged = last_layer_max < opts.layer_tol;

    for index in 1..=opts.n_max {
        if converged {
            break;
        }
        let mut next: Vec<Vec<DMatrix<f64>>> = vec![Vec::new(); panels.len()];
        for p in (0..panels.len()).rev() {
            let rule = &rules[panels[p].rule];
            let g: Vec<DMatrix<f64>> = layer[p][..np].iter().map(|f| &rule.jumps * f).collect();
            let after = if p + 1 < panels.len() { Some(&next[p + 1][np]) } else { None };
            let mut vals = Vec::with_capacity(np + 1);
            for j in 0..=np {
                let mut f = DMatrix::zeros(n, n);
                for (k, gk) in g.iter().enumerate() {
                    let c = &rule.coef[j][k];
                    for y in 0..n {
                        for x in 0..n {
                            f[(x, y)] += c[x] * gk[(x, y)];
                        }
                    }
                }
                if let Some(after) = after {
                    let d = &rule.decay[j];
                    for y in 0..n {
                        for x in 0..n {
                            f[(x, y)] += d[x] * after[(x, y)];
                        }
                    }
                }
                vals.push(f);
            }
            next[p] = vals;
        }
        layer = next;
        last_layer_max = max_entry(&layer);
        if !last_layer_max.is_finite() {
            return Err(TransitionError::Quadrature { layer: index });
        }
        total += &layer[0][np];
        layers.push(layer[0][np].clone());
        converged = last_layer_max < opts.layer_tol;
    }
    Ok(FellerSeriesResult {
        s,
        t,
        layers,
        total,
        converged,
        last_layer_max,
    })
}

fn max_entry(layer: &[Vec<DMatrix<f64>>]) -> f64 {
    layer
        .iter()
        .flatten()
        .flat_map(|m| m.iter())
        .fold(0.0, |acc: f64, v| if v.is_nan() { f64::NAN } else { acc.max(v.abs()) })
}

/// `max |P(s,t) P(t,u) - P(s,u)|` for the Feller series.
pub fn kc_residual(q: &QFunction, s: f64, t: f64, u: f64, opts: &FellerOptions) -> Result<f64, TransitionError> {
    let st = feller_series(q, s, t, opts)?.total;
    let tu = feller_series(q, t, u, opts)?.total;
    let su = feller_series(q, s, u, opts)?.total;
    Ok((&st * &tu - su).amax())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_jump_layer_is_exponential_survival() {
        let g = DMatrix::from_row_slice(2, 2, &[-1.5, 1.5, 0.0, 0.0]);
        let q = QFunction::homogeneous(g).unwrap();
        let r = feller_series(&q, 0.0, 2.0, &FellerOptions::default()).unwrap();
        assert!((r.layers[0][(0, 0)] - (-3.0_f64).exp()).abs() < 1e-15);
        assert_eq!(r.layers[0][(1, 1)], 1.0);
        assert!((r.layers[1][(0, 1)] - (1.0 - (-3.0_f64).exp())).abs() < 1e-13);
        assert!(r.converged);
    }

    #[test]
    fn identity_at_equal_times() {
        let q = QFunction::homogeneous(DMatrix::from_row_slice(1, 1, &[0.0])).unwrap();
        let r = feller_series(&q, 1.0, 1.0, &FellerOptions::default()).unwrap();
        assert_eq!(r.total[(0, 0)], 1.0);
        assert!(feller_series(&q, 2.0, 1.0, &FellerOptions::default()).is_err());
    }

    #[test]
    fn erlang_two_step_chain() {
        // 0 -> 1 -> 2 at unit rate: p(0,2) = 1 - e^{-t}(1 + t)
        let g = DMatrix::from_row_slice(3, 3, &[-1.0, 1.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0, 0.0]);
        let q = QFunction::homogeneous(g).unwrap();
        let t = 1.7;
        let r = feller_series(&q, 0.0, t, &FellerOptions::default()).unwrap();
        let exact = 1.0 - (-t).exp() * (1.0 + t);
        assert!((r.total[(0, 2)] - exact).abs() < 1e-13);
        assert!((r.layers[1][(0, 1)] - t * (-t).exp()).abs() < 1e-13);
    }

    #[test]
    fn leaky_generator_loses_mass() {
        let g = DMatrix::from_row_slice(1, 1, &[-0.5]);
        let q = QFunction::leaky(g).unwrap();
        let r = feller_series(&q, 0.0, 2.0, &FellerOptions::default()).unwrap();
        assert!((r.defect()[0] - (1.0 - (-1.0_f64).exp())).abs() < 1e-15);
    }
}
