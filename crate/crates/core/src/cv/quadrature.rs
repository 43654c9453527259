//! Marginalising a normal random intercept out of one observation's
//! likelihood by adaptive Gauss–Hermite quadrature.

use std::sync::OnceLock;

use crate::model::family::{log_sum_exp, Likelihood};

pub const DEFAULT_NODES: usize = 30;
const FALLBACK_POINTS: usize = 4001;
const FALLBACK_HALF_WIDTH: f64 = 12.0;

/// Gauss–Hermite nodes and weights for `∫ exp(-x²) f(x) dx`.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    const EPS: f64 = 1e-14;
    const PIM4: f64 = 0.751_125_544_464_942_5;
    const MAXIT: usize = 20;
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    let mut z = 0.0;
    for i in 0..n.div_ceil(2) {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-0.16667),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..MAXIT {
            let mut p1 = PIM4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= EPS {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

fn default_rule() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_hermite(DEFAULT_NODES))
}

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

fn log_integrand(lik: &Likelihood, y: f64, eta: f64, sd: f64, r: f64) -> f64 {
    let z = r / sd;
    lik.log_density(y, eta + r) - HALF_LN_2PI - sd.ln() - 0.5 * z * z
}

/// Mode of the integrand by safeguarded Newton. `None` if the integrand
/// is not concave at the mode or the iteration fails.
fn find_mode(lik: &Likelihood, y: f64, eta: f64, sd: f64) -> Option<(f64, f64)> {
    let inv_var = 1.0 / (sd * sd);
    let mut r = 0.0;
    let mut f = log_integrand(lik, y, eta, sd, r);
    for _ in 0..200 {
        let (d1, d2) = lik.eta_derivatives(y, eta + r);
        let g = d1 - r * inv_var;
        let h = d2 - inv_var;
        if !(h < 0.0) || !g.is_finite() {
            return None;
        }
        let mut step = -g / h;
        let mut accepted = false;
        for _ in 0..60 {
            let cand = r + step;
            let fc = log_integrand(lik, y, eta, sd, cand);
            if fc.is_finite() && fc >= f - 1e-12 * f.abs().max(1.0) {
                r = cand;
                f = fc;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            return None;
        }
        if step.abs() <= 1e-10 * (1.0 + r.abs()) {
            let (_, d2) = lik.eta_derivatives(y, eta + r);
            let h = d2 - inv_var;
            return (h < 0.0).then_some((r, h));
        }
    }
    None
}

/// Outcome of one marginalisation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Marginal {
    pub log_density: f64,
    /// The trapezoid fallback was used.
    pub fallback: bool,
}

/// `log ∫ p(y | eta + r) normal(r | 0, sd) dr` with `nodes` adaptive
/// Gauss–Hermite nodes.
pub fn integrate_normal_intercept(lik: &Likelihood, y: f64, eta: f64, sd: f64, nodes: usize) -> Marginal {
    if !(sd > 0.0) {
        return Marginal { log_density: lik.log_density(y, eta), fallback: false };
    }
    let owned;
    let (x, w) = if nodes == DEFAULT_NODES {
        let r = default_rule();
        (&r.0, &r.1)
    } else {
        owned = gauss_hermite(nodes);
        (&owned.0, &owned.1)
    };
    match find_mode(lik, y, eta, sd) {
        Some((mode, h)) => {
            let scale = std::f64::consts::SQRT_2 / (-h).sqrt();
            let terms: Vec<f64> = x
                .iter()
                .zip(w)
                .map(|(xk, wk)| wk.ln() + xk * xk + log_integrand(lik, y, eta, sd, mode + scale * xk))
                .collect();
            Marginal { log_density: scale.ln() + log_sum_exp(&terms), fallback: false }
        }
        None => {
            log::warn!("quadrature mode search failed (y = {y}, eta = {eta}, sd = {sd}); using trapezoid grid");
            Marginal { log_density: trapezoid(lik, y, eta, sd, FALLBACK_POINTS, FALLBACK_HALF_WIDTH), fallback: true }
        }
    }
}

/// Trapezoid rule on `[-half_width * sd, half_width * sd]`.
pub fn trapezoid(lik: &Likelihood, y: f64, eta: f64, sd: f64, points: usize, half_width: f64) -> f64 {
    let a = -half_width * sd;
    let h = 2.0 * half_width * sd / (points - 1) as f64;
    let terms: Vec<f64> = (0..points)
        .map(|k| {
            let end = if k == 0 || k == points - 1 { 0.5f64.ln() } else { 0.0 };
            end + log_integrand(lik, y, eta, sd, a + k as f64 * h)
        })
        .collect();
    h.ln() + log_sum_exp(&terms)
}
