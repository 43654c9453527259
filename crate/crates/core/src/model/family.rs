//! Observation models evaluated at a linear predictor.

use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal, Poisson};
use statrs::function::beta::beta_reg;
use statrs::function::gamma::{digamma, gamma_ur, ln_gamma};

use crate::multiverse::Family;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// A family with its dispersion fixed: the conditional distribution of one
/// observation given the linear predictor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Likelihood {
    /// Log link.
    Poisson,
    /// Log link, mean/shape parameterisation: variance = mu + mu^2 / shape.
    NegBinomial { shape: f64 },
    /// Identity link.
    Normal { sigma: f64 },
}

impl Likelihood {
    /// Builds the likelihood for `family`. `dispersion` is the negative
    /// binomial shape or the normal standard deviation and is ignored for
    /// Poisson.
    pub fn new(family: Family, dispersion: f64) -> Likelihood {
        match family {
            Family::Poisson => Likelihood::Poisson,
            Family::NegativeBinomial => Likelihood::NegBinomial { shape: dispersion },
            Family::Normal => Likelihood::Normal { sigma: dispersion },
        }
    }

    pub fn is_discrete(&self) -> bool {
        !matches!(self, Likelihood::Normal { .. })
    }

    pub fn mean(&self, eta: f64) -> f64 {
        match self {
            Likelihood::Normal { .. } => eta,
            _ => eta.exp(),
        }
    }

    pub fn log_density(&self, y: f64, eta: f64) -> f64 {
        match *self {
            Likelihood::Poisson => y * eta - eta.exp() - ln_gamma(y + 1.0),
            Likelihood::NegBinomial { shape } => {
                let log_shape = shape.ln();
                let log_denom = log_add_exp(log_shape, eta);
                ln_gamma(y + shape) - ln_gamma(shape) - ln_gamma(y + 1.0)
                    + shape * (log_shape - log_denom)
                    + y * (eta - log_denom)
            }
            Likelihood::Normal { sigma } => {
                let z = (y - eta) / sigma;
                -HALF_LN_2PI - sigma.ln() - 0.5 * z * z
            }
        }
    }

    /// First and second derivatives of the log density with respect to the
    /// linear predictor.
    pub fn eta_derivatives(&self, y: f64, eta: f64) -> (f64, f64) {
        match *self {
            Likelihood::Poisson => {
                let mu = eta.exp();
                (y - mu, -mu)
            }
            Likelihood::NegBinomial { shape } => {
                let p = sigmoid(eta - shape.ln());
                (y - (y + shape) * p, -(y + shape) * p * (1.0 - p))
            }
            Likelihood::Normal { sigma } => {
                let s2 = sigma * sigma;
                ((y - eta) / s2, -1.0 / s2)
            }
        }
    }

    /// Derivative of the log density with respect to the dispersion
    /// parameter (shape or sigma). Zero for Poisson.
    pub fn dispersion_derivative(&self, y: f64, eta: f64) -> f64 {
        match *self {
            Likelihood::Poisson => 0.0,
            Likelihood::NegBinomial { shape } => {
                let log_denom = log_add_exp(shape.ln(), eta);
                let mu = eta.exp();
                digamma(y + shape) - digamma(shape) + (shape.ln() - log_denom) + (mu - y) / (shape + mu)
            }
            Likelihood::Normal { sigma } => {
                let r = y - eta;
                -1.0 / sigma + r * r / (sigma * sigma * sigma)
            }
        }
    }

    /// P(Y <= y).
    pub fn cdf(&self, y: f64, eta: f64) -> f64 {
        match *self {
            Likelihood::Poisson => {
                if y < 0.0 {
                    0.0
                } else {
                    gamma_ur(y.floor() + 1.0, eta.exp())
                }
            }
            Likelihood::NegBinomial { shape } => {
                if y < 0.0 {
                    0.0
                } else {
                    let p = 1.0 - sigmoid(eta - shape.ln());
                    beta_reg(shape, y.floor() + 1.0, p)
                }
            }
            Likelihood::Normal { sigma } => standard_normal_cdf((y - eta) / sigma),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, eta: f64, rng: &mut R) -> f64 {
        match *self {
            Likelihood::Poisson => poisson_draw(eta.exp(), rng),
            Likelihood::NegBinomial { shape } => {
                let mu = eta.exp();
                let rate = Gamma::new(shape, mu / shape).map(|g| g.sample(rng)).unwrap_or(mu);
                poisson_draw(rate, rng)
            }
            Likelihood::Normal { sigma } => Normal::new(eta, sigma).map(|n| n.sample(rng)).unwrap_or(eta),
        }
    }
}

fn poisson_draw<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> f64 {
    if !(mean > 0.0) || !mean.is_finite() {
        return if mean.is_finite() { 0.0 } else { f64::INFINITY };
    }
    Poisson::new(mean).map(|p| p.sample(rng)).unwrap_or(0.0)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn standard_normal_cdf(z: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-z / std::f64::consts::SQRT_2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn poisson_at_zero_predictor() {
        assert_eq!(Likelihood::Poisson.log_density(1.0, 0.0), -1.0);
    }

    #[test]
    fn normal_at_mean() {
        let l = Likelihood::Normal { sigma: 1.0 };
        assert!((l.log_density(0.3, 0.3) + 0.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-15);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let cases = [
            (Likelihood::Poisson, 3.0, 0.7),
            (Likelihood::NegBinomial { shape: 2.5 }, 7.0, 1.3),
            (Likelihood::NegBinomial { shape: 0.4 }, 0.0, -0.2),
            (Likelihood::Normal { sigma: 1.7 }, -0.4, 0.9),
        ];
        let h = 1e-5;
        for (l, y, eta) in cases {
            let (d1, d2) = l.eta_derivatives(y, eta);
            let fd1 = (l.log_density(y, eta + h) - l.log_density(y, eta - h)) / (2.0 * h);
            let fd2 = (l.eta_derivatives(y, eta + h).0 - l.eta_derivatives(y, eta - h).0) / (2.0 * h);
            assert!((d1 - fd1).abs() < 1e-6, "{l:?}");
            assert!((d2 - fd2).abs() < 1e-6, "{l:?}");
            let disp = match l {
                Likelihood::Poisson => continue,
                Likelihood::NegBinomial { shape } => shape,
                Likelihood::Normal { sigma } => sigma,
            };
            let fam = if matches!(l, Likelihood::Normal { .. }) { Family::Normal } else { Family::NegativeBinomial };
            let up = Likelihood::new(fam, disp + h).log_density(y, eta);
            let dn = Likelihood::new(fam, disp - h).log_density(y, eta);
            assert!((l.dispersion_derivative(y, eta) - (up - dn) / (2.0 * h)).abs() < 1e-6, "{l:?}");
        }
    }

    #[test]
    fn pmfs_sum_to_cdf() {
        for l in [Likelihood::Poisson, Likelihood::NegBinomial { shape: 1.7 }] {
            let eta = 1.2;
            let mut acc = 0.0;
            for y in 0..12 {
                acc += l.log_density(y as f64, eta).exp();
                assert!((acc - l.cdf(y as f64, eta)).abs() < 1e-10, "{l:?} y={y}");
            }
        }
    }

    #[test]
    fn negative_binomial_sample_is_overdispersed() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let l = Likelihood::NegBinomial { shape: 2.0 };
        let eta = 5f64.ln();
        let xs: Vec<f64> = (0..40_000).map(|_| l.sample(eta, &mut rng)).collect();
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        assert!((m - 5.0).abs() < 0.1);
        // mean + mean^2 / shape = 17.5
        assert!((v - 17.5).abs() < 1.0, "variance {v}");
    }
}
