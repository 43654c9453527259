//! Multinomial NUTS transition with a diagonal metric and the generalised
//! no-U-turn criterion (including the checks across merged subtrees).

use rand::Rng;
use rand_distr::StandardNormal;

use super::Target;
use crate::model::family::log_add_exp;

/// Energy error above which a trajectory is declared divergent.
pub const MAX_DELTA_H: f64 = 1000.0;

#[derive(Debug, Clone)]
pub(crate) struct PhasePoint {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub grad: Vec<f64>,
    pub lp: f64,
}

impl PhasePoint {
    pub fn new<T: Target + ?Sized>(target: &T, q: Vec<f64>) -> Option<PhasePoint> {
        let mut grad = vec![0.0; q.len()];
        let lp = target.log_density_and_grad(&q, &mut grad).ok()?;
        if !lp.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return None;
        }
        Some(PhasePoint { p: vec![0.0; q.len()], q, grad, lp })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionStats {
    pub accept_stat: f64,
    pub treedepth: u32,
    pub n_leapfrog: u32,
    pub divergent: bool,
    pub energy: f64,
}

pub(crate) struct Nuts<'a, T: Target + ?Sized> {
    pub target: &'a T,
    pub inv_metric: Vec<f64>,
    pub stepsize: f64,
    pub max_depth: u32,
}

struct TreeState {
    n_leapfrog: u32,
    sum_metro_prob: f64,
    divergent: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add_into(acc: &mut [f64], v: &[f64]) {
    acc.iter_mut().zip(v).for_each(|(a, b)| *a += b);
}

fn criterion(p_sharp_minus: &[f64], p_sharp_plus: &[f64], rho: &[f64]) -> bool {
    dot(p_sharp_plus, rho) > 0.0 && dot(p_sharp_minus, rho) > 0.0
}

impl<T: Target + ?Sized> Nuts<'_, T> {
    fn kinetic(&self, p: &[f64]) -> f64 {
        0.5 * p.iter().zip(&self.inv_metric).map(|(p, m)| p * p * m).sum::<f64>()
    }

    fn hamiltonian(&self, z: &PhasePoint) -> f64 {
        self.kinetic(&z.p) - z.lp
    }

    fn p_sharp(&self, p: &[f64]) -> Vec<f64> {
        p.iter().zip(&self.inv_metric).map(|(p, m)| p * m).collect()
    }

    fn sample_momentum<R: Rng + ?Sized>(&self, z: &mut PhasePoint, rng: &mut R) {
        for (p, m) in z.p.iter_mut().zip(&self.inv_metric) {
            let n: f64 = rng.sample(StandardNormal);
            *p = n / m.sqrt();
        }
    }

    /// One leapfrog step. Returns false if the density could not be
    /// evaluated at the new position.
    fn leapfrog(&self, z: &mut PhasePoint, eps: f64) -> bool {
        for (p, g) in z.p.iter_mut().zip(&z.grad) {
            *p += 0.5 * eps * g;
        }
        for ((q, p), m) in z.q.iter_mut().zip(&z.p).zip(&self.inv_metric) {
            *q += eps * p * m;
        }
        match self.target.log_density_and_grad(&z.q, &mut z.grad) {
            Ok(lp) if lp.is_finite() && z.grad.iter().all(|g| g.is_finite()) => {
                z.lp = lp;
                for (p, g) in z.p.iter_mut().zip(&z.grad) {
                    *p += 0.5 * eps * g;
                }
                true
            }
            _ => {
                z.lp = f64::NEG_INFINITY;
                false
            }
        }
    }

    /// Stan's step size initialisation heuristic: double or halve until the
    /// acceptance probability of a single step crosses 0.8.
    pub fn init_stepsize<R: Rng + ?Sized>(&mut self, z: &PhasePoint, rng: &mut R) {
        if !(self.stepsize > 0.0) || self.stepsize > 1e7 {
            return;
        }
        let log_08 = 0.8f64.ln();
        let delta = |this: &Self, rng: &mut R| -> f64 {
            let mut w = z.clone();
            this.sample_momentum(&mut w, rng);
            let h0 = this.hamiltonian(&w);
            let h = if this.leapfrog(&mut w, this.stepsize) { this.hamiltonian(&w) } else { f64::INFINITY };
            let h = if h.is_nan() { f64::INFINITY } else { h };
            h0 - h
        };
        let direction = if delta(self, rng) > log_08 { 1 } else { -1 };
        loop {
            let d = delta(self, rng);
            if (direction == 1 && !(d > log_08)) || (direction == -1 && !(d < log_08)) {
                break;
            }
            self.stepsize = if direction == 1 { 2.0 * self.stepsize } else { 0.5 * self.stepsize };
            if self.stepsize > 1e7 || self.stepsize < 1e-300 {
                break;
            }
        }
    }

    pub fn transition<R: Rng + ?Sized>(&self, z0: &PhasePoint, rng: &mut R) -> (PhasePoint, TransitionStats) {
        let mut z = z0.clone();
        self.sample_momentum(&mut z, rng);
        let h0 = self.hamiltonian(&z);

        let mut z_fwd = z.clone();
        let mut z_bck = z.clone();
        let mut z_sample = z.clone();
        let mut z_propose = z.clone();

        let ps = self.p_sharp(&z.p);
        let mut p_sharp_fwd_fwd = ps.clone();
        let mut p_sharp_fwd_bck = ps.clone();
        let mut p_sharp_bck_fwd = ps.clone();
        let mut p_sharp_bck_bck = ps;
        let mut p_fwd_fwd = z.p.clone();
        let mut p_fwd_bck = z.p.clone();
        let mut p_bck_fwd = z.p.clone();
        let mut p_bck_bck = z.p.clone();
        let mut rho = z.p.clone();

        let mut log_sum_weight = 0.0;
        let mut depth = 0;
        let mut st = TreeState { n_leapfrog: 0, sum_metro_prob: 0.0, divergent: false };
        let dim = z.q.len();

        while depth < self.max_depth {
            let mut rho_fwd = vec![0.0; dim];
            let mut rho_bck = vec![0.0; dim];
            let mut log_sum_weight_subtree = f64::NEG_INFINITY;
            let valid_subtree;

            if rng.random::<f64>() > 0.5 {
                rho_bck.copy_from_slice(&rho);
                p_bck_fwd.copy_from_slice(&p_fwd_bck);
                p_sharp_bck_fwd.copy_from_slice(&p_sharp_fwd_bck);
                let mut zz = z_fwd.clone();
                valid_subtree = self.build_tree(
                    depth,
                    &mut zz,
                    &mut z_propose,
                    &mut p_sharp_fwd_bck,
                    &mut p_sharp_fwd_fwd,
                    &mut rho_fwd,
                    &mut p_fwd_bck,
                    &mut p_fwd_fwd,
                    h0,
                    1.0,
                    &mut st,
                    &mut log_sum_weight_subtree,
                    rng,
                );
                z_fwd = zz;
            } else {
                rho_fwd.copy_from_slice(&rho);
                p_fwd_bck.copy_from_slice(&p_bck_fwd);
                p_sharp_fwd_bck.copy_from_slice(&p_sharp_bck_fwd);
                let mut zz = z_bck.clone();
                valid_subtree = self.build_tree(
                    depth,
                    &mut zz,
                    &mut z_propose,
                    &mut p_sharp_bck_fwd,
                    &mut p_sharp_bck_bck,
                    &mut rho_bck,
                    &mut p_bck_fwd,
                    &mut p_bck_bck,
                    h0,
                    -1.0,
                    &mut st,
                    &mut log_sum_weight_subtree,
                    rng,
                );
                z_bck = zz;
            }

            if !valid_subtree {
                break;
            }
            depth += 1;

            if log_sum_weight_subtree > log_sum_weight {
                z_sample = z_propose.clone();
            } else {
                let accept_prob = (log_sum_weight_subtree - log_sum_weight).exp();
                if rng.random::<f64>() < accept_prob {
                    z_sample = z_propose.clone();
                }
            }
            log_sum_weight = log_add_exp(log_sum_weight, log_sum_weight_subtree);

            for k in 0..dim {
                rho[k] = rho_bck[k] + rho_fwd[k];
            }
            let mut persist = criterion(&p_sharp_bck_bck, &p_sharp_fwd_fwd, &rho);
            let mut rho_ext = rho_bck.clone();
            add_into(&mut rho_ext, &p_fwd_bck);
            persist &= criterion(&p_sharp_bck_bck, &p_sharp_fwd_bck, &rho_ext);
            let mut rho_ext = rho_fwd.clone();
            add_into(&mut rho_ext, &p_bck_fwd);
            persist &= criterion(&p_sharp_bck_fwd, &p_sharp_fwd_fwd, &rho_ext);
            if !persist {
                break;
            }
        }

        let accept_stat = if st.n_leapfrog > 0 { st.sum_metro_prob / st.n_leapfrog as f64 } else { 0.0 };
        let energy = self.hamiltonian(&z_sample);
        let stats = TransitionStats {
            accept_stat,
            treedepth: depth,
            n_leapfrog: st.n_leapfrog,
            divergent: st.divergent,
            energy,
        };
        (z_sample, stats)
    }

    #[allow(clippy::too_many_arguments)]
    fn build_tree<R: Rng + ?Sized>(
        &self,
        depth: u32,
        z: &mut PhasePoint,
        z_propose: &mut PhasePoint,
        p_sharp_beg: &mut Vec<f64>,
        p_sharp_end: &mut Vec<f64>,
        rho: &mut [f64],
        p_beg: &mut Vec<f64>,
        p_end: &mut Vec<f64>,
        h0: f64,
        sign: f64,
        st: &mut TreeState,
        log_sum_weight: &mut f64,
        rng: &mut R,
    ) -> bool {
        if depth == 0 {
            let ok = self.leapfrog(z, sign * self.stepsize);
            st.n_leapfrog += 1;
            let mut h = if ok { self.hamiltonian(z) } else { f64::INFINITY };
            if h.is_nan() {
                h = f64::INFINITY;
            }
            if h - h0 > MAX_DELTA_H {
                st.divergent = true;
            }
            *log_sum_weight = log_add_exp(*log_sum_weight, h0 - h);
            st.sum_metro_prob += if h0 - h > 0.0 { 1.0 } else { (h0 - h).exp() };
            z_propose.clone_from(z);
            *p_sharp_beg = self.p_sharp(&z.p);
            p_sharp_end.clone_from(p_sharp_beg);
            add_into(rho, &z.p);
            p_beg.clone_from(&z.p);
            p_end.clone_from(p_beg);
            return !st.divergent;
        }

        let dim = z.q.len();
        let mut p_sharp_init_end = vec![0.0; dim];
        let mut p_init_end = vec![0.0; dim];
        let mut rho_init = vec![0.0; dim];
        let mut log_sum_weight_init = f64::NEG_INFINITY;
        let valid_init = self.build_tree(
            depth - 1,
            z,
            z_propose,
            p_sharp_beg,
            &mut p_sharp_init_end,
            &mut rho_init,
            p_beg,
            &mut p_init_end,
            h0,
            sign,
            st,
            &mut log_sum_weight_init,
            rng,
        );
        if !valid_init {
            return false;
        }

        let mut z_propose_final = z.clone();
        let mut rho_final = vec![0.0; dim];
        let mut p_final_beg = vec![0.0; dim];
        let mut p_sharp_final_beg = vec![0.0; dim];
        let mut log_sum_weight_final = f64::NEG_INFINITY;
        let valid_final = self.build_tree(
            depth - 1,
            z,
            &mut z_propose_final,
            &mut p_sharp_final_beg,
            p_sharp_end,
            &mut rho_final,
            &mut p_final_beg,
            p_end,
            h0,
            sign,
            st,
            &mut log_sum_weight_final,
            rng,
        );
        if !valid_final {
            return false;
        }

        let log_sum_weight_subtree = log_add_exp(log_sum_weight_init, log_sum_weight_final);
        *log_sum_weight = log_add_exp(*log_sum_weight, log_sum_weight_subtree);
        if log_sum_weight_final > log_sum_weight_subtree {
            *z_propose = z_propose_final;
        } else {
            let accept_prob = (log_sum_weight_final - log_sum_weight_subtree).exp();
            if rng.random::<f64>() < accept_prob {
                *z_propose = z_propose_final;
            }
        }

        let mut rho_subtree = rho_init.clone();
        add_into(&mut rho_subtree, &rho_final);
        let mut persist = criterion(p_sharp_beg, p_sharp_end, &rho_subtree);
        let mut rho_ext = rho_init;
        add_into(&mut rho_ext, &p_final_beg);
        persist &= criterion(p_sharp_beg, &p_sharp_final_beg, &rho_ext);
        let mut rho_ext = rho_final;
        add_into(&mut rho_ext, &p_init_end);
        persist &= criterion(&p_sharp_init_end, p_sharp_end, &rho_ext);

        add_into(rho, &rho_subtree);
        persist
    }
}
