//! Warmup adaptation: dual-averaging step size and windowed diagonal
//! metric estimation.

/// Nesterov dual averaging of the log step size toward a target
/// acceptance statistic.
#[derive(Debug, Clone)]
pub struct StepSizeAdaptation {
    pub target: f64,
    pub gamma: f64,
    pub t0: f64,
    pub kappa: f64,
    mu: f64,
    counter: f64,
    s_bar: f64,
    x_bar: f64,
}

impl StepSizeAdaptation {
    pub fn new(target: f64) -> Self {
        StepSizeAdaptation { target, gamma: 0.05, t0: 10.0, kappa: 0.75, mu: 0.0, counter: 0.0, s_bar: 0.0, x_bar: 0.0 }
    }

    pub fn set_mu(&mut self, mu: f64) {
        self.mu = mu;
    }

    pub fn restart(&mut self) {
        self.counter = 0.0;
        self.s_bar = 0.0;
        self.x_bar = 0.0;
    }

    /// Returns the next step size given the last transition's acceptance
    /// statistic.
    pub fn learn(&mut self, accept_stat: f64) -> f64 {
        self.counter += 1.0;
        let a = accept_stat.min(1.0);
        let eta = 1.0 / (self.counter + self.t0);
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.target - a);
        let x = self.mu - self.s_bar * self.counter.sqrt() / self.gamma;
        let x_eta = self.counter.powf(-self.kappa);
        self.x_bar = (1.0 - x_eta) * self.x_bar + x_eta * x;
        x.exp()
    }

    /// Final step size (the averaged iterate).
    pub fn complete(&self) -> f64 {
        self.x_bar.exp()
    }
}

/// Running mean and variance (Welford).
#[derive(Debug, Clone)]
struct Welford {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(dim: usize) -> Self {
        Welford { n: 0, mean: vec![0.0; dim], m2: vec![0.0; dim] }
    }

    fn add(&mut self, q: &[f64]) {
        self.n += 1;
        for ((m, s), x) in self.mean.iter_mut().zip(&mut self.m2).zip(q) {
            let d = x - *m;
            *m += d / self.n as f64;
            *s += d * (x - *m);
        }
    }

    fn variance(&self) -> Vec<f64> {
        let denom = (self.n.max(2) - 1) as f64;
        self.m2.iter().map(|s| s / denom).collect()
    }

    fn restart(&mut self) {
        self.n = 0;
        self.mean.iter_mut().for_each(|m| *m = 0.0);
        self.m2.iter_mut().for_each(|m| *m = 0.0);
    }
}

/// Warmup schedule: an initial fast buffer, doubling slow windows for the
/// metric, and a terminal fast buffer.
#[derive(Debug, Clone)]
pub struct WindowedMetric {
    num_warmup: usize,
    init_buffer: usize,
    term_buffer: usize,
    window_size: usize,
    counter: usize,
    next_window_end: usize,
    estimator: Welford,
}

impl WindowedMetric {
    pub fn new(dim: usize, num_warmup: usize) -> Self {
        let (mut init_buffer, mut term_buffer, mut base_window) = (75, 50, 25);
        if num_warmup >= 20 && init_buffer + base_window + term_buffer > num_warmup {
            init_buffer = (0.15 * num_warmup as f64) as usize;
            term_buffer = (0.1 * num_warmup as f64) as usize;
            base_window = num_warmup - (init_buffer + term_buffer);
        }
        WindowedMetric {
            num_warmup,
            init_buffer,
            term_buffer,
            window_size: base_window,
            counter: 0,
            next_window_end: init_buffer + base_window - 1,
            estimator: Welford::new(dim),
        }
    }

    fn enabled(&self) -> bool {
        self.num_warmup >= 20
    }

    fn in_window(&self) -> bool {
        self.counter >= self.init_buffer
            && self.counter < self.num_warmup - self.term_buffer
            && self.counter != self.num_warmup
    }

    fn at_window_end(&self) -> bool {
        self.counter == self.next_window_end && self.counter != self.num_warmup
    }

    fn compute_next_window(&mut self) {
        let last = self.num_warmup - self.term_buffer - 1;
        if self.next_window_end == last {
            return;
        }
        self.window_size *= 2;
        self.next_window_end = self.counter + self.window_size;
        if self.next_window_end != last && self.next_window_end + 2 * self.window_size >= self.num_warmup - self.term_buffer {
            self.next_window_end = last;
        }
    }

    /// Records a warmup position. Returns true when a slow window closed and
    /// `inv_metric` was updated.
    pub fn learn(&mut self, inv_metric: &mut [f64], q: &[f64]) -> bool {
        if !self.enabled() {
            return false;
        }
        if self.in_window() {
            self.estimator.add(q);
        }
        if self.at_window_end() {
            self.compute_next_window();
            let n = self.estimator.n as f64;
            for (m, v) in inv_metric.iter_mut().zip(self.estimator.variance()) {
                *m = (n / (n + 5.0)) * v + 1e-3 * (5.0 / (n + 5.0));
            }
            self.estimator.restart();
            self.counter += 1;
            return true;
        }
        self.counter += 1;
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn windows_match_default_schedule() {
        let mut w = WindowedMetric::new(1, 1000);
        let mut m = vec![1.0];
        let ends: Vec<usize> = (0..1000).filter(|&i| w.learn(&mut m, &[i as f64])).collect();
        assert_eq!(ends, vec![99, 149, 249, 449, 949]);
    }

    #[test]
    fn short_warmup_uses_proportional_buffers() {
        let mut w = WindowedMetric::new(1, 100);
        let mut m = vec![1.0];
        let ends: Vec<usize> = (0..100).filter(|&i| w.learn(&mut m, &[i as f64])).collect();
        assert_eq!(ends, vec![89]);
    }

    #[test]
    fn dual_averaging_moves_toward_target() {
        let mut a = StepSizeAdaptation::new(0.8);
        a.set_mu((10.0f64).ln());
        // Acceptance always too low: the step size must shrink.
        let mut eps = 1.0;
        for _ in 0..200 {
            eps = a.learn(0.2);
        }
        assert!(eps < 1e-3);
        assert!(a.complete() < 1.0);
    }
}
