//! Special functions and numerically careful reductions used by the
//! variational updates.

/// Digamma function ψ(x) = d/dx ln Γ(x); NaN at the poles.
pub fn digamma(x: f64) -> f64 {
    if x <= 0.0 && x == x.floor() {
        return f64::NAN;
    }
    statrs::function::gamma::digamma(x)
}

/// ln Γ(x) for x > 0.
pub fn ln_gamma(x: f64) -> f64 {
    statrs::function::gamma::ln_gamma(x)
}

/// ln B(a) = Σ ln Γ(a_k) − ln Γ(Σ a_k), the log normaliser of a Dirichlet.
pub fn ln_multivariate_beta(params: &[f64]) -> f64 {
    let total: f64 = params.iter().sum();
    params.iter().map(|&a| ln_gamma(a)).sum::<f64>() - ln_gamma(total)
}

/// Expected log of each coordinate under Dir(alpha), written into `out`.
pub fn dirichlet_expected_log(alpha: &[f64], out: &mut [f64]) {
    debug_assert_eq!(alpha.len(), out.len());
    let psi_total = digamma(alpha.iter().sum());
    for (o, &a) in out.iter_mut().zip(alpha) {
        *o = digamma(a) - psi_total;
    }
}

/// (E ln x, E ln(1 − x)) under Beta(a, b).
pub fn beta_expected_logs(a: f64, b: f64) -> (f64, f64) {
    let psi_total = digamma(a + b);
    (digamma(a) - psi_total, digamma(b) - psi_total)
}

/// E_q[ln Beta(x; prior_a, prior_b)] − E_q[ln Beta(x; a, b)] for q = Beta(a, b),
/// i.e. the negative KL divergence from the prior.
pub fn beta_neg_kl(a: f64, b: f64, prior_a: f64, prior_b: f64) -> f64 {
    let (e_log, e_log1m) = beta_expected_logs(a, b);
    let ln_beta = |p: f64, q: f64| ln_gamma(p) + ln_gamma(q) - ln_gamma(p + q);
    (ln_beta(a, b) - ln_beta(prior_a, prior_b))
        + (prior_a - a) * e_log
        + (prior_b - b) * e_log1m
}

/// ln Σ exp(v_i), stable for large magnitudes. Returns −∞ for empty input.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Replaces log weights in place with the normalised probabilities and
/// returns the log normaliser.
pub fn normalize_log_weights(values: &mut [f64]) -> f64 {
    let lse = log_sum_exp(values);
    for v in values.iter_mut() {
        *v = (*v - lse).exp();
    }
    lse
}

/// x ln x with the convention 0 ln 0 = 0.
pub fn xlogx(x: f64) -> f64 {
    if x > 0.0 {
        x * x.ln()
    } else {
        0.0
    }
}

/// Neumaier compensated summation. Order-dependent but deterministic.
#[derive(Debug, Default, Clone, Copy)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.compensation += (self.sum - t) + value;
        } else {
            self.compensation += (value - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = CompensatedSum::new();
        for v in iter {
            acc.add(v);
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

    #[test]
    fn digamma_known_values() {
        assert!((digamma(1.0) + EULER_GAMMA).abs() < 1e-14);
        let psi5 = 25.0 / 12.0 - EULER_GAMMA;
        assert!((digamma(5.0) - psi5).abs() < 1e-13);
        // ψ(1/2) = −γ − 2 ln 2
        assert!((digamma(0.5) - (-EULER_GAMMA - 2.0 * 2f64.ln())).abs() < 1e-13);
        assert!(digamma(0.0).is_nan());
        assert!(digamma(-3.0).is_nan());
    }

    #[test]
    fn digamma_recurrence_holds() {
        for i in 1..200 {
            let x = i as f64 * 0.173;
            let lhs = digamma(x + 1.0);
            let rhs = digamma(x) + 1.0 / x;
            assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0), "x={x}");
        }
    }

    #[test]
    fn stick_log_complement_is_minus_inverse_kappa() {
        for kappa in [0.1, 1.0, 5.0, 10.0, 100.0] {
            let (_, e_log1m) = beta_expected_logs(1.0, kappa);
            assert!((e_log1m + 1.0 / kappa).abs() < 1e-12);
        }
    }

    #[test]
    fn log_sum_exp_is_stable() {
        let v = [1000.0, 1000.0];
        assert!((log_sum_exp(&v) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        let mut w = [-1e4, -1e4 + 3f64.ln()];
        normalize_log_weights(&mut w);
        assert!((w[0] - 0.25).abs() < 1e-12 && (w[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn beta_kl_vanishes_at_prior() {
        assert!(beta_neg_kl(2.0, 3.0, 2.0, 3.0).abs() < 1e-14);
        assert!(beta_neg_kl(5.0, 1.0, 1.0, 1.0) < 0.0);
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut acc = CompensatedSum::new();
        acc.add(1e16);
        for _ in 0..10 {
            acc.add(1.0);
        }
        acc.add(-1e16);
        assert_eq!(acc.value(), 10.0);
    }
}
