//! Evidence lower bound: expected log joint plus entropy of q.
//!
//! Groups beyond the truncation hold q equal to the prior, so their KL terms
//! vanish; they enter only through the assignment and likelihood terms of
//! each source's tail mass.

use rayon::prelude::*;
use serde::Serialize;

use super::state::VariationalState;
use super::updates::{
    expected_log_pi, ln_tail_denominator, observation_term, reliability_term, stick_log_weights,
    tail_claim_term, truth_term, PriorConstants,
};
use crate::claims::ClaimSet;
use crate::error::{Error, Result};
use crate::priors::Hyperparams;
use crate::special::{beta_expected_logs, beta_neg_kl, xlogx, CompensatedSum};

/// The bound split by factor.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct ElboTerms {
    /// −KL(q(ρ) ‖ p(ρ)) over the explicit sticks.
    pub sticks: f64,
    /// E ln p(g | ρ) + H(q(g)).
    pub assignments: f64,
    /// −KL(q(u) ‖ p(u)).
    pub group_reliability: f64,
    /// E ln p(r | u) + H(q(r)).
    pub object_reliability: f64,
    /// −KL(q(t) ‖ uniform).
    pub truths: f64,
    /// E ln p(π | r, t) + H(q(π)).
    pub observation_params: f64,
    /// E ln p(y | π, g).
    pub likelihood: f64,
}

impl ElboTerms {
    pub fn total(&self) -> f64 {
        [
            self.sticks,
            self.assignments,
            self.group_reliability,
            self.object_reliability,
            self.truths,
            self.observation_params,
            self.likelihood,
        ]
        .into_iter()
        .collect::<CompensatedSum>()
        .value()
    }

    fn first_non_finite(&self) -> Option<&'static str> {
        [
            ("sticks", self.sticks),
            ("assignments", self.assignments),
            ("group_reliability", self.group_reliability),
            ("object_reliability", self.object_reliability),
            ("truths", self.truths),
            ("observation_params", self.observation_params),
            ("likelihood", self.likelihood),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(name, _)| name)
    }
}

pub fn elbo_terms(state: &VariationalState, cs: &ClaimSet, h: &Hyperparams) -> ElboTerms {
    let e_log_pi = expected_log_pi(state);
    let priors = PriorConstants::per_object(cs, h);
    let total = state.layout.total();
    let l_count = state.truncation;
    let m_count = state.num_objects;

    let sticks = state
        .sticks
        .iter()
        .map(|&[a, b]| beta_neg_kl(a, b, 1.0, h.kappa))
        .collect::<CompensatedSum>()
        .value();

    let (stick_w, stick_tail) = stick_log_weights(state, h);
    let ln_denominator = ln_tail_denominator(h);
    let per_source: Vec<(f64, f64)> = (0..state.num_sources)
        .into_par_iter()
        .map(|n| {
            let row = state.phi_row(n);
            let tail = state.tail[n];
            let mut assign = CompensatedSum::new();
            for (&p, &w) in row.iter().zip(&stick_w) {
                if p > 0.0 {
                    assign.add(p * w - xlogx(p));
                }
            }
            if tail > 0.0 {
                assign.add(tail * (stick_tail - ln_denominator) - xlogx(tail));
            }
            let mut lik = CompensatedSum::new();
            for c in cs.row(n) {
                let slot = state.layout.range(c.object).start + c.value;
                for (l, &p) in row.iter().enumerate() {
                    lik.add(p * e_log_pi[l * total + slot]);
                }
                if tail > 0.0 {
                    lik.add(tail * tail_claim_term(h, &priors[c.object], state.nu[slot]));
                }
            }
            (assign.value(), lik.value())
        })
        .collect();
    let assignments = per_source.iter().map(|p| p.0).collect::<CompensatedSum>().value();
    let likelihood = per_source.iter().map(|p| p.1).collect::<CompensatedSum>().value();

    let group_reliability = state
        .beta
        .iter()
        .map(|&[a, b]| beta_neg_kl(a, b, h.b1, h.b0))
        .collect::<CompensatedSum>()
        .value();

    let per_group: Vec<(f64, f64)> = (0..l_count)
        .into_par_iter()
        .map(|l| {
            let (a, b) = beta_expected_logs(state.beta[l][0], state.beta[l][1]);
            let mut rel = CompensatedSum::new();
            let mut obs = CompensatedSum::new();
            for m in 0..m_count {
                let t1 = state.tau[l * m_count + m];
                rel.add(reliability_term(t1, [a, b]));
                let range = state.layout.range(m);
                let slots = l * total + range.start..l * total + range.end;
                obs.add(observation_term(
                    &state.alpha[slots.clone()],
                    &e_log_pi[slots],
                    &state.nu[range],
                    t1,
                    &priors[m],
                    h,
                ));
            }
            (rel.value(), obs.value())
        })
        .collect();
    let object_reliability = per_group.iter().map(|p| p.0).collect::<CompensatedSum>().value();
    let observation_params = per_group.iter().map(|p| p.1).collect::<CompensatedSum>().value();

    let truths = (0..m_count)
        .map(|m| truth_term(state.nu(m)))
        .collect::<CompensatedSum>()
        .value();

    ElboTerms {
        sticks,
        assignments,
        group_reliability,
        object_reliability,
        truths,
        observation_params,
        likelihood,
    }
}

/// The bound L(q). Fails with a diagnostic naming the offending factor if
/// any term is not finite.
pub fn compute_elbo(state: &VariationalState, cs: &ClaimSet, h: &Hyperparams) -> Result<f64> {
    let terms = elbo_terms(state, cs, h);
    if let Some(name) = terms.first_non_finite() {
        return Err(Error::Numerical(format!(
            "ELBO term `{name}` is not finite: {terms:?}"
        )));
    }
    Ok(terms.total())
}
