//! Coordinate-ascent updates. Each function sets one family of factors to
//! its optimum given all the others.

use rayon::prelude::*;

use super::state::VariationalState;
use crate::claims::ClaimSet;
use crate::priors::Hyperparams;
use crate::claims::Claim;
use crate::special::{
    beta_expected_logs, digamma, dirichlet_expected_log, ln_gamma, ln_multivariate_beta,
    normalize_log_weights, xlogx, CompensatedSum,
};

/// Lower bound applied to α entries when soft counts below 1 drive them
/// non-positive.
pub const ALPHA_FLOOR: f64 = 1e-6;

/// The factor updates, in sweep order, followed by the per-object truth
/// move.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Step {
    ObservationParams,
    GroupReliability,
    ObjectReliability,
    Truths,
    Assignments,
    Sticks,
    TruthMoves,
    GroupMoves,
}

impl Step {
    pub const SWEEP: [Step; 8] = [
        Step::ObservationParams,
        Step::GroupReliability,
        Step::ObjectReliability,
        Step::Truths,
        Step::Assignments,
        Step::Sticks,
        Step::TruthMoves,
        Step::GroupMoves,
    ];

    /// Whether the step is a block move rather than a single-factor update.
    pub fn is_block_move(self) -> bool {
        matches!(self, Step::TruthMoves | Step::GroupMoves)
    }
}

/// Apply one step; returns the number of clamped α entries (counted only
/// for the observation-parameter step).
pub fn apply_step(state: &mut VariationalState, cs: &ClaimSet, h: &Hyperparams, step: Step) -> usize {
    match step {
        Step::ObservationParams => return update_alpha(state, cs, h),
        Step::GroupReliability => update_beta(state, h),
        Step::ObjectReliability => update_tau(state, cs, h),
        Step::Truths => update_nu(state, cs, h),
        Step::Assignments => update_phi(state, cs, h),
        Step::Sticks => update_sticks(state, h),
        Step::TruthMoves => {
            super::moves::relabel_truths(state, cs, h);
        }
        Step::GroupMoves => {
            super::moves::reset_groups(state, cs, h);
        }
    }
    0
}

/// Per-domain-size constants of the observation prior Dir(η at t, θ elsewhere).
#[derive(Debug, Clone, Copy)]
pub(crate) struct PriorConstants {
    /// ln B of the prior Dirichlet, for r = 0 and r = 1.
    pub ln_norm: [f64; 2],
    /// ψ(η + (K − 1)θ) for r = 0 and r = 1.
    pub psi_total: [f64; 2],
}

impl PriorConstants {
    pub(crate) fn new(h: &Hyperparams, k: usize) -> Self {
        let mut ln_norm = [0.0; 2];
        let mut psi_total = [0.0; 2];
        for r in 0..2 {
            let (eta, theta) = h.soft_counts(r == 1);
            let total = eta + (k as f64 - 1.0) * theta;
            ln_norm[r] = ln_gamma(eta) + (k as f64 - 1.0) * ln_gamma(theta) - ln_gamma(total);
            psi_total[r] = digamma(total);
        }
        Self { ln_norm, psi_total }
    }

    pub(crate) fn per_object(cs: &ClaimSet, h: &Hyperparams) -> Vec<Self> {
        let mut cache: Vec<Option<Self>> = Vec::new();
        cs.objects()
            .iter()
            .map(|obj| {
                let k = obj.size();
                if cache.len() <= k {
                    cache.resize(k + 1, None);
                }
                *cache[k].get_or_insert_with(|| Self::new(h, k))
            })
            .collect()
    }
}

/// Expected log-likelihood of claiming value `y` for a source in a group
/// beyond the truncation, whose parameters remain at the prior:
/// E_{q(t_m)} E_{p(r)} E[ln π_y | r, t_m].
pub(crate) fn tail_claim_term(h: &Hyperparams, prior: &PriorConstants, nu_y: f64) -> f64 {
    let p1 = h.prior_reliability();
    [1.0 - p1, p1]
        .iter()
        .enumerate()
        .map(|(r, &pr)| {
            let (eta, theta) = h.soft_counts(r == 1);
            pr * (nu_y * digamma(eta) + (1.0 - nu_y) * digamma(theta) - prior.psi_total[r])
        })
        .sum()
}

/// Log ratio of the geometric tail, E ln(1 − ρ) under Beta(1, κ) = −1/κ.
pub(crate) fn tail_log_ratio(h: &Hyperparams) -> f64 {
    -1.0 / h.kappa
}

/// ln(1 − exp(−1/κ)), the log of the geometric-series denominator.
pub(crate) fn ln_tail_denominator(h: &Hyperparams) -> f64 {
    (-tail_log_ratio(h).exp_m1()).ln()
}

/// E_q ln p(g = l | ρ) for the explicit groups, and for the first group
/// beyond the truncation.
pub(crate) fn stick_log_weights(state: &VariationalState, h: &Hyperparams) -> (Vec<f64>, f64) {
    let mut weights = Vec::with_capacity(state.truncation);
    let mut prefix = 0.0;
    for &[a, b] in &state.sticks {
        let (e_log, e_log1m) = beta_expected_logs(a, b);
        weights.push(prefix + e_log);
        prefix += e_log1m;
    }
    let prior_first = digamma(1.0) - digamma(1.0 + h.kappa);
    (weights, prefix + prior_first)
}

/// E ln π for every (l, m, k), same layout as α.
pub(crate) fn expected_log_pi(state: &VariationalState) -> Vec<f64> {
    let total = state.layout.total();
    let mut out = vec![0.0; state.alpha.len()];
    out.par_chunks_mut(total.max(1))
        .zip(state.alpha.par_chunks(total.max(1)))
        .for_each(|(dst, src)| {
            for m in 0..state.num_objects {
                let r = state.layout.range(m);
                dirichlet_expected_log(&src[r.clone()], &mut dst[r]);
            }
        });
    out
}

/// Prior part of α_{l,m;k}: Σ_r q(r)[(η_r − 1) ν_k + (θ_r − 1)(1 − ν_k)] + 1.
#[inline]
fn prior_alpha(h: &Hyperparams, t1: f64, nu_k: f64) -> f64 {
    let (eta1, theta1) = h.soft_counts(true);
    let (eta0, theta0) = h.soft_counts(false);
    t1 * ((eta1 - 1.0) * nu_k + (theta1 - 1.0) * (1.0 - nu_k))
        + (1.0 - t1) * ((eta0 - 1.0) * nu_k + (theta0 - 1.0) * (1.0 - nu_k))
        + 1.0
}

/// α_{l,m} into `dst` from q(t_m), q(r_{l,m} = 1) and the weighted claims of
/// group `l` on the object. Returns the number of clamped entries.
#[allow(clippy::too_many_arguments)]
pub(crate) fn fill_alpha(
    dst: &mut [f64],
    nu: &[f64],
    t1: f64,
    column: &[Claim],
    phi: &[f64],
    l: usize,
    l_count: usize,
    h: &Hyperparams,
) -> usize {
    for (a, &v) in dst.iter_mut().zip(nu) {
        *a = prior_alpha(h, t1, v);
    }
    for c in column {
        dst[c.value] += phi[c.source * l_count + l];
    }
    let mut clamped = 0;
    for a in dst.iter_mut() {
        if !(*a > 0.0) {
            *a = ALPHA_FLOOR;
            clamped += 1;
        }
    }
    clamped
}

/// E_q ln p(π_{l,m} | r, t) under one regime, without the q(r) weight.
#[inline]
fn regime_score(h: &Hyperparams, prior: &PriorConstants, r: usize, sum_e: f64, weighted: f64) -> f64 {
    let (eta, theta) = h.soft_counts(r == 1);
    -prior.ln_norm[r] + (theta - 1.0) * sum_e + (eta - theta) * weighted
}

/// Log-odds of q(r_{l,m} = 1) given E ln π_{l,m}, q(t_m) and E ln u_l,
/// E ln(1 − u_l).
pub(crate) fn tau_logit(
    e: &[f64],
    nu: &[f64],
    prior: &PriorConstants,
    e_log_u: [f64; 2],
    h: &Hyperparams,
) -> f64 {
    let sum_e: f64 = e.iter().sum();
    let weighted: f64 = e.iter().zip(nu).map(|(a, b)| a * b).sum();
    (regime_score(h, prior, 1, sum_e, weighted) + e_log_u[0])
        - (regime_score(h, prior, 0, sum_e, weighted) + e_log_u[1])
}

/// Weight of E ln π_{l,m;k} in ln q(t_m = k): E_q[η_r − θ_r].
#[inline]
pub(crate) fn nu_coefficient(h: &Hyperparams, t1: f64) -> f64 {
    let (eta1, theta1) = h.soft_counts(true);
    let (eta0, theta0) = h.soft_counts(false);
    t1 * (eta1 - theta1) + (1.0 - t1) * (eta0 - theta0)
}

/// Weight of each claimant's tail mass in ln q(t_m = y): the same quantity
/// for a prior-level group, E_p[ψ(η_r) − ψ(θ_r)].
pub(crate) fn tail_nu_coefficient(h: &Hyperparams) -> f64 {
    let (eta1, theta1) = h.soft_counts(true);
    let (eta0, theta0) = h.soft_counts(false);
    let p1 = h.prior_reliability();
    p1 * (digamma(eta1) - digamma(theta1)) + (1.0 - p1) * (digamma(eta0) - digamma(theta0))
}

/// E ln p(r_{l,m} | u_l) + H(q(r_{l,m})).
#[inline]
pub(crate) fn reliability_term(t1: f64, e_log_u: [f64; 2]) -> f64 {
    let t0 = 1.0 - t1;
    t1 * e_log_u[0] + t0 * e_log_u[1] - xlogx(t1) - xlogx(t0)
}

/// E ln p(π_{l,m} | r, t) + H(Dir(α_{l,m})).
pub(crate) fn observation_term(
    alpha: &[f64],
    e: &[f64],
    nu: &[f64],
    t1: f64,
    prior: &PriorConstants,
    h: &Hyperparams,
) -> f64 {
    let sum_e: f64 = e.iter().sum();
    let weighted: f64 = e.iter().zip(nu).map(|(a, b)| a * b).sum();
    let mut out = CompensatedSum::new();
    for (r, q) in [1.0 - t1, t1].into_iter().enumerate() {
        if q > 0.0 {
            out.add(q * regime_score(h, prior, r, sum_e, weighted));
        }
    }
    out.add(ln_multivariate_beta(alpha));
    for (a, ek) in alpha.iter().zip(e) {
        out.add(-(a - 1.0) * ek);
    }
    out.value()
}

/// −KL(q(t_m) ‖ uniform).
pub(crate) fn truth_term(nu: &[f64]) -> f64 {
    -(nu.len() as f64).ln() - nu.iter().map(|&v| xlogx(v)).sum::<f64>()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Step 1: q(π_{l,m}) = Dir(α_{l,m}) with
/// α_k = Σ_{n ∈ I_{·,m}} q(g_n = l)[y_{n,m} = k]
///     + Σ_r q(r)[(η_r − 1) q(t_m = k) + (θ_r − 1)(1 − q(t_m = k))] + 1.
pub fn update_alpha(state: &mut VariationalState, cs: &ClaimSet, h: &Hyperparams) -> usize {
    let total = state.layout.total();
    if total == 0 {
        return 0;
    }
    let l_count = state.truncation;
    let m_count = state.num_objects;
    let layout = &state.layout;
    let tau = &state.tau;
    let nu = &state.nu;
    let phi = &state.phi;

    state
        .alpha
        .par_chunks_mut(total)
        .enumerate()
        .map(|(l, block)| {
            (0..m_count)
                .map(|m| {
                    let range = layout.range(m);
                    let t1 = tau[l * m_count + m];
                    fill_alpha(&mut block[range.clone()], &nu[range], t1, cs.column(m), phi, l, l_count, h)
                })
                .sum::<usize>()
        })
        .collect::<Vec<_>>()
        .into_iter()
        .sum()
}

/// Step 2: β_l = [Σ_m q(r_{l,m} = 1) + b1, Σ_m q(r_{l,m} = 0) + b0].
pub fn update_beta(state: &mut VariationalState, h: &Hyperparams) {
    let m_count = state.num_objects;
    for l in 0..state.truncation {
        let row = &state.tau[l * m_count..(l + 1) * m_count];
        let ones: f64 = row.iter().sum();
        let zeros: f64 = row.iter().map(|t| 1.0 - t).sum();
        state.beta[l] = [ones + h.b1, zeros + h.b0];
    }
}

/// Step 3: q(r_{l,m}). Includes the prior Dirichlet's log normaliser, which
/// depends on r whenever the two regimes use different soft counts.
pub fn update_tau(state: &mut VariationalState, cs: &ClaimSet, h: &Hyperparams) {
    let e_log_pi = expected_log_pi(state);
    let priors = PriorConstants::per_object(cs, h);
    let total = state.layout.total();
    let m_count = state.num_objects;
    let layout = &state.layout;
    let nu = &state.nu;
    let beta = &state.beta;

    state
        .tau
        .par_chunks_mut(m_count.max(1))
        .enumerate()
        .for_each(|(l, row)| {
            let (a, b) = beta_expected_logs(beta[l][0], beta[l][1]);
            for (m, t) in row.iter_mut().enumerate() {
                let range = layout.range(m);
                let e = &e_log_pi[l * total + range.start..l * total + range.end];
                *t = sigmoid(tau_logit(e, &nu[range], &priors[m], [a, b], h));
            }
        });
}

/// ln q(t_m = ·) up to a constant, into `w`. `e_log_pi_m(l)` yields
/// E ln π_{l,m}.
pub(crate) fn nu_log_weights<'a>(
    w: &mut [f64],
    taus: impl Iterator<Item = f64>,
    e_log_pi_m: impl Fn(usize) -> &'a [f64],
    column: &[Claim],
    tail: &[f64],
    tail_coef: f64,
    h: &Hyperparams,
) {
    w.fill(0.0);
    for (l, t1) in taus.enumerate() {
        let coef = nu_coefficient(h, t1);
        if coef == 0.0 {
            continue;
        }
        for (wk, ek) in w.iter_mut().zip(e_log_pi_m(l)) {
            *wk += coef * ek;
        }
    }
    if tail_coef != 0.0 {
        for c in column {
            w[c.value] += tail_coef * tail[c.source];
        }
    }
}

/// Step 4: q(t_m). Groups beyond the truncation contribute through each
/// claimant's tail mass with prior-predictive expectations.
pub fn update_nu(state: &mut VariationalState, cs: &ClaimSet, h: &Hyperparams) {
    let e_log_pi = expected_log_pi(state);
    let total = state.layout.total();
    let m_count = state.num_objects;
    let tail_coef = tail_nu_coefficient(h);

    let blocks: Vec<Vec<f64>> = (0..m_count)
        .into_par_iter()
        .map(|m| {
            let range = state.layout.range(m);
            let mut w = vec![0.0; range.len()];
            nu_log_weights(
                &mut w,
                (0..state.truncation).map(|l| state.tau[l * m_count + m]),
                |l| &e_log_pi[l * total + range.start..l * total + range.end],
                cs.column(m),
                &state.tail,
                tail_coef,
                h,
            );
            normalize_log_weights(&mut w);
            w
        })
        .collect();
    for (m, block) in blocks.into_iter().enumerate() {
        let range = state.layout.range(m);
        state.nu[range].copy_from_slice(&block);
    }
}

/// Step 5: q(g_n) over the explicit groups plus the closed-form geometric
/// tail beyond the truncation.
pub fn update_phi(state: &mut VariationalState, cs: &ClaimSet, h: &Hyperparams) {
    let e_log_pi = expected_log_pi(state);
    let priors = PriorConstants::per_object(cs, h);
    let (stick_w, stick_tail) = stick_log_weights(state, h);
    let ln_denominator = ln_tail_denominator(h);
    let total = state.layout.total();
    let l_count = state.truncation;
    let layout = &state.layout;
    let nu = &state.nu;

    state
        .phi
        .par_chunks_mut(l_count)
        .zip(state.tail.par_iter_mut())
        .enumerate()
        .for_each(|(n, (row, tail))| {
            let mut scores = Vec::with_capacity(l_count + 1);
            scores.extend_from_slice(&stick_w);
            let mut tail_score = stick_tail;
            for c in cs.row(n) {
                let slot = layout.range(c.object).start + c.value;
                for (l, s) in scores.iter_mut().enumerate() {
                    *s += e_log_pi[l * total + slot];
                }
                tail_score += tail_claim_term(h, &priors[c.object], nu[slot]);
            }
            scores.push(tail_score - ln_denominator);
            normalize_log_weights(&mut scores);
            *tail = scores[l_count];
            row.copy_from_slice(&scores[..l_count]);
        });
}

/// Step 6: q(ρ_i) = Beta(1 + Σ_n q(g_n = i), κ + Σ_n q(g_n > i)), with the
/// tail mass counted in q(g_n > i).
pub fn update_sticks(state: &mut VariationalState, h: &Hyperparams) {
    let l_count = state.truncation;
    let mut at = vec![0.0; l_count];
    let mut beyond = vec![0.0; l_count];
    for n in 0..state.num_sources {
        let row = &state.phi[n * l_count..(n + 1) * l_count];
        let mut above = state.tail[n];
        for l in (0..l_count).rev() {
            at[l] += row[l];
            beyond[l] += above;
            above += row[l];
        }
    }
    for l in 0..l_count {
        state.sticks[l] = [1.0 + at[l], h.kappa + beyond[l]];
    }
}
