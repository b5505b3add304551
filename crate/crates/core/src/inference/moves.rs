//! Block moves that escape fixed points of single-factor coordinate ascent.
//!
//! Under the factorised posterior, q(t_m) and the q(π_{l,m}) of every group
//! are tied together: each α_{l,m} carries prior mass on the values q(t_m)
//! currently favours, so moving q(t_m) one coordinate at a time has to pass
//! through soft states that every group penalises. The truth move
//! re-optimises (q(t_m), q(π_{·,m}), q(r_{·,m})) jointly from each candidate
//! value. With φ, β and the sticks fixed the bound separates over objects.
//!
//! The same coupling traps q(r_{l,·}) of a group that holds no data: it
//! settles with some pairs unreliable while α still carries the reliable
//! prior, and each τ alone is stationary. The group move re-optimises
//! (q(u_l), q(r_{l,·}), q(π_{l,·})) of such a group from all-reliable and
//! all-unreliable starts; with φ, ν and the sticks fixed the bound
//! separates over groups. Populated groups are left to the data-driven
//! updates: flipping them wholesale tends to land in the "everything is
//! noise" explanation, which the bound scores about as well as the truth.
//!
//! Both keep the best block only if it raises the bound, so they are
//! monotone.

use rayon::prelude::*;

use super::state::VariationalState;
use super::updates::{
    fill_alpha, nu_log_weights, observation_term, reliability_term, tail_claim_term,
    tail_nu_coefficient, tau_logit, truth_term, PriorConstants,
};
use crate::claims::ClaimSet;
use crate::priors::Hyperparams;
use crate::special::{
    beta_expected_logs, beta_neg_kl, dirichlet_expected_log, normalize_log_weights,
    CompensatedSum,
};

const MAX_INNER: usize = 25;
const INNER_TOL: f64 = 1e-12;
/// Groups holding at least this much assignment mass skip the group move.
const GROUP_MOVE_MAX_SIZE: f64 = 1.0;

/// Local factors of one object: ν_m, α_{l,m} for all l (row-major, L × K)
/// and τ_{l,m}.
#[derive(Clone)]
struct Block {
    nu: Vec<f64>,
    alpha: Vec<f64>,
    e_log_pi: Vec<f64>,
    tau: Vec<f64>,
}

struct Context<'a> {
    state: &'a VariationalState,
    cs: &'a ClaimSet,
    h: &'a Hyperparams,
    prior: &'a PriorConstants,
    e_log_u: &'a [[f64; 2]],
    tail_coef: f64,
    m: usize,
}

impl Context<'_> {
    fn k(&self) -> usize {
        self.state.layout.range(self.m).len()
    }

    fn load(&self) -> Block {
        let s = self.state;
        let range = s.layout.range(self.m);
        let total = s.layout.total();
        let mut alpha = Vec::with_capacity(s.truncation * range.len());
        for l in 0..s.truncation {
            alpha.extend_from_slice(&s.alpha[l * total + range.start..l * total + range.end]);
        }
        let mut block = Block {
            nu: s.nu[range].to_vec(),
            e_log_pi: vec![0.0; alpha.len()],
            alpha,
            tau: (0..s.truncation).map(|l| s.tau[l * s.num_objects + self.m]).collect(),
        };
        self.refresh_expectations(&mut block);
        block
    }

    fn refresh_expectations(&self, b: &mut Block) {
        let k = self.k();
        for (src, dst) in b.alpha.chunks(k).zip(b.e_log_pi.chunks_mut(k)) {
            dirichlet_expected_log(src, dst);
        }
    }

    fn update_alpha(&self, b: &mut Block) {
        let k = self.k();
        let l_count = self.state.truncation;
        let column = self.cs.column(self.m);
        for (l, dst) in b.alpha.chunks_mut(k).enumerate() {
            fill_alpha(dst, &b.nu, b.tau[l], column, &self.state.phi, l, l_count, self.h);
        }
        self.refresh_expectations(b);
    }

    fn update_tau(&self, b: &mut Block) {
        let k = self.k();
        for (l, t) in b.tau.iter_mut().enumerate() {
            let e = &b.e_log_pi[l * k..(l + 1) * k];
            *t = 1.0 / (1.0 + (-tau_logit(e, &b.nu, self.prior, self.e_log_u[l], self.h)).exp());
        }
    }

    fn update_nu(&self, b: &mut Block) {
        let k = self.k();
        let e = &b.e_log_pi;
        nu_log_weights(
            &mut b.nu,
            b.tau.iter().copied(),
            |l| &e[l * k..(l + 1) * k],
            self.cs.column(self.m),
            &self.state.tail,
            self.tail_coef,
            self.h,
        );
        normalize_log_weights(&mut b.nu);
    }

    /// Every term of the bound that involves the object's local factors.
    fn objective(&self, b: &Block) -> f64 {
        let s = self.state;
        let k = self.k();
        let l_count = s.truncation;
        let mut f = CompensatedSum::new();
        f.add(truth_term(&b.nu));
        for l in 0..l_count {
            let slots = l * k..(l + 1) * k;
            f.add(reliability_term(b.tau[l], self.e_log_u[l]));
            f.add(observation_term(
                &b.alpha[slots.clone()],
                &b.e_log_pi[slots],
                &b.nu,
                b.tau[l],
                self.prior,
                self.h,
            ));
        }
        for c in self.cs.column(self.m) {
            for l in 0..l_count {
                f.add(s.phi[c.source * l_count + l] * b.e_log_pi[l * k + c.value]);
            }
            let tail = s.tail[c.source];
            if tail > 0.0 {
                f.add(tail * tail_claim_term(self.h, self.prior, b.nu[c.value]));
            }
        }
        f.value()
    }

    /// Local coordinate ascent started from q(t_m) = δ_value.
    fn settle_from(&self, template: &Block, value: usize) -> (f64, Block) {
        let mut b = template.clone();
        b.nu.iter_mut().enumerate().for_each(|(k, v)| *v = if k == value { 1.0 } else { 0.0 });
        self.update_alpha(&mut b);
        let mut f = self.objective(&b);
        for _ in 0..MAX_INNER {
            self.update_tau(&mut b);
            self.update_alpha(&mut b);
            self.update_nu(&mut b);
            self.update_alpha(&mut b);
            let next = self.objective(&b);
            let done = (next - f).abs() <= INNER_TOL * (f.abs() + 1.0);
            f = next;
            if done {
                break;
            }
        }
        (f, b)
    }

    fn best_move(&self) -> Option<Block> {
        let current = self.load();
        let baseline = self.objective(&current);
        let mut best: Option<(f64, Block)> = None;
        for value in 0..self.k() {
            let (f, b) = self.settle_from(&current, value);
            if best.as_ref().is_none_or(|(bf, _)| f > *bf) {
                best = Some((f, b));
            }
        }
        let (f, b) = best?;
        // strict improvement beyond rounding, so accepted moves never lower the bound
        (f > baseline + INNER_TOL * (baseline.abs() + 1.0)).then_some(b)
    }
}

/// Try the truth move on every object; returns how many objects changed.
pub fn relabel_truths(state: &mut VariationalState, cs: &ClaimSet, h: &Hyperparams) -> usize {
    let priors = PriorConstants::per_object(cs, h);
    let e_log_u: Vec<[f64; 2]> = state
        .beta
        .iter()
        .map(|&[a, b]| {
            let (x, y) = beta_expected_logs(a, b);
            [x, y]
        })
        .collect();
    let tail_coef = tail_nu_coefficient(h);

    let moves: Vec<Option<Block>> = {
        let snapshot = &*state;
        (0..snapshot.num_objects)
            .into_par_iter()
            .map(|m| {
                Context {
                    state: snapshot,
                    cs,
                    h,
                    prior: &priors[m],
                    e_log_u: &e_log_u,
                    tail_coef,
                    m,
                }
                .best_move()
            })
            .collect()
    };

    let total = state.layout.total();
    let m_count = state.num_objects;
    let mut changed = 0;
    for (m, block) in moves.into_iter().enumerate() {
        let Some(b) = block else { continue };
        changed += 1;
        let range = state.layout.range(m);
        let k = range.len();
        state.nu[range.clone()].copy_from_slice(&b.nu);
        for l in 0..state.truncation {
            state.alpha[l * total + range.start..l * total + range.end]
                .copy_from_slice(&b.alpha[l * k..(l + 1) * k]);
            state.tau[l * m_count + m] = b.tau[l];
        }
    }
    changed
}

/// Local factors of one group: β_l, τ_{l,m} for all m and α_{l,·} laid out
/// like a row of the state's α.
#[derive(Clone)]
struct GroupBlock {
    beta: [f64; 2],
    tau: Vec<f64>,
    alpha: Vec<f64>,
    e_log_pi: Vec<f64>,
}

struct GroupContext<'a> {
    state: &'a VariationalState,
    cs: &'a ClaimSet,
    h: &'a Hyperparams,
    priors: &'a [PriorConstants],
    l: usize,
}

impl GroupContext<'_> {
    fn load(&self) -> GroupBlock {
        let s = self.state;
        let total = s.layout.total();
        let m_count = s.num_objects;
        let mut block = GroupBlock {
            beta: s.beta[self.l],
            tau: s.tau[self.l * m_count..(self.l + 1) * m_count].to_vec(),
            alpha: s.alpha[self.l * total..(self.l + 1) * total].to_vec(),
            e_log_pi: vec![0.0; total],
        };
        self.refresh_expectations(&mut block);
        block
    }

    fn refresh_expectations(&self, b: &mut GroupBlock) {
        for m in 0..self.state.num_objects {
            let range = self.state.layout.range(m);
            dirichlet_expected_log(&b.alpha[range.clone()], &mut b.e_log_pi[range]);
        }
    }

    fn update_alpha(&self, b: &mut GroupBlock) {
        let s = self.state;
        for m in 0..s.num_objects {
            let range = s.layout.range(m);
            fill_alpha(
                &mut b.alpha[range.clone()],
                &s.nu[range],
                b.tau[m],
                self.cs.column(m),
                &s.phi,
                self.l,
                s.truncation,
                self.h,
            );
        }
        self.refresh_expectations(b);
    }

    fn update_beta(&self, b: &mut GroupBlock) {
        let ones: f64 = b.tau.iter().sum();
        let zeros: f64 = b.tau.iter().map(|t| 1.0 - t).sum();
        b.beta = [ones + self.h.b1, zeros + self.h.b0];
    }

    fn update_tau(&self, b: &mut GroupBlock) {
        let s = self.state;
        let (x, y) = beta_expected_logs(b.beta[0], b.beta[1]);
        for m in 0..s.num_objects {
            let range = s.layout.range(m);
            let logit = tau_logit(&b.e_log_pi[range.clone()], &s.nu[range], &self.priors[m], [x, y], self.h);
            b.tau[m] = 1.0 / (1.0 + (-logit).exp());
        }
    }

    /// Every term of the bound that involves the group's local factors.
    fn objective(&self, b: &GroupBlock) -> f64 {
        let s = self.state;
        let (x, y) = beta_expected_logs(b.beta[0], b.beta[1]);
        let mut f = CompensatedSum::new();
        f.add(beta_neg_kl(b.beta[0], b.beta[1], self.h.b1, self.h.b0));
        for m in 0..s.num_objects {
            let range = s.layout.range(m);
            f.add(reliability_term(b.tau[m], [x, y]));
            f.add(observation_term(
                &b.alpha[range.clone()],
                &b.e_log_pi[range.clone()],
                &s.nu[range.clone()],
                b.tau[m],
                &self.priors[m],
                self.h,
            ));
            for c in self.cs.column(m) {
                let p = s.phi[c.source * s.truncation + self.l];
                if p > 0.0 {
                    f.add(p * b.e_log_pi[range.start + c.value]);
                }
            }
        }
        f.value()
    }

    /// Local coordinate ascent started from q(r_{l,m} = 1) = `t1` for all m.
    fn settle_from(&self, template: &GroupBlock, t1: f64) -> (f64, GroupBlock) {
        let mut b = template.clone();
        b.tau.fill(t1);
        self.update_beta(&mut b);
        self.update_alpha(&mut b);
        let mut f = self.objective(&b);
        for _ in 0..MAX_INNER {
            self.update_tau(&mut b);
            self.update_beta(&mut b);
            self.update_alpha(&mut b);
            let next = self.objective(&b);
            let done = (next - f).abs() <= INNER_TOL * (f.abs() + 1.0);
            f = next;
            if done {
                break;
            }
        }
        (f, b)
    }

    fn best_move(&self) -> Option<GroupBlock> {
        let current = self.load();
        let baseline = self.objective(&current);
        let mut best: Option<(f64, GroupBlock)> = None;
        for t1 in [1.0, 0.0] {
            let (f, b) = self.settle_from(&current, t1);
            if best.as_ref().is_none_or(|(bf, _)| f > *bf) {
                best = Some((f, b));
            }
        }
        let (f, b) = best?;
        (f > baseline + INNER_TOL * (baseline.abs() + 1.0)).then_some(b)
    }
}

/// Try the group move on every explicit group with less than one source's
/// worth of assignment mass; returns how many changed.
pub fn reset_groups(state: &mut VariationalState, cs: &ClaimSet, h: &Hyperparams) -> usize {
    let priors = PriorConstants::per_object(cs, h);
    let moves: Vec<Option<GroupBlock>> = {
        let snapshot = &*state;
        (0..snapshot.truncation)
            .into_par_iter()
            .map(|l| {
                if snapshot.effective_size(l) >= GROUP_MOVE_MAX_SIZE {
                    return None;
                }
                GroupContext { state: snapshot, cs, h, priors: &priors, l }.best_move()
            })
            .collect()
    };

    let total = state.layout.total();
    let m_count = state.num_objects;
    let mut changed = 0;
    for (l, block) in moves.into_iter().enumerate() {
        let Some(b) = block else { continue };
        changed += 1;
        state.beta[l] = b.beta;
        state.tau[l * m_count..(l + 1) * m_count].copy_from_slice(&b.tau);
        state.alpha[l * total..(l + 1) * total].copy_from_slice(&b.alpha);
    }
    changed
}

/// The group-local part of the bound at the current state.
#[cfg(test)]
pub(crate) fn group_objective(state: &VariationalState, cs: &ClaimSet, h: &Hyperparams, l: usize) -> f64 {
    let priors = PriorConstants::per_object(cs, h);
    let ctx = GroupContext { state, cs, h, priors: &priors, l };
    ctx.objective(&ctx.load())
}

/// The object-local part of the bound at the current state.
#[cfg(test)]
pub(crate) fn local_objective(state: &VariationalState, cs: &ClaimSet, h: &Hyperparams, m: usize) -> f64 {
    let priors = PriorConstants::per_object(cs, h);
    let e_log_u: Vec<[f64; 2]> = state
        .beta
        .iter()
        .map(|&[a, b]| {
            let (x, y) = beta_expected_logs(a, b);
            [x, y]
        })
        .collect();
    let ctx = Context {
        state,
        cs,
        h,
        prior: &priors[m],
        e_log_u: &e_log_u,
        tail_coef: tail_nu_coefficient(h),
        m,
    };
    ctx.objective(&ctx.load())
}
