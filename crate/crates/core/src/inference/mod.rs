//! Mean-field variational inference for the grouped-source model.

mod elbo;
mod moves;
mod state;
mod updates;

use serde::Serialize;

pub use elbo::{compute_elbo, elbo_terms, ElboTerms};
pub use moves::{relabel_truths, reset_groups};
pub use state::{init_state, VariationalState};
pub use updates::{
    apply_step, update_alpha, update_beta, update_nu, update_phi, update_sticks, update_tau, Step,
    ALPHA_FLOOR,
};

use crate::claims::ClaimSet;
use crate::error::Result;
use crate::priors::Hyperparams;

pub const DEFAULT_SEED: u64 = 20_130_617;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FitOptions {
    pub max_sweeps: usize,
    /// Stop once |ΔL| / (|L| + 1) falls below this.
    pub tol: f64,
    pub seed: u64,
    /// Run the per-object and per-group block moves after the factor
    /// updates of each sweep.
    pub block_moves: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_sweeps: 200,
            tol: 1e-6,
            seed: DEFAULT_SEED,
            block_moves: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub state: VariationalState,
    /// ELBO of the initial state, before the first sweep.
    pub initial_elbo: f64,
    /// ELBO after each sweep.
    pub elbo_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub warnings: Vec<String>,
}

impl FitResult {
    pub fn final_elbo(&self) -> f64 {
        self.elbo_trace.last().copied().unwrap_or(self.initial_elbo)
    }
}

/// Run one full sweep: the six factor updates in order, then (if enabled)
/// the block moves. Returns the clamped-α count.
pub fn sweep(state: &mut VariationalState, cs: &ClaimSet, h: &Hyperparams, block_moves: bool) -> usize {
    Step::SWEEP
        .iter()
        .filter(|&&step| block_moves || !step.is_block_move())
        .map(|&step| apply_step(state, cs, h, step))
        .sum()
}

pub fn fit(cs: &ClaimSet, h: &Hyperparams, opts: &FitOptions) -> Result<FitResult> {
    fit_with_progress(cs, h, opts, |_, _| {})
}

/// Like [`fit`], calling `progress(sweep, elbo)` after every sweep.
pub fn fit_with_progress<F>(
    cs: &ClaimSet,
    h: &Hyperparams,
    opts: &FitOptions,
    mut progress: F,
) -> Result<FitResult>
where
    F: FnMut(usize, f64),
{
    h.validate()?;
    let mut state = init_state(cs, h, opts.seed)?;
    let mut warnings = Vec::new();
    let initial_elbo = compute_elbo(&state, cs, h)?;
    let mut previous = initial_elbo;
    let mut trace = Vec::new();
    let mut converged = false;

    for iteration in 1..=opts.max_sweeps {
        let clamped = sweep(&mut state, cs, h, opts.block_moves);
        if clamped > 0 {
            warnings.push(format!(
                "sweep {iteration}: {clamped} Dirichlet parameters clamped to {ALPHA_FLOOR}"
            ));
        }
        let elbo = compute_elbo(&state, cs, h)?;
        trace.push(elbo);
        progress(iteration, elbo);
        if (elbo - previous).abs() / (elbo.abs() + 1.0) < opts.tol {
            converged = true;
            break;
        }
        previous = elbo;
    }

    Ok(FitResult {
        state,
        initial_elbo,
        iterations: trace.len(),
        elbo_trace: trace,
        converged,
        warnings,
    })
}
