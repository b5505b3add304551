//! Hyperparameter grid search, selecting by final ELBO.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::claims::ClaimSet;
use crate::error::{Error, Result};
use crate::inference::{fit, FitOptions, FitResult};
use crate::priors::{Hyperparams, UnreliableMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    /// Candidate soft counts, shared by η and θ in both regimes.
    pub eta_theta_values: Vec<f64>,
    /// Candidate Beta soft counts, shared by b1 and b0.
    pub b_values: Vec<f64>,
    pub kappa_values: Vec<f64>,
    pub restarts_per_config: usize,
    pub truncation: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            eta_theta_values: vec![1.0, 2.0, 5.0, 10.0],
            b_values: vec![1.0, 2.0, 4.0],
            kappa_values: vec![1.0, 5.0, 10.0],
            restarts_per_config: 3,
            truncation: Hyperparams::default().truncation,
        }
    }
}

fn sorted_unique(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.restarts_per_config == 0 {
            return Err(Error::InvalidInput("restarts_per_config must be at least 1".into()));
        }
        for (name, list) in [
            ("eta_theta_values", &self.eta_theta_values),
            ("b_values", &self.b_values),
            ("kappa_values", &self.kappa_values),
        ] {
            if list.is_empty() {
                return Err(Error::InvalidInput(format!("grid list `{name}` is empty")));
            }
            if let Some(v) = list.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
                return Err(Error::InvalidInput(format!(
                    "grid list `{name}` holds a non-positive value {v}"
                )));
            }
        }
        Ok(())
    }

    /// Every admissible configuration, in lexicographic order of
    /// (κ, b1, b0, η1, θ1, η0, θ0). Reliable pairs need η1 > θ1; unreliable
    /// pairs need η0 ≤ θ0 (equal: careless, smaller: malicious).
    pub fn configurations(&self) -> Vec<Hyperparams> {
        let counts = sorted_unique(&self.eta_theta_values);
        let bs = sorted_unique(&self.b_values);
        let kappas = sorted_unique(&self.kappa_values);
        let reliable: Vec<(f64, f64)> = counts
            .iter()
            .flat_map(|&e| counts.iter().filter(move |&&t| e > t).map(move |&t| (e, t)))
            .collect();
        let unreliable: Vec<(f64, f64)> = counts
            .iter()
            .flat_map(|&e| counts.iter().filter(move |&&t| e <= t).map(move |&t| (e, t)))
            .collect();
        let mut out = Vec::new();
        for &kappa in &kappas {
            for &b1 in &bs {
                for &b0 in &bs {
                    for &(eta1, theta1) in &reliable {
                        for &(eta0, theta0) in &unreliable {
                            out.push(Hyperparams {
                                kappa,
                                b1,
                                b0,
                                eta_reliable: eta1,
                                theta_reliable: theta1,
                                eta_unreliable: eta0,
                                theta_unreliable: theta0,
                                truncation: self.truncation,
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

/// One configuration's outcome.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeaderboardEntry {
    /// Position in the enumeration order.
    pub index: usize,
    /// 1-based by ELBO, failed configurations last.
    pub rank: usize,
    pub hyperparams: Hyperparams,
    pub mode: UnreliableMode,
    /// Best final ELBO over the restarts; `None` if every restart failed.
    pub elbo: Option<f64>,
    pub best_restart: Option<usize>,
    pub restart_elbos: Vec<Option<f64>>,
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
    pub errors: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct GridResult {
    pub best_index: usize,
    pub best: Hyperparams,
    pub best_restart: usize,
    pub fit: FitResult,
    pub leaderboard: Vec<LeaderboardEntry>,
}

impl GridResult {
    pub fn leaderboard_json(&self) -> serde_json::Value {
        serde_json::json!({
            "best_index": self.best_index,
            "best": self.best,
            "best_restart": self.best_restart,
            "entries": self.leaderboard,
        })
    }

    /// Aligned text table, best first.
    pub fn leaderboard_table(&self) -> String {
        let mut rows: Vec<&LeaderboardEntry> = self.leaderboard.iter().collect();
        rows.sort_by_key(|e| e.rank);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:>5} {:>6} {:>6} {:>5} {:>5} {:>6} {:>6} {:>6} {:>6} {:<9} {:>14} {:>6}",
            "rank", "index", "kappa", "b1", "b0", "eta1", "theta1", "eta0", "theta0", "mode", "elbo", "sweeps"
        );
        for e in rows {
            let h = &e.hyperparams;
            let mode = match e.mode {
                UnreliableMode::Careless => "careless",
                UnreliableMode::Malicious => "malicious",
            };
            let elbo = e.elbo.map_or_else(|| "failed".to_string(), |v| format!("{v:.4}"));
            let sweeps = e.iterations.map_or_else(|| "-".to_string(), |v| v.to_string());
            let _ = writeln!(
                out,
                "{:>5} {:>6} {:>6} {:>5} {:>5} {:>6} {:>6} {:>6} {:>6} {:<9} {:>14} {:>6}",
                e.rank,
                e.index,
                h.kappa,
                h.b1,
                h.b0,
                h.eta_reliable,
                h.theta_reliable,
                h.eta_unreliable,
                h.theta_unreliable,
                mode,
                elbo,
                sweeps
            );
        }
        out
    }
}

/// Seed of restart `r`, derived from the base seed.
pub fn restart_seed(base: u64, restart: usize) -> u64 {
    base.wrapping_add(restart as u64)
}

/// Index of the largest score, first index on ties; `None` entries are
/// skipped.
pub fn select_best(scores: &[Option<f64>]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.iter().enumerate() {
        if let Some(v) = *s {
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
    }
    best.map(|(i, _)| i)
}

/// Run the grid. See [`search_configurations`].
pub fn grid_search(cs: &ClaimSet, grid: &GridSpec, opts: &FitOptions) -> Result<GridResult> {
    grid_search_with_progress(cs, grid, opts, |_, _| {})
}

pub fn grid_search_with_progress<P>(
    cs: &ClaimSet,
    grid: &GridSpec,
    opts: &FitOptions,
    progress: P,
) -> Result<GridResult>
where
    P: Fn(usize, usize) + Sync,
{
    grid.validate()?;
    search_configurations(cs, &grid.configurations(), grid.restarts_per_config, opts, progress)
}

/// Fit every configuration `restarts` times (seeds from [`restart_seed`]),
/// keep the best restart per configuration and the best configuration
/// overall; ties go to the earlier configuration, then the earlier
/// restart. Failed fits are recorded and skipped. `progress(done, total)`
/// is called as configurations finish, possibly from worker threads.
pub fn search_configurations<P>(
    cs: &ClaimSet,
    configs: &[Hyperparams],
    restarts: usize,
    opts: &FitOptions,
    progress: P,
) -> Result<GridResult>
where
    P: Fn(usize, usize) + Sync,
{
    if configs.is_empty() {
        return Err(Error::InvalidInput("the grid holds no admissible configuration".into()));
    }
    if restarts == 0 {
        return Err(Error::InvalidInput("restarts_per_config must be at least 1".into()));
    }
    let done = std::sync::atomic::AtomicUsize::new(0);
    let total = configs.len();

    let mut entries: Vec<LeaderboardEntry> = configs
        .par_iter()
        .enumerate()
        .map(|(index, h)| {
            let outcomes: Vec<Result<FitResult>> = (0..restarts)
                .map(|r| fit(cs, h, &FitOptions { seed: restart_seed(opts.seed, r), ..*opts }))
                .collect();
            let restart_elbos: Vec<Option<f64>> = outcomes
                .iter()
                .map(|o| o.as_ref().ok().map(FitResult::final_elbo))
                .collect();
            let best_restart = select_best(&restart_elbos);
            let best_fit = best_restart.and_then(|r| outcomes[r].as_ref().ok());
            let entry = LeaderboardEntry {
                index,
                rank: 0,
                hyperparams: *h,
                mode: h.unreliable_mode(),
                elbo: best_restart.and_then(|r| restart_elbos[r]),
                best_restart,
                restart_elbos,
                iterations: best_fit.map(|f| f.iterations),
                converged: best_fit.map(|f| f.converged),
                errors: outcomes
                    .iter()
                    .filter_map(|o| o.as_ref().err().map(ToString::to_string))
                    .collect(),
            };
            progress(done.fetch_add(1, std::sync::atomic::Ordering::Relaxed) + 1, total);
            entry
        })
        .collect();

    let scores: Vec<Option<f64>> = entries.iter().map(|e| e.elbo).collect();
    let Some(best_index) = select_best(&scores) else {
        let first = entries.iter().flat_map(|e| e.errors.first()).next().cloned().unwrap_or_default();
        return Err(Error::AllFitsFailed(format!("{total} configurations; first error: {first}")));
    };

    let mut order: Vec<usize> = (0..entries.len()).collect();
    order.sort_by(|&a, &b| match (scores[a], scores[b]) {
        (Some(x), Some(y)) => y.total_cmp(&x).then(a.cmp(&b)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.cmp(&b),
    });
    for (position, &i) in order.iter().enumerate() {
        entries[i].rank = position + 1;
    }

    // states are not kept for every configuration; fits are deterministic,
    // so refitting the winner reproduces it exactly
    let best = configs[best_index];
    let best_restart = entries[best_index].best_restart.expect("scored entry has a restart");
    let fit = fit(cs, &best, &FitOptions { seed: restart_seed(opts.seed, best_restart), ..*opts })?;

    Ok(GridResult { best_index, best, best_restart, fit, leaderboard: entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::{sample_dataset, SynthesisShape};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_claims() -> ClaimSet {
        let text = "s,o,v\na,x,1\nb,x,1\nc,x,2\na,y,3\nb,y,3\nc,y,3\n";
        crate::claims::parse_claims(text.as_bytes(), crate::claims::ClaimFormat::Csv).unwrap()
    }

    #[test]
    fn default_grid_size() {
        // reliable pairs: C(4, 2) with η1 > θ1; unreliable: 4 equal + C(4, 2)
        let expected = 6 * (4 + 6) * (3 * 3) * 3;
        let configs = GridSpec::default().configurations();
        assert_eq!(configs.len(), expected);
        assert_eq!(expected, 1620);
        assert!(configs.iter().all(|h| h.validate().is_ok()));
        let modes: std::collections::BTreeSet<_> =
            configs.iter().map(|h| format!("{:?}", h.unreliable_mode())).collect();
        assert_eq!(modes.len(), 2);
    }

    #[test]
    fn configurations_are_lexicographic() {
        let key = |h: &Hyperparams| {
            [h.kappa, h.b1, h.b0, h.eta_reliable, h.theta_reliable, h.eta_unreliable, h.theta_unreliable]
        };
        let configs = GridSpec::default().configurations();
        for pair in configs.windows(2) {
            assert_eq!(key(&pair[0]).partial_cmp(&key(&pair[1])), Some(std::cmp::Ordering::Less));
        }
    }

    #[test]
    fn single_configuration_returns_its_fit() {
        let cs = small_claims();
        let h = Hyperparams::default();
        let opts = FitOptions::default();
        let result = search_configurations(&cs, &[h], 1, &opts, |_, _| {}).unwrap();
        let direct = fit(&cs, &h, &opts).unwrap();
        assert_eq!(result.best, h);
        assert_eq!(result.fit.state, direct.state);
        assert_eq!(result.leaderboard.len(), 1);
        assert_eq!(result.leaderboard[0].elbo, Some(direct.final_elbo()));
    }

    #[test]
    fn selection_picks_max_with_first_index_ties() {
        assert_eq!(select_best(&[Some(1.0), Some(3.0), Some(3.0)]), Some(1));
        assert_eq!(select_best(&[None, Some(-5.0), None]), Some(1));
        assert_eq!(select_best(&[None, None]), None);
        assert_eq!(select_best(&[]), None);
    }

    #[test]
    fn leaderboard_covers_every_configuration() {
        let cs = small_claims();
        let grid = GridSpec {
            eta_theta_values: vec![1.0, 3.0],
            b_values: vec![1.0],
            kappa_values: vec![1.0, 2.0],
            restarts_per_config: 2,
            truncation: 5,
        };
        let result = grid_search(&cs, &grid, &FitOptions::default()).unwrap();
        let configs = grid.configurations();
        assert_eq!(result.leaderboard.len(), configs.len());
        let best = result.leaderboard[result.best_index].elbo.unwrap();
        assert!(result.leaderboard.iter().all(|e| e.elbo.unwrap() <= best));
        assert_eq!(result.fit.final_elbo(), best);
        let mut ranks: Vec<usize> = result.leaderboard.iter().map(|e| e.rank).collect();
        ranks.sort_unstable();
        assert_eq!(ranks, (1..=configs.len()).collect::<Vec<_>>());
        assert_eq!(result.leaderboard_table().lines().count(), configs.len() + 1);
        assert!(result.leaderboard.iter().all(|e| e.restart_elbos.len() == 2));
    }

    #[test]
    fn grid_is_deterministic_across_thread_counts() {
        let cs = small_claims();
        let grid = GridSpec {
            eta_theta_values: vec![1.0, 4.0],
            b_values: vec![1.0, 2.0],
            kappa_values: vec![1.0],
            restarts_per_config: 2,
            truncation: 4,
        };
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| grid_search(&cs, &grid, &FitOptions::default()).unwrap())
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a.leaderboard, b.leaderboard);
        assert_eq!(a.fit.state, b.fit.state);
    }

    #[test]
    fn invalid_grids_are_rejected() {
        let cs = small_claims();
        let mut grid = GridSpec { restarts_per_config: 0, ..GridSpec::default() };
        assert!(grid_search(&cs, &grid, &FitOptions::default()).is_err());
        grid.restarts_per_config = 1;
        grid.kappa_values.clear();
        assert!(grid_search(&cs, &grid, &FitOptions::default()).is_err());
        // a single count admits no reliable pair
        let grid = GridSpec { eta_theta_values: vec![2.0], ..GridSpec::default() };
        assert!(grid_search(&cs, &grid, &FitOptions::default()).is_err());
    }

    /// On data drawn from a configuration, that configuration should
    /// out-score clearly misspecified ones once restarts are used.
    #[test]
    fn generating_configuration_beats_misspecified_ones() {
        let generating = Hyperparams {
            kappa: 2.0,
            b1: 4.0,
            b0: 1.0,
            eta_reliable: 10.0,
            theta_reliable: 1.0,
            eta_unreliable: 1.0,
            theta_unreliable: 1.0,
            truncation: 10,
        };
        let flat_reliable = Hyperparams { eta_reliable: 2.0, ..generating };
        let heavy_careless = Hyperparams { eta_unreliable: 5.0, theta_unreliable: 5.0, ..generating };
        let configs = [generating, flat_reliable, heavy_careless];
        let shape = SynthesisShape::uniform(60, 3, 0.5);
        let mut wins = [0; 2];
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (cs, _) = sample_dataset(&generating, 30, &shape, &mut rng).unwrap();
            let opts = FitOptions { seed: 0, ..FitOptions::default() };
            let result = search_configurations(&cs, &configs, 3, &opts, |_, _| {}).unwrap();
            let e = &result.leaderboard;
            for (w, alt) in wins.iter_mut().zip(&e[1..]) {
                if e[0].elbo >= alt.elbo {
                    *w += 1;
                }
            }
        }
        assert!(wins[0] > 10, "beat eta_reliable = 2 in {}/20", wins[0]);
        assert!(wins[1] >= 18, "beat careless 5/5 in {}/20", wins[1]);
    }
}
