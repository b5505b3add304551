use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::claims::ClaimSet;
use crate::error::Result;
use crate::priors::Hyperparams;

/// Offsets of each object's value block inside the flat per-value arrays.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ValueLayout {
    offsets: Vec<usize>,
}

impl ValueLayout {
    pub(crate) fn new(cs: &ClaimSet) -> Self {
        let mut offsets = Vec::with_capacity(cs.num_objects() + 1);
        offsets.push(0);
        for obj in cs.objects() {
            offsets.push(offsets.last().unwrap() + obj.size());
        }
        Self { offsets }
    }

    pub(crate) fn total(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub(crate) fn range(&self, m: usize) -> std::ops::Range<usize> {
        self.offsets[m]..self.offsets[m + 1]
    }
}

/// Parameters of every factor of the mean-field posterior.
///
/// Group-indexed arrays cover the `truncation` explicit groups only; groups
/// beyond the truncation keep their prior and are represented by each
/// source's `tail` mass.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalState {
    pub(crate) truncation: usize,
    pub(crate) num_sources: usize,
    pub(crate) num_objects: usize,
    pub(crate) layout: ValueLayout,
    /// q(g_n = l), row-major `[n][l]`.
    pub(crate) phi: Vec<f64>,
    /// q(g_n > L).
    pub(crate) tail: Vec<f64>,
    /// Dirichlet parameters of q(π_{l,m}), `[l][value slot]`.
    pub(crate) alpha: Vec<f64>,
    /// Beta parameters of q(u_l).
    pub(crate) beta: Vec<[f64; 2]>,
    /// q(r_{l,m} = 1), `[l][m]`.
    pub(crate) tau: Vec<f64>,
    /// q(t_m = k), one block per object.
    pub(crate) nu: Vec<f64>,
    /// Beta parameters of q(ρ_l).
    pub(crate) sticks: Vec<[f64; 2]>,
}

impl VariationalState {
    pub fn truncation(&self) -> usize {
        self.truncation
    }

    pub fn num_sources(&self) -> usize {
        self.num_sources
    }

    pub fn num_objects(&self) -> usize {
        self.num_objects
    }

    pub fn phi_row(&self, n: usize) -> &[f64] {
        &self.phi[n * self.truncation..(n + 1) * self.truncation]
    }

    pub fn tail_mass(&self, n: usize) -> f64 {
        self.tail[n]
    }

    pub fn alpha(&self, l: usize, m: usize) -> &[f64] {
        let base = l * self.layout.total();
        let r = self.layout.range(m);
        &self.alpha[base + r.start..base + r.end]
    }

    pub fn beta(&self, l: usize) -> [f64; 2] {
        self.beta[l]
    }

    pub fn tau(&self, l: usize, m: usize) -> f64 {
        self.tau[l * self.num_objects + m]
    }

    pub fn nu(&self, m: usize) -> &[f64] {
        &self.nu[self.layout.range(m)]
    }

    pub fn stick(&self, l: usize) -> [f64; 2] {
        self.sticks[l]
    }

    /// E[u_l] under q.
    pub fn expected_reliability(&self, l: usize) -> f64 {
        let [a, b] = self.beta[l];
        a / (a + b)
    }

    /// Σ_n q(g_n = l).
    pub fn effective_size(&self, l: usize) -> f64 {
        (0..self.num_sources).map(|n| self.phi[n * self.truncation + l]).sum()
    }

    /// Checks normalisation and positivity; returns a description of the
    /// first violation.
    pub fn check_invariants(&self, tolerance: f64) -> std::result::Result<(), String> {
        for n in 0..self.num_sources {
            let row = self.phi_row(n);
            let total: f64 = row.iter().sum::<f64>() + self.tail[n];
            if (total - 1.0).abs() > tolerance || row.iter().any(|&p| p < 0.0) {
                return Err(format!("phi row {n} sums to {total}"));
            }
        }
        for m in 0..self.num_objects {
            let nu = self.nu(m);
            let total: f64 = nu.iter().sum();
            if (total - 1.0).abs() > tolerance || nu.iter().any(|&p| p < 0.0) {
                return Err(format!("nu row {m} sums to {total}"));
            }
        }
        if let Some(i) = self.tau.iter().position(|t| !(0.0..=1.0).contains(t)) {
            return Err(format!("tau entry {i} = {} outside [0, 1]", self.tau[i]));
        }
        if let Some(i) = self.alpha.iter().position(|&a| !(a > 0.0)) {
            return Err(format!("alpha entry {i} = {} not positive", self.alpha[i]));
        }
        for (name, pairs) in [("beta", &self.beta), ("stick", &self.sticks)] {
            if let Some(l) = pairs.iter().position(|p| !(p[0] > 0.0 && p[1] > 0.0)) {
                return Err(format!("{name} {l} = {:?} not positive", pairs[l]));
            }
        }
        if self.sticks.len() != self.truncation {
            return Err("stick count differs from truncation".into());
        }
        Ok(())
    }
}

/// RNG stream for one source, derived from the run seed and the source's
/// external id so that reordering sources does not change its draws.
pub(crate) fn source_rng(seed: u64, source_id: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(source_id.as_bytes());
    let digest: [u8; 32] = hasher.finalize().into();
    ChaCha8Rng::from_seed(digest)
}

/// Starting point for coordinate ascent.
///
/// Group responsibilities are a Dirichlet(1, …, 1) draw per source with no
/// tail mass, truths start at the +1-smoothed claim histogram, every τ at
/// the prior mean b1 / (b1 + b0), β and the sticks at their priors, and α
/// is derived from those by one Step-1 update.
pub fn init_state(cs: &ClaimSet, h: &Hyperparams, seed: u64) -> Result<VariationalState> {
    h.validate_numeric()?;
    let n_sources = cs.num_sources();
    let n_objects = cs.num_objects();
    let truncation = h.effective_truncation(n_sources);
    let layout = ValueLayout::new(cs);

    let mut phi = vec![0.0; n_sources * truncation];
    for n in 0..n_sources {
        let mut rng = source_rng(seed, cs.source_id(n));
        let row = &mut phi[n * truncation..(n + 1) * truncation];
        for p in row.iter_mut() {
            // Exp(1) draws normalised give a flat Dirichlet
            let u: f64 = rng.random();
            *p = -(1.0 - u).ln();
        }
        let total: f64 = row.iter().sum();
        if total > 0.0 && total.is_finite() {
            row.iter_mut().for_each(|p| *p /= total);
        } else {
            row.iter_mut().for_each(|p| *p = 1.0 / truncation as f64);
        }
    }

    let mut nu = vec![0.0; layout.total()];
    for m in 0..n_objects {
        let range = layout.range(m);
        let block = &mut nu[range];
        block.iter_mut().for_each(|v| *v = 1.0);
        for c in cs.column(m) {
            block[c.value] += 1.0;
        }
        let total: f64 = block.iter().sum();
        block.iter_mut().for_each(|v| *v /= total);
    }

    let mut state = VariationalState {
        truncation,
        num_sources: n_sources,
        num_objects: n_objects,
        alpha: vec![1.0; truncation * layout.total()],
        layout,
        phi,
        tail: vec![0.0; n_sources],
        beta: vec![[h.b1, h.b0]; truncation],
        tau: vec![h.prior_reliability(); truncation * n_objects],
        nu,
        sticks: vec![[1.0, h.kappa]; truncation],
    };
    super::updates::update_alpha(&mut state, cs, h);
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::claims::ClaimFormat;

    fn fixture() -> ClaimSet {
        let text = "source_id,object_id,value_label\na,x,A\nb,x,A\nc,x,B\nd,y,Q\n";
        let domains = [("z".to_string(), vec!["p".into(), "q".into(), "r".into()])]
            .into_iter()
            .collect();
        crate::claims::parse_claims_with_domains(text.as_bytes(), ClaimFormat::Csv, Some(&domains))
            .unwrap()
    }

    #[test]
    fn init_matches_documented_start() {
        let cs = fixture();
        let h = Hyperparams::default();
        let s = init_state(&cs, &h, 11).unwrap();
        // claims {A, A, B}: (2+1)/(3+2), (1+1)/(3+2)
        assert!((s.nu(0)[0] - 0.6).abs() < 1e-15);
        assert!((s.nu(0)[1] - 0.4).abs() < 1e-15);
        // unclaimed object is uniform
        for &v in s.nu(2) {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!(s.tau.iter().all(|&t| t == 0.5));
        assert_eq!(s.beta(0), [2.0, 2.0]);
        assert_eq!(s.stick(0), [1.0, 5.0]);
        assert_eq!(s.truncation(), 4);
        s.check_invariants(1e-12).unwrap();
    }

    #[test]
    fn source_streams_depend_on_id_not_position() {
        let mut a = source_rng(3, "alpha");
        let mut b = source_rng(3, "alpha");
        let mut c = source_rng(3, "beta");
        let x: u64 = a.random();
        assert_eq!(x, b.random::<u64>());
        assert_ne!(x, c.random::<u64>());
    }
}
