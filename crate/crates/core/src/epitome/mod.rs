//! The epitome model and its EM trainer.
//!
//! An epitome is an `rows × cols` toroidal map of per-pixel Gaussians over
//! YIQ values. Each image patch is generated from the epitome through a
//! hidden mapping: mapping `l` places the patch's top-left pixel at epitome
//! cell `(l / cols, l % cols)` and wraps around both edges, so all
//! `L = rows * cols` cells are valid mappings. A second table holds one
//! Gaussian per mapping over the patch descriptor, and both share the same
//! mapping prior.

mod em;
mod fft2d;
mod likelihood;

pub use em::{
    e_step, init_epitome, m_step, m_step_with_fault, posterior_table, total_log_likelihood,
    total_log_likelihood_with, train, train_with_observer, FloorStats, IterationRecord, MStep,
    TrainReport, TrainingSet,
};
pub use likelihood::{
    combined_log_likelihoods, descriptor_log_likelihoods, gaussian_log_density, mapping_coords,
    patch_log_likelihoods, DescriptorEngine, ModelScorer, PatchLikelihoodEngine,
};

use crate::error::{Error, Result};
use crate::par::Execution;

pub const VARIANCE_FLOOR: f64 = 1e-4;
pub const PRIOR_FLOOR: f64 = 1e-12;
pub const CONVERGENCE_TOLERANCE: f64 = 1e-6;

/// Which YIQ channels take part in the patch likelihood.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum ChannelMask {
    /// Y, I and Q: used while training on the color reference.
    #[default]
    Yiq,
    /// Y only: used when scoring grayscale targets.
    Luma,
}

impl ChannelMask {
    pub fn indices(self) -> &'static [usize] {
        match self {
            ChannelMask::Yiq => &[0, 1, 2],
            ChannelMask::Luma => &[0],
        }
    }
}

/// How per-mapping patch log-likelihoods are computed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum LikelihoodPath {
    /// Direct sum of Gaussian log-densities over every mapping and pixel.
    Naive,
    /// Cyclic cross-correlation through 2-D FFTs.
    #[default]
    Accelerated,
}

/// Mean and variance maps, row-major with interleaved channels.
#[derive(Clone, Debug, PartialEq)]
pub struct Epitome {
    rows: usize,
    cols: usize,
    channels: usize,
    mu: Vec<f64>,
    phi: Vec<f64>,
}

impl Epitome {
    pub fn new(rows: usize, cols: usize, channels: usize, mu: Vec<f64>, phi: Vec<f64>) -> Result<Self> {
        let n = rows * cols * channels;
        if n == 0 {
            return Err(Error::invalid("epitome dimensions must be positive"));
        }
        if mu.len() != n || phi.len() != n {
            return Err(Error::invalid(format!(
                "epitome {rows}x{cols}x{channels} needs {n} means and variances, got {} and {}",
                mu.len(),
                phi.len()
            )));
        }
        if phi.iter().any(|&p| !(p > 0.0) || !p.is_finite()) || mu.iter().any(|m| !m.is_finite()) {
            return Err(Error::invalid("epitome variances must be positive and all values finite"));
        }
        Ok(Self {
            rows,
            cols,
            channels,
            mu,
            phi,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Number of mappings, one per cell.
    pub fn mappings(&self) -> usize {
        self.rows * self.cols
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    #[inline]
    pub fn mean_at(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.mu[(row * self.cols + col) * self.channels + channel]
    }

    #[inline]
    pub fn var_at(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.phi[(row * self.cols + col) * self.channels + channel]
    }

    /// Contents moved cyclically by `(dr, dc)`: the cell at `(r, c)` ends up
    /// at `((r + dr) % rows, (c + dc) % cols)`.
    pub fn shifted(&self, dr: usize, dc: usize) -> Epitome {
        let mut mu = vec![0.0; self.mu.len()];
        let mut phi = vec![0.0; self.phi.len()];
        for r in 0..self.rows {
            for c in 0..self.cols {
                let src = (r * self.cols + c) * self.channels;
                let dst = (((r + dr) % self.rows) * self.cols + (c + dc) % self.cols) * self.channels;
                mu[dst..dst + self.channels].copy_from_slice(&self.mu[src..src + self.channels]);
                phi[dst..dst + self.channels].copy_from_slice(&self.phi[src..src + self.channels]);
            }
        }
        Epitome { mu, phi, ..*self }
    }
}

/// Log prior over the `L` mappings.
#[derive(Clone, Debug, PartialEq)]
pub struct MappingPrior {
    log_pi: Vec<f64>,
}

impl MappingPrior {
    pub fn uniform(len: usize) -> Self {
        let v = -(len as f64).ln();
        Self {
            log_pi: vec![v; len],
        }
    }

    /// Floors every probability at [`PRIOR_FLOOR`], renormalizes, and takes
    /// logs. Returns the prior and how many entries hit the floor.
    pub fn from_probabilities(p: &[f64]) -> Result<(Self, usize)> {
        if p.is_empty() || p.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("prior probabilities must be finite and non-negative"));
        }
        let floored = p.iter().filter(|&&v| v < PRIOR_FLOOR).count();
        let clamped: Vec<f64> = p.iter().map(|&v| v.max(PRIOR_FLOOR)).collect();
        let total: f64 = clamped.iter().sum();
        let log_pi = clamped.iter().map(|v| (v / total).ln()).collect();
        Ok((Self { log_pi }, floored))
    }

    /// Wraps log-probabilities as stored on disk. They must be finite and
    /// normalized within `1e-9`.
    pub fn from_log(log_pi: Vec<f64>) -> Result<Self> {
        if log_pi.is_empty() || log_pi.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("log prior must be non-empty and finite"));
        }
        let total: f64 = log_pi.iter().map(|v| v.exp()).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("prior sums to {total}, expected 1")));
        }
        Ok(Self { log_pi })
    }

    pub fn log_pi(&self) -> &[f64] {
        &self.log_pi
    }

    pub fn len(&self) -> usize {
        self.log_pi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_pi.is_empty()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.log_pi.iter().map(|v| v.exp()).collect()
    }
}

/// One diagonal Gaussian per mapping over the patch descriptor.
#[derive(Clone, Debug, PartialEq)]
pub struct DescriptorEpitome {
    mappings: usize,
    dim: usize,
    mu: Vec<f64>,
    phi: Vec<f64>,
}

impl DescriptorEpitome {
    pub fn new(mappings: usize, dim: usize, mu: Vec<f64>, phi: Vec<f64>) -> Result<Self> {
        let n = mappings * dim;
        if n == 0 || mu.len() != n || phi.len() != n {
            return Err(Error::invalid(format!(
                "descriptor epitome {mappings}x{dim} needs {n} means and variances"
            )));
        }
        if phi.iter().any(|&p| !(p > 0.0) || !p.is_finite()) || mu.iter().any(|m| !m.is_finite()) {
            return Err(Error::invalid("descriptor variances must be positive and all values finite"));
        }
        Ok(Self { mappings, dim, mu, phi })
    }

    pub fn mappings(&self) -> usize {
        self.mappings
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    pub fn mean_row(&self, l: usize) -> &[f64] {
        &self.mu[l * self.dim..(l + 1) * self.dim]
    }

    pub fn var_row(&self, l: usize) -> &[f64] {
        &self.phi[l * self.dim..(l + 1) * self.dim]
    }
}

/// A trained model: YIQ epitome, descriptor table and shared prior.
#[derive(Clone, Debug, PartialEq)]
pub struct DualEpitome {
    pub yiq: Epitome,
    pub dsift: DescriptorEpitome,
    pub prior: MappingPrior,
    pub patch_size: usize,
    pub grid: usize,
    pub lambda: f64,
}

impl DualEpitome {
    pub fn new(
        yiq: Epitome,
        dsift: DescriptorEpitome,
        prior: MappingPrior,
        patch_size: usize,
        grid: usize,
        lambda: f64,
    ) -> Result<Self> {
        let l = yiq.mappings();
        if dsift.mappings() != l || prior.len() != l {
            return Err(Error::invalid(format!(
                "mapping counts disagree: epitome {l}, descriptor {}, prior {}",
                dsift.mappings(),
                prior.len()
            )));
        }
        if dsift.dim() != crate::dsift::descriptor_len(grid) {
            return Err(Error::invalid("descriptor dimension does not match the descriptor grid"));
        }
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::invalid(format!("lambda must lie in [0, 1], got {lambda}")));
        }
        if patch_size == 0 {
            return Err(Error::invalid("patch size must be positive"));
        }
        Ok(Self {
            yiq,
            dsift,
            prior,
            patch_size,
            grid,
            lambda,
        })
    }

    pub fn mappings(&self) -> usize {
        self.yiq.mappings()
    }

    /// The same model with epitome contents shifted by `(dr, dc)` and the
    /// descriptor rows and prior permuted to match.
    pub fn shifted(&self, dr: usize, dc: usize) -> DualEpitome {
        let (rows, cols) = (self.yiq.rows(), self.yiq.cols());
        let dim = self.dsift.dim();
        let l_count = self.mappings();
        let mut mu_d = vec![0.0; self.dsift.mu.len()];
        let mut phi_d = vec![0.0; self.dsift.phi.len()];
        let mut log_pi = vec![0.0; l_count];
        for l in 0..l_count {
            let (r, c) = (l / cols, l % cols);
            let dst = ((r + dr) % rows) * cols + (c + dc) % cols;
            mu_d[dst * dim..(dst + 1) * dim].copy_from_slice(self.dsift.mean_row(l));
            phi_d[dst * dim..(dst + 1) * dim].copy_from_slice(self.dsift.var_row(l));
            log_pi[dst] = self.prior.log_pi[l];
        }
        DualEpitome {
            yiq: self.yiq.shifted(dr, dc),
            dsift: DescriptorEpitome {
                mu: mu_d,
                phi: phi_d,
                ..self.dsift
            },
            prior: MappingPrior { log_pi },
            ..*self
        }
    }
}

/// Posterior over mappings for every patch, one row per patch.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorTable {
    patches: usize,
    mappings: usize,
    q: Vec<f64>,
}

impl PosteriorTable {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let mappings = rows.first().map_or(0, Vec::len);
        if mappings == 0 || rows.iter().any(|r| r.len() != mappings) {
            return Err(Error::invalid("posterior rows must be non-empty and equally long"));
        }
        for (k, row) in rows.iter().enumerate() {
            let s: f64 = row.iter().sum();
            if row.iter().any(|&v| !(v >= 0.0)) || (s - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!("posterior row {k} is not a distribution")));
            }
        }
        Ok(Self {
            patches: rows.len(),
            mappings,
            q: rows.concat(),
        })
    }

    pub fn patches(&self) -> usize {
        self.patches
    }

    pub fn mappings(&self) -> usize {
        self.mappings
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.q[k * self.mappings..(k + 1) * self.mappings]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub patch_size: usize,
    pub omega: f64,
    pub iterations: usize,
    pub lambda: f64,
    pub grid: usize,
    pub epitome_scale: f64,
    pub variance_floor: f64,
    pub seed: u64,
    pub mask: ChannelMask,
    /// Half-width of the uniform noise added to the initial means.
    pub init_noise: f64,
    pub tolerance: f64,
    pub path: LikelihoodPath,
    pub exec: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            patch_size: 12,
            omega: 0.5,
            iterations: 20,
            lambda: 0.5,
            grid: 3,
            epitome_scale: 0.5,
            variance_floor: VARIANCE_FLOOR,
            seed: 0,
            mask: ChannelMask::Yiq,
            init_noise: 0.05,
            tolerance: CONVERGENCE_TOLERANCE,
            path: LikelihoodPath::Accelerated,
            exec: Execution::Parallel,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 {
            return Err(Error::invalid("patch size must be positive"));
        }
        if !(self.omega > 0.0 && self.omega <= 1.0) {
            return Err(Error::invalid(format!("omega must lie in (0, 1], got {}", self.omega)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::invalid(format!("lambda must lie in [0, 1], got {}", self.lambda)));
        }
        if self.grid == 0 || self.patch_size < 2 * self.grid {
            return Err(Error::invalid(format!(
                "descriptor grid {} needs patch size >= {}",
                self.grid,
                2 * self.grid
            )));
        }
        if !(self.epitome_scale > 0.0 && self.epitome_scale <= 1.0) {
            return Err(Error::invalid(format!(
                "epitome scale must lie in (0, 1], got {}",
                self.epitome_scale
            )));
        }
        if !(self.variance_floor > 0.0) || !self.variance_floor.is_finite() {
            return Err(Error::invalid("variance floor must be positive"));
        }
        if !(self.init_noise >= 0.0) || !(self.tolerance >= 0.0) {
            return Err(Error::invalid("noise and tolerance must be non-negative"));
        }
        Ok(())
    }
}
