//! EM fitting: posterior rows, parameter updates, initialization and the
//! training loop.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::likelihood::ModelScorer;
use super::{
    ChannelMask, DescriptorEpitome, DualEpitome, Epitome, LikelihoodPath, MappingPrior,
    PosteriorTable, TrainConfig,
};
use crate::dsift::{descriptor_image_with, descriptor_len, PatchDescriptor};
use crate::error::{Error, Result};
use crate::imagekit::{channel_moments, rgb_to_yiq, ColorSpace, RasterImage};
use crate::par::{chunked_reduce, map_indexed, Execution};
use crate::patches::{extract_all, sample_grid, PatchGrid};

/// Softmax of `log_pi + combined_ll` with the max subtracted first.
pub fn e_step(combined_ll: &[f64], prior: &MappingPrior) -> Result<Vec<f64>> {
    if combined_ll.len() != prior.len() {
        return Err(Error::invalid("likelihood and prior lengths differ"));
    }
    let joint: Vec<f64> = combined_ll
        .iter()
        .zip(prior.log_pi())
        .map(|(a, b)| a + b)
        .collect();
    Ok(normalize_log_row(joint)?.0)
}

/// Turns an unnormalized log row into probabilities in place; returns them
/// with the row's log-sum-exp.
fn normalize_log_row(mut row: Vec<f64>) -> Result<(Vec<f64>, f64)> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::invalid("log-likelihood row has no finite maximum"));
    }
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    let inv = 1.0 / total;
    row.iter_mut().for_each(|v| *v *= inv);
    Ok((row, max + total.ln()))
}

fn check_inputs(patches: &[RasterImage], descriptors: &[PatchDescriptor]) -> Result<()> {
    if patches.is_empty() {
        return Err(Error::invalid("no patches"));
    }
    if patches.len() != descriptors.len() {
        return Err(Error::invalid(format!(
            "{} patches but {} descriptors",
            patches.len(),
            descriptors.len()
        )));
    }
    Ok(())
}

/// Posterior rows for every patch plus the total log-likelihood
/// `Σ_k logsumexp_l(log π_l + combined_ll_kl)` of the model they came from.
pub fn posterior_table(
    patches: &[RasterImage],
    descriptors: &[PatchDescriptor],
    model: &DualEpitome,
    mask: ChannelMask,
    path: LikelihoodPath,
    exec: Execution,
) -> Result<(PosteriorTable, f64)> {
    check_inputs(patches, descriptors)?;
    let scorer = ModelScorer::new(model, mask, path)?;
    let rows = map_indexed(exec, patches.len(), |k| {
        normalize_log_row(scorer.log_joint(&patches[k], &descriptors[k])?)
    });
    let mut q = Vec::with_capacity(patches.len() * model.mappings());
    let mut objective = 0.0;
    for row in rows {
        let (r, lse) = row?;
        q.extend_from_slice(&r);
        objective += lse;
    }
    let table = PosteriorTable {
        patches: patches.len(),
        mappings: model.mappings(),
        q,
    };
    Ok((table, objective))
}

/// Objective of the λ-weighted model over all three YIQ channels.
pub fn total_log_likelihood(
    patches: &[RasterImage],
    descriptors: &[PatchDescriptor],
    model: &DualEpitome,
) -> Result<f64> {
    total_log_likelihood_with(
        patches,
        descriptors,
        model,
        ChannelMask::Yiq,
        LikelihoodPath::Accelerated,
        Execution::default(),
    )
}

pub fn total_log_likelihood_with(
    patches: &[RasterImage],
    descriptors: &[PatchDescriptor],
    model: &DualEpitome,
    mask: ChannelMask,
    path: LikelihoodPath,
    exec: Execution,
) -> Result<f64> {
    check_inputs(patches, descriptors)?;
    let scorer = ModelScorer::new(model, mask, path)?;
    let terms = map_indexed(exec, patches.len(), |k| {
        normalize_log_row(scorer.log_joint(&patches[k], &descriptors[k])?).map(|(_, lse)| lse)
    });
    let mut total = 0.0;
    for t in terms {
        total += t?;
    }
    Ok(total)
}

/// How many parameters were clamped by an M-step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FloorStats {
    pub variance: usize,
    pub prior: usize,
}

impl FloorStats {
    pub fn any(&self) -> bool {
        self.variance > 0 || self.prior > 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MStep {
    pub yiq: Epitome,
    pub dsift: DescriptorEpitome,
    pub prior: MappingPrior,
    pub floors: FloorStats,
}

struct Sums {
    cell: Vec<f64>,
    cell_channel: Vec<f64>,
    mapping: Vec<f64>,
    mapping_dim: Vec<f64>,
}

impl Sums {
    fn zeros(cells: usize, channels: usize, dim: usize, with_weights: bool) -> Self {
        let w = if with_weights { cells } else { 0 };
        Sums {
            cell: vec![0.0; w],
            cell_channel: vec![0.0; cells * channels],
            mapping: vec![0.0; w],
            mapping_dim: vec![0.0; cells * dim],
        }
    }

    fn merge(&mut self, other: Sums) {
        fn add(a: &mut [f64], b: &[f64]) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        add(&mut self.cell, &other.cell);
        add(&mut self.cell_channel, &other.cell_channel);
        add(&mut self.mapping, &other.mapping);
        add(&mut self.mapping_dim, &other.mapping_dim);
    }
}

/// Re-estimates all parameters from posterior responsibilities.
///
/// Means are responsibility-weighted averages of the pixels (descriptors)
/// routed to each cell (mapping); variances use the new means and are
/// floored at `config.variance_floor`; the prior is the average
/// responsibility, floored and renormalized. Cells or mappings with zero
/// total weight keep their previous parameters.
pub fn m_step(
    patches: &[RasterImage],
    descriptors: &[PatchDescriptor],
    posterior: &PosteriorTable,
    previous: &DualEpitome,
    config: &TrainConfig,
) -> Result<MStep> {
    m_step_impl(patches, descriptors, posterior, previous, config, false)
}

/// [`m_step`] with the sign of the mean flipped inside the variance
/// residual. Only exists so the self-test can prove it notices.
#[doc(hidden)]
pub fn m_step_with_fault(
    patches: &[RasterImage],
    descriptors: &[PatchDescriptor],
    posterior: &PosteriorTable,
    previous: &DualEpitome,
    config: &TrainConfig,
) -> Result<MStep> {
    m_step_impl(patches, descriptors, posterior, previous, config, true)
}

fn m_step_impl(
    patches: &[RasterImage],
    descriptors: &[PatchDescriptor],
    posterior: &PosteriorTable,
    previous: &DualEpitome,
    config: &TrainConfig,
    fault: bool,
) -> Result<MStep> {
    check_inputs(patches, descriptors)?;
    let epi = &previous.yiq;
    let (rows, cols, ch) = (epi.rows(), epi.cols(), epi.channels());
    let n_map = epi.mappings();
    let dim = previous.dsift.dim();
    let k_size = previous.patch_size;
    if posterior.patches() != patches.len() || posterior.mappings() != n_map {
        return Err(Error::invalid("posterior table does not match patches and model"));
    }
    for (p, d) in patches.iter().zip(descriptors) {
        if p.width() != k_size || p.height() != k_size || p.channels() != ch {
            return Err(Error::invalid("patch shape does not match the model"));
        }
        if d.len() != dim {
            return Err(Error::invalid("descriptor length does not match the model"));
        }
    }
    let floor = config.variance_floor;
    let exec = config.exec;

    // column of every (mapping column, offset) pair, reused for all patches
    let col_of: Vec<usize> = (0..cols)
        .flat_map(|v| (0..k_size).map(move |dc| (v + dc) % cols))
        .collect();

    let visit = |k: usize, f: &mut dyn FnMut(usize, f64, usize, &[f64])| {
        let q = posterior.row(k);
        let z = patches[k].data();
        for (l, &w) in q.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let (u, v) = (l / cols, l % cols);
            for dr in 0..k_size {
                let er = (u + dr) % rows;
                let zrow = &z[dr * k_size * ch..(dr + 1) * k_size * ch];
                for dc in 0..k_size {
                    let j = er * cols + col_of[v * k_size + dc];
                    f(j, w, l, &zrow[dc * ch..(dc + 1) * ch]);
                }
            }
        }
    };

    // first moments and weights
    let first = chunked_reduce(
        exec,
        patches.len(),
        || Sums::zeros(n_map, ch, dim, true),
        |acc, k| {
            visit(k, &mut |j, w, _, px| {
                acc.cell[j] += w;
                for c in 0..ch {
                    acc.cell_channel[j * ch + c] += w * px[c];
                }
            });
            let d = descriptors[k].values();
            for (l, &w) in posterior.row(k).iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                acc.mapping[l] += w;
                for (t, x) in d.iter().enumerate() {
                    acc.mapping_dim[l * dim + t] += w * x;
                }
            }
        },
        Sums::merge,
    );

    let mut mu = epi.mu().to_vec();
    for j in 0..n_map {
        if first.cell[j] > 0.0 {
            for c in 0..ch {
                mu[j * ch + c] = first.cell_channel[j * ch + c] / first.cell[j];
            }
        }
    }
    let mut mu_d = previous.dsift.mu().to_vec();
    for l in 0..n_map {
        if first.mapping[l] > 0.0 {
            for t in 0..dim {
                mu_d[l * dim + t] = first.mapping_dim[l * dim + t] / first.mapping[l];
            }
        }
    }

    // second moments around the new means
    let sign = if fault { -1.0 } else { 1.0 };
    let second = chunked_reduce(
        exec,
        patches.len(),
        || Sums::zeros(n_map, ch, dim, false),
        |acc, k| {
            visit(k, &mut |j, w, _, px| {
                for c in 0..ch {
                    let r = px[c] - sign * mu[j * ch + c];
                    acc.cell_channel[j * ch + c] += w * r * r;
                }
            });
            let d = descriptors[k].values();
            for (l, &w) in posterior.row(k).iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                let m = &mu_d[l * dim..(l + 1) * dim];
                for t in 0..dim {
                    let r = d[t] - sign * m[t];
                    acc.mapping_dim[l * dim + t] += w * r * r;
                }
            }
        },
        Sums::merge,
    );

    let mut floors = FloorStats::default();
    let mut phi = epi.phi().to_vec();
    for j in 0..n_map {
        if first.cell[j] > 0.0 {
            for c in 0..ch {
                let v = second.cell_channel[j * ch + c] / first.cell[j];
                if v < floor {
                    floors.variance += 1;
                }
                phi[j * ch + c] = v.max(floor);
            }
        }
    }
    let mut phi_d = previous.dsift.phi().to_vec();
    for l in 0..n_map {
        if first.mapping[l] > 0.0 {
            for t in 0..dim {
                let v = second.mapping_dim[l * dim + t] / first.mapping[l];
                if v < floor {
                    floors.variance += 1;
                }
                phi_d[l * dim + t] = v.max(floor);
            }
        }
    }

    let q_count = patches.len() as f64;
    let pi: Vec<f64> = first.mapping.iter().map(|w| w / q_count).collect();
    let (prior, prior_floored) = MappingPrior::from_probabilities(&pi)?;
    floors.prior = prior_floored;

    Ok(MStep {
        yiq: Epitome::new(rows, cols, ch, mu, phi)?,
        dsift: DescriptorEpitome::new(n_map, dim, mu_d, phi_d)?,
        prior,
        floors,
    })
}

/// Patches, descriptors and grid sampled from a reference image.
#[derive(Clone, Debug)]
pub struct TrainingSet {
    pub yiq: RasterImage,
    pub grid: PatchGrid,
    pub patches: Vec<RasterImage>,
    pub descriptors: Vec<PatchDescriptor>,
}

impl TrainingSet {
    pub fn from_reference(reference: &RasterImage, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let yiq = rgb_to_yiq(reference)?;
        Self::from_yiq(yiq, config)
    }

    pub fn from_yiq(yiq: RasterImage, config: &TrainConfig) -> Result<Self> {
        if yiq.space() != ColorSpace::Yiq {
            return Err(Error::invalid("training set needs a YIQ image"));
        }
        let grid = sample_grid(yiq.width(), yiq.height(), config.patch_size, config.omega)?;
        let patches = extract_all(&yiq, &grid)?;
        let luma = yiq.channel(0, ColorSpace::Y)?;
        let descriptors = descriptor_image_with(&luma, &grid, config.grid, config.exec)?;
        Ok(Self {
            yiq,
            grid,
            patches,
            descriptors,
        })
    }
}

/// Seeded starting point: channel means plus uniform noise in
/// `±config.init_noise`, channel variances, and a uniform prior.
pub fn init_epitome(
    ref_yiq: &RasterImage,
    descriptors: &[PatchDescriptor],
    config: &TrainConfig,
) -> Result<DualEpitome> {
    config.validate()?;
    if ref_yiq.space() != ColorSpace::Yiq {
        return Err(Error::invalid("initialization needs the YIQ reference"));
    }
    if descriptors.is_empty() {
        return Err(Error::invalid("no descriptors to initialize from"));
    }
    let rows = (config.epitome_scale * ref_yiq.height() as f64).round() as usize;
    let cols = (config.epitome_scale * ref_yiq.width() as f64).round() as usize;
    if rows < config.patch_size || cols < config.patch_size {
        return Err(Error::invalid(format!(
            "epitome {rows}x{cols} is smaller than the {0}x{0} patch",
            config.patch_size
        )));
    }
    let dim = descriptor_len(config.grid);
    if descriptors.iter().any(|d| d.len() != dim) {
        return Err(Error::invalid("descriptor length does not match the descriptor grid"));
    }
    let floor = config.variance_floor;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let a = config.init_noise;
    let mut noise = move || if a > 0.0 { rng.random_range(-a..=a) } else { 0.0 };

    let moments = channel_moments(ref_yiq);
    let ch = ref_yiq.channels();
    let cells = rows * cols;
    let mut mu = Vec::with_capacity(cells * ch);
    let mut phi = Vec::with_capacity(cells * ch);
    for _ in 0..cells {
        for &(m, v) in &moments {
            mu.push(m + noise());
            phi.push(v.max(floor));
        }
    }

    let q = descriptors.len() as f64;
    let mut d_mean = vec![0.0; dim];
    for d in descriptors {
        d_mean.iter_mut().zip(d.values()).for_each(|(m, x)| *m += x);
    }
    d_mean.iter_mut().for_each(|m| *m /= q);
    let mut d_var = vec![0.0; dim];
    for d in descriptors {
        d_var
            .iter_mut()
            .zip(d.values().iter().zip(&d_mean))
            .for_each(|(s, (x, m))| *s += (x - m) * (x - m));
    }
    d_var.iter_mut().for_each(|s| *s = (*s / q).max(floor));
    let mut mu_d = Vec::with_capacity(cells * dim);
    let mut phi_d = Vec::with_capacity(cells * dim);
    for _ in 0..cells {
        for t in 0..dim {
            mu_d.push(d_mean[t] + noise());
            phi_d.push(d_var[t]);
        }
    }

    DualEpitome::new(
        Epitome::new(rows, cols, ch, mu, phi)?,
        DescriptorEpitome::new(cells, dim, mu_d, phi_d)?,
        MappingPrior::uniform(cells),
        config.patch_size,
        config.grid,
        config.lambda,
    )
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Objective of the model produced by this iteration's M-step.
    pub objective: f64,
    pub floors: FloorStats,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    /// Objective of the initial model.
    pub initial_objective: f64,
    pub iterations: Vec<IterationRecord>,
    pub converged: bool,
    pub patches: usize,
}

impl TrainReport {
    /// Initial objective followed by one value per iteration.
    pub fn objectives(&self) -> Vec<f64> {
        std::iter::once(self.initial_objective)
            .chain(self.iterations.iter().map(|r| r.objective))
            .collect()
    }
}

pub fn train(reference: &RasterImage, config: &TrainConfig) -> Result<(DualEpitome, TrainReport)> {
    train_with_observer(reference, config, |_| {})
}

/// Runs EM from the seeded initialization, calling `observer` after each
/// iteration. Stops after `config.iterations` iterations or once the
/// relative change of the objective drops below `config.tolerance`.
pub fn train_with_observer<F>(
    reference: &RasterImage,
    config: &TrainConfig,
    mut observer: F,
) -> Result<(DualEpitome, TrainReport)>
where
    F: FnMut(&IterationRecord),
{
    let set = TrainingSet::from_reference(reference, config)?;
    let mut model = init_epitome(&set.yiq, &set.descriptors, config)?;
    let e = |m: &DualEpitome| {
        posterior_table(&set.patches, &set.descriptors, m, config.mask, config.path, config.exec)
    };
    let (mut posterior, mut objective) = e(&model)?;
    let mut report = TrainReport {
        initial_objective: objective,
        patches: set.patches.len(),
        ..TrainReport::default()
    };
    for iteration in 1..=config.iterations {
        let step = m_step(&set.patches, &set.descriptors, &posterior, &model, config)?;
        model = DualEpitome {
            yiq: step.yiq,
            dsift: step.dsift,
            prior: step.prior,
            ..model
        };
        let (next_posterior, next_objective) = e(&model)?;
        let record = IterationRecord {
            iteration,
            objective: next_objective,
            floors: step.floors,
        };
        observer(&record);
        report.iterations.push(record);
        let change = (next_objective - objective).abs();
        posterior = next_posterior;
        let previous = objective;
        objective = next_objective;
        if change < config.tolerance * previous.abs() {
            report.converged = true;
            break;
        }
    }
    Ok((model, report))
}
