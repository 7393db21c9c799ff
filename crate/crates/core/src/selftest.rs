//! Small-instance oracle checks run by `epicolor selftest`.
//!
//! Each property compares production code against an explicit summation
//! over tiny random instances. The brute-force routines here recompute
//! everything from the model definition and share no code with the
//! production paths beyond the data types.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsift::PatchDescriptor;
use crate::epitome::{
    e_step, m_step, m_step_with_fault, patch_log_likelihoods, ChannelMask, DescriptorEpitome,
    DualEpitome, Epitome, MappingPrior, PatchLikelihoodEngine, PosteriorTable, TrainConfig,
};
use crate::imagekit::{ColorSpace, RasterImage};
use crate::par::Execution;

#[derive(Clone, Debug, Default)]
pub struct SelfTestOptions {
    /// Flip the sign of the mean in the variance update.
    pub inject_fault: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PropertyResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// A random tiny problem: patches, descriptors, model and posterior.
pub struct TinyInstance {
    pub patches: Vec<RasterImage>,
    pub descriptors: Vec<PatchDescriptor>,
    pub model: DualEpitome,
    pub posterior: PosteriorTable,
}

impl TinyInstance {
    pub fn random(rng: &mut ChaCha8Rng) -> Self {
        let k = rng.random_range(1..=3);
        let rows = rng.random_range(1..=3);
        let cols = rng.random_range(1..=3);
        let l = rows * cols;
        let q_count = rng.random_range(1..=4);
        let dim = 8;
        let mut uni = |lo: f64, hi: f64, n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(lo..hi)).collect() };
        let patches = (0..q_count)
            .map(|_| RasterImage::new(k, k, 3, ColorSpace::Yiq, uni(-0.5, 1.0, k * k * 3)).unwrap())
            .collect();
        let descriptors = (0..q_count)
            .map(|_| PatchDescriptor::new(uni(0.0, 1.0, dim), 1).unwrap())
            .collect();
        let model = DualEpitome::new(
            Epitome::new(rows, cols, 3, uni(-0.5, 1.0, l * 3), uni(0.05, 1.0, l * 3)).unwrap(),
            DescriptorEpitome::new(l, dim, uni(0.0, 1.0, l * dim), uni(0.05, 1.0, l * dim)).unwrap(),
            MappingPrior::uniform(l),
            k,
            1,
            0.5,
        )
        .unwrap();
        let rows_q = (0..q_count)
            .map(|_| {
                let w = uni(0.0, 1.0, l);
                let s: f64 = w.iter().sum();
                w.into_iter().map(|v| v / s).collect()
            })
            .collect();
        let posterior = PosteriorTable::from_rows(rows_q).unwrap();
        Self {
            patches,
            descriptors,
            model,
            posterior,
        }
    }
}

/// Explicit `(k, i, l)` summation of the mean/variance/prior updates.
/// Returns `(mu, phi, mu_d, phi_d, pi)` with variances floored.
#[allow(clippy::type_complexity)]
pub fn brute_force_m_step(inst: &TinyInstance, floor: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let epi = &inst.model.yiq;
    let (rows, cols, ch) = (epi.rows(), epi.cols(), epi.channels());
    let l_count = rows * cols;
    let k = inst.model.patch_size;
    let dim = inst.model.dsift.dim();
    let q_count = inst.patches.len();

    let mut mu = epi.mu().to_vec();
    let mut phi = epi.phi().to_vec();
    for j in 0..l_count {
        for c in 0..ch {
            let (mut num, mut den) = (0.0, 0.0);
            for kk in 0..q_count {
                for dr in 0..k {
                    for dc in 0..k {
                        for l in 0..l_count {
                            let tr = (l / cols + dr) % rows;
                            let tc = (l % cols + dc) % cols;
                            if tr * cols + tc == j {
                                let w = inst.posterior.row(kk)[l];
                                num += w * inst.patches[kk].get(dr, dc, c);
                                den += w;
                            }
                        }
                    }
                }
            }
            if den > 0.0 {
                mu[j * ch + c] = num / den;
                let mut s = 0.0;
                for kk in 0..q_count {
                    for dr in 0..k {
                        for dc in 0..k {
                            for l in 0..l_count {
                                let tr = (l / cols + dr) % rows;
                                let tc = (l % cols + dc) % cols;
                                if tr * cols + tc == j {
                                    let r = inst.patches[kk].get(dr, dc, c) - mu[j * ch + c];
                                    s += inst.posterior.row(kk)[l] * r * r;
                                }
                            }
                        }
                    }
                }
                phi[j * ch + c] = (s / den).max(floor);
            }
        }
    }

    let mut mu_d = inst.model.dsift.mu().to_vec();
    let mut phi_d = inst.model.dsift.phi().to_vec();
    let mut pi = vec![0.0; l_count];
    for l in 0..l_count {
        let den: f64 = (0..q_count).map(|kk| inst.posterior.row(kk)[l]).sum();
        pi[l] = den / q_count as f64;
        if den > 0.0 {
            for t in 0..dim {
                let num: f64 = (0..q_count)
                    .map(|kk| inst.posterior.row(kk)[l] * inst.descriptors[kk].values()[t])
                    .sum();
                let m = num / den;
                mu_d[l * dim + t] = m;
                let s: f64 = (0..q_count)
                    .map(|kk| {
                        let r = inst.descriptors[kk].values()[t] - m;
                        inst.posterior.row(kk)[l] * r * r
                    })
                    .sum();
                phi_d[l * dim + t] = (s / den).max(floor);
            }
        }
    }
    (mu, phi, mu_d, phi_d, pi)
}

/// Direct evaluation of the Gaussian patch likelihood for every mapping.
pub fn brute_force_patch_ll(patch: &RasterImage, epi: &Epitome, channels: &[usize]) -> Vec<f64> {
    let (rows, cols) = (epi.rows(), epi.cols());
    let k = patch.width();
    (0..rows * cols)
        .map(|l| {
            let mut acc = 0.0;
            for dr in 0..k {
                for dc in 0..k {
                    let (r, c) = ((l / cols + dr) % rows, (l % cols + dc) % cols);
                    for (pc, &ec) in channels.iter().enumerate() {
                        let z = patch.get(dr, dc, pc);
                        let m = epi.mean_at(r, c, ec);
                        let v = epi.var_at(r, c, ec);
                        acc += -(2.0 * PI * v).ln() / 2.0 - (z - m).powi(2) / (2.0 * v);
                    }
                }
            }
            acc
        })
        .collect()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn check_posterior_normalization() -> PropertyResult {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5e1f);
    let mut worst = 0.0f64;
    let mut negative = false;
    for _ in 0..1000 {
        let l = rng.random_range(1..=64);
        let ll: Vec<f64> = (0..l).map(|_| rng.random_range(-500.0..50.0)).collect();
        let p: Vec<f64> = (0..l).map(|_| rng.random_range(0.0..1.0)).collect();
        let prior = MappingPrior::from_probabilities(&p).unwrap().0;
        let q = e_step(&ll, &prior).unwrap();
        negative |= q.iter().any(|&v| !(v >= 0.0));
        worst = worst.max((q.iter().sum::<f64>() - 1.0).abs());
    }
    PropertyResult {
        name: "posterior_normalization",
        passed: worst <= 1e-9 && !negative,
        detail: format!("max |row sum - 1| = {worst:.3e}"),
    }
}

fn check_patch_ll_oracle() -> PropertyResult {
    let mut rng = ChaCha8Rng::seed_from_u64(0xb0b);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let inst = TinyInstance::random(&mut rng);
        for p in &inst.patches {
            let got = patch_log_likelihoods(p, &inst.model.yiq, ChannelMask::Yiq).unwrap();
            let want = brute_force_patch_ll(p, &inst.model.yiq, &[0, 1, 2]);
            worst = worst.max(max_abs_diff(&got, &want));
        }
    }
    PropertyResult {
        name: "patch_likelihood_oracle",
        passed: worst <= 1e-10,
        detail: format!("max abs error = {worst:.3e}"),
    }
}

fn check_fast_path() -> PropertyResult {
    let mut worst = 0.0f64;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = rng.random_range(1..=6);
        let cols = rng.random_range(1..=6);
        let k = rng.random_range(1..=4);
        let n = rows * cols * 3;
        let mu = (0..n).map(|_| rng.random_range(-0.5..1.0)).collect();
        let phi = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
        let epi = Epitome::new(rows, cols, 3, mu, phi).unwrap();
        let patch = RasterImage::new(
            k,
            k,
            3,
            ColorSpace::Yiq,
            (0..k * k * 3).map(|_| rng.random_range(-0.5..1.0)).collect(),
        )
        .unwrap();
        for mask in [ChannelMask::Yiq, ChannelMask::Luma] {
            let fast = PatchLikelihoodEngine::new(&epi, mask, k).unwrap().evaluate(&patch).unwrap();
            let slow = patch_log_likelihoods(&patch, &epi, mask).unwrap();
            for (a, b) in fast.iter().zip(&slow) {
                worst = worst.max((a - b).abs() / b.abs().max(1.0));
            }
        }
    }
    PropertyResult {
        name: "fast_path_equivalence",
        passed: worst <= 1e-8,
        detail: format!("max relative error = {worst:.3e}"),
    }
}

fn check_m_step(fault: bool) -> PropertyResult {
    let mut rng = ChaCha8Rng::seed_from_u64(0xe7e);
    let config = TrainConfig {
        exec: Execution::Serial,
        ..TrainConfig::default()
    };
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let inst = TinyInstance::random(&mut rng);
        let run = if fault { m_step_with_fault } else { m_step };
        let step = run(&inst.patches, &inst.descriptors, &inst.posterior, &inst.model, &config).unwrap();
        let (mu, phi, mu_d, phi_d, pi) = brute_force_m_step(&inst, config.variance_floor);
        let got_pi = step.prior.probabilities();
        for (a, b) in [
            (step.yiq.mu(), &mu[..]),
            (step.yiq.phi(), &phi[..]),
            (step.dsift.mu(), &mu_d[..]),
            (step.dsift.phi(), &phi_d[..]),
            (&got_pi[..], &pi[..]),
        ] {
            worst = worst.max(max_abs_diff(a, b));
        }
    }
    PropertyResult {
        name: "m_step_oracle",
        passed: worst <= 1e-10,
        detail: format!("max abs error = {worst:.3e}"),
    }
}

pub fn run(options: &SelfTestOptions) -> Vec<PropertyResult> {
    vec![
        check_m_step(options.inject_fault),
        check_patch_ll_oracle(),
        check_fast_path(),
        check_posterior_normalization(),
    ]
}
