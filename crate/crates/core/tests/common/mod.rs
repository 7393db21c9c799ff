//! Test-only oracles and fixtures. Everything here is recomputed from the
//! model definition with plain loops and does not call into the
//! likelihood or M-step code under test.

#![allow(dead_code)]

use std::f64::consts::PI;

use epicolor::epitome::{DescriptorEpitome, DualEpitome, Epitome, MappingPrior, PosteriorTable};
use epicolor::imagekit::{ColorSpace, RasterImage};
use epicolor::PatchDescriptor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const RED: [f64; 3] = [0.8, 0.1, 0.1];
pub const BLUE: [f64; 3] = [0.1, 0.1, 0.9];

/// Whether a pixel of the synthetic reference lies in the blue vertical
/// band (the middle half of the columns); everything else is red.
pub fn in_band(_r: usize, c: usize, size: usize) -> bool {
    (size / 4..3 * size / 4).contains(&c)
}

pub fn two_region_image(size: usize) -> RasterImage {
    RasterImage::from_fn(size, size, ColorSpace::Rgb, 3, |r, c| {
        if in_band(r, c, size) { BLUE.to_vec() } else { RED.to_vec() }
    })
    .unwrap()
}

pub fn log_normal(x: f64, mu: f64, phi: f64) -> f64 {
    -0.5 * (2.0 * PI * phi).ln() - (x - mu) * (x - mu) / (2.0 * phi)
}

/// Σ over pixels and listed channels, mapping l anchored at
/// `(l / cols, l % cols)` with wrap-around.
pub fn oracle_patch_ll(patch: &RasterImage, epi: &Epitome, channels: &[usize]) -> Vec<f64> {
    let (rows, cols) = (epi.rows(), epi.cols());
    let k = patch.width();
    let mut out = Vec::new();
    for u in 0..rows {
        for v in 0..cols {
            let mut s = 0.0;
            for i in 0..k {
                for j in 0..k {
                    for (pc, &ec) in channels.iter().enumerate() {
                        let (er, ecol) = ((u + i) % rows, (v + j) % cols);
                        s += log_normal(patch.get(i, j, pc), epi.mean_at(er, ecol, ec), epi.var_at(er, ecol, ec));
                    }
                }
            }
            out.push(s);
        }
    }
    out
}

pub fn oracle_desc_ll(d: &PatchDescriptor, de: &DescriptorEpitome) -> Vec<f64> {
    (0..de.mappings())
        .map(|l| {
            (0..de.dim())
                .map(|t| log_normal(d.values()[t], de.mean_row(l)[t], de.var_row(l)[t]))
                .sum()
        })
        .collect()
}

/// Σ_k log Σ_l exp(log π_l + λ ll_patch + (1 - λ) ll_desc), summed naively
/// after shifting each row by its max.
pub fn oracle_objective(patches: &[RasterImage], descs: &[PatchDescriptor], m: &DualEpitome) -> f64 {
    let mut total = 0.0;
    for (p, d) in patches.iter().zip(descs) {
        let a = oracle_patch_ll(p, &m.yiq, &[0, 1, 2]);
        let b = oracle_desc_ll(d, &m.dsift);
        let terms: Vec<f64> = (0..a.len())
            .map(|l| m.prior.log_pi()[l] + m.lambda * a[l] + (1.0 - m.lambda) * b[l])
            .collect();
        let mx = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        total += mx + terms.iter().map(|t| (t - mx).exp()).sum::<f64>().ln();
    }
    total
}

pub struct OracleStep {
    pub mu: Vec<f64>,
    pub phi: Vec<f64>,
    pub mu_d: Vec<f64>,
    pub phi_d: Vec<f64>,
    pub pi: Vec<f64>,
}

/// Explicit (k, i, l) sums of the weighted mean, variance and prior updates.
pub fn oracle_m_step(
    patches: &[RasterImage],
    descs: &[PatchDescriptor],
    q: &PosteriorTable,
    prev: &DualEpitome,
    floor: f64,
) -> OracleStep {
    let e = &prev.yiq;
    let (rows, cols, ch) = (e.rows(), e.cols(), e.channels());
    let n = rows * cols;
    let k = prev.patch_size;
    let mut num = vec![0.0; n * ch];
    let mut den = vec![0.0; n];
    for (kk, p) in patches.iter().enumerate() {
        for i in 0..k {
            for j in 0..k {
                for l in 0..n {
                    let cell = ((l / cols + i) % rows) * cols + (l % cols + j) % cols;
                    let w = q.row(kk)[l];
                    den[cell] += w;
                    for c in 0..ch {
                        num[cell * ch + c] += w * p.get(i, j, c);
                    }
                }
            }
        }
    }
    let mut mu = e.mu().to_vec();
    for cell in 0..n {
        if den[cell] > 0.0 {
            for c in 0..ch {
                mu[cell * ch + c] = num[cell * ch + c] / den[cell];
            }
        }
    }
    let mut sq = vec![0.0; n * ch];
    for (kk, p) in patches.iter().enumerate() {
        for i in 0..k {
            for j in 0..k {
                for l in 0..n {
                    let cell = ((l / cols + i) % rows) * cols + (l % cols + j) % cols;
                    for c in 0..ch {
                        let r = p.get(i, j, c) - mu[cell * ch + c];
                        sq[cell * ch + c] += q.row(kk)[l] * r * r;
                    }
                }
            }
        }
    }
    let mut phi = e.phi().to_vec();
    for cell in 0..n {
        if den[cell] > 0.0 {
            for c in 0..ch {
                phi[cell * ch + c] = (sq[cell * ch + c] / den[cell]).max(floor);
            }
        }
    }

    let dim = prev.dsift.dim();
    let mut mu_d = prev.dsift.mu().to_vec();
    let mut phi_d = prev.dsift.phi().to_vec();
    let mut pi = vec![0.0; n];
    for l in 0..n {
        let w: f64 = (0..patches.len()).map(|kk| q.row(kk)[l]).sum();
        pi[l] = w / patches.len() as f64;
        if w > 0.0 {
            for t in 0..dim {
                let m = (0..patches.len()).map(|kk| q.row(kk)[l] * descs[kk].values()[t]).sum::<f64>() / w;
                let v = (0..patches.len())
                    .map(|kk| q.row(kk)[l] * (descs[kk].values()[t] - m).powi(2))
                    .sum::<f64>()
                    / w;
                mu_d[l * dim + t] = m;
                phi_d[l * dim + t] = v.max(floor);
            }
        }
    }
    OracleStep { mu, phi, mu_d, phi_d, pi }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Random model with descriptor grid 1 (8-dim descriptors).
pub fn random_model(rng: &mut ChaCha8Rng, rows: usize, cols: usize, k: usize, lambda: f64) -> DualEpitome {
    let n = rows * cols;
    let probs = uniform(rng, 0.05, 1.0, n);
    DualEpitome::new(
        Epitome::new(rows, cols, 3, uniform(rng, -0.5, 1.0, n * 3), uniform(rng, 0.05, 1.0, n * 3)).unwrap(),
        DescriptorEpitome::new(n, 8, uniform(rng, 0.0, 1.0, n * 8), uniform(rng, 0.05, 1.0, n * 8)).unwrap(),
        MappingPrior::from_probabilities(&probs).unwrap().0,
        k,
        1,
        lambda,
    )
    .unwrap()
}

pub fn random_posterior(rng: &mut ChaCha8Rng, q: usize, l: usize) -> PosteriorTable {
    let rows = (0..q)
        .map(|_| {
            // occasionally exact zeros, to exercise the skip path
            let w: Vec<f64> = (0..l)
                .map(|_| if rng.random_bool(0.2) { 0.0 } else { rng.random_range(0.0..1.0) })
                .collect();
            let s: f64 = w.iter().sum();
            if s == 0.0 {
                let mut one = vec![0.0; l];
                one[0] = 1.0;
                one
            } else {
                w.into_iter().map(|v| v / s).collect()
            }
        })
        .collect();
    PosteriorTable::from_rows(rows).unwrap()
}
