//! Per-mapping log-likelihoods of patches and descriptors.
//!
//! The naive functions are the reference definitions. The engines produce
//! the same numbers faster:
//!
//! * [`PatchLikelihoodEngine`] expands the Gaussian log-density
//!   `-0.5 ln(2πφ) - (z - μ)² / 2φ` into a patch-independent window sum
//!   plus two cyclic cross-correlations (`z` against `μ/φ`, `z²` against
//!   `1/φ`), evaluated for all mappings at once with 2-D FFTs.
//! * [`DescriptorEngine`] folds the per-row constants so a descriptor costs
//!   one pass over the table without any logarithms.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;

use super::fft2d::Fft2d;
use super::{ChannelMask, DescriptorEpitome, DualEpitome, Epitome, LikelihoodPath};
use crate::dsift::PatchDescriptor;
use crate::error::{Error, Result};
use crate::imagekit::RasterImage;

/// Epitome cell hit by pixel offset `offset` of a patch under mapping `l`.
#[inline]
pub fn mapping_coords(l: usize, offset: (usize, usize), rows: usize, cols: usize) -> (usize, usize) {
    let (u, v) = (l / cols, l % cols);
    ((u + offset.0) % rows, (v + offset.1) % cols)
}

#[inline]
pub fn gaussian_log_density(x: f64, mu: f64, phi: f64) -> f64 {
    let d = x - mu;
    -0.5 * (2.0 * PI * phi).ln() - d * d / (2.0 * phi)
}

/// Resolves which patch channel feeds which epitome channel.
fn channel_pairs(patch: &RasterImage, epitome_channels: usize, mask: ChannelMask) -> Result<Vec<(usize, usize)>> {
    let idx = mask.indices();
    if idx.iter().any(|&c| c >= epitome_channels) {
        return Err(Error::invalid("channel mask selects a channel the epitome does not have"));
    }
    if patch.channels() == idx.len() {
        Ok(idx.iter().copied().enumerate().collect())
    } else if patch.channels() == epitome_channels {
        Ok(idx.iter().map(|&c| (c, c)).collect())
    } else {
        Err(Error::invalid(format!(
            "patch has {} channels, mask {mask:?} needs {} (or the epitome's {epitome_channels})",
            patch.channels(),
            idx.len()
        )))
    }
}

fn square_patch(patch: &RasterImage) -> Result<usize> {
    if patch.width() != patch.height() {
        return Err(Error::invalid("patches must be square"));
    }
    Ok(patch.width())
}

/// Reference per-mapping log-likelihood of a patch: a direct sum of
/// Gaussian log-densities for every mapping, pixel and selected channel.
pub fn patch_log_likelihoods(patch: &RasterImage, epitome: &Epitome, mask: ChannelMask) -> Result<Vec<f64>> {
    let k = square_patch(patch)?;
    let pairs = channel_pairs(patch, epitome.channels(), mask)?;
    let (rows, cols) = (epitome.rows(), epitome.cols());
    let out = (0..epitome.mappings())
        .map(|l| {
            let mut acc = 0.0;
            for dr in 0..k {
                for dc in 0..k {
                    let (er, ec) = mapping_coords(l, (dr, dc), rows, cols);
                    for &(pc, ecn) in &pairs {
                        acc += gaussian_log_density(
                            patch.get(dr, dc, pc),
                            epitome.mean_at(er, ec, ecn),
                            epitome.var_at(er, ec, ecn),
                        );
                    }
                }
            }
            acc
        })
        .collect();
    Ok(out)
}

/// Reference per-mapping log-likelihood of a descriptor.
pub fn descriptor_log_likelihoods(d: &PatchDescriptor, de: &DescriptorEpitome) -> Result<Vec<f64>> {
    if d.len() != de.dim() {
        return Err(Error::invalid(format!(
            "descriptor length {} does not match table dimension {}",
            d.len(),
            de.dim()
        )));
    }
    Ok((0..de.mappings())
        .map(|l| {
            d.values()
                .iter()
                .zip(de.mean_row(l).iter().zip(de.var_row(l)))
                .map(|(&x, (&m, &p))| gaussian_log_density(x, m, p))
                .sum()
        })
        .collect())
}

/// `lambda * yiq + (1 - lambda) * dsift`, elementwise.
pub fn combined_log_likelihoods(ll_yiq: &[f64], ll_dsift: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if ll_yiq.len() != ll_dsift.len() {
        return Err(Error::invalid("likelihood vectors differ in length"));
    }
    Ok(ll_yiq
        .iter()
        .zip(ll_dsift)
        .map(|(a, b)| lambda * a + (1.0 - lambda) * b)
        .collect())
}

/// FFT-backed evaluation of [`patch_log_likelihoods`] for a fixed epitome,
/// channel mask and patch size.
pub struct PatchLikelihoodEngine {
    rows: usize,
    cols: usize,
    patch_size: usize,
    epitome_channels: usize,
    mask: ChannelMask,
    fft: Fft2d,
    /// Spectrum of `μ/φ` per selected channel.
    mean_term: Vec<Vec<Complex64>>,
    /// Spectrum of `1/φ` per selected channel.
    precision: Vec<Vec<Complex64>>,
    /// Patch-independent part of each mapping's sum.
    base: Vec<f64>,
    /// Index of the negated frequency, for unpacking two real transforms.
    neg: Vec<usize>,
}

impl PatchLikelihoodEngine {
    pub fn new(epitome: &Epitome, mask: ChannelMask, patch_size: usize) -> Result<Self> {
        if patch_size == 0 {
            return Err(Error::invalid("patch size must be positive"));
        }
        let (rows, cols) = (epitome.rows(), epitome.cols());
        let n = rows * cols;
        let ch = epitome.channels();
        if mask.indices().iter().any(|&c| c >= ch) {
            return Err(Error::invalid("channel mask selects a channel the epitome does not have"));
        }
        let fft = Fft2d::new(rows, cols);
        let mut scratch = Vec::new();
        let mut cell_const = vec![0.0; n];
        let mut mean_term = Vec::new();
        let mut precision = Vec::new();
        for &c in mask.indices() {
            let mut g1 = vec![Complex64::default(); n];
            let mut g2 = vec![Complex64::default(); n];
            for j in 0..n {
                let mu = epitome.mu()[j * ch + c];
                let phi = epitome.phi()[j * ch + c];
                g1[j] = Complex64::new(mu / phi, 0.0);
                g2[j] = Complex64::new(1.0 / phi, 0.0);
                cell_const[j] += -0.5 * (2.0 * PI * phi).ln() - 0.5 * mu * mu / phi;
            }
            fft.forward(&mut g1, &mut scratch);
            fft.forward(&mut g2, &mut scratch);
            mean_term.push(g1);
            precision.push(g2);
        }

        // cyclic K×K window sums of the per-cell constants, rows then columns
        let k = patch_size;
        let mut horiz = vec![0.0; n];
        for r in 0..rows {
            for v in 0..cols {
                horiz[r * cols + v] = (0..k).map(|dc| cell_const[r * cols + (v + dc) % cols]).sum();
            }
        }
        let mut base = vec![0.0; n];
        for u in 0..rows {
            for v in 0..cols {
                base[u * cols + v] = (0..k).map(|dr| horiz[((u + dr) % rows) * cols + v]).sum();
            }
        }

        let neg = (0..n)
            .map(|f| {
                let (fr, fc) = (f / cols, f % cols);
                ((rows - fr) % rows) * cols + (cols - fc) % cols
            })
            .collect();

        Ok(Self {
            rows,
            cols,
            patch_size,
            epitome_channels: ch,
            mask,
            fft,
            mean_term,
            precision,
            base,
            neg,
        })
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn evaluate(&self, patch: &RasterImage) -> Result<Vec<f64>> {
        let k = square_patch(patch)?;
        if k != self.patch_size {
            return Err(Error::invalid(format!(
                "engine built for {0}x{0} patches, got {k}x{k}",
                self.patch_size
            )));
        }
        let pairs = channel_pairs(patch, self.epitome_channels, self.mask)?;
        let n = self.rows * self.cols;
        let mut packed = vec![Complex64::default(); n];
        let mut spectrum = vec![Complex64::default(); n];
        let mut scratch = Vec::new();
        for (slot, &(pc, _)) in pairs.iter().enumerate() {
            packed.iter_mut().for_each(|v| *v = Complex64::default());
            // z in the real part, z² in the imaginary part, folded onto the torus
            for dr in 0..k {
                let row = (dr % self.rows) * self.cols;
                for dc in 0..k {
                    let z = patch.get(dr, dc, pc);
                    packed[row + dc % self.cols] += Complex64::new(z, z * z);
                }
            }
            self.fft.forward(&mut packed, &mut scratch);
            let g1 = &self.mean_term[slot];
            let g2 = &self.precision[slot];
            for f in 0..n {
                let x = packed[f];
                let xn = packed[self.neg[f]];
                // conj(A) and conj(B) for A = F(z), B = F(z²)
                let conj_a = (x.conj() + xn) * 0.5;
                let conj_b = (x.conj() - xn) * Complex64::new(0.0, 0.5);
                spectrum[f] += conj_a * g1[f] - conj_b * g2[f] * 0.5;
            }
        }
        self.fft.inverse(&mut spectrum, &mut scratch);
        let scale = 1.0 / n as f64;
        Ok(spectrum
            .iter()
            .zip(&self.base)
            .map(|(s, b)| s.re * scale + b)
            .collect())
    }
}

/// Precomputed descriptor table: `const_l + Σ_j (w1_lj d_j + w2_lj d_j²)`.
pub struct DescriptorEngine {
    dim: usize,
    constant: Vec<f64>,
    linear: Vec<f64>,
    quadratic: Vec<f64>,
}

impl DescriptorEngine {
    pub fn new(de: &DescriptorEpitome) -> Self {
        let constant = (0..de.mappings())
            .map(|l| {
                de.mean_row(l)
                    .iter()
                    .zip(de.var_row(l))
                    .map(|(&m, &p)| -0.5 * (2.0 * PI * p).ln() - 0.5 * m * m / p)
                    .sum()
            })
            .collect();
        let linear = de.mu().iter().zip(de.phi()).map(|(m, p)| m / p).collect();
        let quadratic = de.phi().iter().map(|p| -0.5 / p).collect();
        Self {
            dim: de.dim(),
            constant,
            linear,
            quadratic,
        }
    }

    pub fn evaluate(&self, d: &PatchDescriptor) -> Result<Vec<f64>> {
        if d.len() != self.dim {
            return Err(Error::invalid(format!(
                "descriptor length {} does not match table dimension {}",
                d.len(),
                self.dim
            )));
        }
        let x = d.values();
        let sq: Vec<f64> = x.iter().map(|v| v * v).collect();
        Ok(self
            .constant
            .iter()
            .enumerate()
            .map(|(l, c)| {
                let w1 = &self.linear[l * self.dim..(l + 1) * self.dim];
                let w2 = &self.quadratic[l * self.dim..(l + 1) * self.dim];
                let mut acc = *c;
                for j in 0..self.dim {
                    acc += w1[j] * x[j] + w2[j] * sq[j];
                }
                acc
            })
            .collect())
    }
}

enum PatchBackend<'a> {
    Naive(&'a Epitome),
    Fast(PatchLikelihoodEngine),
}

/// Scores patches against a [`DualEpitome`]: prior plus λ-weighted patch
/// and descriptor log-likelihoods for every mapping.
pub struct ModelScorer<'a> {
    model: &'a DualEpitome,
    mask: ChannelMask,
    patch: PatchBackend<'a>,
    descriptor: DescriptorEngine,
}

impl<'a> ModelScorer<'a> {
    pub fn new(model: &'a DualEpitome, mask: ChannelMask, path: LikelihoodPath) -> Result<Self> {
        let patch = match path {
            LikelihoodPath::Naive => PatchBackend::Naive(&model.yiq),
            LikelihoodPath::Accelerated => {
                PatchBackend::Fast(PatchLikelihoodEngine::new(&model.yiq, mask, model.patch_size)?)
            }
        };
        Ok(Self {
            model,
            mask,
            patch,
            descriptor: DescriptorEngine::new(&model.dsift),
        })
    }

    pub fn patch_log_likelihoods(&self, patch: &RasterImage) -> Result<Vec<f64>> {
        match &self.patch {
            PatchBackend::Naive(e) => {
                if square_patch(patch)? != self.model.patch_size {
                    return Err(Error::invalid("patch size does not match the model"));
                }
                patch_log_likelihoods(patch, e, self.mask)
            }
            PatchBackend::Fast(engine) => engine.evaluate(patch),
        }
    }

    pub fn descriptor_log_likelihoods(&self, d: &PatchDescriptor) -> Result<Vec<f64>> {
        self.descriptor.evaluate(d)
    }

    /// Unnormalized log posterior `log π_l + λ ll_patch + (1 - λ) ll_desc`.
    ///
    /// A term whose weight is exactly zero is skipped; the result is the
    /// same bits either way because both terms are finite.
    pub fn log_joint(&self, patch: &RasterImage, d: &PatchDescriptor) -> Result<Vec<f64>> {
        let lambda = self.model.lambda;
        let n = self.model.mappings();
        let ll_patch = if lambda > 0.0 {
            self.patch_log_likelihoods(patch)?
        } else {
            vec![0.0; n]
        };
        let ll_desc = if lambda < 1.0 {
            self.descriptor_log_likelihoods(d)?
        } else {
            vec![0.0; n]
        };
        let mut out = combined_log_likelihoods(&ll_patch, &ll_desc, lambda)?;
        for (o, lp) in out.iter_mut().zip(self.model.prior.log_pi()) {
            *o += lp;
        }
        Ok(out)
    }
}
