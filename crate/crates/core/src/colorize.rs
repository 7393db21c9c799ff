//! Colorizing a grayscale target with a trained model.
//!
//! Every target patch is assigned its most probable mapping, scored on the
//! luminance channel and the descriptor only. The I and Q values the
//! mappings point at are then averaged over all patches covering a pixel.

use crate::dsift::{patch_descriptor, PatchDescriptor};
use crate::epitome::{mapping_coords, ChannelMask, DualEpitome, LikelihoodPath, ModelScorer};
use crate::error::{Error, Result};
use crate::imagekit::{channel_moments, grayscale_as_luminance, yiq_to_rgb, ColorSpace, RasterImage};
use crate::par::{map_indexed, Execution};
use crate::patches::{extract_patch, sample_grid, PatchGrid};

#[derive(Clone, Debug, PartialEq)]
pub struct ColorizeConfig {
    pub omega: f64,
    pub luma_remap: bool,
    pub path: LikelihoodPath,
    pub exec: Execution,
}

impl Default for ColorizeConfig {
    fn default() -> Self {
        Self {
            omega: 0.25,
            luma_remap: false,
            path: LikelihoodPath::Accelerated,
            exec: Execution::Parallel,
        }
    }
}

/// Index of the largest score; the lowest index wins ties.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Most probable mapping of one luminance patch.
pub fn best_mapping(patch_y: &RasterImage, descriptor: &PatchDescriptor, dual: &DualEpitome) -> Result<usize> {
    let scorer = ModelScorer::new(dual, ChannelMask::Luma, LikelihoodPath::Accelerated)?;
    best_mapping_with(&scorer, patch_y, descriptor)
}

pub fn best_mapping_with(scorer: &ModelScorer<'_>, patch_y: &RasterImage, descriptor: &PatchDescriptor) -> Result<usize> {
    Ok(argmax(&scorer.log_joint(patch_y, descriptor)?))
}

/// Running sums of transferred chroma and how many patches touched each pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct ChromaAccumulator {
    width: usize,
    height: usize,
    sum_i: Vec<f64>,
    sum_q: Vec<f64>,
    count: Vec<f64>,
}

impl ChromaAccumulator {
    pub fn new(width: usize, height: usize) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            sum_i: vec![0.0; n],
            sum_q: vec![0.0; n],
            count: vec![0.0; n],
        }
    }

    /// Adds the epitome chroma under `mapping` to the K×K block at `anchor`.
    pub fn add_patch(&mut self, anchor: (usize, usize), patch_size: usize, mapping: usize, dual: &DualEpitome) -> Result<()> {
        let epi = &dual.yiq;
        if epi.channels() < 3 {
            return Err(Error::invalid("model has no chroma channels"));
        }
        if mapping >= epi.mappings() {
            return Err(Error::invalid(format!("mapping {mapping} out of range")));
        }
        let (r0, c0) = anchor;
        if r0 + patch_size > self.height || c0 + patch_size > self.width {
            return Err(Error::invalid(format!("patch at {anchor:?} leaves the image")));
        }
        for dr in 0..patch_size {
            for dc in 0..patch_size {
                let (er, ec) = mapping_coords(mapping, (dr, dc), epi.rows(), epi.cols());
                let p = (r0 + dr) * self.width + c0 + dc;
                self.sum_i[p] += epi.mean_at(er, ec, 1);
                self.sum_q[p] += epi.mean_at(er, ec, 2);
                self.count[p] += 1.0;
            }
        }
        Ok(())
    }

    pub fn count(&self) -> &[f64] {
        &self.count
    }

    /// Averages the sums and stacks them under `target_y` as a YIQ image.
    pub fn finish(&self, target_y: &RasterImage) -> Result<RasterImage> {
        if target_y.width() != self.width || target_y.height() != self.height || target_y.channels() != 1 {
            return Err(Error::invalid("luminance image does not match the accumulator"));
        }
        let mut data = Vec::with_capacity(self.count.len() * 3);
        for (p, &n) in self.count.iter().enumerate() {
            if n == 0.0 {
                return Err(Error::Internal(format!(
                    "pixel ({}, {}) was not covered by any patch",
                    p / self.width,
                    p % self.width
                )));
            }
            data.extend_from_slice(&[target_y.data()[p], self.sum_i[p] / n, self.sum_q[p] / n]);
        }
        RasterImage::new(self.width, self.height, 3, ColorSpace::Yiq, data)
    }
}

/// Writes epitome chroma into the target along the chosen mappings and
/// averages overlaps. The Y channel is copied from `target_y` untouched.
pub fn transfer_chroma(
    target_y: &RasterImage,
    grid: &PatchGrid,
    mappings: &[usize],
    dual: &DualEpitome,
) -> Result<RasterImage> {
    if mappings.len() != grid.len() {
        return Err(Error::invalid(format!(
            "{} mappings for {} patches",
            mappings.len(),
            grid.len()
        )));
    }
    let mut acc = ChromaAccumulator::new(target_y.width(), target_y.height());
    for (&anchor, &m) in grid.anchors().iter().zip(mappings) {
        acc.add_patch(anchor, grid.patch_size(), m, dual)?;
    }
    acc.finish(target_y)
}

/// Affine remap of `y` so its mean and standard deviation match the
/// luminance the model was trained on. The trained luminance moments are
/// read off the epitome as a uniform mixture of its Y Gaussians.
pub fn luminance_remap(y: &RasterImage, dual: &DualEpitome) -> Result<RasterImage> {
    let epi = &dual.yiq;
    let n = epi.mappings() as f64;
    let ch = epi.channels();
    let ref_mean = epi.mu().iter().step_by(ch).sum::<f64>() / n;
    let ref_var = epi
        .mu()
        .iter()
        .step_by(ch)
        .zip(epi.phi().iter().step_by(ch))
        .map(|(m, p)| p + (m - ref_mean) * (m - ref_mean))
        .sum::<f64>()
        / n;
    let (mean, var) = channel_moments(y)[0];
    let gain = if var > 1e-12 { (ref_var / var).sqrt() } else { 1.0 };
    let data = y
        .data()
        .iter()
        .map(|v| ((v - mean) * gain + ref_mean).clamp(0.0, 1.0))
        .collect();
    RasterImage::new(y.width(), y.height(), 1, ColorSpace::Y, data)
}

/// MAP mapping of every patch of `luma` under `grid`.
pub fn infer_mappings(luma: &RasterImage, grid: &PatchGrid, dual: &DualEpitome, config: &ColorizeConfig) -> Result<Vec<usize>> {
    let scorer = ModelScorer::new(dual, ChannelMask::Luma, config.path)?;
    let k = grid.patch_size();
    map_indexed(config.exec, grid.len(), |i| {
        let patch = extract_patch(luma, grid.anchors()[i], k)?;
        let desc = patch_descriptor(&patch, dual.grid)?;
        best_mapping_with(&scorer, &patch, &desc)
    })
    .into_iter()
    .collect()
}

/// Full inference: luminance → patch grid → MAP mappings → chroma
/// transfer → RGB (clamped).
pub fn colorize(target_gray: &RasterImage, dual: &DualEpitome, config: &ColorizeConfig) -> Result<RasterImage> {
    let yiq = colorize_yiq(target_gray, dual, config)?;
    yiq_to_rgb(&yiq)
}

/// [`colorize`] stopping before the conversion back to RGB.
pub fn colorize_yiq(target_gray: &RasterImage, dual: &DualEpitome, config: &ColorizeConfig) -> Result<RasterImage> {
    let luma = grayscale_as_luminance(target_gray)?;
    let k = dual.patch_size;
    if luma.width() < k || luma.height() < k {
        return Err(Error::invalid(format!(
            "target {}x{} is smaller than the model's {k}x{k} patches",
            luma.width(),
            luma.height()
        )));
    }
    let matched = if config.luma_remap {
        luminance_remap(&luma, dual)?
    } else {
        luma.clone()
    };
    let grid = sample_grid(luma.width(), luma.height(), k, config.omega)?;
    let mappings = infer_mappings(&matched, &grid, dual, config)?;
    transfer_chroma(&luma, &grid, &mappings, dual)
}
