//! Per-patch dense gradient-orientation descriptor.
//!
//! A K×K luminance patch is split into an R×R grid of cells. Each pixel
//! votes its gradient magnitude into one of 8 orientation bins of its cell,
//! and the concatenated cell histograms (8R² values) are L2-normalized.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::imagekit::RasterImage;
use crate::par::{map_indexed, Execution};
use crate::patches::{extract_patch, PatchGrid};

pub const ORIENTATION_BINS: usize = 8;
const NORM_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct PatchDescriptor {
    values: Vec<f64>,
    grid: usize,
}

impl PatchDescriptor {
    pub fn new(values: Vec<f64>, grid: usize) -> Result<Self> {
        if values.len() != descriptor_len(grid) {
            return Err(Error::invalid(format!(
                "descriptor of grid {grid} needs {} values, got {}",
                descriptor_len(grid),
                values.len()
            )));
        }
        Ok(Self { values, grid })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn grid(&self) -> usize {
        self.grid
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub fn descriptor_len(grid: usize) -> usize {
    ORIENTATION_BINS * grid * grid
}

/// Central differences inside the patch, one-sided on its border.
fn gradient(patch: &[f64], k: usize, r: usize, c: usize) -> (f64, f64) {
    let at = |rr: usize, cc: usize| patch[rr * k + cc];
    let gx = if c == 0 {
        at(r, 1) - at(r, 0)
    } else if c == k - 1 {
        at(r, k - 1) - at(r, k - 2)
    } else {
        (at(r, c + 1) - at(r, c - 1)) / 2.0
    };
    let gy = if r == 0 {
        at(1, c) - at(0, c)
    } else if r == k - 1 {
        at(k - 1, c) - at(k - 2, c)
    } else {
        (at(r + 1, c) - at(r - 1, c)) / 2.0
    };
    (gx, gy)
}

/// Bin holding `atan2(gy, gx)` among 8 equal sectors of `[0, 2π)`.
pub fn orientation_bin(gx: f64, gy: f64) -> usize {
    let mut angle = gy.atan2(gx);
    if angle < 0.0 {
        angle += 2.0 * PI;
    }
    ((angle / (PI / 4.0)).floor() as usize) % ORIENTATION_BINS
}

fn check_patch(patch: &RasterImage, grid: usize) -> Result<usize> {
    if patch.channels() != 1 || patch.width() != patch.height() {
        return Err(Error::invalid(format!(
            "descriptor needs a square single-channel patch, got {}x{}x{}",
            patch.width(),
            patch.height(),
            patch.channels()
        )));
    }
    let k = patch.width();
    if grid == 0 || k < 2 * grid {
        return Err(Error::invalid(format!(
            "patch size {k} is too small for a {grid}x{grid} descriptor grid (needs K >= 2R)"
        )));
    }
    Ok(k)
}

/// Unnormalized cell histograms, row-major over cells, 8 bins per cell.
pub fn raw_histogram(patch: &RasterImage, grid: usize) -> Result<Vec<f64>> {
    let k = check_patch(patch, grid)?;
    let data = patch.data();
    let mut cell_of = vec![0usize; k];
    for cell in 0..grid {
        for p in cell_of.iter_mut().take((cell + 1) * k / grid).skip(cell * k / grid) {
            *p = cell;
        }
    }
    let mut hist = vec![0.0; descriptor_len(grid)];
    for r in 0..k {
        for c in 0..k {
            let (gx, gy) = gradient(data, k, r, c);
            let mag = (gx * gx + gy * gy).sqrt();
            if mag == 0.0 {
                continue;
            }
            let cell = cell_of[r] * grid + cell_of[c];
            hist[cell * ORIENTATION_BINS + orientation_bin(gx, gy)] += mag;
        }
    }
    Ok(hist)
}

pub fn patch_descriptor(patch: &RasterImage, grid: usize) -> Result<PatchDescriptor> {
    let mut values = raw_histogram(patch, grid)?;
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > NORM_EPS {
        values.iter_mut().for_each(|v| *v /= norm);
    } else {
        values.iter_mut().for_each(|v| *v = 0.0);
    }
    Ok(PatchDescriptor { values, grid })
}

/// Descriptor of every grid patch, aligned with `grid.anchors()`.
pub fn descriptor_image(img: &RasterImage, grid: &PatchGrid, r: usize) -> Result<Vec<PatchDescriptor>> {
    descriptor_image_with(img, grid, r, Execution::default())
}

pub fn descriptor_image_with(
    img: &RasterImage,
    grid: &PatchGrid,
    r: usize,
    exec: Execution,
) -> Result<Vec<PatchDescriptor>> {
    if img.channels() != 1 {
        return Err(Error::invalid("descriptors are computed on a single luminance channel"));
    }
    if grid.width() != img.width() || grid.height() != img.height() {
        return Err(Error::invalid("patch grid was sampled for a different image size"));
    }
    let k = grid.patch_size();
    map_indexed(exec, grid.len(), |i| {
        patch_descriptor(&extract_patch(img, grid.anchors()[i], k)?, r)
    })
    .into_iter()
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagekit::ColorSpace;
    use crate::patches::sample_grid;

    fn patch(k: usize, f: impl Fn(usize, usize) -> f64) -> RasterImage {
        RasterImage::from_fn(k, k, ColorSpace::Y, 1, |r, c| vec![f(r, c)]).unwrap()
    }

    #[test]
    fn constant_patch_is_zero() {
        let d = patch_descriptor(&patch(6, |_, _| 0.37), 3).unwrap();
        assert_eq!(d.len(), 72);
        assert!(d.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn brightness_shift_single_binade() {
        // values in [0.5, 0.75) stay in one binade after +0.1, so every
        // difference is computed exactly
        let p = patch(8, |r, c| 0.5 + ((r * 13 + c * 7) % 64) as f64 / 256.0);
        let q = patch(8, |r, c| p.get(r, c, 0) + 0.1);
        assert_eq!(
            patch_descriptor(&p, 3).unwrap(),
            patch_descriptor(&q, 3).unwrap()
        );
    }

    #[test]
    fn vertical_step_hand_oracle() {
        // cols 0..3 are 0, cols 3..6 are 1. Only cols 2 and 3 see a
        // difference: (1 - 0) / 2 = 0.5 pointing along +x, six rows each.
        let p = patch(6, |_, c| if c < 3 { 0.0 } else { 1.0 });
        let raw = raw_histogram(&p, 1).unwrap();
        let mut expected = vec![0.0; 8];
        expected[0] = 12.0 * 0.5;
        assert_eq!(raw, expected);
        let d = patch_descriptor(&p, 1).unwrap();
        let mass: f64 = d.values().iter().sum();
        assert_eq!(d.values()[0] + d.values()[4], mass);
        assert_eq!(d.values()[0], 1.0);
    }

    #[test]
    fn bins_follow_atan2() {
        assert_eq!(orientation_bin(1.0, 0.0), 0);
        assert_eq!(orientation_bin(1.0, -0.0), 0);
        assert_eq!(orientation_bin(0.0, 1.0), 2);
        assert_eq!(orientation_bin(-1.0, 0.0), 4);
        assert_eq!(orientation_bin(-1.0, -0.0), 4);
        assert_eq!(orientation_bin(0.0, -1.0), 6);
        assert_eq!(orientation_bin(1.0, -1e-3), 7);
        // rounds up to exactly 2π and wraps back into the first sector
        assert_eq!(orientation_bin(1.0, -1e-300), 0);
    }

    #[test]
    fn uneven_cells() {
        // K = 7, R = 3: cells cover rows {0,1}, {2,3}, {4,5,6}
        let p = patch(7, |r, _| if r >= 5 { 1.0 } else { 0.0 });
        let raw = raw_histogram(&p, 3).unwrap();
        let bottom: f64 = raw[48..].iter().sum();
        let total: f64 = raw.iter().sum();
        // rows 4 and 5 change: row 4 in cell row 2, row 5 in cell row 2
        assert_eq!(bottom, total);
    }

    #[test]
    fn rejects_small_patch() {
        assert!(patch_descriptor(&patch(5, |_, _| 0.0), 3).is_err());
        let rgb = RasterImage::filled(6, 6, ColorSpace::Rgb, &[0.0, 0.0, 0.0]).unwrap();
        assert!(patch_descriptor(&rgb, 1).is_err());
    }

    #[test]
    fn ramp_image_descriptors_identical() {
        let img = RasterImage::from_fn(12, 12, ColorSpace::Y, 1, |r, c| {
            vec![0.02 * r as f64 + 0.03 * c as f64]
        })
        .unwrap();
        let grid = sample_grid(12, 12, 6, 0.5).unwrap();
        assert_eq!(grid.len(), 9);
        let ds = descriptor_image(&img, &grid, 2).unwrap();
        assert_eq!(ds.len(), 9);
        for d in &ds[1..] {
            for (a, b) in d.values().iter().zip(ds[0].values()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        // direct computation: every pixel has gradient (0.03, 0.02), same bin
        let bin = orientation_bin(0.03, 0.02);
        let d = &ds[0];
        for cell in 0..4 {
            for b in 0..8 {
                let v = d.values()[cell * 8 + b];
                if b == bin {
                    assert!((v - 0.5).abs() < 1e-12);
                } else {
                    assert_eq!(v, 0.0);
                }
            }
        }
    }

    #[test]
    fn single_anchor_and_constant_image() {
        let img = patch(6, |r, c| ((r * 5 + c * 3) % 7) as f64 / 7.0);
        let grid = sample_grid(6, 6, 6, 1.0).unwrap();
        let ds = descriptor_image(&img, &grid, 3).unwrap();
        assert_eq!(ds, vec![patch_descriptor(&img, 3).unwrap()]);

        let flat = patch(10, |_, _| 0.4);
        let grid = sample_grid(10, 10, 6, 0.5).unwrap();
        for d in descriptor_image(&flat, &grid, 3).unwrap() {
            assert!(d.values().iter().all(|&v| v == 0.0));
        }
    }

    proptest::proptest! {
        #[test]
        fn raw_mass_equals_gradient_magnitudes(vals in proptest::collection::vec(0.0f64..1.0, 64)) {
            let p = RasterImage::new(8, 8, 1, ColorSpace::Y, vals).unwrap();
            let raw = raw_histogram(&p, 2).unwrap();
            let mut mags = 0.0;
            for r in 0..8 {
                for c in 0..8 {
                    let (gx, gy) = gradient(p.data(), 8, r, c);
                    mags += (gx * gx + gy * gy).sqrt();
                }
            }
            let total: f64 = raw.iter().sum();
            proptest::prop_assert!((total - mags).abs() <= 1e-12 * mags.max(1.0));
            proptest::prop_assert!(raw.iter().all(|&v| v >= 0.0));
        }
    }
}
