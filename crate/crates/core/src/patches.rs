//! Dense square-patch sampling.

use crate::error::{Error, Result};
use crate::imagekit::RasterImage;

/// Top-left anchors of K×K patches covering an image, sorted row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatchGrid {
    anchors: Vec<(usize, usize)>,
    patch_size: usize,
    width: usize,
    height: usize,
}

impl PatchGrid {
    pub fn anchors(&self) -> &[(usize, usize)] {
        &self.anchors
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }
}

/// Gap between neighbouring anchors for a patch size and overlap ratio.
pub fn grid_gap(patch_size: usize, omega: f64) -> usize {
    ((omega * patch_size as f64).round() as usize).max(1)
}

fn axis_positions(dim: usize, k: usize, gap: usize) -> Vec<usize> {
    let last = dim - k;
    let mut out: Vec<usize> = (0..=last).step_by(gap).collect();
    if *out.last().unwrap() != last {
        out.push(last);
    }
    out
}

/// Anchors every `max(1, round(omega * K))` pixels along each axis, plus a
/// final anchor flush with the far edge so every pixel is covered.
pub fn sample_grid(width: usize, height: usize, patch_size: usize, omega: f64) -> Result<PatchGrid> {
    if patch_size == 0 {
        return Err(Error::invalid("patch size must be positive"));
    }
    if patch_size > width || patch_size > height {
        return Err(Error::invalid(format!(
            "patch size {patch_size} exceeds image size {width}x{height}"
        )));
    }
    if !(omega > 0.0 && omega <= 1.0) {
        return Err(Error::invalid(format!("omega must lie in (0, 1], got {omega}")));
    }
    let gap = grid_gap(patch_size, omega);
    let rows = axis_positions(height, patch_size, gap);
    let cols = axis_positions(width, patch_size, gap);
    let anchors = rows
        .iter()
        .flat_map(|&r| cols.iter().map(move |&c| (r, c)))
        .collect();
    Ok(PatchGrid {
        anchors,
        patch_size,
        width,
        height,
    })
}

/// Copies the K×K block at `anchor` (row, col). Never pads.
pub fn extract_patch(img: &RasterImage, anchor: (usize, usize), patch_size: usize) -> Result<RasterImage> {
    let (r0, c0) = anchor;
    if patch_size == 0 || r0 + patch_size > img.height() || c0 + patch_size > img.width() {
        return Err(Error::invalid(format!(
            "patch {patch_size}x{patch_size} at {anchor:?} does not fit in {}x{} image",
            img.width(),
            img.height()
        )));
    }
    let ch = img.channels();
    let mut data = Vec::with_capacity(patch_size * patch_size * ch);
    for r in r0..r0 + patch_size {
        let start = (r * img.width() + c0) * ch;
        data.extend_from_slice(&img.data()[start..start + patch_size * ch]);
    }
    RasterImage::new(patch_size, patch_size, ch, img.space(), data)
}

/// Extracts the patch under every anchor of `grid`.
pub fn extract_all(img: &RasterImage, grid: &PatchGrid) -> Result<Vec<RasterImage>> {
    grid.anchors()
        .iter()
        .map(|&a| extract_patch(img, a, grid.patch_size()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagekit::ColorSpace;

    fn axis(grid: &PatchGrid) -> (Vec<usize>, Vec<usize>) {
        let mut rows: Vec<usize> = grid.anchors().iter().map(|a| a.0).collect();
        let mut cols: Vec<usize> = grid.anchors().iter().map(|a| a.1).collect();
        rows.dedup();
        cols.sort();
        cols.dedup();
        (rows, cols)
    }

    #[test]
    fn exact_tiling() {
        let g = sample_grid(24, 24, 12, 1.0).unwrap();
        assert_eq!(g.len(), 4);
        assert_eq!(axis(&g), (vec![0, 12], vec![0, 12]));
    }

    #[test]
    fn half_overlap() {
        let g = sample_grid(24, 24, 12, 0.5).unwrap();
        assert_eq!(g.len(), 9);
        assert_eq!(axis(&g), (vec![0, 6, 12], vec![0, 6, 12]));
    }

    #[test]
    fn clamped_final_anchor() {
        let g = sample_grid(25, 25, 12, 1.0).unwrap();
        assert_eq!(g.len(), 9);
        assert_eq!(axis(&g), (vec![0, 12, 13], vec![0, 12, 13]));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(sample_grid(10, 30, 12, 0.5).is_err());
        assert!(sample_grid(30, 30, 12, 0.0).is_err());
        assert!(sample_grid(30, 30, 12, 1.5).is_err());
    }

    #[test]
    fn tiny_omega_uses_unit_gap() {
        let g = sample_grid(5, 5, 3, 0.01).unwrap();
        assert_eq!(axis(&g), (vec![0, 1, 2], vec![0, 1, 2]));
    }

    fn ramp() -> RasterImage {
        RasterImage::from_fn(5, 5, ColorSpace::Y, 1, |r, c| vec![(r * 10 + c) as f64]).unwrap()
    }

    #[test]
    fn extract_examples() {
        let img = ramp();
        assert_eq!(extract_patch(&img, (0, 0), 5).unwrap(), img);
        assert_eq!(extract_patch(&img, (1, 1), 1).unwrap().data(), &[11.0]);
        assert!(extract_patch(&img, (3, 0), 3).is_err());
    }

    #[test]
    fn clamped_patches_share_pixels() {
        let img = RasterImage::from_fn(7, 7, ColorSpace::Y, 1, |r, c| vec![(r * 7 + c) as f64]).unwrap();
        let g = sample_grid(7, 7, 4, 1.0).unwrap();
        // columns 0 and 3: both patches hold column 3
        let a = extract_patch(&img, g.anchors()[0], 4).unwrap();
        let b = extract_patch(&img, g.anchors()[1], 4).unwrap();
        assert_eq!(g.anchors()[1], (0, 3));
        for r in 0..4 {
            assert_eq!(a.get(r, 3, 0), b.get(r, 0, 0));
        }
    }

    #[test]
    fn anchors_sorted_unique() {
        let g = sample_grid(31, 17, 5, 0.3).unwrap();
        let mut sorted = g.anchors().to_vec();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted, g.anchors());
    }

    proptest::proptest! {
        #[test]
        fn covers_every_pixel(w in 1usize..40, h in 1usize..40, k in 1usize..16, omega in 0.01f64..=1.0) {
            proptest::prop_assume!(k <= w && k <= h);
            let g = sample_grid(w, h, k, omega).unwrap();
            let mut covered = vec![false; w * h];
            for &(r, c) in g.anchors() {
                proptest::prop_assert!(r + k <= h && c + k <= w);
                for rr in r..r + k {
                    for cc in c..c + k {
                        covered[rr * w + cc] = true;
                    }
                }
            }
            proptest::prop_assert!(covered.iter().all(|&x| x));
            let gap = grid_gap(k, omega);
            let per_axis = |dim: usize| {
                let span = dim - k;
                if !span.is_multiple_of(gap) { span.div_ceil(gap) + 1 } else { span / gap + 1 }
            };
            proptest::prop_assert_eq!(g.len(), per_axis(w) * per_axis(h));
            proptest::prop_assert_eq!(&g, &sample_grid(w, h, k, omega).unwrap());
        }
    }
}
