//! Raster images, PNG I/O and the RGB/YIQ color transforms.
//!
//! Pixels are stored as `f64`, row-major with interleaved channels. PNG
//! bytes map to `v / 255` on load and back through `round(v * 255)` on save,
//! so 8-bit images survive a load/save cycle unchanged.

use std::path::Path;

use crate::error::{Error, Result};

/// What the channels of a [`RasterImage`] mean.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ColorSpace {
    Rgb,
    Yiq,
    /// Single luminance channel.
    Y,
    /// Chroma only (I, Q).
    Iq,
    Descriptor,
}

impl ColorSpace {
    fn fixed_channels(self) -> Option<usize> {
        match self {
            ColorSpace::Rgb | ColorSpace::Yiq => Some(3),
            ColorSpace::Y => Some(1),
            ColorSpace::Iq => Some(2),
            ColorSpace::Descriptor => None,
        }
    }
}

/// Forward NTSC matrix, rows Y, I, Q.
pub const RGB_TO_YIQ: [[f64; 3]; 3] = [
    [0.299, 0.587, 0.114],
    [0.595716, -0.274453, -0.321263],
    [0.211456, -0.522591, 0.311135],
];

/// Exact inverse of [`RGB_TO_YIQ`], computed once from the forward matrix.
fn yiq_to_rgb_matrix() -> &'static [[f64; 3]; 3] {
    static INV: std::sync::OnceLock<[[f64; 3]; 3]> = std::sync::OnceLock::new();
    INV.get_or_init(|| invert3(&RGB_TO_YIQ))
}

fn invert3(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let mut inv = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            // cofactor of (c, r), transposed
            let (r0, r1) = match c {
                0 => (1, 2),
                1 => (0, 2),
                _ => (0, 1),
            };
            let (c0, c1) = match r {
                0 => (1, 2),
                1 => (0, 2),
                _ => (0, 1),
            };
            let minor = m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
            let sign = if (r + c) % 2 == 0 { 1.0 } else { -1.0 };
            inv[r][c] = sign * minor / det;
        }
    }
    inv
}

#[derive(Clone, Debug, PartialEq)]
pub struct RasterImage {
    width: usize,
    height: usize,
    channels: usize,
    space: ColorSpace,
    data: Vec<f64>,
}

impl RasterImage {
    pub fn new(
        width: usize,
        height: usize,
        channels: usize,
        space: ColorSpace,
        data: Vec<f64>,
    ) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::invalid(format!(
                "image dimensions must be positive, got {width}x{height}x{channels}"
            )));
        }
        if let Some(expected) = space.fixed_channels() {
            if expected != channels {
                return Err(Error::invalid(format!(
                    "{space:?} images have {expected} channels, got {channels}"
                )));
            }
        }
        if data.len() != width * height * channels {
            return Err(Error::invalid(format!(
                "data length {} does not match {width}x{height}x{channels}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            space,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, space: ColorSpace, pixel: &[f64]) -> Result<Self> {
        let data = pixel
            .iter()
            .copied()
            .cycle()
            .take(width * height * pixel.len())
            .collect();
        Self::new(width, height, pixel.len(), space, data)
    }

    /// Builds an image by evaluating `f(row, col)` for every pixel.
    pub fn from_fn<F>(width: usize, height: usize, space: ColorSpace, channels: usize, mut f: F) -> Result<Self>
    where
        F: FnMut(usize, usize) -> Vec<f64>,
    {
        let mut data = Vec::with_capacity(width * height * channels);
        for r in 0..height {
            for c in 0..width {
                let px = f(r, c);
                if px.len() != channels {
                    return Err(Error::invalid("pixel closure returned wrong channel count"));
                }
                data.extend_from_slice(&px);
            }
        }
        Self::new(width, height, channels, space, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn space(&self) -> ColorSpace {
        self.space
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.data[(row * self.width + col) * self.channels + channel]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, channel: usize, v: f64) {
        self.data[(row * self.width + col) * self.channels + channel] = v;
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[f64] {
        let i = (row * self.width + col) * self.channels;
        &self.data[i..i + self.channels]
    }

    /// Copies one channel out as a single-channel image with the given semantics.
    pub fn channel(&self, channel: usize, space: ColorSpace) -> Result<RasterImage> {
        if channel >= self.channels {
            return Err(Error::invalid(format!(
                "channel {channel} out of range for {}-channel image",
                self.channels
            )));
        }
        let data = self
            .data
            .chunks_exact(self.channels)
            .map(|px| px[channel])
            .collect();
        RasterImage::new(self.width, self.height, 1, space, data)
    }

    fn expect(&self, space: ColorSpace, op: &str) -> Result<()> {
        if self.space != space {
            return Err(Error::invalid(format!(
                "{op} expects a {space:?} image, got {:?}",
                self.space
            )));
        }
        Ok(())
    }
}

fn mat_vec(m: &[[f64; 3]; 3], v: &[f64]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

pub fn rgb_pixel_to_yiq(rgb: &[f64]) -> [f64; 3] {
    mat_vec(&RGB_TO_YIQ, rgb)
}

/// Inverse transform of one pixel, without clamping.
pub fn yiq_pixel_to_rgb(yiq: &[f64]) -> [f64; 3] {
    mat_vec(yiq_to_rgb_matrix(), yiq)
}

pub fn rgb_to_yiq(img: &RasterImage) -> Result<RasterImage> {
    img.expect(ColorSpace::Rgb, "rgb_to_yiq")?;
    let data = img
        .data
        .chunks_exact(3)
        .flat_map(rgb_pixel_to_yiq)
        .collect();
    RasterImage::new(img.width, img.height, 3, ColorSpace::Yiq, data)
}

/// Converts back to RGB and clamps every channel into `[0, 1]`.
pub fn yiq_to_rgb(img: &RasterImage) -> Result<RasterImage> {
    img.expect(ColorSpace::Yiq, "yiq_to_rgb")?;
    let data = img
        .data
        .chunks_exact(3)
        .flat_map(|px| yiq_pixel_to_rgb(px).map(|v| v.clamp(0.0, 1.0)))
        .collect();
    RasterImage::new(img.width, img.height, 3, ColorSpace::Rgb, data)
}

/// Luminance view of a grayscale or RGB image.
///
/// A single-channel input is taken as-is (values clamped into `[0, 1]`); an
/// RGB input goes through the Y row of the NTSC matrix, so the result equals
/// channel 0 of [`rgb_to_yiq`] exactly.
pub fn grayscale_as_luminance(img: &RasterImage) -> Result<RasterImage> {
    match (img.space, img.channels) {
        (ColorSpace::Rgb, 3) => {
            let y = &RGB_TO_YIQ[0];
            let data = img
                .data
                .chunks_exact(3)
                .map(|px| y[0] * px[0] + y[1] * px[1] + y[2] * px[2])
                .collect();
            RasterImage::new(img.width, img.height, 1, ColorSpace::Y, data)
        }
        (ColorSpace::Y, 1) | (ColorSpace::Yiq, 3) => {
            let mut out = img.channel(0, ColorSpace::Y)?;
            out.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
            Ok(out)
        }
        _ => Err(Error::invalid(format!(
            "cannot take luminance of a {:?} image with {} channels",
            img.space, img.channels
        ))),
    }
}

/// Reads an 8-bit PNG as RGB (color) or Y (grayscale). Alpha is dropped.
pub fn load_image(path: impl AsRef<Path>) -> Result<RasterImage> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let decoded = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png).map_err(
        |e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        },
    )?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let norm = |b: u8| f64::from(b) / 255.0;
    use image::DynamicImage as D;
    match decoded {
        D::ImageLuma8(buf) => {
            RasterImage::new(w, h, 1, ColorSpace::Y, buf.into_raw().into_iter().map(norm).collect())
        }
        D::ImageLumaA8(buf) => RasterImage::new(
            w,
            h,
            1,
            ColorSpace::Y,
            buf.into_raw().chunks_exact(2).map(|p| norm(p[0])).collect(),
        ),
        D::ImageRgb8(buf) => {
            RasterImage::new(w, h, 3, ColorSpace::Rgb, buf.into_raw().into_iter().map(norm).collect())
        }
        D::ImageRgba8(buf) => RasterImage::new(
            w,
            h,
            3,
            ColorSpace::Rgb,
            buf.into_raw()
                .chunks_exact(4)
                .flat_map(|p| [norm(p[0]), norm(p[1]), norm(p[2])])
                .collect(),
        ),
        other => Err(Error::Image {
            path: path.to_path_buf(),
            message: format!("unsupported PNG pixel format {:?}, expected 8-bit", other.color()),
        }),
    }
}

#[inline]
pub fn quantize(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Writes an RGB image as 8-bit RGB PNG, or a Y image as 8-bit grayscale.
pub fn save_image(img: &RasterImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes: Vec<u8> = img.data.iter().map(|&v| quantize(v)).collect();
    let (w, h) = (img.width as u32, img.height as u32);
    let color = match img.space {
        ColorSpace::Rgb => image::ExtendedColorType::Rgb8,
        ColorSpace::Y => image::ExtendedColorType::L8,
        other => {
            return Err(Error::invalid(format!(
                "only RGB and Y images can be saved, got {other:?}"
            )))
        }
    };
    let file = std::fs::File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let encoder = image::codecs::png::PngEncoder::new(std::io::BufWriter::new(file));
    use image::ImageEncoder;
    encoder
        .write_image(&bytes, w, h, color)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}

/// Mean and population variance of each channel.
pub fn channel_moments(img: &RasterImage) -> Vec<(f64, f64)> {
    let n = (img.width * img.height) as f64;
    (0..img.channels)
        .map(|c| {
            let mean = img.data.iter().skip(c).step_by(img.channels).sum::<f64>() / n;
            let var = img
                .data
                .iter()
                .skip(c)
                .step_by(img.channels)
                .map(|v| (v - mean) * (v - mean))
                .sum::<f64>()
                / n;
            (mean, var)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn px(rgb: [f64; 3]) -> RasterImage {
        RasterImage::new(1, 1, 3, ColorSpace::Rgb, rgb.to_vec()).unwrap()
    }

    fn yiq(v: [f64; 3]) -> RasterImage {
        RasterImage::new(1, 1, 3, ColorSpace::Yiq, v.to_vec()).unwrap()
    }

    #[test]
    fn gray_has_zero_chroma() {
        let out = rgb_to_yiq(&px([1.0, 1.0, 1.0])).unwrap();
        assert!((out.get(0, 0, 0) - 1.0).abs() < 1e-15);
        assert!(out.get(0, 0, 1).abs() < 1e-15);
        assert!(out.get(0, 0, 2).abs() < 1e-15);
        assert_eq!(rgb_to_yiq(&px([0.0; 3])).unwrap().data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn red_is_first_matrix_column() {
        let out = rgb_to_yiq(&px([1.0, 0.0, 0.0])).unwrap();
        assert_eq!(out.data(), &[0.299, 0.595716, 0.211456]);
    }

    #[test]
    fn inverse_examples() {
        let white = yiq_to_rgb(&yiq([1.0, 0.0, 0.0])).unwrap();
        for v in white.data() {
            assert!((v - 1.0).abs() < 1e-12);
        }
        assert_eq!(yiq_to_rgb(&yiq([0.0; 3])).unwrap().data(), &[0.0, 0.0, 0.0]);
        let red = yiq_to_rgb(&yiq([0.299, 0.595716, 0.211456])).unwrap();
        for (a, b) in red.data().iter().zip([1.0, 0.0, 0.0]) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn out_of_gamut_is_clamped_in_rgb() {
        let out = yiq_to_rgb(&yiq([0.5, 0.59, 0.52])).unwrap();
        assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn wrong_space_rejected() {
        assert!(matches!(rgb_to_yiq(&yiq([0.0; 3])), Err(Error::InvalidInput(_))));
        assert!(matches!(yiq_to_rgb(&px([0.0; 3])), Err(Error::InvalidInput(_))));
        assert!(RasterImage::new(2, 2, 2, ColorSpace::Rgb, vec![0.0; 8]).is_err());
        assert!(RasterImage::new(0, 2, 1, ColorSpace::Y, vec![]).is_err());
    }

    #[test]
    fn luminance_examples() {
        let g = RasterImage::new(2, 1, 1, ColorSpace::Y, vec![0.25, 0.75]).unwrap();
        assert_eq!(grayscale_as_luminance(&g).unwrap().data(), &[0.25, 0.75]);
        assert!((grayscale_as_luminance(&px([1.0, 1.0, 1.0])).unwrap().data()[0] - 1.0).abs() < 1e-15);
        assert_eq!(grayscale_as_luminance(&px([0.0, 1.0, 0.0])).unwrap().data()[0], 0.587);
    }

    #[test]
    fn luminance_matches_yiq_channel_zero() {
        let img = RasterImage::from_fn(5, 4, ColorSpace::Rgb, 3, |r, c| {
            vec![r as f64 / 4.0, c as f64 / 5.0, ((r * c) % 3) as f64 / 2.0]
        })
        .unwrap();
        let y = grayscale_as_luminance(&img).unwrap();
        let full = rgb_to_yiq(&img).unwrap();
        for (i, v) in y.data().iter().enumerate() {
            assert_eq!(*v, full.data()[i * 3]);
        }
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        let img = RasterImage::from_fn(7, 3, ColorSpace::Rgb, 3, |r, c| {
            vec![(r * 40 + c) as f64 / 255.0, 1.0, 0.5]
        })
        .unwrap();
        save_image(&img, &path).unwrap();
        let back = load_image(&path).unwrap();
        assert_eq!(back.space(), ColorSpace::Rgb);
        assert_eq!(back.get(0, 0, 1), 1.0);
        // 0.5 quantizes to 128
        assert_eq!(back.get(0, 0, 2), 128.0 / 255.0);
        assert_eq!(back.get(2, 6, 0), 86.0 / 255.0);

        let bytes = std::fs::read(&path).unwrap();
        let path2 = dir.path().join("b.png");
        save_image(&back, &path2).unwrap();
        let a = image::open(&path).unwrap().to_rgb8().into_raw();
        let b = image::open(&path2).unwrap().to_rgb8().into_raw();
        assert_eq!(a, b);
        assert!(!bytes.is_empty());
    }

    #[test]
    fn save_quantization() {
        assert_eq!(quantize(0.5), 128);
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(1.7), 255);
        assert_eq!(quantize(-0.2), 0);
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(load_image("/nonexistent/x.png"), Err(Error::Io { .. })));
    }
}
