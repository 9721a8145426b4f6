use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, RotError};
use crate::space::{GroundSpace, Prob};

/// Non-negative pixel intensities on a `width x height` grid, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensityImage {
    width: usize,
    height: usize,
    pixel_size: f64,
    intensities: Vec<f64>,
}

impl IntensityImage {
    pub fn new(width: usize, height: usize, pixel_size: f64, intensities: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || intensities.len() != width * height {
            return Err(RotError::invalid(format!(
                "{} intensities do not fill a {width} x {height} image",
                intensities.len()
            )));
        }
        if !(pixel_size > 0.0 && pixel_size.is_finite()) {
            return Err(RotError::invalid("pixel size must be positive"));
        }
        if let Some(v) = intensities.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(RotError::invalid(format!("intensity {v} is not a non-negative number")));
        }
        if !intensities.iter().any(|&v| v > 0.0) {
            return Err(RotError::invalid("image has no positive intensity"));
        }
        Ok(Self {
            width,
            height,
            pixel_size,
            intensities,
        })
    }

    /// Headerless CSV matrix, one image row per line.
    pub fn from_csv(path: impl AsRef<Path>, pixel_size: f64) -> Result<Self> {
        let rows = crate::io::read_matrix_csv(path)?;
        let height = rows.len();
        let width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != width) {
            return Err(RotError::invalid("CSV image rows have unequal lengths"));
        }
        Self::new(width, height, pixel_size, rows.into_iter().flatten().collect())
    }

    /// 8- or 16-bit PGM (plain or raw).
    pub fn from_pgm(path: impl AsRef<Path>, pixel_size: f64) -> Result<Self> {
        let img = image::ImageReader::open(path)?
            .with_guessed_format()?
            .decode()?
            .into_luma16();
        let (w, h) = img.dimensions();
        let data = img.into_raw().into_iter().map(f64::from).collect();
        Self::new(w as usize, h as usize, pixel_size, data)
    }

    /// Dispatch on the file extension: `.csv` or `.pgm`/`.pnm`.
    pub fn load(path: impl AsRef<Path>, pixel_size: f64) -> Result<Self> {
        let path = path.as_ref();
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("csv") | Some("txt") => Self::from_csv(path, pixel_size),
            Some("pgm") | Some("pnm") => Self::from_pgm(path, pixel_size),
            _ => Err(RotError::invalid(format!(
                "unsupported image format: {} (expected .csv or .pgm)",
                path.display()
            ))),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel_size(&self) -> f64 {
        self.pixel_size
    }

    pub fn intensities(&self) -> &[f64] {
        &self.intensities
    }

    /// Sub-image with top-left corner `(x, y)`.
    pub fn crop(&self, x: usize, y: usize, width: usize, height: usize) -> Result<Self> {
        if x + width > self.width || y + height > self.height {
            return Err(RotError::invalid("crop window leaves the image"));
        }
        let mut data = Vec::with_capacity(width * height);
        for row in y..y + height {
            data.extend_from_slice(&self.intensities[row * self.width + x..row * self.width + x + width]);
        }
        Self::new(width, height, self.pixel_size, data)
    }
}

/// Pixel grid scaled by the pixel size and the normalized intensities.
pub fn image_to_distribution(img: &IntensityImage) -> Result<(GroundSpace, Prob)> {
    let space = GroundSpace::pixel_grid(img.width, img.height, img.pixel_size)?;
    let prob = Prob::from_masses(&img.intensities)?;
    Ok((space, prob))
}

/// Synthetic image: isotropic Gaussian blobs (centres and width in pixel
/// units) over a constant background.
pub fn gaussian_blobs(
    width: usize,
    height: usize,
    centers: &[(f64, f64)],
    sigma: f64,
    background: f64,
) -> Result<IntensityImage> {
    let mut data = vec![background; width * height];
    for row in 0..height {
        for col in 0..width {
            for &(cx, cy) in centers {
                let d2 = (col as f64 - cx).powi(2) + (row as f64 - cy).powi(2);
                data[row * width + col] += (-d2 / (2.0 * sigma * sigma)).exp();
            }
        }
    }
    IntensityImage::new(width, height, 1.0, data)
}
