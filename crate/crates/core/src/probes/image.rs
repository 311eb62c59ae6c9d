//! Screenshot comparison for companion-app probes.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::ProbeError;

/// An RGB8 pixel grid, stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    width: usize,
    height: usize,
    pixels: Vec<[u8; 3]>,
}

impl Raster {
    pub fn filled(width: usize, height: usize, color: [u8; 3]) -> Self {
        Raster {
            width,
            height,
            pixels: vec![color; width * height],
        }
    }

    pub fn from_pixels(width: usize, height: usize, pixels: Vec<[u8; 3]>) -> Result<Self, ProbeError> {
        if pixels.len() != width * height {
            return Err(ProbeError::BadRaster(format!(
                "{} pixels for {width}x{height}",
                pixels.len()
            )));
        }
        Ok(Raster {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, color: [u8; 3]) {
        self.pixels[y * self.width + x] = color;
    }

    pub fn pixels(&self) -> &[[u8; 3]] {
        &self.pixels
    }

    pub fn inverted(&self) -> Raster {
        Raster {
            width: self.width,
            height: self.height,
            pixels: self.pixels.iter().map(|p| p.map(|c| 255 - c)).collect(),
        }
    }

    /// Writes binary PPM (`P6`): header with width and height, then RGB8 rows.
    pub fn write_ppm<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        write!(out, "P6\n{} {}\n255\n", self.width, self.height)?;
        for p in &self.pixels {
            out.write_all(p)?;
        }
        Ok(())
    }

    pub fn read_ppm<R: BufRead>(mut input: R) -> Result<Raster, ProbeError> {
        let mut header = Vec::new();
        let mut tokens: Vec<String> = Vec::new();
        while tokens.len() < 4 {
            header.clear();
            if input.read_until(b'\n', &mut header)? == 0 {
                return Err(ProbeError::BadRaster("truncated header".into()));
            }
            let line = String::from_utf8_lossy(&header);
            let line = line.split('#').next().unwrap_or("");
            tokens.extend(line.split_whitespace().map(str::to_string));
        }
        if tokens[0] != "P6" || tokens[3] != "255" {
            return Err(ProbeError::BadRaster("expected P6 with maxval 255".into()));
        }
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| ProbeError::BadRaster(format!("bad dimension {s:?}")))
        };
        let (width, height) = (parse(&tokens[1])?, parse(&tokens[2])?);
        let mut body = vec![0u8; width * height * 3];
        input.read_exact(&mut body)?;
        let pixels = body.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        Raster::from_pixels(width, height, pixels)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageDiffConfig {
    /// Per-pixel tolerance as a fraction of the channel range.
    pub per_pixel_threshold: f64,
    /// Fraction of differing pixels below which the images match.
    pub differing_fraction_threshold: f64,
}

impl Default for ImageDiffConfig {
    fn default() -> Self {
        ImageDiffConfig {
            per_pixel_threshold: 0.10,
            differing_fraction_threshold: 0.05,
        }
    }
}

/// Fraction of pixels whose largest channel difference exceeds the
/// per-pixel threshold.
pub fn differing_fraction(
    candidate: &Raster,
    reference: &Raster,
    per_pixel_threshold: f64,
) -> Result<f64, ProbeError> {
    if candidate.width != reference.width || candidate.height != reference.height {
        return Err(ProbeError::DimensionMismatch {
            candidate: (candidate.width, candidate.height),
            reference: (reference.width, reference.height),
        });
    }
    if candidate.pixels.is_empty() {
        return Ok(0.0);
    }
    let limit = per_pixel_threshold * 255.0;
    let differing = candidate
        .pixels
        .iter()
        .zip(&reference.pixels)
        .filter(|(a, b)| {
            let d = (0..3).map(|c| a[c].abs_diff(b[c])).max().unwrap_or(0);
            f64::from(d) > limit
        })
        .count();
    Ok(differing as f64 / candidate.pixels.len() as f64)
}

/// True when the candidate screenshot shows the same state as the reference.
pub fn image_diff_probe(
    candidate: &Raster,
    reference: &Raster,
    config: &ImageDiffConfig,
) -> Result<bool, ProbeError> {
    let frac = differing_fraction(candidate, reference, config.per_pixel_threshold)?;
    Ok(frac < config.differing_fraction_threshold)
}
