//! Non-overlapping grid tiling with a tissue filter.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{Rgb, RgbImage};

pub const DEFAULT_PATCH_SIZE: usize = 32;
pub const DEFAULT_TISSUE_PERCENT: f64 = 50.0;
/// A pixel whose every channel reaches this level counts as background.
pub const BACKGROUND_LEVEL: u8 = 220;

/// Default background test: near-white on all three channels.
pub fn is_near_white(px: Rgb) -> bool {
    px.iter().all(|&c| c >= BACKGROUND_LEVEL)
}

/// One retained N×N tile of a slide.
#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub slide_id: String,
    pub row: usize,
    pub col: usize,
    pub origin_x: usize,
    pub origin_y: usize,
    pub size: usize,
    /// Interleaved RGB, `size * size * 3` bytes.
    pub pixels: Vec<u8>,
    pub tissue_fraction: f64,
}

impl Patch {
    /// Centre of the patch in slide pixel coordinates.
    pub fn center(&self) -> [f64; 2] {
        let half = self.size as f64 / 2.0;
        [self.origin_x as f64 + half, self.origin_y as f64 + half]
    }
}

/// Fraction of pixels the predicate does not flag as background.
pub fn tissue_fraction_with(pixels: &[u8], is_background: impl Fn(Rgb) -> bool) -> f64 {
    let n = pixels.len() / 3;
    if n == 0 {
        return 0.0;
    }
    let tissue = pixels
        .chunks_exact(3)
        .filter(|p| !is_background([p[0], p[1], p[2]]))
        .count();
    tissue as f64 / n as f64
}

pub fn tissue_fraction(patch: &Patch) -> f64 {
    tissue_fraction_with(&patch.pixels, is_near_white)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TileConfig {
    pub patch_size: usize,
    /// Minimum tissue percentage for a tile to be kept.
    pub tissue_percent: f64,
}

impl Default for TileConfig {
    fn default() -> Self {
        Self {
            patch_size: DEFAULT_PATCH_SIZE,
            tissue_percent: DEFAULT_TISSUE_PERCENT,
        }
    }
}

/// Output of [`tile`]: kept patches in row-major order plus bookkeeping.
#[derive(Clone, Debug, PartialEq)]
pub struct Tiling {
    pub patches: Vec<Patch>,
    pub grid_rows: usize,
    pub grid_cols: usize,
    /// Grid cells dropped by the tissue filter.
    pub discarded: Vec<(usize, usize)>,
    /// Set when the image could not hold a single patch.
    pub warning: Option<String>,
}

pub fn tile(slide_id: &str, image: &RgbImage, cfg: &TileConfig) -> Result<Tiling> {
    tile_with(slide_id, image, cfg, is_near_white)
}

/// [`tile`] with a custom background predicate.
pub fn tile_with(
    slide_id: &str,
    image: &RgbImage,
    cfg: &TileConfig,
    is_background: impl Fn(Rgb) -> bool,
) -> Result<Tiling> {
    let n = cfg.patch_size;
    if n == 0 {
        return Err(Error::InvalidArgument("patch size must be positive".into()));
    }
    if !(0.0..=100.0).contains(&cfg.tissue_percent) {
        return Err(Error::InvalidArgument(format!(
            "tissue threshold {} outside [0, 100]",
            cfg.tissue_percent
        )));
    }
    let (grid_rows, grid_cols) = (image.height() / n, image.width() / n);
    let warning = (grid_rows == 0 || grid_cols == 0).then(|| {
        let msg = format!(
            "{slide_id}: {}x{} image is smaller than one {n}x{n} patch",
            image.width(),
            image.height()
        );
        log::warn!("{msg}");
        msg
    });
    let threshold = cfg.tissue_percent / 100.0;
    let mut patches = Vec::new();
    let mut discarded = Vec::new();
    for row in 0..grid_rows {
        for col in 0..grid_cols {
            let (x, y) = (col * n, row * n);
            let pixels = image.crop(x, y, n, n).pixels().to_vec();
            let fraction = tissue_fraction_with(&pixels, &is_background);
            if fraction >= threshold {
                patches.push(Patch {
                    slide_id: slide_id.to_string(),
                    row,
                    col,
                    origin_x: x,
                    origin_y: y,
                    size: n,
                    pixels,
                    tissue_fraction: fraction,
                });
            } else {
                discarded.push((row, col));
            }
        }
    }
    Ok(Tiling {
        patches,
        grid_rows,
        grid_cols,
        discarded,
        warning,
    })
}

/// One line of `coords.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoordRecord {
    pub patch_id: usize,
    pub row: usize,
    pub col: usize,
    pub origin_x: usize,
    pub origin_y: usize,
    pub tissue_fraction: f64,
}

impl CoordRecord {
    pub fn center(&self, patch_size: usize) -> [f64; 2] {
        let half = patch_size as f64 / 2.0;
        [self.origin_x as f64 + half, self.origin_y as f64 + half]
    }
}

pub fn coord_records(patches: &[Patch]) -> Vec<CoordRecord> {
    patches
        .iter()
        .enumerate()
        .map(|(i, p)| CoordRecord {
            patch_id: i,
            row: p.row,
            col: p.col,
            origin_x: p.origin_x,
            origin_y: p.origin_y,
            tissue_fraction: p.tissue_fraction,
        })
        .collect()
}

/// Re-crops the patches listed in `records` from the slide image.
pub fn patches_from_coords(
    slide_id: &str,
    image: &RgbImage,
    records: &[CoordRecord],
    patch_size: usize,
) -> Result<Vec<Patch>> {
    records
        .iter()
        .map(|r| {
            if r.origin_x + patch_size > image.width() || r.origin_y + patch_size > image.height() {
                return Err(Error::Dataset(format!(
                    "{slide_id}: patch {} at ({}, {}) lies outside the {}x{} image",
                    r.patch_id,
                    r.origin_x,
                    r.origin_y,
                    image.width(),
                    image.height()
                )));
            }
            Ok(Patch {
                slide_id: slide_id.to_string(),
                row: r.row,
                col: r.col,
                origin_x: r.origin_x,
                origin_y: r.origin_y,
                size: patch_size,
                pixels: image
                    .crop(r.origin_x, r.origin_y, patch_size, patch_size)
                    .pixels()
                    .to_vec(),
                tissue_fraction: r.tissue_fraction,
            })
        })
        .collect()
}

pub fn write_coords(path: impl AsRef<Path>, records: &[CoordRecord]) -> Result<()> {
    crate::io::write_csv(path, records)
}

pub fn read_coords(path: impl AsRef<Path>) -> Result<Vec<CoordRecord>> {
    crate::io::read_csv(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    const N: usize = 8;
    const TISSUE: Rgb = [200, 120, 170];
    const WHITE: Rgb = [255, 255, 255];

    fn cfg() -> TileConfig {
        TileConfig {
            patch_size: N,
            tissue_percent: 50.0,
        }
    }

    #[test]
    fn white_image_keeps_nothing() {
        let t = tile("s", &RgbImage::filled(4 * N, 4 * N, WHITE), &cfg()).unwrap();
        assert!(t.patches.is_empty());
        assert_eq!(t.discarded.len(), 16);
    }

    #[test]
    fn tissue_image_keeps_all_sixteen_in_row_major_order() {
        let t = tile("s", &RgbImage::filled(4 * N, 4 * N, TISSUE), &cfg()).unwrap();
        assert_eq!(t.patches.len(), 16);
        for (i, p) in t.patches.iter().enumerate() {
            assert_eq!((p.row, p.col), (i / 4, i % 4));
            assert_eq!((p.origin_x, p.origin_y), (p.col * N, p.row * N));
            assert_eq!(p.pixels.len(), N * N * 3);
        }
    }

    #[test]
    fn half_split_keeps_tissue_side() {
        let mut img = RgbImage::filled(4 * N, 4 * N, WHITE);
        for y in 0..4 * N {
            for x in 0..2 * N {
                img.put(x, y, TISSUE);
            }
        }
        let t = tile("s", &img, &cfg()).unwrap();
        assert_eq!(t.patches.len(), 8);
        assert!(t.patches.iter().all(|p| p.col < 2));
    }

    #[test]
    fn fractions() {
        let white = vec![255u8; 16 * 3];
        let black = vec![0u8; 16 * 3];
        assert_eq!(tissue_fraction_with(&white, is_near_white), 0.0);
        assert_eq!(tissue_fraction_with(&black, is_near_white), 1.0);
        let mut quarter = black.clone();
        quarter[..4 * 3].fill(255);
        assert_eq!(tissue_fraction_with(&quarter, is_near_white), 0.75);
        // one channel below the level is already tissue
        assert!(!is_near_white([220, 219, 255]));
        assert!(is_near_white([220, 220, 220]));
    }

    #[test]
    fn too_small_image_warns() {
        let t = tile("s", &RgbImage::filled(N - 1, 3 * N, TISSUE), &cfg()).unwrap();
        assert!(t.patches.is_empty());
        assert!(t.warning.is_some());
    }

    #[test]
    fn rejects_bad_threshold() {
        let c = TileConfig {
            patch_size: N,
            tissue_percent: 120.0,
        };
        assert!(tile("s", &RgbImage::filled(N, N, TISSUE), &c).is_err());
    }

    #[test]
    fn partial_border_tiles_dropped() {
        let t = tile("s", &RgbImage::filled(3 * N + 5, 2 * N + 7, TISSUE), &cfg()).unwrap();
        assert_eq!((t.grid_rows, t.grid_cols), (2, 3));
        assert_eq!(t.patches.len(), 6);
    }
}
