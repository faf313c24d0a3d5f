//! Synthetic slides with planted texture motifs and known ground truth.
//!
//! Each slide is a `grid × grid` arrangement of patch cells over a pink
//! tissue background. In the default [`Layout::Region`] layout a contiguous
//! blob of cells carries the class motif; a share of that blob may carry a
//! different class's motif instead, so that the label is decided by which
//! motif dominates the region rather than by any single patch. In
//! [`Layout::Adjacency`] every slide has one blob of motif 0 and one of
//! motif 1, and the label says whether the two blobs touch.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{Rgb, RgbImage};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layout {
    Region,
    /// Two-class layout; negatives keep the blobs more than `min_gap`
    /// cell widths apart (centre to centre).
    Adjacency {
        min_gap: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_bags: usize,
    pub grid_size: usize,
    pub patch_size: usize,
    pub n_classes: usize,
    pub motif_region_fraction: f64,
    /// Share of the motif region painted with another class's motif.
    pub secondary_share: f64,
    /// Uniform per-channel pixel noise amplitude, as a fraction of 255.
    pub noise_level: f64,
    pub layout: Layout,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_bags: 200,
            grid_size: 8,
            patch_size: crate::tiling::DEFAULT_PATCH_SIZE,
            n_classes: 4,
            motif_region_fraction: 0.25,
            secondary_share: 0.4,
            noise_level: 0.05,
            layout: Layout::Region,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n_classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.n_classes));
        }
        if !(self.motif_region_fraction > 0.0 && self.motif_region_fraction < 1.0) {
            return bad(format!(
                "motif region fraction {} outside (0, 1)",
                self.motif_region_fraction
            ));
        }
        if !(0.0..0.5).contains(&self.secondary_share) {
            return bad(format!(
                "secondary share {} outside [0, 0.5)",
                self.secondary_share
            ));
        }
        if !(0.0..=1.0).contains(&self.noise_level) {
            return bad(format!("noise level {} outside [0, 1]", self.noise_level));
        }
        if self.grid_size == 0 || self.patch_size == 0 {
            return bad("grid and patch size must be positive".into());
        }
        if matches!(self.layout, Layout::Adjacency { .. }) && self.n_classes != 2 {
            return bad("the adjacency layout is binary; use 2 classes".into());
        }
        Ok(())
    }

    fn cells(&self) -> usize {
        self.grid_size * self.grid_size
    }

    /// Motif cells per slide.
    pub fn region_cells(&self) -> usize {
        ((self.motif_region_fraction * self.cells() as f64).round() as usize).max(1)
    }
}

/// One generated slide.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticBag {
    pub slide_id: String,
    pub label: usize,
    pub image: RgbImage,
    /// Motif painted in each grid cell (row-major), `None` for background.
    pub motif: Vec<Option<usize>>,
}

impl SyntheticBag {
    /// Ground-truth membership of each grid cell in the motif region.
    pub fn membership(&self) -> Vec<bool> {
        self.motif.iter().map(Option::is_some).collect()
    }
}

/// One line of a slide's ground-truth table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub row: usize,
    pub col: usize,
    /// Motif id, or -1 for background.
    pub motif: i64,
    pub member: u8,
}

pub fn truth_records(bag: &SyntheticBag, grid: usize) -> Vec<TruthRecord> {
    bag.motif
        .iter()
        .enumerate()
        .map(|(i, m)| TruthRecord {
            row: i / grid,
            col: i % grid,
            motif: m.map_or(-1, |k| k as i64),
            member: u8::from(m.is_some()),
        })
        .collect()
}

pub fn write_truth(path: impl AsRef<Path>, bag: &SyntheticBag, grid: usize) -> Result<()> {
    crate::io::write_csv(path, &truth_records(bag, grid))
}

pub fn read_truth(path: impl AsRef<Path>) -> Result<Vec<TruthRecord>> {
    crate::io::read_csv(path)
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<SyntheticBag>> {
    spec.validate()?;
    (0..spec.n_bags).map(|i| generate_bag(spec, i)).collect()
}

/// Generates slide `index` alone; equal to the `index`-th element of
/// [`generate_synthetic`].
pub fn generate_bag(spec: &SyntheticSpec, index: usize) -> Result<SyntheticBag> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    let label = index % spec.n_classes;
    let motif = match spec.layout {
        Layout::Region => region_layout(spec, label, &mut rng)?,
        Layout::Adjacency { min_gap } => adjacency_layout(spec, label == 1, min_gap, &mut rng)?,
    };
    let image = render(spec, &motif, &mut rng);
    Ok(SyntheticBag {
        slide_id: format!("slide{index:04}"),
        label,
        image,
        motif,
    })
}

fn region_layout(
    spec: &SyntheticSpec,
    label: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Option<usize>>> {
    let g = spec.grid_size;
    let size = spec.region_cells().min(spec.cells());
    let start = rng.gen_range(0..spec.cells());
    let region = grow(g, start, size, |_| true, rng)
        .ok_or_else(|| Error::InvalidArgument("motif region does not fit the grid".into()))?;
    let mut motif = vec![None; spec.cells()];
    for &c in &region {
        motif[c] = Some(label);
    }
    let n_secondary = (spec.secondary_share * size as f64).round() as usize;
    if n_secondary > 0 {
        let other = (label + rng.gen_range(1..spec.n_classes)) % spec.n_classes;
        let in_region: BTreeSet<usize> = region.iter().copied().collect();
        let seed = *region.choose(rng).expect("non-empty region");
        let part = grow(g, seed, n_secondary, |c| in_region.contains(&c), rng)
            .unwrap_or_else(|| region[region.len() - n_secondary..].to_vec());
        for c in part {
            motif[c] = Some(other);
        }
    }
    Ok(motif)
}

fn adjacency_layout(
    spec: &SyntheticSpec,
    touching: bool,
    min_gap: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Option<usize>>> {
    let g = spec.grid_size;
    let size = (spec.region_cells() / 2).max(1);
    let dist = |a: usize, b: usize| {
        let (dr, dc) = (
            (a / g) as f64 - (b / g) as f64,
            (a % g) as f64 - (b % g) as f64,
        );
        (dr * dr + dc * dc).sqrt()
    };
    for _ in 0..1000 {
        let Some(first) = grow(g, rng.gen_range(0..spec.cells()), size, |_| true, rng) else {
            continue;
        };
        let taken: BTreeSet<usize> = first.iter().copied().collect();
        let second = if touching {
            let border: Vec<usize> = first
                .iter()
                .flat_map(|&c| neighbours(g, c))
                .filter(|c| !taken.contains(c))
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            let Some(&seed) = border.choose(rng) else {
                continue;
            };
            grow(g, seed, size, |c| !taken.contains(&c), rng)
        } else {
            let far = |c: usize| first.iter().all(|&a| dist(a, c) > min_gap);
            let candidates: Vec<usize> = (0..spec.cells()).filter(|&c| far(c)).collect();
            let Some(&seed) = candidates.choose(rng) else {
                continue;
            };
            grow(g, seed, size, far, rng)
        };
        let Some(second) = second else { continue };
        let mut motif = vec![None; spec.cells()];
        for c in first {
            motif[c] = Some(0);
        }
        for c in second {
            motif[c] = Some(1);
        }
        return Ok(motif);
    }
    Err(Error::InvalidArgument(format!(
        "cannot place two {size}-cell blobs more than {min_gap} cells apart on a {g}x{g} grid"
    )))
}

fn neighbours(g: usize, c: usize) -> impl Iterator<Item = usize> {
    let (r, col) = (c / g, c % g);
    [
        (r > 0).then(|| c - g),
        (r + 1 < g).then(|| c + g),
        (col > 0).then(|| c - 1),
        (col + 1 < g).then(|| c + 1),
    ]
    .into_iter()
    .flatten()
}

/// Random 4-connected blob of exactly `size` allowed cells containing
/// `start`, or `None` if the allowed component is too small.
fn grow(
    g: usize,
    start: usize,
    size: usize,
    allowed: impl Fn(usize) -> bool,
    rng: &mut ChaCha8Rng,
) -> Option<Vec<usize>> {
    if !allowed(start) {
        return None;
    }
    let mut blob = vec![start];
    let mut inside = BTreeSet::from([start]);
    while blob.len() < size {
        let frontier: Vec<usize> = blob
            .iter()
            .flat_map(|&c| neighbours(g, c))
            .filter(|&c| !inside.contains(&c) && allowed(c))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let &next = frontier.choose(rng)?;
        blob.push(next);
        inside.insert(next);
    }
    Some(blob)
}

const BACKGROUND: [f64; 3] = [232.0, 178.0, 206.0];

const PALETTE: [[f64; 3]; 8] = [
    [70.0, 40.0, 150.0],
    [40.0, 110.0, 60.0],
    [160.0, 70.0, 30.0],
    [30.0, 90.0, 170.0],
    [150.0, 30.0, 90.0],
    [110.0, 110.0, 20.0],
    [20.0, 130.0, 130.0],
    [90.0, 60.0, 40.0],
];

/// Noise-free background texture at slide pixel `(x, y)`.
pub fn background_pixel(x: usize, y: usize) -> [f64; 3] {
    let m = 6.0 * (0.21 * x as f64 + 0.7).sin() * (0.17 * y as f64).sin();
    BACKGROUND.map(|c| c + m)
}

/// Noise-free texture of motif `kind` at slide pixel `(x, y)`.
pub fn motif_pixel(kind: usize, x: usize, y: usize) -> [f64; 3] {
    let p = 6 + 2 * ((kind / PALETTE.len()) % 4);
    let ink = PALETTE[kind % PALETTE.len()];
    let on = match kind % 4 {
        0 => {
            let (dx, dy) = (
                (x % p) as f64 - p as f64 / 2.0,
                (y % p) as f64 - p as f64 / 2.0,
            );
            dx * dx + dy * dy <= (p as f64 / 3.0).powi(2)
        }
        1 => y % p < p / 2,
        2 => (x / (p / 2) + y / (p / 2)).is_multiple_of(2),
        _ => (x + y) % p < p / 2,
    };
    if on {
        ink
    } else {
        let mut c = [0.0; 3];
        for i in 0..3 {
            c[i] = 0.55 * ink[i] + 0.45 * BACKGROUND[i];
        }
        c
    }
}

fn render(spec: &SyntheticSpec, motif: &[Option<usize>], rng: &mut ChaCha8Rng) -> RgbImage {
    let n = spec.patch_size;
    let side = spec.grid_size * n;
    let amp = spec.noise_level * 255.0;
    let mut img = RgbImage::filled(side, side, [0, 0, 0]);
    for y in 0..side {
        for x in 0..side {
            let cell = (y / n) * spec.grid_size + x / n;
            let base = match motif[cell] {
                Some(k) => motif_pixel(k, x, y),
                None => background_pixel(x, y),
            };
            let px: Rgb = base.map(|v| {
                let noisy = if amp > 0.0 {
                    v + rng.gen_range(-amp..=amp)
                } else {
                    v
                };
                noisy.round().clamp(0.0, 255.0) as u8
            });
            img.put(x, y, px);
        }
    }
    img
}
