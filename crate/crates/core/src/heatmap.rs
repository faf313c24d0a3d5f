//! Overlays of attention scores and patch graphs on a slide image.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::graph::{EdgeRecord, NodeRecord};
use crate::mil::ScoreRecord;
use crate::raster::{Rgb, RgbImage};
use crate::tiling::CoordRecord;

pub const OUTLINE: Rgb = [0, 64, 255];
pub const EDGE: Rgb = [255, 190, 0];
pub const NODE: Rgb = [200, 0, 0];
/// Fill opacity of the highest-scoring selected patch.
pub const MAX_FILL_ALPHA: f64 = 0.6;
/// Half-width of the square drawn at each node centre.
const NODE_RADIUS: i64 = 2;

/// Selected patches outlined, each filled with opacity proportional to its
/// attention score (the bag's top selected score gets [`MAX_FILL_ALPHA`]).
///
/// `coords` and `scores` must cover the same patch ids.
pub fn attention_overlay(
    image: &RgbImage,
    coords: &[CoordRecord],
    scores: &[ScoreRecord],
    patch_size: usize,
) -> Result<RgbImage> {
    let by_id = index_coords(coords)?;
    let score_ids: BTreeSet<usize> = scores.iter().map(|s| s.patch_id).collect();
    if score_ids.len() != scores.len() || !score_ids.iter().eq(by_id.keys()) {
        return Err(Error::InvalidArgument(
            "scores and coordinates cover different patch ids".into(),
        ));
    }
    let selected: Vec<&ScoreRecord> = scores.iter().filter(|s| s.selected != 0).collect();
    let top = selected
        .iter()
        .map(|s| s.attention_score)
        .fold(0.0f64, f64::max);
    let mut out = image.clone();
    for s in selected {
        let c = by_id[&s.patch_id];
        let alpha = if top > 0.0 {
            MAX_FILL_ALPHA * s.attention_score / top
        } else {
            0.0
        };
        fill_rect(&mut out, c.origin_x, c.origin_y, patch_size, OUTLINE, alpha);
        outline_rect(&mut out, c.origin_x, c.origin_y, patch_size, OUTLINE);
    }
    Ok(out)
}

/// Result of [`graph_overlay`].
pub struct GraphOverlay {
    pub image: RgbImage,
    pub edges_drawn: usize,
}

/// Graph edges as straight lines between node centres, nodes as small
/// squares. Every node must name a patch present in `coords`.
pub fn graph_overlay(
    image: &RgbImage,
    coords: &[CoordRecord],
    nodes: &[NodeRecord],
    edges: &[EdgeRecord],
) -> Result<GraphOverlay> {
    let by_id = index_coords(coords)?;
    if let Some(n) = nodes.iter().find(|n| !by_id.contains_key(&n.patch_id)) {
        return Err(Error::InvalidArgument(format!(
            "graph node {} refers to unknown patch {}",
            n.node, n.patch_id
        )));
    }
    let centre = |i: usize| -> Result<(i64, i64)> {
        let n = nodes.get(i).ok_or_else(|| {
            Error::InvalidArgument(format!("edge endpoint {i} outside {} nodes", nodes.len()))
        })?;
        Ok((n.center_x.floor() as i64, n.center_y.floor() as i64))
    };
    let mut out = image.clone();
    for e in edges {
        let (a, b) = (centre(e.src)?, centre(e.dst)?);
        draw_line(&mut out, a, b, EDGE);
    }
    for i in 0..nodes.len() {
        let (x, y) = centre(i)?;
        for dy in -NODE_RADIUS..=NODE_RADIUS {
            for dx in -NODE_RADIUS..=NODE_RADIUS {
                put_clipped(&mut out, x + dx, y + dy, NODE);
            }
        }
    }
    Ok(GraphOverlay {
        image: out,
        edges_drawn: edges.len(),
    })
}

fn index_coords(coords: &[CoordRecord]) -> Result<BTreeMap<usize, &CoordRecord>> {
    let mut map = BTreeMap::new();
    for c in coords {
        if map.insert(c.patch_id, c).is_some() {
            return Err(Error::InvalidArgument(format!(
                "duplicate patch id {}",
                c.patch_id
            )));
        }
    }
    Ok(map)
}

fn blend(base: Rgb, over: Rgb, alpha: f64) -> Rgb {
    let mix = |b: u8, o: u8| (b as f64 * (1.0 - alpha) + o as f64 * alpha).round() as u8;
    [
        mix(base[0], over[0]),
        mix(base[1], over[1]),
        mix(base[2], over[2]),
    ]
}

fn fill_rect(img: &mut RgbImage, x0: usize, y0: usize, size: usize, color: Rgb, alpha: f64) {
    if alpha <= 0.0 {
        return;
    }
    for y in y0..(y0 + size).min(img.height()) {
        for x in x0..(x0 + size).min(img.width()) {
            let c = blend(img.get(x, y), color, alpha);
            img.put(x, y, c);
        }
    }
}

/// One-pixel border on the inside of the patch square.
fn outline_rect(img: &mut RgbImage, x0: usize, y0: usize, size: usize, color: Rgb) {
    let (x1, y1) = (x0 + size - 1, y0 + size - 1);
    for x in x0..=x1 {
        put_clipped(img, x as i64, y0 as i64, color);
        put_clipped(img, x as i64, y1 as i64, color);
    }
    for y in y0..=y1 {
        put_clipped(img, x0 as i64, y as i64, color);
        put_clipped(img, x1 as i64, y as i64, color);
    }
}

fn put_clipped(img: &mut RgbImage, x: i64, y: i64, color: Rgb) {
    if x >= 0 && y >= 0 && (x as usize) < img.width() && (y as usize) < img.height() {
        img.put(x as usize, y as usize, color);
    }
}

/// Bresenham line, endpoints included.
fn draw_line(img: &mut RgbImage, (mut x, mut y): (i64, i64), (x1, y1): (i64, i64), color: Rgb) {
    let (dx, dy) = ((x1 - x).abs(), -(y1 - y).abs());
    let (sx, sy) = (if x < x1 { 1 } else { -1 }, if y < y1 { 1 } else { -1 });
    let mut err = dx + dy;
    loop {
        put_clipped(img, x, y, color);
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const N: usize = 8;

    fn grid(rows: usize, cols: usize) -> Vec<CoordRecord> {
        (0..rows * cols)
            .map(|i| CoordRecord {
                patch_id: i,
                row: i / cols,
                col: i % cols,
                origin_x: (i % cols) * N,
                origin_y: (i / cols) * N,
                tissue_fraction: 1.0,
            })
            .collect()
    }

    fn scores(n: usize, selected: &[usize]) -> Vec<ScoreRecord> {
        crate::mil::score_records(&vec![1.0 / n as f64; n], selected)
    }

    #[test]
    fn nothing_selected_leaves_image_unchanged() {
        let img = RgbImage::filled(3 * N, 2 * N, [200, 150, 180]);
        let out = attention_overlay(&img, &grid(2, 3), &scores(6, &[]), N).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn single_patch_is_outlined_at_its_origin() {
        let img = RgbImage::filled(3 * N, 2 * N, [255, 255, 255]);
        let out = attention_overlay(&img, &grid(2, 3), &scores(6, &[4]), N).unwrap();
        // patch 4 is row 1, col 1
        let (x0, y0) = (N, N);
        for y in 0..2 * N {
            for x in 0..3 * N {
                let inside = (x0..x0 + N).contains(&x) && (y0..y0 + N).contains(&y);
                let border = inside && (x == x0 || y == y0 || x == x0 + N - 1 || y == y0 + N - 1);
                let p = out.get(x, y);
                if border {
                    assert_eq!(p, OUTLINE);
                } else if inside {
                    assert_eq!(p, blend([255, 255, 255], OUTLINE, MAX_FILL_ALPHA));
                } else {
                    assert_eq!(p, [255, 255, 255]);
                }
            }
        }
    }

    #[test]
    fn fill_scales_with_score() {
        let img = RgbImage::filled(2 * N, N, [255, 255, 255]);
        let s = crate::mil::score_records(&[0.75, 0.25], &[0, 1]);
        let out = attention_overlay(&img, &grid(1, 2), &s, N).unwrap();
        let strong = out.get(N / 2, N / 2);
        let weak = out.get(N + N / 2, N / 2);
        assert_eq!(weak, blend([255, 255, 255], OUTLINE, MAX_FILL_ALPHA / 3.0));
        assert!(strong[0] < weak[0]);
    }

    #[test]
    fn mismatched_ids_are_rejected() {
        let img = RgbImage::filled(3 * N, 2 * N, [0, 0, 0]);
        assert!(attention_overlay(&img, &grid(2, 3), &scores(5, &[0]), N).is_err());
        let nodes = vec![NodeRecord {
            node: 0,
            patch_id: 99,
            center_x: 4.0,
            center_y: 4.0,
        }];
        assert!(graph_overlay(&img, &grid(2, 3), &nodes, &[]).is_err());
    }

    #[test]
    fn lines_include_both_endpoints() {
        let mut img = RgbImage::filled(10, 10, [0, 0, 0]);
        draw_line(&mut img, (1, 1), (8, 4), [9, 9, 9]);
        assert_eq!(img.get(1, 1), [9, 9, 9]);
        assert_eq!(img.get(8, 4), [9, 9, 9]);
        let lit = (0..100)
            .filter(|&i| img.get(i % 10, i / 10) == [9, 9, 9])
            .count();
        assert_eq!(lit, 8);
    }
}
