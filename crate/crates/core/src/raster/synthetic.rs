//! Synthetic categorical landscapes.
//!
//! Two neutral models: a Voronoi patch mosaic with controllable patch
//! density, and a binary cover map obtained by box-smoothing white noise and
//! thresholding at a quantile. Both are pure functions of their arguments.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rayon::prelude::*;

use super::CategoricalRaster;
use crate::error::{Error, Result};
use crate::seed;

struct Site {
    x: f64,
    y: f64,
    class: u16,
}

/// Bucketed site index for exact nearest-site queries.
struct SiteGrid {
    bucket: f64,
    nbx: usize,
    nby: usize,
    buckets: Vec<Vec<u32>>,
}

impl SiteGrid {
    fn new(sites: &[Site], width: usize, height: usize) -> Self {
        let bucket = ((width * height) as f64 / sites.len() as f64).sqrt().max(1.0);
        let nbx = (width as f64 / bucket).ceil().max(1.0) as usize;
        let nby = (height as f64 / bucket).ceil().max(1.0) as usize;
        let mut buckets = vec![Vec::new(); nbx * nby];
        for (i, s) in sites.iter().enumerate() {
            let bx = ((s.x / bucket) as usize).min(nbx - 1);
            let by = ((s.y / bucket) as usize).min(nby - 1);
            buckets[by * nbx + bx].push(i as u32);
        }
        Self {
            bucket,
            nbx,
            nby,
            buckets,
        }
    }

    /// Nearest site by Euclidean distance, ties to the lower site index.
    fn nearest(&self, sites: &[Site], x: f64, y: f64) -> usize {
        let bx = ((x / self.bucket) as usize).min(self.nbx - 1) as isize;
        let by = ((y / self.bucket) as usize).min(self.nby - 1) as isize;
        let mut best = (f64::INFINITY, usize::MAX);
        let max_ring = self.nbx.max(self.nby) as isize;
        for ring in 0..=max_ring {
            for dy in -ring..=ring {
                let yy = by + dy;
                if yy < 0 || yy >= self.nby as isize {
                    continue;
                }
                let edge_row = dy.abs() == ring;
                let step = if edge_row { 1 } else { (2 * ring).max(1) };
                let mut dx = -ring;
                while dx <= ring {
                    let xx = bx + dx;
                    if xx >= 0 && xx < self.nbx as isize {
                        for &i in &self.buckets[yy as usize * self.nbx + xx as usize] {
                            let s = &sites[i as usize];
                            let d2 = (s.x - x).powi(2) + (s.y - y).powi(2);
                            let i = i as usize;
                            if d2 < best.0 || (d2 == best.0 && i < best.1) {
                                best = (d2, i);
                            }
                        }
                    }
                    dx += step;
                }
            }
            // Unvisited buckets lie strictly farther than ring * bucket.
            let reach = ring as f64 * self.bucket;
            if best.1 != usize::MAX && best.0 <= reach * reach {
                break;
            }
        }
        best.1
    }
}

/// Voronoi mosaic with `patch_density` sites per 10⁴ cells. Each site draws a
/// class proportionally to `class_weights`; each cell takes the class of the
/// nearest site measured from its centre.
pub fn generate_patch_mosaic(
    width: usize,
    height: usize,
    class_count: usize,
    patch_density: f64,
    class_weights: &[f64],
    seed: u64,
) -> Result<CategoricalRaster> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidArgument("mosaic dimensions must be positive".into()));
    }
    if class_weights.len() != class_count {
        return Err(Error::InvalidArgument(format!(
            "{} class weights for {class_count} classes",
            class_weights.len()
        )));
    }
    if class_weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
        return Err(Error::InvalidArgument("class weights must be non-negative".into()));
    }
    if class_weights.iter().sum::<f64>() <= 0.0 {
        return Err(Error::InvalidArgument("class weights sum to zero".into()));
    }
    if !(patch_density > 0.0 && patch_density.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "patch density must be positive, got {patch_density}"
        )));
    }

    let cells = width * height;
    let n_sites = ((patch_density * cells as f64 / 1e4).round() as usize).max(1);
    let mut rng = seed::rng(seed);
    let chooser = WeightedIndex::new(class_weights)
        .map_err(|e| Error::InvalidArgument(format!("class weights: {e}")))?;
    let sites: Vec<Site> = (0..n_sites)
        .map(|_| {
            let x = rng.gen::<f64>() * width as f64;
            let y = rng.gen::<f64>() * height as f64;
            let class = chooser.sample(&mut rng) as u16;
            Site { x, y, class }
        })
        .collect();

    let grid = SiteGrid::new(&sites, width, height);
    let mut values = vec![0u16; cells];
    values
        .par_chunks_mut(width)
        .enumerate()
        .for_each(|(row, out)| {
            let y = row as f64 + 0.5;
            for (col, v) in out.iter_mut().enumerate() {
                let i = grid.nearest(&sites, col as f64 + 0.5, y);
                *v = sites[i].class;
            }
        });
    CategoricalRaster::new(width, height, 1.0, class_count, values)
}

/// Binary landscape: uniform noise, box-filtered with the given radius
/// (window clipped at the edges), then thresholded so that exactly
/// `round(cover_fraction · cells)` cells with the largest smoothed values
/// become class 1. Equal values are ordered by cell index.
pub fn generate_smoothed_binary(
    width: usize,
    height: usize,
    smoothing_radius: usize,
    cover_fraction: f64,
    seed: u64,
) -> Result<CategoricalRaster> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidArgument("landscape dimensions must be positive".into()));
    }
    if !(cover_fraction > 0.0 && cover_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "cover fraction must lie in (0, 1), got {cover_fraction}"
        )));
    }
    let cells = width * height;
    let mut rng = seed::rng(seed);
    let noise: Vec<f64> = (0..cells).map(|_| rng.gen::<f64>()).collect();
    let smooth = box_mean(&noise, width, height, smoothing_radius);

    let n_cover = (cover_fraction * cells as f64).round() as usize;
    let mut order: Vec<u32> = (0..cells as u32).collect();
    // Descending by value, ascending by index.
    let key = |a: &u32, b: &u32| {
        smooth[*b as usize]
            .total_cmp(&smooth[*a as usize])
            .then(a.cmp(b))
    };
    let mut values = vec![0u16; cells];
    if n_cover > 0 {
        if n_cover < cells {
            order.select_nth_unstable_by(n_cover - 1, key);
        }
        for &i in &order[..n_cover] {
            values[i as usize] = 1;
        }
    }
    CategoricalRaster::new(width, height, 1.0, 2, values)?
        .with_class_names(vec!["other".into(), "forest".into()])
}

fn box_mean(data: &[f64], width: usize, height: usize, radius: usize) -> Vec<f64> {
    if radius == 0 {
        return data.to_vec();
    }
    // Summed-area table with a zero border.
    let sw = width + 1;
    let mut sat = vec![0.0f64; sw * (height + 1)];
    for r in 0..height {
        let mut row_sum = 0.0;
        for c in 0..width {
            row_sum += data[r * width + c];
            sat[(r + 1) * sw + c + 1] = sat[r * sw + c + 1] + row_sum;
        }
    }
    let mut out = vec![0.0; width * height];
    out.par_chunks_mut(width).enumerate().for_each(|(r, out_row)| {
        let r0 = r.saturating_sub(radius);
        let r1 = (r + radius + 1).min(height);
        for (c, o) in out_row.iter_mut().enumerate() {
            let c0 = c.saturating_sub(radius);
            let c1 = (c + radius + 1).min(width);
            let sum = sat[r1 * sw + c1] - sat[r0 * sw + c1] - sat[r1 * sw + c0] + sat[r0 * sw + c0];
            *o = sum / ((r1 - r0) * (c1 - c0)) as f64;
        }
    });
    out
}
