//! Dense filter-bank descriptors.
//!
//! Each patch is filtered on its own (mirror padding at the patch border), so a
//! descriptor depends only on the pixels inside its patch and never on pixels
//! outside the disk mask.

use serde::{Deserialize, Serialize};

use super::DescriptorSet;
use crate::disksynth::ReflectanceDisk;
use crate::error::{Error, Result};

const ORIENTATIONS: usize = 4;
const ZERO_NORM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractParams {
    pub patch_px: usize,
    pub stride_px: usize,
    /// Patch-size multipliers; each scale contributes its own grid of patches.
    pub scales: Vec<f64>,
    pub cells_per_side: usize,
    /// Gaussian-derivative widths at scale 1, in pixels.
    pub filter_sigmas: Vec<f64>,
}

impl Default for ExtractParams {
    fn default() -> Self {
        Self {
            patch_px: 32,
            stride_px: 16,
            scales: vec![1.0],
            cells_per_side: 4,
            filter_sigmas: vec![1.0, 2.0, 4.0],
        }
    }
}

impl ExtractParams {
    pub fn cell_dim(&self) -> usize {
        self.filter_sigmas.len() * ORIENTATIONS + 2
    }

    /// Descriptor dimension: `cells² × (sigmas × 4 orientations + 2)`.
    pub fn descriptor_dim(&self) -> usize {
        self.cells_per_side * self.cells_per_side * self.cell_dim()
    }

    fn scaled(&self, scale: f64) -> (usize, usize) {
        let side = (self.patch_px as f64 * scale).round().max(1.0) as usize;
        let stride = (self.stride_px as f64 * scale).round().max(1.0) as usize;
        (side, stride)
    }
}

/// Top-left corners of every fully in-mask patch of side `side` on a grid with step `stride`.
pub fn patch_grid(disk: &ReflectanceDisk, side: usize, stride: usize) -> Vec<(usize, usize)> {
    let d = disk.diameter_px();
    if side > d {
        return Vec::new();
    }
    let mut out = Vec::new();
    for y0 in (0..=d - side).step_by(stride) {
        for x0 in (0..=d - side).step_by(stride) {
            let (x1, y1) = (x0 + side - 1, y0 + side - 1);
            // the mask is convex, so the corner pixels decide
            if disk.is_valid(x0, y0) && disk.is_valid(x1, y0) && disk.is_valid(x0, y1) && disk.is_valid(x1, y1) {
                out.push((x0, y0));
            }
        }
    }
    out
}

/// Extracts one L2-normalised descriptor per fully in-mask patch per scale.
///
/// The returned set is empty when no patch fits inside the mask; callers
/// downstream refuse empty sets.
pub fn extract_dense(disk: &ReflectanceDisk, params: &ExtractParams) -> Result<DescriptorSet> {
    if params.patch_px == 0 || params.patch_px > disk.diameter_px() {
        return Err(Error::Domain(format!(
            "patch of {} px does not fit a {} px disk",
            params.patch_px,
            disk.diameter_px()
        )));
    }
    if params.stride_px == 0 {
        return Err(Error::Domain("stride must be at least one pixel".into()));
    }
    if params.cells_per_side == 0 || params.filter_sigmas.is_empty() || params.scales.is_empty() {
        return Err(Error::Domain("extractor needs cells, filter widths and scales".into()));
    }
    if params.scales.iter().any(|s| !(s.is_finite() && *s > 0.0))
        || params.filter_sigmas.iter().any(|s| !(s.is_finite() && *s > 0.0))
    {
        return Err(Error::Domain("scales and filter widths must be positive".into()));
    }

    let mut set = DescriptorSet::new(params.descriptor_dim(), disk.surface_id.clone());
    for &scale in &params.scales {
        let (side, stride) = params.scaled(scale);
        if side < params.cells_per_side {
            continue;
        }
        let bank = FilterBank::new(&params.filter_sigmas, scale);
        for (x0, y0) in patch_grid(disk, side, stride) {
            let patch: Vec<f64> = (0..side)
                .flat_map(|y| (0..side).map(move |x| (x0 + x, y0 + y)))
                .map(|(x, y)| disk.pixel(x, y))
                .collect();
            let v = describe_patch(&patch, side, params.cells_per_side, &bank);
            let center = (x0 as f64 + side as f64 / 2.0, y0 as f64 + side as f64 / 2.0);
            set.push(v, center)?;
        }
    }
    if set.is_empty() {
        log::warn!("disk `{}`: no patch fits inside the mask", disk.surface_id);
    }
    Ok(set)
}

struct FilterBank {
    // (smoothing kernel, derivative kernel) per width, both centred
    kernels: Vec<(Vec<f64>, Vec<f64>)>,
}

impl FilterBank {
    fn new(sigmas: &[f64], scale: f64) -> Self {
        let kernels = sigmas
            .iter()
            .map(|&s| {
                let sigma = s * scale;
                let radius = (3.0 * sigma).ceil() as i64;
                let g: Vec<f64> = (-radius..=radius)
                    .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
                    .collect();
                let norm: f64 = g.iter().sum();
                let g: Vec<f64> = g.iter().map(|v| v / norm).collect();
                let dg = (-radius..=radius)
                    .zip(&g)
                    .map(|(i, v)| -(i as f64) / (sigma * sigma) * v)
                    .collect();
                (g, dg)
            })
            .collect();
        Self { kernels }
    }
}

fn mirror(i: i64, n: i64) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * n - 2;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - m }) as usize
}

fn convolve_rows(src: &[f64], side: usize, kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as i64;
    let n = side as i64;
    let mut out = vec![0.0; src.len()];
    for y in 0..side {
        let row = &src[y * side..(y + 1) * side];
        for x in 0..side {
            let mut acc = 0.0;
            for (k, w) in kernel.iter().enumerate() {
                acc += w * row[mirror(x as i64 + k as i64 - r, n)];
            }
            out[y * side + x] = acc;
        }
    }
    out
}

fn convolve_cols(src: &[f64], side: usize, kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as i64;
    let n = side as i64;
    let mut out = vec![0.0; src.len()];
    for y in 0..side {
        for x in 0..side {
            let mut acc = 0.0;
            for (k, w) in kernel.iter().enumerate() {
                acc += w * src[mirror(y as i64 + k as i64 - r, n) * side + x];
            }
            out[y * side + x] = acc;
        }
    }
    out
}

fn cell_bounds(side: usize, cells: usize, c: usize) -> (usize, usize) {
    (c * side / cells, (c + 1) * side / cells)
}

fn describe_patch(patch: &[f64], side: usize, cells: usize, bank: &FilterBank) -> Vec<f64> {
    let angles: Vec<(f64, f64)> = (0..ORIENTATIONS)
        .map(|o| {
            let t = std::f64::consts::PI * o as f64 / ORIENTATIONS as f64;
            (t.cos(), t.sin())
        })
        .collect();
    // oriented response magnitudes: [sigma][orientation][pixel]
    let responses: Vec<Vec<Vec<f64>>> = bank
        .kernels
        .iter()
        .map(|(g, dg)| {
            let gx = convolve_cols(&convolve_rows(patch, side, dg), side, g);
            let gy = convolve_cols(&convolve_rows(patch, side, g), side, dg);
            angles
                .iter()
                .map(|&(c, s)| gx.iter().zip(&gy).map(|(a, b)| (c * a + s * b).abs()).collect())
                .collect()
        })
        .collect();

    let patch_mean = patch.iter().sum::<f64>() / patch.len() as f64;
    let cell_dim = bank.kernels.len() * ORIENTATIONS + 2;
    let mut desc = Vec::with_capacity(cells * cells * cell_dim);
    for cy in 0..cells {
        let (y0, y1) = cell_bounds(side, cells, cy);
        for cx in 0..cells {
            let (x0, x1) = cell_bounds(side, cells, cx);
            let count = ((y1 - y0) * (x1 - x0)) as f64;
            let cell_sum = |img: &[f64]| -> f64 {
                (y0..y1).map(|y| img[y * side + x0..y * side + x1].iter().sum::<f64>()).sum()
            };
            for per_sigma in &responses {
                for resp in per_sigma {
                    desc.push(cell_sum(resp) / count);
                }
            }
            let mean = cell_sum(patch) / count;
            let var = (y0..y1)
                .flat_map(|y| patch[y * side + x0..y * side + x1].iter())
                .map(|v| (v - mean) * (v - mean))
                .sum::<f64>()
                / count;
            desc.push(mean - patch_mean);
            desc.push(var.sqrt());
        }
    }
    let norm = desc.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < ZERO_NORM {
        desc.iter_mut().for_each(|v| *v = 0.0);
    } else {
        desc.iter_mut().for_each(|v| *v /= norm);
    }
    desc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::disksynth::in_mask;

    fn disk_from(d: usize, f: impl Fn(usize, usize) -> f64) -> ReflectanceDisk {
        let px = (0..d * d).map(|i| f(i % d, i / d)).collect();
        ReflectanceDisk::new(d, px, (0.0, 0.0), 1.0, "t").unwrap()
    }

    fn periodic_texture(x: usize, y: usize) -> f64 {
        let t = |v: usize, p: usize| (2.0 * std::f64::consts::PI * (v % p) as f64 / p as f64).sin();
        1.0 + 0.3 * t(x, 8) + 0.2 * t(y, 4) * t(x + 1, 8)
    }

    #[test]
    fn default_dimension_is_224() {
        assert_eq!(ExtractParams::default().descriptor_dim(), 224);
    }

    #[test]
    fn constant_disk_gives_zero_descriptors() {
        let disk = disk_from(64, |_, _| 0.7);
        let set = extract_dense(&disk, &ExtractParams::default()).unwrap();
        assert!(!set.is_empty());
        for v in &set.vectors {
            assert!(v.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn grid_count_matches_exhaustive_enumeration() {
        let disk = disk_from(128, |x, y| (x * y % 5) as f64);
        let p = ExtractParams { patch_px: 32, stride_px: 16, ..Default::default() };
        let set = extract_dense(&disk, &p).unwrap();
        // oracle: slide the window and check every pixel against the mask
        let mut expected = 0;
        for y0 in (0..=96).step_by(16) {
            for x0 in (0..=96).step_by(16) {
                let all = (y0..y0 + 32).all(|y| (x0..x0 + 32).all(|x| in_mask(128, x, y)));
                expected += all as usize;
            }
        }
        assert_eq!(set.len(), expected);
        assert!(expected > 0);
        for &(x, y) in &set.positions {
            assert!(in_mask(128, x as usize, y as usize));
        }
        let two = ExtractParams { scales: vec![1.0, 1.5], ..p };
        let set2 = extract_dense(&disk, &two).unwrap();
        let mut second = 0;
        for y0 in (0..=128 - 48).step_by(24) {
            for x0 in (0..=128 - 48).step_by(24) {
                second += (y0..y0 + 48).all(|y| (x0..x0 + 48).all(|x| in_mask(128, x, y))) as usize;
            }
        }
        assert_eq!(set2.len(), expected + second);
    }

    #[test]
    fn one_pixel_translation_permutes_descriptors() {
        let d = 48;
        let a = disk_from(d, periodic_texture);
        let b = disk_from(d, |x, y| periodic_texture(x + 1, y));
        let p = ExtractParams { patch_px: 16, stride_px: 1, ..Default::default() };
        let sa = extract_dense(&a, &p).unwrap();
        let sb = extract_dense(&b, &p).unwrap();
        // the patch at x0 in `b` shows the content of the patch at x0 + 1 in `a`
        let mut matched = 0;
        for (vb, &(xb, yb)) in sb.vectors.iter().zip(&sb.positions) {
            if let Some(ia) = sa.positions.iter().position(|&(xa, ya)| xa == xb + 1.0 && ya == yb) {
                let diff = sa.vectors[ia].iter().zip(vb).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
                assert!(diff < 1e-5);
                matched += 1;
            }
        }
        assert!(matched > sb.len() / 2);
    }

    #[test]
    fn poisoned_outside_pixels_never_leak() {
        let d = 64;
        let px: Vec<f64> = (0..d * d)
            .map(|i| if in_mask(d, i % d, i / d) { periodic_texture(i % d, i / d) } else { f64::NAN })
            .collect();
        let disk = ReflectanceDisk::new(d, px, (0.0, 0.0), 1.0, "p").unwrap();
        let set = extract_dense(&disk, &ExtractParams { stride_px: 4, ..Default::default() }).unwrap();
        assert!(!set.is_empty());
        assert!(set.vectors.iter().flatten().all(|v| v.is_finite()));
    }

    #[test]
    fn descriptors_are_unit_or_zero() {
        let disk = disk_from(64, |x, y| ((x * 7 + y * 3) % 11) as f64 * 0.1);
        let set = extract_dense(&disk, &ExtractParams::default()).unwrap();
        for v in &set.vectors {
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-12 || n == 0.0);
        }
    }

    #[test]
    fn tiny_disk_yields_flagged_empty_set_and_bad_params_error() {
        let disk = disk_from(16, |x, _| x as f64);
        let p = ExtractParams { patch_px: 16, ..Default::default() };
        assert!(extract_dense(&disk, &p).unwrap().is_empty());
        let p = ExtractParams { patch_px: 17, ..Default::default() };
        assert!(extract_dense(&disk, &p).is_err());
        let p = ExtractParams { patch_px: 8, stride_px: 0, ..Default::default() };
        assert!(extract_dense(&disk, &p).is_err());
    }

    #[test]
    fn mirror_index_reflects() {
        let idx: Vec<usize> = (-4..8).map(|i| mirror(i, 4)).collect();
        assert_eq!(idx, vec![2, 3, 2, 1, 0, 1, 2, 3, 2, 1, 0, 1]);
    }
}
