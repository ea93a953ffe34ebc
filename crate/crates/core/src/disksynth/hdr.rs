use super::disk::ReflectanceDisk;
use crate::error::{Error, Result};

/// Hat weight over a normalised pixel value: zero at black and at saturation.
pub fn hat_weight(p: f64) -> f64 {
    p.min(1.0 - p).max(0.0)
}

/// Merges captures of one scene taken at different exposures into a radiance
/// disk with `exposure_scale = 1`.
///
/// Captures are normalised sensor readings in `[0, 1]`. Each pixel is the
/// hat-weighted mean of `value / exposure_scale`. Where every capture is black
/// or saturated, the shortest saturated exposure (or 0) is used.
pub fn merge_exposures(disks: &[ReflectanceDisk]) -> Result<ReflectanceDisk> {
    let first = disks
        .first()
        .ok_or_else(|| Error::Empty("merge_exposures needs at least one disk".into()))?;
    let d = first.diameter_px();
    for disk in &disks[1..] {
        if disk.diameter_px() != d {
            return Err(Error::Shape(format!(
                "exposure stack mixes diameters {d} and {}",
                disk.diameter_px()
            )));
        }
        if disk.surface_id != first.surface_id || disk.illum_angle_deg != first.illum_angle_deg {
            return Err(Error::Shape(
                "exposure stack mixes surfaces or illumination angles".into(),
            ));
        }
    }
    for (i, a) in disks.iter().enumerate() {
        if disks[i + 1..].iter().any(|b| b.exposure_scale == a.exposure_scale) {
            return Err(Error::Domain(format!(
                "duplicate exposure scale {} in stack",
                a.exposure_scale
            )));
        }
    }

    let mut shortest_first: Vec<&ReflectanceDisk> = disks.iter().collect();
    shortest_first.sort_by(|a, b| a.exposure_scale.total_cmp(&b.exposure_scale));

    let mut out = first.masked_pixels(0.0);
    for (i, px) in out.iter_mut().enumerate() {
        let (x, y) = (i % d, i / d);
        if !first.is_valid(x, y) {
            continue;
        }
        if disks.len() == 1 {
            *px = first.pixel(x, y) / first.exposure_scale;
            continue;
        }
        let (mut num, mut den) = (0.0, 0.0);
        for disk in disks {
            let p = disk.pixel(x, y);
            let w = hat_weight(p);
            num += w * p / disk.exposure_scale;
            den += w;
        }
        *px = if den > 0.0 {
            num / den
        } else {
            shortest_first
                .iter()
                .find(|disk| disk.pixel(x, y) >= 1.0)
                .map_or(0.0, |disk| disk.pixel(x, y) / disk.exposure_scale)
        };
    }
    ReflectanceDisk::new(d, out, first.illum_angle_deg, 1.0, first.surface_id.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::disksynth::disk::in_mask;

    fn scene(d: usize) -> Vec<f64> {
        (0..d * d)
            .map(|i| 0.05 + 1.5 * ((i * 37) % 101) as f64 / 101.0)
            .collect()
    }

    fn capture(radiance: &[f64], d: usize, exposure: f64) -> ReflectanceDisk {
        let px = radiance.iter().map(|r| (r * exposure).min(1.0)).collect();
        ReflectanceDisk::new(d, px, (0.0, 0.0), exposure, "s").unwrap()
    }

    #[test]
    fn single_capture_is_identity() {
        let d = 16;
        let px: Vec<f64> = (0..d * d).map(|i| (i % 10) as f64 / 10.0).collect();
        let disk = ReflectanceDisk::new(d, px, (1.0, 0.0), 1.0, "s").unwrap();
        let merged = merge_exposures(std::slice::from_ref(&disk)).unwrap();
        for (a, b) in disk.valid_pixels().zip(merged.valid_pixels()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn two_unclipped_exposures_recover_radiance() {
        let d = 24;
        let radiance: Vec<f64> = (0..d * d).map(|i| 0.05 + 0.4 * ((i * 13) % 29) as f64 / 29.0).collect();
        let merged = merge_exposures(&[capture(&radiance, d, 1.0), capture(&radiance, d, 2.0)]).unwrap();
        assert_eq!(merged.exposure_scale, 1.0);
        for (x, y, v) in merged.valid_pixels() {
            assert!((v - radiance[y * d + x]).abs() < 1e-12);
        }
    }

    #[test]
    fn saturated_long_exposure_is_replaced() {
        // known radiance up to 1.55: exposure 1 clips the bright half, 0.5 does not
        let d = 32;
        let radiance = scene(d);
        let merged = merge_exposures(&[capture(&radiance, d, 1.0), capture(&radiance, d, 0.5)]).unwrap();
        let mut clipped = 0;
        for (x, y, v) in merged.valid_pixels() {
            let truth = radiance[y * d + x];
            if truth >= 1.0 {
                clipped += 1;
            }
            assert!((v - truth).abs() <= 0.01 * truth, "pixel ({x},{y}) {v} vs {truth}");
        }
        assert!(clipped > 50);
    }

    #[test]
    fn rejects_inconsistent_stacks() {
        let d = 16;
        let r = vec![0.2; d * d];
        let a = capture(&r, d, 1.0);
        assert!(matches!(merge_exposures(&[]), Err(Error::Empty(_))));
        assert!(matches!(merge_exposures(&[a.clone(), a.clone()]), Err(Error::Domain(_))));
        let b = capture(&vec![0.2; 400], 20, 2.0);
        assert!(matches!(merge_exposures(&[a.clone(), b]), Err(Error::Shape(_))));
        let mut c = capture(&r, d, 2.0);
        c.surface_id = "other".into();
        assert!(matches!(merge_exposures(&[a, c]), Err(Error::Shape(_))));
        assert!(in_mask(d, 8, 8));
    }
}
