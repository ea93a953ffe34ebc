use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container;
use crate::error::{Error, Result};

pub const MIN_DIAMETER_PX: usize = 16;

/// Returns whether pixel `(x, y)` of a square array of side `diameter` lies
/// inside the inscribed circle. Pixel centres sit at half-integer coordinates.
pub fn in_mask(diameter: usize, x: usize, y: usize) -> bool {
    let c = diameter as f64 / 2.0;
    let dx = x as f64 + 0.5 - c;
    let dy = y as f64 + 0.5 - c;
    dx * dx + dy * dy <= c * c
}

/// One reflectance disk: a square radiance image whose inscribed circle holds
/// one viewing direction per pixel. Pixels outside the circle are invalid and
/// never read by any statistic.
#[derive(Debug, Clone, PartialEq)]
pub struct ReflectanceDisk {
    diameter_px: usize,
    pixels: Vec<f64>,
    pub illum_angle_deg: (f64, f64),
    pub exposure_scale: f64,
    pub surface_id: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DiskMeta {
    pub kind: String,
    pub diameter_px: usize,
    pub illum_angle_deg: [f64; 2],
    pub exposure_scale: f64,
    pub surface_id: String,
}

impl ReflectanceDisk {
    pub fn new(
        diameter_px: usize,
        pixels: Vec<f64>,
        illum_angle_deg: (f64, f64),
        exposure_scale: f64,
        surface_id: impl Into<String>,
    ) -> Result<Self> {
        if diameter_px < MIN_DIAMETER_PX {
            return Err(Error::Domain(format!(
                "disk diameter {diameter_px} px is below the minimum of {MIN_DIAMETER_PX}"
            )));
        }
        if pixels.len() != diameter_px * diameter_px {
            return Err(Error::Shape(format!(
                "{} pixels given for a {diameter_px}x{diameter_px} disk",
                pixels.len()
            )));
        }
        if !(exposure_scale.is_finite() && exposure_scale > 0.0) {
            return Err(Error::Domain(format!("exposure scale {exposure_scale} must be positive")));
        }
        for y in 0..diameter_px {
            for x in 0..diameter_px {
                let v = pixels[y * diameter_px + x];
                if in_mask(diameter_px, x, y) && !(v.is_finite() && v >= 0.0) {
                    return Err(Error::Domain(format!(
                        "valid pixel ({x}, {y}) holds {v}; radiance must be finite and non-negative"
                    )));
                }
            }
        }
        Ok(Self {
            diameter_px,
            pixels,
            illum_angle_deg,
            exposure_scale,
            surface_id: surface_id.into(),
        })
    }

    pub fn diameter_px(&self) -> usize {
        self.diameter_px
    }

    /// Raw pixel storage, row-major. Out-of-mask entries are unspecified.
    pub fn raw_pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.diameter_px + x]
    }

    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        x < self.diameter_px && y < self.diameter_px && in_mask(self.diameter_px, x, y)
    }

    /// `(x, y, value)` for every in-mask pixel, row-major.
    pub fn valid_pixels(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let d = self.diameter_px;
        (0..d * d).filter_map(move |i| {
            let (x, y) = (i % d, i / d);
            in_mask(d, x, y).then(|| (x, y, self.pixels[i]))
        })
    }

    pub fn valid_count(&self) -> usize {
        self.valid_pixels().count()
    }

    pub fn mean(&self) -> f64 {
        let (sum, n) = self
            .valid_pixels()
            .fold((0.0, 0usize), |(s, n), (_, _, v)| (s + v, n + 1));
        sum / n as f64
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        let (sum, n) = self.valid_pixels().fold((0.0, 0usize), |(s, n), (_, _, v)| {
            (s + (v - m) * (v - m), n + 1)
        });
        sum / n as f64
    }

    /// Position of the brightest valid pixel; the first one in raster order on ties.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = (0, 0, f64::NEG_INFINITY);
        for (x, y, v) in self.valid_pixels() {
            if v > best.2 {
                best = (x, y, v);
            }
        }
        (best.0, best.1)
    }

    /// Pixels with out-of-mask entries replaced by `fill`.
    pub fn masked_pixels(&self, fill: f64) -> Vec<f64> {
        let d = self.diameter_px;
        (0..d * d)
            .map(|i| if in_mask(d, i % d, i / d) { self.pixels[i] } else { fill })
            .collect()
    }

    pub fn meta(&self) -> DiskMeta {
        DiskMeta {
            kind: "disk".into(),
            diameter_px: self.diameter_px,
            illum_angle_deg: [self.illum_angle_deg.0, self.illum_angle_deg.1],
            exposure_scale: self.exposure_scale,
            surface_id: self.surface_id.clone(),
        }
    }

    /// Writes the container file plus its JSON sidecar. Out-of-mask pixels are stored as 0.
    pub fn save(&self, path: &Path) -> Result<()> {
        let d = self.diameter_px as u32;
        let values: Vec<f32> = self.masked_pixels(0.0).iter().map(|&v| v as f32).collect();
        container::write_array(path, (d, d), &values)?;
        container::write_sidecar(path, &self.meta())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ((w, h), values) = container::read_array(path)?;
        let meta: DiskMeta = container::read_sidecar(path)?;
        if meta.kind != "disk" {
            return Err(Error::format(path, format!("expected kind `disk`, found `{}`", meta.kind)));
        }
        if w != h || w as usize != meta.diameter_px {
            return Err(Error::format(path, format!("disk container is {w}x{h}, sidecar says {}", meta.diameter_px)));
        }
        Self::new(
            meta.diameter_px,
            values.into_iter().map(f64::from).collect(),
            (meta.illum_angle_deg[0], meta.illum_angle_deg[1]),
            meta.exposure_scale,
            meta.surface_id,
        )
    }
}
