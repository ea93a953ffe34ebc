//! Parametric disk renderer.
//!
//! A rendered pixel is `albedo + strength * lobe + texture + noise`, where the
//! lobe is an isotropic Gaussian centred on the mirror direction of the
//! illumination. Changing the illumination angle translates the lobe in the
//! disk plane and leaves everything else untouched.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::disk::{in_mask, ReflectanceDisk, MIN_DIAMETER_PX};
use crate::error::{Error, Result};
use crate::seed::{fnv1a64, rng_from_seed, splitmix64};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticMaterial {
    pub specular_strength: f64,
    pub roughness: f64,
    pub diffuse_albedo: f64,
    pub texture_seed: u64,
    pub friction_mu: f64,
    /// Peak amplitude of the value-noise texture.
    pub texture_amplitude: f64,
    /// Lattice spacing of the value noise; must divide the rig's texture period.
    pub texture_cell_px: u32,
}

impl SyntheticMaterial {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.specular_strength) {
            return Err(Error::Domain(format!("specular strength {} not in [0, 1]", self.specular_strength)));
        }
        if !(self.roughness > 0.0 && self.roughness <= 1.0) {
            return Err(Error::Domain(format!("roughness {} not in (0, 1]", self.roughness)));
        }
        if !unit(self.diffuse_albedo) {
            return Err(Error::Domain(format!("diffuse albedo {} not in [0, 1]", self.diffuse_albedo)));
        }
        if !(self.friction_mu > 0.0 && self.friction_mu <= 2.0) {
            return Err(Error::Domain(format!("friction {} not in (0, 2]", self.friction_mu)));
        }
        if !(self.texture_amplitude >= 0.0 && self.texture_amplitude.is_finite()) {
            return Err(Error::Domain("texture amplitude must be non-negative".into()));
        }
        if self.texture_cell_px == 0 {
            return Err(Error::Domain("texture cell must be at least one pixel".into()));
        }
        Ok(())
    }
}

/// Geometry of the simulated mirror rig.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigGeometry {
    /// Viewing angle covered by the disk radius, in degrees.
    pub half_fov_deg: f64,
    /// Period of the texture field in pixels.
    pub texture_period_px: u32,
    /// Lobe standard deviation in units of the disk radius at roughness 1.
    pub lobe_width: f64,
}

impl Default for RigGeometry {
    fn default() -> Self {
        Self {
            half_fov_deg: 37.5,
            texture_period_px: 16,
            lobe_width: 0.5,
        }
    }
}

impl RigGeometry {
    pub fn px_per_degree(&self, diameter_px: usize) -> f64 {
        diameter_px as f64 / 2.0 / self.half_fov_deg
    }

    /// Centre of the specular lobe in pixel coordinates (pixel centres at `i + 0.5`).
    pub fn lobe_center(&self, diameter_px: usize, illum_angle_deg: (f64, f64)) -> (f64, f64) {
        let c = diameter_px as f64 / 2.0;
        // the mirror direction sits opposite the illumination
        let sx = illum_angle_deg.0 / self.half_fov_deg * c;
        let sy = illum_angle_deg.1 / self.half_fov_deg * c;
        (c - sx, c - sy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderOptions {
    pub diameter_px: usize,
    pub noise_sigma: f64,
    pub noise_seed: u64,
    pub rig: RigGeometry,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            diameter_px: 128,
            noise_sigma: 0.0,
            noise_seed: 0,
            rig: RigGeometry::default(),
        }
    }
}

/// Periodic band-limited value noise in `[-1, 1]`.
pub(crate) fn value_noise(seed: u64, cell_px: u32, period_px: u32, x: usize, y: usize) -> f64 {
    let period = period_px.max(1) as usize;
    let cells = (period_px / cell_px).max(1) as i64;
    let cell = cell_px as f64;
    let u = ((x % period) as f64 + 0.5) / cell;
    let v = ((y % period) as f64 + 0.5) / cell;
    let (i0, j0) = (u.floor() as i64, v.floor() as i64);
    let (fu, fv) = (smooth(u - i0 as f64), smooth(v - j0 as f64));
    let lattice = |i: i64, j: i64| -> f64 {
        let (i, j) = (i.rem_euclid(cells) as u64, j.rem_euclid(cells) as u64);
        let h = splitmix64(seed ^ splitmix64(i.wrapping_mul(0x1f1f_1f1f) ^ (j << 32)));
        (h >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
    };
    let top = lattice(i0, j0) * (1.0 - fu) + lattice(i0 + 1, j0) * fu;
    let bottom = lattice(i0, j0 + 1) * (1.0 - fu) + lattice(i0 + 1, j0 + 1) * fu;
    top * (1.0 - fv) + bottom * fv
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Renders one disk of `material` lit from `illum_angle_deg = (in-plane, off-plane)`.
pub fn render_disk(
    material: &SyntheticMaterial,
    illum_angle_deg: (f64, f64),
    opts: &RenderOptions,
) -> Result<ReflectanceDisk> {
    material.validate()?;
    let d = opts.diameter_px;
    if d < MIN_DIAMETER_PX {
        return Err(Error::Domain(format!("diameter {d} px below minimum {MIN_DIAMETER_PX}")));
    }
    if !(opts.noise_sigma >= 0.0 && opts.noise_sigma.is_finite()) {
        return Err(Error::Domain(format!("noise sigma {} must be non-negative", opts.noise_sigma)));
    }
    let rig = &opts.rig;
    if !rig.texture_period_px.is_multiple_of(material.texture_cell_px) {
        return Err(Error::Domain(format!(
            "texture cell {} does not divide texture period {}",
            material.texture_cell_px, rig.texture_period_px
        )));
    }
    let (lx, ly) = rig.lobe_center(d, illum_angle_deg);
    let sigma = material.roughness * rig.lobe_width * d as f64 / 2.0;
    let inv_two_var = 1.0 / (2.0 * sigma * sigma);
    let noise = Normal::new(0.0, opts.noise_sigma.max(0.0))
        .map_err(|e| Error::Domain(e.to_string()))?;
    let mut rng = rng_from_seed(opts.noise_seed);
    let tex_seed = splitmix64(material.texture_seed ^ fnv1a64(b"texture"));

    let mut pixels = vec![0.0; d * d];
    for y in 0..d {
        for x in 0..d {
            if !in_mask(d, x, y) {
                continue;
            }
            let dx = x as f64 + 0.5 - lx;
            let dy = y as f64 + 0.5 - ly;
            let lobe = (-(dx * dx + dy * dy) * inv_two_var).exp();
            let mut v = material.diffuse_albedo + material.specular_strength * lobe;
            if material.texture_amplitude > 0.0 {
                v += material.texture_amplitude
                    * value_noise(tex_seed, material.texture_cell_px, rig.texture_period_px, x, y);
            }
            if opts.noise_sigma > 0.0 {
                v += noise.sample(&mut rng);
            }
            pixels[y * d + x] = v.max(0.0);
        }
    }
    ReflectanceDisk::new(d, pixels, illum_angle_deg, 1.0, "")
}
