use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::disk::ReflectanceDisk;
use super::friction::{write_friction_csv, FrictionRecord};
use super::hdr::merge_exposures;
use super::render::{render_disk, RenderOptions, RigGeometry, SyntheticMaterial};
use crate::container;
use crate::error::{Error, Result};
use crate::seed::{derive_indexed_seed, stream};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;
pub const FRICTION_FILE: &str = "friction.csv";

/// Five in-plane and two off-plane illumination directions, in degrees.
pub const RIG_ILLUMINATION_ANGLES: [(f64, f64); 7] = [
    (-20.0, 0.0),
    (-10.0, 0.0),
    (0.0, 0.0),
    (10.0, 0.0),
    (20.0, 0.0),
    (0.0, -10.0),
    (0.0, 10.0),
];

// friction = BASE + SLOPE * roughness + jitter
const FRICTION_BASE: f64 = 0.2;
const FRICTION_SLOPE: f64 = 0.4;
const FRICTION_JITTER: f64 = 0.02;
const CLASS_ROUGHNESS_SPREAD: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub n_classes: usize,
    pub instances_per_class: usize,
    pub illum_angles: Vec<(f64, f64)>,
    pub seed: u64,
    pub diameter_px: usize,
    pub noise_sigma: f64,
    /// When non-empty, every disk is captured at these exposures (clipped to
    /// `[0, 1]`) and merged back into radiance.
    #[serde(default)]
    pub hdr_exposures: Vec<f64>,
    #[serde(default)]
    pub rig: RigGeometry,
}

impl DatasetSpec {
    pub fn new(
        n_classes: usize,
        instances_per_class: usize,
        illum_angles: Vec<(f64, f64)>,
        seed: u64,
    ) -> Self {
        Self {
            n_classes,
            instances_per_class,
            illum_angles,
            seed,
            diameter_px: 128,
            noise_sigma: 0.01,
            hdr_exposures: Vec::new(),
            rig: RigGeometry::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::Config("a dataset needs at least 2 classes".into()));
        }
        if self.instances_per_class < 2 {
            return Err(Error::Config("a dataset needs at least 2 instances per class".into()));
        }
        if self.illum_angles.is_empty() {
            return Err(Error::Config("at least one illumination angle is required".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceEntry {
    pub surface_id: String,
    pub label: String,
    pub instance: u32,
    pub mu: f64,
    /// Disk files relative to the dataset root.
    pub disks: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub material: Option<SyntheticMaterial>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub surfaces: Vec<SurfaceEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<DatasetSpec>,
}

/// One disk of the flattened dataset listing.
#[derive(Debug, Clone, PartialEq)]
pub struct DiskRef {
    pub surface: usize,
    pub name: String,
}

impl Manifest {
    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        let mut keys = BTreeSet::new();
        for s in &self.surfaces {
            if !ids.insert(s.surface_id.as_str()) {
                return Err(Error::Config(format!("duplicate surface id `{}`", s.surface_id)));
            }
            if !keys.insert((s.label.as_str(), s.instance)) {
                return Err(Error::Config(format!("duplicate instance {} #{}", s.label, s.instance)));
            }
            if !(s.mu > 0.0 && s.mu <= 2.0) {
                return Err(Error::Config(format!("surface `{}` friction {} outside (0, 2]", s.surface_id, s.mu)));
            }
            if s.disks.is_empty() {
                return Err(Error::Config(format!("surface `{}` lists no disks", s.surface_id)));
            }
        }
        Ok(())
    }

    pub fn disk_refs(&self) -> Vec<DiskRef> {
        self.surfaces
            .iter()
            .enumerate()
            .flat_map(|(i, s)| s.disks.iter().map(move |n| DiskRef { surface: i, name: n.clone() }))
            .collect()
    }

    pub fn friction_records(&self) -> Vec<FrictionRecord> {
        self.surfaces
            .iter()
            .map(|s| FrictionRecord {
                class_name: s.label.clone(),
                instance_id: s.instance,
                mu: s.mu,
            })
            .collect()
    }
}

/// A generated dataset held in memory; `disks` follows `manifest.disk_refs()`.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub manifest: Manifest,
    pub disks: Vec<ReflectanceDisk>,
}

impl SyntheticDataset {
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (r, disk) in self.manifest.disk_refs().iter().zip(&self.disks) {
            disk.save(&dir.join(&r.name))?;
        }
        write_friction_csv(&dir.join(FRICTION_FILE), &self.manifest.friction_records())?;
        container::write_json(&dir.join(MANIFEST_FILE), &self.manifest)
    }

    pub fn into_dataset(self) -> Dataset {
        Dataset {
            manifest: self.manifest,
            root: None,
            disks: Some(self.disks),
        }
    }
}

fn class_materials(spec: &DatasetSpec, class: usize) -> Vec<SyntheticMaterial> {
    let mut rng = stream(derive_indexed_seed(spec.seed, "synth/class", class as u64), "params");
    let n = spec.n_classes as f64;
    let center = 0.08 + 0.84 * (class as f64 + 0.5) / n;
    let strength: f64 = rng.random_range(0.3..1.0);
    let albedo: f64 = rng.random_range(0.15..0.6);
    let texture: f64 = rng.random_range(0.02..0.12);
    let cells: Vec<u32> = [2u32, 4, 8]
        .into_iter()
        .filter(|c| spec.rig.texture_period_px.is_multiple_of(*c))
        .collect();
    let cell = *cells.choose(&mut rng).unwrap_or(&1);

    let m = spec.instances_per_class;
    // stratified roughness so instances cover the class band
    let roughness: Vec<f64> = (0..m)
        .map(|i| {
            let u = (i as f64 + rng.random_range(0.0..1.0)) / m as f64;
            (center + CLASS_ROUGHNESS_SPREAD * (u - 0.5)).clamp(0.02, 1.0)
        })
        .collect();
    // jitter draws are paired with roughness in rank order, keeping friction
    // monotone in roughness within a class
    let mut jitter: Vec<f64> = (0..m)
        .map(|_| rng.random_range(-FRICTION_JITTER..=FRICTION_JITTER))
        .collect();
    jitter.sort_by(f64::total_cmp);

    (0..m)
        .map(|i| SyntheticMaterial {
            specular_strength: (strength * rng.random_range(0.9..1.1)).min(1.0),
            roughness: roughness[i],
            diffuse_albedo: (albedo + rng.random_range(-0.03..0.03)).clamp(0.0, 1.0),
            texture_seed: rng.random(),
            friction_mu: FRICTION_BASE + FRICTION_SLOPE * roughness[i] + jitter[i],
            texture_amplitude: texture * rng.random_range(0.9..1.1),
            texture_cell_px: cell,
        })
        .collect()
}

fn capture(
    material: &SyntheticMaterial,
    angle: (f64, f64),
    spec: &DatasetSpec,
    noise_seed: u64,
    surface_id: &str,
) -> Result<ReflectanceDisk> {
    let opts = RenderOptions {
        diameter_px: spec.diameter_px,
        noise_sigma: spec.noise_sigma,
        noise_seed,
        rig: spec.rig,
    };
    let mut radiance = render_disk(material, angle, &opts)?;
    radiance.surface_id = surface_id.to_string();
    if spec.hdr_exposures.is_empty() {
        return Ok(radiance);
    }
    let d = radiance.diameter_px();
    let stack = spec
        .hdr_exposures
        .iter()
        .map(|&e| {
            let px = radiance.raw_pixels().iter().map(|r| (r * e).clamp(0.0, 1.0)).collect();
            ReflectanceDisk::new(d, px, angle, e, surface_id)
        })
        .collect::<Result<Vec<_>>>()?;
    merge_exposures(&stack)
}

/// Generates a labelled dataset in memory. Deterministic for a fixed spec.
pub fn synthesize_dataset(spec: &DatasetSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let mut surfaces = Vec::new();
    let mut disks = Vec::new();
    for class in 0..spec.n_classes {
        let label = format!("class{class:02}");
        for (i, material) in class_materials(spec, class).into_iter().enumerate() {
            let surface_id = format!("c{class:02}i{:02}", i + 1);
            let mut names = Vec::new();
            for (a, &angle) in spec.illum_angles.iter().enumerate() {
                let noise_seed = derive_indexed_seed(spec.seed, "synth/noise", disks.len() as u64);
                disks.push(capture(&material, angle, spec, noise_seed, &surface_id)?);
                names.push(format!("disks/{surface_id}_a{a}.rdc"));
            }
            surfaces.push(SurfaceEntry {
                surface_id,
                label: label.clone(),
                instance: i as u32 + 1,
                mu: material.friction_mu,
                disks: names,
                material: Some(material),
            });
        }
    }
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        surfaces,
        generator: Some(spec.clone()),
    };
    manifest.validate()?;
    Ok(SyntheticDataset { manifest, disks })
}

/// Generates a dataset and writes manifest, disk files and friction table under `dir`.
pub fn make_synthetic_dataset(spec: &DatasetSpec, dir: &Path) -> Result<Manifest> {
    let data = synthesize_dataset(spec)?;
    data.write(dir)?;
    Ok(data.manifest)
}

/// A dataset as consumed by the pipeline. Disks are optional so that
/// descriptor-only imports can run without the raw images.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: Manifest,
    pub root: Option<PathBuf>,
    pub disks: Option<Vec<ReflectanceDisk>>,
}

impl Dataset {
    pub fn load_manifest(dir: &Path) -> Result<Self> {
        let manifest: Manifest = container::read_json(&dir.join(MANIFEST_FILE))?;
        if manifest.version != MANIFEST_VERSION {
            return Err(Error::format(
                dir.join(MANIFEST_FILE),
                format!("unsupported manifest version {}", manifest.version),
            ));
        }
        manifest.validate()?;
        Ok(Self {
            manifest,
            root: Some(dir.to_path_buf()),
            disks: None,
        })
    }

    /// Loads the manifest and every disk it lists.
    pub fn load(dir: &Path) -> Result<Self> {
        let mut ds = Self::load_manifest(dir)?;
        let disks = ds
            .manifest
            .disk_refs()
            .iter()
            .map(|r| ReflectanceDisk::load(&dir.join(&r.name)))
            .collect::<Result<Vec<_>>>()?;
        ds.disks = Some(disks);
        Ok(ds)
    }

    pub fn disk_refs(&self) -> Vec<DiskRef> {
        self.manifest.disk_refs()
    }
}
