//! Seeded geometric multipath scene. A base station with a uniform planar
//! array serves user locations on a rectangular area anchored at the origin,
//! with every path bouncing off one point scatterer.
//!
//! The array lies in the y-z plane. Element `(m, n)` sits at row `m` along z
//! and column `n` along y and is stored at index `m * cols + n`. For a unit
//! direction `d` the direction cosines are `u = d_z` and `v = d_y`.
//!
//! Each location uses the `paths_per_location` scatterers closest to the user.
//! A path through scatterer `s` has total length `L = |s - bs| + |s - ue|`,
//! complex gain `Γ / L · exp(-j 2π L / λ)` and the array response toward `s`.
//! The large-scale gain is `ξ = g0 · Σ |Γ|² / L²`.

use std::io::Write;
use std::path::Path;

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::harness::config::parse_toml;
use crate::linalg::{norm_sqr, rng_from_seed, CVector};

/// Complex channel vector. Channels emitted by the scene have unit norm.
pub type ChannelVector = CVector;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scatterer {
    pub position: [f64; 3],
    pub reflectivity: Complex64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    /// Width (x) and height (y) of the service area in meters.
    pub area_extent: [f64; 2],
    pub bs_position: [f64; 3],
    /// Antenna rows (along z) and columns (along y).
    pub upa_dims: (usize, usize),
    pub carrier_wavelength: f64,
    /// Element spacing as a fraction of the wavelength.
    pub element_spacing: f64,
    pub scatterers: Vec<Scatterer>,
    pub paths_per_location: usize,
    /// Large-scale gain at a total path length of 1 m.
    pub reference_gain: f64,
    /// Height assigned to lattice locations.
    pub ue_height: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UeLocation {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl UeLocation {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dist_sqr(&self, other: &UeLocation) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dz = self.z - other.z;
        dx * dx + dy * dy + dz * dz
    }
}

/// One lattice point of a generated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub location: UeLocation,
    pub h: ChannelVector,
    pub xi: f64,
}

/// A group of scatterers jittered around a common center.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSpec {
    pub center: [f64; 3],
    pub count: usize,
    /// Half-width of the uniform jitter box in meters.
    pub jitter: f64,
    /// Range of reflectivity magnitudes; phases are uniform.
    #[serde(default = "default_magnitude")]
    pub magnitude: [f64; 2],
}

fn default_magnitude() -> [f64; 2] {
    [0.5, 1.0]
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScatterFile {
    position: [f64; 3],
    reflectivity: [f64; 2],
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneFile {
    area_extent: [f64; 2],
    bs_position: [f64; 3],
    upa_dims: [usize; 2],
    carrier_wavelength: f64,
    #[serde(default = "default_spacing")]
    element_spacing: f64,
    #[serde(default = "default_paths")]
    paths_per_location: usize,
    #[serde(default = "default_one")]
    reference_gain: f64,
    #[serde(default = "default_ue_height")]
    ue_height: f64,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    scatterer: Vec<ScatterFile>,
    #[serde(default)]
    cluster: Vec<ClusterSpec>,
}

fn default_spacing() -> f64 {
    0.5
}
fn default_paths() -> usize {
    3
}
fn default_one() -> f64 {
    1.0
}
fn default_ue_height() -> f64 {
    1.5
}

impl SceneConfig {
    pub fn num_antennas(&self) -> usize {
        self.upa_dims.0 * self.upa_dims.1
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.num_antennas() == 0 {
            return bad(format!("upa_dims {:?} give zero antennas", self.upa_dims));
        }
        if !(self.area_extent[0] > 0.0 && self.area_extent[1] > 0.0)
            || !self.area_extent.iter().all(|v| v.is_finite())
        {
            return bad(format!("area_extent {:?} must be positive", self.area_extent));
        }
        if !(self.element_spacing > 0.0 && self.element_spacing.is_finite()) {
            return bad(format!("element_spacing {} must be positive", self.element_spacing));
        }
        if !(self.carrier_wavelength > 0.0 && self.carrier_wavelength.is_finite()) {
            return bad(format!(
                "carrier_wavelength {} must be positive",
                self.carrier_wavelength
            ));
        }
        if !(self.reference_gain >= 0.0 && self.reference_gain.is_finite()) {
            return bad(format!("reference_gain {} must be nonnegative", self.reference_gain));
        }
        Ok(())
    }

    /// Location at lattice coordinates `(x, y)` and the configured UE height.
    pub fn ue(&self, x: f64, y: f64) -> UeLocation {
        UeLocation::new(x, y, self.ue_height)
    }

    pub fn contains(&self, q: &UeLocation) -> bool {
        q.x >= 0.0 && q.y >= 0.0 && q.x <= self.area_extent[0] && q.y <= self.area_extent[1]
    }

    /// Parses a scene description. Scatterers listed under `[[scatterer]]` come
    /// first, followed by those drawn for each `[[cluster]]` using `seed`.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: SceneFile = parse_toml(text)?;
        let mut scatterers: Vec<Scatterer> = file
            .scatterer
            .iter()
            .map(|s| Scatterer {
                position: s.position,
                reflectivity: Complex64::new(s.reflectivity[0], s.reflectivity[1]),
            })
            .collect();
        scatterers.extend(clustered_scatterers(&file.cluster, file.seed)?);
        let cfg = SceneConfig {
            area_extent: file.area_extent,
            bs_position: file.bs_position,
            upa_dims: (file.upa_dims[0], file.upa_dims[1]),
            carrier_wavelength: file.carrier_wavelength,
            element_spacing: file.element_spacing,
            scatterers,
            paths_per_location: file.paths_per_location,
            reference_gain: file.reference_gain,
            ue_height: file.ue_height,
            seed: file.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }
}

/// Draws the scatterers of each cluster from a generator seeded by `seed`.
pub fn clustered_scatterers(clusters: &[ClusterSpec], seed: u64) -> Result<Vec<Scatterer>> {
    let mut rng = rng_from_seed(seed);
    let mut out = Vec::new();
    for cl in clusters {
        let [lo, hi] = cl.magnitude;
        if !(cl.jitter >= 0.0 && lo >= 0.0 && hi >= lo) {
            return Err(Error::InvalidConfig(format!(
                "cluster at {:?} has invalid jitter or magnitude range",
                cl.center
            )));
        }
        for _ in 0..cl.count {
            let mut position = cl.center;
            for p in position.iter_mut() {
                *p += cl.jitter * (2.0 * rng.random::<f64>() - 1.0);
            }
            let mag = lo + (hi - lo) * rng.random::<f64>();
            let phase = 2.0 * std::f64::consts::PI * rng.random::<f64>();
            out.push(Scatterer {
                position,
                reflectivity: Complex64::from_polar(mag, phase),
            });
        }
    }
    Ok(out)
}

/// Array response for direction cosines `(u, v)`.
pub fn steering_from_cosines(
    upa_dims: (usize, usize),
    element_spacing: f64,
    u: f64,
    v: f64,
) -> Result<ChannelVector> {
    let (rows, cols) = upa_dims;
    if rows * cols == 0 {
        return Err(Error::InvalidConfig(format!(
            "upa_dims {upa_dims:?} give zero antennas"
        )));
    }
    let k = 2.0 * std::f64::consts::PI * element_spacing;
    Ok(CVector::from_fn(rows * cols, |idx, _| {
        let m = (idx / cols) as f64;
        let n = (idx % cols) as f64;
        Complex64::from_polar(1.0, k * (m * u + n * v))
    }))
}

/// Array response toward azimuth `az` (in the x-y plane, from +x) and
/// elevation `el` (from the horizontal plane), with `u = sin el` and
/// `v = cos el · sin az`.
pub fn steering_vector(
    upa_dims: (usize, usize),
    element_spacing: f64,
    azimuth: f64,
    elevation: f64,
) -> Result<ChannelVector> {
    if !azimuth.is_finite() || !elevation.is_finite() {
        return Err(Error::InvalidConfig("steering angles must be finite".into()));
    }
    let u = elevation.sin();
    let v = elevation.cos() * azimuth.sin();
    steering_from_cosines(upa_dims, element_spacing, u, v)
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Indices of the `k` scatterers nearest to `ue`, ties broken by index.
fn nearest_scatterers(scene: &SceneConfig, ue: &[f64; 3]) -> Vec<usize> {
    let mut order: Vec<(f64, usize)> = scene
        .scatterers
        .iter()
        .enumerate()
        .map(|(i, s)| (dist(&s.position, ue), i))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    order
        .into_iter()
        .take(scene.paths_per_location)
        .map(|(_, i)| i)
        .collect()
}

/// Ground-truth unit-norm channel and large-scale gain at `q`.
pub fn synthesize_channel(scene: &SceneConfig, q: &UeLocation) -> Result<(ChannelVector, f64)> {
    scene.validate()?;
    if !(q.x.is_finite() && q.y.is_finite() && q.z.is_finite()) || !scene.contains(q) {
        return Err(Error::OutOfBounds { x: q.x, y: q.y });
    }
    let ue = [q.x, q.y, q.z];
    let bs = scene.bs_position;
    let m = scene.num_antennas();
    let mut h = CVector::zeros(m);
    let mut xi = 0.0;
    for idx in nearest_scatterers(scene, &ue) {
        let s = &scene.scatterers[idx];
        let d_bs = dist(&s.position, &bs);
        let len = d_bs + dist(&s.position, &ue);
        if len <= 0.0 {
            continue;
        }
        let (u, v) = if d_bs > 0.0 {
            ((s.position[2] - bs[2]) / d_bs, (s.position[1] - bs[1]) / d_bs)
        } else {
            (0.0, 0.0)
        };
        let phase = -2.0 * std::f64::consts::PI * len / scene.carrier_wavelength;
        let gain = s.reflectivity / len * Complex64::from_polar(1.0, phase);
        let a = steering_from_cosines(scene.upa_dims, scene.element_spacing, u, v)?;
        h.axpy(gain, &a, Complex64::new(1.0, 0.0));
        xi += s.reflectivity.norm_sqr() / (len * len);
    }
    let norm = norm_sqr(&h).sqrt();
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::DegenerateChannel { x: q.x, y: q.y });
    }
    h.unscale_mut(norm);
    Ok((h, scene.reference_gain * xi))
}

/// Number of lattice points along an axis of length `side`.
fn lattice_count(side: f64, interval: f64) -> usize {
    (side / interval + 1e-9).floor() as usize + 1
}

/// Lattice locations covering the area at `interval`, including both edges
/// when the interval divides the side. Ordering is row-major with `y` outer
/// and `x` inner, so index `iy * nx + ix` holds `(ix·Δ, iy·Δ)`.
pub fn lattice(scene: &SceneConfig, interval: f64) -> Result<Vec<UeLocation>> {
    if !(interval > 0.0 && interval.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "sampling interval {interval} must be positive"
        )));
    }
    let [w, h] = scene.area_extent;
    if interval > w || interval > h {
        return Err(Error::EmptyDataset { interval });
    }
    let nx = lattice_count(w, interval);
    let ny = lattice_count(h, interval);
    let mut out = Vec::with_capacity(nx * ny);
    for iy in 0..ny {
        for ix in 0..nx {
            out.push(scene.ue(
                (ix as f64 * interval).min(w),
                (iy as f64 * interval).min(h),
            ));
        }
    }
    Ok(out)
}

/// Synthesizes a channel at every lattice point (see [`lattice`]).
pub fn generate_dataset(scene: &SceneConfig, sampling_interval: f64) -> Result<Vec<Sample>> {
    scene.validate()?;
    let locations = lattice(scene, sampling_interval)?;
    locations
        .into_par_iter()
        .map(|location| {
            let (h, xi) = synthesize_channel(scene, &location)?;
            Ok(Sample { location, h, xi })
        })
        .collect()
}

/// Writes samples as CSV: `x,y,z,xi,re0,im0,...`.
pub fn write_dataset_csv<W: Write>(out: &mut W, samples: &[Sample]) -> std::io::Result<()> {
    let m = samples.first().map_or(0, |s| s.h.len());
    write!(out, "x,y,z,xi")?;
    for i in 0..m {
        write!(out, ",re{i},im{i}")?;
    }
    writeln!(out)?;
    for s in samples {
        write!(out, "{},{},{},{}", s.location.x, s.location.y, s.location.z, s.xi)?;
        for z in s.h.iter() {
            write!(out, ",{},{}", z.re, z.im)?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// The four-corner clustered scene used by the examples and tests.
///
/// Its 10 m wavelength keeps path phases slowly varying across the area, so
/// channels within a grid are strongly correlated.
pub fn demo_scene(upa_dims: (usize, usize), seed: u64) -> SceneConfig {
    let clusters = [[0.0, 0.0, 3.0], [50.0, 0.0, 12.0], [0.0, 50.0, 18.0], [50.0, 50.0, 6.0]]
        .iter()
        .map(|&center| ClusterSpec {
            center,
            count: 3,
            jitter: 2.0,
            magnitude: [0.5, 1.0],
        })
        .collect::<Vec<_>>();
    SceneConfig {
        area_extent: [50.0, 50.0],
        bs_position: [25.0, 25.0, 10.0],
        upa_dims,
        carrier_wavelength: 10.0,
        element_spacing: 0.5,
        scatterers: clustered_scatterers(&clusters, seed).expect("static cluster spec is valid"),
        paths_per_location: 3,
        reference_gain: 1.0,
        ue_height: 1.5,
        seed,
    }
}
