//! Grid-indexed channel knowledge store. Each grid cell holds the sample
//! mean and biased (1/N) covariance of the channels inside it along with a
//! fitted Gaussian-mixture prior. A sparse bank of stored channels per cell
//! serves nearest-neighbor lookup.

pub mod em;
pub mod format;

pub use em::{fit_gmm_em, EmFit, EmOptions};
pub use format::{load_csfm, save_csfm, FORMAT_VERSION, MAGIC};

use crate::error::{Error, Result};
use crate::linalg::{CMatrix, CVector};
use crate::prior::{GaussianPrior, GmmPrior};
use crate::scene::{generate_dataset, SceneConfig, UeLocation};

/// Relative tolerance when checking that the grid size divides the area.
const DIVISIBILITY_TOL: f64 = 1e-9;

/// Uniform square tiling of the service area. Grid ids are row-major with
/// `id = row * cols + col`, rows along y and columns along x.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPartition {
    pub origin: [f64; 2],
    pub d: f64,
    pub rows: usize,
    pub cols: usize,
}

fn exact_count(side: f64, d: f64) -> Option<usize> {
    let r = side / d;
    let n = r.round();
    if n >= 1.0 && (r - n).abs() <= DIVISIBILITY_TOL * n {
        Some(n as usize)
    } else {
        None
    }
}

/// Splits a `width × height` area anchored at the origin into `d × d` cells.
pub fn partition_grid(area: [f64; 2], d: f64) -> Result<GridPartition> {
    let err = Error::Partition {
        d,
        width: area[0],
        height: area[1],
    };
    if !(d > 0.0 && d.is_finite()) {
        return Err(err);
    }
    match (exact_count(area[0], d), exact_count(area[1], d)) {
        (Some(cols), Some(rows)) => Ok(GridPartition {
            origin: [0.0, 0.0],
            d,
            rows,
            cols,
        }),
        _ => Err(err),
    }
}

impl GridPartition {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn axis_index(&self, v: f64, origin: f64, count: usize) -> Option<usize> {
        let t = (v - origin) / self.d;
        if !(t >= 0.0) || t > count as f64 {
            return None;
        }
        Some((t.floor() as usize).min(count - 1))
    }

    /// Cell containing `q`. Points on an interior boundary belong to the cell
    /// of their floor index; the right and top edges close the last cells.
    pub fn grid_id(&self, q: &UeLocation) -> Option<u32> {
        let col = self.axis_index(q.x, self.origin[0], self.cols)?;
        let row = self.axis_index(q.y, self.origin[1], self.rows)?;
        Some((row * self.cols + col) as u32)
    }

    /// `[x0, y0, x1, y1]` of a cell.
    pub fn bounds(&self, id: u32) -> [f64; 4] {
        let row = id as usize / self.cols;
        let col = id as usize % self.cols;
        let x0 = self.origin[0] + col as f64 * self.d;
        let y0 = self.origin[1] + row as f64 * self.d;
        [x0, y0, x0 + self.d, y0 + self.d]
    }
}

/// Sample mean and biased (1/N) sample covariance.
pub fn fit_grid_stats(samples: &[CVector]) -> Result<GaussianPrior> {
    let first = samples
        .first()
        .ok_or_else(|| Error::InsufficientData("no samples in grid".into()))?;
    let m = first.len();
    if samples.iter().any(|s| s.len() != m) {
        return Err(Error::Shape("samples have differing lengths".into()));
    }
    let n = samples.len() as f64;
    let mut mean = CVector::zeros(m);
    for s in samples {
        mean += s;
    }
    mean.unscale_mut(n);
    let centered = CMatrix::from_fn(m, samples.len(), |i, j| samples[j][i] - mean[i]);
    let cov = (&centered * centered.adjoint()).unscale(n);
    let cov = (&cov + cov.adjoint()).scale(0.5);
    GaussianPrior::new(mean, cov)
}

/// One stored channel with its location.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredSample {
    pub location: UeLocation,
    pub h: CVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsfmGrid {
    pub grid_id: u32,
    /// `[x0, y0, x1, y1]`.
    pub bounds: [f64; 4],
    pub mean: CVector,
    pub cov: CMatrix,
    pub gmm: GmmPrior,
    pub samples: Vec<StoredSample>,
}

impl CsfmGrid {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn gaussian(&self) -> Result<GaussianPrior> {
        GaussianPrior::new(self.mean.clone(), self.cov.clone())
    }

    /// Second moment `C + h̄ h̄ᴴ` used to calibrate noise for a target SNR.
    pub fn second_moment(&self) -> CMatrix {
        &self.cov + &self.mean * self.mean.adjoint()
    }

    /// Whether `q` lies inside the closed bounds of this cell.
    pub fn contains(&self, q: &UeLocation) -> bool {
        let [x0, y0, x1, y1] = self.bounds;
        q.x >= x0 && q.x <= x1 && q.y >= y0 && q.y <= y1
    }

    /// A grid holding only a Gaussian prior, as a one-component mixture.
    pub fn from_gaussian(
        grid_id: u32,
        bounds: [f64; 4],
        prior: &GaussianPrior,
        samples: Vec<StoredSample>,
    ) -> Self {
        Self {
            grid_id,
            bounds,
            mean: prior.mean().clone(),
            cov: prior.cov().clone(),
            gmm: GmmPrior::single(prior),
            samples,
        }
    }
}

/// Stored channel closest to `q` in the horizontal plane; ties resolve to the
/// lowest sample index.
pub fn nn_lookup<'a>(grid: &'a CsfmGrid, q: &UeLocation) -> Result<&'a CVector> {
    let mut best: Option<(f64, usize)> = None;
    for (i, s) in grid.samples.iter().enumerate() {
        let d = (s.location.x - q.x).powi(2) + (s.location.y - q.y).powi(2);
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, i));
        }
    }
    best.map(|(_, i)| &grid.samples[i].h).ok_or(Error::NoSamples)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsfmStore {
    pub grids: Vec<CsfmGrid>,
}

impl CsfmStore {
    pub fn dim(&self) -> usize {
        self.grids.first().map_or(0, CsfmGrid::dim)
    }

    /// Grid containing `q` under the floor-with-edge-closure rule, found by
    /// scanning grid bounds.
    pub fn find_grid(&self, q: &UeLocation) -> Option<&CsfmGrid> {
        let x_max = self.grids.iter().map(|g| g.bounds[2]).fold(f64::NEG_INFINITY, f64::max);
        let y_max = self.grids.iter().map(|g| g.bounds[3]).fold(f64::NEG_INFINITY, f64::max);
        self.grids.iter().find(|g| {
            let [x0, y0, x1, y1] = g.bounds;
            let in_x = q.x >= x0 && (q.x < x1 || (q.x == x1 && x1 == x_max));
            let in_y = q.y >= y0 && (q.y < y1 || (q.y == y1 && y1 == y_max));
            in_x && in_y
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuildOptions {
    pub grid_size: f64,
    /// Lattice spacing of the channels used for statistics and EM.
    pub train_interval: f64,
    /// Lattice spacing of the nearest-neighbor sample bank.
    pub sample_interval: f64,
    /// Use every `em_stride`-th training channel for EM.
    pub em_stride: usize,
    pub em: EmOptions,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            grid_size: 50.0,
            train_interval: 0.5,
            sample_interval: 1.0,
            em_stride: 1,
            em: EmOptions::default(),
        }
    }
}

/// Builds the store for a scene. Statistics and mixtures are fitted per grid
/// on the training lattice, while the coarser bank lattice supplies stored
/// channels. Grids are independent, each seeded with `em.seed + grid_id`.
pub fn build_csfm(scene: &SceneConfig, opts: &BuildOptions) -> Result<CsfmStore> {
    use rayon::prelude::*;
    if opts.em_stride == 0 {
        return Err(Error::InvalidConfig("em_stride must be at least 1".into()));
    }
    let part = partition_grid(scene.area_extent, opts.grid_size)?;
    let train = generate_dataset(scene, opts.train_interval)?;
    let bank = generate_dataset(scene, opts.sample_interval)?;
    let mut train_by_grid: Vec<Vec<CVector>> = vec![Vec::new(); part.len()];
    for s in &train {
        if let Some(id) = part.grid_id(&s.location) {
            train_by_grid[id as usize].push(s.h.clone());
        }
    }
    let mut bank_by_grid: Vec<Vec<StoredSample>> = vec![Vec::new(); part.len()];
    for s in bank {
        if let Some(id) = part.grid_id(&s.location) {
            bank_by_grid[id as usize].push(StoredSample {
                location: s.location,
                h: s.h,
            });
        }
    }
    let grids = train_by_grid
        .into_par_iter()
        .zip(bank_by_grid)
        .enumerate()
        .map(|(id, (channels, samples))| {
            let id = id as u32;
            let stats = fit_grid_stats(&channels)?;
            let subset: Vec<CVector> = channels.iter().step_by(opts.em_stride).cloned().collect();
            let em_opts = EmOptions {
                seed: opts.em.seed.wrapping_add(id as u64),
                ..opts.em.clone()
            };
            let fit = fit_gmm_em(&subset, &em_opts)?;
            Ok(CsfmGrid {
                grid_id: id,
                bounds: part.bounds(id),
                mean: stats.mean().clone(),
                cov: stats.cov().clone(),
                gmm: fit.prior,
                samples,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CsfmStore { grids })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c, cscg_vector, hermitian_eigen, rng_from_seed};
    use rand::Rng;

    #[test]
    fn partition_examples() {
        assert_eq!(partition_grid([200.0, 200.0], 50.0).unwrap().len(), 16);
        assert_eq!(partition_grid([200.0, 200.0], 200.0).unwrap().len(), 1);
        assert!(matches!(
            partition_grid([200.0, 200.0], 30.0),
            Err(Error::Partition { .. })
        ));
        let p = partition_grid([200.0, 100.0], 50.0).unwrap();
        assert_eq!((p.rows, p.cols), (2, 4));
    }

    #[test]
    fn tiling_rule() {
        let p = partition_grid([100.0, 100.0], 50.0).unwrap();
        let q = |x, y| UeLocation::new(x, y, 0.0);
        assert_eq!(p.grid_id(&q(0.0, 0.0)), Some(0));
        assert_eq!(p.grid_id(&q(50.0, 0.0)), Some(1));
        assert_eq!(p.grid_id(&q(49.999, 50.0)), Some(2));
        assert_eq!(p.grid_id(&q(100.0, 100.0)), Some(3));
        assert_eq!(p.grid_id(&q(100.1, 10.0)), None);
        assert_eq!(p.grid_id(&q(-0.1, 10.0)), None);
        assert_eq!(p.bounds(3), [50.0, 50.0, 100.0, 100.0]);
        // Every lattice point maps to exactly one grid, and the bounds scan
        // agrees with the floor rule.
        let store = CsfmStore {
            grids: (0..4)
                .map(|id| CsfmGrid {
                    grid_id: id,
                    bounds: p.bounds(id),
                    mean: CVector::zeros(1),
                    cov: CMatrix::zeros(1, 1),
                    gmm: GmmPrior::single(
                        &GaussianPrior::new(CVector::zeros(1), CMatrix::identity(1, 1)).unwrap(),
                    ),
                    samples: vec![],
                })
                .collect(),
        };
        for ix in 0..=40 {
            for iy in 0..=40 {
                let loc = q(ix as f64 * 2.5, iy as f64 * 2.5);
                let id = p.grid_id(&loc).unwrap();
                assert_eq!(store.find_grid(&loc).unwrap().grid_id, id);
                let hits = store.grids.iter().filter(|g| g.contains(&loc)).count();
                assert!(hits >= 1);
            }
        }
    }

    #[test]
    fn stats_examples() {
        let s = CVector::from_vec(vec![c(1.0, 2.0), c(-0.5, 0.0)]);
        let one = fit_grid_stats(std::slice::from_ref(&s)).unwrap();
        assert_eq!(one.mean(), &s);
        assert_eq!(one.cov().norm(), 0.0);
        let two = fit_grid_stats(&[s.clone(), -s.clone()]).unwrap();
        assert_eq!(two.mean().norm(), 0.0);
        assert!((two.cov() - &s * s.adjoint()).norm() < 1e-15);
        assert!(matches!(fit_grid_stats(&[]), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn stats_covariance_is_psd() {
        let mut rng = rng_from_seed(3);
        for n in [1usize, 2, 5, 40] {
            let samples: Vec<CVector> = (0..n).map(|_| cscg_vector(&mut rng, 6, 1.0)).collect();
            let st = fit_grid_stats(&samples).unwrap();
            assert!(hermitian_eigen(st.cov()).eigenvalues.min() >= -1e-10);
        }
    }

    fn bank_grid(n: usize, seed: u64) -> CsfmGrid {
        let mut rng = rng_from_seed(seed);
        let samples = (0..n)
            .map(|i| StoredSample {
                location: UeLocation::new(rng.random_range(0.0..10.0), rng.random_range(0.0..10.0), 1.5),
                h: CVector::from_element(1, c(i as f64, 0.0)),
            })
            .collect();
        let prior = GaussianPrior::new(CVector::zeros(1), CMatrix::identity(1, 1)).unwrap();
        CsfmGrid::from_gaussian(0, [0.0, 0.0, 10.0, 10.0], &prior, samples)
    }

    #[test]
    fn nn_examples() {
        let g = bank_grid(10, 1);
        let loc = g.samples[4].location;
        assert_eq!(nn_lookup(&g, &loc).unwrap(), &g.samples[4].h);
        let mut pair = bank_grid(2, 2);
        pair.samples[0].location = UeLocation::new(1.0, 1.0, 1.5);
        pair.samples[1].location = UeLocation::new(3.0, 1.0, 1.5);
        let mid = UeLocation::new(2.0, 1.0, 1.5);
        assert_eq!(nn_lookup(&pair, &mid).unwrap(), &pair.samples[0].h);
        let empty = bank_grid(0, 3);
        assert!(matches!(nn_lookup(&empty, &mid), Err(Error::NoSamples)));
    }

    #[test]
    fn nn_matches_exhaustive_scan() {
        let g = bank_grid(200, 4);
        let mut rng = rng_from_seed(5);
        for _ in 0..100 {
            let q = UeLocation::new(rng.random_range(0.0..10.0), rng.random_range(0.0..10.0), 0.0);
            let brute = (0..g.samples.len())
                .min_by(|&a, &b| {
                    let da = (g.samples[a].location.x - q.x).powi(2) + (g.samples[a].location.y - q.y).powi(2);
                    let db = (g.samples[b].location.x - q.x).powi(2) + (g.samples[b].location.y - q.y).powi(2);
                    da.total_cmp(&db).then(a.cmp(&b))
                })
                .unwrap();
            assert_eq!(nn_lookup(&g, &q).unwrap(), &g.samples[brute].h);
        }
    }

    #[test]
    fn build_small_store() {
        let scene = crate::scene::demo_scene((2, 2), 1);
        let opts = BuildOptions {
            grid_size: 25.0,
            train_interval: 2.5,
            sample_interval: 5.0,
            em_stride: 1,
            em: EmOptions {
                n_components: 2,
                ..Default::default()
            },
        };
        let store = build_csfm(&scene, &opts).unwrap();
        assert_eq!(store.grids.len(), 4);
        for g in &store.grids {
            assert!(!g.samples.is_empty());
            assert!(g.samples.iter().all(|s| g.contains(&s.location)));
            assert!(g.gaussian().is_ok());
        }
        let q = scene.ue(30.0, 10.0);
        assert_eq!(store.find_grid(&q).unwrap().grid_id, 1);
        assert_eq!(store, build_csfm(&scene, &opts).unwrap());
    }
}
