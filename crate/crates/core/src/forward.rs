//! Point-scatterer forward model: scenes to echoes, and the matching sparse code.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{make_grids, ComplexSignal, RadarGeometry, SignalLayout, SparseCode};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "CenterRecord", into = "CenterRecord")]
pub struct ScatteringCenter {
    pub amplitude: Complex64,
    pub x: f64,
    pub y: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CenterRecord {
    re: f64,
    im: f64,
    x: f64,
    y: f64,
}

impl From<CenterRecord> for ScatteringCenter {
    fn from(r: CenterRecord) -> Self {
        ScatteringCenter {
            amplitude: Complex64::new(r.re, r.im),
            x: r.x,
            y: r.y,
        }
    }
}

impl From<ScatteringCenter> for CenterRecord {
    fn from(c: ScatteringCenter) -> Self {
        CenterRecord {
            re: c.amplitude.re,
            im: c.amplitude.im,
            x: c.x,
            y: c.y,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub geometry: RadarGeometry,
    pub noise_snr_db: Option<f64>,
    pub centers: Vec<ScatteringCenter>,
    /// Seed for the additive noise; ignored when `noise_snr_db` is absent.
    #[serde(default)]
    pub noise_seed: u64,
}

impl Scene {
    pub fn new(geometry: RadarGeometry, centers: Vec<ScatteringCenter>) -> Self {
        Scene {
            geometry,
            noise_snr_db: None,
            centers,
            noise_seed: 0,
        }
    }

    pub fn with_noise(mut self, snr_db: f64, seed: u64) -> Self {
        self.noise_snr_db = Some(snr_db);
        self.noise_seed = seed;
        self
    }

    /// The same scene without additive noise.
    pub fn noiseless(&self) -> Scene {
        Scene {
            noise_snr_db: None,
            ..self.clone()
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let scene: Scene = serde_json::from_str(text)?;
        scene.geometry.validate()?;
        Ok(scene)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    fn check_extent(&self) -> Result<()> {
        let g = &self.geometry;
        let tol_x = 1e-9 * (g.grid_x_max - g.grid_x_min);
        let tol_y = 1e-9 * (g.grid_y_max - g.grid_y_min);
        for (i, c) in self.centers.iter().enumerate() {
            if !c.amplitude.re.is_finite() || !c.amplitude.im.is_finite() {
                return Err(Error::invalid(format!("scatterer {i} has a non-finite amplitude")));
            }
            if !(c.x >= g.grid_x_min - tol_x && c.x <= g.grid_x_max + tol_x)
                || !(c.y >= g.grid_y_min - tol_y && c.y <= g.grid_y_max + tol_y)
            {
                return Err(Error::invalid(format!(
                    "scatterer {i} at ({}, {}) lies outside the grid extent",
                    c.x, c.y
                )));
            }
        }
        Ok(())
    }
}

/// Sum of scatterer responses over the geometry's frequency/aspect samples,
/// plus seeded circular white noise when the scene asks for it.
pub fn synthesize_echo(scene: &Scene) -> Result<ComplexSignal> {
    let g = &scene.geometry;
    g.validate()?;
    scene.check_extent()?;
    let grids = make_grids(g);
    let k = 4.0 * std::f64::consts::PI / g.wave_speed;
    let wavenumbers: Vec<f64> = grids.freq.iter().map(|f| k * f).collect();
    let dirs: Vec<(f64, f64)> = grids.aspect.iter().map(|a| (a.cos(), a.sin())).collect();

    let mut values = vec![Complex64::new(0.0, 0.0); g.n_samples()];
    for center in &scene.centers {
        let mut idx = 0;
        for &kf in &wavenumbers {
            for &(c, s) in &dirs {
                values[idx] += center.amplitude * Complex64::from_polar(1.0, -kf * (center.x * c + center.y * s));
                idx += 1;
            }
        }
    }
    if let Some(snr_db) = scene.noise_snr_db {
        add_noise(&mut values, snr_db, scene.noise_seed)?;
    }
    ComplexSignal::new(values, SignalLayout::EchoFreqDomain, (g.n_freq, g.n_aspect))
}

/// Circular complex white Gaussian noise at `snr_db` below the mean signal power.
pub fn add_noise(values: &mut [Complex64], snr_db: f64, seed: u64) -> Result<()> {
    if !snr_db.is_finite() {
        return Err(Error::invalid("SNR must be finite"));
    }
    if values.is_empty() {
        return Ok(());
    }
    let power = values.iter().map(|v| v.norm_sqr()).sum::<f64>() / values.len() as f64;
    let sigma = (power / 10f64.powf(snr_db / 10.0) / 2.0).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in values.iter_mut() {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        *v += Complex64::new(re, im) * sigma;
    }
    Ok(())
}

fn nearest_node(v: f64, lo: f64, hi: f64, n: usize) -> (usize, f64) {
    if n == 1 {
        return (0, 0.5 * (lo + hi));
    }
    let step = (hi - lo) / (n - 1) as f64;
    let idx = ((v - lo) / step).round().clamp(0.0, (n - 1) as f64) as usize;
    (idx, lo + step * idx as f64)
}

/// Grid node `(m, n)` of an on-grid scatterer, or a precondition error naming
/// the nearest node.
pub fn locate_node(geom: &RadarGeometry, center: &ScatteringCenter) -> Result<(usize, usize)> {
    let (m, xm) = nearest_node(center.x, geom.grid_x_min, geom.grid_x_max, geom.n_x);
    let (n, yn) = nearest_node(center.y, geom.grid_y_min, geom.grid_y_max, geom.n_y);
    let tol_x = 1e-9 * (geom.grid_x_max - geom.grid_x_min);
    let tol_y = 1e-9 * (geom.grid_y_max - geom.grid_y_min);
    if (center.x - xm).abs() > tol_x || (center.y - yn).abs() > tol_y {
        return Err(Error::Precondition(format!(
            "scatterer at ({}, {}) is off the grid; nearest node is ({m}, {n}) at ({xm}, {yn})",
            center.x, center.y
        )));
    }
    Ok((m, n))
}

pub fn scene_to_sparse_code(scene: &Scene) -> Result<SparseCode> {
    let g = &scene.geometry;
    scene.check_extent()?;
    let mut z = SparseCode::zeros((g.n_x, g.n_y));
    for center in &scene.centers {
        let (m, n) = locate_node(g, center)?;
        let idx = z.index(m, n);
        z.values_mut()[idx] += center.amplitude;
    }
    Ok(z)
}

/// Parameters for drawing random on-grid scenes.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub n_centers: usize,
    pub snr_db: Option<f64>,
    pub amplitude_range: (f64, f64),
    /// Minimum Chebyshev distance between scatterers, in grid cells.
    pub min_separation: usize,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            n_centers: 5,
            snr_db: None,
            amplitude_range: (1.0, 3.0),
            min_separation: 1,
        }
    }
}

/// Draw scatterers on distinct grid nodes with uniform magnitude and phase.
pub fn random_scene(geom: &RadarGeometry, spec: &SceneSpec, seed: u64) -> Result<Scene> {
    let cells = geom.n_cells();
    if spec.n_centers > cells {
        return Err(Error::invalid(format!(
            "cannot place {} scatterers on {cells} nodes",
            spec.n_centers
        )));
    }
    let (lo, hi) = spec.amplitude_range;
    if !(lo >= 0.0 && lo <= hi && hi.is_finite()) {
        return Err(Error::invalid("amplitude range must satisfy 0 <= lo <= hi"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grids = make_grids(geom);
    let mut picked: Vec<(usize, usize)> = Vec::with_capacity(spec.n_centers);
    let order = sample(&mut rng, cells, cells);
    for idx in order.iter() {
        if picked.len() == spec.n_centers {
            break;
        }
        let node = (idx / geom.n_y, idx % geom.n_y);
        let clear = picked.iter().all(|&(m, n)| {
            m.abs_diff(node.0).max(n.abs_diff(node.1)) >= spec.min_separation
        });
        if clear {
            picked.push(node);
        }
    }
    if picked.len() < spec.n_centers {
        return Err(Error::invalid(format!(
            "could not place {} scatterers {} cells apart",
            spec.n_centers, spec.min_separation
        )));
    }
    let centers = picked
        .into_iter()
        .map(|(m, n)| {
            let mag = if hi > lo { rng.random_range(lo..hi) } else { lo };
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            ScatteringCenter {
                amplitude: Complex64::from_polar(mag, phase),
                x: grids.x[m],
                y: grids.y[n],
            }
        })
        .collect();
    let scene = Scene::new(geom.clone(), centers);
    Ok(match spec.snr_db {
        Some(snr) => scene.with_noise(snr, seed.wrapping_add(0x9E37_79B9_7F4A_7C15)),
        None => scene,
    })
}

/// Row-major flattening of a 2-D array.
pub fn vectorize(img: &DMatrix<Complex64>, layout: SignalLayout) -> ComplexSignal {
    let (rows, cols) = img.shape();
    let mut values = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            values.push(img[(r, c)]);
        }
    }
    ComplexSignal::new(values, layout, (rows, cols)).expect("length matches dims")
}

pub fn devectorize(s: &ComplexSignal) -> DMatrix<Complex64> {
    let (rows, cols) = s.dims();
    DMatrix::from_row_slice(rows, cols, s.values())
}

/// Reshape a signal to the given dims, rejecting size mismatches.
pub fn reshape(s: &ComplexSignal, dims: (usize, usize)) -> Result<DMatrix<Complex64>> {
    if dims.0 * dims.1 != s.len() {
        return Err(Error::invalid(format!(
            "cannot view {} values as {}x{}",
            s.len(),
            dims.0,
            dims.1
        )));
    }
    Ok(DMatrix::from_row_slice(dims.0, dims.1, s.values()))
}
