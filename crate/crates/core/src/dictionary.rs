//! Scattering-center dictionaries and the structured priors derived from them.

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::geometry::{make_grids, ComplexSignal, RadarGeometry, SignalLayout};

/// Default cap on dictionary storage, in bytes.
pub const DEFAULT_MEMORY_BUDGET: usize = 2 << 30;

/// Default number of diagonal chips.
pub const DEFAULT_CHIPS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Frequency,
    Image,
}

impl Domain {
    pub fn tag(self) -> u8 {
        match self {
            Domain::Frequency => 0,
            Domain::Image => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Domain::Frequency),
            1 => Some(Domain::Image),
            _ => None,
        }
    }
}

/// Dense `(N_f·N_φ) × (N_x·N_y)` complex dictionary.
///
/// Column `m·N_y + n` is the response of a unit scatterer at grid node
/// `(x_m, y_n)`; row `p·N_φ + q` is frequency `p`, aspect `q`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    matrix: DMatrix<Complex64>,
    domain: Domain,
    geometry_hash: u64,
    sample_dims: (usize, usize),
    grid_dims: (usize, usize),
}

impl Dictionary {
    /// Wrap a raw matrix. Signals and codes it produces are shaped as
    /// columns until [`Dictionary::with_dims`] says otherwise.
    pub fn from_parts(matrix: DMatrix<Complex64>, domain: Domain, geometry_hash: u64) -> Self {
        let sample_dims = (matrix.nrows(), 1);
        let grid_dims = (matrix.ncols(), 1);
        Dictionary {
            matrix,
            domain,
            geometry_hash,
            sample_dims,
            grid_dims,
        }
    }

    /// Attach the `(N_f, N_φ)` sample shape and `(N_x, N_y)` grid shape.
    pub fn with_dims(mut self, sample_dims: (usize, usize), grid_dims: (usize, usize)) -> Result<Self> {
        if sample_dims.0 * sample_dims.1 != self.rows() || grid_dims.0 * grid_dims.1 != self.cols() {
            return Err(Error::invalid(format!(
                "dims {sample_dims:?} x {grid_dims:?} do not fit a {}x{} dictionary",
                self.rows(),
                self.cols()
            )));
        }
        self.sample_dims = sample_dims;
        self.grid_dims = grid_dims;
        Ok(self)
    }

    /// Shape of the spatial grid the columns index.
    pub fn grid_dims(&self) -> (usize, usize) {
        self.grid_dims
    }

    /// Shape of the echo or image a column represents.
    pub fn sample_dims(&self) -> (usize, usize) {
        self.sample_dims
    }

    pub fn signal_layout(&self) -> SignalLayout {
        match self.domain {
            Domain::Frequency => SignalLayout::EchoFreqDomain,
            Domain::Image => SignalLayout::ImageDomain,
        }
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<Complex64> {
        self.matrix
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn geometry_hash(&self) -> u64 {
        self.geometry_hash
    }

    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn column(&self, j: usize) -> &[Complex64] {
        let r = self.matrix.nrows();
        &self.matrix.as_slice()[j * r..(j + 1) * r]
    }

    pub fn check_geometry(&self, geom: &RadarGeometry) -> Result<()> {
        if self.rows() != geom.n_samples()
            || self.cols() != geom.n_cells()
            || self.geometry_hash != geom.hash64()
        {
            return Err(Error::invalid(format!(
                "dictionary ({}x{}, hash {:016x}) was not built for this geometry ({}x{})",
                self.rows(),
                self.cols(),
                self.geometry_hash,
                geom.n_samples(),
                geom.n_cells()
            )));
        }
        Ok(())
    }
}

pub fn build_freq_dictionary(geom: &RadarGeometry) -> Result<Dictionary> {
    build_freq_dictionary_with_budget(geom, DEFAULT_MEMORY_BUDGET)
}

pub fn build_freq_dictionary_with_budget(geom: &RadarGeometry, budget_bytes: usize) -> Result<Dictionary> {
    geom.validate()?;
    let rows = geom.n_samples();
    let cols = geom.n_cells();
    let bytes = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(std::mem::size_of::<Complex64>()));
    match bytes {
        Some(b) if b <= budget_bytes => {}
        _ => {
            return Err(Error::Resource(format!(
                "{rows}x{cols} dictionary exceeds the {budget_bytes}-byte budget"
            )))
        }
    }

    let grids = make_grids(geom);
    let k = 4.0 * std::f64::consts::PI / geom.wave_speed;
    // (4π f / c) per frequency and (cos φ, sin φ) per aspect
    let wavenumbers: Vec<f64> = grids.freq.iter().map(|f| k * f).collect();
    let dirs: Vec<(f64, f64)> = grids.aspect.iter().map(|a| (a.cos(), a.sin())).collect();

    let mut data = vec![Complex64::new(0.0, 0.0); rows * cols];
    data.par_chunks_mut(rows).enumerate().for_each(|(col, out)| {
        let x = grids.x[col / geom.n_y];
        let y = grids.y[col % geom.n_y];
        let mut idx = 0;
        for &kf in &wavenumbers {
            for &(c, s) in &dirs {
                out[idx] = Complex64::from_polar(1.0, -kf * (x * c + y * s));
                idx += 1;
            }
        }
    });
    Ok(Dictionary {
        matrix: DMatrix::from_vec(rows, cols, data),
        domain: Domain::Frequency,
        geometry_hash: geom.hash64(),
        sample_dims: (geom.n_freq, geom.n_aspect),
        grid_dims: (geom.n_x, geom.n_y),
    })
}

/// Per-sample phase correction applied before the image-domain transform.
///
/// `Identity` is the default; `Phase` carries one phase (radians) per echo
/// sample in frequency-major order.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Compensation {
    #[default]
    Identity,
    Phase(Vec<f64>),
}

impl Compensation {
    fn check(&self, len: usize) -> Result<()> {
        match self {
            Compensation::Identity => Ok(()),
            Compensation::Phase(p) if p.len() == len => Ok(()),
            Compensation::Phase(p) => Err(Error::invalid(format!(
                "compensation has {} phases for {len} samples",
                p.len()
            ))),
        }
    }

    fn apply(&self, buf: &mut [Complex64], inverse: bool) {
        if let Compensation::Phase(p) = self {
            let sign = if inverse { -1.0 } else { 1.0 };
            for (v, &ph) in buf.iter_mut().zip(p) {
                *v *= Complex64::from_polar(1.0, sign * ph);
            }
        }
    }
}

/// Orthonormal 2-D DFT over an `rows × cols` row-major buffer.
pub(crate) struct Transform2d {
    rows: usize,
    cols: usize,
    row_inv: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
    row_fwd: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    scale: f64,
}

impl Transform2d {
    pub(crate) fn new(rows: usize, cols: usize) -> Self {
        let mut planner = FftPlanner::new();
        Transform2d {
            rows,
            cols,
            row_inv: planner.plan_fft_inverse(cols),
            col_inv: planner.plan_fft_inverse(rows),
            row_fwd: planner.plan_fft_forward(cols),
            col_fwd: planner.plan_fft_forward(rows),
            scale: 1.0 / ((rows * cols) as f64).sqrt(),
        }
    }

    fn run(&self, buf: &mut [Complex64], inverse: bool) {
        let (row_fft, col_fft) = if inverse {
            (&self.row_inv, &self.col_inv)
        } else {
            (&self.row_fwd, &self.col_fwd)
        };
        for row in buf.chunks_exact_mut(self.cols) {
            row_fft.process(row);
        }
        let mut column = vec![Complex64::new(0.0, 0.0); self.rows];
        for c in 0..self.cols {
            for r in 0..self.rows {
                column[r] = buf[r * self.cols + c];
            }
            col_fft.process(&mut column);
            for r in 0..self.rows {
                buf[r * self.cols + c] = column[r];
            }
        }
        for v in buf.iter_mut() {
            *v *= self.scale;
        }
    }

    pub(crate) fn inverse(&self, buf: &mut [Complex64]) {
        self.run(buf, true)
    }

    pub(crate) fn forward(&self, buf: &mut [Complex64]) {
        self.run(buf, false)
    }
}

pub fn to_image_domain(d: &Dictionary, geom: &RadarGeometry) -> Result<Dictionary> {
    to_image_domain_with(d, geom, &Compensation::Identity)
}

/// Compensate, inverse-transform and re-vectorize every column.
pub fn to_image_domain_with(d: &Dictionary, geom: &RadarGeometry, comp: &Compensation) -> Result<Dictionary> {
    if d.domain != Domain::Frequency {
        return Err(Error::invalid("to_image_domain expects a frequency-domain dictionary"));
    }
    d.check_geometry(geom)?;
    let rows = d.rows();
    comp.check(rows)?;
    let xf = Transform2d::new(geom.n_freq, geom.n_aspect);
    let mut data = d.matrix.as_slice().to_vec();
    data.par_chunks_mut(rows).for_each(|col| {
        comp.apply(col, false);
        xf.inverse(col);
    });
    Ok(Dictionary {
        matrix: DMatrix::from_vec(rows, d.cols(), data),
        domain: Domain::Image,
        geometry_hash: d.geometry_hash,
        sample_dims: d.sample_dims,
        grid_dims: d.grid_dims,
    })
}

pub fn signal_to_image_domain(s: &ComplexSignal, geom: &RadarGeometry) -> Result<ComplexSignal> {
    signal_to_image_domain_with(s, geom, &Compensation::Identity)
}

/// The image of an echo has shape `(N_f, N_φ)`, one pixel per echo sample.
pub fn signal_to_image_domain_with(
    s: &ComplexSignal,
    geom: &RadarGeometry,
    comp: &Compensation,
) -> Result<ComplexSignal> {
    s.check_echo(geom)?;
    comp.check(s.len())?;
    let mut buf = s.values().to_vec();
    comp.apply(&mut buf, false);
    Transform2d::new(geom.n_freq, geom.n_aspect).inverse(&mut buf);
    ComplexSignal::new(buf, SignalLayout::ImageDomain, (geom.n_freq, geom.n_aspect))
}

/// Inverse of [`signal_to_image_domain_with`].
pub fn image_to_echo_domain_with(
    s: &ComplexSignal,
    geom: &RadarGeometry,
    comp: &Compensation,
) -> Result<ComplexSignal> {
    if s.layout() != SignalLayout::ImageDomain || s.dims() != (geom.n_freq, geom.n_aspect) {
        return Err(Error::invalid("expected an image with the geometry's sample dims"));
    }
    comp.check(s.len())?;
    let mut buf = s.values().to_vec();
    Transform2d::new(geom.n_freq, geom.n_aspect).forward(&mut buf);
    comp.apply(&mut buf, true);
    ComplexSignal::new(buf, SignalLayout::EchoFreqDomain, (geom.n_freq, geom.n_aspect))
}

/// Row-major binary matrix. Row 0 is the top row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMatrix {
    rows: usize,
    cols: usize,
    data: Vec<u8>,
}

impl BinaryMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> u8 {
        self.data[r * self.cols + c]
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }
}

/// Binary depression-angle embedding.
///
/// The origin is the bottom-left corner. A cell is set when the midpoint of
/// its lower edge lies on or below the ray leaving the origin at `beta`, so
/// the bottom row is always filled and a 45° ray on a square matrix fills the
/// lower triangle including the diagonal.
pub fn angle_embedding(beta: f64, dims: (usize, usize)) -> Result<BinaryMatrix> {
    if !(beta > 0.0 && beta < std::f64::consts::FRAC_PI_2) {
        return Err(Error::invalid(format!("depression angle {beta} rad outside (0, π/2)")));
    }
    let (h, w) = dims;
    let slope = beta.tan();
    let mut data = vec![0u8; h * w];
    for r in 0..h {
        // height of the lower edge above the origin, in cells
        let base = (h - 1 - r) as f64;
        for c in 0..w {
            let x = c as f64 + 0.5;
            if base <= slope * x {
                data[r * w + c] = 1;
            }
        }
    }
    Ok(BinaryMatrix { rows: h, cols: w, data })
}

pub fn gaussian_random_embedding(dims: (usize, usize), seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // fill row by row so the draw order does not depend on storage order
    let mut m = DMatrix::zeros(dims.0, dims.1);
    for r in 0..dims.0 {
        for c in 0..dims.1 {
            m[(r, c)] = StandardNormal.sample(&mut rng);
        }
    }
    m
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriorMatrices {
    pub angle_prior: Option<BinaryMatrix>,
    pub shear_chips: Vec<DMatrix<Complex64>>,
    pub chip_dims: (usize, usize),
}

impl PriorMatrices {
    pub fn n_chips(&self) -> usize {
        self.shear_chips.len()
    }

    /// Attach the depression-angle embedding sized to the chips.
    pub fn with_angle(mut self, beta: f64) -> Result<Self> {
        self.angle_prior = Some(angle_embedding(beta, self.chip_dims)?);
        Ok(self)
    }

    /// Elementwise mean of the chips.
    pub fn chip_mean(&self) -> DMatrix<Complex64> {
        let (h, w) = self.chip_dims;
        let mut mean = DMatrix::zeros(h, w);
        for chip in &self.shear_chips {
            mean += chip;
        }
        mean / Complex64::new(self.shear_chips.len() as f64, 0.0)
    }
}

/// Cut `chips` diagonal blocks out of the dictionary, zero-padding short
/// blocks at the end.
pub fn diagonal_shear(d: &Dictionary, chips: usize) -> Result<PriorMatrices> {
    diagonal_shear_matrix(d.matrix(), chips)
}

pub fn diagonal_shear_matrix(m: &DMatrix<Complex64>, chips: usize) -> Result<PriorMatrices> {
    let (h, w) = m.shape();
    if chips == 0 || chips > h.min(w) {
        return Err(Error::invalid(format!(
            "chip count {chips} must lie in [1, {}]",
            h.min(w)
        )));
    }
    let h_sub = h.div_ceil(chips);
    let w_sub = w.div_ceil(chips);
    let shear_chips = (0..chips)
        .map(|i| {
            let r0 = (i * h_sub).min(h);
            let r1 = ((i + 1) * h_sub).min(h);
            let c0 = (i * w_sub).min(w);
            let c1 = ((i + 1) * w_sub).min(w);
            let mut chip = DMatrix::zeros(h_sub, w_sub);
            chip.view_mut((0, 0), (r1 - r0, c1 - c0))
                .copy_from(&m.view((r0, c0), (r1 - r0, c1 - c0)));
            chip
        })
        .collect();
    Ok(PriorMatrices {
        angle_prior: None,
        shear_chips,
        chip_dims: (h_sub, w_sub),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum FusionMode {
    #[default]
    Identity,
    /// Add `scale ×` the chip mean, tiled over the whole dictionary.
    ScaledResidual(f64),
}

pub fn fuse_priors(d: &Dictionary, p: &PriorMatrices, mode: FusionMode) -> Result<Dictionary> {
    let n = p.n_chips();
    if n == 0 {
        return Err(Error::invalid("prior has no chips"));
    }
    let expected = (d.rows().div_ceil(n), d.cols().div_ceil(n));
    if p.chip_dims != expected || p.shear_chips.iter().any(|c| c.shape() != expected) {
        return Err(Error::invalid(format!(
            "chip dims {:?} do not match dictionary {}x{} with {n} chips",
            p.chip_dims,
            d.rows(),
            d.cols()
        )));
    }
    if let Some(a) = &p.angle_prior {
        if (a.rows(), a.cols()) != expected {
            return Err(Error::invalid("angle prior dims differ from chip dims"));
        }
    }
    match mode {
        FusionMode::Identity => Ok(d.clone()),
        FusionMode::ScaledResidual(scale) => {
            if !scale.is_finite() {
                return Err(Error::invalid("residual scale must be finite"));
            }
            let mean = p.chip_mean();
            let (h, w) = expected;
            let mut out = d.clone();
            for c in 0..d.cols() {
                for r in 0..d.rows() {
                    out.matrix[(r, c)] += mean[(r % h, c % w)] * scale;
                }
            }
            Ok(out)
        }
    }
}
