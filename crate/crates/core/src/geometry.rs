//! Radar geometry, complex signal containers and the complex soft-threshold.
//!
//! All angles are carried as [`Angle`], which keeps the degree value that
//! appears in geometry files and converts to radians at the point of use.
//! This keeps JSON round trips exact.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Angle(f64);

impl Angle {
    pub fn from_degrees(deg: f64) -> Self {
        Angle(deg)
    }

    pub fn from_radians(rad: f64) -> Self {
        Angle(rad.to_degrees())
    }

    pub fn degrees(self) -> f64 {
        self.0
    }

    pub fn radians(self) -> f64 {
        self.0.to_radians()
    }
}

/// Frequency/aspect sampling, spatial grid and imaging angles.
///
/// The geometry fully determines the dictionary, see
/// [`crate::dictionary::build_freq_dictionary`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadarGeometry {
    pub center_frequency: f64,
    pub bandwidth: f64,
    pub n_freq: usize,
    pub aspect_span: Angle,
    pub n_aspect: usize,
    pub wave_speed: f64,
    pub grid_x_min: f64,
    pub grid_x_max: f64,
    pub grid_y_min: f64,
    pub grid_y_max: f64,
    pub n_x: usize,
    pub n_y: usize,
    #[serde(default)]
    pub depression_angle: Option<Angle>,
    #[serde(default)]
    pub altitude: Option<f64>,
    #[serde(default)]
    pub aperture_length: Option<f64>,
    #[serde(default)]
    pub slant_range: Option<f64>,
}

impl RadarGeometry {
    /// A geometry whose grid spacing matches the resolution cell of the
    /// sampling, so neighbouring dictionary columns are close to orthogonal.
    ///
    /// The range spacing is `c / (2 n_freq Δf)` and the aspect span is chosen
    /// so the cross-range cell at the carrier has the same size. The grid is
    /// centred on the origin.
    pub fn matched(
        center_frequency: f64,
        bandwidth: f64,
        n_freq: usize,
        n_aspect: usize,
        n_x: usize,
        n_y: usize,
    ) -> Result<Self> {
        if n_freq < 2 || n_aspect < 2 {
            return Err(Error::invalid("matched geometry needs at least two frequency and aspect samples"));
        }
        let c = SPEED_OF_LIGHT;
        let df = bandwidth / (n_freq - 1) as f64;
        let spacing = c / (2.0 * n_freq as f64 * df);
        let dphi = c / (2.0 * center_frequency * spacing * n_aspect as f64);
        let half_x = spacing * (n_x.max(1) - 1) as f64 / 2.0;
        let half_y = spacing * (n_y.max(1) - 1) as f64 / 2.0;
        let geom = RadarGeometry {
            center_frequency,
            bandwidth,
            n_freq,
            aspect_span: Angle::from_radians(dphi * (n_aspect - 1) as f64),
            n_aspect,
            wave_speed: c,
            // single-sample axes still need a non-empty interval
            grid_x_min: if n_x > 1 { -half_x } else { -spacing / 2.0 },
            grid_x_max: if n_x > 1 { half_x } else { spacing / 2.0 },
            grid_y_min: if n_y > 1 { -half_y } else { -spacing / 2.0 },
            grid_y_max: if n_y > 1 { half_y } else { spacing / 2.0 },
            n_x,
            n_y,
            depression_angle: None,
            altitude: None,
            aperture_length: None,
            slant_range: None,
        };
        geom.validate()?;
        Ok(geom)
    }

    /// The X-band square benchmark: 10 GHz carrier, 1 GHz bandwidth and
    /// `n` samples on every axis.
    pub fn benchmark(n: usize) -> Result<Self> {
        Self::matched(10e9, 1e9, n, n, n, n)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_freq == 0 || self.n_aspect == 0 || self.n_x == 0 || self.n_y == 0 {
            return Err(Error::invalid("sample counts must be at least 1"));
        }
        let finite = [
            self.center_frequency,
            self.bandwidth,
            self.aspect_span.degrees(),
            self.wave_speed,
            self.grid_x_min,
            self.grid_x_max,
            self.grid_y_min,
            self.grid_y_max,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("geometry contains non-finite values"));
        }
        if !(self.bandwidth > 0.0) {
            return Err(Error::invalid("bandwidth must be positive"));
        }
        if !(self.center_frequency > self.bandwidth / 2.0) {
            return Err(Error::invalid("center_frequency must exceed bandwidth/2"));
        }
        if !(self.wave_speed > 0.0) {
            return Err(Error::invalid("wave_speed must be positive"));
        }
        if self.aspect_span.degrees() < 0.0 {
            return Err(Error::invalid("aspect_span must be nonnegative"));
        }
        if !(self.grid_x_min < self.grid_x_max) || !(self.grid_y_min < self.grid_y_max) {
            return Err(Error::invalid("grid minimum must be below grid maximum"));
        }
        if let Some(beta) = self.depression_angle {
            let b = beta.radians();
            if !(b > 0.0 && b < std::f64::consts::FRAC_PI_2) {
                return Err(Error::invalid("depression_angle must lie in (0, 90) degrees"));
            }
        }
        Ok(())
    }

    /// Number of dictionary rows, `N_f · N_φ`.
    pub fn n_samples(&self) -> usize {
        self.n_freq * self.n_aspect
    }

    /// Number of dictionary columns, `N_x · N_y`.
    pub fn n_cells(&self) -> usize {
        self.n_x * self.n_y
    }

    /// 64-bit digest of every field, used to key dictionary caches.
    pub fn hash64(&self) -> u64 {
        let mut h = Sha256::new();
        h.update(b"sarsc-geometry-v1");
        for v in [
            self.center_frequency,
            self.bandwidth,
            self.aspect_span.degrees(),
            self.wave_speed,
            self.grid_x_min,
            self.grid_x_max,
            self.grid_y_min,
            self.grid_y_max,
        ] {
            h.update(v.to_le_bytes());
        }
        for n in [self.n_freq, self.n_aspect, self.n_x, self.n_y] {
            h.update((n as u64).to_le_bytes());
        }
        for opt in [
            self.depression_angle.map(Angle::degrees),
            self.altitude,
            self.aperture_length,
            self.slant_range,
        ] {
            match opt {
                Some(v) => {
                    h.update([1u8]);
                    h.update(v.to_le_bytes());
                }
                None => h.update([0u8]),
            }
        }
        let digest = h.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let geom: RadarGeometry = serde_json::from_str(text)?;
        geom.validate()?;
        Ok(geom)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Sample positions along the four axes of a geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct Grids {
    pub freq: Vec<f64>,
    pub aspect: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

/// `n` uniform samples over `[lo, hi]` with both endpoints included; a
/// single sample sits at the midpoint.
pub(crate) fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.5 * (lo + hi)],
        _ => {
            let step = (hi - lo) / (n - 1) as f64;
            (0..n)
                .map(|i| if i == n - 1 { hi } else { lo + step * i as f64 })
                .collect()
        }
    }
}

pub fn make_grids(geom: &RadarGeometry) -> Grids {
    let half_b = geom.bandwidth / 2.0;
    let half_span = geom.aspect_span.radians() / 2.0;
    Grids {
        freq: linspace(
            geom.center_frequency - half_b,
            geom.center_frequency + half_b,
            geom.n_freq,
        ),
        aspect: linspace(-half_span, half_span, geom.n_aspect),
        x: linspace(geom.grid_x_min, geom.grid_x_max, geom.n_x),
        y: linspace(geom.grid_y_min, geom.grid_y_max, geom.n_y),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SignalLayout {
    /// `N_f × N_φ` samples, frequency-major.
    EchoFreqDomain,
    /// A complex image, row-major.
    ImageDomain,
}

impl SignalLayout {
    pub fn tag(self) -> u8 {
        match self {
            SignalLayout::EchoFreqDomain => 0,
            SignalLayout::ImageDomain => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(SignalLayout::EchoFreqDomain),
            1 => Some(SignalLayout::ImageDomain),
            _ => None,
        }
    }
}

/// A vectorized complex echo or image.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSignal {
    values: Vec<Complex64>,
    layout: SignalLayout,
    dims: (usize, usize),
}

impl ComplexSignal {
    pub fn new(values: Vec<Complex64>, layout: SignalLayout, dims: (usize, usize)) -> Result<Self> {
        if values.len() != dims.0 * dims.1 {
            return Err(Error::invalid(format!(
                "signal has {} values but dims {}x{}",
                values.len(),
                dims.0,
                dims.1
            )));
        }
        Ok(ComplexSignal {
            values,
            layout,
            dims,
        })
    }

    pub fn zeros(layout: SignalLayout, dims: (usize, usize)) -> Self {
        ComplexSignal {
            values: vec![Complex64::new(0.0, 0.0); dims.0 * dims.1],
            layout,
            dims,
        }
    }

    /// Zero echo with the geometry's `(N_f, N_φ)` shape.
    pub fn zero_echo(geom: &RadarGeometry) -> Self {
        Self::zeros(SignalLayout::EchoFreqDomain, (geom.n_freq, geom.n_aspect))
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    pub fn layout(&self) -> SignalLayout {
        self.layout
    }

    pub fn dims(&self) -> (usize, usize) {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    /// Check that an echo matches the geometry's sampling.
    pub fn check_echo(&self, geom: &RadarGeometry) -> Result<()> {
        if self.layout != SignalLayout::EchoFreqDomain {
            return Err(Error::invalid("expected a frequency-domain echo"));
        }
        if self.dims != (geom.n_freq, geom.n_aspect) {
            return Err(Error::invalid(format!(
                "echo dims {:?} do not match geometry ({}, {})",
                self.dims, geom.n_freq, geom.n_aspect
            )));
        }
        Ok(())
    }
}

/// Complex amplitudes over the `N_x × N_y` spatial grid, `x`-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCode {
    values: Vec<Complex64>,
    grid_dims: (usize, usize),
}

impl SparseCode {
    pub fn new(values: Vec<Complex64>, grid_dims: (usize, usize)) -> Result<Self> {
        if values.len() != grid_dims.0 * grid_dims.1 {
            return Err(Error::invalid(format!(
                "sparse code has {} values but grid {}x{}",
                values.len(),
                grid_dims.0,
                grid_dims.1
            )));
        }
        Ok(SparseCode { values, grid_dims })
    }

    pub fn zeros(grid_dims: (usize, usize)) -> Self {
        SparseCode {
            values: vec![Complex64::new(0.0, 0.0); grid_dims.0 * grid_dims.1],
            grid_dims,
        }
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn grid_dims(&self) -> (usize, usize) {
        self.grid_dims
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Sum of moduli.
    pub fn l1_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn count_above(&self, threshold: f64) -> usize {
        self.values.iter().filter(|v| v.norm() > threshold).count()
    }

    /// Flattened index of grid node `(m, n)`, zero-based.
    pub fn index(&self, m: usize, n: usize) -> usize {
        m * self.grid_dims.1 + n
    }

    /// The code laid out as an `N_x × N_y` image.
    pub fn to_signal(&self) -> ComplexSignal {
        ComplexSignal {
            values: self.values.clone(),
            layout: SignalLayout::ImageDomain,
            dims: self.grid_dims,
        }
    }
}

fn check_threshold(rho: f64) -> Result<()> {
    if !(rho >= 0.0) || !rho.is_finite() {
        return Err(Error::invalid(format!("threshold must be finite and >= 0, got {rho}")));
    }
    Ok(())
}

/// Shrinkage without argument checks; callers validate `rho` once.
#[inline]
pub(crate) fn shrink(x: Complex64, rho: f64) -> Complex64 {
    let mag = x.norm();
    if mag > rho {
        // mag > 0 here since rho >= 0
        x * ((mag - rho) / mag)
    } else {
        Complex64::new(0.0, 0.0)
    }
}

/// Complex soft-threshold `sign(x) · max(|x| − ρ, 0)` with `sign(0) = 0`.
pub fn soft_threshold(x: Complex64, rho: f64) -> Result<Complex64> {
    check_threshold(rho)?;
    if !x.re.is_finite() || !x.im.is_finite() {
        return Err(Error::invalid("soft_threshold input must be finite"));
    }
    Ok(shrink(x, rho))
}

pub fn soft_threshold_vec(z: &SparseCode, rho: f64) -> Result<SparseCode> {
    check_threshold(rho)?;
    if z.values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::invalid("soft_threshold input must be finite"));
    }
    Ok(SparseCode {
        values: z.values.iter().map(|&v| shrink(v, rho)).collect(),
        grid_dims: z.grid_dims,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn soft_threshold_examples() {
        assert_eq!(soft_threshold(c(0.0, 0.0), 0.5).unwrap(), c(0.0, 0.0));
        assert_eq!(soft_threshold(c(1.0, 0.0), 0.5).unwrap(), c(0.5, 0.0));
        let out = soft_threshold(c(3.0, 4.0), 1.0).unwrap();
        assert!((out - c(2.4, 3.2)).norm() < 1e-15);
        assert!((out.norm() - 4.0).abs() < 1e-15);
    }

    #[test]
    fn soft_threshold_rejects_bad_inputs() {
        assert!(soft_threshold(c(1.0, 0.0), -0.1).is_err());
        assert!(soft_threshold(c(f64::NAN, 0.0), 0.1).is_err());
        assert!(soft_threshold(c(0.0, f64::INFINITY), 0.1).is_err());
        assert!(soft_threshold(c(1.0, 0.0), f64::NAN).is_err());
    }

    #[test]
    fn soft_threshold_vec_examples() {
        let zero = SparseCode::zeros((2, 2));
        assert_eq!(soft_threshold_vec(&zero, 1.0).unwrap(), zero);

        let small = SparseCode::new(vec![c(0.5, 0.5), c(-1.0, 0.0), c(0.0, 0.3)], (3, 1)).unwrap();
        assert!(soft_threshold_vec(&small, 1.0).unwrap().values().iter().all(|v| v.norm() == 0.0));

        let z = SparseCode::new(vec![c(3.0, 4.0), c(0.5, 0.0)], (2, 1)).unwrap();
        let out = soft_threshold_vec(&z, 1.0).unwrap();
        assert!((out.values()[0] - c(2.4, 3.2)).norm() < 1e-15);
        assert_eq!(out.values()[1], c(0.0, 0.0));
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn grids_examples() {
        let mut g = RadarGeometry::benchmark(4).unwrap();
        g.n_freq = 1;
        let grids = make_grids(&g);
        assert_eq!(grids.freq, vec![g.center_frequency]);

        assert_eq!(linspace(-1.0, 1.0, 3), vec![-1.0, 0.0, 1.0]);

        g.n_aspect = 2;
        g.aspect_span = Angle::from_radians(0.1);
        let grids = make_grids(&g);
        assert!((grids.aspect[0] + 0.05).abs() < 1e-15);
        assert!((grids.aspect[1] - 0.05).abs() < 1e-15);
    }

    #[test]
    fn geometry_validation() {
        let good = RadarGeometry::benchmark(8).unwrap();
        let mut g = good.clone();
        g.n_x = 0;
        assert!(g.validate().is_err());
        let mut g = good.clone();
        g.bandwidth = 0.0;
        assert!(g.validate().is_err());
        let mut g = good.clone();
        g.center_frequency = g.bandwidth / 2.0;
        assert!(g.validate().is_err());
        let mut g = good.clone();
        g.grid_y_max = g.grid_y_min;
        assert!(g.validate().is_err());
        let mut g = good.clone();
        g.depression_angle = Some(Angle::from_degrees(90.0));
        assert!(g.validate().is_err());
        g.depression_angle = Some(Angle::from_degrees(45.0));
        assert!(g.validate().is_ok());
    }

    #[test]
    fn geometry_json_uses_degrees() {
        let mut g = RadarGeometry::benchmark(8).unwrap();
        g.depression_angle = Some(Angle::from_degrees(17.0));
        let text = g.to_json().unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["depression_angle"], serde_json::json!(17.0));
        let back = RadarGeometry::from_json(&text).unwrap();
        assert_eq!(back, g);
        assert_eq!(back.to_json().unwrap(), text);
        assert!((back.depression_angle.unwrap().radians() - 17f64.to_radians()).abs() < 1e-15);
    }

    #[test]
    fn hash_distinguishes_geometries() {
        let a = RadarGeometry::benchmark(8).unwrap();
        let mut b = a.clone();
        assert_eq!(a.hash64(), b.hash64());
        b.n_y = 9;
        assert_ne!(a.hash64(), b.hash64());
    }

    proptest! {
        #[test]
        fn contraction_and_monotonicity(re in -1e3..1e3f64, im in -1e3..1e3f64, r1 in 0.0..50.0f64, r2 in 0.0..50.0f64) {
            let x = c(re, im);
            let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
            let a = soft_threshold(x, lo).unwrap();
            let b = soft_threshold(x, hi).unwrap();
            prop_assert!(a.norm() <= x.norm());
            prop_assert!(a.norm() >= b.norm());
            prop_assert_eq!(soft_threshold(x, 0.0).unwrap(), x);
            if x.norm() > hi {
                prop_assert!((b.arg() - x.arg()).abs() < 1e-12);
            }
        }

        #[test]
        fn grids_strictly_increasing(n in 2usize..40) {
            let g = RadarGeometry::benchmark(n).unwrap();
            let grids = make_grids(&g);
            for axis in [&grids.freq, &grids.aspect, &grids.x, &grids.y] {
                prop_assert_eq!(axis.len(), n);
                prop_assert!(axis.windows(2).all(|w| w[0] < w[1]));
            }
        }
    }
}
