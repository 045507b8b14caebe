//! sCMOS camera model and the stochastic forward simulator.
//!
//! Each pixel converts its photon count `phi` to a readout
//! `w ~ Normal(gain * phi + offset, read_variance)`.

use ndarray::{Array2, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::error::{check_shape, Error, Result};
use crate::grid::{ImageGrid, Role};
use crate::optics::{convolve, Psf};
use crate::rng::{self, domain};

/// Read-noise standard deviation (ADU) used when no calibration is supplied.
pub const DEFAULT_READ_SD: f64 = 2.0;

/// Per-pixel gain (ADU/e-), offset (ADU) and read-noise variance (ADU^2).
#[derive(Debug, Clone, PartialEq)]
pub struct CameraMap {
    gain: Array2<f64>,
    offset: Array2<f64>,
    read_variance: Array2<f64>,
}

/// Calibration of one pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelCalibration {
    pub gain: f64,
    pub offset: f64,
    pub read_variance: f64,
}

impl CameraMap {
    pub fn new(gain: Array2<f64>, offset: Array2<f64>, read_variance: Array2<f64>) -> Result<Self> {
        check_shape(gain.dim(), offset.dim())?;
        check_shape(gain.dim(), read_variance.dim())?;
        if gain.iter().any(|g| !(*g > 0.0 && g.is_finite())) {
            return Err(Error::invalid("camera gain must be positive everywhere"));
        }
        if read_variance.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::invalid(
                "read-noise variance must be positive everywhere",
            ));
        }
        if offset.iter().any(|o| !o.is_finite()) {
            return Err(Error::invalid("camera offset must be finite"));
        }
        Ok(Self {
            gain,
            offset,
            read_variance,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.gain.dim()
    }

    pub fn gain(&self) -> &Array2<f64> {
        &self.gain
    }

    pub fn offset(&self) -> &Array2<f64> {
        &self.offset
    }

    pub fn read_variance(&self) -> &Array2<f64> {
        &self.read_variance
    }

    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> PixelCalibration {
        PixelCalibration {
            gain: self.gain[[row, col]],
            offset: self.offset[[row, col]],
            read_variance: self.read_variance[[row, col]],
        }
    }
}

/// Spatially constant camera.
pub fn uniform_camera(
    shape: (usize, usize),
    gain: f64,
    offset: f64,
    read_sd: f64,
) -> Result<CameraMap> {
    if !(gain > 0.0) {
        return Err(Error::invalid(format!("gain must be positive, got {gain}")));
    }
    if !(read_sd > 0.0) {
        return Err(Error::invalid(format!(
            "read-noise sd must be positive, got {read_sd}"
        )));
    }
    if shape.0 == 0 || shape.1 == 0 {
        return Err(Error::invalid("camera shape must be non-empty"));
    }
    CameraMap::new(
        Array2::from_elem(shape, gain),
        Array2::from_elem(shape, offset),
        Array2::from_elem(shape, read_sd * read_sd),
    )
}

/// Every stage of one simulated acquisition.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationRecord {
    pub ground_truth: ImageGrid,
    pub expected: ImageGrid,
    pub photons: ImageGrid,
    pub raw: ImageGrid,
    pub seed: u64,
}

/// Exact Poisson draw; a zero rate always yields zero.
pub fn sample_poisson<R: Rng + ?Sized>(rng: &mut R, rate: f64) -> u64 {
    if rate <= 0.0 {
        return 0;
    }
    let d = Poisson::new(rate).expect("positive finite Poisson rate");
    d.sample(rng) as u64
}

/// Blur, shot noise and camera readout. Each image row draws from its own
/// stream split from `seed`, so the result depends on the seed alone.
pub fn simulate_raw(
    object: &ImageGrid,
    psf: &Psf,
    camera: &CameraMap,
    seed: u64,
) -> Result<SimulationRecord> {
    check_shape(object.shape(), camera.shape())?;
    if object.role() != Role::Object {
        return Err(Error::invalid("simulate_raw expects an object image"));
    }
    let expected = convolve(object, psf)?;
    let shape = object.shape();
    let mut photons = Array2::<f64>::zeros(shape);
    let mut raw = Array2::<f64>::zeros(shape);
    for row in 0..shape.0 {
        let mut rng = rng::stream(seed, domain::SIMULATION_ROW + row as u64);
        for col in 0..shape.1 {
            let phi = sample_poisson(&mut rng, expected.values()[[row, col]]) as f64;
            let cal = camera.pixel(row, col);
            let readout = Normal::new(cal.gain * phi + cal.offset, cal.read_variance.sqrt())
                .expect("positive read-noise sd");
            photons[[row, col]] = phi;
            raw[[row, col]] = readout.sample(&mut rng);
        }
    }
    let pitch = object.pixel_pitch();
    Ok(SimulationRecord {
        ground_truth: object.clone(),
        expected,
        photons: ImageGrid::new(photons, pitch, Role::Photons)?,
        raw: ImageGrid::new(raw, pitch, Role::Adu)?,
        seed,
    })
}

/// Offset- and gain-corrected readout, `max((w - o) / G, 0)`.
pub fn adu_to_photon_estimate(raw: &ImageGrid, camera: &CameraMap) -> Result<ImageGrid> {
    check_shape(camera.shape(), raw.shape())?;
    let mut out = Array2::<f64>::zeros(raw.shape());
    Zip::from(&mut out)
        .and(raw.values())
        .and(camera.gain())
        .and(camera.offset())
        .for_each(|e, &w, &g, &o| *e = ((w - o) / g).max(0.0));
    ImageGrid::new(out, raw.pixel_pitch(), Role::Expected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn uniform_maps() {
        let cam = uniform_camera((3, 4), 2.0, 100.0, 2.0).unwrap();
        assert!(cam.gain().iter().all(|&g| g == 2.0));
        assert!(cam.offset().iter().all(|&o| o == 100.0));
        assert!(cam.read_variance().iter().all(|&v| v == 4.0));
        let one = uniform_camera((1, 1), 1.0, 0.0, 1.0).unwrap();
        assert_eq!(one.shape(), (1, 1));
        assert!(uniform_camera((2, 2), 0.0, 0.0, 1.0).is_err());
        assert!(uniform_camera((2, 2), 1.0, 0.0, -1.0).is_err());
    }

    #[test]
    fn photon_estimate_arithmetic() {
        let cam = uniform_camera((1, 3), 2.0, 100.0, 2.0).unwrap();
        let raw = ImageGrid::new(array![[100.0, 250.0, 90.0]], 65.0, Role::Adu).unwrap();
        let est = adu_to_photon_estimate(&raw, &cam).unwrap();
        assert_eq!(est.values(), &array![[0.0, 75.0, 0.0]]);
        let wrong = uniform_camera((2, 3), 2.0, 100.0, 2.0).unwrap();
        assert!(adu_to_photon_estimate(&raw, &wrong).is_err());
    }

    #[test]
    fn identity_electronics_track_photons() {
        let psf = Psf::delta(65.0).unwrap();
        let obj = ImageGrid::filled((8, 8), 20.0, 65.0, Role::Object).unwrap();
        let cam = uniform_camera((8, 8), 1.0, 0.0, 1e-3).unwrap();
        let sim = simulate_raw(&obj, &psf, &cam, 3).unwrap();
        for (w, p) in sim.raw.values().iter().zip(sim.photons.values().iter()) {
            assert!((w - p).abs() < 0.01);
        }
    }

    #[test]
    fn simulation_is_seed_deterministic() {
        let psf = Psf::delta(65.0).unwrap();
        let obj = ImageGrid::filled((6, 5), 4.0, 65.0, Role::Object).unwrap();
        let cam = uniform_camera((6, 5), 2.0, 100.0, 2.0).unwrap();
        let a = simulate_raw(&obj, &psf, &cam, 11).unwrap();
        let b = simulate_raw(&obj, &psf, &cam, 11).unwrap();
        let c = simulate_raw(&obj, &psf, &cam, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.raw, c.raw);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let psf = Psf::delta(65.0).unwrap();
        let obj = ImageGrid::filled((4, 4), 1.0, 65.0, Role::Object).unwrap();
        let cam = uniform_camera((4, 5), 1.0, 0.0, 1.0).unwrap();
        assert!(matches!(
            simulate_raw(&obj, &psf, &cam, 0),
            Err(Error::ShapeMismatch { .. })
        ));
    }
}
