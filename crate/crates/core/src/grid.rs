use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What a raster holds. The role decides which value invariants apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    /// Object intensity map (photons per pixel before blurring).
    Object,
    /// Expected photon counts, PSF applied.
    Expected,
    /// Integer photon counts.
    Photons,
    /// Camera readout in ADU. May be negative.
    Adu,
}

/// A 2D real-valued raster with its pixel pitch in nanometres.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    values: Array2<f64>,
    pixel_pitch: f64,
    role: Role,
}

impl ImageGrid {
    pub fn new(values: Array2<f64>, pixel_pitch: f64, role: Role) -> Result<Self> {
        if !(pixel_pitch > 0.0 && pixel_pitch.is_finite()) {
            return Err(Error::invalid(format!(
                "pixel pitch must be positive, got {pixel_pitch}"
            )));
        }
        if values.is_empty() {
            return Err(Error::invalid("image grid must not be empty"));
        }
        validate(&values.view(), role)?;
        Ok(Self {
            values,
            pixel_pitch,
            role,
        })
    }

    pub fn zeros(shape: (usize, usize), pixel_pitch: f64, role: Role) -> Result<Self> {
        Self::new(Array2::zeros(shape), pixel_pitch, role)
    }

    pub fn filled(shape: (usize, usize), value: f64, pixel_pitch: f64, role: Role) -> Result<Self> {
        Self::new(Array2::from_elem(shape, value), pixel_pitch, role)
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn pixel_pitch(&self) -> f64 {
        self.pixel_pitch
    }

    pub fn role(&self) -> Role {
        self.role
    }

    /// (rows, cols)
    pub fn shape(&self) -> (usize, usize) {
        self.values.dim()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Re-tag the raster, checking the new role's invariants.
    pub fn with_role(self, role: Role) -> Result<Self> {
        Self::new(self.values, self.pixel_pitch, role)
    }

    /// Multiply every value by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(&self.values * factor, self.pixel_pitch, self.role)
    }

    pub fn sum(&self) -> f64 {
        self.values.sum()
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.values.sum() / self.values.len() as f64
    }
}

fn validate(values: &ArrayView2<f64>, role: Role) -> Result<()> {
    for &v in values.iter() {
        if !v.is_finite() {
            return Err(Error::invalid("image contains a non-finite value"));
        }
        match role {
            Role::Adu => {}
            Role::Object | Role::Expected => {
                if v < 0.0 {
                    return Err(Error::invalid(format!(
                        "{role:?} image contains a negative value ({v})"
                    )));
                }
            }
            Role::Photons => {
                if v < 0.0 || v.fract() != 0.0 {
                    return Err(Error::invalid(format!(
                        "photon image must hold non-negative integers, found {v}"
                    )));
                }
            }
        }
    }
    Ok(())
}
