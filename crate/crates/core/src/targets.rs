//! Synthetic test objects.

use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ImageGrid, Role};
use crate::optics::{convolve, Psf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetKind {
    SiemensStar,
    PointGrid,
    Bars,
}

impl FromStr for TargetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "siemens-star" => Ok(Self::SiemensStar),
            "point-grid" => Ok(Self::PointGrid),
            "bars" => Ok(Self::Bars),
            other => Err(Error::invalid(format!(
                "unknown target '{other}' (expected siemens-star, point-grid or bars)"
            ))),
        }
    }
}

impl std::fmt::Display for TargetKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::SiemensStar => "siemens-star",
            Self::PointGrid => "point-grid",
            Self::Bars => "bars",
        })
    }
}

pub const DEFAULT_SPOKES: usize = 16;

/// Pixel-centre coordinates relative to the image centre.
fn centred(shape: (usize, usize), r: usize, c: usize) -> (f64, f64) {
    (
        r as f64 + 0.5 - shape.0 as f64 / 2.0,
        c as f64 + 0.5 - shape.1 as f64 / 2.0,
    )
}

/// Spoke pattern inside a disc of radius `0.42 * min side`, with intensity
/// falling linearly from 1 at the centre to 0.4 at the rim. Zero outside.
pub fn siemens_star(shape: (usize, usize), spokes: usize) -> Array2<f64> {
    let radius = 0.42 * shape.0.min(shape.1) as f64;
    Array2::from_shape_fn(shape, |(r, c)| {
        let (y, x) = centred(shape, r, c);
        let rho = x.hypot(y);
        if rho >= radius || (spokes as f64 * y.atan2(x)).sin() <= 0.0 {
            return 0.0;
        }
        0.4 + 0.6 * (1.0 - rho / radius)
    })
}

/// Single bright pixels on a regular lattice with `spacing` pixels pitch.
pub fn point_grid(shape: (usize, usize), spacing: usize) -> Array2<f64> {
    let spacing = spacing.max(1);
    let off = spacing / 2;
    Array2::from_shape_fn(shape, |(r, c)| {
        if r >= off
            && c >= off
            && (r - off).is_multiple_of(spacing)
            && (c - off).is_multiple_of(spacing)
        {
            1.0
        } else {
            0.0
        }
    })
}

/// Groups of vertical bars whose period shrinks from left to right, with a
/// margin of one eighth of the image on each side.
pub fn bars(shape: (usize, usize)) -> Array2<f64> {
    let (rows, cols) = shape;
    let mr = rows / 8;
    let mc = cols / 8;
    let width = cols.saturating_sub(2 * mc).max(1);
    let groups = [8usize, 6, 4, 3, 2];
    let group_w = (width / groups.len()).max(1);
    Array2::from_shape_fn(shape, |(r, c)| {
        if r < mr || r >= rows - mr || c < mc || c >= mc + group_w * groups.len() {
            return 0.0;
        }
        let g = (c - mc) / group_w;
        let period = groups[g.min(groups.len() - 1)];
        if ((c - mc) % group_w) % period < period / 2 {
            1.0
        } else {
            0.0
        }
    })
}

pub fn generate(kind: TargetKind, shape: (usize, usize)) -> Array2<f64> {
    match kind {
        TargetKind::SiemensStar => siemens_star(shape, DEFAULT_SPOKES),
        TargetKind::PointGrid => point_grid(shape, 16),
        TargetKind::Bars => bars(shape),
    }
}

/// Scale a pattern so its blurred image peaks at `peak_expected` photons.
pub fn scale_to_peak(pattern: Array2<f64>, psf: &Psf, peak_expected: f64) -> Result<ImageGrid> {
    if !(peak_expected > 0.0) {
        return Err(Error::invalid("peak photon count must be positive"));
    }
    let object = ImageGrid::new(pattern, psf.pixel_pitch(), Role::Object)?;
    let peak = convolve(&object, psf)?.max();
    if !(peak > 0.0) {
        return Err(Error::invalid("target is empty after blurring"));
    }
    object.scaled(peak_expected / peak)
}

/// A target scaled so its blurred image peaks at `peak_expected` photons.
pub fn build_target(
    kind: TargetKind,
    shape: (usize, usize),
    psf: &Psf,
    peak_expected: f64,
) -> Result<ImageGrid> {
    scale_to_peak(generate(kind, shape), psf, peak_expected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optics::gaussian_psf;
    use std::f64::consts::PI;

    #[test]
    fn names_round_trip() {
        for k in [
            TargetKind::SiemensStar,
            TargetKind::PointGrid,
            TargetKind::Bars,
        ] {
            assert_eq!(k.to_string().parse::<TargetKind>().unwrap(), k);
        }
        assert!("lena".parse::<TargetKind>().is_err());
    }

    #[test]
    fn star_has_spokes_and_dark_surround() {
        let s = siemens_star((128, 128), 16);
        assert_eq!(s[[0, 0]], 0.0);
        assert!(s.iter().all(|v| (0.0..=1.0).contains(v)));
        let lit = s.iter().filter(|v| **v > 0.0).count() as f64;
        let disc = PI * (0.42f64 * 128.0).powi(2);
        assert!((lit / disc - 0.5).abs() < 0.03);
    }

    #[test]
    fn scaled_target_hits_the_peak() {
        let psf = gaussian_psf(1.3, 510.0, 65.0, 9).unwrap();
        for kind in [
            TargetKind::SiemensStar,
            TargetKind::PointGrid,
            TargetKind::Bars,
        ] {
            let t = build_target(kind, (64, 64), &psf, 150.0).unwrap();
            let peak = convolve(&t, &psf).unwrap().max();
            assert!((peak - 150.0).abs() < 1e-9, "{kind}: {peak}");
        }
    }
}
