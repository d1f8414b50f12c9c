//! Poynting-vector walk-off of the daughter waves and its effect on the ring
//! seen at the crystal exit face.

use nalgebra::Vector3;

use crate::dispersion::CrystalSpecies;
use crate::error::{Error, Result};
use crate::indicatrix::{eigenmodes, impermeability, Branch, Frame, WaveDirection};
use crate::phasematch::{ellipse_eccentricity, trace_ring, PumpConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WalkoffSample {
    pub phi_s: f64,
    /// Unit wavevector, crystal frame.
    pub k_hat: Vector3<f64>,
    /// Unit Poynting vector, crystal frame.
    pub n_hat: Vector3<f64>,
    /// Angle between the two, radians.
    pub rho: f64,
}

/// Unit energy-flow direction for a plane wave along `k` on `branch`.
///
/// The displacement field is the eigenvector of the projected impermeability;
/// `E = eta D` and the Poynting vector is along `E x (k x E)`.
pub fn poynting_direction(
    species: &CrystalSpecies,
    lambda_nm: f64,
    k: WaveDirection,
    branch: Branch,
) -> Result<Vector3<f64>> {
    if k.frame != Frame::CrystalPrincipal {
        return Err(Error::Argument(
            "poynting_direction expects a crystal-frame direction".into(),
        ));
    }
    poynting_along(species, lambda_nm, &k.unit_vector(), branch)
}

pub fn poynting_along(
    species: &CrystalSpecies,
    lambda_nm: f64,
    s: &Vector3<f64>,
    branch: Branch,
) -> Result<Vector3<f64>> {
    let p = species.principal_indices(lambda_nm)?;
    let m = eigenmodes(&p, s)?;
    let scale = p.min().powi(-2);
    if m.splitting < 1e-10 * scale {
        return Err(Error::Degenerate(
            "propagation along an optic axis: the polarization eigenmodes are degenerate".into(),
        ));
    }
    let e = impermeability(&p) * m.displacement(branch);
    let n = s * e.norm_squared() - e * e.dot(s);
    Ok(n.normalize())
}

/// Angle between two unit vectors, accurate for small separations.
pub fn angle_between(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}

/// Walk-off of the signal at `n_samples` ring azimuths.
pub fn walkoff_ring(
    pump: &PumpConfig,
    lambda_s_nm: f64,
    n_samples: usize,
) -> Result<Vec<WalkoffSample>> {
    let trace = trace_ring(pump, lambda_s_nm, n_samples)?;
    trace
        .samples
        .iter()
        .map(|s| {
            let k = s.signal_direction;
            let n = poynting_along(&pump.species, lambda_s_nm, &k, pump.daughter_branch())?;
            Ok(WalkoffSample {
                phi_s: s.phi_s,
                k_hat: k,
                n_hat: n,
                rho: angle_between(&k, &n),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExitFaceRings {
    pub crystal_length_mm: f64,
    pub poynting_ecc: f64,
    pub momentum_ecc: f64,
    /// `|poynting_ecc - momentum_ecc| / momentum_ecc`.
    pub relative_difference: f64,
    /// Largest distance between the two families' exit points, mm.
    pub max_separation_mm: f64,
}

/// Maps wavevectors and Poynting vectors from a generation point on the entrance
/// face to the exit face and compares the resulting ring shapes.
pub fn exit_face_comparison(
    pump: &PumpConfig,
    lambda_s_nm: f64,
    crystal_length_mm: f64,
) -> Result<ExitFaceRings> {
    if !(crystal_length_mm >= 0.0 && crystal_length_mm.is_finite()) {
        return Err(Error::Argument(format!(
            "crystal length must be non-negative, got {crystal_length_mm}"
        )));
    }
    let frame = pump.frame();
    let samples = walkoff_ring(pump, lambda_s_nm, 4)?;
    let land = |v: &Vector3<f64>| -> (f64, f64) {
        let l = frame.local_components(v);
        (crystal_length_mm * l.x / l.z, crystal_length_mm * l.y / l.z)
    };
    let k: Vec<_> = samples.iter().map(|s| land(&s.k_hat)).collect();
    let n: Vec<_> = samples.iter().map(|s| land(&s.n_hat)).collect();
    // samples are at 0, 90, 180, 270 degrees
    let axes = |p: &[(f64, f64)]| (0.5 * (p[0].0 - p[2].0), 0.5 * (p[1].1 - p[3].1));
    let max_separation_mm = k
        .iter()
        .zip(&n)
        .map(|(a, b)| (a.0 - b.0).hypot(a.1 - b.1))
        .fold(0.0, f64::max);
    let ecc = |p: &[(f64, f64)]| -> Result<f64> {
        let (a, b) = axes(p);
        ellipse_eccentricity(a, b)
    };
    // displacements scale with length, so the shapes are those of a unit crystal
    let (momentum_ecc, poynting_ecc) = if crystal_length_mm == 0.0 {
        let unit = exit_face_comparison(pump, lambda_s_nm, 1.0)?;
        (unit.momentum_ecc, unit.poynting_ecc)
    } else {
        (ecc(&k)?, ecc(&n)?)
    };
    Ok(ExitFaceRings {
        crystal_length_mm,
        poynting_ecc,
        momentum_ecc,
        relative_difference: (poynting_ecc - momentum_ecc).abs() / momentum_ecc,
        max_separation_mm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dispersion::CrystalRegistry;
    use crate::indicatrix::spherical;
    use crate::phasematch::{ring_eccentricity, RingPlane};
    use std::f64::consts::FRAC_PI_2;

    fn species(id: &str) -> CrystalSpecies {
        CrystalRegistry::builtin().get(id).unwrap().clone()
    }

    #[test]
    fn principal_axes_have_no_walkoff() {
        let s = species("BiBO");
        for (t, p) in [(FRAC_PI_2, 0.0), (FRAC_PI_2, FRAC_PI_2)] {
            for b in [Branch::Fast, Branch::Slow] {
                let k = WaveDirection::crystal(t, p);
                let n = poynting_direction(&s, 810.0, k, b).unwrap();
                assert!(angle_between(&n, &k.unit_vector()) < 1e-14);
            }
        }
    }

    #[test]
    fn optic_axis_is_rejected() {
        let s = species("BBO");
        let e = poynting_direction(&s, 810.0, WaveDirection::crystal(0.0, 0.0), Branch::Slow);
        assert!(matches!(e, Err(Error::Degenerate(_))));
    }

    #[test]
    fn ordinary_wave_has_no_walkoff() {
        let s = species("BBO");
        for k in 1..10 {
            let dir = WaveDirection::crystal(0.15 * k as f64, 0.7 * k as f64);
            let n = poynting_direction(&s, 810.0, dir, Branch::Slow).unwrap();
            assert!(angle_between(&n, &dir.unit_vector()) < 1e-14);
        }
    }

    #[test]
    fn extraordinary_walkoff_closed_form() {
        let s = species("BBO");
        let p = s.principal_indices(405.0).unwrap();
        let (no, ne) = (p.nx, p.nz);
        for k in 1..12 {
            let theta = 0.13 * k as f64;
            let dir = WaveDirection::crystal(theta, 0.3);
            let n = poynting_direction(&s, 405.0, dir, Branch::Fast).unwrap();
            let rho = angle_between(&n, &spherical(theta, 0.3));
            let ntheta =
                (theta.cos().powi(2) / (no * no) + theta.sin().powi(2) / (ne * ne)).powf(-0.5);
            let expected =
                (0.5 * ntheta * ntheta * (ne.powi(-2) - no.powi(-2)).abs() * (2.0 * theta).sin())
                    .atan();
            assert!((rho - expected.abs()).abs() < 1e-12, "{rho} vs {expected}");
        }
    }

    #[test]
    fn poynting_is_unit_and_cos_rho_consistent() {
        let pump = PumpConfig::type_one(species("BiBO"), 405.0, 151.56f64.to_radians(), FRAC_PI_2)
            .unwrap();
        for w in walkoff_ring(&pump, 810.0, 24).unwrap() {
            assert!((w.n_hat.norm() - 1.0).abs() < 1e-14);
            assert!((w.n_hat.dot(&w.k_hat) - w.rho.cos()).abs() < 1e-12);
            assert!(w.rho >= 0.0);
        }
    }

    #[test]
    fn bibo_cut_walkoff_values() {
        let pump = PumpConfig::type_one(species("BiBO"), 405.0, 151.56f64.to_radians(), FRAC_PI_2)
            .unwrap();
        let w = walkoff_ring(&pump, 810.0, 4).unwrap();
        let d: Vec<f64> = w.iter().map(|s| s.rho.to_degrees()).collect();
        assert!((d[0] - 3.1881).abs() < 1e-3);
        assert!((d[1] - 3.3610).abs() < 1e-3);
        assert!((d[2] - 3.5098).abs() < 1e-3);
        assert!((d[1] - d[3]).abs() < 1e-9);
    }

    #[test]
    fn exit_face_momentum_matches_internal_ring() {
        let pump = PumpConfig::type_one(species("BiBO"), 405.0, 151.56f64.to_radians(), FRAC_PI_2)
            .unwrap();
        let r = exit_face_comparison(&pump, 810.0, 0.8).unwrap();
        let t = trace_ring(&pump, 810.0, 4).unwrap();
        let internal = ring_eccentricity(&t, RingPlane::Internal).unwrap();
        assert!((r.momentum_ecc - internal).abs() < 1e-6);
        assert!((r.poynting_ecc - 0.167988).abs() < 2e-4);
    }

    #[test]
    fn zero_length_collapses_displacements() {
        let pump = PumpConfig::type_one(species("BiBO"), 405.0, 151.56f64.to_radians(), FRAC_PI_2)
            .unwrap();
        let r0 = exit_face_comparison(&pump, 810.0, 0.0).unwrap();
        assert_eq!(r0.max_separation_mm, 0.0);
        let r1 = exit_face_comparison(&pump, 810.0, 0.8).unwrap();
        assert!(r1.max_separation_mm > 0.0);
        assert!(exit_face_comparison(&pump, 810.0, -1.0).is_err());
    }
}
