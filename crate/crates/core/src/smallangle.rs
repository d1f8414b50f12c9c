//! Second-order small-angle model of the degenerate ring around the collinear
//! phase-matching direction.
//!
//! With the pump at `theta_p0 + d` and the daughters expanded to second order
//! in their polar angles, write `N(d)` for the collinear daughter index,
//! `T = dn/dtheta_s + d * d2n/dtheta_p dtheta_s` for its slope along the signal
//! azimuth and `n_tt` for the curvature. With `sigma = theta_s + theta_i`,
//! `delta = theta_s - theta_i` and `S = (sigma^2 + delta^2) / 2`, the
//! transverse and longitudinal conditions become
//!
//! ```text
//! delta = -T S / N
//! 2 (N - N_p) = S (T^2 / N + (N - n_tt) / 2)
//! ```
//!
//! which are solved in closed form.

use std::f64::consts::{FRAC_PI_2, PI};

use crate::dispersion::CrystalSpecies;
use crate::error::{Error, Result};
use crate::indicatrix::{
    eigenmodes, index_derivatives, Branch, IndexDerivatives, PumpFrame, WaveDirection,
};
use crate::indicatrix::{FIRST_STEP, SECOND_STEP};
use crate::numeric::{brent_root, scan_brackets, scan_then_golden};
use crate::phasematch::{ellipse_eccentricity, refract_external, Kinematics, PumpConfig};

/// Largest pump detuning accepted by the expansion, degrees.
pub const MAX_DETUNING_DEG: f64 = 5.0;

/// Default half-width of the window searched for a collinear root.
pub const COLLINEAR_WINDOW_DEG: f64 = 25.0;

fn type_one(
    species: &CrystalSpecies,
    lambda_p_nm: f64,
    theta_p: f64,
    phi_p: f64,
) -> Result<PumpConfig> {
    PumpConfig::type_one(species.clone(), lambda_p_nm, theta_p, phi_p)
}

/// Relative collinear mismatch `(k_s + k_i - k_p) / k_p` for a degenerate pair.
pub fn collinear_excess(
    species: &CrystalSpecies,
    phi_p: f64,
    lambda_p_nm: f64,
    theta_p: f64,
) -> Result<f64> {
    let pump = type_one(species, lambda_p_nm, theta_p, phi_p)?;
    Kinematics::new(&pump, 2.0 * lambda_p_nm)?.collinear_excess()
}

/// Collinear degenerate pump angle nearest the centre of `window` (radians).
pub fn collinear_pump_angle(
    species: &CrystalSpecies,
    phi_p: f64,
    lambda_p_nm: f64,
    window: (f64, f64),
) -> Result<f64> {
    let (lo, hi) = (window.0.max(1e-4), window.1.min(PI - 1e-4));
    if !(hi > lo) {
        return Err(Error::Argument("empty collinear search window".into()));
    }
    species.principal_indices(lambda_p_nm)?;
    species.principal_indices(2.0 * lambda_p_nm)?;
    let f = |t: f64| collinear_excess(species, phi_p, lambda_p_nm, t).unwrap_or(f64::NAN);
    let steps = ((hi - lo) / 0.1f64.to_radians()).ceil() as usize;
    let centre = 0.5 * (window.0 + window.1);
    let (a, b) = scan_brackets(f, lo, hi, steps.max(2))
        .into_iter()
        .min_by(|x, y| {
            let dx = (0.5 * (x.0 + x.1) - centre).abs();
            let dy = (0.5 * (y.0 + y.1) - centre).abs();
            dx.total_cmp(&dy)
        })
        .ok_or_else(|| Error::NoBracket {
            what: format!(
                "no collinear phase matching for {} at phi_p = {:.3} deg",
                species.id,
                phi_p.to_degrees()
            ),
            lo: lo.to_degrees(),
            hi: hi.to_degrees(),
        })?;
    brent_root(f, a, b, 1e-15, 200)
}

/// Collinear angle searched within `COLLINEAR_WINDOW_DEG` of `near`.
pub fn collinear_pump_angle_near(
    species: &CrystalSpecies,
    phi_p: f64,
    lambda_p_nm: f64,
    near: f64,
) -> Result<f64> {
    let w = COLLINEAR_WINDOW_DEG.to_radians();
    collinear_pump_angle(species, phi_p, lambda_p_nm, (near - w, near + w))
}

/// Expansion coefficients about a collinear degenerate configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpansionPoint {
    pub species: CrystalSpecies,
    pub phi_p: f64,
    pub theta_p0: f64,
    pub delta_theta_p: f64,
    /// Degenerate daughter wavelength, nm; the pump is at half of it.
    pub lambda_nm: f64,
    /// Collinear daughter index at `theta_p0`.
    pub n_s: f64,
    /// Pump index at `theta_p0`.
    pub n_p: f64,
    pub dn_p_dtheta_p: f64,
    pub d2n_p_dtheta_p2: f64,
    /// Daughter derivatives along signal azimuths 0, 90 and 180 degrees.
    pub derivatives: [IndexDerivatives; 3],
}

const AZIMUTHS: [f64; 3] = [0.0, FRAC_PI_2, PI];

impl ExpansionPoint {
    /// Expansion about `theta_p0` with pump detuning `delta_theta_p` (radians).
    pub fn new(
        species: &CrystalSpecies,
        phi_p: f64,
        lambda_nm: f64,
        theta_p0: f64,
        delta_theta_p: f64,
    ) -> Result<Self> {
        if delta_theta_p.abs() > MAX_DETUNING_DEG.to_radians() {
            return Err(Error::Argument(format!(
                "pump detuning {:.3} deg exceeds the {MAX_DETUNING_DEG} deg expansion range",
                delta_theta_p.to_degrees()
            )));
        }
        let lambda_p = 0.5 * lambda_nm;
        let daughter = Branch::Slow;
        let mut derivatives = Vec::with_capacity(3);
        for phs in AZIMUTHS {
            derivatives.push(index_derivatives(
                species,
                lambda_nm,
                theta_p0,
                phi_p,
                WaveDirection::pump_local(0.0, phs),
                daughter,
            )?);
        }
        let pp = species.principal_indices(lambda_p)?;
        let g = |dp: f64| -> Result<f64> {
            Ok(eigenmodes(&pp, &PumpFrame::new(theta_p0 + dp, phi_p).z)?.n_fast)
        };
        let n_p = g(0.0)?;
        let d1 = |h: f64| -> Result<f64> { Ok((g(h)? - g(-h)?) / (2.0 * h)) };
        let d2 = |h: f64| -> Result<f64> { Ok((g(h)? - 2.0 * n_p + g(-h)?) / (h * h)) };
        let (c, f) = (d1(FIRST_STEP)?, d1(0.5 * FIRST_STEP)?);
        let dn_p = (4.0 * f - c) / 3.0;
        let (c, f) = (d2(SECOND_STEP)?, d2(0.5 * SECOND_STEP)?);
        let d2n_p = (4.0 * f - c) / 3.0;
        Ok(Self {
            species: species.clone(),
            phi_p,
            theta_p0,
            delta_theta_p,
            lambda_nm,
            n_s: derivatives[0].n,
            n_p,
            dn_p_dtheta_p: dn_p,
            d2n_p_dtheta_p2: d2n_p,
            derivatives: [derivatives[0], derivatives[1], derivatives[2]],
        })
    }

    /// Expansion for an absolute pump angle `theta_p`, with the collinear angle
    /// found near it.
    pub fn at_pump_angle(
        species: &CrystalSpecies,
        phi_p: f64,
        lambda_nm: f64,
        theta_p: f64,
    ) -> Result<Self> {
        let theta_p0 = collinear_pump_angle_near(species, phi_p, 0.5 * lambda_nm, theta_p)?;
        Self::new(species, phi_p, lambda_nm, theta_p0, theta_p - theta_p0)
    }

    pub fn theta_p(&self) -> f64 {
        self.theta_p0 + self.delta_theta_p
    }
}

/// Closed-form internal emission angles for the azimuth indexed by `k` in `AZIMUTHS`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpandedAngles {
    pub theta_s: f64,
    pub theta_i: f64,
    /// Signal index at `theta_s` from the same expansion.
    pub n_s: f64,
}

fn expand_one(p: &ExpansionPoint, k: usize) -> Result<ExpandedAngles> {
    let d = &p.derivatives[k];
    let dt = p.delta_theta_p;
    let n = d.n + d.dn_dtheta_p * dt + 0.5 * d.d2n_dtheta_p2 * dt * dt;
    let np = p.n_p + p.dn_p_dtheta_p * dt + 0.5 * p.d2n_p_dtheta_p2 * dt * dt;
    let t = d.dn_dtheta_s + d.d2n_dtheta_p_dtheta_s * dt;
    let excess = 2.0 * (n - np);
    let s = excess / (t * t / n + 0.5 * (n - d.d2n_dtheta_s2));
    let diff = -t * s / n;
    let sum2 = 2.0 * s - diff * diff;
    if excess.abs() < 1e-15 {
        return Ok(ExpandedAngles {
            theta_s: 0.0,
            theta_i: 0.0,
            n_s: n,
        });
    }
    if !(s > 0.0 && sum2 >= 0.0) {
        return Err(Error::NoPhaseMatch(format!(
            "no ring at this detuning ({:.4} deg from collinear)",
            dt.to_degrees()
        )));
    }
    let sigma = sum2.sqrt();
    let theta_s = 0.5 * (sigma + diff);
    let theta_i = 0.5 * (sigma - diff);
    Ok(ExpandedAngles {
        theta_s,
        theta_i,
        n_s: n + t * theta_s + 0.5 * d.d2n_dtheta_s2 * theta_s * theta_s,
    })
}

/// Ring shape from the expansion: the 90 degree polar angle and the offsets of
/// the 0 and 180 degree angles from it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpansionEmission {
    pub theta_s_90: f64,
    pub delta_theta_s_0: f64,
    pub delta_theta_s_180: f64,
    pub angles: [ExpandedAngles; 3],
}

pub fn emission_from_expansion(point: &ExpansionPoint) -> Result<ExpansionEmission> {
    let angles = [
        expand_one(point, 0)?,
        expand_one(point, 1)?,
        expand_one(point, 2)?,
    ];
    let t90 = angles[1].theta_s;
    Ok(ExpansionEmission {
        theta_s_90: t90,
        delta_theta_s_0: angles[0].theta_s - t90,
        delta_theta_s_180: angles[2].theta_s - t90,
        angles,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EccEstimate {
    /// From internal angles.
    pub internal: f64,
    /// From the refracted angles, measured like a traced ring.
    pub external: f64,
}

/// Eccentricity of the expanded ring.
///
/// The semi-axis along local x is the mean of the 0 and 180 degree angles,
/// `theta_s(90) + (d0 + d180) / 2`; along y it is `theta_s(90)`.
pub fn eccentricity_estimate(point: &ExpansionPoint) -> Result<EccEstimate> {
    let e = emission_from_expansion(point)?;
    if e.theta_s_90 <= 0.0 {
        return Err(Error::Degenerate(
            "ring has zero size at this detuning".into(),
        ));
    }
    let major_x = e.theta_s_90 + 0.5 * (e.delta_theta_s_0 + e.delta_theta_s_180);
    let internal = ellipse_eccentricity(major_x, e.theta_s_90)?;
    let ext = |a: &ExpandedAngles| refract_external(a.n_s, a.theta_s).map(f64::tan);
    let sx = 0.5 * (ext(&e.angles[0])? + ext(&e.angles[2])?);
    // the 270 degree angle mirrors 90 for pumps in a principal plane
    let sy = ext(&e.angles[1])?;
    let external = ellipse_eccentricity(sx, sy)?;
    Ok(EccEstimate { internal, external })
}

/// Curvature and slope terms that control the ring's ellipticity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EccTerms {
    /// `d2n/dtheta_s2` along azimuth 0.
    pub term1: f64,
    /// `d2n/dtheta_s2` along azimuth 90.
    pub term2: f64,
    /// `(2 / n) (dn/dtheta_s)^2` along azimuth 0.
    pub term3: f64,
    /// `term1 - term2 - term3`; zero where the ring is circular to leading order.
    pub estimate: f64,
}

pub fn eccentricity_terms(point: &ExpansionPoint) -> EccTerms {
    let d0 = &point.derivatives[0];
    let d90 = &point.derivatives[1];
    let term1 = d0.d2n_dtheta_s2;
    let term2 = d90.d2n_dtheta_s2;
    let term3 = 2.0 / point.n_s * d0.dn_dtheta_s * d0.dn_dtheta_s;
    EccTerms {
        term1,
        term2,
        term3,
        estimate: term1 - term2 - term3,
    }
}

/// Terms evaluated at the collinear angle for degenerate wavelength `lambda_nm`.
pub fn terms_at(
    species: &CrystalSpecies,
    phi_p: f64,
    theta_p: f64,
    lambda_nm: f64,
) -> Result<EccTerms> {
    let p = ExpansionPoint::new(species, phi_p, lambda_nm, theta_p, 0.0)?;
    Ok(eccentricity_terms(&p))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinEccentricity {
    pub lambda_star_nm: f64,
    pub ecc_at_min: f64,
    pub bracket_nm: (f64, f64),
    pub theta_p: f64,
    /// Pump detuning held fixed across the sweep, radians.
    pub delta_theta_p: f64,
    /// True when the minimum sits at an end of the bracket.
    pub at_edge: bool,
}

/// Degenerate-wavelength sweep of the expansion eccentricity.
///
/// At each wavelength `lambda` the pump is at `lambda / 2` and the expansion is
/// taken about that wavelength's collinear angle with the detuning fixed at
/// `theta_p - theta_p0(reference_nm)`.
#[derive(Debug, Clone)]
pub struct EccentricitySweep {
    species: CrystalSpecies,
    phi_p: f64,
    theta_p: f64,
    theta_p0_ref: f64,
    pub delta_theta_p: f64,
}

impl EccentricitySweep {
    pub fn new(
        species: &CrystalSpecies,
        phi_p: f64,
        theta_p: f64,
        reference_nm: f64,
    ) -> Result<Self> {
        let theta_p0_ref = collinear_pump_angle_near(species, phi_p, 0.5 * reference_nm, theta_p)?;
        Ok(Self {
            species: species.clone(),
            phi_p,
            theta_p,
            theta_p0_ref,
            delta_theta_p: theta_p - theta_p0_ref,
        })
    }

    pub fn point(&self, lambda_nm: f64) -> Result<ExpansionPoint> {
        let t0 = collinear_pump_angle_near(
            &self.species,
            self.phi_p,
            0.5 * lambda_nm,
            self.theta_p0_ref,
        )?;
        ExpansionPoint::new(&self.species, self.phi_p, lambda_nm, t0, self.delta_theta_p)
    }

    pub fn eccentricity(&self, lambda_nm: f64) -> Result<EccEstimate> {
        eccentricity_estimate(&self.point(lambda_nm)?)
    }

    pub fn terms(&self, lambda_nm: f64) -> Result<EccTerms> {
        Ok(eccentricity_terms(&self.point(lambda_nm)?))
    }

    pub fn minimum(&self, bracket_nm: (f64, f64)) -> Result<MinEccentricity> {
        let (lo, hi) = bracket_nm;
        let f = |l: f64| self.eccentricity(l).map(|e| e.internal).unwrap_or(f64::NAN);
        let m = scan_then_golden(f, lo, hi, 2.0, 0.01)?;
        Ok(MinEccentricity {
            lambda_star_nm: m.x,
            ecc_at_min: m.value,
            bracket_nm,
            theta_p: self.theta_p,
            delta_theta_p: self.delta_theta_p,
            at_edge: m.at_edge,
        })
    }
}

/// Wavelength in `bracket_nm` minimizing the expansion eccentricity for a
/// crystal cut at `theta_p`, with the detuning referenced to `reference_nm`.
pub fn min_eccentricity_wavelength(
    species: &CrystalSpecies,
    phi_p: f64,
    theta_p: f64,
    bracket_nm: (f64, f64),
    reference_nm: f64,
) -> Result<MinEccentricity> {
    EccentricitySweep::new(species, phi_p, theta_p, reference_nm)?.minimum(bracket_nm)
}

/// Wavelength in `bracket_nm` where `term1 = term2` at the collinear angle
/// nearest `theta_p`.
pub fn term_crossing_wavelength(
    species: &CrystalSpecies,
    phi_p: f64,
    theta_p: f64,
    bracket_nm: (f64, f64),
) -> Result<f64> {
    let sweep =
        EccentricitySweep::new(species, phi_p, theta_p, 0.5 * (bracket_nm.0 + bracket_nm.1))?;
    let f = |l: f64| {
        sweep
            .terms(l)
            .map(|t| t.term1 - t.term2)
            .unwrap_or(f64::NAN)
    };
    let steps = ((bracket_nm.1 - bracket_nm.0) / 2.0).ceil() as usize;
    let (a, b) = scan_brackets(f, bracket_nm.0, bracket_nm.1, steps.max(2))
        .into_iter()
        .next()
        .ok_or_else(|| Error::NoBracket {
            what: "term1 and term2 do not cross".into(),
            lo: bracket_nm.0,
            hi: bracket_nm.1,
        })?;
    brent_root(f, a, b, 1e-6, 200)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dispersion::CrystalRegistry;
    use crate::phasematch::{mismatch, solve_emission};

    fn species(id: &str) -> CrystalSpecies {
        CrystalRegistry::builtin().get(id).unwrap().clone()
    }

    fn deg(x: f64) -> f64 {
        x.to_radians()
    }

    #[test]
    fn bibo_collinear_angle_zeroes_mismatch() {
        let s = species("BiBO");
        let t0 = collinear_pump_angle(&s, deg(90.0), 405.0, (deg(140.0), deg(170.0))).unwrap();
        assert!((t0.to_degrees() - 152.077).abs() < 2e-3);
        let p = PumpConfig::type_one(s.clone(), 405.0, t0, deg(90.0)).unwrap();
        let dk = mismatch(&p, 0.0, 0.0, 0.0, 810.0).unwrap();
        let kp = 2.0 * std::f64::consts::PI * p.pump_index().unwrap() / 405e-9;
        assert!(dk[2].abs() / kp < 1e-12);
    }

    #[test]
    fn bbo_collinear_angle_is_below_cut() {
        let s = species("BBO");
        let t0 = collinear_pump_angle(&s, 0.0, 405.0, (deg(15.0), deg(45.0))).unwrap();
        assert!(t0 < deg(29.392));
        // just below threshold the full solver finds nothing, just above it does
        let below = PumpConfig::type_one(s.clone(), 405.0, t0 - deg(0.3), 0.0).unwrap();
        assert!(solve_emission(&below, 810.0, 0.0).is_err());
        let above = PumpConfig::type_one(s, 405.0, t0 + deg(0.3), 0.0).unwrap();
        assert!(solve_emission(&above, 810.0, 0.0).is_ok());
    }

    #[test]
    fn no_collinear_root_in_window() {
        let s = species("BBO");
        let e = collinear_pump_angle(&s, 0.0, 405.0, (deg(40.0), deg(60.0))).unwrap_err();
        assert!(matches!(e, Error::NoBracket { .. }));
    }

    #[test]
    fn bbo_expansion_is_circular() {
        let s = species("BBO");
        let p = ExpansionPoint::at_pump_angle(&s, 0.0, 810.0, deg(29.392)).unwrap();
        let e = emission_from_expansion(&p).unwrap();
        assert!(e.delta_theta_s_0.abs() < 1e-7 && e.delta_theta_s_180.abs() < 1e-7);
        assert!(eccentricity_estimate(&p).unwrap().internal < 0.01);
        let t = eccentricity_terms(&p);
        assert!(t.term1.abs() < 1e-6 && t.term2.abs() < 1e-6 && t.term3.abs() < 1e-10);
    }

    #[test]
    fn expansion_closes_at_collinear() {
        let s = species("BiBO");
        let t0 = collinear_pump_angle(&s, deg(90.0), 405.0, (deg(140.0), deg(170.0))).unwrap();
        let p = ExpansionPoint::new(&s, deg(90.0), 810.0, t0, 0.0).unwrap();
        assert!(emission_from_expansion(&p).unwrap().theta_s_90.abs() < 1e-6);
    }

    #[test]
    fn wrong_side_detuning_has_no_ring() {
        let s = species("BiBO");
        let t0 = collinear_pump_angle(&s, deg(90.0), 405.0, (deg(140.0), deg(170.0))).unwrap();
        let p = ExpansionPoint::new(&s, deg(90.0), 810.0, t0, deg(0.5)).unwrap();
        assert!(matches!(
            emission_from_expansion(&p),
            Err(Error::NoPhaseMatch(_))
        ));
    }

    #[test]
    fn detuning_limit_enforced() {
        let s = species("BiBO");
        assert!(ExpansionPoint::new(&s, deg(90.0), 810.0, deg(152.0), deg(6.0)).is_err());
    }

    #[test]
    fn internal_ordering_matches_full_solver() {
        let s = species("BiBO");
        let theta_p = deg(151.563);
        let p = ExpansionPoint::at_pump_angle(&s, deg(90.0), 810.0, theta_p).unwrap();
        let e = emission_from_expansion(&p).unwrap();
        let pump = PumpConfig::type_one(s, 405.0, theta_p, deg(90.0)).unwrap();
        let f0 = solve_emission(&pump, 810.0, 0.0).unwrap().theta_s;
        let f90 = solve_emission(&pump, 810.0, deg(90.0)).unwrap().theta_s;
        assert_eq!((f0 < f90), (e.angles[0].theta_s < e.theta_s_90));
        assert!((e.theta_s_90 - f90).abs() / f90 < 0.03);
    }

    #[test]
    fn term3_is_non_negative() {
        let s = species("BiBO");
        let sweep = EccentricitySweep::new(&s, deg(90.0), deg(152.077), 810.0).unwrap();
        for l in [700.0, 750.0, 800.0, 850.0, 900.0] {
            assert!(sweep.terms(l).unwrap().term3 >= 0.0);
        }
    }

    #[test]
    fn term_crossing_inside_sweep() {
        let s = species("BiBO");
        let l = term_crossing_wavelength(&s, deg(90.0), deg(152.077), (700.0, 900.0)).unwrap();
        assert!(l > 700.0 && l < 900.0);
        assert!((l - 718.95).abs() < 0.5, "{l}");
    }

    #[test]
    fn sweep_minimum_is_deterministic() {
        let s = species("BiBO");
        let a = min_eccentricity_wavelength(&s, deg(90.0), deg(152.071), (700.0, 800.0), 810.0)
            .unwrap();
        let b = min_eccentricity_wavelength(&s, deg(90.0), deg(152.071), (700.0, 800.0), 810.0)
            .unwrap();
        assert_eq!(a, b);
        assert!(!a.at_edge);
        assert!(a.lambda_star_nm > 700.0 && a.lambda_star_nm < 800.0);
    }
}
