//! Noncollinear phase matching: emission angles, ring traces, exterior
//! refraction, pump-angle inference and ring eccentricity.
//!
//! Geometry lives in the pump-local frame of [`PumpFrame`]. A signal at local
//! azimuth `phi_s` leaves at polar angle `theta_s`; its idler partner sits at
//! `phi_s + pi` and polar angle `theta_i`, so both wavevectors share the plane
//! spanned by the pump and the azimuth direction and the out-of-plane
//! mismatch vanishes identically.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::dispersion::{CrystalSpecies, PrincipalIndices};
use crate::error::{Error, Result};
use crate::indicatrix::{eigenmodes, Branch, PumpFrame};
use crate::numeric::{brent_root, scan_brackets};

/// Converged solutions must satisfy `|dk| / |k_p|` below this.
pub const RESIDUAL_TOL: f64 = 1e-9;
const NEWTON_MAX_ITER: usize = 100;
const JACOBIAN_STEP: f64 = 1e-7;
/// Largest internal emission angle the fallback search considers, radians.
const MAX_CONE: f64 = 0.4;

#[derive(Debug, Clone, PartialEq)]
pub struct PumpConfig {
    pub species: CrystalSpecies,
    pub lambda_p_nm: f64,
    /// Crystal-frame polar angle, radians, in (0, pi).
    pub theta_p: f64,
    /// Crystal-frame azimuth, radians.
    pub phi_p: f64,
    pub pump_branch: Branch,
}

impl PumpConfig {
    pub fn new(
        species: CrystalSpecies,
        lambda_p_nm: f64,
        theta_p: f64,
        phi_p: f64,
        pump_branch: Branch,
    ) -> Result<Self> {
        if !(theta_p.is_finite() && theta_p > 0.0 && theta_p < PI) {
            return Err(Error::Argument(format!(
                "pump polar angle must lie in (0, 180) degrees, got {:.6}",
                theta_p.to_degrees()
            )));
        }
        if !phi_p.is_finite() {
            return Err(Error::Argument("pump azimuth is not finite".into()));
        }
        species.principal_indices(lambda_p_nm)?;
        Ok(Self {
            species,
            lambda_p_nm,
            theta_p,
            phi_p,
            pump_branch,
        })
    }

    /// Type-I configuration: pump on the fast branch, daughters on the slow one.
    pub fn type_one(
        species: CrystalSpecies,
        lambda_p_nm: f64,
        theta_p: f64,
        phi_p: f64,
    ) -> Result<Self> {
        Self::new(species, lambda_p_nm, theta_p, phi_p, Branch::Fast)
    }

    pub fn daughter_branch(&self) -> Branch {
        self.pump_branch.other()
    }

    pub fn frame(&self) -> PumpFrame {
        PumpFrame::new(self.theta_p, self.phi_p)
    }

    pub fn with_theta(&self, theta_p: f64) -> Result<Self> {
        Self::new(
            self.species.clone(),
            self.lambda_p_nm,
            theta_p,
            self.phi_p,
            self.pump_branch,
        )
    }

    pub fn pump_index(&self) -> Result<f64> {
        let p = self.species.principal_indices(self.lambda_p_nm)?;
        Ok(eigenmodes(&p, &self.frame().z)?.index(self.pump_branch))
    }
}

/// Idler wavelength from energy conservation, nm.
pub fn idler_wavelength(lambda_p_nm: f64, lambda_s_nm: f64) -> Result<f64> {
    if !(lambda_p_nm > 0.0 && lambda_s_nm > lambda_p_nm) {
        return Err(Error::Argument(format!(
            "signal wavelength {lambda_s_nm} nm must exceed pump wavelength {lambda_p_nm} nm"
        )));
    }
    Ok(1.0 / (1.0 / lambda_p_nm - 1.0 / lambda_s_nm))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseMatchSolution {
    pub phi_s: f64,
    pub theta_s: f64,
    pub theta_i: f64,
    pub phi_i: f64,
    pub n_s: f64,
    pub n_i: f64,
    pub theta_s_ext: f64,
    pub theta_i_ext: f64,
    /// `|dk| / |k_p|`.
    pub residual: f64,
    /// Crystal-frame unit wavevectors.
    pub signal_direction: Vector3<f64>,
    pub idler_direction: Vector3<f64>,
}

/// Cached per-configuration quantities for repeated mismatch evaluation.
pub(crate) struct Kinematics {
    pub frame: PumpFrame,
    ps: PrincipalIndices,
    pi: PrincipalIndices,
    daughter: Branch,
    /// Pump wavevector magnitude, rad/m.
    pub kp: f64,
    /// Vacuum wavenumbers of signal and idler, rad/m.
    k0s: f64,
    k0i: f64,
}

impl Kinematics {
    pub fn new(pump: &PumpConfig, lambda_s_nm: f64) -> Result<Self> {
        let lambda_i = idler_wavelength(pump.lambda_p_nm, lambda_s_nm)?;
        let ps = pump.species.principal_indices(lambda_s_nm)?;
        let pi = pump.species.principal_indices(lambda_i)?;
        let np = pump.pump_index()?;
        Ok(Self {
            frame: pump.frame(),
            ps,
            pi,
            daughter: pump.daughter_branch(),
            kp: TAU * np / (pump.lambda_p_nm * 1e-9),
            k0s: TAU / (lambda_s_nm * 1e-9),
            k0i: TAU / (lambda_i * 1e-9),
        })
    }

    /// Mismatch `k_p - k_s - k_i` in pump-local components, plus both indices.
    pub fn eval(&self, ts: f64, ti: f64, phs: f64) -> Result<(Vector3<f64>, f64, f64)> {
        let ns = eigenmodes(&self.ps, &self.frame.direction(ts, phs))?.index(self.daughter);
        let ni = eigenmodes(&self.pi, &self.frame.direction(ti, phs + PI))?.index(self.daughter);
        let (sp, cp) = phs.sin_cos();
        let (sts, cts) = ts.sin_cos();
        let (sti, cti) = ti.sin_cos();
        let ks = self.k0s * ns;
        let ki = self.k0i * ni;
        let transverse = -ks * sts + ki * sti;
        let dk = Vector3::new(
            transverse * cp,
            transverse * sp,
            self.kp - ks * cts - ki * cti,
        );
        Ok((dk, ns, ni))
    }

    /// In-plane transverse and longitudinal mismatch, scaled by `|k_p|`.
    fn equations(&self, ts: f64, ti: f64, phs: f64) -> Result<[f64; 2]> {
        let (dk, _, _) = self.eval(ts, ti, phs)?;
        let (sp, cp) = phs.sin_cos();
        Ok([(dk.x * cp + dk.y * sp) / self.kp, dk.z / self.kp])
    }

    /// Relative excess of collinear daughter momentum over the pump's.
    pub fn collinear_excess(&self) -> Result<f64> {
        let (dk, _, _) = self.eval(0.0, 0.0, 0.0)?;
        Ok(-dk.z / self.kp)
    }
}

/// Phase mismatch `(dk_x, dk_y, dk_z)` in rad/m, pump-local frame.
pub fn mismatch(
    pump: &PumpConfig,
    theta_s: f64,
    theta_i: f64,
    phi_s: f64,
    lambda_s_nm: f64,
) -> Result<[f64; 3]> {
    let kin = Kinematics::new(pump, lambda_s_nm)?;
    let (dk, _, _) = kin.eval(theta_s, theta_i, phi_s)?;
    Ok([dk.x, dk.y, dk.z])
}

/// Snell refraction through an exit face normal to the pump.
pub fn refract_external(n: f64, theta_internal: f64) -> Result<f64> {
    let s = n * theta_internal.sin();
    if !s.is_finite() {
        return Err(Error::Argument("non-finite refraction input".into()));
    }
    if s.abs() > 1.0 {
        return Err(Error::Geometry(format!(
            "total internal reflection: n sin(theta) = {s:.6} > 1"
        )));
    }
    Ok(s.asin())
}

fn finish(kin: &Kinematics, phs: f64, ts: f64, ti: f64) -> Result<PhaseMatchSolution> {
    let (dk, ns, ni) = kin.eval(ts, ti, phs)?;
    Ok(PhaseMatchSolution {
        phi_s: phs,
        theta_s: ts,
        theta_i: ti,
        phi_i: phs + PI,
        n_s: ns,
        n_i: ni,
        theta_s_ext: refract_external(ns, ts)?,
        theta_i_ext: refract_external(ni, ti)?,
        residual: dk.norm() / kin.kp,
        signal_direction: kin.frame.direction(ts, phs),
        idler_direction: kin.frame.direction(ti, phs + PI),
    })
}

fn newton(kin: &Kinematics, phs: f64, guess: (f64, f64)) -> Result<(f64, f64, f64)> {
    let (mut ts, mut ti) = guess;
    let norm = |f: [f64; 2]| f[0].hypot(f[1]);
    let mut f = kin.equations(ts, ti, phs)?;
    let mut r = norm(f);
    for _ in 0..NEWTON_MAX_ITER {
        if r < 1e-15 {
            break;
        }
        let h = JACOBIAN_STEP;
        let fs = kin.equations(ts + h, ti, phs)?;
        let fi = kin.equations(ts, ti + h, phs)?;
        let (j11, j21) = ((fs[0] - f[0]) / h, (fs[1] - f[1]) / h);
        let (j12, j22) = ((fi[0] - f[0]) / h, (fi[1] - f[1]) / h);
        let det = j11 * j22 - j12 * j21;
        if det == 0.0 || !det.is_finite() {
            break;
        }
        let dx = (j22 * f[0] - j12 * f[1]) / det;
        let dy = (-j21 * f[0] + j11 * f[1]) / det;
        let mut lam = 1.0;
        let mut improved = false;
        while lam > 1e-6 {
            let (nts, nti) = (ts - lam * dx, ti - lam * dy);
            let nf = kin.equations(nts, nti, phs)?;
            let nr = norm(nf);
            if nr < r {
                ts = nts;
                ti = nti;
                f = nf;
                r = nr;
                improved = true;
                break;
            }
            lam *= 0.5;
        }
        if !improved || (lam * dx).hypot(lam * dy) < 1e-16 {
            break;
        }
    }
    Ok((ts, ti, r))
}

/// Fallback: eliminate `theta_i` through the transverse equation, then scan
/// the longitudinal residual for a sign change.
fn reduced_search(kin: &Kinematics, phs: f64) -> Result<(f64, f64)> {
    let idler_for = |ts: f64| -> Option<f64> {
        let g = |ti: f64| kin.equations(ts, ti, phs).map(|f| f[0]).unwrap_or(f64::NAN);
        brent_root(g, 0.0, MAX_CONE + 0.2, 1e-15, 200).ok()
    };
    let longitudinal = |ts: f64| -> f64 {
        match idler_for(ts) {
            Some(ti) => kin.equations(ts, ti, phs).map(|f| f[1]).unwrap_or(f64::NAN),
            None => f64::NAN,
        }
    };
    let brackets = scan_brackets(longitudinal, 1e-7, MAX_CONE, 200);
    let (lo, hi) = brackets.first().copied().ok_or_else(|| {
        Error::NoPhaseMatch(format!(
            "longitudinal mismatch has no sign change for theta_s in (0, {:.1}] deg at phi_s = {:.4} deg",
            MAX_CONE.to_degrees(),
            phs.to_degrees()
        ))
    })?;
    let ts = brent_root(longitudinal, lo, hi, 1e-15, 200)?;
    let ti = idler_for(ts)
        .ok_or_else(|| Error::NoPhaseMatch("idler angle lost at refined root".into()))?;
    Ok((ts, ti))
}

pub(crate) fn solve_with(
    kin: &Kinematics,
    phs: f64,
    guess: Option<(f64, f64)>,
) -> Result<PhaseMatchSolution> {
    let excess = kin.collinear_excess()?;
    if excess < -1e-3 {
        return Err(Error::NoPhaseMatch(format!(
            "collinear daughter momentum falls short of the pump by {:.3e} (relative); pump is below the ring threshold",
            -excess
        )));
    }
    let guess = guess.unwrap_or_else(|| {
        let t = (2.0 * excess.max(1e-8)).sqrt();
        (t, t)
    });
    let (ts, ti, _) = newton(kin, phs, guess)?;
    if ts >= 0.0 && ti >= 0.0 {
        let sol = finish(kin, phs, ts, ti)?;
        if sol.residual < RESIDUAL_TOL {
            return Ok(sol);
        }
    }
    let (ts, ti) = reduced_search(kin, phs)?;
    let (ts, ti, _) = newton(kin, phs, (ts, ti))?;
    let sol = finish(kin, phs, ts, ti)?;
    if sol.residual < RESIDUAL_TOL && ts >= 0.0 && ti >= 0.0 {
        Ok(sol)
    } else {
        Err(Error::NonConvergence {
            iterations: NEWTON_MAX_ITER,
            best_residual: sol.residual,
        })
    }
}

/// Emission angles for one signal azimuth.
pub fn solve_emission(
    pump: &PumpConfig,
    lambda_s_nm: f64,
    phi_s: f64,
) -> Result<PhaseMatchSolution> {
    let kin = Kinematics::new(pump, lambda_s_nm)?;
    solve_with(&kin, phi_s, None)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RingTrace {
    pub pump: PumpConfig,
    pub lambda_s_nm: f64,
    /// Sorted by `phi_s` in [0, 2 pi).
    pub samples: Vec<PhaseMatchSolution>,
}

fn wrap_angle(phi: f64) -> f64 {
    let w = phi.rem_euclid(TAU);
    if TAU - w < 1e-12 {
        0.0
    } else {
        w
    }
}

fn angle_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    d.min(TAU - d)
}

impl RingTrace {
    pub fn n_samples(&self) -> usize {
        self.samples.len()
    }

    /// Sample at azimuth `phi` (radians), if present.
    pub fn sample_at(&self, phi: f64) -> Option<&PhaseMatchSolution> {
        self.samples.iter().find(|s| angle_gap(s.phi_s, phi) < 1e-9)
    }

    /// The same ring with every azimuth label advanced by `quarter_turns * 90` degrees.
    pub fn rotated(&self, quarter_turns: i32) -> RingTrace {
        let shift = FRAC_PI_2 * quarter_turns as f64;
        let mut samples: Vec<_> = self
            .samples
            .iter()
            .map(|s| PhaseMatchSolution {
                phi_s: wrap_angle(s.phi_s + shift),
                phi_i: wrap_angle(s.phi_s + shift) + PI,
                ..*s
            })
            .collect();
        samples.sort_by(|a, b| a.phi_s.total_cmp(&b.phi_s));
        RingTrace {
            pump: self.pump.clone(),
            lambda_s_nm: self.lambda_s_nm,
            samples,
        }
    }

    /// Exterior signal angle at `phi`, interpolating linearly between the
    /// neighbouring samples when `phi` is not sampled. The flag is true when
    /// interpolation was needed.
    pub fn exterior_angle_at(&self, phi: f64) -> Result<(f64, bool)> {
        if let Some(s) = self.sample_at(phi) {
            return Ok((s.theta_s_ext, false));
        }
        if self.samples.len() < 2 {
            return Err(Error::Argument("trace has fewer than two samples".into()));
        }
        let phi = wrap_angle(phi);
        let n = self.samples.len();
        let upper = self.samples.iter().position(|s| s.phi_s > phi).unwrap_or(0);
        let lower = (upper + n - 1) % n;
        let (a, b) = (&self.samples[lower], &self.samples[upper]);
        let span = (b.phi_s - a.phi_s).rem_euclid(TAU);
        let t = (phi - a.phi_s).rem_euclid(TAU) / span;
        Ok((a.theta_s_ext + t * (b.theta_s_ext - a.theta_s_ext), true))
    }
}

/// Solves `n_samples` uniformly spaced azimuths starting at `phi_s = 0`.
///
/// Eight seed azimuths are solved serially, each warm-started from the last;
/// every sample then starts from its nearest seed, so results do not depend on
/// thread scheduling.
pub fn trace_ring(pump: &PumpConfig, lambda_s_nm: f64, n_samples: usize) -> Result<RingTrace> {
    if n_samples < 4 {
        return Err(Error::Argument(format!(
            "need at least 4 azimuth samples, got {n_samples}"
        )));
    }
    let kin = Kinematics::new(pump, lambda_s_nm)?;
    const SEEDS: usize = 8;
    let mut seeds = Vec::with_capacity(SEEDS);
    let mut guess = None;
    for j in 0..SEEDS {
        let phi = TAU * j as f64 / SEEDS as f64;
        let sol = solve_with(&kin, phi, guess).map_err(|e| label_azimuth(e, phi))?;
        guess = Some((sol.theta_s, sol.theta_i));
        seeds.push(sol);
    }
    let samples = (0..n_samples)
        .into_par_iter()
        .map(|k| {
            let phi = TAU * k as f64 / n_samples as f64;
            let nearest = ((phi / TAU * SEEDS as f64).round() as usize) % SEEDS;
            let seed = &seeds[nearest];
            solve_with(&kin, phi, Some((seed.theta_s, seed.theta_i)))
                .map_err(|e| label_azimuth(e, phi))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RingTrace {
        pump: pump.clone(),
        lambda_s_nm,
        samples,
    })
}

fn label_azimuth(e: Error, phi: f64) -> Error {
    match e {
        Error::NoPhaseMatch(m) => {
            Error::NoPhaseMatch(format!("at phi_s = {:.4} deg: {m}", phi.to_degrees()))
        }
        other => other,
    }
}

/// Which angles the eccentricity is computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RingPlane {
    /// Refracted angles outside the crystal.
    Exterior,
    /// Internal angles from the pump axis.
    Internal,
}

/// Eccentricity from the ring's extent along the local x and y axes.
///
/// Each semi-axis averages the two opposite azimuths, `(tan t(0) + tan t(180)) / 2`
/// and `(tan t(90) + tan t(270)) / 2`, so an off-centre ring is measured by its
/// width rather than by its distance from the pump axis. When the 180 and 270
/// degree samples are absent the single-sided values at 0 and 90 are used.
pub fn ring_eccentricity(trace: &RingTrace, plane: RingPlane) -> Result<f64> {
    let angle = |phi_deg: f64| -> Option<f64> {
        trace.sample_at(phi_deg.to_radians()).map(|s| match plane {
            RingPlane::Exterior => s.theta_s_ext,
            RingPlane::Internal => s.theta_s,
        })
    };
    let (t0, t90) = match (angle(0.0), angle(90.0)) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(Error::Argument(
                "ring trace must include samples at phi_s = 0 and 90 degrees".into(),
            ))
        }
    };
    if trace.samples.iter().any(|s| !(s.residual < RESIDUAL_TOL)) {
        return Err(Error::NonConvergence {
            iterations: 0,
            best_residual: trace.samples.iter().map(|s| s.residual).fold(0.0, f64::max),
        });
    }
    let (sx, sy) = match (angle(180.0), angle(270.0)) {
        (Some(t180), Some(t270)) => (
            0.5 * (t0.tan() + t180.tan()),
            0.5 * (t90.tan() + t270.tan()),
        ),
        _ => (t0.tan(), t90.tan()),
    };
    ellipse_eccentricity(sx, sy)
}

/// `sqrt(1 - (minor/major)^2)` for two positive semi-axes.
pub fn ellipse_eccentricity(a: f64, b: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
        return Err(Error::Degenerate(format!(
            "semi-axes must be positive, got {a} and {b}"
        )));
    }
    let r = a.min(b) / a.max(b);
    Ok((1.0 - r * r).max(0.0).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PumpInference {
    pub theta_p: f64,
    /// Exterior angle reached at `theta_p`, radians.
    pub achieved_ext: f64,
    /// Every root found in the scanned interval, ascending.
    pub candidates: Vec<f64>,
}

/// Pump polar angle at which the exterior signal angle at `phi_s` equals
/// `target_ext` (radians). Scans `range` in 0.25 degree steps and refines each
/// sign change; the lowest root is reported first.
#[allow(clippy::too_many_arguments)]
pub fn infer_pump_angle(
    species: &CrystalSpecies,
    phi_p: f64,
    lambda_p_nm: f64,
    lambda_s_nm: f64,
    target_ext: f64,
    phi_s: f64,
    pump_branch: Branch,
    range: (f64, f64),
) -> Result<PumpInference> {
    let (lo, hi) = range;
    if !(target_ext > 0.0 && target_ext < FRAC_PI_2) {
        return Err(Error::Argument(format!(
            "target exterior angle must lie in (0, 90) degrees, got {:.6}",
            target_ext.to_degrees()
        )));
    }
    if !(lo > 0.0 && hi < PI && hi > lo) {
        return Err(Error::Argument(format!(
            "pump-angle search range must lie inside (0, 180) degrees, got [{:.4}, {:.4}]",
            lo.to_degrees(),
            hi.to_degrees()
        )));
    }
    let base = PumpConfig::new(
        species.clone(),
        lambda_p_nm,
        0.5 * (lo + hi),
        phi_p,
        pump_branch,
    )?;
    idler_wavelength(lambda_p_nm, lambda_s_nm)?;
    let exterior = |theta_p: f64| -> f64 {
        let ext = base
            .with_theta(theta_p)
            .and_then(|p| solve_emission(&p, lambda_s_nm, phi_s))
            .map(|s| s.theta_s_ext)
            .unwrap_or(0.0);
        ext - target_ext
    };
    let steps = ((hi - lo) / 0.25f64.to_radians()).ceil().max(1.0) as usize;
    let brackets = scan_brackets(exterior, lo, hi, steps);
    if brackets.is_empty() {
        return Err(Error::NoBracket {
            what: format!(
                "exterior angle {:.6} deg not reached at phi_s = {:.3} deg",
                target_ext.to_degrees(),
                phi_s.to_degrees()
            ),
            lo: lo.to_degrees(),
            hi: hi.to_degrees(),
        });
    }
    let mut candidates = Vec::new();
    for (a, b) in brackets {
        candidates.push(brent_root(exterior, a, b, 1e-13, 200)?);
    }
    let theta_p = candidates[0];
    let achieved_ext = exterior(theta_p) + target_ext;
    Ok(PumpInference {
        theta_p,
        achieved_ext,
        candidates,
    })
}
