//! Direction-dependent refractive indices from Fresnel's equation of wave normals.
//!
//! Writing `u = 1/n^2` and `a_j = 1/n_j^2`, clearing denominators in
//!
//! ```text
//! s_x^2/(u - a_x) + s_y^2/(u - a_y) + s_z^2/(u - a_z) = 0
//! ```
//!
//! gives `u^2 - b u + c = 0` with `b = sum s_j^2 (a_k + a_l)` and
//! `c = sum s_j^2 a_k a_l`. Those are the trace and determinant of the inverse
//! dielectric tensor projected onto the plane normal to `s`, so the
//! discriminant is taken from the projected 2x2 matrix as a sum of squares.
//! That form has no cancellation near the optic axes and no special cases on
//! the principal planes.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};

use crate::dispersion::{CrystalSpecies, PrincipalIndices};
use crate::error::{Error, Result};

/// First-derivative finite-difference step, radians.
pub const FIRST_STEP: f64 = 1e-4;
/// Second-derivative finite-difference step, radians.
pub const SECOND_STEP: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Branch {
    /// Smaller of the two indices.
    Fast,
    /// Larger of the two indices.
    Slow,
}

impl Branch {
    pub fn other(self) -> Branch {
        match self {
            Branch::Fast => Branch::Slow,
            Branch::Slow => Branch::Fast,
        }
    }
}

impl std::str::FromStr for Branch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fast" => Ok(Branch::Fast),
            "slow" => Ok(Branch::Slow),
            other => Err(Error::Argument(format!("unknown branch '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Frame {
    CrystalPrincipal,
    PumpLocal,
}

/// A propagation direction as polar angles in some frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaveDirection {
    /// Polar angle from the frame's z axis, radians.
    pub theta: f64,
    /// Azimuth from the frame's x axis, radians.
    pub phi: f64,
    pub frame: Frame,
}

impl WaveDirection {
    pub fn crystal(theta: f64, phi: f64) -> Self {
        Self {
            theta,
            phi,
            frame: Frame::CrystalPrincipal,
        }
    }

    pub fn pump_local(theta: f64, phi: f64) -> Self {
        Self {
            theta,
            phi,
            frame: Frame::PumpLocal,
        }
    }

    /// Unit vector in this direction's own frame.
    pub fn unit_vector(&self) -> Vector3<f64> {
        spherical(self.theta, self.phi)
    }
}

pub(crate) fn spherical(theta: f64, phi: f64) -> Vector3<f64> {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    Vector3::new(st * cp, st * sp, ct)
}

/// Orthonormal frame attached to the pump wavevector.
///
/// `z` is along the pump; `x` lies in the plane containing the pump and the
/// crystal z axis (the direction of increasing pump polar angle); `y = z × x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PumpFrame {
    pub x: Vector3<f64>,
    pub y: Vector3<f64>,
    pub z: Vector3<f64>,
}

impl PumpFrame {
    pub fn new(theta_p: f64, phi_p: f64) -> Self {
        let (st, ct) = theta_p.sin_cos();
        let (sp, cp) = phi_p.sin_cos();
        Self {
            x: Vector3::new(ct * cp, ct * sp, -st),
            y: Vector3::new(-sp, cp, 0.0),
            z: Vector3::new(st * cp, st * sp, ct),
        }
    }

    /// Crystal-frame unit vector for local polar angle `theta` and azimuth `phi`.
    pub fn direction(&self, theta: f64, phi: f64) -> Vector3<f64> {
        let (st, ct) = theta.sin_cos();
        let (sp, cp) = phi.sin_cos();
        self.x * (st * cp) + self.y * (st * sp) + self.z * ct
    }

    /// Components of a crystal-frame vector along (x, y, z) of this frame.
    pub fn local_components(&self, v: &Vector3<f64>) -> Vector3<f64> {
        Vector3::new(self.x.dot(v), self.y.dot(v), self.z.dot(v))
    }
}

/// The two polarization eigenmodes for one propagation direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Eigenmodes {
    pub n_fast: f64,
    pub n_slow: f64,
    /// Unit displacement-field directions, crystal frame.
    pub d_fast: Vector3<f64>,
    pub d_slow: Vector3<f64>,
    /// `u_fast - u_slow >= 0` where `u = 1/n^2`; zero on an optic axis.
    pub splitting: f64,
}

impl Eigenmodes {
    pub fn index(&self, branch: Branch) -> f64 {
        match branch {
            Branch::Fast => self.n_fast,
            Branch::Slow => self.n_slow,
        }
    }

    pub fn displacement(&self, branch: Branch) -> Vector3<f64> {
        match branch {
            Branch::Fast => self.d_fast,
            Branch::Slow => self.d_slow,
        }
    }
}

fn check_inputs(p: &PrincipalIndices, s: &Vector3<f64>) -> Result<()> {
    if p.as_array().iter().any(|n| !(n.is_finite() && *n > 0.0)) {
        return Err(Error::Argument(format!(
            "principal indices must be finite and positive, got {:?}",
            p.as_array()
        )));
    }
    if s.iter().any(|c| !c.is_finite()) {
        return Err(Error::Argument("non-finite propagation direction".into()));
    }
    let norm = s.norm();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(Error::Argument(format!(
            "direction not a unit vector (|s| = {norm})"
        )));
    }
    Ok(())
}

fn perpendicular_basis(s: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let a = s.map(f64::abs);
    let t = if a.x <= a.y && a.x <= a.z {
        Vector3::x()
    } else if a.y <= a.z {
        Vector3::y()
    } else {
        Vector3::z()
    };
    let e1 = t.cross(s).normalize();
    let e2 = s.cross(&e1);
    (e1, e2)
}

/// Solves for both eigenmodes along unit direction `s` (crystal frame).
pub fn eigenmodes(p: &PrincipalIndices, s: &Vector3<f64>) -> Result<Eigenmodes> {
    check_inputs(p, s)?;
    let a = Vector3::new(p.nx.powi(-2), p.ny.powi(-2), p.nz.powi(-2));
    let (e1, e2) = perpendicular_basis(s);
    let m11 = e1.component_mul(&e1).dot(&a);
    let m22 = e2.component_mul(&e2).dot(&a);
    let m12 = e1.component_mul(&e2).dot(&a);

    // Cleared-quadratic coefficients.
    let s2 = s.component_mul(s);
    let b = s2.x * (a.y + a.z) + s2.y * (a.x + a.z) + s2.z * (a.x + a.y);
    let c = s2.x * a.y * a.z + s2.y * a.x * a.z + s2.z * a.x * a.y;
    let disc = (m11 - m22).powi(2) + 4.0 * m12 * m12;
    let root = disc.sqrt();
    let u_fast = 0.5 * (b + root);
    let u_slow = c / u_fast;

    let eigvec = |u: f64| -> Vector3<f64> {
        let v1 = (m12, u - m11);
        let v2 = (u - m22, m12);
        let (n1, n2) = (v1.0.hypot(v1.1), v2.0.hypot(v2.1));
        let (c1, c2) = if n1.max(n2) <= 1e-300 {
            (1.0, 0.0)
        } else if n1 >= n2 {
            (v1.0 / n1, v1.1 / n1)
        } else {
            (v2.0 / n2, v2.1 / n2)
        };
        (e1 * c1 + e2 * c2).normalize()
    };
    let d_fast = eigvec(u_fast);
    let mut d_slow = s.cross(&d_fast);
    d_slow.normalize_mut();

    Ok(Eigenmodes {
        n_fast: u_fast.sqrt().recip(),
        n_slow: u_slow.sqrt().recip(),
        d_fast,
        d_slow,
        splitting: root,
    })
}

/// Fast and slow indices for propagation along unit vector `s`.
pub fn wave_normal_indices(p: &PrincipalIndices, s: &Vector3<f64>) -> Result<(f64, f64)> {
    let m = eigenmodes(p, s)?;
    Ok((m.n_fast, m.n_slow))
}

/// Left-hand side of the cleared Fresnel equation evaluated at `n`, scaled to be
/// dimensionless. Zero at either eigen-index.
pub fn fresnel_residual(p: &PrincipalIndices, s: &Vector3<f64>, n: f64) -> f64 {
    let a = [p.nx.powi(-2), p.ny.powi(-2), p.nz.powi(-2)];
    let u = n.powi(-2);
    let s2 = [s.x * s.x, s.y * s.y, s.z * s.z];
    let val = s2[0] * (u - a[1]) * (u - a[2])
        + s2[1] * (u - a[0]) * (u - a[2])
        + s2[2] * (u - a[0]) * (u - a[1]);
    val / (u * u)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchIndex {
    pub branch: Branch,
    pub n: f64,
    pub direction: WaveDirection,
    pub lambda_nm: f64,
}

/// Index of one branch along a crystal-frame direction.
pub fn branch_index(
    species: &CrystalSpecies,
    lambda_nm: f64,
    dir: WaveDirection,
    branch: Branch,
) -> Result<BranchIndex> {
    if dir.frame != Frame::CrystalPrincipal {
        return Err(Error::Argument(
            "branch_index expects a crystal-frame direction".into(),
        ));
    }
    let n = index_along(species, lambda_nm, &dir.unit_vector(), branch)?;
    Ok(BranchIndex {
        branch,
        n,
        direction: dir,
        lambda_nm,
    })
}

/// Index of one branch along a crystal-frame unit vector.
pub fn index_along(
    species: &CrystalSpecies,
    lambda_nm: f64,
    s: &Vector3<f64>,
    branch: Branch,
) -> Result<f64> {
    let p = species.principal_indices(lambda_nm)?;
    Ok(eigenmodes(&p, s)?.index(branch))
}

/// Optic-axis directions (upper hemisphere representatives) for the given
/// principal indices. Uniaxial crystals have a single axis along z.
pub fn optic_axes(p: &PrincipalIndices) -> Vec<Vector3<f64>> {
    let a = [p.nx.powi(-2), p.ny.powi(-2), p.nz.powi(-2)];
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&i, &j| a[i].total_cmp(&a[j]));
    let (lo, mid, hi) = (idx[0], idx[1], idx[2]);
    if a[hi] == a[lo] {
        return Vec::new();
    }
    let cos2 = ((a[mid] - a[lo]) / (a[hi] - a[lo])).clamp(0.0, 1.0);
    let (c, s) = (cos2.sqrt(), (1.0 - cos2).sqrt());
    let mut v1 = Vector3::zeros();
    v1[lo] = c;
    v1[hi] = s;
    let mut v2 = v1;
    v2[hi] = -s;
    if (v1 - v2).norm() < 1e-15 {
        vec![v1]
    } else {
        vec![v1, v2]
    }
}

/// Angle from `s` to the nearest optic axis (either sense), radians.
pub fn optic_axis_distance(p: &PrincipalIndices, s: &Vector3<f64>) -> f64 {
    optic_axes(p)
        .iter()
        .map(|oa| {
            let c = oa.dot(s).abs().min(1.0);
            let sn = oa.cross(s).norm();
            sn.atan2(c)
        })
        .fold(PI, f64::min)
}

/// Angular derivatives of a daughter index about a pump direction.
///
/// `theta_p` derivatives tilt the whole pump-local frame (and the daughter
/// with it) in the pump's principal plane; `theta_s` derivatives tilt the
/// daughter away from the pump along the fixed local azimuth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndexDerivatives {
    pub n: f64,
    pub dn_dtheta_p: f64,
    pub dn_dtheta_s: f64,
    pub d2n_dtheta_p2: f64,
    pub d2n_dtheta_s2: f64,
    pub d2n_dtheta_p_dtheta_s: f64,
    /// Largest |D(h) - D(h/2)| over the five estimates.
    pub richardson_gap: f64,
}

fn richardson(coarse: f64, fine: f64) -> (f64, f64) {
    ((4.0 * fine - coarse) / 3.0, (coarse - fine).abs())
}

/// Finite-difference derivatives of the `branch` index at wavelength
/// `lambda_nm`, for a daughter at pump-local angles `signal_offset` around a
/// pump travelling along crystal angles `(theta_p, phi_p)`.
pub fn index_derivatives(
    species: &CrystalSpecies,
    lambda_nm: f64,
    theta_p: f64,
    phi_p: f64,
    signal_offset: WaveDirection,
    branch: Branch,
) -> Result<IndexDerivatives> {
    let p = species.principal_indices(lambda_nm)?;
    let (ts, phs) = (signal_offset.theta, signal_offset.phi);
    let center = PumpFrame::new(theta_p, phi_p).direction(ts, phs);
    let reach = 2.0 * SECOND_STEP;
    if !species.symmetry.is_uniaxial() && optic_axis_distance(&p, &center) < 2.0 * reach {
        return Err(Error::Singularity(format!(
            "stencil of half-width {reach:.1e} rad reaches an optic axis; use a smaller step or another direction"
        )));
    }
    let f = |dp: f64, dt: f64| -> Result<f64> {
        let v = PumpFrame::new(theta_p + dp, phi_p).direction(ts + dt, phs);
        Ok(eigenmodes(&p, &v)?.index(branch))
    };
    let n0 = f(0.0, 0.0)?;

    let d1 = |h: f64, along_p: bool| -> Result<f64> {
        let (a, b) = if along_p {
            (f(h, 0.0)?, f(-h, 0.0)?)
        } else {
            (f(0.0, h)?, f(0.0, -h)?)
        };
        Ok((a - b) / (2.0 * h))
    };
    let d2 = |h: f64, along_p: bool| -> Result<f64> {
        let (a, b) = if along_p {
            (f(h, 0.0)?, f(-h, 0.0)?)
        } else {
            (f(0.0, h)?, f(0.0, -h)?)
        };
        Ok((a - 2.0 * n0 + b) / (h * h))
    };
    let dmix = |h: f64| -> Result<f64> {
        Ok((f(h, h)? - f(h, -h)? - f(-h, h)? + f(-h, -h)?) / (4.0 * h * h))
    };

    let (h1, h2) = (FIRST_STEP, SECOND_STEP);
    let (dp, g1) = richardson(d1(h1, true)?, d1(0.5 * h1, true)?);
    let (ds, g2) = richardson(d1(h1, false)?, d1(0.5 * h1, false)?);
    let (dpp, g3) = richardson(d2(h2, true)?, d2(0.5 * h2, true)?);
    let (dss, g4) = richardson(d2(h2, false)?, d2(0.5 * h2, false)?);
    let (dps, g5) = richardson(dmix(h2)?, dmix(0.5 * h2)?);

    Ok(IndexDerivatives {
        n: n0,
        dn_dtheta_p: dp,
        dn_dtheta_s: ds,
        d2n_dtheta_p2: dpp,
        d2n_dtheta_s2: dss,
        d2n_dtheta_p_dtheta_s: dps,
        richardson_gap: g1.max(g2).max(g3).max(g4).max(g5),
    })
}

/// Diagonal inverse dielectric tensor `diag(1/n_x^2, 1/n_y^2, 1/n_z^2)`.
pub fn impermeability(p: &PrincipalIndices) -> Matrix3<f64> {
    Matrix3::from_diagonal(&Vector3::new(p.nx.powi(-2), p.ny.powi(-2), p.nz.powi(-2)))
}
