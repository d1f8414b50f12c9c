//! Single-mode collection spectra for a crossed two-crystal sandwich and
//! their overlap.
//!
//! Each crystal contributes `S(dw) = sinc^2(dk_L L / 2) G(dw)`. The signal at
//! `w_deg + dw` is collected by a Gaussian mode at exterior angle `theta_c`
//! and azimuth `phi`; the idler at `w_deg - dw` by the mirror mode at
//! `phi + pi`. Transverse momentum ties the two exterior angles together
//! (`w_s sin t_s = w_i sin t_i`), and the pair direction is the one that
//! maximizes the joint acceptance `G` of both modes. `dk_L` is the
//! longitudinal mismatch along the pump for that pair. The pump is
//! monochromatic.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::indicatrix::eigenmodes;
use crate::numeric::trapezoid;
use crate::phasematch::{trace_ring, PumpConfig, RingTrace};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
pub const DEFAULT_GRID_POINTS: usize = 2001;
pub const DEFAULT_GRID_HALF_WIDTH: f64 = 6e13;

/// A single-mode fibre collection mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollectionMode {
    /// Exterior polar angle of the mode axis from the pump, radians.
    pub theta_ext: f64,
    /// Lab azimuth of the mode axis, radians.
    pub phi: f64,
    /// Gaussian 1/e^2 intensity radius at the crystal, micrometres.
    pub waist_um: f64,
    pub single_mode: bool,
}

impl CollectionMode {
    pub fn new(theta_ext: f64, phi: f64, waist_um: f64) -> Result<Self> {
        if !(waist_um > 0.0 && waist_um.is_finite()) {
            return Err(Error::Argument(format!(
                "mode waist must be positive, got {waist_um} um"
            )));
        }
        Ok(Self {
            theta_ext,
            phi,
            waist_um,
            single_mode: true,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumCurve {
    /// Angular-frequency offsets from degeneracy, rad/s.
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    /// Degenerate angular frequency, rad/s.
    pub omega_deg: f64,
}

impl SpectrumCurve {
    pub fn scaled(&self, factor: f64) -> SpectrumCurve {
        SpectrumCurve {
            values: self.values.iter().map(|v| v * factor).collect(),
            ..self.clone()
        }
    }

    pub fn peak(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverlapResult {
    pub overlap: f64,
    pub rate_1: f64,
    pub rate_2: f64,
    pub collection: CollectionMode,
}

/// One crystal of the sandwich: its pump geometry and its rotation about the
/// pump relative to the lab frame. Lab azimuth `phi` corresponds to local
/// azimuth `phi - rotation`.
#[derive(Debug, Clone, PartialEq)]
pub struct MountedCrystal {
    pub pump: PumpConfig,
    pub rotation: f64,
}

impl MountedCrystal {
    pub fn new(pump: PumpConfig, rotation: f64) -> Self {
        Self { pump, rotation }
    }

    /// The partner crystal with its axes turned by 90 degrees.
    pub fn crossed(&self) -> Self {
        Self {
            pump: self.pump.clone(),
            rotation: self.rotation + FRAC_PI_2,
        }
    }
}

/// `n` points evenly spaced over `[-half_width, half_width]`.
pub fn symmetric_grid(n: usize, half_width: f64) -> Result<Vec<f64>> {
    if n < 3 || n.is_multiple_of(2) || !(half_width > 0.0) {
        return Err(Error::Argument(format!(
            "grid needs an odd count >= 3 and positive half-width, got {n} and {half_width}"
        )));
    }
    let m = (n / 2) as f64;
    Ok((0..n).map(|k| half_width * (k as f64 - m) / m).collect())
}

pub fn default_grid() -> Vec<f64> {
    symmetric_grid(DEFAULT_GRID_POINTS, DEFAULT_GRID_HALF_WIDTH).expect("valid default grid")
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 3 {
        return Err(Error::Argument(
            "frequency grid needs at least 3 points".into(),
        ));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Argument(
            "frequency grid must be strictly increasing".into(),
        ));
    }
    let scale = grid[grid.len() - 1].abs();
    let n = grid.len();
    if (0..n).any(|k| (grid[k] + grid[n - 1 - k]).abs() > 1e-9 * scale) {
        return Err(Error::Argument(
            "frequency grid must be symmetric about zero".into(),
        ));
    }
    Ok(())
}

/// Collection mode pointed midway between two lab-labelled ring traces at
/// azimuth `phi`. The flag reports whether either trace had to be interpolated.
pub fn midpoint_collection(
    trace_1: &RingTrace,
    trace_2: &RingTrace,
    phi: f64,
    waist_um: f64,
) -> Result<(CollectionMode, bool)> {
    let (a, ia) = trace_1.exterior_angle_at(phi)?;
    let (b, ib) = trace_2.exterior_angle_at(phi)?;
    Ok((CollectionMode::new(0.5 * (a + b), phi, waist_um)?, ia || ib))
}

fn sinc2(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - x * x / 3.0
    } else {
        (x.sin() / x).powi(2)
    }
}

/// Internal polar angle whose refraction gives `theta_ext` for a daughter at
/// local azimuth `phi_local`, and the index there.
fn internal_angle(
    pump: &PumpConfig,
    lambda_nm: f64,
    phi_local: f64,
    theta_ext: f64,
) -> Result<(f64, f64)> {
    let p = pump.species.principal_indices(lambda_nm)?;
    let frame = pump.frame();
    let branch = pump.daughter_branch();
    let s = theta_ext.sin();
    let mut n = eigenmodes(&p, &frame.z)?.index(branch);
    let mut theta = (s / n).asin();
    for _ in 0..100 {
        n = eigenmodes(&p, &frame.direction(theta, phi_local))?.index(branch);
        let next = (s / n).asin();
        let done = (next - theta).abs() < 1e-15;
        theta = next;
        if done {
            break;
        }
    }
    Ok((theta, n))
}

/// Exterior signal and idler angles of the pair best matched to both modes.
/// `ratio = w_s / w_i`. Without single-mode filtering the signal sits on the
/// mode axis.
fn pair_direction(
    theta_c: f64,
    ratio: f64,
    div_s: f64,
    div_i: f64,
    single_mode: bool,
) -> Option<(f64, f64)> {
    let idler = |ts: f64| -> Option<f64> {
        let v = ratio * ts.sin();
        (v.abs() < 1.0).then(|| v.asin())
    };
    if !single_mode {
        return idler(theta_c).map(|ti| (theta_c, ti));
    }
    // minimize (u/div_s)^2 + ((t_i(u) - theta_c)/div_i)^2 by Gauss-Newton on u
    let mut u = 0.0;
    for _ in 0..8 {
        let ti = idler(theta_c + u)?;
        let h = 1e-7;
        let slope = (idler(theta_c + u + h)? - ti) / h;
        let r = ti - theta_c;
        let step = (u / (div_s * div_s) + slope * r / (div_i * div_i))
            / (1.0 / (div_s * div_s) + slope * slope / (div_i * div_i));
        u -= step;
        if step.abs() < 1e-16 {
            break;
        }
    }
    idler(theta_c + u).map(|ti| (theta_c + u, ti))
}

/// Spectrum collected by `collection` from one crystal of length `crystal_length_mm`.
pub fn pair_spectrum(
    crystal: &MountedCrystal,
    collection: &CollectionMode,
    crystal_length_mm: f64,
    grid: &[f64],
) -> Result<SpectrumCurve> {
    check_grid(grid)?;
    if !(crystal_length_mm >= 0.0) {
        return Err(Error::Argument(format!(
            "crystal length must be non-negative, got {crystal_length_mm}"
        )));
    }
    let pump = &crystal.pump;
    let lambda_deg = 2.0 * pump.lambda_p_nm;
    let omega_deg = TAU * SPEED_OF_LIGHT / (lambda_deg * 1e-9);
    let omega_p = 2.0 * omega_deg;
    if grid[grid.len() - 1] >= omega_deg {
        return Err(Error::Argument(
            "frequency grid reaches zero idler frequency".into(),
        ));
    }
    let n_pump = pump.pump_index()?;
    let phi_local = collection.phi - crystal.rotation;
    let length_m = crystal_length_mm * 1e-3;
    let theta_c = collection.theta_ext;
    let values = grid
        .par_iter()
        .map(|&dw| -> Result<f64> {
            let (ws, wi) = (omega_deg + dw, omega_deg - dw);
            let lambda_s = TAU * SPEED_OF_LIGHT / ws * 1e9;
            let lambda_i = TAU * SPEED_OF_LIGHT / wi * 1e9;
            let div = |l: f64| l * 1e-9 / (PI * collection.waist_um * 1e-6);
            let (div_s, div_i) = (div(lambda_s), div(lambda_i));
            let Some((ext_s, ext_i)) =
                pair_direction(theta_c, ws / wi, div_s, div_i, collection.single_mode)
            else {
                return Ok(0.0);
            };
            let (ths, ns) = internal_angle(pump, lambda_s, phi_local, ext_s)?;
            let (thi, ni) = internal_angle(pump, lambda_i, phi_local + PI, ext_i)?;
            let dk =
                (omega_p * n_pump - ws * ns * ths.cos() - wi * ni * thi.cos()) / SPEED_OF_LIGHT;
            let accept = if collection.single_mode {
                (-2.0 * (((ext_s - theta_c) / div_s).powi(2) + ((ext_i - theta_c) / div_i).powi(2)))
                    .exp()
            } else {
                1.0
            };
            Ok(sinc2(0.5 * dk * length_m) * accept)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SpectrumCurve {
        grid: grid.to_vec(),
        values,
        omega_deg,
    })
}

/// Bhattacharyya coefficient of the two area-normalised curves.
pub fn overlap_integral(s1: &SpectrumCurve, s2: &SpectrumCurve) -> Result<f64> {
    if s1.grid != s2.grid {
        return Err(Error::Argument(
            "spectra must share the same frequency grid".into(),
        ));
    }
    if s1.values.len() != s1.grid.len() || s2.values.len() != s2.grid.len() {
        return Err(Error::Argument(
            "spectrum values do not match the grid length".into(),
        ));
    }
    if s1
        .values
        .iter()
        .chain(&s2.values)
        .any(|v| !(v.is_finite() && *v >= 0.0))
    {
        return Err(Error::Argument(
            "spectrum values must be finite and non-negative".into(),
        ));
    }
    let a1 = trapezoid(&s1.grid, &s1.values);
    let a2 = trapezoid(&s2.grid, &s2.values);
    if !(a1 > 0.0 && a2 > 0.0) {
        return Err(Error::Degenerate("spectrum with zero area".into()));
    }
    let root: Vec<f64> = s1
        .values
        .iter()
        .zip(&s2.values)
        .map(|(a, b)| (a / a1 * b / a2).sqrt())
        .collect();
    Ok(trapezoid(&s1.grid, &root).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointRate {
    pub rate: f64,
    /// The band reached past the grid and was cut at its ends.
    pub truncated: bool,
}

fn interpolate(x: &[f64], y: &[f64], at: f64) -> f64 {
    let k = x.partition_point(|v| *v <= at).clamp(1, x.len() - 1);
    let t = (at - x[k - 1]) / (x[k] - x[k - 1]);
    y[k - 1] + t * (y[k] - y[k - 1])
}

/// Integral of the curve over wavelengths within `band_nm / 2` of degeneracy.
pub fn joint_rate(s: &SpectrumCurve, band_nm: f64) -> Result<JointRate> {
    if !(band_nm > 0.0) {
        return Err(Error::Argument(format!(
            "band must be positive, got {band_nm} nm"
        )));
    }
    let lambda_deg = TAU * SPEED_OF_LIGHT / s.omega_deg;
    let half = 0.5 * band_nm * 1e-9;
    if half >= lambda_deg {
        return Err(Error::Argument(
            "band wider than the degenerate wavelength".into(),
        ));
    }
    let w = |l: f64| TAU * SPEED_OF_LIGHT / l - s.omega_deg;
    let (mut lo, mut hi) = (w(lambda_deg + half), w(lambda_deg - half));
    let (g0, g1) = (s.grid[0], s.grid[s.grid.len() - 1]);
    let truncated = lo < g0 || hi > g1;
    lo = lo.max(g0);
    hi = hi.min(g1);
    let mut xs = vec![lo];
    let mut ys = vec![interpolate(&s.grid, &s.values, lo)];
    for (x, y) in s.grid.iter().zip(&s.values) {
        if *x > lo && *x < hi {
            xs.push(*x);
            ys.push(*y);
        }
    }
    xs.push(hi);
    ys.push(interpolate(&s.grid, &s.values, hi));
    Ok(JointRate {
        rate: trapezoid(&xs, &ys),
        truncated,
    })
}

/// Both crystals' spectra at one lab azimuth of the sandwich.
#[derive(Debug, Clone, PartialEq)]
pub struct SandwichSpectra {
    pub collection: CollectionMode,
    pub crystal_1: SpectrumCurve,
    pub crystal_2: SpectrumCurve,
    pub interpolated: bool,
}

/// Settings for a sandwich evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct SandwichSetup {
    pub crystal: MountedCrystal,
    pub crystal_length_mm: f64,
    pub waist_um: f64,
    pub grid: Vec<f64>,
    pub ring_samples: usize,
}

impl SandwichSetup {
    pub fn new(pump: PumpConfig, crystal_length_mm: f64, waist_um: f64) -> Self {
        Self {
            crystal: MountedCrystal::new(pump, 0.0),
            crystal_length_mm,
            waist_um,
            grid: default_grid(),
            ring_samples: 360,
        }
    }

    /// Lab-labelled rings of the two crystals.
    pub fn rings(&self) -> Result<(RingTrace, RingTrace)> {
        let lambda_s = 2.0 * self.crystal.pump.lambda_p_nm;
        let ring = trace_ring(&self.crystal.pump, lambda_s, self.ring_samples)?;
        let quarter = (self.crystal.rotation / FRAC_PI_2).round() as i32;
        if (self.crystal.rotation - FRAC_PI_2 * quarter as f64).abs() > 1e-12 {
            return Err(Error::Argument(
                "crystal rotation must be a multiple of 90 degrees".into(),
            ));
        }
        Ok((ring.rotated(quarter), ring.rotated(quarter + 1)))
    }

    pub fn spectra_at(&self, phi: f64) -> Result<SandwichSpectra> {
        let (r1, r2) = self.rings()?;
        let (collection, interpolated) = midpoint_collection(&r1, &r2, phi, self.waist_um)?;
        let other = self.crystal.crossed();
        let (a, b) = rayon::join(
            || {
                pair_spectrum(
                    &self.crystal,
                    &collection,
                    self.crystal_length_mm,
                    &self.grid,
                )
            },
            || pair_spectrum(&other, &collection, self.crystal_length_mm, &self.grid),
        );
        Ok(SandwichSpectra {
            collection,
            crystal_1: a?,
            crystal_2: b?,
            interpolated,
        })
    }

    pub fn overlap_at(&self, phi: f64, band_nm: f64) -> Result<OverlapResult> {
        let s = self.spectra_at(phi)?;
        Ok(OverlapResult {
            overlap: overlap_integral(&s.crystal_1, &s.crystal_2)?,
            rate_1: joint_rate(&s.crystal_1, band_nm)?.rate,
            rate_2: joint_rate(&s.crystal_2, band_nm)?.rate,
            collection: s.collection,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dispersion::CrystalRegistry;

    fn bibo_pump(theta_deg: f64, phi_deg: f64) -> PumpConfig {
        let s = CrystalRegistry::builtin().get("BiBO").unwrap().clone();
        PumpConfig::type_one(s, 405.0, theta_deg.to_radians(), phi_deg.to_radians()).unwrap()
    }

    fn curve(values: Vec<f64>) -> SpectrumCurve {
        let n = values.len();
        SpectrumCurve {
            grid: symmetric_grid(n, 1.0).unwrap(),
            values,
            omega_deg: 2.3e15,
        }
    }

    #[test]
    fn grid_validation() {
        assert!(symmetric_grid(4, 1.0).is_err());
        let g = default_grid();
        assert_eq!(g.len(), 2001);
        assert_eq!(g[1000], 0.0);
        assert!(check_grid(&[-1.0, 0.0, 2.0]).is_err());
        assert!(check_grid(&[-1.0, 1.0, 0.5]).is_err());
    }

    #[test]
    fn overlap_basic_cases() {
        let a = curve(vec![0.0, 1.0, 2.0, 1.0, 0.0]);
        assert!((overlap_integral(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        let b = curve(vec![1.0, 0.0, 0.0, 0.0, 0.0]);
        let c = curve(vec![0.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(overlap_integral(&b, &c).unwrap(), 0.0);
        let z = curve(vec![0.0; 5]);
        assert!(matches!(
            overlap_integral(&a, &z),
            Err(Error::Degenerate(_))
        ));
        assert!((overlap_integral(&a, &a.scaled(7.0)).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn mismatched_grids_rejected() {
        let a = curve(vec![0.0, 1.0, 0.0]);
        let b = curve(vec![0.0, 1.0, 1.0, 1.0, 0.0]);
        assert!(overlap_integral(&a, &b).is_err());
    }

    #[test]
    fn rate_is_linear_and_zero_for_zero_curve() {
        let grid = default_grid();
        let c = SpectrumCurve {
            values: grid.iter().map(|w| (-(w / 2e13).powi(2)).exp()).collect(),
            grid: grid.clone(),
            omega_deg: TAU * SPEED_OF_LIGHT / 810e-9,
        };
        let r = joint_rate(&c, 20.0).unwrap();
        assert!(!r.truncated);
        assert!(
            (joint_rate(&c.scaled(2.0), 20.0).unwrap().rate - 2.0 * r.rate).abs() < 1e-9 * r.rate
        );
        assert_eq!(joint_rate(&c.scaled(0.0), 20.0).unwrap().rate, 0.0);
        assert!(joint_rate(&c, 200.0).unwrap().truncated);
    }

    #[test]
    fn zero_length_crystal_gives_flat_sinc() {
        let pump = bibo_pump(151.3586, 90.0);
        let trace = trace_ring(&pump, 810.0, 8).unwrap();
        let mut mode = CollectionMode::new(trace.samples[2].theta_s_ext, FRAC_PI_2, 100.0).unwrap();
        mode.single_mode = false;
        let grid = symmetric_grid(21, 3e13).unwrap();
        let s = pair_spectrum(&MountedCrystal::new(pump, 0.0), &mode, 0.0, &grid).unwrap();
        for v in &s.values {
            assert_eq!(*v, 1.0);
        }
    }

    #[test]
    fn spectrum_symmetric_on_mirror_azimuth() {
        let pump = bibo_pump(151.3586, 90.0);
        let trace = trace_ring(&pump, 810.0, 8).unwrap();
        let mode = CollectionMode::new(trace.samples[2].theta_s_ext, FRAC_PI_2, 100.0).unwrap();
        let grid = symmetric_grid(41, 4e13).unwrap();
        let s = pair_spectrum(&MountedCrystal::new(pump, 0.0), &mode, 0.8, &grid).unwrap();
        let n = s.values.len();
        for k in 0..n {
            let (a, b) = (s.values[k], s.values[n - 1 - k]);
            assert!((a - b).abs() < 1e-9 * a.max(b).max(1e-12), "{a} {b}");
        }
    }

    #[test]
    fn point_a_spectra_coincide() {
        let mut setup = SandwichSetup::new(bibo_pump(151.3586, 90.0), 0.8, 100.0);
        setup.grid = symmetric_grid(201, 6e13).unwrap();
        let s = setup.spectra_at(std::f64::consts::FRAC_PI_4).unwrap();
        for (a, b) in s.crystal_1.values.iter().zip(&s.crystal_2.values) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!((overlap_integral(&s.crystal_1, &s.crystal_2).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn midpoint_between_coincident_rings() {
        let trace = trace_ring(&bibo_pump(151.3586, 90.0), 810.0, 8).unwrap();
        let (m, interp) = midpoint_collection(&trace, &trace, 0.0, 50.0).unwrap();
        assert!(!interp);
        assert_eq!(m.theta_ext, trace.samples[0].theta_s_ext);
        let (_, interp) = midpoint_collection(&trace, &trace, 0.1, 50.0).unwrap();
        assert!(interp);
    }

    #[test]
    fn point_b_midpoint_is_between_rings() {
        let setup = SandwichSetup::new(bibo_pump(151.3586, 90.0), 0.8, 100.0);
        let (r1, r2) = setup.rings().unwrap();
        let (m, _) = midpoint_collection(&r1, &r2, 0.0, 100.0).unwrap();
        let (a, b) = (
            r1.exterior_angle_at(0.0).unwrap().0,
            r2.exterior_angle_at(0.0).unwrap().0,
        );
        assert!(m.theta_ext > a.min(b) && m.theta_ext < a.max(b));
    }
}
