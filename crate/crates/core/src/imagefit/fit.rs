use nalgebra::{DMatrix, DVector, SMatrix, SVector};
use rayon::prelude::*;

use super::{
    fit_initialization, model_intensity, synthesize, GridGeometry, ImageGrid, NoiseModel, RingModel,
};
use crate::error::{Error, Result};

pub const MAX_ITERATIONS: usize = 500;
const REL_COST_TOL: f64 = 1e-10;
const STEP_TOL: f64 = 1e-12;
const NPAR: usize = 7;

type Params = SVector<f64, NPAR>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RingFit {
    pub model: RingModel,
    pub ecc: f64,
    pub stat_error: f64,
    /// Per-pixel RMS of the residuals.
    pub residual_rms: f64,
    pub iterations: usize,
}

// p = [ln A, background, x0, y0, ln a, ln b, ln sigma]
fn pack(m: &RingModel) -> Params {
    Params::from([
        m.amplitude.ln(),
        m.background,
        m.x0,
        m.y0,
        m.a.ln(),
        m.b.ln(),
        m.sigma.ln(),
    ])
}

fn unpack(p: &Params) -> RingModel {
    RingModel {
        amplitude: p[0].exp(),
        background: p[1],
        x0: p[2],
        y0: p[3],
        a: p[4].exp(),
        b: p[5].exp(),
        sigma: p[6].exp(),
    }
}

struct Problem<'a> {
    xs: &'a [f64],
    ys: &'a [f64],
    data: &'a [f64],
}

impl Problem<'_> {
    fn residuals(&self, p: &Params) -> DVector<f64> {
        let m = unpack(p);
        DVector::from_iterator(
            self.data.len(),
            self.xs
                .iter()
                .zip(self.ys)
                .zip(self.data)
                .map(|((x, y), d)| model_intensity(&m, *x, *y) - d),
        )
    }

    fn jacobian(&self, p: &Params) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(self.data.len(), NPAR);
        for k in 0..NPAR {
            let h = 1e-6 * p[k].abs().max(1.0);
            let mut hi = *p;
            let mut lo = *p;
            hi[k] += h;
            lo[k] -= h;
            let col = (self.residuals(&hi) - self.residuals(&lo)) / (2.0 * h);
            j.set_column(k, &col);
        }
        j
    }
}

/// Levenberg-Marquardt fit of the seven-parameter ring model to `image`.
pub fn fit_ring(image: &ImageGrid, init: &RingModel) -> Result<RingFit> {
    init.validate()?;
    let (xs, ys) = image.samples();
    let prob = Problem {
        xs: &xs,
        ys: &ys,
        data: &image.pixels,
    };
    let n = image.pixels.len();
    if n <= NPAR {
        return Err(Error::Argument(format!(
            "{n} pixels cannot constrain {NPAR} parameters"
        )));
    }

    let mut p = pack(init);
    let mut r = prob.residuals(&p);
    let mut cost = r.norm_squared();
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < MAX_ITERATIONS {
        iterations += 1;
        if cost == 0.0 {
            converged = true;
            break;
        }
        let j = prob.jacobian(&p);
        let jtj: SMatrix<f64, NPAR, NPAR> = (j.transpose() * &j)
            .fixed_view::<NPAR, NPAR>(0, 0)
            .into_owned();
        let g: Params = (j.transpose() * &r).fixed_rows::<NPAR>(0).into_owned();
        loop {
            let mut a = jtj;
            for k in 0..NPAR {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let step = match a.cholesky() {
                Some(c) => -c.solve(&g),
                None => {
                    lambda *= 10.0;
                    if lambda > 1e20 {
                        break;
                    }
                    continue;
                }
            };
            let trial = p + step;
            let r_trial = prob.residuals(&trial);
            let c_trial = r_trial.norm_squared();
            if c_trial.is_finite() && c_trial <= cost {
                let rel = (cost - c_trial) / cost;
                p = trial;
                r = r_trial;
                cost = c_trial;
                lambda = (lambda / 3.0).max(1e-12);
                if rel < REL_COST_TOL || step.norm() < STEP_TOL {
                    converged = true;
                }
                break;
            }
            lambda *= 4.0;
            if step.norm() < STEP_TOL {
                // no smaller step improves the cost: at the optimum to working precision
                converged = true;
                break;
            }
            if lambda > 1e20 {
                break;
            }
        }
        if converged || lambda > 1e20 {
            break;
        }
    }

    if !converged {
        let message = if lambda > 1e20 {
            "damping diverged without reducing the cost".to_string()
        } else {
            format!("iteration cap of {MAX_ITERATIONS} reached")
        };
        return Err(Error::Fit {
            message,
            best_cost: cost,
        });
    }

    let model = unpack(&p);
    model.validate().map_err(|e| Error::Fit {
        message: format!("fit left the valid region: {e}"),
        best_cost: cost,
    })?;
    let j = prob.jacobian(&p);
    let jtj: SMatrix<f64, NPAR, NPAR> = (j.transpose() * &j)
        .fixed_view::<NPAR, NPAR>(0, 0)
        .into_owned();
    let s2 = cost / (n - NPAR) as f64;
    let cov = jtj.try_inverse().map(|inv| inv * s2);
    let ecc = model.eccentricity();
    let stat_error = match cov {
        Some(c) => ecc_error(ecc, c[(4, 4)] + c[(5, 5)] - 2.0 * c[(4, 5)]),
        None => f64::NAN,
    };
    Ok(RingFit {
        model,
        ecc,
        stat_error,
        residual_rms: (cost / n as f64).sqrt(),
        iterations,
    })
}

/// Standard error of the eccentricity given the variance of `ln a - ln b`.
///
/// Linear propagation through `ecc = sqrt(1 - exp(-2|d|))`; near a circle the
/// derivative diverges and the error is capped by the typical eccentricity a
/// pure-noise offset of one standard deviation produces.
fn ecc_error(ecc: f64, var_log_ratio: f64) -> f64 {
    let sd = var_log_ratio.max(0.0).sqrt();
    let cap = (1.0 - (-2.0 * sd).exp()).sqrt();
    if ecc <= 0.0 {
        return cap;
    }
    let r2 = 1.0 - ecc * ecc;
    (r2 / ecc * sd).min(cap)
}

/// Initializes and fits one noisy realization per job, in parallel.
pub fn fit_batch(jobs: &[(RingModel, NoiseModel)], geometry: GridGeometry) -> Vec<Result<RingFit>> {
    jobs.par_iter()
        .map(|(model, noise)| {
            let img = synthesize(model, geometry, Some(*noise))?.image;
            let init = fit_initialization(&img)?;
            fit_ring(&img, &init.model)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RepeatedMeasurement {
    pub mean: f64,
    /// Sample standard deviation of the fitted eccentricities.
    pub spread: f64,
    /// `spread / sqrt(count)`.
    pub standard_error: f64,
    pub count: usize,
}

pub fn repeated_measurement_error(fits: &[RingFit]) -> Result<RepeatedMeasurement> {
    let n = fits.len();
    if n < 3 {
        return Err(Error::Argument(format!("need at least 3 fits, got {n}")));
    }
    let mean = fits.iter().map(|f| f.ecc).sum::<f64>() / n as f64;
    let var = fits.iter().map(|f| (f.ecc - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let spread = var.sqrt();
    Ok(RepeatedMeasurement {
        mean,
        spread,
        standard_error: spread / (n as f64).sqrt(),
        count: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn truth(ecc: f64) -> RingModel {
        RingModel {
            amplitude: 500.0,
            background: 50.0,
            x0: 0.03,
            y0: -0.02,
            a: 1.0,
            b: 1.0,
            sigma: 0.06,
        }
        .with_eccentricity(1.0, ecc)
    }

    fn noise(seed: u64) -> NoiseModel {
        NoiseModel {
            seed,
            poisson: true,
            read_sigma: 4.0,
        }
    }

    fn fit_noisy(m: &RingModel, seed: u64) -> RingFit {
        let img = synthesize(m, GridGeometry::default(), Some(noise(seed)))
            .unwrap()
            .image;
        let init = fit_initialization(&img).unwrap();
        fit_ring(&img, &init.model).unwrap()
    }

    #[test]
    fn noiseless_recovery_is_exact() {
        let m = truth(0.172);
        let img = synthesize(&m, GridGeometry::default(), None).unwrap().image;
        let init = fit_initialization(&img).unwrap();
        let f = fit_ring(&img, &init.model).unwrap();
        let got = [
            f.model.amplitude,
            f.model.background,
            f.model.x0,
            f.model.y0,
            f.model.a,
            f.model.b,
            f.model.sigma,
        ];
        let want = [m.amplitude, m.background, m.x0, m.y0, m.a, m.b, m.sigma];
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() <= 1e-8 * w.abs().max(1.0), "{g} vs {w}");
        }
        assert!((f.ecc - 0.172).abs() < 1e-8);
    }

    #[test]
    fn noisy_bibo_like_ring() {
        let f = fit_noisy(&truth(0.172), 11);
        assert!((f.ecc - 0.172).abs() < 0.005, "{}", f.ecc);
        assert!(f.stat_error > 0.0 && f.stat_error < 0.01);
    }

    #[test]
    fn noisy_circle_floor() {
        let f = fit_noisy(&truth(0.0), 5);
        assert!(f.ecc <= 0.02, "{}", f.ecc);
        assert!(
            f.stat_error > 0.0 && f.stat_error <= 0.03,
            "{}",
            f.stat_error
        );
    }

    #[test]
    fn swapped_axes_give_same_ecc() {
        let m = truth(0.3);
        let swapped = RingModel {
            a: m.b,
            b: m.a,
            ..m
        };
        let f1 = fit_noisy(&m, 3);
        let f2 = fit_noisy(&swapped, 3);
        assert!(f1.model.a > f1.model.b && f2.model.b > f2.model.a);
        assert!((f1.ecc - f2.ecc).abs() < 2.0 * (f1.stat_error + f2.stat_error));
    }

    #[test]
    fn rotated_image_gives_same_ecc() {
        let m = truth(0.25);
        let img = synthesize(&m, GridGeometry::default(), Some(noise(8)))
            .unwrap()
            .image;
        let f1 = fit_ring(&img, &fit_initialization(&img).unwrap().model).unwrap();
        let rot = img.rotated_90();
        let f2 = fit_ring(&rot, &fit_initialization(&rot).unwrap().model).unwrap();
        assert!(
            (f1.ecc - f2.ecc).abs() <= f1.stat_error,
            "{} {}",
            f1.ecc,
            f2.ecc
        );
    }

    #[test]
    fn invalid_start_rejected() {
        let m = truth(0.1);
        let img = synthesize(&m, GridGeometry::default(), None).unwrap().image;
        let bad = RingModel { sigma: -1.0, ..m };
        assert!(matches!(fit_ring(&img, &bad), Err(Error::Argument(_))));
    }

    #[test]
    fn repeated_measurements() {
        let f = fit_noisy(&truth(0.172), 1);
        let r = repeated_measurement_error(&[f, f, f]).unwrap();
        assert_eq!(r.spread, 0.0);
        assert!((r.mean - f.ecc).abs() < 1e-15);
        assert!(repeated_measurement_error(&[f, f]).is_err());
    }

    #[test]
    fn ten_realizations_spread_and_bias() {
        let m = truth(0.172);
        let jobs: Vec<_> = (0..10).map(|k| (m, noise(100 + k))).collect();
        let fits: Vec<RingFit> = fit_batch(&jobs, GridGeometry::default())
            .into_iter()
            .collect::<Result<_>>()
            .unwrap();
        let r = repeated_measurement_error(&fits).unwrap();
        assert!(r.spread < 0.007, "{}", r.spread);
        assert!(
            (r.mean - 0.172).abs() < 2.0 * r.standard_error + 1e-4,
            "{} ± {}",
            r.mean,
            r.standard_error
        );
    }

    #[test]
    fn ecc_error_limits() {
        assert!(ecc_error(0.0, 1e-4) > 0.0);
        let lin = ecc_error(0.3, 1e-8);
        assert!((lin - 0.91 / 0.3 * 1e-4).abs() < 1e-12);
    }
}
