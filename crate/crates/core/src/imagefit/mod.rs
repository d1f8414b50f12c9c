//! Synthetic ring images and the seven-parameter elliptical ring fit.
//!
//! Coordinates are object-plane centimetres with the origin at the image
//! centre; `x` runs along pixel columns and `y` along rows.

mod fit;
mod io;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::error::{Error, Result};

pub use fit::{
    fit_batch, fit_ring, repeated_measurement_error, RepeatedMeasurement, RingFit, MAX_ITERATIONS,
};
pub use io::{read_csv, read_image, read_pgm, write_csv, write_pgm};

pub const DEFAULT_PIXEL_PITCH_UM: f64 = 24.0;
pub const DEFAULT_MAGNIFICATION: f64 = 8.6;
pub const DEFAULT_SIZE: usize = 125;

/// Seven-parameter elliptical ring with a Gaussian radial profile.
///
/// `a` is the semi-axis along x and `b` along y; either may be the larger.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RingModel {
    pub amplitude: f64,
    pub background: f64,
    pub x0: f64,
    pub y0: f64,
    pub a: f64,
    pub b: f64,
    /// Radial 1-sigma width, cm.
    pub sigma: f64,
}

impl RingModel {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.amplitude,
            self.background,
            self.x0,
            self.y0,
            self.a,
            self.b,
            self.sigma,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument(
                "ring model has non-finite parameters".into(),
            ));
        }
        if !(self.amplitude > 0.0 && self.sigma > 0.0 && self.a > 0.0 && self.b > 0.0) {
            return Err(Error::Argument(
                "ring model needs positive amplitude, width and semi-axes".into(),
            ));
        }
        Ok(())
    }

    pub fn eccentricity(&self) -> f64 {
        let r = self.a.min(self.b) / self.a.max(self.b);
        (1.0 - r * r).max(0.0).sqrt()
    }

    /// A circle of radius `r` turned into an ellipse of eccentricity `ecc` with
    /// the major axis along x and the same geometric-mean radius.
    pub fn with_eccentricity(self, radius: f64, ecc: f64) -> Self {
        let ratio = (1.0 - ecc * ecc).sqrt();
        let a = radius / ratio.sqrt();
        Self {
            a,
            b: a * ratio,
            ..self
        }
    }
}

/// Intensity of `model` at object-plane point `(x, y)`.
pub fn model_intensity(model: &RingModel, x: f64, y: f64) -> f64 {
    let u = (x - model.x0) / model.a;
    let v = (y - model.y0) / model.b;
    let r = u.hypot(v);
    let d = (r - 1.0) * (model.a * model.b).sqrt();
    model.background + model.amplitude * (-d * d / (2.0 * model.sigma * model.sigma)).exp()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridGeometry {
    pub width: usize,
    pub height: usize,
    pub pixel_pitch_um: f64,
    pub magnification: f64,
}

impl Default for GridGeometry {
    fn default() -> Self {
        Self {
            width: DEFAULT_SIZE,
            height: DEFAULT_SIZE,
            pixel_pitch_um: DEFAULT_PIXEL_PITCH_UM,
            magnification: DEFAULT_MAGNIFICATION,
        }
    }
}

impl GridGeometry {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Argument(format!(
                "image dimensions must be positive, got {}x{}",
                self.width, self.height
            )));
        }
        if !(self.pixel_pitch_um > 0.0 && self.magnification > 0.0) {
            return Err(Error::Argument(
                "pixel pitch and magnification must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Object-plane size of one pixel, cm.
    pub fn pixel_cm(&self) -> f64 {
        self.pixel_pitch_um * 1e-4 * self.magnification
    }

    pub fn x_of(&self, col: usize) -> f64 {
        (col as f64 + 0.5 - 0.5 * self.width as f64) * self.pixel_cm()
    }

    pub fn y_of(&self, row: usize) -> f64 {
        (row as f64 + 0.5 - 0.5 * self.height as f64) * self.pixel_cm()
    }

    /// Whether a ring of `model` plus four widths fits inside the grid.
    pub fn covers(&self, model: &RingModel) -> bool {
        let half_w = 0.5 * self.width as f64 * self.pixel_cm();
        let half_h = 0.5 * self.height as f64 * self.pixel_cm();
        let m = 4.0 * model.sigma;
        model.x0.abs() + model.a + m <= half_w && model.y0.abs() + model.b + m <= half_h
    }
}

/// Row-major image, rows along y.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    pub geometry: GridGeometry,
    pub pixels: Vec<f64>,
}

impl ImageGrid {
    pub fn new(geometry: GridGeometry, pixels: Vec<f64>) -> Result<Self> {
        geometry.validate()?;
        if pixels.len() != geometry.width * geometry.height {
            return Err(Error::Argument(format!(
                "expected {} pixels for {}x{}, got {}",
                geometry.width * geometry.height,
                geometry.width,
                geometry.height,
                pixels.len()
            )));
        }
        if pixels.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::Argument(
                "pixel intensities must be finite and non-negative".into(),
            ));
        }
        Ok(Self { geometry, pixels })
    }

    pub fn get(&self, col: usize, row: usize) -> f64 {
        self.pixels[row * self.geometry.width + col]
    }

    /// Image turned by a quarter turn: the new x axis is the old y axis and
    /// the new y axis is the old negative x axis.
    pub fn rotated_90(&self) -> ImageGrid {
        let (w, h) = (self.geometry.width, self.geometry.height);
        let mut pixels = vec![0.0; w * h];
        for row in 0..w {
            for col in 0..h {
                pixels[row * h + col] = self.get(w - 1 - row, col);
            }
        }
        ImageGrid {
            geometry: GridGeometry {
                width: h,
                height: w,
                ..self.geometry
            },
            pixels,
        }
    }

    /// Pixel centres and intensities as flat arrays.
    pub(crate) fn samples(&self) -> (Vec<f64>, Vec<f64>) {
        let g = &self.geometry;
        let mut xs = Vec::with_capacity(self.pixels.len());
        let mut ys = Vec::with_capacity(self.pixels.len());
        for row in 0..g.height {
            for col in 0..g.width {
                xs.push(g.x_of(col));
                ys.push(g.y_of(row));
            }
        }
        (xs, ys)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub seed: u64,
    pub poisson: bool,
    pub read_sigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Synthesized {
    pub image: ImageGrid,
    /// The ring plus four widths does not fit inside the grid.
    pub coverage_warning: bool,
}

/// Renders `model` on the pixel centres of `geometry`, optionally with shot
/// and read noise. Noisy pixels are clipped at zero.
pub fn synthesize(
    model: &RingModel,
    geometry: GridGeometry,
    noise: Option<NoiseModel>,
) -> Result<Synthesized> {
    geometry.validate()?;
    model.validate()?;
    if model.background < 0.0 {
        return Err(Error::Argument("background must be non-negative".into()));
    }
    let mut pixels = Vec::with_capacity(geometry.width * geometry.height);
    for row in 0..geometry.height {
        for col in 0..geometry.width {
            pixels.push(model_intensity(
                model,
                geometry.x_of(col),
                geometry.y_of(row),
            ));
        }
    }
    if let Some(n) = noise {
        if !(n.read_sigma >= 0.0) {
            return Err(Error::Argument("read noise must be non-negative".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(n.seed);
        let read = Normal::new(0.0, n.read_sigma).map_err(|e| Error::Argument(e.to_string()))?;
        for p in pixels.iter_mut() {
            let mut v = *p;
            if n.poisson && v > 0.0 {
                v = Poisson::new(v)
                    .map_err(|e| Error::Argument(e.to_string()))?
                    .sample(&mut rng);
            }
            if n.read_sigma > 0.0 {
                v += read.sample(&mut rng);
            }
            *p = v.max(0.0);
        }
    }
    let coverage_warning = !geometry.covers(model);
    Ok(Synthesized {
        image: ImageGrid { geometry, pixels },
        coverage_warning,
    })
}

/// Seeded random rings resembling camera data: amplitude 300-800 counts over a
/// 20-80 count background, geometric-mean radius 0.8-1.0 cm, width
/// 0.04-0.08 cm, centre within 0.05 cm of the image centre and eccentricity
/// uniform in `[0, ecc_max)` with the major axis along x or y at random.
pub fn random_ring_models(seed: u64, count: usize, ecc_max: f64) -> Vec<RingModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let ecc = rng.gen_range(0.0..ecc_max);
            let m = RingModel {
                amplitude: rng.gen_range(300.0..800.0),
                background: rng.gen_range(20.0..80.0),
                x0: rng.gen_range(-0.05..0.05),
                y0: rng.gen_range(-0.05..0.05),
                a: 1.0,
                b: 1.0,
                sigma: rng.gen_range(0.04..0.08),
            }
            .with_eccentricity(rng.gen_range(0.8..1.0), ecc);
            if rng.gen_bool(0.5) {
                RingModel {
                    a: m.b,
                    b: m.a,
                    ..m
                }
            } else {
                m
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Initialization {
    pub model: RingModel,
    /// The ring comes within four widths of the image edge.
    pub touches_border: bool,
    /// Robust standard deviation of the border pixels.
    pub noise: f64,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Starting values for [`fit_ring`] from simple image statistics.
pub fn fit_initialization(image: &ImageGrid) -> Result<Initialization> {
    let g = image.geometry;
    let (w, h) = (g.width, g.height);
    if w < 5 || h < 5 {
        return Err(Error::Initialization(
            "image smaller than 5x5 pixels".into(),
        ));
    }
    let mut border: Vec<f64> = Vec::with_capacity(2 * (w + h));
    for col in 0..w {
        border.push(image.get(col, 0));
        border.push(image.get(col, h - 1));
    }
    for row in 1..h - 1 {
        border.push(image.get(0, row));
        border.push(image.get(w - 1, row));
    }
    let background = median(&mut border);
    let mut dev: Vec<f64> = border.iter().map(|v| (v - background).abs()).collect();
    let noise = 1.4826 * median(&mut dev);

    let peak = image.pixels.iter().fold(f64::MIN, |m, v| m.max(*v)) - background;
    if !(peak > 3.0 * noise && peak > 1e-9 * (background.abs() + 1.0)) {
        return Err(Error::Initialization(format!(
            "no ring-like feature: peak {peak:.3} above background vs noise {noise:.3}"
        )));
    }

    let threshold = (3.0 * noise).max(0.2 * peak);
    let (xs, ys) = image.samples();
    let (mut sw, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for ((x, y), v) in xs.iter().zip(&ys).zip(&image.pixels) {
        let d = v - background;
        if d > threshold {
            sw += d;
            sx += d * x;
            sy += d * y;
        }
    }
    let (x0, y0) = (sx / sw, sy / sw);

    // radial profile in half-pixel bins
    let px = g.pixel_cm();
    let bin = 0.5 * px;
    let radii: Vec<f64> = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (x - x0).hypot(y - y0))
        .collect();
    let nbins = (radii.iter().fold(0.0, |m: f64, r| m.max(*r)) / bin) as usize + 1;
    let mut sum = vec![0.0; nbins];
    let mut count = vec![0usize; nbins];
    for (r, v) in radii.iter().zip(&image.pixels) {
        let k = (r / bin) as usize;
        sum[k] += v - background;
        count[k] += 1;
    }
    let profile: Vec<f64> = sum
        .iter()
        .zip(&count)
        .map(|(s, c)| if *c > 0 { s / *c as f64 } else { f64::NAN })
        .collect();
    let (kmax, amp) = profile
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_finite())
        .fold(
            (0, f64::MIN),
            |best, (k, v)| if *v > best.1 { (k, *v) } else { best },
        );
    let radius = (kmax as f64 + 0.5) * bin;
    let half = 0.5 * amp;
    let centre_of = |k: usize| (k as f64 + 0.5) * bin;
    let crossing = |dir: isize| -> f64 {
        let mut k = kmax as isize;
        loop {
            let next = k + dir;
            if next < 0 || next as usize >= nbins || !profile[next as usize].is_finite() {
                return centre_of(k as usize);
            }
            let (v0, v1) = (profile[k as usize], profile[next as usize]);
            if v1 <= half {
                let t = (v0 - half) / (v0 - v1);
                return centre_of(k as usize) + dir as f64 * t * bin;
            }
            k = next;
        }
    };
    let fwhm = (crossing(1) - crossing(-1)).max(bin);
    let sigma = fwhm / (8.0 * std::f64::consts::LN_2).sqrt();

    let half_w = 0.5 * w as f64 * px;
    let half_h = 0.5 * h as f64 * px;
    let reach = radius + 4.0 * sigma;
    let touches_border = x0.abs() + reach > half_w || y0.abs() + reach > half_h;

    Ok(Initialization {
        model: RingModel {
            amplitude: amp.max(1e-12),
            background,
            x0,
            y0,
            a: radius,
            b: radius,
            sigma,
        },
        touches_border,
        noise,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn truth(ecc: f64) -> RingModel {
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

    #[test]
    fn on_ring_peak_and_far_tail() {
        let m = truth(0.3);
        let v = model_intensity(&m, m.x0 + m.a, m.y0);
        assert!((v - 550.0).abs() < 1e-12);
        let v = model_intensity(&m, m.x0, m.y0 + m.b);
        assert!((v - 550.0).abs() < 1e-12);
        assert!((model_intensity(&m, 40.0, 40.0) - 50.0).abs() < 1e-12);
    }

    #[test]
    fn circular_model_is_radial() {
        let m = truth(0.0);
        let r = 0.97;
        let vals: Vec<f64> = (0..12)
            .map(|k| {
                let t = k as f64 * 0.5;
                model_intensity(&m, m.x0 + r * t.cos(), m.y0 + r * t.sin())
            })
            .collect();
        for v in &vals {
            assert!((v - vals[0]).abs() < 1e-9);
        }
    }

    #[test]
    fn eccentricity_helper() {
        let m = truth(0.172);
        assert!((m.eccentricity() - 0.172).abs() < 1e-12);
        assert!((m.a * m.b - 1.0).abs() < 1e-12);
        assert!(m.a > m.b);
    }

    #[test]
    fn noiseless_synthesis_is_exact() {
        let g = GridGeometry::default();
        let m = truth(0.2);
        let s = synthesize(&m, g, None).unwrap();
        assert!(!s.coverage_warning);
        assert_eq!(
            s.image.get(7, 11),
            model_intensity(&m, g.x_of(7), g.y_of(11))
        );
    }

    #[test]
    fn synthesis_is_deterministic() {
        let n = NoiseModel {
            seed: 9,
            poisson: true,
            read_sigma: 4.0,
        };
        let a = synthesize(&truth(0.2), GridGeometry::default(), Some(n)).unwrap();
        let b = synthesize(&truth(0.2), GridGeometry::default(), Some(n)).unwrap();
        assert_eq!(a, b);
        let c = synthesize(
            &truth(0.2),
            GridGeometry::default(),
            Some(NoiseModel { seed: 10, ..n }),
        )
        .unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn pixel_mean_converges_to_model() {
        let g = GridGeometry {
            width: 9,
            height: 9,
            ..GridGeometry::default()
        };
        let m = RingModel {
            a: 0.05,
            b: 0.05,
            sigma: 0.03,
            ..truth(0.0)
        };
        let n = 1000;
        let mut mean = vec![0.0; 81];
        let mut sq = vec![0.0; 81];
        for seed in 0..n {
            let s = synthesize(
                &m,
                g,
                Some(NoiseModel {
                    seed,
                    poisson: true,
                    read_sigma: 4.0,
                }),
            )
            .unwrap();
            for (k, v) in s.image.pixels.iter().enumerate() {
                mean[k] += v / n as f64;
                sq[k] += v * v / n as f64;
            }
        }
        for row in 0..9 {
            for col in 0..9 {
                let k = row * 9 + col;
                let sd = (sq[k] - mean[k] * mean[k]).sqrt();
                let expected = model_intensity(&m, g.x_of(col), g.y_of(row));
                assert!((mean[k] - expected).abs() < 3.0 * sd / (n as f64).sqrt() + 1e-9);
            }
        }
    }

    #[test]
    fn bad_geometry_rejected() {
        let g = GridGeometry {
            width: 0,
            ..GridGeometry::default()
        };
        assert!(matches!(
            synthesize(&truth(0.0), g, None),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn coverage_warning_for_large_ring() {
        let m = RingModel {
            a: 1.3,
            b: 1.3,
            ..truth(0.0)
        };
        assert!(
            synthesize(&m, GridGeometry::default(), None)
                .unwrap()
                .coverage_warning
        );
    }

    #[test]
    fn initialization_close_to_truth() {
        let m = truth(0.172);
        let s = synthesize(&m, GridGeometry::default(), None).unwrap();
        let init = fit_initialization(&s.image).unwrap();
        let px = GridGeometry::default().pixel_cm();
        let r = (m.a * m.b).sqrt();
        assert!((init.model.background - m.background).abs() < 0.1 * m.background);
        assert!((init.model.amplitude - m.amplitude).abs() < 0.1 * m.amplitude);
        assert!((init.model.x0 - m.x0).abs() < px && (init.model.y0 - m.y0).abs() < px);
        assert!((init.model.a - r).abs() < 0.1 * r);
        assert!(
            (init.model.sigma - m.sigma).abs() < 0.1 * m.sigma,
            "{}",
            init.model.sigma
        );
        assert!(!init.touches_border);
    }

    #[test]
    fn flat_image_fails_initialization() {
        let g = GridGeometry::default();
        let img = ImageGrid::new(g, vec![50.0; g.width * g.height]).unwrap();
        assert!(matches!(
            fit_initialization(&img),
            Err(Error::Initialization(_))
        ));
    }

    #[test]
    fn border_touching_ring_is_flagged() {
        let m = RingModel {
            a: 1.2,
            b: 1.2,
            ..truth(0.0)
        };
        let s = synthesize(&m, GridGeometry::default(), None).unwrap();
        assert!(fit_initialization(&s.image).unwrap().touches_border);
    }

    #[test]
    fn rotation_swaps_axes() {
        let g = GridGeometry {
            width: 125,
            height: 101,
            ..GridGeometry::default()
        };
        let m = RingModel {
            x0: 0.0,
            y0: 0.0,
            ..truth(0.3)
        };
        let img = synthesize(&m, g, None).unwrap().image;
        let rot = img.rotated_90();
        assert_eq!(rot.geometry.width, 101);
        let swapped = RingModel {
            a: m.b,
            b: m.a,
            ..m
        };
        let expected = synthesize(&swapped, rot.geometry, None).unwrap().image;
        for (a, b) in rot.pixels.iter().zip(&expected.pixels) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
