mod output;
mod repro;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use ringtrace::imagefit::{
    fit_initialization, fit_ring, read_image, synthesize, write_csv as write_image_csv, write_pgm,
    GridGeometry, NoiseModel, RingModel,
};
use ringtrace::phasematch::{infer_pump_angle, ring_eccentricity, trace_ring};
use ringtrace::smallangle::{
    eccentricity_estimate, term_crossing_wavelength, EccentricitySweep, ExpansionPoint,
};
use ringtrace::spectra::{
    symmetric_grid, SandwichSetup, DEFAULT_GRID_HALF_WIDTH, DEFAULT_GRID_POINTS,
};
use ringtrace::walkoff::{exit_face_comparison, walkoff_ring};
use ringtrace::{Branch, CrystalRegistry, Error, PumpConfig, RingPlane};

use output::{num, write_csv, write_json};

#[derive(Parser)]
#[command(
    name = "ringtrace",
    version,
    about = "Type-I down-conversion ring geometry, walk-off, ring-image fits and sandwich spectra"
)]
struct Cli {
    /// Crystal data file replacing the built-in table.
    #[arg(long, global = true, env = "RINGTRACE_CRYSTAL_DB")]
    crystal_db: Option<PathBuf>,
    /// Cap on worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Write the result here instead of standard output.
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct PumpArgs {
    #[arg(long)]
    crystal: String,
    /// Pump polar angle in the crystal frame, degrees.
    #[arg(long, allow_hyphen_values = true)]
    theta_p: f64,
    /// Pump azimuth in the crystal frame, degrees.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    phi_p: f64,
    #[arg(long, default_value_t = 405.0)]
    lambda_p: f64,
    /// Signal wavelength, nm; defaults to degeneracy.
    #[arg(long)]
    lambda_s: Option<f64>,
    #[arg(long, default_value = "fast")]
    pump_branch: Branch,
}

#[derive(Args, Clone)]
struct CutArgs {
    #[arg(long)]
    crystal: String,
    #[arg(long, allow_hyphen_values = true)]
    theta_p: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    phi_p: f64,
}

#[derive(Args, Clone)]
struct OpticsArgs {
    /// Camera pixel pitch, micrometres.
    #[arg(long, default_value_t = ringtrace::imagefit::DEFAULT_PIXEL_PITCH_UM)]
    pixel_pitch: f64,
    #[arg(long, default_value_t = ringtrace::imagefit::DEFAULT_MAGNIFICATION)]
    magnification: f64,
}

#[derive(Args, Clone)]
struct SandwichArgs {
    #[command(flatten)]
    pump: PumpArgs,
    #[arg(long, default_value_t = 0.8)]
    length_mm: f64,
    /// Collection-mode waist at the crystal, micrometres.
    #[arg(long, default_value_t = 100.0)]
    waist_um: f64,
    /// Lab azimuth of the collection mode, degrees.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    phi: f64,
    #[arg(long, default_value_t = DEFAULT_GRID_POINTS)]
    grid_points: usize,
    /// Grid half-width in angular frequency, rad/s.
    #[arg(long, default_value_t = DEFAULT_GRID_HALF_WIDTH)]
    grid_half_width: f64,
    #[arg(long, default_value_t = 360)]
    ring_samples: usize,
}

#[derive(Subcommand)]
enum Command {
    /// List the crystals in the data table.
    Crystals {
        /// Also report principal indices at this wavelength, nm.
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Trace the emission ring (CSV).
    Ring {
        #[command(flatten)]
        pump: PumpArgs,
        #[arg(long, default_value_t = 360)]
        samples: usize,
    },
    /// Ring eccentricity from the full solver and the small-angle expansion (JSON).
    Ecc {
        #[command(flatten)]
        pump: PumpArgs,
        #[arg(long, default_value_t = 360)]
        samples: usize,
    },
    /// Pump angle that places the exterior signal angle at a target (JSON).
    InferTheta {
        #[arg(long)]
        crystal: String,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        phi_p: f64,
        #[arg(long, default_value_t = 405.0)]
        lambda_p: f64,
        #[arg(long)]
        lambda_s: Option<f64>,
        /// Target exterior signal angle, degrees.
        #[arg(long)]
        target_ext: f64,
        /// Signal azimuth at which the target applies, degrees.
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        phi_s: f64,
        #[arg(long, default_value_t = 1.0)]
        theta_min: f64,
        #[arg(long, default_value_t = 179.0)]
        theta_max: f64,
        #[arg(long, default_value = "fast")]
        pump_branch: Branch,
    },
    /// Wavelength of minimum small-angle eccentricity (JSON).
    MinLambda {
        #[command(flatten)]
        cut: CutArgs,
        #[arg(long, default_value_t = 700.0)]
        lo: f64,
        #[arg(long, default_value_t = 800.0)]
        hi: f64,
        /// Degenerate wavelength at which the cut's detuning is defined, nm.
        #[arg(long, default_value_t = 810.0)]
        reference: f64,
    },
    /// Eccentricity terms and estimate versus wavelength (CSV).
    Terms {
        #[command(flatten)]
        cut: CutArgs,
        #[arg(long, default_value_t = 700.0)]
        lo: f64,
        #[arg(long, default_value_t = 800.0)]
        hi: f64,
        #[arg(long, default_value_t = 1.0)]
        step: f64,
        #[arg(long, default_value_t = 810.0)]
        reference: f64,
    },
    /// Signal walk-off angle around the ring (CSV).
    Walkoff {
        #[command(flatten)]
        pump: PumpArgs,
        #[arg(long, default_value_t = 360)]
        samples: usize,
    },
    /// Exit-face ring shapes from wavevectors and Poynting vectors (JSON).
    Exitface {
        #[command(flatten)]
        pump: PumpArgs,
        #[arg(long, default_value_t = 0.8)]
        length_mm: f64,
    },
    /// Pair spectra of both sandwich crystals at one collection azimuth (CSV).
    Spectra {
        #[command(flatten)]
        sandwich: SandwichArgs,
    },
    /// Spectral overlap and joint rates at one collection azimuth (JSON).
    Overlap {
        #[command(flatten)]
        sandwich: SandwichArgs,
        /// Wavelength band for the joint rate, nm.
        #[arg(long, default_value_t = 20.0)]
        band_nm: f64,
    },
    /// Render a ring image to a .pgm or .csv file.
    Synth {
        /// Destination image (.pgm or .csv).
        #[arg(long)]
        image: PathBuf,
        #[arg(long, default_value_t = 500.0)]
        amplitude: f64,
        #[arg(long, default_value_t = 50.0)]
        background: f64,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        x0: f64,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        y0: f64,
        /// Geometric-mean radius, cm.
        #[arg(long, default_value_t = 1.0)]
        radius: f64,
        /// Eccentricity, major axis along x.
        #[arg(long, default_value_t = 0.0)]
        ecc: f64,
        /// Swap the axes so the major axis lies along y.
        #[arg(long)]
        major_y: bool,
        /// Radial width, cm.
        #[arg(long, default_value_t = 0.06)]
        sigma: f64,
        #[arg(long, default_value_t = ringtrace::imagefit::DEFAULT_SIZE)]
        width: usize,
        #[arg(long, default_value_t = ringtrace::imagefit::DEFAULT_SIZE)]
        height: usize,
        #[command(flatten)]
        optics: OpticsArgs,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        no_poisson: bool,
        #[arg(long, default_value_t = 4.0)]
        read_noise: f64,
        /// Skip all noise.
        #[arg(long)]
        noiseless: bool,
    },
    /// Fit the seven-parameter ring model to an image (JSON).
    Fit {
        /// Source image (.pgm or .csv).
        #[arg(long)]
        image: PathBuf,
        #[command(flatten)]
        optics: OpticsArgs,
    },
    /// Run the full reproduction suite and write a summary report (JSON).
    Repro {
        /// Directory for the plot-ready CSV files.
        #[arg(long)]
        dir: Option<PathBuf>,
    },
}

pub(crate) fn deg(x: f64) -> f64 {
    x.to_radians()
}

fn registry(path: Option<&Path>) -> Result<CrystalRegistry> {
    match path {
        Some(p) => Ok(CrystalRegistry::load(p)?),
        None => Ok(CrystalRegistry::builtin()),
    }
}

fn check_samples(n: usize) -> Result<(), Error> {
    if n < 4 || !n.is_multiple_of(4) {
        return Err(Error::Argument(format!(
            "samples must be a positive multiple of 4, got {n}"
        )));
    }
    Ok(())
}

impl PumpArgs {
    fn build(&self, reg: &CrystalRegistry) -> Result<(PumpConfig, f64)> {
        let species = reg.get(&self.crystal)?.clone();
        let pump = PumpConfig::new(
            species,
            self.lambda_p,
            deg(self.theta_p),
            deg(self.phi_p),
            self.pump_branch,
        )?;
        Ok((pump, self.lambda_s.unwrap_or(2.0 * self.lambda_p)))
    }
}

impl SandwichArgs {
    fn setup(&self, reg: &CrystalRegistry) -> Result<SandwichSetup> {
        let (pump, lambda_s) = self.pump.build(reg)?;
        if (lambda_s - 2.0 * pump.lambda_p_nm).abs() > 1e-9 {
            return Err(Error::Argument(
                "sandwich spectra are computed at degeneracy; omit --lambda-s".into(),
            )
            .into());
        }
        check_samples(self.ring_samples)?;
        let mut s = SandwichSetup::new(pump, self.length_mm, self.waist_um);
        s.grid = symmetric_grid(self.grid_points, self.grid_half_width)?;
        s.ring_samples = self.ring_samples;
        Ok(s)
    }
}

impl OpticsArgs {
    fn geometry(&self, width: usize, height: usize) -> GridGeometry {
        GridGeometry {
            width,
            height,
            pixel_pitch_um: self.pixel_pitch,
            magnification: self.magnification,
        }
    }
}

fn warn(msg: impl std::fmt::Display) {
    eprintln!("warning: {msg}");
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Argument("--threads must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("cannot size the thread pool")?;
    }
    let reg = registry(cli.crystal_db.as_deref())?;
    let out = cli.output.as_deref();

    match cli.command {
        Command::Crystals { lambda } => {
            let mut list = Vec::new();
            for s in reg.iter() {
                let mut entry = json!({
                    "id": s.id,
                    "symmetry": s.symmetry.to_string(),
                    "valid_range_nm": [num(s.valid_range_nm.0), num(s.valid_range_nm.1)],
                    "source": s.source,
                });
                if let Some(l) = lambda {
                    let p = s.principal_indices(l)?;
                    entry["principal_indices"] = json!([num(p.nx), num(p.ny), num(p.nz)]);
                }
                list.push(entry);
            }
            write_json(out, &json!({ "crystals": list }))
        }
        Command::Ring { pump, samples } => {
            check_samples(samples)?;
            let (pump, lambda_s) = pump.build(&reg)?;
            let t = trace_ring(&pump, lambda_s, samples)?;
            write_csv(
                out,
                &[
                    "phi_s_deg",
                    "theta_s_deg",
                    "theta_i_deg",
                    "theta_s_ext_deg",
                    "n_s",
                    "n_i",
                    "residual",
                ],
                t.samples.iter().map(|s| {
                    vec![
                        s.phi_s.to_degrees(),
                        s.theta_s.to_degrees(),
                        s.theta_i.to_degrees(),
                        s.theta_s_ext.to_degrees(),
                        s.n_s,
                        s.n_i,
                        s.residual,
                    ]
                }),
            )
        }
        Command::Ecc {
            pump: args,
            samples,
        } => {
            check_samples(samples)?;
            let (pump, lambda_s) = args.build(&reg)?;
            let t = trace_ring(&pump, lambda_s, samples)?;
            let ext: Vec<f64> = t
                .samples
                .iter()
                .map(|s| s.theta_s_ext.to_degrees())
                .collect();
            let lo = ext.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = ext.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let at = |d: f64| {
                num(t
                    .sample_at(deg(d))
                    .map_or(f64::NAN, |s| s.theta_s_ext.to_degrees()))
            };
            let small_angle = if (lambda_s - 2.0 * pump.lambda_p_nm).abs() < 1e-9 {
                match ExpansionPoint::at_pump_angle(
                    &pump.species,
                    pump.phi_p,
                    lambda_s,
                    pump.theta_p,
                )
                .and_then(|p| eccentricity_estimate(&p))
                {
                    Ok(e) => json!({ "internal": num(e.internal), "external": num(e.external) }),
                    Err(e) => {
                        warn(format!("small-angle estimate unavailable: {e}"));
                        serde_json::Value::Null
                    }
                }
            } else {
                serde_json::Value::Null
            };
            write_json(
                out,
                &json!({
                    "crystal": args.crystal,
                    "theta_p_deg": num(args.theta_p),
                    "phi_p_deg": num(args.phi_p),
                    "lambda_p_nm": num(pump.lambda_p_nm),
                    "lambda_s_nm": num(lambda_s),
                    "ecc": num(ring_eccentricity(&t, RingPlane::Exterior)?),
                    "ecc_internal": num(ring_eccentricity(&t, RingPlane::Internal)?),
                    "theta_s_ext_deg": { "0": at(0.0), "90": at(90.0), "180": at(180.0), "270": at(270.0) },
                    "theta_s_ext_min_deg": num(lo),
                    "theta_s_ext_max_deg": num(hi),
                    "theta_s_ext_variation_deg": num(hi - lo),
                    "small_angle_ecc": small_angle,
                }),
            )
        }
        Command::InferTheta {
            crystal,
            phi_p,
            lambda_p,
            lambda_s,
            target_ext,
            phi_s,
            theta_min,
            theta_max,
            pump_branch,
        } => {
            let species = reg.get(&crystal)?;
            let lambda_s = lambda_s.unwrap_or(2.0 * lambda_p);
            let inf = infer_pump_angle(
                species,
                deg(phi_p),
                lambda_p,
                lambda_s,
                deg(target_ext),
                deg(phi_s),
                pump_branch,
                (deg(theta_min), deg(theta_max)),
            )?;
            if inf.candidates.len() > 1 {
                warn(format!(
                    "{} pump angles reach the target; reporting the lowest",
                    inf.candidates.len()
                ));
            }
            let pump = PumpConfig::new(
                species.clone(),
                lambda_p,
                inf.theta_p,
                deg(phi_p),
                pump_branch,
            )?;
            let ring = trace_ring(&pump, lambda_s, 360)?;
            write_json(
                out,
                &json!({
                    "theta_p_deg": num(inf.theta_p.to_degrees()),
                    "achieved_ext_deg": num(inf.achieved_ext.to_degrees()),
                    "ecc_at_theta_p": num(ring_eccentricity(&ring, RingPlane::Exterior)?),
                    "candidates_deg": inf.candidates.iter().map(|c| num(c.to_degrees())).collect::<Vec<_>>(),
                }),
            )
        }
        Command::MinLambda {
            cut,
            lo,
            hi,
            reference,
        } => {
            let species = reg.get(&cut.crystal)?;
            let sweep =
                EccentricitySweep::new(species, deg(cut.phi_p), deg(cut.theta_p), reference)?;
            let m = sweep.minimum((lo, hi))?;
            if m.at_edge {
                warn("minimum lies at the edge of the bracket");
            }
            let crossing =
                term_crossing_wavelength(species, deg(cut.phi_p), deg(cut.theta_p), (lo, hi));
            write_json(
                out,
                &json!({
                    "lambda_star_nm": num(m.lambda_star_nm),
                    "ecc_at_min": num(m.ecc_at_min),
                    "bracket": [num(lo), num(hi)],
                    "theta_p_deg": num(cut.theta_p),
                    "delta_theta_p_deg": num(m.delta_theta_p.to_degrees()),
                    "ecc_at_reference": num(sweep.eccentricity(reference)?.internal),
                    "term_crossing_nm": crossing.map(num).unwrap_or(serde_json::Value::Null),
                    "at_edge": m.at_edge,
                }),
            )
        }
        Command::Terms {
            cut,
            lo,
            hi,
            step,
            reference,
        } => {
            if !(step > 0.0 && hi > lo) {
                return Err(
                    Error::Argument("need --hi > --lo and a positive --step".into()).into(),
                );
            }
            let species = reg.get(&cut.crystal)?;
            let sweep =
                EccentricitySweep::new(species, deg(cut.phi_p), deg(cut.theta_p), reference)?;
            let n = ((hi - lo) / step).round() as usize;
            let mut rows = Vec::with_capacity(n + 1);
            for k in 0..=n {
                let l = lo + step * k as f64;
                let t = sweep.terms(l)?;
                rows.push(vec![l, t.term1, t.term2, t.term3, t.estimate]);
            }
            write_csv(
                out,
                &["lambda_nm", "term1", "term2", "term3", "ecc_estimate"],
                rows,
            )
        }
        Command::Walkoff { pump, samples } => {
            check_samples(samples)?;
            let (pump, lambda_s) = pump.build(&reg)?;
            let w = walkoff_ring(&pump, lambda_s, samples)?;
            write_csv(
                out,
                &["phi_s_deg", "rho_deg"],
                w.iter()
                    .map(|s| vec![s.phi_s.to_degrees(), s.rho.to_degrees()]),
            )
        }
        Command::Exitface { pump, length_mm } => {
            let (pump, lambda_s) = pump.build(&reg)?;
            let r = exit_face_comparison(&pump, lambda_s, length_mm)?;
            let w = walkoff_ring(&pump, lambda_s, 4)?;
            write_json(
                out,
                &json!({
                    "crystal_length_mm": num(r.crystal_length_mm),
                    "poynting_ecc": num(r.poynting_ecc),
                    "momentum_ecc": num(r.momentum_ecc),
                    "relative_difference": num(r.relative_difference),
                    "max_separation_mm": num(r.max_separation_mm),
                    "rho_deg": {
                        "0": num(w[0].rho.to_degrees()),
                        "90": num(w[1].rho.to_degrees()),
                        "180": num(w[2].rho.to_degrees()),
                        "270": num(w[3].rho.to_degrees()),
                    },
                }),
            )
        }
        Command::Spectra { sandwich } => {
            let setup = sandwich.setup(&reg)?;
            let s = setup.spectra_at(deg(sandwich.phi))?;
            if s.interpolated {
                warn("collection azimuth not on the ring grid; angles interpolated");
            }
            let rows = s
                .crystal_1
                .grid
                .iter()
                .zip(s.crystal_1.values.iter().zip(&s.crystal_2.values))
                .map(|(w, (a, b))| vec![*w, *a, *b]);
            write_csv(
                out,
                &["delta_omega_rad_s", "s_crystal1", "s_crystal2"],
                rows,
            )
        }
        Command::Overlap { sandwich, band_nm } => {
            let setup = sandwich.setup(&reg)?;
            let r = setup.overlap_at(deg(sandwich.phi), band_nm)?;
            write_json(
                out,
                &json!({
                    "overlap": num(r.overlap),
                    "rate_1": num(r.rate_1),
                    "rate_2": num(r.rate_2),
                    "collection_pointing_deg": {
                        "theta_ext": num(r.collection.theta_ext.to_degrees()),
                        "phi": num(r.collection.phi.to_degrees()),
                    },
                    "waist_um": num(r.collection.waist_um),
                    "band_nm": num(band_nm),
                }),
            )
        }
        Command::Synth {
            image,
            amplitude,
            background,
            x0,
            y0,
            radius,
            ecc,
            major_y,
            sigma,
            width,
            height,
            optics,
            seed,
            no_poisson,
            read_noise,
            noiseless,
        } => {
            if !(0.0..1.0).contains(&ecc) {
                return Err(
                    Error::Argument(format!("eccentricity must lie in [0, 1), got {ecc}")).into(),
                );
            }
            let mut model = RingModel {
                amplitude,
                background,
                x0,
                y0,
                a: radius,
                b: radius,
                sigma,
            }
            .with_eccentricity(radius, ecc);
            if major_y {
                std::mem::swap(&mut model.a, &mut model.b);
            }
            let noise = (!noiseless).then_some(NoiseModel {
                seed,
                poisson: !no_poisson,
                read_sigma: read_noise,
            });
            let s = synthesize(&model, optics.geometry(width, height), noise)?;
            if s.coverage_warning {
                warn("ring extends past the image edge");
            }
            match image.extension().and_then(|e| e.to_str()) {
                Some("csv") => write_image_csv(&s.image, &image)?,
                Some("pgm") => write_pgm(&s.image, &image)?,
                _ => {
                    return Err(
                        Error::Argument("image path must end in .pgm or .csv".into()).into(),
                    )
                }
            }
            write_json(
                out,
                &json!({
                    "image": image.display().to_string(),
                    "width": width,
                    "height": height,
                    "a_cm": num(model.a),
                    "b_cm": num(model.b),
                    "ecc": num(model.eccentricity()),
                    "coverage_warning": s.coverage_warning,
                }),
            )
        }
        Command::Fit { image, optics } => {
            let img = read_image(&image, optics.geometry(1, 1))?;
            let init = fit_initialization(&img)?;
            if init.touches_border {
                warn("ring comes close to the image edge");
            }
            let f = fit_ring(&img, &init.model)?;
            write_json(
                out,
                &json!({
                    "amplitude": num(f.model.amplitude),
                    "background": num(f.model.background),
                    "x0_cm": num(f.model.x0),
                    "y0_cm": num(f.model.y0),
                    "a_cm": num(f.model.a),
                    "b_cm": num(f.model.b),
                    "sigma_cm": num(f.model.sigma),
                    "ecc": num(f.ecc),
                    "ecc_stat_error": num(f.stat_error),
                    "residual_rms": num(f.residual_rms),
                    "iterations": f.iterations,
                    "touches_border": init.touches_border,
                }),
            )
        }
        Command::Repro { dir } => {
            let report = repro::run(&reg, dir.as_deref())?;
            write_json(out, &report)
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(err) if err.is_numeric() => 3,
        Some(_) => 2,
        None => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
