//! Crystal definitions and principal-axis refractive indices.
//!
//! Crystals are described in a TOML data file (see `data/crystals.toml`).
//! Wavelengths enter and leave this module in nanometers; the conversion to
//! micrometers for the dispersion formulas happens only in
//! [`DispersionModel::index_at_um`].

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::Deserialize;

use crate::error::{Error, Result};

/// The crystal database shipped with the library.
pub const DEFAULT_DATABASE: &str = include_str!("../data/crystals.toml");

/// Number of wavelengths at which invariants are checked when loading.
const VALIDATION_SAMPLES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Symmetry {
    UniaxialNegative,
    UniaxialPositive,
    BiaxialNegative,
}

impl Symmetry {
    pub fn is_uniaxial(self) -> bool {
        matches!(
            self,
            Symmetry::UniaxialNegative | Symmetry::UniaxialPositive
        )
    }
}

impl FromStr for Symmetry {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniaxial-negative" => Ok(Symmetry::UniaxialNegative),
            "uniaxial-positive" => Ok(Symmetry::UniaxialPositive),
            "biaxial-negative" => Ok(Symmetry::BiaxialNegative),
            other => Err(Error::Validation(format!("unknown symmetry '{other}'"))),
        }
    }
}

impl fmt::Display for Symmetry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Symmetry::UniaxialNegative => "uniaxial-negative",
            Symmetry::UniaxialPositive => "uniaxial-positive",
            Symmetry::BiaxialNegative => "biaxial-negative",
        })
    }
}

/// Algebraic variant of the dispersion formula.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DispersionForm {
    /// `n^2 = A + B / (L^2 - C) - D L^2`, coefficients `[A, B, C, D]`.
    PoleIr,
    /// `n^2 = 1 + sum_k B_k L^2 / (L^2 - C_k)`, coefficients `[B1, C1, B2, C2, ...]`.
    Sellmeier,
}

impl DispersionForm {
    pub fn id(self) -> &'static str {
        match self {
            DispersionForm::PoleIr => "pole-ir",
            DispersionForm::Sellmeier => "sellmeier",
        }
    }

    fn check_count(self, n: usize) -> std::result::Result<(), String> {
        match self {
            DispersionForm::PoleIr if n != 4 => {
                Err(format!("form 'pole-ir' needs 4 coefficients, got {n}"))
            }
            DispersionForm::Sellmeier if n == 0 || !n.is_multiple_of(2) => Err(format!(
                "form 'sellmeier' needs a non-empty even number of coefficients, got {n}"
            )),
            _ => Ok(()),
        }
    }
}

impl FromStr for DispersionForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pole-ir" => Ok(DispersionForm::PoleIr),
            "sellmeier" => Ok(DispersionForm::Sellmeier),
            other => Err(Error::Validation(format!("unknown form_id '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DispersionModel {
    form: DispersionForm,
    coefficients: Vec<f64>,
}

impl DispersionModel {
    pub fn new(form: DispersionForm, coefficients: Vec<f64>) -> Result<Self> {
        form.check_count(coefficients.len())
            .map_err(Error::Validation)?;
        if coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::Validation(
                "non-finite dispersion coefficient".into(),
            ));
        }
        Ok(Self { form, coefficients })
    }

    pub fn form(&self) -> DispersionForm {
        self.form
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    /// Refractive index at a wavelength in micrometers. Returns NaN where the
    /// formula has no real positive value.
    pub fn index_at_um(&self, lambda_um: f64) -> f64 {
        let l2 = lambda_um * lambda_um;
        let c = &self.coefficients;
        let n2 = match self.form {
            DispersionForm::PoleIr => c[0] + c[1] / (l2 - c[2]) - c[3] * l2,
            DispersionForm::Sellmeier => {
                1.0 + c
                    .chunks_exact(2)
                    .map(|bc| bc[0] * l2 / (l2 - bc[1]))
                    .sum::<f64>()
            }
        };
        if n2 > 0.0 {
            n2.sqrt()
        } else {
            f64::NAN
        }
    }
}

/// Principal refractive indices `(n_x, n_y, n_z)` at one wavelength.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrincipalIndices {
    pub nx: f64,
    pub ny: f64,
    pub nz: f64,
}

impl PrincipalIndices {
    pub fn new(nx: f64, ny: f64, nz: f64) -> Self {
        Self { nx, ny, nz }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.nx, self.ny, self.nz]
    }

    pub fn min(&self) -> f64 {
        self.nx.min(self.ny).min(self.nz)
    }

    pub fn max(&self) -> f64 {
        self.nx.max(self.ny).max(self.nz)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrystalSpecies {
    pub id: String,
    pub symmetry: Symmetry,
    /// Per-axis models, x, y, z. For uniaxial crystals x and y are the ordinary model.
    pub axes: [DispersionModel; 3],
    pub valid_range_nm: (f64, f64),
    pub source: String,
}

impl CrystalSpecies {
    /// Principal indices at `lambda_nm`.
    pub fn principal_indices(&self, lambda_nm: f64) -> Result<PrincipalIndices> {
        let (lo, hi) = self.valid_range_nm;
        if !(lambda_nm >= lo && lambda_nm <= hi) {
            return Err(Error::OutOfRange {
                crystal: self.id.clone(),
                lambda_nm,
                min_nm: lo,
                max_nm: hi,
            });
        }
        let um = lambda_nm * 1e-3;
        let nx = self.axes[0].index_at_um(um);
        let nz = self.axes[2].index_at_um(um);
        let ny = if self.symmetry.is_uniaxial() {
            nx
        } else {
            self.axes[1].index_at_um(um)
        };
        Ok(PrincipalIndices { nx, ny, nz })
    }

    fn validate(&self) -> Result<()> {
        let (lo, hi) = self.valid_range_nm;
        if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && hi > lo) {
            return Err(Error::Validation(format!(
                "{}: invalid valid_range_nm [{lo}, {hi}]",
                self.id
            )));
        }
        if self.symmetry.is_uniaxial() && self.axes[0] != self.axes[1] {
            return Err(Error::Validation(format!(
                "{}: uniaxial crystal with distinct x and y axes",
                self.id
            )));
        }
        for k in 0..VALIDATION_SAMPLES {
            let lambda = lo + (hi - lo) * k as f64 / (VALIDATION_SAMPLES - 1) as f64;
            let p = self.principal_indices(lambda)?;
            if p.as_array().iter().any(|n| !(n.is_finite() && *n > 1.0)) {
                return Err(Error::Validation(format!(
                    "{}: index not real and > 1 at {lambda:.1} nm",
                    self.id
                )));
            }
            let ordered = match self.symmetry {
                Symmetry::BiaxialNegative => p.nx < p.ny && p.ny < p.nz,
                Symmetry::UniaxialNegative => p.nz < p.nx,
                Symmetry::UniaxialPositive => p.nz > p.nx,
            };
            if !ordered {
                return Err(Error::Validation(format!(
                    "{}: principal indices ({:.6}, {:.6}, {:.6}) at {lambda:.1} nm violate {} ordering",
                    self.id, p.nx, p.ny, p.nz, self.symmetry
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileRoot {
    #[serde(default)]
    crystal: Vec<FileCrystal>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileCrystal {
    id: String,
    symmetry: String,
    form_id: String,
    valid_range_nm: [f64; 2],
    source: String,
    axes: BTreeMap<String, Vec<f64>>,
}

impl FileCrystal {
    fn into_species(self) -> Result<CrystalSpecies> {
        let symmetry: Symmetry = self.symmetry.parse()?;
        let form: DispersionForm = self.form_id.parse()?;
        let take = |key: &str| -> Result<DispersionModel> {
            let c = self
                .axes
                .get(key)
                .ok_or_else(|| Error::Validation(format!("{}: missing axis '{key}'", self.id)))?;
            DispersionModel::new(form, c.clone())
                .map_err(|e| Error::Validation(format!("{}: axis '{key}': {e}", self.id)))
        };
        let expected: &[&str] = if symmetry.is_uniaxial() {
            &["e", "o"]
        } else {
            &["x", "y", "z"]
        };
        let keys: Vec<&str> = self.axes.keys().map(String::as_str).collect();
        if keys != expected {
            return Err(Error::Validation(format!(
                "{}: {symmetry} crystal needs axes {expected:?}, found {keys:?}",
                self.id
            )));
        }
        let axes = if symmetry.is_uniaxial() {
            let o = take("o")?;
            [o.clone(), o, take("e")?]
        } else {
            [take("x")?, take("y")?, take("z")?]
        };
        let species = CrystalSpecies {
            id: self.id,
            symmetry,
            axes,
            valid_range_nm: (self.valid_range_nm[0], self.valid_range_nm[1]),
            source: self.source,
        };
        species.validate()?;
        Ok(species)
    }
}

/// Immutable set of crystals keyed by id.
#[derive(Debug, Clone)]
pub struct CrystalRegistry {
    species: Vec<CrystalSpecies>,
}

impl CrystalRegistry {
    /// Parses a crystal database from TOML text.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let root: FileRoot = toml::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        if root.crystal.is_empty() {
            return Err(Error::Validation("no crystals defined".into()));
        }
        let mut species: Vec<CrystalSpecies> = Vec::with_capacity(root.crystal.len());
        for c in root.crystal {
            if species.iter().any(|s| s.id == c.id) {
                return Err(Error::Validation(format!(
                    "duplicate crystal id '{}'",
                    c.id
                )));
            }
            species.push(c.into_species()?);
        }
        Ok(Self { species })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// The database embedded in the library.
    pub fn builtin() -> Self {
        Self::from_toml_str(DEFAULT_DATABASE).expect("embedded crystal database is valid")
    }

    pub fn get(&self, id: &str) -> Result<&CrystalSpecies> {
        self.species
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| Error::UnknownCrystal {
                id: id.to_string(),
                available: self.ids().join(", "),
            })
    }

    pub fn ids(&self) -> Vec<&str> {
        self.species.iter().map(|s| s.id.as_str()).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &CrystalSpecies> {
        self.species.iter()
    }
}

/// Principal indices of `species` at `lambda_nm`.
pub fn principal_indices(species: &CrystalSpecies, lambda_nm: f64) -> Result<PrincipalIndices> {
    species.principal_indices(lambda_nm)
}
