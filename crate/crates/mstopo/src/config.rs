//! Run configuration: flat key/value files with include support, material
//! presets, validation, and a stable content hash for the run manifest.
//!
//! The format is line oriented: `key = value`, `#` starts a comment,
//! `include <path>` splices another file (relative paths resolve against the
//! including file). Later assignments override earlier ones, so an include
//! can serve as a preset that the outer file refines.

use crate::{Error, Result};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

/// Optimization problem variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    /// Compliance minimization with a volume constraint.
    Cv,
    /// Buckling-factor maximization with compliance and volume constraints.
    Bcv,
    /// As `Bcv` plus the local (microstructural) buckling constraint.
    Bcvs,
    /// Compliance minimization with buckling, volume, stress and local
    /// buckling constraints.
    Cbvsy,
    /// Maximize the minimum of the global-buckling, local-buckling and yield
    /// load factors under compliance and volume constraints.
    MaterialMinmax,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Cv => "CV",
            Variant::Bcv => "BCV",
            Variant::Bcvs => "BCVS",
            Variant::Cbvsy => "CBVSY",
            Variant::MaterialMinmax => "MATERIAL_MINMAX",
        }
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "CV" => Ok(Variant::Cv),
            "BCV" => Ok(Variant::Bcv),
            "BCVS" => Ok(Variant::Bcvs),
            "CBVSY" => Ok(Variant::Cbvsy),
            "MATERIAL_MINMAX" | "MINMAX" => Ok(Variant::MaterialMinmax),
            other => Err(Error::Config(format!(
                "unknown variant '{other}' (expected CV, BCV, BCVS, CBVSY or MATERIAL_MINMAX)"
            ))),
        }
    }
}

/// Named base materials with yield strength normalized by Young's modulus.
/// Stiffness itself is always normalized to 1 with Poisson's ratio 1/3, so a
/// preset only fixes `sigma0`.
pub const MATERIAL_PRESETS: &[(&str, f64)] = &[
    ("steel", 0.002),
    ("epoxy", 0.023),
    ("pc", 0.044),
    ("pc-nano", 0.113),
    ("tpu", 0.333),
];

pub fn material_sigma0(name: &str) -> Option<f64> {
    let lname = name.to_ascii_lowercase();
    MATERIAL_PRESETS
        .iter()
        .find(|(n, _)| *n == lname)
        .map(|(_, s)| *s)
}

/// All run parameters. Defaults reproduce the reference L-bracket study at
/// 100x100 elements.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub variant: Variant,
    /// Material preset name, or "custom" to take `sigma0` verbatim.
    pub material: String,
    /// Yield strength over Young's modulus.
    pub sigma0: f64,
    /// Elements per side of the square design grid (one quadrant inactive).
    pub nel: usize,
    /// Volume fraction target for the intermediate design.
    pub volume_fraction: f64,
    /// Lower bound on the infill density variable.
    pub x_min: f64,
    /// Indicator-field filter radius, in elements.
    pub r_solid: f64,
    /// Infill-field filter radius, in elements.
    pub r_infill: f64,
    /// Compliance bound for constrained variants; 0 selects the automatic
    /// rule (1.25x the compliance-optimal value) where one is defined.
    pub compliance_limit: f64,
    /// Buckling load-factor target for CBVSY; 0 selects the automatic rule
    /// (the BCVS optimum).
    pub blf_target: f64,
    /// Weight of the eroded structural-volume penalty in the objective.
    pub gamma: f64,
    pub max_iters: usize,
    /// Buckling modes tracked per realization.
    pub n_modes: usize,
    /// Exponent of the smooth-max aggregation of eigenvalue reciprocals.
    pub ks_exponent: f64,
    /// Stress p-norm exponent at the start and end of continuation.
    pub pnorm_start: f64,
    pub pnorm_end: f64,
    /// Stress relaxation parameter.
    pub epsilon: f64,
    /// Projection sharpness continuation.
    pub beta_start: f64,
    pub beta_growth: f64,
    pub beta_cap: f64,
    /// First iteration at which beta grows, and the update period after it.
    pub beta_first: usize,
    pub beta_every: usize,
    /// MMA move limit.
    pub move_limit: f64,
    /// Relative residual tolerance for buckling eigenpairs.
    pub eig_tol: f64,
    pub seed: u64,
    /// Write a checkpoint every this many iterations (0 disables).
    pub checkpoint_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            variant: Variant::Cv,
            material: "custom".into(),
            sigma0: 0.366,
            nel: 100,
            volume_fraction: 0.35,
            x_min: 0.15,
            r_solid: 5.0,
            r_infill: 1.5,
            compliance_limit: 0.0,
            blf_target: 0.0,
            gamma: 0.05,
            max_iters: 400,
            n_modes: 8,
            ks_exponent: 160.0,
            pnorm_start: 8.0,
            pnorm_end: 16.0,
            epsilon: 0.1,
            beta_start: 2.0,
            beta_growth: 1.3,
            beta_cap: 256.0,
            beta_first: 125,
            beta_every: 75,
            move_limit: 0.2,
            eig_tol: 1e-8,
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl RunConfig {
    /// Parses a config file, following `include` directives.
    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let mut pairs = Vec::new();
        read_pairs(path, 0, &mut pairs)?;
        let mut cfg = RunConfig::default();
        for (key, value) in &pairs {
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses config text with no filesystem context (includes rejected).
    pub fn from_str_no_includes(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            match parse_line(raw) {
                Line::Empty => {}
                Line::Include(_) => {
                    return Err(Error::Config(format!(
                        "line {}: include not allowed here",
                        lineno + 1
                    )))
                }
                Line::Pair(k, v) => cfg.set(&k, &v)?,
                Line::Bad => {
                    return Err(Error::Config(format!(
                        "line {}: expected 'key = value'",
                        lineno + 1
                    )))
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies one assignment. Unknown keys are errors so typos cannot pass
    /// silently.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn f(key: &str, value: &str) -> Result<f64> {
            value
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("{key}: expected a number, got '{value}'")))
        }
        fn u(key: &str, value: &str) -> Result<usize> {
            value
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("{key}: expected an integer, got '{value}'")))
        }
        match key {
            "variant" => self.variant = value.parse()?,
            "material" => {
                let lname = value.to_ascii_lowercase();
                if lname != "custom" {
                    match material_sigma0(&lname) {
                        Some(s) => self.sigma0 = s,
                        None => {
                            let names: Vec<&str> =
                                MATERIAL_PRESETS.iter().map(|(n, _)| *n).collect();
                            return Err(Error::Config(format!(
                                "unknown material '{value}' (presets: {}, or 'custom')",
                                names.join(", ")
                            )));
                        }
                    }
                }
                self.material = lname;
            }
            "sigma0" => self.sigma0 = f(key, value)?,
            "nel" => self.nel = u(key, value)?,
            "volume_fraction" => self.volume_fraction = f(key, value)?,
            "x_min" => self.x_min = f(key, value)?,
            "r_solid" => self.r_solid = f(key, value)?,
            "r_infill" => self.r_infill = f(key, value)?,
            "compliance_limit" => self.compliance_limit = f(key, value)?,
            "blf_target" => self.blf_target = f(key, value)?,
            "gamma" => self.gamma = f(key, value)?,
            "max_iters" => self.max_iters = u(key, value)?,
            "n_modes" => self.n_modes = u(key, value)?,
            "ks_exponent" => self.ks_exponent = f(key, value)?,
            "pnorm_start" => self.pnorm_start = f(key, value)?,
            "pnorm_end" => self.pnorm_end = f(key, value)?,
            "epsilon" => self.epsilon = f(key, value)?,
            "beta_start" => self.beta_start = f(key, value)?,
            "beta_growth" => self.beta_growth = f(key, value)?,
            "beta_cap" => self.beta_cap = f(key, value)?,
            "beta_first" => self.beta_first = u(key, value)?,
            "beta_every" => self.beta_every = u(key, value)?,
            "move_limit" => self.move_limit = f(key, value)?,
            "eig_tol" => self.eig_tol = f(key, value)?,
            "seed" => {
                self.seed = value
                    .parse::<u64>()
                    .map_err(|_| Error::Config(format!("seed: expected an integer, got '{value}'")))?
            }
            "checkpoint_every" => self.checkpoint_every = u(key, value)?,
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    /// Checks every bound at once and reports all violations together.
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.nel < 4 || self.nel % 2 != 0 {
            bad.push(format!("nel must be an even integer >= 4 (got {})", self.nel));
        }
        if !(self.sigma0 > 0.0) {
            bad.push(format!("sigma0 must be positive (got {})", self.sigma0));
        }
        if !(self.volume_fraction > 0.0 && self.volume_fraction < 1.0) {
            bad.push(format!(
                "volume_fraction must lie in (0,1) (got {})",
                self.volume_fraction
            ));
        }
        if !(self.x_min > 0.0 && self.x_min < 1.0) {
            bad.push(format!("x_min must lie in (0,1) (got {})", self.x_min));
        }
        if !(self.r_solid > 0.0) || !(self.r_infill > 0.0) {
            bad.push(format!(
                "filter radii must be positive (got r_solid={}, r_infill={})",
                self.r_solid, self.r_infill
            ));
        }
        if self.compliance_limit < 0.0 {
            bad.push("compliance_limit must be >= 0 (0 = automatic)".into());
        }
        if self.blf_target < 0.0 {
            bad.push("blf_target must be >= 0 (0 = automatic)".into());
        }
        if !(self.gamma >= 0.0) {
            bad.push(format!("gamma must be >= 0 (got {})", self.gamma));
        }
        if self.max_iters == 0 {
            bad.push("max_iters must be positive".into());
        }
        if self.n_modes == 0 || self.n_modes > 24 {
            bad.push(format!("n_modes must lie in 1..=24 (got {})", self.n_modes));
        }
        if !(self.ks_exponent >= 2.0) {
            bad.push(format!(
                "ks_exponent must be >= 2 (got {})",
                self.ks_exponent
            ));
        }
        if !(self.pnorm_start >= 2.0) || !(self.pnorm_end >= self.pnorm_start) {
            bad.push(format!(
                "stress p-norm exponents must satisfy 2 <= pnorm_start <= pnorm_end (got {} and {})",
                self.pnorm_start, self.pnorm_end
            ));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            bad.push(format!("epsilon must lie in (0,1] (got {})", self.epsilon));
        }
        if !(self.beta_start >= 1.0) || !(self.beta_growth > 1.0) || !(self.beta_cap >= self.beta_start)
        {
            bad.push(format!(
                "projection continuation requires beta_start >= 1, beta_growth > 1, beta_cap >= beta_start (got {}, {}, {})",
                self.beta_start, self.beta_growth, self.beta_cap
            ));
        }
        if self.beta_every == 0 {
            bad.push("beta_every must be positive".into());
        }
        if !(self.move_limit > 0.0 && self.move_limit <= 1.0) {
            bad.push(format!(
                "move_limit must lie in (0,1] (got {})",
                self.move_limit
            ));
        }
        if !(self.eig_tol > 0.0 && self.eig_tol < 1e-2) {
            bad.push(format!("eig_tol must lie in (0,1e-2) (got {})", self.eig_tol));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("; ")))
        }
    }

    /// Canonical listing of every parameter, sorted by key. This text is what
    /// gets hashed and echoed into the manifest.
    pub fn canonical(&self) -> String {
        let mut map = BTreeMap::new();
        map.insert("variant", self.variant.name().to_string());
        map.insert("material", self.material.clone());
        map.insert("sigma0", fmt_f(self.sigma0));
        map.insert("nel", self.nel.to_string());
        map.insert("volume_fraction", fmt_f(self.volume_fraction));
        map.insert("x_min", fmt_f(self.x_min));
        map.insert("r_solid", fmt_f(self.r_solid));
        map.insert("r_infill", fmt_f(self.r_infill));
        map.insert("compliance_limit", fmt_f(self.compliance_limit));
        map.insert("blf_target", fmt_f(self.blf_target));
        map.insert("gamma", fmt_f(self.gamma));
        map.insert("max_iters", self.max_iters.to_string());
        map.insert("n_modes", self.n_modes.to_string());
        map.insert("ks_exponent", fmt_f(self.ks_exponent));
        map.insert("pnorm_start", fmt_f(self.pnorm_start));
        map.insert("pnorm_end", fmt_f(self.pnorm_end));
        map.insert("epsilon", fmt_f(self.epsilon));
        map.insert("beta_start", fmt_f(self.beta_start));
        map.insert("beta_growth", fmt_f(self.beta_growth));
        map.insert("beta_cap", fmt_f(self.beta_cap));
        map.insert("beta_first", self.beta_first.to_string());
        map.insert("beta_every", self.beta_every.to_string());
        map.insert("move_limit", fmt_f(self.move_limit));
        map.insert("eig_tol", fmt_f(self.eig_tol));
        map.insert("seed", self.seed.to_string());
        map.insert("checkpoint_every", self.checkpoint_every.to_string());
        let mut out = String::new();
        for (k, v) in map {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// FNV-1a hash of the canonical listing, as fixed-width hex.
    pub fn hash(&self) -> String {
        format!("{:016x}", fnv1a(self.canonical().as_bytes()))
    }
}

fn fmt_f(v: f64) -> String {
    // Shortest representation that round-trips, so hashes are stable across
    // formatting quirks.
    let s = format!("{v}");
    if s.parse::<f64>() == Ok(v) {
        s
    } else {
        format!("{v:e}")
    }
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

enum Line {
    Empty,
    Include(String),
    Pair(String, String),
    Bad,
}

fn parse_line(raw: &str) -> Line {
    let line = match raw.find('#') {
        Some(i) => &raw[..i],
        None => raw,
    }
    .trim();
    if line.is_empty() {
        return Line::Empty;
    }
    if let Some(rest) = line.strip_prefix("include") {
        let rest = rest.trim();
        if !rest.is_empty() {
            return Line::Include(rest.to_string());
        }
        return Line::Bad;
    }
    match line.split_once('=') {
        Some((k, v)) => {
            let k = k.trim();
            let v = v.trim();
            if k.is_empty() || v.is_empty() {
                Line::Bad
            } else {
                Line::Pair(k.to_string(), v.to_string())
            }
        }
        None => Line::Bad,
    }
}

fn read_pairs(path: &Path, depth: usize, out: &mut Vec<(String, String)>) -> Result<()> {
    if depth > 8 {
        return Err(Error::Config(format!(
            "include nesting too deep at {}",
            path.display()
        )));
    }
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let dir = path.parent().map(PathBuf::from).unwrap_or_default();
    for (lineno, raw) in text.lines().enumerate() {
        match parse_line(raw) {
            Line::Empty => {}
            Line::Include(p) => {
                let inc = if Path::new(&p).is_absolute() {
                    PathBuf::from(&p)
                } else {
                    dir.join(&p)
                };
                read_pairs(&inc, depth + 1, out)?;
            }
            Line::Pair(k, v) => out.push((k, v)),
            Line::Bad => {
                return Err(Error::Config(format!(
                    "{}:{}: expected 'key = value'",
                    path.display(),
                    lineno + 1
                )))
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_hash_is_stable() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.hash(), cfg.clone().hash());
        let mut other = cfg.clone();
        other.seed = 1;
        assert_ne!(cfg.hash(), other.hash());
    }

    #[test]
    fn parses_pairs_comments_and_overrides() {
        let text = "\n# comment\nvariant = BCVS\nnel = 60   # trailing comment\nseed = 3\nseed = 4\n";
        let cfg = RunConfig::from_str_no_includes(text).unwrap();
        assert_eq!(cfg.variant, Variant::Bcvs);
        assert_eq!(cfg.nel, 60);
        assert_eq!(cfg.seed, 4);
    }

    #[test]
    fn material_presets_set_sigma0() {
        for (name, want) in MATERIAL_PRESETS {
            let cfg =
                RunConfig::from_str_no_includes(&format!("material = {name}\n")).unwrap();
            assert_eq!(cfg.sigma0, *want, "{name}");
        }
        let err = RunConfig::from_str_no_includes("material = unobtainium\n").unwrap_err();
        assert!(matches!(err, Error::Config(ref m) if m.contains("unobtainium")));
    }

    #[test]
    fn unknown_keys_and_bad_numbers_are_rejected() {
        assert!(RunConfig::from_str_no_includes("volme = 0.3\n").is_err());
        assert!(RunConfig::from_str_no_includes("nel = sixty\n").is_err());
        assert!(RunConfig::from_str_no_includes("just words\n").is_err());
    }

    #[test]
    fn validation_reports_all_failures_at_once() {
        let mut cfg = RunConfig::default();
        cfg.nel = 3;
        cfg.volume_fraction = 1.5;
        cfg.epsilon = 0.0;
        let msg = match cfg.validate() {
            Err(Error::Config(m)) => m,
            other => panic!("expected config error, got {other:?}"),
        };
        assert!(msg.contains("nel"), "{msg}");
        assert!(msg.contains("volume_fraction"), "{msg}");
        assert!(msg.contains("epsilon"), "{msg}");
    }

    #[test]
    fn includes_splice_and_outer_file_overrides() {
        let dir = std::env::temp_dir().join(format!("mstopo-cfg-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        std::fs::write(dir.join("base.cfg"), "nel = 60\nseed = 9\n").unwrap();
        std::fs::write(dir.join("run.cfg"), "include base.cfg\nseed = 12\n").unwrap();
        let cfg = RunConfig::from_file(&dir.join("run.cfg")).unwrap();
        assert_eq!(cfg.nel, 60);
        assert_eq!(cfg.seed, 12);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn canonical_listing_mentions_every_field_once() {
        let cfg = RunConfig::default();
        let text = cfg.canonical();
        for key in [
            "variant", "material", "sigma0", "nel", "volume_fraction", "x_min", "r_solid",
            "r_infill", "compliance_limit", "blf_target", "gamma", "max_iters", "n_modes",
            "ks_exponent", "pnorm_start", "pnorm_end", "epsilon", "beta_start", "beta_growth",
            "beta_cap", "beta_first", "beta_every", "move_limit", "eig_tol", "seed",
            "checkpoint_every",
        ] {
            assert_eq!(
                text.lines().filter(|l| l.starts_with(&format!("{key} ="))).count(),
                1,
                "{key}"
            );
        }
    }
}
