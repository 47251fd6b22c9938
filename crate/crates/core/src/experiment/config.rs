//! Line-oriented `key = value` experiment configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::bounds;
use crate::density::GradedMesh;
use crate::error::{Error, Result};
use crate::grid;
use crate::map_family::{FamilyKind, MapDescription};

/// Every key accepted in a configuration file.
pub const CONFIG_KEYS: [&str; 17] = [
    "kind", "alpha", "base", "family", "s", "scale", "n", "p", "tol", "max_iter", "s_list", "gamma", "seed",
    "out", "n_iter", "fit_from", "grid",
];

pub const DEFAULT_MESH_SIZE: usize = 4096;
pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 10_000_000;
pub const DEFAULT_S_LIST: [f64; 4] = [0.01, 0.02, 0.04, 0.08];
pub const DEFAULT_SCALE: f64 = 1.0;
pub const DEFAULT_N_ITER: usize = 300;
pub const DEFAULT_FIT_FROM: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub map: MapDescription,
    pub n: usize,
    pub p: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Perturbation family for the stability run. Folded into `map` when
    /// the map itself is a perturbed member.
    pub family: Option<FamilyKind>,
    pub scale: Option<f64>,
    pub s_list: Vec<f64>,
    pub gamma: f64,
    pub seed: u64,
    pub out: Option<PathBuf>,
    /// Iterates per decay series.
    pub n_iter: usize,
    /// First iterate used in decay fits.
    pub fit_from: usize,
    /// Size of the supremum grids.
    pub grid: usize,
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse::<T>()
        .map_err(|_| Error::Config(format!("key '{key}': cannot parse '{v}'")))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<f64>> {
    v.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| parse_num(key, t))
        .collect()
}

impl ExperimentConfig {
    /// Defaults for everything but the map.
    pub fn for_map(map: MapDescription) -> Result<Self> {
        let cfg = Self::defaults(map);
        cfg.validate()?;
        Ok(cfg)
    }

    fn defaults(map: MapDescription) -> Self {
        let alpha = map.alpha();
        Self {
            n: DEFAULT_MESH_SIZE,
            p: GradedMesh::default_grading(alpha),
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            family: None,
            scale: None,
            s_list: DEFAULT_S_LIST.to_vec(),
            gamma: bounds::default_gamma(alpha),
            seed: 0,
            out: None,
            n_iter: DEFAULT_N_ITER,
            fit_from: DEFAULT_FIT_FROM,
            grid: grid::DEFAULT_GRID_SIZE,
            map,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.map.alpha()
    }

    /// Family and scale for the stability run.
    pub fn family_and_scale(&self) -> (FamilyKind, f64) {
        (
            self.family.unwrap_or(FamilyKind::SecondBranchBump),
            self.scale.unwrap_or(DEFAULT_SCALE),
        )
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.alpha() > 0.0 && self.alpha() < 1.0) {
            return bad(format!("alpha={} must lie in (0,1)", self.alpha()));
        }
        if self.n < 2 {
            return bad(format!("n={} must be at least 2", self.n));
        }
        if !(self.p >= 1.0 && self.p.is_finite()) {
            return bad(format!("p={} must be at least 1", self.p));
        }
        if !(self.tol > 0.0) {
            return bad(format!("tol={} must be positive", self.tol));
        }
        if self.max_iter == 0 {
            return bad("max_iter must be positive".into());
        }
        if self.s_list.is_empty() {
            return bad("s_list is empty".into());
        }
        if self.s_list.iter().any(|s| !(0.0..1.0).contains(s)) {
            return bad(format!("s_list {:?} must lie in [0,1)", self.s_list));
        }
        if self.s_list.windows(2).any(|w| w[1] <= w[0]) {
            return bad(format!("s_list {:?} must be strictly increasing", self.s_list));
        }
        bounds::check_gamma(self.alpha(), self.gamma).map_err(|e| Error::Config(e.to_string()))?;
        if self.fit_from + 2 > self.n_iter {
            return bad(format!(
                "n_iter={} leaves fewer than 3 points after fit_from={}",
                self.n_iter, self.fit_from
            ));
        }
        if self.grid < 16 {
            return bad(format!("grid={} must be at least 16", self.grid));
        }
        if let Some(s) = self.scale {
            if !s.is_finite() {
                return bad("scale must be finite".into());
            }
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        text.parse()
    }

    /// Pairs in emission order.
    fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let mut pairs = self.map.to_pairs();
        if let Some(f) = self.family {
            pairs.push(("family", f.to_string()));
        }
        if let Some(s) = self.scale {
            pairs.push(("scale", s.to_string()));
        }
        let list: Vec<String> = self.s_list.iter().map(f64::to_string).collect();
        pairs.extend([
            ("n", self.n.to_string()),
            ("p", self.p.to_string()),
            ("tol", self.tol.to_string()),
            ("max_iter", self.max_iter.to_string()),
            ("s_list", list.join(",")),
            ("gamma", self.gamma.to_string()),
            ("seed", self.seed.to_string()),
            ("n_iter", self.n_iter.to_string()),
            ("fit_from", self.fit_from.to_string()),
            ("grid", self.grid.to_string()),
        ]);
        if let Some(out) = &self.out {
            pairs.push(("out", out.display().to_string()));
        }
        pairs
    }
}

impl FromStr for ExperimentConfig {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut pairs = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if !CONFIG_KEYS.contains(&k) {
                return Err(Error::Config(format!("line {}: unknown key '{k}'", i + 1)));
            }
            if pairs.insert(k.to_string(), v.to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key '{k}'", i + 1)));
            }
        }
        if !pairs.contains_key("alpha") {
            return Err(Error::Config("missing key 'alpha'".into()));
        }
        if !pairs.contains_key("kind") {
            pairs.insert("kind".into(), "lsv".into());
        }
        let map = MapDescription::from_pairs(&pairs).map_err(|e| match e {
            Error::Config(_) => e,
            other => Error::Config(other.to_string()),
        })?;
        let perturbed = matches!(map, MapDescription::Perturbed { .. });
        let mut cfg = Self::defaults(map);
        for (k, v) in &pairs {
            match k.as_str() {
                "family" if !perturbed => cfg.family = Some(v.parse()?),
                "scale" if !perturbed => cfg.scale = Some(parse_num(k, v)?),
                "s" if !perturbed => {
                    return Err(Error::Config("key 's' requires kind=perturbed".into()));
                }
                "n" => cfg.n = parse_num(k, v)?,
                "p" => cfg.p = parse_num(k, v)?,
                "tol" => cfg.tol = parse_num(k, v)?,
                "max_iter" => cfg.max_iter = parse_num(k, v)?,
                "s_list" => cfg.s_list = parse_list(k, v)?,
                "gamma" => cfg.gamma = parse_num(k, v)?,
                "seed" => cfg.seed = parse_num(k, v)?,
                "out" => cfg.out = Some(PathBuf::from(v)),
                "n_iter" => cfg.n_iter = parse_num(k, v)?,
                "fit_from" => cfg.fit_from = parse_num(k, v)?,
                "grid" => cfg.grid = parse_num(k, v)?,
                _ => {}
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl fmt::Display for ExperimentConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in self.to_pairs() {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map_family::BaseKind;

    const STABILITY: &str = "\
# stability run
kind = lsv
alpha = 0.5
family = second_branch_bump
scale = 1
s_list = 0.01, 0.02, 0.04, 0.08
n = 1024   # coarse
seed = 7
";

    #[test]
    fn parses_with_defaults() {
        let cfg: ExperimentConfig = STABILITY.parse().unwrap();
        assert_eq!(
            cfg.map,
            MapDescription::Base {
                kind: BaseKind::Lsv,
                alpha: 0.5
            }
        );
        assert_eq!(cfg.n, 1024);
        assert_eq!(cfg.p, 4.0);
        assert_eq!(cfg.s_list, vec![0.01, 0.02, 0.04, 0.08]);
        assert_eq!(cfg.family, Some(FamilyKind::SecondBranchBump));
        assert_eq!(cfg.seed, 7);
        assert!((cfg.gamma - 0.9).abs() < 1e-15);
        assert_eq!(cfg.tol, DEFAULT_TOL);
    }

    #[test]
    fn kind_defaults_to_lsv() {
        let cfg: ExperimentConfig = "alpha = 0.3".parse().unwrap();
        assert_eq!(cfg.map.to_string(), "kind=lsv alpha=0.3");
    }

    #[test]
    fn config_keys_cover_map_keys() {
        assert!(crate::map_family::MAP_KEYS.iter().all(|k| CONFIG_KEYS.contains(k)));
    }

    #[test]
    fn round_trip() {
        for text in [
            STABILITY,
            "alpha=0.7\nout=/tmp/x y\ntol=1e-12\ngamma=0.3",
            "kind=perturbed\nbase=lsv\nalpha=0.5\nfamily=first_branch_weighted_bump\ns=0.1\nscale=0.5",
            "kind=doubling\nalpha=0.5\nn=64\np=1",
        ] {
            let cfg: ExperimentConfig = text.parse().unwrap();
            let again: ExperimentConfig = cfg.to_string().parse().unwrap();
            assert_eq!(again, cfg, "{text}");
        }
    }

    #[test]
    fn rejects_bad_input() {
        let cases = [
            ("kind = lsv", "missing key 'alpha'"),
            ("alpha = 0.5\nbogus = 1", "unknown key"),
            ("alpha = 0.5\nalpha = 0.4", "duplicate"),
            ("alpha = 0.5\nn", "expected key = value"),
            ("alpha = 0.5\ns_list = 0.02, 0.01", "strictly increasing"),
            ("alpha = 0.5\ns_list = 0.5, 1.0", "[0,1)"),
            ("alpha = 0.5\ngamma = 1.0", "gamma"),
            ("alpha = 0.5\nn = many", "cannot parse"),
            ("alpha = 0.5\ns = 0.1", "kind=perturbed"),
            ("alpha = 0.5\nfamily = wobble", "unknown family"),
            ("alpha = 1.5", "alpha"),
        ];
        for (text, needle) in cases {
            match text.parse::<ExperimentConfig>() {
                Err(Error::Config(msg)) => assert!(msg.contains(needle), "{text}: {msg}"),
                other => panic!("{text}: expected a configuration error, got {other:?}"),
            }
        }
    }
}
