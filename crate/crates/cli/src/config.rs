//! Flat `key=value` experiment configuration.
//!
//! Blank lines and lines starting with `#` are skipped. Keys use section
//! prefixes (`vi.tol`, `gibbs.beta`, `seeds.data`). Unknown or repeated keys
//! are errors.

use std::collections::BTreeMap;
use std::path::PathBuf;

use ncpvi::experiment::{ProblemSetup, DEFAULT_COARSE_N, DEFAULT_FINE_N, DEFAULT_MESHES, DEFAULT_NOISE_PCT};
use ncpvi::forward::DEFAULT_ALPHA_PDE;
use ncpvi::gibbs::GibbsConfig;
use ncpvi::prior::DEFAULT_ALPHA;
use ncpvi::{Execution, LambdaPrior, ViConfig};
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Where Gibbs chains start.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GibbsStart {
    /// The VI mean `(v*, λ*)`.
    Vi,
    /// `v = 0`, `λ = λ̄`.
    Origin,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub n_coarse: usize,
    pub n_fine: usize,
    pub alpha_prior: f64,
    pub prior_scale: f64,
    pub alpha_pde: f64,
    pub noise_pct: f64,
    pub lambda_mean: f64,
    pub lambda_variance: f64,
    pub vi: ViConfig,
    pub gibbs: GibbsConfig,
    pub gibbs_start: GibbsStart,
    pub data_seed: u64,
    pub mesh_sizes: Vec<usize>,
    pub output_dir: PathBuf,
    pub execution: Execution,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        // Comparison runs: 4 chains of 25k kept sweeps each, started at the VI mean.
        let gibbs = GibbsConfig { beta: 0.02, n_samples: 50_000, burn_in: 25_000, chains: 4, ..GibbsConfig::default() };
        Self {
            n_coarse: DEFAULT_COARSE_N,
            n_fine: DEFAULT_FINE_N,
            alpha_prior: DEFAULT_ALPHA,
            prior_scale: 1.0,
            alpha_pde: DEFAULT_ALPHA_PDE,
            noise_pct: DEFAULT_NOISE_PCT,
            lambda_mean: 1.0,
            lambda_variance: 1e4,
            vi: ViConfig::default(),
            gibbs,
            gibbs_start: GibbsStart::Vi,
            data_seed: 0,
            mesh_sizes: DEFAULT_MESHES.to_vec(),
            output_dir: PathBuf::from("out"),
            execution: Execution::Parallel,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value.parse().map_err(|_| CliError::Config(format!("`{key}`: cannot parse `{value}`")))
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        let mut seen = BTreeMap::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected key=value, got `{line}`", no + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if seen.insert(k.to_string(), no + 1).is_some() {
                return Err(CliError::Config(format!("line {}: duplicate key `{k}`", no + 1)));
            }
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match key {
            "problem" if value == "elliptic1d" => {}
            "problem" => return Err(CliError::Config(format!("unknown problem `{value}`"))),
            "n_coarse" => self.n_coarse = parse_num(key, value)?,
            "n_fine" => self.n_fine = parse_num(key, value)?,
            "alpha_prior" => self.alpha_prior = parse_num(key, value)?,
            "prior_scale" => self.prior_scale = parse_num(key, value)?,
            "alpha_pde" => self.alpha_pde = parse_num(key, value)?,
            "noise_pct" => self.noise_pct = parse_num(key, value)?,
            "lambda_prior.mean" => self.lambda_mean = parse_num(key, value)?,
            "lambda_prior.variance" => self.lambda_variance = parse_num(key, value)?,
            "vi.tol" => self.vi.tol = parse_num(key, value)?,
            "vi.max_iter" => self.vi.max_iter = parse_num(key, value)?,
            "vi.r_max" => self.vi.r_max = parse_num(key, value)?,
            "vi.oversample" => self.vi.oversample = parse_num(key, value)?,
            "vi.lambda0" => self.vi.lambda0 = Some(parse_num(key, value)?),
            "vi.c_lambda0" => self.vi.c_lambda0 = parse_num(key, value)?,
            "gibbs.beta" => self.gibbs.beta = parse_num(key, value)?,
            "gibbs.n_samples" => self.gibbs.n_samples = parse_num(key, value)?,
            "gibbs.burn_in" => self.gibbs.burn_in = parse_num(key, value)?,
            "gibbs.thin" => self.gibbs.thin = parse_num(key, value)?,
            "gibbs.chains" => self.gibbs.chains = parse_num(key, value)?,
            "gibbs.max_seconds" => self.gibbs.max_seconds = Some(parse_num(key, value)?),
            "gibbs.start" => {
                self.gibbs_start = match value {
                    "vi" => GibbsStart::Vi,
                    "origin" => GibbsStart::Origin,
                    _ => return Err(CliError::Config(format!("`gibbs.start` must be `vi` or `origin`, got `{value}`"))),
                }
            }
            "seeds.data" => self.data_seed = parse_num(key, value)?,
            "seeds.eig" => self.vi.eig_seed = parse_num(key, value)?,
            "seeds.chain" => self.gibbs.seed = parse_num(key, value)?,
            "mesh.sizes" => {
                self.mesh_sizes = value.split(',').map(|s| parse_num(key, s.trim())).collect::<Result<_, _>>()?;
            }
            "output_dir" => self.output_dir = PathBuf::from(value),
            "execution" => {
                self.execution = match value {
                    "parallel" => Execution::Parallel,
                    "sequential" => Execution::Sequential,
                    _ => return Err(CliError::Config(format!("`execution` must be `parallel` or `sequential`, got `{value}`"))),
                }
            }
            _ => return Err(CliError::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Applies `--seed-override` entries: `data`, `eig`, `chain` (optionally `seeds.`-prefixed).
    pub fn override_seed(&mut self, spec: &str) -> Result<(), CliError> {
        let (k, v) = spec
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("seed override must be k=v, got `{spec}`")))?;
        let k = k.trim();
        let name = k.strip_prefix("seeds.").unwrap_or(k);
        if !matches!(name, "data" | "eig" | "chain") {
            return Err(CliError::Config(format!("unknown seed `{k}` (expected data, eig or chain)")));
        }
        self.set(&format!("seeds.{name}"), v.trim())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.n_fine <= self.n_coarse {
            return Err(CliError::Config(format!("n_fine ({}) must exceed n_coarse ({})", self.n_fine, self.n_coarse)));
        }
        if !(self.noise_pct >= 0.0) {
            return Err(CliError::Config(format!("noise_pct must be >= 0, got {}", self.noise_pct)));
        }
        if self.mesh_sizes.is_empty() || self.mesh_sizes.iter().any(|&n| n >= self.n_fine) {
            return Err(CliError::Config("mesh.sizes must be non-empty and below n_fine".into()));
        }
        LambdaPrior::new(self.lambda_mean, self.lambda_variance)?;
        self.vi_config().validate()?;
        self.gibbs_config().validate()?;
        Ok(())
    }

    pub fn setup(&self) -> Result<ProblemSetup, CliError> {
        Ok(ProblemSetup {
            alpha_prior: self.alpha_prior,
            prior_scale: self.prior_scale,
            alpha_pde: self.alpha_pde,
            lam_prior: LambdaPrior::new(self.lambda_mean, self.lambda_variance)?,
            n_fine: self.n_fine,
            noise_pct: self.noise_pct,
            ..ProblemSetup::default()
        })
    }

    pub fn vi_config(&self) -> ViConfig {
        ViConfig { execution: self.execution, ..self.vi }
    }

    pub fn gibbs_config(&self) -> GibbsConfig {
        GibbsConfig { execution: self.execution, ..self.gibbs.clone() }
    }

    /// Every setting that affects results, one `key=value` per line in key
    /// order. The output directory and execution mode are left out.
    pub fn canonical(&self) -> String {
        let opt = |x: Option<f64>| x.map(|v| format!("{v:e}")).unwrap_or_else(|| "none".into());
        let start = match self.gibbs_start {
            GibbsStart::Vi => "vi",
            GibbsStart::Origin => "origin",
        };
        let sizes: Vec<String> = self.mesh_sizes.iter().map(|n| n.to_string()).collect();
        let entries: BTreeMap<&str, String> = [
            ("problem", "elliptic1d".to_string()),
            ("n_coarse", self.n_coarse.to_string()),
            ("n_fine", self.n_fine.to_string()),
            ("alpha_prior", format!("{:e}", self.alpha_prior)),
            ("prior_scale", format!("{:e}", self.prior_scale)),
            ("alpha_pde", format!("{:e}", self.alpha_pde)),
            ("noise_pct", format!("{:e}", self.noise_pct)),
            ("lambda_prior.mean", format!("{:e}", self.lambda_mean)),
            ("lambda_prior.variance", format!("{:e}", self.lambda_variance)),
            ("vi.tol", format!("{:e}", self.vi.tol)),
            ("vi.max_iter", self.vi.max_iter.to_string()),
            ("vi.r_max", self.vi.r_max.to_string()),
            ("vi.oversample", self.vi.oversample.to_string()),
            ("vi.lambda0", opt(self.vi.lambda0)),
            ("vi.c_lambda0", format!("{:e}", self.vi.c_lambda0)),
            ("gibbs.beta", format!("{:e}", self.gibbs.beta)),
            ("gibbs.n_samples", self.gibbs.n_samples.to_string()),
            ("gibbs.burn_in", self.gibbs.burn_in.to_string()),
            ("gibbs.thin", self.gibbs.thin.to_string()),
            ("gibbs.chains", self.gibbs.chains.to_string()),
            ("gibbs.max_seconds", opt(self.gibbs.max_seconds)),
            ("gibbs.start", start.to_string()),
            ("seeds.data", self.data_seed.to_string()),
            ("seeds.eig", self.vi.eig_seed.to_string()),
            ("seeds.chain", self.gibbs.seed.to_string()),
            ("mesh.sizes", sizes.join(",")),
        ]
        .into_iter()
        .collect();
        entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }
}
