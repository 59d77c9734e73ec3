//! One function per CLI verb. Each reads its inputs from the output
//! directory, writes CSV artifacts there, and reports whether VI converged.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use ncpvi::diagnostics::{
    compare_covariances, kl_gaussian_1d, mesh_independence_study, relative_error, squared_relative_error,
    u_posterior_moments, CovarianceSource,
};
use ncpvi::gibbs::{run_chain_from, GibbsTarget, DEFAULT_BAND_OFFSETS};
use ncpvi::io::{self, fmt_f64, Header};
use ncpvi::vi::ViResult;
use ncpvi::{DataVector, FieldVector};

use crate::config::{ExperimentConfig, GibbsStart};
use crate::error::CliError;

pub const DATA_FILE: &str = "data.csv";
pub const VI_METRICS_FILE: &str = "metrics.csv";
pub const GIBBS_METRICS_FILE: &str = "gibbs_metrics.csv";
pub const GIBBS_MEAN_FILE: &str = "gibbs_mean.csv";
pub const GIBBS_COV_FILE: &str = "gibbs_cov.csv";
pub const COMPARE_FILE: &str = "compare.csv";
pub const MESH_FILE: &str = "mesh_lambda.csv";

/// Covariance offsets reported by `run-gibbs` and `compare`; 0 is the variance.
fn band_offsets() -> Vec<usize> {
    std::iter::once(0).chain(DEFAULT_BAND_OFFSETS).collect()
}

fn gibbs_band_file(k: usize) -> String {
    format!("gibbs_band_k{k}.csv")
}

/// Whether the VI runs of a command reached the tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Converged,
    NotConverged,
}

pub struct Context {
    pub cfg: ExperimentConfig,
    pub hash: String,
    pub timestamp: String,
}

impl Context {
    pub fn new(cfg: ExperimentConfig) -> Self {
        let hash = cfg.hash();
        let timestamp = chrono::Utc::now().format("%Y-%m-%dT%H:%M:%SZ").to_string();
        Self { cfg, hash, timestamp }
    }

    fn header(&self, command: &str) -> Header {
        Header::new(&self.hash, &self.timestamp).with("command", command)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.cfg.output_dir.join(name)
    }

    fn write(&self, name: &str, f: impl FnOnce(&mut BufWriter<File>) -> ncpvi::Result<()>) -> Result<(), CliError> {
        let path = self.path(name);
        let io_err = |source| CliError::Io { path: path.clone(), source };
        fs::create_dir_all(&self.cfg.output_dir).map_err(|source| CliError::Io { path: self.cfg.output_dir.clone(), source })?;
        let mut w = BufWriter::new(File::create(&path).map_err(io_err)?);
        f(&mut w)?;
        w.flush().map_err(io_err)
    }

    fn open(&self, name: &str, hint: &'static str) -> Result<BufReader<File>, CliError> {
        let path = self.path(name);
        match File::open(&path) {
            Ok(f) => Ok(BufReader::new(f)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(CliError::MissingInput { path, hint }),
            Err(source) => Err(CliError::Io { path, source }),
        }
    }

    /// Reads `data.csv` and checks it was generated with the current data settings.
    fn read_data(&self) -> Result<DataVector, CliError> {
        let mut bytes = Vec::new();
        self.open(DATA_FILE, "run `generate-data` first")?
            .read_to_end(&mut bytes)
            .map_err(|source| CliError::Io { path: self.path(DATA_FILE), source })?;
        let table = io::read_table(&bytes[..])?;
        let expect = [
            ("data_seed", self.cfg.data_seed.to_string()),
            ("n_fine", self.cfg.n_fine.to_string()),
            ("alpha_pde", fmt_f64(self.cfg.alpha_pde)),
            ("noise_pct", fmt_f64(self.cfg.noise_pct)),
        ];
        for (k, v) in &expect {
            if table.meta(k) != Some(v.as_str()) {
                return Err(CliError::Config(format!(
                    "{DATA_FILE} has {k}={}, config wants {v}; rerun `generate-data`",
                    table.meta(k).unwrap_or("<missing>")
                )));
            }
        }
        Ok(io::read_data(&bytes[..])?)
    }

    fn solve_vi(&self, data: &DataVector) -> Result<(ncpvi::vi::NcpModel, ViResult), CliError> {
        Ok(self.cfg.setup()?.solve(self.cfg.n_coarse, data, &self.cfg.vi_config())?)
    }
}

fn outcome(converged: bool) -> Outcome {
    if converged {
        Outcome::Converged
    } else {
        Outcome::NotConverged
    }
}

pub fn generate_data(ctx: &Context) -> Result<Outcome, CliError> {
    let data = ctx.cfg.setup()?.generate_data(ctx.cfg.data_seed)?;
    let header = ctx
        .header("generate-data")
        .with("data_seed", ctx.cfg.data_seed)
        .with("n_fine", ctx.cfg.n_fine)
        .with("alpha_pde", fmt_f64(ctx.cfg.alpha_pde))
        .with("truth", "10*(cos(4*pi*x)+1)");
    ctx.write(DATA_FILE, |w| io::write_data(w, &data, &header))?;
    Ok(Outcome::Converged)
}

pub fn run_vi(ctx: &Context) -> Result<Outcome, CliError> {
    let data = ctx.read_data()?;
    let (model, res) = ctx.solve_vi(&data)?;
    let post = u_posterior_moments(&res.v_post, &res.lam_post)?;
    let nodes = model.prior().grid().nodes().to_vec();
    let header = ctx.header("run-vi").with("n", ctx.cfg.n_coarse);

    ctx.write("vi_trace.csv", |w| io::write_vi_trace(w, &res.trace, &header))?;
    ctx.write("eigenvalues.csv", |w| io::write_eigenvalues(w, model.eig().xis(), &header))?;
    ctx.write("vi_mean.csv", |w| io::write_band(w, &nodes, post.mean.values(), &header))?;
    ctx.write("vi_variance.csv", |w| io::write_band(w, &nodes, &post.cov.variance()?, &header))?;

    let last = res.trace.records.last();
    let metrics = vec![
        ("lambda_mean".to_string(), fmt_f64(res.lam_post.lam_star)),
        ("lambda_var".to_string(), fmt_f64(res.lam_post.c_lambda)),
        ("iterations".to_string(), res.iterations().to_string()),
        ("converged".to_string(), res.converged.to_string()),
        ("rel_err".to_string(), fmt_f64(last.and_then(|r| r.rel_err).unwrap_or(f64::NAN))),
        ("step_norm".to_string(), fmt_f64(last.map_or(f64::NAN, |r| r.step_norm))),
        ("n_eig".to_string(), model.eig().len().to_string()),
    ];
    ctx.write(VI_METRICS_FILE, |w| io::write_metrics(w, &metrics, &header))?;
    Ok(outcome(res.converged))
}

pub fn run_gibbs(ctx: &Context) -> Result<Outcome, CliError> {
    let data = ctx.read_data()?;
    let setup = ctx.cfg.setup()?;
    let (prior, fwd) = setup.operators(ctx.cfg.n_coarse)?;
    let target = GibbsTarget::new(&prior, &setup.lam_prior, &fwd, Some(&data))?;
    let start = match ctx.cfg.gibbs_start {
        GibbsStart::Vi => {
            let (_, res) = ctx.solve_vi(&data)?;
            Some((res.v_post.v_star, res.lam_post.lam_star))
        }
        GibbsStart::Origin => None,
    };
    let summary = run_chain_from(&target, &ctx.cfg.gibbs_config(), start.as_ref().map(|(v, l)| (v, *l)))?;

    let n = ctx.cfg.n_coarse;
    let nodes = prior.grid().nodes().to_vec();
    let header = ctx.header("run-gibbs").with("n", n);
    ctx.write(GIBBS_MEAN_FILE, |w| io::write_band(w, &nodes, summary.u_moments.mean(), &header))?;
    for k in band_offsets().into_iter().filter(|&k| k < n) {
        let band = CovarianceSource::band(&summary.u_moments, k)?;
        ctx.write(&gibbs_band_file(k), |w| io::write_band(w, &nodes, &band, &header.clone().with("offset", k)))?;
    }
    if let Some(cov) = summary.u_moments.covariance() {
        ctx.write(GIBBS_COV_FILE, |w| io::write_matrix(w, &cov, &header))?;
    }
    ctx.write("gibbs_lambda_trace.csv", |w| io::write_lambda_trace(w, &summary.lambda_trace, &header))?;
    let metrics = vec![
        ("lambda_mean".to_string(), fmt_f64(summary.lambda_mean)),
        ("lambda_var".to_string(), fmt_f64(summary.lambda_var)),
        ("acceptance_rate_v".to_string(), fmt_f64(summary.acceptance_rate_v)),
        ("ess_lambda".to_string(), fmt_f64(summary.ess_lambda)),
        ("samples".to_string(), summary.n_kept().to_string()),
        ("truncated".to_string(), summary.truncated.to_string()),
    ];
    ctx.write(GIBBS_METRICS_FILE, |w| io::write_metrics(w, &metrics, &header))?;
    Ok(Outcome::Converged)
}

/// Sample covariance read back from `run-gibbs` artifacts.
struct StoredCovariance {
    n: usize,
    bands: Vec<(usize, Vec<f64>)>,
    matrix: Option<DMatrix<f64>>,
}

impl CovarianceSource for StoredCovariance {
    fn size(&self) -> usize {
        self.n
    }

    fn band(&self, k: usize) -> ncpvi::Result<Vec<f64>> {
        if let Some(m) = &self.matrix {
            return Ok((0..self.n.saturating_sub(k)).map(|i| m[(i, i + k)]).collect());
        }
        self.bands
            .iter()
            .find(|(o, _)| *o == k)
            .map(|(_, b)| b.clone())
            .ok_or_else(|| ncpvi::Error::InvalidParameter(format!("offset {k} not stored")))
    }

    fn dense(&self) -> Option<DMatrix<f64>> {
        self.matrix.clone()
    }
}

fn metric(metrics: &[(String, String)], key: &str) -> Result<f64, CliError> {
    let v = metrics
        .iter()
        .find(|(k, _)| k == key)
        .ok_or_else(|| CliError::Config(format!("{GIBBS_METRICS_FILE} lacks `{key}`")))?;
    Ok(io::parse_f64(&v.1)?)
}

pub fn compare(ctx: &Context) -> Result<Outcome, CliError> {
    const HINT: &str = "run `run-gibbs` first";
    let n = ctx.cfg.n_coarse;
    let gibbs_metrics = io::read_metrics(ctx.open(GIBBS_METRICS_FILE, HINT)?)?;
    let gibbs_mean = io::read_band(ctx.open(GIBBS_MEAN_FILE, HINT)?)?;
    if gibbs_mean.len() != n {
        return Err(CliError::Config(format!("Gibbs outputs are on {} nodes but n_coarse={n}", gibbs_mean.len())));
    }
    let offsets: Vec<usize> = band_offsets().into_iter().filter(|&k| k < n).collect();
    let bands = offsets
        .iter()
        .map(|&k| Ok((k, io::read_band(ctx.open(&gibbs_band_file(k), HINT)?)?)))
        .collect::<Result<Vec<_>, CliError>>()?;
    let matrix = match ctx.open(GIBBS_COV_FILE, HINT) {
        Ok(r) => Some(io::read_matrix(r)?),
        Err(CliError::MissingInput { .. }) => None,
        Err(e) => return Err(e),
    };
    let reference = StoredCovariance { n, bands, matrix };

    let data = ctx.read_data()?;
    let (model, res) = ctx.solve_vi(&data)?;
    let post = u_posterior_moments(&res.v_post, &res.lam_post)?;
    let grid = model.prior().grid().clone();
    let truth = ctx.cfg.setup()?.truth_on(&grid);
    let gibbs_field = FieldVector::new(grid, gibbs_mean.clone())?;
    let g_lambda = (metric(&gibbs_metrics, "lambda_mean")?, metric(&gibbs_metrics, "lambda_var")?);
    let cov = compare_covariances(&post.cov, &reference, &offsets)?;

    let mut metrics = vec![
        ("mean_rel_err".to_string(), fmt_f64(squared_relative_error(post.mean.values(), &gibbs_mean)?)),
        ("lambda_kl".to_string(), fmt_f64(kl_gaussian_1d((res.lam_post.lam_star, res.lam_post.c_lambda), g_lambda)?)),
        ("lambda_mean_vi".to_string(), fmt_f64(res.lam_post.lam_star)),
        ("lambda_var_vi".to_string(), fmt_f64(res.lam_post.c_lambda)),
        ("lambda_mean_gibbs".to_string(), fmt_f64(g_lambda.0)),
        ("lambda_var_gibbs".to_string(), fmt_f64(g_lambda.1)),
        ("truth_rel_err_vi".to_string(), fmt_f64(relative_error(&post.mean, &truth)?)),
        ("truth_rel_err_gibbs".to_string(), fmt_f64(relative_error(&gibbs_field, &truth)?)),
        ("vi_converged".to_string(), res.converged.to_string()),
    ];
    if let Some(m) = cov.matrix {
        metrics.push(("cov_matrix_rel_err".to_string(), fmt_f64(m)));
    }
    for (k, e) in cov.bands {
        metrics.push((format!("cov_band_k{k}_rel_err"), fmt_f64(e)));
    }
    let header = ctx.header("compare").with("n", n);
    ctx.write(COMPARE_FILE, |w| io::write_metrics(w, &metrics, &header))?;
    Ok(outcome(res.converged))
}

pub fn mesh_study(ctx: &Context) -> Result<Outcome, CliError> {
    let data = ctx.read_data()?;
    let setup = ctx.cfg.setup()?;
    let study = mesh_independence_study(&setup, &ctx.cfg.mesh_sizes, &data, &ctx.cfg.vi_config(), ctx.cfg.execution)?;
    let header = ctx.header("mesh-study");
    ctx.write(MESH_FILE, |w| io::write_lambda_table(w, &study, &header))?;

    let columns: Vec<String> =
        ["mesh", "iterations", "converged", "rel_err"].iter().map(|s| s.to_string()).collect();
    let rows = study.rows.iter().map(|r| vec![r.n.to_string(), r.iterations.to_string(), r.converged.to_string(), fmt_f64(r.rel_err)]);
    let cols: Vec<&str> = columns.iter().map(String::as_str).collect();
    ctx.write("mesh_summary.csv", |w| io::write_table(w, &header, &cols, rows))?;

    let len = study.rows.iter().map(|r| r.step_norms.len()).max().unwrap_or(0);
    let mut step_cols = vec!["iter".to_string()];
    step_cols.extend(study.rows.iter().map(|r| format!("n{}", r.n)));
    let step_rows = (0..len).map(|k| {
        std::iter::once((k + 1).to_string())
            .chain(study.rows.iter().map(|r| r.step_norms.get(k).map_or_else(|| "nan".to_string(), |s| fmt_f64(*s))))
            .collect()
    });
    let cols: Vec<&str> = step_cols.iter().map(String::as_str).collect();
    ctx.write("mesh_step_norms.csv", |w| io::write_table(w, &header, &cols, step_rows))?;
    Ok(outcome(study.rows.iter().all(|r| r.converged)))
}

pub fn load_config(path: Option<&Path>) -> Result<ExperimentConfig, CliError> {
    match path {
        None => Ok(ExperimentConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|source| CliError::Io { path: p.to_path_buf(), source })?;
            ExperimentConfig::parse(&text)
        }
    }
}
