//! CSV artifacts. Every file starts with `#` comment lines: free-form
//! metadata, the config hash, and a timestamp on the last header line so
//! that reruns differ only there. Floats are written with 17 significant
//! digits so they round-trip exactly.

use std::io::{BufRead, Write};

use crate::diagnostics::MeshStudy;
use crate::error::{Error, Result};
use crate::forward::DataVector;
use crate::vi::ViTrace;

/// Comment lines written at the top of every artifact.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Header {
    pub meta: Vec<(String, String)>,
    pub config_hash: Option<String>,
    pub timestamp: Option<String>,
}

impl Header {
    pub fn new(config_hash: impl Into<String>, timestamp: impl Into<String>) -> Self {
        Self { meta: Vec::new(), config_hash: Some(config_hash.into()), timestamp: Some(timestamp.into()) }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.push((key.to_string(), value.to_string()));
        self
    }

    fn write<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        for (k, v) in &self.meta {
            writeln!(w, "# {k}={v}")?;
        }
        if let Some(h) = &self.config_hash {
            writeln!(w, "# config_hash={h}")?;
        }
        if let Some(t) = &self.timestamp {
            writeln!(w, "# generated={t}")?;
        }
        Ok(())
    }
}

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn io_err(e: std::io::Error) -> Error {
    Error::Parse(format!("i/o: {e}"))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(format!("csv: {e}"))
}

/// Writes a header, a column line, and rows of already formatted fields.
pub fn write_table<W: Write>(w: &mut W, header: &Header, columns: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    header.write(w).map_err(io_err)?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(columns).map_err(csv_err)?;
    for row in rows {
        if row.len() != columns.len() {
            return Err(Error::DimensionMismatch { expected: columns.len(), got: row.len() });
        }
        out.write_record(&row).map_err(csv_err)?;
    }
    out.flush().map_err(io_err)
}

/// A parsed CSV: `key=value` comment metadata, column names, and rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub meta: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn column(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::Parse(format!("missing column `{name}`")))
    }

    pub fn f64_column(&self, name: &str) -> Result<Vec<f64>> {
        let j = self.column(name)?;
        self.rows.iter().map(|r| parse_f64(&r[j])).collect()
    }

    pub fn expect_columns(&self, names: &[&str]) -> Result<()> {
        if self.columns != names {
            return Err(Error::Parse(format!("expected columns {:?}, found {:?}", names, self.columns)));
        }
        Ok(())
    }
}

pub fn parse_f64(s: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|_| Error::Parse(format!("not a number: `{s}`")))
}

pub fn read_table<R: BufRead>(mut r: R) -> Result<Table> {
    let mut text = String::new();
    r.read_to_string(&mut text).map_err(io_err)?;
    let meta = text
        .lines()
        .filter_map(|l| l.trim().strip_prefix('#'))
        .filter_map(|c| c.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect();
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(text.as_bytes());
    let columns: Vec<String> = rdr.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    if columns.iter().all(|c| c.is_empty()) {
        return Err(Error::Parse("no column line".into()));
    }
    let rows = rdr
        .records()
        .map(|rec| rec.map(|r| r.iter().map(str::to_string).collect()).map_err(csv_err))
        .collect::<Result<Vec<Vec<String>>>>()?;
    Ok(Table { meta, columns, rows })
}

/// `x_obs,d` with `tau` and `noise_pct` in the header.
pub fn write_data<W: Write>(w: &mut W, data: &DataVector, header: &Header) -> Result<()> {
    let mut h = header.clone();
    h.meta.insert(0, ("tau".into(), fmt_f64(data.tau)));
    h.meta.insert(1, ("noise_pct".into(), fmt_f64(data.noise_pct)));
    let rows = data.obs_points.iter().zip(&data.d).map(|(x, d)| vec![fmt_f64(*x), fmt_f64(*d)]);
    write_table(w, &h, &["x_obs", "d"], rows)
}

pub fn read_data<R: BufRead>(r: R) -> Result<DataVector> {
    let t = read_table(r)?;
    t.expect_columns(&["x_obs", "d"])?;
    let tau = parse_f64(t.meta("tau").ok_or_else(|| Error::Parse("missing `tau` header".into()))?)?;
    let noise = parse_f64(t.meta("noise_pct").ok_or_else(|| Error::Parse("missing `noise_pct` header".into()))?)?;
    DataVector::new(t.f64_column("x_obs")?, t.f64_column("d")?, tau, noise)
}

pub fn write_eigenvalues<W: Write>(w: &mut W, xis: &[f64], header: &Header) -> Result<()> {
    let rows = xis.iter().enumerate().map(|(k, x)| vec![(k + 1).to_string(), fmt_f64(*x)]);
    write_table(w, header, &["k", "xi_k"], rows)
}

pub fn write_vi_trace<W: Write>(w: &mut W, trace: &ViTrace, header: &Header) -> Result<()> {
    let rows = trace.records.iter().map(|r| {
        vec![
            r.iter.to_string(),
            fmt_f64(r.lambda),
            fmt_f64(r.c_lambda),
            r.rel_err.map(fmt_f64).unwrap_or_else(|| "nan".into()),
            fmt_f64(r.step_norm),
        ]
    });
    write_table(w, header, &["iter", "lambda", "c_lambda", "rel_err", "step_norm"], rows)
}

pub fn write_lambda_trace<W: Write>(w: &mut W, lambdas: &[f64], header: &Header) -> Result<()> {
    let rows = lambdas.iter().enumerate().map(|(i, l)| vec![(i + 1).to_string(), fmt_f64(*l)]);
    write_table(w, header, &["iter", "lambda"], rows)
}

/// Nodal values `i,x_i,value` (fields, variances, covariance bands).
pub fn write_band<W: Write>(w: &mut W, nodes: &[f64], values: &[f64], header: &Header) -> Result<()> {
    if values.len() > nodes.len() {
        return Err(Error::DimensionMismatch { expected: nodes.len(), got: values.len() });
    }
    let rows = values.iter().enumerate().map(|(i, v)| vec![i.to_string(), fmt_f64(nodes[i]), fmt_f64(*v)]);
    write_table(w, header, &["i", "x_i", "value"], rows)
}

pub fn read_band<R: BufRead>(r: R) -> Result<Vec<f64>> {
    let t = read_table(r)?;
    t.expect_columns(&["i", "x_i", "value"])?;
    t.f64_column("value")
}

/// Row-major dense matrix as `i,j,value`.
pub fn write_matrix<W: Write>(w: &mut W, m: &nalgebra::DMatrix<f64>, header: &Header) -> Result<()> {
    let rows = (0..m.nrows()).flat_map(|i| (0..m.ncols()).map(move |j| (i, j))).map(|(i, j)| vec![i.to_string(), j.to_string(), fmt_f64(m[(i, j)])]);
    write_table(w, header, &["i", "j", "value"], rows)
}

pub fn read_matrix<R: BufRead>(r: R) -> Result<nalgebra::DMatrix<f64>> {
    let t = read_table(r)?;
    t.expect_columns(&["i", "j", "value"])?;
    let idx = |s: &str| s.parse::<usize>().map_err(|_| Error::Parse(format!("bad index `{s}`")));
    let mut entries = Vec::with_capacity(t.rows.len());
    let mut n = 0;
    for row in &t.rows {
        let (i, j) = (idx(&row[0])?, idx(&row[1])?);
        n = n.max(i + 1).max(j + 1);
        entries.push((i, j, parse_f64(&row[2])?));
    }
    if entries.len() != n * n {
        return Err(Error::Parse(format!("expected {} entries for a {n}x{n} matrix, found {}", n * n, entries.len())));
    }
    let mut m = nalgebra::DMatrix::zeros(n, n);
    for (i, j, v) in entries {
        m[(i, j)] = v;
    }
    Ok(m)
}

pub fn write_lambda_table<W: Write>(w: &mut W, study: &MeshStudy, header: &Header) -> Result<()> {
    let rows = study.rows.iter().map(|r| vec![r.n.to_string(), fmt_f64(r.lambda_mean), fmt_f64(r.lambda_var)]);
    write_table(w, header, &["mesh", "lambda_mean", "lambda_var"], rows)
}

/// Scalar results as `key,value`.
pub fn write_metrics<W: Write>(w: &mut W, metrics: &[(String, String)], header: &Header) -> Result<()> {
    let rows = metrics.iter().map(|(k, v)| vec![k.clone(), v.clone()]);
    write_table(w, header, &["key", "value"], rows)
}

pub fn read_metrics<R: BufRead>(r: R) -> Result<Vec<(String, String)>> {
    let t = read_table(r)?;
    t.expect_columns(&["key", "value"])?;
    Ok(t.rows.into_iter().map(|mut r| (std::mem::take(&mut r[0]), std::mem::take(&mut r[1]))).collect())
}
