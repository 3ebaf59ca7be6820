//! File interchange: long-format CSV ingestion, the riboflavin-style design
//! builder, subject-level train/test splitting, and emission of draws,
//! summaries, and metric tables.
//!
//! Numbers are written as decimal text with 17 significant digits, which
//! round-trips `f64` exactly; all writes go through a temp-file-and-rename
//! so partially written files are never observed.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::{seq::SliceRandom, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::bspline_basis;
use crate::model::{CmeRng, DataSet, FitConfig, PosteriorDraws, RunMeta, SubjectBlock};
use crate::selection::quantile_type7;
use crate::sim::ReplicationRow;

/// 17 significant digits: enough to reproduce any f64 bit pattern on parse.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes `contents` to `path` atomically (temp file in the same directory,
/// then rename).
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::Data(format!("creating {}: {e}", dir.display())))?;
    let tmp = dir.join(format!(
        ".{}.tmp-{}",
        path.file_name().map(|s| s.to_string_lossy().to_string()).unwrap_or_default(),
        std::process::id()
    ));
    {
        let mut f = std::fs::File::create(&tmp)
            .map_err(|e| Error::Data(format!("creating {}: {e}", tmp.display())))?;
        f.write_all(contents).map_err(|e| Error::Data(format!("writing {}: {e}", tmp.display())))?;
    }
    std::fs::rename(&tmp, path)
        .map_err(|e| Error::Data(format!("renaming into {}: {e}", path.display())))?;
    Ok(())
}

/// Column layout of a long-format CSV: one row per observation, grouped into
/// subjects by the subject column (first-appearance order, within-subject
/// row order preserved).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LongSchema {
    pub subject_col: String,
    /// Response column; optional so prediction inputs may omit it (zeros are
    /// substituted).
    pub y_col: Option<String>,
    pub x_cols: Vec<String>,
    pub z_cols: Vec<String>,
    #[serde(default)]
    pub time_col: Option<String>,
}

impl LongSchema {
    /// Schema with generated names `x_1..x_p`, `z_1..z_q` as produced by
    /// [`write_dataset_csv`].
    pub fn generated(p: usize, q: usize) -> Self {
        Self {
            subject_col: "subject".into(),
            y_col: Some("y".into()),
            x_cols: (1..=p).map(|j| format!("x_{j}")).collect(),
            z_cols: (1..=q).map(|j| format!("z_{j}")).collect(),
            time_col: None,
        }
    }

    /// Reconstructs the generated schema from a file's header row, so files
    /// written by [`write_dataset_csv`] can be reloaded without an explicit
    /// column list.
    pub fn infer_generated(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| Error::Data(format!("opening {}: {e}", path.display())))?;
        let headers =
            reader.headers().map_err(|e| Error::Data(format!("reading header: {e}")))?;
        let mut x_cols = Vec::new();
        let mut z_cols = Vec::new();
        let mut has_subject = false;
        let mut has_y = false;
        for h in headers.iter() {
            match h {
                "subject" => has_subject = true,
                "y" => has_y = true,
                _ if h.starts_with("x_") => x_cols.push(h.to_string()),
                _ if h.starts_with("z_") => z_cols.push(h.to_string()),
                other => {
                    return Err(Error::Data(format!(
                        "cannot infer schema of {}: unexpected column '{other}' \
                         (expected subject, y, x_*, z_*)",
                        path.display()
                    )))
                }
            }
        }
        if !has_subject || x_cols.is_empty() || z_cols.is_empty() {
            return Err(Error::Data(format!(
                "cannot infer schema of {}: need subject, x_* and z_* columns",
                path.display()
            )));
        }
        Ok(Self {
            subject_col: "subject".into(),
            y_col: has_y.then(|| "y".into()),
            x_cols,
            z_cols,
            time_col: None,
        })
    }
}

/// Whether a CSV's header row contains the named column.
pub fn csv_has_column(path: &Path, name: &str) -> Result<bool> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Data(format!("opening {}: {e}", path.display())))?;
    let headers = reader.headers().map_err(|e| Error::Data(format!("reading header: {e}")))?;
    Ok(headers.iter().any(|h| h == name))
}

struct HeaderIndex {
    by_name: HashMap<String, usize>,
}

impl HeaderIndex {
    fn new(headers: &csv::StringRecord) -> Self {
        let by_name =
            headers.iter().enumerate().map(|(i, h)| (h.trim().to_string(), i)).collect();
        Self { by_name }
    }

    fn require(&self, name: &str) -> Result<usize> {
        self.by_name
            .get(name)
            .copied()
            .ok_or_else(|| Error::Data(format!("missing column '{name}'")))
    }
}

fn parse_cell(record: &csv::StringRecord, idx: usize, row: usize, col_name: &str) -> Result<f64> {
    let raw = record.get(idx).unwrap_or("").trim();
    raw.parse::<f64>().map_err(|_| {
        Error::Data(format!("row {row}, column '{col_name}': cannot parse '{raw}' as a number"))
    })
}

/// Loads a long-format CSV into a validated [`DataSet`]. Row numbers in
/// error messages are 1-based data rows (the header is row 0).
pub fn load_csv_long(path: &Path, schema: &LongSchema) -> Result<DataSet> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Data(format!("opening {}: {e}", path.display())))?;
    let headers =
        reader.headers().map_err(|e| Error::Data(format!("reading header: {e}")))?.clone();
    let index = HeaderIndex::new(&headers);

    let subject_idx = index.require(&schema.subject_col)?;
    let y_idx = schema.y_col.as_deref().map(|c| index.require(c)).transpose()?;
    let x_idx: Vec<usize> =
        schema.x_cols.iter().map(|c| index.require(c)).collect::<Result<_>>()?;
    let z_idx: Vec<usize> =
        schema.z_cols.iter().map(|c| index.require(c)).collect::<Result<_>>()?;

    struct Group {
        y: Vec<f64>,
        x: Vec<Vec<f64>>,
        z: Vec<Vec<f64>>,
    }
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Group> = HashMap::new();

    for (row_idx, record) in reader.records().enumerate() {
        let row = row_idx + 1;
        let record = record.map_err(|e| Error::Data(format!("row {row}: {e}")))?;
        let subject = record
            .get(subject_idx)
            .ok_or_else(|| Error::Data(format!("row {row}: missing subject cell")))?
            .to_string();
        let y = match y_idx {
            Some(idx) => parse_cell(&record, idx, row, schema.y_col.as_deref().unwrap())?,
            None => 0.0,
        };
        let x_row: Vec<f64> = x_idx
            .iter()
            .zip(&schema.x_cols)
            .map(|(&idx, name)| parse_cell(&record, idx, row, name))
            .collect::<Result<_>>()?;
        let z_row: Vec<f64> = z_idx
            .iter()
            .zip(&schema.z_cols)
            .map(|(&idx, name)| parse_cell(&record, idx, row, name))
            .collect::<Result<_>>()?;
        let group = groups.entry(subject.clone()).or_insert_with(|| {
            order.push(subject.clone());
            Group { y: Vec::new(), x: Vec::new(), z: Vec::new() }
        });
        group.y.push(y);
        group.x.push(x_row);
        group.z.push(z_row);
    }
    if order.is_empty() {
        return Err(Error::Data(format!("{} contains no data rows", path.display())));
    }

    let p = schema.x_cols.len();
    let q = schema.z_cols.len();
    let blocks = order
        .into_iter()
        .map(|subject| {
            let g = groups.remove(&subject).expect("group recorded");
            let m = g.y.len();
            let x = DMatrix::from_fn(m, p, |r, c| g.x[r][c]);
            let z = DMatrix::from_fn(m, q, |r, c| g.z[r][c]);
            SubjectBlock::new(subject, DVector::from_vec(g.y), x, z)
        })
        .collect();
    DataSet::new(blocks)
}

/// Writes a dataset in the long CSV format with generated column names
/// (`subject, y, x_1.., z_1..`); reloading with [`LongSchema::generated`]
/// reproduces the dataset bit-exactly.
pub fn write_dataset_csv(d: &DataSet, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str("subject,y");
    for j in 1..=d.p() {
        out.push_str(&format!(",x_{j}"));
    }
    for j in 1..=d.q() {
        out.push_str(&format!(",z_{j}"));
    }
    out.push('\n');
    for b in d.blocks() {
        for r in 0..b.m() {
            out.push_str(&b.subject_id);
            out.push(',');
            out.push_str(&fmt_f64(b.y[r]));
            for c in 0..d.p() {
                out.push(',');
                out.push_str(&fmt_f64(b.x[(r, c)]));
            }
            for c in 0..d.q() {
                out.push(',');
                out.push_str(&fmt_f64(b.z[(r, c)]));
            }
            out.push('\n');
        }
    }
    write_atomic(path, out.as_bytes())
}

/// A riboflavin-style table: one row per observation with a response, a time
/// point, and gene expression columns.
#[derive(Debug, Clone)]
pub struct RiboflavinTable {
    pub subject: Vec<String>,
    pub time: Vec<f64>,
    pub y: Vec<f64>,
    /// `N x G` raw gene expressions, column order as in the file.
    pub genes: DMatrix<f64>,
    pub gene_names: Vec<String>,
}

impl RiboflavinTable {
    pub fn rows(&self) -> usize {
        self.y.len()
    }
}

/// Loads a riboflavin-style CSV: every column other than the subject, time,
/// and response columns is treated as a gene column.
pub fn load_riboflavin_table(
    path: &Path,
    subject_col: &str,
    y_col: &str,
    time_col: &str,
) -> Result<RiboflavinTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Data(format!("opening {}: {e}", path.display())))?;
    let headers =
        reader.headers().map_err(|e| Error::Data(format!("reading header: {e}")))?.clone();
    let index = HeaderIndex::new(&headers);
    let subject_idx = index.require(subject_col)?;
    let y_idx = index.require(y_col)?;
    let time_idx = index.require(time_col)?;

    let gene_cols: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != subject_idx && *i != y_idx && *i != time_idx)
        .map(|(i, h)| (i, h.to_string()))
        .collect();

    let mut subject = Vec::new();
    let mut time = Vec::new();
    let mut y = Vec::new();
    let mut gene_rows: Vec<Vec<f64>> = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let row = row_idx + 1;
        let record = record.map_err(|e| Error::Data(format!("row {row}: {e}")))?;
        subject.push(
            record
                .get(subject_idx)
                .ok_or_else(|| Error::Data(format!("row {row}: missing subject cell")))?
                .to_string(),
        );
        y.push(parse_cell(&record, y_idx, row, y_col)?);
        time.push(parse_cell(&record, time_idx, row, time_col)?);
        gene_rows.push(
            gene_cols
                .iter()
                .map(|(idx, name)| parse_cell(&record, *idx, row, name))
                .collect::<Result<_>>()?,
        );
    }
    if y.is_empty() {
        return Err(Error::Data(format!("{} contains no data rows", path.display())));
    }
    let genes = DMatrix::from_fn(y.len(), gene_cols.len(), |r, c| gene_rows[r][c]);
    Ok(RiboflavinTable {
        subject,
        time,
        y,
        genes,
        gene_names: gene_cols.into_iter().map(|(_, n)| n).collect(),
    })
}

/// Builds the mixed-model design from a riboflavin-style table:
/// `p = 1 + G + n_spline` columns per row (intercept, genes standardized to
/// mean 0 and variance 1 over all rows, and a shared B-spline basis in time
/// evaluated at each subject's time points), with `Z_i = X_i`.
pub fn build_riboflavin_design(table: &RiboflavinTable, n_spline: usize) -> Result<DataSet> {
    let n_rows = table.rows();
    let n_genes = table.genes.ncols();
    if n_genes < 100 {
        return Err(Error::Data(format!("expected at least 100 gene columns, found {n_genes}")));
    }

    // Standardize genes over all rows (sample variance).
    let mut genes = table.genes.clone();
    for c in 0..n_genes {
        let col = genes.column(c);
        let mean = col.sum() / n_rows as f64;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n_rows as f64 - 1.0);
        if var <= 0.0 {
            return Err(Error::Data(format!(
                "gene column '{}' is constant and cannot be standardized",
                table.gene_names[c]
            )));
        }
        let sd = var.sqrt();
        for v in genes.column_mut(c).iter_mut() {
            *v = (*v - mean) / sd;
        }
    }

    // Shared spline basis: knots from the global time range, rows evaluated
    // at every observation's time point.
    let spline = bspline_basis(&table.time, n_spline)?;

    let p = 1 + n_genes + n_spline;
    let mut design = DMatrix::zeros(n_rows, p);
    for r in 0..n_rows {
        design[(r, 0)] = 1.0;
    }
    design.columns_mut(1, n_genes).copy_from(&genes);
    design.columns_mut(1 + n_genes, n_spline).copy_from(&spline);

    // Group contiguously by first appearance of each subject id.
    let mut order: Vec<String> = Vec::new();
    let mut rows_of: HashMap<String, Vec<usize>> = HashMap::new();
    for (r, id) in table.subject.iter().enumerate() {
        rows_of.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            Vec::new()
        });
        rows_of.get_mut(id).unwrap().push(r);
    }

    let blocks = order
        .into_iter()
        .map(|id| {
            let rows = rows_of.remove(&id).expect("rows recorded");
            let m = rows.len();
            let x = DMatrix::from_fn(m, p, |r, c| design[(rows[r], c)]);
            let y = DVector::from_fn(m, |r, _| table.y[rows[r]]);
            let z = x.clone();
            SubjectBlock::new(id, y, x, z)
        })
        .collect();
    DataSet::new(blocks)
}

/// Subject-level random split: `n_train` subjects into the first set, the
/// rest into the second, deterministic given the seed. Subjects keep their
/// original order within each side.
pub fn split_train_test(d: &DataSet, n_train: usize, seed: u64) -> Result<(DataSet, DataSet)> {
    if n_train == 0 || n_train >= d.n() {
        return Err(Error::Config(format!(
            "n_train = {n_train} must be in 1..{} (subject count)",
            d.n()
        )));
    }
    let mut idx: Vec<usize> = (0..d.n()).collect();
    let mut rng = CmeRng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let mut chosen = vec![false; d.n()];
    for &i in idx.iter().take(n_train) {
        chosen[i] = true;
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (i, b) in d.blocks().iter().enumerate() {
        if chosen[i] {
            train.push(b.clone());
        } else {
            test.push(b.clone());
        }
    }
    Ok((DataSet::new(train)?, DataSet::new(test)?))
}

/// Writes a numeric matrix as CSV with the given column headers.
pub fn write_matrix_csv(path: &Path, headers: &[String], m: &DMatrix<f64>) -> Result<()> {
    if headers.len() != m.ncols() {
        return Err(Error::Dimension(format!(
            "{} headers for {} columns",
            headers.len(),
            m.ncols()
        )));
    }
    let mut out = String::with_capacity(m.nrows() * m.ncols() * 24);
    out.push_str(&headers.join(","));
    out.push('\n');
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            if c > 0 {
                out.push(',');
            }
            out.push_str(&fmt_f64(m[(r, c)]));
        }
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

/// Reads a numeric CSV with a header row into a matrix.
pub fn read_matrix_csv(path: &Path) -> Result<(Vec<String>, DMatrix<f64>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Data(format!("opening {}: {e}", path.display())))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Data(format!("reading header: {e}")))?
        .iter()
        .map(|h| h.to_string())
        .collect();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let row = row_idx + 1;
        let record = record.map_err(|e| Error::Data(format!("row {row}: {e}")))?;
        rows.push(
            (0..headers.len())
                .map(|c| parse_cell(&record, c, row, &headers[c]))
                .collect::<Result<_>>()?,
        );
    }
    if rows.is_empty() {
        return Err(Error::Data(format!("{} contains no data rows", path.display())));
    }
    let m = DMatrix::from_fn(rows.len(), headers.len(), |r, c| rows[r][c]);
    Ok((headers, m))
}

/// Reads a square matrix from a headerless numeric CSV (used for supplying
/// a known covariance to the oracle sampler).
pub fn read_square_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Data(format!("opening {}: {e}", path.display())))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let row = row_idx + 1;
        let record = record.map_err(|e| Error::Data(format!("row {row}: {e}")))?;
        rows.push(
            (0..record.len())
                .map(|c| parse_cell(&record, c, row, &format!("col {}", c + 1)))
                .collect::<Result<_>>()?,
        );
    }
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(Error::Data(format!("{} is not a square numeric matrix", path.display())));
    }
    Ok(DMatrix::from_fn(n, n, |r, c| rows[r][c]))
}

/// On-disk companion of the draws: provenance plus a full config echo.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunMetaFile {
    pub meta: RunMeta,
    pub config: FitConfig,
}

pub const BETA_DRAWS_FILE: &str = "beta_draws.csv";
pub const TAU2_DRAWS_FILE: &str = "tau2_draws.csv";
pub const GAMMA_DRAWS_FILE: &str = "gamma_draws.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const RUN_META_FILE: &str = "run_meta.toml";

/// Writes the fit outputs into `out_dir`: the three draw matrices, the
/// per-coefficient summary (mean/median/2.5%/97.5%), and `run_meta.toml`.
pub fn write_draws(out_dir: &Path, draws: &PosteriorDraws, config: &FitConfig) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| Error::Data(format!("creating {}: {e}", out_dir.display())))?;
    let p = draws.p();
    let beta_headers: Vec<String> = (1..=p).map(|j| format!("beta_{j}")).collect();
    let gamma_headers: Vec<String> = (1..=draws.gamma.ncols()).map(|j| format!("gamma_{j}")).collect();

    let mut written = Vec::new();
    let beta_path = out_dir.join(BETA_DRAWS_FILE);
    write_matrix_csv(&beta_path, &beta_headers, &draws.beta)?;
    written.push(beta_path);

    let tau2_path = out_dir.join(TAU2_DRAWS_FILE);
    let tau2_mat = DMatrix::from_fn(draws.tau2.len(), 1, |r, _| draws.tau2[r]);
    write_matrix_csv(&tau2_path, &["tau2".to_string()], &tau2_mat)?;
    written.push(tau2_path);

    let gamma_path = out_dir.join(GAMMA_DRAWS_FILE);
    write_matrix_csv(&gamma_path, &gamma_headers, &draws.gamma)?;
    written.push(gamma_path);

    // Per-coefficient summary.
    let mut out = String::from("coefficient,mean,median,q2.5,q97.5\n");
    let t_keep = draws.kept();
    let mut col = vec![0.0; t_keep];
    for j in 0..p {
        for (t, v) in draws.beta.column(j).iter().enumerate() {
            col[t] = *v;
        }
        let mean = col.iter().sum::<f64>() / t_keep as f64;
        col.sort_by(|a, b| a.partial_cmp(b).unwrap());
        out.push_str(&format!(
            "beta_{},{},{},{},{}\n",
            j + 1,
            fmt_f64(mean),
            fmt_f64(quantile_type7(&col, 0.5)),
            fmt_f64(quantile_type7(&col, 0.025)),
            fmt_f64(quantile_type7(&col, 0.975)),
        ));
    }
    let summary_path = out_dir.join(SUMMARY_FILE);
    write_atomic(&summary_path, out.as_bytes())?;
    written.push(summary_path);

    let meta_file = RunMetaFile { meta: draws.meta.clone(), config: *config };
    let toml_text = toml::to_string_pretty(&meta_file)
        .map_err(|e| Error::Data(format!("serializing run meta: {e}")))?;
    let meta_path = out_dir.join(RUN_META_FILE);
    write_atomic(&meta_path, toml_text.as_bytes())?;
    written.push(meta_path);
    Ok(written)
}

/// Reloads draws written by [`write_draws`].
pub fn read_draws(dir: &Path) -> Result<(PosteriorDraws, FitConfig)> {
    let meta_text = std::fs::read_to_string(dir.join(RUN_META_FILE))
        .map_err(|e| Error::Data(format!("reading {}: {e}", dir.join(RUN_META_FILE).display())))?;
    let meta_file: RunMetaFile =
        toml::from_str(&meta_text).map_err(|e| Error::Data(format!("parsing run meta: {e}")))?;
    let (_, beta) = read_matrix_csv(&dir.join(BETA_DRAWS_FILE))?;
    let (_, tau2_mat) = read_matrix_csv(&dir.join(TAU2_DRAWS_FILE))?;
    let gamma = match read_matrix_csv(&dir.join(GAMMA_DRAWS_FILE)) {
        Ok((_, g)) => g,
        // A gamma file with zero columns has no parseable rows; fall back to
        // an empty block of the right height.
        Err(_) => DMatrix::zeros(beta.nrows(), 0),
    };
    let tau2 = DVector::from_fn(tau2_mat.nrows(), |r, _| tau2_mat[(r, 0)]);
    Ok((PosteriorDraws { beta, tau2, gamma, meta: meta_file.meta }, meta_file.config))
}

/// Writes per-replication metric rows as CSV.
pub fn write_metric_rows(path: &Path, rows: &[ReplicationRow]) -> Result<()> {
    let mut writer = csv::WriterBuilder::new().from_writer(Vec::new());
    for row in rows {
        writer.serialize(row).map_err(|e| Error::Data(format!("serializing metrics: {e}")))?;
    }
    let bytes =
        writer.into_inner().map_err(|e| Error::Data(format!("flushing metrics: {e}")))?;
    write_atomic(path, &bytes)
}

/// Reads metric rows written by [`write_metric_rows`].
pub fn read_metric_rows(path: &Path) -> Result<Vec<ReplicationRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Data(format!("opening {}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (i, record) in reader.deserialize::<ReplicationRow>().enumerate() {
        rows.push(record.map_err(|e| Error::Data(format!("metrics row {}: {e}", i + 1)))?);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn temp_dir() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn long_csv_loads_groups() {
        let dir = temp_dir();
        let path = dir.path().join("d.csv");
        let csv = "subject,y,x1,x2,z1\n\
                   a,1.0,0.1,0.2,1.0\n\
                   a,2.0,0.3,0.4,1.0\n\
                   a,3.0,0.5,0.6,1.0\n\
                   b,4.0,0.7,0.8,2.0\n\
                   b,5.0,0.9,1.0,2.0\n\
                   b,6.0,1.1,1.2,2.0\n";
        std::fs::write(&path, csv).unwrap();
        let schema = LongSchema {
            subject_col: "subject".into(),
            y_col: Some("y".into()),
            x_cols: vec!["x1".into(), "x2".into()],
            z_cols: vec!["z1".into()],
            time_col: None,
        };
        let d = load_csv_long(&path, &schema).unwrap();
        assert_eq!(d.n(), 2);
        assert_eq!(d.p(), 2);
        assert_eq!(d.q(), 1);
        assert_eq!(d.block(0).m(), 3);
        assert_eq!(d.block(1).y[0], 4.0);
    }

    #[test]
    fn missing_column_and_bad_cell_are_reported() {
        let dir = temp_dir();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "subject,x1\na,1.0\n").unwrap();
        let schema = LongSchema {
            subject_col: "subject".into(),
            y_col: Some("y".into()),
            x_cols: vec!["x1".into()],
            z_cols: vec!["x1".into()],
            time_col: None,
        };
        let err = load_csv_long(&path, &schema).unwrap_err().to_string();
        assert!(err.contains("missing column 'y'"), "{err}");

        std::fs::write(&path, "subject,y,x1\na,1.0,0.5\na,1.0,oops\n").unwrap();
        let err = load_csv_long(&path, &schema).unwrap_err().to_string();
        assert!(err.contains("row 2"), "{err}");
        assert!(err.contains("'oops'"), "{err}");
    }

    #[test]
    fn dataset_round_trips_bit_exactly() {
        let dir = temp_dir();
        let path = dir.path().join("d.csv");
        let mut rng = CmeRng::seed_from_u64(5);
        let blocks = (0..3)
            .map(|i| {
                SubjectBlock::new(
                    format!("s{i}"),
                    DVector::from_fn(2, |_, _| rng.random::<f64>() * 3.0 - 1.5),
                    DMatrix::from_fn(2, 4, |_, _| rng.random::<f64>() * 2.0 - 1.0),
                    DMatrix::from_fn(2, 2, |_, _| rng.random::<f64>()),
                )
            })
            .collect();
        let d = DataSet::new(blocks).unwrap();
        write_dataset_csv(&d, &path).unwrap();
        let schema = LongSchema::generated(4, 2);
        let d2 = load_csv_long(&path, &schema).unwrap();
        assert_eq!(d.stacked_y(), d2.stacked_y());
        assert_eq!(d.stacked_x(), d2.stacked_x());
        for (a, b) in d.blocks().iter().zip(d2.blocks()) {
            assert_eq!(a.subject_id, b.subject_id);
            assert_eq!(a.z, b.z);
        }
    }

    #[test]
    fn split_is_disjoint_exhaustive_and_deterministic() {
        let blocks = (0..28)
            .map(|i| {
                SubjectBlock::new(
                    format!("s{i}"),
                    DVector::zeros(2),
                    DMatrix::zeros(2, 3),
                    DMatrix::zeros(2, 3),
                )
            })
            .collect();
        let d = DataSet::new(blocks).unwrap();
        let (train, test) = split_train_test(&d, 21, 9).unwrap();
        assert_eq!(train.n(), 21);
        assert_eq!(test.n(), 7);
        let mut ids: Vec<&str> = train
            .blocks()
            .iter()
            .chain(test.blocks())
            .map(|b| b.subject_id.as_str())
            .collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 28);

        let (train2, _) = split_train_test(&d, 21, 9).unwrap();
        let a: Vec<&str> = train.blocks().iter().map(|b| b.subject_id.as_str()).collect();
        let b: Vec<&str> = train2.blocks().iter().map(|b| b.subject_id.as_str()).collect();
        assert_eq!(a, b);

        assert!(split_train_test(&d, 28, 9).is_err());
    }

    #[test]
    fn riboflavin_design_shapes_and_standardization() {
        // 6 subjects, 14 rows, 100 synthetic gene columns.
        let mut rng = CmeRng::seed_from_u64(77);
        let n_rows = 14;
        let subjects: Vec<String> = (0..n_rows).map(|r| format!("s{}", r / 3)).collect();
        let table = RiboflavinTable {
            subject: subjects,
            time: (0..n_rows).map(|r| r as f64 / (n_rows - 1) as f64).collect(),
            y: (0..n_rows).map(|_| rng.random::<f64>()).collect(),
            genes: DMatrix::from_fn(n_rows, 100, |_, _| rng.random::<f64>() * 4.0),
            gene_names: (1..=100).map(|g| format!("gene_{g}")).collect(),
        };
        let d = build_riboflavin_design(&table, 3).unwrap();
        assert_eq!(d.p(), 104);
        assert_eq!(d.q(), 104);
        assert_eq!(d.total_obs(), n_rows);

        let x = d.stacked_x();
        // Intercept column.
        assert!(x.column(0).iter().all(|v| *v == 1.0));
        // Standardized gene columns: mean 0, sample variance 1.
        for c in 1..=100 {
            let col = x.column(c);
            let mean = col.sum() / n_rows as f64;
            let var =
                col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n_rows as f64 - 1.0);
            assert!(mean.abs() < 1e-10, "column {c} mean {mean}");
            assert_relative_eq!(var, 1.0, epsilon = 1e-10);
        }
        // Z equals X.
        assert_eq!(d.block(0).z, d.block(0).x);
    }

    #[test]
    fn riboflavin_design_requires_hundred_genes() {
        let table = RiboflavinTable {
            subject: vec!["a".into(), "a".into()],
            time: vec![0.0, 1.0],
            y: vec![0.0, 1.0],
            genes: DMatrix::zeros(2, 10),
            gene_names: (1..=10).map(|g| format!("g{g}")).collect(),
        };
        assert!(build_riboflavin_design(&table, 3).is_err());
    }

    #[test]
    fn draws_round_trip_through_disk() {
        let dir = temp_dir();
        let mut rng = CmeRng::seed_from_u64(3);
        let draws = PosteriorDraws {
            beta: DMatrix::from_fn(7, 3, |_, _| rng.random::<f64>() * 2.0 - 1.0),
            tau2: DVector::from_fn(7, |_, _| rng.random::<f64>() + 0.1),
            gamma: DMatrix::from_fn(7, 4, |_, _| rng.random::<f64>()),
            meta: RunMeta {
                n: 2,
                p: 3,
                q: 2,
                k1: 2,
                k2: 2,
                iterations: 10,
                burn_in: 3,
                thin: 1,
                master_seed: 5,
                projection_seed: 6,
                chain_seed: 7,
            },
        };
        let cfg = FitConfig { k1: 2, k2: 2, iterations: 10, burn_in: 3, seed: 5, ..FitConfig::default() };
        let files = write_draws(dir.path(), &draws, &cfg).unwrap();
        assert_eq!(files.len(), 5);
        let (loaded, loaded_cfg) = read_draws(dir.path()).unwrap();
        assert_eq!(loaded.beta, draws.beta);
        assert_eq!(loaded.tau2, draws.tau2);
        assert_eq!(loaded.gamma, draws.gamma);
        assert_eq!(loaded.meta.chain_seed, 7);
        assert_eq!(loaded_cfg.iterations, 10);
    }

    #[test]
    fn seventeen_digit_format_round_trips() {
        let values = [0.1, 1.0 / 3.0, f64::MIN_POSITIVE, 1e300, -2.5e-17, 123456.789];
        for v in values {
            let parsed: f64 = fmt_f64(v).parse().unwrap();
            assert_eq!(parsed.to_bits(), v.to_bits(), "round trip failed for {v}");
        }
    }
}
