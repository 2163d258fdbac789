//! On-disk formats: dataset matrices, dataset bundles, and trained models.
//!
//! Matrix files (magic `ACQD`), little-endian throughout:
//!
//! ```text
//! magic   4 bytes  "ACQD"
//! version u32      1
//! rows    u32
//! cols    u32
//! payload row-major f64 for feature matrices,
//!         row-major u8 (0/1) for label matrices
//! ```
//!
//! Model files (magic `ACQH`):
//!
//! ```text
//! magic   4 bytes  "ACQH"
//! version u32      1
//! d_x, d_y, classes, items, k, m, n   u32 each
//! lambda, mu  f64; max_iters u32; tol, ridge_eps f64; seed u64
//! W_x (d_x*k), W_y (d_y*k), codebook (k*m*n), M (classes*k), drift (items)
//!         all row-major f64
//! codes   items*m atom indices, u8 when n <= 256 else u16, item-major
//! ```
//!
//! Readers check the magic, version, and exact payload length before
//! allocating, and re-validate every domain invariant on load. Writes go
//! through a temp file in the same directory followed by a rename.

use std::fs;
use std::io::{Cursor, Read};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::{DMatrix, DVector};

use crate::error::Error;
use crate::model::{
    AcqhModel, Dims, FeatureMatrix, Hyperparams, LabelMatrix, LabelRegressor, Modality,
    Projections,
};
use crate::quantizer::{Codebook, IndicatorCodes};
use crate::Result;

pub const MATRIX_MAGIC: [u8; 4] = *b"ACQD";
pub const MODEL_MAGIC: [u8; 4] = *b"ACQH";
pub const FORMAT_VERSION: u32 = 1;

/// Dataset encodings understood by [`load_dataset`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    Binary,
    Csv,
}

impl DatasetFormat {
    /// Picks the format from the file extension (`.csv` means CSV).
    pub fn detect(path: &Path) -> DatasetFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => DatasetFormat::Csv,
            _ => DatasetFormat::Binary,
        }
    }
}

/// Bytes per stored atom index for a codebook with `n_atoms` atoms.
pub fn code_entry_bytes(n_atoms: usize) -> usize {
    if n_atoms <= 256 {
        1
    } else {
        2
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp_name = path.as_os_str().to_owned();
    tmp_name.push(".tmp");
    let tmp = PathBuf::from(tmp_name);
    fs::write(&tmp, bytes).map_err(|e| Error::io("writing temp file", &tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io("renaming temp file", path, e))
}

/// Writes a text file through the same temp-then-rename path as the
/// binary formats.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes())
}

fn matrix_header(rows: usize, cols: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + rows * cols * 8);
    out.extend_from_slice(&MATRIX_MAGIC);
    out.write_u32::<LittleEndian>(FORMAT_VERSION).unwrap();
    out.write_u32::<LittleEndian>(rows as u32).unwrap();
    out.write_u32::<LittleEndian>(cols as u32).unwrap();
    out
}

fn read_matrix_header(cursor: &mut Cursor<&[u8]>, path: &Path) -> Result<(usize, usize)> {
    let mut magic = [0u8; 4];
    cursor
        .read_exact(&mut magic)
        .map_err(|e| Error::io("reading header", path, e))?;
    if magic != MATRIX_MAGIC {
        return Err(Error::Format(format!(
            "{}: bad magic {:?}, expected ACQD",
            path.display(),
            magic
        )));
    }
    let version = cursor
        .read_u32::<LittleEndian>()
        .map_err(|e| Error::io("reading header", path, e))?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported version {}",
            path.display(),
            version
        )));
    }
    let rows = cursor
        .read_u32::<LittleEndian>()
        .map_err(|e| Error::io("reading header", path, e))? as usize;
    let cols = cursor
        .read_u32::<LittleEndian>()
        .map_err(|e| Error::io("reading header", path, e))? as usize;
    Ok((rows, cols))
}

/// Writes a real matrix in the binary `ACQD` layout.
pub fn write_real_matrix(path: &Path, matrix: &DMatrix<f64>) -> Result<()> {
    let mut out = matrix_header(matrix.nrows(), matrix.ncols());
    for r in 0..matrix.nrows() {
        for c in 0..matrix.ncols() {
            out.write_f64::<LittleEndian>(matrix[(r, c)]).unwrap();
        }
    }
    write_atomic(path, &out)
}

/// Reads a binary `ACQD` real matrix.
pub fn read_real_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io("reading matrix file", path, e))?;
    let mut cursor = Cursor::new(bytes.as_slice());
    let (rows, cols) = read_matrix_header(&mut cursor, path)?;
    let expected = 16u64 + rows as u64 * cols as u64 * 8;
    if bytes.len() as u64 != expected {
        return Err(Error::Format(format!(
            "{}: expected {} bytes for a {}x{} real matrix, found {}",
            path.display(),
            expected,
            rows,
            cols,
            bytes.len()
        )));
    }
    let mut matrix = DMatrix::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            matrix[(r, c)] = cursor.read_f64::<LittleEndian>().unwrap();
        }
    }
    Ok(matrix)
}

/// Writes a label matrix in the binary `ACQD` layout (u8 payload).
pub fn write_labels(path: &Path, labels: &LabelMatrix) -> Result<()> {
    let data = labels.data();
    let mut out = matrix_header(data.nrows(), data.ncols());
    for r in 0..data.nrows() {
        for c in 0..data.ncols() {
            out.push(data[(r, c)] as u8);
        }
    }
    write_atomic(path, &out)
}

/// Reads a binary `ACQD` label matrix and validates the 0/1 domain.
pub fn read_labels(path: &Path) -> Result<LabelMatrix> {
    let bytes = fs::read(path).map_err(|e| Error::io("reading label file", path, e))?;
    let mut cursor = Cursor::new(bytes.as_slice());
    let (rows, cols) = read_matrix_header(&mut cursor, path)?;
    let expected = 16u64 + rows as u64 * cols as u64;
    if bytes.len() as u64 != expected {
        return Err(Error::Format(format!(
            "{}: expected {} bytes for a {}x{} label matrix, found {}",
            path.display(),
            expected,
            rows,
            cols,
            bytes.len()
        )));
    }
    let mut matrix = DMatrix::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            matrix[(r, c)] = cursor.read_u8().unwrap() as f64;
        }
    }
    LabelMatrix::new(matrix)
}

/// Writes a matrix as CSV, one line per matrix row. The shortest
/// round-tripping decimal form is used, so CSV and binary encodings load
/// to identical values.
pub fn write_real_matrix_csv(path: &Path, matrix: &DMatrix<f64>) -> Result<()> {
    let mut out = String::new();
    for r in 0..matrix.nrows() {
        let row: Vec<String> = (0..matrix.ncols())
            .map(|c| format!("{}", matrix[(r, c)]))
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

fn parse_csv(path: &Path) -> Result<DMatrix<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io("reading csv", path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|cell| {
                cell.trim().parse::<f64>().map_err(|_| {
                    Error::Format(format!(
                        "{}: line {}: '{}' is not a number",
                        path.display(),
                        line_no + 1,
                        cell.trim()
                    ))
                })
            })
            .collect::<Result<_>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::Format(format!(
                    "{}: line {} has {} cells, expected {}",
                    path.display(),
                    line_no + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Format(format!("{}: empty csv", path.display())));
    }
    let (r, c) = (rows.len(), rows[0].len());
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

/// Reads a CSV real matrix (one line per matrix row).
pub fn read_real_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    parse_csv(path)
}

/// Writes labels as CSV of 0/1 integers.
pub fn write_labels_csv(path: &Path, labels: &LabelMatrix) -> Result<()> {
    let data = labels.data();
    let mut out = String::new();
    for r in 0..data.nrows() {
        let row: Vec<String> = (0..data.ncols())
            .map(|c| format!("{}", data[(r, c)] as u8))
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

/// Reads a CSV label matrix and validates the 0/1 domain.
pub fn read_labels_csv(path: &Path) -> Result<LabelMatrix> {
    LabelMatrix::new(parse_csv(path)?)
}

/// Reads a feature matrix in either format and tags its modality.
pub fn read_features(path: &Path, format: DatasetFormat, modality: Modality) -> Result<FeatureMatrix> {
    let matrix = match format {
        DatasetFormat::Binary => read_real_matrix(path)?,
        DatasetFormat::Csv => read_real_matrix_csv(path)?,
    };
    FeatureMatrix::new(matrix, modality)
}

/// Reads a label matrix in either format.
pub fn read_label_file(path: &Path, format: DatasetFormat) -> Result<LabelMatrix> {
    match format {
        DatasetFormat::Binary => read_labels(path),
        DatasetFormat::Csv => read_labels_csv(path),
    }
}

/// Held-out query features and labels, same feature dims and classes as
/// the database split.
#[derive(Debug, Clone, PartialEq)]
pub struct QuerySplit {
    pub x: FeatureMatrix,
    pub y: FeatureMatrix,
    pub labels: LabelMatrix,
}

/// A loaded bimodal dataset: database features per modality, labels, and
/// an optional query split.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub x: FeatureMatrix,
    pub y: FeatureMatrix,
    pub labels: LabelMatrix,
    pub query: Option<QuerySplit>,
}

impl DatasetBundle {
    /// Cross-checks item counts, modality tags, and query-split shapes.
    pub fn validate(&self) -> Result<()> {
        let n = self.x.n_items();
        if self.y.n_items() != n || self.labels.n_items() != n {
            return Err(Error::dimension(
                "dataset bundle",
                format!("{} items", n),
                format!("Y has {}, L has {}", self.y.n_items(), self.labels.n_items()),
            ));
        }
        if self.x.modality() != Modality::Image || self.y.modality() != Modality::Text {
            return Err(Error::InvalidArgument("bundle modalities must be (image, text)".into()));
        }
        if let Some(q) = &self.query {
            if q.x.dim() != self.x.dim() || q.y.dim() != self.y.dim() {
                return Err(Error::dimension(
                    "query split feature dims",
                    format!("{}x{}", self.x.dim(), self.y.dim()),
                    format!("{}x{}", q.x.dim(), q.y.dim()),
                ));
            }
            if q.labels.n_classes() != self.labels.n_classes() {
                return Err(Error::dimension(
                    "query split classes",
                    format!("{}", self.labels.n_classes()),
                    format!("{}", q.labels.n_classes()),
                ));
            }
            let nq = q.x.n_items();
            if q.y.n_items() != nq || q.labels.n_items() != nq {
                return Err(Error::dimension(
                    "query split items",
                    format!("{}", nq),
                    format!("Y has {}, L has {}", q.y.n_items(), q.labels.n_items()),
                ));
            }
        }
        Ok(())
    }

    /// Writes the bundle under `dir` with the standard file names
    /// (`x.acqd`, `y.acqd`, `labels.acqd`, `query_*.acqd`).
    pub fn save_binary(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io("creating dataset dir", dir, e))?;
        write_real_matrix(&dir.join("x.acqd"), self.x.data())?;
        write_real_matrix(&dir.join("y.acqd"), self.y.data())?;
        write_labels(&dir.join("labels.acqd"), &self.labels)?;
        if let Some(q) = &self.query {
            write_real_matrix(&dir.join("query_x.acqd"), q.x.data())?;
            write_real_matrix(&dir.join("query_y.acqd"), q.y.data())?;
            write_labels(&dir.join("query_labels.acqd"), &q.labels)?;
        }
        Ok(())
    }
}

/// File locations for [`load_dataset`]. The three query paths must be all
/// present or all absent.
#[derive(Debug, Clone, Default)]
pub struct DatasetPaths {
    pub x: PathBuf,
    pub y: PathBuf,
    pub labels: PathBuf,
    pub query_x: Option<PathBuf>,
    pub query_y: Option<PathBuf>,
    pub query_labels: Option<PathBuf>,
}

/// Loads and validates a dataset bundle.
pub fn load_dataset(paths: &DatasetPaths, format: DatasetFormat) -> Result<DatasetBundle> {
    let x = read_features(&paths.x, format, Modality::Image)?;
    let y = read_features(&paths.y, format, Modality::Text)?;
    let labels = read_label_file(&paths.labels, format)?;
    let query = match (&paths.query_x, &paths.query_y, &paths.query_labels) {
        (Some(qx), Some(qy), Some(ql)) => Some(QuerySplit {
            x: read_features(qx, format, Modality::Image)?,
            y: read_features(qy, format, Modality::Text)?,
            labels: read_label_file(ql, format)?,
        }),
        (None, None, None) => None,
        _ => {
            return Err(Error::InvalidArgument(
                "query split needs all of query x, query y, and query labels".into(),
            ))
        }
    };
    let bundle = DatasetBundle {
        x,
        y,
        labels,
        query,
    };
    bundle.validate()?;
    Ok(bundle)
}

fn push_row_major(out: &mut Vec<u8>, matrix: &DMatrix<f64>) {
    for r in 0..matrix.nrows() {
        for c in 0..matrix.ncols() {
            out.write_f64::<LittleEndian>(matrix[(r, c)]).unwrap();
        }
    }
}

fn read_row_major(cursor: &mut Cursor<&[u8]>, rows: usize, cols: usize) -> DMatrix<f64> {
    let mut matrix = DMatrix::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            matrix[(r, c)] = cursor.read_f64::<LittleEndian>().unwrap();
        }
    }
    matrix
}

/// Serializes a model to the `ACQH` byte layout.
pub fn model_to_bytes(model: &AcqhModel) -> Vec<u8> {
    let d = &model.dims;
    let h = &model.hyper;
    let mut out = Vec::new();
    out.extend_from_slice(&MODEL_MAGIC);
    out.write_u32::<LittleEndian>(FORMAT_VERSION).unwrap();
    for v in [d.d_x, d.d_y, d.n_classes, d.n_items, h.k, h.m, h.n] {
        out.write_u32::<LittleEndian>(v as u32).unwrap();
    }
    out.write_f64::<LittleEndian>(h.lambda).unwrap();
    out.write_f64::<LittleEndian>(h.mu).unwrap();
    out.write_u32::<LittleEndian>(h.max_iters as u32).unwrap();
    out.write_f64::<LittleEndian>(h.tol).unwrap();
    out.write_f64::<LittleEndian>(h.ridge_eps).unwrap();
    out.write_u64::<LittleEndian>(h.seed).unwrap();

    push_row_major(&mut out, &model.projections.w_x);
    push_row_major(&mut out, &model.projections.w_y);
    push_row_major(&mut out, &model.codebook.concat());
    push_row_major(&mut out, &model.regressor.m);
    for i in 0..d.n_items {
        out.write_f64::<LittleEndian>(model.regressor.drift[i]).unwrap();
    }

    if code_entry_bytes(h.n) == 1 {
        for &a in model.codes.as_slice() {
            out.push(a as u8);
        }
    } else {
        for &a in model.codes.as_slice() {
            out.write_u16::<LittleEndian>(a).unwrap();
        }
    }
    out
}

/// Header length plus all payload sections, in bytes.
fn expected_model_len(d_x: u64, d_y: u64, c: u64, items: u64, k: u64, m: u64, n: u64) -> u64 {
    let header = 4 + 4 + 7 * 4 + 8 + 8 + 4 + 8 + 8 + 8;
    let reals = d_x * k + d_y * k + k * m * n + c * k + items;
    header + reals * 8 + items * m * code_entry_bytes(n as usize) as u64
}

/// Parses and validates a model from its byte form.
pub fn model_from_bytes(bytes: &[u8]) -> Result<AcqhModel> {
    let mut cursor = Cursor::new(bytes);
    let mut magic = [0u8; 4];
    cursor
        .read_exact(&mut magic)
        .map_err(|_| Error::Format("model file shorter than its header".into()))?;
    if magic != MODEL_MAGIC {
        return Err(Error::Format(format!("bad model magic {:?}, expected ACQH", magic)));
    }
    let version = cursor
        .read_u32::<LittleEndian>()
        .map_err(|_| Error::Format("model file shorter than its header".into()))?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported model version {}", version)));
    }
    let mut dims = [0u64; 7];
    for v in dims.iter_mut() {
        *v = cursor
            .read_u32::<LittleEndian>()
            .map_err(|_| Error::Format("model file shorter than its header".into()))? as u64;
    }
    let [d_x, d_y, c, items, k, m, n] = dims;
    let expected = expected_model_len(d_x, d_y, c, items, k, m, n);
    if bytes.len() as u64 != expected {
        return Err(Error::Format(format!(
            "model payload is {} bytes, expected {}",
            bytes.len(),
            expected
        )));
    }
    let read_err = |_| Error::Format("model file truncated".into());
    let lambda = cursor.read_f64::<LittleEndian>().map_err(read_err)?;
    let mu = cursor.read_f64::<LittleEndian>().map_err(read_err)?;
    let max_iters = cursor.read_u32::<LittleEndian>().map_err(read_err)? as usize;
    let tol = cursor.read_f64::<LittleEndian>().map_err(read_err)?;
    let ridge_eps = cursor.read_f64::<LittleEndian>().map_err(read_err)?;
    let seed = cursor.read_u64::<LittleEndian>().map_err(read_err)?;

    let (d_x, d_y, c, items, k, m, n) = (
        d_x as usize,
        d_y as usize,
        c as usize,
        items as usize,
        k as usize,
        m as usize,
        n as usize,
    );
    let w_x = read_row_major(&mut cursor, d_x, k);
    let w_y = read_row_major(&mut cursor, d_y, k);
    let concat = read_row_major(&mut cursor, k, m * n);
    let m_reg = read_row_major(&mut cursor, c, k);
    let mut drift = DVector::zeros(items);
    for i in 0..items {
        drift[i] = cursor.read_f64::<LittleEndian>().unwrap();
    }
    let mut atoms = Vec::with_capacity(items * m);
    if code_entry_bytes(n) == 1 {
        for _ in 0..items * m {
            atoms.push(cursor.read_u8().unwrap() as u16);
        }
    } else {
        for _ in 0..items * m {
            atoms.push(cursor.read_u16::<LittleEndian>().unwrap());
        }
    }

    let stages = (0..m)
        .map(|t| concat.view((0, t * n), (k, n)).into_owned())
        .collect();
    let model = AcqhModel {
        projections: Projections { w_x, w_y },
        codebook: Codebook::new(stages)?,
        codes: IndicatorCodes::new(atoms, m, n)?,
        regressor: LabelRegressor { m: m_reg, drift },
        hyper: Hyperparams {
            k,
            m,
            n,
            lambda,
            mu,
            max_iters,
            tol,
            ridge_eps,
            seed,
        },
        dims: Dims {
            d_x,
            d_y,
            n_classes: c,
            n_items: items,
        },
    };
    model.validate()?;
    Ok(model)
}

/// Writes a model file atomically.
pub fn write_model(path: &Path, model: &AcqhModel) -> Result<()> {
    write_atomic(path, &model_to_bytes(model))
}

/// Reads a model file.
pub fn read_model(path: &Path) -> Result<AcqhModel> {
    let bytes = fs::read(path).map_err(|e| Error::io("reading model file", path, e))?;
    model_from_bytes(&bytes)
}
