//! On-disk formats: headerless numeric CSV, model directories, dataset
//! bundles and sinograms with a JSON sidecar.
//!
//! A fitted model directory holds `meta.json`, `C.csv` (`p × n`), `Xs.csv`
//! and `beta.csv`. An aggregate directory holds `meta.json`, `coeffs.json`
//! and one `member_<j>` subdirectory per member.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::aggregate::{AggregateModel, Member};
use crate::error::{check_dim, Error, Result};
use crate::estimator::{FittedModel, ShiftDataset};
use crate::imaging::Sinogram;
use crate::kernels::KernelSpec;
use crate::scalar::Real;
use crate::spectral::FilterSpec;

pub fn write_matrix_csv<T: Real>(path: impl AsRef<Path>, m: ArrayView2<T>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for row in m.rows() {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a headerless CSV of numbers; every row must have the same length.
pub fn read_matrix_csv<T: Real>(path: impl AsRef<Path>) -> Result<Array2<T>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for record in r.records() {
        let record = record?;
        let offset = record.position().map_or(0, |p| p.byte() as usize);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        match cols {
            None => cols = Some(record.len()),
            Some(c) if c != record.len() => {
                return Err(Error::Parse {
                    offset,
                    message: format!("row {rows} has {} fields, expected {c}", record.len()),
                })
            }
            _ => {}
        }
        for field in record.iter() {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                offset,
                message: format!("not a number: {field:?}"),
            })?;
            values.push(T::lit(v));
        }
        rows += 1;
    }
    let cols = cols.ok_or(Error::Empty("CSV file has no rows"))?;
    Ok(Array2::from_shape_vec((rows, cols), values).expect("consistent row lengths"))
}

pub fn write_vector_csv<T: Real>(path: impl AsRef<Path>, v: ArrayView1<T>) -> Result<()> {
    write_matrix_csv(path, v.insert_axis(ndarray::Axis(1)))
}

pub fn read_vector_csv<T: Real>(path: impl AsRef<Path>) -> Result<Array1<T>> {
    let m: Array2<T> = read_matrix_csv(path)?;
    if m.ncols() != 1 {
        return Err(Error::Parse {
            offset: 0,
            message: format!("expected one column, found {}", m.ncols()),
        });
    }
    Ok(m.column(0).to_owned())
}

fn write_json(path: impl AsRef<Path>, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn read_json<V: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<V> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
#[serde(bound = "T: Real")]
enum ModelMeta<T> {
    Fitted {
        kernel: KernelSpec<T>,
        filter: FilterSpec<T>,
        n: usize,
        d: usize,
        p: usize,
    },
    Aggregate {
        members: usize,
    },
}

/// Coefficients of an aggregate as stored in `coeffs.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoeffsFile {
    pub kept: Vec<usize>,
    pub coeffs: Vec<f64>,
    pub cond: f64,
}

pub fn save_fitted<T: Real>(dir: impl AsRef<Path>, model: &FittedModel<T>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let meta = ModelMeta::Fitted {
        kernel: *model.kernel(),
        filter: *model.filter(),
        n: model.n(),
        d: model.xs().ncols(),
        p: model.coef().nrows(),
    };
    write_json(dir.join("meta.json"), &meta)?;
    write_matrix_csv(dir.join("C.csv"), model.coef())?;
    write_matrix_csv(dir.join("Xs.csv"), model.xs())?;
    write_vector_csv(dir.join("beta.csv"), model.beta())
}

pub fn save_aggregate<T: Real>(dir: impl AsRef<Path>, model: &AggregateModel<T>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    write_json(
        dir.join("meta.json"),
        &ModelMeta::<T>::Aggregate {
            members: model.members().len(),
        },
    )?;
    write_json(dir.join("coeffs.json"), &coeffs_file(model))?;
    for (j, m) in model.members().iter().enumerate() {
        save_member(member_dir(dir, j), m)?;
    }
    Ok(())
}

pub fn coeffs_file<T: Real>(model: &AggregateModel<T>) -> CoeffsFile {
    CoeffsFile {
        kept: model.kept().to_vec(),
        coeffs: model.coeffs().iter().map(|c| c.as_f64()).collect(),
        cond: model.cond().as_f64(),
    }
}

fn member_dir(dir: &Path, j: usize) -> PathBuf {
    dir.join(format!("member_{j}"))
}

pub fn save_member<T: Real>(dir: impl AsRef<Path>, m: &Member<T>) -> Result<()> {
    match m {
        Member::Fitted(f) => save_fitted(dir, f),
        Member::Aggregate(a) => save_aggregate(dir, a),
    }
}

/// Loads either kind of model directory.
pub fn load_member<T: Real>(dir: impl AsRef<Path>) -> Result<Member<T>> {
    let dir = dir.as_ref();
    let meta: ModelMeta<T> = read_json(dir.join("meta.json"))?;
    match meta {
        ModelMeta::Fitted { kernel, filter, n, d, p } => {
            let coef: Array2<T> = read_matrix_csv(dir.join("C.csv"))?;
            let xs: Array2<T> = read_matrix_csv(dir.join("Xs.csv"))?;
            let beta: Array1<T> = read_vector_csv(dir.join("beta.csv"))?;
            check_dim("stored coefficient rows", p, coef.nrows())?;
            check_dim("stored training rows", n, xs.nrows())?;
            check_dim("stored training columns", d, xs.ncols())?;
            Ok(Member::Fitted(FittedModel::from_parts(kernel, filter, xs, coef, beta)?))
        }
        ModelMeta::Aggregate { members } => {
            let cf: CoeffsFile = read_json(dir.join("coeffs.json"))?;
            let loaded = (0..members)
                .map(|j| load_member(member_dir(dir, j)))
                .collect::<Result<Vec<_>>>()?;
            let coeffs = cf.coeffs.iter().map(|&c| T::lit(c)).collect();
            Ok(Member::Aggregate(AggregateModel::from_parts(
                loaded,
                coeffs,
                cf.kept,
                T::lit(cf.cond),
            )?))
        }
    }
}

/// Writes `Xs.csv`, `Y.csv`, `Xt.csv` and, when present, `beta.csv`.
pub fn save_dataset<T: Real>(dir: impl AsRef<Path>, ds: &ShiftDataset<T>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    write_matrix_csv(dir.join("Xs.csv"), ds.xs())?;
    write_matrix_csv(dir.join("Y.csv"), ds.y())?;
    write_matrix_csv(dir.join("Xt.csv"), ds.xt())?;
    if let Some(b) = ds.beta() {
        write_vector_csv(dir.join("beta.csv"), b)?;
    }
    Ok(())
}

pub fn load_dataset<T: Real>(dir: impl AsRef<Path>) -> Result<ShiftDataset<T>> {
    let dir = dir.as_ref();
    let beta_path = dir.join("beta.csv");
    let beta = if beta_path.exists() {
        Some(read_vector_csv(beta_path)?)
    } else {
        None
    };
    ShiftDataset::new(
        read_matrix_csv(dir.join("Xs.csv"))?,
        read_matrix_csv(dir.join("Y.csv"))?,
        read_matrix_csv(dir.join("Xt.csv"))?,
        beta,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SinogramShape {
    pub n_ang: usize,
    pub n_det: usize,
}

fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// CSV with rows = detectors and columns = angles, plus a `.json` sidecar.
pub fn write_sinogram<T: Real>(path: impl AsRef<Path>, sino: &Sinogram<T>) -> Result<()> {
    let path = path.as_ref();
    write_matrix_csv(path, sino.data())?;
    write_json(
        sidecar(path),
        &SinogramShape {
            n_ang: sino.n_ang(),
            n_det: sino.n_det(),
        },
    )
}

pub fn read_sinogram<T: Real>(path: impl AsRef<Path>) -> Result<Sinogram<T>> {
    let path = path.as_ref();
    let data: Array2<T> = read_matrix_csv(path)?;
    let side = sidecar(path);
    if side.exists() {
        let shape: SinogramShape = read_json(side)?;
        check_dim("sinogram detectors", shape.n_det, data.nrows())?;
        check_dim("sinogram angles", shape.n_ang, data.ncols())?;
    }
    Sinogram::new(data)
}
