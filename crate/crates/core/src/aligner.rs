//! Affine map from a classifier's representation space into the shared
//! vision-language embedding space.
//!
//! The map `y = Wᵀx + b` is fit in closed form by ridge least squares on
//! centered data: `(X_cᵀX_c + nλI) W = X_cᵀY_c`, then `b = ȳ − Wᵀx̄`.
//! Centering keeps the bias out of the penalty.

use std::fs;
use std::path::Path;

use faer::linalg::solvers::Solve;
use faer::{Mat, Side};

use crate::embstore::EmbeddingMatrix;
use crate::error::{Error, Result};

pub const ALIGNER_MAGIC: [u8; 4] = *b"ALN1";

pub const DEFAULT_RIDGE: f64 = 1e-6;

/// Smallest accepted squared Cholesky pivot, relative to the largest
/// diagonal entry of the normal matrix, for unregularized fits.
const RANK_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct AlignerModel {
    source_dim: usize,
    target_dim: usize,
    /// `source_dim x target_dim`, row-major.
    weights: Vec<f64>,
    bias: Vec<f64>,
    lambda: f64,
    r_squared: f64,
    samples: usize,
}

impl AlignerModel {
    pub fn new(
        source_dim: usize,
        target_dim: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
        lambda: f64,
    ) -> Result<Self> {
        if source_dim == 0 || target_dim == 0 {
            return Err(Error::Shape("aligner dimensions must be positive".into()));
        }
        if weights.len() != source_dim * target_dim {
            return Err(Error::Shape(format!(
                "weights need {} values for {source_dim}x{target_dim}, got {}",
                source_dim * target_dim,
                weights.len()
            )));
        }
        if bias.len() != target_dim {
            return Err(Error::Shape(format!(
                "bias needs {target_dim} values, got {}",
                bias.len()
            )));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::Config(format!("ridge lambda must be finite and >= 0, got {lambda}")));
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("aligner parameters must be finite".into()));
        }
        Ok(Self {
            source_dim,
            target_dim,
            weights,
            bias,
            lambda,
            r_squared: f64::NAN,
            samples: 0,
        })
    }

    pub fn identity(dim: usize) -> Result<Self> {
        let mut weights = vec![0.0; dim * dim];
        for i in 0..dim {
            weights[i * dim + i] = 1.0;
        }
        Self::new(dim, dim, weights, vec![0.0; dim], 0.0)
    }

    pub fn source_dim(&self) -> usize {
        self.source_dim
    }

    pub fn target_dim(&self) -> usize {
        self.target_dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, source: usize, target: usize) -> f64 {
        self.weights[source * self.target_dim + target]
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Training-set R², or NaN for models that were not produced by a fit.
    pub fn r_squared(&self) -> f64 {
        self.r_squared
    }

    /// Number of training pairs used by the fit (0 if not fitted).
    pub fn samples(&self) -> usize {
        self.samples
    }

    /// True when the fit saw fewer than `source_dim + 1` pairs, so the
    /// solution is pinned down by the ridge term rather than the data.
    pub fn is_underdetermined(&self) -> bool {
        self.samples < self.source_dim + 1
    }

    /// Applies the map to one row, in `f64`.
    pub fn apply_row(&self, x: &[f32], out: &mut [f64]) {
        out.copy_from_slice(&self.bias);
        for (i, &xi) in x.iter().enumerate() {
            let xi = xi as f64;
            let w = &self.weights[i * self.target_dim..(i + 1) * self.target_dim];
            for (o, &wij) in out.iter_mut().zip(w) {
                *o += wij * xi;
            }
        }
    }

    fn check_source(&self, source: &EmbeddingMatrix) -> Result<()> {
        if source.cols() != self.source_dim {
            return Err(Error::Shape(format!(
                "aligner expects {}-dimensional inputs, got {}",
                self.source_dim,
                source.cols()
            )));
        }
        Ok(())
    }
}

/// Closed-form ridge fit of `target ≈ Wᵀ source + b`.
pub fn fit_aligner(source: &EmbeddingMatrix, target: &EmbeddingMatrix, lambda: f64) -> Result<AlignerModel> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Config(format!("ridge lambda must be finite and >= 0, got {lambda}")));
    }
    if source.rows() != target.rows() {
        return Err(Error::Shape(format!(
            "source has {} rows but target has {}",
            source.rows(),
            target.rows()
        )));
    }
    let n = source.rows();
    if n == 0 {
        return Err(Error::Shape("cannot fit an aligner on zero pairs".into()));
    }
    let (ds, dt) = (source.cols(), target.cols());

    let x_mean = column_means(source);
    let y_mean = column_means(target);
    let xc = Mat::<f64>::from_fn(n, ds, |i, j| source.row(i)[j] as f64 - x_mean[j]);
    let yc = Mat::<f64>::from_fn(n, dt, |i, j| target.row(i)[j] as f64 - y_mean[j]);

    let mut normal = xc.transpose() * &xc;
    let ridge = n as f64 * lambda;
    for i in 0..ds {
        normal[(i, i)] += ridge;
    }
    let max_diag = (0..ds).map(|i| normal[(i, i)]).fold(0.0f64, f64::max);

    let llt = normal
        .llt(Side::Lower)
        .map_err(|_| Error::RankDeficient { pivot: 0, dim: ds })?;
    if lambda == 0.0 {
        let l = llt.L();
        if let Some(pivot) = (0..ds).find(|&i| l[(i, i)] * l[(i, i)] <= RANK_TOLERANCE * max_diag) {
            return Err(Error::RankDeficient { pivot, dim: ds });
        }
    }

    let mut w = xc.transpose() * &yc;
    llt.solve_in_place(&mut w);

    let mut weights = Vec::with_capacity(ds * dt);
    for i in 0..ds {
        for j in 0..dt {
            weights.push(w[(i, j)]);
        }
    }
    let bias: Vec<f64> = (0..dt)
        .map(|j| y_mean[j] - (0..ds).map(|i| w[(i, j)] * x_mean[i]).sum::<f64>())
        .collect();

    let mut model = AlignerModel::new(ds, dt, weights, bias, lambda)?;
    model.samples = n;
    model.r_squared = r_squared_of(&model, source, target)?;
    Ok(model)
}

/// Maps every row of `source` through the aligner.
pub fn map(model: &AlignerModel, source: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
    model.check_source(source)?;
    let mut data = Vec::with_capacity(source.rows() * model.target_dim);
    let mut buf = vec![0.0; model.target_dim];
    for row in source.iter_rows() {
        model.apply_row(row, &mut buf);
        data.extend(buf.iter().map(|&v| v as f32));
    }
    EmbeddingMatrix::new(source.rows(), model.target_dim, data)
}

/// Coefficient of determination pooled over all target coordinates.
pub fn r_squared_of(model: &AlignerModel, source: &EmbeddingMatrix, target: &EmbeddingMatrix) -> Result<f64> {
    model.check_source(source)?;
    if target.cols() != model.target_dim || target.rows() != source.rows() {
        return Err(Error::Shape(format!(
            "target is {}x{}, expected {}x{}",
            target.rows(),
            target.cols(),
            source.rows(),
            model.target_dim
        )));
    }
    let y_mean = column_means(target);
    let mut pred = vec![0.0; model.target_dim];
    let (mut ss_res, mut ss_tot) = (0.0f64, 0.0f64);
    for (x, y) in source.iter_rows().zip(target.iter_rows()) {
        model.apply_row(x, &mut pred);
        for ((&p, &yv), &m) in pred.iter().zip(y).zip(&y_mean) {
            let yv = yv as f64;
            ss_res += (p - yv) * (p - yv);
            ss_tot += (yv - m) * (yv - m);
        }
    }
    if ss_res == 0.0 {
        return Ok(1.0);
    }
    if ss_tot == 0.0 {
        return Err(Error::DegenerateTarget);
    }
    Ok(1.0 - ss_res / ss_tot)
}

/// Mean squared error per pair, `(1/n) Σ ‖map(x) − y‖²`.
pub fn training_mse(model: &AlignerModel, source: &EmbeddingMatrix, target: &EmbeddingMatrix) -> Result<f64> {
    model.check_source(source)?;
    if target.rows() != source.rows() || target.cols() != model.target_dim {
        return Err(Error::Shape("target does not match source rows or aligner output".into()));
    }
    if source.rows() == 0 {
        return Ok(0.0);
    }
    let mut pred = vec![0.0; model.target_dim];
    let mut total = 0.0;
    for (x, y) in source.iter_rows().zip(target.iter_rows()) {
        model.apply_row(x, &mut pred);
        total += pred.iter().zip(y).map(|(&p, &yv)| (p - yv as f64).powi(2)).sum::<f64>();
    }
    Ok(total / source.rows() as f64)
}

fn column_means(m: &EmbeddingMatrix) -> Vec<f64> {
    let mut means = vec![0.0; m.cols()];
    for row in m.iter_rows() {
        for (acc, &v) in means.iter_mut().zip(row) {
            *acc += v as f64;
        }
    }
    if m.rows() > 0 {
        let n = m.rows() as f64;
        means.iter_mut().for_each(|v| *v /= n);
    }
    means
}

pub fn encode_aligner(model: &AlignerModel) -> Result<Vec<u8>> {
    let ds = u32::try_from(model.source_dim).map_err(|_| Error::Shape("source dimension exceeds u32".into()))?;
    let dt = u32::try_from(model.target_dim).map_err(|_| Error::Shape("target dimension exceeds u32".into()))?;
    let mut out = Vec::with_capacity(28 + 8 * (model.weights.len() + model.bias.len()));
    out.extend_from_slice(&ALIGNER_MAGIC);
    out.extend_from_slice(&ds.to_le_bytes());
    out.extend_from_slice(&dt.to_le_bytes());
    out.extend_from_slice(&model.lambda.to_le_bytes());
    out.extend_from_slice(&model.r_squared.to_le_bytes());
    for v in model.weights.iter().chain(&model.bias) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_aligner(bytes: &[u8]) -> Result<AlignerModel> {
    const HEAD: usize = 28;
    if bytes.len() < HEAD {
        return Err(Error::format(bytes.len() as u64, "aligner file shorter than its 28-byte header"));
    }
    if bytes[0..4] != ALIGNER_MAGIC {
        return Err(Error::format(0, "expected magic \"ALN1\""));
    }
    let ds = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let dt = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let lambda = f64::from_le_bytes(bytes[12..20].try_into().unwrap());
    let r_squared = f64::from_le_bytes(bytes[20..28].try_into().unwrap());
    let count = ds * dt + dt;
    let expected = HEAD + count * 8;
    if bytes.len() != expected {
        return Err(Error::format(
            bytes.len().min(expected) as u64,
            format!("aligner payload should end at byte {expected}, file has {}", bytes.len()),
        ));
    }
    let mut values = Vec::with_capacity(count);
    for (i, chunk) in bytes[HEAD..].chunks_exact(8).enumerate() {
        let v = f64::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::format((HEAD + i * 8) as u64, "non-finite aligner parameter"));
        }
        values.push(v);
    }
    let bias = values.split_off(ds * dt);
    let mut model = AlignerModel::new(ds, dt, values, bias, lambda).map_err(|e| Error::format(4, e.to_string()))?;
    model.r_squared = r_squared;
    Ok(model)
}

pub fn save_aligner(model: &AlignerModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_aligner(model)?).map_err(|e| Error::io(path, e))
}

pub fn load_aligner(path: impl AsRef<Path>) -> Result<AlignerModel> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_aligner(&bytes)
}
