//! Datasets, the linear model and the contribution function `v(S)`.
//!
//! For a linear model `f(x) = β0 + βᵀx` every contribution function used here
//! has the form `v(S)(x*) = E f + Σ_{j∈S} γ_j (x*_j − x̄_j)`:
//!
//! * marginal (independent features): `γ_S = β_S`, so `v` is additive in `S`;
//! * conditional (Gaussian / regression of `f` on `x_S`):
//!   `γ_S = β_S + Σ_SS⁻¹ Σ_{S,S̄} β_{S̄}` with the training covariance `Σ`.
//!
//! The conditional form is what a per-coalition OLS regression of the training
//! predictions on `x_S` returns, evaluated exactly from the training moments.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::shapley::CoalitionMask;

/// Numeric table split into a training part and a part to explain.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<Vec<f64>>,
    response: Vec<f64>,
    feature_names: Vec<String>,
    response_name: String,
    split: usize,
}

impl Dataset {
    pub fn new(
        features: Vec<Vec<f64>>,
        response: Vec<f64>,
        feature_names: Vec<String>,
        response_name: String,
        split: usize,
    ) -> Result<Self> {
        let n = features.len();
        if response.len() != n {
            return Err(Error::invalid("feature rows and response differ in length"));
        }
        if split == 0 || split >= n {
            return Err(Error::invalid(format!("split {split} must leave both parts of {n} rows nonempty")));
        }
        let p = feature_names.len();
        if p == 0 {
            return Err(Error::invalid("dataset has no feature columns"));
        }
        if let Some(i) = features.iter().position(|r| r.len() != p) {
            return Err(Error::invalid(format!("row {} has {} features, expected {p}", i + 1, features[i].len())));
        }
        let finite = |x: &f64| x.is_finite();
        if !response.iter().all(finite) || !features.iter().flatten().all(finite) {
            return Err(Error::invalid("dataset contains non-finite values"));
        }
        Ok(Self {
            features,
            response,
            feature_names,
            response_name,
            split,
        })
    }

    pub fn feature_count(&self) -> usize {
        self.feature_names.len()
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn split_index(&self) -> usize {
        self.split
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn response_name(&self) -> &str {
        &self.response_name
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn response(&self) -> &[f64] {
        &self.response
    }

    pub fn train_rows(&self) -> &[Vec<f64>] {
        &self.features[..self.split]
    }

    pub fn train_response(&self) -> &[f64] {
        &self.response[..self.split]
    }

    /// Rows whose predictions are explained.
    pub fn explain_rows(&self) -> &[Vec<f64>] {
        &self.features[self.split..]
    }

    /// Column means and population covariance of the training features.
    pub fn train_moments(&self) -> (Vec<f64>, DMatrix<f64>) {
        let rows = self.train_rows();
        let p = self.feature_count();
        let n = rows.len() as f64;
        let mut means = vec![0.0; p];
        for r in rows {
            for (m, x) in means.iter_mut().zip(r) {
                *m += x;
            }
        }
        means.iter_mut().for_each(|m| *m /= n);
        let mut cov = DMatrix::zeros(p, p);
        for r in rows {
            for a in 0..p {
                let da = r[a] - means[a];
                for b in a..p {
                    cov[(a, b)] += da * (r[b] - means[b]);
                }
            }
        }
        for a in 0..p {
            for b in a..p {
                cov[(a, b)] /= n;
                cov[(b, a)] = cov[(a, b)];
            }
        }
        (means, cov)
    }
}

fn split_point(n: usize, fraction: f64) -> Result<usize> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid(format!("split fraction {fraction} must lie in (0, 1)")));
    }
    if n < 2 {
        return Err(Error::invalid(format!("need at least 2 rows to split, got {n}")));
    }
    Ok(((n as f64 * fraction).round() as usize).clamp(1, n - 1))
}

/// `f(x) = intercept + βᵀx` together with the training feature means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub intercept: f64,
    pub beta: Vec<f64>,
    pub feature_means: Vec<f64>,
}

impl LinearModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.intercept + self.beta.iter().zip(x).map(|(b, x)| b * x).sum::<f64>()
    }

    /// Mean training prediction, `f(x̄)`.
    pub fn mean_prediction(&self) -> f64 {
        self.predict(&self.feature_means)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ContributionKind {
    /// Features outside `S` are averaged independently.
    Marginal,
    /// Features outside `S` are regressed on those inside, using this covariance.
    Conditional { covariance: DMatrix<f64> },
}

/// The contribution function `v(S)` for a fitted linear model.
#[derive(Debug, Clone, PartialEq)]
pub struct ContributionOracle {
    model: LinearModel,
    kind: ContributionKind,
}

/// `v(S)` as an affine function of the explained instance.
#[derive(Debug, Clone, PartialEq)]
pub struct CoalitionProjection {
    base: f64,
    terms: Vec<(usize, f64, f64)>,
}

impl CoalitionProjection {
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        self.base + self.terms.iter().map(|&(j, g, m)| g * (x[j] - m)).sum::<f64>()
    }
}

impl ContributionOracle {
    pub fn marginal(model: LinearModel) -> Self {
        Self {
            model,
            kind: ContributionKind::Marginal,
        }
    }

    /// Conditional oracle; `covariance` must be symmetric positive definite.
    pub fn conditional(model: LinearModel, covariance: DMatrix<f64>) -> Result<Self> {
        let p = model.beta.len();
        if covariance.shape() != (p, p) {
            return Err(Error::invalid(format!("covariance must be {p}×{p}")));
        }
        if covariance.clone().cholesky().is_none() {
            return Err(Error::Fit("feature covariance is not positive definite".into()));
        }
        Ok(Self {
            model,
            kind: ContributionKind::Conditional { covariance },
        })
    }

    /// Switches to the conditional contribution function using `data`'s training covariance.
    pub fn into_conditional(self, data: &Dataset) -> Result<Self> {
        let (_, cov) = data.train_moments();
        Self::conditional(self.model, cov)
    }

    pub fn feature_count(&self) -> usize {
        self.model.beta.len()
    }

    pub fn model(&self) -> &LinearModel {
        &self.model
    }

    pub fn kind(&self) -> &ContributionKind {
        &self.kind
    }

    pub fn marginal_model(&self) -> Option<&LinearModel> {
        match self.kind {
            ContributionKind::Marginal => Some(&self.model),
            ContributionKind::Conditional { .. } => None,
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.model.predict(x)
    }

    pub fn projection(&self, mask: CoalitionMask) -> CoalitionProjection {
        let m = &self.model;
        let base = m.mean_prediction();
        let inside: Vec<usize> = mask.members().collect();
        let coef: Vec<f64> = match &self.kind {
            ContributionKind::Marginal => inside.iter().map(|&j| m.beta[j]).collect(),
            ContributionKind::Conditional { covariance } => {
                let outside: Vec<usize> = mask.complement().members().collect();
                if inside.is_empty() || outside.is_empty() {
                    inside.iter().map(|&j| m.beta[j]).collect()
                } else {
                    let s_in = covariance.select_rows(&inside).select_columns(&inside);
                    let s_cross = covariance.select_rows(&inside).select_columns(&outside);
                    let beta_out = DVector::from_iterator(outside.len(), outside.iter().map(|&j| m.beta[j]));
                    let adjust = s_in
                        .cholesky()
                        .expect("principal submatrix of a positive definite matrix")
                        .solve(&(s_cross * beta_out));
                    inside.iter().enumerate().map(|(a, &j)| m.beta[j] + adjust[a]).collect()
                }
            }
        };
        CoalitionProjection {
            base,
            terms: inside
                .iter()
                .zip(coef)
                .map(|(&j, g)| (j, g, m.feature_means[j]))
                .collect(),
        }
    }

    /// `v(S)` at `x_star`.
    pub fn contribution(&self, mask: CoalitionMask, x_star: &[f64]) -> f64 {
        self.projection(mask).evaluate(x_star)
    }
}

/// `v(S)` for every (row mask, instance) pair, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ContributionTable {
    instances: usize,
    values: Vec<f64>,
}

impl ContributionTable {
    pub fn new(oracle: &ContributionOracle, masks: &[CoalitionMask], instances: &[&[f64]]) -> Self {
        let mut values = Vec::with_capacity(masks.len() * instances.len());
        for &mask in masks {
            let projection = oracle.projection(mask);
            values.extend(instances.iter().map(|x| projection.evaluate(x)));
        }
        Self {
            instances: instances.len(),
            values,
        }
    }

    pub fn instances(&self) -> usize {
        self.instances
    }

    pub fn rows(&self) -> usize {
        self.values.len().checked_div(self.instances).unwrap_or(0)
    }

    pub fn value(&self, row: usize, instance: usize) -> f64 {
        self.values[row * self.instances + instance]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.values[row * self.instances..(row + 1) * self.instances]
    }
}

/// Ordinary least squares on the training rows; returns a marginal oracle.
pub fn fit_linear(data: &Dataset) -> Result<ContributionOracle> {
    let rows = data.train_rows();
    let y = data.train_response();
    let p = data.feature_count();
    let (means, _) = data.train_moments();
    let y_mean = y.iter().sum::<f64>() / y.len() as f64;
    if rows.len() <= p {
        return Err(Error::Fit(format!("{} training rows cannot identify {p} slopes plus intercept", rows.len())));
    }
    let x = DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j] - means[j]);
    let yc = DVector::from_iterator(y.len(), y.iter().map(|v| v - y_mean));
    let qr = x.qr();
    let r = qr.r();
    let scale = (0..p).map(|j| r[(j, j)].abs()).fold(0.0f64, f64::max);
    if scale == 0.0 || (0..p).any(|j| r[(j, j)].abs() <= 1e-10 * scale) {
        return Err(Error::Fit("training design matrix is rank deficient".into()));
    }
    let qty = qr.q().transpose() * yc;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::Fit("triangular solve failed".into()))?;
    let beta: Vec<f64> = beta.iter().copied().collect();
    let intercept = y_mean - beta.iter().zip(&means).map(|(b, m)| b * m).sum::<f64>();
    Ok(ContributionOracle::marginal(LinearModel {
        intercept,
        beta,
        feature_means: means,
    }))
}

/// Reads a header-first numeric CSV; the first `split_fraction` of rows train the model.
pub fn load_csv(path: impl AsRef<Path>, response: &str, split_fraction: f64) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_csv(file, response, split_fraction)
}

pub fn read_csv<R: Read>(reader: R, response: &str, split_fraction: f64) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let response_col = headers
        .iter()
        .position(|h| h == response)
        .ok_or_else(|| Error::MissingColumn(response.to_string()))?;
    let mut features = Vec::new();
    let mut y = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let row = i + 1;
        if record.len() != headers.len() {
            return Err(Error::Parse {
                row,
                column: record.len().min(headers.len()) + 1,
                name: String::new(),
                message: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        let mut xs = Vec::with_capacity(headers.len() - 1);
        for (c, cell) in record.iter().enumerate() {
            let value: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                row,
                column: c + 1,
                name: headers[c].clone(),
                message: format!("`{cell}` is not a number"),
            })?;
            if !value.is_finite() {
                return Err(Error::Parse {
                    row,
                    column: c + 1,
                    name: headers[c].clone(),
                    message: "value is not finite".into(),
                });
            }
            if c == response_col {
                y.push(value);
            } else {
                xs.push(value);
            }
        }
        features.push(xs);
    }
    let split = split_point(features.len(), split_fraction)?;
    let names = headers
        .iter()
        .enumerate()
        .filter(|&(c, _)| c != response_col)
        .map(|(_, h)| h.clone())
        .collect();
    Dataset::new(features, y, names, response.to_string(), split)
}

/// Writes features then response, with shortest round-trip float formatting.
pub fn write_csv<W: Write>(data: &Dataset, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = data.feature_names.iter().map(String::as_str).collect();
    header.push(&data.response_name);
    wtr.write_record(&header)?;
    for (row, y) in data.features.iter().zip(&data.response) {
        let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        rec.push(y.to_string());
        wtr.write_record(&rec)?;
    }
    wtr.flush().map_err(|source| Error::Io {
        path: "<csv writer>".into(),
        source,
    })?;
    Ok(())
}

/// Synthetic regression data: equicorrelated standard-normal features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub p: usize,
    pub n: usize,
    pub intercept: f64,
    /// Slopes; `None` uses `(-1)^j (1 + j/2)`.
    pub beta: Option<Vec<f64>>,
    pub noise_sd: f64,
    /// Common pairwise correlation of the features, in `[0, 1)`.
    #[serde(default)]
    pub rho: f64,
    #[serde(default = "half")]
    pub split_fraction: f64,
}

fn half() -> f64 {
    0.5
}

impl SyntheticSpec {
    pub fn new(p: usize, n: usize) -> Self {
        Self {
            p,
            n,
            intercept: 1.0,
            beta: None,
            noise_sd: 1.0,
            rho: 0.0,
            split_fraction: 0.5,
        }
    }

    pub fn slopes(&self) -> Vec<f64> {
        self.beta.clone().unwrap_or_else(|| {
            (0..self.p)
                .map(|j| {
                    let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                    sign * (1.0 + j as f64 / 2.0)
                })
                .collect()
        })
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<Dataset> {
    let p = spec.p;
    if p < 2 {
        return Err(Error::invalid(format!("synthetic data needs p >= 2, got {p}")));
    }
    if spec.n < 2 * (p + 2) {
        return Err(Error::invalid(format!("synthetic data needs n >= {}, got {}", 2 * (p + 2), spec.n)));
    }
    if !(0.0..1.0).contains(&spec.rho) {
        return Err(Error::invalid(format!("rho {} must lie in [0, 1)", spec.rho)));
    }
    if !(spec.noise_sd >= 0.0 && spec.noise_sd.is_finite()) {
        return Err(Error::invalid("noise sd must be finite and nonnegative"));
    }
    let beta = spec.slopes();
    if beta.len() != p {
        return Err(Error::invalid(format!("{} slopes given for p = {p}", beta.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let own = (1.0 - spec.rho).sqrt();
    let common = spec.rho.sqrt();
    let mut features = Vec::with_capacity(spec.n);
    let mut response = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let shared: f64 = StandardNormal.sample(&mut rng);
        let row: Vec<f64> = (0..p)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                own * z + common * shared
            })
            .collect();
        let eps: f64 = StandardNormal.sample(&mut rng);
        let y = spec.intercept + beta.iter().zip(&row).map(|(b, x)| b * x).sum::<f64>() + spec.noise_sd * eps;
        features.push(row);
        response.push(y);
    }
    let names = (1..=p).map(|j| format!("x{j}")).collect();
    let split = split_point(spec.n, spec.split_fraction)?;
    Dataset::new(features, response, names, "y".into(), split)
}
