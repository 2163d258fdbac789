//! Domain types and the training objective.
//!
//! Dimension conventions used everywhere in the crate:
//!
//! * feature matrices are `d x N` (items are columns),
//! * labels are `C x N` binary, multi-hot, with at least one class per item,
//! * projections are `d x K` and always applied transposed (`W' X`, `W' q`),
//! * the database embedding is `Z = C A` with `Z` of shape `K x N`.
//!
//! The pairwise similarity matrix `S = L' L` is never materialized; every
//! computation that involves it expands the factor `L` instead, keeping the
//! cost linear in the number of items.

use nalgebra::{DMatrix, DVector};

use crate::error::Error;
use crate::quantizer::{reconstruct, Codebook, IndicatorCodes};
use crate::Result;

/// Which modality a feature matrix or query belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    Image,
    Text,
}

impl Modality {
    pub fn name(self) -> &'static str {
        match self {
            Modality::Image => "image",
            Modality::Text => "text",
        }
    }
}

/// Dense per-item feature vectors for one modality, `d x N`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: DMatrix<f64>,
    modality: Modality,
}

impl FeatureMatrix {
    /// Validates that the matrix is non-empty and fully finite.
    pub fn new(data: DMatrix<f64>, modality: Modality) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::InvalidArgument(format!(
                "feature matrix must be non-empty, got {}x{}",
                data.nrows(),
                data.ncols()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("feature matrix entries"));
        }
        Ok(Self { data, modality })
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    /// Feature dimension `d`.
    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    /// Number of items `N`.
    pub fn n_items(&self) -> usize {
        self.data.ncols()
    }

    /// Subtracts `means` (length `d`) from every column.
    pub fn center(&mut self, means: &DVector<f64>) -> Result<()> {
        if means.len() != self.dim() {
            return Err(Error::dimension(
                "feature centering",
                format!("{} means", self.dim()),
                format!("{}", means.len()),
            ));
        }
        for mut col in self.data.column_iter_mut() {
            col -= means;
        }
        Ok(())
    }

    /// Per-dimension mean over items.
    pub fn column_means(&self) -> DVector<f64> {
        let n = self.n_items() as f64;
        DVector::from_iterator(self.dim(), self.data.row_iter().map(|r| r.sum() / n))
    }
}

/// Binary multi-hot class assignments, `C x N`.
///
/// This is the sole source of supervision: the pairwise similarity of items
/// `i` and `j` is the label overlap `l_i' l_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMatrix {
    data: DMatrix<f64>,
}

impl LabelMatrix {
    /// Validates that every entry is 0 or 1 and every item has a label.
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::InvalidArgument(format!(
                "label matrix must be non-empty, got {}x{}",
                data.nrows(),
                data.ncols()
            )));
        }
        for col in 0..data.ncols() {
            for row in 0..data.nrows() {
                let v = data[(row, col)];
                if v != 0.0 && v != 1.0 {
                    return Err(Error::LabelDomain { row, col, value: v });
                }
            }
            if data.column(col).iter().all(|&v| v == 0.0) {
                return Err(Error::UnlabeledItem(col));
            }
        }
        Ok(Self { data })
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    /// Number of classes `C`.
    pub fn n_classes(&self) -> usize {
        self.data.nrows()
    }

    /// Number of items `N`.
    pub fn n_items(&self) -> usize {
        self.data.ncols()
    }

    /// Contiguous view of item `i`'s label column.
    pub fn column_slice(&self, i: usize) -> &[f64] {
        let c = self.n_classes();
        &self.data.as_slice()[i * c..(i + 1) * c]
    }
}

/// Number of shared labels between two binary label vectors.
pub fn similarity_entry(a: &[f64], b: &[f64]) -> Result<u64> {
    if a.len() != b.len() {
        return Err(Error::dimension(
            "similarity_entry",
            format!("{}", a.len()),
            format!("{}", b.len()),
        ));
    }
    Ok(a.iter()
        .zip(b.iter())
        .filter(|(&x, &y)| x == 1.0 && y == 1.0)
        .count() as u64)
}

/// Training and model-size hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    /// Latent (code) dimension `K`.
    pub k: usize,
    /// Number of codebook stages `m`.
    pub m: usize,
    /// Atoms per stage `n`.
    pub n: usize,
    /// Weight of the label-regression term.
    pub lambda: f64,
    /// Weight of the regressor Frobenius penalty.
    pub mu: f64,
    /// Outer-iteration cap.
    pub max_iters: usize,
    /// Relative objective-change stopping threshold.
    pub tol: f64,
    /// Base epsilon for the ridge added inside every matrix inverse.
    pub ridge_eps: f64,
    /// RNG seed for initialization.
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            k: 32,
            m: 4,
            n: 256,
            lambda: 1e-4,
            mu: 0.01,
            max_iters: 50,
            tol: 1e-5,
            ridge_eps: 1e-8,
            seed: 0,
        }
    }
}

impl Hyperparams {
    /// Checks internal ranges and compatibility with the feature dimensions.
    pub fn validate(&self, d_x: usize, d_y: usize) -> Result<()> {
        if self.k == 0 || self.k > d_x || self.k > d_y {
            return Err(Error::InvalidArgument(format!(
                "latent dimension k={} must satisfy 1 <= k <= min(d_x={}, d_y={})",
                self.k, d_x, d_y
            )));
        }
        if self.m == 0 {
            return Err(Error::InvalidArgument("need at least one stage".into()));
        }
        if self.n < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 atoms per stage, got {}",
                self.n
            )));
        }
        // Atom indices are stored in at most 16 bits.
        if self.n > 65536 {
            return Err(Error::InvalidArgument(format!(
                "atoms per stage capped at 65536, got {}",
                self.n
            )));
        }
        if self.lambda < 0.0 || !self.lambda.is_finite() {
            return Err(Error::InvalidArgument(format!("lambda={} must be >= 0", self.lambda)));
        }
        if self.mu < 0.0 || !self.mu.is_finite() {
            return Err(Error::InvalidArgument(format!("mu={} must be >= 0", self.mu)));
        }
        if !(self.ridge_eps > 0.0) || !self.ridge_eps.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "ridge_eps={} must be > 0",
                self.ridge_eps
            )));
        }
        if !(self.tol > 0.0) || !self.tol.is_finite() {
            return Err(Error::InvalidArgument(format!("tol={} must be > 0", self.tol)));
        }
        Ok(())
    }
}

/// Per-modality linear projections into the latent space, `d x K`.
///
/// A query is embedded as `W' q`; no sign quantization is applied, the
/// embedding stays real-valued.
#[derive(Debug, Clone, PartialEq)]
pub struct Projections {
    pub w_x: DMatrix<f64>,
    pub w_y: DMatrix<f64>,
}

impl Projections {
    pub fn for_modality(&self, modality: Modality) -> &DMatrix<f64> {
        match modality {
            Modality::Image => &self.w_x,
            Modality::Text => &self.w_y,
        }
    }
}

/// Label-regression block: `Z ~ M' L + e t'` with per-item drift `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelRegressor {
    /// `C x K` regression matrix.
    pub m: DMatrix<f64>,
    /// Per-item scalar drift, length `N`.
    pub drift: DVector<f64>,
}

/// Problem dimensions carried alongside a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub d_x: usize,
    pub d_y: usize,
    pub n_classes: usize,
    pub n_items: usize,
}

/// The complete trained artifact.
#[derive(Debug, Clone, PartialEq)]
pub struct AcqhModel {
    pub projections: Projections,
    pub codebook: Codebook,
    pub codes: IndicatorCodes,
    pub regressor: LabelRegressor,
    pub hyper: Hyperparams,
    pub dims: Dims,
}

impl AcqhModel {
    /// Checks that all component shapes agree with `dims` and `hyper`.
    pub fn validate(&self) -> Result<()> {
        let (d_x, d_y, c, n_items) = (
            self.dims.d_x,
            self.dims.d_y,
            self.dims.n_classes,
            self.dims.n_items,
        );
        let (k, m, n) = (self.hyper.k, self.hyper.m, self.hyper.n);
        let check = |context: &'static str, expected: (usize, usize), actual: (usize, usize)| {
            if expected != actual {
                return Err(Error::dimension(
                    context,
                    format!("{}x{}", expected.0, expected.1),
                    format!("{}x{}", actual.0, actual.1),
                ));
            }
            Ok(())
        };
        check("W_x", (d_x, k), self.projections.w_x.shape())?;
        check("W_y", (d_y, k), self.projections.w_y.shape())?;
        check("M", (c, k), self.regressor.m.shape())?;
        if self.regressor.drift.len() != n_items {
            return Err(Error::dimension(
                "drift",
                format!("{}", n_items),
                format!("{}", self.regressor.drift.len()),
            ));
        }
        if self.codebook.n_stages() != m || self.codebook.latent_dim() != k || self.codebook.n_atoms() != n
        {
            return Err(Error::dimension(
                "codebook",
                format!("{} stages of {}x{}", m, k, n),
                format!(
                    "{} stages of {}x{}",
                    self.codebook.n_stages(),
                    self.codebook.latent_dim(),
                    self.codebook.n_atoms()
                ),
            ));
        }
        if self.codes.n_stages() != m || self.codes.n_items() != n_items {
            return Err(Error::dimension(
                "indicator codes",
                format!("{}x{}", m, n_items),
                format!("{}x{}", self.codes.n_stages(), self.codes.n_items()),
            ));
        }
        if self.codes.n_atoms() > n {
            return Err(Error::InvalidArgument(format!(
                "codes assume {} atoms but codebook has {}",
                self.codes.n_atoms(),
                n
            )));
        }
        let finite = self.projections.w_x.iter().all(|v| v.is_finite())
            && self.projections.w_y.iter().all(|v| v.is_finite())
            && self.regressor.m.iter().all(|v| v.is_finite())
            && self.regressor.drift.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite("model parameters"));
        }
        Ok(())
    }

    /// Database embedding `Z = C A`, reconstructed column by column.
    pub fn reconstruction(&self) -> Result<DMatrix<f64>> {
        reconstruct(&self.codebook, &self.codes)
    }
}

/// Value of each objective term, already weighted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveTerms {
    /// `||(W_x' X)' C A - S||^2`
    pub image_fit: f64,
    /// `||(W_y' Y)' C A - S||^2`
    pub text_fit: f64,
    /// `lambda ||C A - M' L - e t'||^2`
    pub label_fit: f64,
    /// `mu ||M||^2`
    pub regularization: f64,
}

impl ObjectiveTerms {
    pub fn total(&self) -> f64 {
        self.image_fit + self.text_fit + self.label_fit + self.regularization
    }
}

/// Full objective value with per-term breakdown.
///
/// Evaluated in factorized form: with `E = W' F` and `Z = C A`,
///
/// `||E' Z - L' L||^2 = <E E', Z Z'> - 2 <E L', Z L'> + ||L L'||^2`
///
/// so the `N x N` similarity matrix never exists and the cost stays
/// `O((K^2 + C^2 + K C) N)`.
pub fn objective_terms(
    x: &FeatureMatrix,
    y: &FeatureMatrix,
    labels: &LabelMatrix,
    model: &AcqhModel,
) -> Result<ObjectiveTerms> {
    model.validate()?;
    let n_items = model.dims.n_items;
    for (name, actual) in [
        ("objective: X columns", x.n_items()),
        ("objective: Y columns", y.n_items()),
        ("objective: L columns", labels.n_items()),
    ] {
        if actual != n_items {
            return Err(Error::dimension(name, format!("{}", n_items), format!("{}", actual)));
        }
    }
    if x.dim() != model.dims.d_x || y.dim() != model.dims.d_y {
        return Err(Error::dimension(
            "objective: feature dims",
            format!("{}x{}", model.dims.d_x, model.dims.d_y),
            format!("{}x{}", x.dim(), y.dim()),
        ));
    }
    if labels.n_classes() != model.dims.n_classes {
        return Err(Error::dimension(
            "objective: classes",
            format!("{}", model.dims.n_classes),
            format!("{}", labels.n_classes()),
        ));
    }

    let z = model.reconstruction()?;
    let l = labels.data();

    let zzt = &z * z.transpose();
    let zlt = &z * l.transpose();
    let llt = l * l.transpose();
    let s_norm_sq = llt.norm_squared();

    let fit = |w: &DMatrix<f64>, f: &DMatrix<f64>| -> f64 {
        let e = w.transpose() * f;
        let gram = &e * e.transpose();
        let cross = &e * l.transpose();
        gram.dot(&zzt) - 2.0 * cross.dot(&zlt) + s_norm_sq
    };
    let image_fit = fit(&model.projections.w_x, x.data());
    let text_fit = fit(&model.projections.w_y, y.data());

    let mut residual = &z - model.regressor.m.transpose() * l;
    for (i, mut col) in residual.column_iter_mut().enumerate() {
        col.add_scalar_mut(-model.regressor.drift[i]);
    }
    let label_fit = model.hyper.lambda * residual.norm_squared();
    let regularization = model.hyper.mu * model.regressor.m.norm_squared();

    let terms = ObjectiveTerms {
        image_fit,
        text_fit,
        label_fit,
        regularization,
    };
    if !terms.total().is_finite() {
        return Err(Error::NonFinite("objective"));
    }
    Ok(terms)
}

/// Total objective value; see [`objective_terms`].
pub fn objective(
    x: &FeatureMatrix,
    y: &FeatureMatrix,
    labels: &LabelMatrix,
    model: &AcqhModel,
) -> Result<f64> {
    Ok(objective_terms(x, y, labels, model)?.total())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn identity_labels(n: usize) -> LabelMatrix {
        LabelMatrix::new(DMatrix::identity(n, n)).unwrap()
    }

    /// Model with explicitly given parts; codes select atom 0 everywhere.
    fn toy_model(
        w_x: DMatrix<f64>,
        w_y: DMatrix<f64>,
        stages: Vec<DMatrix<f64>>,
        atoms: Vec<u16>,
        m_reg: DMatrix<f64>,
        drift: DVector<f64>,
        lambda: f64,
        mu: f64,
    ) -> AcqhModel {
        let k = stages[0].nrows();
        let n = stages[0].ncols();
        let m = stages.len();
        let n_items = atoms.len() / m;
        let dims = Dims {
            d_x: w_x.nrows(),
            d_y: w_y.nrows(),
            n_classes: m_reg.nrows(),
            n_items,
        };
        let hyper = Hyperparams {
            k,
            m,
            n,
            lambda,
            mu,
            ..Hyperparams::default()
        };
        AcqhModel {
            projections: Projections { w_x, w_y },
            codebook: Codebook::new(stages).unwrap(),
            codes: IndicatorCodes::new(atoms, m, n).unwrap(),
            regressor: LabelRegressor { m: m_reg, drift },
            hyper,
            dims,
        }
    }

    #[test]
    fn similarity_entry_counts_shared_labels() {
        assert_eq!(similarity_entry(&[1.0, 0.0], &[1.0, 1.0]).unwrap(), 1);
        assert_eq!(similarity_entry(&[0.0, 1.0], &[1.0, 0.0]).unwrap(), 0);
        assert_eq!(
            similarity_entry(&[1.0, 1.0, 1.0], &[1.0, 1.0, 0.0]).unwrap(),
            2
        );
    }

    #[test]
    fn similarity_entry_rejects_length_mismatch() {
        assert!(matches!(
            similarity_entry(&[1.0], &[1.0, 0.0]),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn label_matrix_rejects_non_binary_entries() {
        let err = LabelMatrix::new(dmatrix![1.0, 0.0; 0.0, 2.0]).unwrap_err();
        assert!(matches!(err, Error::LabelDomain { value, .. } if value == 2.0));
    }

    #[test]
    fn label_matrix_rejects_unlabeled_items() {
        let err = LabelMatrix::new(dmatrix![1.0, 0.0; 0.0, 0.0]).unwrap_err();
        assert!(matches!(err, Error::UnlabeledItem(1)));
    }

    #[test]
    fn feature_matrix_rejects_non_finite() {
        let err = FeatureMatrix::new(dmatrix![1.0, f64::NAN], Modality::Image).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
    }

    #[test]
    fn hyperparams_default_matches_documented_values() {
        let h = Hyperparams::default();
        assert_eq!((h.k, h.m, h.n), (32, 4, 256));
        assert_eq!(h.lambda, 1e-4);
        assert_eq!(h.mu, 0.01);
    }

    #[test]
    fn hyperparams_validate_enforces_latent_cap() {
        let h = Hyperparams {
            k: 8,
            ..Hyperparams::default()
        };
        assert!(h.validate(8, 8).is_ok());
        assert!(h.validate(7, 8).is_err());
        assert!(h.validate(8, 7).is_err());
    }

    /// Zero projections and zero codebook leave only the two `||S||^2` terms.
    #[test]
    fn objective_zero_model_reduces_to_similarity_norm() {
        let x = FeatureMatrix::new(DMatrix::zeros(2, 2), Modality::Image).unwrap();
        let y = FeatureMatrix::new(DMatrix::zeros(2, 2), Modality::Text).unwrap();
        let labels = identity_labels(2);
        let model = toy_model(
            DMatrix::zeros(2, 2),
            DMatrix::zeros(2, 2),
            vec![DMatrix::zeros(2, 2)],
            vec![0, 0],
            DMatrix::zeros(2, 2),
            DVector::zeros(2),
            0.5,
            0.0,
        );
        assert_eq!(objective(&x, &y, &labels, &model).unwrap(), 4.0);
    }

    /// Identity fit with lambda = mu = 0 is exact.
    #[test]
    fn objective_exact_fit_is_zero() {
        let x = FeatureMatrix::new(DMatrix::identity(2, 2), Modality::Image).unwrap();
        let y = FeatureMatrix::new(DMatrix::identity(2, 2), Modality::Text).unwrap();
        let labels = identity_labels(2);
        // W' X = I, C A = I: stage atoms are the identity columns.
        let model = toy_model(
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            vec![DMatrix::identity(2, 2)],
            vec![0, 1],
            DMatrix::zeros(2, 2),
            DVector::zeros(2),
            0.0,
            0.0,
        );
        assert_eq!(objective(&x, &y, &labels, &model).unwrap(), 0.0);
    }

    /// Columns of every input permuted together leave the objective unchanged.
    #[test]
    fn objective_invariant_under_item_permutation() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(41);
        let n_items = 6;
        let mut sample =
            |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.random::<f64>() - 0.5);
        let x_data = sample(3, n_items);
        let y_data = sample(2, n_items);
        let stages = vec![sample(2, 3), sample(2, 3)];
        let m_reg = sample(2, 2);
        let w_x = sample(3, 2);
        let w_y = sample(2, 2);
        let drift = DVector::from_fn(n_items, |i, _| i as f64 * 0.1);
        let atoms: Vec<u16> = (0..n_items * 2).map(|i| (i % 3) as u16).collect();
        let label_data = DMatrix::from_fn(2, n_items, |r, c| if c % 2 == r { 1.0 } else { 0.0 });

        let perm: Vec<usize> = vec![3, 1, 5, 0, 4, 2];
        let permute_cols = |m: &DMatrix<f64>| {
            DMatrix::from_fn(m.nrows(), m.ncols(), |r, c| m[(r, perm[c])])
        };

        let base = toy_model(
            w_x.clone(),
            w_y.clone(),
            stages.clone(),
            atoms.clone(),
            m_reg.clone(),
            drift.clone(),
            0.3,
            0.2,
        );
        let x = FeatureMatrix::new(x_data.clone(), Modality::Image).unwrap();
        let y = FeatureMatrix::new(y_data.clone(), Modality::Text).unwrap();
        let labels = LabelMatrix::new(label_data.clone()).unwrap();
        let obj = objective(&x, &y, &labels, &base).unwrap();

        let atoms_p: Vec<u16> = (0..n_items)
            .flat_map(|i| atoms[perm[i] * 2..perm[i] * 2 + 2].to_vec())
            .collect();
        let drift_p = DVector::from_fn(n_items, |i, _| drift[perm[i]]);
        let permuted = toy_model(w_x, w_y, stages, atoms_p, m_reg, drift_p, 0.3, 0.2);
        let x_p = FeatureMatrix::new(permute_cols(&x_data), Modality::Image).unwrap();
        let y_p = FeatureMatrix::new(permute_cols(&y_data), Modality::Text).unwrap();
        let labels_p = LabelMatrix::new(permute_cols(&label_data)).unwrap();
        let obj_p = objective(&x_p, &y_p, &labels_p, &permuted).unwrap();

        assert!((obj - obj_p).abs() <= 1e-10 * (1.0 + obj.abs()));
    }

    /// The objective can never drop below the regularizer alone.
    #[test]
    fn objective_dominates_regularizer() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(97);
        for _ in 0..20 {
            let n_items = 4;
            let mut sample =
                |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.random::<f64>() * 2.0 - 1.0);
            let m_reg = sample(2, 2);
            let model = toy_model(
                sample(2, 2),
                sample(2, 2),
                vec![sample(2, 2)],
                vec![0, 1, 1, 0],
                m_reg.clone(),
                DVector::from_element(n_items, 0.25),
                0.7,
                0.4,
            );
            let x = FeatureMatrix::new(sample(2, n_items), Modality::Image).unwrap();
            let y = FeatureMatrix::new(sample(2, n_items), Modality::Text).unwrap();
            let labels = LabelMatrix::new(DMatrix::from_fn(2, n_items, |r, c| {
                if (r + c) % 2 == 0 {
                    1.0
                } else {
                    0.0
                }
            }))
            .unwrap();
            let obj = objective(&x, &y, &labels, &model).unwrap();
            let floor = 0.4 * m_reg.norm_squared();
            assert!(obj + 1e-9 * (1.0 + obj.abs()) >= floor);
        }
    }
}
