//! Compositional codebook, indicator codes, and the coarse-to-fine encoder.
//!
//! The database side of the model: every item is represented by one atom
//! index per stage, and its embedding is the sum of the selected atoms,
//! `z_i = sum_t C_t[:, a_ti]`. Encoding picks atoms greedily, stage by
//! stage, each stage quantizing the residual left by the previous ones.
//!
//! All scoring here is factorized: the per-column selection problem
//! `argmin_j gram[j][j] - 2 h[j]` is driven by
//!
//! `h = C_t' [ (F_x + F_y) l_i + lambda (M' l_i + t_i e) - (G_x + G_y + lambda I) z ]`
//!
//! where `G = E E'` and `F = E L'` are the `K x K` / `K x C` Grams of the
//! projected modalities. Nothing of size `N x N` or `N x mn` is ever built;
//! the equivalence with the dense residual formulation is covered by the
//! oracle tests.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::Error;
use crate::model::{LabelMatrix, LabelRegressor};
use crate::Result;

/// Ordered list of `m` sub-dictionaries, each `K x n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    stages: Vec<DMatrix<f64>>,
}

impl Codebook {
    /// Validates that all stages share one shape and are finite.
    pub fn new(stages: Vec<DMatrix<f64>>) -> Result<Self> {
        if stages.is_empty() {
            return Err(Error::InvalidArgument("codebook needs at least one stage".into()));
        }
        let (k, n) = stages[0].shape();
        if k == 0 || n == 0 {
            return Err(Error::InvalidArgument(format!(
                "codebook stages must be non-empty, got {}x{}",
                k, n
            )));
        }
        for (t, stage) in stages.iter().enumerate() {
            if stage.shape() != (k, n) {
                return Err(Error::dimension(
                    "codebook stage",
                    format!("{}x{}", k, n),
                    format!("{}x{} at stage {}", stage.nrows(), stage.ncols(), t),
                ));
            }
            if !stage.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite("codebook entries"));
            }
        }
        Ok(Self { stages })
    }

    pub fn n_stages(&self) -> usize {
        self.stages.len()
    }

    pub fn n_atoms(&self) -> usize {
        self.stages[0].ncols()
    }

    pub fn latent_dim(&self) -> usize {
        self.stages[0].nrows()
    }

    pub fn stage(&self, t: usize) -> &DMatrix<f64> {
        &self.stages[t]
    }

    pub fn stages(&self) -> &[DMatrix<f64>] {
        &self.stages
    }

    /// Concatenation `[C_1 | C_2 | ... | C_m]`, `K x mn`.
    pub fn concat(&self) -> DMatrix<f64> {
        let k = self.latent_dim();
        let n = self.n_atoms();
        let mut out = DMatrix::zeros(k, self.n_stages() * n);
        for (t, stage) in self.stages.iter().enumerate() {
            out.view_mut((0, t * n), (k, n)).copy_from(stage);
        }
        out
    }
}

/// Per-item selected atom indices, one per stage.
///
/// Stored item-major: the `m` atoms of item `i` are contiguous. Entry values
/// are always below `n_atoms`; this is checked at construction so scans can
/// index tables without bound checks failing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndicatorCodes {
    atoms: Vec<u16>,
    n_stages: usize,
    n_atoms: usize,
}

impl IndicatorCodes {
    pub fn new(atoms: Vec<u16>, n_stages: usize, n_atoms: usize) -> Result<Self> {
        if n_stages == 0 {
            return Err(Error::InvalidArgument("need at least one stage".into()));
        }
        if n_atoms == 0 || n_atoms > 65536 {
            return Err(Error::InvalidArgument(format!(
                "atoms per stage must be in 1..=65536, got {}",
                n_atoms
            )));
        }
        if !atoms.len().is_multiple_of(n_stages) {
            return Err(Error::dimension(
                "indicator codes",
                format!("multiple of {} entries", n_stages),
                format!("{}", atoms.len()),
            ));
        }
        for (pos, &a) in atoms.iter().enumerate() {
            if a as usize >= n_atoms {
                return Err(Error::AtomOutOfRange {
                    stage: pos % n_stages,
                    index: a as usize,
                    atoms: n_atoms,
                });
            }
        }
        Ok(Self {
            atoms,
            n_stages,
            n_atoms,
        })
    }

    pub fn n_items(&self) -> usize {
        self.atoms.len() / self.n_stages
    }

    pub fn n_stages(&self) -> usize {
        self.n_stages
    }

    pub fn n_atoms(&self) -> usize {
        self.n_atoms
    }

    /// Selected atom of `stage` for `item`.
    pub fn atom(&self, stage: usize, item: usize) -> usize {
        self.atoms[item * self.n_stages + stage] as usize
    }

    /// The `m` atoms of one item.
    pub fn item_atoms(&self, item: usize) -> &[u16] {
        &self.atoms[item * self.n_stages..(item + 1) * self.n_stages]
    }

    /// Raw item-major storage.
    pub fn as_slice(&self) -> &[u16] {
        &self.atoms
    }
}

/// Database embedding `Z = C A`: column `i` is the sum over stages of the
/// atom selected for item `i`.
pub fn reconstruct(codebook: &Codebook, codes: &IndicatorCodes) -> Result<DMatrix<f64>> {
    if codes.n_stages() != codebook.n_stages() {
        return Err(Error::dimension(
            "reconstruct",
            format!("{} stages", codebook.n_stages()),
            format!("{}", codes.n_stages()),
        ));
    }
    let k = codebook.latent_dim();
    let n_items = codes.n_items();
    let mut z = DMatrix::zeros(k, n_items);
    for i in 0..n_items {
        let mut col = z.column_mut(i);
        for t in 0..codebook.n_stages() {
            let j = codes.atom(t, i);
            if j >= codebook.n_atoms() {
                return Err(Error::AtomOutOfRange {
                    stage: t,
                    index: j,
                    atoms: codebook.n_atoms(),
                });
            }
            col += codebook.stage(t).column(j);
        }
    }
    Ok(z)
}

/// Per-stage selection matrix `C_t' (G_x + G_y + lambda I) C_t` and its
/// diagonal, which is all the atom picker needs besides `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct StageGram {
    pub gram: DMatrix<f64>,
    pub diag: DVector<f64>,
}

/// Builds the selection Gram of one stage from the modality Grams.
pub fn stage_gram(
    c_t: &DMatrix<f64>,
    g_x: &DMatrix<f64>,
    g_y: &DMatrix<f64>,
    lambda: f64,
) -> Result<StageGram> {
    let k = c_t.nrows();
    if g_x.shape() != (k, k) || g_y.shape() != (k, k) {
        return Err(Error::dimension(
            "stage_gram",
            format!("{}x{} Grams", k, k),
            format!("{}x{} and {}x{}", g_x.nrows(), g_x.ncols(), g_y.nrows(), g_y.ncols()),
        ));
    }
    if lambda < 0.0 || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!("lambda={} must be >= 0", lambda)));
    }
    let mut total = g_x + g_y;
    for i in 0..k {
        total[(i, i)] += lambda;
    }
    Ok(stage_gram_from_total(c_t, &total))
}

fn stage_gram_from_total(c_t: &DMatrix<f64>, total: &DMatrix<f64>) -> StageGram {
    let gram = c_t.transpose() * total * c_t;
    let diag = gram.diagonal();
    StageGram { gram, diag }
}

/// Smallest index minimizing `diag[j] - 2 h[j]`.
///
/// Ties always go to the smallest index so encoding is deterministic under
/// any execution order.
pub fn select_atom(diag: &[f64], h: &[f64]) -> Result<usize> {
    if diag.is_empty() {
        return Err(Error::InvalidArgument("select_atom on empty score vector".into()));
    }
    if diag.len() != h.len() {
        return Err(Error::dimension(
            "select_atom",
            format!("{}", diag.len()),
            format!("{}", h.len()),
        ));
    }
    let mut best = 0usize;
    let mut best_score = f64::INFINITY;
    for j in 0..diag.len() {
        let score = diag[j] - 2.0 * h[j];
        if !score.is_finite() {
            return Err(Error::NonFinite("atom selection score"));
        }
        if score < best_score {
            best_score = score;
            best = j;
        }
    }
    Ok(best)
}

/// Everything `encode_column` reads: the codebook, the per-stage selection
/// Grams, the summed `K x K` Gram, and the per-item target columns
/// `(F_x + F_y) l_i + lambda (M' l_i + t_i e)`.
///
/// Immutable once built, so columns can be encoded concurrently.
#[derive(Debug, Clone)]
pub struct EncodeContext<'a> {
    codebook: &'a Codebook,
    grams: Vec<StageGram>,
    g_total: DMatrix<f64>,
    targets: DMatrix<f64>,
}

impl<'a> EncodeContext<'a> {
    /// Context for a training-loop encode pass.
    ///
    /// `e_x`/`e_y` are the projected databases `W' X` (`K x N`).
    pub fn for_training(
        codebook: &'a Codebook,
        e_x: &DMatrix<f64>,
        e_y: &DMatrix<f64>,
        labels: &LabelMatrix,
        regressor: &LabelRegressor,
        lambda: f64,
    ) -> Result<Self> {
        let k = codebook.latent_dim();
        let n_items = labels.n_items();
        if e_x.nrows() != k || e_y.nrows() != k || e_x.ncols() != n_items || e_y.ncols() != n_items
        {
            return Err(Error::dimension(
                "encode context embeddings",
                format!("{}x{}", k, n_items),
                format!("{}x{} and {}x{}", e_x.nrows(), e_x.ncols(), e_y.nrows(), e_y.ncols()),
            ));
        }
        if regressor.m.shape() != (labels.n_classes(), k) || regressor.drift.len() != n_items {
            return Err(Error::dimension(
                "encode context regressor",
                format!("{}x{} and drift {}", labels.n_classes(), k, n_items),
                format!(
                    "{}x{} and drift {}",
                    regressor.m.nrows(),
                    regressor.m.ncols(),
                    regressor.drift.len()
                ),
            ));
        }
        let mut g_total = e_x * e_x.transpose() + e_y * e_y.transpose();
        for i in 0..k {
            g_total[(i, i)] += lambda;
        }
        let f_total = e_x * labels.data().transpose() + e_y * labels.data().transpose();
        let coef = f_total + lambda * regressor.m.transpose();
        let mut targets = coef * labels.data();
        for (i, mut col) in targets.column_iter_mut().enumerate() {
            col.add_scalar_mut(lambda * regressor.drift[i]);
        }
        Ok(Self::from_parts(codebook, g_total, targets))
    }

    /// Context for initialization: plain nearest-reconstruction encoding of
    /// the given target columns in latent space, no modality terms.
    pub fn for_init(codebook: &'a Codebook, targets: DMatrix<f64>) -> Result<Self> {
        let k = codebook.latent_dim();
        if targets.nrows() != k {
            return Err(Error::dimension(
                "encode context targets",
                format!("{} rows", k),
                format!("{}", targets.nrows()),
            ));
        }
        Ok(Self::from_parts(codebook, DMatrix::identity(k, k), targets))
    }

    fn from_parts(codebook: &'a Codebook, g_total: DMatrix<f64>, targets: DMatrix<f64>) -> Self {
        let grams = codebook
            .stages()
            .iter()
            .map(|c_t| stage_gram_from_total(c_t, &g_total))
            .collect();
        Self {
            codebook,
            grams,
            g_total,
            targets,
        }
    }

    pub fn n_items(&self) -> usize {
        self.targets.ncols()
    }

    pub fn grams(&self) -> &[StageGram] {
        &self.grams
    }
}

/// Greedy coarse-to-fine encoding of one database column.
///
/// Stage `t` scores every atom against the residual left by stages `< t`
/// (tracked as the partial reconstruction `z`) and keeps the argmin.
pub fn encode_column(ctx: &EncodeContext, column: usize) -> Result<Vec<u16>> {
    let m = ctx.codebook.n_stages();
    let k = ctx.codebook.latent_dim();
    let mut z: DVector<f64> = DVector::zeros(k);
    let mut out = Vec::with_capacity(m);
    for t in 0..m {
        let mut v = ctx.targets.column(column).clone_owned();
        if t > 0 {
            v -= &ctx.g_total * &z;
        }
        let h = ctx.codebook.stage(t).transpose() * v;
        if !h.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("stage score vector h"));
        }
        let j = select_atom(ctx.grams[t].diag.as_slice(), h.as_slice())?;
        z += ctx.codebook.stage(t).column(j);
        out.push(j as u16);
    }
    Ok(out)
}

/// Encodes every column independently; results do not depend on execution
/// order or parallelism.
pub fn encode_all(ctx: &EncodeContext) -> Result<IndicatorCodes> {
    let n_items = ctx.n_items();
    let per_column: Vec<Vec<u16>> = (0..n_items)
        .into_par_iter()
        .map(|i| {
            encode_column(ctx, i).map_err(|e| Error::Encoding {
                column: i,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;
    let mut atoms = Vec::with_capacity(n_items * ctx.codebook.n_stages());
    for col in per_column {
        atoms.extend_from_slice(&col);
    }
    IndicatorCodes::new(atoms, ctx.codebook.n_stages(), ctx.codebook.n_atoms())
}
