//! Alternating optimization of the full model.
//!
//! One outer iteration runs the block updates in a fixed order:
//! projections (both modalities), label regressor, drift, codebook, then a
//! full re-encode of the indicator codes. The first four blocks have
//! closed-form ridge-regularized minimizers and never increase the
//! objective; the encode step is greedy per stage and column.
//!
//! Every matrix inverse in the closed forms is replaced by a solve against
//! the Gram plus a trace-scaled epsilon, because the plain Grams go
//! singular whenever there are fewer items than feature dimensions, atoms
//! go unused, or labels are collinear.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::Error;
use crate::model::{
    objective_terms, AcqhModel, Dims, FeatureMatrix, Hyperparams, LabelMatrix, LabelRegressor,
    ObjectiveTerms, Projections,
};
use crate::quantizer::{encode_all, reconstruct, Codebook, EncodeContext, IndicatorCodes};
use crate::Result;

/// Objective value after one full outer iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    /// 0 is the freshly initialized model.
    pub iteration: usize,
    pub objective: f64,
    pub terms: ObjectiveTerms,
}

/// Trained model plus the per-iteration objective trace.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: AcqhModel,
    pub trace: Vec<IterationRecord>,
    /// Whether the relative objective change dropped below `tol` before the
    /// iteration cap.
    pub converged: bool,
}

/// Trace-scaled epsilon added to the diagonal of `gram` before solving.
pub fn effective_ridge(gram: &DMatrix<f64>, ridge_eps: f64) -> f64 {
    ridge_eps * (1.0 + gram.trace() / gram.nrows() as f64)
}

fn ridged(mut gram: DMatrix<f64>, ridge_eps: f64) -> DMatrix<f64> {
    let eps = effective_ridge(&gram, ridge_eps);
    for i in 0..gram.nrows() {
        gram[(i, i)] += eps;
    }
    gram
}

/// Solves `A X = B` for symmetric positive-definite `A`.
fn spd_solve(a: DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(chol) = Cholesky::new(a.clone()) {
        return Ok(chol.solve(b));
    }
    a.lu().solve(b).ok_or(Error::NonFinite("linear solve"))
}

fn ensure_finite(mat: &DMatrix<f64>, context: &'static str) -> Result<()> {
    if mat.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(context))
    }
}

/// Closed-form projection update for one modality.
///
/// Solves the ridged normal equations of `min_W ||F' W Z - S||^2` with
/// `S = L' L` kept factorized:
///
/// `W = (F F' + eps I)^-1 (F L') (L Z') (Z Z' + eps I)^-1`
pub fn update_projection(
    features: &FeatureMatrix,
    labels: &LabelMatrix,
    z: &DMatrix<f64>,
    ridge_eps: f64,
) -> Result<DMatrix<f64>> {
    let f = features.data();
    let l = labels.data();
    let n_items = f.ncols();
    if z.ncols() != n_items || l.ncols() != n_items {
        return Err(Error::dimension(
            "update_projection",
            format!("{} items", n_items),
            format!("Z has {}, L has {}", z.ncols(), l.ncols()),
        ));
    }
    let mid = (f * l.transpose()) * (l * z.transpose());
    let left = ridged(f * f.transpose(), ridge_eps);
    let half = spd_solve(left, &mid)?;
    let right = ridged(z * z.transpose(), ridge_eps);
    let w = spd_solve(right, &half.transpose())?.transpose();
    ensure_finite(&w, "projection update")?;
    Ok(w)
}

/// Closed-form regressor update: the minimizer of
/// `||Z - M' L - e t'||^2 + (mu/lambda) ||M||^2`, i.e.
///
/// `M = (L L' + (mu/lambda) I)^-1 L (Z - e t')'`
///
/// The extra epsilon is only added when `mu/lambda` is zero and the label
/// Gram has nothing keeping it invertible.
pub fn update_regressor(
    labels: &LabelMatrix,
    z: &DMatrix<f64>,
    drift: &DVector<f64>,
    mu_over_lambda: f64,
    ridge_eps: f64,
) -> Result<DMatrix<f64>> {
    if !(mu_over_lambda >= 0.0) || !mu_over_lambda.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "mu/lambda={} must be finite and >= 0",
            mu_over_lambda
        )));
    }
    let l = labels.data();
    let n_items = l.ncols();
    if z.ncols() != n_items || drift.len() != n_items {
        return Err(Error::dimension(
            "update_regressor",
            format!("{} items", n_items),
            format!("Z has {}, drift has {}", z.ncols(), drift.len()),
        ));
    }
    // rhs = L (Z - e t')' = L Z' - (L t) e'
    let mut rhs = l * z.transpose();
    let lt = l * drift;
    for c in 0..rhs.nrows() {
        for k in 0..rhs.ncols() {
            rhs[(c, k)] -= lt[c];
        }
    }
    let mut gram = l * l.transpose();
    for i in 0..gram.nrows() {
        gram[(i, i)] += mu_over_lambda;
    }
    if mu_over_lambda == 0.0 {
        gram = ridged(gram, ridge_eps);
    }
    let m = spd_solve(gram, &rhs)?;
    ensure_finite(&m, "regressor update")?;
    Ok(m)
}

/// Drift update: per-item mean over the latent coordinates of the
/// regression residual, `t = (Z - M' L)' e / K`.
pub fn update_drift(
    z: &DMatrix<f64>,
    m_reg: &DMatrix<f64>,
    labels: &LabelMatrix,
) -> Result<DVector<f64>> {
    let l = labels.data();
    if m_reg.nrows() != l.nrows() || m_reg.ncols() != z.nrows() || l.ncols() != z.ncols() {
        return Err(Error::dimension(
            "update_drift",
            format!("M {}x{}, L cols {}", l.nrows(), z.nrows(), z.ncols()),
            format!("M {}x{}, L cols {}", m_reg.nrows(), m_reg.ncols(), l.ncols()),
        ));
    }
    let residual = z - m_reg.transpose() * l;
    let k = z.nrows() as f64;
    Ok(DVector::from_iterator(
        residual.ncols(),
        residual.column_iter().map(|col| col.sum() / k),
    ))
}

/// Closed-form codebook update.
///
/// Solves the ridged stationarity condition
///
/// `(G_x + G_y + lambda I) C (A A') = (E_x S + E_y S + lambda P) A'`
///
/// with the right-hand side assembled from one-hot counts: `S A'` becomes
/// `L' (L A')` and `P A'` becomes `M' (L A') + e (A t)'`, so nothing larger
/// than `C x mn` and the `mn x mn` co-occurrence matrix is formed.
pub fn update_codebook(
    e_x: &DMatrix<f64>,
    e_y: &DMatrix<f64>,
    labels: &LabelMatrix,
    codes: &IndicatorCodes,
    regressor: &LabelRegressor,
    lambda: f64,
    ridge_eps: f64,
) -> Result<Codebook> {
    let k = e_x.nrows();
    let n_items = codes.n_items();
    let (m, n) = (codes.n_stages(), codes.n_atoms());
    if e_y.nrows() != k
        || e_x.ncols() != n_items
        || e_y.ncols() != n_items
        || labels.n_items() != n_items
        || regressor.drift.len() != n_items
        || regressor.m.ncols() != k
        || regressor.m.nrows() != labels.n_classes()
    {
        return Err(Error::dimension(
            "update_codebook",
            format!("{} items, latent {}", n_items, k),
            format!(
                "E_x {}x{}, E_y {}x{}, L {}x{}, M {}x{}",
                e_x.nrows(),
                e_x.ncols(),
                e_y.nrows(),
                e_y.ncols(),
                labels.n_classes(),
                labels.n_items(),
                regressor.m.nrows(),
                regressor.m.ncols()
            ),
        ));
    }
    if lambda < 0.0 || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!("lambda={} must be >= 0", lambda)));
    }

    let l = labels.data();
    let n_classes = labels.n_classes();
    let mn = m * n;

    // One-hot aggregates: L A' (C x mn), A t (mn), A A' (mn x mn).
    let mut lat = DMatrix::<f64>::zeros(n_classes, mn);
    let mut at = DVector::<f64>::zeros(mn);
    let mut aat = DMatrix::<f64>::zeros(mn, mn);
    for i in 0..n_items {
        let item = codes.item_atoms(i);
        let lcol = labels.column_slice(i);
        for t in 0..m {
            let col_t = t * n + item[t] as usize;
            for (c, &v) in lcol.iter().enumerate() {
                if v == 1.0 {
                    lat[(c, col_t)] += 1.0;
                }
            }
            at[col_t] += regressor.drift[i];
            for s in 0..m {
                let col_s = s * n + item[s] as usize;
                aat[(col_s, col_t)] += 1.0;
            }
        }
    }

    let f_total = e_x * l.transpose() + e_y * l.transpose();
    let coef = f_total + lambda * regressor.m.transpose();
    let mut mid = coef * &lat;
    if lambda > 0.0 {
        for j in 0..mn {
            let v = lambda * at[j];
            for r in 0..k {
                mid[(r, j)] += v;
            }
        }
    }

    let mut left = e_x * e_x.transpose() + e_y * e_y.transpose();
    for i in 0..k {
        left[(i, i)] += lambda;
    }
    let half = spd_solve(ridged(left, ridge_eps), &mid)?;
    let ct = spd_solve(ridged(aat, ridge_eps), &half.transpose())?;
    let concat = ct.transpose();
    ensure_finite(&concat, "codebook update")?;

    let stages = (0..m)
        .map(|t| concat.view((0, t * n), (k, n)).into_owned())
        .collect();
    Codebook::new(stages)
}

/// Draws the random blocks, runs one nearest-reconstruction encode pass to
/// seed the codes, then one projection update per modality. Deterministic
/// for a fixed `hyper.seed`.
pub fn init_model(
    x: &FeatureMatrix,
    y: &FeatureMatrix,
    labels: &LabelMatrix,
    hyper: &Hyperparams,
) -> Result<AcqhModel> {
    hyper.validate(x.dim(), y.dim())?;
    let n_items = x.n_items();
    if y.n_items() != n_items || labels.n_items() != n_items {
        return Err(Error::dimension(
            "init_model",
            format!("{} items", n_items),
            format!("Y has {}, L has {}", y.n_items(), labels.n_items()),
        ));
    }
    let n_classes = labels.n_classes();
    let (k, m, n) = (hyper.k, hyper.m, hyper.n);

    let mut rng = ChaCha12Rng::seed_from_u64(hyper.seed);
    // Draw order is part of the contract: M first, then the codebook,
    // both filled column-major.
    let m_data: Vec<f64> = (0..n_classes * k)
        .map(|_| rng.sample(StandardNormal))
        .collect();
    let m_reg = DMatrix::from_vec(n_classes, k, m_data);
    let c_data: Vec<f64> = (0..k * m * n).map(|_| rng.sample(StandardNormal)).collect();
    let concat = DMatrix::from_vec(k, m * n, c_data);
    let stages: Vec<DMatrix<f64>> = (0..m)
        .map(|t| concat.view((0, t * n), (k, n)).into_owned())
        .collect();
    let codebook = Codebook::new(stages)?;

    let drift = DVector::zeros(n_items);
    // Codes start as the nearest stacked reconstruction of the label
    // embedding P = M' L (drift is still zero).
    let targets = m_reg.transpose() * labels.data();
    let codes = {
        let ctx = EncodeContext::for_init(&codebook, targets)?;
        encode_all(&ctx)?
    };
    let z = reconstruct(&codebook, &codes)?;
    let w_x = update_projection(x, labels, &z, hyper.ridge_eps)?;
    let w_y = update_projection(y, labels, &z, hyper.ridge_eps)?;

    let model = AcqhModel {
        projections: Projections { w_x, w_y },
        codebook,
        codes,
        regressor: LabelRegressor { m: m_reg, drift },
        hyper: hyper.clone(),
        dims: Dims {
            d_x: x.dim(),
            d_y: y.dim(),
            n_classes,
            n_items,
        },
    };
    model.validate()?;
    Ok(model)
}

/// Applies one full outer iteration in place: W_x, W_y, M, t, C, then a
/// fresh encode of all columns. `lambda = 0` skips the regressor and drift
/// blocks entirely.
pub fn train_step(
    x: &FeatureMatrix,
    y: &FeatureMatrix,
    labels: &LabelMatrix,
    model: &mut AcqhModel,
) -> Result<()> {
    let hyper = model.hyper.clone();
    let z = model.reconstruction()?;
    model.projections.w_x = update_projection(x, labels, &z, hyper.ridge_eps)?;
    model.projections.w_y = update_projection(y, labels, &z, hyper.ridge_eps)?;
    if hyper.lambda > 0.0 {
        model.regressor.m = update_regressor(
            labels,
            &z,
            &model.regressor.drift,
            hyper.mu / hyper.lambda,
            hyper.ridge_eps,
        )?;
        model.regressor.drift = update_drift(&z, &model.regressor.m, labels)?;
    }
    let e_x = model.projections.w_x.transpose() * x.data();
    let e_y = model.projections.w_y.transpose() * y.data();
    model.codebook = update_codebook(
        &e_x,
        &e_y,
        labels,
        &model.codes,
        &model.regressor,
        hyper.lambda,
        hyper.ridge_eps,
    )?;
    let ctx = EncodeContext::for_training(
        &model.codebook,
        &e_x,
        &e_y,
        labels,
        &model.regressor,
        hyper.lambda,
    )?;
    model.codes = encode_all(&ctx)?;
    Ok(())
}

fn relative_change(prev: f64, cur: f64) -> f64 {
    (prev - cur).abs() / prev.abs().max(f64::MIN_POSITIVE)
}

/// Full training loop: initialization plus outer iterations until the
/// relative objective change drops below `hyper.tol` or `hyper.max_iters`
/// is reached. The trace holds one record per completed iteration,
/// starting with the initialized model.
pub fn train(
    x: &FeatureMatrix,
    y: &FeatureMatrix,
    labels: &LabelMatrix,
    hyper: &Hyperparams,
) -> Result<TrainOutcome> {
    let mut model = init_model(x, y, labels, hyper)?;
    let terms = objective_terms(x, y, labels, &model)?;
    let mut trace = vec![IterationRecord {
        iteration: 0,
        objective: terms.total(),
        terms,
    }];
    let mut converged = false;
    for iteration in 1..=hyper.max_iters {
        train_step(x, y, labels, &mut model).map_err(|e| Error::Training {
            iteration,
            step: "block updates",
            source: Box::new(e),
        })?;
        let terms = objective_terms(x, y, labels, &model).map_err(|e| Error::Training {
            iteration,
            step: "objective",
            source: Box::new(e),
        })?;
        let objective = terms.total();
        let prev = trace.last().expect("trace is never empty").objective;
        trace.push(IterationRecord {
            iteration,
            objective,
            terms,
        });
        if relative_change(prev, objective) < hyper.tol {
            converged = true;
            break;
        }
    }
    Ok(TrainOutcome {
        model,
        trace,
        converged,
    })
}
