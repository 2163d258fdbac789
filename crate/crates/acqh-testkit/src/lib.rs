//! Brute-force reference implementations used to validate the optimized
//! library paths, plus seeded instance generators for the test suites.
//!
//! Everything here takes the most naive route on purpose: the similarity
//! matrix is materialized as `N x N`, encodings walk explicit residual
//! matrices, normal equations are solved through a vectorized Kronecker
//! system, and metrics recount prefixes from scratch. None of it shares a
//! code path with the library beyond the domain types.
//!
//! Oracles hard-fail on inputs beyond desk scale instead of sampling, so
//! an equivalence test can never silently run against an approximation.

use nalgebra::{DMatrix, DVector};

use acqh::model::{AcqhModel, FeatureMatrix, LabelMatrix, LabelRegressor, Projections};
use acqh::quantizer::{Codebook, IndicatorCodes};
use acqh::trainer::effective_ridge;

/// Largest item count any oracle accepts.
pub const MAX_ORACLE_ITEMS: usize = 64;

fn guard_items(n_items: usize) {
    assert!(
        n_items <= MAX_ORACLE_ITEMS,
        "oracle size guard: {} items > {}",
        n_items,
        MAX_ORACLE_ITEMS
    );
}

/// Materialized pairwise similarity `S = L' L`, `N x N`.
pub fn dense_similarity(labels: &LabelMatrix) -> DMatrix<f64> {
    guard_items(labels.n_items());
    labels.data().transpose() * labels.data()
}

/// Explicit stacked one-hot indicator matrix `A`, `mn x N`.
pub fn dense_one_hot(codes: &IndicatorCodes) -> DMatrix<f64> {
    guard_items(codes.n_items());
    let (m, n) = (codes.n_stages(), codes.n_atoms());
    let mut a = DMatrix::zeros(m * n, codes.n_items());
    for i in 0..codes.n_items() {
        for t in 0..m {
            a[(t * n + codes.atom(t, i), i)] = 1.0;
        }
    }
    a
}

/// Label-regression target `P = M' L + e t'`, `K x N`.
pub fn dense_regression_target(regressor: &LabelRegressor, labels: &LabelMatrix) -> DMatrix<f64> {
    let mut p = regressor.m.transpose() * labels.data();
    for (i, mut col) in p.column_iter_mut().enumerate() {
        col.add_scalar_mut(regressor.drift[i]);
    }
    p
}

/// Objective value computed with every matrix materialized.
pub fn oracle_dense_objective(
    x: &FeatureMatrix,
    y: &FeatureMatrix,
    labels: &LabelMatrix,
    model: &AcqhModel,
) -> f64 {
    guard_items(labels.n_items());
    let s = dense_similarity(labels);
    let a = dense_one_hot(&model.codes);
    let z = model.codebook.concat() * &a;
    let ex = model.projections.w_x.transpose() * x.data();
    let ey = model.projections.w_y.transpose() * y.data();
    let term_x = (ex.transpose() * &z - &s).norm_squared();
    let term_y = (ey.transpose() * &z - &s).norm_squared();
    let p = dense_regression_target(&model.regressor, labels);
    let term_label = model.hyper.lambda * (&z - &p).norm_squared();
    let term_reg = model.hyper.mu * model.regressor.m.norm_squared();
    term_x + term_y + term_label + term_reg
}

/// Coarse-to-fine encoding computed through explicit residual matrices.
///
/// Stage `t` scores all atoms of every column against the dense residuals
/// of both modalities plus the regression target, exactly as written:
/// projected dictionaries `C^x = (W' X)' C`, residuals starting at `S` and
/// `P`, ties to the smallest atom index.
pub fn oracle_dense_encode(
    x: &FeatureMatrix,
    y: &FeatureMatrix,
    labels: &LabelMatrix,
    projections: &Projections,
    codebook: &Codebook,
    regressor: &LabelRegressor,
    lambda: f64,
) -> IndicatorCodes {
    let n_items = labels.n_items();
    guard_items(n_items);
    let (m, n) = (codebook.n_stages(), codebook.n_atoms());

    let ex = projections.w_x.transpose() * x.data();
    let ey = projections.w_y.transpose() * y.data();
    let s = dense_similarity(labels);
    let mut r_x = s.clone();
    let mut r_y = s;
    let mut r_p = dense_regression_target(regressor, labels);

    let mut atoms = vec![0u16; n_items * m];
    for t in 0..m {
        let c_t = codebook.stage(t);
        let cx = ex.transpose() * c_t; // N x n
        let cy = ey.transpose() * c_t;
        let gram =
            cx.transpose() * &cx + cy.transpose() * &cy + lambda * c_t.transpose() * c_t;
        let mut a_t = DMatrix::<f64>::zeros(n, n_items);
        for i in 0..n_items {
            let h = cx.transpose() * r_x.column(i)
                + cy.transpose() * r_y.column(i)
                + lambda * c_t.transpose() * r_p.column(i);
            let mut best = 0usize;
            let mut best_score = f64::INFINITY;
            for j in 0..n {
                let score = gram[(j, j)] - 2.0 * h[j];
                if score < best_score {
                    best_score = score;
                    best = j;
                }
            }
            atoms[i * m + t] = best as u16;
            a_t[(best, i)] = 1.0;
        }
        r_x -= &cx * &a_t;
        r_y -= &cy * &a_t;
        r_p -= c_t * &a_t;
    }
    IndicatorCodes::new(atoms, m, n).expect("oracle produced invalid codes")
}

/// Checks stage-wise optimality of given codes: for every column and stage,
/// the chosen atom must attain the dense per-stage minimum given the
/// earlier stages of those same codes. Returns the first violation as
/// `(column, stage, optimal_atom, chosen_atom)`.
pub fn oracle_stagewise_violation(
    x: &FeatureMatrix,
    y: &FeatureMatrix,
    labels: &LabelMatrix,
    projections: &Projections,
    codebook: &Codebook,
    regressor: &LabelRegressor,
    lambda: f64,
    codes: &IndicatorCodes,
) -> Option<(usize, usize, usize, usize)> {
    let n_items = labels.n_items();
    guard_items(n_items);
    let m = codebook.n_stages();
    let n = codebook.n_atoms();

    let ex = projections.w_x.transpose() * x.data();
    let ey = projections.w_y.transpose() * y.data();
    let s = dense_similarity(labels);
    let p = dense_regression_target(regressor, labels);

    for i in 0..n_items {
        // Dense residual columns for this item, advanced stage by stage
        // with the *given* code's choices.
        let mut r_x = s.column(i).into_owned();
        let mut r_y = s.column(i).into_owned();
        let mut r_p = p.column(i).into_owned();
        for t in 0..m {
            let c_t = codebook.stage(t);
            let cx = ex.transpose() * c_t;
            let cy = ey.transpose() * c_t;
            let mut best = 0usize;
            let mut best_err = f64::INFINITY;
            for j in 0..n {
                let err = (cx.column(j) - &r_x).norm_squared()
                    + (cy.column(j) - &r_y).norm_squared()
                    + lambda * (c_t.column(j) - &r_p).norm_squared();
                if err < best_err {
                    best_err = err;
                    best = j;
                }
            }
            let chosen = codes.atom(t, i);
            if chosen != best {
                return Some((i, t, best, chosen));
            }
            r_x -= cx.column(chosen);
            r_y -= cy.column(chosen);
            r_p -= c_t.column(chosen);
        }
    }
    None
}

/// Exhaustive per-column encoding over all `n^m` code combinations,
/// minimizing the true column objective. Ties go to the lexicographically
/// smallest combination. Guarded to `m <= 2`, `n <= 8`.
pub fn oracle_exhaustive_encode(
    x: &FeatureMatrix,
    y: &FeatureMatrix,
    labels: &LabelMatrix,
    projections: &Projections,
    codebook: &Codebook,
    regressor: &LabelRegressor,
    lambda: f64,
) -> Vec<Vec<u16>> {
    let n_items = labels.n_items();
    guard_items(n_items);
    let (m, n) = (codebook.n_stages(), codebook.n_atoms());
    assert!(m <= 2 && n <= 8, "oracle size guard: exhaustive needs m <= 2, n <= 8");

    let ex = projections.w_x.transpose() * x.data();
    let ey = projections.w_y.transpose() * y.data();
    let s = dense_similarity(labels);
    let p = dense_regression_target(regressor, labels);

    let combos = n.pow(m as u32);
    let mut out = Vec::with_capacity(n_items);
    for i in 0..n_items {
        let mut best_combo = vec![0u16; m];
        let mut best_err = f64::INFINITY;
        for flat in 0..combos {
            // Stage 0 is the most significant digit so enumeration order is
            // lexicographic.
            let mut digits = vec![0u16; m];
            let mut rest = flat;
            for t in (0..m).rev() {
                digits[t] = (rest % n) as u16;
                rest /= n;
            }
            let mut z = DVector::zeros(codebook.latent_dim());
            for t in 0..m {
                z += codebook.stage(t).column(digits[t] as usize);
            }
            let err = (ex.transpose() * &z - s.column(i)).norm_squared()
                + (ey.transpose() * &z - s.column(i)).norm_squared()
                + lambda * (&z - p.column(i)).norm_squared();
            if err < best_err {
                best_err = err;
                best_combo = digits;
            }
        }
        out.push(best_combo);
    }
    out
}

fn kronecker(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = DMatrix::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            out.view_mut((i * br, j * bc), (br, bc))
                .copy_from(&(a[(i, j)] * b));
        }
    }
    out
}

fn vec_columns(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

fn unvec(v: &DVector<f64>, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(rows, cols, v.as_slice())
}

/// Projection update solved by a generic route: the ridged normal
/// equations `(F F' + e1 I) W (Z Z' + e2 I) = F (L' L) Z'` are vectorized
/// into one Kronecker system and solved with plain LU.
pub fn oracle_projection_solve(
    features: &DMatrix<f64>,
    labels: &LabelMatrix,
    z: &DMatrix<f64>,
    ridge_eps: f64,
) -> DMatrix<f64> {
    guard_items(labels.n_items());
    let f = features;
    let l = labels.data();
    let d = f.nrows();
    let k = z.nrows();

    let mut fft = f * f.transpose();
    let e1 = effective_ridge(&fft, ridge_eps);
    for i in 0..d {
        fft[(i, i)] += e1;
    }
    let mut zzt = z * z.transpose();
    let e2 = effective_ridge(&zzt, ridge_eps);
    for i in 0..k {
        zzt[(i, i)] += e2;
    }
    let s = l.transpose() * l;
    let rhs = f * s * z.transpose();

    // vec(A W B) = (B' kron A) vec(W), and both factors are symmetric.
    let big = kronecker(&zzt, &fft);
    let solution = big
        .lu()
        .solve(&vec_columns(&rhs))
        .expect("oracle normal equations are singular");
    unvec(&solution, d, k)
}

/// Dense residual of the ridged codebook stationarity condition
/// `(G + lambda I + eg I) C (A A' + ea I) = (E_x S + E_y S + lambda P) A'`.
/// Returns `(residual_norm, rhs_norm)`.
pub fn oracle_codebook_stationarity(
    x: &FeatureMatrix,
    y: &FeatureMatrix,
    labels: &LabelMatrix,
    projections: &Projections,
    codes: &IndicatorCodes,
    regressor: &LabelRegressor,
    lambda: f64,
    ridge_eps: f64,
    codebook: &Codebook,
) -> (f64, f64) {
    guard_items(labels.n_items());
    let ex = projections.w_x.transpose() * x.data();
    let ey = projections.w_y.transpose() * y.data();
    let s = dense_similarity(labels);
    let a = dense_one_hot(codes);
    let p = dense_regression_target(regressor, labels);

    let k = ex.nrows();
    let mut g = &ex * ex.transpose() + &ey * ey.transpose();
    for i in 0..k {
        g[(i, i)] += lambda;
    }
    let eg = effective_ridge(&g, ridge_eps);
    for i in 0..k {
        g[(i, i)] += eg;
    }
    let mut aat = &a * a.transpose();
    let ea = effective_ridge(&aat, ridge_eps);
    for i in 0..aat.nrows() {
        aat[(i, i)] += ea;
    }
    let rhs = (&ex * &s + &ey * &s + lambda * p) * a.transpose();
    let lhs = g * codebook.concat() * aat;
    ((lhs - &rhs).norm(), rhs.norm())
}

/// Value of the regressor subproblem
/// `||Z - M' L - e t'||^2 + (mu/lambda) ||M||^2`.
pub fn regressor_objective(
    labels: &LabelMatrix,
    z: &DMatrix<f64>,
    drift: &DVector<f64>,
    mu_over_lambda: f64,
    m: &DMatrix<f64>,
) -> f64 {
    let mut residual = z - m.transpose() * labels.data();
    for (i, mut col) in residual.column_iter_mut().enumerate() {
        col.add_scalar_mut(-drift[i]);
    }
    residual.norm_squared() + mu_over_lambda * m.norm_squared()
}

/// Classifies every item by its nearest class centroid (class means
/// computed from the data itself) and returns the accuracy.
pub fn nearest_centroid_accuracy(features: &FeatureMatrix, labels: &LabelMatrix) -> f64 {
    let classes = labels.n_classes();
    let n_items = labels.n_items();
    let d = features.dim();
    let mut centroids = DMatrix::<f64>::zeros(d, classes);
    let mut counts = vec![0usize; classes];
    for i in 0..n_items {
        for c in 0..classes {
            if labels.data()[(c, i)] == 1.0 {
                let mut col = centroids.column_mut(c);
                col += features.data().column(i);
                counts[c] += 1;
            }
        }
    }
    for c in 0..classes {
        if counts[c] > 0 {
            let mut col = centroids.column_mut(c);
            col /= counts[c] as f64;
        }
    }
    let mut correct = 0usize;
    for i in 0..n_items {
        let mut best = 0usize;
        let mut best_dist = f64::INFINITY;
        for c in 0..classes {
            let dist = (features.data().column(i) - centroids.column(c)).norm_squared();
            if dist < best_dist {
                best_dist = dist;
                best = c;
            }
        }
        if labels.data()[(best, i)] == 1.0 {
            correct += 1;
        }
    }
    correct as f64 / n_items as f64
}

/// Average precision by recounting every prefix from scratch.
pub fn counting_average_precision(ranking: &[usize], rel: &[bool]) -> f64 {
    let relevant_ranks: Vec<usize> = (0..ranking.len())
        .filter(|&idx| rel[ranking[idx]])
        .collect();
    if relevant_ranks.is_empty() {
        return 0.0;
    }
    let mut sum = 0.0;
    for &idx in &relevant_ranks {
        let prefix_hits = ranking[..=idx].iter().filter(|&&id| rel[id]).count();
        sum += prefix_hits as f64 / (idx + 1) as f64;
    }
    sum / relevant_ranks.len() as f64
}

/// Precision at a cutoff by direct counting.
pub fn counting_precision_at(ranking: &[usize], rel: &[bool], cutoff: usize) -> f64 {
    let hits = ranking[..cutoff].iter().filter(|&&id| rel[id]).count();
    hits as f64 / cutoff as f64
}


pub mod gen {
    //! Seeded random instances shared by the oracle and acceptance suites.

    use acqh::model::{FeatureMatrix, Hyperparams, LabelMatrix, Modality};
    use nalgebra::DMatrix;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    /// Shape and hyperparameters of one random training instance.
    #[derive(Debug, Clone)]
    pub struct InstanceConfig {
        pub d_x: usize,
        pub d_y: usize,
        pub classes: usize,
        pub n_items: usize,
        pub k: usize,
        pub m: usize,
        pub n: usize,
        pub lambda: f64,
        pub mu: f64,
        pub seed: u64,
    }

    impl Default for InstanceConfig {
        fn default() -> Self {
            Self {
                d_x: 5,
                d_y: 4,
                classes: 3,
                n_items: 16,
                k: 3,
                m: 2,
                n: 4,
                lambda: 0.01,
                mu: 0.05,
                seed: 0,
            }
        }
    }

    /// Uniform features in [-1, 1] and multi-hot labels: one guaranteed
    /// class per item plus extra classes with probability 0.3.
    pub fn random_instance(
        cfg: &InstanceConfig,
    ) -> (FeatureMatrix, FeatureMatrix, LabelMatrix, Hyperparams) {
        let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
        let x = DMatrix::from_fn(cfg.d_x, cfg.n_items, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let y = DMatrix::from_fn(cfg.d_y, cfg.n_items, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let mut labels = DMatrix::zeros(cfg.classes, cfg.n_items);
        for i in 0..cfg.n_items {
            labels[(i % cfg.classes, i)] = 1.0;
            for c in 0..cfg.classes {
                if rng.random::<f64>() < 0.3 {
                    labels[(c, i)] = 1.0;
                }
            }
        }
        let hyper = Hyperparams {
            k: cfg.k,
            m: cfg.m,
            n: cfg.n,
            lambda: cfg.lambda,
            mu: cfg.mu,
            max_iters: 5,
            tol: 1e-12,
            ridge_eps: 1e-8,
            seed: cfg.seed.wrapping_add(1),
        };
        (
            FeatureMatrix::new(x, Modality::Image).expect("generated features are finite"),
            FeatureMatrix::new(y, Modality::Text).expect("generated features are finite"),
            LabelMatrix::new(labels).expect("generated labels are valid"),
            hyper,
        )
    }
}
