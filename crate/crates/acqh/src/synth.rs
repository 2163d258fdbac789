//! Seeded synthetic datasets for benchmarks and the test suite.
//!
//! Per class, one centroid is drawn per modality and items are emitted as
//! centroid plus isotropic Gaussian noise. Labels are one-hot by class.
//! A held-out query split of `max(1, per_class / 5)` items per class is
//! drawn from the same distribution.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::Error;
use crate::io::{DatasetBundle, QuerySplit};
use crate::model::{FeatureMatrix, LabelMatrix, Modality};
use crate::Result;

/// Query items generated per class.
pub fn queries_per_class(per_class: usize) -> usize {
    (per_class / 5).max(1)
}

/// Generates a clustered bimodal dataset with a held-out query split.
/// Deterministic for a fixed seed.
pub fn synth_dataset(
    classes: usize,
    per_class: usize,
    d_x: usize,
    d_y: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<DatasetBundle> {
    if classes < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 classes, got {}",
            classes
        )));
    }
    if per_class < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 items per class, got {}",
            per_class
        )));
    }
    if d_x == 0 || d_y == 0 {
        return Err(Error::InvalidArgument("feature dimensions must be positive".into()));
    }
    if !(noise_sigma >= 0.0) || !noise_sigma.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "noise_sigma={} must be finite and >= 0",
            noise_sigma
        )));
    }

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let normal_vec = |rng: &mut ChaCha12Rng, dim: usize| {
        DVector::from_iterator(dim, (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)))
    };

    // Draw order is pinned: centroids for all classes first, then database
    // items class by class, then the query split class by class.
    let centroids: Vec<(DVector<f64>, DVector<f64>)> = (0..classes)
        .map(|_| {
            let cx = normal_vec(&mut rng, d_x);
            let cy = normal_vec(&mut rng, d_y);
            (cx, cy)
        })
        .collect();

    let emit = |rng: &mut ChaCha12Rng, count_per_class: usize| {
        let n = classes * count_per_class;
        let mut x = DMatrix::zeros(d_x, n);
        let mut y = DMatrix::zeros(d_y, n);
        let mut labels = DMatrix::zeros(classes, n);
        let mut col = 0;
        for (class, (cx, cy)) in centroids.iter().enumerate() {
            for _ in 0..count_per_class {
                let noise_x = normal_vec(rng, d_x);
                let noise_y = normal_vec(rng, d_y);
                x.set_column(col, &(cx + noise_sigma * noise_x));
                y.set_column(col, &(cy + noise_sigma * noise_y));
                labels[(class, col)] = 1.0;
                col += 1;
            }
        }
        (x, y, labels)
    };

    let (x, y, labels) = emit(&mut rng, per_class);
    let (qx, qy, qlabels) = emit(&mut rng, queries_per_class(per_class));

    let bundle = DatasetBundle {
        x: FeatureMatrix::new(x, Modality::Image)?,
        y: FeatureMatrix::new(y, Modality::Text)?,
        labels: LabelMatrix::new(labels)?,
        query: Some(QuerySplit {
            x: FeatureMatrix::new(qx, Modality::Image)?,
            y: FeatureMatrix::new(qy, Modality::Text)?,
            labels: LabelMatrix::new(qlabels)?,
        }),
    };
    bundle.validate()?;
    Ok(bundle)
}
