//! Ranked-retrieval quality metrics.
//!
//! Ground truth is label overlap: an item is relevant to a query when they
//! share at least one class. All metrics consume rankings (item id lists),
//! never raw scores, so the deterministic tie rule of [`crate::query::top_k`]
//! is applied before evaluation.

use crate::error::Error;
use crate::model::{AcqhModel, FeatureMatrix, LabelMatrix, Modality};
use crate::query::search;
use crate::Result;

/// Cross-modal retrieval task direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Image query against the database (I2T).
    ImageToText,
    /// Text query against the database (T2I).
    TextToImage,
}

impl Direction {
    pub fn query_modality(self) -> Modality {
        match self {
            Direction::ImageToText => Modality::Image,
            Direction::TextToImage => Modality::Text,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Direction::ImageToText => "i2t",
            Direction::TextToImage => "t2i",
        }
    }
}

/// Relevance of every database item to a query label vector: relevant iff
/// at least one label is shared.
pub fn relevance(query_labels: &[f64], db_labels: &LabelMatrix) -> Result<Vec<bool>> {
    if query_labels.len() != db_labels.n_classes() {
        return Err(Error::dimension(
            "relevance",
            format!("{} classes", db_labels.n_classes()),
            format!("{}", query_labels.len()),
        ));
    }
    Ok((0..db_labels.n_items())
        .map(|i| {
            db_labels
                .column_slice(i)
                .iter()
                .zip(query_labels.iter())
                .any(|(&a, &b)| a == 1.0 && b == 1.0)
        })
        .collect())
}

fn check_ranking(ranking: &[usize], n_items: usize) -> Result<()> {
    let mut seen = vec![false; n_items];
    for &id in ranking {
        if id >= n_items {
            return Err(Error::InvalidArgument(format!(
                "ranked id {} out of range for {} items",
                id, n_items
            )));
        }
        if seen[id] {
            return Err(Error::InvalidArgument(format!("duplicate id {} in ranking", id)));
        }
        seen[id] = true;
    }
    Ok(())
}

/// Average precision of a ranking against a relevance vector.
///
/// `AP = (1/R) sum over relevant ranks k of (relevant count at k) / k`,
/// with `R` the number of relevant items inside the ranking. A ranking
/// that retrieves nothing relevant scores 0.
pub fn average_precision(ranking: &[usize], rel: &[bool]) -> Result<f64> {
    check_ranking(ranking, rel.len())?;
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (idx, &id) in ranking.iter().enumerate() {
        if rel[id] {
            hits += 1;
            sum += hits as f64 / (idx + 1) as f64;
        }
    }
    if hits == 0 {
        return Ok(0.0);
    }
    Ok(sum / hits as f64)
}

/// Mean average precision over a query set, ranking the full database per
/// query. The query features must match the direction's modality.
pub fn mean_average_precision(
    model: &AcqhModel,
    queries: &FeatureMatrix,
    query_labels: &LabelMatrix,
    db_labels: &LabelMatrix,
    direction: Direction,
) -> Result<f64> {
    if queries.modality() != direction.query_modality() {
        return Err(Error::InvalidArgument(format!(
            "{} queries given for the {} task",
            queries.modality().name(),
            direction.name()
        )));
    }
    if query_labels.n_items() != queries.n_items() {
        return Err(Error::dimension(
            "mean_average_precision",
            format!("{} query labels", queries.n_items()),
            format!("{}", query_labels.n_items()),
        ));
    }
    if query_labels.n_classes() != db_labels.n_classes() {
        return Err(Error::dimension(
            "mean_average_precision",
            format!("{} classes", db_labels.n_classes()),
            format!("{}", query_labels.n_classes()),
        ));
    }
    let n_items = model.dims.n_items;
    if db_labels.n_items() != n_items {
        return Err(Error::dimension(
            "mean_average_precision",
            format!("{} database labels", n_items),
            format!("{}", db_labels.n_items()),
        ));
    }
    let n_queries = queries.n_items();
    let mut total = 0.0;
    for q in 0..n_queries {
        let column = queries.data().column(q).clone_owned();
        let ranked = search(model, column.as_slice(), queries.modality(), n_items)?;
        let ranking: Vec<usize> = ranked.iter().map(|&(id, _)| id).collect();
        let rel = relevance(query_labels.column_slice(q), db_labels)?;
        total += average_precision(&ranking, &rel)?;
    }
    Ok(total / n_queries as f64)
}

/// Precision at a monotone grid of cutoffs: `n_points` values of `N`
/// evenly spread over the ranking length.
pub fn topn_precision_curve(
    ranking: &[usize],
    rel: &[bool],
    n_points: usize,
) -> Result<Vec<(usize, f64)>> {
    check_ranking(ranking, rel.len())?;
    if n_points == 0 || ranking.is_empty() {
        return Err(Error::InvalidArgument(
            "topn_precision_curve needs a non-empty ranking and n_points >= 1".into(),
        ));
    }
    let len = ranking.len();
    let cutoffs: Vec<usize> = (1..=n_points)
        .map(|j| (j * len).div_ceil(n_points))
        .collect();
    let mut out = Vec::with_capacity(n_points);
    let mut hits = 0usize;
    let mut next = 0usize;
    for (idx, &id) in ranking.iter().enumerate() {
        if rel[id] {
            hits += 1;
        }
        let rank = idx + 1;
        while next < cutoffs.len() && cutoffs[next] == rank {
            out.push((rank, hits as f64 / rank as f64));
            next += 1;
        }
    }
    Ok(out)
}

/// Precision/recall points at every rank where a relevant item appears.
/// Recall is measured against all relevant items in `rel`, retrieved or not.
pub fn precision_recall_curve(ranking: &[usize], rel: &[bool]) -> Result<Vec<(f64, f64)>> {
    check_ranking(ranking, rel.len())?;
    let total = rel.iter().filter(|&&r| r).count();
    if total == 0 {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    let mut hits = 0usize;
    for (idx, &id) in ranking.iter().enumerate() {
        if rel[id] {
            hits += 1;
            out.push((hits as f64 / total as f64, hits as f64 / (idx + 1) as f64));
        }
    }
    Ok(out)
}
