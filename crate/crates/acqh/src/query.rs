//! Asymmetric query path: real-valued query embedding, per-query lookup
//! table, and the O(mN) database scan.
//!
//! A query never gets quantized. It is projected once (`q_hat = W' q`),
//! the inner products of `q_hat` with every codebook atom are tabulated
//! (`m x n` values, independent of the database size), and every item is
//! then scored with `m` table reads and `m - 1` additions. Higher score
//! means more similar; ranking is descending with ties broken by item id.

use nalgebra::{DMatrix, DVector};

use crate::error::Error;
use crate::model::{AcqhModel, Modality};
use crate::quantizer::{Codebook, IndicatorCodes};
use crate::Result;

/// A query projected into the shared latent space.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryEmbedding {
    pub q_hat: DVector<f64>,
    pub modality: Modality,
}

/// Projects a raw feature vector: `q_hat = W' q`.
pub fn embed_query(w: &DMatrix<f64>, q: &[f64], modality: Modality) -> Result<QueryEmbedding> {
    if q.len() != w.nrows() {
        return Err(Error::dimension(
            "embed_query",
            format!("{}", w.nrows()),
            format!("{}", q.len()),
        ));
    }
    let q_vec = DVector::from_column_slice(q);
    let q_hat = w.transpose() * q_vec;
    if !q_hat.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("query embedding"));
    }
    Ok(QueryEmbedding { q_hat, modality })
}

/// Per-query table of inner products between the embedding and every
/// codebook atom; entry `(t, j) = q_hat . C_t[:, j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LookupTable {
    entries: Vec<f64>,
    n_stages: usize,
    n_atoms: usize,
}

impl LookupTable {
    #[inline]
    pub fn get(&self, stage: usize, atom: usize) -> f64 {
        self.entries[stage * self.n_atoms + atom]
    }

    pub fn n_stages(&self) -> usize {
        self.n_stages
    }

    pub fn n_atoms(&self) -> usize {
        self.n_atoms
    }
}

/// Tabulates `q_hat' C`, one row per stage. Costs O(K n m); nothing here
/// depends on the database size.
pub fn build_lookup_table(q_hat: &QueryEmbedding, codebook: &Codebook) -> Result<LookupTable> {
    if q_hat.q_hat.len() != codebook.latent_dim() {
        return Err(Error::dimension(
            "build_lookup_table",
            format!("{}", codebook.latent_dim()),
            format!("{}", q_hat.q_hat.len()),
        ));
    }
    let n = codebook.n_atoms();
    let mut entries = Vec::with_capacity(codebook.n_stages() * n);
    for stage in codebook.stages() {
        let row = stage.transpose() * &q_hat.q_hat;
        entries.extend_from_slice(row.as_slice());
    }
    Ok(LookupTable {
        entries,
        n_stages: codebook.n_stages(),
        n_atoms: n,
    })
}

/// Table reads and additions spent scanning the database.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ScanStats {
    pub table_reads: u64,
    pub additions: u64,
}

/// Scores every item and reports the exact operation counts:
/// `m` table reads and `m - 1` additions per item.
pub fn score_all_counted(
    table: &LookupTable,
    codes: &IndicatorCodes,
) -> Result<(DVector<f64>, ScanStats)> {
    if codes.n_stages() != table.n_stages() || codes.n_atoms() > table.n_atoms() {
        return Err(Error::dimension(
            "score_all",
            format!("{} stages x {} atoms", table.n_stages(), table.n_atoms()),
            format!("{} stages x {} atoms", codes.n_stages(), codes.n_atoms()),
        ));
    }
    let n_items = codes.n_items();
    let mut stats = ScanStats::default();
    let mut scores = DVector::zeros(n_items);
    for i in 0..n_items {
        let atoms = codes.item_atoms(i);
        let mut s = table.get(0, atoms[0] as usize);
        stats.table_reads += 1;
        for (t, &a) in atoms.iter().enumerate().skip(1) {
            s += table.get(t, a as usize);
            stats.table_reads += 1;
            stats.additions += 1;
        }
        scores[i] = s;
    }
    Ok((scores, stats))
}

/// Scores every item: `score_i = sum_t table(t, atom(t, i))`.
pub fn score_all(table: &LookupTable, codes: &IndicatorCodes) -> Result<DVector<f64>> {
    Ok(score_all_counted(table, codes)?.0)
}

/// The `k` best items, descending score, ties broken by ascending id.
pub fn top_k(scores: &DVector<f64>, k: usize) -> Result<Vec<(usize, f64)>> {
    let n = scores.len();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!(
            "k={} must be in 1..={}",
            k, n
        )));
    }
    let mut ranked: Vec<(usize, f64)> = scores.iter().copied().enumerate().collect();
    ranked.sort_unstable_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(k);
    Ok(ranked)
}

/// Embed, tabulate, scan, rank: the whole query path for one raw query.
pub fn search(
    model: &AcqhModel,
    query: &[f64],
    modality: Modality,
    k: usize,
) -> Result<Vec<(usize, f64)>> {
    let w = model.projections.for_modality(modality);
    let q_hat = embed_query(w, query, modality)?;
    let table = build_lookup_table(&q_hat, &model.codebook)?;
    let scores = score_all(&table, &model.codes)?;
    top_k(&scores, k)
}
