//! Packed binary codes, exact Hamming ranking and retrieval metrics.
//!
//! Codes are stored one row per item, `ceil(k / 8)` bytes per row, bit `i`
//! at byte `i / 8`, position `i % 8` (LSB first). A set bit stands for +1.

use crate::error::{shape_err, EetError, Result};
use crate::linalg::Matrix;

/// A set of packed `k`-bit codes with one label per item.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryCodeSet {
    k: usize,
    n: usize,
    bits: Vec<u8>,
    labels: Vec<u32>,
}

pub fn bytes_per_code(k: usize) -> usize {
    k.div_ceil(8)
}

fn trailing_mask(k: usize) -> u8 {
    match k % 8 {
        0 => 0xff,
        r => (1u8 << r) - 1,
    }
}

/// Packs a real vector: bit `i` is set iff `h[i] > 0`.
pub fn binarize(h: &[f64]) -> Vec<u8> {
    let mut out = vec![0u8; bytes_per_code(h.len())];
    for (i, &x) in h.iter().enumerate() {
        if x > 0.0 {
            out[i / 8] |= 1 << (i % 8);
        }
    }
    out
}

/// Expands a packed code into ±1 values.
pub fn unpack(code: &[u8], k: usize) -> Vec<f64> {
    (0..k)
        .map(|i| if code[i / 8] >> (i % 8) & 1 == 1 { 1.0 } else { -1.0 })
        .collect()
}

/// Number of differing bits among the first `k`.
pub fn hamming(a: &[u8], b: &[u8], k: usize) -> Result<u32> {
    let len = bytes_per_code(k);
    if a.len() != len || b.len() != len {
        return Err(shape_err("hamming", format!("{len} bytes"), format!("{} and {}", a.len(), b.len())));
    }
    Ok(hamming_unchecked(a, b))
}

#[inline]
fn hamming_unchecked(a: &[u8], b: &[u8]) -> u32 {
    let mut d = 0;
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in ca.by_ref().zip(cb.by_ref()) {
        let x = u64::from_le_bytes(x.try_into().unwrap());
        let y = u64::from_le_bytes(y.try_into().unwrap());
        d += (x ^ y).count_ones();
    }
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        d += (x ^ y).count_ones();
    }
    d
}

impl BinaryCodeSet {
    /// Builds a set from raw packed rows. Trailing bits must be zero.
    pub fn from_packed(k: usize, bits: Vec<u8>, labels: Vec<u32>) -> Result<Self> {
        if k == 0 {
            return Err(EetError::Precondition("code length must be positive".into()));
        }
        let bpc = bytes_per_code(k);
        let n = labels.len();
        if bits.len() != n * bpc {
            return Err(shape_err("BinaryCodeSet", format!("{} bytes", n * bpc), format!("{} bytes", bits.len())));
        }
        let mask = trailing_mask(k);
        if let Some(row) = bits.chunks_exact(bpc).position(|r| r[bpc - 1] & !mask != 0) {
            return Err(EetError::Format {
                format: "packed codes",
                reason: format!("row {row} has bits set past k = {k}"),
            });
        }
        Ok(BinaryCodeSet { k, n, bits, labels })
    }

    /// Binarizes each row of `h` (n×k).
    pub fn from_real(h: &Matrix, labels: Vec<u32>) -> Result<Self> {
        if h.rows() != labels.len() {
            return Err(shape_err("BinaryCodeSet::from_real", format!("{} labels", h.rows()), labels.len().to_string()));
        }
        if !h.is_finite() {
            return Err(EetError::Numeric("non-finite hash output".into()));
        }
        let mut bits = Vec::with_capacity(h.rows() * bytes_per_code(h.cols()));
        for i in 0..h.rows() {
            bits.extend(binarize(h.row(i)));
        }
        Self::from_packed(h.cols(), bits, labels)
    }

    /// Builds a set from the columns of a k×n ±1 matrix.
    pub fn from_code_columns(b: &Matrix, labels: Vec<u32>) -> Result<Self> {
        Self::from_real(&b.transpose(), labels)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bits
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn code(&self, i: usize) -> &[u8] {
        let bpc = bytes_per_code(self.k);
        &self.bits[i * bpc..(i + 1) * bpc]
    }

    /// Codes as an n×k matrix of ±1.
    pub fn to_matrix(&self) -> Matrix {
        let mut m = Matrix::zeros(self.n, self.k);
        for i in 0..self.n {
            m.row_mut(i).copy_from_slice(&unpack(self.code(i), self.k));
        }
        m
    }
}

/// Database ranking for one query.
#[derive(Clone, Debug, PartialEq)]
pub struct RankedRetrieval {
    pub query_index: usize,
    pub order: Vec<usize>,
    pub distances: Vec<u32>,
    pub relevant: Vec<bool>,
}

/// Ranks the whole database by ascending distance, ties by index.
pub fn search(query: &[u8], query_label: u32, query_index: usize, db: &BinaryCodeSet) -> Result<RankedRetrieval> {
    if query.len() != bytes_per_code(db.k) {
        return Err(shape_err("search", format!("{} bytes", bytes_per_code(db.k)), format!("{} bytes", query.len())));
    }
    let dist: Vec<u32> = (0..db.n).map(|j| hamming_unchecked(query, db.code(j))).collect();
    // counting sort keeps equal distances in index order
    let mut start = vec![0usize; db.k + 2];
    for &d in &dist {
        start[d as usize + 1] += 1;
    }
    for i in 1..start.len() {
        start[i] += start[i - 1];
    }
    let mut order = vec![0; db.n];
    for (j, &d) in dist.iter().enumerate() {
        order[start[d as usize]] = j;
        start[d as usize] += 1;
    }
    let distances = order.iter().map(|&j| dist[j]).collect();
    let relevant = order.iter().map(|&j| db.labels[j] == query_label).collect();
    Ok(RankedRetrieval {
        query_index,
        order,
        distances,
        relevant,
    })
}

/// Denominator used by [`average_precision`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ApNormalizer {
    /// Relevant items inside the top Q.
    #[default]
    WithinCutoff,
    /// All relevant items in the ranking.
    AllRelevant,
}

impl std::str::FromStr for ApNormalizer {
    type Err = EetError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "within_cutoff" => Ok(ApNormalizer::WithinCutoff),
            "all_relevant" => Ok(ApNormalizer::AllRelevant),
            _ => Err(EetError::Config(format!("unknown AP normalizer '{s}'"))),
        }
    }
}

/// Average precision over the first `q_cutoff` ranks.
pub fn average_precision(relevant: &[bool], q_cutoff: usize, normalizer: ApNormalizer) -> f64 {
    let q = q_cutoff.min(relevant.len());
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (t, _) in relevant[..q].iter().enumerate().filter(|(_, &r)| r) {
        hits += 1;
        sum += hits as f64 / (t + 1) as f64;
    }
    let denom = match normalizer {
        ApNormalizer::WithinCutoff => hits,
        ApNormalizer::AllRelevant => relevant.iter().filter(|&&r| r).count(),
    };
    if denom == 0 {
        0.0
    } else {
        sum / denom as f64
    }
}

#[derive(Clone, Debug)]
pub struct EvalOptions {
    /// Ranks scored per query; `None` means the whole database.
    pub q_cutoff: Option<usize>,
    /// Drop the database item with the query's own index.
    pub exclude_self: bool,
    pub normalizer: ApNormalizer,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            q_cutoff: None,
            exclude_self: false,
            normalizer: ApNormalizer::WithinCutoff,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EvalReport {
    pub map: f64,
    pub ap: Vec<f64>,
    /// 11-point interpolated precision at recall 0.0, 0.1, ..., 1.0.
    pub pr_curve: Vec<(f64, f64)>,
    /// Mean recall and precision at every rank position.
    pub pr_raw: Vec<(f64, f64)>,
}

pub const PR_POINTS: usize = 11;

/// mAP and precision-recall over all queries.
pub fn evaluate(queries: &BinaryCodeSet, db: &BinaryCodeSet, opts: &EvalOptions) -> Result<EvalReport> {
    if queries.k != db.k {
        return Err(shape_err("evaluate", format!("k = {}", db.k), format!("k = {}", queries.k)));
    }
    if let Some(q) = opts.q_cutoff {
        if q > db.n {
            return Err(EetError::OutOfBounds {
                what: "q_cutoff",
                index: q,
                bound: db.n + 1,
            });
        }
    }
    let ranks = db.n - usize::from(opts.exclude_self && db.n > 0);
    let mut ap = Vec::with_capacity(queries.n);
    let mut interp = [0.0; PR_POINTS];
    let mut raw = vec![(0.0, 0.0); ranks];
    for qi in 0..queries.n {
        let mut r = search(queries.code(qi), queries.labels[qi], qi, db)?;
        if opts.exclude_self && qi < db.n {
            let pos = r.order.iter().position(|&j| j == qi).unwrap();
            r.order.remove(pos);
            r.distances.remove(pos);
            r.relevant.remove(pos);
        }
        let q = opts.q_cutoff.unwrap_or(db.n).min(r.relevant.len());
        ap.push(average_precision(&r.relevant, q, opts.normalizer));

        let total = r.relevant.iter().filter(|&&x| x).count();
        let mut hits = 0usize;
        let mut curve = Vec::with_capacity(r.relevant.len());
        for (t, &rel) in r.relevant.iter().enumerate() {
            hits += usize::from(rel);
            let recall = if total == 0 { 0.0 } else { hits as f64 / total as f64 };
            let precision = hits as f64 / (t + 1) as f64;
            curve.push((recall, precision));
        }
        for (acc, &(rc, pr)) in raw.iter_mut().zip(&curve) {
            acc.0 += rc;
            acc.1 += pr;
        }
        for (level, slot) in interp.iter_mut().enumerate() {
            let target = level as f64 / (PR_POINTS - 1) as f64;
            let best = curve
                .iter()
                .filter(|(rc, _)| *rc >= target - 1e-12)
                .map(|&(_, pr)| pr)
                .fold(0.0, f64::max);
            *slot += if total == 0 { 0.0 } else { best };
        }
    }
    let nq = queries.n.max(1) as f64;
    let map = if ap.is_empty() { 0.0 } else { ap.iter().sum::<f64>() / ap.len() as f64 };
    let pr_curve = interp
        .iter()
        .enumerate()
        .map(|(level, s)| (level as f64 / (PR_POINTS - 1) as f64, s / nq))
        .collect();
    let pr_raw = raw.into_iter().map(|(r, p)| (r / nq, p / nq)).collect();
    Ok(EvalReport { map, ap, pr_curve, pr_raw })
}
