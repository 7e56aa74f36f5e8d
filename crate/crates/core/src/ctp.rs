//! Content-based token pruning.
//!
//! Each head's attention-weighted value output ("content") is scored by its
//! l2 norm, the scores are normalized across heads per token, and the
//! resulting weights mix the per-head class-token attention into a single
//! importance map. Tokens with the highest importance survive.

use std::fmt;
use std::str::FromStr;

use crate::error::{shape_err, EetError, Result};
use crate::linalg::{l2_norm, Matrix};
use crate::vit::{AttentionArtifacts, TokenSequence};

/// Guards against `0.29 * 100 = 28.999…` style floor errors.
const COUNT_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PruneStage {
    /// 1-based layer after which pruning runs.
    pub layer: usize,
    pub keep_ratio: f64,
}

/// Ordered pruning stages with strictly increasing layers.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PruneSchedule {
    stages: Vec<PruneStage>,
}

impl PruneSchedule {
    pub fn new(stages: Vec<PruneStage>) -> Result<Self> {
        for s in &stages {
            if s.layer == 0 {
                return Err(EetError::Precondition("prune layers are 1-based".into()));
            }
            if !(s.keep_ratio > 0.0 && s.keep_ratio <= 1.0) {
                return Err(EetError::Precondition(format!(
                    "keep ratio {} outside (0, 1]",
                    s.keep_ratio
                )));
            }
        }
        if stages.windows(2).any(|w| w[0].layer >= w[1].layer) {
            return Err(EetError::Precondition("prune layers must be strictly increasing".into()));
        }
        Ok(Self { stages })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    /// Layers 4, 8 and 10 keeping 1/2, 1/2 and 1/4 of the alive patches.
    pub fn default_hierarchical() -> Self {
        Self {
            stages: vec![
                PruneStage { layer: 4, keep_ratio: 0.5 },
                PruneStage { layer: 8, keep_ratio: 0.5 },
                PruneStage { layer: 10, keep_ratio: 0.25 },
            ],
        }
    }

    pub fn stages(&self) -> &[PruneStage] {
        &self.stages
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    pub fn validate_depth(&self, depth: usize) -> Result<()> {
        match self.stages.last() {
            Some(s) if s.layer > depth => Err(EetError::Precondition(format!(
                "prune layer {} exceeds depth {depth}",
                s.layer
            ))),
            _ => Ok(()),
        }
    }

    pub fn keep_ratio_at(&self, layer: usize) -> Option<f64> {
        self.stages.iter().find(|s| s.layer == layer).map(|s| s.keep_ratio)
    }

    /// Tokens (including the class token) entering each of `depth` layers
    /// when starting from `patches` patch tokens.
    pub fn layer_token_counts(&self, patches: usize, depth: usize) -> Vec<usize> {
        let mut alive = patches;
        let mut out = Vec::with_capacity(depth);
        for layer in 1..=depth {
            out.push(alive + 1);
            if let Some(r) = self.keep_ratio_at(layer) {
                alive = keep_count(alive, r);
            }
        }
        out
    }
}

impl FromStr for PruneSchedule {
    type Err = EetError;

    /// Parses `4:0.5,8:0.5,10:0.25`. An empty string or `none` is the
    /// empty schedule.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() || s.eq_ignore_ascii_case("none") {
            return Ok(Self::empty());
        }
        let mut stages = Vec::new();
        for part in s.split(',') {
            let (layer, ratio) = part
                .split_once(':')
                .ok_or_else(|| EetError::Config(format!("bad prune stage `{part}`, expected layer:ratio")))?;
            let layer = layer
                .trim()
                .parse()
                .map_err(|_| EetError::Config(format!("bad prune layer `{layer}`")))?;
            let keep_ratio = ratio
                .trim()
                .parse()
                .map_err(|_| EetError::Config(format!("bad keep ratio `{ratio}`")))?;
            stages.push(PruneStage { layer, keep_ratio });
        }
        Self::new(stages)
    }
}

impl fmt::Display for PruneSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.stages.is_empty() {
            return f.write_str("none");
        }
        for (i, s) in self.stages.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{}:{}", s.layer, s.keep_ratio)?;
        }
        Ok(())
    }
}

/// Importance of each alive patch token (class token excluded).
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceMap {
    pub values: Vec<f64>,
    pub layer: usize,
}

impl ImportanceMap {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// `S[h][i]`: l2 norm of head `h`'s content for alive token `i`.
pub fn content_importance(art: &AttentionArtifacts) -> Matrix {
    let heads = art.head_content.len();
    let n = art.head_content.first().map_or(0, Matrix::rows);
    let mut s = Matrix::zeros(heads, n);
    for (h, content) in art.head_content.iter().enumerate() {
        for i in 0..n {
            s[(h, i)] = l2_norm(content.row(i));
        }
    }
    s
}

/// Normalizes `S` across heads for every token. A token whose scores are
/// all zero gets uniform weights `1/H`.
pub fn head_weights(s: &Matrix) -> Matrix {
    let heads = s.rows();
    let sums = s.column_sums();
    Matrix::from_fn(heads, s.cols(), |h, i| {
        if sums[i] > 0.0 {
            s[(h, i)] / sums[i]
        } else {
            1.0 / heads as f64
        }
    })
}

/// `M[i] = Σ_h W[h][i]·A[h][i]`. `weights` may cover all alive tokens
/// (its class-token column is then dropped) or only the patch tokens.
pub fn token_importance(weights: &Matrix, class_attn: &Matrix) -> Result<ImportanceMap> {
    if weights.rows() != class_attn.rows() {
        return Err(shape_err(
            "token_importance",
            format!("{} heads", class_attn.rows()),
            format!("{}", weights.rows()),
        ));
    }
    let offset = if weights.cols() == class_attn.cols() + 1 {
        1
    } else if weights.cols() == class_attn.cols() {
        0
    } else {
        return Err(shape_err(
            "token_importance",
            format!("{} or {} weight columns", class_attn.cols(), class_attn.cols() + 1),
            format!("{}", weights.cols()),
        ));
    };
    let values = (0..class_attn.cols())
        .map(|i| {
            (0..class_attn.rows())
                .map(|h| weights[(h, i + offset)] * class_attn[(h, i)])
                .sum()
        })
        .collect();
    Ok(ImportanceMap { values, layer: 0 })
}

/// Full scoring path from one layer's attention artifacts.
pub fn importance_from_artifacts(art: &AttentionArtifacts, layer: usize) -> Result<ImportanceMap> {
    let w = head_weights(&content_importance(art));
    let mut m = token_importance(&w, &art.class_attention)?;
    m.layer = layer;
    Ok(m)
}

/// Patch tokens kept out of `alive`: `⌊ratio·alive⌋`, at least one.
pub fn keep_count(alive: usize, keep_ratio: f64) -> usize {
    let k = (keep_ratio * alive as f64 + COUNT_EPS).floor() as usize;
    k.clamp(1, alive.max(1))
}

/// Positions of the `k` largest values, returned in ascending position
/// order. Equal values favour the lower position.
pub fn top_k_positions(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx.sort_unstable();
    idx
}

/// Keeps the class token and the top `keep_count` patch tokens by `m`.
pub fn prune(seq: &TokenSequence, m: &ImportanceMap, keep_ratio: f64) -> Result<TokenSequence> {
    if !(keep_ratio > 0.0 && keep_ratio <= 1.0) {
        return Err(EetError::Precondition(format!("keep ratio {keep_ratio} outside (0, 1]")));
    }
    let patches = seq.alive.len().saturating_sub(1);
    if patches == 0 {
        return Err(EetError::Precondition("no patch tokens left to prune".into()));
    }
    if m.len() != patches {
        return Err(shape_err(
            "prune",
            format!("importance over {patches} patch tokens"),
            format!("{}", m.len()),
        ));
    }
    let keep = keep_count(patches, keep_ratio);
    let mut rows = Vec::with_capacity(keep + 1);
    rows.push(0);
    rows.extend(top_k_positions(&m.values, keep).into_iter().map(|p| p + 1));
    Ok(TokenSequence {
        tokens: seq.tokens.select_rows(&rows),
        alive: rows.iter().map(|&r| seq.alive[r]).collect(),
        layer: seq.layer,
    })
}
