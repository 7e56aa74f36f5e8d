//! Analytic gradients and full-batch descent for the two linear heads.
//!
//! With the backbone frozen, a batch is a set of class embeddings. The
//! classification head maps them to logits and the hash head maps logits
//! to real codes, so every in-scope loss term is a smooth function of the
//! four head tensors.

use super::{log_sum_exp, LossWeights};
use crate::error::{shape_err, EetError, Result};
use crate::linalg::{l2_norm, Matrix};
use crate::vit::HeadWeights;

/// Inputs for one full-batch loss evaluation. Rows are items.
#[derive(Debug, Clone, Copy)]
pub struct HeadBatch<'a> {
    /// n × dim class embeddings.
    pub features: &'a Matrix,
    /// n × dim embeddings of the region-masked images, when available.
    pub masked_features: Option<&'a Matrix>,
    pub labels: &'a [usize],
    /// n × bits target codes (±1).
    pub targets: &'a Matrix,
    /// n × bits teacher hash outputs, when available.
    pub teacher: Option<&'a Matrix>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct HeadLoss {
    pub total: f64,
    pub hash: f64,
    pub cls: f64,
    pub drg: f64,
    pub dkt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub learning_rate: f64,
    pub steps: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            steps: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    /// Total loss before each step, then after the last one.
    pub loss_trace: Vec<f64>,
    pub final_loss: HeadLoss,
    /// Fraction of code bits where sign(output) disagrees with the target.
    pub bit_error_rate: f64,
}

impl HeadBatch<'_> {
    fn validate(&self, head: &HeadWeights) -> Result<()> {
        let n = self.labels.len();
        let (d, c, k) = (head.cls_w.rows(), head.num_classes(), head.hash_bits());
        if head.hash_w.rows() != c {
            return Err(shape_err("head_gradients", format!("hash head with {c} inputs"), format!("{}", head.hash_w.rows())));
        }
        let check = |name: &'static str, m: &Matrix, cols: usize| {
            if m.shape() != (n, cols) {
                Err(shape_err(name, format!("{n}x{cols}"), format!("{}x{}", m.rows(), m.cols())))
            } else {
                Ok(())
            }
        };
        check("features", self.features, d)?;
        check("targets", self.targets, k)?;
        if let Some(m) = self.masked_features {
            check("masked_features", m, d)?;
        }
        if let Some(t) = self.teacher {
            check("teacher", t, k)?;
        }
        if let Some(&bad) = self.labels.iter().find(|&&y| y >= c) {
            return Err(EetError::OutOfBounds {
                what: "label",
                index: bad,
                bound: c,
            });
        }
        if n == 0 {
            return Err(EetError::Precondition("empty batch".into()));
        }
        Ok(())
    }
}

struct Forward {
    logits: Matrix,
    hash: Matrix,
    masked_logits: Option<Matrix>,
}

fn forward(head: &HeadWeights, batch: &HeadBatch<'_>) -> Result<Forward> {
    let mut logits = batch.features.matmul(&head.cls_w)?;
    logits.add_row_vector(&head.cls_b)?;
    let mut hash = logits.matmul(&head.hash_w)?;
    hash.add_row_vector(&head.hash_b)?;
    let masked_logits = match batch.masked_features {
        Some(m) => {
            let mut l = m.matmul(&head.cls_w)?;
            l.add_row_vector(&head.cls_b)?;
            Some(l)
        }
        None => None,
    };
    Ok(Forward {
        logits,
        hash,
        masked_logits,
    })
}

/// Mean cross-entropy and its gradient w.r.t. the logits (already divided
/// by the batch size).
fn ce_with_grad(logits: &Matrix, labels: &[usize]) -> (f64, Matrix) {
    let n = labels.len() as f64;
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        let lse = log_sum_exp(row);
        loss += lse - row[y];
        let g = grad.row_mut(i);
        for (gj, &l) in g.iter_mut().zip(row) {
            *gj = (l - lse).exp() / n;
        }
        g[y] -= 1.0 / n;
    }
    (loss / n, grad)
}

fn evaluate(head: &HeadWeights, batch: &HeadBatch<'_>, w: LossWeights, want_grad: bool) -> Result<(HeadLoss, Option<HeadWeights>)> {
    batch.validate(head)?;
    let f = forward(head, batch)?;
    let n = batch.labels.len();
    let k = head.hash_bits();
    let nk = (n * k) as f64;

    // L_hash = mean over all n·k entries
    let diff = f.hash.sub(batch.targets)?;
    let hash = diff.frobenius_norm_sq() / nk;
    let mut d_hash = diff.scale(2.0 / nk);

    let (cls, mut d_logits) = ce_with_grad(&f.logits, batch.labels);
    for g in d_logits.as_mut_slice() {
        *g *= w.beta;
    }

    let mut dkt = 0.0;
    if let Some(t) = batch.teacher {
        for i in 0..n {
            let (h, tv) = (f.hash.row(i), t.row(i));
            let (nh, nt) = (l2_norm(h), l2_norm(tv));
            if nh == 0.0 || nt == 0.0 {
                return Err(EetError::Degenerate(format!("zero hash vector at item {i}")));
            }
            let dot: f64 = h.iter().zip(tv).map(|(a, b)| a * b).sum();
            let cos = dot / (nh * nt);
            dkt += 1.0 - cos;
            let g = d_hash.row_mut(i);
            for j in 0..k {
                // d(1 − cos)/dh = −(t/(‖h‖‖t‖) − cos·h/‖h‖²)
                g[j] -= w.sigma / n as f64 * (tv[j] / (nh * nt) - cos * h[j] / (nh * nh));
            }
        }
        dkt /= n as f64;
    }

    let mut drg = 0.0;
    let mut d_masked = None;
    if let Some(ml) = &f.masked_logits {
        let (l, mut g) = ce_with_grad(ml, batch.labels);
        drg = l;
        for v in g.as_mut_slice() {
            *v *= w.beta;
        }
        d_masked = Some(g);
    }

    let loss = HeadLoss {
        total: super::total_loss(hash, cls, drg, dkt, w),
        hash,
        cls,
        drg,
        dkt,
    };
    if !want_grad {
        return Ok((loss, None));
    }

    let hash_w = f.logits.t_matmul(&d_hash)?;
    let hash_b = d_hash.column_sums();
    d_logits.add_assign(&d_hash.matmul_t(&head.hash_w)?)?;
    let mut cls_w = batch.features.t_matmul(&d_logits)?;
    let mut cls_b = d_logits.column_sums();
    if let (Some(g), Some(mf)) = (d_masked, batch.masked_features) {
        cls_w.add_assign(&mf.t_matmul(&g)?)?;
        for (b, s) in cls_b.iter_mut().zip(g.column_sums()) {
            *b += s;
        }
    }
    Ok((
        loss,
        Some(HeadWeights {
            cls_w,
            cls_b,
            hash_w,
            hash_b,
        }),
    ))
}

pub fn head_loss(head: &HeadWeights, batch: &HeadBatch<'_>, w: LossWeights) -> Result<HeadLoss> {
    Ok(evaluate(head, batch, w, false)?.0)
}

/// Loss terms and the gradient of the total w.r.t. every head tensor.
pub fn head_gradients(head: &HeadWeights, batch: &HeadBatch<'_>, w: LossWeights) -> Result<(HeadLoss, HeadWeights)> {
    let (loss, grad) = evaluate(head, batch, w, true)?;
    Ok((loss, grad.expect("gradient requested")))
}

/// Plain full-batch gradient descent on the head tensors.
pub fn fit_heads(head: &mut HeadWeights, batch: &HeadBatch<'_>, w: LossWeights, opts: FitOptions) -> Result<FitReport> {
    let mut trace = Vec::with_capacity(opts.steps + 1);
    for _ in 0..opts.steps {
        let (loss, g) = head_gradients(head, batch, w)?;
        trace.push(loss.total);
        step(&mut head.cls_w, &g.cls_w, opts.learning_rate);
        step_vec(&mut head.cls_b, &g.cls_b, opts.learning_rate);
        step(&mut head.hash_w, &g.hash_w, opts.learning_rate);
        step_vec(&mut head.hash_b, &g.hash_b, opts.learning_rate);
        if !loss.total.is_finite() {
            return Err(EetError::Numeric("head fitting diverged".into()));
        }
    }
    let final_loss = head_loss(head, batch, w)?;
    trace.push(final_loss.total);

    let out = forward(head, batch)?;
    let wrong = out
        .hash
        .as_slice()
        .iter()
        .zip(batch.targets.as_slice())
        .filter(|(h, b)| (**h > 0.0) != (**b > 0.0))
        .count();
    Ok(FitReport {
        loss_trace: trace,
        final_loss,
        bit_error_rate: wrong as f64 / batch.targets.as_slice().len() as f64,
    })
}

fn step(p: &mut Matrix, g: &Matrix, lr: f64) {
    for (x, d) in p.as_mut_slice().iter_mut().zip(g.as_slice()) {
        *x -= lr * d;
    }
}

fn step_vec(p: &mut [f64], g: &[f64], lr: f64) {
    for (x, d) in p.iter_mut().zip(g) {
        *x -= lr * d;
    }
}
