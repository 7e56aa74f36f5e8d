//! Alternating closed-form optimization of proxy binary codes.
//!
//! Minimizes `‖Y − PV‖²_F + α‖B − RV‖²_F` over the class projection `P`,
//! relaxed codes `V`, orthogonal rotation `R` and binary codes `B`, one
//! block at a time. Each block update is an exact minimizer given the
//! others, so the objective never increases.

use crate::error::{shape_err, EetError, Result};
use crate::linalg::{solve_spd, svd, Matrix};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct CodeProblem {
    /// C × n one-hot label matrix.
    pub y: Matrix,
    pub k: usize,
    pub alpha: f64,
    pub max_iters: usize,
    /// Relative stopping tolerance on the objective change.
    pub tol: f64,
}

impl CodeProblem {
    pub fn new(y: Matrix, k: usize, alpha: f64) -> Result<Self> {
        if k == 0 {
            return Err(EetError::Precondition("code length must be positive".into()));
        }
        if !(alpha > 0.0) {
            return Err(EetError::Precondition(format!("alpha must be positive, got {alpha}")));
        }
        for j in 0..y.cols() {
            let col = y.col(j);
            let ones = col.iter().filter(|&&v| v == 1.0).count();
            let zeros = col.iter().filter(|&&v| v == 0.0).count();
            if ones != 1 || ones + zeros != col.len() {
                return Err(EetError::Precondition(format!("label column {j} is not one-hot")));
            }
        }
        Ok(Self {
            y,
            k,
            alpha,
            max_iters: 50,
            tol: 1e-7,
        })
    }

    pub fn from_labels(labels: &[usize], num_classes: usize, k: usize, alpha: f64) -> Result<Self> {
        let mut y = Matrix::zeros(num_classes, labels.len());
        for (j, &l) in labels.iter().enumerate() {
            if l >= num_classes {
                return Err(EetError::OutOfBounds {
                    what: "label",
                    index: l,
                    bound: num_classes,
                });
            }
            y[(l, j)] = 1.0;
        }
        Self::new(y, k, alpha)
    }

    pub fn num_classes(&self) -> usize {
        self.y.rows()
    }

    pub fn n(&self) -> usize {
        self.y.cols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodeState {
    /// C × k.
    pub p: Matrix,
    /// k × n.
    pub v: Matrix,
    /// k × k, orthogonal.
    pub r: Matrix,
    /// k × n over {−1, +1}.
    pub b: Matrix,
    /// Objective after initialization and after every full iteration.
    pub objective_trace: Vec<f64>,
    /// Objective after initialization and after each block update
    /// (P, V, R, B per iteration).
    pub substep_trace: Vec<f64>,
}

/// Eq. sign: non-positive values map to −1.
#[inline]
pub fn sign_code(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        -1.0
    }
}

pub fn objective(state: &CodeState, problem: &CodeProblem) -> Result<f64> {
    let fit = problem.y.sub(&state.p.matmul(&state.v)?)?.frobenius_norm_sq();
    let quant = state.b.sub(&state.r.matmul(&state.v)?)?.frobenius_norm_sq();
    Ok(fit + problem.alpha * quant)
}

/// Least-squares `P = Y V⁺`, the minimum-norm minimizer of ‖Y − PV‖.
///
/// The pseudo-inverse comes from the SVD of V, dropping singular values
/// below `max(k, n) · ε · σ_max`. V loses rank whenever k exceeds the class
/// count, so the normal equations are not used.
pub fn update_projection(state: &CodeState, problem: &CodeProblem) -> Result<Matrix> {
    let v = &state.v;
    if v.cols() != problem.n() {
        return Err(shape_err("update_projection", format!("V with {} columns", problem.n()), format!("{}", v.cols())));
    }
    let f = svd(v)?;
    let cutoff = f.sigma.first().copied().unwrap_or(0.0) * v.rows().max(v.cols()) as f64 * f64::EPSILON;
    // Y Wᵀ Σ⁺ Uᵀ with V = U Σ W
    let mut yw = problem.y.matmul_t(&f.vt)?;
    for i in 0..yw.rows() {
        for (x, &sv) in yw.row_mut(i).iter_mut().zip(&f.sigma) {
            *x = if sv > cutoff { *x / sv } else { 0.0 };
        }
    }
    yw.matmul_t(&f.u)
}

/// `V = (PᵀP + αRᵀR)⁻¹ (PᵀY + αRᵀB)`.
pub fn update_codes_relaxed(state: &CodeState, problem: &CodeProblem) -> Result<Matrix> {
    let (p, r, a) = (&state.p, &state.r, problem.alpha);
    let lhs = p.t_matmul(p)?.add(&r.t_matmul(r)?.scale(a))?;
    // symmetrize against rounding in the two products
    let lhs = lhs.add(&lhs.transpose())?.scale(0.5);
    let rhs = p.t_matmul(&problem.y)?.add(&r.t_matmul(&state.b)?.scale(a))?;
    solve_spd(&lhs, &rhs)
}

/// Orthogonal Procrustes: with `BVᵀ = SΩS̃ᵀ`, `R = SS̃ᵀ` maximizes
/// `Tr(RᵀBVᵀ)`.
pub fn update_rotation(state: &CodeState) -> Result<Matrix> {
    let m = state.b.matmul_t(&state.v)?;
    let s = svd(&m)?;
    s.u.matmul(&s.vt)
}

/// `B = sign(RV)`, maximizing `Tr(Bᵀ RV)` over ±1 matrices.
pub fn update_binary(state: &CodeState) -> Result<Matrix> {
    Ok(state.r.matmul(&state.v)?.map(sign_code))
}

/// Seeded start: one N(0, 1) prototype per class, each item's relaxed code
/// set to its class prototype; R = I, B = sign(V), then one P update.
///
/// Items of a class start identical, and every block update preserves
/// that, so the final codes are class-consistent.
pub fn initial_state(problem: &CodeProblem, seed: u64) -> Result<CodeState> {
    let mut rng = Rng::new(seed);
    let protos = Matrix::from_fn(problem.k, problem.num_classes(), |_, _| rng.normal());
    initial_state_from(problem, protos.matmul(&problem.y)?)
}

/// Seeded start with independent N(0, 1) relaxed codes per item.
pub fn initial_state_iid(problem: &CodeProblem, seed: u64) -> Result<CodeState> {
    let mut rng = Rng::new(seed);
    let v = Matrix::from_fn(problem.k, problem.n(), |_, _| rng.normal());
    initial_state_from(problem, v)
}

/// Start from caller-provided relaxed codes.
pub fn initial_state_from(problem: &CodeProblem, v: Matrix) -> Result<CodeState> {
    if v.shape() != (problem.k, problem.n()) {
        return Err(shape_err(
            "initial_state_from",
            format!("{}x{}", problem.k, problem.n()),
            format!("{}x{}", v.rows(), v.cols()),
        ));
    }
    let b = v.map(sign_code);
    let mut state = CodeState {
        p: Matrix::zeros(problem.num_classes(), problem.k),
        v,
        r: Matrix::identity(problem.k),
        b,
        objective_trace: Vec::new(),
        substep_trace: Vec::new(),
    };
    state.p = update_projection(&state, problem)?;
    let obj = objective(&state, problem)?;
    state.objective_trace.push(obj);
    state.substep_trace.push(obj);
    Ok(state)
}

/// One P → V → R → B sweep, recording the objective after each block.
pub fn iterate(state: &mut CodeState, problem: &CodeProblem) -> Result<f64> {
    state.p = update_projection(state, problem)?;
    state.substep_trace.push(objective(state, problem)?);
    state.v = update_codes_relaxed(state, problem)?;
    state.substep_trace.push(objective(state, problem)?);
    state.r = update_rotation(state)?;
    state.substep_trace.push(objective(state, problem)?);
    state.b = update_binary(state)?;
    let obj = objective(state, problem)?;
    state.substep_trace.push(obj);
    state.objective_trace.push(obj);
    Ok(obj)
}

pub fn solve(problem: &CodeProblem, seed: u64) -> Result<CodeState> {
    solve_from(problem, initial_state(problem, seed)?)
}

/// Iterates until `|Δobjective| < tol·(1 + objective)` or `max_iters`.
pub fn solve_from(problem: &CodeProblem, mut state: CodeState) -> Result<CodeState> {
    let mut prev = *state.objective_trace.last().expect("initialized state has an objective");
    for _ in 0..problem.max_iters {
        let obj = iterate(&mut state, problem)?;
        let done = (prev - obj).abs() < problem.tol * (1.0 + obj);
        prev = obj;
        if done {
            break;
        }
    }
    Ok(state)
}

/// Mean squared error over every entry.
pub fn hash_fit_loss(h_hat: &Matrix, b: &Matrix) -> Result<f64> {
    let diff = h_hat.sub(b)?;
    let count = diff.as_slice().len();
    if count == 0 {
        return Ok(0.0);
    }
    Ok(diff.frobenius_norm_sq() / count as f64)
}
