//! Optimization oracles for attention weights on the simplex.
//!
//! The restricted least-squares risk of a convex combination of tokens
//! reduces to `min_{α ∈ Δ} −2bᵀα + αᵀGα` with `G` the token Gram matrix.
//! This module solves that QP by projected gradient, solves its
//! entropy-regularized version by a damped softmax fixed point, checks KKT
//! conditions, and tracks the regularized optimum as the temperature vanishes.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{CeresError, Result};
use crate::numeric::{check_dims, log_sum_exp, simplex_project, softmax, stable_sum, Matrix, SimplexWeights, Vector};
use crate::rng;

/// Eigenvalues at or above this floor are accepted (and treated as zero
/// when negative).
pub const PSD_FLOOR: f64 = -1e-10;
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Restricted curvature below this marks a non-unique QP optimum.
pub const DEGENERACY_TOL: f64 = 1e-8;

/// `min_{α ∈ Δ} −2bᵀα + αᵀGα`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "QpDoc", into = "QpDoc")]
pub struct QpProblem {
    g: Matrix,
    b: Vector,
}

#[derive(Serialize, Deserialize)]
struct QpDoc {
    g: Vec<Vec<f64>>,
    b: Vec<f64>,
}

impl TryFrom<QpDoc> for QpProblem {
    type Error = CeresError;
    fn try_from(doc: QpDoc) -> Result<Self> {
        QpProblem::new(Matrix::from_rows(&doc.g)?, Vector::new(doc.b)?)
    }
}

impl From<QpProblem> for QpDoc {
    fn from(p: QpProblem) -> Self {
        let n = p.g.rows();
        QpDoc {
            g: (0..n).map(|i| p.g.row(i).to_vec()).collect(),
            b: p.b.into_inner(),
        }
    }
}

fn eigenvalues(g: &Matrix) -> Vec<f64> {
    let n = g.rows();
    let m = DMatrix::from_row_slice(n, n, g.entries());
    SymmetricEigen::new(m).eigenvalues.iter().copied().collect()
}

impl QpProblem {
    pub fn new(g: Matrix, b: Vector) -> Result<Self> {
        if !g.is_square() {
            return Err(CeresError::InvalidProblem("G must be square".into()));
        }
        check_dims(g.rows(), b.dim())?;
        let asym = g.max_asymmetry();
        if asym > SYMMETRY_TOL {
            return Err(CeresError::InvalidProblem(format!("G asymmetric by {asym:e}")));
        }
        let min_eig = eigenvalues(&g).into_iter().fold(f64::INFINITY, f64::min);
        if min_eig < PSD_FLOOR {
            return Err(CeresError::InvalidProblem(format!(
                "G not positive semidefinite (min eigenvalue {min_eig:e})"
            )));
        }
        Ok(QpProblem { g, b })
    }

    /// Problem induced by value tokens and a target mean:
    /// `G_ij = <m_i, m_j>`, `b_j = <μ, m_j>`.
    pub fn from_tokens(tokens: &[Vector], mu: &Vector) -> Result<Self> {
        let g = Matrix::gram(tokens)?;
        let b = tokens.iter().map(|t| mu.dot(t)).collect::<Result<Vec<_>>>()?;
        QpProblem::new(g, Vector::new(b)?)
    }

    pub fn g(&self) -> &Matrix {
        &self.g
    }

    pub fn b(&self) -> &Vector {
        &self.b
    }

    pub fn dim(&self) -> usize {
        self.b.dim()
    }

    /// Token norms `γ_j = G_jj`.
    pub fn token_norms(&self) -> Vec<f64> {
        (0..self.dim()).map(|j| self.g.get(j, j)).collect()
    }

    pub fn gradient(&self, alpha: &[f64]) -> Vec<f64> {
        let ga = self.g.mul_slice(alpha).expect("dims checked");
        ga.iter().zip(self.b.as_slice()).map(|(g, b)| 2.0 * g - 2.0 * b).collect()
    }

    pub fn objective(&self, alpha: &[f64]) -> f64 {
        let ga = self.g.mul_slice(alpha).expect("dims checked");
        let quad = stable_sum(alpha.iter().zip(&ga).map(|(a, g)| a * g));
        let lin = stable_sum(alpha.iter().zip(self.b.as_slice()).map(|(a, b)| a * b));
        quad - 2.0 * lin
    }

    /// `−2bᵀα + αᵀGα − τ H(α)` with `H(α) = −Σ α log α`.
    pub fn entropic_objective(&self, alpha: &[f64], tau: f64) -> f64 {
        self.objective(alpha) - tau * entropy(alpha)
    }

    /// Largest eigenvalue of `G` by power iteration.
    pub fn lambda_max(&self) -> f64 {
        power_iteration(&self.g, 100, 1e-10)
    }
}

pub fn entropy(w: &[f64]) -> f64 {
    -stable_sum(w.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()))
}

fn power_iteration(g: &Matrix, max_iter: usize, tol: f64) -> f64 {
    let n = g.rows();
    // generic start so no eigenvector is orthogonal to it in practice
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 / (i as f64 + 1.0) + 0.1).collect();
    let norm = |x: &[f64]| x.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = norm(&v);
    v.iter_mut().for_each(|x| *x /= nv);
    let mut lambda = 0.0;
    for _ in 0..max_iter {
        let w = g.mul_slice(&v).expect("square");
        let next = v.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
        let nw = norm(&w);
        if nw == 0.0 {
            return 0.0;
        }
        v = w.into_iter().map(|x| x / nw).collect();
        let done = (next - lambda).abs() <= tol * next.abs().max(1.0);
        lambda = next;
        if done {
            break;
        }
    }
    lambda.max(0.0)
}

/// First-order optimality diagnostics at a simplex point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KktReport {
    /// `max_{j: α_j > 0} |∇_j + λ|` plus any negative multiplier `η_j`.
    pub stationarity: f64,
    /// `max_j α_j |∇_j + λ|`.
    pub complementary_slackness: f64,
    /// `max(|Σα − 1|, max_j −α_j)`.
    pub primal_feasibility: f64,
    pub lambda: f64,
    pub eta: Vec<f64>,
}

/// KKT residuals with `∇ = 2Gα − 2b`. `λ` is estimated as `−mean ∇_j` over
/// the support; `η_j = ∇_j + λ` off the support.
pub fn kkt_residual(problem: &QpProblem, alpha: &SimplexWeights) -> KktReport {
    let a = alpha.as_slice();
    let grad = problem.gradient(a);
    let support: Vec<usize> = (0..a.len()).filter(|&j| a[j] > 0.0).collect();
    let lambda = -stable_sum(support.iter().map(|&j| grad[j])) / support.len() as f64;
    let mut stationarity = 0.0_f64;
    let mut cs = 0.0_f64;
    let mut eta = vec![0.0; a.len()];
    for j in 0..a.len() {
        let r = grad[j] + lambda;
        if a[j] > 0.0 {
            stationarity = stationarity.max(r.abs());
        } else {
            eta[j] = r;
            stationarity = stationarity.max((-r).max(0.0));
        }
        cs = cs.max(a[j] * r.abs());
    }
    let sum = stable_sum(a.iter().copied());
    let neg = a.iter().fold(0.0_f64, |m, &x| m.max(-x));
    KktReport {
        stationarity,
        complementary_slackness: cs,
        primal_feasibility: (sum - 1.0).abs().max(neg),
        lambda,
        eta,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QpSolution {
    pub alpha: SimplexWeights,
    pub kkt: KktReport,
    pub iterations: usize,
}

/// Projected gradient with step `1/(2 λ_max(G) + 1e-12)` from the uniform
/// point, stopping when the KKT stationarity residual is at most `tol`.
pub fn solve_simplex_qp(problem: &QpProblem, tol: f64, max_iter: usize) -> Result<QpSolution> {
    if !(tol > 0.0) {
        return Err(CeresError::InvalidInput("tol must be positive".into()));
    }
    let step = 1.0 / (2.0 * problem.lambda_max() + 1e-12);
    let mut alpha = SimplexWeights::uniform(problem.dim());
    let mut kkt = kkt_residual(problem, &alpha);
    for it in 0..max_iter {
        if kkt.stationarity <= tol {
            return Ok(QpSolution { alpha, kkt, iterations: it });
        }
        let grad = problem.gradient(alpha.as_slice());
        let moved: Vec<f64> = alpha
            .as_slice()
            .iter()
            .zip(&grad)
            .map(|(a, g)| a - step * g)
            .collect();
        alpha = simplex_project(&moved)?;
        kkt = kkt_residual(problem, &alpha);
    }
    if kkt.stationarity <= tol {
        return Ok(QpSolution { alpha, kkt, iterations: max_iter });
    }
    Err(CeresError::MaxIterations {
        iterations: max_iter,
        residual: kkt.stationarity,
        best: alpha.into_inner(),
    })
}

/// Does `alpha` attain an objective no larger than every one of `n_points`
/// flat-Dirichlet simplex points?
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Certificate {
    pub objective: f64,
    pub best_random: f64,
    pub n_points: usize,
    pub passed: bool,
}

pub fn random_point_certificate(problem: &QpProblem, alpha: &[f64], n_points: usize, seed: u64) -> Certificate {
    random_point_certificate_with(|a| problem.objective(a), problem.dim(), alpha, n_points, seed)
}

pub fn random_point_certificate_with(
    objective: impl Fn(&[f64]) -> f64,
    dim: usize,
    alpha: &[f64],
    n_points: usize,
    seed: u64,
) -> Certificate {
    let mut s = rng::stream(seed, 0);
    let own = objective(alpha);
    let best_random = (0..n_points)
        .map(|_| objective(&rng::dirichlet_flat(&mut s, dim)))
        .fold(f64::INFINITY, f64::min);
    Certificate {
        objective: own,
        best_random,
        n_points,
        passed: own <= best_random,
    }
}

/// Damping actually used by [`solve_entropic_qp`]: 0.5, capped at
/// `1/(1 + 2λ_max/τ)` so the linearized iteration stays contractive.
pub fn entropic_damping(problem: &QpProblem, tau: f64) -> f64 {
    0.5_f64.min(1.0 / (1.0 + 2.0 * problem.lambda_max() / tau))
}

fn fixed_point_map(problem: &QpProblem, alpha: &[f64], tau: f64) -> Result<SimplexWeights> {
    let ga = problem.g.mul_slice(alpha)?;
    let scores: Vec<f64> = problem
        .b
        .as_slice()
        .iter()
        .zip(&ga)
        .map(|(b, g)| 2.0 * b - 2.0 * g)
        .collect();
    softmax(&scores, tau)
}

/// `‖α − softmax((2b − 2Gα)/τ)‖∞`.
pub fn fixed_point_residual(problem: &QpProblem, alpha: &SimplexWeights, tau: f64) -> Result<f64> {
    Ok(fixed_point_map(problem, alpha.as_slice(), tau)?.linf_distance(alpha))
}

/// Entropy-regularized optimum: damped iteration
/// `α ← (1 − η)α + η softmax((2b − 2Gα)/τ)` until the fixed-point residual
/// is at most `tol`.
pub fn solve_entropic_qp(problem: &QpProblem, tau: f64, tol: f64, max_iter: usize) -> Result<SimplexWeights> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(CeresError::InvalidInput(format!("tau must be positive, got {tau}")));
    }
    let eta = entropic_damping(problem, tau);
    let mut alpha = softmax(&problem.b.scale(2.0).into_inner(), tau)?.into_inner();
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        let mapped = fixed_point_map(problem, &alpha, tau)?;
        residual = mapped
            .as_slice()
            .iter()
            .zip(&alpha)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if residual <= tol {
            return SimplexWeights::new(alpha);
        }
        for (a, m) in alpha.iter_mut().zip(mapped.as_slice()) {
            *a = (1.0 - eta) * *a + eta * m;
        }
    }
    Err(CeresError::MaxIterations {
        iterations: max_iter,
        residual,
        best: alpha,
    })
}

/// Entropic mirror ascent on `⟨w, s⟩ + λ H(w)` from the uniform point, with
/// step `0.5/λ`. Works in log-weights; stops when the log-weights move by
/// less than `1e-15` or after `max_iter` steps.
pub fn mirror_descent_entropic_linear(scores: &[f64], lambda: f64, max_iter: usize) -> Result<SimplexWeights> {
    if !(lambda > 0.0) {
        return Err(CeresError::InvalidInput(format!("lambda must be positive, got {lambda}")));
    }
    let n = scores.len();
    if n == 0 {
        return Err(CeresError::InvalidInput("empty scores".into()));
    }
    let step = 0.5 / lambda;
    let mut logw = vec![-(n as f64).ln(); n];
    for _ in 0..max_iter {
        // gradient of the objective: s − λ(log w + 1)
        let mut next: Vec<f64> = logw
            .iter()
            .zip(scores)
            .map(|(lw, s)| lw + step * (s - lambda * (lw + 1.0)))
            .collect();
        let z = log_sum_exp(&next)?;
        next.iter_mut().for_each(|x| *x -= z);
        let moved = next
            .iter()
            .zip(&logw)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        logw = next;
        if moved < 1e-15 {
            break;
        }
    }
    let w: Vec<f64> = logw.iter().map(|x| x.exp()).collect();
    let s = stable_sum(w.iter().copied());
    SimplexWeights::new(w.into_iter().map(|x| x / s).collect())
}

/// Agreement tolerance between softmax and the mirror-ascent optimizer.
pub const ARGMAX_AGREEMENT_TOL: f64 = 1e-8;

/// `argmax_{w ∈ Δ} ⟨w, s⟩ + λ H(w) = softmax(s/λ)`, cross-checked against
/// [`mirror_descent_entropic_linear`].
pub fn entropic_linear_argmax(scores: &[f64], lambda: f64) -> Result<SimplexWeights> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(CeresError::InvalidInput(format!("lambda must be positive, got {lambda}")));
    }
    let w = softmax(scores, lambda)?;
    let md = mirror_descent_entropic_linear(scores, lambda, 500)?;
    let gap = w.linf_distance(&md);
    if gap > ARGMAX_AGREEMENT_TOL {
        return Err(CeresError::VerificationFailed(format!(
            "softmax and mirror ascent differ by {gap:e}"
        )));
    }
    Ok(w)
}

/// Smallest curvature of `G` on the tangent space of the face spanned by
/// the support of `alpha`; `None` for a vertex.
pub fn face_curvature(problem: &QpProblem, alpha: &SimplexWeights, support_tol: f64) -> Option<f64> {
    let support: Vec<usize> = (0..alpha.len()).filter(|&j| alpha[j] > support_tol).collect();
    let k = support.len();
    if k < 2 {
        return None;
    }
    // Helmert basis of {v : Σ v = 0} in R^k
    let mut basis = DMatrix::<f64>::zeros(k, k - 1);
    for c in 0..k - 1 {
        let m = (c + 1) as f64;
        let scale = 1.0 / (m * (m + 1.0)).sqrt();
        for r in 0..=c {
            basis[(r, c)] = scale;
        }
        basis[(c + 1, c)] = -m * scale;
    }
    let gs = DMatrix::from_fn(k, k, |i, j| problem.g.get(support[i], support[j]));
    let restricted = basis.transpose() * gs * &basis;
    Some(
        SymmetricEigen::new(restricted)
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub tau: f64,
    pub distance: f64,
    pub entropic_objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GammaSweep {
    pub rows: Vec<SweepRow>,
    /// Limit point distances are measured against.
    pub reference: SimplexWeights,
    /// The QP optimum is not unique; `reference` is then the entropic
    /// solution at a temperature 100× below the last grid value.
    pub degenerate: bool,
    /// Distances nonincreasing along the grid within `slack`.
    pub distance_monotone: bool,
    /// Optimal entropic objective nondecreasing as τ decreases, within `slack`.
    pub objective_monotone: bool,
}

pub const SWEEP_SLACK: f64 = 1e-9;
/// Fixed-point tolerance of the entropic solves inside the sweep.
pub const SWEEP_SOLVER_TOL: f64 = 1e-11;

/// Track `‖α*_τ − α*_0‖∞` over a descending temperature grid.
pub fn gamma_convergence_sweep(problem: &QpProblem, tau_grid: &[f64]) -> Result<GammaSweep> {
    if tau_grid.is_empty() || tau_grid.iter().any(|t| !(*t > 0.0)) {
        return Err(CeresError::InvalidInput("tau grid must be nonempty and positive".into()));
    }
    if tau_grid.windows(2).any(|w| w[1] >= w[0]) {
        return Err(CeresError::InvalidInput("tau grid must be strictly descending".into()));
    }
    let qp = solve_simplex_qp(problem, 1e-11, 2_000_000)?;
    let curvature = face_curvature(problem, &qp.alpha, 1e-12);
    let degenerate = curvature.is_some_and(|c| c < DEGENERACY_TOL);
    let reference = if degenerate {
        let tau_ref = tau_grid[tau_grid.len() - 1] / 100.0;
        solve_entropic_qp(problem, tau_ref, SWEEP_SOLVER_TOL, 50_000_000)?
    } else {
        qp.alpha
    };
    let mut rows = Vec::with_capacity(tau_grid.len());
    for &tau in tau_grid {
        let a = solve_entropic_qp(problem, tau, SWEEP_SOLVER_TOL, 50_000_000)?;
        rows.push(SweepRow {
            tau,
            distance: a.linf_distance(&reference),
            entropic_objective: problem.entropic_objective(a.as_slice(), tau),
        });
    }
    let distance_monotone = rows.windows(2).all(|w| w[1].distance <= w[0].distance + SWEEP_SLACK);
    let objective_monotone = rows
        .windows(2)
        .all(|w| w[1].entropic_objective >= w[0].entropic_objective - SWEEP_SLACK);
    Ok(GammaSweep {
        rows,
        reference,
        degenerate,
        distance_monotone,
        objective_monotone,
    })
}

/// Gap between the entropic optimum for `G = γI` and the linear-score
/// softmax `softmax(2b/τ)`, with the self-interaction bound
/// `2γ/τ · (max α − min α)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IsotropicSlack {
    pub gamma: f64,
    pub tau: f64,
    pub gap: f64,
    pub bound: f64,
}

pub fn isotropic_slack(b: &Vector, gamma: f64, tau: f64) -> Result<IsotropicSlack> {
    let problem = QpProblem::new(Matrix::scaled_identity(b.dim(), gamma), b.clone())?;
    let alpha = solve_entropic_qp(&problem, tau, 1e-14, 10_000_000)?;
    let linear = softmax(&b.scale(2.0).into_inner(), tau)?;
    let spread = alpha.as_slice().iter().copied().fold(f64::NEG_INFINITY, f64::max)
        - alpha.as_slice().iter().copied().fold(f64::INFINITY, f64::min);
    Ok(IsotropicSlack {
        gamma,
        tau,
        gap: alpha.linf_distance(&linear),
        bound: 2.0 * gamma / tau * spread,
    })
}

/// Token count of the isotropic test family.
pub const ISOTROPIC_FAMILY_DIM: usize = 8;

/// Alignments `b_j ~ U(−0.25, 0.25)` for [`ISOTROPIC_FAMILY_DIM`] tokens,
/// paired with `τ = 1`: nearly orthogonal tokens whose alignment with the
/// target differs only mildly.
pub fn isotropic_family_instance(s: &mut rng::Stream) -> Vector {
    use rand::Rng;
    Vector::new((0..ISOTROPIC_FAMILY_DIM).map(|_| s.random_range(-0.25..0.25)).collect()).expect("finite")
}

/// Random PSD problem `G = AᵀA/k + ridge·I` with `b ~ N(0, 1)`.
pub fn random_problem(dim: usize, ridge: f64, s: &mut rng::Stream) -> QpProblem {
    let k = dim + 2;
    let a: Vec<f64> = (0..k * dim).map(|_| rng::standard_normal(s)).collect();
    let mut g = vec![0.0; dim * dim];
    for i in 0..dim {
        for j in 0..=i {
            let v = (0..k).map(|r| a[r * dim + i] * a[r * dim + j]).sum::<f64>() / k as f64
                + if i == j { ridge } else { 0.0 };
            g[i * dim + j] = v;
            g[j * dim + i] = v;
        }
    }
    let b: Vec<f64> = (0..dim).map(|_| rng::standard_normal(s)).collect();
    QpProblem::new(
        Matrix::new(dim, dim, g).expect("finite"),
        Vector::new(b).expect("finite"),
    )
    .expect("PSD by construction")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn problem(g: Vec<Vec<f64>>, b: Vec<f64>) -> QpProblem {
        QpProblem::new(Matrix::from_rows(&g).unwrap(), Vector::new(b).unwrap()).unwrap()
    }

    #[test]
    fn rejects_non_psd_and_asymmetric() {
        let g = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert!(matches!(
            QpProblem::new(g, Vector::new(vec![0.0, 0.0]).unwrap()),
            Err(CeresError::InvalidProblem(_))
        ));
        let g = Matrix::from_rows(&[vec![1.0, 0.1], vec![0.0, 1.0]]).unwrap();
        assert!(QpProblem::new(g, Vector::new(vec![0.0, 0.0]).unwrap()).is_err());
        // tiny negative eigenvalue above the floor is accepted
        let g = Matrix::from_rows(&[vec![-1e-12, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!(QpProblem::new(g, Vector::new(vec![0.0, 0.0]).unwrap()).is_ok());
    }

    #[test]
    fn feasible_unconstrained_optimum() {
        let p = problem(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![1.0, 0.0]);
        let s = solve_simplex_qp(&p, 1e-12, 1000).unwrap();
        assert!(s.alpha.linf_distance(&SimplexWeights::vertex(2, 0)) <= 1e-12);
        let k = kkt_residual(&p, &SimplexWeights::vertex(2, 0));
        assert!(k.stationarity <= 1e-12 && k.complementary_slackness <= 1e-12 && k.primal_feasibility <= 1e-12);
    }

    #[test]
    fn symmetric_problem_gives_uniform() {
        let p = problem(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.7, 0.7]);
        let s = solve_simplex_qp(&p, 1e-12, 1000).unwrap();
        assert!(s.alpha.linf_distance(&SimplexWeights::uniform(2)) < 1e-15);
    }

    #[test]
    fn uniform_point_not_optimal_for_asymmetric_problem() {
        let p = problem(vec![vec![1.0, 0.0], vec![0.0, 2.0]], vec![1.0, -0.5]);
        let k = kkt_residual(&p, &SimplexWeights::uniform(2));
        assert!(k.stationarity > 0.1);
    }

    #[test]
    fn kkt_reports_negative_multiplier_on_wrong_vertex() {
        let p = problem(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![1.0, 0.0]);
        let k = kkt_residual(&p, &SimplexWeights::vertex(2, 1));
        assert!(k.stationarity > 1.0);
    }

    #[test]
    fn grid_search_oracle_5d() {
        let mut s = rng::stream(21, 0);
        let p = random_problem(5, 0.05, &mut s);
        let sol = solve_simplex_qp(&p, 1e-10, 1_000_000).unwrap();
        // exhaustive grid over Δ⁴ at resolution 1/n
        let n = 200usize;
        let h = 1.0 / n as f64;
        let mut best = f64::INFINITY;
        let mut a = [0.0; 5];
        for i in 0..=n {
            for j in 0..=n - i {
                for k in 0..=n - i - j {
                    for l in 0..=n - i - j - k {
                        let m = n - i - j - k - l;
                        a[0] = i as f64 * h;
                        a[1] = j as f64 * h;
                        a[2] = k as f64 * h;
                        a[3] = l as f64 * h;
                        a[4] = m as f64 * h;
                        let mut obj = 0.0;
                        for r in 0..5 {
                            let mut ga = 0.0;
                            for c in 0..5 {
                                ga += p.g().get(r, c) * a[c];
                            }
                            obj += a[r] * (ga - 2.0 * p.b()[r]);
                        }
                        best = best.min(obj);
                    }
                }
            }
        }
        let own = p.objective(sol.alpha.as_slice());
        assert!(own <= best + 1e-8, "solver {own} grid {best}");
        // the grid optimum is within one cell of the true optimum
        let lip = 2.0 * (p.lambda_max() + p.b().norm2()) * 5f64.sqrt();
        assert!(best - own <= lip * h, "grid {best} solver {own}");
    }

    #[test]
    fn certificate_on_random_problems() {
        for seed in 0..10 {
            let mut s = rng::stream(seed, 1);
            let p = random_problem(6, 0.1, &mut s);
            let sol = solve_simplex_qp(&p, 1e-10, 1_000_000).unwrap();
            let c = random_point_certificate(&p, sol.alpha.as_slice(), 1000, seed);
            assert!(c.passed, "{c:?}");
            assert!(sol.kkt.stationarity <= 1e-10);
        }
    }

    #[test]
    fn entropic_without_coupling_is_softmax() {
        let p = problem(vec![vec![0.0; 3]; 3], vec![0.3, -0.2, 1.1]);
        let a = solve_entropic_qp(&p, 0.7, 1e-15, 100).unwrap();
        let expect = softmax(&[0.6, -0.4, 2.2], 0.7).unwrap();
        assert_eq!(a, expect);
    }

    #[test]
    fn entropic_zero_b_identity_is_uniform() {
        let p = problem(vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]], vec![0.0; 3]);
        let a = solve_entropic_qp(&p, 0.3, 1e-14, 10_000).unwrap();
        assert!(a.linf_distance(&SimplexWeights::uniform(3)) < 1e-15);
    }

    #[test]
    fn entropic_random_problem_certificate() {
        let mut s = rng::stream(5, 2);
        let p = random_problem(4, 0.1, &mut s);
        let tau = 1.0;
        let a = solve_entropic_qp(&p, tau, 1e-12, 1_000_000).unwrap();
        assert!(fixed_point_residual(&p, &a, tau).unwrap() <= 1e-8);
        let c = random_point_certificate_with(|w| p.entropic_objective(w, tau), 4, a.as_slice(), 1000, 17);
        assert!(c.passed, "{c:?}");
    }

    #[test]
    fn entropic_small_tau_converges() {
        let mut s = rng::stream(6, 2);
        let p = random_problem(4, 0.5, &mut s);
        let a = solve_entropic_qp(&p, 0.01, 1e-12, 10_000_000).unwrap();
        assert!(fixed_point_residual(&p, &a, 0.01).unwrap() <= 1e-11);
    }

    #[test]
    fn entropic_linear_argmax_cases() {
        let lam = 0.9;
        let w = entropic_linear_argmax(&[lam * 2f64.ln(), 0.0], lam).unwrap();
        assert!((w[0] - 2.0 / 3.0).abs() < 1e-15);
        let w = entropic_linear_argmax(&[1.5; 4], 0.2).unwrap();
        assert!(w.linf_distance(&SimplexWeights::uniform(4)) < 1e-15);
        assert!(matches!(entropic_linear_argmax(&[1.0], 0.0), Err(CeresError::InvalidInput(_))));
    }

    #[test]
    fn mirror_descent_matches_softmax_random() {
        let mut s = rng::stream(9, 0);
        let scores: Vec<f64> = (0..6).map(|_| rng::standard_normal(&mut s)).collect();
        let md = mirror_descent_entropic_linear(&scores, 0.7, 500).unwrap();
        let sm = softmax(&scores, 0.7).unwrap();
        assert!(md.linf_distance(&sm) <= 1e-8);
    }

    #[test]
    fn sweep_without_coupling_sharpens_to_vertex() {
        let p = problem(vec![vec![0.0; 3]; 3], vec![0.1, 0.4, -0.3]);
        let sweep = gamma_convergence_sweep(&p, &[1.0, 0.3, 0.1, 0.03, 0.01]).unwrap();
        assert!(!sweep.degenerate);
        assert_eq!(sweep.reference.as_slice(), &[0.0, 1.0, 0.0]);
        for w in sweep.rows.windows(2) {
            assert!(w[1].distance < w[0].distance);
        }
    }

    #[test]
    fn sweep_symmetric_problem_is_flat_zero() {
        let p = problem(vec![vec![0.0; 3]; 3], vec![0.5; 3]);
        let sweep = gamma_convergence_sweep(&p, &[1.0, 0.1, 0.01]).unwrap();
        assert!(sweep.degenerate);
        for r in &sweep.rows {
            assert!(r.distance < 1e-15);
        }
    }

    #[test]
    fn sweep_rejects_bad_grid() {
        let p = problem(vec![vec![1.0]], vec![0.0]);
        assert!(gamma_convergence_sweep(&p, &[0.1, 1.0]).is_err());
        assert!(gamma_convergence_sweep(&p, &[]).is_err());
    }

    #[test]
    fn isotropic_slack_shrinks() {
        let b = Vector::new(vec![0.4, -0.3, 0.9, 0.1]).unwrap();
        let mut prev = f64::INFINITY;
        for gamma in [1.0, 0.1, 0.01] {
            let r = isotropic_slack(&b, gamma, 1.0).unwrap();
            assert!(r.gap <= r.bound + 1e-15);
            assert!(r.gap < prev);
            prev = r.gap;
        }
    }

    #[test]
    fn isotropic_family_meets_slack() {
        let mut s = rng::stream(3, 0);
        for _ in 0..10 {
            let b = isotropic_family_instance(&mut s);
            let r = isotropic_slack(&b, 0.01, 1.0).unwrap();
            assert!(r.gap <= 1e-3 && r.gap <= r.bound + 1e-15, "{r:?}");
        }
    }

    #[test]
    fn lambda_max_matches_eigen() {
        let mut s = rng::stream(2, 3);
        for _ in 0..5 {
            let p = random_problem(5, 0.0, &mut s);
            let exact = eigenvalues(p.g()).into_iter().fold(0.0, f64::max);
            assert!((p.lambda_max() - exact).abs() <= 1e-6 * exact.max(1.0));
        }
    }

    #[test]
    fn json_round_trip() {
        let p = problem(vec![vec![2.0, 0.5], vec![0.5, 1.0]], vec![0.25, -1.0]);
        let s = serde_json::to_string(&p).unwrap();
        assert!(s.contains("\"g\""));
        let back: QpProblem = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);
        let bad = r#"{"g": [[1.0, 3.0], [3.0, 1.0]], "b": [0.0, 0.0]}"#;
        assert!(serde_json::from_str::<QpProblem>(bad).is_err());
    }
}
