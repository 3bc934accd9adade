//! Front-door deconfounding of the visual pathway.
//!
//! Token aggregation and cross-attention produce the mediator estimate
//! (depth tokens query the visual tokens), a gated residual fuses it with
//! the frame context, and [`frontdoor_adjust`] evaluates the discrete
//! front-door sum that the estimator approximates.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CeresError, Result};
use crate::numeric::{check_dims, convex_combine, softmax, stable_sum, Matrix, SimplexWeights, Vector};
use crate::rng;
use crate::scm::{Distribution, ScmSpec, Var};

/// Nonempty set of equal-dimension token vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vector>", into = "Vec<Vector>")]
pub struct TokenSet(Vec<Vector>);

impl TokenSet {
    pub fn new(tokens: Vec<Vector>) -> Result<Self> {
        let first = tokens
            .first()
            .ok_or_else(|| CeresError::InvalidInput("token set is empty".into()))?;
        let d = first.dim();
        for t in &tokens {
            check_dims(d, t.dim())?;
        }
        Ok(TokenSet(tokens))
    }

    pub fn dim(&self) -> usize {
        self.0[0].dim()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn tokens(&self) -> &[Vector] {
        &self.0
    }

    pub fn mean(&self) -> Vector {
        let w = SimplexWeights::uniform(self.len());
        convex_combine(&w, &self.0).expect("uniform token dims")
    }
}

impl TryFrom<Vec<Vector>> for TokenSet {
    type Error = CeresError;
    fn try_from(v: Vec<Vector>) -> Result<Self> {
        TokenSet::new(v)
    }
}

impl From<TokenSet> for Vec<Vector> {
    fn from(t: TokenSet) -> Self {
        t.0
    }
}

/// Projections and temperature for aggregation and cross-attention.
///
/// `q_proj`/`k_proj` score a modality's own tokens against its query;
/// `w_q`/`w_k` score visual tokens against the aggregated depth summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionParams {
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub q_proj: Matrix,
    pub k_proj: Matrix,
    pub temperature: f64,
}

impl AttentionParams {
    /// Identity projections with the scaled-dot-product temperature `√d`.
    pub fn identity(d: usize) -> Self {
        AttentionParams {
            w_q: Matrix::identity(d),
            w_k: Matrix::identity(d),
            q_proj: Matrix::identity(d),
            k_proj: Matrix::identity(d),
            temperature: (d as f64).sqrt(),
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    /// Gaussian projections with entries `N(0, 1/d)`.
    pub fn random(d: usize, rng: &mut rng::Stream) -> Self {
        let mut draw = || {
            let entries = (0..d * d)
                .map(|_| rng::standard_normal(rng) / (d as f64).sqrt())
                .collect();
            Matrix::new(d, d, entries).expect("finite draws")
        };
        AttentionParams {
            w_q: draw(),
            w_k: draw(),
            q_proj: draw(),
            k_proj: draw(),
            temperature: (d as f64).sqrt(),
        }
    }

    pub fn dim(&self) -> usize {
        self.w_q.rows()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        for m in [&self.w_q, &self.w_k, &self.q_proj, &self.k_proj] {
            if !m.is_square() {
                return Err(CeresError::InvalidInput("attention projections must be square".into()));
            }
            check_dims(d, m.rows())?;
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(CeresError::InvalidInput(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

fn attend(
    query: &Vector,
    tokens: &TokenSet,
    q: &Matrix,
    k: &Matrix,
    temperature: f64,
) -> Result<(Vector, SimplexWeights)> {
    check_dims(q.cols(), query.dim())?;
    check_dims(k.cols(), tokens.dim())?;
    let qv = q.mul_vec(query)?;
    let scores = tokens
        .tokens()
        .iter()
        .map(|t| k.mul_vec(t).and_then(|kt| qv.dot(&kt)))
        .collect::<Result<Vec<f64>>>()?;
    let weights = softmax(&scores, temperature)?;
    let out = convex_combine(&weights, tokens.tokens())?;
    Ok((out, weights))
}

/// Self-normalizing aggregation of one modality's tokens against a query.
pub fn aggregate_tokens(
    query: &Vector,
    tokens: &TokenSet,
    params: &AttentionParams,
) -> Result<(Vector, SimplexWeights)> {
    params.validate()?;
    attend(query, tokens, &params.q_proj, &params.k_proj, params.temperature)
}

/// Default query for a modality: a linear projection of its token mean.
pub fn default_query(tokens: &TokenSet, proj: &Matrix) -> Result<Vector> {
    proj.mul_vec(&tokens.mean())
}

/// Cross-attention with the depth summary as query and visual tokens as
/// keys and values. The output is a convex combination of the visual tokens.
pub fn alf_attention(
    m_d_hat: &Vector,
    visual_tokens: &TokenSet,
    params: &AttentionParams,
) -> Result<(Vector, SimplexWeights)> {
    params.validate()?;
    attend(m_d_hat, visual_tokens, &params.w_q, &params.w_k, params.temperature)
}

/// One layer of the depth-guided mediator stack.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerMediator {
    pub depth_summary: Vector,
    pub depth_weights: SimplexWeights,
    pub mediator: Vector,
    pub visual_weights: SimplexWeights,
}

/// Per-layer mediators; the final mediator is the last layer's.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MediatorStack {
    pub layers: Vec<LayerMediator>,
}

impl MediatorStack {
    pub fn final_mediator(&self) -> &Vector {
        &self.layers.last().expect("nonempty stack").mediator
    }
}

/// Layer-wise depth aggregation followed by cross-attention over that
/// layer's visual tokens.
pub fn dattn_stack(
    visual_layers: &[TokenSet],
    depth_layers: &[TokenSet],
    queries: &[Vector],
    params: &[AttentionParams],
) -> Result<MediatorStack> {
    let n = visual_layers.len();
    if n == 0 {
        return Err(CeresError::InvalidInput("no layers".into()));
    }
    check_dims(n, depth_layers.len())?;
    check_dims(n, queries.len())?;
    check_dims(n, params.len())?;
    let d = visual_layers[0].dim();
    let mut layers = Vec::with_capacity(n);
    for l in 0..n {
        check_dims(d, visual_layers[l].dim())?;
        let (depth_summary, depth_weights) = aggregate_tokens(&queries[l], &depth_layers[l], &params[l])?;
        let (mediator, visual_weights) = alf_attention(&depth_summary, &visual_layers[l], &params[l])?;
        layers.push(LayerMediator {
            depth_summary,
            depth_weights,
            mediator,
            visual_weights,
        });
    }
    Ok(MediatorStack { layers })
}

/// Two-layer map `W2 · max(0, W1 · [m; x] + b1) + b2` and the blend gate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatedFusionParams {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
    pub gate: f64,
}

impl GatedFusionParams {
    pub fn new(w1: Matrix, b1: Vec<f64>, w2: Matrix, b2: Vec<f64>, gate: f64) -> Result<Self> {
        let p = GatedFusionParams { w1, b1, w2, b2, gate };
        p.validate()?;
        Ok(p)
    }

    pub fn dim(&self) -> usize {
        self.w2.rows()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.w2.rows();
        let h = self.w1.rows();
        check_dims(2 * d, self.w1.cols())?;
        check_dims(h, self.b1.len())?;
        check_dims(h, self.w2.cols())?;
        check_dims(d, self.b2.len())?;
        if !(0.0..=1.0).contains(&self.gate) {
            return Err(CeresError::InvalidInput(format!("gate {} outside [0, 1]", self.gate)));
        }
        Ok(())
    }

    /// Hidden layer is the identity on `[m; x]` (exact for nonnegative
    /// inputs under the rectifier); the output layer averages the halves.
    pub fn averaging(d: usize, gate: f64) -> Self {
        let mut w2 = vec![0.0; d * 2 * d];
        for i in 0..d {
            w2[i * 2 * d + i] = 0.5;
            w2[i * 2 * d + d + i] = 0.5;
        }
        GatedFusionParams {
            w1: Matrix::identity(2 * d),
            b1: vec![0.0; 2 * d],
            w2: Matrix::new(d, 2 * d, w2).expect("shape"),
            b2: vec![0.0; d],
            gate,
        }
    }

    /// Gaussian weights with hidden width `2d`.
    pub fn random(d: usize, gate: f64, rng: &mut rng::Stream) -> Self {
        let h = 2 * d;
        let mut normal = |n: usize, scale: f64| -> Vec<f64> {
            (0..n).map(|_| rng::standard_normal(rng) * scale).collect()
        };
        let w1 = Matrix::new(h, 2 * d, normal(h * 2 * d, (1.0 / (2 * d) as f64).sqrt())).expect("shape");
        let b1 = normal(h, 0.1);
        let w2 = Matrix::new(d, h, normal(d * h, (1.0 / h as f64).sqrt())).expect("shape");
        let b2 = normal(d, 0.1);
        GatedFusionParams { w1, b1, w2, b2, gate }
    }

    pub fn mlp(&self, m_hat: &Vector, x_hat: &Vector) -> Result<Vec<f64>> {
        let d = self.dim();
        check_dims(d, m_hat.dim())?;
        check_dims(d, x_hat.dim())?;
        let mut input = m_hat.as_slice().to_vec();
        input.extend_from_slice(x_hat.as_slice());
        let hidden: Vec<f64> = self
            .w1
            .mul_slice(&input)?
            .iter()
            .zip(&self.b1)
            .map(|(a, b)| (a + b).max(0.0))
            .collect();
        Ok(self
            .w2
            .mul_slice(&hidden)?
            .iter()
            .zip(&self.b2)
            .map(|(a, b)| a + b)
            .collect())
    }
}

/// `σ · MLP([m̂; x̂]) + (1 − σ) · x`.
pub fn gated_fuse(m_hat: &Vector, x_hat: &Vector, x: &Vector, params: &GatedFusionParams) -> Result<Vector> {
    params.validate()?;
    check_dims(params.dim(), x.dim())?;
    let g = params.gate;
    let mlp = params.mlp(m_hat, x_hat)?;
    let out = if g == 0.0 {
        x.as_slice().to_vec()
    } else if g == 1.0 {
        mlp
    } else {
        mlp.iter()
            .zip(x.as_slice())
            .map(|(a, b)| g * a + (1.0 - g) * b)
            .collect()
    };
    Vector::new(out)
}

/// `P(Y | do(X = x)) = Σ_m P(m | x) Σ_x' P(Y | m, x') P(x')`.
///
/// `p_y_given_m_x[m][x']` is a row over `Y`, `p_m_given_x[x]` a row over `M`.
pub fn frontdoor_adjust(
    p_y_given_m_x: &[Vec<Vec<f64>>],
    p_m_given_x: &[Vec<f64>],
    p_x: &[f64],
    x: usize,
) -> Result<Distribution> {
    let n_m = p_y_given_m_x.len();
    let n_x = p_x.len();
    Distribution::new(p_x.to_vec())?;
    check_dims(n_x, p_m_given_x.len())?;
    if x >= n_x {
        return Err(CeresError::InvalidInput(format!("x = {x} out of range")));
    }
    for row in p_m_given_x {
        check_dims(n_m, row.len())?;
        Distribution::new(row.clone())?;
    }
    let n_y = p_y_given_m_x
        .first()
        .and_then(|r| r.first())
        .map_or(0, Vec::len);
    for by_x in p_y_given_m_x {
        check_dims(n_x, by_x.len())?;
        for row in by_x {
            check_dims(n_y, row.len())?;
            Distribution::new(row.clone())?;
        }
    }
    let probs: Vec<f64> = (0..n_y)
        .map(|y| {
            stable_sum((0..n_m).flat_map(|m| {
                let pm = p_m_given_x[x][m];
                (0..n_x).map(move |xp| pm * p_y_given_m_x[m][xp][y] * p_x[xp])
            }))
        })
        .collect();
    Distribution::new(probs)
}

/// Observational inputs of the front-door sum extracted from a spec.
#[derive(Debug, Clone, PartialEq)]
pub struct FrontDoorTables {
    pub p_y_given_m_x: Vec<Vec<Vec<f64>>>,
    pub p_m_given_x: Vec<Vec<f64>>,
    pub p_x: Vec<f64>,
}

impl FrontDoorTables {
    pub fn extract(spec: &ScmSpec) -> Result<Self> {
        let y_mx = spec.conditional_table(Var::Y, &[Var::M, Var::X])?;
        let m_x = spec.conditional_table(Var::M, &[Var::X])?;
        let p_x = spec.marginal(Var::X)?.probs;
        let n_m = spec.cards.of(Var::M);
        let n_x = spec.cards.of(Var::X);
        let missing = |what: String| CeresError::ConditionUnsupported(what);
        let mut p_y_given_m_x = Vec::with_capacity(n_m);
        for m in 0..n_m {
            let mut by_x = Vec::with_capacity(n_x);
            for x in 0..n_x {
                let row = y_mx.row(&[m, x]).ok_or_else(|| missing(format!("M={m}, X={x}")))?;
                by_x.push(row.probs.clone());
            }
            p_y_given_m_x.push(by_x);
        }
        let p_m_given_x = (0..n_x)
            .map(|x| {
                m_x.row(&[x])
                    .map(|d| d.probs.clone())
                    .ok_or_else(|| missing(format!("X={x}")))
            })
            .collect::<Result<_>>()?;
        Ok(FrontDoorTables {
            p_y_given_m_x,
            p_m_given_x,
            p_x,
        })
    }

    pub fn adjust(&self, x: usize) -> Result<Distribution> {
        frontdoor_adjust(&self.p_y_given_m_x, &self.p_m_given_x, &self.p_x, x)
    }

    /// Same sum with the mediator row replaced by an estimate.
    pub fn adjust_with(&self, p_m_given_x: &[Vec<f64>], x: usize) -> Result<Distribution> {
        frontdoor_adjust(&self.p_y_given_m_x, p_m_given_x, &self.p_x, x)
    }
}

/// One seed of the mediator robustness experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustnessRow {
    pub seed: u64,
    pub rho: f64,
    pub n_samples: usize,
    pub err_visual_only: f64,
    pub err_depth_guided: f64,
    pub winner: &'static str,
    /// Some `X` state was never observed in this seed's sample.
    pub undercovered: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustnessReport {
    pub rows: Vec<RobustnessRow>,
    /// Fraction of seeds with `err_depth_guided <= err_visual_only`.
    pub depth_win_fraction: f64,
    pub undercovered_seeds: usize,
}

/// Add-one smoothed empirical `P(channel | X)` rows.
fn smoothed_rows(pairs: impl Iterator<Item = (usize, usize)>, n_x: usize, n_m: usize) -> (Vec<Vec<f64>>, bool) {
    let mut counts = vec![vec![0u64; n_m]; n_x];
    for (x, m) in pairs {
        counts[x][m] += 1;
    }
    let undercovered = counts.iter().any(|row| row.iter().all(|&c| c == 0));
    let rows = counts
        .into_iter()
        .map(|row| {
            let total: u64 = row.iter().sum::<u64>() + n_m as u64;
            row.into_iter().map(|c| (c + 1) as f64 / total as f64).collect()
        })
        .collect();
    (rows, undercovered)
}

/// Plug-in front-door estimates using the mediator law read through the
/// corrupted visual channel (`Mv`) versus the depth channel (`Md`), each
/// compared with the exact `P(Y | do(X))`.
///
/// `P(Y | m, x')` and `P(x')` are taken exactly from the spec so the two
/// estimates differ only in their mediator statistics. The error of an
/// estimate is the largest absolute deviation over all `(x, y)`. Trial `i`
/// samples from stream `i` of `base_seed`.
pub fn mediator_robustness_experiment(
    spec: &ScmSpec,
    rho: f64,
    n_samples: usize,
    base_seed: u64,
    n_trials: usize,
) -> Result<RobustnessReport> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(CeresError::InvalidInput(format!("rho {rho} outside [0, 1]")));
    }
    let n_m = spec.cards.of(Var::M);
    check_dims(n_m, spec.cards.of(Var::Mv))?;
    check_dims(n_m, spec.cards.of(Var::Md))?;
    let mut spec = spec.clone();
    spec.corruption_rho = rho;
    spec.ensure_valid()?;
    let n_x = spec.cards.of(Var::X);
    let tables = FrontDoorTables::extract(&spec)?;
    let truth = (0..n_x)
        .map(|x| spec.intervene(&[(Var::X, x)], Var::Y))
        .collect::<Result<Vec<_>>>()?;

    let error_of = |rows: &[Vec<f64>]| -> Result<f64> {
        let mut worst = 0.0_f64;
        for (x, t) in truth.iter().enumerate() {
            worst = worst.max(tables.adjust_with(rows, x)?.linf_distance(t));
        }
        Ok(worst)
    };

    let rows = (0..n_trials as u64)
        .into_par_iter()
        .map(|trial| -> Result<RobustnessRow> {
            let mut s = rng::stream(base_seed, trial);
            let draws = spec.sample_with(&mut s, n_samples)?;
            let (visual, under_v) = smoothed_rows(draws.iter().map(|d| (d.x, d.m_v)), n_x, n_m);
            let (depth, under_d) = smoothed_rows(draws.iter().map(|d| (d.x, d.m_d)), n_x, n_m);
            let err_visual_only = error_of(&visual)?;
            let err_depth_guided = error_of(&depth)?;
            Ok(RobustnessRow {
                seed: trial,
                rho,
                n_samples,
                err_visual_only,
                err_depth_guided,
                winner: if err_depth_guided <= err_visual_only {
                    "depth_guided"
                } else {
                    "visual_only"
                },
                undercovered: under_v || under_d,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let wins = rows.iter().filter(|r| r.winner == "depth_guided").count();
    let undercovered_seeds = rows.iter().filter(|r| r.undercovered).count();
    Ok(RobustnessReport {
        depth_win_fraction: if rows.is_empty() { 0.0 } else { wins as f64 / rows.len() as f64 },
        undercovered_seeds,
        rows,
    })
}
