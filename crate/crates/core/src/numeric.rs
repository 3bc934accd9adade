//! Dense vector/matrix types and the stable softmax kernel used by every estimator.

use serde::{Deserialize, Serialize};

use crate::error::{CeresError, Result};

/// Tolerance on `|Σ w − 1|` accepted by [`SimplexWeights::new`].
pub const SIMPLEX_SUM_TOL: f64 = 1e-12;

/// Compensated (Neumaier) summation.
pub fn stable_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(CeresError::InvalidInput(format!(
            "{what}: non-finite entry at index {i}"
        )));
    }
    Ok(())
}

/// A nonempty vector of finite reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(CeresError::InvalidInput("vector must be nonempty".into()));
        }
        check_finite(&entries, "vector")?;
        Ok(Vector(entries))
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0, "vector dimension must be positive");
        Vector(vec![0.0; dim])
    }

    /// The `i`-th standard basis vector.
    pub fn basis(dim: usize, i: usize) -> Self {
        let mut v = Self::zeros(dim);
        v.0[i] = 1.0;
        v
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &Vector) -> Result<f64> {
        check_dims(self.dim(), other.dim())?;
        Ok(stable_sum(self.0.iter().zip(&other.0).map(|(a, b)| a * b)))
    }

    pub fn add(&self, other: &Vector) -> Result<Vector> {
        check_dims(self.dim(), other.dim())?;
        Ok(Vector(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect()))
    }

    pub fn sub(&self, other: &Vector) -> Result<Vector> {
        check_dims(self.dim(), other.dim())?;
        Ok(Vector(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect()))
    }

    pub fn scale(&self, c: f64) -> Vector {
        Vector(self.0.iter().map(|a| a * c).collect())
    }

    pub fn norm2(&self) -> f64 {
        self.0.iter().map(|a| a * a).sum::<f64>().sqrt()
    }

    pub fn linf_distance(&self, other: &Vector) -> Result<f64> {
        check_dims(self.dim(), other.dim())?;
        Ok(self
            .0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// Unit-normalized copy; the zero vector is returned unchanged.
    pub fn normalized(&self) -> Vector {
        let n = self.norm2();
        if n == 0.0 {
            self.clone()
        } else {
            self.scale(1.0 / n)
        }
    }
}

impl TryFrom<Vec<f64>> for Vector {
    type Error = CeresError;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Vector::new(v)
    }
}

impl From<Vector> for Vec<f64> {
    fn from(v: Vector) -> Self {
        v.0
    }
}

impl std::ops::Index<usize> for Vector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

pub(crate) fn check_dims(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(CeresError::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// Row-major dense matrix of finite reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, entries: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(CeresError::InvalidInput(
                "matrix dimensions must be positive".into(),
            ));
        }
        check_dims(rows * cols, entries.len())?;
        check_finite(&entries, "matrix")?;
        Ok(Matrix {
            rows,
            cols,
            entries,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        for row in rows {
            check_dims(c, row.len())?;
        }
        Matrix::new(r, c, rows.concat())
    }

    pub fn identity(n: usize) -> Self {
        Self::scaled_identity(n, 1.0)
    }

    pub fn scaled_identity(n: usize, c: f64) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.entries[i * n + i] = c;
        }
        m
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Matrix {
            rows,
            cols,
            entries: vec![0.0; rows * cols],
        }
    }

    /// Gram matrix `G_ij = <v_i, v_j>`.
    pub fn gram(vectors: &[Vector]) -> Result<Self> {
        let n = vectors.len();
        if n == 0 {
            return Err(CeresError::InvalidInput("gram of empty set".into()));
        }
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                m.entries[i * n + j] = vectors[i].dot(&vectors[j])?;
            }
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.entries[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.entries[r * self.cols..(r + 1) * self.cols]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn mul_slice(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dims(self.cols, x.len())?;
        Ok((0..self.rows)
            .map(|r| self.row(r).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect())
    }

    pub fn mul_vec(&self, x: &Vector) -> Result<Vector> {
        Ok(Vector(self.mul_slice(x.as_slice())?))
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0_f64;
        for i in 0..self.rows {
            for j in 0..self.cols.min(self.rows) {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }
}

/// Nonnegative weights summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SimplexWeights(Vec<f64>);

impl SimplexWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(CeresError::InvalidInput("simplex weights must be nonempty".into()));
        }
        check_finite(&weights, "simplex weights")?;
        if let Some(i) = weights.iter().position(|&w| w < 0.0) {
            return Err(CeresError::InvalidInput(format!(
                "negative weight {} at index {i}",
                weights[i]
            )));
        }
        let s = stable_sum(weights.iter().copied());
        if (s - 1.0).abs() > SIMPLEX_SUM_TOL {
            return Err(CeresError::InvalidInput(format!(
                "weights sum to {s}, not 1"
            )));
        }
        Ok(SimplexWeights(weights))
    }

    pub fn uniform(n: usize) -> Self {
        assert!(n > 0);
        SimplexWeights(vec![1.0 / n as f64; n])
    }

    pub fn vertex(n: usize, i: usize) -> Self {
        let mut w = vec![0.0; n];
        w[i] = 1.0;
        SimplexWeights(w)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn linf_distance(&self, other: &SimplexWeights) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Index of the largest weight; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

impl TryFrom<Vec<f64>> for SimplexWeights {
    type Error = CeresError;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        SimplexWeights::new(v)
    }
}

impl From<SimplexWeights> for Vec<f64> {
    fn from(w: SimplexWeights) -> Self {
        w.0
    }
}

impl std::ops::Index<usize> for SimplexWeights {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Lowest index of the maximum entry.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// `log Σ exp(s_j)`, stabilized by subtracting the maximum.
pub fn log_sum_exp(scores: &[f64]) -> Result<f64> {
    if scores.is_empty() {
        return Err(CeresError::InvalidInput("log_sum_exp of empty input".into()));
    }
    check_finite(scores, "scores")?;
    if scores.len() == 1 {
        return Ok(scores[0]);
    }
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s = stable_sum(scores.iter().map(|x| (x - m).exp()));
    Ok(m + s.ln())
}

/// Normalized exponential weights `exp(s_j/τ) / Σ_p exp(s_p/τ)`.
pub fn softmax(scores: &[f64], temperature: f64) -> Result<SimplexWeights> {
    if scores.is_empty() {
        return Err(CeresError::InvalidInput("softmax of empty input".into()));
    }
    check_finite(scores, "scores")?;
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(CeresError::InvalidInput(format!(
            "temperature must be positive and finite, got {temperature}"
        )));
    }
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| ((s - m) / temperature).exp()).collect();
    // the max entry contributes exp(0) = 1, so the denominator is >= 1
    let denom = stable_sum(exps.iter().copied());
    Ok(SimplexWeights(exps.into_iter().map(|e| e / denom).collect()))
}

/// `Σ_j w_j · tokens_j`.
pub fn convex_combine(weights: &SimplexWeights, tokens: &[Vector]) -> Result<Vector> {
    if tokens.is_empty() {
        return Err(CeresError::InvalidInput("no tokens to combine".into()));
    }
    check_dims(tokens.len(), weights.len())?;
    let dim = tokens[0].dim();
    for t in tokens {
        check_dims(dim, t.dim())?;
    }
    let out = (0..dim)
        .map(|k| stable_sum(weights.0.iter().zip(tokens).map(|(w, t)| w * t.0[k])))
        .collect();
    Ok(Vector(out))
}

/// Euclidean projection onto the probability simplex (sort-and-threshold).
pub fn simplex_project(v: &[f64]) -> Result<SimplexWeights> {
    if v.is_empty() {
        return Err(CeresError::InvalidInput("cannot project empty vector".into()));
    }
    check_finite(v, "projection input")?;
    let n = v.len();
    if n == 1 {
        return Ok(SimplexWeights(vec![1.0]));
    }
    // points already on the simplex (up to rounding) are fixed points
    let total = stable_sum(v.iter().copied());
    if v.iter().all(|&x| x >= 0.0) && (total - 1.0).abs() <= 4.0 * n as f64 * f64::EPSILON {
        return Ok(SimplexWeights(v.to_vec()));
    }

    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cumsum += uj;
        let t = (cumsum - 1.0) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        }
    }
    let mut w: Vec<f64> = v.iter().map(|x| (x - theta).max(0.0)).collect();
    let s = stable_sum(w.iter().copied());
    if s > 0.0 {
        for x in &mut w {
            *x /= s;
        }
    } else {
        // cancellation wiped every coordinate; fall back to the top vertex
        w = SimplexWeights::vertex(n, argmax(v)).0;
    }
    Ok(SimplexWeights(w))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_uniform_on_equal_scores() {
        let w = softmax(&[0.0, 0.0, 0.0], 1.0).unwrap();
        for x in w.as_slice() {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_ratio_two() {
        for c in [-3.0, 0.0, 17.5] {
            let w = softmax(&[c, c + 2f64.ln()], 1.0).unwrap();
            assert!((w[0] - 1.0 / 3.0).abs() < 1e-14, "c={c}");
            assert!((w[1] - 2.0 / 3.0).abs() < 1e-14, "c={c}");
        }
        // at |c| in the hundreds, c + ln 2 itself rounds by up to ulp(c) ~ 1e-13
        for c in [-500.0, 650.0] {
            let w = softmax(&[c, c + 2f64.ln()], 1.0).unwrap();
            assert!((w[1] - 2.0 / 3.0).abs() < 1e-12, "c={c}");
        }
    }

    #[test]
    fn softmax_large_gap_no_overflow() {
        let w = softmax(&[1000.0, 0.0], 1.0).unwrap();
        // ln of the exact minor weight is -1000 - ln(1 + e^-1000), far below the
        // log of the smallest subnormal, so the correctly rounded f64 is zero
        let ln_minor = -1000.0 - (-1000.0_f64).exp().ln_1p();
        let ln_min_subnormal = (f64::from_bits(1)).ln();
        assert!(ln_minor < ln_min_subnormal - 1.0);
        assert_eq!(w.as_slice(), &[1.0, 0.0]);
        assert_eq!(stable_sum(w.as_slice().iter().copied()), 1.0);
    }

    #[test]
    fn softmax_rejects_bad_input() {
        assert!(matches!(softmax(&[], 1.0), Err(CeresError::InvalidInput(_))));
        assert!(matches!(softmax(&[1.0, f64::NAN], 1.0), Err(CeresError::InvalidInput(_))));
        assert!(matches!(softmax(&[1.0], 0.0), Err(CeresError::InvalidInput(_))));
        assert!(matches!(softmax(&[1.0], -2.0), Err(CeresError::InvalidInput(_))));
    }

    #[test]
    fn log_sum_exp_cases() {
        assert_eq!(log_sum_exp(&[3.25]).unwrap(), 3.25);
        assert!((log_sum_exp(&[0.0, 0.0]).unwrap() - 2f64.ln()).abs() < 1e-15);
        let big = log_sum_exp(&[1000.0, 1000.0]).unwrap();
        assert!((big - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert!(log_sum_exp(&[]).is_err());
    }

    #[test]
    fn convex_combine_cases() {
        let v = Vector::new(vec![1.5, -2.0]).unwrap();
        let out = convex_combine(&SimplexWeights::new(vec![1.0]).unwrap(), &[v.clone()]).unwrap();
        assert_eq!(out, v);

        let half = SimplexWeights::new(vec![0.5, 0.5]).unwrap();
        assert_eq!(convex_combine(&half, &[v.clone(), v.clone()]).unwrap(), v);

        let w = SimplexWeights::new(vec![0.25, 0.75]).unwrap();
        let toks = [
            Vector::new(vec![0.0, 0.0]).unwrap(),
            Vector::new(vec![4.0, 8.0]).unwrap(),
        ];
        assert_eq!(convex_combine(&w, &toks).unwrap().as_slice(), &[3.0, 6.0]);

        assert!(matches!(
            convex_combine(&w, &toks[..1]),
            Err(CeresError::DimensionMismatch { .. })
        ));
        assert!(matches!(convex_combine(&w, &[]), Err(CeresError::InvalidInput(_))));
    }

    #[test]
    fn projection_cases() {
        let p = [0.2, 0.3, 0.5];
        assert_eq!(simplex_project(&p).unwrap().as_slice(), &p);
        assert_eq!(simplex_project(&[2.0, 0.0]).unwrap().as_slice(), &[1.0, 0.0]);
        assert!(simplex_project(&[]).is_err());
    }

    #[test]
    fn projection_matches_grid_search() {
        // brute force over Δ¹ at step 1e-4
        let v = [0.6, 0.6];
        let mut best = (f64::INFINITY, 0.0);
        for k in 0..=10_000 {
            let a = k as f64 * 1e-4;
            let d = (a - v[0]).powi(2) + (1.0 - a - v[1]).powi(2);
            if d < best.0 {
                best = (d, a);
            }
        }
        let w = simplex_project(&v).unwrap();
        assert!((w[0] - best.1).abs() <= 1e-4);
        assert!((w[1] - (1.0 - best.1)).abs() <= 1e-4);
        assert!((w[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn simplex_weights_validation() {
        assert!(SimplexWeights::new(vec![0.5, 0.4]).is_err());
        assert!(SimplexWeights::new(vec![1.5, -0.5]).is_err());
        assert!(SimplexWeights::new(vec![]).is_err());
        assert!(SimplexWeights::new(vec![0.25; 4]).is_ok());
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(SimplexWeights::uniform(4).argmax(), 0);
    }

    #[test]
    fn vector_rejects_nonfinite() {
        assert!(Vector::new(vec![f64::INFINITY]).is_err());
        assert!(Vector::new(vec![]).is_err());
        let m = Matrix::new(1, 2, vec![1.0, f64::NAN]);
        assert!(m.is_err());
    }
}
