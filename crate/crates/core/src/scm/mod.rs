//! Discrete structural causal model with exact observational and
//! interventional queries.
//!
//! Graph (parents listed per child):
//!
//! ```text
//! Z            U
//! T  <- Z      X  <- U
//! Mv <- X, U   (U-free base table mixed with a U-dependent table by rho)
//! Md <- X      M  <- X
//! Y  <- T, M, Z, U   (+ X when `direct_x_to_y`)
//! ```
//!
//! `M` fully mediates `X -> Y` unless `direct_x_to_y` is set, and neither
//! `M` nor `Md` sees `U`. `Mv` and `Md` are observation channels only: `Y`
//! never reads them.

mod enumerate;
mod generate;
mod json;
mod sample;

pub use enumerate::{CondTable, Distribution};
pub use generate::{random_spec, RandomSpecOptions};
pub use sample::ScmSample;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{CeresError, Result};
use crate::numeric::Vector;
use crate::rng;

/// Largest state-space size accepted by validation.
pub const MAX_CARD: usize = 16;

/// Row-sum tolerance for validated specs.
pub const ROW_TOL: f64 = 1e-12;

/// Variables in ancestral (topological) order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Var {
    Z,
    U,
    T,
    X,
    Mv,
    Md,
    M,
    Y,
}

impl Var {
    pub const ALL: [Var; 8] = [Var::Z, Var::U, Var::T, Var::X, Var::Mv, Var::Md, Var::M, Var::Y];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Var::Z => "Z",
            Var::U => "U",
            Var::T => "T",
            Var::X => "X",
            Var::Mv => "Mv",
            Var::Md => "Md",
            Var::M => "M",
            Var::Y => "Y",
        }
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Var {
    type Err = CeresError;
    fn from_str(s: &str) -> Result<Self> {
        Var::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| CeresError::InvalidInput(format!("unknown variable {s:?}")))
    }
}

/// State-space sizes, indexed by [`Var::index`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cards(pub [usize; 8]);

impl Cards {
    pub fn uniform(n: usize) -> Self {
        Cards([n; 8])
    }

    pub fn of(&self, v: Var) -> usize {
        self.0[v.index()]
    }

    pub fn set(&mut self, v: Var, n: usize) {
        self.0[v.index()] = n;
    }
}

/// Conditional probability table. Rows enumerate parent assignments in
/// mixed radix (first parent most significant); the child axis is innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct Cpt {
    pub child: Var,
    pub parents: Vec<Var>,
    pub probs: Vec<f64>,
}

impl Cpt {
    pub fn new(child: Var, parents: Vec<Var>, probs: Vec<f64>) -> Self {
        Cpt {
            child,
            parents,
            probs,
        }
    }

    /// Build from a row function over parent assignments.
    pub fn from_fn(
        child: Var,
        parents: Vec<Var>,
        cards: &Cards,
        mut row: impl FnMut(&[usize]) -> Vec<f64>,
    ) -> Self {
        let pcards: Vec<usize> = parents.iter().map(|p| cards.of(*p)).collect();
        let n_rows: usize = pcards.iter().product();
        let mut probs = Vec::with_capacity(n_rows * cards.of(child));
        let mut idx = vec![0usize; parents.len()];
        for r in 0..n_rows {
            decode(r, &pcards, &mut idx);
            probs.extend(row(&idx));
        }
        Cpt {
            child,
            parents,
            probs,
        }
    }

    pub fn name(&self) -> String {
        let ps: String = self.parents.iter().map(|p| p.name()).collect();
        if ps.is_empty() {
            format!("{}", self.child)
        } else {
            format!("{}_given_{}", self.child, ps)
        }
    }

    fn row_index(&self, cards: &Cards, assign: &[usize; 8]) -> usize {
        self.parents
            .iter()
            .fold(0, |acc, p| acc * cards.of(*p) + assign[p.index()])
    }

    pub fn row(&self, cards: &Cards, parent_values: &[usize]) -> &[f64] {
        let k = cards.of(self.child);
        let r = self
            .parents
            .iter()
            .zip(parent_values)
            .fold(0, |acc, (p, v)| acc * cards.of(*p) + v);
        &self.probs[r * k..(r + 1) * k]
    }

    fn prob(&self, cards: &Cards, assign: &[usize; 8]) -> f64 {
        let k = cards.of(self.child);
        self.probs[self.row_index(cards, assign) * k + assign[self.child.index()]]
    }

    fn row_at(&self, cards: &Cards, assign: &[usize; 8]) -> &[f64] {
        let k = cards.of(self.child);
        let r = self.row_index(cards, assign);
        &self.probs[r * k..(r + 1) * k]
    }
}

pub(crate) fn decode(mut r: usize, radices: &[usize], out: &mut [usize]) {
    for i in (0..radices.len()).rev() {
        out[i] = r % radices[i];
        r /= radices[i];
    }
}

/// Per-state embedding tables, drawn from a seeded standard normal and
/// unit-normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct Embeddings {
    pub dim: usize,
    pub t: Vec<Vector>,
    pub x: Vec<Vector>,
    pub mv: Vec<Vector>,
    pub md: Vec<Vector>,
}

impl Embeddings {
    pub fn generate(cards: &Cards, dim: usize, seed: u64) -> Self {
        let table = |var: Var| -> Vec<Vector> {
            let mut s = rng::stream(seed, var.index() as u64);
            (0..cards.of(var))
                .map(|_| {
                    let raw: Vec<f64> = (0..dim).map(|_| rng::standard_normal(&mut s)).collect();
                    Vector::new(raw).expect("finite normal draws").normalized()
                })
                .collect()
        };
        Embeddings {
            dim,
            t: table(Var::T),
            x: table(Var::X),
            mv: table(Var::Mv),
            md: table(Var::Md),
        }
    }

    pub fn of(&self, var: Var) -> Option<&[Vector]> {
        match var {
            Var::T => Some(&self.t),
            Var::X => Some(&self.x),
            Var::Mv => Some(&self.mv),
            Var::Md => Some(&self.md),
            _ => None,
        }
    }
}

/// A discrete SCM over `(Z, U, T, X, Mv, Md, M, Y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScmSpec {
    pub cards: Cards,
    pub prior_z: Vec<f64>,
    pub prior_u: Vec<f64>,
    pub t_given_z: Cpt,
    pub x_given_u: Cpt,
    /// U-free part of the Mv channel.
    pub mv_base: Cpt,
    /// U-dependent corruption mixed into Mv with weight `corruption_rho`.
    pub mv_corrupt: Cpt,
    pub md_given_x: Cpt,
    pub m_given_x: Cpt,
    pub y_given: Cpt,
    pub corruption_rho: f64,
    pub direct_x_to_y: bool,
    pub embedding_dim: usize,
    pub embedding_seed: u64,
    pub embeddings: Embeddings,
}

/// One validation failure.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub table: String,
    pub row: Option<usize>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.row {
            Some(r) => write!(f, "{} row {}: {}", self.table, r, self.message),
            None => write!(f, "{}: {}", self.table, self.message),
        }
    }
}

impl ScmSpec {
    /// Structural parents each table must declare.
    pub fn required_parents(&self, child: Var) -> Vec<Var> {
        match child {
            Var::Z | Var::U => vec![],
            Var::T => vec![Var::Z],
            Var::X => vec![Var::U],
            Var::Mv => vec![Var::X, Var::U],
            Var::Md | Var::M => vec![Var::X],
            Var::Y if self.direct_x_to_y => vec![Var::T, Var::M, Var::Z, Var::U, Var::X],
            Var::Y => vec![Var::T, Var::M, Var::Z, Var::U],
        }
    }

    /// Parents of `var` in the (unmutilated) graph.
    pub fn parents(&self, var: Var) -> Vec<Var> {
        self.required_parents(var)
    }

    fn tables(&self) -> [(&Cpt, Vec<Var>); 7] {
        [
            (&self.t_given_z, vec![Var::Z]),
            (&self.x_given_u, vec![Var::U]),
            (&self.mv_base, vec![Var::X]),
            (&self.mv_corrupt, vec![Var::X, Var::U]),
            (&self.md_given_x, vec![Var::X]),
            (&self.m_given_x, vec![Var::X]),
            (&self.y_given, self.required_parents(Var::Y)),
        ]
    }

    /// Every violation found; empty iff the spec is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut push = |table: &str, row: Option<usize>, message: String| {
            out.push(Violation {
                table: table.to_string(),
                row,
                message,
            })
        };

        for v in Var::ALL {
            let c = self.cards.of(v);
            if c == 0 || c > MAX_CARD {
                push("cards", None, format!("card of {v} is {c}, must be in 1..={MAX_CARD}"));
            }
        }
        if self.cards.0.iter().any(|&c| c == 0 || c > MAX_CARD) {
            // shapes below are meaningless without valid cards
            return out;
        }

        for (name, prior, var) in [("prior_Z", &self.prior_z, Var::Z), ("prior_U", &self.prior_u, Var::U)] {
            if prior.len() != self.cards.of(var) {
                push(name, None, format!("length {} != card {}", prior.len(), self.cards.of(var)));
            } else if let Some(msg) = row_problem(prior) {
                push(name, None, msg);
            }
        }

        for (cpt, required) in self.tables() {
            let label = cpt.name();
            if cpt.parents != required {
                let got: Vec<&str> = cpt.parents.iter().map(|p| p.name()).collect();
                let want: Vec<&str> = required.iter().map(|p| p.name()).collect();
                push(
                    &label,
                    None,
                    format!("structural violation: parents {got:?}, required {want:?}"),
                );
                continue;
            }
            let k = self.cards.of(cpt.child);
            let n_rows: usize = cpt.parents.iter().map(|p| self.cards.of(*p)).product();
            if cpt.probs.len() != n_rows * k {
                push(
                    &label,
                    None,
                    format!("has {} entries, expected {}", cpt.probs.len(), n_rows * k),
                );
                continue;
            }
            for (r, row) in cpt.probs.chunks(k).enumerate() {
                if let Some(msg) = row_problem(row) {
                    push(&label, Some(r), msg);
                }
            }
        }
        if self.mv_base.child != Var::Mv || self.mv_corrupt.child != Var::Mv {
            push("Mv", None, "Mv tables must have child Mv".into());
        }

        if !(0.0..=1.0).contains(&self.corruption_rho) {
            push("corruption_rho", None, format!("{} outside [0, 1]", self.corruption_rho));
        }
        if self.embedding_dim == 0 {
            push("embedding_dim", None, "must be positive".into());
        }
        for var in [Var::T, Var::X, Var::Mv, Var::Md] {
            let table = self.embeddings.of(var).unwrap_or(&[]);
            if table.len() != self.cards.of(var) || table.iter().any(|e| e.dim() != self.embedding_dim) {
                push(
                    &format!("embed_{var}"),
                    None,
                    "embedding table shape does not match cards and embedding_dim".into(),
                );
            }
        }
        out
    }

    pub fn ensure_valid(&self) -> Result<()> {
        let report = self.validate();
        if report.is_empty() {
            Ok(())
        } else {
            Err(CeresError::SpecError(report.iter().map(ToString::to_string).collect()))
        }
    }

    /// Effective Mv row for `(x, u)`: `(1 - rho) * base[x] + rho * corrupt[x, u]`.
    pub fn mv_row(&self, x: usize, u: usize) -> Vec<f64> {
        let base = self.mv_base.row(&self.cards, &[x]);
        let corrupt = self.mv_corrupt.row(&self.cards, &[x, u]);
        let rho = self.corruption_rho;
        base.iter()
            .zip(corrupt)
            .map(|(b, c)| (1.0 - rho) * b + rho * c)
            .collect()
    }

    /// Structural factor `P(var = assign[var] | parents)`.
    pub(crate) fn factor(&self, var: Var, a: &[usize; 8]) -> f64 {
        let c = &self.cards;
        match var {
            Var::Z => self.prior_z[a[0]],
            Var::U => self.prior_u[a[1]],
            Var::T => self.t_given_z.prob(c, a),
            Var::X => self.x_given_u.prob(c, a),
            Var::Mv => {
                let rho = self.corruption_rho;
                (1.0 - rho) * self.mv_base.prob(c, a) + rho * self.mv_corrupt.prob(c, a)
            }
            Var::Md => self.md_given_x.prob(c, a),
            Var::M => self.m_given_x.prob(c, a),
            Var::Y => self.y_given.prob(c, a),
        }
    }

    /// Conditional row of `var` given the parent values already in `a`.
    pub(crate) fn factor_row(&self, var: Var, a: &[usize; 8]) -> std::borrow::Cow<'_, [f64]> {
        use std::borrow::Cow;
        let c = &self.cards;
        match var {
            Var::Z => Cow::Borrowed(&self.prior_z),
            Var::U => Cow::Borrowed(&self.prior_u),
            Var::T => Cow::Borrowed(self.t_given_z.row_at(c, a)),
            Var::X => Cow::Borrowed(self.x_given_u.row_at(c, a)),
            Var::Mv => Cow::Owned(self.mv_row(a[Var::X.index()], a[Var::U.index()])),
            Var::Md => Cow::Borrowed(self.md_given_x.row_at(c, a)),
            Var::M => Cow::Borrowed(self.m_given_x.row_at(c, a)),
            Var::Y => Cow::Borrowed(self.y_given.row_at(c, a)),
        }
    }

    /// Regenerate embedding tables from `embedding_dim` and `embedding_seed`.
    pub fn refresh_embeddings(&mut self) {
        self.embeddings = Embeddings::generate(&self.cards, self.embedding_dim, self.embedding_seed);
    }
}

fn row_problem(row: &[f64]) -> Option<String> {
    if let Some(i) = row.iter().position(|p| !p.is_finite() || *p < 0.0) {
        return Some(format!("entry {i} is {} (must be finite and nonnegative)", row[i]));
    }
    let s: f64 = crate::numeric::stable_sum(row.iter().copied());
    if (s - 1.0).abs() > ROW_TOL {
        return Some(format!("sums to {s}, not 1"));
    }
    None
}

pub fn validate_spec(spec: &ScmSpec) -> Vec<Violation> {
    spec.validate()
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// Hand-written 2-state spec with confounding through Z and U.
    pub fn demo2() -> ScmSpec {
        let cards = Cards::uniform(2);
        let bern = |p: f64| vec![1.0 - p, p];
        let mut spec = ScmSpec {
            cards,
            prior_z: bern(0.3),
            prior_u: bern(0.6),
            t_given_z: Cpt::new(Var::T, vec![Var::Z], [bern(0.2), bern(0.9)].concat()),
            x_given_u: Cpt::new(Var::X, vec![Var::U], [bern(0.25), bern(0.7)].concat()),
            mv_base: Cpt::new(Var::Mv, vec![Var::X], [bern(0.1), bern(0.8)].concat()),
            mv_corrupt: Cpt::new(
                Var::Mv,
                vec![Var::X, Var::U],
                [bern(0.1), bern(0.9), bern(0.2), bern(0.7)].concat(),
            ),
            md_given_x: Cpt::new(Var::Md, vec![Var::X], [bern(0.1), bern(0.8)].concat()),
            m_given_x: Cpt::new(Var::M, vec![Var::X], [bern(0.15), bern(0.85)].concat()),
            y_given: Cpt::from_fn(Var::Y, vec![Var::T, Var::M, Var::Z, Var::U], &cards, |p| {
                let (t, m, z, u) = (p[0] as f64, p[1] as f64, p[2] as f64, p[3] as f64);
                bern(0.05 + 0.2 * t + 0.35 * m + 0.15 * z + 0.2 * u)
            }),
            corruption_rho: 0.4,
            direct_x_to_y: false,
            embedding_dim: 3,
            embedding_seed: 11,
            embeddings: Embeddings::generate(&cards, 3, 11),
        };
        spec.refresh_embeddings();
        spec
    }

    #[test]
    fn demo_spec_is_valid() {
        assert!(demo2().validate().is_empty());
    }

    #[test]
    fn bad_row_sum_is_reported() {
        let mut spec = demo2();
        spec.t_given_z.probs[2] = 0.1;
        spec.t_given_z.probs[3] = 0.8; // row 1 sums to 0.9
        let report = spec.validate();
        assert_eq!(report.len(), 1);
        assert_eq!(report[0].table, "T_given_Z");
        assert_eq!(report[0].row, Some(1));
    }

    #[test]
    fn md_depending_on_u_is_structural_violation() {
        let mut spec = demo2();
        spec.md_given_x = Cpt::new(Var::Md, vec![Var::X, Var::U], vec![0.5; 8]);
        let report = spec.validate();
        assert_eq!(report.len(), 1);
        assert!(report[0].message.contains("structural"));
        assert!(spec.ensure_valid().is_err());
    }

    #[test]
    fn mediator_seeing_u_is_structural_violation() {
        let mut spec = demo2();
        spec.m_given_x = Cpt::new(Var::M, vec![Var::X, Var::U], vec![0.5; 8]);
        assert!(spec.validate().iter().any(|v| v.message.contains("structural")));
    }

    #[test]
    fn embeddings_unit_norm() {
        let spec = demo2();
        for e in spec.embeddings.t.iter().chain(&spec.embeddings.md) {
            assert!((e.norm2() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn var_names_round_trip() {
        for v in Var::ALL {
            assert_eq!(v.name().parse::<Var>().unwrap(), v);
        }
        assert!("Q".parse::<Var>().is_err());
    }
}
