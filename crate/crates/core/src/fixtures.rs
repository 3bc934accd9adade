//! Bundled example models and problems.
//!
//! Everything here is built by deterministic formulas, and `ceres
//! gen-fixtures` writes the results to the fixture directory. Files on disk
//! are what the CLI loads. The builders are the source of truth and a test
//! checks that the two agree byte for byte.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CeresError, Result};
use crate::numeric::{Matrix, Vector};
use crate::qp::QpProblem;
use crate::scm::{Cards, Cpt, Embeddings, ScmSpec, Var};

pub const FIXTURES_ENV: &str = "CERES_FIXTURES";

pub const SCM_2STATE: &str = "scm_2state.json";
pub const SCM_4STATE: &str = "scm_4state.json";
pub const SCM_8STATE: &str = "scm_8state.json";
pub const SCM_NO_CONFOUNDER: &str = "scm_no_confounder.json";
pub const QP_PROBLEMS: &str = "qp_problems.json";

/// `$CERES_FIXTURES` if set, otherwise the `fixtures` directory of this crate.
pub fn fixture_dir() -> PathBuf {
    match std::env::var_os(FIXTURES_ENV) {
        Some(dir) => PathBuf::from(dir),
        None => PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures")),
    }
}

/// Distribution over `n` states with mass `peak` on `center` and the rest
/// spread evenly.
fn peaked(n: usize, center: usize, peak: f64) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    let rest = (1.0 - peak) / (n - 1) as f64;
    (0..n).map(|i| if i == center % n { peak } else { rest }).collect()
}

fn ramp(n: usize, increasing: bool) -> Vec<f64> {
    let total = (n * (n + 1) / 2) as f64;
    (0..n)
        .map(|i| {
            let k = if increasing { i + 1 } else { n - i };
            k as f64 / total
        })
        .collect()
}

/// Shared structure of the bundled SCMs.
///
/// `X` tracks `U`, so `X → Y` is confounded. `M`, `Md` and the base of `Mv`
/// all copy `X` with probability `0.7`. The corrupted `Mv` component moves
/// to `(x + u + 1) mod n`, so at `ρ > 0` the visual channel reads the
/// confounder. `Y` is a softmax over indicator features that weight the
/// mediator heaviest.
fn structured_spec(n: usize, y_card: usize, confounded: bool, embedding_seed: u64) -> ScmSpec {
    let mut cards = Cards::uniform(n);
    cards.set(Var::Y, y_card);
    if !confounded {
        cards.set(Var::Z, 1);
        cards.set(Var::U, 1);
    }
    let nz = cards.of(Var::Z);
    let nu = cards.of(Var::U);
    let y_row = |t: usize, m: usize, z: usize, u: usize| -> Vec<f64> {
        let logits: Vec<f64> = (0..y_card)
            .map(|y| {
                let hit = |v: usize| if v % y_card == y { 1.0 } else { 0.0 };
                1.5 * hit(m) + 1.0 * hit(u) + 0.5 * hit(t) + 0.3 * hit(z)
            })
            .collect();
        crate::numeric::softmax(&logits, 1.0).expect("finite").into_inner()
    };
    let mut spec = ScmSpec {
        cards,
        prior_z: ramp(nz, true),
        prior_u: ramp(nu, false),
        t_given_z: Cpt::from_fn(Var::T, vec![Var::Z], &cards, |p| peaked(n, p[0], 0.55)),
        x_given_u: Cpt::from_fn(Var::X, vec![Var::U], &cards, |p| peaked(n, p[0], 0.55)),
        mv_base: Cpt::from_fn(Var::Mv, vec![Var::X], &cards, |p| peaked(n, p[0], 0.7)),
        mv_corrupt: Cpt::from_fn(Var::Mv, vec![Var::X, Var::U], &cards, |p| peaked(n, p[0] + p[1] + 1, 0.7)),
        md_given_x: Cpt::from_fn(Var::Md, vec![Var::X], &cards, |p| peaked(n, p[0], 0.7)),
        m_given_x: Cpt::from_fn(Var::M, vec![Var::X], &cards, |p| peaked(n, p[0], 0.7)),
        y_given: Cpt::from_fn(Var::Y, vec![Var::T, Var::M, Var::Z, Var::U], &cards, |p| {
            y_row(p[0], p[1], p[2], p[3])
        }),
        corruption_rho: 0.5,
        direct_x_to_y: false,
        embedding_dim: 4,
        embedding_seed,
        embeddings: Embeddings::generate(&cards, 4, embedding_seed),
    };
    spec.refresh_embeddings();
    spec
}

pub fn scm_2state() -> ScmSpec {
    structured_spec(2, 2, true, 2)
}

/// The spec used for the mediator robustness study.
pub fn scm_4state() -> ScmSpec {
    structured_spec(4, 4, true, 4)
}

pub fn scm_8state() -> ScmSpec {
    structured_spec(8, 2, true, 8)
}

/// `Z` and `U` have a single state, so nothing is confounded.
pub fn scm_no_confounder() -> ScmSpec {
    structured_spec(3, 3, false, 3)
}

/// A named QP instance as stored in the fixture file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpFixture {
    pub name: String,
    #[serde(flatten)]
    pub problem: QpProblem,
}

#[derive(Serialize, Deserialize)]
struct QpFixtureFile {
    problems: Vec<QpFixture>,
}

/// `b = Gα* − s·1_{off}` makes `α*` optimal with multiplier `η_j = 2s` on
/// every coordinate outside its support.
fn planted(g: Matrix, alpha: &[f64], margin: f64) -> QpProblem {
    let ga = g.mul_slice(alpha).expect("square");
    let b: Vec<f64> = ga
        .iter()
        .zip(alpha)
        .map(|(v, a)| if *a > 0.0 { *v } else { v - margin })
        .collect();
    QpProblem::new(g, Vector::new(b).expect("finite")).expect("PSD by construction")
}

fn shifted_identity(n: usize, diag: f64, coupling: f64) -> Matrix {
    let mut g = Matrix::scaled_identity(n, diag).entries().to_vec();
    for e in g.iter_mut() {
        *e += coupling;
    }
    Matrix::new(n, n, g).expect("finite")
}

pub fn qp_problems() -> Vec<QpFixture> {
    // four nearly orthogonal unit tokens with the target aligned to the first
    let tokens = [
        [1.0, 0.1, 0.0, 0.0],
        [0.1, 1.0, 0.1, 0.0],
        [0.0, 0.1, 1.0, 0.1],
        [0.0, 0.0, 0.1, 1.0],
    ]
    .map(|t| Vector::new(t.to_vec()).expect("finite").normalized());
    let mu = Vector::new(vec![1.2, 0.0, -0.2, 0.0]).expect("finite");
    let vertex = QpProblem::from_tokens(&tokens, &mu).expect("valid tokens");
    vec![
        QpFixture {
            name: "token_vertex".into(),
            problem: vertex,
        },
        QpFixture {
            name: "interior".into(),
            problem: planted(shifted_identity(4, 20.0, 2.0), &[0.4, 0.3, 0.2, 0.1], 0.0),
        },
        QpFixture {
            name: "face".into(),
            problem: planted(shifted_identity(5, 20.0, 2.0), &[0.5, 0.3, 0.2, 0.0, 0.0], 1.0),
        },
    ]
}

pub fn qp_problems_json() -> String {
    let mut s = serde_json::to_string_pretty(&QpFixtureFile { problems: qp_problems() }).expect("serializable");
    s.push('\n');
    s
}

/// Every bundled fixture as `(file name, contents)`.
pub fn rendered() -> Vec<(&'static str, String)> {
    vec![
        (SCM_2STATE, scm_2state().to_json_string()),
        (SCM_4STATE, scm_4state().to_json_string()),
        (SCM_8STATE, scm_8state().to_json_string()),
        (SCM_NO_CONFOUNDER, scm_no_confounder().to_json_string()),
        (QP_PROBLEMS, qp_problems_json()),
    ]
}

pub fn write_all(dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    rendered()
        .into_iter()
        .map(|(name, body)| {
            let path = dir.join(name);
            std::fs::write(&path, body)?;
            Ok(path)
        })
        .collect()
}

pub fn load_scm(name: &str) -> Result<ScmSpec> {
    ScmSpec::load(&fixture_dir().join(name))
}

pub fn load_qp_problems() -> Result<Vec<QpFixture>> {
    load_qp_problems_from(&fixture_dir().join(QP_PROBLEMS))
}

pub fn load_qp_problems_from(path: &Path) -> Result<Vec<QpFixture>> {
    let text = std::fs::read_to_string(path).map_err(|e| CeresError::Io(format!("{}: {e}", path.display())))?;
    let file: QpFixtureFile = serde_json::from_str(&text)?;
    Ok(file.problems)
}
