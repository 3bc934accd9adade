//! Exact queries by enumeration of the factored joint.
//!
//! Intervened variables lose their incoming table and are pinned to the
//! assigned state (graph mutilation). Variables that are not ancestors of
//! the query, evidence, or intervention set are barren and sum out to one,
//! so they are skipped.

use serde::Serialize;

use super::{decode, ScmSpec, Var};
use crate::error::{CeresError, Result};
use crate::numeric::stable_sum;

/// A probability vector over a finite support.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Distribution {
    pub probs: Vec<f64>,
}

impl Distribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(CeresError::InvalidInput("distribution support is empty".into()));
        }
        if let Some(i) = probs.iter().position(|p| !p.is_finite() || *p < 0.0) {
            return Err(CeresError::InvalidInput(format!(
                "probability {} at index {i} is invalid",
                probs[i]
            )));
        }
        let s = stable_sum(probs.iter().copied());
        if (s - 1.0).abs() > super::ROW_TOL {
            return Err(CeresError::InvalidInput(format!("probabilities sum to {s}")));
        }
        Ok(Distribution { probs })
    }

    /// Normalize nonnegative masses; `None` when the total mass is zero.
    pub fn from_masses(masses: Vec<f64>) -> Option<Self> {
        let total = stable_sum(masses.iter().copied());
        if !(total > 0.0) {
            return None;
        }
        Some(Distribution {
            probs: masses.into_iter().map(|m| m / total).collect(),
        })
    }

    pub fn point_mass(n: usize, i: usize) -> Self {
        let mut probs = vec![0.0; n];
        probs[i] = 1.0;
        Distribution { probs }
    }

    pub fn support(&self) -> usize {
        self.probs.len()
    }

    pub fn linf_distance(&self, other: &Distribution) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// `P(child | given)` laid out with `given` in mixed radix (first most
/// significant). Rows whose conditioning event has zero probability are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct CondTable {
    pub child: Var,
    pub given: Vec<Var>,
    pub given_cards: Vec<usize>,
    pub rows: Vec<Option<Distribution>>,
}

impl CondTable {
    pub fn row(&self, given_values: &[usize]) -> Option<&Distribution> {
        let r = self
            .given_cards
            .iter()
            .zip(given_values)
            .fold(0, |acc, (c, v)| acc * c + v);
        self.rows[r].as_ref()
    }
}

impl ScmSpec {
    fn relevant_set(&self, roots: &[Var], intervened: &[bool; 8]) -> [bool; 8] {
        let mut relevant = [false; 8];
        let mut stack: Vec<Var> = roots.to_vec();
        while let Some(v) = stack.pop() {
            if relevant[v.index()] {
                continue;
            }
            relevant[v.index()] = true;
            if !intervened[v.index()] {
                stack.extend(self.parents(v));
            }
        }
        relevant
    }

    /// Unnormalized marginal over `keep` (mixed radix, first most significant)
    /// with `evidence` restricted and `do_assignment` mutilated in.
    pub(crate) fn accumulate(
        &self,
        keep: &[Var],
        evidence: &[(Var, usize)],
        do_assignment: &[(Var, usize)],
    ) -> Result<Vec<f64>> {
        let mut fixed: [Option<usize>; 8] = [None; 8];
        let mut intervened = [false; 8];
        for &(v, s) in do_assignment.iter().chain(evidence) {
            if s >= self.cards.of(v) {
                return Err(CeresError::InvalidInput(format!(
                    "state {s} out of range for {v} (card {})",
                    self.cards.of(v)
                )));
            }
            if let Some(prev) = fixed[v.index()] {
                if prev != s {
                    return Err(CeresError::InvalidInput(format!(
                        "conflicting assignments for {v}"
                    )));
                }
            }
            fixed[v.index()] = Some(s);
        }
        for &(v, _) in do_assignment {
            intervened[v.index()] = true;
        }

        let roots: Vec<Var> = keep
            .iter()
            .chain(evidence.iter().map(|(v, _)| v))
            .chain(do_assignment.iter().map(|(v, _)| v))
            .copied()
            .collect();
        let relevant = self.relevant_set(&roots, &intervened);

        let free: Vec<Var> = Var::ALL
            .into_iter()
            .filter(|v| relevant[v.index()] && fixed[v.index()].is_none())
            .collect();
        let radices: Vec<usize> = free.iter().map(|v| self.cards.of(*v)).collect();
        let n_states: usize = radices.iter().product();
        let factors: Vec<Var> = Var::ALL
            .into_iter()
            .filter(|v| relevant[v.index()] && !intervened[v.index()])
            .collect();
        let keep_cards: Vec<usize> = keep.iter().map(|v| self.cards.of(*v)).collect();
        let mut out = vec![0.0; keep_cards.iter().product()];

        let mut assign = [0usize; 8];
        for (v, s) in fixed.iter().enumerate() {
            if let Some(s) = s {
                assign[v] = *s;
            }
        }
        let mut digits = vec![0usize; free.len()];
        for state in 0..n_states {
            decode(state, &radices, &mut digits);
            for (v, d) in free.iter().zip(&digits) {
                assign[v.index()] = *d;
            }
            let mut p = 1.0;
            for &f in &factors {
                p *= self.factor(f, &assign);
                if p == 0.0 {
                    break;
                }
            }
            if p == 0.0 {
                continue;
            }
            let cell = keep
                .iter()
                .zip(&keep_cards)
                .fold(0, |acc, (v, c)| acc * c + assign[v.index()]);
            out[cell] += p;
        }
        Ok(out)
    }

    /// `P(target | condition)` by summing the factored joint.
    pub fn observational(&self, target: Var, condition: &[(Var, usize)]) -> Result<Distribution> {
        self.ensure_valid()?;
        let masses = self.accumulate(&[target], condition, &[])?;
        Distribution::from_masses(masses).ok_or_else(|| {
            CeresError::ConditionUnsupported(format_assignment(condition))
        })
    }

    /// `P(target | do(assignment))` on the mutilated graph.
    pub fn intervene(&self, do_assignment: &[(Var, usize)], target: Var) -> Result<Distribution> {
        self.ensure_valid()?;
        if do_assignment.is_empty() {
            return Err(CeresError::InvalidInput("empty do-assignment".into()));
        }
        let masses = self.accumulate(&[target], &[], do_assignment)?;
        Distribution::from_masses(masses).ok_or_else(|| {
            CeresError::ConditionUnsupported(format!("do({})", format_assignment(do_assignment)))
        })
    }

    /// Observational conditional table `P(child | given)` from a single
    /// enumeration pass.
    pub fn conditional_table(&self, child: Var, given: &[Var]) -> Result<CondTable> {
        self.ensure_valid()?;
        let mut keep = given.to_vec();
        keep.push(child);
        let joint = self.accumulate(&keep, &[], &[])?;
        let k = self.cards.of(child);
        let rows = joint
            .chunks(k)
            .map(|chunk| Distribution::from_masses(chunk.to_vec()))
            .collect();
        Ok(CondTable {
            child,
            given: given.to_vec(),
            given_cards: given.iter().map(|v| self.cards.of(*v)).collect(),
            rows,
        })
    }

    /// Observational marginal `P(var)`.
    pub fn marginal(&self, var: Var) -> Result<Distribution> {
        self.observational(var, &[])
    }
}

fn format_assignment(a: &[(Var, usize)]) -> String {
    a.iter()
        .map(|(v, s)| format!("{v}={s}"))
        .collect::<Vec<_>>()
        .join(", ")
}

#[cfg(test)]
mod tests {
    use super::super::tests::demo2;
    use super::super::{Cpt, Embeddings};
    use super::*;

    /// Brute force over all 2^8 assignments of the demo spec, written out
    /// without the pruning or mutilation machinery.
    fn full_joint(spec: &ScmSpec, a: &[usize; 8]) -> f64 {
        let b = |p: &[f64], i: usize| p[i];
        let [z, u, t, x, mv, md, m, y] = *a;
        let c = &spec.cards;
        b(&spec.prior_z, z)
            * b(&spec.prior_u, u)
            * spec.t_given_z.row(c, &[z])[t]
            * spec.x_given_u.row(c, &[u])[x]
            * spec.mv_row(x, u)[mv]
            * spec.md_given_x.row(c, &[x])[md]
            * spec.m_given_x.row(c, &[x])[m]
            * spec.y_given.row(c, &[t, m, z, u])[y]
    }

    fn all_states() -> impl Iterator<Item = [usize; 8]> {
        (0..256usize).map(|s| {
            let mut a = [0; 8];
            for (i, slot) in a.iter_mut().enumerate() {
                *slot = (s >> (7 - i)) & 1;
            }
            a
        })
    }

    #[test]
    fn observational_matches_hand_enumeration() {
        let spec = demo2();
        let mut num = [0.0; 2];
        let mut den = 0.0;
        for a in all_states() {
            if a[2] == 0 {
                let p = full_joint(&spec, &a);
                num[a[7]] += p;
                den += p;
            }
        }
        let got = spec.observational(Var::Y, &[(Var::T, 0)]).unwrap();
        assert!((got.probs[0] - num[0] / den).abs() < 1e-14);
        assert!((got.probs[1] - num[1] / den).abs() < 1e-14);
    }

    #[test]
    fn marginal_sums_to_one() {
        let spec = demo2();
        for v in Var::ALL {
            let d = spec.marginal(v).unwrap();
            assert!((d.probs.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn intervention_matches_truncated_factorization() {
        let spec = demo2();
        // P(Y | do(X=1)) = sum over the joint with the X factor deleted
        let mut mass = [0.0; 2];
        for a in all_states() {
            if a[3] == 1 {
                let px = spec.x_given_u.row(&spec.cards, &[a[1]])[1];
                mass[a[7]] += full_joint(&spec, &a) / px;
            }
        }
        let got = spec.intervene(&[(Var::X, 1)], Var::Y).unwrap();
        assert!((got.probs[1] - mass[1]).abs() < 1e-14);
        let obs = spec.observational(Var::Y, &[(Var::X, 1)]).unwrap();
        assert!((obs.probs[1] - got.probs[1]).abs() > 1e-3, "confounding should show");
    }

    #[test]
    fn copy_of_t_gives_point_mass() {
        let mut spec = demo2();
        let cards = spec.cards;
        spec.y_given = Cpt::from_fn(Var::Y, vec![Var::T, Var::M, Var::Z, Var::U], &cards, |p| {
            if p[0] == 1 { vec![0.0, 1.0] } else { vec![1.0, 0.0] }
        });
        let d = spec.observational(Var::Y, &[(Var::T, 1)]).unwrap();
        assert_eq!(d.probs, vec![0.0, 1.0]);
    }

    #[test]
    fn do_on_non_cause_is_marginal() {
        let spec = demo2();
        // Md has no path to Y
        let d = spec.intervene(&[(Var::Md, 1)], Var::Y).unwrap();
        let m = spec.marginal(Var::Y).unwrap();
        assert!(d.linf_distance(&m) < 1e-15);
    }

    #[test]
    fn no_confounders_do_equals_conditioning() {
        let mut spec = demo2();
        let mut cards = spec.cards;
        cards.set(Var::Z, 1);
        cards.set(Var::U, 1);
        spec.cards = cards;
        spec.prior_z = vec![1.0];
        spec.prior_u = vec![1.0];
        spec.t_given_z = Cpt::new(Var::T, vec![Var::Z], vec![0.4, 0.6]);
        spec.x_given_u = Cpt::new(Var::X, vec![Var::U], vec![0.3, 0.7]);
        spec.mv_corrupt = Cpt::new(Var::Mv, vec![Var::X, Var::U], vec![0.5, 0.5, 0.1, 0.9]);
        spec.y_given = Cpt::from_fn(Var::Y, vec![Var::T, Var::M, Var::Z, Var::U], &cards, |p| {
            let q = 0.1 + 0.3 * p[0] as f64 + 0.5 * p[1] as f64;
            vec![1.0 - q, q]
        });
        spec.embeddings = Embeddings::generate(&cards, spec.embedding_dim, spec.embedding_seed);
        spec.ensure_valid().unwrap();
        for s in 0..2 {
            let a = spec.intervene(&[(Var::T, s)], Var::Y).unwrap();
            let b = spec.observational(Var::Y, &[(Var::T, s)]).unwrap();
            assert!(a.linf_distance(&b) < 1e-12);
            let a = spec.intervene(&[(Var::X, s)], Var::Y).unwrap();
            let b = spec.observational(Var::Y, &[(Var::X, s)]).unwrap();
            assert!(a.linf_distance(&b) < 1e-12);
        }
    }

    #[test]
    fn zero_probability_condition_is_rejected() {
        let mut spec = demo2();
        spec.prior_z = vec![1.0, 0.0];
        let r = spec.observational(Var::Y, &[(Var::Z, 1)]);
        assert!(matches!(r, Err(CeresError::ConditionUnsupported(_))));
    }

    #[test]
    fn invalid_spec_is_rejected() {
        let mut spec = demo2();
        spec.prior_u = vec![0.5, 0.6];
        assert!(matches!(
            spec.intervene(&[(Var::X, 0)], Var::Y),
            Err(CeresError::SpecError(_))
        ));
    }

    #[test]
    fn conditional_table_agrees_with_point_queries() {
        let spec = demo2();
        let table = spec.conditional_table(Var::Y, &[Var::T, Var::Z]).unwrap();
        for t in 0..2 {
            for z in 0..2 {
                let row = table.row(&[t, z]).unwrap();
                let direct = spec.observational(Var::Y, &[(Var::T, t), (Var::Z, z)]).unwrap();
                assert!(row.linf_distance(&direct) < 1e-15);
            }
        }
    }
}
