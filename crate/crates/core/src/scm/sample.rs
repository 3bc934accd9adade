//! Ancestral sampling.

use serde::Serialize;

use super::{ScmSpec, Var};
use crate::error::Result;
use crate::rng::{self, Stream};

/// One joint draw; every field is a state index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct ScmSample {
    pub z: usize,
    pub u: usize,
    pub t: usize,
    pub x: usize,
    pub m_v: usize,
    pub m_d: usize,
    pub m: usize,
    pub y: usize,
}

impl ScmSample {
    fn from_array(a: [usize; 8]) -> Self {
        let [z, u, t, x, m_v, m_d, m, y] = a;
        ScmSample { z, u, t, x, m_v, m_d, m, y }
    }

    pub fn get(&self, var: Var) -> usize {
        match var {
            Var::Z => self.z,
            Var::U => self.u,
            Var::T => self.t,
            Var::X => self.x,
            Var::Mv => self.m_v,
            Var::Md => self.m_d,
            Var::M => self.m,
            Var::Y => self.y,
        }
    }
}

impl ScmSpec {
    /// `n` ancestral draws from stream 0 of `seed`.
    pub fn sample(&self, seed: u64, n: usize) -> Result<Vec<ScmSample>> {
        let mut s = rng::stream(seed, 0);
        self.sample_with(&mut s, n)
    }

    /// `n` ancestral draws from an explicit stream.
    pub fn sample_with(&self, stream: &mut Stream, n: usize) -> Result<Vec<ScmSample>> {
        self.ensure_valid()?;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let mut a = [0usize; 8];
            for var in Var::ALL {
                let row = self.factor_row(var, &a);
                a[var.index()] = rng::categorical(stream, &row);
            }
            out.push(ScmSample::from_array(a));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::super::tests::demo2;
    use super::super::{Cpt, Var};
    use super::*;

    #[test]
    fn zero_draws() {
        assert!(demo2().sample(5, 0).unwrap().is_empty());
    }

    #[test]
    fn reproducible() {
        let spec = demo2();
        assert_eq!(spec.sample(42, 500).unwrap(), spec.sample(42, 500).unwrap());
        assert_ne!(spec.sample(42, 500).unwrap(), spec.sample(43, 500).unwrap());
    }

    #[test]
    fn point_mass_tables_force_assignment() {
        let mut spec = demo2();
        let c = spec.cards;
        let onehot = |i: usize| if i == 0 { vec![1.0, 0.0] } else { vec![0.0, 1.0] };
        spec.prior_z = onehot(1);
        spec.prior_u = onehot(0);
        spec.t_given_z = Cpt::from_fn(Var::T, vec![Var::Z], &c, |p| onehot(p[0]));
        spec.x_given_u = Cpt::from_fn(Var::X, vec![Var::U], &c, |_| onehot(1));
        spec.mv_base = Cpt::from_fn(Var::Mv, vec![Var::X], &c, |p| onehot(p[0]));
        spec.mv_corrupt = Cpt::from_fn(Var::Mv, vec![Var::X, Var::U], &c, |p| onehot(p[0]));
        spec.md_given_x = Cpt::from_fn(Var::Md, vec![Var::X], &c, |_| onehot(0));
        spec.m_given_x = Cpt::from_fn(Var::M, vec![Var::X], &c, |p| onehot(p[0]));
        spec.y_given = Cpt::from_fn(Var::Y, vec![Var::T, Var::M, Var::Z, Var::U], &c, |p| onehot(p[1]));
        let draws = spec.sample(99, 3).unwrap();
        let expected = ScmSample { z: 1, u: 0, t: 1, x: 1, m_v: 1, m_d: 0, m: 1, y: 1 };
        assert_eq!(draws, vec![expected; 3]);
    }

    #[test]
    fn empirical_marginal_within_three_sigma() {
        let spec = demo2();
        let n = 100_000;
        let draws = spec.sample(42, n).unwrap();
        let hits = draws.iter().filter(|s| s.y == 1).count() as f64;
        let p = spec.marginal(Var::Y).unwrap().probs[1];
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        assert!((hits / n as f64 - p).abs() <= 3.0 * sigma);
    }
}
