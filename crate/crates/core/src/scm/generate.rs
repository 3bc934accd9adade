//! Random valid specs for identity sweeps.

use rand::Rng;

use super::{Cards, Cpt, Embeddings, ScmSpec, Var};
use crate::rng::{dirichlet_flat, Stream};

#[derive(Debug, Clone, PartialEq)]
pub struct RandomSpecOptions {
    /// Cardinalities are drawn uniformly from `min_card..=max_card`.
    pub min_card: usize,
    pub max_card: usize,
    pub direct_x_to_y: bool,
    pub corruption_rho: f64,
    pub embedding_dim: usize,
}

impl Default for RandomSpecOptions {
    fn default() -> Self {
        RandomSpecOptions {
            min_card: 1,
            max_card: 8,
            direct_x_to_y: false,
            corruption_rho: 0.5,
            embedding_dim: 4,
        }
    }
}

/// A spec whose every row is a flat-Dirichlet draw.
pub fn random_spec(rng: &mut Stream, opts: &RandomSpecOptions) -> ScmSpec {
    assert!(opts.min_card >= 1 && opts.min_card <= opts.max_card);
    let mut cards = Cards([1; 8]);
    for v in Var::ALL {
        cards.set(v, rng.random_range(opts.min_card..=opts.max_card));
    }
    let mut table = |child: Var, parents: Vec<Var>| {
        let k = cards.of(child);
        Cpt::from_fn(child, parents, &cards, |_| dirichlet_flat(rng, k))
    };
    let t_given_z = table(Var::T, vec![Var::Z]);
    let x_given_u = table(Var::X, vec![Var::U]);
    let mv_base = table(Var::Mv, vec![Var::X]);
    let mv_corrupt = table(Var::Mv, vec![Var::X, Var::U]);
    let md_given_x = table(Var::Md, vec![Var::X]);
    let m_given_x = table(Var::M, vec![Var::X]);
    let mut y_parents = vec![Var::T, Var::M, Var::Z, Var::U];
    if opts.direct_x_to_y {
        y_parents.push(Var::X);
    }
    let y_given = table(Var::Y, y_parents);
    let prior_z = dirichlet_flat(rng, cards.of(Var::Z));
    let prior_u = dirichlet_flat(rng, cards.of(Var::U));
    let embedding_seed = rng.random::<u32>() as u64;
    ScmSpec {
        cards,
        prior_z,
        prior_u,
        t_given_z,
        x_given_u,
        mv_base,
        mv_corrupt,
        md_given_x,
        m_given_x,
        y_given,
        corruption_rho: opts.corruption_rho,
        direct_x_to_y: opts.direct_x_to_y,
        embedding_dim: opts.embedding_dim,
        embedding_seed,
        embeddings: Embeddings::generate(&cards, opts.embedding_dim, embedding_seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn random_specs_validate() {
        for i in 0..50 {
            let mut s = stream(5, i);
            let direct = i % 2 == 0;
            let spec = random_spec(
                &mut s,
                &RandomSpecOptions { direct_x_to_y: direct, ..Default::default() },
            );
            assert!(spec.validate().is_empty(), "{:?}", spec.validate());
            assert_eq!(spec.direct_x_to_y, direct);
        }
    }
}
