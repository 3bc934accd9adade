use ceres::backdoor::{build_dictionary, debias_text, expected_confounder_embedding, read_corpus, HeadRule, SeededEmbedder};
use ceres::fixtures;
use ceres::frontdoor::mediator_robustness_experiment;
use ceres::membank::MemoryBank;
use ceres::scm::Var;
use ceres::Vector;

#[test]
fn corpus_to_debiased_text_feature() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("queries.txt");
    std::fs::write(&path, "cut onion\nopen fridge door\n\ncut onion slowly\nwash plate\n").unwrap();
    let corpus = read_corpus(&path).unwrap();
    assert_eq!(corpus.len(), 4);
    let dict = build_dictionary(&corpus, &SeededEmbedder { dim: 6, seed: 1 }, &HeadRule).unwrap();
    assert_eq!(dict.len(), 3);
    let priors = dict.priors();
    let cut = dict.entries().iter().position(|e| e.verb == "cut").unwrap();
    assert!((priors[cut] - 0.5).abs() < 1e-15);
    let f_t = Vector::new(vec![0.5; 6]).unwrap();
    let debiased = debias_text(&f_t, &dict).unwrap();
    let shift = debiased.sub(&f_t).unwrap();
    assert!(shift.linf_distance(&expected_confounder_embedding(&dict)).unwrap() < 1e-15);
    let json = dict.to_json_string();
    let back: ceres::backdoor::ConfounderDictionary = serde_json::from_str(&json).unwrap();
    assert_eq!(back.entries(), dict.entries());
}

#[test]
fn samples_match_exact_marginals() {
    let spec = fixtures::load_scm(fixtures::SCM_4STATE).unwrap();
    let n = 40_000;
    let draws = spec.sample(3, n).unwrap();
    for var in [Var::X, Var::Mv, Var::Y] {
        let exact = spec.marginal(var).unwrap();
        for (k, p) in exact.probs.iter().enumerate() {
            let freq = draws.iter().filter(|d| d.get(var) == k).count() as f64 / n as f64;
            let sd = (p * (1.0 - p) / n as f64).sqrt();
            assert!((freq - p).abs() <= 4.0 * sd, "{var} = {k}: {freq} vs {p}");
        }
    }
}

#[test]
fn robustness_on_small_fixture_is_reproducible() {
    let spec = fixtures::load_scm(fixtures::SCM_2STATE).unwrap();
    let a = mediator_robustness_experiment(&spec, 0.5, 2000, 11, 8).unwrap();
    let b = mediator_robustness_experiment(&spec, 0.5, 2000, 11, 8).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.rows.len(), 8);
    assert_eq!(a.undercovered_seeds, 0);
}

#[test]
fn streaming_memory_bank_tracks_recent_frames() {
    let mut bank = MemoryBank::new(5, 1.0).unwrap();
    for t in 0..50i64 {
        let frame = Vector::new(vec![t as f64 * 0.01, 1.0]).unwrap();
        let ctx = bank.context(&frame).unwrap();
        if t == 0 {
            assert!(ctx.weights.is_none());
            assert_eq!(ctx.estimate, frame);
        } else {
            let lo = ((t - 5).max(0)) as f64 * 0.01;
            assert!(ctx.estimate[0] >= lo - 1e-12 && ctx.estimate[0] <= (t - 1) as f64 * 0.01 + 1e-12);
        }
        bank.push(frame, t).unwrap();
    }
    assert_eq!(bank.times(), vec![45, 46, 47, 48, 49]);
}
