mod common;

use cgsum::data::{BOS, EOS, UNK};
use cgsum::inference::{beam_search, beam_search_hypotheses, greedy_decode, Hypothesis};
use cgsum::layers::Initializer;
use cgsum::model::{Model, ModelConfig};
use common::{oracle_ranking, rng};
use rand::Rng;

fn random_model(src_v: usize, tgt_v: usize, dim: usize, seed: u64) -> Model<f64> {
    let cfg = ModelConfig::tiny(src_v, tgt_v, dim, seed);
    Model::build(cfg, &mut Initializer::with_range(seed, 1.0, true)).unwrap()
}

fn key(h: &Hypothesis) -> Vec<usize> {
    let mut k = h.tokens.clone();
    if h.finished {
        k.push(EOS);
    }
    k
}

#[test]
fn exhaustive_beam_matches_enumeration() {
    // target vocabulary of 6 leaves UNK, EOS and two words emittable
    for seed in 0..6 {
        let m = random_model(8, 6, 3, seed);
        let src = [4, 5 + (seed as usize % 3)];
        for norm in [false, true] {
            let oracle = oracle_ranking(&m, &src, 3, norm);
            assert_eq!(oracle.len(), 13 + 27);
            let hyps = beam_search_hypotheses(&m, &src, 64, 3, norm).unwrap();
            assert_eq!(hyps.len(), oracle.len());
            for (h, (score, k)) in hyps.iter().zip(&oracle) {
                assert!((h.score(norm) - score).abs() < 1e-12, "seed {seed} norm {norm}");
                if (h.score(norm) - score).abs() == 0.0 {
                    assert_eq!(&key(h), k);
                }
            }
            let best = beam_search(&m, &src, 64, 3, norm).unwrap();
            let mut expected = oracle[0].1.clone();
            if expected.last() == Some(&EOS) {
                expected.pop();
            }
            assert_eq!(best, expected, "seed {seed} norm {norm}");
        }
    }
}

#[test]
fn beam_of_one_is_greedy() {
    let mut r = rng(77);
    for seed in 0..50 {
        let m = random_model(12, 9, 3, 1000 + seed);
        let len = r.gen_range(1..7);
        let src: Vec<usize> = (0..len).map(|_| r.gen_range(UNK..12)).filter(|&t| t != BOS).collect();
        let src = if src.is_empty() { vec![4] } else { src };
        let greedy = greedy_decode(&m, &src, 8).unwrap();
        for norm in [false, true] {
            assert_eq!(beam_search(&m, &src, 1, 8, norm).unwrap(), greedy, "seed {seed}");
        }
    }
}

#[test]
fn exhaustive_beam_is_never_worse() {
    for seed in 0..10 {
        let m = random_model(8, 7, 3, 200 + seed);
        let src = [4, 6, 5];
        for norm in [false, true] {
            let best = beam_search_hypotheses(&m, &src, 4096, 4, norm).unwrap()[0].score(norm);
            for k in 1..=5 {
                let narrow = beam_search_hypotheses(&m, &src, k, 4, norm).unwrap()[0].score(norm);
                assert!(best >= narrow - 1e-12, "seed {seed} beam {k}: {best} < {narrow}");
            }
        }
    }
}

#[test]
fn hypotheses_are_sorted_and_decoding_is_deterministic() {
    let m = random_model(10, 8, 4, 300);
    let src = [4, 9, 7, 5];
    let a = beam_search_hypotheses(&m, &src, 5, 10, true).unwrap();
    for w in a.windows(2) {
        assert!(w[0].score(true) >= w[1].score(true));
    }
    for h in &a {
        assert!(h.tokens.len() <= 10);
        assert!(h.finished || h.tokens.len() == 10);
    }
    assert_eq!(a, beam_search_hypotheses(&m, &src, 5, 10, true).unwrap());
    assert_eq!(greedy_decode(&m, &src, 10).unwrap(), greedy_decode(&m, &src, 10).unwrap());
}

#[test]
fn decoding_rejects_bad_arguments() {
    let m = random_model(8, 6, 2, 1);
    assert!(matches!(beam_search(&m, &[4], 0, 5, true), Err(cgsum::Error::Config(_))));
    assert!(matches!(greedy_decode(&m, &[4], 0), Err(cgsum::Error::Config(_))));
    assert!(matches!(greedy_decode(&m, &[99], 3), Err(cgsum::Error::Input(_))));
}
