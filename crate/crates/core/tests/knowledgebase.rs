use proptest::prelude::*;
use ptco_core::changemining::{ChangePair, Label};
use ptco_core::knowledgebase::{
    cosine_similarity, tokenize, tokenize_diff, BlockSpec, BuildOptions, EmbeddingVector, HashingEmbedder, KbError,
    KnowledgeBase, KnowledgeEntry, Origin,
};
use ptco_core::testkit;
use rand::{rngs::StdRng, Rng, SeedableRng};

/// FNV-1a, 64 bit.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Hash embedding of one block, recomputed outside the store.
fn oracle_block_vector(tokens: &[String], dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    for t in tokens {
        v[(fnv1a(t.to_lowercase().as_bytes()) % dim as u64) as usize] += 1.0;
    }
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

fn oracle_entry_vector(diff: &str, dim: usize) -> Vec<f64> {
    let blocks = tokenize_diff(diff, BlockSpec::default(), "oracle");
    let mut mean = vec![0.0; dim];
    for b in &blocks {
        for (m, x) in mean.iter_mut().zip(oracle_block_vector(&b.tokens, dim)) {
            *m += x / blocks.len() as f64;
        }
    }
    mean
}

fn third_pair() -> ChangePair {
    let mut p = testkit::motivating_pair();
    p.change_p.version = "2".repeat(40);
    p.prod_new = p.prod_new.replace("Math.min", "Math.max");
    p.test_new = Some(p.test_old.replace("0.5), 1e-9", "0.5), 1e-6"));
    p
}

fn fixture_pairs() -> Vec<ChangePair> {
    vec![testkit::motivating_pair(), testkit::capitalize_pair(), third_pair()]
}

#[test]
fn stored_vectors_match_recomputed_hash_embeddings() {
    let embedder = HashingEmbedder::default();
    let built = KnowledgeBase::build(&fixture_pairs(), &embedder, BuildOptions::default()).unwrap();
    assert_eq!(built.kb.len(), 3);
    for e in built.kb.entries() {
        let want = oracle_entry_vector(&e.prod_diff_text, HashingEmbedder::DEFAULT_DIMENSION);
        assert_eq!(e.vector.values.len(), want.len());
        for (got, want) in e.vector.values.iter().zip(&want) {
            assert!((f64::from(*got) - want).abs() < 1e-6, "{got} vs {want}");
        }
    }
}

#[test]
fn only_positive_samples_are_admitted() {
    let mut pairs = fixture_pairs();
    pairs[1].label = Label::Negative;
    let built = KnowledgeBase::build(&pairs, &HashingEmbedder::default(), BuildOptions::default()).unwrap();
    assert_eq!(built.kb.len(), 2);
    assert_eq!(built.warnings.len(), 1);
}

#[test]
fn empty_corpus_builds_an_empty_store() {
    let built = KnowledgeBase::build(&[], &HashingEmbedder::default(), BuildOptions::default()).unwrap();
    assert!(built.kb.is_empty());
    assert!(!built.warnings.is_empty());
    let err = built.kb.retrieve_most_similar(&HashingEmbedder::default(), "x", 1).unwrap_err();
    assert!(matches!(err, KbError::EmptyStore));
}

#[test]
fn persisted_store_round_trips_and_rebuilds_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let embedder = HashingEmbedder::default();
    let build = || KnowledgeBase::build(&fixture_pairs(), &embedder, BuildOptions::default()).unwrap().kb;
    build().save(&tmp.path().join("a")).unwrap();
    build().save(&tmp.path().join("b")).unwrap();
    for f in ["entries.jsonl", "vectors.f32", "manifest.json"] {
        assert_eq!(
            std::fs::read(tmp.path().join("a").join(f)).unwrap(),
            std::fs::read(tmp.path().join("b").join(f)).unwrap(),
            "{f}"
        );
    }
    let raw = std::fs::read(tmp.path().join("a/vectors.f32")).unwrap();
    assert_eq!(raw.len(), 3 * HashingEmbedder::DEFAULT_DIMENSION * 4);
    let loaded = KnowledgeBase::load(&tmp.path().join("a")).unwrap();
    let original = build();
    assert_eq!(loaded.manifest(), original.manifest());
    assert_eq!(loaded.entries(), original.entries());
}

#[test]
fn self_retrieval_scores_one_and_k_is_capped() {
    let embedder = HashingEmbedder::default();
    let kb = KnowledgeBase::build(&fixture_pairs(), &embedder, BuildOptions::default()).unwrap().kb;
    let query = kb.entries()[1].prod_diff_text.clone();
    let hits = kb.retrieve_most_similar(&embedder, &query, 10).unwrap();
    assert_eq!(hits.len(), 3);
    assert_eq!(hits[0].entry.entry_id, kb.entries()[1].entry_id);
    assert!((hits[0].score - 1.0).abs() < 1e-6);
}

fn random_vector(rng: &mut StdRng, dim: usize) -> Vec<f32> {
    loop {
        let v: Vec<f32> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        if v.iter().any(|x| *x != 0.0) {
            return v;
        }
    }
}

fn random_store(rng: &mut StdRng, n: usize, dim: usize) -> KnowledgeBase {
    let entries = (0..n)
        .map(|i| KnowledgeEntry {
            entry_id: format!("kb-{:06}", i + 1),
            prod_diff_text: format!("entry {i}"),
            test_diff_text: String::new(),
            vector: EmbeddingVector::new(random_vector(rng, dim)),
            origin: Origin { group: "g".into(), project: "p".into(), version: "0".repeat(40) },
        })
        .collect();
    KnowledgeBase::from_entries("random", BlockSpec::default(), entries).unwrap()
}

fn brute_cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum();
    let na: f64 = a.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
    dot / (na * nb)
}

#[test]
fn ranking_equals_brute_force_over_ten_entries() {
    let mut rng = StdRng::seed_from_u64(10);
    let kb = random_store(&mut rng, 10, 16);
    let q = random_vector(&mut rng, 16);
    let mut expected: Vec<(f64, String)> =
        kb.entries().iter().map(|e| (brute_cosine(&q, &e.vector.values), e.entry_id.clone())).collect();
    expected.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    let got: Vec<String> =
        kb.nearest(&EmbeddingVector::new(q), 10).unwrap().iter().map(|s| s.entry.entry_id.clone()).collect();
    assert_eq!(got, expected.into_iter().map(|e| e.1).collect::<Vec<_>>());
}

#[test]
fn ties_break_by_entry_id() {
    let v = EmbeddingVector::new(vec![1.0, 0.0]);
    let entries = ["kb-000002", "kb-000001"]
        .iter()
        .map(|id| KnowledgeEntry {
            entry_id: id.to_string(),
            prod_diff_text: String::new(),
            test_diff_text: String::new(),
            vector: v.clone(),
            origin: Origin { group: String::new(), project: String::new(), version: String::new() },
        })
        .collect();
    let kb = KnowledgeBase::from_entries("t", BlockSpec::default(), entries).unwrap();
    let hits = kb.nearest(&v, 2).unwrap();
    assert_eq!(hits[0].entry.entry_id, "kb-000001");
}

/// Integer components, so scaling by an integer stays exact in `f32`.
fn vec_pair(dim: usize) -> impl Strategy<Value = (Vec<f32>, Vec<f32>)> {
    let comp = (-1000i32..1000).prop_map(|x| x as f32);
    (prop::collection::vec(comp.clone(), dim), prop::collection::vec(comp, dim))
        .prop_filter("non-zero", |(a, b)| a.iter().any(|x| *x != 0.0) && b.iter().any(|x| *x != 0.0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn cosine_is_symmetric_bounded_and_scale_invariant((a, b) in vec_pair(8), alpha in (1i32..1000).prop_map(|x| x as f32)) {
        let (va, vb) = (EmbeddingVector::new(a.clone()), EmbeddingVector::new(b));
        let ab = cosine_similarity(&va, &vb).unwrap();
        prop_assert!((ab - cosine_similarity(&vb, &va).unwrap()).abs() <= 1e-9);
        prop_assert!(ab.abs() <= 1.0 + 1e-12);
        let scaled = EmbeddingVector::new(a.iter().map(|x| x * alpha).collect());
        prop_assert!((cosine_similarity(&scaled, &vb).unwrap() - ab).abs() <= 1e-9);
    }
}

const VOCAB: &[&str] = &["return", "x", "mean", "a_1", "{", "}", "(", ")", ";", "=", "+", "-", "Stats", "double"];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn top_one_is_the_brute_force_argmax(seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let kb = random_store(&mut rng, 100, 12);
        let q = random_vector(&mut rng, 12);
        let best = kb
            .entries()
            .iter()
            .map(|e| brute_cosine(&q, &e.vector.values))
            .fold(f64::NEG_INFINITY, f64::max);
        let top = kb.nearest(&EmbeddingVector::new(q), 1).unwrap();
        prop_assert!((top[0].score - best).abs() <= 1e-9);
    }

    #[test]
    fn blocks_partition_the_token_stream(words in prop::collection::vec(prop::sample::select(VOCAB), 0..5000)) {
        let text = words.join(" ");
        let tokens = tokenize(&text);
        let blocks = tokenize_diff(&text, BlockSpec::default(), "e");
        prop_assert!(blocks.iter().all(|b| !b.tokens.is_empty() && b.tokens.len() <= 50));
        let joined: Vec<String> = blocks.iter().flat_map(|b| b.tokens.clone()).collect();
        prop_assert_eq!(joined, tokens);
        prop_assert!(blocks.iter().enumerate().all(|(i, b)| b.block_index == i));
    }
}

#[test]
fn token_count_oracle_for_120_tokens() {
    let text: String = (0..120).map(|i| format!("tok{} ", ["a", "b", "c"][i % 3])).collect::<String>();
    let expected = text.split_whitespace().count();
    assert_eq!(expected, 120);
    let sizes: Vec<usize> = tokenize_diff(&text, BlockSpec::default(), "e").iter().map(|b| b.tokens.len()).collect();
    assert_eq!(sizes, vec![50, 50, 20]);
}
