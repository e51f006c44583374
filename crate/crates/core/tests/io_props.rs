mod common;

use std::path::Path;

use gridcount::io::{
    decode_model, encode_model, format_corpus, parse_corpus, parse_targets, Corpus, Model,
    TargetKind,
};
use gridcount::{embed, Bag, GridGeometry, LabelKind, PosteriorMap, Targets};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

/// Sorted `(doc, word, count)` triples, 0-based, with distinct (doc, word) pairs.
fn triples() -> impl Strategy<Value = (usize, usize, Vec<(usize, usize, u32)>)> {
    (1usize..12, 1usize..15).prop_flat_map(|(docs, vocab)| {
        (
            Just(docs),
            Just(vocab),
            prop::collection::btree_map((0..docs, 0..vocab), 1u32..1000, 0..40)
                .prop_map(|m| m.into_iter().map(|((d, w), c)| (d, w, c)).collect()),
        )
    })
}

fn text(docs: usize, vocab: usize, lines: &[(usize, usize, u32)]) -> String {
    let mut s = format!("{docs}\n{vocab}\n{}\n", lines.len());
    for &(d, w, c) in lines {
        s.push_str(&format!("{} {} {c}\n", d + 1, w + 1));
    }
    s
}

fn parse(s: &str) -> gridcount::Result<Corpus> {
    parse_corpus(s.as_bytes(), Path::new("mem"))
}

fn format(c: &Corpus) -> String {
    let mut out = Vec::new();
    format_corpus(&mut out, c).unwrap();
    String::from_utf8(out).unwrap()
}

proptest! {
    #[test]
    fn corpus_text_round_trips_up_to_line_order((docs, vocab, lines) in triples(), seed in any::<u64>()) {
        let sorted = text(docs, vocab, &lines);
        let mut shuffled = lines.clone();
        shuffled.shuffle(&mut common::rng(seed));
        let corpus = parse(&text(docs, vocab, &shuffled)).unwrap();
        prop_assert_eq!(corpus.bags.len(), docs);
        prop_assert_eq!(corpus.vocab_size, vocab);
        prop_assert_eq!(format(&corpus), sorted);
        prop_assert_eq!(parse(&format(&corpus)).unwrap(), corpus);
    }

    #[test]
    fn model_bytes_round_trip(seed in any::<u64>(), with_gamma in 0u8..3) {
        let mut rng = common::rng(seed);
        let dims = rng.gen_range(1..=3);
        let g = common::random_geometry(&mut rng, dims, 5);
        let vocab = rng.gen_range(1..6);
        let grid = common::random_grid(&mut rng, &g, vocab);
        let posts: Vec<PosteriorMap> = (0..3).map(|_| PosteriorMap::point_mass(g.clone(), rng.gen_range(0..g.cells()))).collect();
        let model = match with_gamma {
            0 => Model::new(grid),
            1 => Model::with_embedding(grid, embed(&posts, &Targets::discrete(vec![0, 2, 1]), 1e-6).unwrap()).unwrap(),
            _ => Model::with_embedding(grid, embed(&posts, &Targets::Continuous(vec![0.5, -1.0, 3.25]), 1e-6).unwrap()).unwrap(),
        };
        let bytes = encode_model(&model);
        let back = decode_model(&bytes).unwrap();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(back.grid.pi().values()), bits(model.grid.pi().values()));
        prop_assert_eq!(back.grid.geometry(), model.grid.geometry());
        match (&back.embedding, &model.embedding) {
            (None, None) => {}
            (Some(a), Some(b)) => {
                prop_assert_eq!(a.kind(), b.kind());
                prop_assert_eq!(bits(a.gamma()), bits(b.gamma()));
                prop_assert_eq!(bits(a.mass()), bits(b.mass()));
            }
            _ => prop_assert!(false, "embedding presence changed"),
        }
        prop_assert_eq!(encode_model(&back), bytes.clone());

        let cut = rng.gen_range(0..bytes.len());
        prop_assert!(decode_model(&bytes[..cut]).is_err());
    }
}

#[test]
fn minimal_corpus() {
    let c = parse("2\n3\n2\n1 1 5\n2 3 1\n").unwrap();
    assert_eq!(c.vocab_size, 3);
    assert_eq!(c.bags[0].entries(), &[(0, 5.0)]);
    assert_eq!(c.bags[1].entries(), &[(2, 1.0)]);
}

#[test]
fn missing_documents_become_empty_bags() {
    let c = parse("3\n2\n1\n2 2 4\n").unwrap();
    assert!(c.bags[0].is_degenerate());
    assert_eq!(c.bags[1].entries(), &[(1, 4.0)]);
    assert!(c.bags[2].is_degenerate());
}

#[test]
fn malformed_corpora_name_the_line() {
    let cases = [
        ("2\n3\n3\n1 1 5\n2 3 1\n", "expected 3 entries, found 2"),
        ("2\n3\n1\n1 4 1\n", "mem:4"),
        ("2\n3\n1\n3 1 1\n", "mem:4"),
        ("2\n3\n1\n1 1 -2\n", "mem:4"),
        ("2\nx\n1\n1 1 1\n", "mem:2"),
    ];
    for (input, needle) in cases {
        let err = parse(input).unwrap_err().to_string();
        assert!(err.contains(needle), "{input:?}: {err}");
    }
}

#[test]
fn target_files() {
    let t = parse_targets(
        "0\n1\n0\n".as_bytes(),
        Path::new("t"),
        TargetKind::Discrete,
        3,
    )
    .unwrap();
    assert_eq!(
        t,
        Targets::Discrete {
            labels: vec![0, 1, 0],
            classes: 2
        }
    );
    let err = parse_targets(
        "2.5\nNaN\n".as_bytes(),
        Path::new("t"),
        TargetKind::Continuous,
        2,
    )
    .unwrap_err();
    assert!(err.to_string().starts_with("t:2:"), "{err}");
    let empty = parse_targets("".as_bytes(), Path::new("t"), TargetKind::Continuous, 0).unwrap();
    assert!(empty.is_empty());
    assert!(parse_targets("1\n".as_bytes(), Path::new("t"), TargetKind::Discrete, 2).is_err());
}

#[test]
fn truncated_model_reports_missing_payload() {
    let g = GridGeometry::new(vec![3, 3], vec![2, 2]).unwrap();
    let grid = common::random_grid(&mut common::rng(2), &g, 4);
    let bytes = encode_model(&Model::new(grid));
    let err = decode_model(&bytes[..bytes.len() - 20]).unwrap_err();
    assert!(
        err.to_string().ends_with("unexpected end of model payload"),
        "{err}"
    );
}

#[test]
fn three_class_embedding_survives_the_model_file() {
    let g = GridGeometry::new(vec![4, 2], vec![2, 1]).unwrap();
    let grid = common::random_grid(&mut common::rng(8), &g, 3);
    let posts: Vec<PosteriorMap> = [0, 3, 5]
        .iter()
        .map(|&k| PosteriorMap::point_mass(g.clone(), k))
        .collect();
    let emb = embed(&posts, &Targets::discrete(vec![0, 1, 2]), 1e-6).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.model");
    gridcount::io::write_model(&path, &Model::with_embedding(grid, emb.clone()).unwrap()).unwrap();
    let back = gridcount::io::read_model(&path).unwrap();
    let got = back.embedding.unwrap();
    assert_eq!(got.kind(), LabelKind::Discrete { classes: 3 });
    assert_eq!(got.gamma(), emb.gamma());
}

#[test]
fn bags_reject_negative_counts() {
    assert!(Bag::new(0, [(1, -1.0)]).is_err());
    assert!(Bag::new(0, [(1, f64::NAN)]).is_err());
}
