use std::fs;

use emo2vec_core::corpus::{
    load_corpus_dir, load_hashtag_map, load_labeled_file, split_documents, LabeledDocument,
    DEFAULT_SPLIT,
};
use emo2vec_core::synthetic::{transfer_suite, write_corpus_dir, SuiteConfig};
use emo2vec_core::Error;
use proptest::prelude::*;
use tempfile::TempDir;

fn docs(n: usize) -> Vec<LabeledDocument> {
    (0..n)
        .map(|i| LabeledDocument {
            text: format!("doc {i}"),
            label: i % 3,
        })
        .collect()
}

#[test]
fn corpus_directory_roundtrip() {
    let cfg = SuiteConfig {
        large_docs: 150,
        ..SuiteConfig::default()
    };
    let tmp = TempDir::new().unwrap();
    write_corpus_dir(tmp.path(), &cfg).unwrap();
    let loaded = load_corpus_dir(tmp.path(), cfg.seed).unwrap();
    let built = transfer_suite(&cfg).unwrap();
    assert_eq!(loaded.smalls, built.smalls);
    assert_eq!(loaded.large.label_names, built.large.label_names);
    let sorted = |ds: &emo2vec_core::Dataset| {
        let mut v: Vec<_> = ds.all_docs().map(|d| (d.text.clone(), d.label)).collect();
        v.sort();
        v
    };
    assert_eq!(sorted(&loaded.large), sorted(&built.large));
    assert_eq!(loaded.large.train.len(), built.large.train.len());
}

#[test]
fn parse_errors_name_the_line() {
    let tmp = TempDir::new().unwrap();
    let p = tmp.path().join("bad.tsv");
    fs::write(&p, "joy\tfine line\njoy\tanother\nno tab here\n").unwrap();
    match load_labeled_file(&p) {
        Err(Error::Parse { line, path, .. }) => {
            assert_eq!(line, 3);
            assert_eq!(path, p);
        }
        other => panic!("expected parse error, got {other:?}"),
    }
    let h = tmp.path().join("map.tsv");
    fs::write(&h, "happy\tjoy\nsad\n").unwrap();
    assert!(matches!(
        load_hashtag_map(&h),
        Err(Error::Parse { line: 2, .. })
    ));
}

#[test]
fn missing_corpus_is_an_io_error() {
    let tmp = TempDir::new().unwrap();
    let err = load_corpus_dir(&tmp.path().join("nope"), 13).unwrap_err();
    assert!(err.to_string().contains("nope"), "{err}");
}

#[test]
fn split_rounds_dev_and_test_down() {
    let s = split_documents(docs(20), DEFAULT_SPLIT, 1).unwrap();
    assert_eq!((s.train.len(), s.dev.len(), s.test.len()), (14, 3, 3));
    let s = split_documents(docs(19), DEFAULT_SPLIT, 1).unwrap();
    assert_eq!((s.train.len(), s.dev.len(), s.test.len()), (15, 2, 2));
    assert!(split_documents(docs(2), DEFAULT_SPLIT, 1).is_err());
    assert!(split_documents(docs(20), (0.5, 0.5, 0.5), 1).is_err());
}

proptest! {
    #[test]
    fn split_partitions_the_documents(n in 3usize..300, seed in any::<u64>()) {
        let s = split_documents(docs(n), DEFAULT_SPLIT, seed).unwrap();
        prop_assert_eq!(s.train.len() + s.dev.len() + s.test.len(), n);
        let mut all: Vec<String> = s.train.iter().chain(&s.dev).chain(&s.test)
            .map(|d| d.text.clone()).collect();
        all.sort();
        let mut want: Vec<String> = docs(n).into_iter().map(|d| d.text).collect();
        want.sort();
        prop_assert_eq!(all, want);
        let again = split_documents(docs(n), DEFAULT_SPLIT, seed).unwrap();
        prop_assert_eq!(again, s);
    }
}
