use std::path::Path;

use taskmcp::data::{load_corpus, load_rules, load_taxonomy, save_corpus, taxonomy_offenders, CorpusPaths};

fn fixtures() -> CorpusPaths {
    CorpusPaths::in_dir(&Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures"))
}

#[test]
fn corpus_round_trips_byte_identically() {
    let corpus = load_corpus(&fixtures()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let first = CorpusPaths::in_dir(&dir.path().join("a"));
    let second = CorpusPaths::in_dir(&dir.path().join("b"));
    save_corpus(&corpus, &first).unwrap();
    let reloaded = load_corpus(&first).unwrap();
    assert_eq!(reloaded.servers(), corpus.servers());
    assert_eq!(reloaded.tasks(), corpus.tasks());
    assert_eq!(reloaded.interactions(), corpus.interactions());
    save_corpus(&reloaded, &second).unwrap();
    for (a, b) in [(&first.mcp, &second.mcp), (&first.tasks, &second.tasks), (&first.interactions, &second.interactions)] {
        assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    }
}

#[test]
fn fixture_taxonomy_covers_the_corpus() {
    let corpus = load_corpus(&fixtures()).unwrap();
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let taxonomy = load_taxonomy(&dir.join("taxonomy.json")).unwrap();
    assert!(taxonomy_offenders(&corpus, &taxonomy).is_empty());
    load_rules(&dir.join("rules.json")).unwrap();
}

#[test]
fn malformed_line_names_file_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let paths = CorpusPaths::in_dir(dir.path());
    let src = fixtures();
    std::fs::copy(&src.tasks, &paths.tasks).unwrap();
    std::fs::copy(&src.interactions, &paths.interactions).unwrap();
    let mut servers = std::fs::read_to_string(&src.mcp).unwrap();
    servers.push_str("{not json\n");
    std::fs::write(&paths.mcp, servers).unwrap();
    let err = load_corpus(&paths).unwrap_err().to_string();
    assert!(err.contains("mcp.jsonl"), "{err}");
    assert!(err.contains("16"), "{err}");
}
