mod common;

use std::path::Path;

use bnstress_core::fixtures::{write_banksim_fixtures, write_toy_fixtures};

fn files(root: &Path) -> Vec<String> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().display().to_string());
            }
        }
    }
    out.sort();
    out
}

#[test]
fn checked_in_fixtures_match_the_generator() {
    let dir = tempfile::tempdir().unwrap();
    write_toy_fixtures(&dir.path().join("toy")).unwrap();
    write_banksim_fixtures(&dir.path().join("banksim")).unwrap();
    let fresh = files(dir.path());
    let checked = common::fixtures();
    assert_eq!(fresh, files(&checked));
    for rel in fresh {
        let a = std::fs::read(dir.path().join(&rel)).unwrap();
        let b = std::fs::read(checked.join(&rel)).unwrap();
        assert!(a == b, "{rel} differs; rerun the gen_fixtures example");
    }
}
