use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use crate::layout::Layout;

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{path}:{line}: {msg}")]
    Record {
        path: String,
        line: usize,
        msg: String,
    },
}

pub fn save_corpus(path: &Path, layouts: &[Layout]) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for l in layouts {
        writeln!(w, "{}", l.to_json())?;
    }
    w.flush()
}

/// Reads a newline-delimited corpus. Blank lines are skipped; an
/// unparsable record fails with its 1-based line number.
pub fn load_corpus(path: &Path) -> Result<Vec<Layout>, LoadError> {
    let p = path.display().to_string();
    let f = File::open(path).map_err(|source| LoadError::Io {
        path: p.clone(),
        source,
    })?;
    let mut out = Vec::new();
    for (k, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|source| LoadError::Io {
            path: p.clone(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let l = Layout::from_json(&line).map_err(|msg| LoadError::Record {
            path: p.clone(),
            line: k + 1,
            msg,
        })?;
        out.push(l);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn file_name(self) -> &'static str {
        match self {
            Split::Train => "train.jsonl",
            Split::Val => "val.jsonl",
            Split::Test => "test.jsonl",
        }
    }
}

/// Index ranges of a 90/5/5 split by position.
pub fn split_indices(n: usize) -> [std::ops::Range<usize>; 3] {
    let train = n * 90 / 100;
    let val = train + (n - train) / 2;
    [0..train, train..val, val..n]
}

/// Writes `corpus.jsonl` plus the three split files into `dir`.
pub fn write_splits(dir: &Path, layouts: &[Layout]) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    save_corpus(&dir.join("corpus.jsonl"), layouts)?;
    for (split, range) in Split::ALL.into_iter().zip(split_indices(layouts.len())) {
        save_corpus(&dir.join(split.file_name()), &layouts[range])?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_sizes() {
        assert_eq!(split_indices(1000), [0..900, 900..950, 950..1000]);
        assert_eq!(split_indices(0), [0..0, 0..0, 0..0]);
        assert_eq!(split_indices(7), [0..6, 6..6, 6..7]);
    }

    #[test]
    fn empty_and_truncated_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        fs::write(&p, "").unwrap();
        assert!(load_corpus(&p).unwrap().is_empty());
        let l = Layout::floorplan().to_json();
        fs::write(&p, format!("{l}\n{}", &l[..l.len() / 2])).unwrap();
        match load_corpus(&p) {
            Err(LoadError::Record { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }
}
