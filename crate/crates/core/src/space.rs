//! Primitive vocabularies and the seen/unseen composition splits.
//!
//! A split-manifest directory holds `states.txt` and `objects.txt` (one name
//! per line, index = line number) and `train_pairs.csv`, `val_pairs.csv`,
//! `test_pairs.csv` with a `state,object` header. Rows name primitives, not
//! indices. Val/test rows that also occur in train are seen pairs; the rest
//! are unseen. Val/test files may carry a third `seen` column (`1`/`0`,
//! `true`/`false`) to mark unseen pairs explicitly, in which case a row
//! marked unseen that also appears in train is rejected as a split overlap.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const STATES_FILE: &str = "states.txt";
pub const OBJECTS_FILE: &str = "objects.txt";

/// A (state, object) composition by index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pair {
    pub state: usize,
    pub object: usize,
}

impl Pair {
    pub const fn new(state: usize, object: usize) -> Self {
        Pair { state, object }
    }
}

impl From<(usize, usize)> for Pair {
    fn from((state, object): (usize, usize)) -> Self {
        Pair { state, object }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn pairs_file(self) -> String {
        format!("{}_pairs.csv", self.name())
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

/// State and object vocabularies with their composition splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionSpace {
    pub states: Vec<String>,
    pub objects: Vec<String>,
    /// Training compositions, in manifest order.
    pub seen_pairs: Vec<Pair>,
    /// Seen compositions that also occur in the validation split.
    pub val_seen_pairs: Vec<Pair>,
    pub val_unseen_pairs: Vec<Pair>,
    /// Seen compositions that also occur in the test split.
    pub test_seen_pairs: Vec<Pair>,
    pub test_unseen_pairs: Vec<Pair>,
}

impl CompositionSpace {
    /// Space with no val/test pairs; convenient for entanglement-only work.
    pub fn with_seen(states: Vec<String>, objects: Vec<String>, seen_pairs: Vec<Pair>) -> Self {
        CompositionSpace {
            states,
            objects,
            seen_pairs,
            val_seen_pairs: Vec::new(),
            val_unseen_pairs: Vec::new(),
            test_seen_pairs: Vec::new(),
            test_unseen_pairs: Vec::new(),
        }
    }

    /// Anonymous vocabularies `s0..`, `o0..` of the given sizes.
    pub fn anonymous(n_states: usize, n_objects: usize, seen_pairs: Vec<Pair>) -> Self {
        Self::with_seen(
            (0..n_states).map(|i| format!("s{i}")).collect(),
            (0..n_objects).map(|i| format!("o{i}")).collect(),
            seen_pairs,
        )
    }

    /// Anonymous space with `n_seen` seen pairs laid out along wrapped
    /// diagonals, so every primitive is covered as soon as `n_seen` allows.
    /// Useful for reproducing the cardinalities of a real benchmark.
    pub fn diagonal_fill(n_states: usize, n_objects: usize, n_seen: usize) -> Self {
        let seen = (0..n_seen.min(n_states * n_objects))
            .map(|k| {
                let state = k % n_states;
                Pair::new(state, (state + k / n_states) % n_objects)
            })
            .collect();
        Self::anonymous(n_states, n_objects, seen)
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn n_objects(&self) -> usize {
        self.objects.len()
    }

    pub fn n_seen(&self) -> usize {
        self.seen_pairs.len()
    }

    /// Seen pairs in canonical (state, object) order; the training candidates.
    pub fn seen_candidates(&self) -> Vec<Pair> {
        let mut pairs = self.seen_pairs.clone();
        pairs.sort_unstable();
        pairs
    }

    pub fn unseen_pairs(&self, split: Split) -> &[Pair] {
        match split {
            Split::Train => &[],
            Split::Val => &self.val_unseen_pairs,
            Split::Test => &self.test_unseen_pairs,
        }
    }

    /// Candidate columns for a split: the sorted seen block followed by the
    /// sorted unseen block of that split. Returns the pairs and the number of
    /// seen columns.
    pub fn candidates(&self, split: Split) -> (Vec<Pair>, usize) {
        let mut pairs = self.seen_candidates();
        let n_seen = pairs.len();
        let mut unseen = self.unseen_pairs(split).to_vec();
        unseen.sort_unstable();
        pairs.extend(unseen);
        (pairs, n_seen)
    }

    pub fn is_seen(&self, pair: Pair) -> bool {
        self.seen_pairs.contains(&pair)
    }

    pub fn pair_name(&self, pair: Pair) -> String {
        format!(
            "{} {}",
            self.states.get(pair.state).map_or("?", String::as_str),
            self.objects.get(pair.object).map_or("?", String::as_str)
        )
    }

    /// Digest of the manifest contents, stable across re-serialisation.
    pub fn manifest_hash(&self) -> String {
        let mut text = String::new();
        for (name, file) in self.manifest_files() {
            text.push_str(name);
            text.push('\n');
            text.push_str(&file);
        }
        crate::hash::hex_digest(text.as_bytes())
    }

    fn pairs_csv(&self, pairs: impl IntoIterator<Item = Pair>) -> String {
        let mut out = String::from("state,object\n");
        for p in pairs {
            out.push_str(&self.states[p.state]);
            out.push(',');
            out.push_str(&self.objects[p.object]);
            out.push('\n');
        }
        out
    }

    fn manifest_files(&self) -> Vec<(&'static str, String)> {
        let lines = |names: &[String]| names.iter().map(|n| format!("{n}\n")).collect::<String>();
        let split_rows = |seen: &[Pair], unseen: &[Pair]| {
            self.pairs_csv(seen.iter().chain(unseen.iter()).copied())
        };
        vec![
            (STATES_FILE, lines(&self.states)),
            (OBJECTS_FILE, lines(&self.objects)),
            ("train_pairs.csv", self.pairs_csv(self.seen_pairs.iter().copied())),
            ("val_pairs.csv", split_rows(&self.val_seen_pairs, &self.val_unseen_pairs)),
            ("test_pairs.csv", split_rows(&self.test_seen_pairs, &self.test_unseen_pairs)),
        ]
    }
}

/// Write `space` as a split-manifest directory, creating it if needed.
pub fn write_space(dir: &Path, space: &CompositionSpace) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, contents) in space.manifest_files() {
        let path = dir.join(name);
        fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// Read and validate a split-manifest directory.
pub fn load_space(dir: &Path) -> Result<CompositionSpace> {
    let states = read_names(&dir.join(STATES_FILE))?;
    let objects = read_names(&dir.join(OBJECTS_FILE))?;
    let state_idx: HashMap<&str, usize> =
        states.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let object_idx: HashMap<&str, usize> =
        objects.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();

    let lookup = |path: &Path, row: &PairRow| -> Result<Pair> {
        let state = *state_idx.get(row.state.as_str()).ok_or_else(|| Error::UnknownPrimitive {
            path: path.to_path_buf(),
            name: row.state.clone(),
        })?;
        let object = *object_idx.get(row.object.as_str()).ok_or_else(|| Error::UnknownPrimitive {
            path: path.to_path_buf(),
            name: row.object.clone(),
        })?;
        Ok(Pair { state, object })
    };

    let train_path = dir.join(Split::Train.pairs_file());
    let mut seen_pairs = Vec::new();
    let mut seen_set = HashSet::new();
    for row in read_pairs(&train_path)? {
        let pair = lookup(&train_path, &row)?;
        if !seen_set.insert(pair) {
            return Err(Error::DuplicatePair {
                split: "train".into(),
                state: row.state,
                object: row.object,
            });
        }
        seen_pairs.push(pair);
    }

    let mut eval_splits = Vec::new();
    for split in [Split::Val, Split::Test] {
        let path = dir.join(split.pairs_file());
        let mut seen_part = Vec::new();
        let mut unseen_part = Vec::new();
        let mut dedup = HashSet::new();
        for row in read_pairs(&path)? {
            let pair = lookup(&path, &row)?;
            if !dedup.insert(pair) {
                return Err(Error::DuplicatePair {
                    split: split.name().into(),
                    state: row.state,
                    object: row.object,
                });
            }
            let in_train = seen_set.contains(&pair);
            match row.seen {
                Some(false) if in_train => {
                    return Err(Error::SplitOverlap {
                        state: row.state,
                        object: row.object,
                    })
                }
                Some(true) if !in_train => {
                    return Err(Error::Malformed {
                        path: path.clone(),
                        line: row.line,
                        reason: format!("pair {} {} marked seen but absent from train", row.state, row.object),
                    })
                }
                _ => {}
            }
            if in_train {
                seen_part.push(pair);
            } else {
                unseen_part.push(pair);
            }
        }
        eval_splits.push((seen_part, unseen_part));
    }
    let (test_seen_pairs, test_unseen_pairs) = eval_splits.pop().unwrap();
    let (val_seen_pairs, val_unseen_pairs) = eval_splits.pop().unwrap();

    let space = CompositionSpace {
        states,
        objects,
        seen_pairs,
        val_seen_pairs,
        val_unseen_pairs,
        test_seen_pairs,
        test_unseen_pairs,
    };
    let violations = validate_space(&space);
    if let Some(first) = violations.into_iter().next() {
        return Err(Error::InvalidSpace(first.to_string()));
    }
    Ok(space)
}

fn read_names(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines: Vec<&str> = text.lines().map(str::trim_end).collect();
    while lines.last().is_some_and(|l| l.is_empty()) {
        lines.pop();
    }
    let mut seen = HashSet::new();
    let mut names = Vec::with_capacity(lines.len());
    for (i, line) in lines.into_iter().enumerate() {
        let malformed = |reason: &str| Error::Malformed {
            path: path.to_path_buf(),
            line: i + 1,
            reason: reason.to_string(),
        };
        let name = line.trim();
        if name.is_empty() {
            return Err(malformed("empty name"));
        }
        if name.contains(',') {
            return Err(malformed("names may not contain commas"));
        }
        if !seen.insert(name) {
            return Err(malformed("duplicate name"));
        }
        names.push(name.to_string());
    }
    Ok(names)
}

struct PairRow {
    line: usize,
    state: String,
    object: String,
    seen: Option<bool>,
}

fn read_pairs(path: &Path) -> Result<Vec<PairRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let cols: Vec<&str> = header.iter().collect();
    let with_flag = match cols.as_slice() {
        ["state", "object"] => false,
        ["state", "object", "seen"] => true,
        _ => {
            return Err(Error::Malformed {
                path: path.to_path_buf(),
                line: 1,
                reason: format!("expected header `state,object`, found `{}`", cols.join(",")),
            })
        }
    };
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| csv_error(path, e))?;
        let malformed = |reason: String| Error::Malformed {
            path: path.to_path_buf(),
            line,
            reason,
        };
        if record.len() != cols.len() {
            return Err(malformed(format!("expected {} fields, found {}", cols.len(), record.len())));
        }
        let seen = if with_flag {
            Some(match &record[2] {
                "1" | "true" => true,
                "0" | "false" => false,
                other => return Err(malformed(format!("bad seen flag {other:?}"))),
            })
        } else {
            None
        };
        rows.push(PairRow {
            line,
            state: record[0].to_string(),
            object: record[1].to_string(),
            seen,
        });
    }
    Ok(rows)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(PathBuf::from(path), source),
        kind => Error::Malformed {
            path: path.to_path_buf(),
            line,
            reason: format!("{kind:?}"),
        },
    }
}

/// A broken [`CompositionSpace`] invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    EmptyStates,
    EmptyObjects,
    NoSeenPairs,
    OutOfRange { split: &'static str, pair: Pair },
    DuplicatePair { split: &'static str, pair: Pair },
    SplitOverlap { pair: Pair },
    SeenNotInTrain { split: &'static str, pair: Pair },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyStates => write!(f, "empty state vocabulary"),
            Violation::EmptyObjects => write!(f, "empty object vocabulary"),
            Violation::NoSeenPairs => write!(f, "no seen pairs"),
            Violation::OutOfRange { split, pair } => {
                write!(f, "pair out of range in {split}: ({}, {})", pair.state, pair.object)
            }
            Violation::DuplicatePair { split, pair } => {
                write!(f, "duplicate pair in {split}: ({}, {})", pair.state, pair.object)
            }
            Violation::SplitOverlap { pair } => {
                write!(f, "split overlap: ({}, {}) is seen and unseen", pair.state, pair.object)
            }
            Violation::SeenNotInTrain { split, pair } => write!(
                f,
                "seen pair in {split} absent from train: ({}, {})",
                pair.state, pair.object
            ),
        }
    }
}

/// Every invariant violation in `space`; empty iff the space is well formed.
pub fn validate_space(space: &CompositionSpace) -> Vec<Violation> {
    let mut out = Vec::new();
    if space.states.is_empty() {
        out.push(Violation::EmptyStates);
    }
    if space.objects.is_empty() {
        out.push(Violation::EmptyObjects);
    }
    if space.seen_pairs.is_empty() {
        out.push(Violation::NoSeenPairs);
    }
    let lists: [(&'static str, &[Pair]); 5] = [
        ("train", &space.seen_pairs),
        ("val seen", &space.val_seen_pairs),
        ("val unseen", &space.val_unseen_pairs),
        ("test seen", &space.test_seen_pairs),
        ("test unseen", &space.test_unseen_pairs),
    ];
    for (split, pairs) in lists {
        let mut dedup = BTreeSet::new();
        for &pair in pairs {
            if pair.state >= space.n_states() || pair.object >= space.n_objects() {
                out.push(Violation::OutOfRange { split, pair });
            }
            if !dedup.insert(pair) {
                out.push(Violation::DuplicatePair { split, pair });
            }
        }
    }
    let seen: HashSet<Pair> = space.seen_pairs.iter().copied().collect();
    let mut overlapping = BTreeSet::new();
    for pair in space.val_unseen_pairs.iter().chain(&space.test_unseen_pairs) {
        if seen.contains(pair) {
            overlapping.insert(*pair);
        }
    }
    out.extend(overlapping.into_iter().map(|pair| Violation::SplitOverlap { pair }));
    for (split, pairs) in [("val", &space.val_seen_pairs), ("test", &space.test_seen_pairs)] {
        for &pair in pairs.iter() {
            if !seen.contains(&pair) {
                out.push(Violation::SeenNotInTrain { split, pair });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_manifest(dir: &Path, states: &str, objects: &str, train: &str, val: &str, test: &str) {
        fs::write(dir.join(STATES_FILE), states).unwrap();
        fs::write(dir.join(OBJECTS_FILE), objects).unwrap();
        fs::write(dir.join("train_pairs.csv"), train).unwrap();
        fs::write(dir.join("val_pairs.csv"), val).unwrap();
        fs::write(dir.join("test_pairs.csv"), test).unwrap();
    }

    #[test]
    fn loads_minimal_manifest() {
        let dir = tempfile::tempdir().unwrap();
        write_manifest(
            dir.path(),
            "old\nnew\n",
            "cat\ndog\n",
            "state,object\nold,cat\n",
            "state,object\nold,cat\nnew,dog\n",
            "state,object\nnew,cat\n",
        );
        let space = load_space(dir.path()).unwrap();
        assert_eq!(space.n_states(), 2);
        assert_eq!(space.n_objects(), 2);
        assert_eq!(space.seen_pairs, vec![Pair::new(0, 0)]);
        assert_eq!(space.val_seen_pairs, vec![Pair::new(0, 0)]);
        assert_eq!(space.val_unseen_pairs, vec![Pair::new(1, 1)]);
        assert_eq!(space.test_unseen_pairs, vec![Pair::new(1, 0)]);
    }

    #[test]
    fn explicit_unseen_flag_on_train_pair_is_overlap() {
        let dir = tempfile::tempdir().unwrap();
        write_manifest(
            dir.path(),
            "old\nnew\n",
            "cat\ndog\n",
            "state,object\nold,cat\n",
            "state,object\nnew,dog\n",
            "state,object,seen\nold,cat,0\n",
        );
        let err = load_space(dir.path()).unwrap_err();
        assert!(err.to_string().contains("split overlap"), "{err}");
    }

    #[test]
    fn rejects_unknown_primitive_and_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        write_manifest(
            dir.path(),
            "old\n",
            "cat\n",
            "state,object\nold,bird\n",
            "state,object\n",
            "state,object\n",
        );
        assert!(matches!(load_space(dir.path()), Err(Error::UnknownPrimitive { .. })));

        write_manifest(
            dir.path(),
            "old\n",
            "cat\n",
            "state,object\nold,cat\nold,cat\n",
            "state,object\n",
            "state,object\n",
        );
        let err = load_space(dir.path()).unwrap_err();
        assert!(err.to_string().contains("duplicate pair"), "{err}");
    }

    #[test]
    fn rejects_malformed_rows_and_missing_files() {
        let dir = tempfile::tempdir().unwrap();
        write_manifest(
            dir.path(),
            "old\n",
            "cat\n",
            "state,object\nold\n",
            "state,object\n",
            "state,object\n",
        );
        assert!(matches!(load_space(dir.path()), Err(Error::Malformed { .. })));
        fs::write(dir.path().join("train_pairs.csv"), "state,object\nold,cat\n").unwrap();
        fs::remove_file(dir.path().join("val_pairs.csv")).unwrap();
        assert!(matches!(load_space(dir.path()), Err(Error::Io { .. })));
    }

    #[test]
    fn diagonal_fill_is_distinct_and_covering() {
        for (a, o, n) in [(16, 12, 83), (8, 3, 16), (3, 7, 21), (5, 5, 3)] {
            let space = CompositionSpace::diagonal_fill(a, o, n);
            let set: HashSet<Pair> = space.seen_pairs.iter().copied().collect();
            assert_eq!(set.len(), n);
            assert!(validate_space(&space).is_empty());
            if n >= a.max(o) {
                assert!((0..a).all(|s| set.iter().any(|p| p.state == s)));
                assert!((0..o).all(|b| set.iter().any(|p| p.object == b)));
            }
        }
    }

    #[test]
    fn validate_reports_each_violation() {
        let mut space = CompositionSpace::anonymous(2, 2, vec![Pair::new(0, 0), Pair::new(1, 1)]);
        assert!(validate_space(&space).is_empty());

        space.seen_pairs.push(Pair::new(0, 0));
        let v = validate_space(&space);
        assert!(v.iter().any(|v| v.to_string().starts_with("duplicate pair")), "{v:?}");
        space.seen_pairs.pop();

        space.test_unseen_pairs.push(Pair::new(1, 1));
        let v = validate_space(&space);
        assert!(v.iter().any(|v| v.to_string().starts_with("split overlap")), "{v:?}");
        space.test_unseen_pairs.clear();

        space.val_unseen_pairs.push(Pair::new(2, 0));
        assert!(matches!(validate_space(&space)[0], Violation::OutOfRange { .. }));
    }

    #[test]
    fn write_then_load_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let mut space = CompositionSpace::anonymous(3, 2, vec![Pair::new(2, 1), Pair::new(0, 0)]);
        space.val_seen_pairs = vec![Pair::new(0, 0)];
        space.val_unseen_pairs = vec![Pair::new(1, 1)];
        space.test_unseen_pairs = vec![Pair::new(1, 0), Pair::new(2, 0)];
        write_space(dir.path(), &space).unwrap();
        let back = load_space(dir.path()).unwrap();
        assert_eq!(back, space);
        assert_eq!(back.manifest_hash(), space.manifest_hash());
    }

    #[test]
    fn candidates_put_sorted_seen_block_first() {
        let mut space = CompositionSpace::anonymous(3, 2, vec![Pair::new(2, 1), Pair::new(0, 0)]);
        space.test_unseen_pairs = vec![Pair::new(2, 0), Pair::new(1, 0)];
        let (cands, n_seen) = space.candidates(Split::Test);
        assert_eq!(n_seen, 2);
        assert_eq!(
            cands,
            vec![Pair::new(0, 0), Pair::new(2, 1), Pair::new(1, 0), Pair::new(2, 0)]
        );
    }
}
