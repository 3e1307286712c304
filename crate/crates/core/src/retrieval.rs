//! Demonstration selection over concatenated `[E_A, E_S]` embeddings.
//!
//! Search is exact and exhaustive. Distances are Euclidean over the raw
//! concatenated vectors (no normalization), accumulated in `f64`; ties are
//! broken by ascending sample id.
//!
//! # Binary store layout
//!
//! [`write_binary`] produces two files. `<path>` holds, all little-endian:
//!
//! | offset | size | content                                   |
//! |--------|------|-------------------------------------------|
//! | 0      | 4    | magic `b"STRV"`                           |
//! | 4      | 4    | `u32` format version, currently 1         |
//! | 8      | 4    | `u32` record count `n`                    |
//! | 12     | 4    | `u32` transcription dimension `d_a`       |
//! | 16     | 4    | `u32` translation dimension `d_s`         |
//! | 20     | ...  | `n * (d_a + d_s)` `f32` values, row-major |
//!
//! Row `i` is `E_A` followed by `E_S` of the `i`-th id in the manifest
//! `<path>.ids.json`, a JSON array of strings.

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::SplitMix64;

const MAGIC: &[u8; 4] = b"STRV";
const BINARY_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("embedding dimension mismatch for `{sample_id}`: expected {expected}, got {got}")]
    DimensionMismatch {
        sample_id: String,
        expected: usize,
        got: usize,
    },
    #[error("embedding for unknown sample id `{0}`")]
    UnknownSampleId(String),
    #[error("no embedding for sample `{0}`")]
    MissingEmbedding(String),
    #[error("duplicate embedding for sample `{0}`")]
    DuplicateId(String),
    #[error("cannot build an index from an empty store")]
    EmptyStore,
    #[error("requested {requested} candidates but only {available} are eligible")]
    InsufficientCandidates { requested: usize, available: usize },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid binary store: {0}")]
    BadBinary(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub sample_id: String,
    pub e_a: Vec<f32>,
    pub e_s: Vec<f32>,
}

impl EmbeddingRecord {
    /// Component-wise mean of `E_A` and of `E_S` over `members`.
    pub fn mean(sample_id: impl Into<String>, members: &[&EmbeddingRecord]) -> Self {
        assert!(!members.is_empty());
        let avg = |pick: fn(&EmbeddingRecord) -> &Vec<f32>| -> Vec<f32> {
            let dim = pick(members[0]).len();
            let mut acc = vec![0f64; dim];
            for m in members {
                for (a, &x) in acc.iter_mut().zip(pick(m)) {
                    *a += f64::from(x);
                }
            }
            acc.into_iter().map(|a| (a / members.len() as f64) as f32).collect()
        };
        Self {
            sample_id: sample_id.into(),
            e_a: avg(|r| &r.e_a),
            e_s: avg(|r| &r.e_s),
        }
    }

    pub fn concatenated(&self) -> Vec<f32> {
        let mut v = Vec::with_capacity(self.e_a.len() + self.e_s.len());
        v.extend_from_slice(&self.e_a);
        v.extend_from_slice(&self.e_s);
        v
    }
}

fn check_dims(records: &[EmbeddingRecord]) -> Result<(), RetrievalError> {
    let Some(first) = records.first() else {
        return Ok(());
    };
    let (d_a, d_s) = (first.e_a.len(), first.e_s.len());
    for r in records {
        if r.e_a.len() != d_a {
            return Err(RetrievalError::DimensionMismatch {
                sample_id: r.sample_id.clone(),
                expected: d_a,
                got: r.e_a.len(),
            });
        }
        if r.e_s.len() != d_s {
            return Err(RetrievalError::DimensionMismatch {
                sample_id: r.sample_id.clone(),
                expected: d_s,
                got: r.e_s.len(),
            });
        }
    }
    Ok(())
}

/// Reads the embedding JSONL (`{"sample_id", "e_a", "e_s"}` per line).
pub fn load_embeddings(path: &Path) -> Result<Vec<EmbeddingRecord>, RetrievalError> {
    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: EmbeddingRecord = serde_json::from_str(&line).map_err(|e| RetrievalError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    check_dims(&records)?;
    Ok(records)
}

/// Fails on the first record whose id is not accepted by `known`.
pub fn check_known_ids(
    records: &[EmbeddingRecord],
    known: impl Fn(&str) -> bool,
) -> Result<(), RetrievalError> {
    match records.iter().find(|r| !known(&r.sample_id)) {
        Some(r) => Err(RetrievalError::UnknownSampleId(r.sample_id.clone())),
        None => Ok(()),
    }
}

/// Exhaustive L2 index over concatenated `[E_A, E_S]` vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalIndex {
    ids: Vec<String>,
    data: Vec<f32>,
    d_a: usize,
    d_s: usize,
}

pub fn build_index(records: &[EmbeddingRecord]) -> Result<RetrievalIndex, RetrievalError> {
    let first = records.first().ok_or(RetrievalError::EmptyStore)?;
    check_dims(records)?;
    let (d_a, d_s) = (first.e_a.len(), first.e_s.len());
    let mut seen = HashSet::new();
    let mut data = Vec::with_capacity(records.len() * (d_a + d_s));
    for r in records {
        if !seen.insert(r.sample_id.as_str()) {
            return Err(RetrievalError::DuplicateId(r.sample_id.clone()));
        }
        data.extend_from_slice(&r.e_a);
        data.extend_from_slice(&r.e_s);
    }
    Ok(RetrievalIndex {
        ids: records.iter().map(|r| r.sample_id.clone()).collect(),
        data,
        d_a,
        d_s,
    })
}

fn l2(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

impl RetrievalIndex {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.d_a + self.d_s
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn contains(&self, id: &str) -> bool {
        self.ids.iter().any(|i| i == id)
    }

    fn row(&self, i: usize) -> &[f32] {
        let dim = self.dim();
        &self.data[i * dim..(i + 1) * dim]
    }

    fn eligible(&self, exclude: Option<&str>) -> usize {
        match exclude {
            Some(id) if self.contains(id) => self.len() - 1,
            _ => self.len(),
        }
    }

    /// The `m` nearest records to `[e_a, e_s]`, ascending by distance.
    pub fn query_top_m(
        &self,
        e_a: &[f32],
        e_s: &[f32],
        m: usize,
        exclude: Option<&str>,
    ) -> Result<Vec<(String, f64)>, RetrievalError> {
        if e_a.len() != self.d_a || e_s.len() != self.d_s {
            return Err(RetrievalError::DimensionMismatch {
                sample_id: "<query>".into(),
                expected: self.dim(),
                got: e_a.len() + e_s.len(),
            });
        }
        let mut query = Vec::with_capacity(self.dim());
        query.extend_from_slice(e_a);
        query.extend_from_slice(e_s);
        self.query_vector(&query, m, exclude)
    }

    /// Same as [`query_top_m`](Self::query_top_m) with a pre-concatenated query.
    pub fn query_vector(
        &self,
        query: &[f32],
        m: usize,
        exclude: Option<&str>,
    ) -> Result<Vec<(String, f64)>, RetrievalError> {
        if query.len() != self.dim() {
            return Err(RetrievalError::DimensionMismatch {
                sample_id: "<query>".into(),
                expected: self.dim(),
                got: query.len(),
            });
        }
        let available = self.eligible(exclude);
        if m == 0 || m > available {
            return Err(RetrievalError::InsufficientCandidates {
                requested: m,
                available,
            });
        }
        let mut scored: Vec<(f64, usize)> = (0..self.len())
            .filter(|&i| Some(self.ids[i].as_str()) != exclude)
            .map(|i| (l2(self.row(i), query), i))
            .collect();
        let order = |a: &(f64, usize), b: &(f64, usize)| {
            a.0.total_cmp(&b.0).then_with(|| self.ids[a.1].cmp(&self.ids[b.1]))
        };
        if m < scored.len() {
            scored.select_nth_unstable_by(m - 1, order);
            scored.truncate(m);
        }
        scored.sort_by(order);
        Ok(scored
            .into_iter()
            .map(|(d, i)| (self.ids[i].clone(), d))
            .collect())
    }

    /// `m` distinct ids drawn uniformly without replacement.
    ///
    /// Candidates are the index ids in insertion order minus `exclude`; the
    /// draw is a partial Fisher-Yates over their positions with
    /// `SplitMix64::new(seed)`.
    pub fn sample_random_m(
        &self,
        m: usize,
        seed: u64,
        exclude: Option<&str>,
    ) -> Result<Vec<String>, RetrievalError> {
        let pool: Vec<&String> = self
            .ids
            .iter()
            .filter(|id| Some(id.as_str()) != exclude)
            .collect();
        if m > pool.len() {
            return Err(RetrievalError::InsufficientCandidates {
                requested: m,
                available: pool.len(),
            });
        }
        let mut rng = SplitMix64::new(seed);
        Ok(rng
            .sample_indices(pool.len(), m)
            .into_iter()
            .map(|i| pool[i].clone())
            .collect())
    }
}

fn ids_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".ids.json");
    PathBuf::from(p)
}

pub fn write_binary(path: &Path, records: &[EmbeddingRecord]) -> Result<(), RetrievalError> {
    check_dims(records)?;
    let (d_a, d_s) = records
        .first()
        .map(|r| (r.e_a.len(), r.e_s.len()))
        .unwrap_or((0, 0));
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(MAGIC)?;
    for v in [BINARY_VERSION, records.len() as u32, d_a as u32, d_s as u32] {
        out.write_all(&v.to_le_bytes())?;
    }
    for r in records {
        for x in r.e_a.iter().chain(&r.e_s) {
            out.write_all(&x.to_le_bytes())?;
        }
    }
    out.flush()?;
    let ids: Vec<&str> = records.iter().map(|r| r.sample_id.as_str()).collect();
    fs::write(ids_path(path), serde_json::to_string(&ids).expect("ids serialize"))?;
    Ok(())
}

pub fn read_binary(path: &Path) -> Result<Vec<EmbeddingRecord>, RetrievalError> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 20 || &bytes[..4] != MAGIC {
        return Err(RetrievalError::BadBinary("missing STRV header".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    if word(4) != BINARY_VERSION as usize {
        return Err(RetrievalError::BadBinary(format!("unsupported version {}", word(4))));
    }
    let (n, d_a, d_s) = (word(8), word(12), word(16));
    let expected = 20 + n * (d_a + d_s) * 4;
    if bytes.len() != expected {
        return Err(RetrievalError::BadBinary(format!(
            "expected {expected} bytes, found {}",
            bytes.len()
        )));
    }
    let ids: Vec<String> = serde_json::from_str(&fs::read_to_string(ids_path(path))?)
        .map_err(|e| RetrievalError::BadBinary(format!("id manifest: {e}")))?;
    if ids.len() != n {
        return Err(RetrievalError::BadBinary(format!(
            "id manifest has {} entries for {n} rows",
            ids.len()
        )));
    }
    let floats: Vec<f32> = bytes[20..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let dim = d_a + d_s;
    Ok(ids
        .into_iter()
        .enumerate()
        .map(|(i, sample_id)| {
            let row = &floats[i * dim..(i + 1) * dim];
            EmbeddingRecord {
                sample_id,
                e_a: row[..d_a].to_vec(),
                e_s: row[d_a..].to_vec(),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, e_a: &[f32], e_s: &[f32]) -> EmbeddingRecord {
        EmbeddingRecord {
            sample_id: id.into(),
            e_a: e_a.to_vec(),
            e_s: e_s.to_vec(),
        }
    }

    #[test]
    fn hand_computed_distances() {
        let idx = build_index(&[rec("a", &[0.0], &[0.0]), rec("b", &[3.0], &[4.0])]).unwrap();
        let hits = idx.query_top_m(&[1.0], &[0.0], 2, None).unwrap();
        assert_eq!(hits[0], ("a".to_string(), 1.0));
        assert_eq!(hits[1].0, "b");
        assert!((hits[1].1 - 20f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn self_match_and_exclusion() {
        let idx = build_index(&[
            rec("a", &[1.0, 2.0], &[3.0]),
            rec("b", &[0.0, 0.0], &[0.0]),
            rec("c", &[1.0, 2.0], &[3.5]),
        ])
        .unwrap();
        let hits = idx.query_top_m(&[1.0, 2.0], &[3.0], 1, None).unwrap();
        assert_eq!(hits, vec![("a".to_string(), 0.0)]);
        let hits = idx.query_top_m(&[1.0, 2.0], &[3.0], 1, Some("a")).unwrap();
        assert_eq!(hits[0].0, "c");
        assert!(matches!(
            idx.query_top_m(&[1.0, 2.0], &[3.0], 3, Some("a")),
            Err(RetrievalError::InsufficientCandidates { requested: 3, available: 2 })
        ));
    }

    #[test]
    fn ties_break_by_id() {
        let idx = build_index(&[rec("z", &[1.0], &[0.0]), rec("m", &[-1.0], &[0.0])]).unwrap();
        let hits = idx.query_top_m(&[0.0], &[0.0], 2, None).unwrap();
        assert_eq!(hits[0].0, "m");
        assert_eq!(hits[1].0, "z");
    }

    #[test]
    fn concatenation_order_matters() {
        // Query E_A=(1,0), E_S=(0,0). Under [E_A, E_S] "x" is exact; under the
        // swapped order "y" would be.
        let idx = build_index(&[rec("x", &[1.0, 0.0], &[0.0, 0.0]), rec("y", &[0.0, 0.0], &[1.0, 0.0])]).unwrap();
        assert_eq!(idx.query_top_m(&[1.0, 0.0], &[0.0, 0.0], 1, None).unwrap()[0].0, "x");
        assert_eq!(rec("x", &[1.0], &[2.0]).concatenated(), vec![1.0, 2.0]);
    }

    #[test]
    fn full_ranking_is_permutation() {
        let records: Vec<_> = (0..10).map(|i| rec(&format!("r{i}"), &[i as f32], &[0.5])).collect();
        let idx = build_index(&records).unwrap();
        let mut ids: Vec<String> = idx.query_top_m(&[3.2], &[0.0], 10, None).unwrap().into_iter().map(|h| h.0).collect();
        ids.sort();
        let mut all: Vec<String> = records.iter().map(|r| r.sample_id.clone()).collect();
        all.sort();
        assert_eq!(ids, all);
    }

    #[test]
    fn dimension_errors() {
        assert!(matches!(build_index(&[]), Err(RetrievalError::EmptyStore)));
        let bad = [rec("a", &[0.0; 4], &[0.0; 4]), rec("b", &[0.0; 3], &[0.0; 4])];
        assert!(matches!(build_index(&bad), Err(RetrievalError::DimensionMismatch { .. })));
        let idx = build_index(&[rec("a", &[0.0; 4], &[0.0; 4])]).unwrap();
        assert_eq!(idx.dim(), 8);
        assert!(matches!(
            idx.query_top_m(&[0.0; 3], &[0.0; 4], 1, None),
            Err(RetrievalError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn jsonl_loading() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.jsonl");
        fs::write(
            &p,
            "{\"sample_id\":\"a\",\"e_a\":[1,2,3,4],\"e_s\":[0,0,0,0]}\n{\"sample_id\":\"b\",\"e_a\":[1,2,3,4],\"e_s\":[1,1,1,1]}\n",
        )
        .unwrap();
        assert_eq!(build_index(&load_embeddings(&p).unwrap()).unwrap().dim(), 8);
        fs::write(
            &p,
            "{\"sample_id\":\"a\",\"e_a\":[1,2,3,4],\"e_s\":[0]}\n{\"sample_id\":\"b\",\"e_a\":[1,2,3],\"e_s\":[1]}\n",
        )
        .unwrap();
        assert!(matches!(load_embeddings(&p), Err(RetrievalError::DimensionMismatch { .. })));
        fs::write(&p, "").unwrap();
        assert!(load_embeddings(&p).unwrap().is_empty());
    }

    #[test]
    fn unknown_ids() {
        let records = [rec("a", &[0.0], &[0.0]), rec("q", &[0.0], &[0.0])];
        assert!(matches!(
            check_known_ids(&records, |id| id == "a"),
            Err(RetrievalError::UnknownSampleId(id)) if id == "q"
        ));
    }

    #[test]
    fn random_selection() {
        let records: Vec<_> = (0..100).map(|i| rec(&format!("s{i:03}"), &[0.0], &[0.0])).collect();
        let idx = build_index(&records).unwrap();
        let a = idx.sample_random_m(5, 42, None).unwrap();
        assert_eq!(a, idx.sample_random_m(5, 42, None).unwrap());
        let all = idx.sample_random_m(100, 1, None).unwrap();
        let mut sorted = all.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 100);
        let ex = idx.sample_random_m(99, 1, Some("s005")).unwrap();
        assert!(!ex.contains(&"s005".to_string()));
        assert!(idx.sample_random_m(100, 1, Some("s005")).is_err());
    }

    #[test]
    fn binary_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("store.f32");
        let records = vec![rec("a", &[1.5, -2.0], &[0.25]), rec("b", &[0.0, 3.0], &[-1.0])];
        write_binary(&p, &records).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert_eq!(&bytes[..4], b"STRV");
        assert_eq!(bytes.len(), 20 + 2 * 3 * 4);
        assert_eq!(&bytes[20..24], &1.5f32.to_le_bytes());
        assert_eq!(read_binary(&p).unwrap(), records);
    }

    #[test]
    fn mean_record() {
        let a = rec("a", &[0.0, 2.0], &[1.0]);
        let b = rec("b", &[2.0, 4.0], &[3.0]);
        let m = EmbeddingRecord::mean("ab", &[&a, &b]);
        assert_eq!(m.e_a, vec![1.0, 3.0]);
        assert_eq!(m.e_s, vec![2.0]);
    }
}
