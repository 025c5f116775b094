//! Blind preference studies: bundles, sealed answer keys, vote logs and
//! selection ratios.
//!
//! A bundle directory holds
//!
//! ```text
//! study.json        study id, seed, key digest, queries (neutral image paths)
//! answer_key.json   method name per image column; never served
//! images/           q0000/0.png, q0000/1.png, ...
//! votes.jsonl       append-only vote log, created on first serve
//! ```
//!
//! Column 0 of every query is the original image. Raters see the columns in
//! a per-rater, per-query permutation under anonymous slot letters.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use base64::Engine;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const BUNDLE_FILE: &str = "study.json";
pub const KEY_FILE: &str = "answer_key.json";
pub const VOTE_LOG: &str = "votes.jsonl";
pub const ORIGINAL: &str = "original";

#[derive(Debug, thiserror::Error)]
pub enum StudyError {
    #[error("study {0:?} already exists")]
    DuplicateStudy(String),
    #[error("unknown study {0:?}")]
    UnknownStudy(String),
    #[error("unknown query {0:?}")]
    UnknownQuery(String),
    #[error("unknown slot {slot:?} for query {query_id:?}")]
    UnknownSlot { query_id: String, slot: String },
    #[error("rater id must be non-empty")]
    MissingRater,
    #[error("rater {rater:?} already voted on {query_id:?}")]
    AlreadyVoted { rater: String, query_id: String },
    #[error("invalid bundle: {0}")]
    Bundle(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, StudyError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StudyError + '_ {
    move |source| StudyError::Io { path: path.to_path_buf(), source }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryEntry {
    pub query_id: String,
    /// Class label shown to raters.
    pub label: usize,
    /// Image paths relative to the bundle, one per column.
    pub images: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub study_id: String,
    pub seed: u64,
    /// Hex SHA-256 of the answer-key file.
    pub key_sha256: String,
    pub queries: Vec<QueryEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnswerKey {
    pub study_id: String,
    /// Method per column; column 0 is [`ORIGINAL`].
    pub methods: Vec<String>,
}

/// One query ready for bundling: PNG bytes per column, original first.
pub struct QueryImages {
    pub label: usize,
    pub columns: Vec<Vec<u8>>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes a bundle. Fails if `dir` already holds a study.
pub fn write_bundle(
    dir: &Path,
    study_id: &str,
    seed: u64,
    methods: &[String],
    queries: &[QueryImages],
) -> Result<BundleManifest> {
    if study_id.is_empty() || study_id.contains('/') {
        return Err(StudyError::Bundle(format!("study id {study_id:?} must be a non-empty path segment")));
    }
    let existing = dir.join(BUNDLE_FILE);
    if existing.exists() {
        let prior: BundleManifest = serde_json::from_slice(&fs::read(&existing).map_err(io_err(&existing))?)?;
        return Err(StudyError::DuplicateStudy(prior.study_id));
    }
    let mut seen = HashSet::new();
    if methods.iter().any(|m| m == ORIGINAL || m.is_empty() || !seen.insert(m)) {
        return Err(StudyError::Bundle("method names must be unique, non-empty and not \"original\"".into()));
    }
    let mut columns = vec![ORIGINAL.to_string()];
    columns.extend(methods.iter().cloned());

    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let key = AnswerKey { study_id: study_id.into(), methods: columns };
    let key_bytes = serde_json::to_vec_pretty(&key)?;
    let key_path = dir.join(KEY_FILE);
    fs::write(&key_path, &key_bytes).map_err(io_err(&key_path))?;

    let mut entries = Vec::with_capacity(queries.len());
    for (i, q) in queries.iter().enumerate() {
        if q.columns.len() != key.methods.len() {
            return Err(StudyError::Bundle(format!(
                "query {i} has {} images, expected {}",
                q.columns.len(),
                key.methods.len()
            )));
        }
        let query_id = format!("q{i:04}");
        let mut images = Vec::with_capacity(q.columns.len());
        for (c, png) in q.columns.iter().enumerate() {
            let rel = format!("images/{query_id}/{c}.png");
            let path = dir.join(&rel);
            fs::create_dir_all(path.parent().expect("nested path")).map_err(io_err(&path))?;
            fs::write(&path, png).map_err(io_err(&path))?;
            images.push(rel);
        }
        entries.push(QueryEntry { query_id, label: q.label, images });
    }
    let manifest = BundleManifest {
        study_id: study_id.into(),
        seed,
        key_sha256: hex(&Sha256::digest(&key_bytes)),
        queries: entries,
    };
    fs::write(&existing, serde_json::to_vec_pretty(&manifest)?).map_err(io_err(&existing))?;
    Ok(manifest)
}

/// Column order shown to `rater` for `query_id`: position `i` shows column `perm[i]`.
pub fn slot_permutation(seed: u64, rater: &str, query_id: &str, columns: usize) -> Vec<usize> {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((rater.len() as u64).to_le_bytes());
    h.update(rater.as_bytes());
    h.update(query_id.as_bytes());
    let digest = h.finalize();
    let mut rng = ChaCha8Rng::from_seed(digest.into());
    let mut perm: Vec<usize> = (0..columns).collect();
    perm.shuffle(&mut rng);
    perm
}

/// Anonymous slot name for display position `i`: `A`, `B`, ...
pub fn slot_name(i: usize) -> String {
    let mut s = String::new();
    let mut n = i;
    loop {
        s.insert(0, (b'A' + (n % 26) as u8) as char);
        if n < 26 {
            break;
        }
        n = n / 26 - 1;
    }
    s
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotImage {
    pub slot: String,
    pub png_base64: String,
}

/// Payload of `GET /study/{id}/next`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryView {
    pub query_id: String,
    pub label: usize,
    pub images: Vec<SlotImage>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vote {
    pub query_id: String,
    pub rater: String,
    pub slot: String,
    /// Client idempotency token, logged for audit. Retries are deduplicated
    /// per `(rater, query_id)` whether or not it is present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
struct LoggedVote {
    query_id: String,
    rater: String,
    slot: String,
    column: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    token: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum VoteStatus {
    Recorded,
    /// Same vote seen before; counted once.
    Duplicate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodRatio {
    pub method: String,
    pub selections: u64,
    /// `selections / total`; absent when there are no votes.
    pub ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RaterResults {
    pub rater: String,
    pub total: u64,
    pub methods: Vec<MethodRatio>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyResults {
    pub study_id: String,
    pub total: u64,
    pub methods: Vec<MethodRatio>,
    pub per_rater: Vec<RaterResults>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub answered: usize,
    pub total: usize,
}

/// A loaded study with its vote state. Callers serialize access.
pub struct Study {
    manifest: BundleManifest,
    key: AnswerKey,
    images: HashMap<String, Vec<String>>,
    index: HashMap<String, usize>,
    /// `(rater, query_id) -> column`
    votes: BTreeMap<(String, String), usize>,
    log: File,
}

impl Study {
    /// Loads `dir`, verifying the key digest, and replays `votes.jsonl`.
    pub fn open(dir: &Path) -> Result<Self> {
        let mpath = dir.join(BUNDLE_FILE);
        let manifest: BundleManifest = serde_json::from_slice(&fs::read(&mpath).map_err(io_err(&mpath))?)?;
        let kpath = dir.join(KEY_FILE);
        let key_bytes = fs::read(&kpath).map_err(io_err(&kpath))?;
        if hex(&Sha256::digest(&key_bytes)) != manifest.key_sha256 {
            return Err(StudyError::Bundle("answer key does not match its recorded digest".into()));
        }
        let key: AnswerKey = serde_json::from_slice(&key_bytes)?;
        if key.study_id != manifest.study_id {
            return Err(StudyError::Bundle("answer key belongs to another study".into()));
        }
        let engine = base64::engine::general_purpose::STANDARD;
        let mut images = HashMap::new();
        let mut index = HashMap::new();
        for (i, q) in manifest.queries.iter().enumerate() {
            if q.images.len() != key.methods.len() {
                return Err(StudyError::Bundle(format!("{} has {} images", q.query_id, q.images.len())));
            }
            let encoded = q
                .images
                .iter()
                .map(|rel| {
                    let p = dir.join(rel);
                    fs::read(&p).map(|b| engine.encode(b)).map_err(io_err(&p))
                })
                .collect::<Result<Vec<_>>>()?;
            images.insert(q.query_id.clone(), encoded);
            if index.insert(q.query_id.clone(), i).is_some() {
                return Err(StudyError::Bundle(format!("query {} listed twice", q.query_id)));
            }
        }
        let lpath = dir.join(VOTE_LOG);
        let mut votes = BTreeMap::new();
        if lpath.exists() {
            let reader = BufReader::new(File::open(&lpath).map_err(io_err(&lpath))?);
            for line in reader.lines() {
                let line = line.map_err(io_err(&lpath))?;
                if line.trim().is_empty() {
                    continue;
                }
                let v: LoggedVote = serde_json::from_str(&line)?;
                votes.entry((v.rater, v.query_id)).or_insert(v.column);
            }
        }
        let log = OpenOptions::new().create(true).append(true).open(&lpath).map_err(io_err(&lpath))?;
        Ok(Self { manifest, key, images, index, votes, log })
    }

    pub fn id(&self) -> &str {
        &self.manifest.study_id
    }

    pub fn len(&self) -> usize {
        self.manifest.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.queries.is_empty()
    }

    fn permutation(&self, rater: &str, query_id: &str) -> Vec<usize> {
        slot_permutation(self.manifest.seed, rater, query_id, self.key.methods.len())
    }

    /// First query `rater` has not voted on, or `None` once all are done.
    pub fn next(&self, rater: &str) -> Result<Option<QueryView>> {
        if rater.is_empty() {
            return Err(StudyError::MissingRater);
        }
        let Some(q) = self
            .manifest
            .queries
            .iter()
            .find(|q| !self.votes.contains_key(&(rater.to_string(), q.query_id.clone())))
        else {
            return Ok(None);
        };
        let encoded = &self.images[&q.query_id];
        let images = self
            .permutation(rater, &q.query_id)
            .into_iter()
            .enumerate()
            .map(|(pos, col)| SlotImage { slot: slot_name(pos), png_base64: encoded[col].clone() })
            .collect();
        Ok(Some(QueryView { query_id: q.query_id.clone(), label: q.label, images }))
    }

    pub fn progress(&self, rater: &str) -> Progress {
        let answered = self.votes.keys().filter(|(r, _)| r == rater).count();
        Progress { answered, total: self.len() }
    }

    /// Records a vote. Repeating an identical vote is accepted and counted
    /// once; a different slot for an answered query is refused.
    pub fn vote(&mut self, vote: &Vote) -> Result<VoteStatus> {
        if vote.rater.is_empty() {
            return Err(StudyError::MissingRater);
        }
        if !self.index.contains_key(&vote.query_id) {
            return Err(StudyError::UnknownQuery(vote.query_id.clone()));
        }
        let perm = self.permutation(&vote.rater, &vote.query_id);
        let column = (0..perm.len())
            .find(|&pos| slot_name(pos) == vote.slot)
            .map(|pos| perm[pos])
            .ok_or_else(|| StudyError::UnknownSlot { query_id: vote.query_id.clone(), slot: vote.slot.clone() })?;
        let k = (vote.rater.clone(), vote.query_id.clone());
        if let Some(&prior) = self.votes.get(&k) {
            return if prior == column {
                Ok(VoteStatus::Duplicate)
            } else {
                Err(StudyError::AlreadyVoted { rater: vote.rater.clone(), query_id: vote.query_id.clone() })
            };
        }
        let entry = LoggedVote { query_id: vote.query_id.clone(), rater: vote.rater.clone(), slot: vote.slot.clone(), column, token: vote.token.clone() };
        let mut line = serde_json::to_string(&entry)?;
        line.push('\n');
        self.log
            .write_all(line.as_bytes())
            .and_then(|_| self.log.flush())
            .map_err(|source| StudyError::Io { path: VOTE_LOG.into(), source })?;
        self.votes.insert(k, column);
        Ok(VoteStatus::Recorded)
    }

    /// Selection ratios per method, overall and per rater.
    pub fn results(&self) -> StudyResults {
        let tally = |filter: &dyn Fn(&str) -> bool| {
            let mut counts = vec![0u64; self.key.methods.len()];
            for ((rater, _), &col) in &self.votes {
                if filter(rater) {
                    counts[col] += 1;
                }
            }
            let total: u64 = counts.iter().sum();
            let methods = self
                .key
                .methods
                .iter()
                .zip(counts)
                .map(|(m, c)| MethodRatio {
                    method: m.clone(),
                    selections: c,
                    ratio: (total > 0).then(|| c as f64 / total as f64),
                })
                .collect();
            (total, methods)
        };
        let raters: Vec<String> = self.votes.keys().map(|(r, _)| r.clone()).collect::<HashSet<_>>().into_iter().collect();
        let mut per_rater: Vec<RaterResults> = raters
            .into_iter()
            .map(|r| {
                let (total, methods) = tally(&|x| x == r);
                RaterResults { rater: r, total, methods }
            })
            .collect();
        per_rater.sort_by(|a, b| a.rater.cmp(&b.rater));
        let (total, methods) = tally(&|_| true);
        StudyResults { study_id: self.manifest.study_id.clone(), total, methods, per_rater }
    }
}
