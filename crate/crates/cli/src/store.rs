//! File-backed project store: a project description, the initial seeds, and
//! an append-only log of round events that replays to the live session.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use triage_core::pipeline::{Generator, GeneratorConfig, PipelineConfig, RoundEvent, Session};
use triage_core::{load_corpus, load_word_vectors, Embedders, Error, LabeledCorpus};

/// Environment variable naming the store root.
pub const STORE_ENV: &str = "TRIAGE_STORE";

const PROJECT_FILE: &str = "project.json";
const SEEDS_FILE: &str = "seeds.jsonl";
const LOG_FILE: &str = "rounds.log";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("store already initialized at {0}")]
    Exists(PathBuf),
    #[error("no store at {0}; start `serve` with --seeds or --synthetic to create one")]
    Missing(PathBuf),
    #[error("{path} line {line}: {message}")]
    Log {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

pub type StoreResult<T> = std::result::Result<T, StoreError>;

/// Everything besides the seeds and the log needed to rebuild a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Project {
    pub pipeline: PipelineConfig,
    /// Synthetic paraphrase source; also supplies word vectors.
    #[serde(default)]
    pub generator: Option<GeneratorConfig>,
    /// Word-vector file, used when there is no generator.
    #[serde(default)]
    pub vectors: Option<PathBuf>,
    #[serde(default)]
    pub vector_dim: Option<usize>,
}

impl Project {
    fn embedders(&self, generator: Option<&Generator>) -> StoreResult<Embedders> {
        if let Some(path) = &self.vectors {
            return Ok(Embedders::with_words(load_word_vectors(
                path,
                self.vector_dim,
            )?));
        }
        match generator {
            Some(g) => Ok(Embedders::with_words(g.word_vectors())),
            None => Err(Error::Config("project needs a generator or a vector file".into()).into()),
        }
    }
}

#[derive(Debug)]
pub struct Store {
    root: PathBuf,
    log: File,
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |e| Error::io(path, e).into()
}

impl Store {
    pub fn exists(root: &Path) -> bool {
        root.join(PROJECT_FILE).is_file()
    }

    /// Creates a store and returns it with a fresh session.
    pub fn init(
        root: &Path,
        project: &Project,
        seeds: &LabeledCorpus,
    ) -> StoreResult<(Store, Session)> {
        if Self::exists(root) {
            return Err(StoreError::Exists(root.to_path_buf()));
        }
        fs::create_dir_all(root).map_err(io(root))?;
        // Build the session first so a bad project never reaches disk.
        let session = Self::session(project, seeds.clone())?;
        let seeds_path = root.join(SEEDS_FILE);
        seeds.save(&seeds_path)?;
        let project_path = root.join(PROJECT_FILE);
        let json = serde_json::to_string_pretty(project).map_err(Error::from)?;
        fs::write(&project_path, json + "\n").map_err(io(&project_path))?;
        let log = open_log(&root.join(LOG_FILE))?;
        Ok((
            Store {
                root: root.to_path_buf(),
                log,
            },
            session,
        ))
    }

    /// Opens a store and replays its log. A torn final line, left by a
    /// crash mid-write, is dropped from the file.
    pub fn open(root: &Path) -> StoreResult<(Store, Session)> {
        if !Self::exists(root) {
            return Err(StoreError::Missing(root.to_path_buf()));
        }
        let project_path = root.join(PROJECT_FILE);
        let text = fs::read_to_string(&project_path).map_err(io(&project_path))?;
        let project: Project = serde_json::from_str(&text).map_err(Error::from)?;
        let seeds = load_corpus(root.join(SEEDS_FILE))?;
        let mut session = Self::session(&project, seeds)?;

        let log_path = root.join(LOG_FILE);
        repair_tail(&log_path)?;
        let file = File::open(&log_path).map_err(io(&log_path))?;
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(io(&log_path))?;
            if line.trim().is_empty() {
                continue;
            }
            let event: RoundEvent = serde_json::from_str(&line).map_err(|e| StoreError::Log {
                path: log_path.clone(),
                line: idx + 1,
                message: e.to_string(),
            })?;
            session.apply(event).map_err(|e| StoreError::Log {
                path: log_path.clone(),
                line: idx + 1,
                message: e.to_string(),
            })?;
        }
        let log = open_log(&log_path)?;
        Ok((
            Store {
                root: root.to_path_buf(),
                log,
            },
            session,
        ))
    }

    fn session(project: &Project, seeds: LabeledCorpus) -> StoreResult<Session> {
        let generator = project.generator.clone().map(Generator::new).transpose()?;
        let embedders = project.embedders(generator.as_ref())?;
        Ok(Session::new(
            project.pipeline.clone(),
            seeds,
            embedders,
            generator,
        )?)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Appends events and syncs them to disk.
    pub fn append(&mut self, events: &[RoundEvent]) -> StoreResult<()> {
        if events.is_empty() {
            return Ok(());
        }
        let path = self.root.join(LOG_FILE);
        let mut buf = String::new();
        for e in events {
            buf.push_str(&e.to_line());
            buf.push('\n');
        }
        self.log.write_all(buf.as_bytes()).map_err(io(&path))?;
        self.log.sync_data().map_err(io(&path))?;
        Ok(())
    }
}

fn open_log(path: &Path) -> StoreResult<File> {
    OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io(path))
}

fn repair_tail(path: &Path) -> StoreResult<()> {
    let Ok(bytes) = fs::read(path) else {
        return Ok(());
    };
    if bytes.is_empty() || bytes.ends_with(b"\n") {
        return Ok(());
    }
    let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    log::warn!(
        "{}: dropping {} byte(s) of an unfinished record",
        path.display(),
        bytes.len() - keep
    );
    let file = OpenOptions::new()
        .write(true)
        .open(path)
        .map_err(io(path))?;
    file.set_len(keep as u64).map_err(io(path))?;
    Ok(())
}
