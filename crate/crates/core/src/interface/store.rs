use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};

use crate::humaneval::RatingRecord;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("assessor {assessor:?} already rated item {item:?}")]
    Duplicate { assessor: String, item: String },
}

struct Writer {
    file: Option<File>,
    index: HashSet<(String, String)>,
    records: Vec<RatingRecord>,
}

/// Append-only rating log with an in-memory index by (assessor, item).
///
/// Writes are serialized by a mutex; readers take an immutable snapshot.
pub struct RatingStore {
    path: Option<PathBuf>,
    writer: Mutex<Writer>,
    snapshot: RwLock<Arc<Vec<RatingRecord>>>,
}

impl RatingStore {
    /// Store without a backing file.
    pub fn in_memory() -> Self {
        Self::from_parts(None, None, Vec::new())
    }

    /// Open or create the log at `path` and replay it. A torn final line
    /// (no trailing newline, unparseable) is dropped and truncated away.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        let io = |source| StoreError::Io {
            path: path.clone(),
            source,
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(io)?;
        }
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(&path)
            .map_err(io)?;
        let mut records = Vec::new();
        let mut index = HashSet::new();
        let mut good_len = 0u64;
        let mut reader = BufReader::new(&file);
        let mut line = String::new();
        let mut lineno = 0;
        loop {
            line.clear();
            let n = reader.read_line(&mut line).map_err(io)?;
            if n == 0 {
                break;
            }
            lineno += 1;
            let complete = line.ends_with('\n');
            if line.trim().is_empty() {
                good_len += n as u64;
                continue;
            }
            match serde_json::from_str::<RatingRecord>(line.trim_end()) {
                Ok(r) => {
                    if !index.insert((r.assessor.clone(), r.item.clone())) {
                        return Err(StoreError::Corrupt {
                            path,
                            line: lineno,
                            message: format!(
                                "duplicate rating for ({:?}, {:?})",
                                r.assessor, r.item
                            ),
                        });
                    }
                    records.push(r);
                    good_len += n as u64;
                }
                Err(e) if !complete => {
                    tracing::warn!(path = %path.display(), line = lineno, error = %e, "dropping torn final record");
                    break;
                }
                Err(e) => {
                    return Err(StoreError::Corrupt {
                        path,
                        line: lineno,
                        message: e.to_string(),
                    })
                }
            }
        }
        drop(reader);
        if file.metadata().map_err(io)?.len() != good_len {
            file.set_len(good_len).map_err(io)?;
            file.seek(SeekFrom::End(0)).map_err(io)?;
        }
        Ok(Self::from_parts(Some(path), Some(file), records).with_index(index))
    }

    fn from_parts(path: Option<PathBuf>, file: Option<File>, records: Vec<RatingRecord>) -> Self {
        let index = records
            .iter()
            .map(|r| (r.assessor.clone(), r.item.clone()))
            .collect();
        Self {
            path,
            snapshot: RwLock::new(Arc::new(records.clone())),
            writer: Mutex::new(Writer {
                file,
                index,
                records,
            }),
        }
    }

    fn with_index(self, index: HashSet<(String, String)>) -> Self {
        self.writer.lock().index = index;
        self
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    /// Append a rating; the log line is flushed and synced before the
    /// snapshot is updated.
    pub fn append(&self, record: RatingRecord) -> Result<(), StoreError> {
        let mut w = self.writer.lock();
        let key = (record.assessor.clone(), record.item.clone());
        if w.index.contains(&key) {
            return Err(StoreError::Duplicate {
                assessor: key.0,
                item: key.1,
            });
        }
        if let Some(file) = w.file.as_mut() {
            let mut line = serde_json::to_string(&record).expect("serializable");
            line.push('\n');
            let path = self.path.clone().unwrap_or_default();
            file.write_all(line.as_bytes())
                .and_then(|_| file.sync_data())
                .map_err(|source| StoreError::Io { path, source })?;
        }
        w.index.insert(key);
        w.records.push(record);
        *self.snapshot.write() = Arc::new(w.records.clone());
        Ok(())
    }

    pub fn snapshot(&self) -> Arc<Vec<RatingRecord>> {
        self.snapshot.read().clone()
    }

    pub fn contains(&self, assessor: &str, item: &str) -> bool {
        self.writer
            .lock()
            .index
            .contains(&(assessor.to_string(), item.to_string()))
    }

    pub fn len(&self) -> usize {
        self.snapshot.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
