use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use super::TaskRecord;
use crate::fsutil::write_atomic;

/// One directory per task holding `record.json` and the artifacts:
/// `Dockerfile`, `eval.sh` and the logs of the last validation.
#[derive(Debug, Clone)]
pub struct TaskStore {
    root: PathBuf,
}

impl TaskStore {
    pub fn new(root: impl Into<PathBuf>) -> io::Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn task_dir(&self, task_id: &str) -> PathBuf {
        self.root.join(task_id)
    }

    /// Path for the task's model audit log.
    pub fn audit_path(&self, task_id: &str) -> PathBuf {
        self.task_dir(task_id).join("audit.jsonl")
    }

    pub fn save(&self, record: &TaskRecord) -> io::Result<PathBuf> {
        let dir = self.task_dir(&record.task_id);
        fs::create_dir_all(&dir)?;
        if let Some(d) = &record.dockerfile {
            write_atomic(&dir.join("Dockerfile"), d.as_bytes())?;
        }
        if let Some(s) = &record.eval_script {
            write_atomic(&dir.join("eval.sh"), s.as_bytes())?;
        }
        if let Some(v) = &record.verdict {
            if let Some(l) = &v.test_only_log {
                write_atomic(&dir.join("test_only.log"), l.full_text.as_bytes())?;
            }
            if let Some(l) = &v.with_fix_log {
                write_atomic(&dir.join("with_fix.log"), l.full_text.as_bytes())?;
            }
            if let Some(b) = &v.build_log_tail {
                write_atomic(&dir.join("build.log"), b.as_bytes())?;
            }
        }
        let path = dir.join("record.json");
        let json = serde_json::to_vec_pretty(record).map_err(io::Error::other)?;
        write_atomic(&path, &json)?;
        Ok(path)
    }

    pub fn load(&self, task_id: &str) -> io::Result<TaskRecord> {
        let bytes = fs::read(self.task_dir(task_id).join("record.json"))?;
        serde_json::from_slice(&bytes).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
    }

    pub fn list(&self) -> io::Result<Vec<TaskRecord>> {
        let mut out = Vec::new();
        for entry in fs::read_dir(&self.root)? {
            let path = entry?.path().join("record.json");
            if path.is_file() {
                let bytes = fs::read(&path)?;
                out.push(serde_json::from_slice(&bytes).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?);
            }
        }
        out.sort_by(|a: &TaskRecord, b| a.task_id.cmp(&b.task_id));
        Ok(out)
    }
}
