use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::RunLimits;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EngineError {
    #[error("engine unavailable: {0}")]
    Unavailable(String),
    #[error("engine command failed: {0}")]
    Command(String),
    #[error("no such image: {0}")]
    NoSuchImage(String),
}

impl From<std::io::Error> for EngineError {
    fn from(e: std::io::Error) -> Self {
        EngineError::Command(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BuildOutcome {
    pub success: bool,
    pub log: String,
}

#[derive(Debug, Clone)]
pub struct RunRequest<'a> {
    pub image: &'a str,
    pub script: &'a str,
    pub limits: &'a RunLimits,
    pub network: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOutcome {
    /// Combined stdout and stderr.
    pub output: String,
    pub exit_code: i32,
    pub timed_out: bool,
    pub duration: Duration,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageInfo {
    pub tag: String,
    pub size_bytes: u64,
    /// Milliseconds since the epoch.
    pub created_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContainerInfo {
    pub id: String,
    pub running: bool,
    pub size_bytes: u64,
}

/// What the harness needs from a container engine.
pub trait ContainerEngine: Send + Sync {
    /// Builds `<ctx>/Dockerfile` and tags the result. A failing Dockerfile
    /// is a successful call with `success == false`.
    fn build(&self, ctx: &Path, tag: &str) -> Result<BuildOutcome, EngineError>;

    /// Runs `script` with bash inside a fresh container that is removed
    /// afterwards, whatever the outcome.
    fn run(&self, req: &RunRequest<'_>) -> Result<RunOutcome, EngineError>;

    fn images(&self) -> Result<Vec<ImageInfo>, EngineError>;

    /// Returns the bytes freed.
    fn remove_image(&self, tag: &str) -> Result<u64, EngineError>;

    fn containers(&self) -> Result<Vec<ContainerInfo>, EngineError>;

    /// Returns the bytes freed.
    fn remove_container(&self, id: &str) -> Result<u64, EngineError>;

    /// Pushes `tag` to `registry` and returns the remote reference.
    fn push(&self, tag: &str, registry: &str) -> Result<String, EngineError>;
}

/// Counts calls into another engine; used to check cache behaviour.
pub struct RecordingEngine<E> {
    inner: E,
    log: Mutex<Vec<String>>,
}

impl<E: ContainerEngine> RecordingEngine<E> {
    pub fn new(inner: E) -> Self {
        Self { inner, log: Mutex::new(Vec::new()) }
    }

    pub fn inner(&self) -> &E {
        &self.inner
    }

    /// Every call so far as `"<op> <argument>"`.
    pub fn calls(&self) -> Vec<String> {
        self.log.lock().expect("recorder lock").clone()
    }

    pub fn count(&self, op: &str) -> usize {
        self.calls().iter().filter(|c| c.split(' ').next() == Some(op)).count()
    }

    fn record(&self, op: &str, arg: &str) {
        self.log.lock().expect("recorder lock").push(format!("{op} {arg}"));
    }
}

impl<E: ContainerEngine> ContainerEngine for RecordingEngine<E> {
    fn build(&self, ctx: &Path, tag: &str) -> Result<BuildOutcome, EngineError> {
        self.record("build", tag);
        self.inner.build(ctx, tag)
    }

    fn run(&self, req: &RunRequest<'_>) -> Result<RunOutcome, EngineError> {
        self.record("run", req.image);
        self.inner.run(req)
    }

    fn images(&self) -> Result<Vec<ImageInfo>, EngineError> {
        self.inner.images()
    }

    fn remove_image(&self, tag: &str) -> Result<u64, EngineError> {
        self.record("rmi", tag);
        self.inner.remove_image(tag)
    }

    fn containers(&self) -> Result<Vec<ContainerInfo>, EngineError> {
        self.inner.containers()
    }

    fn remove_container(&self, id: &str) -> Result<u64, EngineError> {
        self.record("rm", id);
        self.inner.remove_container(id)
    }

    fn push(&self, tag: &str, registry: &str) -> Result<String, EngineError> {
        self.record("push", tag);
        self.inner.push(tag, registry)
    }
}

impl<E: ContainerEngine + ?Sized> ContainerEngine for &E {
    fn build(&self, ctx: &Path, tag: &str) -> Result<BuildOutcome, EngineError> {
        (**self).build(ctx, tag)
    }
    fn run(&self, req: &RunRequest<'_>) -> Result<RunOutcome, EngineError> {
        (**self).run(req)
    }
    fn images(&self) -> Result<Vec<ImageInfo>, EngineError> {
        (**self).images()
    }
    fn remove_image(&self, tag: &str) -> Result<u64, EngineError> {
        (**self).remove_image(tag)
    }
    fn containers(&self) -> Result<Vec<ContainerInfo>, EngineError> {
        (**self).containers()
    }
    fn remove_container(&self, id: &str) -> Result<u64, EngineError> {
        (**self).remove_container(id)
    }
    fn push(&self, tag: &str, registry: &str) -> Result<String, EngineError> {
        (**self).push(tag, registry)
    }
}

impl<E: ContainerEngine + ?Sized> ContainerEngine for Box<E> {
    fn build(&self, ctx: &Path, tag: &str) -> Result<BuildOutcome, EngineError> {
        (**self).build(ctx, tag)
    }
    fn run(&self, req: &RunRequest<'_>) -> Result<RunOutcome, EngineError> {
        (**self).run(req)
    }
    fn images(&self) -> Result<Vec<ImageInfo>, EngineError> {
        (**self).images()
    }
    fn remove_image(&self, tag: &str) -> Result<u64, EngineError> {
        (**self).remove_image(tag)
    }
    fn containers(&self) -> Result<Vec<ContainerInfo>, EngineError> {
        (**self).containers()
    }
    fn remove_container(&self, id: &str) -> Result<u64, EngineError> {
        (**self).remove_container(id)
    }
    fn push(&self, tag: &str, registry: &str) -> Result<String, EngineError> {
        (**self).push(tag, registry)
    }
}
