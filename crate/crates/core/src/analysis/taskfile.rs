//! TOML task-set files.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::model::{AnalysisError, ResourceSpec, TaskSet, TaskSpec, Time};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error(transparent)]
    Invalid(#[from] AnalysisError),
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Params {
    #[serde(default)]
    delta: Time,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct File {
    #[serde(default)]
    params: Params,
    #[serde(default)]
    resources: Vec<ResourceSpec>,
    #[serde(default)]
    tasks: Vec<TaskSpec>,
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

/// Parses and validates a task-set file. Nested critical sections are
/// accepted here; analysis requires them to be merged by group locks.
pub fn parse_taskset(text: &str) -> Result<TaskSet, ParseError> {
    let file: File = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((1, 1), |s| line_col(text, s.start));
        ParseError::Syntax {
            line,
            column,
            message: e.message().to_string(),
        }
    })?;
    let ts = TaskSet::new(file.tasks, file.resources, file.params.delta);
    ts.validate()?;
    Ok(ts)
}

/// Serializes a task set in the format read by [`parse_taskset`].
pub fn to_toml(ts: &TaskSet) -> String {
    let file = File {
        params: Params { delta: ts.delta },
        resources: ts.resources.clone(),
        tasks: ts.tasks.clone(),
    };
    toml::to_string(&file).expect("task sets always serialize")
}
