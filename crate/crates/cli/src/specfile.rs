//! Process spec files: `key = value` items, separated by commas or newlines, `#` comments.
//!
//! ```text
//! kind = kernel
//! dim = 2
//! form = stable, alpha = 1.0
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ehi_core::catalog::{self, CatalogError, ProcessSpec};
use ehi_core::kernels::LkVerdict;
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid spec: {0}")]
    Invalid(String),
    #[error("Lévy–Khintchine condition fails: {0}")]
    LevyKhintchine(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Kernel,
    Subordinator,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Form {
    Stable,
    LogStable,
    Table,
    Builtin(String),
}

/// A spec file after syntax checking, before the process is built.
#[derive(Debug, Clone, PartialEq)]
pub struct SpecFile {
    pub kind: Option<Kind>,
    pub dim: usize,
    pub form: Form,
    pub params: BTreeMap<String, f64>,
    pub table: Option<PathBuf>,
}

#[derive(Debug, Clone)]
struct Item {
    key: String,
    value: String,
    line: usize,
    column: usize,
    value_column: usize,
}

fn split_items(text: &str) -> Result<Vec<Item>, SpecError> {
    let mut items = Vec::new();
    for (li, raw) in text.lines().enumerate() {
        let line = li + 1;
        let body = raw.split('#').next().unwrap_or("");
        let mut offset = 0;
        for chunk in body.split(',') {
            let start = offset;
            offset += chunk.len() + 1;
            let lead = chunk.len() - chunk.trim_start().len();
            let column = raw[..start + lead].chars().count() + 1;
            let item = chunk.trim();
            if item.is_empty() {
                continue;
            }
            let Some(eq) = item.find('=') else {
                return Err(SpecError::Parse {
                    line,
                    column,
                    message: format!("expected `key = value`, got `{item}`"),
                });
            };
            let key = item[..eq].trim();
            let rest = &item[eq + 1..];
            let value = rest.trim();
            if key.is_empty() {
                return Err(SpecError::Parse {
                    line,
                    column,
                    message: "empty key".into(),
                });
            }
            let value_column =
                column + item[..eq + 1].chars().count() + (rest.len() - rest.trim_start().len());
            if value.is_empty() {
                return Err(SpecError::Parse {
                    line,
                    column: value_column,
                    message: format!("`{key}` has no value"),
                });
            }
            items.push(Item {
                key: key.to_string(),
                value: value.to_string(),
                line,
                column,
                value_column,
            });
        }
    }
    Ok(items)
}

fn parse_err(item: &Item, message: String) -> SpecError {
    SpecError::Parse {
        line: item.line,
        column: item.value_column,
        message,
    }
}

/// Syntax and field checks; numeric parameters are collected but not range-checked.
pub fn parse_spec_text(text: &str) -> Result<SpecFile, SpecError> {
    let items = split_items(text)?;
    let mut seen: BTreeMap<&str, &Item> = BTreeMap::new();
    for it in &items {
        if let Some(prev) = seen.insert(it.key.as_str(), it) {
            return Err(SpecError::Parse {
                line: it.line,
                column: it.column,
                message: format!(
                    "duplicate key `{}` (first set on line {})",
                    it.key, prev.line
                ),
            });
        }
    }
    let mut kind = None;
    let mut dim = 1;
    let mut form = None;
    let mut table = None;
    let mut params = BTreeMap::new();
    for it in &items {
        match it.key.as_str() {
            "kind" => {
                kind = Some(match it.value.as_str() {
                    "kernel" => Kind::Kernel,
                    "subordinator" => Kind::Subordinator,
                    other => {
                        return Err(parse_err(
                            it,
                            format!("kind must be kernel or subordinator, got `{other}`"),
                        ))
                    }
                })
            }
            "dim" => {
                dim = it
                    .value
                    .parse::<usize>()
                    .ok()
                    .filter(|d| *d >= 1)
                    .ok_or_else(|| {
                        parse_err(
                            it,
                            format!("dim must be a positive integer, got `{}`", it.value),
                        )
                    })?
            }
            "form" => {
                form = Some(match it.value.as_str() {
                    "stable" => Form::Stable,
                    "log_stable" => Form::LogStable,
                    "table" => Form::Table,
                    v => match v.strip_prefix("builtin:") {
                        Some(name) if !name.is_empty() => Form::Builtin(name.to_string()),
                        _ => {
                            return Err(parse_err(
                                it,
                                format!(
                            "form must be stable, log_stable, table or builtin:<name>, got `{v}`"
                        ),
                            ))
                        }
                    },
                })
            }
            "file" => table = Some(PathBuf::from(&it.value)),
            key => {
                let v: f64 = it.value.parse().map_err(|_| {
                    parse_err(it, format!("`{key}` must be a number, got `{}`", it.value))
                })?;
                params.insert(key.to_string(), v);
            }
        }
    }
    let form = form.ok_or_else(|| SpecError::Invalid("missing `form`".into()))?;
    let allowed: &[&str] = match &form {
        Form::Stable => &["alpha"],
        Form::LogStable => &["alpha", "beta", "delta"],
        Form::Table => &[],
        Form::Builtin(_) => &[],
    };
    if !matches!(form, Form::Builtin(_)) {
        if let Some(it) = items
            .iter()
            .find(|it| params.contains_key(&it.key) && !allowed.contains(&it.key.as_str()))
        {
            return Err(SpecError::Parse {
                line: it.line,
                column: it.column,
                message: format!("unknown parameter `{}` for this form", it.key),
            });
        }
    }
    if (form == Form::Table) != table.is_some() {
        return Err(SpecError::Invalid(
            "`file` is required by, and only allowed with, form = table".into(),
        ));
    }
    Ok(SpecFile {
        kind,
        dim,
        form,
        params,
        table,
    })
}

fn require(params: &BTreeMap<String, f64>, key: &str) -> Result<f64, SpecError> {
    params
        .get(key)
        .copied()
        .ok_or_else(|| SpecError::Invalid(format!("missing parameter `{key}`")))
}

fn from_catalog(e: CatalogError) -> SpecError {
    match e {
        CatalogError::LevyKhintchine(reason) => SpecError::LevyKhintchine(reason),
        other => SpecError::Invalid(other.to_string()),
    }
}

/// Two-column `(r, j(r))` CSV; a non-numeric first row is taken as a header.
pub fn read_table(text: &str) -> Result<Vec<(f64, f64)>, SpecError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut points = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| SpecError::Invalid(format!("table: {e}")))?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(i + 1);
        if rec.len() != 2 {
            return Err(SpecError::Parse {
                line,
                column: 1,
                message: format!("expected 2 columns, got {}", rec.len()),
            });
        }
        let parsed = (rec[0].parse::<f64>(), rec[1].parse::<f64>());
        match parsed {
            (Ok(r), Ok(j)) => points.push((r, j)),
            _ if i == 0 => continue,
            _ => {
                return Err(SpecError::Parse {
                    line,
                    column: 1,
                    message: format!("non-numeric row `{},{}`", &rec[0], &rec[1]),
                })
            }
        }
    }
    Ok(points)
}

/// Build and validate the process; the Lévy–Khintchine check runs eagerly.
pub fn build_process(spec: &SpecFile, table_text: Option<&str>) -> Result<ProcessSpec, SpecError> {
    let p = &spec.params;
    let process = match &spec.form {
        Form::Stable => catalog::stable(require(p, "alpha")?, spec.dim),
        Form::LogStable => catalog::log_stable(
            require(p, "alpha")?,
            require(p, "beta")?,
            p.get("delta").copied().unwrap_or(0.5),
            spec.dim,
        ),
        Form::Table => {
            let text = table_text
                .ok_or_else(|| SpecError::Invalid("table form needs its CSV file".into()))?;
            catalog::table(&read_table(text)?, spec.dim)
        }
        Form::Builtin(name) => catalog::builtin(name, p, spec.dim),
    }
    .map_err(from_catalog)?;
    if spec.kind == Some(Kind::Subordinator) && process.subordinator().is_none() {
        return Err(SpecError::Invalid(format!(
            "kind = subordinator but {} has no subordinator",
            process.name
        )));
    }
    match process.levy_khintchine() {
        LkVerdict::Valid { .. } => Ok(process),
        LkVerdict::Invalid { reason } => Err(SpecError::LevyKhintchine(reason)),
    }
}

/// A parsed process with the SHA-256 digest of its inputs (spec text, then table text).
#[derive(Debug, Clone)]
pub struct LoadedSpec {
    pub file: SpecFile,
    pub process: ProcessSpec,
    pub digest: String,
}

fn read(path: &Path) -> Result<String, SpecError> {
    std::fs::read_to_string(path).map_err(|source| SpecError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn parse_spec(path: &Path) -> Result<LoadedSpec, SpecError> {
    let text = read(path)?;
    let file = parse_spec_text(&text)?;
    let table_text = match &file.table {
        Some(t) => {
            let full = if t.is_absolute() {
                t.clone()
            } else {
                path.parent().unwrap_or(Path::new(".")).join(t)
            };
            Some(read(&full)?)
        }
        None => None,
    };
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    if let Some(t) = &table_text {
        hasher.update(t.as_bytes());
    }
    let digest = hex::encode(hasher.finalize());
    let process = build_process(&file, table_text.as_deref())?;
    Ok(LoadedSpec {
        file,
        process,
        digest,
    })
}
