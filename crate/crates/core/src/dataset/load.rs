use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use super::{DatasetError, RawInteractions};

/// Parsing options for delimiter-separated event files.
#[derive(Debug, Clone)]
pub struct LoadOptions {
    /// Rows with a value below this are dropped.
    pub threshold: f64,
    /// `None` auto-detects tab or comma from the first non-empty line.
    pub delimiter: Option<char>,
    /// `None` treats the first line as a header when its value column is
    /// not numeric.
    pub header: Option<bool>,
}

impl LoadOptions {
    pub fn with_threshold(threshold: f64) -> Self {
        Self {
            threshold,
            delimiter: None,
            header: None,
        }
    }
}

#[derive(Default)]
struct Interner {
    keys: Vec<String>,
    index: HashMap<String, u32>,
}

impl Interner {
    fn intern(&mut self, key: &str) -> u32 {
        if let Some(&id) = self.index.get(key) {
            return id;
        }
        let id = self.keys.len() as u32;
        self.keys.push(key.to_owned());
        self.index.insert(key.to_owned(), id);
        id
    }
}

fn detect_delimiter(line: &str) -> char {
    if line.contains('\t') {
        '\t'
    } else {
        ','
    }
}

/// Reads `user,item[,value[,...]]` rows. Columns past the third (such as
/// timestamps) are ignored. A missing value counts as a positive.
pub fn load_interactions<R: BufRead>(
    source: R,
    threshold: f64,
) -> Result<RawInteractions, DatasetError> {
    load_interactions_with(source, &LoadOptions::with_threshold(threshold))
}

pub fn load_interactions_with<R: BufRead>(
    source: R,
    opts: &LoadOptions,
) -> Result<RawInteractions, DatasetError> {
    if opts.threshold.is_nan() || opts.threshold < 0.0 {
        return Err(DatasetError::InvalidArgument(format!(
            "threshold must be >= 0, got {}",
            opts.threshold
        )));
    }
    let mut users = Interner::default();
    let mut items = Interner::default();
    let mut seen: HashSet<(u32, u32)> = HashSet::new();
    let mut pairs = Vec::new();
    let mut delimiter = opts.delimiter;
    let mut first = true;

    for (line_no, line) in source.lines().enumerate() {
        let line_no = line_no + 1;
        let line = line.map_err(|source| DatasetError::Io {
            context: format!("reading line {line_no}"),
            source,
        })?;
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if trimmed.trim().is_empty() {
            continue;
        }
        let delim = *delimiter.get_or_insert_with(|| detect_delimiter(trimmed));
        let fields: Vec<&str> = trimmed.split(delim).map(str::trim).collect();
        let is_first = std::mem::replace(&mut first, false);

        let value = match fields.get(2) {
            Some(raw) if !raw.is_empty() => match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => Some(v),
                _ => {
                    if is_first && opts.header != Some(false) {
                        continue;
                    }
                    return Err(DatasetError::Parse {
                        line: line_no,
                        message: format!("value {raw:?} is not a finite number"),
                    });
                }
            },
            _ => None,
        };
        if is_first && opts.header == Some(true) {
            continue;
        }
        if fields.len() < 2 || fields[0].is_empty() || fields[1].is_empty() {
            return Err(DatasetError::Parse {
                line: line_no,
                message: "expected at least user and item columns".into(),
            });
        }
        if let Some(v) = value {
            if v < opts.threshold {
                continue;
            }
        }
        let u = users.intern(fields[0]);
        let v = items.intern(fields[1]);
        if seen.insert((u, v)) {
            pairs.push((u, v));
        }
    }

    if pairs.is_empty() {
        return Err(DatasetError::Empty);
    }
    Ok(RawInteractions {
        user_keys: users.keys,
        item_keys: items.keys,
        pairs,
        threshold: opts.threshold,
    })
}

pub fn load_interactions_path(
    path: impl AsRef<Path>,
    opts: &LoadOptions,
) -> Result<RawInteractions, DatasetError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| DatasetError::Io {
        context: format!("opening {}", path.display()),
        source,
    })?;
    load_interactions_with(BufReader::new(file), opts)
}
