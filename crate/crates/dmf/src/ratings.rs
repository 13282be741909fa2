//! Rating file readers.
//!
//! Two layouts are understood: MovieLens `user::item::rating[::timestamp]`
//! lines and CSV with a `user,item,rating` header. Ids are opaque strings
//! and are numbered in order of first appearance.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use dmf_core::{Rating, RatingMatrix, Scaling};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Movielens,
    Csv,
}

/// Dense indices for user and item ids.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "IdLists", into = "IdLists")]
pub struct IdMap {
    users: Vec<String>,
    items: Vec<String>,
    user_index: HashMap<String, usize>,
    item_index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IdLists {
    users: Vec<String>,
    items: Vec<String>,
}

impl From<IdLists> for IdMap {
    fn from(l: IdLists) -> Self {
        let mut map = IdMap::default();
        for u in l.users {
            map.intern_user(&u);
        }
        for i in l.items {
            map.intern_item(&i);
        }
        map
    }
}

impl From<IdMap> for IdLists {
    fn from(m: IdMap) -> Self {
        IdLists { users: m.users, items: m.items }
    }
}

fn intern(names: &mut Vec<String>, index: &mut HashMap<String, usize>, id: &str) -> usize {
    if let Some(&k) = index.get(id) {
        return k;
    }
    names.push(id.to_string());
    index.insert(id.to_string(), names.len() - 1);
    names.len() - 1
}

impl IdMap {
    pub fn intern_user(&mut self, id: &str) -> usize {
        intern(&mut self.users, &mut self.user_index, id)
    }

    pub fn intern_item(&mut self, id: &str) -> usize {
        intern(&mut self.items, &mut self.item_index, id)
    }

    pub fn user(&self, id: &str) -> Option<usize> {
        self.user_index.get(id).copied()
    }

    pub fn item(&self, id: &str) -> Option<usize> {
        self.item_index.get(id).copied()
    }

    pub fn user_id(&self, row: usize) -> &str {
        &self.users[row]
    }

    pub fn item_id(&self, col: usize) -> &str {
        &self.items[col]
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn num_items(&self) -> usize {
        self.items.len()
    }
}

/// A parsed rating file.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub matrix: RatingMatrix,
    pub ids: IdMap,
}

/// One `(user, item, rating)` record with its source line.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub line: usize,
    pub user: String,
    pub item: String,
    pub rating: f64,
}

pub fn read_ratings(path: &Path, format: DataFormat, scaling: Scaling) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_ratings(BufReader::new(file), format, scaling, path)
}

/// Reads all records of a file without building a matrix.
pub fn read_records<R: Read>(reader: R, format: DataFormat, path: &Path) -> Result<Vec<Record>> {
    match format {
        DataFormat::Movielens => movielens_records(BufReader::new(reader), path),
        DataFormat::Csv => csv_records(reader, path, "rating"),
    }
}

pub fn parse_ratings<R: Read>(reader: R, format: DataFormat, scaling: Scaling, path: &Path) -> Result<Dataset> {
    let records = read_records(reader, format, path)?;
    if records.is_empty() {
        return Err(Error::format(path, "no ratings found"));
    }
    let mut ids = IdMap::default();
    let mut seen = HashSet::with_capacity(records.len());
    let mut entries = Vec::with_capacity(records.len());
    for r in records {
        if !scaling.contains(r.rating) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: r.line,
                message: format!("rating {} outside [{}, {}]", r.rating, scaling.alpha(), scaling.beta()),
            });
        }
        let row = ids.intern_user(&r.user);
        let col = ids.intern_item(&r.item);
        if !seen.insert((row, col)) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: r.line,
                message: format!("duplicate rating for user {} and item {}", r.user, r.item),
            });
        }
        entries.push(Rating { row, col, value: r.rating });
    }
    let matrix = RatingMatrix::new(ids.num_users(), ids.num_items(), entries, scaling)?;
    Ok(Dataset { matrix, ids })
}

fn parse_value(text: &str, path: &Path, line: usize) -> Result<f64> {
    let v: f64 = text.trim().parse().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line,
        message: format!("rating {:?} is not a number", text),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse { path: path.to_path_buf(), line, message: format!("rating {:?} is not finite", text) });
    }
    Ok(v)
}

fn movielens_records<R: BufRead>(reader: R, path: &Path) -> Result<Vec<Record>> {
    let mut out = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line_no = k + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        let fields: Vec<&str> = text.split("::").collect();
        if fields.len() != 3 && fields.len() != 4 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: format!("expected user::item::rating[::timestamp], got {} fields", fields.len()),
            });
        }
        let (user, item) = (fields[0].trim(), fields[1].trim());
        if user.is_empty() || item.is_empty() {
            return Err(Error::Parse { path: path.to_path_buf(), line: line_no, message: "empty id".into() });
        }
        let rating = parse_value(fields[2], path, line_no)?;
        out.push(Record { line: line_no, user: user.to_string(), item: item.to_string(), rating });
    }
    Ok(out)
}

/// CSV records with `user` and `item` columns and, when `value` names a
/// column, a rating. Extra columns are ignored.
pub(crate) fn csv_records<R: Read>(reader: R, path: &Path, value: &str) -> Result<Vec<Record>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    let column = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("header lacks a {:?} column (found {:?})", name, headers.iter().collect::<Vec<_>>()),
        })
    };
    let (cu, ci) = (column("user")?, column("item")?);
    let cr = if value.is_empty() { None } else { Some(column(value)?) };
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| csv_error(path, e))?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let user = row.get(cu).unwrap_or("");
        let item = row.get(ci).unwrap_or("");
        if user.is_empty() || item.is_empty() {
            return Err(Error::Parse { path: path.to_path_buf(), line, message: "empty id".into() });
        }
        let rating = match cr {
            Some(c) => parse_value(row.get(c).unwrap_or(""), path, line)?,
            None => f64::NAN,
        };
        out.push(Record { line, user: user.to_string(), item: item.to_string(), rating });
    }
    Ok(out)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse { path: path.to_path_buf(), line, message: format!("{:?}", other) },
    }
}
