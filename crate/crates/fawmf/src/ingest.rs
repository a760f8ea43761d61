//! Interaction-log loading, binarization, filtering, and fold splitting.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::rng;

/// Supported interaction-log layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogFormat {
    /// `user::item::rating::timestamp`
    MovielensDat,
    /// Tab-separated `user item [rating [timestamp]]`
    Tsv,
    /// Comma-separated `user,item[,rating[,timestamp]]`
    Csv,
}

impl LogFormat {
    fn delimiter(self) -> &'static str {
        match self {
            LogFormat::MovielensDat => "::",
            LogFormat::Tsv => "\t",
            LogFormat::Csv => ",",
        }
    }
}

impl FromStr for LogFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "movielens-dat" => Ok(LogFormat::MovielensDat),
            "tsv" => Ok(LogFormat::Tsv),
            "csv" => Ok(LogFormat::Csv),
            other => Err(format!(
                "unknown format '{other}' (expected movielens-dat, tsv, or csv)"
            )),
        }
    }
}

/// One raw interaction record.
#[derive(Debug, Clone, PartialEq)]
pub struct Interaction {
    pub user: String,
    pub item: String,
    pub value: f64,
    pub timestamp: Option<i64>,
}

/// Raw interaction log, records in file order.
#[derive(Debug, Clone, Default)]
pub struct InteractionLog {
    pub records: Vec<Interaction>,
}

/// Binary user-item matrix in both row- and column-compressed layouts.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseBinaryMatrix {
    n_users: usize,
    n_items: usize,
    rows: Vec<Vec<u32>>,
    cols: Vec<Vec<u32>>,
    nnz: usize,
}

/// Dense-id to raw-id lookup produced by [`binarize_and_index`].
#[derive(Debug, Clone, Default)]
pub struct IdMaps {
    pub users: Vec<String>,
    pub items: Vec<String>,
}

/// One train/test fold.
#[derive(Debug, Clone)]
pub struct FoldSplit {
    pub train: SparseBinaryMatrix,
    pub test: SparseBinaryMatrix,
    pub fold_id: usize,
    pub seed: u64,
}

/// Read an interaction log. Raw ids are kept as strings and line order is
/// preserved. The rating field is optional for tsv/csv (defaults to 1.0);
/// a first line whose rating field is non-numeric is treated as a header
/// and skipped.
pub fn load_interactions(path: &Path, format: LogFormat) -> Result<InteractionLog> {
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_line(&line, format) {
            Ok(record) => records.push(record),
            Err(message) => {
                if line_no == 1 && looks_like_header(&line, format) {
                    continue;
                }
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: line_no,
                    message,
                });
            }
        }
    }

    Ok(InteractionLog { records })
}

fn parse_line(line: &str, format: LogFormat) -> std::result::Result<Interaction, String> {
    let fields: Vec<&str> = line.split(format.delimiter()).collect();
    if fields.len() < 2 {
        return Err(format!("expected at least 2 fields, found {}", fields.len()));
    }
    let user = fields[0].trim();
    let item = fields[1].trim();
    if user.is_empty() || item.is_empty() {
        return Err("empty user or item id".into());
    }
    let value = match fields.get(2) {
        Some(raw) => raw
            .trim()
            .parse::<f64>()
            .map_err(|_| format!("bad rating value '{}'", raw.trim()))?,
        None => 1.0,
    };
    if !value.is_finite() {
        return Err(format!("non-finite rating value {value}"));
    }
    let timestamp = match fields.get(3) {
        Some(raw) => Some(
            raw.trim()
                .parse::<i64>()
                .map_err(|_| format!("bad timestamp '{}'", raw.trim()))?,
        ),
        None => None,
    };
    Ok(Interaction {
        user: user.to_string(),
        item: item.to_string(),
        value,
        timestamp,
    })
}

fn looks_like_header(line: &str, format: LogFormat) -> bool {
    let fields: Vec<&str> = line.split(format.delimiter()).collect();
    fields.len() >= 2
        && fields
            .iter()
            .any(|f| f.chars().any(|c| c.is_ascii_alphabetic()))
}

/// Collapse the log into a binary matrix: any interaction, whatever its
/// value, sets the cell to one; duplicates collapse. Dense ids are assigned
/// in first-appearance order.
pub fn binarize_and_index(log: &InteractionLog) -> Result<(SparseBinaryMatrix, IdMaps)> {
    if log.records.is_empty() {
        return Err(Error::Domain("cannot binarize an empty log".into()));
    }

    let mut user_ids: HashMap<&str, u32> = HashMap::new();
    let mut item_ids: HashMap<&str, u32> = HashMap::new();
    let mut maps = IdMaps::default();
    let mut pairs = Vec::with_capacity(log.records.len());

    for record in &log.records {
        let &mut user = user_ids.entry(&record.user).or_insert_with(|| {
            maps.users.push(record.user.clone());
            (maps.users.len() - 1) as u32
        });
        let &mut item = item_ids.entry(&record.item).or_insert_with(|| {
            maps.items.push(record.item.clone());
            (maps.items.len() - 1) as u32
        });
        pairs.push((user, item));
    }

    let matrix = SparseBinaryMatrix::from_pairs(maps.users.len(), maps.items.len(), pairs);
    Ok((matrix, maps))
}

/// Drop items with fewer than `min_count` consumers and re-densify item
/// ids in surviving order. Users are kept even when they end up with no
/// interactions, so user ids stay stable. Returns the filtered matrix and,
/// for each new item id, the old id it came from.
pub fn filter_min_item_interactions(
    x: &SparseBinaryMatrix,
    min_count: usize,
) -> Result<(SparseBinaryMatrix, Vec<u32>)> {
    assert!(min_count >= 1, "min_count must be at least 1");

    let mut kept = Vec::new();
    let mut new_id = vec![u32::MAX; x.n_items];
    for j in 0..x.n_items {
        if x.col(j).len() >= min_count {
            new_id[j] = kept.len() as u32;
            kept.push(j as u32);
        }
    }
    if kept.is_empty() {
        return Err(Error::Domain(format!(
            "no item has at least {min_count} interactions"
        )));
    }

    let pairs = x.iter_pairs().filter_map(|(i, j)| {
        let nj = new_id[j as usize];
        (nj != u32::MAX).then_some((i, nj))
    });
    let filtered = SparseBinaryMatrix::from_pairs(x.n_users, kept.len(), pairs);
    Ok((filtered, kept))
}

/// Split the positive set into `k` near-equal folds. Pairs are shuffled
/// with a ChaCha8 stream seeded from `seed` (Fisher-Yates, see [`rng`]),
/// then dealt out in contiguous chunks; fold `f` tests on chunk `f` and
/// trains on the rest.
pub fn kfold_split(x: &SparseBinaryMatrix, k: usize, seed: u64) -> Result<Vec<FoldSplit>> {
    if k < 2 {
        return Err(Error::Domain(format!("need at least 2 folds, got {k}")));
    }
    if k > x.nnz {
        return Err(Error::Domain(format!(
            "cannot split {} positives into {k} folds",
            x.nnz
        )));
    }

    let mut pairs: Vec<(u32, u32)> = x.iter_pairs().collect();
    let mut gen = rng::seeded(seed);
    rng::shuffle(&mut gen, &mut pairs);

    // First (nnz % k) chunks take one extra pair.
    let base = x.nnz / k;
    let extra = x.nnz % k;
    let mut bounds = Vec::with_capacity(k + 1);
    let mut offset = 0;
    bounds.push(0);
    for f in 0..k {
        offset += base + usize::from(f < extra);
        bounds.push(offset);
    }

    let mut folds = Vec::with_capacity(k);
    for f in 0..k {
        let (lo, hi) = (bounds[f], bounds[f + 1]);
        let test = SparseBinaryMatrix::from_pairs(
            x.n_users,
            x.n_items,
            pairs[lo..hi].iter().copied(),
        );
        let train = SparseBinaryMatrix::from_pairs(
            x.n_users,
            x.n_items,
            pairs[..lo].iter().chain(&pairs[hi..]).copied(),
        );
        folds.push(FoldSplit {
            train,
            test,
            fold_id: f,
            seed,
        });
    }
    Ok(folds)
}

/// Number of consumers per item.
pub fn item_popularity(x: &SparseBinaryMatrix) -> Vec<u32> {
    (0..x.n_items).map(|j| x.col(j).len() as u32).collect()
}

impl SparseBinaryMatrix {
    /// Build from (user, item) pairs; duplicates collapse.
    pub fn from_pairs(
        n_users: usize,
        n_items: usize,
        pairs: impl IntoIterator<Item = (u32, u32)>,
    ) -> Self {
        let mut rows = vec![Vec::new(); n_users];
        for (i, j) in pairs {
            assert!((i as usize) < n_users && (j as usize) < n_items, "id out of range");
            rows[i as usize].push(j);
        }
        let mut nnz = 0;
        for row in &mut rows {
            row.sort_unstable();
            row.dedup();
            nnz += row.len();
        }
        let mut cols = vec![Vec::new(); n_items];
        for (i, row) in rows.iter().enumerate() {
            for &j in row {
                cols[j as usize].push(i as u32);
            }
        }
        SparseBinaryMatrix {
            n_users,
            n_items,
            rows,
            cols,
            nnz,
        }
    }

    #[inline]
    pub fn n_users(&self) -> usize {
        self.n_users
    }

    #[inline]
    pub fn n_items(&self) -> usize {
        self.n_items
    }

    #[inline]
    pub fn nnz(&self) -> usize {
        self.nnz
    }

    /// Items consumed by user `i`, sorted ascending.
    #[inline]
    pub fn row(&self, i: usize) -> &[u32] {
        &self.rows[i]
    }

    /// Users who consumed item `j`, sorted ascending.
    #[inline]
    pub fn col(&self, j: usize) -> &[u32] {
        &self.cols[j]
    }

    #[inline]
    pub fn contains(&self, i: usize, j: u32) -> bool {
        self.rows[i].binary_search(&j).is_ok()
    }

    /// All positive pairs in row-major order.
    pub fn iter_pairs(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(i, row)| row.iter().map(move |&j| (i as u32, j)))
    }

    /// Check the structural invariants; used by tests and debug paths.
    pub fn validate(&self) -> Result<()> {
        let mut pair_count = 0;
        for (i, row) in self.rows.iter().enumerate() {
            pair_count += row.len();
            if !row.windows(2).all(|w| w[0] < w[1]) {
                return Err(Error::Domain(format!("row {i} not strictly sorted")));
            }
            if row.iter().any(|&j| (j as usize) >= self.n_items) {
                return Err(Error::Domain(format!("row {i} has item id out of range")));
            }
        }
        if pair_count != self.nnz {
            return Err(Error::Domain(format!(
                "nnz {} does not match stored pairs {pair_count}",
                self.nnz
            )));
        }
        let mut col_count = 0;
        for (j, col) in self.cols.iter().enumerate() {
            col_count += col.len();
            if !col.windows(2).all(|w| w[0] < w[1]) {
                return Err(Error::Domain(format!("column {j} not strictly sorted")));
            }
            for &i in col {
                if !self.contains(i as usize, j as u32) {
                    return Err(Error::Domain(format!(
                        "pair ({i},{j}) present in columns but not rows"
                    )));
                }
            }
        }
        if col_count != self.nnz {
            return Err(Error::Domain("row/column pair sets differ".into()));
        }
        Ok(())
    }
}

impl IdMaps {
    /// Keep only the items named by `kept` (new id -> old id), in order.
    pub fn retain_items(&mut self, kept: &[u32]) {
        self.items = kept
            .iter()
            .map(|&old| self.items[old as usize].clone())
            .collect();
    }

    pub fn write_user_map<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        for (dense, raw) in self.users.iter().enumerate() {
            writeln!(out, "{dense}\t{raw}")?;
        }
        Ok(())
    }

    pub fn write_item_map<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        for (dense, raw) in self.items.iter().enumerate() {
            writeln!(out, "{dense}\t{raw}")?;
        }
        Ok(())
    }
}
