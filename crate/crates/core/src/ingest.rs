//! Rating file loading and seeded k-fold splitting.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{IdMap, Rating, RatingsDataset};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    /// `user<TAB>item<TAB>rating<TAB>timestamp`, no header (MovieLens `u.data`).
    Tsv,
    /// `user,item,rating[,timestamp]`, optional header row.
    Csv,
}

impl Format {
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => Format::Csv,
            _ => Format::Tsv,
        }
    }
}

/// Column positions and parsing options for a ratings file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColumnSpec {
    pub user: usize,
    pub item: usize,
    pub rating: usize,
    pub delimiter: u8,
    /// A first row whose rating column is not numeric is treated as a header.
    pub allow_header: bool,
    /// Overrides the (min, max) scale otherwise inferred from the data.
    pub scale: Option<(f64, f64)>,
}

impl ColumnSpec {
    pub fn tsv() -> Self {
        ColumnSpec {
            user: 0,
            item: 1,
            rating: 2,
            delimiter: b'\t',
            allow_header: false,
            scale: None,
        }
    }

    pub fn csv() -> Self {
        ColumnSpec {
            delimiter: b',',
            allow_header: true,
            ..Self::tsv()
        }
    }

    pub fn for_format(format: Format) -> Self {
        match format {
            Format::Tsv => Self::tsv(),
            Format::Csv => Self::csv(),
        }
    }
}

pub fn load_tsv(path: impl AsRef<Path>, spec: ColumnSpec) -> Result<RatingsDataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(spec.delimiter)
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;

    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut users = IdMap::default();
    let mut items = IdMap::default();
    let mut ratings = Vec::new();
    let mut seen = std::collections::HashSet::new();
    let needed = spec.user.max(spec.item).max(spec.rating) + 1;

    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(row as u64 + 1);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if record.len() < needed {
            return Err(parse_err(
                line,
                format!("expected at least {needed} fields, found {}", record.len()),
            ));
        }
        let value: f64 = match record[spec.rating].parse() {
            Ok(v) => v,
            Err(_) if row == 0 && spec.allow_header => continue,
            Err(_) => {
                return Err(parse_err(
                    line,
                    format!("rating {:?} is not a number", &record[spec.rating]),
                ))
            }
        };
        if !value.is_finite() {
            return Err(parse_err(line, "rating is not finite".into()));
        }
        let (u, i) = (&record[spec.user], &record[spec.item]);
        if u.is_empty() || i.is_empty() {
            return Err(parse_err(line, "empty user or item id".into()));
        }
        let user = users.intern(u);
        let item = items.intern(i);
        if !seen.insert((user, item)) {
            return Err(parse_err(line, format!("duplicate rating for user {u} item {i}")));
        }
        ratings.push(Rating::new(user, item, value));
    }

    if ratings.is_empty() {
        return Err(Error::EmptyFile(path.to_path_buf()));
    }
    let scale = spec.scale.unwrap_or_else(|| {
        ratings.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
            (lo.min(r.value), hi.max(r.value))
        })
    });
    RatingsDataset::new(ratings, scale, Arc::new(users), Arc::new(items))
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<RatingsDataset> {
    load_tsv(path, ColumnSpec::csv())
}

pub fn load(path: impl AsRef<Path>, format: Format) -> Result<RatingsDataset> {
    load_tsv(path, ColumnSpec::for_format(format))
}

/// Writes `user<TAB>item<TAB>rating` rows using the raw ids.
pub fn write_tsv(dataset: &RatingsDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for r in dataset.ratings() {
        writeln!(
            out,
            "{}\t{}\t{}",
            dataset.user_ids().raw(r.user).unwrap_or_default(),
            dataset.item_ids().raw(r.item).unwrap_or_default(),
            r.value
        )?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct FoldSplit {
    pub fold_index: usize,
    pub train: RatingsDataset,
    pub test: RatingsDataset,
}

/// Seeded shuffle followed by contiguous chunking into `n_folds` test sets.
/// The first `n % n_folds` folds receive one extra rating.
pub fn kfold(dataset: &RatingsDataset, n_folds: usize, seed: u64) -> Result<Vec<FoldSplit>> {
    if n_folds < 2 {
        return Err(Error::invalid("n_folds must be at least 2"));
    }
    if dataset.is_empty() {
        return Err(Error::invalid("cannot split an empty dataset"));
    }
    let n = dataset.len();
    if n_folds > n {
        return Err(Error::invalid(format!(
            "n_folds ({n_folds}) exceeds the number of ratings ({n})"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, "kfold", 0));

    let base = n / n_folds;
    let extra = n % n_folds;
    let mut assignment = vec![0usize; n];
    let mut start = 0;
    for fold in 0..n_folds {
        let len = base + usize::from(fold < extra);
        for &idx in &order[start..start + len] {
            assignment[idx] = fold;
        }
        start += len;
    }

    let ratings = dataset.ratings();
    Ok((0..n_folds)
        .map(|fold| {
            let mut train = Vec::with_capacity(n - base);
            let mut test = Vec::with_capacity(base + 1);
            for (r, &a) in ratings.iter().zip(&assignment) {
                if a == fold {
                    test.push(*r);
                } else {
                    train.push(*r);
                }
            }
            FoldSplit {
                fold_index: fold,
                train: dataset.with_ratings(train),
                test: dataset.with_ratings(test),
            }
        })
        .collect())
}
