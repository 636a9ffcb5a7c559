//! LETOR dataset handling: SVMlight-style line parsing, grouping by query,
//! per-query feature normalization and 5-fold split loading.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: {msg}: `{content}`")]
    Parse {
        line: usize,
        msg: String,
        content: String,
    },
    #[error("empty dataset: no records found")]
    Empty,
    #[error("missing fold input: {0}")]
    MissingFold(String),
    #[error("fold {fold}: {split} split is empty")]
    EmptySplit { fold: usize, split: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// How labels outside {0,1,2} are treated. The action space has exactly three
/// levels, so deeper grades are rejected unless clamping is requested.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LabelPolicy {
    #[default]
    Strict,
    /// Map grades > 2 down to 2 (some LETOR variants use deeper scales).
    ClampHigh,
}

/// One query-document feature vector with its graded relevance label.
#[derive(Debug, Clone, PartialEq)]
pub struct DocumentRecord {
    pub label: u8,
    pub query_id: String,
    pub features: Vec<f64>,
    pub comment: Option<String>,
}

/// All documents of one query, in file order. The unit of an episode.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryGroup {
    pub query_id: String,
    pub docs: Vec<DocumentRecord>,
}

impl QueryGroup {
    pub fn labels(&self) -> Vec<u8> {
        self.docs.iter().map(|d| d.label).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub groups: Vec<QueryGroup>,
    pub feature_dim: usize,
}

impl Dataset {
    pub fn num_docs(&self) -> usize {
        self.groups.iter().map(|g| g.docs.len()).sum()
    }
}

/// One train/validation/test partition of a 5-fold cross-validation layout.
#[derive(Debug, Clone)]
pub struct FoldSplit {
    pub fold_index: usize,
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NormScheme {
    None,
    /// Rescale each feature dimension to [0,1] within each query group.
    #[default]
    QueryMinMax,
}

impl std::str::FromStr for NormScheme {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(NormScheme::None),
            "query_minmax" => Ok(NormScheme::QueryMinMax),
            other => Err(format!("unknown normalization scheme `{other}`")),
        }
    }
}

fn parse_err(line: usize, msg: impl Into<String>, content: &str) -> DataError {
    DataError::Parse {
        line,
        msg: msg.into(),
        content: content.trim_end().to_string(),
    }
}

/// Parse one LETOR/SVMlight line: `<label> qid:<id> <fid>:<val> ... #<comment>`.
///
/// Missing feature ids are zero-filled up to the highest id seen on the line;
/// `load_dataset` later pads all records to the dataset-wide dimension.
pub fn parse_line(text: &str) -> Result<DocumentRecord, DataError> {
    parse_line_with(text, LabelPolicy::Strict, 1)
}

pub fn parse_line_with(
    text: &str,
    policy: LabelPolicy,
    line_no: usize,
) -> Result<DocumentRecord, DataError> {
    let (body, comment) = match text.split_once('#') {
        Some((b, c)) => (b, Some(c.trim().to_string())),
        None => (text, None),
    };
    let mut tokens = body.split_whitespace();

    let label_tok = tokens
        .next()
        .ok_or_else(|| parse_err(line_no, "empty line", text))?;
    let raw_label: i64 = label_tok
        .parse()
        .map_err(|_| parse_err(line_no, format!("malformed label `{label_tok}`"), text))?;
    let label = match (raw_label, policy) {
        (0..=2, _) => raw_label as u8,
        (l, LabelPolicy::ClampHigh) if l > 2 => 2,
        _ => {
            return Err(parse_err(
                line_no,
                format!("label {raw_label} outside {{0,1,2}}"),
                text,
            ))
        }
    };

    let qid_tok = tokens
        .next()
        .ok_or_else(|| parse_err(line_no, "missing qid", text))?;
    let query_id = qid_tok
        .strip_prefix("qid:")
        .ok_or_else(|| parse_err(line_no, format!("expected qid:<id>, got `{qid_tok}`"), text))?
        .to_string();
    if query_id.is_empty() {
        return Err(parse_err(line_no, "empty qid", text));
    }

    let mut pairs: Vec<(usize, f64)> = Vec::new();
    for tok in tokens {
        let (fid, val) = tok
            .split_once(':')
            .ok_or_else(|| parse_err(line_no, format!("expected fid:value, got `{tok}`"), text))?;
        let fid: usize = fid
            .parse()
            .map_err(|_| parse_err(line_no, format!("non-integer feature id `{fid}`"), text))?;
        if fid == 0 {
            return Err(parse_err(line_no, "feature ids are 1-based", text));
        }
        let val: f64 = val
            .parse()
            .map_err(|_| parse_err(line_no, format!("non-numeric feature value `{val}`"), text))?;
        if !val.is_finite() {
            return Err(parse_err(line_no, format!("non-finite feature value `{val}`"), text));
        }
        pairs.push((fid, val));
    }

    let dim = pairs.iter().map(|&(fid, _)| fid).max().unwrap_or(0);
    let mut features = vec![0.0; dim];
    for (fid, val) in pairs {
        features[fid - 1] = val;
    }

    Ok(DocumentRecord {
        label,
        query_id,
        features,
        comment,
    })
}

/// Render a record back to its canonical line form (all features written,
/// including zeros). `parse_line(render(r))` round-trips.
pub fn render_line(rec: &DocumentRecord) -> String {
    let mut out = format!("{} qid:{}", rec.label, rec.query_id);
    for (i, v) in rec.features.iter().enumerate() {
        out.push_str(&format!(" {}:{}", i + 1, v));
    }
    if let Some(c) = &rec.comment {
        out.push_str(&format!(" #{c}"));
    }
    out
}

/// Read a stream of LETOR lines into a dataset. Blank lines are skipped.
/// Queries keep first-appearance order; documents keep file order.
pub fn load_dataset<R: Read>(reader: R) -> Result<Dataset, DataError> {
    load_dataset_with(reader, LabelPolicy::Strict)
}

pub fn load_dataset_with<R: Read>(reader: R, policy: LabelPolicy) -> Result<Dataset, DataError> {
    let buf = BufReader::new(reader);
    let mut groups: Vec<QueryGroup> = Vec::new();
    let mut index: std::collections::HashMap<String, usize> = std::collections::HashMap::new();
    let mut feature_dim = 0usize;

    for (i, line) in buf.lines().enumerate() {
        let line = line.map_err(|e| DataError::Io {
            path: PathBuf::from("<stream>"),
            source: e,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = parse_line_with(&line, policy, i + 1)?;
        feature_dim = feature_dim.max(rec.features.len());
        match index.get(&rec.query_id) {
            Some(&gi) => groups[gi].docs.push(rec),
            None => {
                index.insert(rec.query_id.clone(), groups.len());
                groups.push(QueryGroup {
                    query_id: rec.query_id.clone(),
                    docs: vec![rec],
                });
            }
        }
    }
    if groups.is_empty() {
        return Err(DataError::Empty);
    }
    for g in &mut groups {
        for d in &mut g.docs {
            d.features.resize(feature_dim, 0.0);
        }
    }
    Ok(Dataset { groups, feature_dim })
}

/// File names inside each `Fold<K>` directory.
#[derive(Debug, Clone)]
pub struct FoldLayout {
    pub train_file: String,
    pub vali_file: String,
    pub test_file: String,
}

impl Default for FoldLayout {
    fn default() -> Self {
        FoldLayout {
            train_file: "train.txt".into(),
            vali_file: "vali.txt".into(),
            test_file: "test.txt".into(),
        }
    }
}

fn load_file(path: &Path, policy: LabelPolicy) -> Result<Dataset, DataError> {
    let f = File::open(path).map_err(|e| DataError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    load_dataset_with(f, policy)
}

/// Load the standard `<root>/Fold<K>/{train,vali,test}` layout for K = 1..5.
pub fn load_folds(root: &Path, layout: &FoldLayout, policy: LabelPolicy) -> Result<Vec<FoldSplit>, DataError> {
    let mut folds = Vec::with_capacity(5);
    for k in 1..=5 {
        let dir = root.join(format!("Fold{k}"));
        if !dir.is_dir() {
            return Err(DataError::MissingFold(format!("Fold{k} at {}", dir.display())));
        }
        let load_split = |name: &str, split: &str| -> Result<Dataset, DataError> {
            let path = dir.join(name);
            if !path.is_file() {
                return Err(DataError::MissingFold(format!(
                    "Fold{k}/{name} at {}",
                    path.display()
                )));
            }
            load_file(&path, policy).map_err(|e| match e {
                DataError::Empty => DataError::EmptySplit {
                    fold: k,
                    split: split.to_string(),
                },
                other => other,
            })
        };
        folds.push(FoldSplit {
            fold_index: k,
            train: load_split(&layout.train_file, "train")?,
            validation: load_split(&layout.vali_file, "validation")?,
            test: load_split(&layout.test_file, "test")?,
        });
    }
    Ok(folds)
}

/// Rescale features according to `scheme`. Under `QueryMinMax` each dimension
/// is mapped to [0,1] within each query group; constant dimensions map to 0.
pub fn normalize_features(ds: &Dataset, scheme: NormScheme) -> Dataset {
    match scheme {
        NormScheme::None => ds.clone(),
        NormScheme::QueryMinMax => {
            let groups = ds
                .groups
                .iter()
                .map(|g| {
                    let mut g = g.clone();
                    for dim in 0..ds.feature_dim {
                        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
                        for d in &g.docs {
                            lo = lo.min(d.features[dim]);
                            hi = hi.max(d.features[dim]);
                        }
                        let range = hi - lo;
                        for d in &mut g.docs {
                            d.features[dim] = if range > 0.0 {
                                (d.features[dim] - lo) / range
                            } else {
                                0.0
                            };
                        }
                    }
                    g
                })
                .collect();
            Dataset {
                groups,
                feature_dim: ds.feature_dim,
            }
        }
    }
}

/// Sanity check: partitions of a fold must not share query ids.
pub fn disjoint_queries(fold: &FoldSplit) -> bool {
    let mut seen = HashSet::new();
    for ds in [&fold.train, &fold.validation, &fold.test] {
        for g in &ds.groups {
            if !seen.insert(g.query_id.clone()) {
                return false;
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sparse_line_with_comment() {
        let rec = parse_line("2 qid:10 1:0.5 3:0.25 #docGX01").unwrap();
        assert_eq!(rec.label, 2);
        assert_eq!(rec.query_id, "10");
        assert_eq!(rec.features, vec![0.5, 0.0, 0.25]);
        assert_eq!(rec.comment.as_deref(), Some("docGX01"));
    }

    #[test]
    fn parses_all_zero_features() {
        let rec = parse_line("0 qid:7 1:0 2:0").unwrap();
        assert_eq!(rec.label, 0);
        assert_eq!(rec.query_id, "7");
        assert_eq!(rec.features, vec![0.0, 0.0]);
        assert_eq!(rec.comment, None);
    }

    #[test]
    fn rejects_non_numeric_value() {
        let err = parse_line("1 qid:10 2:abc").unwrap_err();
        assert!(err.to_string().contains("abc"), "{err}");
    }

    #[test]
    fn rejects_missing_qid() {
        assert!(parse_line("1 1:0.5").is_err());
        assert!(parse_line("1").is_err());
    }

    #[test]
    fn rejects_deep_label_unless_clamped() {
        assert!(parse_line("3 qid:1 1:0.5").is_err());
        let rec = parse_line_with("4 qid:1 1:0.5", LabelPolicy::ClampHigh, 1).unwrap();
        assert_eq!(rec.label, 2);
    }

    #[test]
    fn round_trips_via_render() {
        let rec = parse_line("2 qid:10 1:0.5 3:0.25 #docGX01").unwrap();
        assert_eq!(parse_line(&render_line(&rec)).unwrap(), rec);
    }

    #[test]
    fn groups_by_qid_in_first_appearance_order() {
        let text = "0 qid:a 1:1\n1 qid:b 1:2\n\n2 qid:a 1:3\n0 qid:b 1:4\n1 qid:a 1:5\n0 qid:b 1:6\n";
        let ds = load_dataset(text.as_bytes()).unwrap();
        assert_eq!(ds.groups.len(), 2);
        assert_eq!(ds.groups[0].query_id, "a");
        assert_eq!(ds.groups[0].docs.len(), 3);
        assert_eq!(ds.groups[1].docs.len(), 3);
        assert_eq!(ds.num_docs(), 6);
    }

    #[test]
    fn feature_dim_is_max_feature_id() {
        let text = "0 qid:1 1:1 46:0.5\n1 qid:1 2:3\n";
        let ds = load_dataset(text.as_bytes()).unwrap();
        assert_eq!(ds.feature_dim, 46);
        // shorter records padded to full width
        assert_eq!(ds.groups[0].docs[1].features.len(), 46);
    }

    #[test]
    fn duplicate_lines_are_kept() {
        let text = "1 qid:1 1:2\n1 qid:1 1:2\n";
        let ds = load_dataset(text.as_bytes()).unwrap();
        assert_eq!(ds.groups[0].docs.len(), 2);
    }

    #[test]
    fn empty_stream_is_an_error() {
        assert!(matches!(load_dataset("".as_bytes()), Err(DataError::Empty)));
    }

    #[test]
    fn parse_error_carries_line_number() {
        let text = "0 qid:1 1:1\nbogus line here\n";
        let err = load_dataset(text.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn minmax_normalization() {
        let text = "0 qid:1 1:2\n1 qid:1 1:4\n2 qid:1 1:6\n";
        let ds = load_dataset(text.as_bytes()).unwrap();
        let norm = normalize_features(&ds, NormScheme::QueryMinMax);
        let vals: Vec<f64> = norm.groups[0].docs.iter().map(|d| d.features[0]).collect();
        assert_eq!(vals, vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn constant_dimension_maps_to_zero() {
        let text = "0 qid:1 1:5\n1 qid:1 1:5\n";
        let ds = load_dataset(text.as_bytes()).unwrap();
        let norm = normalize_features(&ds, NormScheme::QueryMinMax);
        assert_eq!(norm.groups[0].docs[0].features[0], 0.0);
        assert_eq!(norm.groups[0].docs[1].features[0], 0.0);
    }

    #[test]
    fn scheme_none_is_identity() {
        let text = "0 qid:1 1:5\n1 qid:1 1:7\n";
        let ds = load_dataset(text.as_bytes()).unwrap();
        assert_eq!(normalize_features(&ds, NormScheme::None), ds);
    }
}
