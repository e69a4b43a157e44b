//! Clustered longitudinal data and cluster-level fold splitting.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DMatrixView, DVector, DVectorView};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::format_f64;

/// One subject: an `m_i x p` design and its `m_i` responses in observation order.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub id: String,
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
}

impl Cluster {
    pub fn new(id: impl Into<String>, x: DMatrix<f64>, y: DVector<f64>) -> Self {
        Self { id: id.into(), x, y }
    }
}

/// Borrowed view of one cluster inside a [`ClusteredDataset`].
#[derive(Debug, Clone, Copy)]
pub struct ClusterView<'a> {
    pub index: usize,
    pub id: &'a str,
    pub x: DMatrixView<'a, f64>,
    pub y: DVectorView<'a, f64>,
}

impl ClusterView<'_> {
    pub fn size(&self) -> usize {
        self.y.len()
    }
}

/// Immutable collection of clusters sharing covariate dimension `p`.
///
/// Observations are stored stacked (cluster after cluster) so that
/// whole-sample products such as `X beta` are single matrix operations.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusteredDataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
    ids: Vec<String>,
    offsets: Vec<usize>,
    names: Vec<String>,
}

impl ClusteredDataset {
    pub fn new(clusters: Vec<Cluster>) -> Result<Self> {
        let p = clusters.first().map(|c| c.x.ncols()).unwrap_or(0);
        let names = (1..=p).map(|j| format!("x{j}")).collect();
        Self::with_names(clusters, names)
    }

    pub fn with_names(clusters: Vec<Cluster>, names: Vec<String>) -> Result<Self> {
        if clusters.is_empty() {
            return Err(Error::Data("dataset has no clusters".into()));
        }
        let p = clusters[0].x.ncols();
        if p == 0 {
            return Err(Error::Data("dataset has no covariates".into()));
        }
        if names.len() != p {
            return Err(Error::Dimension(format!(
                "{} covariate names for p = {p}",
                names.len()
            )));
        }
        let mut offsets = Vec::with_capacity(clusters.len() + 1);
        offsets.push(0);
        for c in &clusters {
            if c.x.ncols() != p {
                return Err(Error::Dimension(format!(
                    "cluster '{}' has {} columns, expected {p}",
                    c.id,
                    c.x.ncols()
                )));
            }
            if c.y.is_empty() {
                return Err(Error::Data(format!("cluster '{}' has no rows", c.id)));
            }
            if c.x.nrows() != c.y.len() {
                return Err(Error::Dimension(format!(
                    "cluster '{}' has {} design rows but {} responses",
                    c.id,
                    c.x.nrows(),
                    c.y.len()
                )));
            }
            offsets.push(offsets.last().unwrap() + c.y.len());
        }
        let total = *offsets.last().unwrap();
        let mut x = DMatrix::zeros(total, p);
        let mut y = DVector::zeros(total);
        for (c, &start) in clusters.iter().zip(&offsets) {
            let m = c.y.len();
            x.view_mut((start, 0), (m, p)).copy_from(&c.x);
            y.rows_mut(start, m).copy_from(&c.y);
        }
        let ids = clusters.into_iter().map(|c| c.id).collect();
        Ok(Self {
            x,
            y,
            ids,
            offsets,
            names,
        })
    }

    /// Number of clusters.
    pub fn n(&self) -> usize {
        self.ids.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Total number of observations across clusters.
    pub fn total_obs(&self) -> usize {
        self.y.len()
    }

    /// Stacked design matrix.
    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.names
    }

    pub fn cluster_range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    pub fn cluster_size(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    pub fn sizes(&self) -> Vec<usize> {
        (0..self.n()).map(|i| self.cluster_size(i)).collect()
    }

    pub fn max_cluster_size(&self) -> usize {
        (0..self.n()).map(|i| self.cluster_size(i)).max().unwrap_or(0)
    }

    pub fn cluster(&self, i: usize) -> ClusterView<'_> {
        let start = self.offsets[i];
        let m = self.cluster_size(i);
        ClusterView {
            index: i,
            id: &self.ids[i],
            x: self.x.view((start, 0), (m, self.p())),
            y: self.y.rows(start, m),
        }
    }

    pub fn clusters(&self) -> impl Iterator<Item = ClusterView<'_>> + '_ {
        (0..self.n()).map(move |i| self.cluster(i))
    }

    /// Owned copy of cluster `i`.
    pub fn to_cluster(&self, i: usize) -> Cluster {
        let v = self.cluster(i);
        Cluster::new(v.id, v.x.clone_owned(), v.y.clone_owned())
    }

    /// New dataset made of the given clusters, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let clusters = indices
            .iter()
            .map(|&i| {
                if i >= self.n() {
                    Err(Error::InvalidArgument(format!("cluster index {i} out of range")))
                } else {
                    Ok(self.to_cluster(i))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::with_names(clusters, self.names.clone())
    }

    /// Same clusters restricted to the given covariate columns.
    pub fn select_columns(&self, columns: &[usize]) -> Result<Self> {
        if let Some(&bad) = columns.iter().find(|&&j| j >= self.p()) {
            return Err(Error::InvalidArgument(format!("column {bad} out of range")));
        }
        Ok(Self {
            x: self.x.select_columns(columns),
            y: self.y.clone(),
            ids: self.ids.clone(),
            offsets: self.offsets.clone(),
            names: columns.iter().map(|&j| self.names[j].clone()).collect(),
        })
    }

    /// Appends a constant covariate named `intercept`.
    pub fn with_intercept(&self) -> Self {
        let x = self.x.clone().insert_column(self.p(), 1.0);
        let mut names = self.names.clone();
        names.push("intercept".into());
        Self {
            x,
            y: self.y.clone(),
            ids: self.ids.clone(),
            offsets: self.offsets.clone(),
            names,
        }
    }

    /// Same clusters with responses replaced (stacked order).
    pub fn with_response(&self, y: DVector<f64>) -> Result<Self> {
        if y.len() != self.total_obs() {
            return Err(Error::Dimension(format!(
                "{} responses for {} observations",
                y.len(),
                self.total_obs()
            )));
        }
        Ok(Self {
            y,
            ..self.clone()
        })
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv_to(file)
    }

    pub fn write_csv_to<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["cluster".to_string(), "y".to_string()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header)?;
        for c in self.clusters() {
            for r in 0..c.size() {
                let mut rec = vec![c.id.to_string(), format_f64(c.y[r])];
                rec.extend((0..self.p()).map(|j| format_f64(c.x[(r, j)])));
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Column names used when reading a dataset from CSV.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnSpec {
    pub cluster: String,
    pub response: String,
    /// `None` selects every remaining column, in file order.
    pub covariates: Option<Vec<String>>,
}

impl Default for ColumnSpec {
    fn default() -> Self {
        Self {
            cluster: "cluster".into(),
            response: "y".into(),
            covariates: None,
        }
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &ColumnSpec) -> Result<ClusteredDataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    read_csv(file, schema)
}

/// Reads a header-first CSV; rows are grouped by cluster id, keeping file
/// order within each cluster and first-appearance order across clusters.
pub fn read_csv<R: Read>(reader: R, schema: &ColumnSpec) -> Result<ClusteredDataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Data(format!("missing column '{name}'")))
    };
    let cluster_col = find(&schema.cluster)?;
    let response_col = find(&schema.response)?;
    let covariate_cols: Vec<usize> = match &schema.covariates {
        Some(names) => names.iter().map(|n| find(n)).collect::<Result<_>>()?,
        None => (0..headers.len())
            .filter(|&c| c != cluster_col && c != response_col)
            .collect(),
    };
    if covariate_cols.is_empty() {
        return Err(Error::Data("no covariate columns".into()));
    }
    let names: Vec<String> = covariate_cols.iter().map(|&c| headers[c].to_string()).collect();
    let p = covariate_cols.len();

    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, (Vec<f64>, Vec<f64>)> = HashMap::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        let parse = |col: usize| -> Result<f64> {
            let cell = record.get(col).unwrap_or("");
            cell.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| {
                    Error::Data(format!(
                        "row {}: column '{}' has non-numeric value '{cell}'",
                        line + 2,
                        &headers[col]
                    ))
                })
        };
        let id = record.get(cluster_col).unwrap_or("").to_string();
        if id.is_empty() {
            return Err(Error::Data(format!("row {}: empty cluster id", line + 2)));
        }
        let y = parse(response_col)?;
        let xs = covariate_cols.iter().map(|&c| parse(c)).collect::<Result<Vec<_>>>()?;
        let entry = rows.entry(id.clone()).or_insert_with(|| {
            order.push(id);
            (Vec::new(), Vec::new())
        });
        entry.0.extend(xs);
        entry.1.push(y);
    }
    if order.is_empty() {
        return Err(Error::Data("file has no data rows".into()));
    }
    let clusters = order
        .into_iter()
        .map(|id| {
            let (xs, ys) = rows.remove(&id).unwrap();
            let m = ys.len();
            Cluster::new(id, DMatrix::from_row_slice(m, p, &xs), DVector::from_vec(ys))
        })
        .collect();
    ClusteredDataset::with_names(clusters, names)
}

/// Cluster-to-fold map; folds are numbered `0..k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    k: usize,
    fold_of_cluster: Vec<usize>,
}

impl FoldAssignment {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn fold_of(&self, cluster: usize) -> usize {
        self.fold_of_cluster[cluster]
    }

    pub fn fold_of_cluster(&self) -> &[usize] {
        &self.fold_of_cluster
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.fold_of_cluster {
            sizes[f] += 1;
        }
        sizes
    }

    /// `(training, test)` cluster indices for fold `fold`, both ascending.
    pub fn split(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        (0..self.fold_of_cluster.len()).partition(|&i| self.fold_of_cluster[i] != fold)
    }
}

/// Randomly assigns clusters to `k` folds whose sizes differ by at most one.
pub fn make_folds(dataset: &ClusteredDataset, k: usize, seed: u64) -> Result<FoldAssignment> {
    let n = dataset.n();
    if k < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 folds, got {k}")));
    }
    if k > n {
        return Err(Error::InvalidArgument(format!(
            "{k} folds requested for {n} clusters"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold_of_cluster = vec![0; n];
    for (pos, &c) in perm.iter().enumerate() {
        fold_of_cluster[c] = pos % k;
    }
    Ok(FoldAssignment { k, fold_of_cluster })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize) -> ClusteredDataset {
        let clusters = (0..n)
            .map(|i| {
                Cluster::new(
                    format!("s{i}"),
                    DMatrix::from_fn(2, 3, |r, c| (i * 10 + r * 3 + c) as f64),
                    DVector::from_vec(vec![i as f64, -(i as f64)]),
                )
            })
            .collect();
        ClusteredDataset::new(clusters).unwrap()
    }

    #[test]
    fn load_groups_clusters() {
        let text = "cluster,y,x1,x2,x3\nA,1,1,2,3\nA,2,4,5,6\nB,3,7,8,9\nB,4,1e1,11,12\n";
        let d = read_csv(text.as_bytes(), &ColumnSpec::default()).unwrap();
        assert_eq!((d.n(), d.p()), (2, 3));
        assert_eq!(d.sizes(), vec![2, 2]);
        assert_eq!(d.cluster(1).x[(1, 0)], 10.0);
    }

    #[test]
    fn load_interleaved_keeps_file_order() {
        let text = "cluster,y,x1\nA,1,10\nB,2,20\nA,3,30\nB,4,40\n";
        let d = read_csv(text.as_bytes(), &ColumnSpec::default()).unwrap();
        assert_eq!(d.ids(), &["A".to_string(), "B".to_string()]);
        assert_eq!(d.cluster(0).y.as_slice(), &[1.0, 3.0]);
        assert_eq!(d.cluster(1).y.as_slice(), &[2.0, 4.0]);
        assert_eq!(d.cluster(1).x[(1, 0)], 40.0);
    }

    #[test]
    fn load_errors() {
        let spec = ColumnSpec::default();
        let err = read_csv("cluster,x1\nA,1\n".as_bytes(), &spec).unwrap_err();
        assert!(err.to_string().contains("'y'"), "{err}");
        assert!(read_csv("cluster,y,x1\n".as_bytes(), &spec).is_err());
        let err = read_csv("cluster,y,x1\nA,1,abc\n".as_bytes(), &spec).unwrap_err();
        assert!(err.to_string().contains("x1"));
        assert!(read_csv("cluster,y,x1\nA,1,\n".as_bytes(), &spec).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let d = toy(3);
        let mut buf = Vec::new();
        d.write_csv_to(&mut buf).unwrap();
        let back = read_csv(buf.as_slice(), &ColumnSpec::default()).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn invalid_clusters_rejected() {
        let a = Cluster::new("a", DMatrix::zeros(2, 2), DVector::zeros(2));
        let b = Cluster::new("b", DMatrix::zeros(2, 3), DVector::zeros(2));
        assert!(ClusteredDataset::new(vec![a.clone(), b]).is_err());
        let c = Cluster::new("c", DMatrix::zeros(0, 2), DVector::zeros(0));
        assert!(ClusteredDataset::new(vec![a.clone(), c]).is_err());
        let d = Cluster::new("d", DMatrix::zeros(3, 2), DVector::zeros(2));
        assert!(ClusteredDataset::new(vec![a, d]).is_err());
    }

    #[test]
    fn folds_balanced_and_deterministic() {
        let f = make_folds(&toy(10), 5, 7).unwrap();
        assert_eq!(f.fold_sizes(), vec![2; 5]);
        let mut sizes = make_folds(&toy(11), 5, 7).unwrap().fold_sizes();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![2, 2, 2, 2, 3]);
        assert_eq!(make_folds(&toy(11), 5, 3).unwrap(), make_folds(&toy(11), 5, 3).unwrap());
        assert!(make_folds(&toy(4), 5, 0).is_err());
        assert!(make_folds(&toy(4), 1, 0).is_err());
        let f = make_folds(&toy(6), 6, 1).unwrap();
        assert_eq!(f.fold_sizes(), vec![1; 6]);
    }

    #[test]
    fn split_partitions_clusters() {
        let f = make_folds(&toy(9), 4, 11).unwrap();
        let mut seen = vec![0; 9];
        for k in 0..4 {
            let (train, test) = f.split(k);
            assert_eq!(train.len() + test.len(), 9);
            for &i in &test {
                seen[i] += 1;
                assert!(!train.contains(&i));
            }
        }
        assert!(seen.iter().all(|&s| s == 1));
    }

    #[test]
    fn intercept_and_subset() {
        let d = toy(3);
        let di = d.with_intercept();
        assert_eq!(di.p(), 4);
        assert_eq!(di.covariate_names()[3], "intercept");
        assert!(di.x().column(3).iter().all(|&v| v == 1.0));
        let s = d.subset(&[2, 0]).unwrap();
        assert_eq!(s.ids(), &["s2".to_string(), "s0".to_string()]);
        assert_eq!(s.cluster(0).y, d.cluster(2).y);
    }
}
