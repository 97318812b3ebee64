//! Labelled point sets, the two-spiral generator, and stratified splitting.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::numerics::{one_hot_class, DenseMatrix};
use crate::rng::{stream, Purpose};

/// Features (`N x d`) with one-hot labels (`N x c`), one sample per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: DenseMatrix,
    labels: DenseMatrix,
    classes: Vec<usize>,
    // d x N copy of the features, the layout the batched forward pass wants.
    inputs: DenseMatrix,
}

impl Dataset {
    pub fn new(features: DenseMatrix, labels: DenseMatrix) -> Result<Self> {
        if features.rows() != labels.rows() {
            return Err(Error::Shape(format!(
                "{} feature rows but {} label rows",
                features.rows(),
                labels.rows()
            )));
        }
        let classes = (0..labels.rows())
            .map(|r| one_hot_class(labels.row(r)))
            .collect::<Result<Vec<_>>>()?;
        let inputs = features.transpose();
        Ok(Self {
            features,
            labels,
            classes,
            inputs,
        })
    }

    /// Builds a dataset from feature rows and class indices.
    pub fn from_classes(
        features: DenseMatrix,
        classes: &[usize],
        num_classes: usize,
    ) -> Result<Self> {
        if let Some(&bad) = classes.iter().find(|&&c| c >= num_classes) {
            return Err(Error::InvalidLabel(format!(
                "class {bad} out of range 0..{num_classes}"
            )));
        }
        let mut labels = DenseMatrix::zeros(classes.len().max(1), num_classes);
        for (r, &c) in classes.iter().enumerate() {
            labels.set(r, c, 1.0);
        }
        Self::new(features, labels)
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.labels.cols()
    }

    pub fn features(&self) -> &DenseMatrix {
        &self.features
    }

    pub fn labels(&self) -> &DenseMatrix {
        &self.labels
    }

    pub fn classes(&self) -> &[usize] {
        &self.classes
    }

    /// Features laid out one sample per column.
    pub fn inputs(&self) -> &DenseMatrix {
        &self.inputs
    }

    /// The rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let features = self.features.select_rows(indices);
        let labels = self.labels.select_rows(indices);
        Dataset {
            inputs: self.inputs.select_columns(indices),
            classes: indices.iter().map(|&i| self.classes[i]).collect(),
            features,
            labels,
        }
    }

    /// Row-wise concatenation with another dataset of the same dims.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.feature_dim() != other.feature_dim() || self.num_classes() != other.num_classes() {
            return Err(Error::Shape(
                "concat: datasets have different dimensions".into(),
            ));
        }
        let rows = |m: &DenseMatrix| (0..m.rows()).map(|r| m.row(r).to_vec()).collect::<Vec<_>>();
        let mut f = rows(&self.features);
        f.extend(rows(&other.features));
        let mut l = rows(&self.labels);
        l.extend(rows(&other.labels));
        Dataset::new(DenseMatrix::from_rows(&f)?, DenseMatrix::from_rows(&l)?)
    }
}

/// Which side of the split a row belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Train,
    Test,
}

impl Role {
    fn as_str(self) -> &'static str {
        match self {
            Role::Train => "train",
            Role::Test => "test",
        }
    }
}

/// A train/test pair, stored on disk as a single CSV with a role column.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub train: Dataset,
    pub test: Dataset,
}

impl SplitDataset {
    /// CSV with header `x1,x2,...,class,role`; floats use 17 significant digits.
    pub fn to_csv(&self) -> String {
        let d = self.train.feature_dim();
        let mut out = String::new();
        for j in 1..=d {
            let _ = write!(out, "x{j},");
        }
        out.push_str("class,role\n");
        for (set, role) in [(&self.train, Role::Train), (&self.test, Role::Test)] {
            for r in 0..set.len() {
                for v in set.features.row(r) {
                    let _ = write!(out, "{v:.16e},");
                }
                let _ = writeln!(out, "{},{}", set.classes[r], role.as_str());
            }
        }
        out
    }

    pub fn from_csv(text: &str, num_classes: usize) -> Result<Self> {
        let parse_err = |reason: String| Error::Parse {
            path: "dataset".into(),
            reason,
        };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| parse_err("empty file".into()))?;
        let d = header.split(',').count().checked_sub(2).filter(|&d| d > 0);
        let d = d.ok_or_else(|| parse_err(format!("bad header {header:?}")))?;
        let mut parts: [(Vec<Vec<f64>>, Vec<usize>); 2] = Default::default();
        for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != d + 2 {
                return Err(parse_err(format!(
                    "line {}: expected {} fields",
                    n + 2,
                    d + 2
                )));
            }
            let x = fields[..d]
                .iter()
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| parse_err(format!("line {}: {e}", n + 2)))?;
            let class = fields[d]
                .trim()
                .parse::<usize>()
                .map_err(|e| parse_err(format!("line {}: {e}", n + 2)))?;
            let slot = match fields[d + 1].trim() {
                "train" => 0,
                "test" => 1,
                other => return Err(parse_err(format!("line {}: unknown role {other:?}", n + 2))),
            };
            parts[slot].0.push(x);
            parts[slot].1.push(class);
        }
        let [train, test] = parts;
        let build = |(rows, classes): (Vec<Vec<f64>>, Vec<usize>)| {
            if rows.is_empty() {
                return Err(Error::EmptyDataset);
            }
            Dataset::from_classes(DenseMatrix::from_rows(&rows)?, &classes, num_classes)
        };
        Ok(Self {
            train: build(train)?,
            test: build(test)?,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn read(path: &Path, num_classes: usize) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_csv(&text, num_classes).map_err(|e| match e {
            Error::Parse { reason, .. } => Error::Parse {
                path: path.display().to_string(),
                reason,
            },
            other => other,
        })
    }
}

/// Two interleaved Archimedean spirals in the plane.
///
/// Class `c` points sit at angle `t + c*pi` and radius `t / (turns * 2pi)`,
/// with `t` uniform in `(0, turns * 2pi]`. Gaussian noise of standard
/// deviation `noise_std` is added to both coordinates.
pub fn generate_spirals(n_total: usize, noise_std: f64, turns: f64, seed: u64) -> Result<Dataset> {
    if n_total == 0 || !n_total.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "spiral point count must be even and positive, got {n_total}"
        )));
    }
    if !(noise_std >= 0.0) || !(turns > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "need noise_std >= 0 and turns > 0, got {noise_std}, {turns}"
        )));
    }
    let mut rng = stream(seed, Purpose::Data);
    let t_max = turns * 2.0 * PI;
    let per_class = n_total / 2;
    let mut rows = Vec::with_capacity(n_total);
    let mut classes = Vec::with_capacity(n_total);
    for class in 0..2 {
        for _ in 0..per_class {
            let u: f64 = rng.gen();
            let t = t_max * (1.0 - u);
            let radius = t / t_max;
            let angle = t + class as f64 * PI;
            let nx: f64 = rng.sample(StandardNormal);
            let ny: f64 = rng.sample(StandardNormal);
            rows.push(vec![
                radius * angle.cos() + noise_std * nx,
                radius * angle.sin() + noise_std * ny,
            ]);
            classes.push(class);
        }
    }
    Dataset::from_classes(DenseMatrix::from_rows(&rows)?, &classes, 2)
}

/// Seeded stratified split: each class contributes to the training set in
/// proportion to its share of the data, and both halves are shuffled.
pub fn split_train_test(data: &Dataset, n_train: usize, seed: u64) -> Result<SplitDataset> {
    let n = data.len();
    if n_train == 0 || n_train >= n {
        return Err(Error::InvalidArgument(format!(
            "n_train must be in 1..{n}, got {n_train}"
        )));
    }
    let mut rng = stream(seed, Purpose::Split);
    let mut train = Vec::with_capacity(n_train);
    let mut test = Vec::with_capacity(n - n_train);
    let num_classes = data.num_classes();
    let mut assigned = 0;
    let mut seen = 0;
    for class in 0..num_classes {
        let mut idx: Vec<usize> = (0..n).filter(|&i| data.classes()[i] == class).collect();
        idx.shuffle(&mut rng);
        seen += idx.len();
        // Cumulative rounding keeps the total exactly n_train.
        let target = (n_train * seen + n / 2) / n;
        let take = target - assigned;
        assigned = target;
        train.extend_from_slice(&idx[..take]);
        test.extend_from_slice(&idx[take..]);
    }
    train.shuffle(&mut rng);
    test.shuffle(&mut rng);
    Ok(SplitDataset {
        train: data.subset(&train),
        test: data.subset(&test),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spirals_are_balanced() {
        let d = generate_spirals(600, 0.05, 1.5, 3).unwrap();
        assert_eq!(d.len(), 600);
        assert_eq!(d.classes().iter().filter(|&&c| c == 0).count(), 300);
        assert_eq!(d.feature_dim(), 2);
        assert_eq!(d.num_classes(), 2);
    }

    #[test]
    fn spirals_are_deterministic() {
        assert_eq!(
            generate_spirals(100, 0.0, 1.5, 11).unwrap(),
            generate_spirals(100, 0.0, 1.5, 11).unwrap()
        );
        assert_ne!(
            generate_spirals(100, 0.1, 1.5, 11).unwrap(),
            generate_spirals(100, 0.1, 1.5, 12).unwrap()
        );
    }

    #[test]
    fn noiseless_classes_do_not_overlap() {
        let d = generate_spirals(600, 0.0, 1.5, 5).unwrap();
        let f = d.features();
        let mut min_dist = f64::INFINITY;
        for i in 0..d.len() {
            for j in 0..d.len() {
                if d.classes()[i] != d.classes()[j] {
                    let dx = f.get(i, 0) - f.get(j, 0);
                    let dy = f.get(i, 1) - f.get(j, 1);
                    min_dist = min_dist.min((dx * dx + dy * dy).sqrt());
                }
            }
        }
        assert!(min_dist > 0.0);
    }

    #[test]
    fn odd_count_rejected() {
        assert!(generate_spirals(7, 0.0, 1.0, 0).is_err());
    }

    #[test]
    fn split_sizes_balance_and_partition() {
        let d = generate_spirals(600, 0.1, 1.5, 1).unwrap();
        let s = split_train_test(&d, 450, 9).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (450, 150));
        for part in [&s.train, &s.test] {
            let ones = part.classes().iter().filter(|&&c| c == 1).count() as f64;
            let share = ones / part.len() as f64;
            assert!((share - 0.5).abs() <= 0.05, "class share {share}");
        }
        // Disjoint and covering: sort all rows and compare to the original.
        let key = |ds: &Dataset| {
            (0..ds.len())
                .map(|r| {
                    let row = ds.features().row(r);
                    (row[0].to_bits(), row[1].to_bits(), ds.classes()[r])
                })
                .collect::<Vec<_>>()
        };
        let mut joined = key(&s.train);
        joined.extend(key(&s.test));
        joined.sort();
        let mut original = key(&d);
        original.sort();
        assert_eq!(joined, original);
        assert_eq!(s, split_train_test(&d, 450, 9).unwrap());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let d = generate_spirals(40, 0.2, 1.0, 2).unwrap();
        let s = split_train_test(&d, 30, 2).unwrap();
        let text = s.to_csv();
        let back = SplitDataset::from_csv(&text, 2).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.to_csv(), text);
    }

    #[test]
    fn csv_rejects_unknown_role() {
        let text = "x1,x2,class,role\n0.1,0.2,0,validation\n";
        assert!(matches!(
            SplitDataset::from_csv(text, 2),
            Err(Error::Parse { .. })
        ));
    }
}
