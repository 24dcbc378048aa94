//! Labeled datasets, synthetic Gaussian blobs, forget/retain splits and CSV I/O.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{streams, Matrix, RngStream};

/// Feature matrix with integer labels in `[0, K)` and optional group ids.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Matrix,
    labels: Vec<usize>,
    groups: Option<Vec<usize>>,
    num_classes: usize,
}

impl LabeledDataset {
    pub fn new(
        features: Matrix,
        labels: Vec<usize>,
        groups: Option<Vec<usize>>,
        num_classes: usize,
    ) -> Result<Self> {
        if labels.len() != features.rows() {
            return Err(Error::Dimension(format!(
                "{} labels for {} rows",
                labels.len(),
                features.rows()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::InvalidParameter(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        if let Some(g) = &groups {
            if g.len() != labels.len() {
                return Err(Error::Dimension(format!(
                    "{} group ids for {} rows",
                    g.len(),
                    labels.len()
                )));
            }
        }
        if !features.is_finite() {
            return Err(Error::NonFinite("dataset features".into()));
        }
        Ok(Self {
            features,
            labels,
            groups,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn groups(&self) -> Option<&[usize]> {
        self.groups.as_deref()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Rows at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            groups: self
                .groups
                .as_ref()
                .map(|g| indices.iter().map(|&i| g[i]).collect()),
            num_classes: self.num_classes,
        }
    }

    pub fn indices_where(&self, pred: impl Fn(usize) -> bool) -> Vec<usize> {
        (0..self.len()).filter(|&i| pred(i)).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }
}

/// Parameters of the Gaussian blob generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobSpec {
    pub classes: usize,
    pub per_class: usize,
    pub dim: usize,
    pub spread: f64,
    pub subgroups_per_class: usize,
    /// Standard deviation of class centers around the origin.
    pub center_scale: f64,
    /// Standard deviation of subgroup centers around their class center.
    pub subgroup_offset: f64,
    /// Constant added to every coordinate of every center.
    #[serde(default)]
    pub center_offset: f64,
}

impl Default for BlobSpec {
    fn default() -> Self {
        Self {
            classes: 3,
            per_class: 100,
            dim: 2,
            spread: 1.0,
            subgroups_per_class: 2,
            center_scale: 4.0,
            subgroup_offset: 1.0,
            center_offset: 0.0,
        }
    }
}

impl BlobSpec {
    pub fn validate(&self) -> Result<()> {
        if !self.center_offset.is_finite() {
            return Err(Error::InvalidParameter("center_offset must be finite".into()));
        }
        if self.classes < 2 || self.per_class < 2 || self.subgroups_per_class < 1 || self.dim < 1 {
            return Err(Error::InvalidParameter(format!(
                "blob generator needs classes >= 2, per_class >= 2, subgroups >= 1, dim >= 1 (got {}, {}, {}, {})",
                self.classes, self.per_class, self.subgroups_per_class, self.dim
            )));
        }
        for (name, v) in [
            ("spread", self.spread),
            ("center_scale", self.center_scale),
            ("subgroup_offset", self.subgroup_offset),
        ] {
            if v < 0.0 || !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn centers<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<BlobCenters> {
        self.validate()?;
        let class_normal = Normal::new(0.0, self.center_scale).expect("validated");
        let sub_normal = Normal::new(0.0, self.subgroup_offset).expect("validated");
        let mut subgroup_centers = Vec::with_capacity(self.classes * self.subgroups_per_class);
        for _ in 0..self.classes {
            let center: Vec<f64> = (0..self.dim)
                .map(|_| self.center_offset + class_normal.sample(rng))
                .collect();
            for _ in 0..self.subgroups_per_class {
                subgroup_centers.push(center.iter().map(|c| c + sub_normal.sample(rng)).collect());
            }
        }
        Ok(BlobCenters {
            classes: self.classes,
            subgroups_per_class: self.subgroups_per_class,
            subgroup_centers,
        })
    }
}

/// Frozen cluster means; draw any number of samples from the same distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct BlobCenters {
    classes: usize,
    subgroups_per_class: usize,
    /// Indexed by group id `class * subgroups_per_class + s`.
    subgroup_centers: Vec<Vec<f64>>,
}

impl BlobCenters {
    /// `per_class` points per class, assigned round-robin to subgroups.
    pub fn draw<R: Rng + ?Sized>(&self, per_class: usize, spread: f64, rng: &mut R) -> Result<LabeledDataset> {
        if spread < 0.0 || !spread.is_finite() {
            return Err(Error::InvalidParameter(format!("spread must be >= 0, got {spread}")));
        }
        let dim = self.subgroup_centers[0].len();
        let noise = Normal::new(0.0, spread).expect("validated");
        let n = self.classes * per_class;
        let mut data = Vec::with_capacity(n * dim);
        let mut labels = Vec::with_capacity(n);
        let mut groups = Vec::with_capacity(n);
        for class in 0..self.classes {
            for i in 0..per_class {
                let group = class * self.subgroups_per_class + i % self.subgroups_per_class;
                data.extend(self.subgroup_centers[group].iter().map(|c| c + noise.sample(rng)));
                labels.push(class);
                groups.push(group);
            }
        }
        LabeledDataset::new(Matrix::from_vec(n, dim, data)?, labels, Some(groups), self.classes)
    }
}

/// Gaussian blobs with per-class subgroups; centers and points from one stream.
pub fn gen_blobs<R: Rng + ?Sized>(spec: &BlobSpec, rng: &mut R) -> Result<LabeledDataset> {
    spec.centers(rng)?.draw(spec.per_class, spec.spread, rng)
}

/// Train and test sets sharing cluster centers, sampled on disjoint streams.
pub fn gen_train_test(spec: &BlobSpec, test_per_class: usize, seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
    let centers = spec.centers(&mut RngStream::new(seed, streams::DATA_CENTERS).rng())?;
    let train = centers.draw(
        spec.per_class,
        spec.spread,
        &mut RngStream::new(seed, streams::DATA_TRAIN).rng(),
    )?;
    let test = centers.draw(
        test_per_class,
        spec.spread,
        &mut RngStream::new(seed, streams::DATA_TEST).rng(),
    )?;
    Ok((train, test))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Paradigm {
    Classwise { class: usize },
    Random { fraction: f64 },
    Group { groups: Vec<usize> },
}

impl std::fmt::Display for Paradigm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Paradigm::Classwise { class } => write!(f, "classwise(class={class})"),
            Paradigm::Random { fraction } => write!(f, "random(fraction={fraction})"),
            Paradigm::Group { groups } => write!(f, "group(ids={groups:?})"),
        }
    }
}

/// Partition of training indices into retain and forget sets.
///
/// Indices are stored in ascending order. The forget side is never empty;
/// the retain side may be, which every unlearning method rejects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForgetSplit {
    retain: Vec<usize>,
    forget: Vec<usize>,
    paradigm: Paradigm,
}

impl ForgetSplit {
    /// Builds a split of `0..n` from a forget set.
    pub fn from_forget(n: usize, forget: impl IntoIterator<Item = usize>, paradigm: Paradigm) -> Result<Self> {
        let forget: BTreeSet<usize> = forget.into_iter().collect();
        if forget.is_empty() {
            return Err(Error::EmptyForget(format!("{paradigm} selected no rows")));
        }
        if let Some(&bad) = forget.iter().find(|&&i| i >= n) {
            return Err(Error::InvalidParameter(format!("forget index {bad} out of range {n}")));
        }
        let retain = (0..n).filter(|i| !forget.contains(i)).collect();
        Ok(Self {
            retain,
            forget: forget.into_iter().collect(),
            paradigm,
        })
    }

    pub fn retain(&self) -> &[usize] {
        &self.retain
    }

    pub fn forget(&self) -> &[usize] {
        &self.forget
    }

    pub fn paradigm(&self) -> &Paradigm {
        &self.paradigm
    }

    pub fn retain_is_empty(&self) -> bool {
        self.retain.is_empty()
    }

    pub fn retain_set(&self, ds: &LabeledDataset) -> LabeledDataset {
        ds.subset(&self.retain)
    }

    pub fn forget_set(&self, ds: &LabeledDataset) -> LabeledDataset {
        ds.subset(&self.forget)
    }

    /// Errors unless both sides are nonempty.
    pub fn require_both_sides(&self) -> Result<()> {
        if self.retain.is_empty() {
            return Err(Error::EmptyRetain(format!(
                "{} leaves no retained rows",
                self.paradigm
            )));
        }
        Ok(())
    }
}

/// Forget a whole class; the returned test set has that class removed.
pub fn split_classwise(
    ds: &LabeledDataset,
    class: usize,
    test: &LabeledDataset,
) -> Result<(ForgetSplit, LabeledDataset)> {
    if class >= ds.num_classes() {
        return Err(Error::InvalidParameter(format!(
            "class {class} out of range for {} classes",
            ds.num_classes()
        )));
    }
    let forget = ds.indices_where(|i| ds.labels()[i] == class);
    let split = ForgetSplit::from_forget(ds.len(), forget, Paradigm::Classwise { class })?;
    if split.retain_is_empty() {
        log::warn!("class-wise split of class {class} leaves an empty retain set");
    }
    let keep = test.indices_where(|i| test.labels()[i] != class);
    Ok((split, test.subset(&keep)))
}

/// Stratified random forgetting: `floor(fraction * n_c)` rows from every class present.
pub fn split_random<R: Rng + ?Sized>(ds: &LabeledDataset, fraction: f64, rng: &mut R) -> Result<ForgetSplit> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "forget fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let mut forget = Vec::new();
    for class in 0..ds.num_classes() {
        let mut members = ds.indices_where(|i| ds.labels()[i] == class);
        if members.is_empty() {
            continue;
        }
        // The epsilon keeps e.g. 0.1 * 70 from flooring to 6.
        let take = (fraction * members.len() as f64 + 1e-9).floor() as usize;
        if take == 0 {
            return Err(Error::Stratification(format!(
                "fraction {fraction} selects no rows from class {class} ({} rows)",
                members.len()
            )));
        }
        members.shuffle(rng);
        forget.extend_from_slice(&members[..take]);
    }
    ForgetSplit::from_forget(ds.len(), forget, Paradigm::Random { fraction })
}

/// Forget every row whose group id is listed.
pub fn split_group(ds: &LabeledDataset, group_ids: &[usize]) -> Result<ForgetSplit> {
    if group_ids.is_empty() {
        return Err(Error::EmptyForget("no group ids given".into()));
    }
    let groups = ds
        .groups()
        .ok_or_else(|| Error::InvalidParameter("dataset has no group column".into()))?;
    let present: BTreeSet<usize> = groups.iter().copied().collect();
    if let Some(&bad) = group_ids.iter().find(|g| !present.contains(g)) {
        return Err(Error::UnknownGroup(bad));
    }
    let wanted: BTreeSet<usize> = group_ids.iter().copied().collect();
    let forget = ds.indices_where(|i| wanted.contains(&groups[i]));
    let mut ids: Vec<usize> = wanted.into_iter().collect();
    ids.sort_unstable();
    ForgetSplit::from_forget(ds.len(), forget, Paradigm::Group { groups: ids })
}

/// Applies a paradigm; the returned test set drops a forgotten class.
pub fn apply_paradigm<R: Rng + ?Sized>(
    ds: &LabeledDataset,
    test: &LabeledDataset,
    paradigm: &Paradigm,
    rng: &mut R,
) -> Result<(ForgetSplit, LabeledDataset)> {
    match paradigm {
        Paradigm::Classwise { class } => split_classwise(ds, *class, test),
        Paradigm::Random { fraction } => Ok((split_random(ds, *fraction, rng)?, test.clone())),
        Paradigm::Group { groups } => Ok((split_group(ds, groups)?, test.clone())),
    }
}

/// 17 significant digits, enough to round-trip any f64.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes `f0,...,f{d-1},label[,group]` CSV.
pub fn save_csv(ds: &LabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    write_csv(ds, &mut w)?;
    w.flush()?;
    Ok(())
}

fn write_csv<W: std::io::Write>(ds: &LabeledDataset, w: &mut csv::Writer<W>) -> Result<()> {
    let mut header: Vec<String> = (0..ds.dim()).map(|j| format!("f{j}")).collect();
    header.push("label".into());
    if ds.groups().is_some() {
        header.push("group".into());
    }
    w.write_record(&header)?;
    for i in 0..ds.len() {
        let mut rec: Vec<String> = ds.features().row(i).iter().map(|&v| format_f64(v)).collect();
        rec.push(ds.labels()[i].to_string());
        if let Some(g) = ds.groups() {
            rec.push(g[i].to_string());
        }
        w.write_record(&rec)?;
    }
    Ok(())
}

/// Reads a dataset CSV. With `num_classes = None`, K is one past the largest label.
pub fn load_csv(path: impl AsRef<Path>, num_classes: Option<usize>) -> Result<LabeledDataset> {
    let file = std::fs::File::open(path)?;
    read_csv(file, num_classes)
}

pub fn read_csv<R: std::io::Read>(reader: R, num_classes: Option<usize>) -> Result<LabeledDataset> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = r.headers()?.clone();
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    let has_group = names.last() == Some(&"group");
    let label_pos = if has_group { names.len().wrapping_sub(2) } else { names.len().wrapping_sub(1) };
    if names.len() < 2 || names.get(label_pos) != Some(&"label") {
        return Err(Error::Parse {
            line: 1,
            message: "header must be f0,...,f{d-1},label[,group]".into(),
        });
    }
    let dim = label_pos;
    for (j, name) in names[..dim].iter().enumerate() {
        if *name != format!("f{j}") {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected column f{j}, found {name:?}"),
            });
        }
    }

    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut groups = Vec::new();
    for (row_no, rec) in r.records().enumerate() {
        let line = row_no + 2;
        let rec = rec?;
        if rec.len() != names.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", names.len(), rec.len()),
            });
        }
        for j in 0..dim {
            let v: f64 = rec[j].trim().parse().map_err(|_| Error::Parse {
                line,
                message: format!("bad feature value {:?}", &rec[j]),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    message: "non-finite feature value".into(),
                });
            }
            data.push(v);
        }
        let label: usize = rec[dim].trim().parse().map_err(|_| Error::Parse {
            line,
            message: format!("bad label {:?}", &rec[dim]),
        })?;
        if let Some(k) = num_classes {
            if label >= k {
                return Err(Error::Parse {
                    line,
                    message: format!("label {label} out of range for {k} classes"),
                });
            }
        }
        labels.push(label);
        if has_group {
            let g: usize = rec[dim + 1].trim().parse().map_err(|_| Error::Parse {
                line,
                message: format!("bad group id {:?}", &rec[dim + 1]),
            })?;
            groups.push(g);
        }
    }
    let k = match num_classes {
        Some(k) => k,
        None => labels.iter().max().map_or(2, |m| (m + 1).max(2)),
    };
    let n = labels.len();
    LabeledDataset::new(
        Matrix::from_vec(n, dim, data)?,
        labels,
        has_group.then_some(groups),
        k,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(per_class: usize) -> BlobSpec {
        BlobSpec {
            classes: 2,
            per_class,
            dim: 3,
            spread: 0.5,
            subgroups_per_class: 2,
            ..BlobSpec::default()
        }
    }

    #[test]
    fn blob_counts_and_balance() {
        let ds = gen_blobs(&spec(10), &mut RngStream::new(1, 0).rng()).unwrap();
        assert_eq!(ds.len(), 20);
        assert_eq!(ds.class_counts(), vec![10, 10]);
    }

    #[test]
    fn zero_spread_collapses_subgroups() {
        let mut s = spec(6);
        s.spread = 0.0;
        let ds = gen_blobs(&s, &mut RngStream::new(2, 0).rng()).unwrap();
        let groups = ds.groups().unwrap();
        for i in 0..ds.len() {
            for j in 0..ds.len() {
                if groups[i] == groups[j] {
                    assert_eq!(ds.features().row(i), ds.features().row(j));
                }
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = gen_blobs(&spec(5), &mut RngStream::new(3, 0).rng()).unwrap();
        let b = gen_blobs(&spec(5), &mut RngStream::new(3, 0).rng()).unwrap();
        assert_eq!(a, b);
        let (tr, te) = gen_train_test(&spec(5), 4, 3).unwrap();
        assert_eq!(te.len(), 8);
        assert_ne!(tr.features().row(0), te.features().row(0));
    }

    #[test]
    fn classwise_counts_and_test_adjustment() {
        let s = BlobSpec {
            classes: 3,
            per_class: 5,
            ..BlobSpec::default()
        };
        let (train, test) = gen_train_test(&s, 4, 1).unwrap();
        let (split, adjusted) = split_classwise(&train, 0, &test).unwrap();
        assert_eq!(split.forget().len(), 5);
        assert_eq!(split.retain().len(), 10);
        let classes: BTreeSet<usize> = adjusted.labels().iter().copied().collect();
        assert_eq!(classes, BTreeSet::from([1, 2]));
    }

    #[test]
    fn classwise_single_class_flags_empty_retain() {
        let ds = LabeledDataset::new(Matrix::zeros(3, 1), vec![1, 1, 1], None, 2).unwrap();
        let (split, _) = split_classwise(&ds, 1, &ds).unwrap();
        assert!(split.retain_is_empty());
        assert!(matches!(split.require_both_sides(), Err(Error::EmptyRetain(_))));
        assert!(matches!(split_classwise(&ds, 0, &ds), Err(Error::EmptyForget(_))));
    }

    #[test]
    fn random_split_ten_percent() {
        let s = BlobSpec {
            classes: 2,
            per_class: 50,
            ..BlobSpec::default()
        };
        let ds = gen_blobs(&s, &mut RngStream::new(5, 0).rng()).unwrap();
        let a = split_random(&ds, 0.1, &mut RngStream::new(9, 0).rng()).unwrap();
        assert_eq!(a.forget().len(), 10);
        let b = split_random(&ds, 0.1, &mut RngStream::new(9, 0).rng()).unwrap();
        assert_eq!(a, b);
        assert!(matches!(
            split_random(&ds, 0.01, &mut RngStream::new(9, 0).rng()),
            Err(Error::Stratification(_))
        ));
    }

    #[test]
    fn group_split() {
        let s = BlobSpec {
            classes: 2,
            per_class: 12,
            subgroups_per_class: 4,
            ..BlobSpec::default()
        };
        let ds = gen_blobs(&s, &mut RngStream::new(6, 0).rng()).unwrap();
        let split = split_group(&ds, &[5]).unwrap();
        let expected = ds.groups().unwrap().iter().filter(|&&g| g == 5).count();
        assert_eq!(split.forget().len(), expected);
        assert_eq!(expected, 3);
        assert!(split
            .forget()
            .iter()
            .all(|&i| ds.groups().unwrap()[i] == 5 && ds.labels()[i] == 1));
        assert!(matches!(split_group(&ds, &[]), Err(Error::EmptyForget(_))));
        assert!(matches!(split_group(&ds, &[99]), Err(Error::UnknownGroup(99))));
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let ds = gen_blobs(&spec(4), &mut RngStream::new(8, 0).rng()).unwrap();
        let mut buf = Vec::new();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            write_csv(&ds, &mut w).unwrap();
        }
        let back = read_csv(buf.as_slice(), Some(2)).unwrap();
        assert_eq!(back, ds);

        let bad = "f0,label\n0.5,2\n";
        assert!(matches!(
            read_csv(bad.as_bytes(), Some(2)),
            Err(Error::Parse { line: 2, .. })
        ));

        let no_group = "f0,f1,label\n0.5,1.5,1\n-2,3,0\n";
        let ds = read_csv(no_group.as_bytes(), Some(2)).unwrap();
        assert!(ds.groups().is_none());
        assert_eq!(ds.labels(), &[1, 0]);

        assert!(matches!(
            read_csv("x0,label\n1,0\n".as_bytes(), None),
            Err(Error::Parse { line: 1, .. })
        ));
    }
}
