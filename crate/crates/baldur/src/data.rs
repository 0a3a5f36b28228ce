//! Multi-view dataset handling: manifest/CSV loading, validation,
//! train-split standardization, primal/dual width decisions, relevance-vector
//! selection and fold splitting.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{BaldurError, Result};

/// One feature block: N samples × D_m features.
#[derive(Debug, Clone)]
pub struct ViewMatrix {
    pub values: DMatrix<f64>,
    pub feature_names: Vec<String>,
    pub view_name: String,
}

impl ViewMatrix {
    pub fn n_samples(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.values.ncols()
    }
}

/// Binary target matrix, N × C with entries in {0, 1}.
#[derive(Debug, Clone)]
pub struct TargetMatrix {
    pub values: DMatrix<f64>,
}

impl TargetMatrix {
    pub fn n_samples(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_outputs(&self) -> usize {
        self.values.ncols()
    }
}

/// Per-column z-scoring parameters fit on a training split.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Apply to a raw matrix with the original column count. Inactive columns
    /// (std == 0) are zeroed.
    pub fn transform(&self, raw: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = raw.clone();
        for j in 0..raw.ncols() {
            let (mu, sd) = (self.mean[j], self.std[j]);
            if sd > 0.0 {
                for i in 0..raw.nrows() {
                    out[(i, j)] = (raw[(i, j)] - mu) / sd;
                }
            } else {
                out.column_mut(j).fill(0.0);
            }
        }
        out
    }
}

/// How a dual view picks its relevance vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum RvStrategy {
    #[default]
    All,
    RandomK(usize),
}

/// Per-view metadata resolved at fit time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ViewDescriptor {
    /// true ⇔ the view is treated in the dual (wide) formulation.
    pub s_flag: bool,
    /// Row indices (into the training split) of the relevance vectors; empty
    /// for primal views.
    pub rv_indices: Vec<usize>,
    pub standardizer: Standardizer,
    /// Mask over the original feature columns; false = excluded from the model.
    pub active_features: Vec<bool>,
}

/// Manifest-level options for one view.
#[derive(Debug, Clone, Default)]
pub struct ViewOptions {
    pub force_dual: Option<bool>,
    pub rv_strategy: RvStrategy,
}

#[derive(Debug, Clone)]
pub struct MultiViewDataset {
    pub views: Vec<ViewMatrix>,
    pub targets: TargetMatrix,
    pub options: Vec<ViewOptions>,
}

impl MultiViewDataset {
    pub fn new(views: Vec<ViewMatrix>, targets: TargetMatrix) -> Result<Self> {
        let options = vec![ViewOptions::default(); views.len()];
        let ds = MultiViewDataset {
            views,
            targets,
            options,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn n_samples(&self) -> usize {
        self.targets.n_samples()
    }

    pub fn n_views(&self) -> usize {
        self.views.len()
    }

    fn validate(&self) -> Result<()> {
        let n = self.targets.n_samples();
        for view in &self.views {
            if view.n_features() == 0 {
                return Err(BaldurError::ShapeMismatch(format!(
                    "view '{}' has no features",
                    view.view_name
                )));
            }
            if view.n_samples() != n {
                return Err(BaldurError::ShapeMismatch(format!(
                    "view '{}' has {} rows, targets have {}",
                    view.view_name,
                    view.n_samples(),
                    n
                )));
            }
            if view.feature_names.len() != view.n_features() {
                return Err(BaldurError::ShapeMismatch(format!(
                    "view '{}' has {} feature names for {} columns",
                    view.view_name,
                    view.feature_names.len(),
                    view.n_features()
                )));
            }
            for i in 0..view.n_samples() {
                for j in 0..view.n_features() {
                    if !view.values[(i, j)].is_finite() {
                        return Err(BaldurError::NonFiniteValue {
                            view: view.view_name.clone(),
                            row: i,
                            col: j,
                        });
                    }
                }
            }
        }
        for i in 0..n {
            for c in 0..self.targets.n_outputs() {
                let v = self.targets.values[(i, c)];
                if v != 0.0 && v != 1.0 {
                    return Err(BaldurError::NonBinaryTarget {
                        value: v,
                        row: i,
                        col: c,
                    });
                }
            }
        }
        Ok(())
    }

    /// Row-subset copy (used by cross-validation folds).
    pub fn subset(&self, rows: &[usize]) -> MultiViewDataset {
        let views = self
            .views
            .iter()
            .map(|v| ViewMatrix {
                values: v.values.select_rows(rows),
                feature_names: v.feature_names.clone(),
                view_name: v.view_name.clone(),
            })
            .collect();
        let targets = TargetMatrix {
            values: self.targets.values.select_rows(rows),
        };
        MultiViewDataset {
            views,
            targets,
            options: self.options.clone(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFile {
    target: String,
    views: Vec<ManifestView>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestView {
    name: String,
    path: String,
    force_dual: Option<bool>,
    rv_strategy: Option<String>,
    rv_k: Option<usize>,
}

fn read_csv_matrix(path: &Path) -> Result<(Vec<String>, DMatrix<f64>)> {
    if !path.exists() {
        return Err(BaldurError::MissingFile(path.to_path_buf()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| BaldurError::Parse {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
    let names: Vec<String> = reader
        .headers()
        .map_err(|e| BaldurError::Parse {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| BaldurError::Parse {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        if record.len() != names.len() {
            return Err(BaldurError::ShapeMismatch(format!(
                "{}: row {} has {} fields, header has {}",
                path.display(),
                i + 1,
                record.len(),
                names.len()
            )));
        }
        let row: Vec<f64> = record
            .iter()
            .map(|s| {
                s.parse::<f64>().map_err(|_| BaldurError::Parse {
                    path: path.to_path_buf(),
                    detail: format!("row {}: '{}' is not a number", i + 1, s),
                })
            })
            .collect::<Result<_>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(BaldurError::ShapeMismatch(format!(
            "{}: no data rows",
            path.display()
        )));
    }
    let matrix = DMatrix::from_fn(rows.len(), names.len(), |i, j| rows[i][j]);
    Ok((names, matrix))
}

/// Load a multi-view dataset from a TOML manifest naming per-view CSVs and a
/// target CSV. Paths are resolved relative to the manifest.
pub fn load_dataset(manifest_path: &Path) -> Result<MultiViewDataset> {
    if !manifest_path.exists() {
        return Err(BaldurError::MissingFile(manifest_path.to_path_buf()));
    }
    let text = fs::read_to_string(manifest_path)?;
    let manifest: ManifestFile =
        toml::from_str(&text).map_err(|e| BaldurError::Manifest(e.to_string()))?;
    if manifest.views.is_empty() {
        return Err(BaldurError::Manifest("manifest declares no views".into()));
    }
    let base: PathBuf = manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();

    let mut views = Vec::new();
    let mut options = Vec::new();
    for mv in &manifest.views {
        let (feature_names, values) = read_csv_matrix(&base.join(&mv.path))?;
        views.push(ViewMatrix {
            values,
            feature_names,
            view_name: mv.name.clone(),
        });
        let rv_strategy = match mv.rv_strategy.as_deref() {
            None | Some("all") => RvStrategy::All,
            Some("random-k") => {
                let k = mv.rv_k.ok_or_else(|| {
                    BaldurError::Manifest(format!("view '{}': random-k needs rv_k", mv.name))
                })?;
                RvStrategy::RandomK(k)
            }
            Some(other) => {
                return Err(BaldurError::Manifest(format!(
                    "view '{}': unknown rv_strategy '{other}'",
                    mv.name
                )))
            }
        };
        options.push(ViewOptions {
            force_dual: mv.force_dual,
            rv_strategy,
        });
    }
    let (_, target_values) = read_csv_matrix(&base.join(&manifest.target))?;
    let mut dataset = MultiViewDataset::new(views, TargetMatrix {
        values: target_values,
    })?;
    dataset.options = options;
    Ok(dataset)
}

/// z-score each column on the training rows (population std). Zero-variance
/// columns are masked inactive instead of erroring.
pub fn standardize_fit_transform(
    view: &ViewMatrix,
    train_rows: &[usize],
) -> (ViewMatrix, Standardizer, Vec<bool>) {
    assert!(!train_rows.is_empty(), "train_rows must be nonempty");
    let d = view.n_features();
    let n_train = train_rows.len() as f64;
    let mut mean = vec![0.0; d];
    let mut std = vec![0.0; d];
    for j in 0..d {
        let mu = train_rows.iter().map(|&i| view.values[(i, j)]).sum::<f64>() / n_train;
        let var = train_rows
            .iter()
            .map(|&i| (view.values[(i, j)] - mu).powi(2))
            .sum::<f64>()
            / n_train;
        mean[j] = mu;
        std[j] = var.sqrt();
    }
    let standardizer = Standardizer { mean, std };
    let active: Vec<bool> = standardizer.std.iter().map(|&s| s > 0.0).collect();
    let transformed = ViewMatrix {
        values: standardizer.transform(&view.values),
        feature_names: view.feature_names.clone(),
        view_name: view.view_name.clone(),
    };
    (transformed, standardizer, active)
}

/// Dual treatment iff D_m > ratio_threshold × N_train.
pub fn decide_width(n_train: usize, d_m: usize, ratio_threshold: f64) -> bool {
    assert!(n_train >= 1 && d_m >= 1 && ratio_threshold > 0.0);
    d_m as f64 > ratio_threshold * n_train as f64
}

/// Pick relevance-vector row indices for a dual view. `All` returns
/// 0..n_train; `RandomK` draws k distinct rows, deterministic per seed.
pub fn select_relevance_vectors(
    n_train: usize,
    strategy: RvStrategy,
    seed: u64,
) -> Result<Vec<usize>> {
    match strategy {
        RvStrategy::All => Ok((0..n_train).collect()),
        RvStrategy::RandomK(k) => {
            if k > n_train {
                return Err(BaldurError::KTooLarge { k, n_train });
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut idx: Vec<usize> = (0..n_train).collect();
            idx.shuffle(&mut rng);
            let mut chosen: Vec<usize> = idx.into_iter().take(k).collect();
            chosen.sort_unstable();
            Ok(chosen)
        }
    }
}

/// Disjoint (train, test) index pairs covering all rows. Stratified splits
/// group rows by their full label pattern and deal each group round-robin, so
/// per-fold class proportions hold within ±1 sample.
pub fn split_folds(
    targets: &TargetMatrix,
    n_folds: usize,
    seed: u64,
    stratified: bool,
) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if n_folds < 2 {
        return Err(BaldurError::InvalidConfig(format!(
            "n_folds must be ≥ 2, got {n_folds}"
        )));
    }
    let n = targets.n_samples();
    if n < n_folds {
        return Err(BaldurError::InvalidConfig(format!(
            "{n} samples cannot fill {n_folds} folds"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_members: Vec<Vec<usize>> = vec![Vec::new(); n_folds];

    if stratified {
        let mut groups: BTreeMap<Vec<u8>, Vec<usize>> = BTreeMap::new();
        for i in 0..n {
            let key: Vec<u8> = (0..targets.n_outputs())
                .map(|c| targets.values[(i, c)] as u8)
                .collect();
            groups.entry(key).or_default().push(i);
        }
        for (key, mut members) in groups {
            if members.len() < n_folds {
                return Err(BaldurError::InsufficientClassMembers {
                    class: format!("{key:?}"),
                    count: members.len(),
                    n_folds,
                });
            }
            members.shuffle(&mut rng);
            for (pos, idx) in members.into_iter().enumerate() {
                fold_members[pos % n_folds].push(idx);
            }
        }
    } else {
        let mut all: Vec<usize> = (0..n).collect();
        all.shuffle(&mut rng);
        for (pos, idx) in all.into_iter().enumerate() {
            fold_members[pos % n_folds].push(idx);
        }
    }

    let mut folds = Vec::with_capacity(n_folds);
    for f in 0..n_folds {
        let mut test = fold_members[f].clone();
        test.sort_unstable();
        let mut train: Vec<usize> = (0..n).filter(|i| !test.contains(i)).collect();
        train.sort_unstable();
        folds.push((train, test));
    }
    Ok(folds)
}

/// Serializable fold assignment for exact reproduction.
#[derive(Debug, Serialize, Deserialize)]
pub struct FoldFile {
    pub folds: Vec<FoldEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FoldEntry {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn export_folds(folds: &[(Vec<usize>, Vec<usize>)], path: &Path) -> Result<()> {
    let file = FoldFile {
        folds: folds
            .iter()
            .map(|(train, test)| FoldEntry {
                train: train.clone(),
                test: test.clone(),
            })
            .collect(),
    };
    let text = serde_json::to_string_pretty(&file)
        .map_err(|e| BaldurError::Manifest(e.to_string()))?;
    fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::io::Write;

    fn view(name: &str, rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> ViewMatrix {
        ViewMatrix {
            values: DMatrix::from_fn(rows, cols, f),
            feature_names: (0..cols).map(|j| format!("{name}_{j}")).collect(),
            view_name: name.to_string(),
        }
    }

    fn write_csv(dir: &Path, name: &str, header: &str, rows: &[&str]) -> PathBuf {
        let path = dir.join(name);
        let mut f = fs::File::create(&path).unwrap();
        writeln!(f, "{header}").unwrap();
        for r in rows {
            writeln!(f, "{r}").unwrap();
        }
        path
    }

    #[test]
    fn load_dataset_shapes() {
        let dir = tempfile::tempdir().unwrap();
        write_csv(
            dir.path(),
            "v1.csv",
            "a,b,c",
            &["1,2,3", "4,5,6", "7,8,9", "1,1,1"],
        );
        write_csv(
            dir.path(),
            "v2.csv",
            "p,q,r,s,t",
            &["1,2,3,4,5", "2,3,4,5,6", "3,4,5,6,7", "0,0,0,0,1"],
        );
        write_csv(dir.path(), "targets.csv", "label", &["0", "1", "1", "0"]);
        let manifest = dir.path().join("manifest.toml");
        fs::write(
            &manifest,
            r#"
target = "targets.csv"

[[views]]
name = "first"
path = "v1.csv"

[[views]]
name = "second"
path = "v2.csv"
"#,
        )
        .unwrap();
        let ds = load_dataset(&manifest).unwrap();
        assert_eq!(ds.n_views(), 2);
        assert_eq!(ds.n_samples(), 4);
        assert_eq!(ds.targets.n_outputs(), 1);
        assert_eq!(ds.views[0].feature_names, vec!["a", "b", "c"]);
    }

    #[test]
    fn load_dataset_row_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        write_csv(dir.path(), "v1.csv", "a", &["1", "2", "3", "4"]);
        write_csv(dir.path(), "v2.csv", "b", &["1", "2", "3", "4", "5"]);
        write_csv(dir.path(), "targets.csv", "label", &["0", "1", "1", "0"]);
        let manifest = dir.path().join("manifest.toml");
        fs::write(
            &manifest,
            r#"
target = "targets.csv"

[[views]]
name = "first"
path = "v1.csv"

[[views]]
name = "second"
path = "v2.csv"
"#,
        )
        .unwrap();
        match load_dataset(&manifest) {
            Err(BaldurError::ShapeMismatch(_)) => {}
            other => panic!("expected ShapeMismatch, got {other:?}"),
        }
    }

    #[test]
    fn load_dataset_nonbinary_target() {
        let dir = tempfile::tempdir().unwrap();
        write_csv(dir.path(), "v1.csv", "a", &["1", "2", "3"]);
        write_csv(dir.path(), "targets.csv", "label", &["0", "2", "1"]);
        let manifest = dir.path().join("manifest.toml");
        fs::write(
            &manifest,
            "target = \"targets.csv\"\n\n[[views]]\nname = \"v\"\npath = \"v1.csv\"\n",
        )
        .unwrap();
        match load_dataset(&manifest) {
            Err(BaldurError::NonBinaryTarget { value, .. }) => assert_eq!(value, 2.0),
            other => panic!("expected NonBinaryTarget, got {other:?}"),
        }
    }

    #[test]
    fn missing_manifest_is_reported() {
        match load_dataset(Path::new("/nonexistent/manifest.toml")) {
            Err(BaldurError::MissingFile(p)) => {
                assert!(p.to_string_lossy().contains("nonexistent"))
            }
            other => panic!("expected MissingFile, got {other:?}"),
        }
    }

    #[test]
    fn unknown_manifest_key_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = dir.path().join("manifest.toml");
        fs::write(
            &manifest,
            "target = \"t.csv\"\nbogus = 1\n\n[[views]]\nname = \"v\"\npath = \"v.csv\"\n",
        )
        .unwrap();
        assert!(matches!(
            load_dataset(&manifest),
            Err(BaldurError::Manifest(_))
        ));
    }

    #[test]
    fn standardize_oracle() {
        let v = view("v", 3, 1, |i, _| (i + 1) as f64);
        let (t, s, active) = standardize_fit_transform(&v, &[0, 1, 2]);
        assert_relative_eq!(s.mean[0], 2.0);
        assert_relative_eq!(s.std[0], 0.816496580927726, epsilon = 1e-12);
        assert_relative_eq!(t.values[(0, 0)], -1.224744871391589, epsilon = 1e-12);
        assert_relative_eq!(t.values[(1, 0)], 0.0, epsilon = 1e-12);
        assert_relative_eq!(t.values[(2, 0)], 1.224744871391589, epsilon = 1e-12);
        assert!(active[0]);
    }

    #[test]
    fn standardize_constant_column_masked() {
        let v = view("v", 3, 2, |i, j| if j == 0 { 5.0 } else { i as f64 });
        let (t, _, active) = standardize_fit_transform(&v, &[0, 1, 2]);
        assert!(!active[0]);
        assert!(active[1]);
        assert_eq!(t.values[(0, 0)], 0.0);
        assert_eq!(t.values[(2, 0)], 0.0);
    }

    #[test]
    fn standardize_idempotent_on_zscored() {
        let v = view("v", 5, 1, |i, _| i as f64 * 1.7 - 2.0);
        let (t1, _, _) = standardize_fit_transform(&v, &[0, 1, 2, 3, 4]);
        let (t2, _, _) = standardize_fit_transform(&t1, &[0, 1, 2, 3, 4]);
        for i in 0..5 {
            assert!((t1.values[(i, 0)] - t2.values[(i, 0)]).abs() < 1e-12);
        }
    }

    #[test]
    fn standardize_train_columns_are_zscored() {
        let v = view("v", 6, 3, |i, j| (i * 3 + j) as f64 * 0.9 + j as f64);
        let train = [0, 2, 3, 5];
        let (t, _, _) = standardize_fit_transform(&v, &train);
        for j in 0..3 {
            let mean: f64 = train.iter().map(|&i| t.values[(i, j)]).sum::<f64>() / 4.0;
            let var: f64 =
                train.iter().map(|&i| (t.values[(i, j)] - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-10);
            assert!((var.sqrt() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn width_decision_cases() {
        assert!(decide_width(100, 300, 1.0));
        assert!(!decide_width(100, 100, 1.0));
        assert!(decide_width(50, 841_685, 1.0));
    }

    #[test]
    fn width_decision_monotone_in_d() {
        for n in [1usize, 10, 100] {
            let mut prev = false;
            for d in 1..300 {
                let now = decide_width(n, d, 1.0);
                assert!(!(prev && !now), "true flipped back to false at d={d}, n={n}");
                prev = now;
            }
        }
    }

    #[test]
    fn relevance_vectors_all_and_random() {
        assert_eq!(
            select_relevance_vectors(10, RvStrategy::All, 0).unwrap(),
            (0..10).collect::<Vec<_>>()
        );
        let a = select_relevance_vectors(10, RvStrategy::RandomK(5), 7).unwrap();
        let b = select_relevance_vectors(10, RvStrategy::RandomK(5), 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 5);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert!(matches!(
            select_relevance_vectors(4, RvStrategy::RandomK(5), 0),
            Err(BaldurError::KTooLarge { .. })
        ));
    }

    fn targets_from(bits: &[u8]) -> TargetMatrix {
        TargetMatrix {
            values: DMatrix::from_fn(bits.len(), 1, |i, _| bits[i] as f64),
        }
    }

    #[test]
    fn folds_partition_and_sizes() {
        let t = targets_from(&[0, 1, 0, 1, 0, 1, 0, 1, 0, 1]);
        let folds = split_folds(&t, 5, 3, false).unwrap();
        assert_eq!(folds.len(), 5);
        let mut seen = vec![false; 10];
        for (train, test) in &folds {
            assert_eq!(test.len(), 2);
            for &i in test {
                assert!(!seen[i]);
                seen[i] = true;
                assert!(!train.contains(&i));
            }
            assert_eq!(train.len() + test.len(), 10);
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn stratified_preserves_proportions() {
        let t = targets_from(&[1, 1, 1, 1, 1, 1, 0, 0, 0, 0]);
        let folds = split_folds(&t, 2, 11, true).unwrap();
        for (_, test) in &folds {
            let pos = test.iter().filter(|&&i| i < 6).count();
            let neg = test.len() - pos;
            assert_eq!(pos, 3);
            assert_eq!(neg, 2);
        }
    }

    #[test]
    fn folds_deterministic_per_seed() {
        let t = targets_from(&[0, 1, 0, 1, 0, 1, 0, 1, 1, 0, 1, 0]);
        let a = split_folds(&t, 3, 42, true).unwrap();
        let b = split_folds(&t, 3, 42, true).unwrap();
        assert_eq!(a, b);
        let c = split_folds(&t, 3, 43, true).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn stratified_insufficient_members() {
        let t = targets_from(&[0, 1, 1, 1, 1, 1]);
        assert!(matches!(
            split_folds(&t, 2, 0, true),
            Err(BaldurError::InsufficientClassMembers { .. })
        ));
    }
}
