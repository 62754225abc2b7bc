//! Experiment orchestration: perceive every stack under each HVS variant,
//! train and test the observer per complexity level, and tabulate AUCs.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::hvs::{HvsConfig, Method, Model, Perceiver};
use crate::observer::{self, auc_with_ci, channelize, lg_channels, BootstrapConfig, ChannelSet};
use crate::rng;
use crate::stack::{DatasetManifest, Dims, ImageStack, Label, ViewingConfig};
use crate::synth::{synthesize, SynthConfig};

pub const CSV_HEADER: &str = "model,method,complexity,auc,ci_low,ci_high,n_train,n_test,ms";

/// Top complexity level may show masking above CSF-only by at most this.
pub const TOP_LEVEL_SLACK: f64 = 0.02;
/// Masking+PM must reach this Spearman correlation (or lower).
pub const SPEARMAN_LIMIT: f64 = -0.9;
/// Levels at which masking must sit below CSF-only by more than the CI half-width.
pub const MIN_SIGNIFICANT_LEVELS: usize = 2;

/// Order-preserving map, parallel when the `parallel` feature is on.
pub fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    /// Directory holding `manifest.json` and the stack files.
    Path(PathBuf),
    /// Synthesize in memory.
    Synth(SynthConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Variant {
    pub model: Model,
    pub method: Method,
}

impl Variant {
    pub fn all() -> Vec<Variant> {
        let mut v = Vec::new();
        for model in [Model::CsfOnly, Model::CsfPlusMasking] {
            for method in [Method::Mc, Method::Pm, Method::Lf] {
                v.push(Variant { model, method });
            }
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelConfig {
    pub n_channels: usize,
    /// Channel width, pixels.
    pub width: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            n_channels: 5,
            width: 15.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub viewing: ViewingConfig,
    /// Shared HVS settings; each variant overrides `method`, and
    /// `csf_only` disables masking.
    pub hvs: HvsConfig,
    pub variants: Vec<Variant>,
    pub channels: ChannelConfig,
    pub lambda: f64,
    pub split_seed: u64,
    pub bootstrap: BootstrapConfig,
    pub output_dir: Option<PathBuf>,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
    /// Fill the `ms` column with wall time. Off by default so result files
    /// stay byte-identical across runs.
    pub record_wall_time: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetSource::Synth(SynthConfig::default()),
            viewing: ViewingConfig::default(),
            hvs: HvsConfig::default(),
            variants: Variant::all(),
            channels: ChannelConfig::default(),
            lambda: 0.2,
            split_seed: 3,
            bootstrap: BootstrapConfig::default(),
            output_dir: None,
            threads: None,
            record_wall_time: false,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: ExperimentConfig = serde_json::from_str(&text)?;
        // relative dataset/output paths resolve against the config file
        if let Some(base) = path.parent() {
            if let DatasetSource::Path(p) = &mut config.dataset {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
            if let Some(out) = &mut config.output_dir {
                if out.is_relative() {
                    *out = base.join(&*out);
                }
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.variants.is_empty() {
            return Err(Error::InvalidParam("at least one variant required".into()));
        }
        self.viewing.validate()?;
        self.hvs.validate()?;
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidParam("lambda must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn perceiver(&self, variant: Variant, dims: Dims) -> Result<Perceiver> {
        let hvs = HvsConfig {
            method: variant.method,
            ..self.hvs.clone()
        };
        Perceiver::new(dims, self.viewing, hvs, variant.model)
    }
}

/// Where stacks come from: held in memory or read from disk on demand.
pub enum StackSource {
    Memory(Vec<ImageStack>),
    Disk { root: PathBuf, manifest: DatasetManifest },
}

#[derive(Debug, Clone)]
pub struct StackInfo {
    pub id: String,
    pub label: Label,
    pub complexity: u8,
    pub dims: Dims,
}

impl StackSource {
    pub fn open(source: &DatasetSource) -> Result<Self> {
        match source {
            DatasetSource::Synth(config) => Ok(StackSource::Memory(synthesize(config)?.0)),
            DatasetSource::Path(root) => {
                let manifest = DatasetManifest::load(root)?;
                manifest.validate_structure()?;
                Ok(StackSource::Disk {
                    root: root.clone(),
                    manifest,
                })
            }
        }
    }

    pub fn infos(&self) -> Vec<StackInfo> {
        match self {
            StackSource::Memory(stacks) => stacks
                .iter()
                .map(|s| StackInfo {
                    id: s.id.clone(),
                    label: s.label,
                    complexity: s.complexity,
                    dims: s.dims,
                })
                .collect(),
            StackSource::Disk { manifest, .. } => manifest
                .entries
                .iter()
                .map(|e| StackInfo {
                    id: e.id.clone(),
                    label: e.label,
                    complexity: e.complexity,
                    dims: e.dims,
                })
                .collect(),
        }
    }

    pub fn with_stack<R>(&self, index: usize, f: impl FnOnce(&ImageStack) -> Result<R>) -> Result<R> {
        match self {
            StackSource::Memory(stacks) => f(&stacks[index]),
            StackSource::Disk { root, manifest } => f(&manifest.load_stack(root, &manifest.entries[index])?),
        }
    }

    pub fn find(&self, id: &str) -> Option<usize> {
        self.infos().iter().position(|i| i.id == id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub model: Model,
    pub method: Method,
    pub complexity: u8,
    pub auc: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub ms: u64,
}

impl ResultRow {
    pub fn variant(&self) -> Variant {
        Variant {
            model: self.model,
            method: self.method,
        }
    }

    pub fn half_width(&self) -> f64 {
        (self.ci_high - self.ci_low) / 2.0
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub config_hash: String,
    pub rows: Vec<ResultRow>,
}

impl ResultsTable {
    pub fn get(&self, variant: Variant, complexity: u8) -> Option<&ResultRow> {
        self.rows
            .iter()
            .find(|r| r.variant() == variant && r.complexity == complexity)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&csv_line(r));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == CSV_HEADER => {}
            other => {
                return Err(Error::InvalidParam(format!(
                    "results CSV header mismatch: {other:?}"
                )))
            }
        }
        let mut rows = Vec::new();
        for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let bad = |what: &str| Error::InvalidParam(format!("results CSV line {}: bad {what}", n + 2));
            let f: Vec<&str> = line.trim().split(',').collect();
            if f.len() != 9 {
                return Err(bad("field count"));
            }
            rows.push(ResultRow {
                model: f[0].parse()?,
                method: f[1].parse()?,
                complexity: f[2].parse().map_err(|_| bad("complexity"))?,
                auc: f[3].parse().map_err(|_| bad("auc"))?,
                ci_low: f[4].parse().map_err(|_| bad("ci_low"))?,
                ci_high: f[5].parse().map_err(|_| bad("ci_high"))?,
                n_train: f[6].parse().map_err(|_| bad("n_train"))?,
                n_test: f[7].parse().map_err(|_| bad("n_test"))?,
                ms: f[8].parse().map_err(|_| bad("ms"))?,
            });
        }
        Ok(ResultsTable {
            config_hash: String::new(),
            rows,
        })
    }

    /// Reads `.csv` or `.json` results.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        if path.extension().is_some_and(|e| e == "json") {
            Ok(serde_json::from_str(&text)?)
        } else {
            Self::from_csv(&text)
        }
    }
}

fn csv_line(r: &ResultRow) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{}\n",
        r.model, r.method, r.complexity, r.auc, r.ci_low, r.ci_high, r.n_train, r.n_test, r.ms
    )
}

/// Per-level train/test split: each class shuffled independently, first
/// half trains.
fn split_indices(infos: &[StackInfo], level: u8, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for label in [Label::Healthy, Label::Lesion] {
        let mut idx: Vec<usize> = infos
            .iter()
            .enumerate()
            .filter(|(_, i)| i.complexity == level && i.label == label)
            .map(|(k, _)| k)
            .collect();
        // same source partition at every level: twins stay paired
        idx.sort_by(|a, b| infos[*a].id.cmp(&infos[*b].id));
        rng::shuffle(&mut idx, rng::mix(seed, (label == Label::Lesion) as u64));
        let half = idx.len() / 2;
        train.extend_from_slice(&idx[..half]);
        test.extend_from_slice(&idx[half..]);
    }
    (train, test)
}

fn evaluate_level(
    features: &[Vec<f64>],
    infos: &[StackInfo],
    train: &[usize],
    test: &[usize],
    lambda: f64,
    bootstrap: &BootstrapConfig,
) -> Result<observer::AucEstimate> {
    let train_f: Vec<Vec<f64>> = train.iter().map(|&i| features[i].clone()).collect();
    let train_l: Vec<Label> = train.iter().map(|&i| infos[i].label).collect();
    let template = observer::train_mscho(&train_f, &train_l, lambda)?;
    let mut healthy = Vec::new();
    let mut lesion = Vec::new();
    for &i in test {
        let s = observer::score(&template, &features[i])?;
        match infos[i].label {
            Label::Healthy => healthy.push(s),
            Label::Lesion => lesion.push(s),
        }
    }
    auc_with_ci(&healthy, &lesion, bootstrap)
}

struct CsvSink {
    file: Option<(PathBuf, File)>,
}

impl CsvSink {
    fn open(dir: Option<&Path>) -> Result<Self> {
        let Some(dir) = dir else {
            return Ok(CsvSink { file: None });
        };
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("results.csv");
        let mut file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        writeln!(file, "{CSV_HEADER}").map_err(|e| Error::io(&path, e))?;
        Ok(CsvSink {
            file: Some((path, file)),
        })
    }

    fn push(&mut self, row: &ResultRow) -> Result<()> {
        if let Some((path, file)) = &mut self.file {
            file.write_all(csv_line(row).as_bytes())
                .and_then(|_| file.flush())
                .map_err(|e| Error::io(&*path, e))?;
        }
        Ok(())
    }
}

/// Runs every variant at every complexity level present in the dataset.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ResultsTable> {
    config.validate()?;
    let source = StackSource::open(&config.dataset)?;
    run_with_source(config, &source)
}

pub fn run_with_source(config: &ExperimentConfig, source: &StackSource) -> Result<ResultsTable> {
    config.validate()?;
    match config.threads {
        #[cfg(feature = "parallel")]
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::InvalidParam(format!("thread pool: {e}")))?;
            pool.install(|| run_inner(config, source))
        }
        _ => run_inner(config, source),
    }
}

fn run_inner(config: &ExperimentConfig, source: &StackSource) -> Result<ResultsTable> {
    let infos = source.infos();
    let dims = infos
        .first()
        .map(|i| i.dims)
        .ok_or_else(|| Error::InvalidParam("dataset is empty".into()))?;
    if let Some(bad) = infos.iter().find(|i| i.dims != dims) {
        return Err(Error::DimMismatch {
            expected: dims.to_string(),
            actual: format!("{} for stack {}", bad.dims, bad.id),
        });
    }
    let levels: BTreeSet<u8> = infos.iter().map(|i| i.complexity).collect();
    let channels: ChannelSet = lg_channels(config.channels.n_channels, config.channels.width, dims.nx, dims.ny)?;
    let splits: BTreeMap<u8, (Vec<usize>, Vec<usize>)> = levels
        .iter()
        .map(|&l| (l, split_indices(&infos, l, config.split_seed)))
        .collect();

    let mut table = ResultsTable {
        config_hash: config.hash(),
        rows: Vec::new(),
    };
    let mut sink = CsvSink::open(config.output_dir.as_deref())?;
    for &variant in &config.variants {
        let ctx = format!("variant {}/{}", variant.model, variant.method);
        let perceiver = config.perceiver(variant, dims).map_err(|e| e.context(ctx.clone()))?;
        for &level in &levels {
            #[cfg(not(target_arch = "wasm32"))]
            let started = std::time::Instant::now();
            let indices: Vec<usize> = (0..infos.len()).filter(|&i| infos[i].complexity == level).collect();
            let computed = par_map(&indices, |&i| {
                source
                    .with_stack(i, |stack| {
                        let perceived = perceiver.perceive(stack)?;
                        channelize(&perceived, &channels)
                    })
                    .map_err(|e| e.context(format!("{ctx}, complexity {level}, stack {}", infos[i].id)))
            });
            let mut features = vec![Vec::new(); infos.len()];
            for (&i, f) in indices.iter().zip(computed) {
                features[i] = f?;
            }
            let (train, test) = &splits[&level];
            let estimate = evaluate_level(&features, &infos, train, test, config.lambda, &config.bootstrap)
                .map_err(|e| e.context(format!("{ctx}, complexity {level}")))?;
            #[cfg(not(target_arch = "wasm32"))]
            let ms = if config.record_wall_time {
                started.elapsed().as_millis() as u64
            } else {
                0
            };
            #[cfg(target_arch = "wasm32")]
            let ms = 0;
            let row = ResultRow {
                model: variant.model,
                method: variant.method,
                complexity: level,
                auc: estimate.auc,
                ci_low: estimate.ci_low,
                ci_high: estimate.ci_high,
                n_train: train.len(),
                n_test: test.len(),
                ms,
            };
            log::info!(
                "{} {} level {}: AUC {:.4} [{:.4}, {:.4}]",
                row.model,
                row.method,
                level,
                row.auc,
                row.ci_low,
                row.ci_high
            );
            sink.push(&row)?;
            table.rows.push(row);
        }
    }
    if let Some(dir) = &config.output_dir {
        let path = dir.join("results.json");
        fs::write(&path, serde_json::to_string_pretty(&table)?).map_err(|e| Error::io(&path, e))?;
    }
    Ok(table)
}

/// Spearman rank correlation with average ranks for ties; 0 when either
/// side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    assert_eq!(x.len(), y.len());
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantTrend {
    pub model: Model,
    pub method: Method,
    pub levels: Vec<u8>,
    pub aucs: Vec<f64>,
    pub spearman: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskingDelta {
    pub method: Method,
    pub complexity: u8,
    pub csf_only: f64,
    pub csf_plus_masking: f64,
    /// masking − csf_only
    pub delta: f64,
    /// Larger of the two rows' CI half-widths.
    pub half_width: f64,
    pub significant_drop: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendReport {
    pub variants: Vec<VariantTrend>,
    pub deltas: Vec<MaskingDelta>,
    /// masking + PM: Spearman(AUC, level) ≤ −0.9
    pub masking_pm_decreasing: bool,
    /// masking + PM: no higher than CSF-only (+ slack) at the top level, and
    /// significantly lower at ≥ 2 levels
    pub masking_reduces_auc: bool,
}

impl TrendReport {
    pub fn passed(&self) -> bool {
        self.masking_pm_decreasing && self.masking_reduces_auc
    }
}

pub fn check_trend(results: &ResultsTable) -> Result<TrendReport> {
    let levels: BTreeSet<u8> = results.rows.iter().map(|r| r.complexity).collect();
    if levels.len() < 3 {
        return Err(Error::InvalidParam(format!(
            "trend check needs at least 3 complexity levels, got {}",
            levels.len()
        )));
    }
    let mut variants: BTreeSet<Variant> = results.rows.iter().map(|r| r.variant()).collect();
    for model in [Model::CsfOnly, Model::CsfPlusMasking] {
        variants.insert(Variant {
            model,
            method: Method::Pm,
        });
    }
    let missing: Vec<String> = variants
        .iter()
        .flat_map(|&v| levels.iter().map(move |&l| (v, l)))
        .filter(|&(v, l)| results.get(v, l).is_none())
        .map(|(v, l)| format!("({}/{}, {l})", v.model, v.method))
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingRows(missing.join(", ")));
    }

    let level_list: Vec<u8> = levels.iter().copied().collect();
    let xs: Vec<f64> = level_list.iter().map(|&l| l as f64).collect();
    let trends: Vec<VariantTrend> = variants
        .iter()
        .map(|&v| {
            let aucs: Vec<f64> = level_list.iter().map(|&l| results.get(v, l).unwrap().auc).collect();
            VariantTrend {
                model: v.model,
                method: v.method,
                spearman: spearman(&xs, &aucs),
                levels: level_list.clone(),
                aucs,
            }
        })
        .collect();

    let methods: BTreeSet<Method> = variants.iter().map(|v| v.method).collect();
    let mut deltas = Vec::new();
    for &method in &methods {
        let base = Variant {
            model: Model::CsfOnly,
            method,
        };
        let masked = Variant {
            model: Model::CsfPlusMasking,
            method,
        };
        if !variants.contains(&base) || !variants.contains(&masked) {
            continue;
        }
        for &l in &level_list {
            let (a, b) = (results.get(base, l).unwrap(), results.get(masked, l).unwrap());
            let half_width = a.half_width().max(b.half_width());
            deltas.push(MaskingDelta {
                method,
                complexity: l,
                csf_only: a.auc,
                csf_plus_masking: b.auc,
                delta: b.auc - a.auc,
                half_width,
                significant_drop: a.auc - b.auc > half_width,
            });
        }
    }

    let pm_trend = trends
        .iter()
        .find(|t| t.model == Model::CsfPlusMasking && t.method == Method::Pm)
        .expect("inserted above");
    let pm_deltas: Vec<&MaskingDelta> = deltas.iter().filter(|d| d.method == Method::Pm).collect();
    let top = pm_deltas.last().expect("at least 3 levels");
    let significant = pm_deltas.iter().filter(|d| d.significant_drop).count();
    Ok(TrendReport {
        masking_pm_decreasing: pm_trend.spearman <= SPEARMAN_LIMIT,
        masking_reduces_auc: top.delta <= TOP_LEVEL_SLACK && significant >= MIN_SIGNIFICANT_LEVELS,
        variants: trends,
        deltas,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spearman_cases() {
        let x = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(spearman(&x, &[0.95, 0.9, 0.8, 0.7, 0.6]), -1.0);
        assert_eq!(spearman(&x, &[0.7; 5]), 0.0);
        assert_eq!(spearman(&x, &[1.0, 2.0, 3.0, 4.0, 5.0]), 1.0);
        // one adjacent swap: 1 − 6·2/(5·24) = 0.9
        assert!((spearman(&x, &[0.9, 0.95, 0.8, 0.7, 0.6]) + 0.9).abs() < 1e-12);
    }

    fn row(model: Model, method: Method, level: u8, auc: f64, hw: f64) -> ResultRow {
        ResultRow {
            model,
            method,
            complexity: level,
            auc,
            ci_low: auc - hw,
            ci_high: auc + hw,
            n_train: 10,
            n_test: 10,
            ms: 0,
        }
    }

    fn table(csf: &[f64], mask: &[f64]) -> ResultsTable {
        let mut t = ResultsTable::default();
        for (l, (&a, &b)) in csf.iter().zip(mask).enumerate() {
            t.rows.push(row(Model::CsfOnly, Method::Pm, l as u8, a, 0.03));
            t.rows.push(row(Model::CsfPlusMasking, Method::Pm, l as u8, b, 0.03));
        }
        t
    }

    #[test]
    fn trend_flags() {
        let t = table(&[0.99, 0.97, 0.96, 0.95, 0.95], &[0.95, 0.9, 0.8, 0.7, 0.88]);
        let r = check_trend(&t).unwrap();
        assert!(!r.masking_pm_decreasing);
        assert!(r.masking_reduces_auc);

        let t = table(&[0.99, 0.97, 0.96, 0.95, 0.95], &[0.95, 0.9, 0.8, 0.7, 0.6]);
        assert!(check_trend(&t).unwrap().passed());

        let t = table(&[0.9; 5], &[0.9; 5]);
        let r = check_trend(&t).unwrap();
        assert!(!r.masking_pm_decreasing && !r.masking_reduces_auc);

        // masking above csf-only at the top level
        let t = table(&[0.99, 0.97, 0.96, 0.95, 0.80], &[0.95, 0.9, 0.8, 0.7, 0.85]);
        assert!(!check_trend(&t).unwrap().masking_reduces_auc);
    }

    #[test]
    fn trend_reports_missing_rows() {
        let mut t = table(&[0.9, 0.8, 0.7], &[0.8, 0.7, 0.6]);
        t.rows.retain(|r| !(r.model == Model::CsfPlusMasking && r.complexity == 1));
        match check_trend(&t).unwrap_err() {
            Error::MissingRows(s) => assert!(s.contains("csf_plus_masking/PM, 1"), "{s}"),
            e => panic!("unexpected {e:?}"),
        }
        let t = table(&[0.9, 0.8], &[0.8, 0.7]);
        assert!(check_trend(&t).is_err());
    }

    #[test]
    fn csv_roundtrip() {
        let t = table(&[0.9, 0.8, 0.7], &[0.85, 0.7, 0.6]);
        let text = t.to_csv();
        assert!(text.starts_with("model,method,complexity,auc,ci_low,ci_high,n_train,n_test,ms\n"));
        let back = ResultsTable::from_csv(&text).unwrap();
        assert_eq!(back.rows, t.rows);
        assert!(ResultsTable::from_csv("a,b\n").is_err());
    }

    #[test]
    fn split_is_balanced_and_disjoint() {
        let infos: Vec<StackInfo> = (0..20)
            .map(|i| StackInfo {
                id: i.to_string(),
                label: if i % 2 == 0 { Label::Healthy } else { Label::Lesion },
                complexity: (i / 10) as u8,
                dims: Dims::new(2, 2, 2),
            })
            .collect();
        let (train, test) = split_indices(&infos, 1, 5);
        assert_eq!(train.len(), 4);
        assert_eq!(test.len(), 6);
        assert!(train.iter().all(|i| !test.contains(i)));
        assert!(train.iter().chain(&test).all(|&i| infos[i].complexity == 1));
        assert_eq!(split_indices(&infos, 1, 5), (train, test));
    }
}
