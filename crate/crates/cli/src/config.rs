use std::path::{Path, PathBuf};

use fprune_core::am::AmConfig;
use fprune_core::data::{load_cifar10, load_mnist, LabeledDataset};
use fprune_core::io::config_hash;
use fprune_core::model::TrainConfig;
use fprune_core::pruning::{LayerCoefficients, Method};
use fprune_core::redundancy::KMeansParams;
use serde::{Deserialize, Serialize};

use crate::Invalid;

/// Environment variable naming the default data root.
pub const DATA_ROOT_ENV: &str = "FPRUNE_DATA";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Mnist,
    Cifar10,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub kind: DatasetKind,
    /// Directory holding the dataset files. Defaults to `$FPRUNE_DATA/<kind>`
    /// or `data/<kind>`.
    pub root: Option<PathBuf>,
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { kind: DatasetKind::Mnist, root: None, train_limit: None, test_limit: None }
    }
}

pub struct Datasets {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub files: Vec<PathBuf>,
}

impl DataConfig {
    pub fn resolved_root(&self) -> PathBuf {
        if let Some(r) = &self.root {
            return r.clone();
        }
        let base = std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("data"));
        base.join(match self.kind {
            DatasetKind::Mnist => "mnist",
            DatasetKind::Cifar10 => "cifar-10-batches-bin",
        })
    }

    pub fn files(&self) -> (Vec<PathBuf>, Vec<PathBuf>) {
        let root = self.resolved_root();
        match self.kind {
            DatasetKind::Mnist => (
                vec![root.join("train-images-idx3-ubyte"), root.join("train-labels-idx1-ubyte")],
                vec![root.join("t10k-images-idx3-ubyte"), root.join("t10k-labels-idx1-ubyte")],
            ),
            DatasetKind::Cifar10 => (
                (1..=5).map(|i| root.join(format!("data_batch_{i}.bin"))).collect(),
                vec![root.join("test_batch.bin")],
            ),
        }
    }

    pub fn validate(&self) -> Result<(), Invalid> {
        let (train, test) = self.files();
        for f in train.iter().chain(&test) {
            if !f.is_file() {
                return Err(Invalid(format!("dataset file {} does not exist", f.display())));
            }
        }
        Ok(())
    }

    pub fn load(&self) -> anyhow::Result<Datasets> {
        self.validate()?;
        let (train_files, test_files) = self.files();
        let (mut train, mut test) = match self.kind {
            DatasetKind::Mnist => (
                load_mnist(&train_files[0], &train_files[1])?,
                load_mnist(&test_files[0], &test_files[1])?,
            ),
            DatasetKind::Cifar10 => (load_cifar10(&train_files)?, load_cifar10(&test_files)?),
        };
        if let Some(n) = self.train_limit {
            train = train.head(n);
        }
        if let Some(n) = self.test_limit {
            test = test.head(n);
        }
        Ok(Datasets { train, test, files: train_files.into_iter().chain(test_files).collect() })
    }
}

/// Named coefficient preset or an explicit pattern list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CoefficientSpec {
    Preset(String),
    Explicit(LayerCoefficients),
}

impl Default for CoefficientSpec {
    fn default() -> Self {
        CoefficientSpec::Preset("uniform".into())
    }
}

impl CoefficientSpec {
    pub fn resolve(&self) -> Result<LayerCoefficients, Invalid> {
        match self {
            CoefficientSpec::Preset(p) => match p.as_str() {
                "uniform" => Ok(LayerCoefficients::uniform(1.0)),
                "cifar" => Ok(LayerCoefficients::cifar_stages()),
                "imagenet" => Ok(LayerCoefficients::imagenet_stages()),
                other => Err(Invalid(format!("unknown coefficient preset `{other}` (uniform, cifar, imagenet)"))),
            },
            CoefficientSpec::Explicit(c) => {
                c.validate().map_err(|e| Invalid(e.to_string()))?;
                Ok(c.clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TraceSpec {
    /// Layer whose surviving filters are traced (default: the first prunable
    /// conv with `count` filters surviving every method).
    pub layer: Option<String>,
    /// Number of filters to trace (lowest indices surviving every method).
    pub count: usize,
    pub interval: usize,
}

impl Default for TraceSpec {
    fn default() -> Self {
        Self { layer: None, count: 5, interval: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub architecture: String,
    pub data: DataConfig,
    /// Seed for model init and training.
    pub seed: u64,
    /// Seed for AM, clustering and fine-tuning.
    pub prune_seed: u64,
    /// Reuse a trained checkpoint instead of training.
    pub baseline_checkpoint: Option<PathBuf>,
    pub train: TrainConfig,
    /// Defaults to a quarter of the training epochs at lr 0.001.
    pub finetune: Option<TrainConfig>,
    pub am: AmConfig,
    pub theta: f64,
    pub kmeans: KMeansParams,
    pub coefficients: CoefficientSpec,
    pub global_ratio: f64,
    pub methods: Vec<Method>,
    /// Images used for contribution and Taylor scores (prefix of train).
    pub score_samples: Option<usize>,
    pub trace: TraceSpec,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            architecture: "convnet-desk".into(),
            data: DataConfig::default(),
            seed: 1,
            prune_seed: 1,
            baseline_checkpoint: None,
            train: TrainConfig { epochs: 5, seed: 1, ..TrainConfig::default() },
            finetune: None,
            am: AmConfig::default(),
            theta: 0.85,
            kmeans: KMeansParams::default(),
            coefficients: CoefficientSpec::default(),
            global_ratio: 0.4,
            methods: vec![Method::Functional, Method::L1, Method::Taylor],
            score_samples: None,
            trace: TraceSpec::default(),
            output_dir: PathBuf::from("runs/default"),
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Invalid(format!("{}: {e}", path.display())))?;
        let cfg: RunConfig = serde_json::from_str(&text).map_err(|e| Invalid(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn finetune_config(&self) -> TrainConfig {
        self.finetune.clone().unwrap_or_else(|| TrainConfig {
            seed: self.prune_seed,
            ..TrainConfig::finetune_from(&self.train)
        })
    }

    pub fn validate(&self) -> Result<(), Invalid> {
        let bad = |m: String| Err(Invalid(m));
        if !(self.global_ratio > 0.0 && self.global_ratio < 1.0) {
            return bad(format!("global_ratio must be in (0, 1), got {}", self.global_ratio));
        }
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return bad(format!("theta must be in (0, 1], got {}", self.theta));
        }
        if self.methods.is_empty() {
            return bad("methods must not be empty".into());
        }
        if self.trace.interval == 0 {
            return bad("trace.interval must be positive".into());
        }
        self.train.validate().map_err(|e| Invalid(e.to_string()))?;
        self.finetune_config().validate().map_err(|e| Invalid(e.to_string()))?;
        self.am.validate().map_err(|e| Invalid(e.to_string()))?;
        self.coefficients.resolve()?;
        fprune_core::model::arch_by_name(&self.architecture).map_err(|e| Invalid(e.to_string()))?;
        if let Some(b) = &self.baseline_checkpoint {
            if !b.is_file() {
                return bad(format!("baseline checkpoint {} does not exist", b.display()));
            }
        }
        self.data.validate()
    }

    /// Hash of every field that influences results (the output directory
    /// is excluded).
    pub fn hash(&self) -> String {
        config_hash(&RunConfig { output_dir: PathBuf::new(), ..self.clone() })
    }
}
