//! TOML pipeline configuration. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::synthetic::SyntheticSpec;
use crate::error::{Error, Result};
use crate::genret::{GrShape, RetrievalConfig};
use crate::sid_index::{BudgetMode, ResolveStrategy};
use crate::tokenizer::{AssignmentRule, RqVaeShape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModalityFile {
    pub name: String,
    pub path: PathBuf,
}

/// Embedding files to ingest. Row `i` of every modality file belongs to the
/// item on line `i` of the metadata file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub modalities: Vec<ModalityFile>,
    pub metadata: PathBuf,
    #[serde(default)]
    pub events: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenizerKind {
    RqVae,
    RqKmeans,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TokenizerConfig {
    pub kind: TokenizerKind,
    /// Modalities to fuse, in order; empty means every corpus modality.
    pub modalities: Vec<String>,
    pub shape: RqVaeShape,
    pub rule: AssignmentRule,
    pub ste: bool,
    pub beta: f64,
    pub codebook_weight: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Initialise RQ-VAE codebooks by residual k-means on encoder outputs.
    pub kmeans_init: bool,
    pub init_items: usize,
    pub init_iters: usize,
    /// Lloyd iterations per level for residual k-means.
    pub kmeans_iters: usize,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        TokenizerConfig {
            kind: TokenizerKind::RqVae,
            modalities: Vec::new(),
            shape: RqVaeShape::default(),
            rule: AssignmentRule::Cosine,
            ste: true,
            beta: 0.25,
            codebook_weight: 1.0,
            lr: 3e-4,
            epochs: 60,
            batch_size: 256,
            kmeans_init: true,
            init_items: 1000,
            init_iters: 20,
            kmeans_iters: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrKind {
    Attention,
    Ngram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GrConfig {
    pub model: GrKind,
    pub shape: GrShape,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Most recent training examples kept per user; 0 keeps all.
    pub max_train_per_user: usize,
    pub ngram_alpha: f64,
    pub ngram_backoff: f64,
}

impl Default for GrConfig {
    fn default() -> Self {
        GrConfig {
            model: GrKind::Attention,
            shape: GrShape::default(),
            epochs: 8,
            batch_size: 64,
            lr: 1e-3,
            max_train_per_user: 20,
            ngram_alpha: 0.1,
            ngram_backoff: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeKind {
    Depth,
    Breadth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Relevance,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrievalSettings {
    pub beam_width: usize,
    pub budget: usize,
    pub mode: ModeKind,
    pub top_k: usize,
    pub per_sid: usize,
    pub strategy: StrategyKind,
    pub spillover: bool,
    /// Cut-offs for Recall@K and NDCG@K.
    pub ks: Vec<usize>,
}

impl Default for RetrievalSettings {
    fn default() -> Self {
        RetrievalSettings {
            beam_width: 100,
            budget: 1000,
            mode: ModeKind::Breadth,
            top_k: 100,
            per_sid: 10,
            strategy: StrategyKind::Relevance,
            spillover: true,
            ks: vec![5, 10],
        }
    }
}

impl RetrievalSettings {
    pub fn budget_mode(&self) -> BudgetMode {
        match self.mode {
            ModeKind::Depth => BudgetMode::Depth {
                top_k: self.top_k,
                per_sid: self.per_sid,
            },
            ModeKind::Breadth => BudgetMode::Breadth {
                top_k: self.top_k,
                per_sid: self.per_sid,
            },
        }
    }

    pub fn to_config(&self, seed: u64) -> RetrievalConfig {
        RetrievalConfig {
            beam_width: self.beam_width,
            budget: self.budget,
            mode: self.budget_mode(),
            strategy: match self.strategy {
                StrategyKind::Relevance => ResolveStrategy::RelevanceGuided,
                StrategyKind::Random => ResolveStrategy::Random { seed },
            },
            spillover: self.spillover,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// Generate `[synthetic]` in memory.
    Synthetic,
    /// Read the corpus written by `ingest` or `synth` under the output
    /// directory.
    Corpus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub source: DataSource,
    /// Runs per experiment, seeded `seed, seed + 1, ...`.
    pub replicates: usize,
    pub shape_sweep_k: Vec<usize>,
    pub history_lengths: Vec<usize>,
    pub depth: [usize; 2],
    pub breadth: [usize; 2],
    pub budget: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            source: DataSource::Synthetic,
            replicates: 3,
            shape_sweep_k: vec![8, 16, 32, 64],
            history_lengths: vec![8, 32],
            depth: [10, 100],
            breadth: [100, 10],
            budget: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data: Option<DataConfig>,
    pub synthetic: SyntheticSpec,
    pub tokenizer: TokenizerConfig,
    pub gr: GrConfig,
    pub retrieval: RetrievalSettings,
    pub experiment: ExperimentConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            out_dir: PathBuf::from("out"),
            data: None,
            synthetic: SyntheticSpec::default(),
            tokenizer: TokenizerConfig::default(),
            gr: GrConfig::default(),
            retrieval: RetrievalSettings::default(),
            experiment: ExperimentConfig::default(),
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be positive and finite, got {v}")))
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 of the canonical serialisation, ignoring `out_dir`.
    pub fn hash(&self) -> Result<String> {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        let digest = Sha256::digest(c.to_toml()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn validate(&self) -> Result<()> {
        if self.out_dir.as_os_str().is_empty() {
            return Err(Error::Config("out_dir must not be empty".into()));
        }
        if let Some(d) = &self.data {
            if d.modalities.is_empty() {
                return Err(Error::Config("data.modalities is empty".into()));
            }
            let paths = d.modalities.iter().map(|m| &m.path).chain([&d.metadata]).chain(d.events.iter());
            for p in paths {
                if !p.is_file() {
                    return Err(Error::Config(format!("data file {} does not exist", p.display())));
                }
            }
        }
        self.synthetic.validate()?;

        let t = &self.tokenizer;
        if t.shape.codebook_sizes.is_empty() || t.shape.codebook_sizes.contains(&0) {
            return Err(Error::Config("tokenizer.shape.codebook_sizes must be non-empty and positive".into()));
        }
        if t.shape.hidden_dim == 0 || t.batch_size == 0 {
            return Err(Error::Config("tokenizer hidden_dim and batch_size must be positive".into()));
        }
        positive("tokenizer.lr", t.lr)?;
        if !(t.beta.is_finite() && t.beta >= 0.0 && t.codebook_weight.is_finite() && t.codebook_weight >= 0.0) {
            return Err(Error::Config("tokenizer beta and codebook_weight must be non-negative".into()));
        }

        let g = &self.gr;
        if g.shape.width == 0 || g.shape.heads == 0 || !g.shape.width.is_multiple_of(g.shape.heads) {
            return Err(Error::Config(format!(
                "gr.shape.width {} must be a positive multiple of heads {}",
                g.shape.width, g.shape.heads
            )));
        }
        if g.shape.max_history == 0 || g.shape.ffn_width == 0 || g.batch_size == 0 {
            return Err(Error::Config("gr max_history, ffn_width and batch_size must be positive".into()));
        }
        positive("gr.lr", g.lr)?;
        positive("gr.ngram_alpha", g.ngram_alpha)?;
        positive("gr.ngram_backoff", g.ngram_backoff)?;

        let r = &self.retrieval;
        if r.beam_width == 0 || r.top_k == 0 || r.per_sid == 0 {
            return Err(Error::Config("retrieval beam_width, top_k and per_sid must be positive".into()));
        }
        if r.top_k * r.per_sid > r.budget {
            return Err(Error::Config(format!(
                "retrieval top_k * per_sid = {} exceeds budget {}",
                r.top_k * r.per_sid,
                r.budget
            )));
        }
        if r.ks.is_empty() || r.ks.contains(&0) {
            return Err(Error::Config("retrieval.ks must be non-empty and positive".into()));
        }

        let e = &self.experiment;
        if e.replicates == 0 {
            return Err(Error::Config("experiment.replicates must be at least 1".into()));
        }
        if e.shape_sweep_k.is_empty() || e.shape_sweep_k.contains(&0) {
            return Err(Error::Config("experiment.shape_sweep_k must be non-empty and positive".into()));
        }
        if e.history_lengths.is_empty() || e.history_lengths.contains(&0) {
            return Err(Error::Config("experiment.history_lengths must be non-empty and positive".into()));
        }
        for (name, [k, p]) in [("depth", e.depth), ("breadth", e.breadth)] {
            if k == 0 || p == 0 || k * p > e.budget {
                return Err(Error::Config(format!(
                    "experiment.{name} = [{k}, {p}] must be positive and fit budget {}",
                    e.budget
                )));
            }
        }
        Ok(())
    }

    /// Seeds of the experiment replicates.
    pub fn replicate_seeds(&self) -> Vec<u64> {
        (0..self.experiment.replicates as u64).map(|r| self.seed.wrapping_add(r)).collect()
    }
}
