//! Seeded, resumable experiment drivers writing CSV reports under
//! `<out_dir>/experiments/`.
//!
//! Trained tokenizers and sequence models are checkpointed under
//! `experiments/checkpoints/<config hash>/`, so an interrupted run resumes
//! from finished rows and saved models.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use super::config::{GrKind, PipelineConfig, TokenizerConfig, TokenizerKind};
use super::report::{DirLock, ReportWriter};
use super::stages::{evaluate_retrieval, fit_sequence_model, fit_tokenizer, gr_split, index_corpus, load_data, tokenizer_modalities, IndexedCorpus, SeqModel};
use super::synthetic::UserEvent;
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::genret::checkpoint::{load_model, save_model};
use crate::genret::{DatasetSplit, GrModel, RetrievalConfig};
use crate::parallel::Exec;
use crate::sid::SemanticId;
use crate::sid_index::io::shape_label;
use crate::sid_index::{uniqueness, utilization_metrics, BudgetMode};
use crate::tokenizer::{checkpoint, Tokenizer};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    ShapeSweep,
    Ablation,
    DepthBreadth,
    GrHistorySweep,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 4] = [
        ExperimentKind::ShapeSweep,
        ExperimentKind::Ablation,
        ExperimentKind::DepthBreadth,
        ExperimentKind::GrHistorySweep,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::ShapeSweep => "shape_sweep",
            ExperimentKind::Ablation => "ablation",
            ExperimentKind::DepthBreadth => "depth_breadth",
            ExperimentKind::GrHistorySweep => "gr_history_sweep",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub path: PathBuf,
    pub rows: usize,
    /// Status fields of failed rows.
    pub failures: Vec<String>,
}

pub fn report_path(out_dir: &Path, kind: ExperimentKind) -> PathBuf {
    out_dir.join("experiments").join(format!("{}.csv", kind.name()))
}

fn f6(x: f64) -> String {
    format!("{x:.6}")
}

fn short_hash(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0]);
    }
    h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

struct Ctx<'a> {
    cfg: &'a PipelineConfig,
    corpus: Corpus,
    events: Vec<UserEvent>,
    ckpt: PathBuf,
    exec: Exec,
}

impl Ctx<'_> {
    /// Trains (or reloads) the tokenizer for `tcfg` and `seed`, then indexes
    /// the corpus.
    fn tokenizer(&self, tcfg: &TokenizerConfig, seed: u64) -> Result<(Tokenizer, IndexedCorpus)> {
        let text = toml::to_string(tcfg).map_err(|e| Error::Config(e.to_string()))?;
        let path = self.ckpt.join(format!("tok_{}.sidf", short_hash(&[&text, &seed.to_string()])));
        let tok = if path.is_file() {
            checkpoint::load(&path)?
        } else {
            let (tok, _) = fit_tokenizer(tcfg, &self.corpus, seed, self.exec)?;
            checkpoint::save(&path, &tok)?;
            tok
        };
        let ic = index_corpus(&tok, &self.corpus, self.exec)?;
        Ok((tok, ic))
    }

    /// Trains (or reloads) the sequence model for one history length.
    fn sequence_model(&self, sids: &HashMap<u64, SemanticId>, shape: &[usize], max_history: usize, seed: u64) -> Result<(SeqModel, DatasetSplit)> {
        let gr = &self.cfg.gr;
        let (split, _) = gr_split(&self.events, sids, max_history, gr.max_train_per_user)?;
        if gr.model == GrKind::Attention {
            let text = toml::to_string(gr).map_err(|e| Error::Config(e.to_string()))?;
            let mut sid_digest = Sha256::new();
            let mut ids: Vec<&u64> = sids.keys().collect();
            ids.sort();
            for id in ids {
                sid_digest.update(format!("{id}:{}\n", sids[id]).as_bytes());
            }
            let sid_hash: String = sid_digest.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect();
            let path = self.ckpt.join(format!(
                "gr_{}.sidg",
                short_hash(&[&text, &sid_hash, &max_history.to_string(), &seed.to_string()])
            ));
            if path.is_file() {
                let m: GrModel = load_model(&path)?;
                return Ok((SeqModel::Attention(m), split));
            }
            let (model, _) = fit_sequence_model(gr, max_history, shape, &split, seed, self.exec)?;
            if let SeqModel::Attention(m) = &model {
                save_model(&path, m)?;
            }
            return Ok((model, split));
        }
        let (model, _) = fit_sequence_model(gr, max_history, shape, &split, seed, self.exec)?;
        Ok((model, split))
    }
}

/// Runs `kind` and writes its report. Row-level failures are recorded in the
/// report and returned in the outcome; setup failures are errors.
pub fn run_experiment(cfg: &PipelineConfig, kind: ExperimentKind, exec: Exec) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let _lock = DirLock::acquire(&cfg.out_dir)?;
    let hash = cfg.hash()?;
    let ckpt = cfg.out_dir.join("experiments").join("checkpoints").join(&hash[..16]);
    std::fs::create_dir_all(&ckpt)?;
    let (corpus, events) = load_data(cfg)?;
    let ctx = Ctx {
        cfg,
        corpus,
        events,
        ckpt,
        exec,
    };
    let path = report_path(&cfg.out_dir, kind);
    let writer = match kind {
        ExperimentKind::ShapeSweep => shape_sweep(&ctx, &path, &hash)?,
        ExperimentKind::Ablation => ablation(&ctx, &path, &hash)?,
        ExperimentKind::DepthBreadth => depth_breadth(&ctx, &path, &hash)?,
        ExperimentKind::GrHistorySweep => gr_history_sweep(&ctx, &path, &hash)?,
    };
    Ok(ExperimentOutcome {
        path,
        rows: writer.table().rows.len(),
        failures: writer.failures(),
    })
}

fn key(seed: u64, variant: impl Into<String>) -> Vec<String> {
    vec![seed.to_string(), variant.into()]
}

fn metric_columns(ks: &[usize]) -> Vec<String> {
    let mut c: Vec<String> = ks.iter().map(|k| format!("R@{k}")).collect();
    c.extend(ks.iter().map(|k| format!("N@{k}")));
    c
}

fn metric_values(m: &crate::genret::MetricTable) -> Vec<String> {
    let mut v: Vec<String> = m.at.iter().map(|a| f6(a.recall)).collect();
    v.extend(m.at.iter().map(|a| f6(a.ndcg)));
    v
}

fn shape_sweep(ctx: &Ctx, path: &Path, hash: &str) -> Result<ReportWriter> {
    let cfg = ctx.cfg;
    let levels = cfg.tokenizer.shape.codebook_sizes.len();
    let mut columns = vec!["seed".to_string(), "variant".into(), "k".into(), "uniqueness".into()];
    columns.extend((0..levels).map(|l| format!("utilization_l{l}")));
    columns.extend((0..levels).map(|l| format!("perplexity_l{l}")));
    let with_gr = !ctx.events.is_empty();
    if with_gr {
        columns.push("R@10".into());
    }
    columns.push("status".into());
    let cols: Vec<&str> = columns.iter().map(String::as_str).collect();
    let mut w = ReportWriter::open(path, hash, cfg.seed, &cols, 2)?;
    for seed in cfg.replicate_seeds() {
        for &k in &cfg.experiment.shape_sweep_k {
            let mut tcfg = cfg.tokenizer.clone();
            tcfg.shape.codebook_sizes = vec![k; levels];
            w.row(&key(seed, shape_label(&tcfg.shape.codebook_sizes)), || {
                let (tok, ic) = ctx.tokenizer(&tcfg, seed)?;
                let shape = tok.shape();
                let mut sids: Vec<(&u64, &SemanticId)> = ic.sids.iter().collect();
                sids.sort();
                let sids: Vec<SemanticId> = sids.into_iter().map(|(_, s)| s.clone()).collect();
                let usage = utilization_metrics(&sids, &shape);
                let mut v = vec![k.to_string(), f6(uniqueness(&ic.index)?)];
                v.extend(usage.iter().map(|u| f6(u.utilization)));
                v.extend(usage.iter().map(|u| f6(u.perplexity)));
                if with_gr {
                    let (model, split) = ctx.sequence_model(&ic.sids, &shape, cfg.gr.shape.max_history, seed)?;
                    let rc = cfg.retrieval.to_config(seed);
                    let run = evaluate_retrieval(model.as_dyn(), &ic.index, &split.test, &rc, &[10], ctx.exec)?;
                    v.push(f6(run.metrics.at[0].recall));
                }
                Ok(v)
            })?;
        }
    }
    Ok(w)
}

/// Cumulative variants: baseline without STE on the first modality, then
/// STE, then each further modality in turn.
fn ablation_variants(all: &[String]) -> Vec<(String, bool, Vec<String>)> {
    let mut v = vec![
        ("baseline".to_string(), false, all[..1].to_vec()),
        ("+STE".to_string(), true, all[..1].to_vec()),
    ];
    for n in 2..=all.len() {
        v.push((format!("+{}", all[n - 1]), true, all[..n].to_vec()));
    }
    v
}

fn ablation(ctx: &Ctx, path: &Path, hash: &str) -> Result<ReportWriter> {
    let cfg = ctx.cfg;
    if cfg.tokenizer.kind != TokenizerKind::RqVae {
        return Err(Error::Config("the ablation experiment needs tokenizer.kind = \"rq_vae\"".into()));
    }
    let all = tokenizer_modalities(&cfg.tokenizer, &ctx.corpus);
    let cols = ["seed", "variant", "modalities", "ste", "uniqueness", "delta_vs_prev", "status"];
    let mut w = ReportWriter::open(path, hash, cfg.seed, &cols, 2)?;
    for seed in cfg.replicate_seeds() {
        let mut prev: Option<f64> = None;
        for (name, ste, mods) in ablation_variants(&all) {
            let mut tcfg = cfg.tokenizer.clone();
            tcfg.ste = ste;
            tcfg.modalities = mods.clone();
            let p = prev;
            let row = w.row(&key(seed, name), || {
                let (_, ic) = ctx.tokenizer(&tcfg, seed)?;
                let u = uniqueness(&ic.index)?;
                let delta = match p {
                    Some(p) if p > 0.0 => format!("{:+.2}%", 100.0 * (u - p) / p),
                    _ => String::new(),
                };
                Ok(vec![mods.join("+"), ste.to_string(), f6(u), delta])
            })?;
            prev = row.and_then(|r| r[4].parse().ok());
        }
    }
    Ok(w)
}

fn depth_breadth(ctx: &Ctx, path: &Path, hash: &str) -> Result<ReportWriter> {
    let cfg = ctx.cfg;
    let e = &cfg.experiment;
    let modes = [
        BudgetMode::Depth {
            top_k: e.depth[0],
            per_sid: e.depth[1],
        },
        BudgetMode::Breadth {
            top_k: e.breadth[0],
            per_sid: e.breadth[1],
        },
    ];
    let mut ks = cfg.retrieval.ks.clone();
    ks.push(e.budget);
    ks.sort_unstable();
    ks.dedup();
    let mut columns = vec!["seed".to_string(), "variant".into(), "budget".into()];
    columns.extend(metric_columns(&ks));
    columns.extend(["mean_items", "max_items", "budget_ok", "items_unique", "unknown_users", "status"].map(String::from));
    let cols: Vec<&str> = columns.iter().map(String::as_str).collect();
    let mut w = ReportWriter::open(path, hash, cfg.seed, &cols, 2)?;
    for seed in cfg.replicate_seeds() {
        let mut trained: Option<Result<(IndexedCorpus, SeqModel, DatasetSplit)>> = None;
        for mode in modes {
            w.row(&key(seed, mode.label()), || {
                let state = trained.get_or_insert_with(|| {
                    let (tok, ic) = ctx.tokenizer(&cfg.tokenizer, seed)?;
                    let (model, split) = ctx.sequence_model(&ic.sids, &tok.shape(), cfg.gr.shape.max_history, seed)?;
                    Ok((ic, model, split))
                });
                let (ic, model, split) = state.as_ref().map_err(|e| Error::Data(e.to_string()))?;
                let rc = RetrievalConfig {
                    beam_width: cfg.retrieval.beam_width.max(mode.top_k()),
                    budget: e.budget,
                    mode,
                    ..cfg.retrieval.to_config(seed)
                };
                let run = evaluate_retrieval(model.as_dyn(), &ic.index, &split.test, &rc, &ks, ctx.exec)?;
                let mut v = vec![e.budget.to_string()];
                v.extend(metric_values(&run.metrics));
                v.extend([
                    f6(run.mean_items),
                    run.max_items.to_string(),
                    run.within_budget.to_string(),
                    run.unique_items.to_string(),
                    run.unknown_users.to_string(),
                ]);
                Ok(v)
            })?;
        }
    }
    Ok(w)
}

fn gr_history_sweep(ctx: &Ctx, path: &Path, hash: &str) -> Result<ReportWriter> {
    let cfg = ctx.cfg;
    let ks = &cfg.retrieval.ks;
    let mut columns = vec!["seed".to_string(), "variant".into(), "max_history".into(), "valid_loss".into()];
    columns.extend(metric_columns(ks));
    columns.push("status".into());
    let cols: Vec<&str> = columns.iter().map(String::as_str).collect();
    let mut w = ReportWriter::open(path, hash, cfg.seed, &cols, 2)?;
    for seed in cfg.replicate_seeds() {
        let mut tokenized: Option<Result<(Vec<usize>, IndexedCorpus)>> = None;
        for &h in &cfg.experiment.history_lengths {
            w.row(&key(seed, format!("history={h}")), || {
                let state = tokenized.get_or_insert_with(|| {
                    let (tok, ic) = ctx.tokenizer(&cfg.tokenizer, seed)?;
                    Ok((tok.shape(), ic))
                });
                let (shape, ic) = state.as_ref().map_err(|e| Error::Data(e.to_string()))?;
                let (model, split) = ctx.sequence_model(&ic.sids, shape, h, seed)?;
                let valid_loss = match &model {
                    SeqModel::Attention(m) if !split.valid.is_empty() => f6(m.loss(&split.valid, ctx.exec)?),
                    _ => String::new(),
                };
                let rc = cfg.retrieval.to_config(seed);
                let run = evaluate_retrieval(model.as_dyn(), &ic.index, &split.test, &rc, ks, ctx.exec)?;
                let mut v = vec![h.to_string(), valid_loss];
                v.extend(metric_values(&run.metrics));
                Ok(v)
            })?;
        }
    }
    Ok(w)
}
