//! Pipeline steps shared by the command-line driver and the experiments.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::config::{DataSource, GrConfig, GrKind, PipelineConfig, TokenizerConfig, TokenizerKind};
use super::ingest::read_corpus_dir;
use super::synthetic::{gen_synthetic, UserEvent};
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::genret::{
    build_training_sequences, eval_recall_ndcg, group_events, retrieve, split_last, train_gr, DatasetSplit, Example, GrEpoch,
    GrModel, GrTrainConfig, MetricTable, NgramModel, RetrievalConfig, SequenceModel, SidTrie, SidVocabulary,
};
use crate::numerics::AdamConfig;
use crate::parallel::Exec;
use crate::sid::SemanticId;
use crate::sid_index::{build_index, IndexedItem, SidIndex};
use crate::tokenizer::{rq_kmeans_fit, tokenize_corpus, train, EpochMetrics, Tokenizer, TokenizerModel, TrainConfig};

/// Corpus and user log for experiments, per `experiment.source`.
pub fn load_data(cfg: &PipelineConfig) -> Result<(Corpus, Vec<UserEvent>)> {
    match cfg.experiment.source {
        DataSource::Synthetic => {
            let d = gen_synthetic(&cfg.synthetic)?;
            Ok((d.corpus, d.events))
        }
        DataSource::Corpus => read_corpus_dir(&cfg.out_dir.join("corpus")),
    }
}

pub fn tokenizer_modalities(cfg: &TokenizerConfig, corpus: &Corpus) -> Vec<String> {
    if cfg.modalities.is_empty() {
        corpus.modalities().iter().map(|m| m.name.clone()).collect()
    } else {
        cfg.modalities.clone()
    }
}

/// Trains the configured tokenizer on every item that has all of its
/// modalities. The RQ-VAE training log is empty for residual k-means.
pub fn fit_tokenizer(cfg: &TokenizerConfig, corpus: &Corpus, seed: u64, exec: Exec) -> Result<(Tokenizer, Vec<EpochMetrics>)> {
    let names = tokenizer_modalities(cfg, corpus);
    let sizes = &cfg.shape.codebook_sizes;
    match cfg.kind {
        TokenizerKind::RqKmeans => Ok((
            Tokenizer::RqKmeans(rq_kmeans_fit(corpus, &names, sizes, cfg.kmeans_iters, seed, exec)?),
            Vec::new(),
        )),
        TokenizerKind::RqVae => {
            let dims = names
                .iter()
                .map(|n| {
                    let i = corpus.modality_index(n).ok_or_else(|| Error::MissingModality(n.clone()))?;
                    Ok((n.clone(), corpus.modalities()[i].dim))
                })
                .collect::<Result<Vec<_>>>()?;
            let items: Vec<_> = corpus.records().iter().filter_map(|r| corpus.inputs(r, &names).ok()).collect();
            if items.is_empty() {
                return Err(Error::Data("no item has every tokenizer modality".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut model = TokenizerModel::random(&dims, &cfg.shape, cfg.rule, cfg.ste, cfg.beta, &mut rng)?;
            model.codebook_weight = cfg.codebook_weight;
            if cfg.kmeans_init {
                let n = cfg.init_items.clamp(1, items.len());
                model.init_codebooks(&items[..n], seed, cfg.init_iters, exec)?;
            } else {
                for cb in &mut model.codebooks {
                    for v in cb.centroids_mut().data_mut() {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        *v = 0.1 * z;
                    }
                }
            }
            let tc = TrainConfig {
                epochs: cfg.epochs,
                batch_size: cfg.batch_size,
                adam: AdamConfig {
                    lr: cfg.lr,
                    ..AdamConfig::default()
                },
                seed,
                exec,
                ..TrainConfig::default()
            };
            let log = train(&mut model, &items, &tc)?;
            Ok((Tokenizer::RqVae(model), log))
        }
    }
}

/// A tokenized corpus and its index. Every corpus item is either indexed
/// or listed in `rejects`.
#[derive(Debug, Clone)]
pub struct IndexedCorpus {
    pub sids: HashMap<u64, SemanticId>,
    pub index: SidIndex,
    pub rejects: Vec<(u64, String)>,
}

pub fn index_corpus(tok: &Tokenizer, corpus: &Corpus, exec: Exec) -> Result<IndexedCorpus> {
    let tc = tokenize_corpus(tok, corpus, exec);
    let items: Vec<IndexedItem> = tc
        .entries
        .iter()
        .map(|(id, sid)| {
            let r = corpus.get(*id).expect("tokenized items come from the corpus");
            IndexedItem {
                item_id: *id,
                sid: sid.clone(),
                relevance: r.relevance,
                freshness: r.freshness,
            }
        })
        .collect();
    if items.len() + tc.rejects.len() != corpus.len() {
        return Err(Error::Data(format!(
            "tokenization lost items: {} indexed + {} rejected != {}",
            items.len(),
            tc.rejects.len(),
            corpus.len()
        )));
    }
    let index = build_index(&items, &tok.shape())?;
    Ok(IndexedCorpus {
        sids: tc.entries.into_iter().collect(),
        index,
        rejects: tc.rejects,
    })
}

/// Leave-last-out split, keeping at most `max_train_per_user` of each
/// user's most recent training examples (0 keeps all). Also returns the
/// number of dropped examples.
pub fn gr_split(
    events: &[UserEvent],
    sids: &HashMap<u64, SemanticId>,
    max_history: usize,
    max_train_per_user: usize,
) -> Result<(DatasetSplit, usize)> {
    if events.is_empty() {
        return Err(Error::Data("no user events".into()));
    }
    let ds = build_training_sequences(&group_events(events), sids, max_history)?;
    let mut split = split_last(ds.examples);
    if max_train_per_user > 0 {
        let mut by_user: BTreeMap<u64, Vec<Example>> = BTreeMap::new();
        for e in std::mem::take(&mut split.train) {
            by_user.entry(e.user_id).or_default().push(e);
        }
        for mut v in by_user.into_values() {
            v.sort_by_key(|e| e.position);
            let n = v.len();
            split.train.extend(v.split_off(n.saturating_sub(max_train_per_user)));
        }
    }
    if split.train.is_empty() || split.test.is_empty() {
        return Err(Error::Data("too few events per user to build train and test examples".into()));
    }
    Ok((split, ds.dropped))
}

#[derive(Debug, Clone, PartialEq)]
pub enum SeqModel {
    Attention(GrModel),
    Ngram(NgramModel),
}

impl SeqModel {
    pub fn as_dyn(&self) -> &dyn SequenceModel {
        match self {
            SeqModel::Attention(m) => m,
            SeqModel::Ngram(m) => m,
        }
    }
}

/// Builds and trains the configured sequence model.
pub fn fit_sequence_model(
    cfg: &GrConfig,
    max_history: usize,
    sid_shape: &[usize],
    split: &DatasetSplit,
    seed: u64,
    exec: Exec,
) -> Result<(SeqModel, Vec<GrEpoch>)> {
    match cfg.model {
        GrKind::Ngram => Ok((
            SeqModel::Ngram(NgramModel::fit(&split.train, sid_shape, cfg.ngram_alpha, cfg.ngram_backoff)?),
            Vec::new(),
        )),
        GrKind::Attention => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let shape = crate::genret::GrShape {
                max_history,
                ..cfg.shape.clone()
            };
            let mut model = GrModel::new(SidVocabulary::new(sid_shape)?, shape, &mut rng)?;
            let tc = GrTrainConfig {
                epochs: cfg.epochs,
                batch_size: cfg.batch_size,
                adam: AdamConfig {
                    lr: cfg.lr,
                    ..AdamConfig::default()
                },
                seed,
                exec,
                ..GrTrainConfig::default()
            };
            let log = train_gr(&mut model, &split.train, &split.valid, &tc)?;
            Ok((SeqModel::Attention(model), log))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalRun {
    pub metrics: MetricTable,
    pub results: BTreeMap<u64, Vec<u64>>,
    pub mean_items: f64,
    pub max_items: usize,
    /// Every list had at most `budget` items.
    pub within_budget: bool,
    /// No list repeated an item.
    pub unique_items: bool,
    /// Users whose planned SIDs were all missing from the index.
    pub unknown_users: usize,
}

/// Retrieves for every test example and scores the lists against the target
/// items.
pub fn evaluate_retrieval(
    model: &dyn SequenceModel,
    index: &SidIndex,
    test: &[Example],
    rc: &RetrievalConfig,
    ks: &[usize],
    exec: Exec,
) -> Result<RetrievalRun> {
    let trie = SidTrie::from_index(index)?;
    let outs = exec.map(test, |e| retrieve(model, &trie, index, &e.history, rc));
    let mut results = BTreeMap::new();
    let mut truth = BTreeMap::new();
    let (mut total, mut max_items, mut unknown) = (0usize, 0usize, 0usize);
    let (mut within, mut unique) = (true, true);
    for (e, out) in test.iter().zip(outs) {
        let out = out?;
        total += out.items.len();
        max_items = max_items.max(out.items.len());
        within &= out.items.len() <= rc.budget;
        unique &= out.items.iter().collect::<HashSet<_>>().len() == out.items.len();
        unknown += out.all_unknown as usize;
        if results.insert(e.user_id, out.items).is_some() {
            return Err(Error::Data(format!("user {} has two test examples", e.user_id)));
        }
        truth.insert(e.user_id, vec![e.target_item]);
    }
    let metrics = eval_recall_ndcg(&results, &truth, ks, exec)?;
    Ok(RetrievalRun {
        metrics,
        mean_items: total as f64 / test.len().max(1) as f64,
        max_items,
        within_budget: within,
        unique_items: unique,
        unknown_users: unknown,
        results,
    })
}

/// Writes `item_id<TAB>codes` lines sorted by item id.
pub fn write_sids(path: &Path, sids: &HashMap<u64, SemanticId>) -> Result<()> {
    use std::io::Write;
    let mut ids: Vec<&u64> = sids.keys().collect();
    ids.sort();
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "item_id\tcodes")?;
    for id in ids {
        let codes: Vec<String> = sids[id].codes.iter().map(|c| c.to_string()).collect();
        writeln!(w, "{id}\t{}", codes.join(" "))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a file written by [`write_sids`].
pub fn read_sids(path: &Path) -> Result<HashMap<u64, SemanticId>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if (i == 0 && line == "item_id\tcodes") || line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| Error::Malformed {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let (id, codes) = line.split_once('\t').ok_or_else(|| bad("expected item_id<TAB>codes".into()))?;
        let id: u64 = id.parse().map_err(|e| bad(format!("item_id: {e}")))?;
        let codes = codes
            .split(' ')
            .map(|c| c.parse::<u32>().map_err(|e| bad(format!("code: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        if out.insert(id, SemanticId::new(codes)).is_some() {
            return Err(bad(format!("duplicate item_id {id}")));
        }
    }
    Ok(out)
}
