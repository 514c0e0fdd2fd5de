//! `sidkit` command-line driver.
//!
//! Stages read and write fixed file names under the output directory:
//!
//! ```text
//! corpus/            ingest, synth
//! tokenizer.sidf     train-tokenizer (+ tokenizer_log.csv)
//! sids.tsv           tokenize (+ rejects.tsv)
//! index.tsv          build-index
//! metrics.csv        metrics
//! gr.sidg            train-gr (+ gr_log.csv)
//! retrieval.tsv      retrieve (+ gr_metrics.csv)
//! experiments/       experiment
//! report.txt         report
//! ```

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::{info, warn};

use sidkit::genret::checkpoint::{load_model, save_model};
use sidkit::pipeline::config::GrKind;
use sidkit::pipeline::experiment::report_path;
use sidkit::pipeline::ingest::{ingest_embeddings, read_corpus_dir, read_events, write_corpus_dir};
use sidkit::pipeline::report::{render_report, DirLock, ReportTable};
use sidkit::pipeline::stages::{
    evaluate_retrieval, fit_sequence_model, fit_tokenizer, gr_split, read_sids, write_sids, SeqModel,
};
use sidkit::pipeline::{gen_synthetic, run_experiment, ExperimentKind, PipelineConfig};
use sidkit::sid_index::io::{load_index_items, metrics_csv, save_index};
use sidkit::sid_index::{build_index, uniqueness, utilization_metrics, IndexedItem, SidIndex};
use sidkit::tokenizer::checkpoint as tok_ckpt;
use sidkit::tokenizer::{tokenize_corpus, Tokenizer};
use sidkit::{Error, Exec, Result, SemanticId};

#[derive(Debug, Parser)]
#[command(name = "sidkit", version, about = "Semantic ID tokenization and generative retrieval")]
struct Cli {
    /// Pipeline configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides `seed` from the configuration.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Overrides `out_dir` from the configuration.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Run every loop on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    /// Log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Import the embedding files, metadata and events listed under [data].
    Ingest,
    /// Generate a synthetic corpus and user log from [synthetic].
    Synth,
    /// Train the tokenizer on the corpus.
    TrainTokenizer,
    /// Assign a semantic ID to every corpus item.
    Tokenize,
    /// Build the SID index from the assigned IDs.
    BuildIndex,
    /// Uniqueness, utilization and perplexity of the index.
    Metrics,
    /// Train the generative retrieval model on the user log.
    TrainGr,
    /// Retrieve for every held-out user and score the lists.
    Retrieve,
    /// Run one experiment: shape_sweep, ablation, depth_breadth or gr_history_sweep.
    Experiment { name: ExperimentKind },
    /// Render experiment reports as text tables (all present reports when no name is given).
    Report { name: Option<ExperimentKind> },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

struct Env {
    cfg: PipelineConfig,
    exec: Exec,
}

impl Env {
    fn out(&self, name: &str) -> PathBuf {
        self.cfg.out_dir.join(name)
    }

    fn corpus_dir(&self) -> PathBuf {
        self.out("corpus")
    }

    fn require(&self, name: &str, stage: &str) -> Result<PathBuf> {
        let p = self.out(name);
        if p.is_file() {
            Ok(p)
        } else {
            Err(Error::Data(format!("{} not found (run `{stage}` first)", p.display())))
        }
    }

    fn tokenizer(&self) -> Result<Tokenizer> {
        tok_ckpt::load(&self.require("tokenizer.sidf", "train-tokenizer")?)
    }

    fn sids(&self) -> Result<HashMap<u64, SemanticId>> {
        read_sids(&self.require("sids.tsv", "tokenize")?)
    }

    fn index(&self, shape: &[usize]) -> Result<SidIndex> {
        let items = load_index_items(&self.require("index.tsv", "build-index")?)?;
        build_index(&items, shape)
    }

    fn hash(&self) -> Result<String> {
        self.cfg.hash()
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    let exec = if cli.sequential { Exec::Sequential } else { Exec::default() };
    let env = Env { cfg, exec };
    fs::create_dir_all(&env.cfg.out_dir)?;
    match cli.command {
        Command::Experiment { name } => return experiment(&env, name),
        Command::Report { name } => return report(&env, name),
        _ => {}
    }
    let _lock = DirLock::acquire(&env.cfg.out_dir)?;
    match cli.command {
        Command::Ingest => ingest(&env),
        Command::Synth => synth(&env),
        Command::TrainTokenizer => train_tokenizer(&env),
        Command::Tokenize => tokenize(&env),
        Command::BuildIndex => build(&env),
        Command::Metrics => metrics(&env),
        Command::TrainGr => train_gr(&env),
        Command::Retrieve => retrieve(&env),
        Command::Experiment { .. } | Command::Report { .. } => unreachable!(),
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, text)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn ingest(env: &Env) -> Result<()> {
    let data = env
        .cfg
        .data
        .as_ref()
        .ok_or_else(|| Error::Config("`ingest` needs a [data] section".into()))?;
    let mods: Vec<(String, PathBuf)> = data.modalities.iter().map(|m| (m.name.clone(), m.path.clone())).collect();
    let corpus = ingest_embeddings(&mods, &data.metadata)?;
    let events = data.events.as_deref().map(read_events).transpose()?;
    write_corpus_dir(&env.corpus_dir(), &corpus, events.as_deref())?;
    println!(
        "ingested {} items, {} modalities, {} events",
        corpus.len(),
        corpus.modalities().len(),
        events.map_or(0, |e| e.len())
    );
    Ok(())
}

fn synth(env: &Env) -> Result<()> {
    let d = gen_synthetic(&env.cfg.synthetic)?;
    write_corpus_dir(&env.corpus_dir(), &d.corpus, Some(&d.events))?;
    println!(
        "generated {} items, {} modalities, {} events in {}",
        d.corpus.len(),
        d.corpus.modalities().len(),
        d.events.len(),
        env.corpus_dir().display()
    );
    Ok(())
}

fn train_tokenizer(env: &Env) -> Result<()> {
    let (corpus, _) = read_corpus_dir(&env.corpus_dir())?;
    let (tok, log) = fit_tokenizer(&env.cfg.tokenizer, &corpus, env.cfg.seed, env.exec)?;
    tok_ckpt::save(&env.out("tokenizer.sidf"), &tok)?;
    let levels = tok.shape().len();
    let mut columns: Vec<String> = ["epoch", "recon", "commit", "total", "probe_uniqueness"].map(String::from).into();
    columns.extend((0..levels).map(|l| format!("utilization_l{l}")));
    let rows = log
        .iter()
        .map(|m| {
            let mut r = vec![
                m.epoch.to_string(),
                format!("{:.6}", m.recon),
                format!("{:.6}", m.commit),
                format!("{:.6}", m.total),
                format!("{:.6}", m.probe_uniqueness),
            ];
            r.extend(m.usage.iter().map(|u| format!("{:.6}", u.utilization)));
            r
        })
        .collect();
    let table = ReportTable {
        config_hash: env.hash()?,
        seed: env.cfg.seed,
        columns,
        rows,
    };
    write_file(&env.out("tokenizer_log.csv"), &table.to_csv())?;
    match log.last() {
        Some(m) => println!("trained {} epochs, final loss {:.6}, probe uniqueness {:.4}", log.len(), m.total, m.probe_uniqueness),
        None => println!("fitted residual k-means tokenizer"),
    }
    Ok(())
}

fn tokenize(env: &Env) -> Result<()> {
    let tok = env.tokenizer()?;
    let (corpus, _) = read_corpus_dir(&env.corpus_dir())?;
    let tc = tokenize_corpus(&tok, &corpus, env.exec);
    if tc.entries.len() + tc.rejects.len() != corpus.len() {
        return Err(Error::Data("tokenization lost items".into()));
    }
    write_sids(&env.out("sids.tsv"), &tc.entries.iter().cloned().collect())?;
    let mut rejects = String::from("item_id\treason\n");
    for (id, why) in &tc.rejects {
        rejects.push_str(&format!("{id}\t{}\n", why.replace(['\t', '\n'], " ")));
    }
    write_file(&env.out("rejects.tsv"), &rejects)?;
    if !tc.rejects.is_empty() {
        warn!("{} items rejected, see rejects.tsv", tc.rejects.len());
    }
    println!("tokenized {} items, rejected {}", tc.entries.len(), tc.rejects.len());
    Ok(())
}

fn build(env: &Env) -> Result<()> {
    let shape = env.tokenizer()?.shape();
    let sids = env.sids()?;
    let (corpus, _) = read_corpus_dir(&env.corpus_dir())?;
    let mut items = Vec::with_capacity(sids.len());
    for (id, sid) in &sids {
        let r = corpus
            .get(*id)
            .ok_or_else(|| Error::Data(format!("item {id} in sids.tsv is not in the corpus")))?;
        items.push(IndexedItem {
            item_id: *id,
            sid: sid.clone(),
            relevance: r.relevance,
            freshness: r.freshness,
        });
    }
    let index = build_index(&items, &shape)?;
    save_index(&index, &env.out("index.tsv"))?;
    println!("indexed {} items under {} SIDs", index.total_items(), index.num_sids());
    Ok(())
}

fn metrics(env: &Env) -> Result<()> {
    let shape = env.tokenizer()?.shape();
    let index = env.index(&shape)?;
    let u = uniqueness(&index)?;
    let mut sids: Vec<SemanticId> = Vec::with_capacity(index.total_items());
    for list in index.lists() {
        sids.extend(std::iter::repeat_n(list.sid.clone(), list.items.len()));
    }
    let usage = utilization_metrics(&sids, &shape);
    let text = format!("# config_hash={},seed={}\n{}", env.hash()?, env.cfg.seed, metrics_csv(&shape, u, &usage));
    write_file(&env.out("metrics.csv"), &text)?;
    print!("{}", metrics_csv(&shape, u, &usage));
    Ok(())
}

fn split(env: &Env) -> Result<(sidkit::genret::DatasetSplit, Vec<usize>)> {
    let shape = env.tokenizer()?.shape();
    let sids = env.sids()?;
    let (_, events) = read_corpus_dir(&env.corpus_dir())?;
    let (split, dropped) = gr_split(&events, &sids, env.cfg.gr.shape.max_history, env.cfg.gr.max_train_per_user)?;
    if dropped > 0 {
        warn!("{dropped} events refer to items without a SID and were skipped");
    }
    info!("{} train, {} valid, {} test examples", split.train.len(), split.valid.len(), split.test.len());
    Ok((split, shape))
}

fn train_gr(env: &Env) -> Result<()> {
    if env.cfg.gr.model != GrKind::Attention {
        return Err(Error::Config(
            "train-gr trains gr.model = \"attention\"; the n-gram model is fitted by `retrieve`".into(),
        ));
    }
    let (split, shape) = split(env)?;
    let (model, log) = fit_sequence_model(&env.cfg.gr, env.cfg.gr.shape.max_history, &shape, &split, env.cfg.seed, env.exec)?;
    let SeqModel::Attention(model) = model else {
        unreachable!("attention config yields an attention model")
    };
    save_model(&env.out("gr.sidg"), &model)?;
    let rows = log
        .iter()
        .map(|e| {
            vec![
                e.epoch.to_string(),
                format!("{:.6}", e.train_loss),
                e.valid_loss.map_or(String::new(), |v| format!("{v:.6}")),
            ]
        })
        .collect();
    let table = ReportTable {
        config_hash: env.hash()?,
        seed: env.cfg.seed,
        columns: ["epoch", "train_loss", "valid_loss"].map(String::from).into(),
        rows,
    };
    write_file(&env.out("gr_log.csv"), &table.to_csv())?;
    if let Some(e) = log.last() {
        println!("trained {} epochs, final train loss {:.6}", log.len(), e.train_loss);
    }
    Ok(())
}

fn retrieve(env: &Env) -> Result<()> {
    let (split, shape) = split(env)?;
    let index = env.index(&shape)?;
    let model = match env.cfg.gr.model {
        GrKind::Attention => {
            let m = load_model(&env.require("gr.sidg", "train-gr")?)?;
            if m.vocab().shape() != shape.as_slice() {
                return Err(Error::Data("gr.sidg was trained for a different codebook shape".into()));
            }
            SeqModel::Attention(m)
        }
        GrKind::Ngram => fit_sequence_model(&env.cfg.gr, env.cfg.gr.shape.max_history, &shape, &split, env.cfg.seed, env.exec)?.0,
    };
    let rs = &env.cfg.retrieval;
    let rc = rs.to_config(env.cfg.seed);
    let run = evaluate_retrieval(model.as_dyn(), &index, &split.test, &rc, &rs.ks, env.exec)?;
    let mut out = fs::File::create(env.out("retrieval.tsv"))?;
    writeln!(out, "user_id\titems")?;
    for (user, items) in &run.results {
        let items: Vec<String> = items.iter().map(u64::to_string).collect();
        writeln!(out, "{user}\t{}", items.join(" "))?;
    }
    let mut columns = vec!["users".to_string(), "mode".into(), "budget".into(), "mean_items".into()];
    let mut row = vec![
        run.metrics.users.to_string(),
        rs.budget_mode().label().replace(',', ";"),
        rs.budget.to_string(),
        format!("{:.6}", run.mean_items),
    ];
    for m in &run.metrics.at {
        columns.push(format!("R@{}", m.k));
        row.push(format!("{:.6}", m.recall));
    }
    for m in &run.metrics.at {
        columns.push(format!("N@{}", m.k));
        row.push(format!("{:.6}", m.ndcg));
    }
    let table = ReportTable {
        config_hash: env.hash()?,
        seed: env.cfg.seed,
        columns,
        rows: vec![row],
    };
    write_file(&env.out("gr_metrics.csv"), &table.to_csv())?;
    if run.unknown_users > 0 {
        warn!("{} users got no candidates from the index", run.unknown_users);
    }
    print!("{}", table.to_csv().split_once('\n').map_or("", |(_, rest)| rest));
    Ok(())
}

fn experiment(env: &Env, kind: ExperimentKind) -> Result<()> {
    let out = run_experiment(&env.cfg, kind, env.exec)?;
    println!("{} rows written to {}", out.rows, out.path.display());
    if out.failures.is_empty() {
        Ok(())
    } else {
        for f in &out.failures {
            eprintln!("failed row: {f}");
        }
        Err(Error::Data(format!("{} of {} rows failed", out.failures.len(), out.rows)))
    }
}

fn report(env: &Env, name: Option<ExperimentKind>) -> Result<()> {
    let kinds = match name {
        Some(k) => vec![k],
        None => ExperimentKind::ALL.to_vec(),
    };
    let mut text = String::new();
    for k in kinds {
        let path = report_path(&env.cfg.out_dir, k);
        if !path.is_file() {
            if name.is_some() {
                return Err(Error::Data(format!("{} not found (run `experiment {k}` first)", path.display())));
            }
            continue;
        }
        text.push_str(&render_report(k.name(), &ReportTable::read(&path)?));
        text.push('\n');
    }
    if text.is_empty() {
        return Err(Error::Data("no experiment reports found".into()));
    }
    write_file(&env.out("report.txt"), &text)?;
    print!("{text}");
    Ok(())
}
