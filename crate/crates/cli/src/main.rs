//! `spladapt`: stage-by-stage or end-to-end cross-domain adaptation of a
//! SPLADE-style sparse retriever, plus retrieval, evaluation and the
//! synthetic benchmark generator.
//!
//! ```bash
//! spladapt synth-gen --out bench
//! spladapt pipeline --config bench/config.json --mode full
//! spladapt sweep-k 0,1,2,4 --config bench/config.json
//! ```

mod config;
mod workdir;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use spladapt::data::{synth_generate, SynthSpec};
use spladapt::eval::{
    evaluate_runs, index_sparsity, paired_ttest, read_qrels, read_run, render_sweep, render_table, write_run,
    EvalReport, SystemEval, BM25_ROW, ZERO_SHOT_ROW,
};
use spladapt::experiment::{pipeline_eval, sweep_k, Benchmark, Experiment, COMPOSED_ROW, METRIC_DEPTH};
use spladapt::params::{compose, Checkpoint, Stage};
use spladapt::retrieval::{
    build_index, encode_texts, retrieve_bm25, retrieve_sparse, IndexKind, IndexSource, InvertedIndex,
};
use spladapt::trainer::{Mode, Stages};
use spladapt::Error;

use crate::config::{DatasetPaths, Overrides, PipelineConfig};
use crate::workdir::Workdir;

#[derive(Parser, Debug)]
#[command(name = "spladapt", version, about = "Domain/task checkpoint surgery for sparse retrievers")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Pipeline config (JSON)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// full, wo_source or wo_pretraining
    #[arg(long, global = true)]
    mode: Option<Mode>,
    /// Number of transformer layers in the domain subset
    #[arg(long, global = true)]
    k: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    workdir: Option<PathBuf>,
    /// Ranked-list depth for retrieval
    #[arg(long, global = true, default_value_t = 100)]
    cutoff: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum DomainArg {
    Source,
    Target,
}

/// Retrieval systems that can be indexed and searched on the target set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ModelArg {
    Bm25,
    ZeroShot,
    Composed,
}

impl ModelArg {
    fn name(self) -> &'static str {
        match self {
            ModelArg::Bm25 => BM25_ROW,
            ModelArg::ZeroShot => ZERO_SHOT_ROW,
            ModelArg::Composed => COMPOSED_ROW,
        }
    }

    fn stage(self) -> Option<Stage> {
        match self {
            ModelArg::Bm25 => None,
            ModelArg::ZeroShot => Some(Stage::FinetuneSource),
            ModelArg::Composed => Some(Stage::Composed),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum MetricArg {
    Ndcg,
    Mrr,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// MLM pre-training of the domain subset on the source or target corpus
    Pretrain {
        #[arg(long, value_enum)]
        domain: DomainArg,
    },
    /// Ranking fine-tuning of the task subset on source triples
    Finetune,
    /// Splice the target domain subset into the fine-tuned model
    Compose,
    /// Build a target-corpus index for one system
    Index {
        #[arg(long, value_enum, default_value = "composed")]
        model: ModelArg,
    },
    /// Run the target queries against a built index
    Search {
        #[arg(long, value_enum, default_value = "composed")]
        model: ModelArg,
    },
    /// Score every run in the workdir against the target qrels
    Evaluate,
    /// All stages, the ablations and the report
    Pipeline,
    /// Full-mode pipeline for each k (comma-separated; defaults to the config's sweep)
    SweepK {
        #[arg(value_delimiter = ',')]
        ks: Vec<usize>,
    },
    /// Write the synthetic cross-domain benchmark and a config pointing at it
    SynthGen {
        #[arg(long)]
        out: PathBuf,
        /// SynthSpec JSON; defaults apply to absent keys
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Paired two-sided t-test between two run files
    Ttest {
        run_a: PathBuf,
        run_b: PathBuf,
        #[arg(long)]
        qrels: PathBuf,
        #[arg(long, value_enum, default_value = "ndcg")]
        metric: MetricArg,
        #[arg(long, default_value_t = METRIC_DEPTH)]
        depth: usize,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    match cli.command {
        Command::SynthGen { out, spec } => synth_gen(&out, spec.as_deref(), g.seed),
        Command::Ttest {
            run_a,
            run_b,
            qrels,
            metric,
            depth,
        } => ttest(&run_a, &run_b, &qrels, metric, depth),
        command => {
            let ctx = Ctx::load(g)?;
            match command {
                Command::Pretrain { domain } => ctx.pretrain(domain),
                Command::Finetune => ctx.finetune(),
                Command::Compose => ctx.compose(),
                Command::Index { model } => ctx.index(model),
                Command::Search { model } => ctx.search(model),
                Command::Evaluate => ctx.evaluate(),
                Command::Pipeline => ctx.pipeline(),
                Command::SweepK { ks } => ctx.sweep(ks),
                Command::SynthGen { .. } | Command::Ttest { .. } => unreachable!(),
            }
        }
    }
}

/// Loaded config, data and workdir for the stage commands.
struct Ctx {
    cfg: PipelineConfig,
    bench: Benchmark,
    wd: Workdir,
    cutoff: usize,
}

impl Ctx {
    fn load(g: &Global) -> Result<Self> {
        let path = g.config.as_ref().context("--config is required for this command")?;
        let overrides = Overrides {
            mode: g.mode,
            k: g.k,
            seed: g.seed,
            workdir: g.workdir.clone(),
        };
        let cfg = PipelineConfig::load(path, &overrides)?;
        ensure!(g.cutoff > 0, "--cutoff must be positive");
        let bench = Benchmark::new(cfg.source.load()?, cfg.target.load()?, cfg.max_vocab)?;
        log::info!(
            "source {:?}; target {:?}; vocabulary {}",
            bench.source.stats(),
            bench.target.stats(),
            bench.vocab.len()
        );
        let wd = Workdir::new(&cfg.workdir);
        wd.sync_vocab(&bench.vocab)?;
        Ok(Self {
            cfg,
            bench,
            wd,
            cutoff: g.cutoff,
        })
    }

    fn stages(&self) -> Result<Stages<'_>> {
        Ok(Stages::new(self.bench.data(), self.cfg.spec(self.bench.vocab.len()))?)
    }

    /// The stored base checkpoint, created on first use.
    fn base(&self, stages: &Stages<'_>) -> Result<Checkpoint> {
        if self.wd.checkpoint_dir(Stage::Base).exists() {
            let base = self.wd.load_checkpoint(Stage::Base)?;
            ensure!(
                *base.config() == stages.spec.model,
                "stored base checkpoint has config {:?}, expected {:?}",
                base.config(),
                stages.spec.model
            );
            return Ok(base);
        }
        let base = stages.base()?;
        self.wd.save_checkpoint(&base)?;
        Ok(base)
    }

    fn pretrain(&self, domain: DomainArg) -> Result<()> {
        let stages = self.stages()?;
        let base = self.base(&stages)?;
        let stage = match domain {
            DomainArg::Source => Stage::PretrainSource,
            DomainArg::Target => Stage::PretrainTarget,
        };
        let out = stages.pretrain(&base, stage)?;
        self.wd.append_log(&out.log)?;
        self.wd.save_checkpoint(&out.checkpoint)?;
        Ok(())
    }

    fn finetune(&self) -> Result<()> {
        let stages = self.stages()?;
        let init = match self.cfg.mode {
            Mode::Full => self.wd.load_checkpoint(Stage::PretrainSource)?,
            _ => self.base(&stages)?,
        };
        let out = stages.finetune(&init)?;
        self.wd.append_log(&out.log)?;
        self.wd.save_checkpoint(&out.checkpoint)?;
        Ok(())
    }

    fn compose(&self) -> Result<()> {
        let mode = self.cfg.mode;
        let task = self.wd.load_checkpoint(Stage::FinetuneSource)?;
        let expected = if mode == Mode::Full { Stage::PretrainSource } else { Stage::Base };
        let from = task.manifest.parents.first().map(|p| p.stage);
        ensure!(
            from == Some(expected),
            "the stored {} checkpoint was fine-tuned from {}, but mode {mode} fine-tunes from {expected}; rerun finetune",
            Stage::FinetuneSource,
            from.map_or("nothing".to_string(), |s| s.to_string()),
        );
        let domain = match mode {
            Mode::WoPretraining => self.wd.load_checkpoint(Stage::Base)?,
            _ => self.wd.load_checkpoint(Stage::PretrainTarget)?,
        };
        self.wd.save_checkpoint(&compose(&domain, &task)?)?;
        Ok(())
    }

    fn model_checkpoint(&self, model: ModelArg) -> Result<Option<Checkpoint>> {
        model.stage().map(|s| self.wd.load_checkpoint(s)).transpose()
    }

    fn index(&self, model: ModelArg) -> Result<()> {
        let ckpt = self.model_checkpoint(model)?;
        let source = match &ckpt {
            None => IndexSource::Frequency,
            Some(c) => IndexSource::Encoder {
                checkpoint: c,
                vocab: &self.bench.vocab,
            },
        };
        let index = build_index(&self.bench.target.corpus, &source)?;
        let dir = self.wd.index_dir(model.name());
        index.save(&dir)?;
        log::info!("wrote {} index ({} docs) to {}", model.name(), index.n_docs(), dir.display());
        Ok(())
    }

    fn load_index(&self, model: &str) -> Result<InvertedIndex> {
        let dir = self.wd.index_dir(model);
        if !dir.exists() {
            return Err(Error::MissingArtifact {
                stage: format!("index/{model}"),
                path: dir,
            }
            .into());
        }
        Ok(InvertedIndex::load(&dir)?)
    }

    fn search(&self, model: ModelArg) -> Result<()> {
        let index = self.load_index(model.name())?;
        self.search_index(model, &index)
    }

    fn search_index(&self, model: ModelArg, index: &InvertedIndex) -> Result<()> {
        let queries = &self.bench.target.queries;
        let runs = match self.model_checkpoint(model)? {
            None => queries
                .iter()
                .map(|q| retrieve_bm25(index, &q.id, &q.text, self.cutoff))
                .collect::<spladapt::Result<Vec<_>>>()?,
            Some(ckpt) => {
                let encoded = encode_texts(&ckpt, &self.bench.vocab, queries.iter().map(|q| q.text.as_str()))?;
                queries
                    .iter()
                    .zip(&encoded)
                    .map(|(q, v)| retrieve_sparse(index, &q.id, v, self.cutoff))
                    .collect::<spladapt::Result<Vec<_>>>()?
            }
        };
        let path = self.wd.run_path(model.name());
        fs::create_dir_all(self.wd.runs_dir())?;
        write_run(&path, &runs, model.name())?;
        log::info!("wrote {} ranked lists to {}", runs.len(), path.display());
        Ok(())
    }

    /// Score every stored run. Missing baseline runs are produced first so
    /// the report always has its BM25 and zero-shot rows.
    fn evaluate(&self) -> Result<()> {
        for model in [ModelArg::Bm25, ModelArg::ZeroShot] {
            if self.wd.run_path(model.name()).exists() {
                continue;
            }
            log::info!("no {} run stored; building it", model.name());
            let index = match self.load_index(model.name()) {
                Ok(index) => index,
                Err(_) => {
                    self.index(model)?;
                    self.load_index(model.name())?
                }
            };
            self.search_index(model, &index)?;
        }
        let dir = self.wd.runs_dir();
        let mut names: Vec<String> = match fs::read_dir(&dir) {
            Ok(entries) => entries
                .filter_map(|e| e.ok())
                .filter_map(|e| {
                    let p = e.path();
                    (p.extension()? == "trec").then(|| p.file_stem()?.to_str().map(str::to_string))?
                })
                .collect(),
            Err(_) => Vec::new(),
        };
        ensure!(!names.is_empty(), "no run files in {}; run `search` first", dir.display());
        let rank = |n: &str| [BM25_ROW, ZERO_SHOT_ROW, COMPOSED_ROW].iter().position(|r| *r == n).unwrap_or(3);
        names.sort_by(|a, b| rank(a).cmp(&rank(b)).then_with(|| a.cmp(b)));
        let ds = &self.bench.target;
        let mut report = EvalReport::new("target", METRIC_DEPTH);
        for name in &names {
            let runs = read_run(&self.wd.run_path(name))?;
            let mut sys = evaluate_runs(name, &runs, &ds.qrels, METRIC_DEPTH);
            sys.sparsity = self.stored_sparsity(name)?;
            report.push(sys);
        }
        report.compute_significance(&[BM25_ROW, ZERO_SHOT_ROW])?;
        self.write_report(&report)
    }

    /// Sparsity of a sparse system whose index and checkpoint are both stored.
    fn stored_sparsity(&self, name: &str) -> Result<Option<spladapt::eval::SparsityStats>> {
        let model = match name {
            ZERO_SHOT_ROW => ModelArg::ZeroShot,
            COMPOSED_ROW => ModelArg::Composed,
            _ => return Ok(None),
        };
        let (Some(stage), true) = (model.stage(), self.wd.index_dir(name).exists()) else {
            return Ok(None);
        };
        if !self.wd.checkpoint_dir(stage).exists() {
            return Ok(None);
        }
        let index = self.load_index(name)?;
        if index.kind() != IndexKind::Impact {
            return Ok(None);
        }
        let ckpt = self.wd.load_checkpoint(stage)?;
        let queries = encode_texts(
            &ckpt,
            &self.bench.vocab,
            self.bench.target.queries.iter().map(|q| q.text.as_str()),
        )?;
        Ok(Some(index_sparsity(&index, &queries)?))
    }

    fn write_report(&self, report: &EvalReport) -> Result<()> {
        self.wd.write("report.json", &serde_json::to_string_pretty(report)?)?;
        let table = render_table(std::slice::from_ref(report));
        let path = self.wd.write("report.txt", &table)?;
        print!("{table}");
        log::info!("wrote report to {}", path.display());
        Ok(())
    }

    fn pipeline(&self) -> Result<()> {
        let mode = self.cfg.mode;
        let spec = self.cfg.spec(self.bench.vocab.len());
        let mut exp = Experiment::new(&self.bench, spec)?;
        let eval = pipeline_eval(&mut exp, &self.bench, mode, self.cutoff)?;
        // Replace artifacts of any earlier run so the directory matches this mode.
        for dir in [self.wd.file("checkpoints"), self.wd.runs_dir()] {
            if dir.exists() {
                fs::remove_dir_all(&dir)?;
            }
        }
        self.wd.save_checkpoint(&exp.base()?)?;
        let ckpts = exp.mode_checkpoints(mode)?;
        for c in ckpts.iter().filter(|c| c.stage() != Stage::Base) {
            self.wd.save_checkpoint(c)?;
        }
        self.wd.reset_log()?;
        self.wd.append_log(exp.log())?;
        fs::create_dir_all(self.wd.runs_dir())?;
        for (name, runs) in &eval.runs {
            write_run(&self.wd.run_path(name), runs, name)?;
        }
        self.write_report(&eval.report)
    }

    fn sweep(&self, ks: Vec<usize>) -> Result<()> {
        let ks = if ks.is_empty() { self.cfg.sweep.clone() } else { ks };
        ensure!(!ks.is_empty(), "no k values to sweep");
        for &k in &ks {
            ensure!(
                k < self.cfg.model.layers,
                "k={k} must be below the layer count {}",
                self.cfg.model.layers
            );
        }
        let spec = self.cfg.spec(self.bench.vocab.len());
        let rows = sweep_k(&self.bench, spec, &ks, self.cutoff)?;
        self.wd.write("sweep.json", &serde_json::to_string_pretty(&rows)?)?;
        let table = render_sweep(&rows);
        self.wd.write("sweep.txt", &table)?;
        print!("{table}");
        Ok(())
    }
}

fn synth_gen(out: &Path, spec_path: Option<&Path>, seed: Option<u64>) -> Result<()> {
    let mut spec: SynthSpec = match spec_path {
        Some(p) => serde_json::from_str(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)
            .with_context(|| format!("parsing {}", p.display()))?,
        None => SynthSpec::default(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    let data = synth_generate(&spec)?;
    data.source.save(&out.join("source"))?;
    data.target.save(&out.join("target"))?;
    fs::write(out.join("synth_spec.json"), serde_json::to_string_pretty(&spec)?)?;
    fs::write(out.join("audit.json"), serde_json::to_string_pretty(&data.audit)?)?;
    let paths = |dir: &str, triples: bool| DatasetPaths {
        corpus: PathBuf::from(dir).join("corpus.jsonl"),
        queries: PathBuf::from(dir).join("queries.tsv"),
        qrels: PathBuf::from(dir).join("qrels.trec"),
        triples: triples.then(|| PathBuf::from(dir).join("triples.tsv")),
    };
    let config = serde_json::json!({
        "source": paths("source", true),
        "target": paths("target", false),
        "workdir": "work",
    });
    fs::write(out.join("config.json"), serde_json::to_string_pretty(&config)?)?;
    println!("source: {:?}", data.source.stats());
    println!("target: {:?}", data.target.stats());
    println!("config: {}", out.join("config.json").display());
    Ok(())
}

fn ttest(run_a: &Path, run_b: &Path, qrels: &Path, metric: MetricArg, depth: usize) -> Result<()> {
    let qrels = read_qrels(qrels)?;
    let score = |p: &Path| -> Result<SystemEval> {
        let name = p.display().to_string();
        Ok(evaluate_runs(&name, &read_run(p)?, &qrels, depth))
    };
    let (a, b) = (score(run_a)?, score(run_b)?);
    if a.per_query.is_empty() {
        bail!("qrels have no query with a relevant document");
    }
    let values = |s: &SystemEval| -> Vec<f64> {
        s.per_query
            .iter()
            .map(|q| if metric == MetricArg::Ndcg { q.ndcg } else { q.mrr })
            .collect()
    };
    let t = paired_ttest(&values(&a), &values(&b))?;
    let label = if metric == MetricArg::Ndcg { "nDCG" } else { "MRR" };
    println!("{label}@{depth}: a={:.4} b={:.4} over {} queries", mean(&values(&a)), mean(&values(&b)), a.per_query.len());
    println!("mean_diff={:.6} t={:.4} df={} p={:.6}", t.mean_diff, t.t, t.df, t.p_two_sided);
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}
