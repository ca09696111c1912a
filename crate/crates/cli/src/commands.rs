use std::fs;
use std::io::Write as _;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use triage_core::detect::write_ranked;
use triage_core::eval::{
    coverage, diversity, run_benchmark, BenchmarkTable, ErrorGroundTruth, InjectionConfig,
    MetricConfig, TruthSource,
};
use triage_core::pipeline::{
    run_simulation, split_dataset, Generator, GeneratorConfig, PipelineConfig, RoundEvent, Strategy,
};
use triage_core::synth::{toy_corpus, ToyCorpusConfig};
use triage_core::{
    detect_all_classes, flag_top_k, load_corpus, load_precomputed, load_word_vectors,
    DetectionConfig, Embedders, LabeledCorpus, Method, SifConfig,
};

use crate::plot::curves_svg;
use crate::server::{self, App};
use crate::store::{Project, Store, STORE_ENV};

#[derive(Debug, Parser)]
#[command(
    name = "triage",
    version,
    about = "Outlier ranking, error triage, and outlier-seeded data collection for short-text corpora"
)]
pub struct Cli {
    /// Log more (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Rank each class by outlierness and write ranked lists.
    Detect(DetectArgs),
    /// Compare ranking methods against injected or labeled errors.
    Bench(BenchArgs),
    /// Diversity of a corpus and its coverage of a test corpus.
    Metrics(MetricsArgs),
    /// Simulate multi-round collection with the synthetic paraphrase generator.
    Simulate(SimulateArgs),
    /// Seeded per-class train/test split.
    Split(SplitArgs),
    /// Serve the review API over a project store.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    /// Word vectors, one `word v1 ... vd` per line.
    #[arg(long)]
    pub vectors: Option<PathBuf>,
    /// Expected vector dimension.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Precomputed sentence vectors (`{"id", "vector"}` lines).
    #[arg(long)]
    pub precomputed: Option<PathBuf>,
    /// SIF smoothing constant.
    #[arg(long, default_value_t = triage_core::embed::DEFAULT_SIF_A)]
    pub sif_a: f64,
    /// Skip SIF common-component removal.
    #[arg(long)]
    pub no_common_component: bool,
}

impl EmbedArgs {
    fn load(&self) -> Result<Embedders> {
        let mut e = Embedders::default();
        if let Some(p) = &self.vectors {
            e.words = Some(
                load_word_vectors(p, self.dim)
                    .with_context(|| format!("loading word vectors {}", p.display()))?,
            );
        }
        if let Some(p) = &self.precomputed {
            e.precomputed = Some(
                load_precomputed(p)
                    .with_context(|| format!("loading sentence vectors {}", p.display()))?,
            );
        }
        e.sif = self.sif_config()?;
        Ok(e)
    }

    fn sif_config(&self) -> Result<SifConfig> {
        let sif = SifConfig {
            a: self.sif_a,
            remove_common_component: !self.no_common_component,
            ..SifConfig::default()
        };
        sif.validate()?;
        Ok(sif)
    }
}

fn check_embedders(methods: &[Method], e: &Embedders) -> Result<()> {
    for m in methods {
        if m.needs_word_vectors() && e.words.is_none() {
            bail!("method `{m}` needs --vectors");
        }
        if m.needs_precomputed() && e.precomputed.is_none() {
            bail!("method `{m}` needs --precomputed");
        }
    }
    Ok(())
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

/// Class keys as file names: anything outside `[A-Za-z0-9._+-]` becomes `_`.
pub fn file_stem(class_key: &str) -> String {
    class_key
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "._+-".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect()
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    /// Corpus in the line format.
    #[arg(long)]
    pub corpus: PathBuf,
    /// average, sif, precomputed, bow, random, short, long, or borda:a+b.
    #[arg(long, default_value = "average")]
    pub method: Method,
    /// Percentage of each class to flag.
    #[arg(long, default_value_t = 10.0)]
    pub k: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub embed: EmbedArgs,
    /// Output directory for `<class>.jsonl` lists and `flagged.jsonl`.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn detect(args: &DetectArgs) -> Result<()> {
    let corpus = load_corpus(&args.corpus)?;
    let embedders = args.embed.load()?;
    check_embedders(std::slice::from_ref(&args.method), &embedders)?;
    let cfg = DetectionConfig {
        method: args.method.clone(),
        k_percent: args.k,
        seed: args.seed,
    };
    let lists = detect_all_classes(&corpus, &embedders, &cfg)?;
    create_dir(&args.out)?;
    let mut flagged = Vec::new();
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "class\tsize\tflagged")?;
    for (key, list) in &lists {
        let path = args.out.join(format!("{}.jsonl", file_stem(key)));
        let mut buf = Vec::new();
        write_ranked(&mut buf, list)?;
        write_file(&path, buf)?;
        let ids = flag_top_k(list, args.k);
        writeln!(stdout, "{key}\t{}\t{}", list.len(), ids.len())?;
        for (i, id) in ids.into_iter().enumerate() {
            flagged.push(serde_json::json!({ "class_key": key, "rank": i + 1, "id": id }));
        }
    }
    let lines: String = flagged.iter().map(|v| format!("{v}\n")).collect();
    write_file(&args.out.join("flagged.jsonl"), lines)?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Corpus in the line format.
    #[arg(
        long,
        conflicts_with = "synthetic",
        required_unless_present = "synthetic"
    )]
    pub corpus: Option<PathBuf>,
    /// Use a generated class-clustered corpus with matching word vectors.
    #[arg(long)]
    pub synthetic: bool,
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    #[arg(long, default_value_t = 100)]
    pub per_class: usize,
    /// Injection rate; copies `max(1, round(p·n))` foreign samples into each class.
    #[arg(long, default_value_t = 0.04)]
    pub p: f64,
    /// Known error ids (`{"id"}` lines) instead of injection.
    #[arg(long, conflicts_with = "synthetic")]
    pub errors: Option<PathBuf>,
    #[arg(long, default_value = "random,bow,average,sif,borda:average+sif")]
    pub methods: String,
    #[arg(long, default_value_t = 10.0)]
    pub k: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub embed: EmbedArgs,
    /// Directory for table.tsv, curves.tsv, curves.svg, and truth.jsonl.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn bench(args: &BenchArgs) -> Result<BenchmarkTable> {
    let methods = Method::parse_list(&args.methods)?;
    let (corpus, embedders) = if args.synthetic {
        let (corpus, words) = toy_corpus(&ToyCorpusConfig {
            classes: args.classes,
            per_class: args.per_class,
            seed: args.seed,
            ..ToyCorpusConfig::default()
        })?;
        let mut e = Embedders::with_words(words);
        e.sif = args.embed.sif_config()?;
        (corpus, e)
    } else {
        let path = args.corpus.as_ref().expect("clap requires corpus");
        (load_corpus(path)?, args.embed.load()?)
    };
    check_embedders(&methods, &embedders)?;
    let truth = match &args.errors {
        Some(path) => {
            let f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
            TruthSource::Labeled(ErrorGroundTruth::read(std::io::BufReader::new(f), &corpus)?)
        }
        None => TruthSource::Inject(InjectionConfig {
            p: args.p,
            seed: args.seed,
        }),
    };
    let detection = DetectionConfig {
        method: methods[0].clone(),
        k_percent: args.k,
        seed: args.seed,
    };
    let table = run_benchmark(&corpus, &methods, truth, &detection, &embedders)?;
    print!("{}", table.to_tsv());
    if let Some(out) = &args.out {
        create_dir(out)?;
        write_file(&out.join("table.tsv"), table.to_tsv())?;
        write_file(&out.join("curves.tsv"), curves_tsv(&table))?;
        let series: Vec<(String, Vec<(f64, f64)>)> = table
            .rows
            .iter()
            .map(|r| (r.method.clone(), r.curve.clone()))
            .collect();
        write_file(
            &out.join("curves.svg"),
            curves_svg("Recall of errors", "k (% of class inspected)", &series),
        )?;
    }
    Ok(table)
}

/// One `k` column followed by one recall column per method.
fn curves_tsv(table: &BenchmarkTable) -> String {
    let mut out = String::from("k");
    for r in &table.rows {
        out.push('\t');
        out.push_str(&r.method);
    }
    out.push('\n');
    let n = table.rows.first().map_or(0, |r| r.curve.len());
    for i in 0..n {
        out.push_str(&format!("{}", table.rows[0].curve[i].0));
        for r in &table.rows {
            out.push_str(&format!("\t{:.6}", r.curve[i].1));
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Corpus to measure; the training side for coverage.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Test corpus for coverage.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long, default_value_t = triage_core::eval::DEFAULT_MAX_NGRAM)]
    pub max_ngram: usize,
}

pub fn metrics(args: &MetricsArgs) -> Result<serde_json::Value> {
    let cfg = MetricConfig {
        max_ngram: args.max_ngram,
    };
    let corpus = load_corpus(&args.corpus)?;
    let mut report = serde_json::json!({
        "samples": corpus.len(),
        "classes": corpus.num_classes(),
        "diversity": diversity(&corpus, &cfg)?,
    });
    if let Some(test) = &args.test {
        let test = load_corpus(test)?;
        report["coverage"] = serde_json::json!(coverage(&corpus, &test, &cfg)?);
    }
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(report)
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[arg(long, default_value_t = 3)]
    pub rounds: usize,
    #[arg(long, default_value_t = 3)]
    pub seeds_per_class: usize,
    #[arg(long, default_value_t = 15)]
    pub workers: usize,
    #[arg(long, default_value_t = 5)]
    pub paraphrases: usize,
    #[arg(long, default_value_t = 10.0)]
    pub k: f64,
    /// Ranking method for the validation queue.
    #[arg(long, default_value = "borda:average+sif")]
    pub method: Method,
    /// Seed for detection baselines and seed selection.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl PipelineArgs {
    fn config(&self, strategy: Strategy) -> PipelineConfig {
        PipelineConfig {
            strategy,
            rounds: self.rounds,
            paraphrases_per_seed: self.paraphrases,
            workers_per_seed: self.workers,
            seeds_per_class: self.seeds_per_class,
            detection: DetectionConfig {
                method: self.method.clone(),
                k_percent: self.k,
                seed: self.seed,
            },
            seed: self.seed,
            ..PipelineConfig::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct GeneratorArgs {
    /// Generator definition as JSON; defaults to the built-in synthetic one.
    #[arg(long)]
    pub generator: Option<PathBuf>,
    /// Classes of the built-in generator.
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    #[arg(long, default_value_t = 7)]
    pub generator_seed: u64,
}

impl GeneratorArgs {
    fn config(&self) -> Result<GeneratorConfig> {
        match &self.generator {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                Ok(serde_json::from_str(&text)
                    .with_context(|| format!("parsing {}", path.display()))?)
            }
            None => Ok(GeneratorConfig::synthetic(
                self.classes,
                self.generator_seed,
            )),
        }
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Strategies to run; all three when omitted.
    #[arg(long, value_delimiter = ',')]
    pub strategy: Vec<Strategy>,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    #[command(flatten)]
    pub generator: GeneratorArgs,
    /// Train share of the per-strategy split.
    #[arg(long, default_value_t = 0.85)]
    pub ratio: f64,
    /// Directory for reports, logs, and datasets.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn simulate(args: &SimulateArgs) -> Result<triage_core::pipeline::SimulationReport> {
    let strategies = if args.strategy.is_empty() {
        Strategy::ALL.to_vec()
    } else {
        args.strategy.clone()
    };
    let generator = Generator::new(args.generator.config()?)?;
    let cfg = args.pipeline.config(strategies[0]);
    let report = run_simulation(
        &cfg,
        &generator,
        &strategies,
        args.ratio,
        &MetricConfig::default(),
    )?;
    print!("{}", report.rounds_tsv());
    println!();
    print!("{}", report.coverage_tsv());
    if let Some(out) = &args.out {
        create_dir(out)?;
        write_file(&out.join("rounds.tsv"), report.rounds_tsv())?;
        write_file(&out.join("coverage.tsv"), report.coverage_tsv())?;
        write_file(
            &out.join("report.json"),
            serde_json::to_string_pretty(&report)? + "\n",
        )?;
        for o in &report.outcomes {
            let dir = out.join(o.strategy.to_string());
            create_dir(&dir)?;
            let log: String = o
                .log
                .iter()
                .map(|e| RoundEvent::to_line(e) + "\n")
                .collect();
            write_file(&dir.join("rounds.log"), log)?;
            write_file(&dir.join("final.jsonl"), o.final_corpus.to_lines())?;
            write_file(&dir.join("train.jsonl"), o.train.to_lines())?;
            write_file(&dir.join("test.jsonl"), o.test.to_lines())?;
        }
    }
    Ok(report)
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value_t = 0.85)]
    pub ratio: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory for train.jsonl and test.jsonl.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn split(args: &SplitArgs) -> Result<(LabeledCorpus, LabeledCorpus)> {
    let corpus = load_corpus(&args.corpus)?;
    let (train, test) = split_dataset(&corpus, args.ratio, args.seed)?;
    create_dir(&args.out)?;
    write_file(&args.out.join("train.jsonl"), train.to_lines())?;
    write_file(&args.out.join("test.jsonl"), test.to_lines())?;
    println!("train\t{}\ntest\t{}", train.len(), test.len());
    Ok((train, test))
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Project store directory.
    #[arg(long, env = STORE_ENV)]
    pub store: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    /// Initial seeds for a new store.
    #[arg(long, conflicts_with = "synthetic")]
    pub seeds: Option<PathBuf>,
    /// Create a new store driven by the synthetic paraphrase generator.
    #[arg(long)]
    pub synthetic: bool,
    /// Word vectors for a store created from --seeds.
    #[arg(long)]
    pub vectors: Option<PathBuf>,
    #[arg(long)]
    pub dim: Option<usize>,
    /// Seed strategy for a new store.
    #[arg(long, default_value = "unique")]
    pub strategy: Strategy,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    #[command(flatten)]
    pub generator: GeneratorArgs,
}

/// Opens the store, creating it first when init flags are given.
pub fn open_or_init(args: &ServeArgs) -> Result<App> {
    let (store, session) = if Store::exists(&args.store) {
        if args.seeds.is_some() || args.synthetic {
            log::warn!(
                "store {} exists; ignoring initialization flags",
                args.store.display()
            );
        }
        Store::open(&args.store)?
    } else {
        let pipeline = args.pipeline.config(args.strategy);
        let (project, seeds) = if args.synthetic {
            let gcfg = args.generator.config()?;
            let seeds = Generator::new(gcfg.clone())?.initial_seeds(pipeline.seeds_per_class)?;
            (
                Project {
                    pipeline,
                    generator: Some(gcfg),
                    vectors: None,
                    vector_dim: None,
                },
                seeds,
            )
        } else if let Some(path) = &args.seeds {
            let Some(vectors) = &args.vectors else {
                bail!("a store created from --seeds needs --vectors");
            };
            let vectors = vectors
                .canonicalize()
                .with_context(|| format!("resolving {}", vectors.display()))?;
            (
                Project {
                    pipeline,
                    generator: None,
                    vectors: Some(vectors),
                    vector_dim: args.dim,
                },
                load_corpus(path)?,
            )
        } else {
            bail!(
                "no store at {}; pass --seeds or --synthetic to create one",
                args.store.display()
            );
        };
        Store::init(&args.store, &project, &seeds)?
    };
    Ok(App { session, store })
}

pub fn serve(args: &ServeArgs) -> Result<()> {
    let app = open_or_init(args)?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(server::serve(app, args.addr))
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Detect(a) => detect(a),
        Command::Bench(a) => bench(a).map(|_| ()),
        Command::Metrics(a) => metrics(a).map(|_| ()),
        Command::Simulate(a) => simulate(a).map(|_| ()),
        Command::Split(a) => split(a).map(|_| ()),
        Command::Serve(a) => serve(a),
    }
}
