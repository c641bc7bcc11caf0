use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::Serialize;

use hnc_core::bias_audit::{self, BiasReport, ProbeConfig};
use hnc_core::caption_gen::{GenerationConfig, GenerationReport, Generator, Realizer};
use hnc_core::constraints::AmbiguityLexicons;
use hnc_core::corpus_stats::{build_tables, load_attribute_clusters, load_tables, save_tables, AttributeClusters, LookupTables};
use hnc_core::dataset::{self, SplitScene, VocabularyMismatch, DEFAULT_SPLIT};
use hnc_core::foil_sampler::{SamplingRegime, Weighting};
use hnc_core::scene_graph::{read_scene_graphs, write_scene_graphs, ParseReport, SceneGraph};
use hnc_core::synth::{synthesize, SynthConfig};

#[derive(Parser)]
#[command(name = "hnc", version, about = "Hard negative captions from scene graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Count co-occurrences over scene graph files and save the lookup tables.
    BuildTables(BuildTablesArgs),
    /// Generate positive/negative caption pairs as JSON lines.
    Generate(GenerateArgs),
    /// Summarize a generated dataset.
    Stats(StatsArgs),
    /// Train the text-only bias probe on a generated dataset.
    Audit(AuditArgs),
    /// Write a synthetic scene graph corpus.
    Synth(SynthArgs),
}

#[derive(Args)]
struct BuildTablesArgs {
    /// Scene graph JSON file; repeatable.
    #[arg(long, required = true)]
    scenes: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

#[derive(Args)]
struct GenerateArgs {
    /// Generation config (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Lookup tables from build-tables; built from --scenes when omitted.
    #[arg(long)]
    tables: Option<PathBuf>,
    /// Scene graph JSON file, optionally prefixed with a split name
    /// (`train=train_sceneGraphs.json`); repeatable.
    #[arg(long, required = true)]
    scenes: Vec<String>,
    /// Output JSON-lines file. Statistics and the generation report are
    /// written next to it with `.stats.json` and `.report.json` appended.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Overrides `global_seed` from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// clean-strict, clean-relaxed, noisy-strict or noisy-relaxed.
    #[arg(long)]
    regime: Option<SamplingRegime>,
    /// matched or uniform.
    #[arg(long, value_parser = parse_weighting)]
    weighting: Option<Weighting>,
    #[arg(long)]
    max_pairs: Option<u32>,
    /// Attribute cluster file replacing the bundled one.
    #[arg(long)]
    clusters: Option<PathBuf>,
    /// Body-part class list replacing the bundled one.
    #[arg(long, requires = "background")]
    body_parts: Option<PathBuf>,
    /// Background class list replacing the bundled one.
    #[arg(long, requires = "body_parts")]
    background: Option<PathBuf>,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Also write the report as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AuditArgs {
    /// Dataset file; repeatable. Captions are grouped by regime and weighting.
    #[arg(long, required = true)]
    dataset: Vec<PathBuf>,
    /// JSON report; a text table is written to the same path plus `.txt`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    learning_rate: f64,
    #[arg(long, default_value_t = 256)]
    batch_size: usize,
    #[arg(long, default_value_t = 20)]
    top_k: usize,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 60)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn parse_weighting(s: &str) -> Result<Weighting, String> {
    match s {
        "matched" => Ok(Weighting::Matched),
        "uniform" => Ok(Weighting::Uniform),
        _ => Err(format!("invalid weighting {s:?}: expected matched or uniform")),
    }
}

/// Exit code 2 for bad invocations and inputs, 1 for everything else.
enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

fn require_file(path: &Path) -> Result<(), Failure> {
    if path.is_file() {
        Ok(())
    } else {
        Err(usage(anyhow!("input file {} does not exist", path.display())))
    }
}

/// `path` with `suffix` appended to its file name.
fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    path.with_file_name(name)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

/// Scenes of several files keyed by split; later files win on duplicate ids.
fn load_scenes(inputs: &[(String, PathBuf)]) -> Result<(Vec<(String, SceneGraph)>, ParseReport), Failure> {
    for (_, path) in inputs {
        require_file(path)?;
    }
    let mut report = ParseReport::default();
    let mut by_id: BTreeMap<String, (String, SceneGraph)> = BTreeMap::new();
    for (split, path) in inputs {
        let parsed = read_scene_graphs(path).map_err(|e| usage(anyhow!(e)))?;
        info!("{}: {} scenes", path.display(), parsed.scenes.len());
        report.merge(parsed.report);
        for (id, scene) in parsed.scenes {
            if by_id.insert(id.clone(), (split.clone(), scene)).is_some() {
                warn!("image {id} appears in more than one input; keeping the last");
            }
        }
    }
    for w in report.warnings.iter().take(20) {
        warn!("{w}");
    }
    Ok((by_id.into_values().collect(), report))
}

fn split_spec(raw: &str) -> (String, PathBuf) {
    match raw.split_once('=') {
        Some((split, path)) if !split.is_empty() && !split.contains(['/', '\\']) => (split.to_string(), PathBuf::from(path)),
        _ => (DEFAULT_SPLIT.to_string(), PathBuf::from(raw)),
    }
}

#[derive(Serialize)]
struct BuildReport {
    parse: ParseReport,
    classes: usize,
    attribute_object_pairs: usize,
    subject_predicate_pairs: usize,
    predicate_object_pairs: usize,
    triples: usize,
    predicates: usize,
    attributes: usize,
}

fn build_tables_cmd(args: BuildTablesArgs) -> Result<(), Failure> {
    let inputs: Vec<(String, PathBuf)> = args.scenes.into_iter().map(|p| (DEFAULT_SPLIT.to_string(), p)).collect();
    let (scenes, parse) = load_scenes(&inputs)?;
    let pool = dataset::worker_pool(args.workers).map_err(|e| anyhow!(e))?;
    let tables = pool.install(|| build_tables(scenes.iter().map(|(_, s)| s))).map_err(|e| usage(anyhow!(e)))?;
    save_tables(&tables, &args.out).map_err(|e| anyhow!(e))?;
    let report = BuildReport {
        parse,
        classes: tables.class_count_hist.len(),
        attribute_object_pairs: tables.attr_obj.len(),
        subject_predicate_pairs: tables.subj_pred.len(),
        predicate_object_pairs: tables.pred_obj.len(),
        triples: tables.triples.len(),
        predicates: tables.relation_freq.len(),
        attributes: tables.attribute_freq.len(),
    };
    write_json(&sidecar(&args.out, ".report.json"), &report)?;
    println!(
        "scenes {} objects {} relations {} -> {}",
        report.parse.scenes,
        report.parse.objects,
        report.parse.relations,
        args.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct GenerateReport<'a> {
    config: &'a GenerationConfig,
    parse: ParseReport,
    vocabulary_mismatch: VocabularyMismatch,
    records: u64,
    generation: GenerationReport,
}

fn generate_cmd(args: GenerateArgs) -> Result<(), Failure> {
    let mut config = match &args.config {
        Some(path) => {
            require_file(path)?;
            let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
            GenerationConfig::from_toml(&text).map_err(usage)?
        }
        None => GenerationConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.global_seed = seed;
    }
    if let Some(regime) = args.regime {
        config.regime = regime;
    }
    if let Some(weighting) = args.weighting {
        config.weighting = weighting;
    }
    if let Some(n) = args.max_pairs {
        config.max_pairs_per_type_per_image = n;
    }
    config.validate().map_err(usage)?;

    let inputs: Vec<(String, PathBuf)> = args.scenes.iter().map(|s| split_spec(s)).collect();
    let (scenes, parse) = load_scenes(&inputs)?;
    let pool = dataset::worker_pool(args.workers).map_err(|e| anyhow!(e))?;

    let tables = match &args.tables {
        Some(path) => {
            require_file(path)?;
            load_tables(path).map_err(usage)?
        }
        None if scenes.is_empty() => LookupTables::default(),
        None => pool
            .install(|| build_tables(scenes.iter().map(|(_, s)| s)))
            .map_err(|e| anyhow!(e))?,
    };
    let clusters = match &args.clusters {
        Some(path) => {
            require_file(path)?;
            load_attribute_clusters(path).map_err(usage)?
        }
        None => AttributeClusters::parse(hnc_core::assets::ATTRIBUTE_CLUSTERS).map_err(|e| anyhow!(e))?,
    };
    let lexicons = match (&args.body_parts, &args.background) {
        (Some(body), Some(background)) => {
            require_file(body)?;
            require_file(background)?;
            AmbiguityLexicons::load(body, background).map_err(usage)?
        }
        _ => AmbiguityLexicons::bundled(),
    };

    let mismatch = dataset::vocabulary_mismatch(&tables, scenes.iter().map(|(_, s)| s));
    if !mismatch.is_empty() {
        warn!(
            "corpus vocabulary missing from the tables: {} classes, {} attributes, {} predicates",
            mismatch.unknown_classes.len(),
            mismatch.unknown_attributes.len(),
            mismatch.unknown_predicates.len()
        );
    }

    let realizer = Realizer::bundled();
    let generator = Generator {
        tables: &tables,
        clusters: &clusters,
        lexicons: &lexicons,
        config: &config,
        realizer: &realizer,
    };
    let split_scenes: Vec<SplitScene<'_>> = scenes
        .iter()
        .map(|(split, scene)| SplitScene { split, scene })
        .collect();
    let file = File::create(&args.out).with_context(|| format!("cannot create {}", args.out.display()))?;
    let outcome = dataset::generate_dataset(&generator, &split_scenes, &pool, BufWriter::new(file))
        .with_context(|| format!("cannot write {}", args.out.display()))?;

    let read = dataset::read_dataset(BufReader::new(File::open(&args.out).context("cannot reopen output")?))
        .context("cannot reread output")?;
    let stats = dataset::stats(&read.records, read.malformed_lines);
    write_json(&sidecar(&args.out, ".stats.json"), &stats)?;
    let report = GenerateReport {
        config: &config,
        parse,
        vocabulary_mismatch: mismatch,
        records: outcome.records,
        generation: outcome.report,
    };
    write_json(&sidecar(&args.out, ".report.json"), &report)?;
    println!(
        "images {} pairs {} captions {} -> {}",
        report.generation.images,
        report.generation.pairs,
        outcome.records,
        args.out.display()
    );
    Ok(())
}

fn stats_cmd(args: StatsArgs) -> Result<(), Failure> {
    require_file(&args.dataset)?;
    let file = File::open(&args.dataset).with_context(|| format!("cannot open {}", args.dataset.display()))?;
    let read = dataset::read_dataset(BufReader::new(file))?;
    if read.malformed_lines > 0 {
        warn!("skipped {} malformed lines (first at {:?})", read.malformed_lines, read.malformed_examples);
    }
    let stats = dataset::stats(&read.records, read.malformed_lines);
    print!("{}", stats.render());
    if let Some(out) = &args.out {
        write_json(out, &stats)?;
    }
    Ok(())
}

fn audit_cmd(args: AuditArgs) -> Result<(), Failure> {
    for path in &args.dataset {
        require_file(path)?;
    }
    let mut groups: BTreeMap<String, Vec<bias_audit::LabeledCaption>> = BTreeMap::new();
    for path in &args.dataset {
        let read = dataset::read_dataset(BufReader::new(File::open(path)?))?;
        if read.malformed_lines > 0 {
            warn!("{}: skipped {} malformed lines", path.display(), read.malformed_lines);
        }
        for r in &read.records {
            let label = if r.weighting == Weighting::Matched.as_str() {
                r.regime.clone()
            } else {
                format!("{}/{}", r.regime, r.weighting)
            };
            groups.entry(label).or_default().push(r.to_labeled());
        }
    }
    if groups.is_empty() {
        return Err(anyhow!("no captions to audit").into());
    }
    let config = ProbeConfig {
        learning_rate: args.learning_rate,
        epochs: args.epochs,
        batch_size: args.batch_size,
        seed: args.seed,
    };
    let mut reports: Vec<(String, BiasReport)> = Vec::new();
    for (label, captions) in groups {
        let report = bias_audit::audit(&captions, &config, args.top_k).with_context(|| format!("audit of {label}"))?;
        info!("{label}: held-out accuracy {:.3}", report.probe_accuracy);
        reports.push((label, report));
    }
    let table = bias_audit::render_table(&reports);
    let by_label: BTreeMap<&str, &BiasReport> = reports.iter().map(|(l, r)| (l.as_str(), r)).collect();
    write_json(&args.out, &by_label)?;
    fs::write(sidecar(&args.out, ".txt"), &table).context("cannot write audit table")?;
    println!("{}", bias_audit::PROBE_NAME);
    print!("{table}");
    Ok(())
}

fn synth_cmd(args: SynthArgs) -> Result<(), Failure> {
    let scenes = synthesize(&SynthConfig {
        scenes: args.count,
        seed: args.seed,
        ..Default::default()
    });
    let mut out = BufWriter::new(File::create(&args.out).with_context(|| format!("cannot create {}", args.out.display()))?);
    out.write_all(&write_scene_graphs(&scenes)).context("cannot write scenes")?;
    out.flush().context("cannot write scenes")?;
    println!("{} scenes -> {}", scenes.len(), args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::BuildTables(a) => build_tables_cmd(a),
        Command::Generate(a) => generate_cmd(a),
        Command::Stats(a) => stats_cmd(a),
        Command::Audit(a) => audit_cmd(a),
        Command::Synth(a) => synth_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
