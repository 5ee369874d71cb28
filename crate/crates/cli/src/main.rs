//! `auglm` command-line interface.
//!
//! Each stage reads and writes a working directory of fixed-name artifact
//! files; `config.json` travels with the artifacts and accumulates the
//! settings of every stage.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use auglm::embed::{save_embeddings, EmbeddingProvider, HashEmbedder};
use auglm::gnn::{self, read_predictions_jsonl, top_i_candidates, GnnTrainConfig, SageModel};
use auglm::graph::Split;
use auglm::lm::{LanguageModel, RemoteClient, RemoteConfig, ToyLm};
use auglm::pipeline::{self as pl, Artifacts, Dataset, RunConfig};
use auglm::ppr::{PprCache, PprMethod};
use auglm::retriever::RetrieverState;
use auglm::templater::{RetrievalMode, TemplateKind};
use auglm::{ingest, Error, TextAttributedGraph};
use clap::{Args, Parser, Subcommand};

const ENDPOINT_ENV: &str = "AUGLM_LM_ENDPOINT";
const TRAIN_REPORT_FILE: &str = "train_report.json";

#[derive(Parser)]
#[command(name = "auglm", version, about = "Graph-augmented instruction data and retriever training")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Read JSONL nodes/edges/labels into a graph directory.
    Ingest {
        #[arg(long)]
        nodes: PathBuf,
        #[arg(long)]
        edges: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// Hyperparameter preset: cora, pubmed, arxiv or products.
        #[arg(long)]
        preset: Option<Dataset>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic labeled dump in the JSONL interchange format.
    Synth {
        #[arg(long, default_value_t = 300)]
        nodes: usize,
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Embed node texts into `node_embeddings.emb`.
    Embed {
        #[arg(long)]
        graph: PathBuf,
        #[command(flatten)]
        embedder: EmbedderArgs,
        /// Defaults to the graph directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Precompute top-K PPR neighbors of every node.
    Ppr {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        k: Option<usize>,
        /// Use local push instead of power iteration.
        #[arg(long)]
        push: bool,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the GraphSAGE classifier and write predictions with candidates.
    TrainGnn {
        #[arg(long)]
        graph: PathBuf,
        /// Defaults to the graph directory's node_embeddings.emb.
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        hidden: Option<usize>,
        #[arg(long)]
        layers: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        weight_decay: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Candidate labels kept per node.
        #[arg(long)]
        i: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Select prototypes and build the retrieval corpus.
    Prototypes {
        #[arg(long)]
        graph: PathBuf,
        /// Directory written by train-gnn.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        retriever_dim: Option<usize>,
        #[command(flatten)]
        embedder: EmbedderArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render instruction examples for one split.
    EmitDataset {
        /// Defaults to the artifacts directory.
        #[arg(long)]
        graph: Option<PathBuf>,
        #[arg(long)]
        artifacts: PathBuf,
        #[command(flatten)]
        render: RenderArgs,
        /// Candidate labels per node, recomputed from the stored predictions.
        #[arg(long)]
        i: Option<usize>,
        #[arg(long, default_value = "train")]
        split: Split,
        #[arg(long)]
        out: PathBuf,
    },
    /// Joint LM / retriever training loop.
    TrainRetriever {
        #[arg(long)]
        artifacts: PathBuf,
        #[command(flatten)]
        lm: LmArgs,
        #[command(flatten)]
        render: RenderArgs,
        #[arg(long)]
        m: Option<usize>,
        /// Retriever learning rate.
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        lm_lr: Option<f64>,
        #[arg(long)]
        temperature: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Check state digests around every update.
        #[arg(long)]
        verify_stop_gradient: bool,
    },
    /// Exact-match evaluation on a split.
    Evaluate {
        #[arg(long)]
        artifacts: PathBuf,
        #[command(flatten)]
        lm: LmArgs,
        #[command(flatten)]
        render: RenderArgs,
        #[arg(long, default_value = "test")]
        split: Split,
        /// Free-form generation instead of choosing among the candidates.
        #[arg(long)]
        unconstrained: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mix emitted datasets into one shuffled, source-tagged file.
    Joint {
        #[arg(long, num_args = 2.., required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct EmbedderArgs {
    /// `hash` or the base URL of an auglm/1 service.
    #[arg(long, default_value = "hash")]
    embedder: String,
    #[arg(long, default_value_t = HashEmbedder::DEFAULT_DIM)]
    dim: usize,
    #[arg(long, default_value_t = 0)]
    embed_seed: u64,
}

/// Prompt settings; unset flags keep the artifact directory's config.
#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    template: Option<TemplateKind>,
    #[arg(long)]
    mode: Option<RetrievalMode>,
    /// Titles taken from the retrieved prototype document.
    #[arg(long)]
    k_sem: Option<usize>,
}

impl RenderArgs {
    fn apply(&self, config: &mut RunConfig) {
        config.template = self.template.unwrap_or(config.template);
        config.mode = self.mode.unwrap_or(config.mode);
        config.k_sem = self.k_sem.unwrap_or(config.k_sem);
    }
}

#[derive(Args)]
struct LmArgs {
    /// `toy` or the base URL of an auglm/1 service.
    #[arg(long, default_value = "toy")]
    lm: String,
    #[arg(long, default_value_t = 3)]
    retries: usize,
}

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Error::Invalid(msg.into()).into()
}

fn embedder(args: &EmbedderArgs) -> Result<Box<dyn EmbeddingProvider>> {
    if args.embedder == "hash" {
        Ok(Box::new(HashEmbedder::new(args.dim, args.embed_seed)?))
    } else {
        let client = RemoteClient::connect(RemoteConfig::new(&args.embedder))
            .with_context(|| format!("connecting to embedder {}", args.embedder))?;
        Ok(Box::new(client))
    }
}

fn language_model(args: &LmArgs) -> Result<Box<dyn LanguageModel>> {
    let spec = std::env::var(ENDPOINT_ENV)
        .ok()
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| args.lm.clone());
    if spec == "toy" {
        return Ok(Box::new(ToyLm));
    }
    let mut cfg = RemoteConfig::new(&spec);
    cfg.retries = args.retries;
    let client = RemoteClient::connect(cfg).with_context(|| format!("connecting to LM service {spec}"))?;
    log::info!("LM service {spec}: model {}", client.info().model);
    Ok(Box::new(client))
}

fn config_in(dir: &Path, preset: Option<Dataset>) -> Result<RunConfig> {
    if dir.join(pl::CONFIG_FILE).exists() {
        Ok(pl::load_config(dir)?)
    } else {
        Ok(preset.map(RunConfig::for_dataset).unwrap_or_default())
    }
}

fn save_config(dir: &Path, config: &RunConfig) -> Result<()> {
    config.validate()?;
    let path = dir.join(pl::CONFIG_FILE);
    fs::write(&path, serde_json::to_string_pretty(config)?).with_context(|| format!("writing {}", path.display()))
}

fn load_graph(dir: &Path) -> Result<TextAttributedGraph> {
    let path = dir.join(pl::GRAPH_FILE);
    TextAttributedGraph::load(&path).with_context(|| format!("loading graph {}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Copies the named files that exist in `from` into `to`.
fn carry(from: &Path, to: &Path, names: &[&str]) -> Result<()> {
    if same_dir(from, to) {
        return Ok(());
    }
    for name in names {
        let src = from.join(name);
        if src.exists() {
            fs::copy(&src, to.join(name)).with_context(|| format!("copying {}", src.display()))?;
        }
    }
    Ok(())
}

fn same_dir(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(x), Ok(y)) => x == y,
        _ => a == b,
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest {
            nodes,
            edges,
            labels,
            preset,
            out,
        } => {
            let graph = ingest(&nodes, &edges, &labels)?;
            create_dir(&out)?;
            graph.save(&out.join(pl::GRAPH_FILE))?;
            save_config(&out, &config_in(&out, preset)?)?;
            println!("{}", serde_json::to_string(&graph.stats())?);
        }
        Command::Synth {
            nodes,
            classes,
            seed,
            out,
        } => {
            let cfg = auglm::synth::SynthConfig {
                n_nodes: nodes,
                n_classes: classes,
                seed,
                ..Default::default()
            };
            let graph = auglm::synth::synthetic_tag(&cfg)?;
            create_dir(&out)?;
            graph.write_jsonl(&out)?;
            println!("{}", serde_json::to_string(&graph.stats())?);
        }
        Command::Embed { graph, embedder: e, out } => {
            let g = load_graph(&graph)?;
            let provider = embedder(&e)?;
            let m = provider.embed(&pl::node_embedding_texts(&g))?;
            let out = out.unwrap_or_else(|| graph.join(pl::NODE_EMBEDDINGS_FILE));
            save_embeddings(&m, &out)?;
            println!("{} x {} embeddings -> {}", m.rows(), m.dim(), out.display());
        }
        Command::Ppr {
            graph,
            alpha,
            k,
            push,
            epsilon,
            out,
        } => {
            let g = load_graph(&graph)?;
            let mut config = config_in(&graph, None)?;
            config.alpha = alpha.unwrap_or(config.alpha);
            config.k = k.unwrap_or(config.k);
            config.push_epsilon = epsilon.unwrap_or(config.push_epsilon);
            if push {
                config.ppr_method = PprMethod::Push;
            }
            config.validate()?;
            let cache = PprCache::build(&g, pl::ppr_cache_width(&config), &config.ppr_params()?, config.ppr_method)?;
            create_dir(&out)?;
            carry(&graph, &out, &[pl::GRAPH_FILE, pl::NODE_EMBEDDINGS_FILE])?;
            cache.save(&out.join(pl::PPR_FILE))?;
            save_config(&out, &config)?;
            println!("PPR top-{} for {} nodes -> {}", config.k, g.num_nodes(), out.display());
        }
        Command::TrainGnn {
            graph,
            embeddings,
            hidden,
            layers,
            epochs,
            lr,
            weight_decay,
            seed,
            i,
            out,
        } => {
            let g = load_graph(&graph)?;
            let emb_path = embeddings.unwrap_or_else(|| graph.join(pl::NODE_EMBEDDINGS_FILE));
            let x = auglm::embed::load_embeddings(&emb_path)
                .with_context(|| format!("loading embeddings {}", emb_path.display()))?;
            let mut config = config_in(&graph, None)?;
            let gc = &mut config.gnn;
            gc.hidden = hidden.unwrap_or(gc.hidden);
            gc.layers = layers.unwrap_or(gc.layers);
            gc.epochs = epochs.unwrap_or(gc.epochs);
            gc.lr = lr.unwrap_or(gc.lr);
            gc.weight_decay = weight_decay.unwrap_or(gc.weight_decay);
            config.seed = seed.unwrap_or(config.seed);
            config.i = i.unwrap_or(config.i);
            config.validate()?;

            let model = SageModel::with_layout(x.dim(), config.gnn.hidden, config.gnn.layers, g.num_classes(), config.seed)?;
            let train_cfg = GnnTrainConfig {
                lr: config.gnn.lr,
                epochs: config.gnn.epochs,
                weight_decay: config.gnn.weight_decay,
            };
            let (model, trace) = gnn::train(model, &g, &x, &train_cfg)?;
            let preds = model.forward(&g, &x)?;
            let candidates = top_i_candidates(&preds, config.i)?;

            create_dir(&out)?;
            carry(&graph, &out, &[pl::GRAPH_FILE, pl::PPR_FILE])?;
            model.save(&out.join(pl::MODEL_FILE))?;
            gnn::write_predictions_jsonl(&out.join(pl::PREDICTIONS_FILE), &g, &preds, &candidates)?;
            save_embeddings(&x, &out.join(pl::NODE_EMBEDDINGS_FILE))?;
            save_config(&out, &config)?;
            let targets = gnn::training_targets(&g);
            let valid: Vec<(usize, usize)> = g
                .labeled_nodes(Split::Valid)
                .into_iter()
                .map(|v| (v, g.label(v).expect("labeled")))
                .collect();
            println!(
                "loss {:.4} -> {:.4}; train acc {:.4}; valid acc {:.4}; candidate hit-rate (valid) {:.4}",
                trace.first().copied().unwrap_or(f64::NAN),
                trace.last().copied().unwrap_or(f64::NAN),
                preds.accuracy(&targets),
                preds.accuracy(&valid),
                candidates.hit_rate(&valid)
            );
        }
        Command::Prototypes {
            graph,
            model,
            n,
            k,
            retriever_dim,
            embedder: e,
            out,
        } => {
            let g = load_graph(&graph)?;
            let mut config = config_in(&model, None)?;
            config.n_prototypes = n.unwrap_or(config.n_prototypes);
            config.k = k.unwrap_or(config.k);
            config.retriever_dim = retriever_dim.unwrap_or(config.retriever_dim);
            config.validate()?;

            let ppr_path = [&graph, &model]
                .iter()
                .map(|d| d.join(pl::PPR_FILE))
                .find(|p| p.exists())
                .ok_or_else(|| invalid(format!("no {} in {} (run `auglm ppr` first)", pl::PPR_FILE, graph.display())))?;
            let ppr = PprCache::load(&ppr_path)?;
            if ppr.width() < pl::ppr_cache_width(&config) {
                return Err(invalid(format!(
                    "PPR cache holds {} neighbors, k = {} needs {}",
                    ppr.width() - 1,
                    config.k,
                    config.k
                )));
            }
            let sage = SageModel::load(&model.join(pl::MODEL_FILE))?;
            let (predictions, candidates) = read_predictions_jsonl(&model.join(pl::PREDICTIONS_FILE), &g)?;
            let x = pl::load_node_embeddings(&model)?;
            let provider = embedder(&e)?;
            let prototypes = gnn::select_prototypes(&predictions, config.n_prototypes)?;
            let corpus = gnn::build_prototype_corpus(&prototypes, &ppr, &g, config.k, &config.title_field, provider.as_ref())?;
            if corpus.dim() != x.dim() {
                return Err(invalid(format!(
                    "embedder width {} differs from node embedding width {}",
                    corpus.dim(),
                    x.dim()
                )));
            }
            let retriever = RetrieverState::new(x.dim(), config.retriever_dim, config.seed ^ 0x5eed_0f_7e7e)?;
            let artifacts = Artifacts {
                model: sage,
                predictions,
                prototypes,
                candidates,
                ppr,
                corpus,
                retriever,
            };
            create_dir(&out)?;
            carry(&graph, &out, &[pl::GRAPH_FILE])?;
            artifacts.save(&out, &g, &x, &config)?;
            println!(
                "{} prototypes over {} classes -> {}",
                artifacts.prototypes.len(),
                g.num_classes(),
                out.display()
            );
        }
        Command::EmitDataset {
            graph,
            artifacts,
            render,
            i,
            split,
            out,
        } => {
            let g = load_graph(graph.as_deref().unwrap_or(&artifacts))?;
            let mut a = Artifacts::load(&artifacts, &g)?;
            let x = pl::load_node_embeddings(&artifacts)?;
            let mut config = pl::load_config(&artifacts)?;
            render.apply(&mut config);
            if let Some(i) = i {
                config.i = i;
                a.candidates = top_i_candidates(&a.predictions, i)?;
            }
            config.validate()?;
            let lines = pl::emit_dataset(&g, &x, &a, &config, split)?;
            pl::write_dataset(&out, &lines)?;
            println!("{} {} examples -> {}", lines.len(), split.as_str(), out.display());
        }
        Command::TrainRetriever {
            artifacts,
            lm,
            render,
            m,
            lr,
            lm_lr,
            temperature,
            epochs,
            seed,
            verify_stop_gradient,
        } => {
            let g = load_graph(&artifacts)?;
            let mut a = Artifacts::load(&artifacts, &g)?;
            let x = pl::load_node_embeddings(&artifacts)?;
            let mut config = pl::load_config(&artifacts)?;
            render.apply(&mut config);
            config.m = m.unwrap_or(config.m);
            config.retriever_lr = lr.unwrap_or(config.retriever_lr);
            config.lm_lr = lm_lr.unwrap_or(config.lm_lr);
            config.temperature = temperature.unwrap_or(config.temperature);
            config.epochs = epochs.unwrap_or(config.epochs);
            config.seed = seed.unwrap_or(config.seed);
            config.verify_stop_gradient |= verify_stop_gradient;
            config.validate()?;
            let mut model = language_model(&lm)?;
            let report = pl::train_loop(&g, &x, &mut a, &config, model.as_mut())?;
            a.retriever.save(&artifacts.join(pl::RETRIEVER_FILE))?;
            save_config(&artifacts, &config)?;
            write_json(&artifacts.join(TRAIN_REPORT_FILE), &report)?;
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            let kl = &report.retriever_kl;
            if kl.is_empty() {
                println!("{} steps; LM NLL {:.4}; no retriever updates", report.steps, mean(&report.lm_nll));
            } else {
                let q = (kl.len() / 4).max(1);
                println!(
                    "{} steps; LM NLL {:.4}; retriever KL first quarter {:.4} -> last quarter {:.4}",
                    report.steps,
                    mean(&report.lm_nll),
                    mean(&kl[..q]),
                    mean(&kl[kl.len() - q..])
                );
            }
        }
        Command::Evaluate {
            artifacts,
            lm,
            render,
            split,
            unconstrained,
            out,
        } => {
            let g = load_graph(&artifacts)?;
            let a = Artifacts::load(&artifacts, &g)?;
            let x = pl::load_node_embeddings(&artifacts)?;
            let mut config = pl::load_config(&artifacts)?;
            render.apply(&mut config);
            config.constrained_eval = !unconstrained;
            let model = language_model(&lm)?;
            let report = pl::evaluate(&g, &x, &a, &config, model.as_ref(), split)?;
            if let Some(out) = out {
                write_json(&out, &report)?;
            }
            println!(
                "{}: accuracy {:.4} ({}/{}), candidate hit-rate {:.4}",
                split.as_str(),
                report.accuracy,
                report.n_correct,
                report.n_evaluated,
                report.candidate_hit_rate
            );
        }
        Command::Joint { inputs, seed, out } => {
            let mut sets = Vec::with_capacity(inputs.len());
            for path in &inputs {
                let name = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| path.display().to_string());
                sets.push((name, pl::read_dataset(path)?));
            }
            let mixed = pl::mix_joint(&sets, seed)?;
            pl::write_dataset(&out, &mixed)?;
            println!("{} lines from {} datasets -> {}", mixed.len(), sets.len(), out.display());
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(e) if e.is_validation() => 1,
        Some(_) => 2,
        None => match err.chain().find_map(|e| e.downcast_ref::<std::io::Error>()) {
            Some(e) if e.kind() == std::io::ErrorKind::NotFound => 1,
            _ => 2,
        },
    }
}

/// The error chain joined by ": ", skipping causes already quoted by the
/// message above them.
fn describe(err: &anyhow::Error) -> String {
    let mut out = err.to_string();
    let mut last = out.clone();
    for cause in err.chain().skip(1) {
        let msg = cause.to_string();
        if !last.contains(&msg) {
            out.push_str(": ");
            out.push_str(&msg);
        }
        last = msg;
    }
    out
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
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
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
