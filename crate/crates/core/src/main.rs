use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use prognet::assist::{assist, SectorFilter};
use prognet::config::RunConfig;
use prognet::density::{country_report, write_report};
use prognet::ingest::{load_panel_from_reader, write_panel, Layer};
use prognet::network::{build_progression, derive_seed, from_json, render_graph, write_atomic, GraphFormat};
use prognet::nullmodel::{fit_bicm_with, validate, BicmOptions};
use prognet::pipeline::{
    load_taxonomy, load_universal_panel, open_input, progression_config, run_pipeline, write_assist_csv,
    write_labels_csv, write_rca_csv, write_validation_csv, PipelineError,
};
use prognet::rca::{compute_rca_with, label_specializations, RcaOptions};

#[derive(Parser)]
#[command(name = "prognet", version, about = "Validated AI-to-trade progression networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Run configuration keys; each flag overrides the same key of `--config`.
#[derive(Args, Default)]
struct Keys {
    /// Flat `key = value` configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    ai: Option<String>,
    #[arg(long)]
    goods: Option<String>,
    #[arg(long)]
    services: Option<String>,
    #[arg(long)]
    taxonomy: Option<String>,
    #[arg(long)]
    delay: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    samples: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Early period, e.g. 2010-2014
    #[arg(long)]
    early: Option<String>,
    /// Late period, e.g. 2017-2019
    #[arg(long)]
    late: Option<String>,
    #[arg(long = "min-validations")]
    min_validations: Option<String>,
    /// `validated` or `all`
    #[arg(long)]
    weights: Option<String>,
    #[arg(long)]
    fdr: Option<String>,
    #[arg(long = "self-links")]
    self_links: Option<String>,
    #[arg(long = "min-layer-total")]
    min_layer_total: Option<String>,
    #[arg(long = "top-k")]
    top_k: Option<String>,
    /// Comma-separated ISO-3 codes
    #[arg(long)]
    countries: Option<String>,
}

impl Keys {
    fn resolve(&self, mut cfg: RunConfig) -> Result<RunConfig, PipelineError> {
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
            cfg.apply(&text)?;
        }
        let flags = [
            ("ai", &self.ai),
            ("goods", &self.goods),
            ("services", &self.services),
            ("taxonomy", &self.taxonomy),
            ("delay", &self.delay),
            ("alpha", &self.alpha),
            ("samples", &self.samples),
            ("seed", &self.seed),
            ("early", &self.early),
            ("late", &self.late),
            ("min-validations", &self.min_validations),
            ("weights", &self.weights),
            ("fdr", &self.fdr),
            ("self-links", &self.self_links),
            ("min-layer-total", &self.min_layer_total),
            ("top-k", &self.top_k),
            ("countries", &self.countries),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct Pair {
    /// Source year; defaults to the first panel year
    #[arg(long)]
    year: Option<i32>,
    #[arg(long = "source-layer", default_value = "AI")]
    source_layer: Layer,
    /// Comma-separated layers
    #[arg(long = "target-layers", value_delimiter = ',', default_value = "Goods,Services")]
    target_layers: Vec<Layer>,
}

#[derive(Subcommand)]
enum Command {
    /// Map a raw panel through the taxonomy and print it with canonical codes
    Ingest {
        #[arg(long)]
        input: String,
        #[arg(long)]
        layer: Layer,
        #[arg(long)]
        taxonomy: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// RCA and binary specialization of one year
    Rca {
        #[command(flatten)]
        keys: Keys,
        /// Defaults to the last panel year
        #[arg(long)]
        year: Option<i32>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Early/late specialization labels
    Labels {
        #[command(flatten)]
        keys: Keys,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Assist matrix of one year pair
    Assist {
        #[command(flatten)]
        keys: Keys,
        #[command(flatten)]
        pair: Pair,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Null-model validation of one year pair
    Validate {
        #[command(flatten)]
        keys: Keys,
        #[command(flatten)]
        pair: Pair,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Progression network aggregated over all year pairs
    Network {
        #[command(flatten)]
        keys: Keys,
        #[arg(long = "source-layer", default_value = "AI")]
        source_layer: Layer,
        #[arg(long = "target-layers", value_delimiter = ',', default_value = "Goods,Services")]
        target_layers: Vec<Layer>,
        /// json, graphml or dot
        #[arg(long, default_value = "json")]
        format: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Density-ranked recommendations for one country
    Report {
        #[command(flatten)]
        keys: Keys,
        #[arg(long)]
        country: String,
        /// Reuse a network JSON instead of rebuilding it
        #[arg(long)]
        network: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full pipeline into an output directory
    Run {
        #[command(flatten)]
        keys: Keys,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Full pipeline on the bundled synthetic dataset
    Demo {
        #[command(flatten)]
        keys: Keys,
        #[arg(long, default_value = "prognet-demo")]
        output: PathBuf,
    },
}

fn emit(out: &Option<PathBuf>, bytes: &[u8]) -> Result<(), PipelineError> {
    match out {
        Some(path) => write_atomic(path, bytes).map_err(|e| PipelineError::io(path, e)),
        None => std::io::stdout()
            .write_all(bytes)
            .map_err(|e| PipelineError::io("<stdout>", e)),
    }
}

fn to_bytes(f: impl FnOnce(&mut Vec<u8>) -> csv::Result<()>) -> Result<Vec<u8>, PipelineError> {
    let mut buf = Vec::new();
    f(&mut buf).map_err(|e| PipelineError::Data(e.to_string()))?;
    Ok(buf)
}

fn panel_for(cfg: &RunConfig) -> Result<prognet::Panel64, PipelineError> {
    if cfg.ai.is_none() && cfg.goods.is_none() && cfg.services.is_none() {
        return Err(PipelineError::Config("no input panel given (--ai, --goods or --services)".into()));
    }
    let taxonomy = load_taxonomy(cfg.taxonomy.as_deref())?;
    load_universal_panel(cfg, &taxonomy)
}

fn graph_format(s: &str) -> Result<GraphFormat, PipelineError> {
    match s.to_ascii_lowercase().as_str() {
        "json" => Ok(GraphFormat::Json),
        "graphml" => Ok(GraphFormat::GraphML),
        "dot" => Ok(GraphFormat::Dot),
        _ => Err(PipelineError::Config(format!("unknown graph format {s:?}"))),
    }
}

fn execute(command: Command) -> Result<(), PipelineError> {
    match command {
        Command::Ingest {
            input,
            layer,
            taxonomy,
            out,
        } => {
            let tax = load_taxonomy(taxonomy.as_deref())?;
            let panel = load_panel_from_reader(open_input(&input)?, layer, &tax)?;
            emit(&out, &to_bytes(|b| write_panel(&panel, layer, b))?)
        }
        Command::Rca { keys, year, out } => {
            let cfg = keys.resolve(RunConfig::default())?;
            let panel = panel_for(&cfg)?;
            let year = year.unwrap_or(*panel.years.last().unwrap());
            let opts = RcaOptions {
                min_layer_total: cfg.min_layer_total,
            };
            let spec = compute_rca_with(&panel, year, &opts)?;
            emit(&out, &to_bytes(|b| write_rca_csv(&spec, b))?)
        }
        Command::Labels { keys, out } => {
            let cfg = keys.resolve(RunConfig::default())?;
            let panel = panel_for(&cfg)?;
            let opts = RcaOptions {
                min_layer_total: cfg.min_layer_total,
            };
            let labels = label_specializations(&panel, cfg.early.clone(), cfg.late.clone(), &opts)?;
            emit(&out, &to_bytes(|b| write_labels_csv(&labels, b))?)
        }
        Command::Assist { keys, pair, out } => {
            let (_, (_, _, b)) = year_pair(&keys, &pair)?;
            emit(&out, &to_bytes(|w| write_assist_csv(&b, w))?)
        }
        Command::Validate { keys, pair, out } => {
            let (cfg, (spec_t, spec_td, b)) = year_pair(&keys, &pair)?;
            let fit_t = fit_bicm_with::<f64>(&spec_t.m, &BicmOptions::default())?;
            let pcfg = progression_config(&cfg, derive_seed(cfg.seed, b.source_year as u64));
            let results = if cfg.delay == 0 {
                validate(&b, &fit_t, &fit_t, &pcfg.null)?
            } else {
                let fit_td = fit_bicm_with::<f64>(&spec_td.m, &BicmOptions::default())?;
                validate(&b, &fit_t, &fit_td, &pcfg.null)?
            };
            let rows: Vec<_> = results.iter().map(|r| (None, r)).collect();
            emit(&out, &to_bytes(|w| write_validation_csv(&rows, w))?)
        }
        Command::Network {
            keys,
            source_layer,
            target_layers,
            format,
            out,
        } => {
            let cfg = keys.resolve(RunConfig::default())?;
            let format = graph_format(&format)?;
            let panel = panel_for(&cfg)?;
            let net = build_progression(
                &panel,
                cfg.delay,
                &SectorFilter::layers([source_layer]),
                &SectorFilter::layers(target_layers),
                &progression_config(&cfg, cfg.seed),
            )?;
            emit(&out, render_graph(&net, format).as_bytes())
        }
        Command::Report {
            keys,
            country,
            network,
            out,
        } => {
            let cfg = keys.resolve(RunConfig::default())?;
            let panel = panel_for(&cfg)?;
            let opts = RcaOptions {
                min_layer_total: cfg.min_layer_total,
            };
            let net = match network {
                Some(path) => {
                    let text = std::fs::read_to_string(&path).map_err(|e| PipelineError::io(&path, e))?;
                    from_json(&text)?
                }
                None => build_progression(
                    &panel,
                    cfg.delay,
                    &SectorFilter::ai(),
                    &SectorFilter::layers([Layer::Goods, Layer::Services]),
                    &progression_config(&cfg, cfg.seed),
                )?,
            };
            let labels = label_specializations(&panel, cfg.early.clone(), cfg.late.clone(), &opts)?;
            let last = *panel.years.last().unwrap();
            let m_final = compute_rca_with(&panel, last, &opts)?;
            let report = country_report(&m_final, &net, &labels, &country, cfg.top_k)?;
            emit(&out, &to_bytes(|b| write_report(&report, b))?)
        }
        Command::Run { keys, output } => {
            let mut cfg = keys.resolve(RunConfig::default())?;
            if let Some(o) = output {
                cfg.output = o;
            }
            let dir = run_pipeline(&cfg)?;
            println!("{}", dir.display());
            Ok(())
        }
        Command::Demo { keys, output } => {
            let mut cfg = keys.resolve(RunConfig::demo())?;
            cfg.output = output;
            let dir = run_pipeline(&cfg)?;
            println!("{}", dir.display());
            Ok(())
        }
    }
}

type PairData = (
    prognet::SpecMatrix64,
    prognet::SpecMatrix64,
    prognet::AssistMatrix64,
);

fn year_pair(keys: &Keys, pair: &Pair) -> Result<(RunConfig, PairData), PipelineError> {
    let cfg = keys.resolve(RunConfig::default())?;
    if cfg.delay < 0 {
        return Err(PipelineError::Config(format!("delay must be >= 0, got {}", cfg.delay)));
    }
    let panel = panel_for(&cfg)?;
    let year = pair.year.unwrap_or(panel.years[0]);
    let opts = RcaOptions {
        min_layer_total: cfg.min_layer_total,
    };
    let spec_t = compute_rca_with(&panel, year, &opts)?;
    let spec_td = compute_rca_with(&panel, year + cfg.delay, &opts)?;
    let b = assist(
        &spec_t,
        &spec_td,
        &SectorFilter::layers([pair.source_layer]),
        &SectorFilter::layers(pair.target_layers.iter().copied()),
    )?;
    Ok((cfg, (spec_t, spec_td, b)))
}

fn configure_threads() -> Result<(), PipelineError> {
    if let Ok(v) = std::env::var("PROGNET_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| PipelineError::Config(format!("PROGNET_THREADS must be a positive integer, got {v:?}")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match configure_threads().and_then(|_| execute(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.class());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
