//! End-to-end run: ingest, RCA, labels, networks and reports written to one
//! output directory.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::assist::{AssistMatrix, SectorFilter};
use crate::config::{ConfigError, RunConfig};
use crate::density::{country_report, top_specializations, write_report, write_top_specializations, DensityError};
use crate::ingest::{align, load_panel_from_reader, IngestError, Layer, Panel, Taxonomy};
use crate::network::{
    build_progression_detailed, derive_seed, node_summary, render_graph, write_atomic, write_heatmap,
    write_node_summary, GraphFormat, NetworkError, ProgressionConfig, ProgressionNetwork, YearPair,
};
use crate::nullmodel::{BicmOptions, NullModelError, ValidationOptions, ValidationResult};
use crate::rca::{compute_rca_with, label_specializations, RcaError, RcaOptions, SpecLabel, SpecMatrix};
use crate::scalar::Value;

/// Files of the bundled synthetic dataset, addressable as `demo:<name>`.
pub const DEMO_FILES: [(&str, &str); 4] = [
    ("ai.csv", include_str!("../data/demo/ai.csv")),
    ("goods.csv", include_str!("../data/demo/goods.csv")),
    ("services.csv", include_str!("../data/demo/services.csv")),
    ("taxonomy.csv", include_str!("../data/demo/taxonomy.csv")),
];

#[derive(Error, Debug)]
pub enum PipelineError {
    #[error("{0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Convergence(String),
}

impl PipelineError {
    /// Stable machine-readable class name.
    pub fn class(&self) -> &'static str {
        match self {
            PipelineError::Config(_) => "config",
            PipelineError::Io { .. } => "io",
            PipelineError::Data(_) => "data",
            PipelineError::Convergence(_) => "convergence",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Io { .. } => 3,
            PipelineError::Data(_) => 4,
            PipelineError::Convergence(_) => 5,
        }
    }

    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        PipelineError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

impl From<ConfigError> for PipelineError {
    fn from(e: ConfigError) -> Self {
        PipelineError::Config(e.to_string())
    }
}

impl From<IngestError> for PipelineError {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::Io { path, source } => PipelineError::Io { path, source },
            other => PipelineError::Data(other.to_string()),
        }
    }
}

impl From<RcaError> for PipelineError {
    fn from(e: RcaError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

impl From<DensityError> for PipelineError {
    fn from(e: DensityError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

impl From<NullModelError> for PipelineError {
    fn from(e: NullModelError) -> Self {
        match e {
            NullModelError::IterationLimit { .. } => PipelineError::Convergence(e.to_string()),
            NullModelError::NoSamples | NullModelError::BadAlpha(_) => PipelineError::Config(e.to_string()),
            other => PipelineError::Data(other.to_string()),
        }
    }
}

impl From<crate::assist::AssistError> for PipelineError {
    fn from(e: crate::assist::AssistError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

impl From<NetworkError> for PipelineError {
    fn from(e: NetworkError) -> Self {
        match e {
            NetworkError::Io { path, source } => PipelineError::Io { path, source },
            NetworkError::NullModel { year, source } => match PipelineError::from(source) {
                PipelineError::Convergence(m) => PipelineError::Convergence(format!("year {year}: {m}")),
                PipelineError::Data(m) => PipelineError::Data(format!("year {year}: {m}")),
                other => other,
            },
            other => PipelineError::Data(other.to_string()),
        }
    }
}

/// Opens a file path or a bundled `demo:<name>` resource.
pub fn open_input(location: &str) -> Result<Box<dyn Read>, PipelineError> {
    if let Some(name) = location.strip_prefix("demo:") {
        let (_, text) = DEMO_FILES.iter().find(|(n, _)| *n == name).ok_or_else(|| {
            PipelineError::io(location, std::io::Error::new(std::io::ErrorKind::NotFound, "no such bundled file"))
        })?;
        return Ok(Box::new(text.as_bytes()));
    }
    let file = std::fs::File::open(location).map_err(|e| PipelineError::io(location, e))?;
    Ok(Box::new(std::io::BufReader::new(file)))
}

/// Bundled AI taxonomy merged with an optional extra one.
pub fn load_taxonomy(extra: Option<&str>) -> Result<Taxonomy, PipelineError> {
    let base = Taxonomy::default_ai();
    match extra {
        None => Ok(base),
        Some(loc) => {
            let other = Taxonomy::from_reader(open_input(loc)?)?;
            Ok(base.merge(&other)?)
        }
    }
}

/// Loads the configured layers onto common axes, dropping sectors that are
/// never observed.
pub fn load_universal_panel(cfg: &RunConfig, taxonomy: &Taxonomy) -> Result<Panel<f64>, PipelineError> {
    let mut panels = Vec::new();
    for (layer, loc) in [
        (Layer::AI, &cfg.ai),
        (Layer::Goods, &cfg.goods),
        (Layer::Services, &cfg.services),
    ] {
        if let Some(loc) = loc {
            let panel = load_panel_from_reader(open_input(loc)?, layer, taxonomy)
                .map_err(|e| PipelineError::Data(format!("{loc}: {e}")))?;
            panels.push(panel);
        }
    }
    let universal = if panels.len() == 1 {
        panels.pop().unwrap()
    } else {
        align(&panels)?
    };
    Ok(universal.without_unobserved_sectors())
}

pub fn progression_config(cfg: &RunConfig, seed: u64) -> ProgressionConfig {
    ProgressionConfig {
        null: ValidationOptions {
            n_samples: cfg.samples,
            alpha: cfg.alpha,
            seed,
            fdr: cfg.fdr,
        },
        bicm: BicmOptions::default(),
        rca: RcaOptions {
            min_layer_total: cfg.min_layer_total,
        },
        min_validations: cfg.min_validations,
        include_self_links: cfg.self_links,
        weights: cfg.weights,
    }
}

fn csv_to_vec(f: impl FnOnce(&mut Vec<u8>) -> csv::Result<()>) -> Vec<u8> {
    let mut buf = Vec::new();
    f(&mut buf).expect("writing CSV to memory");
    buf
}

pub fn write_rca_csv<T: Value, W: Write>(spec: &SpecMatrix<T>, writer: W) -> csv::Result<()> {
    let mut w = crate::network::csv_writer(writer);
    w.write_record(["country", "layer", "code", "rca", "m"])?;
    for (c, country) in spec.countries.iter().enumerate() {
        for (x, s) in spec.sectors.iter().enumerate() {
            w.write_record([
                country.as_str(),
                s.layer.as_str(),
                &s.code,
                &spec.rca(c, x).to_f64_lossy().to_string(),
                if spec.is_active(c, x) { "1" } else { "0" },
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_labels_csv<T: Value, W: Write>(labels: &[SpecLabel<T>], writer: W) -> csv::Result<()> {
    let mut w = crate::network::csv_writer(writer);
    w.write_record(["country", "layer", "code", "label", "early_avg", "late_avg"])?;
    for l in labels {
        w.write_record([
            l.country.as_str(),
            l.sector.layer.as_str(),
            &l.sector.code,
            l.label.as_str(),
            &l.early_avg_rca.to_f64_lossy().to_string(),
            &l.late_avg_rca.to_f64_lossy().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Dense sources × targets matrix; rows of sources nobody specializes in
/// hold the token `undefined`.
pub fn write_assist_csv<T: Value, W: Write>(b: &AssistMatrix<T>, writer: W) -> csv::Result<()> {
    let mut w = crate::network::csv_writer(writer);
    let mut header = vec!["source".to_string()];
    header.extend(b.targets.iter().map(|s| s.id()));
    w.write_record(&header)?;
    for (i, s) in b.sources.iter().enumerate() {
        let mut row = vec![s.id()];
        for j in 0..b.n_targets() {
            row.push(b.get(i, j).map_or("undefined".to_string(), |v| v.to_f64_lossy().to_string()));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// One row per tested link; `year` prepends a source-year column.
pub fn write_validation_csv<T: Value, W: Write>(
    rows: &[(Option<i32>, &ValidationResult<T>)],
    writer: W,
) -> csv::Result<()> {
    let mut w = crate::network::csv_writer(writer);
    let with_year = rows.first().is_some_and(|r| r.0.is_some());
    let mut header = vec!["source_layer", "source", "target_layer", "target", "observed_b", "p_value", "validated"];
    if with_year {
        header.insert(0, "source_year");
    }
    w.write_record(&header)?;
    for (year, r) in rows {
        let mut record = vec![
            r.source.layer.to_string(),
            r.source.code.clone(),
            r.target.layer.to_string(),
            r.target.code.clone(),
            r.observed_b.to_f64_lossy().to_string(),
            r.p_value.to_string(),
            r.validated.to_string(),
        ];
        if let Some(y) = year {
            record.insert(0, y.to_string());
        }
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

/// Collects output files relative to a staging directory.
struct Staging {
    root: PathBuf,
}

impl Staging {
    fn write(&self, rel: &str, contents: &[u8]) -> Result<(), PipelineError> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| PipelineError::io(parent, e))?;
        }
        write_atomic(&path, contents).map_err(|e| PipelineError::io(&path, e))
    }
}

fn staging_dir(output: &Path) -> PathBuf {
    let name = output.file_name().map_or("prognet-out".into(), |n| n.to_string_lossy().into_owned());
    let parent = output.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    parent.join(format!(".{name}.staging-{}", std::process::id()))
}

/// Runs every stage and moves the finished directory into place. Nothing is
/// left at `cfg.output` when a stage fails.
pub fn run_pipeline(cfg: &RunConfig) -> Result<PathBuf, PipelineError> {
    cfg.validate()?;
    let output = cfg.output.clone();
    if output.exists() {
        let empty = std::fs::read_dir(&output)
            .map_err(|e| PipelineError::io(&output, e))?
            .next()
            .is_none();
        if !empty {
            return Err(PipelineError::Config(format!(
                "output directory {} exists and is not empty",
                output.display()
            )));
        }
    }
    let staging = staging_dir(&output);
    if staging.exists() {
        std::fs::remove_dir_all(&staging).map_err(|e| PipelineError::io(&staging, e))?;
    }
    std::fs::create_dir_all(&staging).map_err(|e| PipelineError::io(&staging, e))?;

    let result = write_outputs(cfg, &Staging { root: staging.clone() });
    if let Err(e) = result {
        let _ = std::fs::remove_dir_all(&staging);
        return Err(e);
    }
    if output.exists() {
        std::fs::remove_dir(&output).map_err(|e| PipelineError::io(&output, e))?;
    }
    std::fs::rename(&staging, &output).map_err(|e| {
        let _ = std::fs::remove_dir_all(&staging);
        PipelineError::io(&output, e)
    })?;
    Ok(output)
}

fn write_network(
    out: &Staging,
    stem: &str,
    net: &ProgressionNetwork,
    pairs: &[YearPair<f64>],
) -> Result<(), PipelineError> {
    for format in [GraphFormat::Json, GraphFormat::GraphML, GraphFormat::Dot] {
        out.write(
            &format!("network/{stem}.{}", format.extension()),
            render_graph(net, format).as_bytes(),
        )?;
    }
    let rows: Vec<(Option<i32>, &ValidationResult<f64>)> = pairs
        .iter()
        .flat_map(|p| p.results.iter().map(move |r| (Some(p.source_year), r)))
        .collect();
    out.write(
        &format!("network/{stem}_validation.csv"),
        &csv_to_vec(|b| write_validation_csv(&rows, b)),
    )?;
    let summary = match node_summary(net) {
        Ok(rows) => rows,
        Err(NetworkError::EmptyNetwork) => Vec::new(),
        Err(e) => return Err(e.into()),
    };
    out.write(
        &format!("network/{stem}_nodes.csv"),
        &csv_to_vec(|b| write_node_summary(&summary, b)),
    )
}

fn write_outputs(cfg: &RunConfig, out: &Staging) -> Result<(), PipelineError> {
    let taxonomy = load_taxonomy(cfg.taxonomy.as_deref())?;
    let panel = load_universal_panel(cfg, &taxonomy)?;
    let rca_opts = RcaOptions {
        min_layer_total: cfg.min_layer_total,
    };

    for &year in &panel.years {
        let spec = compute_rca_with(&panel, year, &rca_opts)?;
        out.write(&format!("rca/rca_{year}.csv"), &csv_to_vec(|b| write_rca_csv(&spec, b)))?;
    }
    let labels = label_specializations(&panel, cfg.early.clone(), cfg.late.clone(), &rca_opts)?;
    out.write("labels.csv", &csv_to_vec(|b| write_labels_csv(&labels, b)))?;

    let ai = SectorFilter::ai();
    let trade = SectorFilter::layers([Layer::Goods, Layer::Services]);
    let (progression, pairs) =
        build_progression_detailed(&panel, cfg.delay, &ai, &trade, &progression_config(cfg, cfg.seed))?;
    write_network(out, "progression", &progression, &pairs)?;
    out.write(
        "network/heatmap.csv",
        &csv_to_vec(|b| write_heatmap(&progression, &ai, &trade, b)),
    )?;

    let (within, pairs) = build_progression_detailed(
        &panel,
        cfg.delay,
        &ai,
        &ai,
        &progression_config(cfg, derive_seed(cfg.seed, 1)),
    )?;
    write_network(out, "ai_progression", &within, &pairs)?;
    let (cooc, pairs) =
        build_progression_detailed(&panel, 0, &ai, &ai, &progression_config(cfg, derive_seed(cfg.seed, 2)))?;
    write_network(out, "ai_cooccurrence", &cooc, &pairs)?;

    let last = *panel.years.last().expect("panel has years");
    let m_final = compute_rca_with(&panel, last, &rca_opts)?;
    let countries: Vec<String> = if cfg.countries.is_empty() {
        panel.countries.clone()
    } else {
        cfg.countries.clone()
    };
    for country in &countries {
        let report = country_report(&m_final, &progression, &labels, country, cfg.top_k)?;
        out.write(&format!("reports/{country}.csv"), &csv_to_vec(|b| write_report(&report, b)))?;
        let top = top_specializations(&panel, country, last, cfg.top_k, &rca_opts)?;
        out.write(
            &format!("reports/{country}_top.csv"),
            &csv_to_vec(|b| write_top_specializations(&top, b)),
        )?;
    }

    out.write("config.txt", cfg.to_config_string().as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_classes() {
        let cases: Vec<(PipelineError, &str)> = vec![
            (ConfigError::Invalid("x".into()).into(), "config"),
            (
                NullModelError::IterationLimit {
                    iterations: 1,
                    residual: 1.0,
                }
                .into(),
                "convergence",
            ),
            (RcaError::YearNotInPanel(1).into(), "data"),
            (IngestError::EmptyPanel.into(), "data"),
        ];
        for (e, class) in cases {
            assert_eq!(e.class(), class);
        }
        let missing = open_input("/nonexistent/taxonomy.csv").err().unwrap();
        assert_eq!(missing.class(), "io");
        assert!(missing.to_string().contains("/nonexistent/taxonomy.csv"));
    }

    #[test]
    fn bundled_files_resolve() {
        let mut s = String::new();
        open_input("demo:taxonomy.csv").unwrap().read_to_string(&mut s).unwrap();
        assert!(s.starts_with("layer,raw_label,code,name"));
        assert!(open_input("demo:nothing.csv").is_err());
    }

    #[test]
    fn demo_panel_shape() {
        let cfg = RunConfig::demo();
        let tax = load_taxonomy(cfg.taxonomy.as_deref()).unwrap();
        let panel = load_universal_panel(&cfg, &tax).unwrap();
        assert_eq!(panel.n_countries(), 12);
        assert_eq!(panel.n_years(), 10);
        let count = |l: Layer| panel.sectors.iter().filter(|s| s.layer == l).count();
        assert_eq!((count(Layer::AI), count(Layer::Goods), count(Layer::Services)), (10, 20, 8));
    }
}
