//! Aggregation of validated assist links over all year pairs, node summaries
//! and graph exports.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assist::{assist, AssistError, AssistMatrix, SectorFilter};
use crate::ingest::{Layer, Panel, SectorRef};
use crate::nullmodel::{fit_bicm_with, validate, BicmFit, BicmOptions, NullModelError, ValidationOptions, ValidationResult};
use crate::rca::{compute_rca_with, RcaError, RcaOptions, SpecMatrix};
use crate::scalar::Value;

#[derive(Error, Debug)]
pub enum NetworkError {
    #[error("panel spans {years} years, delay {delay} needs at least {}", delay + 1)]
    InsufficientYears { years: usize, delay: i32 },
    #[error("network has no edges")]
    EmptyNetwork,
    #[error("unknown node id {0:?}")]
    UnknownNode(String),
    #[error(transparent)]
    Rca(#[from] RcaError),
    #[error(transparent)]
    Assist(#[from] AssistError),
    #[error("year {year}: {source}")]
    NullModel { year: i32, source: NullModelError },
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed network json: {0}")]
    Json(#[from] serde_json::Error),
}

/// How an edge weight averages the observed assist weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightMode {
    /// Mean over the year pairs where the link was validated.
    #[default]
    ValidatedOnly,
    /// Mean over every year pair where the link is defined.
    AllPairs,
}

#[derive(Debug, Clone)]
pub struct ProgressionConfig {
    pub null: ValidationOptions,
    pub bicm: BicmOptions,
    pub rca: RcaOptions<f64>,
    pub min_validations: usize,
    pub include_self_links: bool,
    pub weights: WeightMode,
}

impl Default for ProgressionConfig {
    fn default() -> Self {
        Self {
            null: ValidationOptions::default(),
            bicm: BicmOptions::default(),
            rca: RcaOptions::default(),
            min_validations: 1,
            include_self_links: false,
            weights: WeightMode::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub source: SectorRef,
    pub target: SectorRef,
    pub weight: f64,
    pub validation_count: usize,
    /// Source years of the pairs in which the link was validated.
    pub year_pairs: Vec<i32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProgressionNetwork {
    pub delay: i32,
    pub directed: bool,
    pub nodes: Vec<SectorRef>,
    pub edges: Vec<Edge>,
}

impl ProgressionNetwork {
    /// Validated edges pointing at `target`; both orientations when undirected.
    pub fn incoming<'a>(&'a self, target: &'a SectorRef) -> impl Iterator<Item = (&'a SectorRef, f64)> + 'a {
        self.edges.iter().filter_map(move |e| {
            if &e.target == target {
                Some((&e.source, e.weight))
            } else if !self.directed && &e.source == target {
                Some((&e.target, e.weight))
            } else {
                None
            }
        })
    }

    pub fn edge(&self, source: &SectorRef, target: &SectorRef) -> Option<&Edge> {
        let (a, b) = if !self.directed && source > target {
            (target, source)
        } else {
            (source, target)
        };
        self.edges.iter().find(|e| &e.source == a && &e.target == b)
    }
}

/// Observed assist matrix and validation outcome of one `(t, t + Δ)` pair.
#[derive(Debug, Clone)]
pub struct YearPair<T> {
    pub source_year: i32,
    pub assist: AssistMatrix<T>,
    pub results: Vec<ValidationResult<T>>,
}

/// Per-year-pair seed derived from the run seed.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(stream);
    rng.next_u64()
}

pub fn build_progression<T: Value>(
    panel: &Panel<T>,
    delay: i32,
    sources: &SectorFilter,
    targets: &SectorFilter,
    cfg: &ProgressionConfig,
) -> Result<ProgressionNetwork, NetworkError> {
    build_progression_detailed(panel, delay, sources, targets, cfg).map(|(net, _)| net)
}

/// Runs RCA, assist, BiCM fitting and validation for every year pair, then
/// aggregates. Also returns the per-pair results, ordered by source year.
pub fn build_progression_detailed<T: Value>(
    panel: &Panel<T>,
    delay: i32,
    sources: &SectorFilter,
    targets: &SectorFilter,
    cfg: &ProgressionConfig,
) -> Result<(ProgressionNetwork, Vec<YearPair<T>>), NetworkError> {
    let first = *panel.years.first().ok_or(NetworkError::InsufficientYears { years: 0, delay })?;
    let last = *panel.years.last().unwrap();
    let pairs: Vec<i32> = panel
        .years
        .iter()
        .copied()
        .filter(|&t| delay >= 0 && t + delay <= last && panel.year_index(t + delay).is_some())
        .collect();
    if pairs.is_empty() || last - first < delay {
        return Err(NetworkError::InsufficientYears {
            years: panel.n_years(),
            delay,
        });
    }

    let rca_opts = RcaOptions {
        min_layer_total: T::from_f64(cfg.rca.min_layer_total.to_f64_lossy()).unwrap_or(T::zero()),
    };
    let specs: Vec<SpecMatrix<T>> = panel
        .years
        .par_iter()
        .map(|&y| compute_rca_with(panel, y, &rca_opts))
        .collect::<Result<_, _>>()?;
    let fits: Vec<BicmFit<f64>> = specs
        .par_iter()
        .map(|s| {
            fit_bicm_with::<f64>(&s.m, &cfg.bicm).map_err(|source| NetworkError::NullModel { year: s.year, source })
        })
        .collect::<Result<_, _>>()?;

    let outcomes: Vec<YearPair<T>> = pairs
        .par_iter()
        .map(|&t| {
            let i = panel.year_index(t).unwrap();
            let j = panel.year_index(t + delay).unwrap();
            let observed = assist(&specs[i], &specs[j], sources, targets)?;
            let opts = ValidationOptions {
                seed: derive_seed(cfg.null.seed, t as u64),
                ..cfg.null
            };
            let results = validate(&observed, &fits[i], &fits[j], &opts)
                .map_err(|source| NetworkError::NullModel { year: t, source })?;
            Ok(YearPair {
                source_year: t,
                assist: observed,
                results,
            })
        })
        .collect::<Result<_, NetworkError>>()?;

    let net = aggregate(&outcomes, delay, cfg);
    Ok((net, outcomes))
}

#[derive(Default)]
struct Accumulator {
    validated_sum: f64,
    validated_years: Vec<i32>,
    all_sum: f64,
    all_n: usize,
}

/// Merges per-pair validation results into one time-independent network.
///
/// For `delay == 0` an unordered pair is validated in a year when every
/// tested orientation is validated; its weight that year is the mean over
/// the tested orientations.
pub fn aggregate<T: Value>(pairs: &[YearPair<T>], delay: i32, cfg: &ProgressionConfig) -> ProgressionNetwork {
    let directed = delay != 0;
    let mut acc: BTreeMap<(SectorRef, SectorRef), Accumulator> = BTreeMap::new();
    let mut nodes: Vec<SectorRef> = Vec::new();

    for pair in pairs {
        nodes.extend(pair.assist.sources.iter().cloned());
        nodes.extend(pair.assist.targets.iter().cloned());
        // (key) -> (weights, all validated)
        let mut per_year: BTreeMap<(SectorRef, SectorRef), (Vec<f64>, bool)> = BTreeMap::new();
        for r in &pair.results {
            if r.source == r.target && !cfg.include_self_links {
                continue;
            }
            let key = if !directed && r.source > r.target {
                (r.target.clone(), r.source.clone())
            } else {
                (r.source.clone(), r.target.clone())
            };
            let entry = per_year.entry(key).or_insert_with(|| (Vec::new(), true));
            entry.0.push(r.observed_b.to_f64_lossy());
            entry.1 &= r.validated;
        }
        for (key, (weights, validated)) in per_year {
            let w = weights.iter().sum::<f64>() / weights.len() as f64;
            let a = acc.entry(key).or_default();
            a.all_sum += w;
            a.all_n += 1;
            if validated {
                a.validated_sum += w;
                a.validated_years.push(pair.source_year);
            }
        }
    }

    nodes.sort();
    nodes.dedup();
    let min_count = cfg.min_validations.max(1);
    let edges = acc
        .into_iter()
        .filter(|(_, a)| a.validated_years.len() >= min_count)
        .map(|((source, target), a)| {
            let count = a.validated_years.len();
            let weight = match cfg.weights {
                WeightMode::ValidatedOnly => a.validated_sum / count as f64,
                WeightMode::AllPairs => a.all_sum / a.all_n as f64,
            };
            Edge {
                source,
                target,
                weight,
                validation_count: count,
                year_pairs: a.validated_years,
            }
        })
        .collect();
    ProgressionNetwork {
        delay,
        directed,
        nodes,
        edges,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeSummary {
    pub sector: SectorRef,
    pub in_degree: usize,
    pub out_degree: usize,
    /// in + out for directed networks, number of incident edges otherwise.
    pub degree: usize,
    pub strength: f64,
}

/// Degree and strength of every node, most connected first.
pub fn node_summary(net: &ProgressionNetwork) -> Result<Vec<NodeSummary>, NetworkError> {
    if net.edges.is_empty() {
        return Err(NetworkError::EmptyNetwork);
    }
    let mut table: BTreeMap<&SectorRef, NodeSummary> = net
        .nodes
        .iter()
        .map(|s| {
            (
                s,
                NodeSummary {
                    sector: s.clone(),
                    in_degree: 0,
                    out_degree: 0,
                    degree: 0,
                    strength: 0.0,
                },
            )
        })
        .collect();
    for e in &net.edges {
        for (node, outgoing) in [(&e.source, true), (&e.target, false)] {
            let row = table.entry(node).or_insert_with(|| NodeSummary {
                sector: node.clone(),
                in_degree: 0,
                out_degree: 0,
                degree: 0,
                strength: 0.0,
            });
            row.degree += 1;
            row.strength += e.weight;
            if !net.directed || outgoing {
                row.out_degree += 1;
            }
            if !net.directed || !outgoing {
                row.in_degree += 1;
            }
        }
    }
    let mut rows: Vec<NodeSummary> = table.into_values().collect();
    rows.sort_by(|a, b| b.degree.cmp(&a.degree).then_with(|| a.sector.cmp(&b.sector)));
    Ok(rows)
}

pub fn write_node_summary<W: Write>(rows: &[NodeSummary], writer: W) -> csv::Result<()> {
    let mut w = csv_writer(writer);
    w.write_record(["layer", "code", "name", "in_degree", "out_degree", "degree", "strength"])?;
    for r in rows {
        w.write_record([
            r.sector.layer.as_str(),
            &r.sector.code,
            &r.sector.name,
            &r.in_degree.to_string(),
            &r.out_degree.to_string(),
            &r.degree.to_string(),
            &r.strength.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn csv_writer<W: Write>(writer: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer)
}

/// Weight matrix of `rows × cols` nodes; unvalidated cells are 0.
pub fn write_heatmap<W: Write>(
    net: &ProgressionNetwork,
    rows: &SectorFilter,
    cols: &SectorFilter,
    writer: W,
) -> csv::Result<()> {
    let row_nodes: Vec<&SectorRef> = net.nodes.iter().filter(|s| rows.matches(s)).collect();
    let col_nodes: Vec<&SectorRef> = net.nodes.iter().filter(|s| cols.matches(s)).collect();
    let mut w = csv_writer(writer);
    let mut header = vec!["source".to_string()];
    header.extend(col_nodes.iter().map(|s| s.id()));
    w.write_record(&header)?;
    for r in &row_nodes {
        let mut record = vec![r.id()];
        for c in &col_nodes {
            let weight = if net.directed {
                net.edges.iter().find(|e| &e.source == *r && &e.target == *c)
            } else {
                net.edge(r, c)
            }
            .map_or(0.0, |e| e.weight);
            record.push(weight.to_string());
        }
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphFormat {
    GraphML,
    Dot,
    Json,
}

impl GraphFormat {
    pub fn extension(self) -> &'static str {
        match self {
            GraphFormat::GraphML => "graphml",
            GraphFormat::Dot => "dot",
            GraphFormat::Json => "json",
        }
    }
}

#[derive(Serialize, Deserialize)]
struct JsonNode {
    layer: Layer,
    code: String,
    name: String,
}

#[derive(Serialize, Deserialize)]
struct JsonEdge {
    source: String,
    target: String,
    weight: f64,
    count: usize,
    year_pairs: Vec<i32>,
}

#[derive(Serialize, Deserialize)]
struct JsonNetwork {
    delay: i32,
    directed: bool,
    nodes: Vec<JsonNode>,
    edges: Vec<JsonEdge>,
}

pub fn to_json(net: &ProgressionNetwork) -> String {
    let doc = JsonNetwork {
        delay: net.delay,
        directed: net.directed,
        nodes: net
            .nodes
            .iter()
            .map(|s| JsonNode {
                layer: s.layer,
                code: s.code.clone(),
                name: s.name.clone(),
            })
            .collect(),
        edges: net
            .edges
            .iter()
            .map(|e| JsonEdge {
                source: e.source.id(),
                target: e.target.id(),
                weight: e.weight,
                count: e.validation_count,
                year_pairs: e.year_pairs.clone(),
            })
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&doc).expect("network serializes");
    s.push('\n');
    s
}

pub fn from_json(text: &str) -> Result<ProgressionNetwork, NetworkError> {
    let doc: JsonNetwork = serde_json::from_str(text)?;
    let nodes: Vec<SectorRef> = doc
        .nodes
        .into_iter()
        .map(|n| SectorRef::new(n.layer, n.code, n.name))
        .collect();
    let by_id: HashMap<String, &SectorRef> = nodes.iter().map(|s| (s.id(), s)).collect();
    let lookup = |id: &str| {
        by_id
            .get(id)
            .map(|s| (*s).clone())
            .ok_or_else(|| NetworkError::UnknownNode(id.to_string()))
    };
    let edges = doc
        .edges
        .into_iter()
        .map(|e| {
            Ok(Edge {
                source: lookup(&e.source)?,
                target: lookup(&e.target)?,
                weight: e.weight,
                validation_count: e.count,
                year_pairs: e.year_pairs,
            })
        })
        .collect::<Result<_, NetworkError>>()?;
    Ok(ProgressionNetwork {
        delay: doc.delay,
        directed: doc.directed,
        nodes,
        edges,
    })
}

fn xml_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

fn dot_quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

pub fn to_graphml(net: &ProgressionNetwork) -> String {
    let mut s = String::new();
    s.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    s.push_str("<graphml xmlns=\"http://graphml.graphdrawing.org/xmlns\">\n");
    for (id, domain, ty) in [
        ("layer", "node", "string"),
        ("code", "node", "string"),
        ("name", "node", "string"),
        ("weight", "edge", "double"),
        ("validation_count", "edge", "int"),
    ] {
        let _ = writeln!(s, "  <key id=\"{id}\" for=\"{domain}\" attr.name=\"{id}\" attr.type=\"{ty}\"/>");
    }
    let kind = if net.directed { "directed" } else { "undirected" };
    let _ = writeln!(s, "  <graph id=\"progression\" edgedefault=\"{kind}\">");
    for n in &net.nodes {
        let _ = writeln!(
            s,
            "    <node id=\"{}\"><data key=\"layer\">{}</data><data key=\"code\">{}</data><data key=\"name\">{}</data></node>",
            xml_escape(&n.id()),
            n.layer,
            xml_escape(&n.code),
            xml_escape(&n.name)
        );
    }
    for e in &net.edges {
        let _ = writeln!(
            s,
            "    <edge source=\"{}\" target=\"{}\"><data key=\"weight\">{}</data><data key=\"validation_count\">{}</data></edge>",
            xml_escape(&e.source.id()),
            xml_escape(&e.target.id()),
            e.weight,
            e.validation_count
        );
    }
    s.push_str("  </graph>\n</graphml>\n");
    s
}

pub fn to_dot(net: &ProgressionNetwork) -> String {
    let (kind, arrow) = if net.directed { ("digraph", "->") } else { ("graph", "--") };
    let mut s = format!("{kind} progression {{\n");
    for n in &net.nodes {
        let _ = writeln!(
            s,
            "  {} [layer={}, code={}, label={}];",
            dot_quote(&n.id()),
            dot_quote(n.layer.as_str()),
            dot_quote(&n.code),
            dot_quote(&n.name)
        );
    }
    for e in &net.edges {
        let _ = writeln!(
            s,
            "  {} {arrow} {} [weight={}, count={}];",
            dot_quote(&e.source.id()),
            dot_quote(&e.target.id()),
            e.weight,
            e.validation_count
        );
    }
    s.push_str("}\n");
    s
}

pub fn render_graph(net: &ProgressionNetwork, format: GraphFormat) -> String {
    match format {
        GraphFormat::GraphML => to_graphml(net),
        GraphFormat::Dot => to_dot(net),
        GraphFormat::Json => to_json(net),
    }
}

/// Writes to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), std::io::Error> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)
}

pub fn export_graph(net: &ProgressionNetwork, format: GraphFormat, path: impl AsRef<Path>) -> Result<(), NetworkError> {
    let path = path.as_ref();
    write_atomic(path, render_graph(net, format).as_bytes()).map_err(|source| NetworkError::Io {
        path: path.display().to_string(),
        source,
    })
}
