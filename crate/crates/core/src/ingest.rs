//! Loading and aligning country × sector × year panels.
//!
//! Raw panels arrive as long CSV files (`country,sector,year,value`). Sector
//! labels are mapped through a [`Taxonomy`] onto canonical [`SectorRef`]s and
//! rows that collapse onto the same cell are summed. [`align`] concatenates
//! single-layer panels into the universal panel used by the rest of the
//! pipeline.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Value;

const DEFAULT_AI_TAXONOMY: &str = include_str!("../data/taxonomy_ai_default.csv");

#[derive(Error, Debug)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("line {line}: unknown {layer} sector label {label:?}")]
    UnknownSector {
        line: u64,
        layer: Layer,
        label: String,
    },
    #[error("line {line}: negative value {value}")]
    NegativeValue { line: u64, value: f64 },
    #[error("line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("panel contains no observations")]
    EmptyPanel,
    #[error("taxonomy line {line}: {reason}")]
    BadTaxonomy { line: u64, reason: String },
    #[error("at least two panels are required, got {0}")]
    TooFewPanels(usize),
    #[error("layer {0} appears in more than one panel")]
    OverlappingLayers(Layer),
    #[error("panels share no countries")]
    NoCommonCountries,
    #[error("panels share no years")]
    NoCommonYears,
}

/// The three activity layers of the universal panel.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub enum Layer {
    AI,
    Goods,
    Services,
}

impl Layer {
    pub const ALL: [Layer; 3] = [Layer::AI, Layer::Goods, Layer::Services];

    pub fn as_str(self) -> &'static str {
        match self {
            Layer::AI => "AI",
            Layer::Goods => "Goods",
            Layer::Services => "Services",
        }
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Layer {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ai" | "a" => Ok(Layer::AI),
            "goods" | "g" => Ok(Layer::Goods),
            "services" | "s" => Ok(Layer::Services),
            other => Err(format!("unknown layer {other:?}")),
        }
    }
}

/// A sector node: layer tag plus stable code and display name.
///
/// Ordering and equality use `(layer, code)` only.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SectorRef {
    pub layer: Layer,
    pub code: String,
    pub name: String,
}

impl SectorRef {
    pub fn new(layer: Layer, code: impl Into<String>, name: impl Into<String>) -> Self {
        Self {
            layer,
            code: code.into(),
            name: name.into(),
        }
    }

    /// `LAYER:code`, unique across the universal panel.
    pub fn id(&self) -> String {
        format!("{}:{}", self.layer, self.code)
    }
}

impl PartialEq for SectorRef {
    fn eq(&self, other: &Self) -> bool {
        self.layer == other.layer && self.code == other.code
    }
}

impl Eq for SectorRef {}

impl PartialOrd for SectorRef {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for SectorRef {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.layer, &self.code).cmp(&(other.layer, &other.code))
    }
}

impl std::hash::Hash for SectorRef {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.layer.hash(state);
        self.code.hash(state);
    }
}

fn normalize_label(raw: &str) -> String {
    raw.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

fn valid_code(code: &str) -> bool {
    !code.is_empty() && !code.chars().any(char::is_whitespace)
}

/// Sector universe plus the raw-label mappings onto it.
///
/// Raw labels are matched case-insensitively with internal whitespace
/// collapsed. A canonical code is always accepted as its own label.
#[derive(Debug, Clone, Default)]
pub struct Taxonomy {
    sectors: Vec<SectorRef>,
    labels: HashMap<(Layer, String), usize>,
    codes: HashMap<(Layer, String), usize>,
}

#[derive(Deserialize)]
struct TaxonomyRow {
    layer: String,
    raw_label: String,
    code: String,
    name: String,
}

impl Taxonomy {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, IngestError> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|source| IngestError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_reader(file)
    }

    /// Parses a `layer,raw_label,code,name` CSV.
    pub fn from_reader<R: Read>(reader: R) -> Result<Self, IngestError> {
        let mut tax = Taxonomy::default();
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut raw = csv::StringRecord::new();
        let headers = rdr.headers()?.clone();
        while rdr.read_record(&mut raw)? {
            let line = raw.position().map_or(0, |p| p.line());
            let row: TaxonomyRow = raw.deserialize(Some(&headers))?;
            let bad = |reason: String| IngestError::BadTaxonomy { line, reason };
            let layer: Layer = row.layer.parse().map_err(bad)?;
            if !valid_code(&row.code) {
                return Err(bad(format!("invalid sector code {:?}", row.code)));
            }
            let idx = tax.intern(layer, &row.code, &row.name).map_err(bad)?;
            let key = (layer, normalize_label(&row.raw_label));
            if key.1.is_empty() {
                return Err(bad("empty raw label".into()));
            }
            match tax.labels.get(&key) {
                Some(&prev) if prev != idx => {
                    return Err(bad(format!(
                        "raw label {:?} maps to both {} and {}",
                        row.raw_label, tax.sectors[prev].code, row.code
                    )))
                }
                _ => {
                    tax.labels.insert(key, idx);
                }
            }
        }
        Ok(tax)
    }

    /// The AI sub-sector aggregation shipped with the crate.
    pub fn default_ai() -> Self {
        Self::from_reader(DEFAULT_AI_TAXONOMY.as_bytes()).expect("bundled taxonomy is valid")
    }

    /// Merges another taxonomy into this one; conflicting mappings are errors.
    pub fn merge(mut self, other: &Taxonomy) -> Result<Self, IngestError> {
        let bad = |reason: String| IngestError::BadTaxonomy { line: 0, reason };
        let mut remap = Vec::with_capacity(other.sectors.len());
        for s in &other.sectors {
            remap.push(self.intern(s.layer, &s.code, &s.name).map_err(bad)?);
        }
        for (key, &idx) in &other.labels {
            let target = remap[idx];
            if let Some(&prev) = self.labels.get(key) {
                if prev != target {
                    return Err(bad(format!("raw label {:?} maps to two sectors", key.1)));
                }
            }
            self.labels.insert(key.clone(), target);
        }
        Ok(self)
    }

    fn intern(&mut self, layer: Layer, code: &str, name: &str) -> Result<usize, String> {
        let key = (layer, code.to_string());
        if let Some(&idx) = self.codes.get(&key) {
            if self.sectors[idx].name != name {
                return Err(format!(
                    "code {code} has two names: {:?} and {name:?}",
                    self.sectors[idx].name
                ));
            }
            return Ok(idx);
        }
        self.sectors.push(SectorRef::new(layer, code, name));
        self.codes.insert(key, self.sectors.len() - 1);
        Ok(self.sectors.len() - 1)
    }

    pub fn sectors(&self) -> &[SectorRef] {
        &self.sectors
    }

    /// Sectors of one layer, sorted by code.
    pub fn layer_sectors(&self, layer: Layer) -> Vec<SectorRef> {
        let mut out: Vec<_> = self
            .sectors
            .iter()
            .filter(|s| s.layer == layer)
            .cloned()
            .collect();
        out.sort();
        out
    }

    /// Resolves a raw label (or canonical code) within `layer`.
    pub fn resolve(&self, layer: Layer, label: &str) -> Option<&SectorRef> {
        self.codes
            .get(&(layer, label.trim().to_string()))
            .or_else(|| self.labels.get(&(layer, normalize_label(label))))
            .map(|&i| &self.sectors[i])
    }
}

/// Dense country × sector × year tensor with presence flags.
///
/// Missing observations hold zero and `present == false`.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel<T> {
    pub countries: Vec<String>,
    pub sectors: Vec<SectorRef>,
    pub years: Vec<i32>,
    values: Vec<T>,
    present: Vec<bool>,
}

impl<T: Value> Panel<T> {
    /// Zero-filled panel with every cell absent.
    pub fn zeros(countries: Vec<String>, sectors: Vec<SectorRef>, years: Vec<i32>) -> Self {
        let n = countries.len() * sectors.len() * years.len();
        Self {
            countries,
            sectors,
            years,
            values: vec![T::zero(); n],
            present: vec![false; n],
        }
    }

    #[inline]
    fn offset(&self, c: usize, x: usize, t: usize) -> usize {
        (c * self.sectors.len() + x) * self.years.len() + t
    }

    pub fn value(&self, c: usize, x: usize, t: usize) -> T {
        self.values[self.offset(c, x, t)]
    }

    pub fn is_present(&self, c: usize, x: usize, t: usize) -> bool {
        self.present[self.offset(c, x, t)]
    }

    /// Overwrites one cell and marks it present.
    ///
    /// # Panics
    /// If `v` is negative.
    pub fn set(&mut self, c: usize, x: usize, t: usize, v: T) {
        assert!(v >= T::zero(), "panel values must be nonnegative");
        let o = self.offset(c, x, t);
        self.values[o] = v;
        self.present[o] = true;
    }

    fn add(&mut self, c: usize, x: usize, t: usize, v: T) {
        let o = self.offset(c, x, t);
        self.values[o] = self.values[o] + v;
        self.present[o] = true;
    }

    pub fn n_countries(&self) -> usize {
        self.countries.len()
    }

    pub fn n_sectors(&self) -> usize {
        self.sectors.len()
    }

    pub fn n_years(&self) -> usize {
        self.years.len()
    }

    pub fn country_index(&self, iso3: &str) -> Option<usize> {
        self.countries.iter().position(|c| c == iso3)
    }

    pub fn year_index(&self, year: i32) -> Option<usize> {
        self.years.iter().position(|&y| y == year)
    }

    pub fn sector_index(&self, sector: &SectorRef) -> Option<usize> {
        self.sectors.iter().position(|s| s == sector)
    }

    /// Contiguous index ranges of each layer on the sector axis.
    pub fn layer_blocks(&self) -> Vec<(Layer, Range<usize>)> {
        layer_blocks(&self.sectors)
    }

    pub fn layers(&self) -> BTreeSet<Layer> {
        self.sectors.iter().map(|s| s.layer).collect()
    }

    /// Sum of all values of one layer in one year.
    pub fn layer_year_total(&self, layer: Layer, t: usize) -> T {
        let mut total = T::zero();
        for c in 0..self.n_countries() {
            for (x, s) in self.sectors.iter().enumerate() {
                if s.layer == layer {
                    total = total + self.value(c, x, t);
                }
            }
        }
        total
    }

    /// Element-wise scalar conversion, preserving presence flags.
    pub fn cast<U: Value>(&self) -> Panel<U> {
        Panel {
            countries: self.countries.clone(),
            sectors: self.sectors.clone(),
            years: self.years.clone(),
            values: self
                .values
                .iter()
                .map(|v| U::from_f64(v.to_f64_lossy()).expect("finite value"))
                .collect(),
            present: self.present.clone(),
        }
    }

    /// Drops sectors with no observation in any country or year. Their RCA is
    /// zero everywhere, so the remaining RCAs are unchanged.
    pub fn without_unobserved_sectors(&self) -> Self {
        let (nc, nt) = (self.n_countries(), self.n_years());
        let keep: Vec<usize> = (0..self.n_sectors())
            .filter(|&x| (0..nc).any(|c| (0..nt).any(|t| self.is_present(c, x, t))))
            .collect();
        let mut out = Panel::zeros(
            self.countries.clone(),
            keep.iter().map(|&x| self.sectors[x].clone()).collect(),
            self.years.clone(),
        );
        for c in 0..nc {
            for (nx, &x) in keep.iter().enumerate() {
                for t in 0..nt {
                    let (o, no) = (self.offset(c, x, t), out.offset(c, nx, t));
                    out.values[no] = self.values[o];
                    out.present[no] = self.present[o];
                }
            }
        }
        out
    }

    /// Restricts to a subset of countries and years, keeping all sectors.
    fn restrict(&self, countries: &[String], years: &[i32]) -> Self {
        let mut out = Panel::zeros(countries.to_vec(), self.sectors.clone(), years.to_vec());
        for (nc, iso) in countries.iter().enumerate() {
            let c = self.country_index(iso).expect("country in panel");
            for x in 0..self.n_sectors() {
                for (nt, &y) in years.iter().enumerate() {
                    let t = self.year_index(y).expect("year in panel");
                    let o = self.offset(c, x, t);
                    let no = out.offset(nc, x, nt);
                    out.values[no] = self.values[o];
                    out.present[no] = self.present[o];
                }
            }
        }
        out
    }
}

pub(crate) fn layer_blocks(sectors: &[SectorRef]) -> Vec<(Layer, Range<usize>)> {
    let mut blocks: Vec<(Layer, Range<usize>)> = Vec::new();
    for (i, s) in sectors.iter().enumerate() {
        match blocks.last_mut() {
            Some((layer, r)) if *layer == s.layer && r.end == i => r.end = i + 1,
            _ => blocks.push((s.layer, i..i + 1)),
        }
    }
    blocks
}

fn valid_iso3(code: &str) -> bool {
    code.len() == 3 && code.bytes().all(|b| b.is_ascii_uppercase())
}

pub fn load_panel(
    path: impl AsRef<Path>,
    layer: Layer,
    taxonomy: &Taxonomy,
) -> Result<Panel<f64>, IngestError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_panel_from_reader(file, layer, taxonomy)
}

/// Reads a long `country,sector,year,value` CSV for a single layer.
///
/// The sector axis is every taxonomy sector of `layer`; the year axis is the
/// contiguous range spanned by the rows.
pub fn load_panel_from_reader<R: Read>(
    reader: R,
    layer: Layer,
    taxonomy: &Taxonomy,
) -> Result<Panel<f64>, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let expected = ["country", "sector", "year", "value"];
    if headers.len() != 4 || headers.iter().zip(expected).any(|(h, e)| h != e) {
        return Err(IngestError::MalformedRow {
            line: 1,
            reason: format!("expected header country,sector,year,value, got {headers:?}"),
        });
    }

    let sectors = taxonomy.layer_sectors(layer);
    let sector_pos: HashMap<&SectorRef, usize> =
        sectors.iter().enumerate().map(|(i, s)| (s, i)).collect();
    let mut cells: BTreeMap<(String, usize, i32), f64> = BTreeMap::new();

    let mut record = csv::StringRecord::new();
    while rdr.read_record(&mut record)? {
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let malformed = |reason: String| IngestError::MalformedRow { line, reason };
        if record.len() != 4 {
            return Err(malformed(format!("expected 4 fields, got {}", record.len())));
        }
        let country = &record[0];
        if !valid_iso3(country) {
            return Err(malformed(format!("bad ISO-3 country code {country:?}")));
        }
        let sector = taxonomy
            .resolve(layer, &record[1])
            .ok_or_else(|| IngestError::UnknownSector {
                line,
                layer,
                label: record[1].to_string(),
            })?;
        let year: i32 = record[2]
            .parse()
            .map_err(|_| malformed(format!("bad year {:?}", &record[2])))?;
        let value: f64 = record[3]
            .parse()
            .map_err(|_| malformed(format!("bad value {:?}", &record[3])))?;
        if !value.is_finite() {
            return Err(malformed(format!("non-finite value {:?}", &record[3])));
        }
        if value < 0.0 {
            return Err(IngestError::NegativeValue { line, value });
        }
        let x = sector_pos[sector];
        *cells.entry((country.to_string(), x, year)).or_insert(0.0) += value;
    }

    if cells.is_empty() {
        return Err(IngestError::EmptyPanel);
    }
    let countries: Vec<String> = cells
        .keys()
        .map(|(c, _, _)| c.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let lo = cells.keys().map(|k| k.2).min().unwrap();
    let hi = cells.keys().map(|k| k.2).max().unwrap();
    let years: Vec<i32> = (lo..=hi).collect();
    let mut panel = Panel::zeros(countries, sectors, years);
    for ((country, x, year), v) in cells {
        let c = panel.country_index(&country).unwrap();
        let t = (year - lo) as usize;
        // -0.0 normalizes to 0.0
        panel.add(c, x, t, v + 0.0);
    }
    Ok(panel)
}

/// Writes the present cells of one layer in the long CSV schema.
pub fn write_panel<W: Write>(panel: &Panel<f64>, layer: Layer, writer: W) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    w.write_record(["country", "sector", "year", "value"])?;
    for (c, iso) in panel.countries.iter().enumerate() {
        for (x, s) in panel.sectors.iter().enumerate() {
            if s.layer != layer {
                continue;
            }
            for (t, year) in panel.years.iter().enumerate() {
                if panel.is_present(c, x, t) {
                    w.write_record([
                        iso.as_str(),
                        s.code.as_str(),
                        &year.to_string(),
                        &panel.value(c, x, t).to_string(),
                    ])?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Concatenates single-layer panels over their common countries and years.
///
/// The sector axis is sorted by `(layer, code)`, so the result does not
/// depend on the order of `panels`.
pub fn align<T: Value>(panels: &[Panel<T>]) -> Result<Panel<T>, IngestError> {
    if panels.len() < 2 {
        return Err(IngestError::TooFewPanels(panels.len()));
    }
    let mut seen = BTreeSet::new();
    for p in panels {
        for layer in p.layers() {
            if !seen.insert(layer) {
                return Err(IngestError::OverlappingLayers(layer));
            }
        }
    }

    let mut countries: BTreeSet<String> = panels[0].countries.iter().cloned().collect();
    let mut years: BTreeSet<i32> = panels[0].years.iter().copied().collect();
    for p in &panels[1..] {
        let pc: BTreeSet<String> = p.countries.iter().cloned().collect();
        countries = countries.intersection(&pc).cloned().collect();
        let py: BTreeSet<i32> = p.years.iter().copied().collect();
        years = years.intersection(&py).copied().collect();
    }
    if countries.is_empty() {
        return Err(IngestError::NoCommonCountries);
    }
    if years.is_empty() {
        return Err(IngestError::NoCommonYears);
    }
    let countries: Vec<String> = countries.into_iter().collect();
    let years: Vec<i32> = years.into_iter().collect();

    let restricted: Vec<Panel<T>> = panels.iter().map(|p| p.restrict(&countries, &years)).collect();
    let mut sectors: Vec<(SectorRef, usize, usize)> = restricted
        .iter()
        .enumerate()
        .flat_map(|(pi, p)| p.sectors.iter().cloned().enumerate().map(move |(x, s)| (s, pi, x)))
        .collect();
    sectors.sort_by(|a, b| a.0.cmp(&b.0));

    let mut out = Panel::zeros(
        countries.clone(),
        sectors.iter().map(|s| s.0.clone()).collect(),
        years.clone(),
    );
    for (nx, (_, pi, x)) in sectors.iter().enumerate() {
        let src = &restricted[*pi];
        for c in 0..countries.len() {
            for t in 0..years.len() {
                let o = src.offset(c, *x, t);
                let no = out.offset(c, nx, t);
                out.values[no] = src.values[o];
                out.present[no] = src.present[o];
            }
        }
    }
    Ok(out)
}
