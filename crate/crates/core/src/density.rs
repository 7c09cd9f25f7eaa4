//! Country densities over the progression network and recommendation tables.

use std::collections::HashMap;
use std::io::Write;

use thiserror::Error;

use crate::ingest::{Layer, Panel, SectorRef};
use crate::network::{csv_writer, ProgressionNetwork};
use crate::rca::{compute_rca_with, RcaError, RcaOptions, SpecLabel, SpecMatrix, Status};
use crate::scalar::Value;

/// Number of related AI sectors shown per report row.
pub const RELATED_AI_SHOWN: usize = 5;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum DensityError {
    #[error("country {0:?} is not in the panel")]
    UnknownCountry(String),
    #[error(transparent)]
    Rca(#[from] RcaError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Application {
    Enhance,
    Strengthen,
    Regain,
    Discover,
}

impl Application {
    pub fn from_status(status: Status) -> Self {
        match status {
            Status::Classic => Application::Enhance,
            Status::Emerging => Application::Strengthen,
            Status::Disappearing => Application::Regain,
            Status::Absent => Application::Discover,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Application::Enhance => "Enhance",
            Application::Strengthen => "Strengthen",
            Application::Regain => "Regain",
            Application::Discover => "Discover",
        }
    }
}

impl std::fmt::Display for Application {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Density {
    pub value: f64,
    /// Active AI sources with a validated edge to the target, heaviest first.
    pub contributing_ai: Vec<(SectorRef, f64)>,
    /// No active AI sector supports the target; `value` is then 0.
    pub no_support: bool,
}

/// Share of the target's incoming AI edge weight that comes from sectors the
/// country is specialized in.
pub fn compute_density<T: Value>(
    m_final: &SpecMatrix<T>,
    net: &ProgressionNetwork,
    country: &str,
    target: &SectorRef,
) -> Result<Density, DensityError> {
    let c = m_final
        .countries
        .iter()
        .position(|x| x == country)
        .ok_or_else(|| DensityError::UnknownCountry(country.to_string()))?;
    let sector_pos: HashMap<&SectorRef, usize> = m_final.sectors.iter().enumerate().map(|(i, s)| (s, i)).collect();
    Ok(density_at(m_final, &sector_pos, net, c, target))
}

fn density_at<T: Value>(
    m_final: &SpecMatrix<T>,
    sector_pos: &HashMap<&SectorRef, usize>,
    net: &ProgressionNetwork,
    c: usize,
    target: &SectorRef,
) -> Density {
    let mut total = 0.0;
    let mut active = 0.0;
    let mut contributing = Vec::new();
    for (source, w) in net.incoming(target) {
        if source.layer != Layer::AI || source == target {
            continue;
        }
        total += w;
        if sector_pos.get(source).is_some_and(|&x| m_final.is_active(c, x)) {
            active += w;
            contributing.push((source.clone(), w));
        }
    }
    contributing.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let value = if total > 0.0 { (active / total).min(1.0) } else { 0.0 };
    Density {
        value,
        no_support: contributing.is_empty(),
        contributing_ai: contributing,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub target: SectorRef,
    pub density: Density,
    pub status: Option<Status>,
    pub application: Option<Application>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityReport {
    pub country: String,
    pub year: i32,
    pub rows: Vec<ReportRow>,
}

/// Ranks every goods and services sector by density for one country.
pub fn country_report<T: Value>(
    m_final: &SpecMatrix<T>,
    net: &ProgressionNetwork,
    labels: &[SpecLabel<T>],
    country: &str,
    top_k: usize,
) -> Result<DensityReport, DensityError> {
    let c = m_final
        .countries
        .iter()
        .position(|x| x == country)
        .ok_or_else(|| DensityError::UnknownCountry(country.to_string()))?;
    let sector_pos: HashMap<&SectorRef, usize> = m_final.sectors.iter().enumerate().map(|(i, s)| (s, i)).collect();
    let status: HashMap<&SectorRef, Status> = labels
        .iter()
        .filter(|l| l.country == country)
        .map(|l| (&l.sector, l.label))
        .collect();

    let mut rows: Vec<ReportRow> = m_final
        .sectors
        .iter()
        .filter(|s| s.layer != Layer::AI)
        .map(|target| {
            let st = status.get(target).copied();
            ReportRow {
                target: target.clone(),
                density: density_at(m_final, &sector_pos, net, c, target),
                status: st,
                application: st.map(Application::from_status),
            }
        })
        .collect();
    rows.sort_by(|a, b| {
        b.density
            .value
            .total_cmp(&a.density.value)
            .then_with(|| a.target.cmp(&b.target))
    });
    rows.truncate(top_k);
    Ok(DensityReport {
        country: country.to_string(),
        year: m_final.year,
        rows,
    })
}

pub fn write_report<W: Write>(report: &DensityReport, writer: W) -> csv::Result<()> {
    let mut w = csv_writer(writer);
    w.write_record([
        "rank",
        "target_layer",
        "target",
        "density",
        "related_ai",
        "status",
        "application",
        "no_support",
    ])?;
    for (i, row) in report.rows.iter().enumerate() {
        let related: Vec<&str> = row
            .density
            .contributing_ai
            .iter()
            .take(RELATED_AI_SHOWN)
            .map(|(s, _)| s.code.as_str())
            .collect();
        w.write_record([
            (i + 1).to_string(),
            row.target.layer.to_string(),
            row.target.code.clone(),
            row.density.value.to_string(),
            related.join(";"),
            row.status.map_or(String::new(), |s| s.to_string()),
            row.application.map_or(String::new(), |a| a.to_string()),
            row.density.no_support.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedSector<T> {
    pub sector: SectorRef,
    pub rca: T,
}

/// Per-layer RCA rankings of one country in one year, highest first.
pub fn top_specializations<T: Value>(
    panel: &Panel<T>,
    country: &str,
    year: i32,
    top_k: usize,
    opts: &RcaOptions<T>,
) -> Result<Vec<(Layer, Vec<RankedSector<T>>)>, DensityError> {
    let c = panel
        .country_index(country)
        .ok_or_else(|| DensityError::UnknownCountry(country.to_string()))?;
    let spec = compute_rca_with(panel, year, opts)?;
    Ok(spec
        .layer_blocks
        .iter()
        .map(|(layer, range)| {
            let mut ranked: Vec<RankedSector<T>> = range
                .clone()
                .map(|x| RankedSector {
                    sector: spec.sectors[x].clone(),
                    rca: spec.rca(c, x),
                })
                .collect();
            ranked.sort_by(|a, b| {
                b.rca
                    .partial_cmp(&a.rca)
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then_with(|| a.sector.code.cmp(&b.sector.code))
            });
            ranked.truncate(top_k);
            (*layer, ranked)
        })
        .collect())
}

pub fn write_top_specializations<T: Value, W: Write>(
    tables: &[(Layer, Vec<RankedSector<T>>)],
    writer: W,
) -> csv::Result<()> {
    let mut w = csv_writer(writer);
    w.write_record(["layer", "rank", "code", "name", "rca"])?;
    for (layer, ranked) in tables {
        for (i, r) in ranked.iter().enumerate() {
            w.write_record([
                layer.as_str(),
                &(i + 1).to_string(),
                &r.sector.code,
                &r.sector.name,
                &r.rca.to_f64_lossy().to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Edge;
    use crate::rca::compute_rca;
    use crate::scalar::Exact;
    use proptest::prelude::*;

    fn sector(layer: Layer, code: &str) -> SectorRef {
        SectorRef::new(layer, code, code)
    }

    fn edge(s: &SectorRef, t: &SectorRef, w: f64) -> Edge {
        Edge {
            source: s.clone(),
            target: t.clone(),
            weight: w,
            validation_count: 1,
            year_pairs: vec![2015],
        }
    }

    /// Builds a final-year matrix with the given AI activity flags. A filler
    /// AI sector held by a large extra country keeps every world share small,
    /// so active cells always have RCA > 1.
    fn spec_from_activity(sectors: &[SectorRef], active: &[&[bool]]) -> SpecMatrix<f64> {
        let filler = sector(Layer::AI, "zz_fill");
        let mut all = sectors.to_vec();
        all.push(filler.clone());
        all.sort();
        let mut countries: Vec<String> = (0..active.len()).map(|i| format!("C{i:02}")).collect();
        countries.push("ZZZ".into());
        let mut panel = Panel::<f64>::zeros(countries, all.clone(), vec![2019]);
        let pos = |s: &SectorRef| all.iter().position(|x| x == s).unwrap();
        for (c, row) in active.iter().enumerate() {
            for (s, &a) in sectors.iter().zip(row.iter()) {
                if a {
                    panel.set(c, pos(s), 0, 10.0);
                }
            }
        }
        panel.set(active.len(), pos(&filler), 0, 1000.0);
        compute_rca(&panel, 2019).unwrap()
    }

    fn worked_example() -> (Vec<SectorRef>, ProgressionNetwork) {
        let a1 = sector(Layer::AI, "a1");
        let a2 = sector(Layer::AI, "a2");
        let g = sector(Layer::Goods, "g");
        let sectors = vec![a1.clone(), a2.clone(), g.clone()];
        let net = ProgressionNetwork {
            delay: 3,
            directed: true,
            nodes: sectors.clone(),
            edges: vec![edge(&a1, &g, 0.6), edge(&a2, &g, 0.4)],
        };
        (sectors, net)
    }

    #[test]
    fn worked_density() {
        let (sectors, net) = worked_example();
        let spec = spec_from_activity(&sectors, &[&[true, false, false], &[false, true, true]]);
        assert!(spec.is_active(0, spec.sectors.iter().position(|x| *x == sectors[0]).unwrap()));
        assert!(!spec.is_active(0, spec.sectors.iter().position(|x| *x == sectors[1]).unwrap()));
        let d = compute_density(&spec, &net, "C00", &sectors[2]).unwrap();
        assert_eq!(d.value, 0.6);
        assert!(!d.no_support);
        assert_eq!(d.contributing_ai, vec![(sectors[0].clone(), 0.6)]);
    }

    #[test]
    fn full_and_empty_support() {
        let (sectors, net) = worked_example();
        let spec = spec_from_activity(&sectors, &[&[true, true, false], &[false, false, true]]);
        assert_eq!(compute_density(&spec, &net, "C00", &sectors[2]).unwrap().value, 1.0);
        let none = compute_density(&spec, &net, "C01", &sectors[2]).unwrap();
        assert_eq!(none.value, 0.0);
        assert!(none.no_support);
        let unsupported = compute_density(&spec, &net, "C00", &sectors[0]).unwrap();
        assert_eq!(unsupported.value, 0.0);
        assert!(unsupported.no_support);
        assert!(matches!(
            compute_density(&spec, &net, "QQQ", &sectors[2]),
            Err(DensityError::UnknownCountry(_))
        ));
    }

    fn label(country: &str, s: &SectorRef, status: Status) -> SpecLabel<f64> {
        SpecLabel {
            country: country.into(),
            sector: s.clone(),
            label: status,
            early_avg_rca: 0.0,
            late_avg_rca: 0.0,
        }
    }

    #[test]
    fn report_ranks_and_maps_applications() {
        let a1 = sector(Layer::AI, "a1");
        let a2 = sector(Layer::AI, "a2");
        let g1 = sector(Layer::Goods, "g1");
        let g2 = sector(Layer::Goods, "g2");
        let s1 = sector(Layer::Services, "s1");
        let sectors = vec![a1.clone(), a2.clone(), g1.clone(), g2.clone(), s1.clone()];
        let net = ProgressionNetwork {
            delay: 3,
            directed: true,
            nodes: sectors.clone(),
            edges: vec![edge(&a1, &g1, 0.5), edge(&a2, &g1, 0.5), edge(&a1, &g2, 0.2), edge(&a1, &s1, 0.9)],
        };
        let spec = spec_from_activity(
            &sectors,
            &[&[true, false, true, false, false], &[false, true, false, true, true]],
        );
        let labels = vec![
            label("C00", &g1, Status::Classic),
            label("C00", &g2, Status::Absent),
            label("C00", &s1, Status::Emerging),
        ];
        let report = country_report(&spec, &net, &labels, "C00", 10).unwrap();
        let order: Vec<(&str, f64)> = report.rows.iter().map(|r| (r.target.code.as_str(), r.density.value)).collect();
        assert_eq!(order, vec![("g2", 1.0), ("s1", 1.0), ("g1", 0.5)]);
        assert_eq!(report.rows[0].application, Some(Application::Discover));
        assert_eq!(report.rows[1].application, Some(Application::Strengthen));
        assert_eq!(report.rows[2].application, Some(Application::Enhance));
        for row in &report.rows {
            for (s, _) in &row.density.contributing_ai {
                assert!(spec.is_active(0, spec.sectors.iter().position(|x| x == s).unwrap()));
            }
        }
        assert_eq!(country_report(&spec, &net, &labels, "C00", 2).unwrap().rows.len(), 2);

        let mut buf = Vec::new();
        write_report(&report, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "rank,target_layer,target,density,related_ai,status,application,no_support"
        );
        assert_eq!(text.lines().nth(1).unwrap(), "1,Goods,g2,1,a1,Absent,Discover,false");
    }

    #[test]
    fn related_ai_is_capped() {
        let ai: Vec<SectorRef> = (0..7).map(|i| sector(Layer::AI, &format!("a{i}"))).collect();
        let g = sector(Layer::Goods, "g");
        let mut sectors = ai.clone();
        sectors.push(g.clone());
        let net = ProgressionNetwork {
            delay: 1,
            directed: true,
            nodes: sectors.clone(),
            edges: ai.iter().enumerate().map(|(i, a)| edge(a, &g, 0.1 * (i + 1) as f64)).collect(),
        };
        let row: Vec<bool> = vec![true; 8];
        let spec = spec_from_activity(&sectors, &[&row, &[false; 8]]);
        let report = country_report(&spec, &net, &[], "C00", 10).unwrap();
        let mut buf = Vec::new();
        write_report(&report, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains(",a6;a5;a4;a3;a2,,,false"));
    }

    #[test]
    fn top_specializations_order() {
        let sectors = vec![
            sector(Layer::Goods, "x1"),
            sector(Layer::Goods, "x2"),
            sector(Layer::Goods, "x3"),
        ];
        let mut panel = Panel::<Exact>::zeros(vec!["AAA".into(), "BBB".into()], sectors, vec![2019]);
        let n = |v: i64| Exact::from_integer(v);
        // AAA shares (8/20, 6/20, 6/20); world shares (5/20, 5/20, 30/40 split)
        for (x, (a, b)) in [(4, 1), (6, 9), (2, 30)].into_iter().enumerate() {
            panel.set(0, x, 0, n(a));
            panel.set(1, x, 0, n(b));
        }
        let tables = top_specializations(&panel, "AAA", 2019, 10, &RcaOptions::default()).unwrap();
        assert_eq!(tables.len(), 1);
        let ranked: Vec<&str> = tables[0].1.iter().map(|r| r.sector.code.as_str()).collect();
        assert_eq!(ranked, vec!["x1", "x2", "x3"]);
        assert!(tables[0].1.windows(2).all(|w| w[0].rca >= w[1].rca));

        let mut tie = Panel::<f64>::zeros(vec!["AAA".into()], vec![sector(Layer::AI, "b"), sector(Layer::AI, "a")], vec![1]);
        tie.set(0, 0, 0, 1.0);
        tie.set(0, 1, 0, 1.0);
        let t = top_specializations(&tie, "AAA", 1, 5, &RcaOptions::default()).unwrap();
        assert_eq!(t[0].1[0].sector.code, "a");
        assert!(matches!(
            top_specializations(&tie, "AAA", 3, 5, &RcaOptions::default()),
            Err(DensityError::Rca(RcaError::YearNotInPanel(3)))
        ));
    }

    proptest! {
        #[test]
        fn density_bounded_and_monotone(
            weights in proptest::collection::vec(0.001f64..1.0, 1..8),
            active in proptest::collection::vec(any::<bool>(), 8),
            flip in 0usize..8,
        ) {
            let ai: Vec<SectorRef> = (0..weights.len()).map(|i| sector(Layer::AI, &format!("a{i}"))).collect();
            let g = sector(Layer::Goods, "g");
            let mut sectors = ai.clone();
            sectors.push(g.clone());
            let net = ProgressionNetwork {
                delay: 2,
                directed: true,
                nodes: sectors.clone(),
                edges: ai.iter().zip(&weights).map(|(a, &w)| edge(a, &g, w)).collect(),
            };
            let mut row: Vec<bool> = active[..weights.len()].to_vec();
            row.push(false);
            let other = vec![false; row.len()];
            let before = compute_density(&spec_from_activity(&sectors, &[&row, &other]), &net, "C00", &g).unwrap();
            prop_assert!((0.0..=1.0).contains(&before.value));
            let k = flip % weights.len();
            row[k] = true;
            let after = compute_density(&spec_from_activity(&sectors, &[&row, &other]), &net, "C00", &g).unwrap();
            prop_assert!(after.value >= before.value);
        }
    }
}
