//! Revealed comparative advantage, its binarization, and specialization
//! dynamics labels.
//!
//! RCA is normalized within each layer: all four sums of the Balassa index
//! range only over the sectors of one layer, because investment and export
//! dollars are not comparable.

use std::ops::{Range, RangeInclusive};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{layer_blocks, Layer, Panel, SectorRef};
use crate::matrix::BinaryMatrix;
use crate::scalar::Value;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum RcaError {
    #[error("year {0} is not in the panel")]
    YearNotInPanel(i32),
    #[error("year range {0}..={1} is empty or not covered by the panel")]
    RangeOutsidePanel(i32, i32),
}

#[derive(Debug, Clone, Copy)]
pub struct RcaOptions<T> {
    /// Countries whose layer total is at or below this value get RCA 0 in that
    /// layer and do not enter the world totals.
    pub min_layer_total: T,
}

impl<T: Value> Default for RcaOptions<T> {
    fn default() -> Self {
        Self {
            min_layer_total: T::zero(),
        }
    }
}

/// One year's RCA matrix and binary specialization matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SpecMatrix<T> {
    pub year: i32,
    pub countries: Vec<String>,
    pub sectors: Vec<SectorRef>,
    rca: Vec<T>,
    pub m: BinaryMatrix,
    pub layer_blocks: Vec<(Layer, Range<usize>)>,
}

impl<T: Value> SpecMatrix<T> {
    pub fn rca(&self, c: usize, x: usize) -> T {
        self.rca[c * self.sectors.len() + x]
    }

    pub fn is_active(&self, c: usize, x: usize) -> bool {
        self.m.get(c, x)
    }

    pub fn n_countries(&self) -> usize {
        self.countries.len()
    }

    pub fn n_sectors(&self) -> usize {
        self.sectors.len()
    }

    /// World share of each sector within its layer; zero for empty layers.
    pub fn world_shares(&self, panel: &Panel<T>, opts: &RcaOptions<T>) -> Vec<T> {
        let t = panel.year_index(self.year).expect("matrix year in panel");
        let mut shares = vec![T::zero(); self.n_sectors()];
        for (_, block) in &self.layer_blocks {
            let (world, total) = world_totals(panel, t, block, opts);
            if total > T::zero() {
                for (i, x) in block.clone().enumerate() {
                    shares[x] = world[i] / total;
                }
            }
        }
        shares
    }
}

fn eligible<T: Value>(panel: &Panel<T>, c: usize, t: usize, block: &Range<usize>, opts: &RcaOptions<T>) -> Option<T> {
    let total = block
        .clone()
        .fold(T::zero(), |acc, x| acc + panel.value(c, x, t));
    (total > opts.min_layer_total && total > T::zero()).then_some(total)
}

fn world_totals<T: Value>(
    panel: &Panel<T>,
    t: usize,
    block: &Range<usize>,
    opts: &RcaOptions<T>,
) -> (Vec<T>, T) {
    let mut world = vec![T::zero(); block.len()];
    for c in 0..panel.n_countries() {
        if eligible(panel, c, t, block, opts).is_some() {
            for (i, x) in block.clone().enumerate() {
                world[i] = world[i] + panel.value(c, x, t);
            }
        }
    }
    let total = world.iter().fold(T::zero(), |a, &b| a + b);
    (world, total)
}

pub fn compute_rca<T: Value>(panel: &Panel<T>, year: i32) -> Result<SpecMatrix<T>, RcaError> {
    compute_rca_with(panel, year, &RcaOptions::default())
}

/// Balassa index per layer for one year, binarized at the strict threshold 1.
///
/// A cell is 0 whenever its country's layer total or its sector's world total
/// is zero.
pub fn compute_rca_with<T: Value>(
    panel: &Panel<T>,
    year: i32,
    opts: &RcaOptions<T>,
) -> Result<SpecMatrix<T>, RcaError> {
    let t = panel.year_index(year).ok_or(RcaError::YearNotInPanel(year))?;
    let nc = panel.n_countries();
    let nx = panel.n_sectors();
    let blocks = layer_blocks(&panel.sectors);
    let mut rca = vec![T::zero(); nc * nx];

    for (_, block) in &blocks {
        let (world, total) = world_totals(panel, t, block, opts);
        if total <= T::zero() {
            continue;
        }
        for c in 0..nc {
            let Some(country_total) = eligible(panel, c, t, block, opts) else {
                continue;
            };
            for (i, x) in block.clone().enumerate() {
                if world[i] > T::zero() {
                    let own_share = panel.value(c, x, t) / country_total;
                    let world_share = world[i] / total;
                    rca[c * nx + x] = own_share / world_share;
                }
            }
        }
    }

    let m = BinaryMatrix::from_fn(nc, nx, |c, x| rca[c * nx + x] > T::one());
    Ok(SpecMatrix {
        year,
        countries: panel.countries.clone(),
        sectors: panel.sectors.clone(),
        rca,
        m,
        layer_blocks: blocks,
    })
}

/// Specialization dynamics between an early and a late sub-period.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Status {
    Classic,
    Absent,
    Disappearing,
    Emerging,
}

impl Status {
    pub fn from_flags(early_active: bool, late_active: bool) -> Self {
        match (early_active, late_active) {
            (true, true) => Status::Classic,
            (false, false) => Status::Absent,
            (true, false) => Status::Disappearing,
            (false, true) => Status::Emerging,
        }
    }

    pub fn from_averages<T: Value>(early_avg: T, late_avg: T) -> Self {
        Self::from_flags(early_avg > T::one(), late_avg > T::one())
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Status::Classic => "Classic",
            Status::Absent => "Absent",
            Status::Disappearing => "Disappearing",
            Status::Emerging => "Emerging",
        }
    }
}

impl std::fmt::Display for Status {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpecLabel<T> {
    pub country: String,
    pub sector: SectorRef,
    pub label: Status,
    pub early_avg_rca: T,
    pub late_avg_rca: T,
}

fn mean_rca<T: Value>(
    panel: &Panel<T>,
    range: &RangeInclusive<i32>,
    opts: &RcaOptions<T>,
) -> Result<Vec<T>, RcaError> {
    let bad = || RcaError::RangeOutsidePanel(*range.start(), *range.end());
    if range.is_empty() {
        return Err(bad());
    }
    let mut sum = vec![T::zero(); panel.n_countries() * panel.n_sectors()];
    let mut n = 0usize;
    for year in range.clone() {
        let spec = compute_rca_with(panel, year, opts).map_err(|_| bad())?;
        for (s, v) in sum.iter_mut().zip(&spec.rca) {
            *s = *s + *v;
        }
        n += 1;
    }
    let n = T::from_count(n);
    Ok(sum.into_iter().map(|s| s / n).collect())
}

/// Labels every (country, sector) by comparing mean yearly RCA in two
/// sub-periods against 1.
pub fn label_specializations<T: Value>(
    panel: &Panel<T>,
    early: RangeInclusive<i32>,
    late: RangeInclusive<i32>,
    opts: &RcaOptions<T>,
) -> Result<Vec<SpecLabel<T>>, RcaError> {
    let early_avg = mean_rca(panel, &early, opts)?;
    let late_avg = mean_rca(panel, &late, opts)?;
    let nx = panel.n_sectors();
    let mut out = Vec::with_capacity(early_avg.len());
    for (c, country) in panel.countries.iter().enumerate() {
        for (x, sector) in panel.sectors.iter().enumerate() {
            let (e, l) = (early_avg[c * nx + x], late_avg[c * nx + x]);
            out.push(SpecLabel {
                country: country.clone(),
                sector: sector.clone(),
                label: Status::from_averages(e, l),
                early_avg_rca: e,
                late_avg_rca: l,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::Exact;
    use proptest::prelude::*;

    fn panel_from<T: Value>(values: &[Vec<f64>], layer_of: impl Fn(usize) -> Layer) -> Panel<T> {
        let nc = values.len();
        let nx = values[0].len();
        let sectors = (0..nx)
            .map(|x| SectorRef::new(layer_of(x), format!("s{x:02}"), format!("S{x}")))
            .collect();
        let countries = (0..nc).map(|c| format!("C{:02}", c)).collect();
        let mut p = Panel::zeros(countries, sectors, vec![2000]);
        for (c, row) in values.iter().enumerate() {
            for (x, &v) in row.iter().enumerate() {
                p.set(c, x, 0, T::from_f64(v).unwrap());
            }
        }
        p
    }

    #[test]
    fn single_cell_has_unit_rca() {
        let p: Panel<f64> = panel_from(&[vec![10.0]], |_| Layer::Goods);
        let s = compute_rca(&p, 2000).unwrap();
        assert_eq!(s.rca(0, 0), 1.0);
        assert!(!s.is_active(0, 0));
    }

    #[test]
    fn two_by_two_worked_example_exact() {
        let p: Panel<Exact> = panel_from(&[vec![4.0, 6.0], vec![1.0, 9.0]], |_| Layer::Goods);
        let s = compute_rca(&p, 2000).unwrap();
        let r = |n, d| Exact::new(n, d);
        assert_eq!(s.rca(0, 0), r(8, 5));
        assert_eq!(s.rca(0, 1), r(4, 5));
        assert_eq!(s.rca(1, 0), r(2, 5));
        assert_eq!(s.rca(1, 1), r(6, 5));
        assert_eq!(s.m, BinaryMatrix::from_rows(&[[1, 0], [0, 1]]));
    }

    #[test]
    fn zero_world_total_column_is_zero() {
        let p: Panel<f64> = panel_from(&[vec![4.0, 0.0], vec![1.0, 0.0]], |_| Layer::Goods);
        let s = compute_rca(&p, 2000).unwrap();
        assert_eq!(s.rca(0, 1), 0.0);
        assert_eq!(s.rca(1, 1), 0.0);
    }

    #[test]
    fn layers_are_normalized_independently() {
        // country 1 has no AI at all; goods are unaffected by the AI block
        let p: Panel<f64> = panel_from(
            &[vec![5.0, 1.0, 4.0, 6.0], vec![0.0, 0.0, 1.0, 9.0]],
            |x| if x < 2 { Layer::AI } else { Layer::Goods },
        );
        let s = compute_rca(&p, 2000).unwrap();
        assert_eq!(s.rca(1, 0), 0.0);
        assert_eq!(s.rca(1, 1), 0.0);
        assert!((s.rca(0, 0) - 1.0).abs() < 1e-15);
        assert!((s.rca(0, 2) - 1.6).abs() < 1e-12);
        assert!((s.rca(1, 3) - 1.2).abs() < 1e-12);
    }

    #[test]
    fn min_layer_total_zeroes_small_investors() {
        let p: Panel<f64> = panel_from(&[vec![100.0, 0.0], vec![0.0, 0.5]], |_| Layer::AI);
        let s = compute_rca(&p, 2000).unwrap();
        assert!(s.is_active(1, 1));
        let s = compute_rca_with(&p, 2000, &RcaOptions { min_layer_total: 1.0 }).unwrap();
        assert_eq!(s.rca(1, 1), 0.0);
        assert_eq!(s.rca(0, 0), 1.0);
    }

    #[test]
    fn missing_year_errors() {
        let p: Panel<f64> = panel_from(&[vec![1.0]], |_| Layer::AI);
        assert_eq!(compute_rca(&p, 1999).unwrap_err(), RcaError::YearNotInPanel(1999));
    }

    #[test]
    fn table_of_labels() {
        assert_eq!(Status::from_averages(1.4, 1.1), Status::Classic);
        assert_eq!(Status::from_averages(0.0, 0.0), Status::Absent);
        assert_eq!(Status::from_averages(1.4, 0.6), Status::Disappearing);
        assert_eq!(Status::from_averages(0.6, 1.4), Status::Emerging);
        // threshold is strict
        assert_eq!(Status::from_averages(1.0, 1.0), Status::Absent);
    }

    #[test]
    fn labels_average_yearly_rca() {
        // sector 0 share for country 0: years 1-2 high, years 3-4 low
        let sectors = vec![
            SectorRef::new(Layer::Goods, "a", "A"),
            SectorRef::new(Layer::Goods, "b", "B"),
        ];
        let mut p = Panel::<f64>::zeros(vec!["AAA".into(), "BBB".into()], sectors, vec![1, 2, 3, 4]);
        for t in 0..4 {
            let hi = t < 2;
            p.set(0, 0, t, if hi { 9.0 } else { 1.0 });
            p.set(0, 1, t, if hi { 1.0 } else { 9.0 });
            p.set(1, 0, t, 5.0);
            p.set(1, 1, t, 5.0);
        }
        let labels = label_specializations(&p, 1..=2, 3..=4, &RcaOptions::default()).unwrap();
        let l00 = &labels[0];
        assert_eq!(l00.label, Status::Disappearing);
        let l01 = &labels[1];
        assert_eq!(l01.label, Status::Emerging);
        let expected_early = (0.9 / 0.7 + 0.9 / 0.7) / 2.0;
        assert!((l00.early_avg_rca - expected_early).abs() < 1e-12);
        assert!(matches!(
            label_specializations(&p, 0..=2, 3..=4, &RcaOptions::default()),
            Err(RcaError::RangeOutsidePanel(0, 2))
        ));
        #[allow(clippy::reversed_empty_ranges)]
        let empty = 4..=3;
        assert!(label_specializations(&p, 1..=2, empty, &RcaOptions::default()).is_err());
    }

    fn random_panel() -> impl Strategy<Value = Vec<Vec<f64>>> {
        (1usize..=10, 1usize..=15).prop_flat_map(|(nc, nx)| {
            prop::collection::vec(
                prop::collection::vec(prop_oneof![Just(0.0), 0.0..1e6f64], nx),
                nc,
            )
        })
    }

    proptest! {
        #[test]
        fn weighted_mean_identity(values in random_panel()) {
            let p: Panel<f64> = panel_from(&values, |x| if x % 3 == 0 { Layer::AI } else { Layer::Goods });
            let s = compute_rca(&p, 2000).unwrap();
            let shares = s.world_shares(&p, &RcaOptions::default());
            for (_, block) in &s.layer_blocks {
                for c in 0..s.n_countries() {
                    let total: f64 = block.clone().map(|x| p.value(c, x, 0)).sum();
                    if total > 0.0 {
                        let acc: f64 = block.clone().map(|x| shares[x] * s.rca(c, x)).sum();
                        prop_assert!((acc - 1.0).abs() < 1e-9, "acc = {acc}");
                    }
                }
            }
        }

        #[test]
        fn layer_scale_invariance(values in random_panel(), k in 0.01..100.0f64) {
            let p: Panel<f64> = panel_from(&values, |x| if x % 2 == 0 { Layer::AI } else { Layer::Goods });
            let scaled: Vec<Vec<f64>> = values
                .iter()
                .map(|row| row.iter().enumerate().map(|(x, v)| if x % 2 == 0 { v * k } else { *v }).collect())
                .collect();
            let q: Panel<f64> = panel_from(&scaled, |x| if x % 2 == 0 { Layer::AI } else { Layer::Goods });
            let a = compute_rca(&p, 2000).unwrap();
            let b = compute_rca(&q, 2000).unwrap();
            for c in 0..a.n_countries() {
                for x in 0..a.n_sectors() {
                    prop_assert!((a.rca(c, x) - b.rca(c, x)).abs() <= 1e-9 * a.rca(c, x).max(1.0));
                }
            }
        }

        #[test]
        fn raising_a_cell_never_deactivates_it(values in random_panel(), c in 0usize..10, x in 0usize..15, bump in 0.0..1e6f64) {
            let c = c % values.len();
            let x = x % values[0].len();
            let p: Panel<f64> = panel_from(&values, |_| Layer::Goods);
            let mut bumped = values.clone();
            bumped[c][x] += bump;
            let q: Panel<f64> = panel_from(&bumped, |_| Layer::Goods);
            let before = compute_rca(&p, 2000).unwrap();
            let after = compute_rca(&q, 2000).unwrap();
            if before.is_active(c, x) {
                prop_assert!(after.is_active(c, x));
            }
        }
    }
}
