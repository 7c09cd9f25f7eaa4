//! Time-lagged assist matrix between source and target sectors.
//!
//! `b[x][x']` is the probability that a walker leaving source sector `x` at
//! year `t`, stepping uniformly to one of the countries specialized in `x`,
//! and then uniformly to one of that country's specializations at `t + Δ`,
//! lands on `x'`.

use std::collections::BTreeSet;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::ingest::{Layer, SectorRef};
use crate::matrix::BinaryMatrix;
use crate::rca::SpecMatrix;
use crate::scalar::Value;

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum AssistError {
    #[error("the two specialization matrices have different country axes")]
    CountryAxisMismatch,
    #[error("the two specialization matrices have different sector axes")]
    SectorAxisMismatch,
    #[error("no sector matches the source filter")]
    EmptySourceSet,
    #[error("no sector matches the target filter")]
    EmptyTargetSet,
    #[error("target year {later} precedes source year {earlier}")]
    NegativeDelay { earlier: i32, later: i32 },
    #[error("source sector index {0} has no specialized country")]
    SourceNotActive(usize),
    #[error("at least one walk is required")]
    NoWalks,
}

/// Selects a subset of the sector axis.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum SectorFilter {
    #[default]
    All,
    Layers(BTreeSet<Layer>),
    Sectors(Vec<SectorRef>),
}

impl SectorFilter {
    pub fn layers(layers: impl IntoIterator<Item = Layer>) -> Self {
        SectorFilter::Layers(layers.into_iter().collect())
    }

    pub fn ai() -> Self {
        Self::layers([Layer::AI])
    }

    pub fn matches(&self, sector: &SectorRef) -> bool {
        match self {
            SectorFilter::All => true,
            SectorFilter::Layers(l) => l.contains(&sector.layer),
            SectorFilter::Sectors(s) => s.contains(sector),
        }
    }

    /// Indices of matching sectors, in axis order.
    pub fn select(&self, sectors: &[SectorRef]) -> Vec<usize> {
        sectors
            .iter()
            .enumerate()
            .filter(|(_, s)| self.matches(s))
            .map(|(i, _)| i)
            .collect()
    }
}

/// Assist weights plus the normalizations that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct AssistMatrix<T> {
    pub source_year: i32,
    pub delay: i32,
    pub sources: Vec<SectorRef>,
    pub targets: Vec<SectorRef>,
    /// Positions of `sources` / `targets` on the full sector axis.
    pub source_index: Vec<usize>,
    pub target_index: Vec<usize>,
    /// Ubiquity of each source at the source year.
    pub ubiquity: Vec<usize>,
    /// Diversification of each country at the target year, over all sectors.
    pub diversification: Vec<usize>,
    b: Vec<T>,
    defined: Vec<bool>,
}

impl<T: Value> AssistMatrix<T> {
    /// `None` for sources with zero ubiquity.
    pub fn get(&self, i: usize, j: usize) -> Option<T> {
        self.defined[i].then(|| self.b[i * self.targets.len() + j])
    }

    pub fn is_defined(&self, i: usize) -> bool {
        self.defined[i]
    }

    pub fn n_sources(&self) -> usize {
        self.sources.len()
    }

    pub fn n_targets(&self) -> usize {
        self.targets.len()
    }

    pub fn source_position(&self, s: &SectorRef) -> Option<usize> {
        self.sources.iter().position(|x| x == s)
    }

    pub fn target_position(&self, s: &SectorRef) -> Option<usize> {
        self.targets.iter().position(|x| x == s)
    }
}

/// Raw assist kernel on binary matrices.
///
/// Returns `(b, defined, ubiquity, diversification)` with `b` row-major over
/// `sources × targets`. Countries with zero diversification at `t + Δ` are
/// skipped.
pub fn assist_kernel<T: Value>(
    m_t: &BinaryMatrix,
    m_t_delta: &BinaryMatrix,
    sources: &[usize],
    targets: &[usize],
) -> (Vec<T>, Vec<bool>, Vec<usize>, Vec<usize>) {
    let nc = m_t.rows();
    let nt = targets.len();
    let diversification = m_t_delta.row_degrees();
    let inv_d: Vec<T> = diversification
        .iter()
        .map(|&d| if d > 0 { T::one() / T::from_count(d) } else { T::zero() })
        .collect();

    let mut b = vec![T::zero(); sources.len() * nt];
    let mut defined = vec![false; sources.len()];
    let mut ubiquity = vec![0usize; sources.len()];
    for (i, &x) in sources.iter().enumerate() {
        let row = &mut b[i * nt..(i + 1) * nt];
        for c in 0..nc {
            if !m_t.get(c, x) {
                continue;
            }
            ubiquity[i] += 1;
            if diversification[c] == 0 {
                continue;
            }
            for (j, &y) in targets.iter().enumerate() {
                if m_t_delta.get(c, y) {
                    row[j] = row[j] + inv_d[c];
                }
            }
        }
        if ubiquity[i] > 0 {
            defined[i] = true;
            let u = T::from_count(ubiquity[i]);
            for v in row.iter_mut() {
                *v = *v / u;
            }
        }
    }
    (b, defined, ubiquity, diversification)
}

/// Assist matrix between the specialization matrices of two years.
pub fn assist<T: Value>(
    m_t: &SpecMatrix<T>,
    m_t_delta: &SpecMatrix<T>,
    sources: &SectorFilter,
    targets: &SectorFilter,
) -> Result<AssistMatrix<T>, AssistError> {
    if m_t.countries != m_t_delta.countries {
        return Err(AssistError::CountryAxisMismatch);
    }
    if m_t.sectors != m_t_delta.sectors {
        return Err(AssistError::SectorAxisMismatch);
    }
    if m_t_delta.year < m_t.year {
        return Err(AssistError::NegativeDelay {
            earlier: m_t.year,
            later: m_t_delta.year,
        });
    }
    assist_binary(
        &m_t.m,
        &m_t_delta.m,
        &m_t.sectors,
        m_t.year,
        m_t_delta.year - m_t.year,
        sources,
        targets,
    )
}

/// Assist matrix of two binary matrices sharing the `sectors` column axis.
pub fn assist_binary<T: Value>(
    m_t: &BinaryMatrix,
    m_t_delta: &BinaryMatrix,
    sectors: &[SectorRef],
    source_year: i32,
    delay: i32,
    sources: &SectorFilter,
    targets: &SectorFilter,
) -> Result<AssistMatrix<T>, AssistError> {
    if m_t.rows() != m_t_delta.rows() {
        return Err(AssistError::CountryAxisMismatch);
    }
    if m_t.cols() != sectors.len() || m_t_delta.cols() != sectors.len() {
        return Err(AssistError::SectorAxisMismatch);
    }
    let source_index = sources.select(sectors);
    if source_index.is_empty() {
        return Err(AssistError::EmptySourceSet);
    }
    let target_index = targets.select(sectors);
    if target_index.is_empty() {
        return Err(AssistError::EmptyTargetSet);
    }
    let (b, defined, ubiquity, diversification) = assist_kernel(m_t, m_t_delta, &source_index, &target_index);
    Ok(AssistMatrix {
        source_year,
        delay,
        sources: source_index.iter().map(|&i| sectors[i].clone()).collect(),
        targets: target_index.iter().map(|&i| sectors[i].clone()).collect(),
        source_index,
        target_index,
        ubiquity,
        diversification,
        b,
        defined,
    })
}

/// Monte Carlo estimate of one assist row by simulating the walker.
///
/// Walkers reaching a country with no specialization at `t + Δ` are lost, so
/// the estimate is sub-stochastic exactly like the closed form. Returns the
/// landing frequency on each entry of `targets`.
pub fn random_walk_oracle(
    m_t: &BinaryMatrix,
    m_t_delta: &BinaryMatrix,
    source: usize,
    targets: &[usize],
    n_walks: usize,
    seed: u64,
) -> Result<Vec<f64>, AssistError> {
    if m_t.rows() != m_t_delta.rows() {
        return Err(AssistError::CountryAxisMismatch);
    }
    if n_walks == 0 {
        return Err(AssistError::NoWalks);
    }
    let holders: Vec<usize> = (0..m_t.rows()).filter(|&c| m_t.get(c, source)).collect();
    if holders.is_empty() {
        return Err(AssistError::SourceNotActive(source));
    }
    let active_later: Vec<Vec<usize>> = (0..m_t_delta.rows())
        .map(|c| (0..m_t_delta.cols()).filter(|&y| m_t_delta.get(c, y)).collect())
        .collect();
    let mut slot = vec![usize::MAX; m_t_delta.cols()];
    for (j, &y) in targets.iter().enumerate() {
        slot[y] = j;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = vec![0u64; targets.len()];
    for _ in 0..n_walks {
        let &c = holders.choose(&mut rng).expect("nonempty");
        if let Some(&y) = active_later[c].choose(&mut rng) {
            if slot[y] != usize::MAX {
                hits[slot[y]] += 1;
            }
        }
    }
    Ok(hits.into_iter().map(|h| h as f64 / n_walks as f64).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::Exact;
    use proptest::prelude::*;

    // sectors: a (AI), g (Goods), s (Services)
    fn worked_example() -> (BinaryMatrix, BinaryMatrix) {
        let m_t = BinaryMatrix::from_rows(&[[1, 0, 0], [1, 0, 0]]);
        let m_td = BinaryMatrix::from_rows(&[[0, 1, 0], [0, 1, 1]]);
        (m_t, m_td)
    }

    #[test]
    fn worked_example_is_three_quarters() {
        let (m_t, m_td) = worked_example();
        let (b, defined, u, d) = assist_kernel::<Exact>(&m_t, &m_td, &[0], &[0, 1, 2]);
        assert!(defined[0]);
        assert_eq!(u, vec![2]);
        assert_eq!(d, vec![1, 2]);
        assert_eq!(b[1], Exact::new(3, 4));
        assert_eq!(b[2], Exact::new(1, 4));
        assert_eq!(b[0], Exact::from_integer(0));
        let (bf, ..) = assist_kernel::<f64>(&m_t, &m_td, &[0], &[1]);
        assert_eq!(bf[0], 0.75);
    }

    #[test]
    fn inactive_source_row_is_undefined() {
        let (m_t, m_td) = worked_example();
        let (_, defined, u, _) = assist_kernel::<f64>(&m_t, &m_td, &[0, 1], &[1]);
        assert_eq!(defined, vec![true, false]);
        assert_eq!(u[1], 0);
    }

    #[test]
    fn disjoint_countries_give_zero_matrix() {
        let m_t = BinaryMatrix::from_rows(&[[1, 0], [0, 0]]);
        let m_td = BinaryMatrix::from_rows(&[[0, 0], [0, 1]]);
        let (b, defined, ..) = assist_kernel::<f64>(&m_t, &m_td, &[0], &[0, 1]);
        assert!(defined[0]);
        assert!(b.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn oracle_contract() {
        let (m_t, m_td) = worked_example();
        assert_eq!(
            random_walk_oracle(&m_t, &m_td, 0, &[1], 0, 1),
            Err(AssistError::NoWalks)
        );
        assert_eq!(
            random_walk_oracle(&m_t, &m_td, 1, &[1], 10, 1),
            Err(AssistError::SourceNotActive(1))
        );
        let one = BinaryMatrix::from_rows(&[[1]]);
        assert_eq!(random_walk_oracle(&one, &one, 0, &[0], 1000, 3).unwrap(), vec![1.0]);
    }

    #[test]
    fn oracle_matches_worked_example() {
        let (m_t, m_td) = worked_example();
        let est = random_walk_oracle(&m_t, &m_td, 0, &[1], 1_000_000, 42).unwrap();
        assert!((est[0] - 0.75).abs() < 0.002, "{}", est[0]);
    }

    fn binary(rows: usize, cols: usize) -> impl Strategy<Value = BinaryMatrix> {
        prop::collection::vec(prop::bool::weighted(0.4), rows * cols)
            .prop_map(move |v| BinaryMatrix::from_fn(rows, cols, |r, c| v[r * cols + c]))
    }

    fn pair() -> impl Strategy<Value = (BinaryMatrix, BinaryMatrix)> {
        (1usize..=6, 1usize..=8).prop_flat_map(|(r, c)| (binary(r, c), binary(r, c)))
    }

    proptest! {
        #[test]
        fn zero_delay_detailed_balance_exact(m in pair().prop_map(|p| p.0)) {
            let all: Vec<usize> = (0..m.cols()).collect();
            let (b, defined, u, _) = assist_kernel::<Exact>(&m, &m, &all, &all);
            let n = all.len();
            for x in 0..n {
                for y in 0..n {
                    if defined[x] && defined[y] {
                        let lhs = Exact::from_integer(u[x] as i64) * b[x * n + y];
                        let rhs = Exact::from_integer(u[y] as i64) * b[y * n + x];
                        prop_assert_eq!(lhs, rhs);
                    }
                }
            }
        }

        #[test]
        fn rows_are_substochastic((m_t, m_td) in pair()) {
            let all: Vec<usize> = (0..m_t.cols()).collect();
            let (b, defined, u, d) = assist_kernel::<Exact>(&m_t, &m_td, &all, &all);
            let n = all.len();
            for x in 0..n {
                if !defined[x] { continue; }
                let row: Exact = b[x * n..(x + 1) * n].iter().copied().sum();
                let live = (0..m_t.rows()).filter(|&c| m_t.get(c, x) && d[c] > 0).count();
                prop_assert_eq!(row, Exact::new(live as i64, u[x] as i64));
                for v in &b[x * n..(x + 1) * n] {
                    prop_assert!(*v >= Exact::from_integer(0) && *v <= Exact::from_integer(1));
                }
            }
        }

        #[test]
        fn country_relabeling_invariance((m_t, m_td) in pair(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let mut perm: Vec<usize> = (0..m_t.rows()).collect();
            perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let all: Vec<usize> = (0..m_t.cols()).collect();
            let a = assist_kernel::<Exact>(&m_t, &m_td, &all, &all);
            let b = assist_kernel::<Exact>(&m_t.permute_rows(&perm), &m_td.permute_rows(&perm), &all, &all);
            prop_assert_eq!(a.0, b.0);
            prop_assert_eq!(a.1, b.1);
        }
    }
}
