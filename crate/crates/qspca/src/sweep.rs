//! Hyperparameter sweeps over (rank, latent bitwidth, extra sparsity) with
//! Pareto filtering on (compression ratio up, held-out MSE down).

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::report::SizeReport;
use crate::solver::{objective, solve, CalibrationSet, SolverConfig, SparsityTarget};
use crate::tensor::{tile_reshape, WeightTensor};
use crate::codec;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub ranks: Vec<usize>,
    pub latent_bits: Vec<u8>,
    pub extra_sparsity: Vec<f64>,
}

impl SweepGrid {
    pub fn cells(&self) -> Vec<(usize, u8, f64)> {
        let mut cells = Vec::new();
        for &k in &self.ranks {
            for &b in &self.latent_bits {
                for &e in &self.extra_sparsity {
                    cells.push((k, b, e));
                }
            }
        }
        cells
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if self.cells().is_empty() {
            return Err(Error::InvalidArgument("empty sweep grid".into()));
        }
        if let Some(&k) = self.ranks.iter().find(|&&k| k < 1 || k > d) {
            return Err(Error::RankRange { k, max: d });
        }
        if let Some(&b) = self.latent_bits.iter().find(|&&b| !(2..=8).contains(&b)) {
            return Err(Error::BitwidthRange {
                bits: b,
                min: 2,
                max: 8,
            });
        }
        if let Some(&e) = self
            .extra_sparsity
            .iter()
            .find(|&&e| !(0.0..=0.9).contains(&e))
        {
            return Err(Error::InvalidArgument(format!(
                "extra sparsity {e} outside [0, 0.9]"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: usize,
    pub d: usize,
    pub b_z: u8,
    pub e: f64,
    pub compression_ratio: f64,
    /// Held-out (validation subset) reconstruction MSE.
    pub mse: f64,
    pub wall_time_s: f64,
    pub pareto: bool,
}

/// A cell that failed, with the offending configuration.
#[derive(Debug, Clone)]
pub struct SweepFailure {
    pub k: usize,
    pub b_z: u8,
    pub e: f64,
    pub message: String,
}

pub struct SweepOutput {
    pub rows: Vec<SweepRow>,
    pub failures: Vec<SweepFailure>,
}

/// Runs every grid cell (in the current rayon pool), one independent solve
/// per cell. Failed cells are recorded and the sweep continues.
pub fn run_sweep(
    weights: &WeightTensor,
    cal: &CalibrationSet,
    base: &SolverConfig,
    d: usize,
    grid: &SweepGrid,
) -> Result<SweepOutput> {
    grid.validate(d)?;
    let tiles = tile_reshape(weights, d)?;
    let cells = grid.cells();
    let results: Vec<std::result::Result<SweepRow, SweepFailure>> = cells
        .par_iter()
        .map(|&(k, b_z, e)| {
            let started = Instant::now();
            let mut cfg = base.clone();
            cfg.rank = k;
            cfg.latent_bits = b_z;
            cfg.sparsity = SparsityTarget::ExtraFraction(e);
            let fail = |message: String| SweepFailure {
                k,
                b_z,
                e,
                message,
            };
            let outcome = solve(&tiles, cal, &cfg).map_err(|err| fail(err.to_string()))?;
            let mse = objective(&outcome.pair, &outcome.mean, cal, cal.validation())
                .map_err(|err| fail(err.to_string()))?;
            let layer = codec::encode(&outcome.pair, &outcome.mean, weights.shape())
                .map_err(|err| fail(err.to_string()))?;
            let size = SizeReport::from_layer(&layer).map_err(|err| fail(err.to_string()))?;
            Ok(SweepRow {
                k,
                d,
                b_z,
                e,
                compression_ratio: size.compression_ratio,
                mse,
                wall_time_s: started.elapsed().as_secs_f64(),
                pareto: false,
            })
        })
        .collect();

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(row) => rows.push(row),
            Err(f) => failures.push(f),
        }
    }
    let flags = pareto_flags(&rows.iter().map(|r| (r.compression_ratio, r.mse)).collect::<Vec<_>>());
    for (row, flag) in rows.iter_mut().zip(flags) {
        row.pareto = flag;
    }
    Ok(SweepOutput { rows, failures })
}

/// Non-domination flags for (maximize ratio, minimize mse) points.
///
/// Sort-and-scan: walk ratio groups in descending order, keep the rows that
/// strictly improve on the best MSE seen at higher ratios.
pub fn pareto_flags(points: &[(f64, f64)]) -> Vec<bool> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        points[b]
            .0
            .total_cmp(&points[a].0)
            .then(points[a].1.total_cmp(&points[b].1))
    });
    let mut flags = vec![false; points.len()];
    let mut best_mse_above = f64::INFINITY;
    let mut i = 0;
    while i < order.len() {
        // One group of equal ratios.
        let mut j = i;
        while j < order.len() && points[order[j]].0 == points[order[i]].0 {
            j += 1;
        }
        let group_min = points[order[i]].1; // sorted ascending within group
        for &idx in &order[i..j] {
            flags[idx] = points[idx].1 == group_min && group_min < best_mse_above;
        }
        best_mse_above = best_mse_above.min(group_min);
        i = j;
    }
    flags
}

pub const SWEEP_CSV_HEADER: &str = "k,d,b_z,e,compression_ratio,mse,wall_time_s,pareto";

pub fn rows_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.k, r.d, r.b_z, r.e, r.compression_ratio, r.mse, r.wall_time_s, r.pareto
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_force_pareto(points: &[(f64, f64)]) -> Vec<bool> {
        points
            .iter()
            .map(|&(cr, mse)| {
                !points.iter().any(|&(ocr, omse)| {
                    ocr >= cr && omse <= mse && (ocr > cr || omse < mse)
                })
            })
            .collect()
    }

    #[test]
    fn pareto_single_point_is_kept() {
        assert_eq!(pareto_flags(&[(2.0, 0.5)]), vec![true]);
    }

    #[test]
    fn pareto_dominated_point_is_dropped() {
        // Second point has lower ratio AND higher error.
        let flags = pareto_flags(&[(3.0, 0.1), (2.0, 0.2)]);
        assert_eq!(flags, vec![true, false]);
    }

    #[test]
    fn pareto_duplicates_survive_together() {
        let flags = pareto_flags(&[(2.0, 0.5), (2.0, 0.5), (1.0, 0.1)]);
        assert_eq!(flags, vec![true, true, true]);
    }

    #[test]
    fn pareto_matches_brute_force_on_random_points() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for _ in 0..200 {
            let n = rng.random_range(1..=20usize);
            let points: Vec<(f64, f64)> = (0..n)
                .map(|_| {
                    (
                        rng.random_range(1..=6) as f64,
                        rng.random_range(1..=6) as f64 / 10.0,
                    )
                })
                .collect();
            assert_eq!(
                pareto_flags(&points),
                brute_force_pareto(&points),
                "points {points:?}"
            );
        }
    }

    #[test]
    fn grid_validation() {
        let grid = SweepGrid {
            ranks: vec![2, 4],
            latent_bits: vec![3],
            extra_sparsity: vec![0.0, 0.2],
        };
        assert!(grid.validate(4).is_ok());
        assert_eq!(grid.cells().len(), 4);
        assert!(grid.validate(3).is_err()); // rank 4 > d
        let bad_bits = SweepGrid {
            ranks: vec![2],
            latent_bits: vec![9],
            extra_sparsity: vec![0.0],
        };
        assert!(bad_bits.validate(4).is_err());
        let bad_e = SweepGrid {
            ranks: vec![2],
            latent_bits: vec![3],
            extra_sparsity: vec![0.95],
        };
        assert!(bad_e.validate(4).is_err());
    }

    #[test]
    fn csv_schema_is_stable() {
        let rows = vec![SweepRow {
            k: 2,
            d: 4,
            b_z: 3,
            e: 0.1,
            compression_ratio: 10.0,
            mse: 0.5,
            wall_time_s: 0.01,
            pareto: true,
        }];
        let csv = rows_to_csv(&rows);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(SWEEP_CSV_HEADER));
        assert_eq!(lines.next(), Some("2,4,3,0.1,10,0.5,0.01,true"));
    }
}
