use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{LmcError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseMode {
    /// Both subsets share one batch order; aligned batches carry the same
    /// class multiset.
    Fixed,
    /// Each subset is shuffled with its own stream.
    Independent,
}

impl NoiseMode {
    pub fn label(self) -> &'static str {
        match self {
            NoiseMode::Fixed => "fixed",
            NoiseMode::Independent => "independent",
        }
    }
}

/// Recorded in checkpoint metadata so runs state which alignment produced them.
pub const ALIGNMENT_RULE: &str = "class-sorted-position";

/// Per-epoch batch orders for a pair of training subsets.
///
/// In fixed mode each subset's rows are grouped by class (rows ascending
/// within a class) and one permutation over positions per epoch drives both
/// subsets, so position `j` holds the same class in A and B. A class whose
/// counts differ by one (an odd count split 50/50) sits one surplus row of
/// the larger subset out per epoch, chosen afresh each epoch, so every row is
/// still used over training. Epoch `e` draws from ChaCha stream `e` of the
/// noise seed; independent mode uses streams `2e` (A) and `2e + 1` (B).
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    pub mode: NoiseMode,
    pub noise_seed: u64,
    pub batch_size: usize,
    groups_a: Vec<Vec<usize>>,
    groups_b: Vec<Vec<usize>>,
}

/// Stream offset for the per-epoch choice of sat-out surplus rows.
const SURPLUS_STREAM: u64 = 1 << 40;
const DERIVE_STREAM: u64 = 1 << 41;

/// A seed for the `k`-th auxiliary model of a repeat (extra initializations,
/// their noise samples). Distinct `k` give unrelated seeds; the result never
/// depends on anything but `(base, k)`.
pub fn derive_seed(base: u64, k: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(DERIVE_STREAM + k);
    rng.random()
}

fn class_groups(data: &Dataset) -> Vec<Vec<usize>> {
    data.class_indices()
}

impl NoiseSchedule {
    pub fn build(
        a: &Dataset,
        b: &Dataset,
        batch_size: usize,
        noise_seed: u64,
        mode: NoiseMode,
    ) -> Result<Self> {
        if batch_size == 0 {
            return Err(LmcError::Precondition("batch size must be positive".into()));
        }
        let schedule = NoiseSchedule {
            mode,
            noise_seed,
            batch_size,
            groups_a: class_groups(a),
            groups_b: class_groups(b),
        };
        if mode == NoiseMode::Fixed {
            let ca = &a.info.class_counts;
            let cb = &b.info.class_counts;
            if ca.len() != cb.len() || ca.iter().zip(cb).any(|(x, y)| x.abs_diff(*y) > 1) {
                return Err(LmcError::Precondition(
                    "fixed noise needs subsets with equal per-class counts (up to one for odd splits); \
                     use independent noise for imbalanced splits"
                        .into(),
                ));
            }
        }
        let usable = schedule.rows_per_epoch();
        if batch_size > usable.0.min(usable.1) {
            return Err(LmcError::Precondition(format!(
                "batch size {batch_size} exceeds subset size {}",
                usable.0.min(usable.1)
            )));
        }
        Ok(schedule)
    }

    /// Schedule for a single model trained on `data` (independent mode).
    pub fn single(data: &Dataset, batch_size: usize, noise_seed: u64) -> Result<Self> {
        Self::build(data, data, batch_size, noise_seed, NoiseMode::Independent)
    }

    /// Rows of A and B visited per epoch.
    pub fn rows_per_epoch(&self) -> (usize, usize) {
        match self.mode {
            NoiseMode::Fixed => {
                let m = self
                    .groups_a
                    .iter()
                    .zip(&self.groups_b)
                    .map(|(x, y)| x.len().min(y.len()))
                    .sum();
                (m, m)
            }
            NoiseMode::Independent => (
                self.groups_a.iter().map(Vec::len).sum(),
                self.groups_b.iter().map(Vec::len).sum(),
            ),
        }
    }

    /// Mini-batches per epoch for A and B.
    pub fn batches_per_epoch(&self) -> (usize, usize) {
        let (a, b) = self.rows_per_epoch();
        (a / self.batch_size, b / self.batch_size)
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.noise_seed);
        rng.set_stream(stream);
        rng
    }

    fn permuted(&self, rows: Vec<usize>, stream: u64) -> Vec<usize> {
        let mut p: Vec<usize> = (0..rows.len()).collect();
        p.shuffle(&mut self.rng(stream));
        p.into_iter().map(|j| rows[j]).collect()
    }

    /// Class-aligned row lists for `epoch`, with surplus rows sat out.
    fn aligned(&self, epoch: u64) -> (Vec<usize>, Vec<usize>) {
        let mut rng = self.rng(SURPLUS_STREAM + epoch);
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for (ga, gb) in self.groups_a.iter().zip(&self.groups_b) {
            let m = ga.len().min(gb.len());
            for (g, out) in [(ga, &mut a), (gb, &mut b)] {
                if g.len() > m {
                    let skip = rng.random_range(0..g.len());
                    out.extend(
                        g.iter()
                            .enumerate()
                            .filter(|&(i, _)| i != skip)
                            .map(|(_, &r)| r),
                    );
                } else {
                    out.extend_from_slice(g);
                }
            }
        }
        (a, b)
    }

    /// Full visiting order of each subset in `epoch`.
    pub fn epoch_order(&self, epoch: usize) -> (Vec<usize>, Vec<usize>) {
        let e = epoch as u64;
        match self.mode {
            NoiseMode::Fixed => {
                let (a, b) = self.aligned(e);
                let mut p: Vec<usize> = (0..a.len()).collect();
                p.shuffle(&mut self.rng(e));
                (
                    p.iter().map(|&j| a[j]).collect(),
                    p.iter().map(|&j| b[j]).collect(),
                )
            }
            NoiseMode::Independent => (
                self.permuted(self.groups_a.concat(), 2 * e),
                self.permuted(self.groups_b.concat(), 2 * e + 1),
            ),
        }
    }

    /// Mini-batches of each subset for `epoch`; a trailing partial batch is dropped.
    pub fn batches(&self, epoch: usize) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
        let (a, b) = self.epoch_order(epoch);
        let cut = |o: Vec<usize>| {
            o.chunks_exact(self.batch_size)
                .map(|c| c.to_vec())
                .collect()
        };
        (cut(a), cut(b))
    }
}
