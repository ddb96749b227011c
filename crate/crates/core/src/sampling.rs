//! Stratified splits, class-balanced batches and symmetric label noise.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{CellRecord, Dataset};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StratifyKey {
    /// Split individual cells, stratified by cell label.
    CellLabel,
    /// Split whole bags, stratified by bag label.
    BagLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub fractions: Vec<f64>,
    pub stratify_key: StratifyKey,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(fractions: &[f64], stratify_key: StratifyKey, seed: u64) -> Self {
        SplitSpec {
            fractions: fractions.to_vec(),
            stratify_key,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.fractions.is_empty() {
            return Err(Error::config("fractions", "at least one part is required"));
        }
        if let Some(f) = self.fractions.iter().find(|f| !(**f > 0.0 && f.is_finite())) {
            return Err(Error::config("fractions", format!("{f} is not a positive fraction")));
        }
        let total: f64 = self.fractions.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::config("fractions", format!("sum to {total}, expected 1")));
        }
        Ok(())
    }
}

/// Apportions `n` items to parts in proportion to `fractions`.
///
/// Each part first gets `floor(f * n)`; the leftover items go one each to the
/// parts with the largest fractional remainders, ties to the lower part index.
/// Every count is therefore within 1 of its exact quota.
pub fn largest_remainder(n: usize, fractions: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &part in order.iter().cycle().take(n.saturating_sub(assigned)) {
        counts[part] += 1;
    }
    counts
}

/// Splits `ds` into `spec.fractions.len()` disjoint parts whose union is `ds`,
/// preserving class proportions within every part.
///
/// Members of each stratum are shuffled with the split seed (strata visited
/// in ascending class order) and dealt out in part order. With
/// [`StratifyKey::BagLabel`] the members are whole bags, so a patient never
/// spans two parts; with [`StratifyKey::CellLabel`] cells are split
/// individually and each part keeps the non-empty remainder of every bag.
pub fn stratified_split(ds: &Dataset, spec: &SplitSpec) -> Result<Vec<Dataset>> {
    spec.validate()?;
    let parts = spec.fractions.len();
    let k = ds.num_classes();
    let mut rng = Rng::new(spec.seed);

    // stratum members as ids: cell ids or patient ids
    let mut strata: Vec<Vec<u64>> = vec![Vec::new(); k];
    match spec.stratify_key {
        StratifyKey::CellLabel => {
            for c in ds.cells() {
                strata[c.label].push(c.cell_id);
            }
        }
        StratifyKey::BagLabel => {
            for b in ds.bags() {
                strata[b.bag_label].push(b.patient_id);
            }
        }
    }

    let mut assignment: Vec<HashSet<u64>> = vec![HashSet::new(); parts];
    for (class, members) in strata.iter_mut().enumerate() {
        if members.is_empty() {
            continue;
        }
        if members.len() < parts {
            return Err(Error::InfeasibleSplit {
                class,
                size: members.len(),
                parts,
            });
        }
        rng.shuffle(members);
        let counts = largest_remainder(members.len(), &spec.fractions);
        let mut rest = members.as_slice();
        for (part, &count) in counts.iter().enumerate() {
            let (take, tail) = rest.split_at(count);
            assignment[part].extend(take);
            rest = tail;
        }
    }

    assignment
        .iter()
        .map(|ids| match spec.stratify_key {
            StratifyKey::CellLabel => ds.filter_cells(|c| ids.contains(&c.cell_id)),
            StratifyKey::BagLabel => ds.select_patients(ids),
        })
        .collect()
}

/// Class-balanced minibatches over a dataset.
///
/// Every batch holds `batch_size / K` samples of each class, with the
/// remainder handed out one each to the lowest class indices. Each class
/// draws from its own shuffled pool and reshuffles when the pool runs dry,
/// so minority classes are resampled within an epoch.
#[derive(Debug, Clone)]
pub struct ProportionalSampler {
    class_members: Vec<Vec<usize>>,
    per_class: Vec<usize>,
    batch_size: usize,
    batches_per_epoch: usize,
    seed: u64,
}

impl ProportionalSampler {
    pub fn new(ds: &Dataset, batch_size: usize, seed: u64) -> Result<Self> {
        let k = ds.num_classes();
        if batch_size < k {
            return Err(Error::config(
                "batch_size",
                format!("{batch_size} is smaller than the {k} classes"),
            ));
        }
        let mut class_members = vec![Vec::new(); k];
        for (i, c) in ds.cells().iter().enumerate() {
            class_members[c.label].push(i);
        }
        if let Some(empty) = class_members.iter().position(Vec::is_empty) {
            return Err(Error::InvalidDataset(format!(
                "class {empty} has no training samples"
            )));
        }
        let per_class = (0..k)
            .map(|c| batch_size / k + usize::from(c < batch_size % k))
            .collect();
        let max_count = class_members.iter().map(Vec::len).max().unwrap_or(0);
        let batches_per_epoch = (max_count * k).div_ceil(batch_size);
        Ok(ProportionalSampler {
            class_members,
            per_class,
            batch_size,
            batches_per_epoch,
            seed,
        })
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.batches_per_epoch
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    /// Samples of each class in every batch.
    pub fn per_class(&self) -> &[usize] {
        &self.per_class
    }

    /// The batches of one epoch, as positions into the dataset's cells.
    pub fn epoch(&self, epoch: u64) -> EpochBatches<'_> {
        let mut rng = Rng::derived(self.seed, &[epoch]);
        let pools = self
            .class_members
            .iter()
            .map(|m| {
                let mut pool = m.clone();
                rng.shuffle(&mut pool);
                pool
            })
            .collect();
        EpochBatches {
            sampler: self,
            rng,
            pools,
            cursors: vec![0; self.class_members.len()],
            remaining: self.batches_per_epoch,
        }
    }
}

#[derive(Debug)]
pub struct EpochBatches<'a> {
    sampler: &'a ProportionalSampler,
    rng: Rng,
    pools: Vec<Vec<usize>>,
    cursors: Vec<usize>,
    remaining: usize,
}

impl Iterator for EpochBatches<'_> {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        let mut batch = Vec::with_capacity(self.sampler.batch_size);
        for (class, &take) in self.sampler.per_class.iter().enumerate() {
            for _ in 0..take {
                if self.cursors[class] == self.pools[class].len() {
                    self.rng.shuffle(&mut self.pools[class]);
                    self.cursors[class] = 0;
                }
                batch.push(self.pools[class][self.cursors[class]]);
                self.cursors[class] += 1;
            }
        }
        Some(batch)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        (self.remaining, Some(self.remaining))
    }
}

impl ExactSizeIterator for EpochBatches<'_> {}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Probability that a cell label is replaced by a different class.
    pub rate: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rate) {
            return Err(Error::config("rate", format!("{} is outside [0, 1]", self.rate)));
        }
        Ok(())
    }
}

/// Which cells had their label replaced, in cell-id order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlipMask {
    pub entries: Vec<(u64, bool)>,
}

impl FlipMask {
    pub fn flipped_count(&self) -> usize {
        self.entries.iter().filter(|(_, f)| *f).count()
    }

    /// `cell_id,flipped` lines with `flipped` written as 0 or 1.
    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(self.entries.len() * 8);
        for (id, flipped) in &self.entries {
            let _ = writeln!(s, "{id},{}", u8::from(*flipped));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let n = i + 1;
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 2 {
                return Err(Error::Arity {
                    line: n,
                    expected: 2,
                    found: fields.len(),
                });
            }
            let id = fields[0].parse().map_err(|_| Error::Parse {
                line: n,
                reason: format!("invalid cell id {:?}", fields[0]),
            })?;
            let flipped = match fields[1] {
                "0" => false,
                "1" => true,
                other => {
                    return Err(Error::Parse {
                        line: n,
                        reason: format!("flag must be 0 or 1, found {other:?}"),
                    })
                }
            };
            entries.push((id, flipped));
        }
        Ok(FlipMask { entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(&path, self.to_text()).map_err(|e| Error::file(&path, e))?;
        Ok(())
    }
}

/// Symmetric label noise: each cell label is independently replaced, with
/// probability `spec.rate`, by a class drawn uniformly from the other K − 1.
/// Bag labels are left untouched.
pub fn inject_noise(ds: &Dataset, spec: &NoiseSpec) -> Result<(Dataset, FlipMask)> {
    spec.validate()?;
    let k = ds.num_classes();
    if k < 2 && spec.rate > 0.0 {
        return Err(Error::config("rate", "label noise needs at least two classes"));
    }
    let mut rng = Rng::new(spec.seed);
    let mut entries = Vec::with_capacity(ds.len());
    let cells: Vec<CellRecord> = ds
        .cells()
        .iter()
        .map(|c| {
            let flipped = rng.bernoulli(spec.rate);
            entries.push((c.cell_id, flipped));
            let label = if flipped {
                (c.label + 1 + rng.below(k - 1)) % k
            } else {
                c.label
            };
            CellRecord { label, ..c.clone() }
        })
        .collect();
    let noisy = Dataset::new(ds.label_space(), ds.dim(), cells, ds.bags().to_vec())?;
    Ok((noisy, FlipMask { entries }))
}
