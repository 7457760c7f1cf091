//! Observation tuples for training: endpoint couplings and grouped
//! multi-marginal tuples.

use std::collections::BTreeMap;

use rand::Rng as _;

use crate::assignment;
use crate::datasets::PointSampler;
use crate::error::{Error, Result};
use crate::points::Points;
use crate::rng::Rng;

/// Largest minibatch accepted by [`ot_coupling`].
pub const MAX_OT_BATCH: usize = 4096;

/// Row-aligned observation tuples. `slices[0]` is the source (t = 0) and the
/// last slice is the target (t = 1).
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub slices: Vec<Points>,
    pub covariates: Option<Points>,
}

impl Batch {
    pub fn pair(source: Points, target: Points) -> Result<Self> {
        let b = Batch {
            slices: vec![source, target],
            covariates: None,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn len(&self) -> usize {
        self.slices.first().map_or(0, |s| s.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn source(&self) -> &Points {
        &self.slices[0]
    }

    pub fn target(&self) -> &Points {
        &self.slices[self.slices.len() - 1]
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        for s in &self.slices {
            if s.len() != n {
                return Err(Error::SizeMismatch { left: n, right: s.len() });
            }
            if !s.is_finite() {
                return Err(Error::config("batch contains non-finite values"));
            }
        }
        if let Some(c) = &self.covariates {
            if c.len() != n {
                return Err(Error::SizeMismatch { left: n, right: c.len() });
            }
        }
        Ok(())
    }

    /// Reorder the target slice so that row `i` pairs with `target[perm[i]]`.
    pub fn permute_target(&mut self, perm: &[usize]) {
        let last = self.slices.len() - 1;
        self.slices[last] = self.slices[last].select(perm);
    }
}

/// Fresh i.i.d. source draws paired by row with target rows drawn uniformly
/// with replacement.
pub fn independent_coupling(
    source: &dyn PointSampler,
    target_rows: &Points,
    batch_size: usize,
    rng: &mut Rng,
) -> Result<Batch> {
    if target_rows.is_empty() {
        return Err(Error::Empty("target set"));
    }
    if batch_size == 0 {
        return Err(Error::config("batch size must be at least 1"));
    }
    if source.dim() != target_rows.dim() {
        return Err(Error::DimensionMismatch {
            expected: target_rows.dim(),
            got: source.dim(),
        });
    }
    let src = source.sample(batch_size, rng);
    let idx: Vec<usize> = (0..batch_size)
        .map(|_| rng.gen_range(0..target_rows.len()))
        .collect();
    Batch::pair(src, target_rows.select(&idx))
}

/// Squared Euclidean cost matrix, row-major.
pub fn sq_cost_matrix(a: &Points, b: &Points) -> Vec<f64> {
    let mut c = Vec::with_capacity(a.len() * b.len());
    for ra in a.rows() {
        for rb in b.rows() {
            c.push(ra.iter().zip(rb).map(|(x, y)| (x - y) * (x - y)).sum());
        }
    }
    c
}

/// Exact minibatch OT pairing under squared Euclidean cost.
///
/// Returns `perm` such that pairing `source[i]` with `target[perm[i]]`
/// minimizes total cost. This is an assignment within the minibatch, i.e. a
/// minibatch approximation of the population OT plan.
pub fn ot_coupling(source: &Points, target: &Points) -> Result<Vec<usize>> {
    if source.len() != target.len() {
        return Err(Error::SizeMismatch {
            left: source.len(),
            right: target.len(),
        });
    }
    if source.dim() != target.dim() {
        return Err(Error::DimensionMismatch {
            expected: source.dim(),
            got: target.dim(),
        });
    }
    let n = source.len();
    if n > MAX_OT_BATCH {
        return Err(Error::config(format!(
            "OT minibatch of {n} exceeds the limit of {MAX_OT_BATCH}"
        )));
    }
    let cost = sq_cost_matrix(source, target);
    Ok(assignment::solve(&cost, n))
}

/// Sample subject-aligned tuples.
///
/// `slices[m]` holds the records observed at the m-th time and
/// `group_ids[m][r]` the subject of record `r`. Each batch row picks a subject
/// uniformly, then one of that subject's records uniformly within every
/// slice. When `noise_source` is given, a fresh draw from it is prepended as
/// slice 0.
pub fn grouped_tuple_sampler(
    slices: &[Points],
    group_ids: &[Vec<usize>],
    batch_size: usize,
    noise_source: Option<&dyn PointSampler>,
    rng: &mut Rng,
) -> Result<Batch> {
    let index = GroupIndex::new(slices, group_ids)?;
    index.sample(slices, batch_size, noise_source, rng)
}

/// Precomputed subject → records lookup for [`grouped_tuple_sampler`].
#[derive(Debug, Clone)]
pub struct GroupIndex {
    subjects: Vec<usize>,
    /// records[m][k] = rows of slice m belonging to subjects[k]
    records: Vec<Vec<Vec<usize>>>,
}

impl GroupIndex {
    pub fn new(slices: &[Points], group_ids: &[Vec<usize>]) -> Result<Self> {
        if slices.is_empty() {
            return Err(Error::Empty("slices"));
        }
        if slices.len() != group_ids.len() {
            return Err(Error::SizeMismatch {
                left: slices.len(),
                right: group_ids.len(),
            });
        }
        let dim = slices[0].dim();
        let mut per_slice: Vec<BTreeMap<usize, Vec<usize>>> = Vec::with_capacity(slices.len());
        for (s, ids) in slices.iter().zip(group_ids) {
            if s.dim() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: s.dim() });
            }
            if s.len() != ids.len() {
                return Err(Error::SizeMismatch { left: s.len(), right: ids.len() });
            }
            let mut map: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for (r, &g) in ids.iter().enumerate() {
                map.entry(g).or_default().push(r);
            }
            per_slice.push(map);
        }
        let subjects: Vec<usize> = per_slice[0].keys().copied().collect();
        if subjects.is_empty() {
            return Err(Error::Empty("subjects"));
        }
        for (m, map) in per_slice.iter().enumerate() {
            if map.len() != subjects.len() || !subjects.iter().all(|g| map.contains_key(g)) {
                return Err(Error::config(format!(
                    "slice {m} does not cover the same subjects as slice 0"
                )));
            }
        }
        let records = per_slice
            .into_iter()
            .map(|mut map| subjects.iter().map(|g| map.remove(g).unwrap()).collect())
            .collect();
        Ok(GroupIndex { subjects, records })
    }

    pub fn subjects(&self) -> &[usize] {
        &self.subjects
    }

    /// Draw a batch; also returns the chosen subject of every row.
    pub fn sample_with_subjects(
        &self,
        slices: &[Points],
        batch_size: usize,
        noise_source: Option<&dyn PointSampler>,
        rng: &mut Rng,
    ) -> Result<(Batch, Vec<usize>)> {
        if batch_size == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        let dim = slices[0].dim();
        let mut out: Vec<Points> = Vec::with_capacity(slices.len() + 1);
        if let Some(src) = noise_source {
            if src.dim() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: src.dim() });
            }
            out.push(src.sample(batch_size, rng));
        }
        let mut picks = Vec::with_capacity(batch_size);
        let mut rows: Vec<Vec<usize>> = vec![Vec::with_capacity(batch_size); slices.len()];
        for _ in 0..batch_size {
            let k = rng.gen_range(0..self.subjects.len());
            picks.push(self.subjects[k]);
            for (m, recs) in self.records.iter().enumerate() {
                let r = &recs[k];
                let pick = if r.len() == 1 { r[0] } else { r[rng.gen_range(0..r.len())] };
                rows[m].push(pick);
            }
        }
        for (s, idx) in slices.iter().zip(&rows) {
            out.push(s.select(idx));
        }
        let batch = Batch {
            slices: out,
            covariates: None,
        };
        batch.validate()?;
        Ok((batch, picks))
    }

    pub fn sample(
        &self,
        slices: &[Points],
        batch_size: usize,
        noise_source: Option<&dyn PointSampler>,
        rng: &mut Rng,
    ) -> Result<Batch> {
        Ok(self.sample_with_subjects(slices, batch_size, noise_source, rng)?.0)
    }
}
