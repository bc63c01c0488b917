//! Overlapped, capacity-bounded partitioning.
//!
//! The number of subsets is `ceil(omega * N / gamma)`. Centroids come from
//! k-means on a sample, then every vector is walked through its centroids in
//! ascending distance. A centroid is accepted while its distance stays within
//! `epsilon` times the running mean of the distances accepted so far; an
//! accepted centroid whose subset is already at capacity resets the running
//! mean to infinity so the next candidate is always taken. A vector joins at
//! most `omega` subsets and no subset grows past `gamma`.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{VectorDataset, VectorId};
use crate::distance::squared_l2;
use crate::error::{Error, Result};
use crate::io::{self, put_u32, put_u32s, put_u64, Reader};
use crate::kmeans::kmeans;

/// Default relaxation factor.
pub const DEFAULT_EPSILON: f64 = 1.8;
pub const DEFAULT_KMEANS_ITERS: usize = 25;
/// Default k-means sample is `min(N, SAMPLE_PER_CENTROID * phi)` points.
pub const SAMPLE_PER_CENTROID: usize = 256;

#[derive(Clone, Debug, PartialEq)]
pub struct PartitionParams {
    /// Maximum number of subsets a vector may join.
    pub omega: u32,
    /// Relaxation factor on the running mean distance; must exceed 1.
    pub epsilon: f64,
    /// Capacity of every subset.
    pub gamma: usize,
    /// k-means sample size; `None` uses `min(N, 256 * phi)`.
    pub sample_size: Option<usize>,
    pub kmeans_iters: usize,
    pub seed: u64,
    /// Raise the number of subsets above the estimate.
    pub phi_override: Option<usize>,
}

impl PartitionParams {
    pub fn new(omega: u32, epsilon: f64, gamma: usize, seed: u64) -> Self {
        Self {
            omega,
            epsilon,
            gamma,
            sample_size: None,
            kmeans_iters: DEFAULT_KMEANS_ITERS,
            seed,
            phi_override: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.omega < 2 {
            return Err(Error::invalid(format!(
                "omega must be >= 2, got {}",
                self.omega
            )));
        }
        if self.epsilon.is_nan() || self.epsilon <= 1.0 {
            return Err(Error::invalid(format!(
                "epsilon must be > 1, got {}",
                self.epsilon
            )));
        }
        if self.gamma == 0 {
            return Err(Error::invalid("gamma must be positive"));
        }
        Ok(())
    }
}

/// `ceil(omega * n / gamma)` in exact integer arithmetic.
pub fn estimate_num_partitions(n: u64, omega: u32, gamma: u64) -> Result<u64> {
    if n == 0 || gamma == 0 {
        return Err(Error::invalid("n and gamma must be positive"));
    }
    if omega < 2 {
        return Err(Error::invalid(format!("omega must be >= 2, got {omega}")));
    }
    let num = omega as u128 * n as u128;
    let phi = num.div_ceil(gamma as u128);
    u64::try_from(phi).map_err(|_| Error::invalid("partition count overflows u64"))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Centroids {
    dim: usize,
    points: Vec<f32>,
}

impl Centroids {
    pub fn new(dim: usize, points: Vec<f32>) -> Result<Self> {
        if dim == 0 || points.is_empty() || !points.len().is_multiple_of(dim) {
            return Err(Error::invalid(
                "centroids need dim > 0 and at least one full point",
            ));
        }
        if points.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("centroids must be finite"));
        }
        Ok(Self { dim, points })
    }

    pub fn from_dataset(ds: &VectorDataset) -> Self {
        Self {
            dim: ds.dim(),
            points: ds.as_flat().to_vec(),
        }
    }

    pub fn phi(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize) -> &[f32] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_flat(&self) -> &[f32] {
        &self.points
    }

    /// Euclidean distance from `v` to every centroid.
    pub fn distances(&self, v: &[f32]) -> Vec<f32> {
        self.points
            .chunks_exact(self.dim)
            .map(|c| squared_l2(v, c).sqrt())
            .collect()
    }
}

/// Runs k-means on a uniform sample (without replacement) of the dataset.
pub fn train_centroids(
    dataset: &VectorDataset,
    phi: usize,
    params: &PartitionParams,
) -> Result<Centroids> {
    let n = dataset.len();
    let wanted = params
        .sample_size
        .unwrap_or_else(|| n.min(SAMPLE_PER_CENTROID.saturating_mul(phi)));
    if phi == 0 {
        return Err(Error::invalid("phi must be positive"));
    }
    let sample_size = wanted.min(n);
    if phi > sample_size {
        return Err(Error::invalid(format!(
            "phi={phi} exceeds the k-means sample of {sample_size} points"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let sample = if sample_size >= n {
        dataset.clone()
    } else {
        let mut ids: Vec<VectorId> = rand::seq::index::sample(&mut rng, n, sample_size)
            .into_iter()
            .map(|i| i as VectorId)
            .collect();
        ids.sort_unstable();
        dataset.select(&ids)?
    };
    let km = kmeans(
        &sample,
        phi,
        params.kmeans_iters,
        params.seed.wrapping_add(1),
    )?;
    Centroids::new(dataset.dim(), km.centroids)
}

/// Outcome of assigning one vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Assignment {
    /// Subset indices in the order they were accepted.
    pub subsets: Vec<u32>,
    /// Nearest centroid, whether or not it accepted the vector.
    pub nearest: u32,
}

#[derive(Clone, Copy, Debug)]
struct Candidate {
    dist: f32,
    index: u32,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Candidate {}
impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then(self.index.cmp(&other.index))
    }
}

/// Overload-aware assignment given precomputed centroid distances.
///
/// `sizes` holds the current subset sizes and is incremented for every subset
/// the vector joins. Returns the accepted subsets in extraction order; the
/// list is empty only if every subset is already full.
pub fn assign_by_distance(
    distances: &[f32],
    sizes: &mut [usize],
    params: &PartitionParams,
) -> Assignment {
    debug_assert_eq!(distances.len(), sizes.len());
    let mut queue: BinaryHeap<Reverse<Candidate>> = distances
        .iter()
        .enumerate()
        .map(|(i, &dist)| {
            Reverse(Candidate {
                dist,
                index: i as u32,
            })
        })
        .collect();
    let nearest = queue.peek().map_or(0, |c| c.0.index);
    let omega = params.omega as usize;
    let mut subsets = Vec::with_capacity(omega);
    let mut accepted = 0u32;
    let mut acc_dist = 0.0f64;
    let mut avg_dist = f64::INFINITY;
    while subsets.len() < omega {
        let Some(Reverse(Candidate { dist, index })) = queue.pop() else {
            break;
        };
        let dist = dist as f64;
        if dist <= params.epsilon * avg_dist {
            accepted += 1;
            acc_dist += dist;
            avg_dist = acc_dist / accepted as f64;
            let slot = &mut sizes[index as usize];
            if *slot < params.gamma {
                *slot += 1;
                subsets.push(index);
            } else {
                avg_dist = f64::INFINITY;
            }
        }
    }
    Assignment { subsets, nearest }
}

/// Assigns `v` against `centroids`; see [`assign_by_distance`].
pub fn assign_vector(
    v: &[f32],
    centroids: &Centroids,
    sizes: &mut [usize],
    params: &PartitionParams,
) -> Result<Assignment> {
    if v.len() != centroids.dim() {
        return Err(Error::DimMismatch {
            expected: centroids.dim(),
            actual: v.len(),
        });
    }
    if sizes.len() != centroids.phi() {
        return Err(Error::invalid(format!(
            "{} subset sizes for {} centroids",
            sizes.len(),
            centroids.phi()
        )));
    }
    Ok(assign_by_distance(&centroids.distances(v), sizes, params))
}

/// Centroids plus the member lists of every subset.
#[derive(Clone, Debug, PartialEq)]
pub struct PartitionPlan {
    pub n: usize,
    pub centroids: Centroids,
    /// Member ids of each subset, ascending.
    pub subsets: Vec<Vec<VectorId>>,
    pub params: PartitionParams,
}

impl PartitionPlan {
    pub fn phi(&self) -> usize {
        self.subsets.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.subsets.iter().map(Vec::len).collect()
    }

    /// For every vector, the subsets containing it (ascending).
    pub fn memberships(&self) -> Vec<Vec<u32>> {
        let mut out = vec![Vec::new(); self.n];
        for (s, members) in self.subsets.iter().enumerate() {
            for &id in members {
                out[id as usize].push(s as u32);
            }
        }
        out
    }

    /// Capacity, coverage and uniqueness checks.
    pub fn check_invariants(&self) -> Result<()> {
        if self.subsets.len() != self.centroids.phi() {
            return Err(Error::invalid("subset count differs from centroid count"));
        }
        let mut counts = vec![0u32; self.n];
        for (s, members) in self.subsets.iter().enumerate() {
            if members.len() > self.params.gamma {
                return Err(Error::invalid(format!(
                    "subset {s} holds {} > gamma={}",
                    members.len(),
                    self.params.gamma
                )));
            }
            if members.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::invalid(format!(
                    "subset {s} is not strictly ascending"
                )));
            }
            for &id in members {
                let c = counts
                    .get_mut(id as usize)
                    .ok_or(Error::IdOutOfRange { id, len: self.n })?;
                *c += 1;
            }
        }
        for (id, &c) in counts.iter().enumerate() {
            if c == 0 || c > self.params.omega {
                return Err(Error::invalid(format!(
                    "vector {id} is in {c} subsets, expected 1..={}",
                    self.params.omega
                )));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        put_u32(
            &mut out,
            u32::try_from(self.n).map_err(|_| Error::invalid("N too large"))?,
        );
        put_u32(&mut out, self.centroids.dim() as u32);
        put_u32(&mut out, self.phi() as u32);
        put_u32(&mut out, self.params.omega);
        out.extend_from_slice(&self.params.epsilon.to_le_bytes());
        put_u64(&mut out, self.params.gamma as u64);
        put_u64(&mut out, self.params.seed);
        let cents = VectorDataset::new(self.centroids.dim(), self.centroids.as_flat().to_vec())?;
        out.extend(io::encode_fvecs(&cents)?);
        for members in &self.subsets {
            put_u32(&mut out, members.len() as u32);
            put_u32s(&mut out, members);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let n = r.u32()? as usize;
        let dim = r.u32()? as usize;
        let phi = r.u32()? as usize;
        let omega = r.u32()?;
        let epsilon = r.f64()?;
        let gamma = r.u64()? as usize;
        let seed = r.u64()?;
        if dim == 0 || phi == 0 {
            return Err(Error::format("plan header has zero dim or phi"));
        }
        let cent_bytes = r.take(phi * (4 + 4 * dim))?;
        let cents = io::parse_fvecs(cent_bytes)?;
        if cents.dim() != dim || cents.len() != phi {
            return Err(Error::format("centroid block disagrees with header"));
        }
        let mut subsets = Vec::with_capacity(phi);
        for _ in 0..phi {
            let len = r.u32()? as usize;
            subsets.push(r.u32_vec(len)?);
        }
        r.finish()?;
        let mut params = PartitionParams::new(omega, epsilon, gamma, seed);
        if estimate_num_partitions(n as u64, omega, gamma as u64).ok() != Some(phi as u64) {
            params.phi_override = Some(phi);
        }
        Ok(Self {
            n,
            centroids: Centroids::from_dataset(&cents),
            subsets,
            params,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        io::write_file(path.as_ref(), &self.to_bytes()?)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&io::read_file(path.as_ref())?)
    }
}

/// Number of subsets to use: the estimate, or a larger override.
pub fn resolve_phi(n: usize, params: &PartitionParams) -> Result<usize> {
    let estimate = estimate_num_partitions(n as u64, params.omega, params.gamma as u64)? as usize;
    match params.phi_override {
        Some(phi) if phi < estimate => Err(Error::invalid(format!(
            "phi override {phi} is below the minimum {estimate}"
        ))),
        Some(phi) => Ok(phi),
        None => Ok(estimate),
    }
}

/// Trains centroids and assigns every vector in ascending id order.
pub fn partition(dataset: &VectorDataset, params: &PartitionParams) -> Result<PartitionPlan> {
    params.validate()?;
    let phi = resolve_phi(dataset.len(), params)?;
    let centroids = train_centroids(dataset, phi, params)?;
    log::debug!("trained {phi} centroids");
    partition_with_centroids(dataset, centroids, params)
}

/// Assignment pass over fixed centroids.
pub fn partition_with_centroids(
    dataset: &VectorDataset,
    centroids: Centroids,
    params: &PartitionParams,
) -> Result<PartitionPlan> {
    params.validate()?;
    if centroids.dim() != dataset.dim() {
        return Err(Error::DimMismatch {
            expected: dataset.dim(),
            actual: centroids.dim(),
        });
    }
    let phi = centroids.phi();
    let mut sizes = vec![0usize; phi];
    let mut subsets: Vec<Vec<VectorId>> = vec![Vec::new(); phi];
    for (id, row) in dataset.rows().enumerate() {
        let a = assign_by_distance(&centroids.distances(row), &mut sizes, params);
        if a.subsets.is_empty() {
            return Err(Error::AssignmentExhausted { id: id as VectorId });
        }
        for s in a.subsets {
            subsets[s as usize].push(id as VectorId);
        }
    }
    Ok(PartitionPlan {
        n: dataset.len(),
        centroids,
        subsets,
        params: params.clone(),
    })
}

/// Baseline that puts every vector into its `l` nearest subsets with no
/// capacity limit.
pub fn fixed_assignment_baseline(
    dataset: &VectorDataset,
    centroids: &Centroids,
    l: usize,
) -> Result<PartitionPlan> {
    let phi = centroids.phi();
    if l == 0 || l > phi {
        return Err(Error::invalid(format!("l={l} outside 1..={phi}")));
    }
    if centroids.dim() != dataset.dim() {
        return Err(Error::DimMismatch {
            expected: dataset.dim(),
            actual: centroids.dim(),
        });
    }
    let mut subsets: Vec<Vec<VectorId>> = vec![Vec::new(); phi];
    for (id, row) in dataset.rows().enumerate() {
        let dists = centroids.distances(row);
        let mut order: Vec<u32> = (0..phi as u32).collect();
        order.sort_by(|&a, &b| {
            dists[a as usize]
                .total_cmp(&dists[b as usize])
                .then(a.cmp(&b))
        });
        for &s in &order[..l] {
            subsets[s as usize].push(id as VectorId);
        }
    }
    let mut params = PartitionParams::new(l as u32, f64::INFINITY, dataset.len(), 0);
    params.phi_override = Some(phi);
    Ok(PartitionPlan {
        n: dataset.len(),
        centroids: centroids.clone(),
        subsets,
        params,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct OverlapStats {
    /// Total members over all subsets divided by N.
    pub avg_overlap: f64,
    pub max_subset: usize,
    pub min_subset: usize,
    /// `histogram[c]` = number of vectors that belong to exactly `c` subsets.
    pub histogram: Vec<usize>,
}

pub fn overlap_stats(plan: &PartitionPlan) -> OverlapStats {
    let total: usize = plan.subsets.iter().map(Vec::len).sum();
    let mut counts = vec![0usize; plan.n];
    for members in &plan.subsets {
        for &id in members {
            counts[id as usize] += 1;
        }
    }
    let top = counts.iter().copied().max().unwrap_or(0);
    let mut histogram = vec![0usize; top + 1];
    for c in counts {
        histogram[c] += 1;
    }
    OverlapStats {
        avg_overlap: total as f64 / plan.n as f64,
        max_subset: plan.subsets.iter().map(Vec::len).max().unwrap_or(0),
        min_subset: plan.subsets.iter().map(Vec::len).min().unwrap_or(0),
        histogram,
    }
}

/// Angle in degrees at `assigned_centroid` between the rays towards `v` and
/// towards `nearest_centroid`. `None` when either ray has zero length.
pub fn deviation_angle(
    v: &[f32],
    nearest_centroid: &[f32],
    assigned_centroid: &[f32],
) -> Result<Option<f64>> {
    if v.len() != nearest_centroid.len() || v.len() != assigned_centroid.len() {
        return Err(Error::DimMismatch {
            expected: v.len(),
            actual: if nearest_centroid.len() != v.len() {
                nearest_centroid.len()
            } else {
                assigned_centroid.len()
            },
        });
    }
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..v.len() {
        let a = v[i] as f64 - assigned_centroid[i] as f64;
        let b = nearest_centroid[i] as f64 - assigned_centroid[i] as f64;
        dot += a * b;
        na += a * a;
        nb += b * b;
    }
    if na == 0.0 || nb == 0.0 {
        return Ok(None);
    }
    let cos = (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0);
    Ok(Some(cos.acos().to_degrees()))
}

/// Distribution of deviation angles over vectors whose nearest subset did
/// not receive them.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DeviationSummary {
    pub relocated: usize,
    pub undefined: usize,
    pub angles: Vec<f64>,
}

impl DeviationSummary {
    pub fn max(&self) -> Option<f64> {
        self.angles.iter().copied().reduce(f64::max)
    }

    pub fn mean(&self) -> Option<f64> {
        (!self.angles.is_empty())
            .then(|| self.angles.iter().sum::<f64>() / self.angles.len() as f64)
    }

    pub fn count_at_least(&self, degrees: f64) -> usize {
        self.angles.iter().filter(|&&a| a >= degrees).count()
    }
}

/// For every vector that was kept out of its nearest subset, measures the
/// angle between its true position and the nearest centroid as seen from the
/// closest centroid it was actually placed in.
pub fn deviation_report(dataset: &VectorDataset, plan: &PartitionPlan) -> DeviationSummary {
    let mut summary = DeviationSummary::default();
    for (id, subs) in plan.memberships().iter().enumerate() {
        let v = dataset.row(id as VectorId);
        let dists = plan.centroids.distances(v);
        let nearest = (0..dists.len())
            .min_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(a.cmp(&b)))
            .unwrap();
        if subs.is_empty() || subs.contains(&(nearest as u32)) {
            continue;
        }
        let assigned = *subs
            .iter()
            .min_by(|&&a, &&b| {
                dists[a as usize]
                    .total_cmp(&dists[b as usize])
                    .then(a.cmp(&b))
            })
            .unwrap();
        summary.relocated += 1;
        match deviation_angle(
            v,
            plan.centroids.get(nearest),
            plan.centroids.get(assigned as usize),
        ) {
            Ok(Some(a)) => summary.angles.push(a),
            _ => summary.undefined += 1,
        }
    }
    summary
}
