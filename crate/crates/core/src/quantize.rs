//! Product quantization with asymmetric distance computation.
//!
//! Encoding happens once per vector, independently of how many subsets the
//! vector joins; [`Encoder`] counts invocations so callers can check that.

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;

use crate::dataset::{VectorDataset, VectorId};
use crate::distance::squared_l2;
use crate::error::{Error, Result};
use crate::io::{self, put_u32, Reader};
use crate::kmeans::{kmeans, nearest_centroid};

const PQ_KMEANS_ITERS: usize = 25;

#[derive(Clone, Debug, PartialEq)]
pub struct PqCodebook {
    m: usize,
    ks: usize,
    sub_dim: usize,
    /// `m * ks * sub_dim` floats; subspace-major.
    codewords: Vec<f32>,
}

impl PqCodebook {
    pub fn new(m: usize, ks: usize, sub_dim: usize, codewords: Vec<f32>) -> Result<Self> {
        if m == 0 || sub_dim == 0 || ks == 0 || ks > 256 {
            return Err(Error::invalid(format!(
                "bad codebook shape m={m} ks={ks} sub_dim={sub_dim}"
            )));
        }
        if codewords.len() != m * ks * sub_dim {
            return Err(Error::format(
                "codeword buffer does not match codebook shape",
            ));
        }
        if codewords.iter().any(|x| !x.is_finite()) {
            return Err(Error::format("codewords must be finite"));
        }
        Ok(Self {
            m,
            ks,
            sub_dim,
            codewords,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn ks(&self) -> usize {
        self.ks
    }

    pub fn sub_dim(&self) -> usize {
        self.sub_dim
    }

    pub fn dim(&self) -> usize {
        self.m * self.sub_dim
    }

    fn subspace(&self, j: usize) -> &[f32] {
        let w = self.ks * self.sub_dim;
        &self.codewords[j * w..(j + 1) * w]
    }

    pub fn codeword(&self, j: usize, c: usize) -> &[f32] {
        &self.subspace(j)[c * self.sub_dim..(c + 1) * self.sub_dim]
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len == self.dim() {
            Ok(())
        } else {
            Err(Error::DimMismatch {
                expected: self.dim(),
                actual: len,
            })
        }
    }

    /// Nearest codeword per subspace, ties to the lower index.
    fn encode_into(&self, v: &[f32], out: &mut [u8]) {
        for (j, slot) in out.iter_mut().enumerate() {
            let sub = &v[j * self.sub_dim..(j + 1) * self.sub_dim];
            *slot = nearest_centroid(sub, self.subspace(j), self.sub_dim).0 as u8;
        }
    }

    pub fn decode(&self, code: &[u8]) -> Result<Vec<f32>> {
        if code.len() != self.m {
            return Err(Error::DimMismatch {
                expected: self.m,
                actual: code.len(),
            });
        }
        let mut out = Vec::with_capacity(self.dim());
        for (j, &c) in code.iter().enumerate() {
            if c as usize >= self.ks {
                return Err(Error::format(format!("code {c} >= ks={}", self.ks)));
            }
            out.extend_from_slice(self.codeword(j, c as usize));
        }
        Ok(out)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 4 * self.codewords.len());
        put_u32(&mut out, self.m as u32);
        put_u32(&mut out, self.ks as u32);
        put_u32(&mut out, self.sub_dim as u32);
        for x in &self.codewords {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let m = r.u32()? as usize;
        let ks = r.u32()? as usize;
        let sub_dim = r.u32()? as usize;
        let words = r.f32_vec(m * ks * sub_dim)?;
        r.finish()?;
        Self::new(m, ks, sub_dim, words)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        io::write_file(path.as_ref(), &self.to_bytes())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&io::read_file(path.as_ref())?)
    }
}

/// Trains `m` independent k-means codebooks of `ks` words on the sample's
/// sub-vectors.
pub fn train_pq(sample: &VectorDataset, m: usize, ks: usize, seed: u64) -> Result<PqCodebook> {
    if m == 0 || !sample.dim().is_multiple_of(m) {
        return Err(Error::invalid(format!(
            "m={m} does not divide dim={}",
            sample.dim()
        )));
    }
    if ks == 0 || ks > 256 {
        return Err(Error::invalid(format!("ks={ks} outside 1..=256")));
    }
    if sample.len() < ks {
        return Err(Error::invalid(format!(
            "sample of {} vectors is smaller than ks={ks}",
            sample.len()
        )));
    }
    let sub_dim = sample.dim() / m;
    let books = (0..m)
        .into_par_iter()
        .map(|j| {
            let mut data = Vec::with_capacity(sample.len() * sub_dim);
            for row in sample.rows() {
                data.extend_from_slice(&row[j * sub_dim..(j + 1) * sub_dim]);
            }
            let sub = VectorDataset::new(sub_dim, data)?;
            let km = kmeans(&sub, ks, PQ_KMEANS_ITERS, seed.wrapping_add(j as u64))?;
            Ok(km.centroids)
        })
        .collect::<Result<Vec<_>>>()?;
    PqCodebook::new(m, ks, sub_dim, books.concat())
}

/// Encodes vectors against a codebook, counting every call.
pub struct Encoder<'a> {
    codebook: &'a PqCodebook,
    calls: AtomicU64,
}

impl<'a> Encoder<'a> {
    pub fn new(codebook: &'a PqCodebook) -> Self {
        Self {
            codebook,
            calls: AtomicU64::new(0),
        }
    }

    pub fn encode(&self, v: &[f32]) -> Result<Vec<u8>> {
        self.codebook.check_dim(v.len())?;
        self.calls.fetch_add(1, Ordering::Relaxed);
        let mut out = vec![0u8; self.codebook.m];
        self.codebook.encode_into(v, &mut out);
        Ok(out)
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    /// Encodes the given ids in parallel.
    pub fn encode_ids(&self, dataset: &VectorDataset, ids: &[VectorId]) -> Result<CodeShard> {
        self.codebook.check_dim(dataset.dim())?;
        dataset.check_ids(ids)?;
        let m = self.codebook.m;
        let mut codes = vec![0u8; ids.len() * m];
        codes
            .par_chunks_mut(m)
            .zip(ids.par_iter())
            .for_each(|(out, &id)| {
                self.calls.fetch_add(1, Ordering::Relaxed);
                self.codebook.encode_into(dataset.row(id), out);
            });
        Ok(CodeShard {
            ids: ids.to_vec(),
            codes,
        })
    }
}

/// Codes for an arbitrary set of ids.
#[derive(Clone, Debug, PartialEq)]
pub struct CodeShard {
    pub ids: Vec<VectorId>,
    /// `ids.len() * m` bytes.
    pub codes: Vec<u8>,
}

/// One code row per dataset id.
#[derive(Clone, Debug, PartialEq)]
pub struct PqCodes {
    m: usize,
    codes: Vec<u8>,
    /// Number of encode calls that produced this table.
    pub encode_calls: u64,
}

impl PqCodes {
    pub fn len(&self) -> usize {
        self.codes.len() / self.m
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn row(&self, id: VectorId) -> &[u8] {
        &self.codes[id as usize * self.m..(id as usize + 1) * self.m]
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.codes
    }

    /// Unions shards by id. Every id in `0..n` must be covered, and an id
    /// present in several shards must carry byte-identical rows.
    pub fn merge_shards(n: usize, m: usize, shards: &[CodeShard]) -> Result<Self> {
        let mut codes = vec![0u8; n * m];
        let mut seen = vec![false; n];
        let mut calls = 0u64;
        for shard in shards {
            if shard.codes.len() != shard.ids.len() * m {
                return Err(Error::format("shard code buffer has the wrong length"));
            }
            for (row, &id) in shard.codes.chunks_exact(m).zip(&shard.ids) {
                let i = id as usize;
                if i >= n {
                    return Err(Error::IdOutOfRange { id, len: n });
                }
                let slot = &mut codes[i * m..(i + 1) * m];
                if seen[i] {
                    if slot != row {
                        return Err(Error::format(format!(
                            "conflicting code rows for vector {id}"
                        )));
                    }
                } else {
                    slot.copy_from_slice(row);
                    seen[i] = true;
                }
                calls += 1;
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::format(format!("no code row for vector {missing}")));
        }
        Ok(Self {
            m,
            codes,
            encode_calls: calls,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        io::write_file(path.as_ref(), &self.codes)
    }

    /// Reads a raw `N x m` code table.
    pub fn read(path: impl AsRef<Path>, codebook: &PqCodebook) -> Result<Self> {
        let codes = io::read_file(path.as_ref())?;
        let m = codebook.m();
        if codes.len() % m != 0 {
            return Err(Error::format("code file length is not a multiple of m"));
        }
        if let Some(&bad) = codes.iter().find(|&&c| c as usize >= codebook.ks()) {
            return Err(Error::format(format!("code {bad} >= ks={}", codebook.ks())));
        }
        Ok(Self {
            m,
            codes,
            encode_calls: 0,
        })
    }
}

/// Encodes every vector exactly once, in parallel over ids.
pub fn encode_dataset(dataset: &VectorDataset, codebook: &PqCodebook) -> Result<PqCodes> {
    let encoder = Encoder::new(codebook);
    let ids: Vec<VectorId> = (0..dataset.len() as VectorId).collect();
    let shard = encoder.encode_ids(dataset, &ids)?;
    let mut codes = PqCodes::merge_shards(dataset.len(), codebook.m(), &[shard])?;
    codes.encode_calls = encoder.calls();
    Ok(codes)
}

/// Per-query table of squared sub-distances, `m x ks`.
pub struct AdcTable {
    ks: usize,
    table: Vec<f32>,
}

impl AdcTable {
    pub fn new(query: &[f32], codebook: &PqCodebook) -> Result<Self> {
        codebook.check_dim(query.len())?;
        let (m, ks, sd) = (codebook.m, codebook.ks, codebook.sub_dim);
        let mut table = Vec::with_capacity(m * ks);
        for j in 0..m {
            let q = &query[j * sd..(j + 1) * sd];
            for c in 0..ks {
                table.push(squared_l2(q, codebook.codeword(j, c)));
            }
        }
        Ok(Self { ks, table })
    }

    /// Squared distance from the query to the decoded vector.
    #[inline]
    pub fn distance(&self, code: &[u8]) -> f32 {
        code.iter()
            .enumerate()
            .map(|(j, &c)| self.table[j * self.ks + c as usize])
            .sum()
    }
}

/// Squared L2 between `query` and the vector that `code` decodes to.
pub fn adc_distance(query: &[f32], code: &[u8], codebook: &PqCodebook) -> Result<f32> {
    if code.len() != codebook.m() {
        return Err(Error::DimMismatch {
            expected: codebook.m(),
            actual: code.len(),
        });
    }
    Ok(AdcTable::new(query, codebook)?.distance(code))
}
