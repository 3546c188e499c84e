//! Triple-product tensor tau_ijk = integral(y_i y_j y_k) and the Eq.-2 style
//! contraction H_k = sum_ij tau_ijk T_i L_j.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::quadrature::QuadratureSpec;
use crate::sh::{sh_basis_into, SHVector};

/// Sparse, permutation-symmetric tensor. Entries are stored once per
/// canonical triple (i <= j <= k); `expanded` carries every distinct index
/// permutation for fast contraction.
#[derive(Debug, Clone)]
pub struct TripleProductTensor {
    pub order: usize,
    /// Canonical entries, sorted by (i, j, k).
    entries: Vec<(u16, u16, u16, f64)>,
    /// All distinct permutations of the canonical entries.
    expanded: Vec<(u16, u16, u16, f64)>,
}

fn distinct_perms(i: u16, j: u16, k: u16) -> Vec<(u16, u16, u16)> {
    let mut p = vec![
        (i, j, k),
        (i, k, j),
        (j, i, k),
        (j, k, i),
        (k, i, j),
        (k, j, i),
    ];
    p.sort_unstable();
    p.dedup();
    p
}

impl TripleProductTensor {
    fn from_canonical(order: usize, mut entries: Vec<(u16, u16, u16, f64)>) -> Self {
        entries.sort_unstable_by(|a, b| (a.0, a.1, a.2).cmp(&(b.0, b.1, b.2)));
        let mut expanded = Vec::new();
        for &(i, j, k, v) in &entries {
            for (a, b, c) in distinct_perms(i, j, k) {
                expanded.push((a, b, c, v));
            }
        }
        TripleProductTensor { order, entries, expanded }
    }

    /// Value at (i, j, k) under full permutation symmetry.
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        let mut key = [i as u16, j as u16, k as u16];
        key.sort_unstable();
        match self
            .entries
            .binary_search_by(|e| (e.0, e.1, e.2).cmp(&(key[0], key[1], key[2])))
        {
            Ok(pos) => self.entries[pos].3,
            Err(_) => 0.0,
        }
    }

    pub fn n_entries(&self) -> usize {
        self.entries.len()
    }

    pub fn canonical_entries(&self) -> &[(u16, u16, u16, f64)] {
        &self.entries
    }
}

/// Build the tensor by quadrature. Only canonical triples i <= j <= k are
/// integrated (the integrand is symmetric, so this *is* the exact
/// symmetrization); entries with |tau| <= eps are dropped.
pub fn triple_product_tensor(
    order: usize,
    quad: QuadratureSpec,
    eps: f64,
) -> Result<TripleProductTensor> {
    if order == 0 || order > 6 {
        return Err(Error::input(format!(
            "tensor order must be in [1, 6], got {order}"
        )));
    }
    let n = order * order;
    let samples = quad.samples();
    // Basis values for every sample, laid out sample-major.
    let mut basis = vec![0.0; samples.len() * n];
    for (s, chunk) in samples.iter().zip(basis.chunks_mut(n)) {
        sh_basis_into(order, s.dir, chunk);
    }
    let mut entries = Vec::new();
    for i in 0..n {
        for j in i..n {
            for k in j..n {
                let mut acc = 0.0;
                for (s, chunk) in samples.iter().zip(basis.chunks(n)) {
                    acc += s.weight * chunk[i] * chunk[j] * chunk[k];
                }
                if acc.abs() > eps {
                    entries.push((i as u16, j as u16, k as u16, acc));
                }
            }
        }
    }
    Ok(TripleProductTensor::from_canonical(order, entries))
}

/// H_k = sum_ij tau_ijk T_i L_j (the light-transfer coupling of the
/// triple-product pipeline).
pub fn transferred_radiance(
    t: &SHVector,
    l: &SHVector,
    tau: &TripleProductTensor,
) -> Result<SHVector> {
    if t.order != l.order || t.order != tau.order {
        return Err(Error::input(format!(
            "order mismatch: transfer {}, light {}, tensor {}",
            t.order, l.order, tau.order
        )));
    }
    let mut h = SHVector::zeros(t.order);
    for &(i, j, k, v) in &tau.expanded {
        h.coeffs[k as usize] += v * t.coeffs[i as usize] * l.coeffs[j as usize];
    }
    Ok(h)
}

const TAU_MAGIC: &[u8; 4] = b"TPT1";

/// Write the tensor cache: magic "TPT1", u32 order, u64 canonical entry
/// count, then (u16 i, u16 j, u16 k, f64 value) records, little-endian.
pub fn save_tau(tau: &TripleProductTensor, path: &Path) -> Result<()> {
    let io_err = |e| Error::io(path, e);
    let mut buf = Vec::with_capacity(16 + tau.entries.len() * 14);
    buf.extend_from_slice(TAU_MAGIC);
    buf.extend_from_slice(&(tau.order as u32).to_le_bytes());
    buf.extend_from_slice(&(tau.entries.len() as u64).to_le_bytes());
    for &(i, j, k, v) in &tau.entries {
        buf.extend_from_slice(&i.to_le_bytes());
        buf.extend_from_slice(&j.to_le_bytes());
        buf.extend_from_slice(&k.to_le_bytes());
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = std::fs::File::create(path).map_err(io_err)?;
    f.write_all(&buf).map_err(io_err)
}

pub fn load_tau(path: &Path) -> Result<TripleProductTensor> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    parse_tau(&bytes)
}

/// Decode a tensor cache from bytes (separated out so it can be fuzzed).
pub fn parse_tau(bytes: &[u8]) -> Result<TripleProductTensor> {
    if bytes.len() < 16 {
        return Err(Error::format("tensor cache truncated before header"));
    }
    if &bytes[0..4] != TAU_MAGIC {
        return Err(Error::format("bad tensor cache magic"));
    }
    let order = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if order == 0 || order > 6 {
        return Err(Error::format(format!("tensor order {order} out of range")));
    }
    let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let record = 2 + 2 + 2 + 8;
    if bytes.len() != 16 + count * record {
        return Err(Error::format(format!(
            "tensor cache length {} does not match {} entries",
            bytes.len(),
            count
        )));
    }
    let n = (order * order) as u16;
    let mut entries = Vec::with_capacity(count);
    for r in 0..count {
        let at = 16 + r * record;
        let i = u16::from_le_bytes(bytes[at..at + 2].try_into().unwrap());
        let j = u16::from_le_bytes(bytes[at + 2..at + 4].try_into().unwrap());
        let k = u16::from_le_bytes(bytes[at + 4..at + 6].try_into().unwrap());
        let v = f64::from_le_bytes(bytes[at + 6..at + 14].try_into().unwrap());
        if i >= n || j >= n || k >= n {
            return Err(Error::format(format!(
                "tensor index ({i},{j},{k}) out of range for order {order}"
            )));
        }
        if !v.is_finite() {
            return Err(Error::format("non-finite tensor entry"));
        }
        let mut key = [i, j, k];
        key.sort_unstable();
        entries.push((key[0], key[1], key[2], v));
    }
    entries.sort_unstable_by(|a, b| (a.0, a.1, a.2).cmp(&(b.0, b.1, b.2)));
    entries.dedup_by(|a, b| (a.0, a.1, a.2) == (b.0, b.1, b.2));
    Ok(TripleProductTensor::from_canonical(order, entries))
}

/// Default quadrature for tensor construction: the lat-long product rule is a
/// machine-exact integrator for products of band-limited basis functions
/// (theta-degree <= 3(order-1) needs n_theta >= (3*order-2)/2; any azimuthal
/// order that survives the phi integral is a multiple of n_phi only at 0).
pub fn default_tau_quadrature(order: usize) -> QuadratureSpec {
    QuadratureSpec::LatLong {
        n_theta: 2 * order + 4,
        n_phi: 8 * order,
    }
}
