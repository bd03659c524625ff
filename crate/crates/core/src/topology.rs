//! Multi-resolution mesh hierarchy: 63/126/252-vertex levels selected from
//! the 778-vertex template by farthest-point sampling, nearest-neighbor
//! adjacency with scaled graph Laplacians, barycentric upsampling matrices,
//! the joint regressor and the full-mesh faces.
//!
//! Ships as a binary asset; byte layout is documented in
//! `docs/topology_format.md`.

use std::fs;
use std::path::Path;

use crate::eigen::symmetric_eigenvalues;
use crate::error::{Error, Result};
use crate::point_encoder::farthest_point_sample;
use crate::template::HandTemplate;

pub const LEVEL_SIZES: [usize; 3] = [63, 126, 252];
const MAGIC: &[u8; 4] = b"HTOP";
const VERSION: u32 = 1;
const ADJ_NEIGHBORS: usize = 5;

#[derive(Debug, Clone)]
pub struct SparseCoo {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<(u32, u32, f64)>,
}

impl SparseCoo {
    pub fn dense(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.rows * self.cols];
        for &(r, c, v) in &self.entries {
            m[r as usize * self.cols + c as usize] = v;
        }
        m
    }

    pub fn apply(&self, x: &[[f64; 3]]) -> Vec<[f64; 3]> {
        debug_assert_eq!(x.len(), self.cols);
        let mut out = vec![[0.0; 3]; self.rows];
        for &(r, c, v) in &self.entries {
            for k in 0..3 {
                out[r as usize][k] += v * x[c as usize][k];
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct MeshLevel {
    pub n: usize,
    /// Absolute template vertex ids of this level's vertices.
    pub vertex_ids: Vec<u32>,
    pub coords: Vec<[f64; 3]>,
    /// CSR adjacency (values implicitly 1).
    pub row_ptr: Vec<u32>,
    pub cols: Vec<u32>,
    /// Dense scaled Laplacian, spectrum in [-1, 1].
    pub scaled_laplacian: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct MeshTopology {
    pub levels: [MeshLevel; 3],
    /// up[0]: 63 -> 126, up[1]: 126 -> 252, up[2]: 252 -> 778.
    pub up: [SparseCoo; 3],
    /// 21 x 778 row-stochastic joint regressor.
    pub regressor: SparseCoo,
    pub full_coords: Vec<[f64; 3]>,
    pub faces: Vec<[u32; 3]>,
    /// FNV-1a of the serialized asset bytes.
    pub hash: u64,
}

/// Symmetric normalized Laplacian rescaled so its spectrum sits in [-1, 1]:
/// `2 * L_norm / lambda_max - I`, with `lambda_max` from 50 steps of power
/// iteration (early exit at 1e-9). Fails on disconnected graphs.
pub fn scaled_laplacian(n: usize, row_ptr: &[u32], cols: &[u32]) -> Result<Vec<f64>> {
    if row_ptr.len() != n + 1 {
        return Err(Error::Topology(format!(
            "row_ptr length {} for {n} vertices",
            row_ptr.len()
        )));
    }
    let degree: Vec<usize> = (0..n)
        .map(|i| (row_ptr[i + 1] - row_ptr[i]) as usize)
        .collect();
    if degree.iter().any(|&d| d == 0) {
        return Err(Error::Topology("isolated vertex".into()));
    }

    // Connectivity check.
    let mut seen = vec![false; n];
    let mut stack = vec![0usize];
    seen[0] = true;
    let mut count = 1;
    while let Some(i) = stack.pop() {
        for &j in &cols[row_ptr[i] as usize..row_ptr[i + 1] as usize] {
            if !seen[j as usize] {
                seen[j as usize] = true;
                count += 1;
                stack.push(j as usize);
            }
        }
    }
    if count != n {
        return Err(Error::Topology(format!(
            "graph is disconnected ({count} of {n} reachable)"
        )));
    }

    // L = I - D^{-1/2} A D^{-1/2}, assembled symmetrically.
    let inv_sqrt_d: Vec<f64> = degree.iter().map(|&d| 1.0 / (d as f64).sqrt()).collect();
    let mut lap = vec![0.0; n * n];
    for i in 0..n {
        lap[i * n + i] = 1.0;
        for &j in &cols[row_ptr[i] as usize..row_ptr[i + 1] as usize] {
            let j = j as usize;
            lap[i * n + j] = -inv_sqrt_d[i] * inv_sqrt_d[j];
        }
    }

    // Power iteration alone underestimates lambda_max when the spectral gap
    // is small, which would push the scaled spectrum above 1. Refine with a
    // dense eigenvalue pass (n is at most a few hundred here) and scale by
    // the larger estimate, keeping the spectrum inside [-1, 1].
    let lambda_power = power_iteration(&lap, n, 50, 1e-9);
    let lambda_dense = symmetric_eigenvalues(&lap, n)
        .last()
        .copied()
        .unwrap_or(lambda_power);
    let lambda_max = lambda_power.max(lambda_dense);
    let scale = 2.0 / lambda_max;
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = scale * lap[i * n + j] - if i == j { 1.0 } else { 0.0 };
        }
    }
    Ok(out)
}

fn power_iteration(mat: &[f64], n: usize, steps: usize, tol: f64) -> f64 {
    // Sign-alternating pseudo-random start: top Laplacian eigenvectors are
    // oscillatory, so a smooth start would have almost no overlap.
    let mut v: Vec<f64> = (0..n)
        .map(|i| {
            let r = ((i as f64) * 12.9898).sin() * 43758.5453;
            (r - r.floor()) * 2.0 - 1.0
        })
        .collect();
    let mut lambda = 0.0;
    for _ in 0..steps {
        let mut w = vec![0.0; n];
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                acc += mat[i * n + j] * v[j];
            }
            w[i] = acc;
        }
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        for x in w.iter_mut() {
            *x /= norm;
        }
        let mut rayleigh = 0.0;
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                acc += mat[i * n + j] * w[j];
            }
            rayleigh += w[i] * acc;
        }
        let delta = (rayleigh - lambda).abs();
        lambda = rayleigh;
        v = w;
        if delta < tol {
            break;
        }
    }
    lambda
}

fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}

/// Symmetric k-nearest-neighbor adjacency, with extra edges added between
/// components until the graph is connected.
fn knn_adjacency(coords: &[[f64; 3]], k: usize) -> (Vec<u32>, Vec<u32>) {
    let n = coords.len();
    let mut neighbor_sets: Vec<std::collections::BTreeSet<u32>> = vec![Default::default(); n];
    for i in 0..n {
        let mut d: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (dist2(coords[i], coords[j]), j))
            .collect();
        d.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for &(_, j) in d.iter().take(k) {
            neighbor_sets[i].insert(j as u32);
            neighbor_sets[j].insert(i as u32);
        }
    }

    // Join components by their closest cross pair until connected.
    loop {
        let mut comp = vec![usize::MAX; n];
        let mut n_comp = 0;
        for s in 0..n {
            if comp[s] != usize::MAX {
                continue;
            }
            let mut stack = vec![s];
            comp[s] = n_comp;
            while let Some(i) = stack.pop() {
                for &j in &neighbor_sets[i] {
                    if comp[j as usize] == usize::MAX {
                        comp[j as usize] = n_comp;
                        stack.push(j as usize);
                    }
                }
            }
            n_comp += 1;
        }
        if n_comp == 1 {
            break;
        }
        let mut best = (f64::INFINITY, 0usize, 0usize);
        for i in 0..n {
            if comp[i] != 0 {
                continue;
            }
            for j in 0..n {
                if comp[j] == 0 {
                    continue;
                }
                let d = dist2(coords[i], coords[j]);
                if d < best.0 {
                    best = (d, i, j);
                }
            }
        }
        neighbor_sets[best.1].insert(best.2 as u32);
        neighbor_sets[best.2].insert(best.1 as u32);
    }

    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut cols = Vec::new();
    row_ptr.push(0u32);
    for s in &neighbor_sets {
        cols.extend(s.iter().copied());
        row_ptr.push(cols.len() as u32);
    }
    (row_ptr, cols)
}

/// Barycentric-style upsampling: exact rows for vertices shared with the
/// coarse level, inverse-distance blends of the three nearest coarse
/// vertices otherwise. Every row sums to one with at most three nonzeros.
fn upsample_matrix(
    coarse_ids: &[u32],
    coarse_coords: &[[f64; 3]],
    fine_ids: &[u32],
    fine_coords: &[[f64; 3]],
) -> SparseCoo {
    let mut entries = Vec::new();
    let coarse_pos: std::collections::HashMap<u32, usize> = coarse_ids
        .iter()
        .enumerate()
        .map(|(i, &id)| (id, i))
        .collect();
    for (r, (&fid, &fc)) in fine_ids.iter().zip(fine_coords).enumerate() {
        if let Some(&ci) = coarse_pos.get(&fid) {
            entries.push((r as u32, ci as u32, 1.0));
            continue;
        }
        let mut d: Vec<(f64, usize)> = coarse_coords
            .iter()
            .enumerate()
            .map(|(i, &c)| (dist2(fc, c), i))
            .collect();
        d.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let picks = &d[..3.min(d.len())];
        let weights: Vec<f64> = picks.iter().map(|&(d2, _)| 1.0 / (d2.sqrt() + 1e-9)).collect();
        let total: f64 = weights.iter().sum();
        for (&(_, ci), w) in picks.iter().zip(&weights) {
            entries.push((r as u32, ci as u32, w / total));
        }
    }
    SparseCoo {
        rows: fine_ids.len(),
        cols: coarse_ids.len(),
        entries,
    }
}

/// Build the standard hierarchy from the hand template.
pub fn build(template: &HandTemplate) -> Result<MeshTopology> {
    build_custom(
        &template.verts,
        &template.faces,
        &template.joint_rows,
        LEVEL_SIZES,
    )
}

/// Build a hierarchy over an arbitrary mesh: nested farthest-point vertex
/// subsets, nearest-neighbor adjacency per level, barycentric upsampling.
pub fn build_custom(
    verts: &[[f64; 3]],
    faces: &[[u32; 3]],
    joint_rows: &[Vec<(u32, f64)>],
    sizes: [usize; 3],
) -> Result<MeshTopology> {
    let full: Vec<[f64; 3]> = verts.to_vec();

    // Coarsest-to-finest nested subsets of the full vertex set.
    let ids252 = farthest_point_sample(&full, sizes[2], 0)?;
    let coords252: Vec<[f64; 3]> = ids252.iter().map(|&i| full[i as usize]).collect();
    let local126 = farthest_point_sample(&coords252, sizes[1], 0)?;
    let ids126: Vec<u32> = local126.iter().map(|&i| ids252[i as usize]).collect();
    let coords126: Vec<[f64; 3]> = ids126.iter().map(|&i| full[i as usize]).collect();
    let local63 = farthest_point_sample(&coords126, sizes[0], 0)?;
    let ids63: Vec<u32> = local63.iter().map(|&i| ids126[i as usize]).collect();
    let coords63: Vec<[f64; 3]> = ids63.iter().map(|&i| full[i as usize]).collect();

    let mut levels = Vec::with_capacity(3);
    for (ids, coords) in [
        (ids63.clone(), coords63.clone()),
        (ids126.clone(), coords126.clone()),
        (ids252.clone(), coords252.clone()),
    ] {
        let (row_ptr, cols) = knn_adjacency(&coords, ADJ_NEIGHBORS);
        let lap = scaled_laplacian(coords.len(), &row_ptr, &cols)?;
        levels.push(MeshLevel {
            n: coords.len(),
            vertex_ids: ids,
            coords,
            row_ptr,
            cols,
            scaled_laplacian: lap,
        });
    }

    let full_ids: Vec<u32> = (0..full.len() as u32).collect();
    let up = [
        upsample_matrix(&ids63, &coords63, &ids126, &coords126),
        upsample_matrix(&ids126, &coords126, &ids252, &coords252),
        upsample_matrix(&ids252, &coords252, &full_ids, &full),
    ];

    let regressor = SparseCoo {
        rows: joint_rows.len(),
        cols: full.len(),
        entries: joint_rows
            .iter()
            .enumerate()
            .flat_map(|(j, row)| row.iter().map(move |&(v, w)| (j as u32, v, w)))
            .collect(),
    };

    let levels: [MeshLevel; 3] = levels.try_into().map_err(|_| {
        Error::Topology("level construction produced the wrong count".into())
    })?;
    let mut topo = MeshTopology {
        levels,
        up,
        regressor,
        full_coords: full,
        faces: faces.to_vec(),
        hash: 0,
    };
    topo.hash = fnv1a(&topo.to_bytes());
    topo.validate()?;
    Ok(topo)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

impl MeshTopology {
    /// Structural consistency; does not pin the standard level sizes (tests
    /// use miniature hierarchies).
    pub fn validate(&self) -> Result<()> {
        for (li, level) in self.levels.iter().enumerate() {
            let _ = li;
            let n = level.n;
            for i in 0..n {
                for j in 0..n {
                    let a = level.scaled_laplacian[i * n + j];
                    let b = level.scaled_laplacian[j * n + i];
                    if a != b {
                        return Err(Error::Topology("scaled Laplacian not symmetric".into()));
                    }
                }
            }
            let eigs = symmetric_eigenvalues(&level.scaled_laplacian, n);
            let bound = 1.0 + 1e-6;
            if eigs[0] < -bound || eigs[n - 1] > bound {
                return Err(Error::Topology(format!(
                    "level {li} spectrum [{}, {}] outside [-1, 1]",
                    eigs[0],
                    eigs[n - 1]
                )));
            }
        }
        for (ui, u) in self.up.iter().enumerate() {
            let mut row_sum = vec![0.0; u.rows];
            let mut row_nnz = vec![0usize; u.rows];
            for &(r, _, v) in &u.entries {
                row_sum[r as usize] += v;
                row_nnz[r as usize] += 1;
            }
            for r in 0..u.rows {
                if (row_sum[r] - 1.0).abs() > 1e-9 || row_nnz[r] > 3 || row_nnz[r] == 0 {
                    return Err(Error::Topology(format!(
                        "upsample {ui} row {r}: sum {} nnz {}",
                        row_sum[r], row_nnz[r]
                    )));
                }
            }
        }
        let mut jr_sum = vec![0.0; self.regressor.rows];
        for &(r, _, v) in &self.regressor.entries {
            if v < 0.0 {
                return Err(Error::Topology("negative regressor weight".into()));
            }
            jr_sum[r as usize] += v;
        }
        if jr_sum.iter().any(|s| (s - 1.0).abs() > 1e-9) {
            return Err(Error::Topology("regressor rows must sum to one".into()));
        }
        Ok(())
    }

    /// Coarse-mesh template coordinates (level 3, 252 vertices).
    pub fn coarse_template(&self) -> &[[f64; 3]] {
        &self.levels[2].coords
    }

    /// Absolute template ids of the 252 coarse vertices; used to subsample a
    /// ground-truth full mesh for the coarse loss term.
    pub fn coarse_vertex_ids(&self) -> &[u32] {
        &self.levels[2].vertex_ids
    }

    fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&VERSION.to_le_bytes());
        b.extend_from_slice(&(self.levels.len() as u32).to_le_bytes());
        for level in &self.levels {
            b.extend_from_slice(&(level.n as u32).to_le_bytes());
            for &id in &level.vertex_ids {
                b.extend_from_slice(&id.to_le_bytes());
            }
            for c in &level.coords {
                for &x in c {
                    b.extend_from_slice(&x.to_le_bytes());
                }
            }
            for &p in &level.row_ptr {
                b.extend_from_slice(&p.to_le_bytes());
            }
            b.extend_from_slice(&(level.cols.len() as u32).to_le_bytes());
            for &c in &level.cols {
                b.extend_from_slice(&c.to_le_bytes());
            }
        }
        for u in &self.up {
            write_coo(&mut b, u);
        }
        write_coo(&mut b, &self.regressor);
        b.extend_from_slice(&(self.full_coords.len() as u32).to_le_bytes());
        for c in &self.full_coords {
            for &x in c {
                b.extend_from_slice(&x.to_le_bytes());
            }
        }
        b.extend_from_slice(&(self.faces.len() as u32).to_le_bytes());
        for f in &self.faces {
            for &v in f {
                b.extend_from_slice(&v.to_le_bytes());
            }
        }
        b
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<MeshTopology> {
        let bytes = fs::read(path)?;
        let hash = fnv1a(&bytes);
        let mut rd = ByteReader { b: &bytes, pos: 0 };
        let magic = rd.take(4)?;
        if magic != MAGIC {
            return Err(Error::Asset("bad magic".into()));
        }
        let version = rd.u32()?;
        if version != VERSION {
            return Err(Error::Asset(format!("unsupported version {version}")));
        }
        let n_levels = rd.u32()? as usize;
        if n_levels != 3 {
            return Err(Error::Asset(format!("expected 3 levels, got {n_levels}")));
        }
        let mut levels = Vec::with_capacity(3);
        for _ in 0..3 {
            let n = rd.u32()? as usize;
            let vertex_ids = (0..n).map(|_| rd.u32()).collect::<Result<Vec<_>>>()?;
            let coords = (0..n)
                .map(|_| Ok([rd.f64()?, rd.f64()?, rd.f64()?]))
                .collect::<Result<Vec<_>>>()?;
            let row_ptr = (0..=n).map(|_| rd.u32()).collect::<Result<Vec<_>>>()?;
            let nnz = rd.u32()? as usize;
            if row_ptr.last().copied().unwrap_or(0) as usize != nnz {
                return Err(Error::Asset("CSR row_ptr and nnz disagree".into()));
            }
            let cols = (0..nnz).map(|_| rd.u32()).collect::<Result<Vec<_>>>()?;
            let lap = scaled_laplacian(n, &row_ptr, &cols)?;
            levels.push(MeshLevel {
                n,
                vertex_ids,
                coords,
                row_ptr,
                cols,
                scaled_laplacian: lap,
            });
        }
        let up = [read_coo(&mut rd)?, read_coo(&mut rd)?, read_coo(&mut rd)?];
        let regressor = read_coo(&mut rd)?;
        let n_full = rd.u32()? as usize;
        let full_coords = (0..n_full)
            .map(|_| Ok([rd.f64()?, rd.f64()?, rd.f64()?]))
            .collect::<Result<Vec<_>>>()?;
        let n_faces = rd.u32()? as usize;
        let faces = (0..n_faces)
            .map(|_| Ok([rd.u32()?, rd.u32()?, rd.u32()?]))
            .collect::<Result<Vec<_>>>()?;
        let levels: [MeshLevel; 3] = levels
            .try_into()
            .map_err(|_| Error::Asset("level parse".into()))?;
        let topo = MeshTopology {
            levels,
            up,
            regressor,
            full_coords,
            faces,
            hash,
        };
        for (li, level) in topo.levels.iter().enumerate() {
            if level.n != LEVEL_SIZES[li] {
                return Err(Error::Asset(format!(
                    "level {li} has {} vertices, expected {}",
                    level.n, LEVEL_SIZES[li]
                )));
            }
        }
        topo.validate()?;
        Ok(topo)
    }
}

fn write_coo(b: &mut Vec<u8>, m: &SparseCoo) {
    b.extend_from_slice(&(m.rows as u32).to_le_bytes());
    b.extend_from_slice(&(m.cols as u32).to_le_bytes());
    b.extend_from_slice(&(m.entries.len() as u32).to_le_bytes());
    for &(r, c, v) in &m.entries {
        b.extend_from_slice(&r.to_le_bytes());
        b.extend_from_slice(&c.to_le_bytes());
        b.extend_from_slice(&v.to_le_bytes());
    }
}

fn read_coo(rd: &mut ByteReader<'_>) -> Result<SparseCoo> {
    let rows = rd.u32()? as usize;
    let cols = rd.u32()? as usize;
    let nnz = rd.u32()? as usize;
    let entries = (0..nnz)
        .map(|_| Ok((rd.u32()?, rd.u32()?, rd.f64()?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(SparseCoo {
        rows,
        cols,
        entries,
    })
}

struct ByteReader<'a> {
    b: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.b.len() {
            return Err(Error::Asset(format!(
                "truncated asset at byte {}",
                self.pos
            )));
        }
        let s = &self.b[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
