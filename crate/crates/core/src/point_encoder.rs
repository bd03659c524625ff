//! Hierarchical point-feature extraction: farthest point sampling, ball
//! query, grouped shared-MLP set abstraction with max pooling, and the final
//! global max-pooled feature.

use autodiff::{Graph, Real, Session, Tensor, TensorId};

use crate::error::{Error, Result};

fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}

/// Index of the deepest point (maximum z, lowest index on ties). This is the
/// deterministic start used for sampling.
pub fn deepest_point(points: &[[f64; 3]]) -> usize {
    let mut best = 0;
    for (i, p) in points.iter().enumerate().skip(1) {
        if p[2] > points[best][2] {
            best = i;
        }
    }
    best
}

/// Greedy max-min subset selection. Each step picks the point with the
/// largest distance to the already-chosen set; ties resolve to the lowest
/// index. The first pick is `start`.
pub fn farthest_point_sample(
    points: &[[f64; 3]],
    m: usize,
    start: usize,
) -> Result<Vec<u32>> {
    let n = points.len();
    if m == 0 || m > n {
        return Err(Error::Dimension(format!(
            "cannot sample {m} of {n} points"
        )));
    }
    if start >= n {
        return Err(Error::Dimension(format!("start {start} out of range {n}")));
    }
    let mut chosen = Vec::with_capacity(m);
    let mut min_d = vec![f64::INFINITY; n];
    let mut current = start;
    chosen.push(current as u32);
    for _ in 1..m {
        let cp = points[current];
        let mut best = 0usize;
        let mut best_d = -1.0f64;
        for i in 0..n {
            let d = dist2(points[i], cp);
            if d < min_d[i] {
                min_d[i] = d;
            }
            if min_d[i] > best_d {
                best_d = min_d[i];
                best = i;
            }
        }
        current = best;
        chosen.push(current as u32);
    }
    Ok(chosen)
}

/// Up to `k` neighbor indices per center within `radius`, in scan order.
/// Short groups repeat the first hit; empty groups repeat the center's
/// nearest point.
pub fn ball_query(
    centers: &[[f64; 3]],
    points: &[[f64; 3]],
    radius: f64,
    k: usize,
) -> Result<Vec<u32>> {
    if radius <= 0.0 || k == 0 {
        return Err(Error::Dimension(format!(
            "ball query needs radius > 0 and k >= 1, got {radius} / {k}"
        )));
    }
    if points.is_empty() {
        return Err(Error::EmptyCloud("ball_query on empty cloud"));
    }
    let r2 = radius * radius;
    let mut out = Vec::with_capacity(centers.len() * k);
    for &c in centers {
        let mut found = 0usize;
        let group_start = out.len();
        for (i, &p) in points.iter().enumerate() {
            if dist2(c, p) <= r2 {
                out.push(i as u32);
                found += 1;
                if found == k {
                    break;
                }
            }
        }
        if found == 0 {
            let mut nearest = 0usize;
            let mut nd = f64::INFINITY;
            for (i, &p) in points.iter().enumerate() {
                let d = dist2(c, p);
                if d < nd {
                    nd = d;
                    nearest = i;
                }
            }
            out.extend(std::iter::repeat(nearest as u32).take(k));
        } else if found < k {
            let first = out[group_start];
            out.extend(std::iter::repeat(first).take(k - found));
        }
    }
    Ok(out)
}

/// Parameter shapes for one abstraction level's shared MLP.
#[derive(Debug, Clone)]
pub struct SaLevelDef {
    pub name: String,
    pub c_in: usize,
    pub hidden: usize,
    pub out: usize,
    pub m: usize,
    pub radius: f64,
    pub k: usize,
}

pub fn define_sa_level<R: Real>(
    store: &mut autodiff::ParamStore<R>,
    rng: &mut rand_chacha::ChaCha8Rng,
    def: &SaLevelDef,
) -> Result<()> {
    use autodiff::{Init, ParamKind};
    let grouped_in = def.c_in + 3;
    store.define(
        &format!("{}.l1.w", def.name),
        &[grouped_in, def.hidden],
        ParamKind::Trainable,
        Init::KaimingUniform { fan_in: grouped_in },
        rng,
    )?;
    store.define(
        &format!("{}.l1.b", def.name),
        &[def.hidden],
        ParamKind::Trainable,
        Init::Zeros,
        rng,
    )?;
    store.define(
        &format!("{}.l2.w", def.name),
        &[def.hidden, def.out],
        ParamKind::Trainable,
        Init::KaimingUniform { fan_in: def.hidden },
        rng,
    )?;
    store.define(
        &format!("{}.l2.b", def.name),
        &[def.out],
        ParamKind::Trainable,
        Init::Zeros,
        rng,
    )?;
    Ok(())
}

/// Output of one abstraction level.
pub struct SaOutput {
    /// Indices of surviving centers into the incoming point list.
    pub center_indices: Vec<u32>,
    pub centers: Vec<[f64; 3]>,
    /// `[m, c_in + out]` features on the graph.
    pub features: TensorId,
}

/// One set-abstraction level: sample centers, group ball neighbors with
/// relative coordinates appended, run the shared MLP, max-pool per group and
/// concatenate the center's incoming feature.
pub fn set_abstraction<R: Real>(
    sess: &mut Session<'_, R>,
    points: &[[f64; 3]],
    feats: TensorId,
    def: &SaLevelDef,
) -> Result<SaOutput> {
    let n = points.len();
    let feat_shape = sess.graph.shape(feats).to_vec();
    if feat_shape.len() != 2 || feat_shape[0] != n || feat_shape[1] != def.c_in {
        return Err(Error::Dimension(format!(
            "set_abstraction expects [{n}, {}], got {feat_shape:?}",
            def.c_in
        )));
    }
    let start = deepest_point(points);
    let center_indices = farthest_point_sample(points, def.m, start)?;
    let centers: Vec<[f64; 3]> = center_indices
        .iter()
        .map(|&i| points[i as usize])
        .collect();
    let nbr = ball_query(&centers, points, def.radius, def.k)?;

    // Relative coordinates of every grouped neighbor, as constant data.
    let mut rel = Vec::with_capacity(def.m * def.k * 3);
    for (ci, &c) in centers.iter().enumerate() {
        for kk in 0..def.k {
            let p = points[nbr[ci * def.k + kk] as usize];
            rel.push(p[0] - c[0]);
            rel.push(p[1] - c[1]);
            rel.push(p[2] - c[2]);
        }
    }
    let rel_t = sess.constant(Tensor::from_f64s(vec![def.m * def.k, 3], &rel)?);

    let grouped = sess.graph.gather_rows(feats, &nbr)?;
    let grouped = sess.graph.concat_cols(&[grouped, rel_t])?;
    let h = sess.linear(&format!("{}.l1", def.name), grouped)?;
    let h = sess.graph.relu(h);
    let h = sess.linear(&format!("{}.l2", def.name), h)?;
    let h = sess.graph.relu(h);
    let pooled = sess.graph.max_pool_rows(h, def.k)?;

    let center_feats = sess.graph.gather_rows(feats, &center_indices)?;
    let features = sess.graph.concat_cols(&[center_feats, pooled])?;

    Ok(SaOutput {
        center_indices,
        centers,
        features,
    })
}

#[derive(Debug, Clone)]
pub struct GlobalDef {
    pub name: String,
    pub c_in: usize,
    pub hidden: usize,
    pub out: usize,
}

pub fn define_global<R: Real>(
    store: &mut autodiff::ParamStore<R>,
    rng: &mut rand_chacha::ChaCha8Rng,
    def: &GlobalDef,
) -> Result<()> {
    use autodiff::{Init, ParamKind};
    store.define(
        &format!("{}.l1.w", def.name),
        &[def.c_in, def.hidden],
        ParamKind::Trainable,
        Init::KaimingUniform { fan_in: def.c_in },
        rng,
    )?;
    store.define(
        &format!("{}.l1.b", def.name),
        &[def.hidden],
        ParamKind::Trainable,
        Init::Zeros,
        rng,
    )?;
    store.define(
        &format!("{}.l2.w", def.name),
        &[def.hidden, def.out],
        ParamKind::Trainable,
        Init::KaimingUniform { fan_in: def.hidden },
        rng,
    )?;
    store.define(
        &format!("{}.l2.b", def.name),
        &[def.out],
        ParamKind::Trainable,
        Init::Zeros,
        rng,
    )?;
    Ok(())
}

/// Shared per-point MLP followed by a max pool over all points: `[N, C] ->
/// [1, out]`. Invariant to row permutations.
pub fn pointnet_global<R: Real>(
    sess: &mut Session<'_, R>,
    feats: TensorId,
    def: &GlobalDef,
) -> Result<TensorId> {
    let shape = sess.graph.shape(feats).to_vec();
    if shape.len() != 2 || shape[1] != def.c_in {
        return Err(Error::Dimension(format!(
            "pointnet_global expects [N, {}], got {shape:?}",
            def.c_in
        )));
    }
    let n = shape[0];
    let h = sess.linear(&format!("{}.l1", def.name), feats)?;
    let h = sess.graph.relu(h);
    let h = sess.linear(&format!("{}.l2", def.name), h)?;
    let h = sess.graph.relu(h);
    Ok(sess.graph.max_pool_rows(h, n)?)
}

/// Brute-force oracle used by tests: all indices within the radius, scan
/// order, no padding or truncation.
pub fn within_radius_oracle(center: [f64; 3], points: &[[f64; 3]], radius: f64) -> Vec<u32> {
    let r2 = radius * radius;
    points
        .iter()
        .enumerate()
        .filter(|(_, &p)| dist2(center, p) <= r2)
        .map(|(i, _)| i as u32)
        .collect()
}

/// Raw feature tensor for a cloud: the xyz coordinates themselves.
pub fn coords_tensor<R: Real>(g: &mut Graph<R>, points: &[[f64; 3]]) -> Result<TensorId> {
    let flat: Vec<f64> = points.iter().flat_map(|p| p.iter().copied()).collect();
    Ok(g.constant(Tensor::from_f64s(vec![points.len(), 3], &flat)?))
}
