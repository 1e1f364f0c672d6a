use super::{map_indexed, PathMode, Space};
use crate::error::{Error, Result};
use crate::models::LatentModel;
use crate::rng;
use crate::tensor::Tensor;

/// Samples per work chunk; fixed so results do not depend on thread count.
const CHUNK: usize = 32;

/// Rows `wa * a_i + wb * b_i`, one weight pair per row.
pub fn interpolate(a: &Tensor, b: &Tensor, weights: &[(f32, f32)]) -> Result<Tensor> {
    if a.shape() != b.shape() || a.rows() != weights.len() {
        return Err(Error::Dim(format!(
            "interpolate: {:?} vs {:?} with {} weights",
            a.shape(),
            b.shape(),
            weights.len()
        )));
    }
    let mut out = a.clone();
    let c = a.cols();
    for (i, &(wa, wb)) in weights.iter().enumerate() {
        let (ra, rb) = (a.row_slice(i), b.row_slice(i));
        for (j, o) in out.data_mut()[i * c..(i + 1) * c].iter_mut().enumerate() {
            *o = wa * ra[j] + wb * rb[j];
        }
    }
    Ok(out)
}

/// Generator inputs along the paths from `za` to `zb` (Gaussian codes) at
/// the given weights: linear in `y = phi^-1(z)` for [`Space::Y`], linear in
/// `z` and then mapped through `phi^-1` for [`Space::Z`].
fn path_inputs<M: LatentModel>(model: &M, space: Space, za: &Tensor, zb: &Tensor, w: &[(f32, f32)]) -> Result<Tensor> {
    match space {
        Space::Y => interpolate(&model.z_to_y(za)?, &model.z_to_y(zb)?, w),
        Space::Z => model.z_to_y(&interpolate(za, zb, w)?),
    }
}

fn row_sq_dist(a: &Tensor, b: &Tensor, i: usize) -> f64 {
    a.row_slice(i)
        .iter()
        .zip(b.row_slice(i))
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

/// Sum of `|eps(g(p(w0))) - eps(g(p(w1)))|^2 / step^2` over all rows.
fn segment_sum<M: LatentModel>(
    model: &M,
    space: Space,
    za: &Tensor,
    zb: &Tensor,
    from: &[(f32, f32)],
    to: &[(f32, f32)],
    step: f32,
) -> Result<f64> {
    let fa = model.features(&model.generate(&path_inputs(model, space, za, zb, from)?)?)?;
    let fb = model.features(&model.generate(&path_inputs(model, space, za, zb, to)?)?)?;
    let s2 = step as f64 * step as f64;
    Ok((0..za.rows()).map(|i| row_sq_dist(&fa, &fb, i)).sum::<f64>() / s2)
}

/// Path length between explicit endpoint codes `za[i] -> zb[i]` (Gaussian
/// codes, mapped to `y` as in [`path_length`]). Returns the mean over rows.
///
/// `ts` gives the interpolation position of each row in full mode; end mode
/// averages the two endpoint segments, which makes it exactly symmetric in
/// the endpoints.
pub fn path_length_pairs<M: LatentModel>(
    model: &M,
    space: Space,
    mode: PathMode,
    za: &Tensor,
    zb: &Tensor,
    ts: &[f32],
    step: f32,
) -> Result<f64> {
    Ok(path_length_sum(model, space, mode, za, zb, ts, step)? / za.rows() as f64)
}

fn path_length_sum<M: LatentModel>(
    model: &M,
    space: Space,
    mode: PathMode,
    za: &Tensor,
    zb: &Tensor,
    ts: &[f32],
    step: f32,
) -> Result<f64> {
    let n = za.rows();
    match mode {
        PathMode::Full => {
            let from: Vec<_> = ts.iter().map(|&t| (1.0 - t, t)).collect();
            let to: Vec<_> = ts.iter().map(|&t| (1.0 - t - step, t + step)).collect();
            segment_sum(model, space, za, zb, &from, &to, step)
        }
        PathMode::End => {
            let start = segment_sum(model, space, za, zb, &vec![(1.0, 0.0); n], &vec![(1.0 - step, step); n], step)?;
            let end = segment_sum(model, space, za, zb, &vec![(0.0, 1.0); n], &vec![(step, 1.0 - step); n], step)?;
            Ok((start + end) / 2.0)
        }
    }
}

/// Expected squared feature distance between generator outputs `step`
/// apart on random paths, divided by `step^2`.
///
/// Endpoints are Gaussian codes `z1, z2`. In y-space the path is linear
/// between `phi^-1(z1)` and `phi^-1(z2)`; in z-space it is linear between
/// the codes and mapped through `phi^-1`. Full mode samples the position
/// uniformly; end mode uses both endpoints.
pub fn path_length<M: LatentModel>(
    model: &M,
    space: Space,
    mode: PathMode,
    n: usize,
    step: f32,
    seed: u64,
    threads: usize,
) -> Result<f64> {
    if n == 0 || !(step > 0.0) {
        return Err(Error::Metric("path_length needs n >= 1 and a positive step".into()));
    }
    let d = model.latent_dim();
    let chunks = n.div_ceil(CHUNK);
    let sums = map_indexed(chunks, threads, |k| {
        let rows = CHUNK.min(n - k * CHUNK);
        let mut r = rng::stream(seed, k as u64);
        let za = rng::gaussian_tensor(&mut r, &[rows, d]);
        let zb = rng::gaussian_tensor(&mut r, &[rows, d]);
        let ts: Vec<f32> = (0..rows).map(|_| rng::uniform(&mut r)).collect();
        path_length_sum(model, space, mode, &za, &zb, &ts, step)
    })?;
    Ok(sums.iter().sum::<f64>() / n as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LipschitzStats {
    pub mean: f64,
    /// Nearest-rank 95th percentile.
    pub p95: f64,
}

/// Statistics of `|g(v_i) - g(v_j)| / |v_i - v_j|` over random pairs, where
/// `v` is `phi^-1(z)` in y-space and `z` itself in z-space.
pub fn lipschitz_ratio_stats<M: LatentModel>(
    model: &M,
    space: Space,
    n_pairs: usize,
    seed: u64,
    threads: usize,
) -> Result<LipschitzStats> {
    if n_pairs == 0 {
        return Err(Error::Metric("lipschitz_ratio_stats needs at least one pair".into()));
    }
    let d = model.latent_dim();
    let chunks = n_pairs.div_ceil(CHUNK);
    let parts = map_indexed(chunks, threads, |k| {
        let rows = CHUNK.min(n_pairs - k * CHUNK);
        let mut r = rng::stream(seed, k as u64);
        let zi = rng::gaussian_tensor(&mut r, &[rows, d]);
        let mut zj = rng::gaussian_tensor(&mut r, &[rows, d]);
        let (vi, mut vj) = match space {
            Space::Y => (model.z_to_y(&zi)?, model.z_to_y(&zj)?),
            Space::Z => (zi.clone(), zj.clone()),
        };
        // Resample coincident pairs.
        for i in 0..rows {
            while row_sq_dist(&vi, &vj, i) == 0.0 {
                let fresh = rng::gaussian_tensor(&mut r, &[1, d]);
                zj.data_mut()[i * d..(i + 1) * d].copy_from_slice(fresh.data());
                let v = match space {
                    Space::Y => model.z_to_y(&fresh)?,
                    Space::Z => fresh,
                };
                vj.data_mut()[i * d..(i + 1) * d].copy_from_slice(v.data());
            }
        }
        let (yi, yj) = match space {
            Space::Y => (vi.clone(), vj.clone()),
            Space::Z => (model.z_to_y(&zi)?, model.z_to_y(&zj)?),
        };
        let (gi, gj) = (model.generate(&yi)?, model.generate(&yj)?);
        Ok((0..rows)
            .map(|i| (row_sq_dist(&gi, &gj, i) / row_sq_dist(&vi, &vj, i)).sqrt())
            .collect::<Vec<f64>>())
    })?;
    let mut ratios: Vec<f64> = parts.into_iter().flatten().collect();
    let mean = ratios.iter().sum::<f64>() / n_pairs as f64;
    ratios.sort_by(f64::total_cmp);
    let rank = ((0.95 * n_pairs as f64).ceil() as usize).clamp(1, n_pairs);
    Ok(LipschitzStats {
        mean,
        p95: ratios[rank - 1],
    })
}

/// Deviation of `J^T J` from a scaled identity at `y`, with `J` the
/// central-difference Jacobian of `gen`: `|J^T J / a - I|_F / sqrt(d)` where
/// `a = tr(J^T J) / d`.
pub fn jacobian_isometry_probe<F>(gen: F, y: &[f32], fd_step: f32) -> Result<f64>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    if !(fd_step > 0.0) || y.is_empty() {
        return Err(Error::Metric("isometry probe needs a positive step and a point".into()));
    }
    let d = y.len();
    let mut rows = Vec::with_capacity(2 * d);
    for k in 0..d {
        for sign in [1.0f32, -1.0] {
            let mut p = y.to_vec();
            p[k] += sign * fd_step;
            rows.push(p);
        }
    }
    let out = gen(&Tensor::from_rows(&rows)?)?;
    let m = out.cols();
    let h2 = 2.0 * fd_step as f64;
    // Column k of J.
    let cols: Vec<Vec<f64>> = (0..d)
        .map(|k| {
            let (p, q) = (out.row_slice(2 * k), out.row_slice(2 * k + 1));
            (0..m).map(|i| (p[i] as f64 - q[i] as f64) / h2).collect()
        })
        .collect();
    let gram = |a: usize, b: usize| cols[a].iter().zip(&cols[b]).map(|(x, y)| x * y).sum::<f64>();
    let a = (0..d).map(|k| gram(k, k)).sum::<f64>() / d as f64;
    if a == 0.0 {
        return Err(Error::Metric("isometry probe: Jacobian vanishes".into()));
    }
    let mut fro = 0.0;
    for i in 0..d {
        for j in 0..d {
            let target = if i == j { 1.0 } else { 0.0 };
            let e = gram(i, j) / a - target;
            fro += e * e;
        }
    }
    Ok(fro.sqrt() / (d as f64).sqrt())
}

/// [`jacobian_isometry_probe`] of the model's generator.
pub fn model_isometry_probe<M: LatentModel>(model: &M, y: &[f32], fd_step: f32) -> Result<f64> {
    jacobian_isometry_probe(|t| model.generate(t), y, fd_step)
}

/// Mean perpendicular distance of `points` from the line through the first
/// and last point.
pub fn mean_perpendicular_deviation(points: &[Vec<f64>]) -> Result<f64> {
    let (first, last) = match (points.first(), points.last()) {
        (Some(f), Some(l)) if points.len() >= 2 => (f, l),
        _ => return Err(Error::Metric("need at least two points".into())),
    };
    let dir: Vec<f64> = last.iter().zip(first).map(|(a, b)| a - b).collect();
    let len = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    if len == 0.0 {
        return Err(Error::Metric("path endpoints coincide in feature space".into()));
    }
    let u: Vec<f64> = dir.iter().map(|v| v / len).collect();
    let total: f64 = points
        .iter()
        .map(|p| {
            let rel: Vec<f64> = p.iter().zip(first).map(|(a, b)| a - b).collect();
            let along: f64 = rel.iter().zip(&u).map(|(a, b)| a * b).sum();
            rel.iter()
                .zip(&u)
                .map(|(r, uu)| (r - along * uu).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .sum();
    Ok(total / points.len() as f64)
}

/// [`mean_perpendicular_deviation`] divided by the distance between the
/// endpoints.
pub fn straightness_of_points(points: &[Vec<f64>]) -> Result<f64> {
    let dev = mean_perpendicular_deviation(points)?;
    let (f, l) = (&points[0], &points[points.len() - 1]);
    let len = f.iter().zip(l).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    Ok(dev / len)
}

/// Straightness of the feature trajectory `eps(g(.))` along the path from
/// `y_i` to `y_j`: linear in `y`, or linear between `phi(y_i)` and
/// `phi(y_j)` and mapped back for z-space. Zero for a straight trajectory.
pub fn path_straightness<M: LatentModel>(
    model: &M,
    space: Space,
    y_i: &[f32],
    y_j: &[f32],
    n_steps: usize,
) -> Result<f64> {
    let points = path_features(model, space, y_i, y_j, n_steps)?;
    straightness_of_points(&points)
}

/// Generator inputs at `n_steps` evenly spaced positions between `y_i` and
/// `y_j` (inclusive) in the given space.
pub fn path_codes<M: LatentModel>(model: &M, space: Space, y_i: &[f32], y_j: &[f32], n_steps: usize) -> Result<Tensor> {
    if n_steps < 2 || y_i.len() != y_j.len() || y_i.len() != model.latent_dim() {
        return Err(Error::Metric(format!(
            "path needs n_steps >= 2 and endpoints of length {}",
            model.latent_dim()
        )));
    }
    let w: Vec<(f32, f32)> = (0..n_steps)
        .map(|k| {
            let t = k as f32 / (n_steps - 1) as f32;
            (1.0 - t, t)
        })
        .collect();
    let a = Tensor::from_rows(&vec![y_i.to_vec(); n_steps])?;
    let b = Tensor::from_rows(&vec![y_j.to_vec(); n_steps])?;
    match space {
        Space::Y => interpolate(&a, &b, &w),
        Space::Z => model.z_to_y(&interpolate(&model.y_to_z(&a)?, &model.y_to_z(&b)?, &w)?),
    }
}

fn path_features<M: LatentModel>(model: &M, space: Space, y_i: &[f32], y_j: &[f32], n_steps: usize) -> Result<Vec<Vec<f64>>> {
    if n_steps < 3 {
        return Err(Error::Metric("path_straightness needs n_steps >= 3".into()));
    }
    let feats = model.features(&model.generate(&path_codes(model, space, y_i, y_j, n_steps)?)?)?;
    Ok((0..feats.rows())
        .map(|i| feats.row_slice(i).iter().map(|&v| v as f64).collect())
        .collect())
}

/// One-sided sign-test p-value `P(X >= wins)` for `X ~ Binomial(n, 1/2)`.
pub fn sign_test_p(wins: usize, n: usize) -> f64 {
    let mut p = 0.0;
    let mut binom = 1.0f64; // C(n, 0)
    for k in 0..=n {
        if k >= wins {
            p += binom;
        }
        binom = binom * (n - k) as f64 / (k + 1) as f64;
    }
    p / 2f64.powi(n as i32)
}
