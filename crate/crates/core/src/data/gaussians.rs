use crate::rng;

/// `n` points from an equally weighted mixture of `k_modes` isotropic
/// Gaussians (std `sigma`) centred on a circle of `radius`. The first mode
/// sits at `(radius, 0)`.
pub fn gen_gaussians2d(n: usize, k_modes: usize, radius: f32, sigma: f32, seed: u64) -> Vec<[f32; 2]> {
    assert!(k_modes >= 1, "need at least one mode");
    let mut r = rng::stream(seed, 0);
    (0..n)
        .map(|_| {
            let mode = (rng::uniform(&mut r) * k_modes as f32) as usize % k_modes;
            let angle = std::f64::consts::TAU * mode as f64 / k_modes as f64;
            let cx = radius * libm::cos(angle) as f32;
            let cy = radius * libm::sin(angle) as f32;
            let dx = rng::gaussian(&mut r) * sigma;
            let dy = rng::gaussian(&mut r) * sigma;
            [cx + dx, cy + dy]
        })
        .collect()
}
