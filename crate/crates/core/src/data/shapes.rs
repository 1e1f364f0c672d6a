use crate::rng;

/// Side length of a shapes image.
pub const SHAPE_SIDE: usize = 32;
const SUPERSAMPLE: usize = 4;

/// Generative factors, each in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShapeFactors {
    pub x_pos: f32,
    pub y_pos: f32,
    pub scale: f32,
    pub rotation: f32,
    pub intensity: f32,
}

impl ShapeFactors {
    pub fn to_vec(&self) -> Vec<f32> {
        vec![self.x_pos, self.y_pos, self.scale, self.rotation, self.intensity]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShapesSample {
    /// Row-major `32 x 32` grayscale in `[-1, 1]`.
    pub image: Vec<f32>,
    pub factors: ShapeFactors,
}

/// Render a filled ellipse on a dark background with 4x4 supersampled
/// coverage. Pure function of the factors.
pub fn render_shape(f: &ShapeFactors) -> Vec<f32> {
    let side = SHAPE_SIDE as f32;
    let cx = side * (0.25 + 0.5 * f.x_pos);
    let cy = side * (0.25 + 0.5 * f.y_pos);
    let major = 3.0 + 5.0 * f.scale;
    let minor = 0.5 * major;
    let theta = std::f64::consts::PI * f.rotation as f64;
    let (sin, cos) = (libm::sin(theta) as f32, libm::cos(theta) as f32);
    let brightness = 0.25 + 0.75 * f.intensity;
    let sub = SUPERSAMPLE as f32;

    let mut image = Vec::with_capacity(SHAPE_SIDE * SHAPE_SIDE);
    for row in 0..SHAPE_SIDE {
        for col in 0..SHAPE_SIDE {
            let mut inside = 0u32;
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let px = col as f32 + (sx as f32 + 0.5) / sub;
                    let py = row as f32 + (sy as f32 + 0.5) / sub;
                    let (dx, dy) = (px - cx, py - cy);
                    let u = (dx * cos + dy * sin) / major;
                    let v = (dy * cos - dx * sin) / minor;
                    if u * u + v * v <= 1.0 {
                        inside += 1;
                    }
                }
            }
            let coverage = inside as f32 / (sub * sub);
            image.push(-1.0 + 2.0 * brightness * coverage);
        }
    }
    image
}

/// `n` samples with factors drawn uniformly from `seed`.
pub fn gen_shapes(n: usize, seed: u64) -> Vec<ShapesSample> {
    let mut r = rng::stream(seed, 0);
    (0..n)
        .map(|_| {
            let mut u = || rng::uniform(&mut r);
            let factors = ShapeFactors {
                x_pos: u(),
                y_pos: u(),
                scale: u(),
                rotation: u(),
                intensity: u(),
            };
            ShapesSample {
                image: render_shape(&factors),
                factors,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn centred(scale: f32, intensity: f32) -> ShapeFactors {
        ShapeFactors {
            x_pos: 0.5,
            y_pos: 0.5,
            scale,
            rotation: 0.0,
            intensity,
        }
    }

    #[test]
    fn centred_unrotated_is_mirror_symmetric() {
        for s in [0.0, 0.37, 1.0] {
            let img = render_shape(&centred(s, 1.0));
            for row in 0..SHAPE_SIDE {
                for col in 0..SHAPE_SIDE {
                    let a = img[row * SHAPE_SIDE + col];
                    let b = img[row * SHAPE_SIDE + SHAPE_SIDE - 1 - col];
                    assert!((a - b).abs() <= 1e-6);
                }
            }
        }
    }

    #[test]
    fn pixels_in_range_and_background_dark() {
        let img = render_shape(&centred(0.5, 1.0));
        assert!(img.iter().all(|v| (-1.0..=1.0).contains(v)));
        assert_eq!(img[0], -1.0);
        assert_eq!(img[SHAPE_SIDE * SHAPE_SIDE / 2 + SHAPE_SIDE / 2], 1.0);
    }

    #[test]
    fn mean_pixel_increases_with_intensity() {
        let means: Vec<f32> = (0..=10)
            .map(|i| {
                let img = render_shape(&centred(0.4, i as f32 / 10.0));
                img.iter().sum::<f32>() / img.len() as f32
            })
            .collect();
        for w in means.windows(2) {
            assert!(w[1] > w[0], "{means:?}");
        }
    }

    #[test]
    fn same_seed_same_dataset() {
        let a = gen_shapes(20, 5);
        let b = gen_shapes(20, 5);
        assert_eq!(a, b);
        assert!(a.iter().zip(&b).all(|(x, y)| x
            .image
            .iter()
            .zip(&y.image)
            .all(|(p, q)| p.to_bits() == q.to_bits())));
        assert_ne!(a, gen_shapes(20, 6));
    }
}
