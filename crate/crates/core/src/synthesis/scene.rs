use ndarray::Array4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::ImageTensor;

/// Deterministic clean test scene: a coloured vertical gradient ("sky" to
/// "ground") with a few flat-shaded discs and boxes and mild sinusoidal
/// texture. Used as the clean image when no photographs are available.
pub fn procedural_scene(h: usize, w: usize, seed: u64) -> ImageTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let top: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.3..0.8));
    let bottom: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.05..0.5));
    let freq = rng.random_range(0.05..0.25);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);

    struct Shape {
        disc: bool,
        cx: f64,
        cy: f64,
        rx: f64,
        ry: f64,
        color: [f64; 3],
    }
    let shapes: Vec<Shape> = (0..rng.random_range(3..7))
        .map(|_| Shape {
            disc: rng.random_bool(0.5),
            cx: rng.random_range(0.0..w as f64),
            cy: rng.random_range(0.0..h as f64),
            rx: rng.random_range(0.08..0.3) * w as f64,
            ry: rng.random_range(0.08..0.3) * h as f64,
            color: std::array::from_fn(|_| rng.random_range(0.0..1.0)),
        })
        .collect();

    let data = Array4::from_shape_fn((1, 3, h, w), |(_, c, y, x)| {
        let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
        let v = fy / h as f64;
        let mut px = top[c] * (1.0 - v) + bottom[c] * v;
        for s in &shapes {
            let (dx, dy) = ((fx - s.cx) / s.rx, (fy - s.cy) / s.ry);
            let inside = if s.disc {
                dx * dx + dy * dy <= 1.0
            } else {
                dx.abs() <= 1.0 && dy.abs() <= 1.0
            };
            if inside {
                px = s.color[c];
            }
        }
        px += 0.04 * (freq * fx + phase).sin() * (freq * 0.7 * fy).cos();
        px.clamp(0.0, 1.0)
    });
    ImageTensor::unit(data).expect("clamped into [0, 1]")
}
