//! "Mini-glyphs": ten procedurally drawn stroke glyphs with random affine jitter.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const GLYPH_CLASSES: usize = 10;

type Segment = ((f64, f64), (f64, f64));

/// Stroke skeletons in the unit box `[-1, 1]²`, y pointing down.
fn strokes(class: usize) -> Vec<Segment> {
    let ring = |rx: f64, ry: f64, n: usize| -> Vec<Segment> {
        (0..n)
            .map(|i| {
                let a0 = std::f64::consts::TAU * i as f64 / n as f64;
                let a1 = std::f64::consts::TAU * (i + 1) as f64 / n as f64;
                (
                    (rx * a0.cos(), ry * a0.sin()),
                    (rx * a1.cos(), ry * a1.sin()),
                )
            })
            .collect()
    };
    match class {
        // ring
        0 => ring(0.55, 0.75, 16),
        // vertical bar
        1 => vec![((0.0, -0.75), (0.0, 0.75))],
        // "Z"
        2 => vec![
            ((-0.55, -0.7), (0.55, -0.7)),
            ((0.55, -0.7), (-0.55, 0.7)),
            ((-0.55, 0.7), (0.55, 0.7)),
        ],
        // cross "X"
        3 => vec![((-0.6, -0.7), (0.6, 0.7)), ((0.6, -0.7), (-0.6, 0.7))],
        // plus
        4 => vec![((0.0, -0.7), (0.0, 0.7)), ((-0.65, 0.0), (0.65, 0.0))],
        // square outline
        5 => vec![
            ((-0.6, -0.6), (0.6, -0.6)),
            ((0.6, -0.6), (0.6, 0.6)),
            ((0.6, 0.6), (-0.6, 0.6)),
            ((-0.6, 0.6), (-0.6, -0.6)),
        ],
        // triangle outline
        6 => vec![
            ((0.0, -0.7), (0.65, 0.6)),
            ((0.65, 0.6), (-0.65, 0.6)),
            ((-0.65, 0.6), (0.0, -0.7)),
        ],
        // "L"
        7 => vec![
            ((-0.45, -0.75), (-0.45, 0.65)),
            ((-0.45, 0.65), (0.55, 0.65)),
        ],
        // "T"
        8 => vec![((-0.6, -0.65), (0.6, -0.65)), ((0.0, -0.65), (0.0, 0.75))],
        // double bar "="
        _ => vec![((-0.6, -0.3), (0.6, -0.3)), ((-0.6, 0.3), (0.6, 0.3))],
    }
}

fn segment_distance(p: (f64, f64), s: &Segment) -> f64 {
    let ((ax, ay), (bx, by)) = *s;
    let (dx, dy) = (bx - ax, by - ay);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - ax) * dx + (p.1 - ay) * dy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (ax + t * dx, ay + t * dy);
    ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt()
}

struct Jitter {
    angle: f64,
    scale: f64,
    shift: (f64, f64),
    half_width: f64,
}

fn rasterize(class: usize, side: usize, jitter: &Jitter) -> Tensor {
    let segs = strokes(class);
    let (s, c) = jitter.angle.sin_cos();
    // One pixel in unit-box coordinates; the glyph box spans 80% of the canvas.
    let px = 2.0 / (0.8 * side as f64);
    let mut data = Vec::with_capacity(side * side);
    for row in 0..side {
        for col in 0..side {
            let u = ((col as f64 + 0.5) - side as f64 / 2.0) * px - jitter.shift.0;
            let v = ((row as f64 + 0.5) - side as f64 / 2.0) * px - jitter.shift.1;
            // Inverse of rotate-then-scale.
            let (u, v) = (
                (c * u + s * v) / jitter.scale,
                (-s * u + c * v) / jitter.scale,
            );
            let d = segs
                .iter()
                .map(|seg| segment_distance((u, v), seg))
                .fold(f64::INFINITY, f64::min);
            let value = 1.0 - (d - jitter.half_width) / px;
            data.push(value.clamp(0.0, 1.0));
        }
    }
    Tensor::raw(vec![side * side], data)
}

/// Draws one jittered glyph of `class` as a flattened `side×side` image in `[0, 1]`.
pub fn render_glyph<R: Rng + ?Sized>(class: usize, side: usize, rng: &mut R) -> Result<Tensor> {
    if class >= GLYPH_CLASSES {
        return Err(Error::Config(format!("glyph class {class} out of range")));
    }
    let jitter = Jitter {
        angle: rng.random_range(-0.2..0.2),
        scale: rng.random_range(0.85..1.1),
        shift: (rng.random_range(-0.12..0.12), rng.random_range(-0.12..0.12)),
        half_width: rng.random_range(0.08..0.16),
    };
    Ok(rasterize(class, side, &jitter))
}

/// Un-jittered reference image of every class, used as nearest-prototype labels.
pub fn glyph_prototypes(side: usize) -> Vec<Tensor> {
    let neutral = Jitter {
        angle: 0.0,
        scale: 1.0,
        shift: (0.0, 0.0),
        half_width: 0.12,
    };
    (0..GLYPH_CLASSES)
        .map(|c| rasterize(c, side, &neutral))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn glyphs_are_in_unit_range_and_distinct() {
        let protos = glyph_prototypes(16);
        for (i, a) in protos.iter().enumerate() {
            assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
            assert!(a.sum() > 5.0, "class {i} has almost no ink");
            for b in &protos[i + 1..] {
                let diff: f64 = a
                    .data()
                    .iter()
                    .zip(b.data())
                    .map(|(x, y)| (x - y).abs())
                    .sum();
                assert!(diff > 5.0);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(render_glyph(10, 16, &mut rng).is_err());
    }
}
