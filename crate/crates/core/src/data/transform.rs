//! Deterministic dataset transforms that turn one base dataset into a task.

use std::fmt;
use std::sync::Arc;

use super::{Dataset, PixelOp};
use crate::error::{ensure, Result};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq)]
pub enum TaskTransform {
    Identity,
    /// Counter-clockwise rotation about the image center, in degrees.
    Rotation { degrees: f64 },
    /// One fixed pixel shuffle drawn from `seed`.
    Permutation { seed: u64 },
    /// Additive i.i.d. `N(mean, std²)` pixel noise, clamped to [0, 1].
    GaussianNoise { mean: f64, std: f64 },
    /// Relabels `fraction` of the examples with a different, uniform class.
    LabelCorrupt { fraction: f64, seed: u64 },
    /// Drops every example of `k` classes chosen from `seed`.
    ClassRemoval { k: usize, seed: u64 },
    /// Uses another registered base dataset for this task.
    DatasetSwap { name: String },
}

impl TaskTransform {
    pub fn validate(&self) -> Result<()> {
        match self {
            TaskTransform::Rotation { degrees } => {
                ensure!(
                    degrees.is_finite() && (0.0..=180.0).contains(degrees),
                    "rotation angle {degrees} outside [0, 180]"
                );
            }
            TaskTransform::GaussianNoise { mean, std } => {
                ensure!(mean.is_finite() && std.is_finite() && *std >= 0.0, "invalid noise N({mean}, {std}²)");
            }
            TaskTransform::LabelCorrupt { fraction, .. } => {
                ensure!((0.0..=1.0).contains(fraction), "corruption fraction {fraction} outside [0, 1]");
            }
            TaskTransform::DatasetSwap { name } => ensure!(!name.is_empty(), "empty dataset name"),
            _ => {}
        }
        Ok(())
    }
}

impl fmt::Display for TaskTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskTransform::Identity => write!(f, "identity"),
            TaskTransform::Rotation { degrees } => write!(f, "rotation({degrees})"),
            TaskTransform::Permutation { seed } => write!(f, "permutation({seed})"),
            TaskTransform::GaussianNoise { mean, std } => write!(f, "gaussian_noise({mean},{std})"),
            TaskTransform::LabelCorrupt { fraction, seed } => write!(f, "label_corrupt({fraction},{seed})"),
            TaskTransform::ClassRemoval { k, seed } => write!(f, "class_removal({k},{seed})"),
            TaskTransform::DatasetSwap { name } => write!(f, "dataset_swap({name})"),
        }
    }
}

/// The pixel shuffle used by `Permutation { seed }` on images of `width` pixels.
pub fn pixel_permutation(width: usize, seed: u64) -> Vec<usize> {
    Rng::new(seed).substream("pixel-permutation").permutation(width)
}

/// The classes dropped by `ClassRemoval { k, seed }`, ascending.
pub fn removed_classes(num_classes: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut c = Rng::new(seed).substream("class-removal").sample_indices(num_classes, k);
    c.sort_unstable();
    c
}

/// Applies `t` to `ds`. Only noise consumes `rng` (for its per-split seed);
/// every other transform is a function of its own parameters.
///
/// `DatasetSwap` is resolved by the stream builder; here it only checks that
/// the dataset already is the named one.
pub fn apply_transform(ds: &Dataset, t: &TaskTransform, rng: &mut Rng) -> Result<Dataset> {
    t.validate()?;
    match t {
        TaskTransform::Identity => Ok(ds.clone()),
        TaskTransform::Rotation { degrees } => {
            if *degrees == 0.0 {
                return Ok(ds.clone());
            }
            let side = square_side(ds.width())?;
            Ok(ds.with_op(PixelOp::Resample(Arc::new(rotation_table(side, *degrees)))))
        }
        TaskTransform::Permutation { seed } => ds.permute_pixels(&pixel_permutation(ds.width(), *seed)),
        TaskTransform::GaussianNoise { mean, std } => {
            let seed = rng.substream("gaussian-noise").seed();
            Ok(ds.with_op(PixelOp::Noise {
                mean: *mean,
                std: *std,
                seed,
            }))
        }
        TaskTransform::LabelCorrupt { fraction, seed } => {
            let c = ds.num_classes();
            let n = ds.len();
            let m = (fraction * n as f64).round() as usize;
            let mut r = Rng::new(*seed).substream("label-corrupt");
            let mut labels = ds.labels().to_vec();
            if c >= 2 {
                for i in r.sample_indices(n, m) {
                    labels[i] = (labels[i] + 1 + r.below(c - 1)) % c;
                }
            }
            Ok(ds.with_labels(labels))
        }
        TaskTransform::ClassRemoval { k, seed } => {
            ensure!(*k < ds.num_classes(), "cannot remove {k} of {} classes", ds.num_classes());
            let gone = removed_classes(ds.num_classes(), *k, *seed);
            let keep: Vec<usize> = (0..ds.len()).filter(|&i| !gone.contains(&ds.label(i))).collect();
            ds.subset(&keep)
        }
        TaskTransform::DatasetSwap { name } => {
            ensure!(ds.name() == name, "dataset_swap({name}) applied to dataset '{}'", ds.name());
            Ok(ds.clone())
        }
    }
}

fn square_side(width: usize) -> Result<usize> {
    let side = (width as f64).sqrt().round() as usize;
    ensure!(side * side == width, "rotation needs square images, width {width}");
    Ok(side)
}

/// Exact cosine/sine for multiples of 90°, so quarter turns are pure index maps.
fn cos_sin(degrees: f64) -> (f64, f64) {
    let quarter = degrees / 90.0;
    if quarter.fract() == 0.0 {
        match (quarter as i64).rem_euclid(4) {
            0 => (1.0, 0.0),
            1 => (0.0, 1.0),
            2 => (-1.0, 0.0),
            _ => (0.0, -1.0),
        }
    } else {
        let r = degrees.to_radians();
        (r.cos(), r.sin())
    }
}

/// Bilinear taps for rotating a `side × side` image. Each output pixel pulls
/// from the inversely rotated source location; reads outside the image are 0.
pub(crate) fn rotation_table(side: usize, degrees: f64) -> Vec<Vec<(u32, f64)>> {
    let (cos, sin) = cos_sin(degrees);
    let center = (side as f64 - 1.0) / 2.0;
    let snap = |x: f64| {
        let r = x.round();
        if (x - r).abs() < 1e-9 {
            r
        } else {
            x
        }
    };
    let mut table = Vec::with_capacity(side * side);
    for r in 0..side {
        for c in 0..side {
            let dx = c as f64 - center;
            let dy = r as f64 - center;
            // Image rows grow downward, so a visual counter-clockwise turn
            // uses the transposed rotation in (row, col) coordinates.
            let sx = snap(cos * dx - sin * dy + center);
            let sy = snap(sin * dx + cos * dy + center);
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let mut taps = Vec::with_capacity(4);
            for (yy, wy) in [(y0, 1.0 - fy), (y0 + 1.0, fy)] {
                for (xx, wx) in [(x0, 1.0 - fx), (x0 + 1.0, fx)] {
                    let w = wy * wx;
                    if w == 0.0 || xx < 0.0 || yy < 0.0 || xx >= side as f64 || yy >= side as f64 {
                        continue;
                    }
                    taps.push(((yy as usize * side + xx as usize) as u32, w));
                }
            }
            table.push(taps);
        }
    }
    table
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Split;
    use crate::linalg::Matrix;

    fn random_images(n: usize, side: usize, seed: u64) -> Dataset {
        let mut rng = Rng::new(seed);
        let data: Vec<f64> = (0..n * side * side).map(|_| rng.uniform()).collect();
        let labels = (0..n).map(|i| i % 10).collect();
        Dataset::from_matrix("rand", Split::Train, Matrix::new(n, side * side, data).unwrap(), labels, 10).unwrap()
    }

    #[test]
    fn zero_rotation_is_identity() {
        let ds = random_images(3, 28, 1);
        let r = apply_transform(&ds, &TaskTransform::Rotation { degrees: 0.0 }, &mut Rng::new(0)).unwrap();
        assert_eq!(r.images(), ds.images());
        // The resampling path itself is also exact at 0°.
        let t = rotation_table(28, 0.0);
        assert!(t.iter().enumerate().all(|(i, taps)| taps == &vec![(i as u32, 1.0)]));
    }

    #[test]
    fn half_turn_is_an_index_flip() {
        let ds = random_images(2, 28, 2);
        let r = apply_transform(&ds, &TaskTransform::Rotation { degrees: 180.0 }, &mut Rng::new(0)).unwrap();
        for i in 0..2 {
            let (a, b) = (ds.image(i), r.image(i));
            for row in 0..28 {
                for col in 0..28 {
                    assert_eq!(b[row * 28 + col], a[(27 - row) * 28 + (27 - col)]);
                }
            }
        }
    }

    #[test]
    fn quarter_turns_compose() {
        let ds = random_images(1, 6, 3);
        let mut rng = Rng::new(0);
        let once = apply_transform(&ds, &TaskTransform::Rotation { degrees: 90.0 }, &mut rng).unwrap();
        let twice = apply_transform(&once, &TaskTransform::Rotation { degrees: 90.0 }, &mut rng).unwrap();
        let half = apply_transform(&ds, &TaskTransform::Rotation { degrees: 180.0 }, &mut rng).unwrap();
        assert_eq!(twice.image(0), half.image(0));
    }

    #[test]
    fn rotation_stays_in_unit_range() {
        let ds = random_images(4, 28, 4);
        let r = apply_transform(&ds, &TaskTransform::Rotation { degrees: 37.3 }, &mut Rng::new(0)).unwrap();
        assert!(r.images().data().iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn permutation_inverse_roundtrip() {
        let ds = random_images(3, 28, 5);
        let p = apply_transform(&ds, &TaskTransform::Permutation { seed: 77 }, &mut Rng::new(0)).unwrap();
        assert_ne!(p.images(), ds.images());
        let perm = pixel_permutation(784, 77);
        let mut inv = vec![0; 784];
        for (j, &s) in perm.iter().enumerate() {
            inv[s] = j;
        }
        assert_eq!(p.permute_pixels(&inv).unwrap().images(), ds.images());
    }

    #[test]
    fn full_corruption_changes_every_label() {
        let ds = random_images(200, 4, 6);
        let t = TaskTransform::LabelCorrupt { fraction: 1.0, seed: 3 };
        let c = apply_transform(&ds, &t, &mut Rng::new(0)).unwrap();
        assert!(ds.labels().iter().zip(c.labels()).all(|(a, b)| a != b && *b < 10));
        let half = apply_transform(&ds, &TaskTransform::LabelCorrupt { fraction: 0.5, seed: 3 }, &mut Rng::new(0)).unwrap();
        let changed = ds.labels().iter().zip(half.labels()).filter(|(a, b)| a != b).count();
        assert_eq!(changed, 100);
    }

    #[test]
    fn class_removal_drops_exactly_k_classes() {
        let ds = random_images(100, 4, 7);
        let r = apply_transform(&ds, &TaskTransform::ClassRemoval { k: 3, seed: 9 }, &mut Rng::new(0)).unwrap();
        let gone = removed_classes(10, 3, 9);
        assert_eq!(gone.len(), 3);
        assert_eq!(r.len(), 70);
        assert!(r.labels().iter().all(|l| !gone.contains(l)));
        assert!(apply_transform(&ds, &TaskTransform::ClassRemoval { k: 10, seed: 9 }, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn noise_is_clamped_and_deterministic() {
        let ds = random_images(5, 4, 8);
        let t = TaskTransform::GaussianNoise { mean: 0.5, std: 1.0 };
        let a = apply_transform(&ds, &t, &mut Rng::new(1)).unwrap();
        let b = apply_transform(&ds, &t, &mut Rng::new(1)).unwrap();
        assert_eq!(a.images(), b.images());
        assert!(a.images().data().iter().all(|&x| (0.0..=1.0).contains(&x)));
        assert_ne!(a.images(), ds.images());
    }

    #[test]
    fn validation() {
        assert!(TaskTransform::Rotation { degrees: 181.0 }.validate().is_err());
        assert!(TaskTransform::LabelCorrupt { fraction: 1.5, seed: 0 }.validate().is_err());
        assert!(TaskTransform::GaussianNoise { mean: 0.0, std: -1.0 }.validate().is_err());
    }
}
