//! Viewpoint and scale canonicalization via a single similarity transform
//! per sequence.

use nalgebra::{Matrix3, Vector3};

use super::{JointIndex, PoseSequence};
use crate::error::{Error, Result};

/// Below this root displacement the walking direction is undefined and the
/// input orientation is kept.
const MIN_DISPLACEMENT: f64 = 1e-6;

/// `p -> scale * rotation * p + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub rotation: Matrix3<f64>,
    pub scale: f64,
    pub translation: Vector3<f64>,
}

impl Similarity {
    pub fn identity() -> Self {
        Similarity {
            rotation: Matrix3::identity(),
            scale: 1.0,
            translation: Vector3::zeros(),
        }
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let v = self.scale * (self.rotation * Vector3::from(p)) + self.translation;
        [v.x, v.y, v.z]
    }

    pub fn apply_sequence(&self, seq: &PoseSequence) -> PoseSequence {
        let mut out = seq.clone();
        for frame in &mut out.frames {
            for joint in frame.iter_mut() {
                *joint = self.apply(*joint);
            }
        }
        out
    }
}

/// Proper rotation maximizing `trace(R^T sigma)` for a 3x3 cross-covariance
/// `sigma = sum(dst * src^T)`, with the reflection correction. Also returns
/// `trace(D S)`, the numerator of the optimal scale.
fn rotation_from_covariance(sigma: Matrix3<f64>) -> (Matrix3<f64>, f64) {
    let svd = sigma.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut s = Vector3::repeat(1.0);
    if u.determinant() * v_t.determinant() < 0.0 {
        s[svd.singular_values.imin()] = -1.0;
    }
    let rotation = u * Matrix3::from_diagonal(&s) * v_t;
    (rotation, svd.singular_values.dot(&s))
}

/// Closed-form least-squares similarity (rotation, optional uniform scale,
/// translation) mapping `src` onto `dst`.
pub fn umeyama(src: &[[f64; 3]], dst: &[[f64; 3]], with_scale: bool) -> Result<Similarity> {
    if src.len() != dst.len() || src.is_empty() {
        return Err(Error::Shape(format!(
            "umeyama needs equal non-empty point sets, got {} and {}",
            src.len(),
            dst.len()
        )));
    }
    let n = src.len() as f64;
    let mean = |pts: &[[f64; 3]]| pts.iter().map(|&p| Vector3::from(p)).sum::<Vector3<f64>>() / n;
    let (mu_s, mu_d) = (mean(src), mean(dst));

    let mut sigma = Matrix3::zeros();
    let mut var_s = 0.0;
    for (s, d) in src.iter().zip(dst) {
        let cs = Vector3::from(*s) - mu_s;
        let cd = Vector3::from(*d) - mu_d;
        sigma += cd * cs.transpose();
        var_s += cs.norm_squared();
    }
    sigma /= n;
    var_s /= n;

    let (rotation, trace_ds) = rotation_from_covariance(sigma);
    let scale = if with_scale {
        if var_s <= 0.0 {
            return Err(Error::invalid("umeyama: source points are coincident"));
        }
        trace_ds / var_s
    } else {
        1.0
    };
    let translation = mu_d - scale * rotation * mu_s;
    Ok(Similarity {
        rotation,
        scale,
        translation,
    })
}

fn canonical_rotation(seq: &PoseSequence) -> Matrix3<f64> {
    let root = JointIndex::Root.idx();
    let neck = JointIndex::Neck.idx();
    let first = Vector3::from(seq.frames[0][root]);
    let last = Vector3::from(seq.frames[seq.tau() - 1][root]);
    let displacement = last - first;
    if displacement.norm() < MIN_DISPLACEMENT {
        return Matrix3::identity();
    }
    let up: Vector3<f64> = seq
        .frames
        .iter()
        .map(|f| Vector3::from(f[neck]) - Vector3::from(f[root]))
        .sum::<Vector3<f64>>()
        / seq.tau() as f64;
    if up.norm() < MIN_DISPLACEMENT {
        return Matrix3::identity();
    }
    let up = up.normalize();
    let forward = displacement - displacement.dot(&up) * up;
    if forward.norm() < MIN_DISPLACEMENT {
        return Matrix3::identity();
    }
    let forward = forward.normalize();
    // Align (up, forward) with (+y, +z).
    let sigma = Vector3::y() * up.transpose() + Vector3::z() * forward.transpose();
    rotation_from_covariance(sigma).0
}

/// Rotates the walk to +z forward / +y up, scales so the longest edge of the
/// bounding box over all frames is 1, and centers the first pose's centroid
/// at the origin. One transform is shared by all frames.
pub fn similarity_normalize(seq: &PoseSequence) -> Result<PoseSequence> {
    similarity_normalize_with_transform(seq).map(|(s, _)| s)
}

pub fn similarity_normalize_with_transform(
    seq: &PoseSequence,
) -> Result<(PoseSequence, Similarity)> {
    seq.validate()?;
    let spread = seq
        .frames
        .iter()
        .map(|f| {
            (0..3)
                .map(|a| {
                    let (lo, hi) = f.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                        (lo.min(p[a]), hi.max(p[a]))
                    });
                    hi - lo
                })
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max);
    if spread <= 0.0 {
        return Err(Error::Degenerate(seq.id.clone()));
    }

    let rotation = canonical_rotation(seq);
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for p in seq.frames.iter().flatten() {
        let q = rotation * Vector3::from(*p);
        lo = lo.inf(&q);
        hi = hi.sup(&q);
    }
    let longest = (hi - lo).max();
    if !(longest > 0.0) {
        return Err(Error::Degenerate(seq.id.clone()));
    }
    let scale = 1.0 / longest;
    let centroid = seq.frames[0].iter().map(|&p| Vector3::from(p)).sum::<Vector3<f64>>()
        / seq.frames[0].len() as f64;
    let transform = Similarity {
        rotation,
        scale,
        translation: -scale * (rotation * centroid),
    };
    Ok((transform.apply_sequence(seq), transform))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_rotation(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
        let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let angle = rng.random_range(-3.0..3.0);
        *Rotation3::from_scaled_axis(axis.normalize() * angle).matrix()
    }

    /// A crude walker: root moves along a tilted direction, body above it.
    fn walker(rng: &mut ChaCha8Rng) -> PoseSequence {
        let frames = (0..40)
            .map(|k| {
                let t = k as f64 / 30.0;
                let mut pose = [[0.0; 3]; 16];
                for (j, p) in pose.iter_mut().enumerate() {
                    *p = [
                        0.3 * t + 0.1 * (j as f64).sin() + 0.01 * rng.random::<f64>(),
                        0.1 * j as f64,
                        1.2 * t + 0.05 * (j as f64).cos() + 0.01 * rng.random::<f64>(),
                    ];
                }
                pose[JointIndex::Root.idx()][1] = 0.0;
                pose[JointIndex::Neck.idx()][1] = 0.6;
                pose
            })
            .collect();
        PoseSequence::new("w", "s", 1, 30.0, frames).unwrap()
    }

    fn max_diff(a: &PoseSequence, b: &PoseSequence) -> f64 {
        a.frames
            .iter()
            .flatten()
            .flatten()
            .zip(b.frames.iter().flatten().flatten())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn umeyama_recovers_known_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let src: Vec<[f64; 3]> = (0..20)
            .map(|_| [rng.random(), rng.random(), rng.random()])
            .collect();
        let truth = Similarity {
            rotation: random_rotation(&mut rng),
            scale: 2.5,
            translation: Vector3::new(1.0, -2.0, 0.5),
        };
        let dst: Vec<[f64; 3]> = src.iter().map(|&p| truth.apply(p)).collect();
        let est = umeyama(&src, &dst, true).unwrap();
        assert!((est.scale - 2.5).abs() < 1e-12);
        assert!((est.rotation - truth.rotation).abs().max() < 1e-12);
        assert!((est.translation - truth.translation).abs().max() < 1e-12);
    }

    #[test]
    fn normalized_output_satisfies_postconditions() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = similarity_normalize(&walker(&mut rng)).unwrap();
        let c: Vector3<f64> =
            out.frames[0].iter().map(|&p| Vector3::from(p)).sum::<Vector3<f64>>() / 16.0;
        assert!(c.norm() < 1e-9);
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in out.frames.iter().flatten() {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let longest = (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max);
        assert!((longest - 1.0).abs() < 1e-9);
        // Walking along +z.
        let root = JointIndex::Root.idx();
        assert!(out.frames.last().unwrap()[root][2] > out.frames[0][root][2]);
    }

    #[test]
    fn fixed_point_and_pure_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let canonical = similarity_normalize(&walker(&mut rng)).unwrap();
        let again = similarity_normalize(&canonical).unwrap();
        assert!(max_diff(&canonical, &again) < 1e-12);

        let doubled = Similarity {
            rotation: Matrix3::identity(),
            scale: 2.0,
            translation: Vector3::zeros(),
        }
        .apply_sequence(&canonical);
        let (back, t) = similarity_normalize_with_transform(&doubled).unwrap();
        assert!((t.scale - 0.5).abs() < 1e-12);
        assert!(max_diff(&back, &canonical) < 1e-12);
    }

    #[test]
    fn invariant_under_known_similarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let seq = walker(&mut rng);
        let base = similarity_normalize(&seq).unwrap();
        for _ in 0..10 {
            let g = Similarity {
                rotation: random_rotation(&mut rng),
                scale: rng.random_range(0.1..10.0),
                translation: Vector3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)),
            };
            let moved = similarity_normalize(&g.apply_sequence(&seq)).unwrap();
            assert!(max_diff(&moved, &base) < 1e-9);
        }
    }

    #[test]
    fn coincident_joints_are_degenerate() {
        let frames = vec![[[1.0, 2.0, 3.0]; 16]; 5];
        let seq = PoseSequence::new("d", "s", 1, 30.0, frames).unwrap();
        assert!(matches!(similarity_normalize(&seq), Err(Error::Degenerate(_))));
    }
}
