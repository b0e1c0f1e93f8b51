//! Independent oracles shared by the integration tests.

#![allow(dead_code)]

use nalgebra::{Matrix3, Rotation3, Unit};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stabshape::policy::PlanningModel;
use stabshape::rotation::{Quat, Vec3};
use stabshape::skeleton::{JointKind, JointRotation, Pose, SkeletonSpec, TrajectorySegment};
use stabshape::stabilizer::Point2;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Rodrigues' formula.
pub fn axis_angle_matrix(axis: &Vec3, angle: f64) -> Matrix3<f64> {
    let k = axis.normalize();
    let kx = Matrix3::new(0.0, -k.z, k.y, k.z, 0.0, -k.x, -k.y, k.x, 0.0);
    Matrix3::identity() + kx * angle.sin() + kx * kx * (1.0 - angle.cos())
}

/// Angles `(t1, t2, t3)` with `m = R(a3, t3) R(a2, t2) R(a1, t1)` for an
/// orthonormal triple `a_k = frame * e_{perm[k]}`. The middle angle is taken
/// in `[-pi/2, pi/2]`.
pub fn decompose_triple(m: &Matrix3<f64>, frame: &Matrix3<f64>, perm: [usize; 3]) -> [f64; 3] {
    let local = frame.transpose() * m * frame;
    let (i, j, k) = (perm[2], perm[1], perm[0]);
    let s = if (j + 3 - i) % 3 == 1 { 1.0 } else { -1.0 };
    let beta = (s * local[(i, k)]).clamp(-1.0, 1.0).asin();
    let alpha = (-s * local[(j, k)]).atan2(local[(k, k)]);
    let gamma = (-s * local[(i, j)]).atan2(local[(i, i)]);
    [gamma, beta, alpha]
}

pub fn quat_of(m: &Matrix3<f64>) -> Quat {
    Quat::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*m))
}

pub fn random_frame(rng: &mut impl Rng) -> Matrix3<f64> {
    let axis = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let axis = if axis.norm() < 1e-3 { Vec3::z() } else { axis };
    *Rotation3::from_axis_angle(&Unit::new_normalize(axis), rng.random_range(-3.0..3.0)).matrix()
}

/// Closest point of a convex polygon (counter-clockwise vertices) by brute
/// force over its edges.
pub fn closest_point_on_polygon(vertices: &[Point2], p: Point2) -> Point2 {
    let n = vertices.len();
    if n == 1 {
        return vertices[0];
    }
    let inside = n >= 3
        && (0..n).all(|i| {
            let a = vertices[i];
            let b = vertices[(i + 1) % n];
            (b - a).perp(&(p - a)) >= 0.0
        });
    if inside {
        return p;
    }
    let mut best = vertices[0];
    let mut best_d = f64::INFINITY;
    for i in 0..n {
        let a = vertices[i];
        let b = vertices[(i + 1) % n];
        let ab = b - a;
        let t = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
        let c = a + ab * t;
        let d = (p - c).norm();
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

/// A pose with each joint rotated by up to `spread` around the zero pose.
pub fn random_pose(skeleton: &SkeletonSpec, spread: f64, rng: &mut impl Rng) -> Pose {
    let mut pose = stabshape::skeleton::zero_pose(skeleton);
    for (i, joint) in skeleton.joints().iter().enumerate() {
        let Some(slot) = skeleton.rotation_slot(i) else { continue };
        pose.joint_rotations[slot] = match joint.kind {
            JointKind::Spherical => {
                let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                JointRotation::Quat(stabshape::rotation::exp_map(&(v * spread)))
            }
            _ => JointRotation::Angle(rng.random_range(-spread..spread)),
        };
    }
    pose
}

/// `base` jittered independently per frame: joint noise of up to `noise`
/// radians and root offsets of up to `root` metres.
pub fn noisy_segment(base: &Pose, skeleton: &SkeletonSpec, len: usize, noise: f64, root: f64, rng: &mut impl Rng) -> TrajectorySegment {
    let poses = (0..len)
        .map(|_| {
            let mut p = base.clone();
            p.root_translation += Vec3::new(rng.random_range(-root..root), rng.random_range(-root..root), 0.0);
            for (i, joint) in skeleton.joints().iter().enumerate() {
                let Some(slot) = skeleton.rotation_slot(i) else { continue };
                p.joint_rotations[slot] = match (&joint.kind, p.joint_rotations[slot]) {
                    (JointKind::Spherical, JointRotation::Quat(q)) => {
                        let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                        JointRotation::Quat(stabshape::rotation::renormalize(q * stabshape::rotation::exp_map(&(v * noise))))
                    }
                    (_, JointRotation::Angle(a)) => JointRotation::Angle(a + rng.random_range(-noise..noise)),
                    (_, r) => r,
                };
            }
            p
        })
        .collect();
    TrajectorySegment::new(poses).unwrap()
}

/// Known linear dynamics `z' = A z + B a` with reward `-(|z|^2 + c |a|^2)`
/// and no terminal value.
pub struct LinearQuadratic {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub action_cost: f64,
    pub state: Vec<f64>,
}

impl LinearQuadratic {
    pub fn random(rng: &mut impl Rng, n: usize, m: usize) -> Self {
        let a = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 } + rng.random_range(-0.1..0.1)).collect())
            .collect();
        let b = (0..n).map(|_| (0..m).map(|_| rng.random_range(-0.5..0.5)).collect()).collect();
        let state = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        Self { a, b, action_cost: 0.1, state }
    }

    /// Discounted return of an open-loop action sequence from `state`.
    pub fn sequence_return(&self, actions: &[Vec<f64>], gamma: f64) -> f64 {
        let mut z = self.state.clone();
        let mut total = 0.0;
        let mut d = 1.0;
        for a in actions {
            total += d * self.reward(&z, a);
            z = self.next_latent(&z, a);
            d *= gamma;
        }
        total
    }
}

impl PlanningModel for LinearQuadratic {
    fn action_dim(&self) -> usize {
        self.b[0].len()
    }

    fn encode(&self, state: &[f64]) -> Vec<f64> {
        state.to_vec()
    }

    fn next_latent(&self, z: &[f64], a: &[f64]) -> Vec<f64> {
        (0..z.len())
            .map(|i| {
                let az: f64 = self.a[i].iter().zip(z).map(|(x, y)| x * y).sum();
                let ba: f64 = self.b[i].iter().zip(a).map(|(x, y)| x * y).sum();
                az + ba
            })
            .collect()
    }

    fn reward(&self, z: &[f64], a: &[f64]) -> f64 {
        -(z.iter().map(|x| x * x).sum::<f64>() + self.action_cost * a.iter().map(|x| x * x).sum::<f64>())
    }

    fn value(&self, _z: &[f64], _a: &[f64]) -> f64 {
        0.0
    }

    fn prior_mean(&self, _z: &[f64]) -> Vec<f64> {
        vec![0.0; self.action_dim()]
    }

    fn prior_sample(&self, _z: &[f64], rng: &mut dyn rand::RngCore) -> Vec<f64> {
        (0..self.action_dim()).map(|_| rng.random_range(-1.0..1.0)).collect()
    }
}

/// Best of `budget` uniform random action sequences.
pub fn random_shooting(model: &LinearQuadratic, horizon: usize, budget: usize, gamma: f64, rng: &mut impl Rng) -> f64 {
    let m = model.action_dim();
    (0..budget)
        .map(|_| {
            let seq: Vec<Vec<f64>> = (0..horizon).map(|_| (0..m).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            model.sequence_return(&seq, gamma)
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Energy of a hanging link about a fixed pivot, zero at rest: `phi` is
/// measured from straight down.
pub fn hanging_link_energy(mass: f64, length: f64, inertia: f64, gravity: f64, phi: f64, omega: f64) -> f64 {
    0.5 * (mass * length * length + inertia) * omega * omega + mass * gravity * length * (1.0 - phi.cos())
}
