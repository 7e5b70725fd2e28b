//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use std::collections::BTreeMap;

use posedrag::{Joint, LimbGroup, Pose, Quat, Skeleton, Vec3};
use rand::Rng;
use rand_distr::StandardNormal;

pub type M3 = [[f64; 3]; 3];
pub type M4 = [[f64; 4]; 4];

/// Rotation matrix from a unit quaternion, written out independently of the
/// library's conversion.
pub fn rot(q: Quat) -> M3 {
    let n = (q.w * q.w + q.x * q.x + q.y * q.y + q.z * q.z).sqrt();
    let (w, x, y, z) = (q.w / n, q.x / n, q.y / n, q.z / n);
    [
        [w * w + x * x - y * y - z * z, 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), w * w - x * x + y * y - z * z, 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), w * w - x * x - y * y + z * z],
    ]
}

pub fn homogeneous(q: Quat, t: Vec3) -> M4 {
    let r = rot(q);
    let mut m = [[0.0; 4]; 4];
    for i in 0..3 {
        m[i][..3].copy_from_slice(&r[i]);
    }
    m[0][3] = t.x;
    m[1][3] = t.y;
    m[2][3] = t.z;
    m[3][3] = 1.0;
    m
}

pub fn mul4(a: &M4, b: &M4) -> M4 {
    let mut c = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            c[i][j] = (0..4).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    c
}

pub fn mul3t(a: &M3, b: &M3) -> M3 {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = (0..3).map(|k| a[i][k] * b[j][k]).sum();
        }
    }
    c
}

pub fn translation(m: &M4) -> Vec3 {
    Vec3::new(m[0][3], m[1][3], m[2][3])
}

/// Joint transforms from a chain of local (parent-relative) homogeneous
/// matrices. Local rotations are recovered from root-space ones as
/// `q_rs[parent]^-1 * q_rs[j]`, with the root's root-space rotation taken as
/// the identity and `base` placed at the root.
pub fn matrix_chain(p: &Pose, sk: &Skeleton, base: M4) -> Vec<M4> {
    let j = sk.joint_count();
    let mut out: Vec<M4> = Vec::with_capacity(j);
    out.push(base);
    for k in 1..j {
        let parent = sk.parent(k).unwrap();
        let parent_rs = if parent == 0 { Quat::IDENTITY } else { p.joint_rotations[parent] };
        let local = parent_rs.conjugate() * p.joint_rotations[k];
        let t = mul4(&out[parent], &homogeneous(local, sk.joints()[k].offset));
        out.push(t);
    }
    out
}

/// Root-frame FK oracle: root at the origin with its increment applied.
pub fn oracle_fk(p: &Pose, sk: &Skeleton) -> Vec<Vec3> {
    matrix_chain(p, sk, homogeneous(p.joint_rotations[0], Vec3::ZERO))
        .iter()
        .map(translation)
        .collect()
}

/// `acos((tr(R0 R1^T) - 1) / 2)` in degrees.
pub fn oracle_angle_deg(a: Quat, b: Quat) -> f64 {
    let d = mul3t(&rot(a), &rot(b));
    let c = ((d[0][0] + d[1][1] + d[2][2] - 1.0) / 2.0).clamp(-1.0, 1.0);
    c.acos().to_degrees()
}

pub fn random_quat(rng: &mut impl Rng) -> Quat {
    loop {
        let q = Quat::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        if let Ok(u) = q.normalize() {
            return u;
        }
    }
}

pub fn random_vec(rng: &mut impl Rng, scale: f64) -> Vec3 {
    Vec3::new(
        rng.gen_range(-scale..scale),
        rng.gen_range(-scale..scale),
        rng.gen_range(-scale..scale),
    )
}

/// Random tree with `n` joints in topological order, all in one limb group.
pub fn random_skeleton(rng: &mut impl Rng, n: usize) -> Skeleton {
    let joints = (0..n)
        .map(|i| Joint {
            name: format!("j{i}"),
            parent: if i == 0 { None } else { Some(rng.gen_range(0..i)) },
            offset: if i == 0 { Vec3::ZERO } else { random_vec(rng, 0.3) },
        })
        .collect();
    let groups = BTreeMap::from([(LimbGroup::Root, (0..n).collect())]);
    Skeleton::new(joints, groups, BTreeMap::new()).unwrap()
}

pub fn random_pose(rng: &mut impl Rng, joints: usize) -> Pose {
    Pose {
        joint_rotations: (0..joints).map(|_| random_quat(rng)).collect(),
        root_displacement: random_vec(rng, 0.05),
    }
}
