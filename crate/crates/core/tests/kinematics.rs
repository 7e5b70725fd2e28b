mod support;

use posedrag::kinematics::{
    compose_root, forward_kinematics, global_joints, rotation_angle_error, sparse_fk, to_dual_quaternions,
};
use posedrag::{Quat, RootState, SensorRole, Skeleton, Vec3};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use support::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn fk_matches_matrix_chain(seed in any::<u64>(), n in 5usize..=22) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sk = random_skeleton(&mut rng, n);
        let p = random_pose(&mut rng, n);
        let fk = forward_kinematics(&p, &sk).unwrap();
        for (a, b) in fk.iter().zip(oracle_fk(&p, &sk)) {
            prop_assert!((*a - b).norm() <= 1e-6);
        }
    }

    #[test]
    fn dual_quaternion_translation_matches_fk(seed in any::<u64>(), n in 5usize..=22) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sk = random_skeleton(&mut rng, n);
        let p = random_pose(&mut rng, n);
        let fk = forward_kinematics(&p, &sk).unwrap();
        let dqs = to_dual_quaternions(&p, &sk).unwrap();
        prop_assert!((dqs[0].translation() - p.root_displacement).norm() <= 1e-6);
        for (dq, pos) in dqs.iter().zip(&fk).skip(1) {
            prop_assert!((dq.translation() - *pos).norm() <= 1e-6);
        }
        for dq in &dqs {
            prop_assert!((dq.real.norm() - 1.0).abs() <= 1e-9);
            prop_assert!(dq.orthogonality().abs() <= 1e-7);
        }
    }
}

proptest! {
    #[test]
    fn quaternion_product_composes_rotations(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = (random_quat(&mut rng), random_quat(&mut rng));
        let v = random_vec(&mut rng, 2.0);
        let lhs = (a * b).rotate(v);
        prop_assert!((lhs - a.rotate(b.rotate(v))).norm() <= 1e-12);
        let m = rot(a * b);
        let oracle = Vec3::new(
            m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
            m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
            m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z,
        );
        prop_assert!((lhs - oracle).norm() <= 1e-12);
        prop_assert!((a.rotate(v).norm() - v.norm()).abs() <= 1e-9);
    }

    #[test]
    fn normalize_gives_unit_norm(w in -10.0..10.0f64, x in -10.0..10.0f64, y in -10.0..10.0f64, z in -10.0..10.0f64) {
        let q = Quat::new(w, x, y, z);
        prop_assume!(q.norm() > 1e-6);
        prop_assert!((q.normalize().unwrap().norm() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn angle_error_matches_trace_oracle(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = (random_quat(&mut rng), random_quat(&mut rng));
        let e = rotation_angle_error(a, b);
        prop_assert!((e - oracle_angle_deg(a, b)).abs() <= 1e-6);
        prop_assert_eq!(e, rotation_angle_error(b, a));
        prop_assert_eq!(rotation_angle_error(a, a), 0.0);
        prop_assert_eq!(rotation_angle_error(a, -a), 0.0);
        prop_assert!((0.0..=180.0).contains(&e));
    }

    #[test]
    fn compose_root_matches_matrix_product(seed in any::<u64>(), steps in 1usize..200) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut state = RootState::IDENTITY;
        let mut m = homogeneous(Quat::IDENTITY, Vec3::ZERO);
        for _ in 0..steps {
            let p = random_pose(&mut rng, 1);
            state = compose_root(&state, &p).unwrap();
            m = mul4(&m, &homogeneous(p.joint_rotations[0], p.root_displacement));
        }
        prop_assert!((state.world_position - translation(&m)).norm() <= 1e-6);
        let r = rot(state.world_rotation);
        for i in 0..3 {
            for j in 0..3 {
                prop_assert!((r[i][j] - m[i][j]).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn sparse_fk_matches_matrix_chain_under_random_root(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sk = Skeleton::standard();
        let p = random_pose(&mut rng, sk.joint_count());
        let prev = RootState::new(random_quat(&mut rng), random_vec(&mut rng, 3.0));
        let base = mul4(
            &homogeneous(prev.world_rotation, prev.world_position),
            &homogeneous(p.joint_rotations[0], p.root_displacement),
        );
        let chain = matrix_chain(&p, &sk, base);
        let all = global_joints(&p, &sk, &prev).unwrap();
        for (k, (pos, q)) in all.iter().enumerate() {
            prop_assert!((*pos - translation(&chain[k])).norm() <= 1e-6);
            let r = rot(*q);
            for i in 0..3 {
                for j in 0..3 {
                    prop_assert!((r[i][j] - chain[k][i][j]).abs() <= 1e-6);
                }
            }
        }
        let roles = SensorRole::ALL;
        let sparse = sparse_fk(&p, &sk, &roles, &prev).unwrap();
        for (r, s) in roles.iter().zip(&sparse) {
            prop_assert_eq!(*s, all[sk.role_index(*r).unwrap()]);
        }
    }
}
