use rand::Rng;

use super::*;
use crate::clustering::AssignmentMatrix;
use crate::fixtures::{random_features, random_soft_assignment, two_group_row};
use crate::grid::{Direction, DirectionalAdjacency, GridShape};
use crate::linalg::{DenseMatrix, SparseMatrix};
use crate::refconv::{conv_as_graph, KernelSet};
use crate::rng::rng_from_seed;

fn col(values: &[f64]) -> DenseMatrix<f64> {
    DenseMatrix::from_vec(values.len(), 1, values.to_vec()).unwrap()
}

fn dense(rows: &[&[f64]]) -> DenseMatrix<f64> {
    DenseMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
}

fn row_fixture() -> (GridShape, AssignmentMatrix<f64>, GroupAdjacencySet<f64>) {
    let (shape, s) = two_group_row();
    let g = coarsen_all(&s, &DirectionalAdjacency::new(shape)).unwrap();
    (shape, s, g)
}

#[test]
fn pooling_examples() {
    let x = col(&[1.0, 3.0, 5.0, 7.0]);
    let single = AssignmentMatrix::from_labels(&[0, 0, 0, 0], 1).unwrap();
    assert_eq!(pool(&single, &x).unwrap().data(), &[4.0]);
    let (_, s) = two_group_row();
    assert_eq!(pool(&s, &x).unwrap().data(), &[2.0, 6.0]);
    assert_eq!(pool(&s, &col(&[0.3; 4])).unwrap().data(), &[0.3, 0.3]);
    assert!(pool(&s, &col(&[1.0; 3])).is_err());
}

#[test]
fn unpooling_examples() {
    let (_, s) = two_group_row();
    assert_eq!(
        unpool(&s, &col(&[2.0, 6.0])).unwrap().data(),
        &[2.0, 2.0, 6.0, 6.0]
    );
    assert_eq!(unpool(&s, &col(&[1.5, 1.5])).unwrap().data(), &[1.5; 4]);
    let x = random_features::<f64, _>(6, 2, -1.0, 1.0, &mut rng_from_seed(1));
    let id = AssignmentMatrix::identity(6);
    assert_eq!(unpool(&id, &pool(&id, &x).unwrap()).unwrap(), x);
    assert!(unpool(&s, &col(&[1.0; 3])).is_err());
}

#[test]
fn pool_and_unpool_are_linear_and_keep_constants() {
    let mut rng = rng_from_seed(8);
    let s = random_soft_assignment::<f64, _>(20, 5, 3, &mut rng).unwrap();
    let x = random_features::<f64, _>(20, 3, -1.0, 1.0, &mut rng);
    let y = random_features::<f64, _>(20, 3, -1.0, 1.0, &mut rng);
    let lhs = pool(&s, &x.scale(2.0).add(&y.scale(-0.5)).unwrap()).unwrap();
    let rhs = pool(&s, &x)
        .unwrap()
        .scale(2.0)
        .add(&pool(&s, &y).unwrap().scale(-0.5))
        .unwrap();
    assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-12);
    let c = DenseMatrix::filled(20, 3, 0.7);
    assert!(
        pool(&s, &c)
            .unwrap()
            .max_abs_diff(&DenseMatrix::filled(5, 3, 0.7))
            .unwrap()
            < 1e-12
    );
    let cg = DenseMatrix::filled(5, 3, -0.2);
    assert!(
        unpool(&s, &cg)
            .unwrap()
            .max_abs_diff(&DenseMatrix::filled(20, 3, -0.2))
            .unwrap()
            < 1e-12
    );
}

#[test]
fn coarsening_row_fixture() {
    let (_, _, g) = row_fixture();
    assert_eq!(
        g.get(Direction::Right).to_dense(),
        dense(&[&[1.0, 1.0], &[0.0, 1.0]])
    );
    assert_eq!(
        g.get(Direction::Left).to_dense(),
        dense(&[&[1.0, 0.0], &[1.0, 1.0]])
    );
    assert_eq!(g.nnz(Direction::Up), 0);
}

#[test]
fn coarsening_identity_and_single_group() {
    let shape = GridShape::new(3, 3).unwrap();
    let adj = DirectionalAdjacency::<f64>::new(shape);
    let g = coarsen_all(&AssignmentMatrix::identity(9), &adj).unwrap();
    for d in Direction::ALL {
        assert_eq!(g.get(d), adj.get(d));
    }
    let one = AssignmentMatrix::from_labels(&[0; 9], 1).unwrap();
    let g = coarsen_all(&one, &adj).unwrap();
    for d in Direction::ALL {
        assert_eq!(g.get(d).to_dense().data(), &[adj.get(d).nnz() as f64]);
    }
    assert!(coarsen_all(&AssignmentMatrix::<f64>::identity(4), &adj).is_err());
}

#[test]
fn noise_cancel_row_fixture() {
    let (_, _, g) = row_fixture();
    let c = noise_cancel(&g);
    assert_eq!(
        c.get(Direction::Right).to_dense(),
        dense(&[&[0.0, 1.0], &[0.0, 0.0]])
    );
    assert_eq!(
        c.get(Direction::Left).to_dense(),
        dense(&[&[0.0, 0.0], &[1.0, 0.0]])
    );
    assert_eq!(c.get(Direction::SelfLoop), &SparseMatrix::identity(2));
}

#[test]
fn noise_cancel_symmetric_connections_vanish() {
    let sym =
        SparseMatrix::from_triplets(2, 2, vec![(0, 1, 2.0f64), (1, 0, 2.0), (0, 0, 1.0)]).unwrap();
    let mut mats = vec![SparseMatrix::zeros(2, 2); 9];
    mats[Direction::Up.index()] = sym.clone();
    mats[Direction::Down.index()] = sym;
    let c = noise_cancel(&GroupAdjacencySet::from_matrices(mats).unwrap());
    assert_eq!(c.nnz(Direction::Up), 0);
    assert_eq!(c.nnz(Direction::Down), 0);
}

#[test]
fn postprocess_filters_tiny_weights() {
    let mut mats = vec![SparseMatrix::zeros(3, 3); 9];
    mats[Direction::Right.index()] =
        SparseMatrix::from_triplets(3, 3, vec![(0, 1, 5e-8f64), (1, 2, 1e-7), (2, 2, 4.0)])
            .unwrap();
    let p = postprocess(&GroupAdjacencySet::from_matrices(mats).unwrap());
    assert_eq!(p.get(Direction::Right).triplets(), vec![(1, 2, 1e-7)]);
}

fn pair_set(entries: &[(Direction, f64)]) -> GroupAdjacencySet<f64> {
    let mut mats = vec![SparseMatrix::zeros(2, 2); 9];
    for &(d, v) in entries {
        mats[d.index()] = SparseMatrix::from_triplets(2, 2, vec![(0, 1, v)]).unwrap();
    }
    GroupAdjacencySet::from_matrices(mats).unwrap()
}

#[test]
fn max_direction_examples() {
    let g = max_direction(&pair_set(&[
        (Direction::Right, 0.7),
        (Direction::DownRight, 0.3),
    ]));
    assert_eq!(g.get(Direction::Right).get(0, 1), 0.7);
    assert_eq!(g.nnz(Direction::DownRight), 0);

    let single = pair_set(&[(Direction::Up, 0.4)]);
    assert_eq!(max_direction(&single).matrices(), single.matrices());

    let tie = max_direction(&pair_set(&[
        (Direction::Right, 0.5),
        (Direction::Down, 0.5),
    ]));
    assert_eq!(tie.get(Direction::Right).get(0, 1), 0.5);
    assert_eq!(tie.nnz(Direction::Down), 0);
}

#[test]
fn group_conv_row_fixture() {
    let (_, _, g) = row_fixture();
    let g = refine(&g, RefineOptions::default()).unwrap();
    let mut k = KernelSet::<f64>::zeros(1, 1);
    *k.get_mut(Direction::Right) = col(&[2.0]);
    *k.get_mut(Direction::Left) = col(&[3.0]);
    let out = group_conv(&g, &col(&[1.0, 5.0]), &k).unwrap();
    assert_eq!(out.data(), &[10.0, 3.0]);

    let id = KernelSet::single(1, 1, Direction::SelfLoop, DenseMatrix::identity(1)).unwrap();
    assert_eq!(
        group_conv(&g, &col(&[1.0, 5.0]), &id).unwrap().data(),
        &[1.0, 5.0]
    );
    let zero = KernelSet::<f64>::zeros(1, 1);
    assert_eq!(
        group_conv(&g, &col(&[1.0, 5.0]), &zero).unwrap().data(),
        &[0.0, 0.0]
    );
}

#[test]
fn group_conv_requires_refinement() {
    let (_, _, g) = row_fixture();
    assert!(matches!(
        group_conv(&g, &col(&[1.0, 5.0]), &KernelSet::zeros(1, 1)),
        Err(crate::Error::Unrefined)
    ));
}

#[test]
fn hg_layer_examples() {
    let (_, _, g) = row_fixture();
    let g = refine(&g, RefineOptions::default()).unwrap();
    let mut k = KernelSet::<f64>::zeros(1, 2);
    *k.get_mut(Direction::SelfLoop) = dense(&[&[1.0, 2.0]]);
    let z = col(&[1.0, 5.0]);
    let mut bn = BNParams::identity(2);
    bn.eps = 0.0;
    let out = hg_layer(&g, &z, &k, &mut bn, BnMode::Eval).unwrap();
    assert_eq!(out, group_conv(&g, &z, &k).unwrap());

    let mut bn = BNParams::identity(2);
    bn.gamma = vec![0.0, 0.0];
    bn.beta = vec![0.5, -0.5];
    let out = hg_layer(&g, &z, &k, &mut bn, BnMode::Train).unwrap();
    assert_eq!(out.data(), &[0.5, 0.0, 0.5, 0.0]);
}

#[test]
fn train_mode_centres_each_channel() {
    let mut rng = rng_from_seed(12);
    let shape = GridShape::new(6, 6).unwrap();
    let s = random_soft_assignment::<f64, _>(36, 7, 3, &mut rng).unwrap();
    let g = refine(
        &coarsen_all(&s, &DirectionalAdjacency::new(shape)).unwrap(),
        RefineOptions::default(),
    )
    .unwrap();
    let z = random_features::<f64, _>(7, 3, -1.0, 1.0, &mut rng);
    let k = KernelSet::random(3, 4, 1.0, &mut rng);
    let conv = group_conv(&g, &z, &k).unwrap();
    let (mean, var) = batch_stats(&conv);
    let mut bn = BNParams::identity(4);
    let pre = bn_affine(&conv, &bn.gamma, &bn.beta, &mean, &var, bn.eps);
    for c in 0..4 {
        let m: f64 = pre.column(c).iter().sum::<f64>() / 7.0;
        assert!(m.abs() <= 1e-4);
    }
    let before = bn.running_mean.clone();
    hg_layer(&g, &z, &k, &mut bn, BnMode::Train).unwrap();
    assert_ne!(bn.running_mean, before);
    for c in 0..4 {
        assert!((bn.running_mean[c] - 0.1 * mean[c]).abs() < 1e-12);
    }
}

#[test]
fn identity_grouping_matches_pixel_graph_conv() {
    let mut rng = rng_from_seed(21);
    for (h, w, c) in [(1, 1, 1), (3, 5, 2), (8, 8, 4), (7, 4, 3)] {
        let shape = GridShape::new(h, w).unwrap();
        let n = shape.n_pixels();
        let s = AssignmentMatrix::<f32>::identity(n);
        let opts = RefineOptions {
            noise_cancel: false,
            ..RefineOptions::default()
        };
        let g = refine(
            &coarsen_all(&s, &DirectionalAdjacency::new(shape)).unwrap(),
            opts,
        )
        .unwrap();
        let x = random_features::<f32, _>(n, c, -1.0, 1.0, &mut rng);
        let k = KernelSet::<f32>::random(c, c, 1.0, &mut rng);
        let mut m = HGConvModule::new(vec![HgLayer {
            kernels: k.clone(),
            bn: None,
        }])
        .unwrap();
        let out = hg_module_forward(&x, &s, &g, &mut m, BnMode::Eval).unwrap();
        let reference = conv_as_graph(&x, shape, &k, 1e-7).unwrap();
        assert!(out.max_abs_diff(&reference).unwrap() <= 1e-4);
    }
}

#[test]
fn zero_layers_smooth_the_input() {
    let (_, s) = two_group_row();
    let (shape, _) = two_group_row();
    let g = refine(
        &coarsen_all(&s, &DirectionalAdjacency::new(shape)).unwrap(),
        RefineOptions::default(),
    )
    .unwrap();
    let x = col(&[1.0, 3.0, 5.0, 7.0]);
    let mut m = HGConvModule::new(vec![]).unwrap();
    let out = hg_module_forward(&x, &s, &g, &mut m, BnMode::Eval).unwrap();
    assert_eq!(out.data(), &[2.0, 2.0, 6.0, 6.0]);
}

#[test]
fn constant_input_gives_constant_output() {
    let mut rng = rng_from_seed(5);
    let shape = GridShape::new(4, 4).unwrap();
    let s = random_soft_assignment::<f64, _>(16, 4, 2, &mut rng).unwrap();
    let g = refine(
        &coarsen_all(&s, &DirectionalAdjacency::new(shape)).unwrap(),
        RefineOptions::default(),
    )
    .unwrap();
    let w = random_features::<f64, _>(2, 2, 0.1, 1.0, &mut rng);
    let k = KernelSet::single(2, 2, Direction::SelfLoop, w).unwrap();
    let mut m = HGConvModule::new(vec![HgLayer {
        kernels: k,
        bn: Some(BNParams::identity(2)),
    }])
    .unwrap();
    let x = DenseMatrix::filled(16, 2, 0.6);
    let out = hg_module_forward(&x, &s, &g, &mut m, BnMode::Eval).unwrap();
    for c in 0..2 {
        let column = out.column(c);
        assert!(column.iter().all(|v| (v - column[0]).abs() < 1e-12));
    }
}

#[test]
fn refinement_invariants_on_random_soft_assignments() {
    let mut rng = rng_from_seed(77);
    for _ in 0..100 {
        let shape = GridShape::new(rng.random_range(1..=8), rng.random_range(1..=8)).unwrap();
        let n = shape.n_pixels();
        let groups = rng.random_range(1..=8usize).min(n);
        let s =
            random_soft_assignment::<f64, _>(n, groups, rng.random_range(1..=3), &mut rng).unwrap();
        let raw = coarsen_all(&s, &DirectionalAdjacency::new(shape)).unwrap();
        let canceled = noise_cancel(&raw);
        for d in Direction::ALL.iter().filter(|d| !d.is_self()) {
            for (i, j, v) in canceled.get(*d).triplets() {
                assert!(v > 0.0);
                assert_eq!(canceled.get(d.opposite()).get(i, j), 0.0);
            }
        }
        let g = refine(&raw, RefineOptions::default()).unwrap();
        assert_eq!(g.get(Direction::SelfLoop), &SparseMatrix::identity(groups));
        for i in 0..groups {
            for j in 0..groups {
                let active = Direction::ALL
                    .iter()
                    .filter(|d| !d.is_self() && g.get(**d).get(i, j) != 0.0)
                    .count();
                assert!(active <= 1);
                if i == j {
                    assert_eq!(active, 0);
                }
            }
        }
        for d in Direction::ALL {
            assert!(g.get(d).values().iter().all(|&v| v >= CONNECTION_THRESHOLD));
        }
    }
}
