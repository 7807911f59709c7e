use super::*;
use crate::geometry::BoundaryData;
use crate::graph::{build_knn_graph, GraphParams, PointCloud};
use ndarray::array;

fn cloud(n: usize, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PointCloud::interior(Array2::from_shape_fn((n, 2), |_| rng.gen_range(0.0..1.0)))
}

fn prepared(n: usize, m: usize, n_emb: usize, seed: u64) -> SpatialGraph {
    let params = GraphParams {
        k: 4,
        modes: Some(m),
        n_emb,
        seed,
        jitter_duplicates: false,
    };
    SpatialGraph::prepare(cloud(n, seed), &params).unwrap()
}

fn small_config(m: usize, n_emb: usize) -> OperatorConfig {
    OperatorConfig {
        in_channels: 2,
        hidden_channels: 5,
        out_channels: 2,
        num_blocks: 2,
        modes: m,
        gating_hidden: 4,
        edge_feature_dim: 3,
        embedding_dim: n_emb,
        coord_dim: 2,
        seed: 9,
        ..Default::default()
    }
}

fn ring(n: usize, m: usize) -> SpatialGraph {
    let coords = Array2::from_shape_fn((n, 1), |(i, _)| i as f64);
    build_knn_graph(PointCloud::periodic(coords, vec![n as f64]), 2)
        .unwrap()
        .compute_spectrum(m)
        .unwrap()
        .compute_lipschitz_embeddings(2, 0)
}

fn one_d_config(m: usize) -> OperatorConfig {
    OperatorConfig {
        in_channels: 1,
        hidden_channels: 3,
        out_channels: 1,
        num_blocks: 1,
        modes: m,
        gating_hidden: 2,
        edge_feature_dim: 2,
        embedding_dim: 2,
        coord_dim: 1,
        ..Default::default()
    }
}

#[test]
fn lift_with_zero_weights_is_bias() {
    let g = prepared(12, 3, 2, 1);
    let mut op = Operator::new(small_config(3, 2)).unwrap();
    let lift = op.lift.clone().unwrap();
    op.params.get_mut(lift.weight).fill(0.0);
    op.params
        .get_mut(lift.bias.unwrap())
        .assign(&array![[1.0, -2.0, 3.0, 0.5, 0.0]]);
    let mut tape = Tape::new(&op.params);
    let a = tape.constant(Array2::zeros((12, 2)));
    let v = op.lift(&mut tape, &g, a).unwrap();
    for row in tape.value(v).rows() {
        assert_eq!(row.to_vec(), vec![1.0, -2.0, 3.0, 0.5, 0.0]);
    }
}

#[test]
fn single_node_shapes() {
    let cloud = PointCloud::interior(array![[0.3, 0.4]]);
    let g = SpatialGraph::from_neighbors(cloud, 1, vec![vec![]]).unwrap();
    let g = g.compute_spectrum(1).unwrap().with_anchor_embeddings(&[0, 0]);
    let op = Operator::new(small_config(1, 2)).unwrap();
    let mut tape = Tape::new(&op.params);
    let a = tape.constant(array![[0.1, 0.2]]);
    let v = op.lift(&mut tape, &g, a).unwrap();
    assert_eq!(tape.shape(v), (1, 5));
    // no edges: the spatial branch is an empty sum
    let s = op.spatial_branch(&mut tape, &g, v, 0);
    assert!(tape.value(s).iter().all(|&x| x == 0.0));
    let y = op.forward(&mut tape, &g, Some(a), None).unwrap();
    assert_eq!(tape.shape(y), (1, 2));
}

#[test]
fn spectral_branch_with_zero_kernel_is_activation() {
    let g = prepared(15, 4, 2, 2);
    let mut op = Operator::new(small_config(4, 2)).unwrap();
    let b = op.blocks[0].clone();
    op.params.get_mut(b.spectral_kernel).fill(0.0);
    op.params.get_mut(b.bypass.weight).assign(&Array2::eye(5));
    op.params.get_mut(b.bypass.bias.unwrap()).fill(0.0);
    let v0 = Array2::from_shape_fn((15, 5), |(i, j)| ((i * 5 + j) as f64 * 0.31).sin());
    let mut tape = Tape::new(&op.params);
    let v = tape.constant(v0.clone());
    let out = op.spectral_branch(&mut tape, &g, v, 0).unwrap();
    for (o, x) in tape.value(out).iter().zip(v0.iter()) {
        assert!((o - Activation::Gelu.apply(*x)).abs() < 1e-14);
    }
}

#[test]
fn field_orthogonal_to_kept_modes_is_annihilated() {
    let g = ring(6, 2);
    let mut op = Operator::new(one_d_config(2)).unwrap();
    let b = op.blocks[0].clone();
    op.params.get_mut(b.bypass.weight).fill(0.0);
    op.params.get_mut(b.bypass.bias.unwrap()).fill(0.0);
    // alternating pattern is the highest ring frequency, orthogonal to modes 0 and 1
    let v0 = Array2::from_shape_fn(
        (6, 3),
        |(i, j)| if i % 2 == 0 { 1.0 + j as f64 } else { -1.0 - j as f64 },
    );
    assert!(g.eigvecs.t().dot(&v0).iter().all(|x| x.abs() < 1e-12));
    let mut tape = Tape::new(&op.params);
    let v = tape.constant(v0);
    let out = op.spectral_branch(&mut tape, &g, v, 0).unwrap();
    assert!(tape.value(out).iter().all(|x| x.abs() < 1e-12));
}

#[test]
fn identity_kernel_projects_onto_kept_modes() {
    let g = prepared(20, 5, 2, 3);
    let mut op = Operator::new(small_config(5, 2)).unwrap();
    let b = op.blocks[0].clone();
    let d = 5;
    let eye = Array2::<f64>::eye(d).into_shape_with_order((1, d * d)).unwrap();
    for mut row in op.params.get_mut(b.spectral_kernel).rows_mut() {
        row.assign(&eye.row(0));
    }
    op.params.get_mut(b.bypass.weight).fill(0.0);
    op.params.get_mut(b.bypass.bias.unwrap()).fill(0.0);
    let v0 = Array2::from_shape_fn((20, d), |(i, j)| ((i * 7 + j * 3) % 11) as f64 - 5.0);
    let mut tape = Tape::new(&op.params);
    let v = tape.constant(v0.clone());
    let pre = op.spectral_preactivation(&mut tape, &g, v, 0).unwrap();
    let expect = g.eigvecs.dot(&g.eigvecs.t().dot(&v0));
    let got = tape.value(pre);
    for (a, e) in got.iter().zip(expect.iter()) {
        assert!((a - e).abs() < 1e-10);
    }
    // nothing outside span(S_m)
    let resid = got - &g.eigvecs.dot(&g.eigvecs.t().dot(got));
    assert!(resid.iter().all(|x| x.abs() < 1e-6));
}

#[test]
fn saturated_gates_give_adjacency_aggregation() {
    let g = prepared(14, 3, 2, 4);
    let mut op = Operator::new(small_config(3, 2)).unwrap();
    let b = op.blocks[0].clone();
    op.params.get_mut(b.gate.b3).fill(1e3);
    op.params.get_mut(b.spatial_weight).assign(&Array2::eye(5));
    let v0 = Array2::from_shape_fn((14, 5), |(i, j)| (i as f64 - j as f64) * 0.2);
    let mut tape = Tape::new(&op.params);
    let v = tape.constant(v0.clone());
    let out = op.spatial_branch(&mut tape, &g, v, 0);
    let expect = g.adjacency_dense().dot(&v0);
    for (a, e) in tape.value(out).iter().zip(expect.iter()) {
        assert!((a - e).abs() < 1e-10);
    }
}

#[test]
fn gates_live_on_edges_in_open_unit_interval() {
    let g = prepared(25, 4, 3, 5);
    let op = Operator::new(small_config(4, 3)).unwrap();
    let mut tape = Tape::new(&op.params);
    let gamma = op.gate_values(&mut tape, &g, 1);
    let gv = tape.value(gamma).clone();
    let n = g.len();
    let mut dense = Array2::<f64>::zeros((n, n));
    for (e, &(t, s)) in g.edges.iter().enumerate() {
        let x = gv[[e, 0]];
        assert!(x > 0.0 && x < 1.0);
        dense[[t, s]] = x;
    }
    for u in 0..n {
        for v in 0..n {
            if !g.is_adjacent(u, v) {
                assert_eq!(dense[[u, v]], 0.0);
            }
        }
    }
    // efficient gather form equals the literal concatenation form
    let direct = op.gate_values_direct(&g, 1);
    for (a, b) in gv.iter().zip(direct.iter()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn block_with_zero_mix_is_constant_bias() {
    let g = prepared(10, 2, 2, 6);
    let mut op = Operator::new(small_config(2, 2)).unwrap();
    let mix = op.blocks[0].mix.clone();
    op.params.get_mut(mix.weight).fill(0.0);
    op.params.get_mut(mix.bias.unwrap()).fill(-0.25);
    let mut tape = Tape::new(&op.params);
    let v = tape.constant(Array2::from_elem((10, 5), 0.3));
    let out = op.block(&mut tape, &g, v, 0).unwrap();
    assert_eq!(tape.shape(out), (10, 5));
    assert!(tape.value(out).iter().all(|&x| x == -0.25));
}

#[test]
fn spectral_only_block() {
    let g = prepared(12, 3, 2, 7);
    let mut op = Operator::new(small_config(3, 2)).unwrap();
    let b = op.blocks[0].clone();
    op.params.get_mut(b.spatial_weight).fill(0.0);
    op.params.get_mut(b.gate.b3).fill(-1e3);
    let v0 = Array2::from_shape_fn((12, 5), |(i, j)| ((i + 2 * j) as f64).cos());
    let mut tape = Tape::new(&op.params);
    let v = tape.constant(v0);
    let spec = op.spectral_branch(&mut tape, &g, v, 0).unwrap();
    let zero = tape.constant(Array2::zeros((12, 5)));
    let cat = tape.concat(&[spec, zero]);
    let expect = b.mix.forward(&mut tape, cat);
    let out = op.block(&mut tape, &g, v, 0).unwrap();
    for (a, e) in tape.value(out).iter().zip(tape.value(expect).iter()) {
        assert!((a - e).abs() < 1e-12);
    }
}

#[test]
fn mode_mismatch_is_reported() {
    let g = prepared(12, 3, 2, 8);
    let op = Operator::new(small_config(4, 2)).unwrap();
    let a = Array2::zeros((12, 2));
    assert!(matches!(
        op.predict(&g, Some(&a), None),
        Err(Error::ModeMismatch { expected: 4, found: 3 })
    ));
}

#[test]
fn forward_is_permutation_equivariant() {
    let g = prepared(30, 6, 3, 10);
    let op = Operator::new(small_config(6, 3)).unwrap();
    let a = Array2::from_shape_fn((30, 2), |(i, j)| ((i * 3 + j) as f64 * 0.17).sin());
    let y = op.predict(&g, Some(&a), None).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut perm: Vec<usize> = (0..30).collect();
    rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
    let gp = g.permuted(&perm).unwrap();
    let yp = op.predict(&gp, Some(&permute_rows(&a, &perm)), None).unwrap();
    let expect = permute_rows(&y, &perm);
    for (p, e) in yp.iter().zip(expect.iter()) {
        assert!((p - e).abs() < 1e-6);
    }
}

#[test]
fn same_weights_on_different_resolutions() {
    let op = Operator::new(small_config(4, 2)).unwrap();
    for n in [10, 100] {
        let g = prepared(n, 4, 2, 11);
        let y = op.predict(&g, Some(&Array2::zeros((n, 2))), None).unwrap();
        assert_eq!(y.dim(), (n, 2));
    }
}

/// Central finite differences on a few entries of every parameter tensor.
fn fd_check(op: &Operator, loss: &dyn Fn(&Operator) -> f64, grads: &crate::autodiff::GradBuffer) {
    let h = 1e-5;
    for id in op.params.ids() {
        let name = op.params.entry(id).name.clone();
        let len = op.params.get(id).len();
        for k in [0, len / 2, len - 1] {
            let mut plus = op.clone();
            plus.params.get_mut(id).as_slice_mut().unwrap()[k] += h;
            let mut minus = op.clone();
            minus.params.get_mut(id).as_slice_mut().unwrap()[k] -= h;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let an = grads.get(id).as_slice().unwrap()[k];
            let err = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
            assert!(err < 1e-4, "{name}[{k}]: analytic {an}, finite difference {fd}");
        }
    }
}

#[test]
fn parameter_gradients_match_finite_differences() {
    let g = prepared(20, 5, 3, 12);
    let op = Operator::new(small_config(5, 3)).unwrap();
    let a = Array2::from_shape_fn((20, 2), |(i, j)| ((i * 2 + j) as f64 * 0.41).cos());
    let w = Array2::from_shape_fn((20, 2), |(i, j)| ((i + 5 * j) as f64 * 0.23).sin());
    let loss = |o: &Operator| -> f64 { (o.predict(&g, Some(&a), None).unwrap() * &w).sum() };
    let mut tape = Tape::new(&op.params);
    let av = tape.constant(a.clone());
    let y = op.forward(&mut tape, &g, Some(av), None).unwrap();
    let wv = tape.constant(w.clone());
    let yw = tape.mul(y, wv);
    let l = tape.sum(yw);
    let mut buf = crate::autodiff::GradBuffer::zeros_like(&op.params);
    buf.add(tape.backward(l).params(), 1.0);
    fd_check(&op, &loss, &buf);
}

#[test]
fn encoder_gradients_match_finite_differences() {
    let g = prepared(20, 4, 2, 13);
    let mut cfg = small_config(4, 2);
    cfg.in_channels = 1;
    cfg.encoder_hidden = 4;
    cfg.lift = LiftKind::EncoderGeo;
    cfg.num_blocks = 1;
    let op = Operator::new(cfg).unwrap();
    let bd = BoundaryData {
        bc_coords: array![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.5, 0.0]],
        bc_values: array![[0.3], [-0.2], [1.1], [0.4], [0.0]],
        segment_id: vec![0; 5],
        node_idx: None,
    };
    let loss = |o: &Operator| -> f64 {
        o.predict(&g, None, Some((&bd.bc_values, &bd.bc_coords)))
            .unwrap()
            .iter()
            .enumerate()
            .map(|(i, v)| v * ((i as f64) * 0.7).sin())
            .sum()
    };
    let mut tape = Tape::new(&op.params);
    let bv = tape.constant(bd.bc_values.clone());
    let bx = tape.constant(bd.bc_coords.clone());
    let y = op.forward(&mut tape, &g, None, Some((bv, bx))).unwrap();
    let w = Array2::from_shape_fn(tape.shape(y), |(i, j)| ((i * 2 + j) as f64 * 0.7).sin());
    let wv = tape.constant(w);
    let yw = tape.mul(y, wv);
    let l = tape.sum(yw);
    let mut buf = crate::autodiff::GradBuffer::zeros_like(&op.params);
    buf.add(tape.backward(l).params(), 1.0);
    fd_check(&op, &loss, &buf);
}

#[test]
fn checkpoint_round_trip_reproduces_forward() {
    let dir = tempfile::tempdir().unwrap();
    let g = prepared(16, 4, 2, 14);
    let mut op = Operator::new(small_config(4, 2)).unwrap();
    op.normalizer.in_mean = array![0.5, -1.0];
    op.normalizer.out_std = array![2.0, 3.0];
    let adam = crate::optim::Adam::new(&op.params);
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&path, &op, Some(&adam), 3, serde_json::json!({"note": "x"})).unwrap();
    let ck = load_checkpoint(&path).unwrap();
    assert_eq!(ck.epoch, 3);
    assert_eq!(ck.adam.as_ref().unwrap(), &adam);
    assert_eq!(ck.operator.normalizer, op.normalizer);
    let a = Array2::from_shape_fn((16, 2), |(i, j)| (i + j) as f64 * 0.1);
    let y0 = op.predict(&g, Some(&a), None).unwrap();
    let y1 = ck.operator.predict(&g, Some(&a), None).unwrap();
    for (p, q) in y0.iter().zip(y1.iter()) {
        assert!((p - q).abs() < 1e-7);
    }
    let names: Vec<&str> = op.params.entries().iter().map(|e| e.name.as_str()).collect();
    assert!(names.contains(&"blocks.1.spectral_kernel"));
    assert_eq!(
        op.params.entry(op.param_id("blocks.1.spectral_kernel").unwrap()).shape,
        vec![4, 5, 5]
    );
}

#[test]
fn residual_output_adds_latest_state() {
    let g = ring(8, 3);
    let mut cfg = one_d_config(3);
    cfg.in_channels = 2;
    cfg.residual_output = true;
    let mut op = Operator::new(cfg).unwrap();
    let last = op.proj.layers.last().unwrap().clone();
    op.params.get_mut(last.weight).fill(0.0);
    op.params.get_mut(last.bias.unwrap()).fill(0.0);
    let a = Array2::from_shape_fn((8, 2), |(i, j)| (i * 2 + j) as f64);
    let y = op.predict(&g, Some(&a), None).unwrap();
    assert_eq!(y.column(0), a.column(0));
}
