use ngil::graph::GraphSnapshot;
use ngil::matrix::Matrix;
use ngil::nn::{
    cross_entropy, cross_entropy_with_grad, gnn_forward, grad_check, head_forward, Activation,
    GnnParams, Linear, Propagation,
};

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

#[test]
fn cross_entropy_matches_frozen_value() {
    let logits = Matrix::from_rows(&[
        [1.0, 2.0, -0.5],
        [0.5, -0.5, 3.0],
        [3.0, 0.0, 0.25],
        [-1.0, -2.0, -3.0],
    ])
    .unwrap();
    let labels = [1, 0, 0, 2];
    let ce = cross_entropy(&logits, &labels).unwrap();
    assert!(close(ce, 1.373_315_077_821_664_5, 1e-14), "{ce}");
    let (_, grad) = cross_entropy_with_grad(&logits, &labels).unwrap();
    assert!(close(grad[(1, 2)], 0.224_763_067_396_685_64, 1e-15));
    // each gradient row sums to zero
    for row in grad.iter_rows() {
        assert!(row.iter().sum::<f64>().abs() < 1e-15);
    }
}

#[test]
fn cross_entropy_rejects_bad_labels() {
    let logits = Matrix::from_rows(&[[0.0, 1.0]]).unwrap();
    assert!(cross_entropy(&logits, &[2]).is_err());
    assert!(cross_entropy(&logits, &[0, 1]).is_err());
}

fn toy_graph() -> GraphSnapshot {
    let x = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [-2.0, 0.5]]).unwrap();
    GraphSnapshot::from_edges(&[0, 1, 2, 3], &[(0, 1), (1, 2)], &x, 1).unwrap()
}

fn toy_gnn() -> GnnParams {
    GnnParams {
        layers: vec![
            Linear {
                weight: Matrix::from_rows(&[[0.5, -1.0, 0.25], [2.0, 0.25, -0.75]]).unwrap(),
                bias: vec![0.1, -0.2, 0.0],
            },
            Linear {
                weight: Matrix::from_rows(&[[1.0, -0.5], [0.3, 0.8], [-1.2, 0.4]]).unwrap(),
                bias: vec![0.05, -0.05],
            },
        ],
        activation: Activation::Tanh,
    }
}

#[test]
fn two_layer_forward_matches_loop_oracle() {
    let z = gnn_forward(&toy_gnn(), &toy_graph(), &[3, 0, 1, 2]).unwrap();
    let expected = [
        [0.856_977_810_852_741_38, 0.367_271_592_069_797_98],
        [0.811_018_752_092_330_1, -0.788_315_485_737_317_13],
        [0.855_676_451_011_581_74, -0.792_490_739_111_158_08],
        [0.881_918_422_757_683_51, -0.806_534_523_183_331_19],
    ];
    for (row, want) in z.iter_rows().zip(expected) {
        for (a, b) in row.iter().zip(want) {
            assert!(close(*a, b, 1e-14), "{a} vs {b}");
        }
    }
}

#[test]
fn cross_entropy_through_encoder_and_head_passes_grad_check() {
    let snap = toy_graph();
    let gnn = toy_gnn();
    let head = Linear::glorot(2, 2, 9);
    let targets = [0, 1, 2, 3];
    let labels = [0, 1, 1, 0];
    let plan = Propagation::new(&snap, &targets, gnn.depth()).unwrap();

    let objective = |g: &GnnParams, h: &Linear| {
        let z = plan.forward(g, &snap).unwrap().output;
        cross_entropy(&head_forward(h, &z).unwrap(), &labels).unwrap()
    };
    let cache = plan.forward(&gnn, &snap).unwrap();
    let logits = head_forward(&head, &cache.output).unwrap();
    let (_, dlogits) = cross_entropy_with_grad(&logits, &labels).unwrap();
    let (hgrad, dz) = head.backward(&cache.output, &dlogits).unwrap();
    let ggrad = cache.backward(&plan, &gnn, &dz).unwrap();

    let mut flat = Vec::new();
    gnn.write_flat(&mut flat);
    head.write_flat(&mut flat);
    let mut analytic = Vec::new();
    ggrad.write_flat(&mut analytic);
    hgrad.write_flat(&mut analytic);
    let (mut g, mut h) = (gnn.clone(), head.clone());
    let report = grad_check(
        |p| {
            let used = g.read_flat(p);
            h.read_flat(&p[used..]);
            objective(&g, &h)
        },
        &flat,
        &analytic,
        1e-5,
        1e-4,
        0,
        0,
    );
    assert!(report.passed, "{report:?}");
    assert!(report.max_rel_error < 1e-6, "{report:?}");
}

#[test]
fn isolated_vertex_sees_only_itself() {
    let snap = toy_graph();
    let one = GnnParams {
        layers: vec![Linear {
            weight: Matrix::identity(2),
            bias: vec![0.0; 2],
        }],
        activation: Activation::Identity,
    };
    let z = gnn_forward(&one, &snap, &[3, 1]).unwrap();
    assert_eq!(z.row(0), &[-2.0, 0.5]);
    // mean of x0, x1, x2
    assert!(close(z[(1, 0)], 2.0 / 3.0, 1e-15) && close(z[(1, 1)], 2.0 / 3.0, 1e-15));
}
