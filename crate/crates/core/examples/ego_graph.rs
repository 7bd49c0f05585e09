//! Ego graphs on a small path-plus-triangle graph, and the locality of the
//! encoder: a depth-k embedding only sees the k-hop ego graph.
//!
//! ```bash
//! cargo run -p ngil --example ego_graph
//! ```

use ngil::graph::{ego_graph, GraphSnapshot};
use ngil::matrix::Matrix;
use ngil::nn::{gnn_forward, Activation, GnnParams};

fn main() -> ngil::Result<()> {
    //   0 - 1 - 2 - 3
    //           |  /
    //           4
    let ids = [0, 1, 2, 3, 4];
    let edges = [(0, 1), (1, 2), (2, 3), (2, 4), (3, 4)];
    let x = Matrix::from_rows(&[[1.0], [2.0], [3.0], [4.0], [5.0]])?;
    let snap = GraphSnapshot::from_edges(&ids, &edges, &x, 1)?;

    for k in 0..=3 {
        let ego = ego_graph(&snap, 0, k)?;
        println!(
            "k={k} vertices={:?} edges={:?}",
            ego.local_vertices,
            ego.edges()
        );
    }

    let gnn = GnnParams::init(&[1, 8, 4], Activation::Tanh, 7)?;
    let full = gnn_forward(&gnn, &snap, &[0])?;
    let local = gnn_forward(&gnn, &ego_graph(&snap, 0, gnn.depth())?.to_snapshot(), &[0])?;
    println!("embedding on full graph:  {:?}", full.row(0));
    println!("embedding on 2-hop graph: {:?}", local.row(0));
    assert_eq!(full, local);
    Ok(())
}
