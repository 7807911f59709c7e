//! k-NN graph, truncated Laplacian spectrum and Lipschitz embeddings of a
//! random point cloud, then a cache round trip.
//!
//! cargo run --release --example graph_spectrum

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use physgno::graph::{load_graph, save_graph, GraphCacheEntry, GraphParams, PointCloud};

fn main() -> physgno::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cloud = PointCloud::interior(Array2::from_shape_fn((400, 2), |_| rng.gen_range(0.0..1.0)));
    let params = GraphParams {
        modes: Some(32),
        ..GraphParams::for_dim(2)
    };
    let entry = GraphCacheEntry::build(cloud, &params, None)?;
    let g = &entry.graph;
    let degrees: Vec<usize> = (0..g.len()).map(|u| g.degree(u)).collect();
    println!(
        "{} nodes, {} directed edges, degree {}..{}",
        g.len(),
        g.edges.len(),
        degrees.iter().min().unwrap(),
        degrees.iter().max().unwrap()
    );
    println!("first eigenvalues {:.4}", g.eigvals.slice(ndarray::s![..6]));
    println!("largest kept eigenvalue {:.4}", g.eigvals[g.modes() - 1]);
    let gram = g.eigvecs.t().dot(&g.eigvecs);
    let ortho = (&gram - &Array2::<f64>::eye(g.modes()))
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    println!("eigenvector orthonormality error {ortho:.2e}");
    println!(
        "embedding shape {:?}, range [{:.3}, {:.3}]",
        g.lipschitz_emb.dim(),
        g.lipschitz_emb.fold(1.0, |a: f64, &b| a.min(b)),
        g.lipschitz_emb.fold(0.0, |a: f64, &b| a.max(b))
    );

    let dir = std::env::temp_dir().join("physgno_graph_example.pgno");
    save_graph(&dir, &entry)?;
    let back = load_graph(&dir)?;
    println!("cache round trip equal spectrum: {}", back.graph.eigvals == g.eigvals);
    Ok(())
}
