use ndarray::Array2;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::SpatialGraph;

impl SpatialGraph {
    /// Anchor-distance embeddings: `n_emb` anchors are drawn uniformly with
    /// `seed`; coordinate `i` of node `u` is the hop distance from `u` to
    /// anchor `i` divided by the graph diameter, so entries lie in `[0, 1]`.
    pub fn compute_lipschitz_embeddings(self, n_emb: usize, seed: u64) -> Self {
        let anchors = sample_anchors(self.len(), n_emb, seed);
        let mut g = self.with_anchor_embeddings(&anchors);
        g.embedding_seed = seed;
        g
    }

    /// Embeddings for an explicit anchor list.
    pub fn with_anchor_embeddings(mut self, anchors: &[usize]) -> Self {
        let n = self.len();
        let diameter = self.diameter().max(1) as f64;
        let mut emb = Array2::zeros((n, anchors.len()));
        for (col, &a) in anchors.iter().enumerate() {
            let dist = self.bfs(a);
            for u in 0..n {
                emb[[u, col]] = dist[u] as f64 / diameter;
            }
        }
        self.lipschitz_emb = emb;
        self
    }

    /// Longest shortest-path hop count.
    pub fn diameter(&self) -> usize {
        (0..self.len())
            .map(|s| self.bfs(s).into_iter().filter(|&d| d != usize::MAX).max().unwrap_or(0))
            .max()
            .unwrap_or(0)
    }
}

pub(crate) fn sample_anchors(n: usize, n_emb: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if n_emb <= n {
        sample(&mut rng, n, n_emb).into_vec()
    } else {
        (0..n_emb).map(|_| rng.gen_range(0..n)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::super::{build_knn_graph, PointCloud};
    use ndarray::{array, Array2};

    #[test]
    fn path_graph_embedding() {
        let g = build_knn_graph(PointCloud::interior(array![[0.0], [1.0], [2.0]]), 1)
            .unwrap()
            .with_anchor_embeddings(&[0]);
        assert_eq!(g.lipschitz_emb.column(0).to_vec(), vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn four_ring_embedding() {
        let coords = Array2::from_shape_fn((4, 1), |(i, _)| i as f64);
        let g = build_knn_graph(PointCloud::periodic(coords, vec![4.0]), 2)
            .unwrap()
            .with_anchor_embeddings(&[0]);
        assert_eq!(g.lipschitz_emb.column(0).to_vec(), vec![0.0, 0.5, 1.0, 0.5]);
    }

    #[test]
    fn deterministic_in_unit_interval_and_zero_at_anchor() {
        let coords = Array2::from_shape_fn((30, 2), |(i, j)| if j == 0 { (i % 6) as f64 } else { (i / 6) as f64 });
        let g = build_knn_graph(PointCloud::interior(coords), 4).unwrap();
        let a = g.clone().compute_lipschitz_embeddings(5, 11);
        let b = g.compute_lipschitz_embeddings(5, 11);
        assert_eq!(a.lipschitz_emb, b.lipschitz_emb);
        assert!(a.lipschitz_emb.iter().all(|&v| (0.0..=1.0).contains(&v)));
        let anchors = super::sample_anchors(30, 5, 11);
        for (col, &anc) in anchors.iter().enumerate() {
            assert_eq!(a.lipschitz_emb[[anc, col]], 0.0);
        }
    }
}
