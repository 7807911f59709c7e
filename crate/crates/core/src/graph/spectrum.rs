use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2};

use super::SpatialGraph;
use crate::error::{Error, Result};

/// Dense `I − D^{-1/2} A D^{-1/2}`.
pub fn normalized_laplacian(graph: &SpatialGraph) -> Array2<f64> {
    let n = graph.len();
    let inv_sqrt_deg: Vec<f64> = (0..n).map(|u| 1.0 / (graph.degree(u) as f64).sqrt()).collect();
    let mut l = Array2::<f64>::eye(n);
    for &(u, v) in &graph.edges {
        l[[u, v]] -= inv_sqrt_deg[u] * inv_sqrt_deg[v];
    }
    l
}

impl SpatialGraph {
    /// Fill `eigvals`/`eigvecs` with the `m` smallest eigenpairs of the
    /// symmetric normalized Laplacian, ascending. Each eigenvector is signed
    /// so that its largest-magnitude entry (first one on ties) is positive.
    pub fn compute_spectrum(mut self, m: usize) -> Result<Self> {
        let n = self.len();
        if m == 0 || m > n {
            return Err(Error::DegenerateInput(format!(
                "cannot keep {m} eigenpairs of a {n}-node graph"
            )));
        }
        let l = normalized_laplacian(&self);
        let dense = DMatrix::from_row_slice(n, n, l.as_slice().expect("standard layout"));
        let eig = SymmetricEigen::try_new(dense, 1e-14, 0).ok_or(Error::EigSolverFailure { n })?;
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let mut vals = Array1::zeros(m);
        let mut vecs = Array2::zeros((n, m));
        for (col, &src) in order.iter().take(m).enumerate() {
            // roundoff can push the null eigenvalue slightly below zero
            vals[col] = eig.eigenvalues[src].max(0.0);
            let v = eig.eigenvectors.column(src);
            let mut pivot = 0;
            for i in 1..n {
                if v[i].abs() > v[pivot].abs() + 1e-12 {
                    pivot = i;
                }
            }
            let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
            for i in 0..n {
                vecs[[i, col]] = sign * v[i];
            }
        }
        if vals.iter().any(|v| !v.is_finite()) || vecs.iter().any(|v| !v.is_finite()) {
            return Err(Error::EigSolverFailure { n });
        }
        self.eigvals = vals;
        self.eigvecs = vecs;
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::super::{build_knn_graph, PointCloud};
    use super::*;
    use ndarray::array;

    fn complete_graph(n: usize) -> SpatialGraph {
        // n points on a circle, k = n - 1
        let coords = Array2::from_shape_fn((n, 2), |(i, j)| {
            let t = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
            if j == 0 {
                t.cos()
            } else {
                t.sin()
            }
        });
        build_knn_graph(PointCloud::interior(coords), n - 1).unwrap()
    }

    fn ring(n: usize) -> SpatialGraph {
        let coords = Array2::from_shape_fn((n, 1), |(i, _)| i as f64);
        build_knn_graph(PointCloud::periodic(coords, vec![n as f64]), 2).unwrap()
    }

    /// Jacobi eigenvalue iteration, independent of the production solver.
    fn jacobi_eigenvalues(mut a: Array2<f64>) -> Vec<f64> {
        let n = a.nrows();
        for _ in 0..100 {
            let mut off = 0.0;
            for p in 0..n {
                for q in p + 1..n {
                    off += a[[p, q]] * a[[p, q]];
                }
            }
            if off < 1e-30 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    if a[[p, q]].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * a[[p, q]]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[[k, p]];
                        let akq = a[[k, q]];
                        a[[k, p]] = c * akp - s * akq;
                        a[[k, q]] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[[p, k]];
                        let aqk = a[[q, k]];
                        a[[p, k]] = c * apk - s * aqk;
                        a[[q, k]] = s * apk + c * aqk;
                    }
                }
            }
        }
        let mut d: Vec<f64> = (0..n).map(|i| a[[i, i]]).collect();
        d.sort_by(f64::total_cmp);
        d
    }

    #[test]
    fn complete_k4_spectrum() {
        let g = complete_graph(4).compute_spectrum(4).unwrap();
        let brute = jacobi_eigenvalues(normalized_laplacian(&g));
        let expected = [0.0, 4.0 / 3.0, 4.0 / 3.0, 4.0 / 3.0];
        for i in 0..4 {
            assert!((g.eigvals[i] - expected[i]).abs() < 1e-10);
            assert!((brute[i] - expected[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn six_ring_spectrum() {
        let g = ring(6).compute_spectrum(3).unwrap();
        let expect: Vec<f64> = [0usize, 1, 1]
            .iter()
            .map(|&j| 1.0 - (2.0 * std::f64::consts::PI * j as f64 / 6.0).cos())
            .collect();
        for i in 0..3 {
            assert!((g.eigvals[i] - expect[i]).abs() < 1e-10, "{:?}", g.eigvals);
        }
        assert!((expect[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn null_vector_is_sqrt_degree() {
        let coords = array![[0.0, 0.0], [1.0, 0.1], [2.1, 0.0], [0.9, 1.2], [2.0, 1.0], [3.2, 0.4]];
        let g = build_knn_graph(PointCloud::interior(coords), 2)
            .unwrap()
            .compute_spectrum(3)
            .unwrap();
        assert!(g.eigvals[0].abs() < 1e-8);
        let d: Vec<f64> = (0..g.len()).map(|u| (g.degree(u) as f64).sqrt()).collect();
        let norm = d.iter().map(|x| x * x).sum::<f64>().sqrt();
        for u in 0..g.len() {
            assert!((g.eigvecs[[u, 0]] - d[u] / norm).abs() < 1e-8);
        }
    }

    #[test]
    fn eigvecs_orthonormal_and_sign_fixed() {
        let g = ring(20).compute_spectrum(7).unwrap();
        let gram = g.eigvecs.t().dot(&g.eigvecs);
        for i in 0..7 {
            for j in 0..7 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((gram[[i, j]] - e).abs() < 1e-6);
            }
            let col = g.eigvecs.column(i);
            let max = col
                .iter()
                .copied()
                .fold(0.0f64, |a, b| if b.abs() > a.abs() + 1e-12 { b } else { a });
            assert!(max > 0.0);
        }
        for w in g.eigvals.windows(2) {
            assert!(w[0] <= w[1]);
        }
    }

    #[test]
    fn too_many_modes_rejected() {
        assert!(ring(5).compute_spectrum(6).is_err());
    }
}
