/// Undirected edge `(i, j)` with `i < j`.
pub type Edge = (usize, usize);

/// 4-neighborhood grid with row-major node indices.
pub fn grid_graph(rows: usize, cols: usize) -> Vec<Edge> {
    let mut edges = Vec::with_capacity(2 * rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let i = r * cols + c;
            if c + 1 < cols {
                edges.push((i, i + 1));
            }
            if r + 1 < rows {
                edges.push((i, i + cols));
            }
        }
    }
    edges
}

/// Unit-spaced grid coordinates in row-major order.
pub fn grid_points(rows: usize, cols: usize) -> Vec<[f64; 2]> {
    (0..rows)
        .flat_map(|r| (0..cols).map(move |c| [r as f64, c as f64]))
        .collect()
}

/// All pairs `i < j` with Euclidean distance at most `r`.
pub fn radius_graph(points: &[[f64; 2]], r: f64) -> Vec<Edge> {
    let mut edges = Vec::new();
    if r <= 0.0 {
        // r = 0 would only connect coincident points
        return edges;
    }
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let dx = points[i][0] - points[j][0];
            let dy = points[i][1] - points[j][1];
            if (dx * dx + dy * dy).sqrt() <= r {
                edges.push((i, j));
            }
        }
    }
    edges
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_edge_counts() {
        assert_eq!(grid_graph(1, 2), vec![(0, 1)]);
        assert_eq!(grid_graph(2, 2).len(), 4);
        for (r, c) in [(10, 10), (3, 7), (1, 1), (5, 1)] {
            assert_eq!(grid_graph(r, c).len(), 2 * r * c - r - c);
        }
    }

    #[test]
    fn radius_one_is_grid() {
        let mut a = radius_graph(&grid_points(4, 5), 1.0);
        let mut b = grid_graph(4, 5);
        a.sort_unstable();
        b.sort_unstable();
        assert_eq!(a, b);
    }

    #[test]
    fn radius_extremes() {
        let pts = grid_points(10, 10);
        assert!(radius_graph(&pts, 0.0).is_empty());
        assert_eq!(radius_graph(&pts, 14.0).len(), 4950);
    }

    #[test]
    fn radius_edges_monotone() {
        let pts = grid_points(10, 10);
        let counts: Vec<usize> = (1..=14).map(|r| radius_graph(&pts, r as f64).len()).collect();
        assert!(counts.windows(2).all(|w| w[0] <= w[1]));
    }
}
