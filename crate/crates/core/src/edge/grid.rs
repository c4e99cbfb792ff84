//! Grid graph of line intersections and module cells as its 4-cycles.

use super::lines::ImageLine;
use nalgebra::Point2;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// Which detector produced a module footprint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectionSource {
    Edge,
    Bbox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridGraph {
    pub vertices: Vec<Point2<f64>>,
    pub edges: Vec<(usize, usize)>,
    /// `(horizontal line, vertical line)` indices of each vertex.
    pub incident: Vec<(usize, usize)>,
    /// Horizontal lines sorted top to bottom.
    pub horizontal: Vec<ImageLine>,
    /// Vertical lines sorted left to right.
    pub vertical: Vec<ImageLine>,
}

impl GridGraph {
    pub fn vertex_at(&self, h: usize, v: usize) -> Option<usize> {
        self.incident.iter().position(|&c| c == (h, v))
    }

    fn neighbours(&self) -> (HashMap<usize, usize>, HashMap<usize, usize>) {
        // right: next vertex along the horizontal line, down: along the vertical line
        let mut right = HashMap::new();
        let mut down = HashMap::new();
        for &(a, b) in &self.edges {
            let (ha, va) = self.incident[a];
            let (hb, vb) = self.incident[b];
            if ha == hb {
                let (l, r) = if va < vb { (a, b) } else { (b, a) };
                right.insert(l, r);
            } else if va == vb {
                let (t, d) = if ha < hb { (a, b) } else { (b, a) };
                down.insert(t, d);
            }
        }
        (right, down)
    }
}

fn order_by_crossing(lines: &[ImageLine], others: &[ImageLine], key: impl Fn(&Point2<f64>) -> f64) -> Vec<ImageLine> {
    let mut keyed: Vec<(f64, ImageLine)> = lines
        .iter()
        .map(|l| {
            let k = if others.is_empty() {
                key(&Point2::from((l.p0.coords + l.p1.coords) * 0.5))
            } else {
                let mut ks: Vec<f64> = others.iter().filter_map(|o| l.intersection(o)).map(|p| key(&p)).collect();
                ks.sort_by(f64::total_cmp);
                ks.get(ks.len() / 2).copied().unwrap_or_else(|| key(&l.p0))
            };
            (k, *l)
        })
        .collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0));
    keyed.into_iter().map(|(_, l)| l).collect()
}

/// Vertices are the intersections of horizontal with vertical lines inside
/// `[0, width] x [0, height]`; edges join consecutive vertices along a line.
pub fn build_grid_graph(horizontal: &[ImageLine], vertical: &[ImageLine], bounds: (f64, f64)) -> GridGraph {
    let horizontal = order_by_crossing(horizontal, vertical, |p| p.y);
    let vertical = order_by_crossing(vertical, &horizontal, |p| p.x);
    let inside = |p: &Point2<f64>| p.x >= 0.0 && p.y >= 0.0 && p.x <= bounds.0 && p.y <= bounds.1;

    let mut vertices = Vec::new();
    let mut incident = Vec::new();
    let mut index = HashMap::new();
    for (i, h) in horizontal.iter().enumerate() {
        for (j, v) in vertical.iter().enumerate() {
            if let Some(p) = h.intersection(v).filter(|p| inside(p)) {
                index.insert((i, j), vertices.len());
                vertices.push(p);
                incident.push((i, j));
            }
        }
    }

    let mut edges = Vec::new();
    let mut link = |ids: Vec<usize>, along: &ImageLine| {
        let d = along.direction();
        let mut ids = ids;
        ids.sort_by(|&a, &b| vertices[a].coords.dot(&d).total_cmp(&vertices[b].coords.dot(&d)));
        for w in ids.windows(2) {
            edges.push((w[0].min(w[1]), w[0].max(w[1])));
        }
    };
    for (i, h) in horizontal.iter().enumerate() {
        link((0..vertical.len()).filter_map(|j| index.get(&(i, j)).copied()).collect(), h);
    }
    for (j, v) in vertical.iter().enumerate() {
        link((0..horizontal.len()).filter_map(|i| index.get(&(i, j)).copied()).collect(), v);
    }

    GridGraph {
        vertices,
        edges,
        incident,
        horizontal,
        vertical,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CellFilter {
    /// Expected module size in the image `(along rows, across rows)` [px].
    pub expected: (f64, f64),
    /// Allowed relative deviation of each side from the expected size.
    pub size_tol: f64,
    /// Allowed band of width / height relative to the expected ratio.
    pub aspect_band: (f64, f64),
    /// Cells with a corner closer than this to the image border are dropped;
    /// their boundary edges are cut off and the fitted lines biased [px].
    pub border_margin: f64,
}

impl Default for CellFilter {
    fn default() -> Self {
        Self {
            expected: (38.0, 77.0),
            size_tol: 0.35,
            aspect_band: (0.75, 1.33),
            border_margin: 0.0,
        }
    }
}

/// A grid cell accepted as a module: corners in top-left, top-right,
/// bottom-right, bottom-left order, with the indices of its top and left
/// lines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub corners: [Point2<f64>; 4],
    pub line_row: usize,
    pub line_col: usize,
}

fn is_convex(q: &[Point2<f64>; 4]) -> bool {
    let mut sign = 0.0;
    for i in 0..4 {
        let a = q[i];
        let b = q[(i + 1) % 4];
        let c = q[(i + 2) % 4];
        let cross = (b - a).perp(&(c - b));
        if cross.abs() < 1e-9 {
            return false;
        }
        if sign == 0.0 {
            sign = cross.signum();
        } else if cross.signum() != sign {
            return false;
        }
    }
    true
}

/// Finds every 4-cycle formed by a vertex, its right and lower neighbours,
/// and their shared diagonal vertex, keeping the convex ones whose size and
/// aspect match the filter.
pub fn grid_cells(graph: &GridGraph, filter: &CellFilter, bounds: (f64, f64)) -> Vec<GridCell> {
    let (right, down) = graph.neighbours();
    let m = filter.border_margin;
    let near_border = |p: &Point2<f64>| p.x < m || p.y < m || p.x > bounds.0 - m || p.y > bounds.1 - m;
    let mut cells = Vec::new();
    for a in 0..graph.vertices.len() {
        let (Some(&b), Some(&c)) = (right.get(&a), down.get(&a)) else {
            continue;
        };
        let (Some(&d1), Some(&d2)) = (down.get(&b), right.get(&c)) else {
            continue;
        };
        if d1 != d2 {
            continue;
        }
        let v = &graph.vertices;
        let q = [v[a], v[b], v[d1], v[c]];
        if !is_convex(&q) || q.iter().any(near_border) {
            continue;
        }
        let w = 0.5 * ((q[1] - q[0]).norm() + (q[2] - q[3]).norm());
        let h = 0.5 * ((q[3] - q[0]).norm() + (q[2] - q[1]).norm());
        let (ew, eh) = filter.expected;
        if (w / ew - 1.0).abs() > filter.size_tol || (h / eh - 1.0).abs() > filter.size_tol {
            continue;
        }
        let aspect = (w / h) / (ew / eh);
        if aspect < filter.aspect_band.0 || aspect > filter.aspect_band.1 {
            continue;
        }
        let (line_row, line_col) = graph.incident[a];
        cells.push(GridCell {
            corners: q,
            line_row,
            line_col,
        });
    }
    cells
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    const B: (f64, f64) = (400.0, 300.0);

    fn lines(ys: &[f64], xs: &[f64]) -> (Vec<ImageLine>, Vec<ImageLine>) {
        (
            ys.iter().map(|&y| ImageLine::from_normal(PI / 2.0, y, B, 1.0).unwrap()).collect(),
            xs.iter().map(|&x| ImageLine::from_normal(0.0, x, B, 1.0).unwrap()).collect(),
        )
    }

    #[test]
    fn three_by_four() {
        let (h, v) = lines(&[50.0, 130.0, 210.0], &[40.0, 80.0, 120.0, 160.0]);
        let g = build_grid_graph(&h, &v, B);
        assert_eq!(g.vertices.len(), 12);
        assert_eq!(g.edges.len(), 3 * (4 - 1) + 4 * (3 - 1));
    }

    #[test]
    fn minimal_quad() {
        let (h, v) = lines(&[50.0, 130.0], &[200.0, 100.0]);
        let g = build_grid_graph(&h, &v, B);
        assert_eq!((g.vertices.len(), g.edges.len()), (4, 4));
        let f = CellFilter {
            expected: (100.0, 80.0),
            ..Default::default()
        };
        let cells = grid_cells(&g, &f, B);
        assert_eq!(cells.len(), 1);
        let c = cells[0].corners;
        assert!((c[0] - Point2::new(100.0, 50.0)).norm() < 1e-9);
        assert!((c[2] - Point2::new(200.0, 130.0)).norm() < 1e-9);
    }

    #[test]
    fn parallel_only() {
        let (h, _) = lines(&[50.0, 130.0, 200.0], &[]);
        let g = build_grid_graph(&h, &[], B);
        assert!(g.vertices.is_empty() && g.edges.is_empty());
        assert!(grid_cells(&g, &CellFilter::default(), B).is_empty());
    }

    #[test]
    fn missing_line_rejects_double_cell() {
        let f = CellFilter {
            expected: (40.0, 80.0),
            ..Default::default()
        };
        let (h, v) = lines(&[50.0, 130.0, 210.0], &[40.0, 80.0, 120.0, 160.0, 200.0, 240.0]);
        assert_eq!(grid_cells(&build_grid_graph(&h, &v, B), &f, B).len(), 10);
        let (h, v) = lines(&[50.0, 130.0, 210.0], &[40.0, 80.0, 160.0, 200.0, 240.0]);
        assert_eq!(grid_cells(&build_grid_graph(&h, &v, B), &f, B).len(), 6);
    }
}
