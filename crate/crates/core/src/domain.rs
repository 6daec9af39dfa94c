//! Observation region `B` and numerical quadrature over it.
//!
//! A domain is either a closed interval (temporal processes) or a planar
//! bounding rectangle with an optional simple-polygon mask (spatial
//! processes). Boundary points always count as inside.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A location in `B`: a time or a planar coordinate pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Point {
    Line(f64),
    Plane([f64; 2]),
}

impl Point {
    pub fn dim(&self) -> usize {
        match self {
            Point::Line(_) => 1,
            Point::Plane(_) => 2,
        }
    }

    pub fn is_finite(&self) -> bool {
        match *self {
            Point::Line(t) => t.is_finite(),
            Point::Plane([x, y]) => x.is_finite() && y.is_finite(),
        }
    }
}

impl std::fmt::Display for Point {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Point::Line(t) => write!(f, "{t}"),
            Point::Plane([x, y]) => write!(f, "({x}, {y})"),
        }
    }
}

/// Axis-aligned rectangle `[x0, x1] × [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        Rect { x0, x1, y0, y1 }
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }

    pub fn contains(&self, [x, y]: [f64; 2]) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }

    fn as_array(&self) -> [f64; 4] {
        [self.x0, self.x1, self.y0, self.y1]
    }
}

/// A closed simple polygon without holes, stored without the repeated closing vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    vertices: Vec<[f64; 2]>,
}

impl Polygon {
    pub fn new(mut vertices: Vec<[f64; 2]>) -> Result<Self> {
        if vertices.len() > 1 && vertices.first() == vertices.last() {
            vertices.pop();
        }
        if vertices.len() < 3 {
            return Err(Error::Domain(format!(
                "polygon needs at least 3 distinct vertices, got {}",
                vertices.len()
            )));
        }
        if vertices.iter().any(|v| !v[0].is_finite() || !v[1].is_finite()) {
            return Err(Error::Domain("polygon has non-finite vertex".into()));
        }
        let poly = Polygon { vertices };
        if let Some((i, j)) = poly.find_self_intersection() {
            return Err(Error::Domain(format!(
                "polygon is not simple: edges {i} and {j} intersect"
            )));
        }
        Ok(poly)
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    /// Shoelace area (absolute value).
    pub fn area(&self) -> f64 {
        let n = self.vertices.len();
        let twice: f64 = (0..n)
            .map(|i| {
                let [x0, y0] = self.vertices[i];
                let [x1, y1] = self.vertices[(i + 1) % n];
                x0 * y1 - x1 * y0
            })
            .sum();
        0.5 * twice.abs()
    }

    fn edge(&self, i: usize) -> ([f64; 2], [f64; 2]) {
        (self.vertices[i], self.vertices[(i + 1) % self.vertices.len()])
    }

    /// Even–odd rule; points on an edge are inside.
    pub fn contains(&self, p: [f64; 2]) -> bool {
        let n = self.vertices.len();
        let mut inside = false;
        for i in 0..n {
            let (a, b) = self.edge(i);
            if on_segment(p, a, b) {
                return true;
            }
            if (a[1] > p[1]) != (b[1] > p[1]) {
                let x_cross = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
                if p[0] < x_cross {
                    inside = !inside;
                }
            }
        }
        inside
    }

    fn bounding_box(&self) -> Rect {
        let mut r = Rect::new(f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for &[x, y] in &self.vertices {
            r.x0 = r.x0.min(x);
            r.x1 = r.x1.max(x);
            r.y0 = r.y0.min(y);
            r.y1 = r.y1.max(y);
        }
        r
    }

    /// Returns a pair of non-adjacent intersecting edges, if any. Edges are
    /// bucketed on a uniform grid so large boundaries stay tractable.
    fn find_self_intersection(&self) -> Option<(usize, usize)> {
        let n = self.vertices.len();
        let bb = self.bounding_box();
        let cells = ((n as f64).sqrt().ceil() as usize).clamp(1, 256);
        let w = ((bb.x1 - bb.x0) / cells as f64).max(f64::MIN_POSITIVE);
        let h = ((bb.y1 - bb.y0) / cells as f64).max(f64::MIN_POSITIVE);
        let cell_of = |x: f64, lo: f64, step: f64| (((x - lo) / step) as usize).min(cells - 1);
        let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); cells * cells];
        for i in 0..n {
            let (a, b) = self.edge(i);
            let (cx0, cx1) = (cell_of(a[0].min(b[0]), bb.x0, w), cell_of(a[0].max(b[0]), bb.x0, w));
            let (cy0, cy1) = (cell_of(a[1].min(b[1]), bb.y0, h), cell_of(a[1].max(b[1]), bb.y0, h));
            for cy in cy0..=cy1 {
                for cx in cx0..=cx1 {
                    buckets[cy * cells + cx].push(i);
                }
            }
        }
        for bucket in &buckets {
            for (k, &i) in bucket.iter().enumerate() {
                for &j in &bucket[k + 1..] {
                    let adjacent = (i + 1) % n == j || (j + 1) % n == i;
                    if adjacent {
                        continue;
                    }
                    let (a, b) = self.edge(i);
                    let (c, d) = self.edge(j);
                    if segments_intersect(a, b, c, d) {
                        return Some((i.min(j), i.max(j)));
                    }
                }
            }
        }
        None
    }
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn on_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> bool {
    let scale = (b[0] - a[0]).abs().max((b[1] - a[1]).abs()).max(1e-300);
    let c = cross(a, b, p);
    if c.abs() > 1e-12 * scale * scale {
        return false;
    }
    p[0] >= a[0].min(b[0]) && p[0] <= a[0].max(b[0]) && p[1] >= a[1].min(b[1]) && p[1] <= a[1].max(b[1])
}

fn segments_intersect(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> bool {
    let d1 = cross(c, d, a);
    let d2 = cross(c, d, b);
    let d3 = cross(a, b, c);
    let d4 = cross(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    (d1 == 0.0 && on_segment(a, c, d))
        || (d2 == 0.0 && on_segment(b, c, d))
        || (d3 == 0.0 && on_segment(c, a, b))
        || (d4 == 0.0 && on_segment(d, a, b))
}

/// The common observation region `B`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DomainSpec", into = "DomainSpec")]
pub enum ObservationDomain {
    Interval { a: f64, b: f64 },
    Planar { rect: Rect, mask: Option<Polygon> },
}

impl ObservationDomain {
    pub fn interval(a: f64, b: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite()) || a >= b {
            return Err(Error::Domain(format!("interval needs finite a < b, got [{a}, {b}]")));
        }
        Ok(ObservationDomain::Interval { a, b })
    }

    pub fn rectangle(rect: Rect) -> Result<Self> {
        Self::planar(rect, None)
    }

    pub fn planar(rect: Rect, mask: Option<Polygon>) -> Result<Self> {
        let finite = rect.as_array().iter().all(|v| v.is_finite());
        if !finite || rect.x0 >= rect.x1 || rect.y0 >= rect.y1 {
            return Err(Error::Domain(format!("degenerate bounding rectangle {:?}", rect.as_array())));
        }
        if let Some(poly) = &mask {
            if let Some(v) = poly.vertices().iter().find(|v| !rect.contains(**v)) {
                return Err(Error::Domain(format!(
                    "polygon vertex ({}, {}) lies outside the bounding rectangle",
                    v[0], v[1]
                )));
            }
            if poly.area() <= 0.0 {
                return Err(Error::Domain("polygon has zero area".into()));
            }
        }
        Ok(ObservationDomain::Planar { rect, mask })
    }

    pub fn dim(&self) -> usize {
        match self {
            ObservationDomain::Interval { .. } => 1,
            ObservationDomain::Planar { .. } => 2,
        }
    }

    /// Length or area of `B`.
    pub fn measure(&self) -> f64 {
        match self {
            ObservationDomain::Interval { a, b } => b - a,
            ObservationDomain::Planar { rect, mask } => match mask {
                Some(p) => p.area(),
                None => rect.area(),
            },
        }
    }

    /// Membership test; the boundary counts as inside.
    pub fn contains(&self, point: &Point) -> Result<bool> {
        match (self, point) {
            (ObservationDomain::Interval { a, b }, Point::Line(t)) => Ok(*t >= *a && *t <= *b),
            (ObservationDomain::Planar { rect, mask }, Point::Plane(xy)) => {
                Ok(rect.contains(*xy) && mask.as_ref().is_none_or(|m| m.contains(*xy)))
            }
            _ => Err(Error::Usage(format!(
                "point {point} has dimension {} but the domain has dimension {}",
                point.dim(),
                self.dim()
            ))),
        }
    }

    /// Bounding rectangle of a planar domain.
    pub fn bounding_rect(&self) -> Option<Rect> {
        match self {
            ObservationDomain::Planar { rect, .. } => Some(*rect),
            ObservationDomain::Interval { .. } => None,
        }
    }

    /// Evaluation grid for curve export: `resolution` equispaced points
    /// including both ends (1D), or masked cell centres of a
    /// `resolution × resolution` grid (2D).
    pub fn grid(&self, resolution: usize) -> Result<Vec<Point>> {
        if resolution == 0 {
            return Err(Error::Usage("grid resolution must be at least 1".into()));
        }
        match self {
            ObservationDomain::Interval { a, b } => {
                if resolution == 1 {
                    return Ok(vec![Point::Line(0.5 * (a + b))]);
                }
                let step = (b - a) / (resolution - 1) as f64;
                Ok((0..resolution)
                    .map(|i| {
                        if i == resolution - 1 {
                            Point::Line(*b)
                        } else {
                            Point::Line(a + step * i as f64)
                        }
                    })
                    .collect())
            }
            ObservationDomain::Planar { .. } => Ok(self.masked_cells(resolution).into_iter().map(|(p, _)| p).collect()),
        }
    }

    fn masked_cells(&self, resolution: usize) -> Vec<(Point, f64)> {
        let ObservationDomain::Planar { rect, .. } = self else {
            return Vec::new();
        };
        let dx = (rect.x1 - rect.x0) / resolution as f64;
        let dy = (rect.y1 - rect.y0) / resolution as f64;
        let cell_area = dx * dy;
        let mut out = Vec::with_capacity(resolution * resolution);
        for j in 0..resolution {
            let y = rect.y0 + (j as f64 + 0.5) * dy;
            for i in 0..resolution {
                let x = rect.x0 + (i as f64 + 0.5) * dx;
                let p = Point::Plane([x, y]);
                if self.contains(&p).unwrap_or(false) {
                    out.push((p, cell_area));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum DomainSpec {
    Interval {
        a: f64,
        b: f64,
    },
    Planar {
        rect: [f64; 4],
        #[serde(default, skip_serializing_if = "Option::is_none")]
        polygon: Option<Vec<[f64; 2]>>,
    },
}

impl TryFrom<DomainSpec> for ObservationDomain {
    type Error = Error;

    fn try_from(spec: DomainSpec) -> Result<Self> {
        match spec {
            DomainSpec::Interval { a, b } => ObservationDomain::interval(a, b),
            DomainSpec::Planar { rect, polygon } => {
                let mask = polygon.map(Polygon::new).transpose()?;
                ObservationDomain::planar(Rect::new(rect[0], rect[1], rect[2], rect[3]), mask)
            }
        }
    }
}

impl From<ObservationDomain> for DomainSpec {
    fn from(d: ObservationDomain) -> Self {
        match d {
            ObservationDomain::Interval { a, b } => DomainSpec::Interval { a, b },
            ObservationDomain::Planar { rect, mask } => DomainSpec::Planar {
                rect: rect.as_array(),
                polygon: mask.map(|m| m.vertices),
            },
        }
    }
}

/// How a quadrature rule was laid out.
#[derive(Debug, Clone, PartialEq)]
pub enum Resolution {
    /// Gauss–Legendre nodes per panel, over the given panel breakpoints.
    GaussPanels { breakpoints: Vec<f64>, nodes_per_panel: usize },
    /// Centre-sampled masked grid with this many cells per bounding-rect axis.
    Grid { cells_per_axis: usize },
}

/// Nodes and positive weights approximating `∫_B`.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    nodes: Vec<Point>,
    weights: Vec<f64>,
    resolution: Resolution,
}

impl QuadratureRule {
    /// Composite Gauss–Legendre rule on `[a, b]` with panels split at
    /// `breakpoints` (which must be increasing and include both ends).
    pub fn gauss_legendre_panels(breakpoints: &[f64], nodes_per_panel: usize) -> Result<Self> {
        if nodes_per_panel == 0 {
            return Err(Error::Usage("quadrature needs at least one node per panel".into()));
        }
        if breakpoints.len() < 2 || breakpoints.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Domain("panel breakpoints must be strictly increasing".into()));
        }
        let (x, w) = gauss_legendre(nodes_per_panel);
        let mut nodes = Vec::with_capacity(x.len() * (breakpoints.len() - 1));
        let mut weights = Vec::with_capacity(nodes.capacity());
        for pan in breakpoints.windows(2) {
            let half = 0.5 * (pan[1] - pan[0]);
            let mid = 0.5 * (pan[1] + pan[0]);
            for (xi, wi) in x.iter().zip(&w) {
                nodes.push(Point::Line(mid + half * xi));
                weights.push(half * wi);
            }
        }
        Ok(QuadratureRule {
            nodes,
            weights,
            resolution: Resolution::GaussPanels {
                breakpoints: breakpoints.to_vec(),
                nodes_per_panel,
            },
        })
    }

    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn resolution(&self) -> &Resolution {
        &self.resolution
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// `Σ w·f(node)`.
    pub fn integrate(&self, f: impl Fn(&Point) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(p, w)| w * f(p)).sum()
    }
}

/// Builds a quadrature rule over `B`: a single Gauss–Legendre panel with
/// `resolution` nodes (1D) or a `resolution × resolution` masked grid (2D).
/// Bases supply knot-aligned 1D rules through [`crate::basis::BasisSystem::quadrature`].
pub fn build_quadrature(domain: &ObservationDomain, resolution: usize) -> Result<QuadratureRule> {
    if resolution == 0 {
        return Err(Error::Usage("quadrature resolution must be at least 1".into()));
    }
    if domain.measure() <= 0.0 {
        return Err(Error::Domain("domain has non-positive measure".into()));
    }
    match domain {
        ObservationDomain::Interval { a, b } => QuadratureRule::gauss_legendre_panels(&[*a, *b], resolution),
        ObservationDomain::Planar { .. } => {
            let cells = domain.masked_cells(resolution);
            if cells.is_empty() {
                return Err(Error::Domain(format!(
                    "no grid cell centre falls inside the domain at resolution {resolution}"
                )));
            }
            let (nodes, weights) = cells.into_iter().unzip();
            Ok(QuadratureRule {
                nodes,
                weights,
                resolution: Resolution::Grid {
                    cells_per_axis: resolution,
                },
            })
        }
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`, ascending.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Legendre recurrence for P_n(z) and its derivative.
            let (mut p0, mut p1) = (1.0, 0.0);
            for j in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * j + 1) as f64 * z * p1 - j as f64 * p2) / (j + 1) as f64;
            }
            dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() <= 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn triangle_domain() -> ObservationDomain {
        let tri = Polygon::new(vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]).unwrap();
        ObservationDomain::planar(Rect::new(0.0, 1.0, 0.0, 1.0), Some(tri)).unwrap()
    }

    #[test]
    fn interval_weights_sum_to_length() {
        let d = ObservationDomain::interval(0.0, 1.0).unwrap();
        for r in 1..12 {
            let q = build_quadrature(&d, r).unwrap();
            assert_relative_eq!(q.total_weight(), 1.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn rectangle_weights_sum_to_area() {
        let d = ObservationDomain::rectangle(Rect::new(0.0, 2.0, 0.0, 3.0)).unwrap();
        let q = build_quadrature(&d, 37).unwrap();
        assert_relative_eq!(q.total_weight(), 6.0, max_relative = 1e-12);
    }

    #[test]
    fn masked_triangle_area() {
        let d = triangle_domain();
        assert_relative_eq!(d.measure(), 0.5);
        let q = build_quadrature(&d, 200).unwrap();
        assert!((q.total_weight() - 0.5).abs() <= 0.005, "{}", q.total_weight());
    }

    #[test]
    fn containment_examples() {
        let d = ObservationDomain::interval(0.0, 7.0).unwrap();
        assert!(d.contains(&Point::Line(3.5)).unwrap());
        assert!(d.contains(&Point::Line(7.0)).unwrap());
        assert!(!d.contains(&Point::Line(7.000001)).unwrap());
        assert!(matches!(d.contains(&Point::Plane([1.0, 1.0])), Err(Error::Usage(_))));

        let t = triangle_domain();
        assert!(!t.contains(&Point::Plane([0.9, 0.9])).unwrap());
        assert!(t.contains(&Point::Plane([0.2, 0.2])).unwrap());
        assert!(t.contains(&Point::Plane([0.5, 0.5])).unwrap(), "hypotenuse is boundary");
        assert!(t.contains(&Point::Plane([0.0, 0.3])).unwrap());
    }

    #[test]
    fn degenerate_domains_rejected() {
        assert!(ObservationDomain::interval(1.0, 1.0).is_err());
        assert!(ObservationDomain::rectangle(Rect::new(0.0, 0.0, 0.0, 1.0)).is_err());
        let bowtie = Polygon::new(vec![[0.0, 0.0], [1.0, 1.0], [1.0, 0.0], [0.0, 1.0]]);
        assert!(bowtie.is_err());
        let outside = Polygon::new(vec![[0.0, 0.0], [2.0, 0.0], [0.0, 1.0]]).unwrap();
        assert!(ObservationDomain::planar(Rect::new(0.0, 1.0, 0.0, 1.0), Some(outside)).is_err());
    }

    #[test]
    fn gauss_legendre_is_exact_for_polynomials() {
        for n in 1..=8 {
            let (x, w) = gauss_legendre(n);
            for deg in 0..2 * n {
                let approx: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                assert!((approx - exact).abs() <= 1e-12 * exact.abs().max(1.0), "n={n} deg={deg}");
            }
        }
    }

    #[test]
    fn quadrature_nodes_are_inside() {
        let d = triangle_domain();
        let q = build_quadrature(&d, 64).unwrap();
        assert!(q.nodes().iter().all(|p| d.contains(p).unwrap()));
        let d1 = ObservationDomain::interval(-2.0, 5.0).unwrap();
        let q1 = build_quadrature(&d1, 9).unwrap();
        assert!(q1.nodes().iter().all(|p| d1.contains(p).unwrap()));
    }

    #[test]
    fn domain_json_shapes() {
        let d: ObservationDomain = serde_json::from_str(r#"{"kind":"interval","a":0,"b":7}"#).unwrap();
        assert_eq!(d, ObservationDomain::interval(0.0, 7.0).unwrap());
        let p: ObservationDomain =
            serde_json::from_str(r#"{"kind":"planar","rect":[0,1,0,1],"polygon":[[0,0],[1,0],[0,1],[0,0]]}"#).unwrap();
        assert_eq!(p, triangle_domain());
        assert!(serde_json::from_str::<ObservationDomain>(r#"{"kind":"interval","a":3,"b":1}"#).is_err());
        let back: ObservationDomain = serde_json::from_str(&serde_json::to_string(&p).unwrap()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn masked_area_converges_with_resolution() {
        let d = triangle_domain();
        let errs: Vec<f64> = [32, 64, 128, 256]
            .iter()
            .map(|&r| (build_quadrature(&d, r).unwrap().total_weight() - 0.5).abs())
            .collect();
        assert!(errs.windows(2).all(|w| w[1] <= w[0] + 1e-15), "{errs:?}");
        assert!(errs[3] <= 1e-2 * 0.5);
    }
}
