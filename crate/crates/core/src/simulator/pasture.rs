//! Pasture polygons and the local metric frame used by the simulation.

use crate::analytics::{LatLon, EARTH_RADIUS_M};

use super::SimError;

/// Planar point in meters (x east, y north) of a [`LocalFrame`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn dist(self, o: Point) -> f64 {
        (self.x - o.x).hypot(self.y - o.y)
    }
}

/// Equirectangular projection about an origin; accurate to well below a
/// millimeter over a few hundred meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalFrame {
    pub origin: LatLon,
    m_per_deg_lat: f64,
    m_per_deg_lon: f64,
}

impl LocalFrame {
    pub fn new(origin: LatLon) -> Self {
        let m_per_deg_lat = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;
        LocalFrame {
            origin,
            m_per_deg_lat,
            m_per_deg_lon: m_per_deg_lat * origin.lat.to_radians().cos(),
        }
    }

    pub fn to_local(&self, p: LatLon) -> Point {
        Point::new(
            (p.lon - self.origin.lon) * self.m_per_deg_lon,
            (p.lat - self.origin.lat) * self.m_per_deg_lat,
        )
    }

    pub fn to_latlon(&self, p: Point) -> LatLon {
        LatLon::new(
            self.origin.lat + p.y / self.m_per_deg_lat,
            self.origin.lon + p.x / self.m_per_deg_lon,
        )
    }
}

fn orient(a: Point, b: Point, c: Point) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

/// Proper or touching intersection of two closed segments.
fn segments_intersect(p1: Point, p2: Point, q1: Point, q2: Point) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    let on = |a: Point, b: Point, c: Point| {
        c.x >= a.x.min(b.x) && c.x <= a.x.max(b.x) && c.y >= a.y.min(b.y) && c.y <= a.y.max(b.y)
    };
    (d1 == 0.0 && on(q1, q2, p1))
        || (d2 == 0.0 && on(q1, q2, p2))
        || (d3 == 0.0 && on(p1, p2, q1))
        || (d4 == 0.0 && on(p1, p2, q2))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    pub vertices: Vec<Point>,
}

impl Polygon {
    pub fn edges(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    /// Shoelace area in square meters.
    pub fn area(&self) -> f64 {
        self.edges().map(|(a, b)| a.x * b.y - b.x * a.y).sum::<f64>().abs() / 2.0
    }

    /// Largest vertex-to-vertex distance.
    pub fn max_extent(&self) -> f64 {
        let mut best: f64 = 0.0;
        for (i, a) in self.vertices.iter().enumerate() {
            for b in &self.vertices[i + 1..] {
                best = best.max(a.dist(*b));
            }
        }
        best
    }

    /// Even-odd ray casting; points exactly on an edge count as inside.
    pub fn contains(&self, p: Point) -> bool {
        let mut inside = false;
        for (a, b) in self.edges() {
            if orient(a, b, p) == 0.0
                && p.x >= a.x.min(b.x)
                && p.x <= a.x.max(b.x)
                && p.y >= a.y.min(b.y)
                && p.y <= a.y.max(b.y)
            {
                return true;
            }
            if (a.y > p.y) != (b.y > p.y) {
                let x_cross = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
                if p.x < x_cross {
                    inside = !inside;
                }
            }
        }
        inside
    }

    /// No two non-adjacent edges touch.
    pub fn is_simple(&self) -> bool {
        let n = self.vertices.len();
        if n < 3 {
            return false;
        }
        let edges: Vec<_> = self.edges().collect();
        for i in 0..n {
            for j in i + 1..n {
                let adjacent = j == i + 1 || (i == 0 && j == n - 1);
                if adjacent {
                    continue;
                }
                if segments_intersect(edges[i].0, edges[i].1, edges[j].0, edges[j].1) {
                    return false;
                }
            }
        }
        true
    }

    pub fn centroid(&self) -> Point {
        let mut cx = 0.0;
        let mut cy = 0.0;
        let mut a2 = 0.0;
        for (p, q) in self.edges() {
            let cross = p.x * q.y - q.x * p.y;
            a2 += cross;
            cx += (p.x + q.x) * cross;
            cy += (p.y + q.y) * cross;
        }
        Point::new(cx / (3.0 * a2), cy / (3.0 * a2))
    }

    /// First edge crossed when moving from `from` to `to`, with the crossing
    /// parameter along the move.
    pub fn first_crossing(&self, from: Point, to: Point) -> Option<(Point, Point)> {
        let mut best: Option<(f64, (Point, Point))> = None;
        let (dx, dy) = (to.x - from.x, to.y - from.y);
        for (a, b) in self.edges() {
            let (ex, ey) = (b.x - a.x, b.y - a.y);
            let denom = dx * ey - dy * ex;
            if denom == 0.0 {
                continue;
            }
            let t = ((a.x - from.x) * ey - (a.y - from.y) * ex) / denom;
            let u = ((a.x - from.x) * dy - (a.y - from.y) * dx) / denom;
            if (0.0..=1.0).contains(&t) && (0.0..=1.0).contains(&u) && best.is_none_or(|(bt, _)| t < bt) {
                best = Some((t, (a, b)));
            }
        }
        best.map(|(_, e)| e)
    }
}

/// Mirror image of `p` across the line through `a` and `b`.
pub fn reflect_across(p: Point, a: Point, b: Point) -> Point {
    let (ex, ey) = (b.x - a.x, b.y - a.y);
    let len2 = ex * ex + ey * ey;
    let t = ((p.x - a.x) * ex + (p.y - a.y) * ey) / len2;
    let foot = Point::new(a.x + t * ex, a.y + t * ey);
    Point::new(2.0 * foot.x - p.x, 2.0 * foot.y - p.y)
}

/// Fenced grazing area with optional excluded sub-areas.
#[derive(Debug, Clone, PartialEq)]
pub struct Pasture {
    pub boundary: Vec<LatLon>,
    pub no_go: Vec<Vec<LatLon>>,
    frame: LocalFrame,
    local_boundary: Polygon,
    local_no_go: Vec<Polygon>,
}

impl Pasture {
    pub fn new(boundary: Vec<LatLon>, no_go: Vec<Vec<LatLon>>) -> Result<Self, SimError> {
        if boundary.len() < 3 {
            return Err(SimError::Config("pasture needs at least three vertices".into()));
        }
        if boundary.iter().any(|p| !(p.lat.abs() <= 90.0 && p.lon.abs() <= 180.0)) {
            return Err(SimError::Config("pasture vertex outside valid coordinates".into()));
        }
        let n = boundary.len() as f64;
        let origin = LatLon::new(
            boundary.iter().map(|p| p.lat).sum::<f64>() / n,
            boundary.iter().map(|p| p.lon).sum::<f64>() / n,
        );
        let frame = LocalFrame::new(origin);
        let project = |ring: &[LatLon]| Polygon {
            vertices: ring.iter().map(|p| frame.to_local(*p)).collect(),
        };
        let local_boundary = project(&boundary);
        if !local_boundary.is_simple() {
            return Err(SimError::Config("pasture boundary is self-intersecting".into()));
        }
        let mut local_no_go = Vec::with_capacity(no_go.len());
        for ring in &no_go {
            let poly = project(ring);
            if !poly.is_simple() {
                return Err(SimError::Config("no-go polygon is not simple".into()));
            }
            local_no_go.push(poly);
        }
        let pasture = Pasture {
            boundary,
            no_go,
            frame,
            local_boundary,
            local_no_go,
        };
        if !pasture.contains(pasture.local_boundary.centroid()) && pasture.interior_point().is_none() {
            return Err(SimError::Config("pasture has no accessible interior".into()));
        }
        Ok(pasture)
    }

    /// Hexagonal alpine test pasture: 275 m long, 20,280 m².
    pub fn default_alpine() -> Self {
        let h = 20_280.0 / 225.0;
        let local = [
            Point::new(0.0, h / 2.0),
            Point::new(50.0, 0.0),
            Point::new(225.0, 0.0),
            Point::new(275.0, h / 2.0),
            Point::new(225.0, h),
            Point::new(50.0, h),
        ];
        let frame = LocalFrame::new(LatLon::new(46.80, 9.83));
        let center = Point::new(137.5, h / 2.0);
        let ring = local
            .iter()
            .map(|p| frame.to_latlon(Point::new(p.x - center.x, p.y - center.y)))
            .collect();
        Pasture::new(ring, Vec::new()).expect("default pasture is valid")
    }

    pub fn frame(&self) -> &LocalFrame {
        &self.frame
    }

    pub fn local_boundary(&self) -> &Polygon {
        &self.local_boundary
    }

    pub fn area_m2(&self) -> f64 {
        self.local_boundary.area() - self.local_no_go.iter().map(Polygon::area).sum::<f64>()
    }

    pub fn max_extent_m(&self) -> f64 {
        self.local_boundary.max_extent()
    }

    /// Inside the fence and outside every no-go area.
    pub fn contains(&self, p: Point) -> bool {
        self.local_boundary.contains(p) && !self.local_no_go.iter().any(|z| z.contains(p))
    }

    pub fn contains_latlon(&self, p: LatLon) -> bool {
        self.contains(self.frame.to_local(p))
    }

    /// Edge blocking a move, from the fence or a no-go area.
    pub fn blocking_edge(&self, from: Point, to: Point) -> Option<(Point, Point)> {
        std::iter::once(&self.local_boundary)
            .chain(&self.local_no_go)
            .filter_map(|poly| poly.first_crossing(from, to))
            .next()
    }

    /// A deterministic accessible point: the centroid, or the first grid
    /// point inside.
    pub fn interior_point(&self) -> Option<Point> {
        let c = self.local_boundary.centroid();
        if self.contains(c) {
            return Some(c);
        }
        let (mut lo, mut hi) = (c, c);
        for v in &self.local_boundary.vertices {
            lo = Point::new(lo.x.min(v.x), lo.y.min(v.y));
            hi = Point::new(hi.x.max(v.x), hi.y.max(v.y));
        }
        let steps = 64;
        for i in 1..steps {
            for j in 1..steps {
                let p = Point::new(
                    lo.x + (hi.x - lo.x) * i as f64 / steps as f64,
                    lo.y + (hi.y - lo.y) * j as f64 / steps as f64,
                );
                if self.contains(p) {
                    return Some(p);
                }
            }
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_pasture_dimensions() {
        let p = Pasture::default_alpine();
        assert!((p.area_m2() - 20_280.0).abs() < 0.01 * 20_280.0, "{}", p.area_m2());
        assert!((p.max_extent_m() - 275.0).abs() < 0.01 * 275.0, "{}", p.max_extent_m());
        assert!(p.local_boundary().is_simple());
    }

    #[test]
    fn projection_round_trip() {
        let f = LocalFrame::new(LatLon::new(46.8, 9.83));
        let p = Point::new(123.4, -56.7);
        let back = f.to_local(f.to_latlon(p));
        assert!(p.dist(back) < 1e-9);
    }

    #[test]
    fn containment() {
        let sq = Polygon {
            vertices: vec![Point::new(0.0, 0.0), Point::new(10.0, 0.0), Point::new(10.0, 10.0), Point::new(0.0, 10.0)],
        };
        assert!(sq.contains(Point::new(5.0, 5.0)));
        assert!(sq.contains(Point::new(10.0, 5.0)));
        assert!(!sq.contains(Point::new(10.1, 5.0)));
        assert_eq!(sq.area(), 100.0);
        assert_eq!(sq.centroid(), Point::new(5.0, 5.0));
    }

    #[test]
    fn bowtie_is_rejected() {
        let f = LocalFrame::new(LatLon::new(46.8, 9.83));
        let ring = [Point::new(0.0, 0.0), Point::new(100.0, 100.0), Point::new(100.0, 0.0), Point::new(0.0, 100.0)]
            .iter()
            .map(|p| f.to_latlon(*p))
            .collect();
        assert!(matches!(Pasture::new(ring, vec![]), Err(SimError::Config(_))));
    }

    #[test]
    fn no_go_excluded() {
        let f = LocalFrame::new(LatLon::new(46.8, 9.83));
        let to = |pts: &[(f64, f64)]| pts.iter().map(|&(x, y)| f.to_latlon(Point::new(x, y))).collect::<Vec<_>>();
        let p = Pasture::new(
            to(&[(-50.0, -50.0), (50.0, -50.0), (50.0, 50.0), (-50.0, 50.0)]),
            vec![to(&[(-10.0, -10.0), (10.0, -10.0), (10.0, 10.0), (-10.0, 10.0)])],
        )
        .unwrap();
        let centre = p.frame().to_local(f.to_latlon(Point::new(0.0, 0.0)));
        assert!(!p.contains(centre));
        assert!((p.area_m2() - 9_600.0).abs() < 1.0);
        let inner = p.interior_point().unwrap();
        assert!(p.contains(inner));
    }

    #[test]
    fn reflection_mirrors() {
        let r = reflect_across(Point::new(3.0, 12.0), Point::new(0.0, 10.0), Point::new(10.0, 10.0));
        assert!((r.x - 3.0).abs() < 1e-12 && (r.y - 8.0).abs() < 1e-12);
    }
}
