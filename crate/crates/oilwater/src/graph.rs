//! Finite graph families with a designated active set and an absorbing exterior.
//!
//! Every graph is a finite truncation: an active set `K` on which dynamics
//! run, plus absorbing sink vertices representing the exterior. Active
//! vertices are regular of a common degree; sinks never fire and particles
//! landing there freeze. Vertex 0 is always the designated origin.

use std::collections::{HashMap, VecDeque};
use std::io::Write as IoWrite;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type VertexId = u32;

/// The designated origin vertex in every built graph.
pub const ORIGIN: VertexId = 0;

pub(crate) const UNREACHABLE: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyTag {
    Cycle,
    Torus2d,
    LatticeBox,
    RegularTreeBall,
}

/// Family plus size parameters; the truncation radius is supplied separately
/// to [`Graph::build`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilySpec {
    /// Cycle on `n` vertices. The active set is the graph-distance ball of
    /// the build radius around the origin, or an arc of exactly `arc`
    /// vertices containing the origin when given (balls on a cycle always
    /// have odd size; several fixtures need even arcs).
    Cycle {
        n: usize,
        #[serde(default)]
        arc: Option<usize>,
    },
    /// `side` x `side` torus, fully active with an empty sink.
    Torus2d { side: usize },
    /// `dim`-dimensional integer lattice truncated to the l1 ball of the
    /// build radius; the sink is the next l1 shell.
    LatticeBox { dim: usize },
    /// Ball in the infinite `degree`-regular tree; the sink is the next
    /// generation of leaves.
    RegularTreeBall { degree: usize },
}

impl FamilySpec {
    pub fn tag(&self) -> FamilyTag {
        match self {
            FamilySpec::Cycle { .. } => FamilyTag::Cycle,
            FamilySpec::Torus2d { .. } => FamilyTag::Torus2d,
            FamilySpec::LatticeBox { .. } => FamilyTag::LatticeBox,
            FamilySpec::RegularTreeBall { .. } => FamilyTag::RegularTreeBall,
        }
    }
}

/// Ball query: all vertices within `radius` graph-distance steps of `center`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BallSpec {
    pub center: VertexId,
    pub radius: u32,
}

#[derive(Debug, Clone)]
pub struct Graph {
    family: FamilyTag,
    degree: u32,
    radius: usize,
    adjacency: Vec<Vec<VertexId>>,
    active: Vec<bool>,
    active_ids: Vec<VertexId>,
    dist_origin: Vec<u32>,
    dist_sink: Vec<u32>,
}

impl Graph {
    /// Build a graph of the given family with active set equal to the ball
    /// of `radius` around the origin (or the requested cycle arc) and one
    /// absorbing boundary layer.
    pub fn build(spec: &FamilySpec, radius: usize) -> Result<Graph> {
        let (adjacency, active, degree) = match spec {
            FamilySpec::Cycle { n, arc } => build_cycle(*n, *arc, radius)?,
            FamilySpec::Torus2d { side } => build_torus(*side)?,
            FamilySpec::LatticeBox { dim } => build_lattice(*dim, radius)?,
            FamilySpec::RegularTreeBall { degree } => build_tree(*degree, radius)?,
        };
        let active_ids = active
            .iter()
            .enumerate()
            .filter(|(_, a)| **a)
            .map(|(v, _)| v as VertexId)
            .collect();
        let dist_origin = bfs_distances(&adjacency, std::iter::once(ORIGIN));
        let sinks: Vec<VertexId> = active
            .iter()
            .enumerate()
            .filter(|(_, a)| !**a)
            .map(|(v, _)| v as VertexId)
            .collect();
        let dist_sink = if sinks.is_empty() {
            vec![UNREACHABLE; adjacency.len()]
        } else {
            bfs_distances(&adjacency, sinks.into_iter())
        };
        let g = Graph {
            family: spec.tag(),
            degree,
            radius,
            adjacency,
            active,
            active_ids,
            dist_origin,
            dist_sink,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn family(&self) -> FamilyTag {
        self.family
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    /// Truncation radius this graph was built with.
    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn vertex_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn is_vertex(&self, v: VertexId) -> bool {
        (v as usize) < self.adjacency.len()
    }

    pub fn is_active(&self, v: VertexId) -> bool {
        self.active.get(v as usize).copied().unwrap_or(false)
    }

    pub fn active_vertices(&self) -> &[VertexId] {
        &self.active_ids
    }

    pub fn sink_vertices(&self) -> impl Iterator<Item = VertexId> + '_ {
        (0..self.vertex_count() as VertexId).filter(|v| !self.is_active(*v))
    }

    pub fn has_sink(&self) -> bool {
        self.active_ids.len() < self.vertex_count()
    }

    pub fn neighbors(&self, v: VertexId) -> &[VertexId] {
        &self.adjacency[v as usize]
    }

    /// Graph distance from the origin, precomputed over the whole truncation.
    pub fn distance_from_origin(&self, v: VertexId) -> u32 {
        self.dist_origin[v as usize]
    }

    /// Graph distance to the nearest sink vertex ([`UNREACHABLE`] when the
    /// sink is empty). Sinks themselves are at distance 0.
    pub fn distance_to_sink(&self, v: VertexId) -> u32 {
        self.dist_sink[v as usize]
    }

    pub fn distance(&self, x: VertexId, y: VertexId) -> Result<u32> {
        self.check_vertex(x)?;
        self.check_vertex(y)?;
        let d = bfs_distances(&self.adjacency, std::iter::once(x));
        Ok(d[y as usize])
    }

    /// All vertices within `spec.radius` steps of `spec.center`, sorted.
    pub fn ball(&self, spec: BallSpec) -> Result<Vec<VertexId>> {
        self.check_vertex(spec.center)?;
        let d = bfs_distances(&self.adjacency, std::iter::once(spec.center));
        let mut out: Vec<VertexId> = (0..self.vertex_count() as VertexId)
            .filter(|v| d[*v as usize] <= spec.radius)
            .collect();
        out.sort_unstable();
        Ok(out)
    }

    /// Exterior boundary of the radius-`l` ball: vertices at distance `l+1`
    /// from the origin.
    pub fn exterior_boundary(&self, l: u32) -> Vec<VertexId> {
        (0..self.vertex_count() as VertexId)
            .filter(|v| self.dist_origin[*v as usize] == l + 1)
            .collect()
    }

    /// Union of radius-`d` balls centered on the exterior boundary of the
    /// radius-`l` ball, restricted to the truncation.
    pub fn annulus(&self, l: u32, d: u32) -> Result<Vec<VertexId>> {
        let boundary = self.exterior_boundary(l);
        if boundary.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "exterior boundary of the radius-{l} ball is empty"
            )));
        }
        let dist = bfs_distances(&self.adjacency, boundary.into_iter());
        let mut out: Vec<VertexId> = (0..self.vertex_count() as VertexId)
            .filter(|v| dist[*v as usize] <= d)
            .collect();
        out.sort_unstable();
        Ok(out)
    }

    /// Debug export: one `u v` pair per line, each undirected edge once.
    pub fn write_edge_list<W: IoWrite>(&self, mut w: W) -> std::io::Result<()> {
        for (u, nbrs) in self.adjacency.iter().enumerate() {
            for &v in nbrs {
                if (u as VertexId) <= v {
                    writeln!(w, "{u} {v}")?;
                }
            }
        }
        Ok(())
    }

    fn check_vertex(&self, v: VertexId) -> Result<()> {
        if self.is_vertex(v) {
            Ok(())
        } else {
            Err(Error::UnknownVertex(v))
        }
    }

    fn validate(&self) -> Result<()> {
        if !self.is_active(ORIGIN) {
            return Err(Error::InvalidGraph(
                "origin must belong to the active set".into(),
            ));
        }
        for &v in &self.active_ids {
            let nbrs = self.neighbors(v);
            if nbrs.len() != self.degree as usize {
                return Err(Error::InvalidGraph(format!(
                    "active vertex {v} has {} neighbors, expected {}",
                    nbrs.len(),
                    self.degree
                )));
            }
            for &u in nbrs {
                if !self.is_vertex(u) {
                    return Err(Error::InvalidGraph(format!(
                        "active vertex {v} references unknown neighbor {u}"
                    )));
                }
                if self.is_active(u) {
                    let back = self.neighbors(u).iter().filter(|&&w| w == v).count();
                    let fwd = nbrs.iter().filter(|&&w| w == u).count();
                    if back != fwd {
                        return Err(Error::InvalidGraph(format!(
                            "asymmetric adjacency between active vertices {v} and {u}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

fn bfs_distances(
    adjacency: &[Vec<VertexId>],
    sources: impl Iterator<Item = VertexId>,
) -> Vec<u32> {
    let mut dist = vec![UNREACHABLE; adjacency.len()];
    let mut queue = VecDeque::new();
    for s in sources {
        if dist[s as usize] != 0 {
            dist[s as usize] = 0;
            queue.push_back(s);
        }
    }
    while let Some(v) = queue.pop_front() {
        let dv = dist[v as usize];
        for &u in &adjacency[v as usize] {
            if dist[u as usize] == UNREACHABLE {
                dist[u as usize] = dv + 1;
                queue.push_back(u);
            }
        }
    }
    dist
}

/// Vertex ids on the cycle are positions `0..n`; the active set is the arc
/// of offsets `-(a-1)/2 ..= a/2` around the origin, so even arcs extend one
/// step further clockwise.
fn build_cycle(
    n: usize,
    arc: Option<usize>,
    radius: usize,
) -> Result<(Vec<Vec<VertexId>>, Vec<bool>, u32)> {
    if n < 3 {
        return Err(Error::InvalidGraph(format!(
            "cycle length must be at least 3, got {n}"
        )));
    }
    let arc_len = match arc {
        Some(a) => {
            if a == 0 || a > n - 1 {
                return Err(Error::InvalidGraph(format!(
                    "cycle arc must satisfy 1 <= arc <= n-1, got arc={a} with n={n}"
                )));
            }
            a
        }
        None => {
            let a = 2 * radius + 1;
            if a > n - 1 {
                return Err(Error::InvalidGraph(format!(
                    "radius-{radius} ball does not fit in a cycle of length {n} with a sink"
                )));
            }
            a
        }
    };
    let adjacency: Vec<Vec<VertexId>> = (0..n)
        .map(|p| {
            vec![
                ((p + 1) % n) as VertexId,
                ((p + n - 1) % n) as VertexId,
            ]
        })
        .collect();
    let mut active = vec![false; n];
    let lo = -((arc_len as i64 - 1) / 2);
    let hi = arc_len as i64 / 2;
    for k in lo..=hi {
        let p = k.rem_euclid(n as i64) as usize;
        active[p] = true;
    }
    Ok((adjacency, active, 2))
}

fn build_torus(side: usize) -> Result<(Vec<Vec<VertexId>>, Vec<bool>, u32)> {
    if side < 3 {
        return Err(Error::InvalidGraph(format!(
            "torus side must be at least 3, got {side}"
        )));
    }
    let n = side * side;
    let id = |r: usize, c: usize| (r * side + c) as VertexId;
    let adjacency = (0..n)
        .map(|v| {
            let (r, c) = (v / side, v % side);
            vec![
                id((r + side - 1) % side, c),
                id((r + 1) % side, c),
                id(r, (c + side - 1) % side),
                id(r, (c + 1) % side),
            ]
        })
        .collect();
    Ok((adjacency, vec![true; n], 4))
}

/// Lattice points of l1 norm at most `radius + 1`, sorted by (norm, coords).
/// The sort key does not depend on the truncation radius, so a vertex keeps
/// its id across builds of different radii; monotonicity checks rely on this.
fn build_lattice(dim: usize, radius: usize) -> Result<(Vec<Vec<VertexId>>, Vec<bool>, u32)> {
    if dim == 0 {
        return Err(Error::InvalidGraph("lattice dimension must be positive".into()));
    }
    if radius == 0 {
        return Err(Error::InvalidGraph(
            "lattice truncation radius must be at least 1".into(),
        ));
    }
    let outer = (radius + 1) as i64;
    let mut points: Vec<Vec<i64>> = Vec::new();
    let mut current = vec![0i64; dim];
    enumerate_l1_ball(dim, outer, 0, outer, &mut current, &mut points);
    points.sort_by_key(|p| (p.iter().map(|c| c.abs()).sum::<i64>(), p.clone()));
    let index: HashMap<&[i64], VertexId> = points
        .iter()
        .enumerate()
        .map(|(i, p)| (p.as_slice(), i as VertexId))
        .collect();
    let mut adjacency = Vec::with_capacity(points.len());
    let mut active = Vec::with_capacity(points.len());
    for p in &points {
        let norm: i64 = p.iter().map(|c| c.abs()).sum();
        active.push(norm <= radius as i64);
        let mut nbrs = Vec::with_capacity(2 * dim);
        for axis in 0..dim {
            for delta in [1i64, -1] {
                let mut q = p.clone();
                q[axis] += delta;
                if let Some(&id) = index.get(q.as_slice()) {
                    nbrs.push(id);
                }
            }
        }
        adjacency.push(nbrs);
    }
    Ok((adjacency, active, 2 * dim as u32))
}

fn enumerate_l1_ball(
    dim: usize,
    bound: i64,
    axis: usize,
    remaining: i64,
    current: &mut Vec<i64>,
    out: &mut Vec<Vec<i64>>,
) {
    if axis == dim {
        out.push(current.clone());
        return;
    }
    let _ = bound;
    for c in -remaining..=remaining {
        current[axis] = c;
        enumerate_l1_ball(dim, bound, axis + 1, remaining - c.abs(), current, out);
    }
    current[axis] = 0;
}

/// Breadth-first ids from the root; generation `radius + 1` is the sink.
/// The root has `degree` children, every other internal vertex `degree - 1`.
fn build_tree(degree: usize, radius: usize) -> Result<(Vec<Vec<VertexId>>, Vec<bool>, u32)> {
    if degree < 2 {
        return Err(Error::InvalidGraph(format!(
            "tree degree must be at least 2, got {degree}"
        )));
    }
    if radius == 0 {
        return Err(Error::InvalidGraph(
            "tree truncation depth must be at least 1".into(),
        ));
    }
    let mut adjacency: Vec<Vec<VertexId>> = vec![Vec::new()];
    let mut active = vec![true];
    let mut generation: Vec<VertexId> = vec![0];
    for depth in 1..=radius + 1 {
        let mut next = Vec::new();
        for &parent in &generation {
            let children = if parent == 0 { degree } else { degree - 1 };
            for _ in 0..children {
                let child = adjacency.len() as VertexId;
                adjacency.push(vec![parent]);
                adjacency[parent as usize].push(child);
                active.push(depth <= radius);
                next.push(child);
            }
        }
        generation = next;
    }
    Ok((adjacency, active, degree as u32))
}

/// Families usable in Green's-function scans over a range of radii; the
/// cycle picks the smallest length that fits the ball plus its sink layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanFamily {
    Cycle,
    LatticeBox { dim: usize },
    RegularTreeBall { degree: usize },
}

impl ScanFamily {
    pub fn spec_for_radius(&self, l: usize) -> FamilySpec {
        match *self {
            ScanFamily::Cycle => FamilySpec::Cycle { n: 2 * l + 3, arc: None },
            ScanFamily::LatticeBox { dim } => FamilySpec::LatticeBox { dim },
            ScanFamily::RegularTreeBall { degree } => FamilySpec::RegularTreeBall { degree },
        }
    }

    pub fn degree(&self) -> u32 {
        match *self {
            ScanFamily::Cycle => 2,
            ScanFamily::LatticeBox { dim } => 2 * dim as u32,
            ScanFamily::RegularTreeBall { degree } => degree as u32,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent distance oracle: plain BFS over an explicit edge list.
    fn oracle_distances(n: usize, edges: &[(VertexId, VertexId)], from: VertexId) -> Vec<u32> {
        let mut adj = vec![Vec::new(); n];
        for &(u, v) in edges {
            adj[u as usize].push(v);
            adj[v as usize].push(u);
        }
        bfs_distances(&adj, std::iter::once(from))
    }

    #[test]
    fn cycle_arc_structure() {
        let g = Graph::build(&FamilySpec::Cycle { n: 8, arc: Some(6) }, 0).unwrap();
        assert_eq!(g.vertex_count(), 8);
        assert_eq!(g.degree(), 2);
        assert_eq!(g.active_vertices().len(), 6);
        assert_eq!(g.sink_vertices().count(), 2);
        assert!(g.is_active(ORIGIN));
        // offsets -2..=3 around the origin
        let expected: Vec<VertexId> = vec![0, 1, 2, 3, 6, 7];
        assert_eq!(g.active_vertices(), expected.as_slice());
    }

    #[test]
    fn cycle_ball_active_set() {
        let g = Graph::build(&FamilySpec::Cycle { n: 20, arc: None }, 5).unwrap();
        assert_eq!(g.active_vertices().len(), 11);
        assert!(g.has_sink());
        assert_eq!(g.sink_vertices().count(), 9);
    }

    #[test]
    fn torus_structure() {
        let g = Graph::build(&FamilySpec::Torus2d { side: 4 }, 0).unwrap();
        assert_eq!(g.vertex_count(), 16);
        assert_eq!(g.degree(), 4);
        assert!(!g.has_sink());
    }

    #[test]
    fn lattice_ball_sizes() {
        // |{x in Z^2 : |x|_1 <= 3}| enumerated independently.
        let mut count = 0;
        for x in -3i64..=3 {
            for y in -3i64..=3 {
                if x.abs() + y.abs() <= 3 {
                    count += 1;
                }
            }
        }
        assert_eq!(count, 25);
        let g = Graph::build(&FamilySpec::LatticeBox { dim: 2 }, 3).unwrap();
        assert_eq!(g.active_vertices().len(), 25);
        assert_eq!(g.degree(), 4);
        assert_eq!(g.sink_vertices().count(), 16); // the radius-4 shell
    }

    #[test]
    fn tree_structure() {
        let g = Graph::build(&FamilySpec::RegularTreeBall { degree: 3 }, 2).unwrap();
        // generations: 1 + 3 + 6 active, 12 sinks
        assert_eq!(g.active_vertices().len(), 10);
        assert_eq!(g.sink_vertices().count(), 12);
        assert_eq!(g.degree(), 3);
    }

    #[test]
    fn degenerate_params_rejected() {
        assert!(Graph::build(&FamilySpec::Cycle { n: 2, arc: None }, 0).is_err());
        assert!(Graph::build(&FamilySpec::Cycle { n: 8, arc: Some(8) }, 0).is_err());
        assert!(Graph::build(&FamilySpec::Cycle { n: 8, arc: None }, 4).is_err());
        assert!(Graph::build(&FamilySpec::Torus2d { side: 2 }, 0).is_err());
        assert!(Graph::build(&FamilySpec::LatticeBox { dim: 0 }, 3).is_err());
        assert!(Graph::build(&FamilySpec::LatticeBox { dim: 2 }, 0).is_err());
        assert!(Graph::build(&FamilySpec::RegularTreeBall { degree: 1 }, 2).is_err());
    }

    #[test]
    fn ball_on_cycle() {
        let g = Graph::build(&FamilySpec::Cycle { n: 8, arc: Some(6) }, 0).unwrap();
        let b = g.ball(BallSpec { center: ORIGIN, radius: 1 }).unwrap();
        assert_eq!(b, vec![0, 1, 7]);
        let b0 = g.ball(BallSpec { center: 3, radius: 0 }).unwrap();
        assert_eq!(b0, vec![3]);
        assert!(g.ball(BallSpec { center: 99, radius: 1 }).is_err());
    }

    #[test]
    fn ball_on_torus_matches_oracle() {
        let g = Graph::build(&FamilySpec::Torus2d { side: 4 }, 0).unwrap();
        let mut edges = Vec::new();
        for v in 0..16u32 {
            for &u in g.neighbors(v) {
                if v < u {
                    edges.push((v, u));
                }
            }
        }
        let d = oracle_distances(16, &edges, ORIGIN);
        let expected: Vec<VertexId> = (0..16).filter(|&v| d[v as usize] <= 2).collect();
        assert_eq!(expected.len(), 11);
        let b = g.ball(BallSpec { center: ORIGIN, radius: 2 }).unwrap();
        assert_eq!(b, expected);
    }

    #[test]
    fn ball_monotone_in_radius() {
        let g = Graph::build(&FamilySpec::LatticeBox { dim: 2 }, 4).unwrap();
        for r in 0..4u32 {
            let small = g.ball(BallSpec { center: ORIGIN, radius: r }).unwrap();
            let big = g.ball(BallSpec { center: ORIGIN, radius: r + 1 }).unwrap();
            assert!(small.iter().all(|v| big.contains(v)));
        }
    }

    #[test]
    fn annulus_on_cycle() {
        let g = Graph::build(&FamilySpec::Cycle { n: 20, arc: None }, 5).unwrap();
        // Boundary vertices sit at positions +-6; their radius-1 balls reach
        // positions +-5 and +-7.
        let a = g.annulus(5, 1).unwrap();
        assert_eq!(a, vec![5, 6, 7, 13, 14, 15]);
        let a0 = g.annulus(5, 0).unwrap();
        assert_eq!(a0, vec![6, 14]);
    }

    #[test]
    fn annulus_inclusion_on_lattice() {
        // B_{L-D} is contained in B_L minus the annulus.
        let g = Graph::build(&FamilySpec::LatticeBox { dim: 2 }, 4).unwrap();
        let a = g.annulus(4, 2).unwrap();
        let b2 = g.ball(BallSpec { center: ORIGIN, radius: 2 }).unwrap();
        let b4 = g.ball(BallSpec { center: ORIGIN, radius: 4 }).unwrap();
        for v in &b2 {
            assert!(b4.contains(v));
            assert!(!a.contains(v), "vertex {v} of B_2 lies in the annulus");
        }
    }

    #[test]
    fn distances_symmetric_on_active() {
        for spec in [
            FamilySpec::Cycle { n: 11, arc: None },
            FamilySpec::LatticeBox { dim: 2 },
            FamilySpec::RegularTreeBall { degree: 3 },
        ] {
            let g = Graph::build(&spec, 3).unwrap();
            let vs = g.active_vertices();
            for &x in vs.iter().step_by(3) {
                for &y in vs.iter().step_by(2) {
                    assert_eq!(g.distance(x, y).unwrap(), g.distance(y, x).unwrap());
                }
            }
        }
    }

    #[test]
    fn lattice_ids_stable_across_radii() {
        let small = Graph::build(&FamilySpec::LatticeBox { dim: 2 }, 3).unwrap();
        let big = Graph::build(&FamilySpec::LatticeBox { dim: 2 }, 5).unwrap();
        for &v in small.active_vertices() {
            assert!(big.is_active(v));
            assert_eq!(small.neighbors(v), big.neighbors(v));
        }
    }

    #[test]
    fn tree_ids_stable_across_radii() {
        let small = Graph::build(&FamilySpec::RegularTreeBall { degree: 3 }, 2).unwrap();
        let big = Graph::build(&FamilySpec::RegularTreeBall { degree: 3 }, 4).unwrap();
        for &v in small.active_vertices() {
            assert!(big.is_active(v));
            assert_eq!(small.neighbors(v), big.neighbors(v));
        }
    }

    #[test]
    fn edge_list_export() {
        let g = Graph::build(&FamilySpec::Cycle { n: 4, arc: Some(2) }, 0).unwrap();
        let mut buf = Vec::new();
        g.write_edge_list(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines, vec!["0 1", "0 3", "1 2", "2 3"]);
    }
}
