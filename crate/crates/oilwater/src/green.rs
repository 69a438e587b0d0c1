//! Killed-walk Green's functions and discrete Dirichlet solves.
//!
//! `G_K(x, y)` is the expected number of visits to `y` (counting time 0) of a
//! simple random walk started at `x` and killed upon exiting `K`. Two
//! independent computations are provided: a direct linear solve against the
//! killed transition kernel, and the composition of hitting probabilities
//! with the diagonal via return probabilities. Dense direct solves are used
//! up to 4096 vertices and conjugate gradients (residual 1e-12) beyond, so
//! agreement claims at 1e-10 stay assertable.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, ScanFamily, VertexId};
use crate::rng::{index64, KeyedStreams, Purpose};

const DENSE_LIMIT: usize = 4096;
const CG_TOLERANCE: f64 = 1e-12;

/// Inequality margins below this are treated as noise rather than a strict
/// inequality.
pub const SCAN_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    DirectSolve,
    HittingProb,
}

/// Exact table of `G_K(x, y)` over a killed set `K`.
#[derive(Debug, Clone)]
pub struct GreenTable {
    vertices: Vec<VertexId>,
    index_of: Vec<Option<u32>>,
    matrix: DMatrix<f64>,
    method: SolveMethod,
}

impl GreenTable {
    pub fn vertices(&self) -> &[VertexId] {
        &self.vertices
    }

    pub fn method(&self) -> SolveMethod {
        self.method
    }

    /// `G_K(x, y)`; zero when either vertex lies outside `K` (a walk started
    /// outside `K` is killed immediately).
    pub fn entry(&self, x: VertexId, y: VertexId) -> f64 {
        match (self.row_of(x), self.row_of(y)) {
            (Some(i), Some(j)) => self.matrix[(i, j)],
            _ => 0.0,
        }
    }

    /// Column `G_K(., y)` aligned with [`GreenTable::vertices`].
    pub fn column(&self, y: VertexId) -> Option<Vec<f64>> {
        let j = self.row_of(y)?;
        Some((0..self.vertices.len()).map(|i| self.matrix[(i, j)]).collect())
    }

    fn row_of(&self, v: VertexId) -> Option<usize> {
        self.index_of
            .get(v as usize)
            .copied()
            .flatten()
            .map(|i| i as usize)
    }
}

fn checked_killed_set(g: &Graph, k: &[VertexId]) -> Result<Vec<VertexId>> {
    if k.is_empty() {
        return Err(Error::InvalidArgument("killed set is empty".into()));
    }
    let mut sorted = k.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != k.len() {
        return Err(Error::InvalidArgument("killed set contains duplicates".into()));
    }
    for &v in &sorted {
        if !g.is_vertex(v) {
            return Err(Error::UnknownVertex(v));
        }
        if !g.is_active(v) {
            return Err(Error::InvalidArgument(format!(
                "vertex {v} of the killed set is a sink"
            )));
        }
    }
    if sorted.len() == g.vertex_count() {
        return Err(Error::NoBoundaryExit);
    }
    Ok(sorted)
}

fn index_map(g: &Graph, k: &[VertexId]) -> Vec<Option<u32>> {
    let mut index_of = vec![None; g.vertex_count()];
    for (i, &v) in k.iter().enumerate() {
        index_of[v as usize] = Some(i as u32);
    }
    index_of
}

/// `I - Q` with `Q` the transition kernel restricted to `k`.
fn killed_system(g: &Graph, k: &[VertexId], index_of: &[Option<u32>]) -> DMatrix<f64> {
    let n = k.len();
    let step = 1.0 / g.degree() as f64;
    let mut m = DMatrix::identity(n, n);
    for (i, &v) in k.iter().enumerate() {
        for &u in g.neighbors(v) {
            if let Some(j) = index_of[u as usize] {
                m[(i, j as usize)] -= step;
            }
        }
    }
    m
}

/// Expected-visit table via `(I - Q) G = I` or via hitting probabilities and
/// return probabilities, per `method`.
pub fn green_table(g: &Graph, k: &[VertexId], method: SolveMethod) -> Result<GreenTable> {
    let k = checked_killed_set(g, k)?;
    let index_of = index_map(g, &k);
    let matrix = match method {
        SolveMethod::DirectSolve => {
            let system = killed_system(g, &k, &index_of);
            system
                .lu()
                .try_inverse()
                .ok_or(Error::NoBoundaryExit)?
        }
        SolveMethod::HittingProb => hitting_prob_table(g, &k, &index_of)?,
    };
    Ok(GreenTable {
        vertices: k,
        index_of,
        matrix,
        method,
    })
}

/// Independent route: for each target `y`, solve the Dirichlet problem for
/// `h(x) = P_x(hit y before exiting K)`, then scale the column by
/// `G(y, y) = 1 / (1 - return probability)`.
fn hitting_prob_table(g: &Graph, k: &[VertexId], index_of: &[Option<u32>]) -> Result<DMatrix<f64>> {
    let n = k.len();
    let step = 1.0 / g.degree() as f64;
    let mut out = DMatrix::zeros(n, n);
    for (target_row, &y) in k.iter().enumerate() {
        // System over K \ {y}; the right-hand side collects steps into y.
        let sub: Vec<VertexId> = k.iter().copied().filter(|&v| v != y).collect();
        let sub_index = index_map(g, &sub);
        let hit = if sub.is_empty() {
            DVector::zeros(0)
        } else {
            let system = killed_system(g, &sub, &sub_index);
            let mut rhs = DVector::zeros(n - 1);
            for (i, &v) in sub.iter().enumerate() {
                let into_target = g.neighbors(v).iter().filter(|&&u| u == y).count();
                rhs[i] = into_target as f64 * step;
            }
            system.lu().solve(&rhs).ok_or(Error::NoBoundaryExit)?
        };
        let return_prob: f64 = g
            .neighbors(y)
            .iter()
            .map(|&u| {
                sub_index[u as usize]
                    .map(|i| hit[i as usize] * step)
                    .unwrap_or(0.0)
            })
            .sum();
        if return_prob >= 1.0 {
            return Err(Error::NoBoundaryExit);
        }
        let diagonal = 1.0 / (1.0 - return_prob);
        out[(target_row, target_row)] = diagonal;
        for (i, &v) in sub.iter().enumerate() {
            let row = index_of[v as usize].unwrap() as usize;
            out[(row, target_row)] = hit[i] * diagonal;
        }
    }
    Ok(out)
}

/// One column `G_K(., y)` aligned with the sorted killed set; dense solve for
/// small sets and matrix-free conjugate gradients beyond.
pub fn green_column(g: &Graph, k: &[VertexId], y: VertexId) -> Result<Vec<f64>> {
    let k = checked_killed_set(g, k)?;
    let index_of = index_map(g, &k);
    green_column_inner(g, &k, &index_of, y)
}

fn green_column_inner(
    g: &Graph,
    k: &[VertexId],
    index_of: &[Option<u32>],
    y: VertexId,
) -> Result<Vec<f64>> {
    let row = index_of
        .get(y as usize)
        .copied()
        .flatten()
        .ok_or(Error::InvalidArgument(format!("target {y} not in the killed set")))?
        as usize;
    let n = k.len();
    let mut rhs = vec![0.0; n];
    rhs[row] = 1.0;
    if n <= DENSE_LIMIT {
        let system = killed_system(g, k, index_of);
        let sol = system
            .lu()
            .solve(&DVector::from_vec(rhs))
            .ok_or(Error::NoBoundaryExit)?;
        Ok(sol.iter().copied().collect())
    } else {
        conjugate_gradient(g, k, index_of, &rhs)
    }
}

/// Matrix-free CG on the symmetric positive definite operator `I - Q`.
fn conjugate_gradient(
    g: &Graph,
    k: &[VertexId],
    index_of: &[Option<u32>],
    rhs: &[f64],
) -> Result<Vec<f64>> {
    let n = k.len();
    let step = 1.0 / g.degree() as f64;
    let apply = |v: &[f64], out: &mut [f64]| {
        for (i, &x) in k.iter().enumerate() {
            let mut acc = v[i];
            for &u in g.neighbors(x) {
                if let Some(j) = index_of[u as usize] {
                    acc -= step * v[j as usize];
                }
            }
            out[i] = acc;
        }
    };
    let mut x = vec![0.0; n];
    let mut r = rhs.to_vec();
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rr: f64 = r.iter().map(|v| v * v).sum();
    let target = CG_TOLERANCE * CG_TOLERANCE;
    let max_iter = 20 * n + 100;
    for _ in 0..max_iter {
        if rr <= target {
            return Ok(x);
        }
        apply(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if pap <= 0.0 {
            return Err(Error::Solve("killed operator is not positive definite".into()));
        }
        let alpha = rr / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new: f64 = r.iter().map(|v| v * v).sum();
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    Err(Error::Solve(format!(
        "conjugate gradients failed to reach residual {CG_TOLERANCE} in {max_iter} iterations"
    )))
}

/// The Dirichlet solution with value 1 at the target, 0 outside `K`, and zero
/// Laplacian on the rest of `K`.
#[derive(Debug, Clone)]
pub struct HarmonicSolution {
    pub target: VertexId,
    pub vertices: Vec<VertexId>,
    /// Full-graph vector; zero off `K`, one at the target.
    pub values: Vec<f64>,
    pub laplacian_at_target: f64,
}

impl HarmonicSolution {
    pub fn value(&self, v: VertexId) -> f64 {
        self.values[v as usize]
    }

    pub fn laplacian_at(&self, g: &Graph, x: VertexId) -> f64 {
        let gx = self.values[x as usize];
        let sum: f64 = g.neighbors(x).iter().map(|&u| self.values[u as usize] - gx).sum();
        sum / g.degree() as f64
    }
}

const HARMONIC_TOLERANCE: f64 = 1e-10;

/// Solve the Dirichlet problem for hitting `y` before exiting `k`, and
/// validate the classical identities: residual harmonicity, probability
/// range, and `G_K(y, y) * (-laplacian at y) = 1` against an independent
/// direct solve.
pub fn harmonic_solve(g: &Graph, k: &[VertexId], y: VertexId) -> Result<HarmonicSolution> {
    let k = checked_killed_set(g, k)?;
    let index_of = index_map(g, &k);
    if index_of.get(y as usize).copied().flatten().is_none() {
        return Err(Error::InvalidArgument(format!("target {y} not in the killed set")));
    }
    let step = 1.0 / g.degree() as f64;
    let sub: Vec<VertexId> = k.iter().copied().filter(|&v| v != y).collect();
    let sub_index = index_map(g, &sub);
    let mut values = vec![0.0; g.vertex_count()];
    values[y as usize] = 1.0;
    if !sub.is_empty() {
        let system = killed_system(g, &sub, &sub_index);
        let mut rhs = DVector::zeros(sub.len());
        for (i, &v) in sub.iter().enumerate() {
            let into_target = g.neighbors(v).iter().filter(|&&u| u == y).count();
            rhs[i] = into_target as f64 * step;
        }
        let hit = system.lu().solve(&rhs).ok_or(Error::NoBoundaryExit)?;
        for (i, &v) in sub.iter().enumerate() {
            values[v as usize] = hit[i];
        }
    }
    let solution = HarmonicSolution {
        target: y,
        vertices: k.clone(),
        values,
        laplacian_at_target: 0.0,
    };
    let laplacian_at_target = solution.laplacian_at(g, y);
    let solution = HarmonicSolution {
        laplacian_at_target,
        ..solution
    };

    for &v in &sub {
        let residual = solution.laplacian_at(g, v).abs();
        if residual > HARMONIC_TOLERANCE {
            return Err(Error::Solve(format!(
                "harmonic residual {residual} at vertex {v} exceeds {HARMONIC_TOLERANCE}"
            )));
        }
    }
    for &v in &k {
        let h = solution.values[v as usize];
        if !(-HARMONIC_TOLERANCE..=1.0 + HARMONIC_TOLERANCE).contains(&h) {
            return Err(Error::Solve(format!(
                "hitting probability {h} at vertex {v} outside [0, 1]"
            )));
        }
    }
    if laplacian_at_target > 1e-12 {
        return Err(Error::Solve(format!(
            "laplacian at the target must be non-positive, got {laplacian_at_target}"
        )));
    }
    // Cross-check against the independent direct route.
    let column = green_column_inner(g, &k, &index_of, y)?;
    let row = index_of[y as usize].unwrap() as usize;
    let product = column[row] * (-laplacian_at_target);
    if (product - 1.0).abs() > HARMONIC_TOLERANCE {
        return Err(Error::Solve(format!(
            "G(y,y) * (-laplacian) = {product}, expected 1"
        )));
    }
    Ok(solution)
}

/// Both sides of the boundary-sum identity: the summed Green column over `b`
/// equals `G_Q(o, o)` times (indicator of `o` in `b` plus the expected number
/// of visits to `b \ {o}` strictly after the start and no later than the
/// first return to `{o}` or exit from `q`).
#[derive(Debug, Clone, Serialize)]
pub struct LemmaGreenCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub difference: f64,
    pub green_origin: f64,
    pub range_expectation: f64,
}

pub fn verify_lemma_green(
    g: &Graph,
    q: &[VertexId],
    b: &[VertexId],
    o: VertexId,
) -> Result<LemmaGreenCheck> {
    let q = checked_killed_set(g, q)?;
    let q_index = index_map(g, &q);
    if q_index.get(o as usize).copied().flatten().is_none() {
        return Err(Error::InvalidArgument(format!("origin {o} not in Q")));
    }
    let mut b = b.to_vec();
    b.sort_unstable();
    b.dedup();
    for &v in &b {
        if !q.contains(&v) {
            return Err(Error::InvalidArgument(format!("B vertex {v} not contained in Q")));
        }
    }

    let column = green_column_inner(g, &q, &q_index, o)?;
    let lhs: f64 = b
        .iter()
        .map(|&v| column[q_index[v as usize].unwrap() as usize])
        .sum();
    let green_origin = column[q_index[o as usize].unwrap() as usize];

    // Taboo solve: kill on exiting Q \ {o}; u[z] = expected visits to B \ {o}.
    let taboo: Vec<VertexId> = q.iter().copied().filter(|&v| v != o).collect();
    let taboo_index = index_map(g, &taboo);
    let range_expectation = if taboo.is_empty() {
        0.0
    } else {
        let system = killed_system(g, &taboo, &taboo_index);
        let mut indicator = DVector::zeros(taboo.len());
        for (i, &v) in taboo.iter().enumerate() {
            if b.binary_search(&v).is_ok() {
                indicator[i] = 1.0;
            }
        }
        let visits = system.lu().solve(&indicator).ok_or(Error::NoBoundaryExit)?;
        let step = 1.0 / g.degree() as f64;
        g.neighbors(o)
            .iter()
            .map(|&z| {
                taboo_index[z as usize]
                    .map(|i| visits[i as usize] * step)
                    .unwrap_or(0.0)
            })
            .sum()
    };
    let indicator_origin = if b.binary_search(&o).is_ok() { 1.0 } else { 0.0 };
    let rhs = green_origin * (indicator_origin + range_expectation);
    Ok(LemmaGreenCheck {
        lhs,
        rhs,
        difference: (lhs - rhs).abs(),
        green_origin,
        range_expectation,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ScanRow {
    pub radius: usize,
    pub active_count: usize,
    /// Sum of the Green column at the origin over the whole ball.
    pub full_sum: f64,
    /// Same sum restricted to vertices whose radius-`d` ball stays inside.
    pub restricted_sum: f64,
    pub margin: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScanReport {
    pub family: ScanFamily,
    pub d: u32,
    pub degree: u32,
    /// `D (1 + degree^D)`: radii at least this large must satisfy the bound.
    pub bound_radius: usize,
    pub rows: Vec<ScanRow>,
    /// Smallest tested radius from which the inequality holds through the
    /// end of the tested range.
    pub first_holding: Option<usize>,
    /// The inequality holds at every tested radius >= `bound_radius`.
    pub holds_from_bound: bool,
}

/// The deep-interior bound `D (1 + degree^D)` on the radius.
pub fn interior_bound_radius(degree: u32, d: u32) -> usize {
    let power = (degree as u64).saturating_pow(d);
    (d as u64).saturating_mul(1 + power) as usize
}

/// For each radius, compare the summed Green column at the origin with ten
/// times its restriction to deep-interior vertices.
pub fn properties_green_scan(
    family: ScanFamily,
    d: u32,
    radii: std::ops::RangeInclusive<usize>,
) -> Result<ScanReport> {
    let mut rows = Vec::new();
    for radius in radii {
        let g = Graph::build(&family.spec_for_radius(radius), radius)?;
        rows.push(scan_row(&g, d, radius)?);
    }
    let bound_radius = interior_bound_radius(family.degree(), d);
    let first_holding = (0..rows.len())
        .find(|&i| rows[i..].iter().all(|r| r.holds))
        .map(|i| rows[i].radius);
    let holds_from_bound = rows
        .iter()
        .filter(|r| r.radius >= bound_radius)
        .all(|r| r.holds);
    Ok(ScanReport {
        family,
        d,
        degree: family.degree(),
        bound_radius,
        rows,
        first_holding,
        holds_from_bound,
    })
}

fn scan_row(g: &Graph, d: u32, radius: usize) -> Result<ScanRow> {
    let k = g.active_vertices().to_vec();
    let column = green_column(g, &k, crate::graph::ORIGIN)?;
    let full_sum: f64 = column.iter().sum();
    let restricted_sum: f64 = k
        .iter()
        .zip(&column)
        .filter(|(&v, _)| g.distance_to_sink(v) > d)
        .map(|(_, c)| c)
        .sum();
    let margin = 10.0 * restricted_sum - full_sum;
    Ok(ScanRow {
        radius,
        active_count: k.len(),
        full_sum,
        restricted_sum,
        margin,
        holds: margin > SCAN_TOLERANCE,
    })
}

/// `mu * (full sum - 10 * restricted sum)` at the origin for the graph's
/// active ball; negative once the deep interior dominates.
pub fn pair_bound(g: &Graph, d: u32, mu: f64) -> Result<f64> {
    let row = scan_row(g, d, g.radius())?;
    Ok(mu * (row.full_sum - 10.0 * row.restricted_sum))
}

/// Monte Carlo visit counts of the killed walk, for tying the analytic layer
/// to the simulation layer in tests.
pub fn empirical_green_row(
    g: &Graph,
    k: &[VertexId],
    from: VertexId,
    walks: u64,
    seed: u64,
) -> Result<(Vec<VertexId>, Vec<f64>, Vec<f64>)> {
    let k = checked_killed_set(g, k)?;
    let index_of = index_map(g, &k);
    if index_of.get(from as usize).copied().flatten().is_none() {
        return Err(Error::InvalidArgument(format!("start {from} not in the killed set")));
    }
    let streams = KeyedStreams::new(seed);
    let degree = g.degree();
    let mut sums = vec![0.0; k.len()];
    let mut squares = vec![0.0; k.len()];
    let mut visits = vec![0u64; k.len()];
    for walk in 0..walks {
        let mut rng = streams.sequence(Purpose::Walk, walk, 0);
        visits.iter_mut().for_each(|v| *v = 0);
        let mut at = from;
        while let Some(i) = index_of[at as usize] {
            visits[i as usize] += 1;
            use rand_chacha::rand_core::RngCore;
            let idx = index64(rng.next_u64(), degree);
            at = g.neighbors(at)[idx as usize];
        }
        for (i, &v) in visits.iter().enumerate() {
            sums[i] += v as f64;
            squares[i] += (v * v) as f64;
        }
    }
    let n = walks as f64;
    let means: Vec<f64> = sums.iter().map(|s| s / n).collect();
    let std_errors: Vec<f64> = squares
        .iter()
        .zip(&means)
        .map(|(sq, m)| ((sq / n - m * m).max(0.0) / (n - 1.0)).sqrt())
        .collect();
    Ok((k, means, std_errors))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{FamilySpec, ORIGIN};

    fn cycle_arc(n: usize, arc: usize) -> Graph {
        Graph::build(&FamilySpec::Cycle { n, arc: Some(arc) }, 0).unwrap()
    }

    #[test]
    fn singleton_table() {
        let g = cycle_arc(8, 1);
        let t = green_table(&g, &[ORIGIN], SolveMethod::DirectSolve).unwrap();
        assert!((t.entry(ORIGIN, ORIGIN) - 1.0).abs() < 1e-14);
        let t2 = green_table(&g, &[ORIGIN], SolveMethod::HittingProb).unwrap();
        assert!((t2.entry(ORIGIN, ORIGIN) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn two_arc_fixture() {
        // Oracle: invert I - Q with Q = [[0, 1/2], [1/2, 0]].
        let g = cycle_arc(8, 6);
        let t = green_table(&g, &[1, 2], SolveMethod::DirectSolve).unwrap();
        let expected = [[4.0 / 3.0, 2.0 / 3.0], [2.0 / 3.0, 4.0 / 3.0]];
        for (i, &x) in [1u32, 2].iter().enumerate() {
            for (j, &y) in [1u32, 2].iter().enumerate() {
                assert!((t.entry(x, y) - expected[i][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn direct_and_hitting_routes_agree() {
        let cases = [
            Graph::build(&FamilySpec::Cycle { n: 10, arc: Some(6) }, 0).unwrap(),
            Graph::build(&FamilySpec::LatticeBox { dim: 2 }, 2).unwrap(),
            Graph::build(&FamilySpec::RegularTreeBall { degree: 3 }, 2).unwrap(),
        ];
        for g in &cases {
            let k = g.active_vertices().to_vec();
            let a = green_table(g, &k, SolveMethod::DirectSolve).unwrap();
            let b = green_table(g, &k, SolveMethod::HittingProb).unwrap();
            for &x in &k {
                for &y in &k {
                    assert!(
                        (a.entry(x, y) - b.entry(x, y)).abs() <= 1e-10,
                        "routes disagree at ({x},{y})"
                    );
                    assert!(a.entry(x, y) >= 0.0);
                    assert!(
                        (a.entry(x, y) - a.entry(y, x)).abs() <= 1e-10,
                        "symmetry violated at ({x},{y})"
                    );
                }
                assert!(a.entry(x, x) >= 1.0);
            }
        }
    }

    #[test]
    fn full_active_set_on_torus_has_no_exit() {
        let g = Graph::build(&FamilySpec::Torus2d { side: 4 }, 0).unwrap();
        let k = g.active_vertices().to_vec();
        assert!(matches!(
            green_table(&g, &k, SolveMethod::DirectSolve),
            Err(Error::NoBoundaryExit)
        ));
    }

    #[test]
    fn harmonic_singleton() {
        let g = cycle_arc(8, 6);
        let h = harmonic_solve(&g, &[ORIGIN], ORIGIN).unwrap();
        assert!((h.value(ORIGIN) - 1.0).abs() < 1e-14);
        assert!((h.laplacian_at_target + 1.0).abs() < 1e-14);
    }

    #[test]
    fn harmonic_two_arc_oracle() {
        // K = {1, 2}, target 1: the only interior value solves a 1x1 system,
        // g_2 = 1/2, and the target Laplacian is -3/4.
        let g = cycle_arc(8, 6);
        let h = harmonic_solve(&g, &[1, 2], 1).unwrap();
        assert!((h.value(2) - 0.5).abs() < 1e-12);
        assert!((h.laplacian_at_target + 0.75).abs() < 1e-12);
    }

    #[test]
    fn hitting_probability_monotone_toward_target() {
        let g = Graph::build(&FamilySpec::Cycle { n: 20, arc: None }, 4).unwrap();
        let k = g.active_vertices().to_vec();
        let h = harmonic_solve(&g, &k, ORIGIN).unwrap();
        // Along the arc 0..=4, the hitting probability decays with distance.
        for p in 1..=3u32 {
            assert!(h.value(p) > h.value(p + 1));
        }
        for (&a, &b) in [h.value(1), h.value(2)].iter().zip(&[h.value(19), h.value(18)]) {
            assert!((a - b).abs() < 1e-12, "symmetric arc values differ");
        }
    }

    #[test]
    fn lemma_green_identity_cases() {
        let g = Graph::build(&FamilySpec::Cycle { n: 10, arc: Some(6) }, 0).unwrap();
        let q = g.active_vertices().to_vec();
        // B = {o} reduces to the trivial identity.
        let c = verify_lemma_green(&g, &q, &[ORIGIN], ORIGIN).unwrap();
        assert!((c.rhs - c.green_origin).abs() < 1e-14);
        assert!(c.difference <= 1e-10);
        // B = Q.
        let c = verify_lemma_green(&g, &q, &q, ORIGIN).unwrap();
        assert!(c.difference <= 1e-10, "difference {}", c.difference);
        // B = the active shell adjacent to the boundary.
        let shell: Vec<VertexId> = q
            .iter()
            .copied()
            .filter(|&v| g.distance_to_sink(v) == 1)
            .collect();
        let c = verify_lemma_green(&g, &q, &shell, ORIGIN).unwrap();
        assert!(c.difference <= 1e-10, "difference {}", c.difference);
    }

    #[test]
    fn lemma_green_rejects_bad_sets() {
        let g = Graph::build(&FamilySpec::Cycle { n: 10, arc: Some(6) }, 0).unwrap();
        let q = g.active_vertices().to_vec();
        assert!(verify_lemma_green(&g, &q, &[4], ORIGIN).is_err()); // 4 is a sink
        assert!(verify_lemma_green(&g, &q[1..].to_vec(), &[], ORIGIN).is_err()); // o not in Q
    }

    #[test]
    fn cycle_full_sum_matches_exit_time() {
        // Gambler's-ruin oracle: from the center of an arc of 2L+1 with
        // absorbing ends, the expected exit time is (L+1)^2, and the summed
        // Green column equals it.
        for l in [3usize, 8, 20] {
            let g = Graph::build(&FamilySpec::Cycle { n: 2 * l + 3, arc: None }, l).unwrap();
            let k = g.active_vertices().to_vec();
            let column = green_column(&g, &k, ORIGIN).unwrap();
            let total: f64 = column.iter().sum();
            let expected = ((l + 1) * (l + 1)) as f64;
            assert!(
                (total - expected).abs() < 1e-8,
                "exit time {total} vs {expected}"
            );
        }
    }

    #[test]
    fn scan_cycle_small_range() {
        let report = properties_green_scan(ScanFamily::Cycle, 1, 3..=12).unwrap();
        assert_eq!(report.bound_radius, 3);
        assert!(report.rows.iter().all(|r| r.holds));
        assert!(report.holds_from_bound);
        assert_eq!(report.first_holding, Some(3));
    }

    #[test]
    fn scan_with_zero_interior_margin() {
        // d = 0: every active vertex keeps its ball inside, so the restricted
        // sum equals the full sum and the inequality is trivially strict.
        let report = properties_green_scan(ScanFamily::Cycle, 0, 3..=5).unwrap();
        for row in &report.rows {
            assert!((row.full_sum - row.restricted_sum).abs() < 1e-12);
            assert!(row.holds);
        }
    }

    #[test]
    fn pair_bound_signs() {
        let g = Graph::build(&FamilySpec::Cycle { n: 23, arc: None }, 10).unwrap();
        assert_eq!(pair_bound(&g, 1, 0.0).unwrap(), 0.0);
        assert!(pair_bound(&g, 1, 1.0).unwrap() < 0.0);
        // More negative as the ball grows.
        let mut previous = 0.0;
        for l in [4usize, 8, 16] {
            let g = Graph::build(&FamilySpec::Cycle { n: 2 * l + 3, arc: None }, l).unwrap();
            let value = pair_bound(&g, 1, 1.0).unwrap();
            assert!(value < previous, "bound {value} at radius {l}");
            previous = value;
        }
    }

    #[test]
    fn conjugate_gradient_matches_dense() {
        let g = Graph::build(&FamilySpec::LatticeBox { dim: 2 }, 6).unwrap();
        let k = g.active_vertices().to_vec();
        let index_of = index_map(&g, &k);
        let dense = green_column_inner(&g, &k, &index_of, ORIGIN).unwrap();
        let mut rhs = vec![0.0; k.len()];
        rhs[index_of[ORIGIN as usize].unwrap() as usize] = 1.0;
        let cg = conjugate_gradient(&g, &k, &index_of, &rhs).unwrap();
        for (a, b) in dense.iter().zip(&cg) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn monte_carlo_visits_match_table() {
        let g = cycle_arc(8, 6);
        let k = g.active_vertices().to_vec();
        let table = green_table(&g, &k, SolveMethod::DirectSolve).unwrap();
        let (vertices, means, std_errors) =
            empirical_green_row(&g, &k, ORIGIN, 100_000, 77).unwrap();
        for ((v, mean), se) in vertices.iter().zip(&means).zip(&std_errors) {
            let exact = table.entry(ORIGIN, *v);
            assert!(
                (mean - exact).abs() <= 3.0 * se.max(1e-9),
                "vertex {v}: empirical {mean} vs exact {exact} (se {se})"
            );
        }
    }
}
