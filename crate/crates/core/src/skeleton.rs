//! Skeletons, cubical covers and canonical codes.
//!
//! A cover of side `ell` is aligned to the origin: cube `i` is
//! `prod_j [i_j ell, (i_j + 1) ell]`. Faces are numbered `2j` for the lower
//! face along axis `j` and `2j + 1` for the upper one. Distinguished points are
//! exact cube centres and face centres.

use crate::io::inf_as_null;
use crate::isotopy::{IsotopyTrace, Terminal};
use crate::surgery::{CutOutcome, ManifoldClass, SurgeryHistory};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SkeletonError {
    #[error("trace has no terminal models or the history is unfinished")]
    IncompleteTrace,
    #[error("cover parameters are degenerate: {0}")]
    DegenerateParams(String),
    #[error("skeleton clearance {floor} is below the required {required}")]
    TubeTooThin { floor: f64, required: f64 },
    #[error("two strands leave cube {cube:?} through the same face")]
    SameFaceCollision { cube: Vec<i64> },
    #[error("skeleton point {point:?} lies outside the covered ball")]
    OutsideBall { point: Vec<f64> },
    #[error("skeleton lives in dimension {found}, cover in dimension {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("codes were built on different covers")]
    CoverMismatch,
    #[error("{0} face assignments exceed the enumeration guard")]
    TooLarge(f64),
}

pub type Result<T> = std::result::Result<T, SkeletonError>;

/// Enumeration refuses sub-grids with more face assignments than this.
pub const ENUMERATION_GUARD: f64 = 1e7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Skeleton {
    pub nodes: Vec<Vec<f64>>,
    pub arcs: Vec<Vec<Vec<f64>>>,
    pub loops: Vec<Vec<Vec<f64>>>,
    /// Clear tubular radius around the skeleton; infinite for a lone point.
    #[serde(with = "inf_as_null")]
    pub tube_radius_floor: f64,
}

impl Skeleton {
    pub fn point(p: Vec<f64>) -> Self {
        Skeleton { nodes: vec![p], arcs: Vec::new(), loops: Vec::new(), tube_radius_floor: f64::INFINITY }
    }

    fn components(&self) -> Vec<Vec<&Vec<f64>>> {
        let mut out: Vec<Vec<&Vec<f64>>> = Vec::new();
        for l in &self.loops {
            out.push(l.iter().collect());
        }
        for a in &self.arcs {
            out.push(a.iter().collect());
        }
        for n in &self.nodes {
            if !self.arcs.iter().any(|a| a.first() == Some(n) || a.last() == Some(n)) {
                out.push(vec![n]);
            }
        }
        out
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Assemble the skeleton reached at the end of a monotone trace.
///
/// Round spheres contribute their centres, thick knots their cores. The
/// clearance is the smallest core radius, capped by half the gap between
/// distinct components.
pub fn extract_skeleton(history: &SurgeryHistory, trace: &IsotopyTrace) -> Result<Skeleton> {
    if trace.terminals.is_empty() || !history.final_components.is_empty() {
        return Err(SkeletonError::IncompleteTrace);
    }
    let ambient = history.dim + 1;
    let mut sk = Skeleton { nodes: Vec::new(), arcs: Vec::new(), loops: Vec::new(), tube_radius_floor: f64::INFINITY };
    for t in &trace.terminals {
        match t {
            Terminal::RoundSphere { center, .. } => {
                let mut p = vec![0.0; ambient];
                p[0] = *center;
                sk.nodes.push(p);
            }
            Terminal::ThickKnot { core, .. } => {
                let m = core.len() as f64;
                let centroid: Vec<f64> =
                    (0..ambient).map(|j| core.iter().map(|p| p[j]).sum::<f64>() / m).collect();
                let reach = core.iter().map(|p| dist(p, &centroid)).fold(f64::INFINITY, f64::min);
                sk.tube_radius_floor = sk.tube_radius_floor.min(reach);
                sk.loops.push(core.clone());
            }
            Terminal::ThickSkeleton { nodes, edges, .. } => {
                for &(a, b) in edges {
                    sk.arcs.push(vec![nodes[a].clone(), nodes[b].clone()]);
                }
                sk.nodes.extend(nodes.iter().cloned());
            }
        }
    }
    let comps = sk.components();
    let mut floor = sk.tube_radius_floor;
    for (i, a) in comps.iter().enumerate() {
        for b in &comps[i + 1..] {
            for p in a {
                for q in b {
                    floor = floor.min(0.5 * dist(p, q));
                }
            }
        }
    }
    sk.tube_radius_floor = floor;
    Ok(sk)
}

/// Clearance derived from the non-collapsing constant and the curvature bound.
pub fn delta(c: f64, alpha: f64) -> f64 {
    alpha / (2.0 * c)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CubicalCover {
    pub n: usize,
    /// Diameter of the covered ball.
    pub d: f64,
    pub c: f64,
    pub alpha: f64,
    pub ell: f64,
    pub cube_count: u64,
}

fn lower_sq(k: i64, ell: f64) -> f64 {
    let v = if k >= 0 { k as f64 * ell } else { (k + 1) as f64 * ell };
    v * v
}

fn count_cubes(axes_left: usize, rem: f64, ell: f64, kmax: i64) -> u64 {
    if rem < 0.0 {
        return 0;
    }
    if axes_left == 1 {
        let m = (rem.sqrt() / ell).floor() as u64 + 1;
        return 2 * m.min(kmax as u64 + 1);
    }
    (-kmax - 1..=kmax).map(|k| count_cubes(axes_left - 1, rem - lower_sq(k, ell), ell, kmax)).sum()
}

/// Cover of the ball of diameter `d` by cubes of side `alpha / (12 C sqrt(n))`.
pub fn make_cover(n: usize, d: f64, c: f64, alpha: f64) -> Result<CubicalCover> {
    if n == 0 || !(d > 0.0 && c > 0.0 && alpha > 0.0) {
        return Err(SkeletonError::DegenerateParams("n, d, C and alpha must be positive".into()));
    }
    let ell = alpha / (12.0 * c * (n as f64).sqrt());
    if ell >= 2.0 * d {
        return Err(SkeletonError::DegenerateParams(format!("cube side {ell} is not below 2d = {}", 2.0 * d)));
    }
    let r = 0.5 * d;
    let kmax = (r / ell).ceil() as i64;
    let cube_count = count_cubes(n, r * r * (1.0 + 1e-12), ell, kmax);
    Ok(CubicalCover { n, d, c, alpha, ell, cube_count })
}

impl CubicalCover {
    pub fn cube_of(&self, p: &[f64]) -> Vec<i64> {
        p.iter().map(|x| (x / self.ell).floor() as i64).collect()
    }

    pub fn center(&self, cube: &[i64]) -> Vec<f64> {
        cube.iter().map(|&k| (k as f64 + 0.5) * self.ell).collect()
    }

    pub fn face_center(&self, cube: &[i64], face: u8) -> Vec<f64> {
        let mut p = self.center(cube);
        let j = (face / 2) as usize;
        p[j] += if face % 2 == 1 { 0.5 } else { -0.5 } * self.ell;
        p
    }

    /// Upper bound `(12 d C sqrt(n) / alpha)^n` on the cube count.
    pub fn cube_cap(&self) -> f64 {
        (self.d / self.ell).powi(self.n as i32)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CodeCell {
    pub cube: Vec<i64>,
    pub faces: Vec<u8>,
    pub node: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CanonicalCode {
    pub n: usize,
    pub d: f64,
    pub ell: f64,
    /// Occupied cubes in lexicographic order.
    pub cells: Vec<CodeCell>,
}

fn face_between(a: &[i64], b: &[i64]) -> (u8, u8) {
    let j = a.iter().zip(b).position(|(x, y)| x != y).expect("adjacent cubes differ");
    if b[j] > a[j] {
        (2 * j as u8 + 1, 2 * j as u8)
    } else {
        (2 * j as u8, 2 * j as u8 + 1)
    }
}

/// Move coordinates that sit on a grid hyperplane by `ell / 10`.
fn perturb(p: &[f64], ell: f64) -> Vec<f64> {
    p.iter()
        .map(|&x| {
            let u = x / ell;
            if (u - u.round()).abs() < 1e-9 {
                x + 0.1 * ell
            } else {
                x
            }
        })
        .collect()
}

/// Cubes visited by a polyline, with immediate backtracks removed.
fn walk(cover: &CubicalCover, pts: &[Vec<f64>], closed: bool) -> Vec<Vec<i64>> {
    let ell = cover.ell;
    let mut stack: Vec<Vec<i64>> = vec![cover.cube_of(&pts[0])];
    let push = |stack: &mut Vec<Vec<i64>>, c: Vec<i64>| {
        let m = stack.len();
        if m >= 2 && stack[m - 2] == c {
            stack.pop();
        } else if stack[m - 1] != c {
            stack.push(c);
        }
    };
    let m = pts.len();
    let segs = if closed { m } else { m - 1 };
    for s in 0..segs {
        let a = &pts[s];
        let b = &pts[(s + 1) % m];
        let mut crossings: Vec<(f64, usize, i64)> = Vec::new();
        for j in 0..a.len() {
            let (ka, kb) = ((a[j] / ell).floor() as i64, (b[j] / ell).floor() as i64);
            let step = (kb - ka).signum();
            let mut k = ka;
            while k != kb {
                let plane = if step > 0 { (k + 1) as f64 * ell } else { k as f64 * ell };
                crossings.push(((plane - a[j]) / (b[j] - a[j]), j, step));
                k += step;
            }
        }
        crossings.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        let mut cur = stack.last().expect("walk starts in a cube").clone();
        for (_, j, step) in crossings {
            cur[j] += step;
            push(&mut stack, cur.clone());
        }
    }
    if closed {
        // The walk returns to its start cube.
        if stack.len() > 1 && stack.last() == stack.first() {
            stack.pop();
        }
        while stack.len() >= 3 && stack[stack.len() - 1] == stack[1] {
            stack.remove(0);
            stack.pop();
        }
        if stack.len() == 2 {
            stack.pop();
        }
    }
    stack
}

/// Reroute a skeleton through cube centres and face midpoints and record
/// which faces each occupied cube uses.
pub fn canonicalize(skeleton: &Skeleton, cover: &CubicalCover) -> Result<(CanonicalCode, Skeleton)> {
    let required = 6.0 * (cover.n as f64).sqrt() * cover.ell;
    if skeleton.tube_radius_floor < required * (1.0 - 1e-12) {
        return Err(SkeletonError::TubeTooThin { floor: skeleton.tube_radius_floor, required });
    }
    let project = |p: &Vec<f64>| -> Result<Vec<f64>> {
        if p.len() < cover.n || p[cover.n..].iter().any(|x| x.abs() > 1e-12) {
            return Err(SkeletonError::DimensionMismatch { expected: cover.n, found: p.len() });
        }
        let q = p[..cover.n].to_vec();
        if q.iter().map(|x| x * x).sum::<f64>().sqrt() > 0.5 * cover.d {
            return Err(SkeletonError::OutsideBall { point: p.clone() });
        }
        Ok(perturb(&q, cover.ell))
    };
    let prepare = |l: &Vec<Vec<f64>>| l.iter().map(project).collect::<Result<Vec<_>>>();

    let mut cells: BTreeMap<Vec<i64>, (Vec<u8>, bool)> = BTreeMap::new();
    let mut rerouted = Skeleton {
        nodes: Vec::new(),
        arcs: Vec::new(),
        loops: Vec::new(),
        tube_radius_floor: skeleton.tube_radius_floor,
    };
    let add_walk = |cells: &mut BTreeMap<Vec<i64>, (Vec<u8>, bool)>, w: &[Vec<i64>], closed: bool| -> Result<()> {
        for c in w {
            cells.entry(c.clone()).or_default();
        }
        let m = w.len();
        let pairs = if closed && m > 1 { m } else { m.saturating_sub(1) };
        for i in 0..pairs {
            let (a, b) = (&w[i], &w[(i + 1) % m]);
            let (fa, fb) = face_between(a, b);
            for (c, f) in [(a, fa), (b, fb)] {
                let faces = &mut cells.get_mut(c).expect("cube inserted above").0;
                if faces.contains(&f) {
                    return Err(SkeletonError::SameFaceCollision { cube: c.clone() });
                }
                faces.push(f);
            }
        }
        Ok(())
    };
    let canonical_path = |w: &[Vec<i64>], closed: bool| -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        let m = w.len();
        for i in 0..m {
            out.push(cover.center(&w[i]));
            if i + 1 < m || closed {
                let (fa, _) = face_between(&w[i], &w[(i + 1) % m]);
                out.push(cover.face_center(&w[i], fa));
            }
        }
        out
    };

    for l in &skeleton.loops {
        let w = walk(cover, &prepare(l)?, true);
        add_walk(&mut cells, &w, true)?;
        if w.len() == 1 {
            rerouted.nodes.push(cover.center(&w[0]));
        } else {
            rerouted.loops.push(canonical_path(&w, true));
        }
    }
    for a in &skeleton.arcs {
        let w = walk(cover, &prepare(a)?, false);
        add_walk(&mut cells, &w, false)?;
        rerouted.arcs.push(canonical_path(&w, false));
    }
    for n in &skeleton.nodes {
        let c = cover.cube_of(&project(n)?);
        rerouted.nodes.push(cover.center(&c));
        cells.entry(c).or_default().1 = true;
    }
    rerouted.nodes.sort_by(|a, b| a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal));
    rerouted.nodes.dedup();

    let cells = cells
        .into_iter()
        .map(|(cube, (mut faces, node))| {
            faces.sort_unstable();
            let node = node || faces.len() != 2;
            CodeCell { cube, faces, node }
        })
        .collect();
    Ok((CanonicalCode { n: cover.n, d: cover.d, ell: cover.ell, cells }, rerouted))
}

/// Structural equality of codes on a common cover.
pub fn codes_isotopy_equal(a: &CanonicalCode, b: &CanonicalCode) -> Result<bool> {
    if a.n != b.n || a.d != b.d || a.ell != b.ell {
        return Err(SkeletonError::CoverMismatch);
    }
    Ok(a.cells == b.cells)
}

/// Value of `2^{2n} (12 d C sqrt(n))^n / alpha^n`, exact when it is an integer
/// that can be computed in integer arithmetic.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountBound {
    pub value: f64,
    pub exact: Option<u128>,
}

impl std::fmt::Display for CountBound {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.exact {
            Some(v) => write!(f, "{v}"),
            None => write!(f, "{:e}", self.value),
        }
    }
}

fn as_integer(x: f64) -> Option<u128> {
    (x > 0.0 && x.fract() == 0.0 && x < 1e30).then_some(x as u128)
}

/// `(12 d C sqrt(n) / alpha)^n`, exact on the integer fast path.
fn grid_power(n: usize, d: f64, c: f64, alpha: f64) -> CountBound {
    let nf = n as f64;
    let value = (12.0 * d * c * nf.sqrt() / alpha).powi(n as i32);
    let exact = (|| {
        if !n.is_multiple_of(2) {
            return None;
        }
        let (d, c, a) = (as_integer(d)?, as_integer(c)?, as_integer(alpha)?);
        let base = 12u128.checked_mul(d)?.checked_mul(c)?;
        let num = base.checked_pow(n as u32)?.checked_mul((n as u128).checked_pow(n as u32 / 2)?)?;
        let den = a.checked_pow(n as u32)?;
        (num % den == 0).then_some(num / den)
    })();
    CountBound { value, exact }
}

pub fn count_bound(n: usize, d: f64, c: f64, alpha: f64) -> CountBound {
    let g = grid_power(n, d, c, alpha);
    let factor = 4f64.powi(n as i32);
    CountBound {
        value: factor * g.value,
        exact: g.exact.and_then(|v| 4u128.checked_pow(n as u32)?.checked_mul(v)),
    }
}

pub fn cube_cap(n: usize, d: f64, c: f64, alpha: f64) -> CountBound {
    grid_power(n, d, c, alpha)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Enumeration {
    /// Codes using at least one face.
    pub face_using: u64,
    /// All nonempty codes, counting cubes flagged as isolated point nodes.
    pub total: u64,
    pub codes: Vec<CanonicalCode>,
}

/// Enumerate closed, locally consistent codes on the box of cubes
/// `origin + [0, shape)`. Boundary faces of the box are never used.
pub fn enumerate_codes(cover: &CubicalCover, origin: &[i64], shape: &[usize]) -> Result<Enumeration> {
    let n = cover.n;
    if origin.len() != n || shape.len() != n {
        return Err(SkeletonError::DimensionMismatch { expected: n, found: shape.len() });
    }
    let cubes: Vec<Vec<usize>> = shape.iter().fold(vec![Vec::new()], |acc, &s| {
        acc.into_iter().flat_map(|p| (0..s).map(move |k| [p.clone(), vec![k]].concat())).collect()
    });
    let index_of = |p: &[usize]| cubes.iter().position(|q| q == p).expect("cube in box");
    // Internal faces as (cube, neighbour, axis).
    let mut faces: Vec<(usize, usize, usize)> = Vec::new();
    for (i, p) in cubes.iter().enumerate() {
        for j in 0..n {
            if p[j] + 1 < shape[j] {
                let mut q = p.clone();
                q[j] += 1;
                faces.push((i, index_of(&q), j));
            }
        }
    }
    let assignments = 2f64.powi(faces.len() as i32);
    if assignments > ENUMERATION_GUARD {
        return Err(SkeletonError::TooLarge(assignments));
    }
    let mut out = Enumeration { face_using: 0, total: 0, codes: Vec::new() };
    for mask in 0u64..(1u64 << faces.len()) {
        let mut used: Vec<Vec<u8>> = vec![Vec::new(); cubes.len()];
        for (b, &(i, k, j)) in faces.iter().enumerate() {
            if mask >> b & 1 == 1 {
                used[i].push(2 * j as u8 + 1);
                used[k].push(2 * j as u8);
            }
        }
        if used.iter().any(|f| f.len() == 1) {
            continue;
        }
        let empty = used.iter().filter(|f| f.is_empty()).count() as u32;
        out.total += (1u64 << empty) - u64::from(mask == 0);
        if mask == 0 {
            continue;
        }
        out.face_using += 1;
        let cells = cubes
            .iter()
            .zip(used)
            .filter(|(_, f)| !f.is_empty())
            .map(|(p, mut f)| {
                f.sort_unstable();
                let node = f.len() != 2;
                let cube = p.iter().zip(origin).map(|(&k, &o)| o + k as i64).collect();
                CodeCell { cube, faces: f, node }
            })
            .collect();
        out.codes.push(CanonicalCode { n, d: cover.d, ell: cover.ell, cells });
    }
    Ok(out)
}

/// Connected components of a graph on `vertices` nodes, as a label per node.
fn component_labels(vertices: usize, edges: &[(usize, usize)]) -> Vec<usize> {
    let mut label: Vec<usize> = (0..vertices).collect();
    fn root(label: &mut [usize], mut v: usize) -> usize {
        while label[v] != v {
            label[v] = label[label[v]];
            v = label[v];
        }
        v
    }
    for &(a, b) in edges {
        let (ra, rb) = (root(&mut label, a), root(&mut label, b));
        label[ra.max(rb)] = ra.min(rb);
    }
    (0..vertices).map(|v| root(&mut label, v)).collect()
}

/// Cycle rank of the graph restricted to the component labelled `c`.
fn genus_of(labels: &[usize], edges: &[(usize, usize)], c: usize) -> usize {
    let v = labels.iter().filter(|&&l| l == c).count();
    let e = edges.iter().filter(|&&(a, _)| labels[a] == c).count();
    e + 1 - v
}

/// Effect of cutting edge `cut` of a connected skeleton graph whose tubular
/// neighbourhood is the surface. The genus of a piece is its cycle rank.
pub fn classify_graph_cut(vertices: usize, edges: &[(usize, usize)], cut: usize) -> Result<CutOutcome> {
    if cut >= edges.len() || edges.iter().any(|&(a, b)| a >= vertices || b >= vertices) {
        return Err(SkeletonError::DegenerateParams("edge index or endpoint out of range".into()));
    }
    let before = component_labels(vertices, edges);
    if before.iter().any(|&l| l != before[0]) {
        return Err(SkeletonError::DegenerateParams("skeleton graph is not connected".into()));
    }
    let rest: Vec<(usize, usize)> = edges.iter().enumerate().filter(|&(i, _)| i != cut).map(|(_, e)| *e).collect();
    let labels = component_labels(vertices, &rest);
    let (a, b) = edges[cut];
    let class = |c: usize| ManifoldClass { genus: genus_of(&labels, &rest, c) };
    Ok(if labels[a] == labels[b] {
        CutOutcome::Connected { class: class(labels[a]) }
    } else {
        CutOutcome::Disconnecting { left: class(labels[a]), right: class(labels[b]) }
    })
}
