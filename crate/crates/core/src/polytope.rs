//! Vertex-sampled convex polytopes with a grid neighbour graph.
//!
//! Sampled superquadrics have a south pole (id 0), `rings x n_u` ring
//! vertices and a north pole (last id). Ring vertices connect to their eight
//! grid neighbours (longitude wraps around); each pole connects to its whole
//! adjacent ring.

use std::collections::VecDeque;

use crate::error::GeometryError;
use crate::kdtree::KdTree;
use crate::lie::{Mat3, Vec3};
use crate::superquadric::Superquadric;

/// Half-width, in grid cells, of the window searched at a local maximum.
const ESCAPE_RADIUS: usize = 3;

/// Grid cells per side of a bounded patch.
const PATCH_CELLS: usize = 8;

/// Patches per side of a cluster.
const CLUSTER_PATCHES: usize = 4;

/// Oriented bounding box of a patch of vertices.
#[derive(Clone, Copy, Debug)]
struct Patch {
    center: Vec3,
    axes: Mat3,
    half: Vec3,
}

impl Patch {
    fn fit(points: impl Iterator<Item = Vec3> + Clone) -> Self {
        let n = points.clone().count() as f64;
        let mean = points.clone().sum::<Vec3>() / n;
        let cov = points.clone().fold(Mat3::zeros(), |acc, p| {
            acc + (p - mean) * (p - mean).transpose()
        });
        let axes = cov.symmetric_eigen().eigenvectors;
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for p in points {
            let c = axes.transpose() * (p - mean);
            lo = lo.inf(&c);
            hi = hi.sup(&c);
        }
        let center = mean + axes * ((lo + hi) / 2.0);
        // Pad against rounding in the bound test.
        let half = ((hi - lo) / 2.0).map(|h| h * (1.0 + 1e-9) + 1e-12);
        Self { center, axes, half }
    }

    /// Upper bound of `<v, dir>` over the patch.
    fn bound(&self, dir: &Vec3) -> f64 {
        let local = self.axes.transpose() * dir;
        self.center.dot(dir) + self.half.dot(&local.abs())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridLayout {
    pub n_u: usize,
    pub rings: usize,
}

#[derive(Clone, Debug)]
pub struct ConvexPolytope {
    vertices: Vec<Vec3>,
    offsets: Vec<u32>,
    adjacency: Vec<u32>,
    layout: Option<GridLayout>,
    index: KdTree,
    seeds: Vec<u32>,
    patches: Vec<Patch>,
    patch_offsets: Vec<u32>,
    patch_members: Vec<u32>,
    clusters: Vec<Patch>,
    cluster_offsets: Vec<u32>,
    cluster_members: Vec<u32>,
    source: Option<Superquadric>,
    radius: f64,
    centroid: Vec3,
}

impl ConvexPolytope {
    /// Polytope without neighbour structure; support queries fall back to a scan.
    pub fn from_points(vertices: Vec<Vec3>) -> Result<Self, GeometryError> {
        if vertices.is_empty() {
            return Err(GeometryError::EmptyPolytope);
        }
        let n = vertices.len();
        Self::assemble(vertices, vec![0; n + 1], Vec::new(), None, None)
    }

    pub(crate) fn from_grid(
        vertices: Vec<Vec3>,
        n_u: usize,
        rings: usize,
        source: Option<Superquadric>,
    ) -> Result<Self, GeometryError> {
        debug_assert_eq!(vertices.len(), 2 + n_u * rings);
        let ring_id = |r: usize, i: usize| 1 + r * n_u + (i % n_u);
        let north = vertices.len() - 1;
        let mut lists: Vec<Vec<u32>> = vec![Vec::new(); vertices.len()];
        lists[0] = (0..n_u).map(|i| ring_id(0, i) as u32).collect();
        lists[north] = (0..n_u).map(|i| ring_id(rings - 1, i) as u32).collect();
        for r in 0..rings {
            for i in 0..n_u {
                let me = ring_id(r, i);
                let list = &mut lists[me];
                for di in [n_u - 1, 1] {
                    list.push(ring_id(r, i + di) as u32);
                }
                for dr in [-1i64, 1] {
                    let rr = r as i64 + dr;
                    if rr < 0 {
                        list.push(0);
                    } else if rr as usize >= rings {
                        list.push(north as u32);
                    } else {
                        for di in [n_u - 1, 0, 1] {
                            list.push(ring_id(rr as usize, i + di) as u32);
                        }
                    }
                }
            }
        }
        let mut offsets = Vec::with_capacity(vertices.len() + 1);
        let mut adjacency = Vec::new();
        offsets.push(0u32);
        for l in lists {
            adjacency.extend(l);
            offsets.push(adjacency.len() as u32);
        }
        Self::assemble(
            vertices,
            offsets,
            adjacency,
            Some(GridLayout { n_u, rings }),
            source,
        )
    }

    fn assemble(
        vertices: Vec<Vec3>,
        offsets: Vec<u32>,
        adjacency: Vec<u32>,
        layout: Option<GridLayout>,
        source: Option<Superquadric>,
    ) -> Result<Self, GeometryError> {
        if vertices.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(GeometryError::NonFinite);
        }
        let index = KdTree::build(&vertices);
        let centroid = vertices.iter().sum::<Vec3>() / vertices.len() as f64;
        let radius = vertices.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let seeds = match layout {
            Some(GridLayout { n_u, rings }) => {
                let ring_step = (rings / 12).max(1);
                let col_step = (n_u / 12).max(1);
                let mut s = vec![0u32, (vertices.len() - 1) as u32];
                for r in (0..rings).step_by(ring_step) {
                    for i in (0..n_u).step_by(col_step) {
                        s.push((1 + r * n_u + i) as u32);
                    }
                }
                s
            }
            None => Vec::new(),
        };
        // Patches tile the grid; clusters tile the patch grid.
        let (groups, cluster_groups): (Vec<Vec<u32>>, Vec<Vec<u32>>) = match layout {
            Some(GridLayout { n_u, rings }) => {
                let pr = rings.div_ceil(PATCH_CELLS);
                let pc = n_u.div_ceil(PATCH_CELLS);
                let mut g = Vec::new();
                for r0 in (0..rings).step_by(PATCH_CELLS) {
                    for c0 in (0..n_u).step_by(PATCH_CELLS) {
                        let mut members = Vec::new();
                        for r in r0..(r0 + PATCH_CELLS).min(rings) {
                            for c in c0..(c0 + PATCH_CELLS).min(n_u) {
                                members.push((1 + r * n_u + c) as u32);
                            }
                        }
                        g.push(members);
                    }
                }
                g.push(vec![0]);
                g.push(vec![(vertices.len() - 1) as u32]);
                let mut clusters = Vec::new();
                for r0 in (0..pr).step_by(CLUSTER_PATCHES) {
                    for c0 in (0..pc).step_by(CLUSTER_PATCHES) {
                        let mut members = Vec::new();
                        for r in r0..(r0 + CLUSTER_PATCHES).min(pr) {
                            for c in c0..(c0 + CLUSTER_PATCHES).min(pc) {
                                members.push((r * pc + c) as u32);
                            }
                        }
                        clusters.push(members);
                    }
                }
                clusters.push(vec![(pr * pc) as u32, (pr * pc + 1) as u32]);
                (g, clusters)
            }
            None => (Vec::new(), Vec::new()),
        };
        let mut patches = Vec::with_capacity(groups.len());
        let mut patch_offsets = vec![0u32];
        let mut patch_members = Vec::new();
        for g in groups {
            patches.push(Patch::fit(g.iter().map(|&i| vertices[i as usize])));
            patch_members.extend(g);
            patch_offsets.push(patch_members.len() as u32);
        }
        let mut clusters = Vec::with_capacity(cluster_groups.len());
        let mut cluster_offsets = vec![0u32];
        let mut cluster_members = Vec::new();
        for c in cluster_groups {
            let ids = c.iter().flat_map(|&p| {
                patch_members
                    [patch_offsets[p as usize] as usize..patch_offsets[p as usize + 1] as usize]
                    .iter()
            });
            clusters.push(Patch::fit(ids.map(|&i| vertices[i as usize])));
            cluster_members.extend(c);
            cluster_offsets.push(cluster_members.len() as u32);
        }
        Ok(Self {
            clusters,
            cluster_offsets,
            cluster_members,
            vertices,
            offsets,
            adjacency,
            layout,
            index,
            seeds,
            patches,
            patch_offsets,
            patch_members,
            source,
            radius,
            centroid,
        })
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn layout(&self) -> Option<GridLayout> {
        self.layout
    }

    /// The superquadric this polytope was sampled from, if any.
    pub fn source(&self) -> Option<&Superquadric> {
        self.source.as_ref()
    }

    /// Largest vertex norm in the body frame.
    pub fn bounding_radius(&self) -> f64 {
        self.radius
    }

    pub fn centroid(&self) -> Vec3 {
        self.centroid
    }

    pub fn neighbors(&self, v: usize) -> &[u32] {
        &self.adjacency[self.offsets[v] as usize..self.offsets[v + 1] as usize]
    }

    pub fn has_graph(&self) -> bool {
        !self.adjacency.is_empty()
    }

    /// Nearest vertex to a body-frame point.
    pub fn nearest_vertex(&self, p: &Vec3) -> usize {
        self.index.nearest(p).map(|(i, _)| i).unwrap_or(0)
    }

    /// Exhaustive support query in the body frame; ties go to the lowest id.
    pub fn support_scan(&self, dir: &Vec3) -> usize {
        let mut best = 0;
        let mut best_val = f64::NEG_INFINITY;
        for (i, v) in self.vertices.iter().enumerate() {
            let val = v.dot(dir);
            if val > best_val {
                best_val = val;
                best = i;
            }
        }
        best
    }

    /// Support query by hill climbing over the neighbour graph.
    ///
    /// Starts from `start` when given, otherwise from the best of a coarse
    /// seed set, and returns the same vertex as [`Self::support_scan`].
    /// Shapes without a graph use the scan directly.
    pub fn support_climb(&self, dir: &Vec3, start: Option<usize>) -> usize {
        if !self.has_graph() {
            return self.support_scan(dir);
        }
        let local = self.climb(dir, start);
        self.certify(local, dir)
    }

    /// Greedy ascent over the neighbour graph. The result can be a spurious
    /// local maximum; [`Self::support_climb`] removes that possibility.
    pub fn climb(&self, dir: &Vec3, start: Option<usize>) -> usize {
        if !self.has_graph() {
            return self.support_scan(dir);
        }
        let mut cur = match start {
            Some(s) if s < self.vertices.len() => s,
            _ => {
                let mut best = self.seeds[0] as usize;
                let mut best_val = self.vertices[best].dot(dir);
                for &s in &self.seeds[1..] {
                    let val = self.vertices[s as usize].dot(dir);
                    if val > best_val {
                        best_val = val;
                        best = s as usize;
                    }
                }
                best
            }
        };
        let mut cur_val = self.vertices[cur].dot(dir);
        loop {
            let mut next = cur;
            for &n in self.neighbors(cur) {
                let val = self.vertices[n as usize].dot(dir);
                if val > cur_val {
                    cur_val = val;
                    next = n as usize;
                }
            }
            if next == cur {
                // Sheared grid cells near sharp edges leave spurious local
                // maxima; a small window search escapes most of them.
                match self.window_best(cur, dir, cur_val) {
                    Some(better) => {
                        cur = better;
                        cur_val = self.vertices[cur].dot(dir);
                        continue;
                    }
                    None => return cur,
                }
            }
            cur = next;
        }
    }

    /// Exact support from a climbed candidate.
    ///
    /// The grid graph is not the hull's edge graph, so greedy ascent can stall
    /// on ridges that cross grid cells diagonally. Patches whose bounding box
    /// reaches past the candidate are rescanned; the result equals
    /// [`Self::support_scan`], including its tie-break.
    fn certify(&self, candidate: usize, dir: &Vec3) -> usize {
        let mut best = candidate;
        let mut best_val = self.vertices[candidate].dot(dir);
        for (k, cluster) in self.clusters.iter().enumerate() {
            if cluster.bound(dir) < best_val {
                continue;
            }
            for &p in &self.cluster_members
                [self.cluster_offsets[k] as usize..self.cluster_offsets[k + 1] as usize]
            {
                let p = p as usize;
                let patch = &self.patches[p];
                if patch.bound(dir) < best_val {
                    continue;
                }
                let members = &self.patch_members
                    [self.patch_offsets[p] as usize..self.patch_offsets[p + 1] as usize];
                for &m in members {
                    let m = m as usize;
                    let val = self.vertices[m].dot(dir);
                    if val > best_val || (val == best_val && m < best) {
                        best_val = val;
                        best = m;
                    }
                }
            }
        }
        best
    }

    /// Best vertex strictly above `val` in the grid window around `v`.
    fn window_best(&self, v: usize, dir: &Vec3, val: f64) -> Option<usize> {
        let GridLayout { n_u, rings } = self.layout?;
        let north = self.vertices.len() - 1;
        let k = ESCAPE_RADIUS;
        let mut best = None;
        let mut best_val = val;
        let mut consider = |id: usize| {
            let x = self.vertices[id].dot(dir);
            if x > best_val {
                best_val = x;
                best = Some(id);
            }
        };
        if v == 0 || v == north {
            // Pole windows cover the first rings entirely.
            let rows: Vec<usize> = if v == 0 {
                (0..k.min(rings)).collect()
            } else {
                (rings.saturating_sub(k)..rings).collect()
            };
            for r in rows {
                for c in 0..n_u {
                    consider(1 + r * n_u + c);
                }
            }
            return best;
        }
        let r = (v - 1) / n_u;
        let c = (v - 1) % n_u;
        if r < k {
            consider(0);
        }
        if r + k >= rings {
            consider(north);
        }
        for rr in r.saturating_sub(k)..(r + k + 1).min(rings) {
            for d in 0..=2 * k {
                consider(1 + rr * n_u + (c + n_u + d - k) % n_u);
            }
        }
        best
    }

    /// Vertices within `depth` graph hops of `v`, starting with `v`.
    pub fn neighborhood(&self, v: usize, depth: usize) -> Vec<usize> {
        if let Some(window) = self.grid_window(v, depth) {
            return window;
        }
        let mut seen = vec![false; self.vertices.len()];
        let mut out = vec![v];
        seen[v] = true;
        let mut queue = VecDeque::from([(v, 0usize)]);
        while let Some((cur, d)) = queue.pop_front() {
            if d == depth {
                continue;
            }
            for &n in self.neighbors(cur) {
                let n = n as usize;
                if !seen[n] {
                    seen[n] = true;
                    out.push(n);
                    queue.push_back((n, d + 1));
                }
            }
        }
        out
    }

    /// Away from the poles a depth-k neighborhood on the 8-connected grid is
    /// the (2k+1)x(2k+1) window around the vertex.
    fn grid_window(&self, v: usize, depth: usize) -> Option<Vec<usize>> {
        let GridLayout { n_u, rings } = self.layout?;
        if v == 0 || v > n_u * rings || depth > (n_u - 1) / 2 {
            return None;
        }
        let (r, c) = ((v - 1) / n_u, (v - 1) % n_u);
        if r < depth || r + depth >= rings {
            return None;
        }
        let mut out = Vec::with_capacity((2 * depth + 1).pow(2));
        out.push(v);
        for rr in r - depth..=r + depth {
            for k in 0..=2 * depth {
                let cc = (c + n_u + k - depth) % n_u;
                if rr != r || cc != c {
                    out.push(1 + rr * n_u + cc);
                }
            }
        }
        Some(out)
    }

    /// Whether every vertex is reachable from vertex 0.
    pub fn is_connected(&self) -> bool {
        self.vertices.len() == 1 || self.neighborhood(0, usize::MAX).len() == self.vertices.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn grid_graph_is_connected_and_bounded() {
        let poly = Superquadric::new(0.3, 0.2, 0.4, 0.5, 1.5)
            .unwrap()
            .sample_surface(40, 30)
            .unwrap();
        assert!(poly.is_connected());
        assert_eq!(poly.len(), 2 + 40 * 28);
        for v in 1..poly.len() - 1 {
            assert!(poly.neighbors(v).len() <= 8);
        }
        // Adjacency is symmetric.
        for v in 0..poly.len() {
            for &n in poly.neighbors(v) {
                assert!(poly.neighbors(n as usize).contains(&(v as u32)));
            }
        }
    }

    #[test]
    fn hill_climb_agrees_with_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for sq in [
            Superquadric::new(0.3, 0.3, 0.3, 0.2, 0.2).unwrap(),
            Superquadric::new(0.5, 1.5, 1.0, 0.2, 0.2).unwrap(),
            Superquadric::new(0.2, 0.1, 0.4, 1.0, 0.3).unwrap(),
            Superquadric::new(0.2, 0.2, 0.2, 2.0, 2.0).unwrap(),
        ] {
            let poly = sq.sample_surface(200, 200).unwrap();
            for _ in 0..200 {
                let d = Vec3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                );
                let start = if rng.gen_bool(0.5) {
                    Some(rng.gen_range(0..poly.len()))
                } else {
                    None
                };
                assert_eq!(poly.support_climb(&d, start), poly.support_scan(&d));
            }
        }
    }

    #[test]
    fn neighborhood_depth() {
        let poly = Superquadric::sphere(1.0)
            .unwrap()
            .sample_surface(60, 60)
            .unwrap();
        let mid = 1 + 29 * 60 + 5;
        assert_eq!(poly.neighborhood(mid, 0), vec![mid]);
        assert_eq!(poly.neighborhood(mid, 1).len(), 9);
        assert_eq!(poly.neighborhood(mid, 8).len(), 17 * 17);
        // The window shortcut must agree with a plain breadth-first search,
        // including around the longitude seam and next to the poles.
        for v in [1, 5, 41, 60, 79, 400, poly.len() - 2] {
            for depth in [1, 3, 8] {
                let mut reach = std::collections::BTreeSet::from([v]);
                let mut frontier = vec![v];
                for _ in 0..depth {
                    let mut next = Vec::new();
                    for &u in &frontier {
                        for &w in poly.neighbors(u) {
                            if reach.insert(w as usize) {
                                next.push(w as usize);
                            }
                        }
                    }
                    frontier = next;
                }
                let got = poly.neighborhood(v, depth);
                assert_eq!(got[0], v);
                let got: std::collections::BTreeSet<_> = got.into_iter().collect();
                assert_eq!(got, reach, "v={v} depth={depth}");
            }
        }
    }
}
