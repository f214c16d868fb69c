//! Undirected unit-length graphs and the geodesic toolkit used everywhere else:
//! breadth-first distances, deterministic geodesic selection, geodesic DAGs with
//! path counts, Gromov products and point-to-segment distances.
//!
//! Conventions:
//! - vertices are dense `u32` ids,
//! - every edge has length 1, no self loops, no multi-edges,
//! - adjacency lists are kept sorted so that "least id first" tie-breaking is
//!   a plain linear scan.

use std::collections::VecDeque;
use std::fmt;

use thiserror::Error;

/// Sentinel-free distance map: `None` means unreachable.
pub type DistMap = Vec<Option<u32>>;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("vertex {0} is out of range (graph has {1} vertices)")]
    VertexOutOfRange(u32, usize),
    #[error("self loop at vertex {0} is not allowed")]
    SelfLoop(u32),
    #[error("vertices {0} and {1} are not connected")]
    Unreachable(u32, u32),
    #[error("path is empty")]
    EmptyPath,
    #[error("consecutive path entries {0} and {1} are not adjacent")]
    NotAPath(u32, u32),
    #[error("graph dump line {line}: {msg}")]
    Dump { line: usize, msg: String },
}

/// Finite undirected graph with unit edge lengths and sorted adjacency.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Graph {
    adj: Vec<Vec<u32>>,
    edge_count: usize,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_vertices(n: usize) -> Self {
        Graph {
            adj: vec![Vec::new(); n],
            edge_count: 0,
        }
    }

    pub fn add_vertex(&mut self) -> u32 {
        self.adj.push(Vec::new());
        (self.adj.len() - 1) as u32
    }

    pub fn vertex_count(&self) -> usize {
        self.adj.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn check_vertex(&self, v: u32) -> Result<(), GraphError> {
        if (v as usize) < self.adj.len() {
            Ok(())
        } else {
            Err(GraphError::VertexOutOfRange(v, self.adj.len()))
        }
    }

    /// Inserts an undirected edge, keeping adjacency sorted and deduplicated.
    pub fn add_edge(&mut self, u: u32, v: u32) -> Result<(), GraphError> {
        self.check_vertex(u)?;
        self.check_vertex(v)?;
        if u == v {
            return Err(GraphError::SelfLoop(u));
        }
        let inserted = insert_sorted(&mut self.adj[u as usize], v);
        if inserted {
            insert_sorted(&mut self.adj[v as usize], u);
            self.edge_count += 1;
        }
        Ok(())
    }

    pub fn has_edge(&self, u: u32, v: u32) -> bool {
        self.adj
            .get(u as usize)
            .map(|ns| ns.binary_search(&v).is_ok())
            .unwrap_or(false)
    }

    pub fn neighbors(&self, v: u32) -> &[u32] {
        &self.adj[v as usize]
    }

    pub fn degree(&self, v: u32) -> usize {
        self.adj[v as usize].len()
    }

    /// Sorted `(u, v)` pairs with `u < v`.
    pub fn edges(&self) -> Vec<(u32, u32)> {
        let mut out = Vec::with_capacity(self.edge_count);
        for (u, ns) in self.adj.iter().enumerate() {
            for &v in ns {
                if (u as u32) < v {
                    out.push((u as u32, v));
                }
            }
        }
        out
    }

    /// Distances from `source` to every vertex; unreachable entries are `None`.
    pub fn bfs_distances(&self, source: u32) -> Result<DistMap, GraphError> {
        self.check_vertex(source)?;
        let mut dist: DistMap = vec![None; self.adj.len()];
        let mut queue = VecDeque::new();
        dist[source as usize] = Some(0);
        queue.push_back(source);
        while let Some(v) = queue.pop_front() {
            let d = dist[v as usize].unwrap();
            for &w in &self.adj[v as usize] {
                if dist[w as usize].is_none() {
                    dist[w as usize] = Some(d + 1);
                    queue.push_back(w);
                }
            }
        }
        Ok(dist)
    }

    /// Distances from `source` visiting only vertices within `radius`.
    pub fn bfs_within(&self, source: u32, radius: u32) -> Result<Vec<(u32, u32)>, GraphError> {
        self.check_vertex(source)?;
        let mut dist: Vec<u32> = vec![u32::MAX; self.adj.len()];
        let mut queue = VecDeque::new();
        let mut out = Vec::new();
        dist[source as usize] = 0;
        queue.push_back(source);
        out.push((source, 0));
        while let Some(v) = queue.pop_front() {
            let d = dist[v as usize];
            if d == radius {
                continue;
            }
            for &w in &self.adj[v as usize] {
                if dist[w as usize] == u32::MAX {
                    dist[w as usize] = d + 1;
                    queue.push_back(w);
                    out.push((w, d + 1));
                }
            }
        }
        Ok(out)
    }

    /// Max distance from `source` to any of `targets`, stopping the sweep as
    /// soon as every target has been reached.
    pub fn bfs_max_to_targets(&self, source: u32, targets: &[u32]) -> Result<u32, GraphError> {
        self.check_vertex(source)?;
        let mut wanted = vec![false; self.adj.len()];
        let mut remaining = 0usize;
        for &t in targets {
            self.check_vertex(t)?;
            if !wanted[t as usize] {
                wanted[t as usize] = true;
                remaining += 1;
            }
        }
        let mut dist: Vec<u32> = vec![u32::MAX; self.adj.len()];
        let mut queue = VecDeque::new();
        let mut best = 0;
        dist[source as usize] = 0;
        queue.push_back(source);
        if wanted[source as usize] {
            remaining -= 1;
        }
        while remaining > 0 {
            let Some(v) = queue.pop_front() else {
                let missing = targets
                    .iter()
                    .copied()
                    .find(|&t| dist[t as usize] == u32::MAX)
                    .unwrap_or(source);
                return Err(GraphError::Unreachable(source, missing));
            };
            let d = dist[v as usize];
            for &w in &self.adj[v as usize] {
                if dist[w as usize] == u32::MAX {
                    dist[w as usize] = d + 1;
                    queue.push_back(w);
                    if wanted[w as usize] {
                        best = d + 1;
                        remaining -= 1;
                    }
                }
            }
        }
        Ok(best)
    }

    /// Distances from the whole `sources` set (minimum over the set).
    pub fn multi_source_distances(&self, sources: &[u32]) -> Result<DistMap, GraphError> {
        let mut dist: DistMap = vec![None; self.adj.len()];
        let mut queue = VecDeque::new();
        for &s in sources {
            self.check_vertex(s)?;
            if dist[s as usize].is_none() {
                dist[s as usize] = Some(0);
                queue.push_back(s);
            }
        }
        while let Some(v) = queue.pop_front() {
            let d = dist[v as usize].unwrap();
            for &w in &self.adj[v as usize] {
                if dist[w as usize].is_none() {
                    dist[w as usize] = Some(d + 1);
                    queue.push_back(w);
                }
            }
        }
        Ok(dist)
    }

    /// Multi-source BFS carrying a label per source. Each reached vertex
    /// gets its distance to the source set and the least label achieving
    /// that distance over ALL shortest paths (not just the discovery path),
    /// so the labeling is independent of queue order.
    pub fn labeled_multi_source(
        &self,
        sources: &[(u32, u32)],
    ) -> Result<Vec<Option<(u32, u32)>>, GraphError> {
        let verts: Vec<u32> = sources.iter().map(|&(v, _)| v).collect();
        let dist = self.multi_source_distances(&verts)?;
        let mut label: Vec<Option<u32>> = vec![None; self.adj.len()];
        for &(v, l) in sources {
            let cur = &mut label[v as usize];
            *cur = Some(cur.map_or(l, |p| p.min(l)));
        }
        let mut order: Vec<u32> = (0..self.adj.len() as u32)
            .filter(|&v| dist[v as usize].is_some())
            .collect();
        order.sort_unstable_by_key(|&v| (dist[v as usize].unwrap(), v));
        for &v in &order {
            let d = dist[v as usize].unwrap();
            if d == 0 {
                continue;
            }
            let mut best: Option<u32> = None;
            for &u in &self.adj[v as usize] {
                if dist[u as usize] == Some(d - 1) {
                    if let Some(l) = label[u as usize] {
                        best = Some(best.map_or(l, |b| b.min(l)));
                    }
                }
            }
            label[v as usize] = best;
        }
        Ok((0..self.adj.len())
            .map(|v| match (dist[v], label[v]) {
                (Some(d), Some(l)) => Some((d, l)),
                _ => None,
            })
            .collect())
    }

    /// One geodesic from `u` to `v`, deterministic: walking back from `v`,
    /// each step takes the least-id neighbor one unit closer to `u`.
    pub fn one_geodesic(&self, u: u32, v: u32) -> Result<Vec<u32>, GraphError> {
        let dist = self.bfs_distances(u)?;
        self.check_vertex(v)?;
        self.geodesic_from_dist(u, v, &dist)
    }

    /// Same as `one_geodesic` with a precomputed distance map from `u`.
    pub fn geodesic_from_dist(
        &self,
        u: u32,
        v: u32,
        dist_from_u: &DistMap,
    ) -> Result<Vec<u32>, GraphError> {
        let Some(dv) = dist_from_u[v as usize] else {
            return Err(GraphError::Unreachable(u, v));
        };
        let mut path = Vec::with_capacity(dv as usize + 1);
        let mut cur = v;
        path.push(cur);
        let mut d = dv;
        while d > 0 {
            // Sorted adjacency: the first qualifying neighbor has least id.
            let next = self.adj[cur as usize]
                .iter()
                .copied()
                .find(|&w| dist_from_u[w as usize] == Some(d - 1))
                .expect("BFS distance map admits a predecessor");
            cur = next;
            path.push(cur);
            d -= 1;
        }
        path.reverse();
        Ok(path)
    }

    /// The geodesic DAG between `u` and `v`: all vertices lying on some
    /// geodesic, predecessor sets and a saturating geodesic count.
    pub fn geodesic_dag(&self, u: u32, v: u32) -> Result<GeodesicDag, GraphError> {
        let du = self.bfs_distances(u)?;
        let dv = self.bfs_distances(v)?;
        self.check_vertex(v)?;
        let Some(total) = du[v as usize] else {
            return Err(GraphError::Unreachable(u, v));
        };
        let mut vertices = Vec::new();
        for x in 0..self.adj.len() as u32 {
            if let (Some(a), Some(b)) = (du[x as usize], dv[x as usize]) {
                if a + b == total {
                    vertices.push(x);
                }
            }
        }
        let on_dag = {
            let mut mask = vec![false; self.adj.len()];
            for &x in &vertices {
                mask[x as usize] = true;
            }
            mask
        };
        let mut preds: Vec<Vec<u32>> = Vec::with_capacity(vertices.len());
        for &x in &vertices {
            let dx = du[x as usize].unwrap();
            let ps = self.adj[x as usize]
                .iter()
                .copied()
                .filter(|&w| on_dag[w as usize] && du[w as usize] == Some(dx.wrapping_sub(1)) && dx > 0)
                .collect();
            preds.push(ps);
        }
        // Path counts by dynamic programming in distance order.
        let mut order: Vec<usize> = (0..vertices.len()).collect();
        order.sort_by_key(|&i| (du[vertices[i] as usize].unwrap(), vertices[i]));
        let index_of = {
            let mut m = vec![usize::MAX; self.adj.len()];
            for (i, &x) in vertices.iter().enumerate() {
                m[x as usize] = i;
            }
            m
        };
        let mut counts = vec![0u64; vertices.len()];
        let mut saturated = false;
        for &i in &order {
            let x = vertices[i];
            if x == u {
                counts[i] = 1;
                continue;
            }
            let mut c: u64 = 0;
            for &p in &preds[i] {
                let (sum, over) = c.overflowing_add(counts[index_of[p as usize]]);
                if over || sum >= GEODESIC_COUNT_CAP {
                    c = GEODESIC_COUNT_CAP;
                    saturated = true;
                    break;
                }
                c = sum;
            }
            counts[i] = c;
        }
        let count = counts[index_of[v as usize]];
        Ok(GeodesicDag {
            source: u,
            target: v,
            distance: total,
            vertices,
            preds,
            dist_from_source: du,
            count,
            saturated,
        })
    }

    /// Gromov product `(a, b)_w` as an exact half-integer.
    pub fn gromov_product(&self, w: u32, a: u32, b: u32) -> Result<HalfInt, GraphError> {
        let dw = self.bfs_distances(w)?;
        let da = self.bfs_distances(a)?;
        let (Some(daw), Some(dbw), Some(dab)) =
            (dw[a as usize], dw[b as usize], da[b as usize])
        else {
            return Err(GraphError::Unreachable(w, if dw[a as usize].is_none() { a } else { b }));
        };
        Ok(HalfInt::from_doubled(daw as i64 + dbw as i64 - dab as i64))
    }

    /// Gromov product from precomputed distance maps based at `w` and `a`.
    pub fn gromov_product_from(
        dw: &DistMap,
        da: &DistMap,
        a: u32,
        b: u32,
    ) -> Option<HalfInt> {
        let daw = dw[a as usize]?;
        let dbw = dw[b as usize]?;
        let dab = da[b as usize]?;
        Some(HalfInt::from_doubled(daw as i64 + dbw as i64 - dab as i64))
    }

    /// Distance from `w` to the vertex set of `path` (minimum over entries).
    pub fn dist_to_segment(&self, w: u32, path: &[u32]) -> Result<u32, GraphError> {
        if path.is_empty() {
            return Err(GraphError::EmptyPath);
        }
        for pair in path.windows(2) {
            if !self.has_edge(pair[0], pair[1]) {
                return Err(GraphError::NotAPath(pair[0], pair[1]));
            }
        }
        let dist = self.bfs_distances(w)?;
        path.iter()
            .filter_map(|&p| dist[p as usize])
            .min()
            .ok_or(GraphError::Unreachable(w, path[0]))
    }

    /// Serializes the graph with one label per vertex. Format:
    /// a `graph <n> <m>` header, then `v <id> <label>` lines in id order,
    /// then `e <u> <v>` lines sorted with `u < v`.
    pub fn to_dump(&self, labels: &[String]) -> String {
        assert_eq!(labels.len(), self.adj.len(), "one label per vertex");
        let mut out = String::new();
        out.push_str(&format!("graph {} {}\n", self.adj.len(), self.edge_count));
        for (id, label) in labels.iter().enumerate() {
            out.push_str(&format!("v {} {}\n", id, label));
        }
        for (u, v) in self.edges() {
            out.push_str(&format!("e {} {}\n", u, v));
        }
        out
    }

    /// Parses the `to_dump` format back; errors cite 1-based line numbers.
    pub fn from_dump(text: &str) -> Result<(Graph, Vec<String>), GraphError> {
        let dump_err = |line: usize, msg: String| GraphError::Dump { line, msg };
        let mut lines = text.lines().enumerate();
        let (ln, header) = lines
            .next()
            .ok_or_else(|| dump_err(1, "empty dump".into()))?;
        let mut parts = header.split_whitespace();
        if parts.next() != Some("graph") {
            return Err(dump_err(ln + 1, "expected `graph <n> <m>` header".into()));
        }
        let n: usize = parts
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| dump_err(ln + 1, "bad vertex count".into()))?;
        let m: usize = parts
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| dump_err(ln + 1, "bad edge count".into()))?;
        let mut graph = Graph::with_vertices(n);
        let mut labels = vec![String::new(); n];
        let mut seen_v = 0usize;
        let mut seen_e = 0usize;
        for (ln, line) in lines {
            let line = line.trim_end();
            if line.is_empty() {
                continue;
            }
            let (kind, rest) = line
                .split_once(' ')
                .ok_or_else(|| dump_err(ln + 1, "expected `v` or `e` record".into()))?;
            match kind {
                "v" => {
                    let (id, label) = rest
                        .split_once(' ')
                        .ok_or_else(|| dump_err(ln + 1, "expected `v <id> <label>`".into()))?;
                    let id: usize = id
                        .parse()
                        .map_err(|_| dump_err(ln + 1, format!("bad vertex id `{}`", id)))?;
                    if id != seen_v {
                        return Err(dump_err(ln + 1, format!("vertex ids must be dense, got {} expecting {}", id, seen_v)));
                    }
                    if id >= n {
                        return Err(dump_err(ln + 1, format!("vertex id {} exceeds count {}", id, n)));
                    }
                    labels[id] = label.to_string();
                    seen_v += 1;
                }
                "e" => {
                    let mut it = rest.split_whitespace();
                    let u: u32 = it
                        .next()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| dump_err(ln + 1, "bad edge endpoint".into()))?;
                    let v: u32 = it
                        .next()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| dump_err(ln + 1, "bad edge endpoint".into()))?;
                    graph
                        .add_edge(u, v)
                        .map_err(|e| dump_err(ln + 1, e.to_string()))?;
                    seen_e += 1;
                }
                other => return Err(dump_err(ln + 1, format!("unknown record `{}`", other))),
            }
        }
        if seen_v != n {
            return Err(dump_err(1, format!("header promised {} vertices, found {}", n, seen_v)));
        }
        if seen_e != m {
            return Err(dump_err(1, format!("header promised {} edges, found {}", m, seen_e)));
        }
        Ok((graph, labels))
    }
}

fn insert_sorted(list: &mut Vec<u32>, v: u32) -> bool {
    match list.binary_search(&v) {
        Ok(_) => false,
        Err(pos) => {
            list.insert(pos, v);
            true
        }
    }
}

/// Geodesic counts saturate here instead of overflowing.
pub const GEODESIC_COUNT_CAP: u64 = (1u64 << 63) - 1;

/// All geodesics between a fixed pair, as a layered DAG.
#[derive(Debug, Clone)]
pub struct GeodesicDag {
    pub source: u32,
    pub target: u32,
    pub distance: u32,
    /// Vertices lying on at least one geodesic, ascending id.
    pub vertices: Vec<u32>,
    /// For `vertices[i]`, neighbors one unit closer to the source.
    pub preds: Vec<Vec<u32>>,
    /// Full distance map from the source (covers off-DAG vertices too).
    pub dist_from_source: DistMap,
    /// Number of geodesics, capped at `GEODESIC_COUNT_CAP`.
    pub count: u64,
    pub saturated: bool,
}

impl GeodesicDag {
    pub fn contains(&self, v: u32) -> bool {
        self.vertices.binary_search(&v).is_ok()
    }

    /// Enumerates all geodesics as vertex paths, up to `limit` paths.
    /// Intended for oracle scans on small graphs.
    pub fn enumerate_paths(&self, limit: usize) -> Vec<Vec<u32>> {
        let index_of = |v: u32| self.vertices.binary_search(&v).unwrap();
        let mut out = Vec::new();
        let mut stack = vec![self.target];
        self.enumerate_rec(&mut stack, index_of(self.target), &index_of, limit, &mut out);
        out
    }

    fn enumerate_rec(
        &self,
        stack: &mut Vec<u32>,
        idx: usize,
        index_of: &dyn Fn(u32) -> usize,
        limit: usize,
        out: &mut Vec<Vec<u32>>,
    ) {
        if out.len() >= limit {
            return;
        }
        let v = self.vertices[idx];
        if v == self.source {
            let mut path = stack.clone();
            path.reverse();
            out.push(path);
            return;
        }
        for &p in &self.preds[idx] {
            stack.push(p);
            self.enumerate_rec(stack, index_of(p), index_of, limit, out);
            stack.pop();
            if out.len() >= limit {
                return;
            }
        }
    }
}

/// Exact half-integer, stored as twice its value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct HalfInt(i64);

impl HalfInt {
    pub fn from_doubled(doubled: i64) -> Self {
        HalfInt(doubled)
    }

    pub fn from_int(v: i64) -> Self {
        HalfInt(v * 2)
    }

    pub fn doubled(self) -> i64 {
        self.0
    }

    pub fn floor(self) -> i64 {
        self.0.div_euclid(2)
    }

    pub fn ceil(self) -> i64 {
        (self.0 + 1).div_euclid(2)
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / 2.0
    }

    pub fn is_integer(self) -> bool {
        self.0 % 2 == 0
    }
}

impl fmt::Display for HalfInt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0 % 2 == 0 {
            write!(f, "{}", self.0 / 2)
        } else {
            write!(f, "{}/2", self.0)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub fn path_graph(n: usize) -> Graph {
        let mut g = Graph::with_vertices(n);
        for i in 1..n {
            g.add_edge((i - 1) as u32, i as u32).unwrap();
        }
        g
    }

    pub fn cycle_graph(n: usize) -> Graph {
        let mut g = path_graph(n);
        g.add_edge(0, (n - 1) as u32).unwrap();
        g
    }

    pub fn grid_graph(rows: usize, cols: usize) -> Graph {
        let mut g = Graph::with_vertices(rows * cols);
        let id = |r: usize, c: usize| (r * cols + c) as u32;
        for r in 0..rows {
            for c in 0..cols {
                if c + 1 < cols {
                    g.add_edge(id(r, c), id(r, c + 1)).unwrap();
                }
                if r + 1 < rows {
                    g.add_edge(id(r, c), id(r + 1, c)).unwrap();
                }
            }
        }
        g
    }

    #[test]
    fn labeled_multi_source_takes_least_label_over_all_geodesics() {
        // 4-cycle with sources 1 and 3: vertex 2 is equidistant from both,
        // so it must carry label of source 1 regardless of queue order.
        let g = cycle_graph(4);
        let out = g.labeled_multi_source(&[(3, 30), (1, 10)]).unwrap();
        assert_eq!(out[1], Some((0, 10)));
        assert_eq!(out[3], Some((0, 30)));
        assert_eq!(out[0], Some((1, 10)));
        assert_eq!(out[2], Some((1, 10)));
        // Duplicate source keeps the least label.
        let out2 = g.labeled_multi_source(&[(1, 7), (1, 3)]).unwrap();
        assert_eq!(out2[1], Some((0, 3)));
    }

    /// Independent reference BFS used as the oracle in this module's tests.
    fn oracle_bfs(g: &Graph, s: u32) -> Vec<Option<u32>> {
        let n = g.vertex_count();
        let mut dist = vec![None; n];
        let mut frontier = vec![s];
        dist[s as usize] = Some(0);
        let mut d = 0;
        while !frontier.is_empty() {
            let mut next = Vec::new();
            for v in frontier {
                for &w in g.neighbors(v) {
                    if dist[w as usize].is_none() {
                        dist[w as usize] = Some(d + 1);
                        next.push(w);
                    }
                }
            }
            frontier = next;
            d += 1;
        }
        dist
    }

    #[test]
    fn bfs_matches_oracle_on_grid() {
        let g = grid_graph(5, 7);
        for s in [0u32, 3, 17, 34] {
            assert_eq!(g.bfs_distances(s).unwrap(), oracle_bfs(&g, s));
        }
    }

    #[test]
    fn bfs_disconnected_has_none() {
        let mut g = path_graph(3);
        let iso = g.add_vertex();
        let d = g.bfs_distances(0).unwrap();
        assert_eq!(d[iso as usize], None);
        assert_eq!(d[2], Some(2));
    }

    #[test]
    fn path_endpoint_distance_is_length() {
        let g = path_graph(12);
        let d = g.bfs_distances(0).unwrap();
        assert_eq!(d[11], Some(11));
    }

    #[test]
    fn one_geodesic_prefers_least_id_route() {
        // 4-cycle: opposite corners 0 and 2, intermediate vertices 1 and 3.
        let g = cycle_graph(4);
        let p = g.one_geodesic(0, 2).unwrap();
        assert_eq!(p, vec![0, 1, 2]);
    }

    #[test]
    fn one_geodesic_single_vertex() {
        let g = path_graph(3);
        assert_eq!(g.one_geodesic(1, 1).unwrap(), vec![1]);
    }

    #[test]
    fn one_geodesic_unreachable_errors() {
        let mut g = path_graph(2);
        let iso = g.add_vertex();
        assert!(matches!(
            g.one_geodesic(0, iso),
            Err(GraphError::Unreachable(..))
        ));
    }

    #[test]
    fn dag_count_on_grid_is_binomial() {
        // Geodesics 0 -> opposite corner of a 3x4 grid: C(5, 2) = 10.
        let g = grid_graph(3, 4);
        let dag = g.geodesic_dag(0, 11).unwrap();
        assert_eq!(dag.distance, 5);
        assert_eq!(dag.count, 10);
        assert!(!dag.saturated);
    }

    #[test]
    fn dag_count_matches_exhaustive_enumeration() {
        // Oracle: enumerate all geodesics by DFS and compare the count,
        // on graphs small enough for an exhaustive scan.
        for g in [grid_graph(3, 4), cycle_graph(8), path_graph(9)] {
            let n = g.vertex_count() as u32;
            for (u, v) in [(0u32, n - 1), (1, n - 2)] {
                let dag = g.geodesic_dag(u, v).unwrap();
                let paths = dag.enumerate_paths(100_000);
                assert_eq!(dag.count as usize, paths.len());
                for p in &paths {
                    assert_eq!(p.len() as u32, dag.distance + 1);
                    assert_eq!(p[0], u);
                    assert_eq!(*p.last().unwrap(), v);
                    for pair in p.windows(2) {
                        assert!(g.has_edge(pair[0], pair[1]));
                    }
                }
            }
        }
    }

    #[test]
    fn dag_tree_has_unique_geodesic() {
        let g = path_graph(10);
        let dag = g.geodesic_dag(0, 9).unwrap();
        assert_eq!(dag.count, 1);
        assert_eq!(dag.vertices.len(), 10);
    }

    #[test]
    fn dag_even_cycle_has_two_geodesics() {
        let g = cycle_graph(6);
        let dag = g.geodesic_dag(0, 3).unwrap();
        assert_eq!(dag.count, 2);
    }

    #[test]
    fn gromov_product_tree_identity() {
        // In a tree, (a, b)_w equals the distance from w to the a-b geodesic.
        let mut g = Graph::with_vertices(7);
        // Star-of-paths tree: center 0, arms 0-1-2, 0-3-4, 0-5-6.
        for (u, v) in [(0, 1), (1, 2), (0, 3), (3, 4), (0, 5), (5, 6)] {
            g.add_edge(u, v).unwrap();
        }
        for (w, a, b) in [(2u32, 4u32, 6u32), (0, 2, 4), (4, 2, 6), (1, 4, 6)] {
            let gp = g.gromov_product(w, a, b).unwrap();
            let seg = g.one_geodesic(a, b).unwrap();
            let d = g.dist_to_segment(w, &seg).unwrap();
            assert!(gp.is_integer());
            assert_eq!(gp.floor(), d as i64, "w={} a={} b={}", w, a, b);
        }
    }

    #[test]
    fn gromov_product_half_integer_on_odd_cycle() {
        let g = cycle_graph(5);
        // d(0,1)=1, d(0,2)=2, d(1,2)=1: product (1+2-1)/2 = 1.
        assert_eq!(g.gromov_product(0, 1, 2).unwrap(), HalfInt::from_int(1));
        // d(0,2)=2, d(0,3)=2, d(2,3)=1: product 3/2.
        let p = g.gromov_product(0, 2, 3).unwrap();
        assert_eq!(p.doubled(), 3);
        assert!(!p.is_integer());
        assert_eq!(p.to_string(), "3/2");
    }

    #[test]
    fn dist_to_segment_rejects_non_path() {
        let g = path_graph(5);
        assert!(matches!(
            g.dist_to_segment(0, &[0, 2]),
            Err(GraphError::NotAPath(0, 2))
        ));
        assert!(matches!(g.dist_to_segment(0, &[]), Err(GraphError::EmptyPath)));
    }

    #[test]
    fn dump_round_trip_exact() {
        let g = grid_graph(3, 3);
        let labels: Vec<String> = (0..9).map(|i| format!("cell {}", i)).collect();
        let dump = g.to_dump(&labels);
        let (g2, labels2) = Graph::from_dump(&dump).unwrap();
        assert_eq!(g, g2);
        assert_eq!(labels, labels2);
        assert_eq!(dump, g2.to_dump(&labels2));
    }

    #[test]
    fn dump_errors_cite_line_numbers() {
        let text = "graph 2 1\nv 0 a\nv 1 b\ne 0 5\n";
        match Graph::from_dump(text) {
            Err(GraphError::Dump { line, .. }) => assert_eq!(line, 4),
            other => panic!("expected dump error, got {:?}", other),
        }
    }

    #[test]
    fn self_loops_rejected() {
        let mut g = Graph::with_vertices(2);
        assert!(matches!(g.add_edge(1, 1), Err(GraphError::SelfLoop(1))));
    }

    #[test]
    fn parallel_edges_deduplicated() {
        let mut g = Graph::with_vertices(2);
        g.add_edge(0, 1).unwrap();
        g.add_edge(1, 0).unwrap();
        assert_eq!(g.edge_count(), 1);
    }
}
