//! Truncated cusped spaces: a Cayley ball with a depth-truncated
//! combinatorial horoball glued along each visible peripheral coset piece.
//!
//! Level-0 horoball vertices are the group vertices of the coset piece
//! itself; the Cayley edges between coset members remain part of the space.
//! Horoballs are attached only for cosets with at least two members in the
//! ball, and each carries the intrinsic word metric of its peripheral
//! subgroup, not the ambient Cayley metric.

use std::collections::HashMap;

use thiserror::Error;

use crate::graph::{Graph, GraphError};
use crate::group::{enumerate_ball, CosetId, Element, GroupBall, GroupError, GroupSpec};
use crate::horoball::HoroballError;
use crate::rng::labeled_rng;

#[derive(Debug, Error)]
pub enum CuspedError {
    #[error(transparent)]
    Group(#[from] GroupError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Horoball(#[from] HoroballError),
    #[error("cusped ball would have about {projected} vertices, over the budget {budget}")]
    Budget { projected: usize, budget: usize },
    #[error("source vertex {0} lies inside the target horoball")]
    SourceInsideHoroball(u32),
    #[error("coset {0} has no horoball in this ball")]
    UnknownCoset(CosetId),
    #[error("horoball index {0} is out of range ({1} horoballs)")]
    UnknownHoroball(usize, usize),
    #[error("sample count must be positive")]
    NoSamples,
    #[error("no admissible samples: {0}")]
    NoAdmissibleSamples(String),
}

/// What a cusped-ball vertex is.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VertexLabel {
    /// A Cayley ball element (also serves as level 0 of any horoball whose
    /// coset contains it).
    Group(Element),
    /// Horoball interior vertex: (member element, level >= 1) of the coset's
    /// horoball, indexed by position in the registry.
    Horo {
        horoball: usize,
        base: Element,
        level: u32,
    },
}

/// One attached horoball: its coset, the member group vertices (level 0),
/// the intrinsic base metric, and where its interior block starts.
#[derive(Debug, Clone)]
pub struct HoroballRecord {
    pub coset: CosetId,
    /// Group vertex ids of the coset piece, ascending (their elements are in
    /// (length, lex) order, so ids ascend too).
    pub members: Vec<u32>,
    /// Intrinsic peripheral word metric between members.
    pub metric: Vec<Vec<u32>>,
    /// First vertex id of the level-1 block; levels are laid out level-major.
    pub interior_start: u32,
    /// Local index of the coset's canonical representative.
    pub rep_local: usize,
}

impl HoroballRecord {
    pub fn base_count(&self) -> usize {
        self.members.len()
    }

    /// Vertex id of (local base index, level); level 0 is the glued group
    /// vertex.
    pub fn vertex(&self, local: usize, level: u32) -> u32 {
        if level == 0 {
            self.members[local]
        } else {
            self.interior_start + (level - 1) * self.members.len() as u32 + local as u32
        }
    }

    pub fn contains(&self, v: u32, depth: u32) -> bool {
        if self.members.binary_search(&v).is_ok() {
            return true;
        }
        let end = self.interior_start + depth * self.members.len() as u32;
        v >= self.interior_start && v < end
    }

    /// All vertex ids of the horoball, level 0 first.
    pub fn vertex_ids(&self, depth: u32) -> Vec<u32> {
        let mut out = self.members.clone();
        let end = self.interior_start + depth * self.members.len() as u32;
        out.extend(self.interior_start..end);
        out
    }
}

/// The truncated cusped space over a Cayley ball.
#[derive(Debug, Clone)]
pub struct CuspedBall {
    pub spec: GroupSpec,
    pub r_cay: u32,
    pub depth: u32,
    pub graph: Graph,
    pub labels: Vec<VertexLabel>,
    pub ball: GroupBall,
    pub horoballs: Vec<HoroballRecord>,
    /// True within cusped distance 2 of the Cayley sphere (truncation rim).
    pub rim: Vec<bool>,
    coset_lookup: HashMap<CosetId, usize>,
}

impl CuspedBall {
    /// Vertex id of the group identity (always 0: the ball sorts by length
    /// then lex, and the identity is the unique length-0 element).
    pub fn identity_vertex(&self) -> u32 {
        0
    }

    pub fn group_vertex_count(&self) -> usize {
        self.ball.len()
    }

    pub fn is_group_vertex(&self, v: u32) -> bool {
        (v as usize) < self.ball.len()
    }

    pub fn group_vertex(&self, e: &Element) -> Option<u32> {
        self.ball.id_of(e)
    }

    pub fn element(&self, v: u32) -> Option<&Element> {
        match &self.labels[v as usize] {
            VertexLabel::Group(e) => Some(e),
            VertexLabel::Horo { .. } => None,
        }
    }

    pub fn horoball_index(&self, coset: &CosetId) -> Option<usize> {
        self.coset_lookup.get(coset).copied()
    }

    /// Registry index of the horoball containing `v`, if any. A group vertex
    /// can belong to at most one horoball per peripheral; with several
    /// peripherals the first match in registry order is returned.
    pub fn horoball_of(&self, v: u32) -> Option<usize> {
        match &self.labels[v as usize] {
            VertexLabel::Horo { horoball, .. } => Some(*horoball),
            VertexLabel::Group(_) => self
                .horoballs
                .iter()
                .position(|h| h.members.binary_search(&v).is_ok()),
        }
    }

    pub fn in_horoball(&self, v: u32, horoball: usize) -> bool {
        self.horoballs[horoball].contains(v, self.depth)
    }

    /// Depth-D vertex over the coset's canonical representative: the finite
    /// proxy for the parabolic point of this horoball.
    pub fn apex(&self, horoball: usize) -> u32 {
        let h = &self.horoballs[horoball];
        h.vertex(h.rep_local, self.depth)
    }

    pub fn sphere_vertices(&self) -> Vec<u32> {
        (0..self.ball.len() as u32)
            .filter(|&v| self.ball.get(v).word_len() == self.r_cay)
            .collect()
    }

    pub fn label_string(&self, v: u32) -> String {
        match &self.labels[v as usize] {
            VertexLabel::Group(e) => format!("G {}", self.spec.format_element(e)),
            VertexLabel::Horo { horoball, base, level } => {
                format!("H {} {} {}", horoball, self.spec.format_element(base), level)
            }
        }
    }

    pub fn to_dump(&self) -> String {
        let labels: Vec<String> = (0..self.graph.vertex_count() as u32)
            .map(|v| self.label_string(v))
            .collect();
        self.graph.to_dump(&labels)
    }

    /// Registry sidecar: one line per horoball with its coset, member ids
    /// and interior block extent.
    pub fn registry_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "cusped r_cay {} depth {} vertices {} group {} horoballs {}\n",
            self.r_cay,
            self.depth,
            self.graph.vertex_count(),
            self.ball.len(),
            self.horoballs.len()
        ));
        for (i, h) in self.horoballs.iter().enumerate() {
            let members: Vec<String> = h.members.iter().map(|m| m.to_string()).collect();
            out.push_str(&format!(
                "horoball {} peripheral {} rep {} interior {}..{} members {}\n",
                i,
                h.coset.peripheral,
                self.spec.format_element(&h.coset.rep),
                h.interior_start,
                h.interior_start + self.depth * h.members.len() as u32,
                members.join(" ")
            ));
        }
        out
    }
}

/// Builds the truncated cusped space: Cayley ball of radius `r_cay`, plus a
/// depth-`depth` horoball per coset with at least 2 ball members.
pub fn build_cusped_ball(
    spec: &GroupSpec,
    r_cay: u32,
    depth: u32,
    budget: usize,
) -> Result<CuspedBall, CuspedError> {
    let ball = enumerate_ball(spec, r_cay, budget)?;
    debug_assert!(ball.get(0).is_identity());

    // Partition the ball into coset pieces per peripheral.
    let mut pieces: HashMap<CosetId, Vec<u32>> = HashMap::new();
    for (i, e) in ball.elements.iter().enumerate() {
        for p in 0..spec.peripherals.len() {
            let c = spec.coset_of(e, p)?;
            pieces.entry(c).or_default().push(i as u32);
        }
    }
    let mut cosets: Vec<(CosetId, Vec<u32>)> = pieces
        .into_iter()
        .filter(|(_, members)| members.len() >= 2)
        .collect();
    cosets.sort_by(|a, b| a.0.cmp(&b.0));

    let interior: usize = cosets
        .iter()
        .map(|(_, m)| m.len() * depth as usize)
        .sum();
    let projected = ball.len() + interior;
    if projected > budget {
        return Err(CuspedError::Budget { projected, budget });
    }
    if depth == 0 && !cosets.is_empty() {
        return Err(CuspedError::Horoball(HoroballError::DepthZero));
    }

    let mut graph = Graph::with_vertices(projected);
    let mut labels: Vec<VertexLabel> = ball
        .elements
        .iter()
        .map(|e| VertexLabel::Group(e.clone()))
        .collect();

    // Cayley edges.
    let syms = spec.edge_symbols();
    for (i, e) in ball.elements.iter().enumerate() {
        for &s in &syms {
            let n = spec.right_multiply_sym(e, s);
            if let Some(j) = ball.id_of(&n) {
                if (i as u32) < j {
                    graph.add_edge(i as u32, j)?;
                }
            }
        }
    }

    // Horoballs: members ascend by vertex id (= element order). Interior
    // vertices are laid out level-major per horoball.
    let mut horoballs = Vec::with_capacity(cosets.len());
    let mut coset_lookup = HashMap::with_capacity(cosets.len());
    let mut next_id = ball.len() as u32;
    for (idx, (coset, members)) in cosets.into_iter().enumerate() {
        debug_assert!(members.windows(2).all(|w| w[0] < w[1]));
        let n = members.len();
        let mut metric = vec![vec![0u32; n]; n];
        for a in 0..n {
            for b in (a + 1)..n {
                let d = spec.peripheral_distance(
                    ball.get(members[a]),
                    ball.get(members[b]),
                    coset.peripheral,
                )?;
                metric[a][b] = d;
                metric[b][a] = d;
            }
        }
        crate::horoball::validate_metric(&metric)?;
        let rep_local = members
            .iter()
            .position(|&m| *ball.get(m) == coset.rep)
            .expect("canonical representative lies in its own piece");
        let rec = HoroballRecord {
            coset: coset.clone(),
            members,
            metric,
            interior_start: next_id,
            rep_local,
        };
        for level in 1..=depth {
            for local in 0..n {
                let v = rec.vertex(local, level);
                debug_assert_eq!(v, next_id + (level - 1) * n as u32 + local as u32);
                let e = ball.get(rec.members[local]).clone();
                labels.push(VertexLabel::Horo {
                    horoball: idx,
                    base: e,
                    level,
                });
            }
        }
        // Vertical edges, including level 0 -> 1 onto the group vertices.
        for local in 0..n {
            for level in 0..depth {
                graph.add_edge(rec.vertex(local, level), rec.vertex(local, level + 1))?;
            }
        }
        // Horizontal edges at levels >= 1: base distance within 2^level.
        for level in 1..=depth {
            let reach = 1u64.checked_shl(level).unwrap_or(u64::MAX);
            for a in 0..n {
                for b in (a + 1)..n {
                    if rec.metric[a][b] as u64 <= reach {
                        graph.add_edge(rec.vertex(a, level), rec.vertex(b, level))?;
                    }
                }
            }
        }
        next_id += depth * n as u32;
        coset_lookup.insert(coset, idx);
        horoballs.push(rec);
    }
    debug_assert_eq!(next_id as usize, projected);
    debug_assert_eq!(labels.len(), projected);

    // Rim: within cusped distance 2 of the Cayley sphere.
    let sphere: Vec<u32> = (0..ball.len() as u32)
        .filter(|&v| ball.get(v).word_len() == r_cay)
        .collect();
    let mut rim = vec![false; projected];
    if !sphere.is_empty() {
        let dist = graph.multi_source_distances(&sphere)?;
        for (v, d) in dist.iter().enumerate() {
            if let Some(d) = d {
                if *d <= 2 {
                    rim[v] = true;
                }
            }
        }
    }

    Ok(CuspedBall {
        spec: spec.clone(),
        r_cay,
        depth,
        graph,
        labels,
        ball,
        horoballs,
        rim,
        coset_lookup,
    })
}

/// First-entry points into a horoball: every vertex w of the horoball that
/// starts the horoball-interior part of some geodesic from `from` to some
/// horoball vertex. Characterization used: w qualifies exactly when some
/// neighbor u outside the horoball has d_avoiding(from,u) + 1 = d(from,w),
/// where d_avoiding is BFS distance in the complement of the horoball.
#[derive(Debug, Clone)]
pub struct EntrySet {
    pub vertices: Vec<u32>,
    pub diameter: u32,
}

pub fn first_entry_points(
    cb: &CuspedBall,
    from: u32,
    horoball: usize,
) -> Result<EntrySet, CuspedError> {
    let rec = cb
        .horoballs
        .get(horoball)
        .ok_or(CuspedError::UnknownHoroball(horoball, cb.horoballs.len()))?;
    if rec.contains(from, cb.depth) {
        return Err(CuspedError::SourceInsideHoroball(from));
    }
    let full = cb.graph.bfs_distances(from)?;
    let inside: Vec<bool> = {
        let mut m = vec![false; cb.graph.vertex_count()];
        for v in rec.vertex_ids(cb.depth) {
            m[v as usize] = true;
        }
        m
    };
    // BFS in the complement of the horoball.
    let mut avoid: Vec<Option<u32>> = vec![None; cb.graph.vertex_count()];
    avoid[from as usize] = Some(0);
    let mut queue = std::collections::VecDeque::from([from]);
    while let Some(v) = queue.pop_front() {
        let d = avoid[v as usize].unwrap();
        for &w in cb.graph.neighbors(v) {
            if !inside[w as usize] && avoid[w as usize].is_none() {
                avoid[w as usize] = Some(d + 1);
                queue.push_back(w);
            }
        }
    }
    let mut vertices = Vec::new();
    for v in rec.vertex_ids(cb.depth) {
        let Some(dv) = full[v as usize] else { continue };
        let qualifies = cb.graph.neighbors(v).iter().any(|&u| {
            !inside[u as usize] && avoid[u as usize] == Some(dv.saturating_sub(1)) && dv > 0
        });
        if qualifies {
            vertices.push(v);
        }
    }
    vertices.sort_unstable();
    if vertices.is_empty() {
        return Err(CuspedError::NoAdmissibleSamples(format!(
            "horoball {} unreachable from vertex {}",
            horoball, from
        )));
    }
    let diameter = set_diameter(&cb.graph, &vertices)?;
    Ok(EntrySet { vertices, diameter })
}

fn set_diameter(graph: &Graph, vs: &[u32]) -> Result<u32, CuspedError> {
    let mut best = 0;
    for &v in vs {
        let d = graph.bfs_distances(v)?;
        for &w in vs {
            if let Some(dw) = d[w as usize] {
                best = best.max(dw);
            }
        }
    }
    Ok(best)
}

/// Visual-boundedness measurements: max first-entry diameter over sampled
/// (exterior vertex, horoball) pairs, and max nearest-point projection image
/// diameter over sampled vertex-disjoint geodesic pairs.
#[derive(Debug, Clone)]
pub struct C4Report {
    pub max_entry_diameter: u32,
    pub entry_samples: usize,
    /// Per-horoball max entry diameter, registry-indexed, for spread checks.
    pub per_horoball: Vec<u32>,
    pub max_projection_diameter: u32,
    pub projection_samples: usize,
}

impl C4Report {
    pub fn c4(&self) -> u32 {
        self.max_entry_diameter.max(self.max_projection_diameter)
    }
}

pub fn measure_c4(cb: &CuspedBall, samples: usize, seed: u64) -> Result<C4Report, CuspedError> {
    use rand::Rng;
    if samples == 0 {
        return Err(CuspedError::NoSamples);
    }
    if cb.horoballs.is_empty() {
        return Err(CuspedError::NoAdmissibleSamples("no horoballs".into()));
    }
    // Candidate sources: non-rim group vertices. A vertex is admissible for
    // a given horoball when it lies outside that horoball (it may well lie
    // inside another: the peripheral cosets cover the group).
    let candidates: Vec<u32> = (0..cb.ball.len() as u32)
        .filter(|&v| !cb.rim[v as usize])
        .collect();
    if candidates.is_empty() {
        return Err(CuspedError::NoAdmissibleSamples(
            "every group vertex is within 2 of the truncation sphere".into(),
        ));
    }
    let mut rng = labeled_rng(seed, "c4-entries");
    let mut per_horoball = vec![0u32; cb.horoballs.len()];
    let mut max_entry = 0;
    let mut entry_samples = 0;
    for _ in 0..samples {
        let from = candidates[rng.gen_range(0..candidates.len())];
        let h = rng.gen_range(0..cb.horoballs.len());
        if cb.horoballs[h].contains(from, cb.depth) {
            continue;
        }
        match first_entry_points(cb, from, h) {
            Ok(es) => {
                max_entry = max_entry.max(es.diameter);
                per_horoball[h] = per_horoball[h].max(es.diameter);
                entry_samples += 1;
            }
            Err(CuspedError::NoAdmissibleSamples(_)) => {}
            Err(e) => return Err(e),
        }
    }
    if entry_samples == 0 {
        return Err(CuspedError::NoAdmissibleSamples(
            "no reachable (vertex, horoball) pair was sampled".into(),
        ));
    }

    // Projection part: disjoint geodesic pairs among non-rim vertices.
    let eligible: Vec<u32> = (0..cb.graph.vertex_count() as u32)
        .filter(|&v| !cb.rim[v as usize])
        .collect();
    let mut rng = labeled_rng(seed, "c4-projections");
    let mut max_proj = 0;
    let mut projection_samples = 0;
    for _ in 0..samples {
        let a = eligible[rng.gen_range(0..eligible.len())];
        let b = eligible[rng.gen_range(0..eligible.len())];
        let c = eligible[rng.gen_range(0..eligible.len())];
        let d = eligible[rng.gen_range(0..eligible.len())];
        if a == b || c == d {
            continue;
        }
        let (Ok(g1), Ok(g2)) = (cb.graph.one_geodesic(a, b), cb.graph.one_geodesic(c, d)) else {
            continue;
        };
        let s1: std::collections::HashSet<u32> = g1.iter().copied().collect();
        if g2.iter().any(|v| s1.contains(v)) {
            continue;
        }
        for (base, other) in [(&g1, &g2), (&g2, &g1)] {
            let sources: Vec<(u32, u32)> = base
                .iter()
                .enumerate()
                .map(|(i, &v)| (v, i as u32))
                .collect();
            let labels = cb.graph.labeled_multi_source(&sources)?;
            let mut lo = u32::MAX;
            let mut hi = 0;
            for &v in other.iter() {
                if let Some((_, pos)) = labels[v as usize] {
                    lo = lo.min(pos);
                    hi = hi.max(pos);
                }
            }
            if lo <= hi {
                // Both endpoints of the image lie on the geodesic `base`,
                // where graph distance equals index distance.
                max_proj = max_proj.max(hi - lo);
            }
        }
        projection_samples += 1;
    }
    Ok(C4Report {
        max_entry_diameter: max_entry,
        entry_samples,
        per_horoball,
        max_projection_diameter: max_proj,
        projection_samples,
    })
}

/// Proper-embeddedness moduli at scale r: the largest word-metric distance
/// among group vertex pairs within cusped distance r, and the largest
/// intrinsic base distance among same-level horoball pairs within cusped
/// distance r.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModulusReport {
    pub r: u32,
    pub group: u32,
    pub horoball: u32,
}

pub fn embedded_modulus(cb: &CuspedBall, r: u32) -> Result<ModulusReport, CuspedError> {
    let mut group = 0u32;
    for v in 0..cb.ball.len() as u32 {
        let ev = cb.ball.get(v);
        for (w, dw) in cb.graph.bfs_within(v, r)? {
            if w > v && cb.is_group_vertex(w) {
                debug_assert!(dw <= r);
                group = group.max(cb.spec.distance(ev, cb.ball.get(w)));
            }
        }
    }
    let mut horoball = 0u32;
    for (hi, rec) in cb.horoballs.iter().enumerate() {
        for level in 1..=cb.depth {
            for a in 0..rec.base_count() {
                let v = rec.vertex(a, level);
                for (w, _) in cb.graph.bfs_within(v, r)? {
                    if w <= v {
                        continue;
                    }
                    if let VertexLabel::Horo {
                        horoball: h2,
                        level: l2,
                        ..
                    } = &cb.labels[w as usize]
                    {
                        if *h2 == hi && *l2 == level {
                            let b = (w - rec.interior_start) as usize
                                - (level as usize - 1) * rec.base_count();
                            horoball = horoball.max(rec.metric[a][b]);
                        }
                    }
                }
            }
        }
    }
    Ok(ModulusReport { r, group, horoball })
}
