//! Discretized boundary at infinity: horizon, boundary classes, shadows,
//! rings, and the horoball-shadow covering.
//!
//! The horizon is the set of non-rim vertices at distance >= rho from the
//! identity, excluding the anchor's own horoball (or the anchor vertex).
//! Two horizon vertices represent the same boundary point when their Gromov
//! product based at the identity reaches the glue threshold tau; the
//! transitive closure of that relation is taken explicitly, so classes form
//! a genuine partition. Shadows emanate from the anchor's proxy vertex and
//! quantify over every geodesic to every class member: b lies in the shadow
//! of B(x,R) exactly when x comes within R of the union of geodesic cones
//! of b's members. Scale parameters t of rings live on the integer lattice
//! ln t = d(x1, x2).

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::cusped::{CuspedBall, CuspedError};
use crate::graph::{DistMap, Graph, GraphError};
use crate::group::CosetId;
use crate::rng::labeled_rng;

#[derive(Debug, Error)]
pub enum BoundaryError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Cusped(#[from] CuspedError),
    #[error("horizon radius {rho} must stay below R_cay - 2 = {limit} to clear the rim")]
    RhoTooLarge { rho: u32, limit: u32 },
    #[error("glue threshold must be at least 1")]
    TauZero,
    #[error("anchor coset {0} has no horoball in this space")]
    AnchorNotAttached(CosetId),
    #[error("anchor vertex {0} is out of range")]
    AnchorOutOfRange(u32),
    #[error("anchor proxy {0} lies on the truncation rim; enlarge R_cay or the depth")]
    ProxyOnRim(u32),
    #[error("horizon is empty at rho = {rho}; enlarge R_cay")]
    EmptyHorizon { rho: u32 },
    #[error("boundary class {class} contains apexes of two horoballs ({first} and {second}); raise tau or rho to separate them")]
    ApexCollision { class: u32, first: CosetId, second: CosetId },
    #[error("shadow center is the anchor proxy itself")]
    CenterIsProxy,
    #[error("shadow center {0} is unreachable from the proxy")]
    CenterUnreachable(u32),
    #[error("arc position {pos} exceeds the designated geodesic length {len}")]
    PositionOutOfRange { pos: u32, len: u32 },
    #[error("inner shadow is not contained in the outer shadow; witness class {witness}")]
    ContainmentFailure { witness: u32 },
    #[error("class id {0} is out of range ({1} classes)")]
    UnknownClass(u32, usize),
    #[error("horoball's parabolic point is the anchor itself")]
    SelfShadow,
    #[error("horoball over {0} has no boundary class (apex off the horizon)")]
    NoParabolicClass(CosetId),
    #[error("designated geodesic never meets the horoball")]
    GeodesicMissesHoroball,
    #[error("sample count must be positive")]
    NoSamples,
    #[error("no admissible samples: {0}")]
    NoAdmissibleSamples(String),
}

/// Where the atlas is anchored: the base point xi at infinity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AnchorSpec {
    /// The parabolic point of this peripheral coset; the proxy is the
    /// depth-D vertex over the coset's canonical representative, and the
    /// whole horoball is removed from the horizon.
    Parabolic(CosetId),
    /// An explicit vertex used as the proxy (typically a horizon vertex or
    /// the identity); only that vertex is removed from the horizon.
    Horizon(u32),
}

/// One boundary point: an equivalence class of horizon vertices.
#[derive(Debug, Clone)]
pub struct BoundaryClass {
    /// Deepest member (greatest proxy distance, ties to the least id); the
    /// endpoint of the designated geodesic.
    pub rep: u32,
    /// Ascending member vertex ids.
    pub members: Vec<u32>,
    /// Set when the class contains the apex of a horoball.
    pub parabolic: Option<CosetId>,
}

/// A shadow: the boundary classes hit by geodesics from the proxy through
/// the ball B(center, radius). Member class ids ascend.
#[derive(Debug, Clone)]
pub struct Shadow {
    pub center: u32,
    pub radius: u32,
    pub members: Arc<Vec<u32>>,
}

impl Shadow {
    pub fn contains(&self, class: u32) -> bool {
        self.members.binary_search(&class).is_ok()
    }

    pub fn is_subset_of(&self, other: &Shadow) -> bool {
        subset(&self.members, &other.members)
    }

    /// First member of `self` missing from `other`, if any.
    pub fn subset_witness(&self, other: &Shadow) -> Option<u32> {
        self.members
            .iter()
            .copied()
            .find(|c| !other.contains(*c))
    }
}

fn subset(a: &[u32], b: &[u32]) -> bool {
    let mut it = b.iter();
    'outer: for x in a {
        for y in it.by_ref() {
            match y.cmp(x) {
                std::cmp::Ordering::Equal => continue 'outer,
                std::cmp::Ordering::Greater => return false,
                std::cmp::Ordering::Less => {}
            }
        }
        return false;
    }
    true
}

/// A nested pair of shadows centered on the designated geodesic toward one
/// boundary class; ln t = s1 - s2 on the integer lattice.
#[derive(Debug, Clone)]
pub struct Ring {
    pub class: u32,
    pub s1: u32,
    pub s2: u32,
    pub radius: u32,
    pub inner: Shadow,
    pub outer: Shadow,
}

impl Ring {
    pub fn ln_t(&self) -> u32 {
        self.s1 - self.s2
    }
}

/// The discretized boundary of one cusped ball, anchored at xi.
pub struct BoundaryAtlas {
    pub space: Arc<CuspedBall>,
    pub anchor: AnchorSpec,
    pub proxy: u32,
    pub rho: u32,
    pub tau: u32,
    /// Ascending horizon vertex ids.
    pub horizon: Vec<u32>,
    /// Classes ordered by representative id.
    pub classes: Vec<BoundaryClass>,
    /// Class counts when gluing at tau-1 / tau+1 (sensitivity report).
    pub class_count_tau_minus: usize,
    pub class_count_tau_plus: usize,
    /// Distances from the proxy.
    ds_proxy: DistMap,
    /// Per vertex: ascending class ids whose geodesic cone contains it.
    cone_index: Vec<Vec<u32>>,
    /// Least-id predecessor toward the proxy (on some geodesic), per vertex.
    pred: Vec<Option<u32>>,
    class_of_vertex: HashMap<u32, u32>,
    parabolic_lookup: HashMap<CosetId, u32>,
    shadow_cache: Mutex<HashMap<(u32, u32), Arc<Vec<u32>>>>,
}

impl std::fmt::Debug for BoundaryAtlas {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BoundaryAtlas")
            .field("anchor", &self.anchor)
            .field("proxy", &self.proxy)
            .field("rho", &self.rho)
            .field("tau", &self.tau)
            .field("horizon", &self.horizon.len())
            .field("classes", &self.classes.len())
            .finish()
    }
}

struct Dsu {
    parent: Vec<u32>,
}

impl Dsu {
    fn new(n: usize) -> Dsu {
        Dsu {
            parent: (0..n as u32).collect(),
        }
    }

    fn find(&mut self, x: u32) -> u32 {
        let mut root = x;
        while self.parent[root as usize] != root {
            root = self.parent[root as usize];
        }
        let mut cur = x;
        while self.parent[cur as usize] != root {
            let next = self.parent[cur as usize];
            self.parent[cur as usize] = root;
            cur = next;
        }
        root
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // Smaller root wins, keeping representatives least-id.
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi as usize] = lo;
        }
    }
}

/// All pairs (u, v) of `sources` with doubled Gromov product
/// d(e,u) + d(e,v) - d(u,v) >= floor, as (source index, source index, product)
/// with the first index strictly smaller. Runs 64 breadth-first searches at a
/// time with bitset frontiers; each bit spreads as an independent BFS, so the
/// level a bit first reaches a vertex is the exact distance.
fn merge_pairs(
    graph: &Graph,
    sources: &[u32],
    dse: &[Option<u32>],
    floor: i64,
) -> Vec<(u32, u32, i64)> {
    let n = graph.vertex_count() as usize;
    let mut pos_of = vec![u32::MAX; n];
    for (i, &v) in sources.iter().enumerate() {
        pos_of[v as usize] = i as u32;
    }
    let mut out = Vec::new();
    let mut reached = vec![0u64; n];
    let mut cur_mask = vec![0u64; n];
    let mut next_mask = vec![0u64; n];
    for batch_start in (0..sources.len()).step_by(64) {
        let batch = &sources[batch_start..(batch_start + 64).min(sources.len())];
        for w in reached.iter_mut() {
            *w = 0;
        }
        let mut cur: Vec<u32> = Vec::with_capacity(batch.len());
        for (i, &s) in batch.iter().enumerate() {
            reached[s as usize] |= 1 << i;
            cur_mask[s as usize] |= 1 << i;
            cur.push(s);
        }
        let mut level: i64 = 0;
        while !cur.is_empty() {
            for &w in &cur {
                let pw = pos_of[w as usize];
                if pw == u32::MAX {
                    continue;
                }
                let dse_w = dse[w as usize].expect("sources are identity-reachable") as i64;
                let mut bits = cur_mask[w as usize];
                while bits != 0 {
                    let i = bits.trailing_zeros() as usize;
                    bits &= bits - 1;
                    let ps = (batch_start + i) as u32;
                    if ps >= pw {
                        continue;
                    }
                    let dse_s = dse[batch[i] as usize].expect("sources are identity-reachable");
                    let doubled = dse_s as i64 + dse_w - level;
                    if doubled >= floor {
                        out.push((ps, pw, doubled));
                    }
                }
            }
            let mut next: Vec<u32> = Vec::new();
            for &v in &cur {
                let m = cur_mask[v as usize];
                for &w in graph.neighbors(v) {
                    let new = m & !reached[w as usize];
                    if new != 0 {
                        if next_mask[w as usize] == 0 {
                            next.push(w);
                        }
                        next_mask[w as usize] |= new;
                        reached[w as usize] |= new;
                    }
                }
            }
            for &v in &cur {
                cur_mask[v as usize] = 0;
            }
            std::mem::swap(&mut cur_mask, &mut next_mask);
            cur = next;
            level += 1;
        }
    }
    out
}

/// Builds the atlas: horizon, tau-glued classes, parabolic tags, geodesic
/// cones and the inverted cone index.
pub fn build_atlas(
    space: Arc<CuspedBall>,
    anchor: AnchorSpec,
    rho: u32,
    tau: u32,
) -> Result<BoundaryAtlas, BoundaryError> {
    if rho + 2 >= space.r_cay {
        return Err(BoundaryError::RhoTooLarge {
            rho,
            limit: space.r_cay.saturating_sub(2),
        });
    }
    if tau == 0 {
        return Err(BoundaryError::TauZero);
    }
    let n = space.graph.vertex_count();
    let (proxy, excluded): (u32, Vec<u32>) = match &anchor {
        AnchorSpec::Parabolic(coset) => {
            let h = space
                .horoball_index(coset)
                .ok_or_else(|| BoundaryError::AnchorNotAttached(coset.clone()))?;
            let proxy = space.apex(h);
            (proxy, space.horoballs[h].vertex_ids(space.depth))
        }
        AnchorSpec::Horizon(v) => {
            if *v as usize >= n {
                return Err(BoundaryError::AnchorOutOfRange(*v));
            }
            (*v, vec![*v])
        }
    };
    if space.rim[proxy as usize] {
        return Err(BoundaryError::ProxyOnRim(proxy));
    }
    let mut excluded_mask = vec![false; n];
    for &v in &excluded {
        excluded_mask[v as usize] = true;
    }

    let ds_identity = space.graph.bfs_distances(space.identity_vertex())?;
    let ds_proxy = space.graph.bfs_distances(proxy)?;

    let horizon: Vec<u32> = (0..n as u32)
        .filter(|&v| {
            !space.rim[v as usize]
                && !excluded_mask[v as usize]
                && ds_identity[v as usize].map_or(false, |d| d >= rho)
                && ds_proxy[v as usize].is_some()
        })
        .collect();
    if horizon.is_empty() {
        return Err(BoundaryError::EmptyHorizon { rho });
    }
    let horizon_pos: HashMap<u32, u32> = horizon
        .iter()
        .enumerate()
        .map(|(i, &v)| (v, i as u32))
        .collect();

    // Products compare via 2(u|v)_e = d(e,u) + d(e,v) - d(u,v), all integers.
    // A pair can only clear the tau-1 merge floor when both endpoints sit at
    // d(e,.) >= tau-1, so only those vertices need a distance row.
    let mergeable: Vec<u32> = horizon
        .iter()
        .copied()
        .filter(|&v| ds_identity[v as usize].is_some_and(|d| d + 1 >= tau))
        .collect();
    let merge_t = std::time::Instant::now();
    let merges = merge_pairs(
        &space.graph,
        &mergeable,
        &ds_identity,
        2 * (tau as i64 - 1),
    );
    log::debug!(
        "atlas merge scan: {} mergeable of {} horizon, {} pairs, {:?}",
        mergeable.len(),
        horizon.len(),
        merges.len(),
        merge_t.elapsed()
    );

    let mut dsu = Dsu::new(horizon.len());
    let mut dsu_minus = Dsu::new(horizon.len());
    let mut dsu_plus = Dsu::new(horizon.len());
    for &(mu, mv, doubled) in &merges {
        let ui = horizon_pos[&mergeable[mu as usize]];
        let vi = horizon_pos[&mergeable[mv as usize]];
        if doubled >= 2 * (tau as i64 - 1) {
            dsu_minus.union(ui, vi);
        }
        if doubled >= 2 * tau as i64 {
            dsu.union(ui, vi);
        }
        if doubled >= 2 * (tau as i64 + 1) {
            dsu_plus.union(ui, vi);
        }
    }
    // Horoball interiors cohere: every vertex at level >= 1 lies on geodesic
    // rays converging to the horoball's single parabolic point, so horizon
    // members of one horoball glue as one direction. The product floor alone
    // misses this near the base point (rays into a nearby horoball diverge
    // immediately), fragmenting the cusp into spurious singletons. Level-0
    // vertices stay subject to the product rule: they live in the Cayley part
    // where rays pass through.
    for rec in space.horoballs.iter() {
        let mut first: Option<u32> = None;
        for local in 0..rec.members.len() {
            for level in 1..=space.depth {
                let Some(&pos) = horizon_pos.get(&rec.vertex(local, level)) else {
                    continue;
                };
                match first {
                    None => first = Some(pos),
                    Some(f) => {
                        dsu_minus.union(f, pos);
                        dsu.union(f, pos);
                        dsu_plus.union(f, pos);
                    }
                }
            }
        }
    }
    let count_components = |d: &mut Dsu| {
        let mut roots = std::collections::HashSet::new();
        for i in 0..horizon.len() as u32 {
            roots.insert(d.find(i));
        }
        roots.len()
    };
    let class_count_tau_minus = count_components(&mut dsu_minus);
    let class_count_tau_plus = count_components(&mut dsu_plus);

    // Classes ordered by least member vertex id. The representative is the
    // deepest member (greatest proxy distance, ties to the least id): the
    // designated geodesic then runs as far toward the boundary point as the
    // truncation allows, and for a parabolic class it descends into the
    // class's own horoball rather than stopping at an absorbed vertex near
    // the rim.
    let mut by_root: HashMap<u32, Vec<u32>> = HashMap::new();
    for (i, &v) in horizon.iter().enumerate() {
        by_root.entry(dsu.find(i as u32)).or_default().push(v);
    }
    let mut classes: Vec<BoundaryClass> = by_root
        .into_values()
        .map(|members| {
            let rep = members
                .iter()
                .copied()
                .max_by_key(|&v| {
                    let d = ds_proxy[v as usize].expect("horizon is proxy-reachable");
                    (d, std::cmp::Reverse(v))
                })
                .expect("classes are non-empty");
            BoundaryClass {
                rep,
                members,
                parabolic: None,
            }
        })
        .collect();
    classes.sort_by_key(|c| c.members[0]);
    let mut class_of_vertex = HashMap::new();
    for (ci, c) in classes.iter().enumerate() {
        debug_assert!(c.members.windows(2).all(|w| w[0] < w[1]));
        for &v in &c.members {
            class_of_vertex.insert(v, ci as u32);
        }
    }

    // Parabolic tags: classes containing a horoball apex.
    let mut parabolic_lookup = HashMap::new();
    for (hi, rec) in space.horoballs.iter().enumerate() {
        let apex = space.apex(hi);
        if let Some(&ci) = class_of_vertex.get(&apex) {
            let class = &mut classes[ci as usize];
            if let Some(first) = &class.parabolic {
                return Err(BoundaryError::ApexCollision {
                    class: ci,
                    first: first.clone(),
                    second: rec.coset.clone(),
                });
            }
            class.parabolic = Some(rec.coset.clone());
            parabolic_lookup.insert(rec.coset.clone(), ci);
        }
    }

    // Inverted cone index: vertex -> classes whose cone contains it. A vertex
    // w lies on some proxy-to-member geodesic iff w reaches a member along the
    // proxy BFS DAG (steps raise d(proxy,.) by 1), so each class cone is one
    // reverse-DAG sweep from its member set.
    let cone_t = std::time::Instant::now();
    let cones: Vec<Vec<u32>> = classes
        .par_iter()
        .map(|c| {
            let mut seen = vec![false; n];
            let mut stack: Vec<u32> = Vec::new();
            for &m in &c.members {
                if !seen[m as usize] {
                    seen[m as usize] = true;
                    stack.push(m);
                }
            }
            let mut cone = Vec::new();
            while let Some(x) = stack.pop() {
                cone.push(x);
                let dx = ds_proxy[x as usize].expect("cone vertices are proxy-reachable");
                if dx == 0 {
                    continue;
                }
                for &w in space.graph.neighbors(x) {
                    if !seen[w as usize] && ds_proxy[w as usize] == Some(dx - 1) {
                        seen[w as usize] = true;
                        stack.push(w);
                    }
                }
            }
            cone
        })
        .collect();
    let mut cone_index: Vec<Vec<u32>> = vec![Vec::new(); n];
    for (ci, cone) in cones.iter().enumerate() {
        for &w in cone {
            cone_index[w as usize].push(ci as u32);
        }
    }
    log::debug!("atlas cones: {} classes, {:?}", classes.len(), cone_t.elapsed());

    // Least-id predecessor toward the proxy, per reachable vertex.
    let mut pred: Vec<Option<u32>> = vec![None; n];
    for v in 0..n as u32 {
        let Some(d) = ds_proxy[v as usize] else { continue };
        if d == 0 {
            continue;
        }
        pred[v as usize] = space
            .graph
            .neighbors(v)
            .iter()
            .copied()
            .find(|&u| ds_proxy[u as usize] == Some(d - 1));
    }

    Ok(BoundaryAtlas {
        space,
        anchor,
        proxy,
        rho,
        tau,
        horizon,
        classes,
        class_count_tau_minus,
        class_count_tau_plus,
        ds_proxy,
        cone_index,
        pred,
        class_of_vertex,
        parabolic_lookup,
        shadow_cache: Mutex::new(HashMap::new()),
    })
}

impl BoundaryAtlas {
    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    pub fn parabolic_class_count(&self) -> usize {
        self.classes.iter().filter(|c| c.parabolic.is_some()).count()
    }

    pub fn class_of_vertex(&self, v: u32) -> Option<u32> {
        self.class_of_vertex.get(&v).copied()
    }

    pub fn parabolic_class(&self, coset: &CosetId) -> Option<u32> {
        self.parabolic_lookup.get(coset).copied()
    }

    pub fn proxy_distance(&self, v: u32) -> Option<u32> {
        self.ds_proxy[v as usize]
    }

    /// The designated geodesic from the proxy to the class representative,
    /// realized by the breadth-first predecessor chain.
    pub fn designated_geodesic(&self, class: u32) -> Result<Vec<u32>, BoundaryError> {
        let c = self
            .classes
            .get(class as usize)
            .ok_or(BoundaryError::UnknownClass(class, self.classes.len()))?;
        let mut path = vec![c.rep];
        let mut cur = c.rep;
        while let Some(p) = self.pred[cur as usize] {
            path.push(p);
            cur = p;
        }
        debug_assert_eq!(cur, self.proxy);
        path.reverse();
        Ok(path)
    }

    /// Classes whose geodesic cone contains `v`, ascending.
    pub fn classes_through(&self, v: u32) -> &[u32] {
        &self.cone_index[v as usize]
    }

    /// Walks `k` predecessor steps from `v` toward the proxy, clamping at
    /// the proxy.
    pub fn backoff(&self, v: u32, k: u32) -> u32 {
        let mut cur = v;
        for _ in 0..k {
            match self.pred[cur as usize] {
                Some(p) => cur = p,
                None => break,
            }
        }
        cur
    }

    /// The shadow of B(center, radius): all classes whose cone meets the
    /// ball. Memoized; members Arc-shared.
    pub fn shadow(&self, center: u32, radius: u32) -> Result<Shadow, BoundaryError> {
        if center == self.proxy {
            return Err(BoundaryError::CenterIsProxy);
        }
        if self.ds_proxy[center as usize].is_none() {
            return Err(BoundaryError::CenterUnreachable(center));
        }
        if self.space.rim[center as usize] {
            log::warn!("shadow center {} lies on the truncation rim", center);
        }
        if let Some(hit) = self.shadow_cache.lock().unwrap().get(&(center, radius)) {
            return Ok(Shadow {
                center,
                radius,
                members: Arc::clone(hit),
            });
        }
        let mut members: Vec<u32> = Vec::new();
        for (w, _) in self.space.graph.bfs_within(center, radius)? {
            members.extend_from_slice(&self.cone_index[w as usize]);
        }
        members.sort_unstable();
        members.dedup();
        let members = Arc::new(members);
        self.shadow_cache
            .lock()
            .unwrap()
            .insert((center, radius), Arc::clone(&members));
        Ok(Shadow {
            center,
            radius,
            members,
        })
    }

    /// The shadow of an arbitrary vertex set: classes whose cone meets it.
    pub fn shadow_of_set(&self, zs: &[u32]) -> Vec<u32> {
        let mut members: Vec<u32> = Vec::new();
        for &z in zs {
            members.extend_from_slice(&self.cone_index[z as usize]);
        }
        members.sort_unstable();
        members.dedup();
        members
    }

    /// Serializes the class table: one line per class plus the tau
    /// sensitivity counts.
    pub fn class_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "atlas proxy {} rho {} tau {} horizon {} classes {} tau-1 {} tau+1 {}\n",
            self.proxy,
            self.rho,
            self.tau,
            self.horizon.len(),
            self.classes.len(),
            self.class_count_tau_minus,
            self.class_count_tau_plus,
        ));
        for (i, c) in self.classes.iter().enumerate() {
            let tag = match &c.parabolic {
                Some(coset) => format!("parabolic {}", coset),
                None => "-".to_string(),
            };
            out.push_str(&format!(
                "class {} rep {} size {} {}\n",
                i,
                c.rep,
                c.members.len(),
                tag
            ));
        }
        out
    }

    /// Diagnostic SVG: classes as dots on a circle (parabolic ones filled),
    /// shadows as concentric arc intervals.
    pub fn to_svg(&self, shadows: &[(String, Vec<u32>)]) -> String {
        let m = self.classes.len().max(1) as f64;
        let cx = 300.0;
        let cy = 300.0;
        let r0 = 250.0;
        let mut out = String::new();
        out.push_str("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"600\" height=\"600\" viewBox=\"0 0 600 600\">\n");
        out.push_str("<rect width=\"600\" height=\"600\" fill=\"white\"/>\n");
        out.push_str(&format!(
            "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"{:.1}\" fill=\"none\" stroke=\"#ccc\"/>\n",
            cx, cy, r0
        ));
        let angle = |i: u32| 2.0 * std::f64::consts::PI * (i as f64) / m;
        for (i, c) in self.classes.iter().enumerate() {
            let a = angle(i as u32);
            let (x, y) = (cx + r0 * a.cos(), cy + r0 * a.sin());
            let fill = if c.parabolic.is_some() { "#d33" } else { "#333" };
            out.push_str(&format!(
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{}\"/>\n",
                x, y, fill
            ));
        }
        for (k, (label, classes)) in shadows.iter().enumerate() {
            let r = r0 - 18.0 * (k as f64 + 1.0);
            for &ci in classes {
                let a = angle(ci);
                let half = std::f64::consts::PI / m;
                let (x1, y1) = (cx + r * (a - half).cos(), cy + r * (a - half).sin());
                let (x2, y2) = (cx + r * (a + half).cos(), cy + r * (a + half).sin());
                out.push_str(&format!(
                    "<path d=\"M {:.2} {:.2} A {:.1} {:.1} 0 0 1 {:.2} {:.2}\" stroke=\"hsl({}, 70%, 45%)\" stroke-width=\"5\" fill=\"none\"/>\n",
                    x1, y1, r, r, x2, y2,
                    (k * 67) % 360
                ));
            }
            out.push_str(&format!(
                "<text x=\"10\" y=\"{}\" font-size=\"12\" fill=\"hsl({}, 70%, 45%)\">{}</text>\n",
                16 + 16 * k,
                (k * 67) % 360,
                label
            ));
        }
        out.push_str("</svg>\n");
        out
    }
}

/// Builds the ring with centers at arc positions s1 >= s2 on the designated
/// geodesic toward `class`, validating the shadow containment.
pub fn make_ring(
    atlas: &BoundaryAtlas,
    class: u32,
    s1: u32,
    s2: u32,
    radius: u32,
) -> Result<Ring, BoundaryError> {
    let path = atlas.designated_geodesic(class)?;
    let len = (path.len() - 1) as u32;
    if s1 > len || s2 > s1 {
        return Err(BoundaryError::PositionOutOfRange {
            pos: s1.max(s2),
            len,
        });
    }
    if s2 == 0 {
        // The proxy itself cannot be a shadow center; s2 = 0 is only usable
        // when the geodesic is a loop, which it never is.
        return Err(BoundaryError::CenterIsProxy);
    }
    let inner = atlas.shadow(path[s1 as usize], radius)?;
    let outer = atlas.shadow(path[s2 as usize], radius)?;
    if let Some(witness) = inner.subset_witness(&outer) {
        return Err(BoundaryError::ContainmentFailure { witness });
    }
    Ok(Ring {
        class,
        s1,
        s2,
        radius,
        inner,
        outer,
    })
}

/// Outcome of the nested-shadow sampling. The two clauses are independent
/// statements and are sampled independently: a clause-i configuration
/// places the second center toward the class, a clause-ii configuration
/// toward the anchor, each at separation >= R + delta_hat.
#[derive(Debug, Clone)]
pub struct RingLemmaReport {
    pub radius: u32,
    pub separation: u32,
    pub checked: usize,
    pub clause_i_checked: usize,
    pub clause_ii_checked: usize,
    pub skipped: usize,
    /// Violations under the met hypothesis (must be empty).
    pub violations: Vec<RingLemmaViolation>,
    /// Counterexamples at separation - 1 (hypothesis violated; permitted,
    /// informational).
    pub below_hypothesis_checked: usize,
    pub below_hypothesis_counterexamples: usize,
}

#[derive(Debug, Clone)]
pub struct RingLemmaViolation {
    pub class: u32,
    pub position: u32,
    pub separation: u32,
    pub clause: RingClause,
    pub witness: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RingClause {
    /// Shadow at the center farther from the anchor not contained in the
    /// shadow at x.
    FartherIntoNearer,
    /// Shadow at x not contained in the shadow at the center nearer to the
    /// anchor.
    NearerAroundX,
}

/// Samples clause configurations on designated geodesics and verifies the
/// nesting at separation >= R + delta_hat; also probes separation - 1 and
/// counts (permitted) counterexamples.
pub fn check_ring_lemma(
    atlas: &BoundaryAtlas,
    radius: u32,
    delta_hat: u32,
    samples: usize,
    seed: u64,
) -> Result<RingLemmaReport, BoundaryError> {
    if samples == 0 {
        return Err(BoundaryError::NoSamples);
    }
    let separation = radius + delta_hat;
    let mut rng = labeled_rng(seed, "ring-lemma");
    let mut checked = 0;
    let mut clause_i_checked = 0;
    let mut clause_ii_checked = 0;
    let mut skipped = 0;
    let mut violations = Vec::new();
    let mut below_checked = 0;
    let mut below_counter = 0;
    for _ in 0..samples {
        let class = rng.gen_range(0..atlas.classes.len()) as u32;
        let path = atlas.designated_geodesic(class)?;
        let len = (path.len() - 1) as u32;
        let sep = separation + rng.gen_range(0..3u32);
        let toward_class = rng.gen_bool(0.5);
        if len < sep + 1 {
            skipped += 1;
            continue;
        }
        let s = if toward_class {
            rng.gen_range(1..=len - sep)
        } else {
            rng.gen_range(sep + 1..=len)
        };
        let x = path[s as usize];
        let shadow_x = atlas.shadow(x, radius)?;
        if toward_class {
            let farther = atlas.shadow(path[(s + sep) as usize], radius)?;
            if let Some(w) = farther.subset_witness(&shadow_x) {
                violations.push(RingLemmaViolation {
                    class,
                    position: s,
                    separation: sep,
                    clause: RingClause::FartherIntoNearer,
                    witness: w,
                });
            }
            clause_i_checked += 1;
        } else {
            let nearer = atlas.shadow(path[(s - sep) as usize], radius)?;
            if let Some(w) = shadow_x.subset_witness(&nearer) {
                violations.push(RingLemmaViolation {
                    class,
                    position: s,
                    separation: sep,
                    clause: RingClause::NearerAroundX,
                    witness: w,
                });
            }
            clause_ii_checked += 1;
        }
        checked += 1;
        // Informational probe one step under the hypothesis.
        if separation >= 2 {
            let sep = separation - 1;
            if toward_class && s + sep <= len {
                let farther = atlas.shadow(path[(s + sep) as usize], radius)?;
                below_checked += 1;
                if !farther.is_subset_of(&shadow_x) {
                    below_counter += 1;
                }
            } else if !toward_class && s > sep {
                let nearer = atlas.shadow(path[(s - sep) as usize], radius)?;
                below_checked += 1;
                if !shadow_x.is_subset_of(&nearer) {
                    below_counter += 1;
                }
            }
        }
    }
    if checked == 0 {
        return Err(BoundaryError::NoAdmissibleSamples(format!(
            "every designated geodesic is shorter than {}",
            separation + 1
        )));
    }
    Ok(RingLemmaReport {
        radius,
        separation,
        checked,
        clause_i_checked,
        clause_ii_checked,
        skipped,
        violations,
        below_hypothesis_checked: below_checked,
        below_hypothesis_counterexamples: below_counter,
    })
}

/// Measured equivalence constant between the ring structures at radii R
/// and R': the worst minimal t'/t over sampled t-rings, in ln form.
#[derive(Debug, Clone)]
pub struct C5Report {
    pub radius: u32,
    pub radius_prime: u32,
    /// max over samples of ln t' - ln t (minimal sandwiching t' each).
    pub ln_c5: i64,
    /// The bound R + R' + 2 delta_hat the measurement is compared against.
    pub ln_bound: u32,
    pub within_bound: bool,
    pub samples_used: usize,
    pub skipped: usize,
}

/// For sampled t-rings at radius R, finds the minimal t'-ring at radius R'
/// with inner' within inner and outer within outer', and reports the worst
/// ratio.
pub fn equivalence_constant(
    atlas: &BoundaryAtlas,
    radius: u32,
    radius_prime: u32,
    delta_hat: u32,
    samples: usize,
    seed: u64,
) -> Result<C5Report, BoundaryError> {
    if samples == 0 {
        return Err(BoundaryError::NoSamples);
    }
    let minsep = radius + delta_hat;
    let mut rng = labeled_rng(seed, "c5-rings");
    let mut ln_c5: Option<i64> = None;
    let mut used = 0;
    let mut skipped = 0;
    for _ in 0..samples {
        let class = rng.gen_range(0..atlas.classes.len()) as u32;
        let path = atlas.designated_geodesic(class)?;
        let len = (path.len() - 1) as u32;
        if len < minsep + 2 {
            skipped += 1;
            continue;
        }
        let extra = rng.gen_range(0..3u32);
        let sep = (minsep + extra).min(len - 1);
        let s2 = rng.gen_range(1..=len - sep);
        let s1 = s2 + sep;
        let ring = match make_ring(atlas, class, s1, s2, radius) {
            Ok(r) => r,
            Err(BoundaryError::ContainmentFailure { .. }) => {
                skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        match minimal_sandwich(atlas, &ring, radius_prime, &path)? {
            Some((p1, p2)) => {
                let ratio = (p1 - p2) as i64 - ring.ln_t() as i64;
                ln_c5 = Some(ln_c5.map_or(ratio, |c| c.max(ratio)));
                used += 1;
            }
            None => skipped += 1,
        }
    }
    if used == 0 {
        return Err(BoundaryError::NoAdmissibleSamples(
            "no sampled ring admitted a sandwiching ring".into(),
        ));
    }
    let ln_c5 = ln_c5.unwrap();
    let ln_bound = radius + radius_prime + 2 * delta_hat;
    Ok(C5Report {
        radius,
        radius_prime,
        ln_c5,
        ln_bound,
        within_bound: ln_c5 <= ln_bound as i64,
        samples_used: used,
        skipped,
    })
}

/// Exhaustive variant: every class, every center pair with gap at least
/// R + delta_hat.
pub fn equivalence_constant_exhaustive(
    atlas: &BoundaryAtlas,
    radius: u32,
    radius_prime: u32,
    delta_hat: u32,
) -> Result<C5Report, BoundaryError> {
    let minsep = radius + delta_hat;
    let mut ln_c5: Option<i64> = None;
    let mut used = 0;
    let mut skipped = 0;
    for class in 0..atlas.classes.len() as u32 {
        let path = atlas.designated_geodesic(class)?;
        let len = (path.len() - 1) as u32;
        for s2 in 1..=len.saturating_sub(minsep.max(1)) {
            for s1 in s2 + minsep.max(1)..=len {
                let ring = match make_ring(atlas, class, s1, s2, radius) {
                    Ok(r) => r,
                    Err(BoundaryError::ContainmentFailure { .. }) => {
                        skipped += 1;
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                match minimal_sandwich(atlas, &ring, radius_prime, &path)? {
                    Some((p1, p2)) => {
                        let ratio = (p1 - p2) as i64 - ring.ln_t() as i64;
                        ln_c5 = Some(ln_c5.map_or(ratio, |c| c.max(ratio)));
                        used += 1;
                    }
                    None => skipped += 1,
                }
            }
        }
    }
    let ln_c5 = ln_c5.ok_or(BoundaryError::NoAdmissibleSamples(
        "no ring admitted a sandwiching ring".into(),
    ))?;
    let ln_bound = radius + radius_prime + 2 * delta_hat;
    Ok(C5Report {
        radius,
        radius_prime,
        ln_c5,
        ln_bound,
        within_bound: ln_c5 <= ln_bound as i64,
        samples_used: used,
        skipped,
    })
}

/// Exact minimal sandwiching pair (s1', s2') at radius R' on the same
/// designated geodesic: inner' within ring.inner and ring.outer within
/// outer', minimizing s1' - s2'.
fn minimal_sandwich(
    atlas: &BoundaryAtlas,
    ring: &Ring,
    radius_prime: u32,
    path: &[u32],
) -> Result<Option<(u32, u32)>, BoundaryError> {
    let len = (path.len() - 1) as u32;
    // Positions whose R'-shadow is contained in the inner shadow.
    let mut inner_ok: Vec<u32> = Vec::new();
    let mut outer_ok: Vec<u32> = Vec::new();
    for s in 1..=len {
        let sh = atlas.shadow(path[s as usize], radius_prime)?;
        if sh.is_subset_of(&ring.inner) {
            inner_ok.push(s);
        }
        if ring.outer.is_subset_of(&sh) {
            outer_ok.push(s);
        }
    }
    let mut best: Option<(u32, u32)> = None;
    for &p1 in &inner_ok {
        // Largest admissible p2 <= p1 minimizes the gap for this p1.
        if let Some(&p2) = outer_ok.iter().filter(|&&p| p <= p1).max() {
            let cand = (p1, p2);
            let better = match best {
                None => true,
                Some((b1, b2)) => p1 - p2 < b1 - b2,
            };
            if better {
                best = Some(cand);
            }
        }
    }
    Ok(best)
}

/// The horoball-shadow covering: a T1-ring around the entry point of the
/// designated geodesic into the horoball, sandwiching the horoball's
/// shadow.
#[derive(Debug, Clone)]
pub struct HoroballRingReport {
    pub coset: CosetId,
    pub class: u32,
    /// First vertex of the designated geodesic inside the horoball.
    pub entry: u32,
    pub entry_pos: u32,
    /// Inner center p at arc distance R + delta_hat past the entry.
    pub p: u32,
    pub p_pos: u32,
    pub p_clamped: bool,
    /// ln T1 = C4_hat + R + 2 delta_hat.
    pub ln_t1: u32,
    pub outer_pos: u32,
    pub outer_clamped: bool,
    pub horoball_shadow: Vec<u32>,
    pub inner_ok: bool,
    pub outer_ok: bool,
    /// Cusped distance from p to the horoball ("moreover" clause: must be
    /// within R + delta_hat).
    pub d_p_horoball: u32,
    pub moreover_ok: bool,
}

impl HoroballRingReport {
    pub fn covering_ok(&self) -> bool {
        self.inner_ok && self.outer_ok
    }
}

pub fn horoball_shadow_ring(
    atlas: &BoundaryAtlas,
    coset: &CosetId,
    radius: u32,
    delta_hat: u32,
    c4_hat: u32,
) -> Result<HoroballRingReport, BoundaryError> {
    if let AnchorSpec::Parabolic(own) = &atlas.anchor {
        if own == coset {
            return Err(BoundaryError::SelfShadow);
        }
    }
    let hi = atlas
        .space
        .horoball_index(coset)
        .ok_or_else(|| BoundaryError::AnchorNotAttached(coset.clone()))?;
    let class = atlas
        .parabolic_class(coset)
        .ok_or_else(|| BoundaryError::NoParabolicClass(coset.clone()))?;
    let path = atlas.designated_geodesic(class)?;
    let len = (path.len() - 1) as u32;
    let rec = &atlas.space.horoballs[hi];
    let entry_pos = path
        .iter()
        .position(|&v| rec.contains(v, atlas.space.depth))
        .ok_or(BoundaryError::GeodesicMissesHoroball)? as u32;
    let entry = path[entry_pos as usize];
    let want_p = entry_pos + radius + delta_hat;
    let (p_pos, p_clamped) = if want_p <= len {
        (want_p, false)
    } else {
        (len, true)
    };
    let p = path[p_pos as usize];
    let ln_t1 = c4_hat + radius + 2 * delta_hat;
    let (outer_pos, outer_clamped) = if p_pos > ln_t1 {
        (p_pos - ln_t1, false)
    } else {
        (1, true)
    };
    let inner = atlas.shadow(p, radius)?;
    let outer = atlas.shadow(path[outer_pos as usize], radius)?;
    let horoball_shadow = atlas.shadow_of_set(&rec.vertex_ids(atlas.space.depth));
    let inner_ok = subset(&inner.members, &horoball_shadow);
    let outer_ok = subset(&horoball_shadow, &outer.members);
    let d_hb = atlas
        .space
        .graph
        .multi_source_distances(&rec.vertex_ids(atlas.space.depth))?;
    let d_p_horoball = d_hb[p as usize].expect("space is connected");
    Ok(HoroballRingReport {
        coset: coset.clone(),
        class,
        entry,
        entry_pos,
        p,
        p_pos,
        p_clamped,
        ln_t1,
        outer_pos,
        outer_clamped,
        horoball_shadow,
        inner_ok,
        outer_ok,
        d_p_horoball,
        moreover_ok: d_p_horoball <= radius + delta_hat,
    })
}
