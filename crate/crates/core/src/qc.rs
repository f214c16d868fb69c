//! Quasi-isometry and quasiconformal measurements between cusped balls.
//!
//! A `VertexMap` carries one truncated cusped space into another. The module
//! measures how far it is from an isometry at three levels: the coarse metric
//! (`measure_qi`), the horoball structure (`measure_cusp_preserving`), and the
//! induced boundary map (`extend_to_boundary` plus the ring-distortion and
//! shadow-of-horoball measurements). The reverse direction reconstructs a
//! vertex map from a boundary map through E-sets (`e_set`, `phi_f`) and
//! projects it back to the group (`project_to_group`).
//!
//! Ring scales live on the integer lattice in ln t; a stated scale bound such
//! as t >= R + delta is lifted to the lattice as ln t >= ceil(ln(R + delta)).

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::boundary::{make_ring, BoundaryAtlas, BoundaryError};
use crate::cusped::{CuspedBall, VertexLabel};
use crate::graph::{Graph, GraphError};
use crate::group::{CosetId, Element, GroupError, GroupSpec, Sym};
use crate::rng::labeled_rng;

#[derive(Debug, Error)]
pub enum QcError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Group(#[from] GroupError),
    #[error(transparent)]
    Boundary(#[from] BoundaryError),
    #[error("domain depth {domain} != codomain depth {codomain}")]
    DepthMismatch { domain: u32, codomain: u32 },
    #[error("domain has {domain} peripherals, codomain has {codomain}")]
    PeripheralMismatch { domain: usize, codomain: usize },
    #[error("generator `{0}` has no name match and no expansion")]
    UnmappedGenerator(String),
    #[error("expected {expected} entries, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("vertex {vertex} maps to {image}, outside the codomain")]
    TargetOutOfRange { vertex: u32, image: u32 },
    #[error("vertex {0} listed twice")]
    DuplicateSource(u32),
    #[error("{missing} non-rim vertices have no image (first: {first})")]
    NotTotal { missing: usize, first: u32 },
    #[error("vertex {0} has no image")]
    MissingImage(u32),
    #[error("map and atlas are built over different spaces")]
    SpaceMismatch,
    #[error("fewer than two usable sample points")]
    NoPairs,
    #[error(
        "no quasi-isometry on the grid: at lambda {lambda} the additive term {k} \
         swallows every sampled distance (witness pair {witness:?})"
    )]
    QiDegenerate {
        lambda: f64,
        k: u32,
        witness: (u32, u32),
    },
    #[error("classes {first} and {second} both map to class {image}")]
    NotInjective { first: u32, second: u32, image: u32 },
    #[error("map covers {covered} of {total} codomain classes, so it has no inverse")]
    NotOnto { covered: usize, total: usize },
    #[error("parabolic class {class} maps to non-parabolic class {image}")]
    TagMismatch { class: u32, image: u32 },
    #[error("the atlas has no parabolic classes")]
    NoParabolicClasses,
    #[error("no admissible rings")]
    NoRings,
    #[error("ln t = {ln_t} is below the lattice scale bound {required}")]
    ScaleTooSmall { ln_t: u32, required: u32 },
    #[error("{count} E-sets are empty (first center: {first})")]
    EmptySets { count: usize, first: u32 },
}

/// ceil(ln scale) on the integer lattice; scale 0 and 1 both sit at 0.
pub fn ln_lattice(scale: u32) -> u32 {
    if scale <= 1 {
        0
    } else {
        (scale as f64).ln().ceil() as u32
    }
}

/// Subset test in the image sub-atlas: codomain classes the map never hits
/// are invisible to the comparison, so only image classes of `members` must
/// appear in the sorted slice `within`.
fn image_contained(f: &BoundaryMap, members: &[u32], within: &[u32]) -> bool {
    members
        .iter()
        .all(|&c| f.preimage_class(c).is_none() || within.binary_search(&c).is_ok())
}

/// Sorted-slice subset test.
fn contained(a: &[u32], b: &[u32]) -> bool {
    let mut it = b.iter();
    'outer: for &x in a {
        for &y in it.by_ref() {
            if y == x {
                continue 'outer;
            }
            if y > x {
                return false;
            }
        }
        return false;
    }
    true
}

/// A vertex-level map between two truncated cusped spaces. Total on non-rim
/// domain vertices; the backward direction is optional and may be partial
/// (a generating-set change can push an inverse image past the truncation).
#[derive(Debug, Clone)]
pub struct VertexMap {
    pub domain: Arc<CuspedBall>,
    pub codomain: Arc<CuspedBall>,
    forward: Vec<Option<u32>>,
    backward: Option<Vec<Option<u32>>>,
}

impl VertexMap {
    pub fn new(
        domain: Arc<CuspedBall>,
        codomain: Arc<CuspedBall>,
        forward: Vec<Option<u32>>,
        backward: Option<Vec<Option<u32>>>,
    ) -> Result<VertexMap, QcError> {
        if forward.len() != domain.graph.vertex_count() {
            return Err(QcError::LengthMismatch {
                expected: domain.graph.vertex_count(),
                got: forward.len(),
            });
        }
        let n_cod = codomain.graph.vertex_count() as u32;
        let mut missing = Vec::new();
        for (v, img) in forward.iter().enumerate() {
            match img {
                Some(y) if *y >= n_cod => {
                    return Err(QcError::TargetOutOfRange {
                        vertex: v as u32,
                        image: *y,
                    })
                }
                None if !domain.rim[v] => missing.push(v as u32),
                _ => {}
            }
        }
        if let Some(first) = missing.first() {
            return Err(QcError::NotTotal {
                missing: missing.len(),
                first: *first,
            });
        }
        if let Some(back) = &backward {
            if back.len() != codomain.graph.vertex_count() {
                return Err(QcError::LengthMismatch {
                    expected: codomain.graph.vertex_count(),
                    got: back.len(),
                });
            }
            let n_dom = domain.graph.vertex_count() as u32;
            for (v, img) in back.iter().enumerate() {
                if let Some(y) = img {
                    if *y >= n_dom {
                        return Err(QcError::TargetOutOfRange {
                            vertex: v as u32,
                            image: *y,
                        });
                    }
                }
            }
        }
        Ok(VertexMap {
            domain,
            codomain,
            forward,
            backward,
        })
    }

    pub fn identity(space: &Arc<CuspedBall>) -> VertexMap {
        let all: Vec<Option<u32>> = (0..space.graph.vertex_count() as u32).map(Some).collect();
        VertexMap {
            domain: Arc::clone(space),
            codomain: Arc::clone(space),
            forward: all.clone(),
            backward: Some(all),
        }
    }

    pub fn from_entries(
        domain: Arc<CuspedBall>,
        codomain: Arc<CuspedBall>,
        pairs: &[(u32, u32)],
    ) -> Result<VertexMap, QcError> {
        let mut forward = vec![None; domain.graph.vertex_count()];
        for &(v, y) in pairs {
            if v as usize >= forward.len() {
                return Err(QcError::TargetOutOfRange {
                    vertex: v,
                    image: v,
                });
            }
            let slot = &mut forward[v as usize];
            if slot.is_some() {
                return Err(QcError::DuplicateSource(v));
            }
            *slot = Some(y);
        }
        VertexMap::new(domain, codomain, forward, None)
    }

    pub fn from_fn(
        domain: Arc<CuspedBall>,
        codomain: Arc<CuspedBall>,
        f: impl Fn(u32) -> Option<u32>,
    ) -> Result<VertexMap, QcError> {
        let forward = (0..domain.graph.vertex_count() as u32).map(f).collect();
        VertexMap::new(domain, codomain, forward, None)
    }

    /// Translates vertices through matching generator names. A generator
    /// absent on the other side needs an expansion entry (name, word text in
    /// the other generating set), e.g. ("c", "a b").
    pub fn canonical_identification(
        domain: Arc<CuspedBall>,
        codomain: Arc<CuspedBall>,
        to_codomain: &[(&str, &str)],
        to_domain: &[(&str, &str)],
    ) -> Result<VertexMap, QcError> {
        if domain.depth != codomain.depth {
            return Err(QcError::DepthMismatch {
                domain: domain.depth,
                codomain: codomain.depth,
            });
        }
        if domain.spec.peripherals.len() != codomain.spec.peripherals.len() {
            return Err(QcError::PeripheralMismatch {
                domain: domain.spec.peripherals.len(),
                codomain: codomain.spec.peripherals.len(),
            });
        }
        let fwd_gens = generator_images(&domain.spec, &codomain.spec, to_codomain)?;
        let back_gens = generator_images(&codomain.spec, &domain.spec, to_domain)?;
        let forward = (0..domain.graph.vertex_count() as u32)
            .map(|v| translate_vertex(&domain, &codomain, &fwd_gens, v))
            .collect();
        let backward = (0..codomain.graph.vertex_count() as u32)
            .map(|v| translate_vertex(&codomain, &domain, &back_gens, v))
            .collect();
        VertexMap::new(domain, codomain, forward, Some(backward))
    }

    pub fn image(&self, v: u32) -> Option<u32> {
        self.forward.get(v as usize).copied().flatten()
    }

    pub fn preimage(&self, y: u32) -> Option<u32> {
        self.backward.as_ref()?.get(y as usize).copied().flatten()
    }

    pub fn has_inverse(&self) -> bool {
        self.backward.is_some()
    }

    /// The declared inverse as a map in its own right. Totality of the
    /// backward direction is revalidated, so a partial inverse is rejected.
    pub fn inverse(&self) -> Result<VertexMap, QcError> {
        let back = self.backward.clone().ok_or(QcError::MissingImage(0))?;
        VertexMap::new(
            Arc::clone(&self.codomain),
            Arc::clone(&self.domain),
            back,
            Some(self.forward.clone()),
        )
    }

    /// How much of the codomain non-rim part the backward direction covers.
    pub fn backward_coverage(&self) -> Option<(usize, usize)> {
        let back = self.backward.as_ref()?;
        let mut total = 0;
        let mut mapped = 0;
        for (v, img) in back.iter().enumerate() {
            if !self.codomain.rim[v] {
                total += 1;
                if img.is_some() {
                    mapped += 1;
                }
            }
        }
        Some((mapped, total))
    }
}

fn generator_images(
    src: &GroupSpec,
    dst: &GroupSpec,
    expansions: &[(&str, &str)],
) -> Result<Vec<Vec<Sym>>, QcError> {
    let mut out = Vec::with_capacity(src.gen_names.len());
    for name in &src.gen_names {
        if let Some(idx) = dst.gen_names.iter().position(|n| n == name) {
            out.push(vec![Sym::gen(idx, false)]);
        } else if let Some((_, word)) = expansions.iter().find(|(n, _)| n == name) {
            out.push(dst.parse_word(word)?.word().to_vec());
        } else {
            return Err(QcError::UnmappedGenerator(name.clone()));
        }
    }
    Ok(out)
}

fn translate_element(dst: &GroupSpec, gen_words: &[Vec<Sym>], e: &Element) -> Element {
    let mut word: Vec<Sym> = Vec::new();
    for &s in e.word() {
        let expansion = &gen_words[s.gen_index()];
        if s.is_inverse() {
            word.extend(expansion.iter().rev().map(|t| t.inverse()));
        } else {
            word.extend(expansion.iter().copied());
        }
    }
    dst.reduce_word(&word)
}

fn translate_vertex(
    src: &CuspedBall,
    dst: &CuspedBall,
    gen_words: &[Vec<Sym>],
    v: u32,
) -> Option<u32> {
    match &src.labels[v as usize] {
        VertexLabel::Group(e) => dst.group_vertex(&translate_element(&dst.spec, gen_words, e)),
        VertexLabel::Horo {
            horoball,
            base,
            level,
        } => {
            let rec = &src.horoballs[*horoball];
            let tbase = translate_element(&dst.spec, gen_words, base);
            let coset = dst.spec.coset_of(&tbase, rec.coset.peripheral).ok()?;
            let h = dst.horoball_index(&coset)?;
            let drec = &dst.horoballs[h];
            let gid = dst.group_vertex(&tbase)?;
            let local = drec.members.binary_search(&gid).ok()?;
            (*level <= dst.depth).then(|| drec.vertex(local, *level))
        }
    }
}

/// Minimal grid quasi-isometry constants for a sampled vertex map.
#[derive(Debug, Clone)]
pub struct QiReport {
    pub lambda_hat: f64,
    pub k_hat: u32,
    /// Max cusped distance from any codomain non-rim vertex to the image.
    pub surjectivity_radius: u32,
    pub vertices_sampled: usize,
    pub pairs: usize,
    pub exhaustive: bool,
}

const LAMBDA_GRID_STEP: f64 = 0.25;
const LAMBDA_GRID_MAX: f64 = 4.0;

fn k_for_lambda(pairs: &[(u32, u32)], lambda: f64) -> u32 {
    let mut worst = 0f64;
    for &(dx, dy) in pairs {
        let (dx, dy) = (dx as f64, dy as f64);
        worst = worst.max(dy - lambda * dx).max(dx / lambda - dy);
    }
    worst.max(0.0).ceil() as u32
}

/// Smallest grid lambda whose additive constant is within one of the best
/// the grid can do, then that constant. K(lambda) is non-increasing, so this
/// trades a marginal K for the least multiplicative stretch.
fn fit_qi_grid(pairs: &[(u32, u32)]) -> (f64, u32) {
    let steps = ((LAMBDA_GRID_MAX - 1.0) / LAMBDA_GRID_STEP).round() as u32;
    let k_end = k_for_lambda(pairs, LAMBDA_GRID_MAX);
    for i in 0..=steps {
        let lambda = 1.0 + LAMBDA_GRID_STEP * i as f64;
        let k = k_for_lambda(pairs, lambda);
        if k <= k_end + 1 {
            return (lambda, k);
        }
    }
    (LAMBDA_GRID_MAX, k_end)
}

/// Fits minimal (lambda, K) on the grid lambda in 1 + 0.25Z over sampled
/// non-rim vertex pairs, and measures the coarse-surjectivity radius. A fit
/// whose lower bound is vacuous on most pairs (the additive constant swallows
/// the sampled distances) is reported as degenerate with a witness pair.
pub fn measure_qi(map: &VertexMap, samples: usize, seed: u64) -> Result<QiReport, QcError> {
    let eligible: Vec<u32> = (0..map.domain.graph.vertex_count() as u32)
        .filter(|&v| !map.domain.rim[v as usize] && map.image(v).is_some())
        .collect();
    if eligible.len() < 2 {
        return Err(QcError::NoPairs);
    }
    let exhaustive = samples >= eligible.len();
    let chosen: Vec<u32> = if exhaustive {
        eligible
    } else {
        let mut pool = eligible;
        let mut rng = labeled_rng(seed, "qi-vertices");
        for i in 0..samples {
            let j = rng.gen_range(i..pool.len());
            pool.swap(i, j);
        }
        pool.truncate(samples);
        pool
    };
    let images: Vec<u32> = chosen.iter().map(|&v| map.image(v).unwrap()).collect();

    let dom_rows: Vec<Vec<Option<u32>>> = chosen
        .par_iter()
        .map(|&v| map.domain.graph.bfs_distances(v))
        .collect::<Result<_, _>>()?;
    let mut img_row_of: HashMap<u32, usize> = HashMap::new();
    let mut unique_images = Vec::new();
    for &y in &images {
        img_row_of.entry(y).or_insert_with(|| {
            unique_images.push(y);
            unique_images.len() - 1
        });
    }
    let cod_rows: Vec<Vec<Option<u32>>> = unique_images
        .par_iter()
        .map(|&y| map.codomain.graph.bfs_distances(y))
        .collect::<Result<_, _>>()?;

    let mut dist_pairs = Vec::with_capacity(chosen.len() * (chosen.len() - 1) / 2);
    let mut pair_ids = Vec::with_capacity(dist_pairs.capacity());
    for i in 0..chosen.len() {
        for j in i + 1..chosen.len() {
            let dx = dom_rows[i][chosen[j] as usize].expect("cusped balls are connected");
            let dy = cod_rows[img_row_of[&images[i]]][images[j] as usize]
                .expect("cusped balls are connected");
            dist_pairs.push((dx, dy));
            pair_ids.push((chosen[i], chosen[j]));
        }
    }
    if dist_pairs.is_empty() {
        return Err(QcError::NoPairs);
    }

    let (lambda_hat, k_hat) = fit_qi_grid(&dist_pairs);
    let positive = dist_pairs.iter().filter(|&&(dx, _)| dx > 0).count();
    let vacuous = dist_pairs
        .iter()
        .filter(|&&(dx, _)| dx > 0 && dx as f64 / lambda_hat <= k_hat as f64)
        .count();
    if positive > 0 && vacuous * 2 > positive {
        let (at, _) = dist_pairs
            .iter()
            .enumerate()
            .max_by_key(|(_, &(dx, _))| dx)
            .unwrap();
        return Err(QcError::QiDegenerate {
            lambda: lambda_hat,
            k: k_hat,
            witness: pair_ids[at],
        });
    }

    // Surjectivity is a property of the whole map, not of the sample: use
    // every image the map defines.
    let mut all_images: Vec<u32> = map.forward.iter().filter_map(|o| *o).collect();
    all_images.sort_unstable();
    all_images.dedup();
    let field = map.codomain.graph.multi_source_distances(&all_images)?;
    let surjectivity_radius = (0..map.codomain.graph.vertex_count())
        .filter(|&v| !map.codomain.rim[v])
        .filter_map(|v| field[v])
        .max()
        .unwrap_or(0);

    Ok(QiReport {
        lambda_hat,
        k_hat,
        surjectivity_radius,
        vertices_sampled: chosen.len(),
        pairs: dist_pairs.len(),
        exhaustive,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapDirection {
    Forward,
    Backward,
}

/// One horosphere-like set carried into a neighborhood of another.
#[derive(Debug, Clone)]
pub struct CuspPair {
    pub from: CosetId,
    pub to: CosetId,
    /// Max cusped distance from an image of a member to the target coset.
    pub penetration: u32,
    pub direction: MapDirection,
}

#[derive(Debug, Clone)]
pub struct CuspReport {
    pub c_hat: u32,
    pub pairs: Vec<CuspPair>,
    /// False when the map declares no inverse; only the forward direction
    /// was measured then.
    pub inverse_checked: bool,
    pub skipped: usize,
}

enum CuspOutcome {
    Pair(CuspPair),
    Skipped,
}

fn cusp_direction(
    src: &CuspedBall,
    dst: &CuspedBall,
    img: &(dyn Fn(u32) -> Option<u32> + Sync),
    direction: MapDirection,
) -> Result<Vec<CuspOutcome>, QcError> {
    if src.horoballs.is_empty() || dst.horoballs.is_empty() {
        return Ok(src.horoballs.iter().map(|_| CuspOutcome::Skipped).collect());
    }
    let sources: Vec<(u32, u32)> = dst
        .horoballs
        .iter()
        .enumerate()
        .flat_map(|(i, rec)| rec.members.iter().map(move |&m| (m, i as u32)))
        .collect();
    let field = dst.graph.labeled_multi_source(&sources)?;
    src.horoballs
        .par_iter()
        .map(|rec| {
            let images: Vec<u32> = rec.members.iter().filter_map(|&m| img(m)).collect();
            if images.is_empty() {
                return Ok(CuspOutcome::Skipped);
            }
            // Candidates: horospheres nearest to at least one image. The
            // winner among them is an upper bound for the true minimum,
            // exact unless every image is strictly closer to a horosphere
            // that is globally worse.
            let mut cands: Vec<u32> = images
                .iter()
                .filter_map(|&y| field[y as usize].map(|(_, l)| l))
                .collect();
            cands.sort_unstable();
            cands.dedup();
            if cands.is_empty() {
                return Ok(CuspOutcome::Skipped);
            }
            let mut best: Option<(u32, u32)> = None;
            for &c in &cands {
                let row = dst
                    .graph
                    .multi_source_distances(&dst.horoballs[c as usize].members)?;
                let pen = images
                    .iter()
                    .map(|&y| row[y as usize].unwrap_or(u32::MAX))
                    .max()
                    .unwrap();
                if best.map_or(true, |b| (pen, c) < b) {
                    best = Some((pen, c));
                }
            }
            let (penetration, idx) = best.unwrap();
            Ok(CuspOutcome::Pair(CuspPair {
                from: rec.coset.clone(),
                to: dst.horoballs[idx as usize].coset.clone(),
                penetration,
                direction,
            }))
        })
        .collect()
}

/// Minimal C such that each horosphere-like set lands in the C-neighborhood
/// of one on the other side, with the pairing. The backward direction uses
/// the declared inverse where defined; without one the report is flagged.
pub fn measure_cusp_preserving(map: &VertexMap) -> Result<CuspReport, QcError> {
    let mut pairs = Vec::new();
    let mut skipped = 0;
    let fwd = |v: u32| map.image(v);
    for outcome in cusp_direction(&map.domain, &map.codomain, &fwd, MapDirection::Forward)? {
        match outcome {
            CuspOutcome::Pair(p) => pairs.push(p),
            CuspOutcome::Skipped => skipped += 1,
        }
    }
    let inverse_checked = map.has_inverse();
    if inverse_checked {
        let back = |v: u32| map.preimage(v);
        for outcome in cusp_direction(&map.codomain, &map.domain, &back, MapDirection::Backward)? {
            match outcome {
                CuspOutcome::Pair(p) => pairs.push(p),
                CuspOutcome::Skipped => skipped += 1,
            }
        }
    }
    let c_hat = pairs.iter().map(|p| p.penetration).max().unwrap_or(0);
    Ok(CuspReport {
        c_hat,
        pairs,
        inverse_checked,
        skipped,
    })
}

/// An injective assignment of domain boundary classes to codomain classes,
/// anchor to anchor, hence a bijection onto its image sub-atlas. The full
/// inverse exists exactly when every codomain class is covered; two atlases
/// truncating the same boundary at different resolutions rarely have equal
/// class counts, and no downstream measurement needs the backward direction.
/// `tag_mismatches` lists classes whose parabolic kind flips.
#[derive(Debug, Clone)]
pub struct BoundaryMap {
    pub domain: Arc<BoundaryAtlas>,
    pub codomain: Arc<BoundaryAtlas>,
    forward: Vec<u32>,
    backward: Vec<u32>,
    pub tag_mismatches: Vec<(u32, u32)>,
    index_cache: Arc<Mutex<HashMap<(u32, u32), Arc<ImageIndex>>>>,
}

impl BoundaryMap {
    pub fn new(
        domain: Arc<BoundaryAtlas>,
        codomain: Arc<BoundaryAtlas>,
        forward: Vec<u32>,
    ) -> Result<BoundaryMap, QcError> {
        if forward.len() != domain.class_count() {
            return Err(QcError::LengthMismatch {
                expected: domain.class_count(),
                got: forward.len(),
            });
        }
        let m = codomain.class_count();
        let mut backward = vec![u32::MAX; m];
        for (i, &j) in forward.iter().enumerate() {
            if j as usize >= m {
                return Err(QcError::TargetOutOfRange {
                    vertex: i as u32,
                    image: j,
                });
            }
            if backward[j as usize] != u32::MAX {
                return Err(QcError::NotInjective {
                    first: backward[j as usize],
                    second: i as u32,
                    image: j,
                });
            }
            backward[j as usize] = i as u32;
        }
        let mut tag_mismatches = Vec::new();
        for (i, &j) in forward.iter().enumerate() {
            let dom_tag = domain.classes[i].parabolic.is_some();
            let cod_tag = codomain.classes[j as usize].parabolic.is_some();
            if dom_tag != cod_tag {
                tag_mismatches.push((i as u32, j));
            }
        }
        Ok(BoundaryMap {
            domain,
            codomain,
            forward,
            backward,
            tag_mismatches,
            index_cache: Arc::default(),
        })
    }

    pub fn identity(atlas: &Arc<BoundaryAtlas>) -> BoundaryMap {
        let n = atlas.class_count() as u32;
        BoundaryMap {
            domain: Arc::clone(atlas),
            codomain: Arc::clone(atlas),
            forward: (0..n).collect(),
            backward: (0..n).collect(),
            tag_mismatches: Vec::new(),
            index_cache: Arc::default(),
        }
    }

    /// Count of codomain classes hit by the assignment.
    pub fn image_class_count(&self) -> usize {
        self.backward.iter().filter(|&&i| i != u32::MAX).count()
    }

    pub fn is_onto(&self) -> bool {
        self.backward.iter().all(|&i| i != u32::MAX)
    }

    pub fn inverse(&self) -> Result<BoundaryMap, QcError> {
        if !self.is_onto() {
            return Err(QcError::NotOnto {
                covered: self.image_class_count(),
                total: self.codomain.class_count(),
            });
        }
        Ok(BoundaryMap {
            domain: Arc::clone(&self.codomain),
            codomain: Arc::clone(&self.domain),
            forward: self.backward.clone(),
            backward: self.forward.clone(),
            tag_mismatches: self.tag_mismatches.iter().map(|&(a, b)| (b, a)).collect(),
            index_cache: Arc::default(),
        })
    }

    pub fn image_class(&self, c: u32) -> u32 {
        self.forward[c as usize]
    }

    pub fn preimage_class(&self, c: u32) -> Option<u32> {
        let i = self.backward[c as usize];
        (i != u32::MAX).then_some(i)
    }

    pub fn image_of_classes(&self, cs: &[u32]) -> Vec<u32> {
        let mut out: Vec<u32> = cs.iter().map(|&c| self.forward[c as usize]).collect();
        out.sort_unstable();
        out
    }

    pub fn tags_preserved(&self) -> bool {
        self.tag_mismatches.is_empty()
    }
}

/// Extends a vertex map to boundary classes: each domain class rep lands on
/// the codomain class with the largest Gromov product (based at the codomain
/// identity) against its image. The assignment must come out injective.
pub fn extend_to_boundary(
    map: &VertexMap,
    domain: &Arc<BoundaryAtlas>,
    codomain: &Arc<BoundaryAtlas>,
) -> Result<BoundaryMap, QcError> {
    if !Arc::ptr_eq(&domain.space, &map.domain) || !Arc::ptr_eq(&codomain.space, &map.codomain) {
        return Err(QcError::SpaceMismatch);
    }
    let base = codomain.space.identity_vertex();
    let row0 = codomain.space.graph.bfs_distances(base)?;
    let reps: Vec<u32> = codomain.classes.iter().map(|c| c.rep).collect();
    let forward: Vec<u32> = domain
        .classes
        .par_iter()
        .map(|class| {
            let y = map.image(class.rep).ok_or(QcError::MissingImage(class.rep))?;
            let row_y = codomain.space.graph.bfs_distances(y)?;
            let dy = row0[y as usize].expect("connected");
            let mut best: Option<(i64, u32)> = None;
            for (j, &r) in reps.iter().enumerate() {
                let dr = row0[r as usize].expect("connected") as i64;
                let dyr = row_y[r as usize].expect("connected") as i64;
                let doubled = dy as i64 + dr - dyr;
                // Strictly-greater keeps the least class id on ties.
                if best.map_or(true, |(b, _)| doubled > b) {
                    best = Some((doubled, j as u32));
                }
            }
            Ok(best.expect("codomain atlas has classes").1)
        })
        .collect::<Result<_, QcError>>()?;
    BoundaryMap::new(Arc::clone(domain), Arc::clone(codomain), forward)
}

/// Where the distortion rings come from.
#[derive(Debug, Clone, Copy)]
pub enum RingSource {
    Sampled { count: usize, seed: u64 },
    Exhaustive,
}

#[derive(Debug, Clone)]
pub struct TheoryBlock {
    pub lambda: f64,
    pub k: u32,
    pub c1: u32,
    pub r0: u32,
    /// Inner radius surviving the comparison: (R0 - (lambda C1 + C1 + 2K)) / lambda.
    pub r1: f64,
    /// Outer radius needed: 2 C1 + lambda R0 + K.
    pub r2: f64,
    /// Predicted distortion slope.
    pub slope: f64,
}

/// Measured ring distortion of a boundary map: for each sampled domain
/// t-ring, the minimal t'-ring on the image class's designated geodesic with
/// B' inside f(B) and f(tB) inside t'B'. ln t' is fit against ln t by least
/// squares with the slope clamped to >= 1 and the offset raised to the
/// envelope, so eta(t) = exp(A ln t + B) dominates every sample.
#[derive(Debug, Clone)]
pub struct DistortionReport {
    pub radius: u32,
    pub delta_hat: u32,
    pub samples: Vec<(u32, u32)>,
    pub used: usize,
    pub skipped: usize,
    pub flagged_skips: bool,
    pub a: f64,
    pub a_raw: f64,
    pub b: f64,
    pub residual_max: f64,
    pub theory: Option<TheoryBlock>,
}

impl DistortionReport {
    pub fn eta(&self) -> Eta {
        Eta {
            a: self.a,
            b: self.b,
        }
    }
}

pub fn measure_distortion(
    f: &BoundaryMap,
    radius: u32,
    delta_hat: u32,
    rings: RingSource,
    theory: Option<(f64, u32, u32)>,
) -> Result<DistortionReport, QcError> {
    let domain = &f.domain;
    let minsep = (radius + delta_hat).max(1);
    let mut descriptors: Vec<(u32, u32, u32)> = Vec::new();
    let mut skipped = 0usize;
    match rings {
        RingSource::Sampled { count, seed } => {
            let mut rng = labeled_rng(seed, "distortion-rings");
            for _ in 0..count {
                let class = rng.gen_range(0..domain.class_count() as u32);
                let len = (domain.designated_geodesic(class)?.len() - 1) as u32;
                let sep = minsep + rng.gen_range(0..3u32);
                if len < sep + 1 {
                    skipped += 1;
                    continue;
                }
                let s2 = rng.gen_range(1..=len - sep);
                descriptors.push((class, s2 + sep, s2));
            }
        }
        RingSource::Exhaustive => {
            for class in 0..domain.class_count() as u32 {
                let len = (domain.designated_geodesic(class)?.len() - 1) as u32;
                if len < minsep + 1 {
                    skipped += 1;
                    continue;
                }
                for s2 in 1..=len - minsep {
                    for s1 in s2 + minsep..=len {
                        descriptors.push((class, s1, s2));
                    }
                }
            }
        }
    }

    let outcomes: Vec<Option<(u32, u32)>> = descriptors
        .par_iter()
        .map(|&(class, s1, s2)| minimal_image_ring(f, class, s1, s2, radius))
        .collect::<Result<_, QcError>>()?;
    let samples: Vec<(u32, u32)> = outcomes.iter().filter_map(|o| *o).collect();
    skipped += outcomes.iter().filter(|o| o.is_none()).count();
    if samples.len() < 2 {
        return Err(QcError::NoRings);
    }

    let (a_raw, a, b, residual_max) = envelope_fit(&samples);
    let attempts = samples.len() + skipped;
    let theory = theory.map(|(lambda, k, c1)| {
        let (kf, c1f, r0f) = (k as f64, c1 as f64, radius as f64);
        TheoryBlock {
            lambda,
            k,
            c1,
            r0: radius,
            r1: (r0f - (lambda * c1f + c1f + 2.0 * kf)) / lambda,
            r2: 2.0 * c1f + lambda * r0f + kf,
            slope: lambda,
        }
    });
    Ok(DistortionReport {
        radius,
        delta_hat,
        used: samples.len(),
        skipped,
        flagged_skips: skipped * 5 > attempts,
        samples,
        a,
        a_raw,
        b,
        residual_max,
        theory,
    })
}

/// Minimal ln t' over sandwiching positions on the image class's designated
/// geodesic; None when no position pair works.
fn minimal_image_ring(
    f: &BoundaryMap,
    class: u32,
    s1: u32,
    s2: u32,
    radius: u32,
) -> Result<Option<(u32, u32)>, QcError> {
    let ring = match make_ring(&f.domain, class, s1, s2, radius) {
        Ok(r) => r,
        Err(_) => return Ok(None),
    };
    if ring.inner.members.is_empty() {
        return Ok(None);
    }
    let fi = f.image_of_classes(&ring.inner.members);
    let fo = f.image_of_classes(&ring.outer.members);
    let target = f.image_class(ring.class);
    let path = f.codomain.designated_geodesic(target)?;
    let len = path.len() - 1;
    let mut inner_ok = Vec::new();
    let mut outer_ok = Vec::new();
    for s in 1..=len {
        let sh = f.codomain.shadow(path[s], radius)?;
        if image_contained(f, &sh.members, &fi) {
            inner_ok.push(s as u32);
        }
        if contained(&fo, &sh.members) {
            outer_ok.push(s as u32);
        }
    }
    let mut best: Option<u32> = None;
    for &hi in &inner_ok {
        let at = outer_ok.partition_point(|&s| s <= hi);
        if at == 0 {
            continue;
        }
        let lo = outer_ok[at - 1];
        let t = hi - lo;
        if best.map_or(true, |b| t < b) {
            best = Some(t);
        }
    }
    Ok(best.map(|t| (ring.ln_t(), t)))
}

/// Least-squares slope clamped to >= 1, offset raised to the envelope.
fn envelope_fit(samples: &[(u32, u32)]) -> (f64, f64, f64, f64) {
    let n = samples.len() as f64;
    let mean_x = samples.iter().map(|&(x, _)| x as f64).sum::<f64>() / n;
    let mean_y = samples.iter().map(|&(_, y)| y as f64).sum::<f64>() / n;
    let var: f64 = samples
        .iter()
        .map(|&(x, _)| (x as f64 - mean_x).powi(2))
        .sum();
    let cov: f64 = samples
        .iter()
        .map(|&(x, y)| (x as f64 - mean_x) * (y as f64 - mean_y))
        .sum();
    let a_raw = if var > 0.0 { cov / var } else { 1.0 };
    let a = a_raw.max(1.0);
    let b = samples
        .iter()
        .map(|&(x, y)| y as f64 - a * x as f64)
        .fold(0.0f64, f64::max)
        .max(0.0);
    let residual_max = samples
        .iter()
        .map(|&(x, y)| y as f64 - (a * x as f64 + b))
        .fold(f64::NEG_INFINITY, f64::max);
    (a_raw, a, b, residual_max)
}

/// One paired horoball in the shadow-preservation measurement. ln L is the
/// larger of the two shifts: how far the codomain inner shadow must deepen
/// to fit inside the image, and how far the outer must widen to cover it.
#[derive(Debug, Clone)]
pub struct HoroballShift {
    pub class: u32,
    pub image_class: u32,
    pub from: CosetId,
    pub to: CosetId,
    pub ln_l_in: u32,
    pub ln_l_out: u32,
}

#[derive(Debug, Clone)]
pub struct ShadowHoroballReport {
    pub radius: u32,
    pub ln_t1: u32,
    /// Max shift over all paired horoballs; None when some horoball admits
    /// no finite shift.
    pub ln_l_hat: Option<u32>,
    pub pairs: Vec<HoroballShift>,
    pub misses: Vec<u32>,
    pub skipped: usize,
}

/// Measures how well the boundary map carries horoball shadow rings to
/// horoball shadow rings: for each parabolic class, the minimal L with
/// (1/L) O(q,R) inside f(O(p,R)) and f(T1 O(p,R)) inside L O(q,R), where p
/// and q are the ring centers on the two designated geodesics.
pub fn measure_shadow_horoball_preservation(
    f: &BoundaryMap,
    radius: u32,
    delta_hat: u32,
    c4_hat: u32,
) -> Result<ShadowHoroballReport, QcError> {
    use crate::boundary::horoball_shadow_ring;
    let parabolics: Vec<u32> = (0..f.domain.class_count() as u32)
        .filter(|&i| f.domain.classes[i as usize].parabolic.is_some())
        .collect();
    if parabolics.is_empty() {
        return Err(QcError::NoParabolicClasses);
    }
    let mut pairs = Vec::new();
    let mut misses = Vec::new();
    let mut skipped = 0usize;
    for &i in &parabolics {
        let coset = f.domain.classes[i as usize].parabolic.clone().unwrap();
        let j = f.image_class(i);
        let to = match f.codomain.classes[j as usize].parabolic.clone() {
            Some(c) => c,
            None => return Err(QcError::TagMismatch { class: i, image: j }),
        };
        let rd = match horoball_shadow_ring(&f.domain, &coset, radius, delta_hat, c4_hat) {
            Ok(r) => r,
            Err(_) => {
                skipped += 1;
                continue;
            }
        };
        let dom_path = f.domain.designated_geodesic(i)?;
        let fi = f.image_of_classes(&f.domain.shadow(rd.p, radius)?.members);
        let fo = f.image_of_classes(
            &f.domain
                .shadow(dom_path[rd.outer_pos as usize], radius)?
                .members,
        );

        let cod_path = f.codomain.designated_geodesic(j)?;
        let cod_len = (cod_path.len() - 1) as u32;
        let rec = match f.codomain.space.horoball_index(&to) {
            Some(h) => &f.codomain.space.horoballs[h],
            None => {
                skipped += 1;
                continue;
            }
        };
        let depth = f.codomain.space.depth;
        let entry = match cod_path.iter().position(|&v| rec.contains(v, depth)) {
            Some(p) => p as u32,
            None => {
                skipped += 1;
                continue;
            }
        };
        let q_pos = (entry + radius + delta_hat).min(cod_len);

        let mut ln_l_in = None;
        for k in 0..=cod_len - q_pos {
            let sh = f.codomain.shadow(cod_path[(q_pos + k) as usize], radius)?;
            if image_contained(f, &sh.members, &fi) {
                ln_l_in = Some(k);
                break;
            }
        }
        let mut ln_l_out = None;
        for k in 0..q_pos {
            let sh = f.codomain.shadow(cod_path[(q_pos - k) as usize], radius)?;
            if contained(&fo, &sh.members) {
                ln_l_out = Some(k);
                break;
            }
        }
        match (ln_l_in, ln_l_out) {
            (Some(li), Some(lo)) => pairs.push(HoroballShift {
                class: i,
                image_class: j,
                from: coset,
                to,
                ln_l_in: li,
                ln_l_out: lo,
            }),
            _ => {
                log::debug!(
                    "shadow-horoball miss: class {i} -> {j} in {:?} out {:?} entry {entry} q_pos {q_pos} cod_len {cod_len}",
                    ln_l_in,
                    ln_l_out
                );
                misses.push(i);
            }
        }
    }
    let ln_l_hat = if misses.is_empty() && !pairs.is_empty() {
        Some(
            pairs
                .iter()
                .map(|p| p.ln_l_in.max(p.ln_l_out))
                .max()
                .unwrap(),
        )
    } else {
        None
    };
    Ok(ShadowHoroballReport {
        radius,
        ln_t1: c4_hat + radius + 2 * delta_hat,
        ln_l_hat,
        pairs,
        misses,
        skipped,
    })
}

/// The distortion modulus eta(t) = exp(a ln t + b).
#[derive(Debug, Clone, Copy)]
pub struct Eta {
    pub a: f64,
    pub b: f64,
}

impl Eta {
    pub fn ln_eta(&self, ln_t: u32) -> f64 {
        self.a * ln_t as f64 + self.b
    }

    pub fn ln_eta_ceil(&self, ln_t: u32) -> u32 {
        self.ln_eta(ln_t).ceil().max(0.0) as u32
    }
}

const WITNESS_CLASS_CAP: usize = 8;
const WITNESS_RING_CAP: usize = 32;

/// The comparison set of a center x at scale t: all codomain non-rim
/// vertices y whose R-shadow nests into the image of some witness t-ring
/// around x, with the image of the ring's outer shadow inside the
/// eta(t)-widened shadow of y.
#[derive(Debug, Clone)]
pub struct ESet {
    pub x: u32,
    pub ln_t: u32,
    pub radius: u32,
    /// Witness rings as (class, inner position) on that class's designated
    /// geodesic.
    pub witnesses: Vec<(u32, u32)>,
    pub members: Vec<u32>,
    /// Max distance from the least member to any member (0 when fewer than
    /// two members). The diameter lies in [ecc, 2 ecc].
    pub eccentricity: u32,
    pub flagged: bool,
}

impl ESet {
    /// Exact diameter by one BFS per member.
    pub fn exact_diameter(&self, g: &Graph) -> Result<u32, QcError> {
        if self.members.len() < 2 {
            return Ok(0);
        }
        let eccs: Vec<u32> = self
            .members
            .par_iter()
            .map(|&m| g.bfs_max_to_targets(m, &self.members))
            .collect::<Result<_, _>>()?;
        Ok(eccs.into_iter().max().unwrap_or(0))
    }
}

/// Witness rings plus their image sets, shared between e_set and phi_f.
struct WitnessRings {
    rings: Vec<(u32, u32, Vec<u32>, Vec<u32>)>,
}

fn witness_rings(
    f: &BoundaryMap,
    x: u32,
    ln_t: u32,
    radius: u32,
    delta_hat: u32,
) -> Result<WitnessRings, QcError> {
    let dom = &f.domain;
    let xsh = dom.shadow(x, radius)?;
    let ds_x = dom
        .proxy_distance(x)
        .ok_or(QcError::MissingImage(x))?;
    // Candidate classes: those whose geodesic cone passes nearest to x.
    let mut cand: Vec<u32> = Vec::new();
    for r in 0..=(dom.space.r_cay + dom.space.depth + radius) {
        let sh = dom.shadow(x, r)?;
        if !sh.members.is_empty() {
            cand = sh.members.iter().take(WITNESS_CLASS_CAP).copied().collect();
            break;
        }
    }
    let sep = radius + delta_hat;
    let mut rings = Vec::new();
    'outer: for &a in &cand {
        let len = (dom.designated_geodesic(a)?.len() - 1) as u32;
        let lo = (ln_t + 1).max(ds_x.saturating_sub(sep)).max(1);
        let hi = (ds_x + sep + 2).min(len);
        for s1 in lo..=hi {
            let ring = match make_ring(dom, a, s1, s1 - ln_t, radius) {
                Ok(r) => r,
                Err(_) => continue,
            };
            if ring.inner.members.is_empty() {
                continue;
            }
            if contained(&ring.inner.members, &xsh.members)
                && contained(&xsh.members, &ring.outer.members)
            {
                let fi = f.image_of_classes(&ring.inner.members);
                let fo = f.image_of_classes(&ring.outer.members);
                debug_assert!(contained(&fi, &f.image_of_classes(&xsh.members)));
                rings.push((a, s1, fi, fo));
                if rings.len() >= WITNESS_RING_CAP {
                    break 'outer;
                }
            }
        }
    }
    Ok(WitnessRings { rings })
}

/// Per-map acceleration structure for E-set membership at one (backoff,
/// radius) pair: for each codomain candidate, the image part of its own
/// shadow and of the shadow at its backoff point, plus the inverted lists
/// saying which candidates see a given image class from their backoff.
/// Classes outside the image are invisible to the map, so the membership
/// tests reduce to subset checks on these small slices.
#[derive(Debug)]
struct ImageIndex {
    /// Non-rim, proxy-reachable codomain vertices, ascending.
    candidates: Vec<u32>,
    /// Image classes in the radius-R shadow of each candidate.
    im_shadow: Vec<Box<[u32]>>,
    /// Image classes in the radius-R shadow at the candidate's backoff.
    im_wide: Vec<Box<[u32]>>,
    /// Candidate positions whose backoff shadow sees the image class, by
    /// codomain class id.
    seen_from: HashMap<u32, Vec<u32>>,
}

fn build_image_index(f: &BoundaryMap, k_eta: u32, radius: u32) -> Result<ImageIndex, QcError> {
    let cod = &f.codomain;
    let candidates: Vec<u32> = (0..cod.space.graph.vertex_count() as u32)
        .filter(|&y| {
            !cod.space.rim[y as usize]
                && y != cod.proxy
                && cod.proxy_distance(y).is_some_and(|d| d > 0)
        })
        .collect();
    let mut im_shadow = Vec::with_capacity(candidates.len());
    let mut im_wide = Vec::with_capacity(candidates.len());
    let mut seen_from: HashMap<u32, Vec<u32>> = HashMap::new();
    for (pos, &y) in candidates.iter().enumerate() {
        let ysh = cod.shadow(y, radius)?;
        im_shadow.push(
            ysh.members
                .iter()
                .copied()
                .filter(|&c| f.preimage_class(c).is_some())
                .collect(),
        );
        let ds_y = cod.proxy_distance(y).expect("candidates are reachable");
        let back = cod.backoff(y, k_eta.min(ds_y - 1));
        let wide = cod.shadow(back, radius)?;
        let widepart: Box<[u32]> = wide
            .members
            .iter()
            .copied()
            .filter(|&c| f.preimage_class(c).is_some())
            .collect();
        for &c in widepart.iter() {
            seen_from.entry(c).or_default().push(pos as u32);
        }
        im_wide.push(widepart);
    }
    Ok(ImageIndex {
        candidates,
        im_shadow,
        im_wide,
        seen_from,
    })
}

fn members_for(
    f: &BoundaryMap,
    rings: &WitnessRings,
    k_eta: u32,
    radius: u32,
) -> Result<Vec<u32>, QcError> {
    let idx = {
        let mut cache = f.index_cache.lock().expect("index cache poisoned");
        match cache.get(&(k_eta, radius)) {
            Some(i) => Arc::clone(i),
            None => {
                let built = Arc::new(build_image_index(f, k_eta, radius)?);
                cache.insert((k_eta, radius), Arc::clone(&built));
                built
            }
        }
    };
    // A member must cover some ring's outer image set from its backoff, and
    // that set always holds the image of the ring's own class, so the
    // inverted lists for those classes bound the search.
    let mut pool: Vec<u32> = rings
        .rings
        .iter()
        .filter_map(|&(a, _, _, _)| idx.seen_from.get(&f.image_class(a)))
        .flatten()
        .copied()
        .collect();
    pool.sort_unstable();
    pool.dedup();
    let mut out = Vec::new();
    for &pos in &pool {
        let p = pos as usize;
        for (_, _, fi, fo) in &rings.rings {
            if contained(&idx.im_shadow[p], fi) && contained(fo, &idx.im_wide[p]) {
                out.push(idx.candidates[p]);
                break;
            }
        }
    }
    Ok(out)
}

pub fn e_set(
    f: &BoundaryMap,
    x: u32,
    ln_t: u32,
    radius: u32,
    delta_hat: u32,
    eta: &Eta,
) -> Result<ESet, QcError> {
    let required = ln_lattice(radius + delta_hat);
    if ln_t < required {
        return Err(QcError::ScaleTooSmall { ln_t, required });
    }
    let t_rings = std::time::Instant::now();
    let rings = witness_rings(f, x, ln_t, radius, delta_hat)?;
    let t_rings = t_rings.elapsed();
    let t_members = std::time::Instant::now();
    let members = if rings.rings.is_empty() {
        Vec::new()
    } else {
        members_for(f, &rings, eta.ln_eta_ceil(ln_t), radius)?
    };
    log::debug!(
        "e_set({x}): rings {} in {:?}, members {} in {:?}",
        rings.rings.len(),
        t_rings,
        members.len(),
        t_members.elapsed()
    );
    let eccentricity = if members.len() >= 2 {
        f.codomain
            .space
            .graph
            .bfs_max_to_targets(members[0], &members)?
    } else {
        0
    };
    Ok(ESet {
        x,
        ln_t,
        radius,
        witnesses: rings.rings.iter().map(|&(a, s1, _, _)| (a, s1)).collect(),
        flagged: members.is_empty(),
        members,
        eccentricity,
    })
}

/// The vertex map induced by a boundary map: each non-rim domain vertex goes
/// to the least member of its E-set at the reference scale t0 = 3R + 2 delta
/// (lifted to the ln lattice); the anchor proxy goes to the anchor proxy.
#[derive(Debug)]
pub struct PhiReport {
    pub map: VertexMap,
    pub t0_ln: u32,
    /// Max exact E-set diameter.
    pub d_hat: u32,
    pub e_sets: usize,
    pub max_members: usize,
    pub qi: QiReport,
}

pub fn phi_f(
    f: &BoundaryMap,
    radius: u32,
    delta_hat: u32,
    eta: &Eta,
    qi_samples: usize,
    seed: u64,
) -> Result<PhiReport, QcError> {
    let t0_ln = ln_lattice(3 * radius + 2 * delta_hat).max(1);
    let dom_space = &f.domain.space;
    let centers: Vec<u32> = (0..dom_space.graph.vertex_count() as u32)
        .filter(|&v| !dom_space.rim[v as usize] && v != f.domain.proxy)
        .collect();
    let sets: Vec<ESet> = centers
        .par_iter()
        .map(|&x| e_set(f, x, t0_ln, radius, delta_hat, eta))
        .collect::<Result<_, QcError>>()?;

    let empty: Vec<u32> = sets
        .iter()
        .filter(|s| s.flagged)
        .map(|s| s.x)
        .collect();
    if let Some(&first) = empty.first() {
        return Err(QcError::EmptySets {
            count: empty.len(),
            first,
        });
    }

    let mut forward: Vec<Option<u32>> = vec![None; dom_space.graph.vertex_count()];
    forward[f.domain.proxy as usize] = Some(f.codomain.proxy);
    for set in &sets {
        forward[set.x as usize] = Some(set.members[0]);
    }
    let map = VertexMap::new(
        Arc::clone(&f.domain.space),
        Arc::clone(&f.codomain.space),
        forward,
        None,
    )?;

    // Exact D-hat: diameters lie in [ecc, 2 ecc], so refine in descending
    // 2 ecc order until the next upper bound cannot beat the best exact.
    let mut order: Vec<usize> = (0..sets.len()).collect();
    order.sort_unstable_by_key(|&i| std::cmp::Reverse(sets[i].eccentricity));
    let mut d_hat = 0;
    for &i in &order {
        if 2 * sets[i].eccentricity <= d_hat {
            break;
        }
        d_hat = d_hat.max(sets[i].exact_diameter(&f.codomain.space.graph)?);
    }

    let qi = measure_qi(&map, qi_samples, seed)?;
    Ok(PhiReport {
        t0_ln,
        d_hat,
        e_sets: sets.len(),
        max_members: sets.iter().map(|s| s.members.len()).max().unwrap_or(0),
        map,
        qi,
    })
}

/// Max deviation of the induced vertex map from the boundary assignment:
/// for each domain class, how far the image of its designated geodesic
/// strays from the designated geodesic of the image class.
#[derive(Debug, Clone)]
pub struct CoincidenceReport {
    pub max_deviation: u32,
    pub at: Option<(u32, u32)>,
    pub checked: usize,
    pub skipped: usize,
    /// ln eta(t0) + R + 2 delta_hat.
    pub bound: u32,
}

pub fn boundary_coincidence(
    f: &BoundaryMap,
    phi: &VertexMap,
    radius: u32,
    delta_hat: u32,
    eta: &Eta,
) -> Result<CoincidenceReport, QcError> {
    let t0_ln = ln_lattice(3 * radius + 2 * delta_hat).max(1);
    let bound = eta.ln_eta_ceil(t0_ln) + radius + 2 * delta_hat;
    let per_class: Vec<(u32, Option<(u32, u32)>, usize, usize)> = (0..f.domain.class_count()
        as u32)
        .into_par_iter()
        .map(|i| {
            let dom_path = f.domain.designated_geodesic(i)?;
            let cod_path = f.codomain.designated_geodesic(f.image_class(i))?;
            let row = f
                .codomain
                .space
                .graph
                .multi_source_distances(&cod_path)?;
            let mut worst = 0;
            let mut at = None;
            let mut checked = 0;
            let mut skipped = 0;
            for &x in &dom_path {
                let y = match phi.image(x) {
                    Some(y) => y,
                    None => {
                        skipped += 1;
                        continue;
                    }
                };
                let dev = row[y as usize].expect("connected");
                checked += 1;
                if dev > worst || at.is_none() {
                    worst = dev;
                    at = Some((i, x));
                }
            }
            Ok((worst, at, checked, skipped))
        })
        .collect::<Result<_, QcError>>()?;
    let mut report = CoincidenceReport {
        max_deviation: 0,
        at: None,
        checked: 0,
        skipped: 0,
        bound,
    };
    for (worst, at, checked, skipped) in per_class {
        if worst > report.max_deviation || report.at.is_none() {
            report.max_deviation = worst;
            report.at = at;
        }
        report.checked += checked;
        report.skipped += skipped;
    }
    Ok(report)
}

/// The vertex minimizing its max distance to the three pairwise geodesics
/// between the corners (least id on ties), with that max distance.
pub fn quasi_projection(g: &Graph, corners: [u32; 3]) -> Result<(u32, u32), QcError> {
    let [a, b, c] = corners;
    let sides = [
        g.one_geodesic(a, b)?,
        g.one_geodesic(b, c)?,
        g.one_geodesic(a, c)?,
    ];
    let rows: Vec<Vec<Option<u32>>> = sides
        .iter()
        .map(|s| g.multi_source_distances(s))
        .collect::<Result<_, _>>()?;
    let mut best: Option<(u32, u32)> = None;
    for v in 0..g.vertex_count() as u32 {
        let mut worst = 0;
        let mut reachable = true;
        for row in &rows {
            match row[v as usize] {
                Some(d) => worst = worst.max(d),
                None => {
                    reachable = false;
                    break;
                }
            }
        }
        if reachable && best.map_or(true, |(bw, bv)| (worst, v) < (bw, bv)) {
            best = Some((worst, v));
        }
    }
    let (radius, v) = best.ok_or(QcError::NoPairs)?;
    Ok((v, radius))
}

/// The induced map projected back to group vertices: each image snaps to
/// its nearest codomain group vertex (least id on ties). Reports the word
/// metric quasi-isometry constants of the projected map and the max gap
/// between the projection and the unprojected images.
#[derive(Debug, Clone)]
pub struct GroupProjectionReport {
    pub word_lambda: f64,
    pub word_k: u32,
    pub pairs: usize,
    pub group_vertices: usize,
    /// Max distance from an image to its projection; the extension of the
    /// projected map back over the cusped space by the unprojected images
    /// stays within this of the original.
    pub max_extension_gap: u32,
    pub word_map: Vec<(u32, u32)>,
}

impl GroupProjectionReport {
    /// The projected assignment as a vertex map on group vertices, for the
    /// cusp-preservation measurement.
    pub fn vertex_map(
        &self,
        domain: Arc<CuspedBall>,
        codomain: Arc<CuspedBall>,
    ) -> Result<VertexMap, QcError> {
        let mut forward = vec![None; domain.graph.vertex_count()];
        for &(v, y) in &self.word_map {
            forward[v as usize] = Some(y);
        }
        VertexMap::new(domain, codomain, forward, None)
    }
}

pub fn project_to_group(
    phi: &VertexMap,
    samples: usize,
    seed: u64,
) -> Result<GroupProjectionReport, QcError> {
    let cod = &phi.codomain;
    let group_count = cod.group_vertex_count() as u32;
    let sources: Vec<(u32, u32)> = (0..group_count).map(|g| (g, g)).collect();
    let field = cod.graph.labeled_multi_source(&sources)?;

    let mut word_map = Vec::new();
    let mut max_gap = 0;
    for v in 0..phi.domain.group_vertex_count() as u32 {
        if phi.domain.rim[v as usize] {
            continue;
        }
        let y = phi.image(v).ok_or(QcError::MissingImage(v))?;
        let (d, nearest) = field[y as usize].expect("connected");
        max_gap = max_gap.max(d);
        word_map.push((v, nearest));
    }
    if word_map.len() < 2 {
        return Err(QcError::NoPairs);
    }

    let chosen: Vec<(u32, u32)> = if samples >= word_map.len() {
        word_map.clone()
    } else {
        let mut pool = word_map.clone();
        let mut rng = labeled_rng(seed, "word-pairs");
        for i in 0..samples {
            let j = rng.gen_range(i..pool.len());
            pool.swap(i, j);
        }
        pool.truncate(samples);
        pool
    };
    let mut dist_pairs = Vec::new();
    for i in 0..chosen.len() {
        let (u1, y1) = chosen[i];
        let e1 = phi.domain.element(u1).expect("group vertex");
        let f1 = cod.element(y1).expect("group vertex");
        for &(u2, y2) in chosen.iter().skip(i + 1) {
            let e2 = phi.domain.element(u2).expect("group vertex");
            let f2 = cod.element(y2).expect("group vertex");
            dist_pairs.push((
                phi.domain.spec.distance(e1, e2),
                cod.spec.distance(f1, f2),
            ));
        }
    }
    let (word_lambda, word_k) = fit_qi_grid(&dist_pairs);
    Ok(GroupProjectionReport {
        word_lambda,
        word_k,
        pairs: dist_pairs.len(),
        group_vertices: word_map.len(),
        max_extension_gap: max_gap,
        word_map,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundary::{build_atlas, AnchorSpec};
    use crate::cusped::build_cusped_ball;
    use crate::group::free_ab_with_product_generator;

    fn cusped_pair_space() -> Arc<CuspedBall> {
        let spec = GroupSpec::free(&["a", "b"]).with_peripheral(&[0]);
        Arc::new(build_cusped_ball(&spec, 6, 4, 1 << 22).unwrap())
    }

    fn product_space(r_cay: u32, depth: u32) -> Arc<CuspedBall> {
        let spec = free_ab_with_product_generator().with_peripheral(&[0]);
        Arc::new(build_cusped_ball(&spec, r_cay, depth, 1 << 22).unwrap())
    }

    fn tree_space() -> Arc<CuspedBall> {
        let spec = GroupSpec::free(&["a", "b"]);
        Arc::new(build_cusped_ball(&spec, 6, 0, 1 << 22).unwrap())
    }

    fn tree_atlas() -> Arc<BoundaryAtlas> {
        let root = tree_space();
        Arc::new(build_atlas(Arc::clone(&root), AnchorSpec::Horizon(0), 3, 4).unwrap())
    }

    fn cusped_atlas(space: &Arc<CuspedBall>) -> Arc<BoundaryAtlas> {
        let coset = space.spec.coset_of(&Element::identity(), 0).unwrap();
        Arc::new(build_atlas(Arc::clone(space), AnchorSpec::Parabolic(coset), 3, 5).unwrap())
    }

    #[test]
    fn identity_map_is_a_1_0_quasi_isometry() {
        let space = cusped_pair_space();
        let map = VertexMap::identity(&space);
        let qi = measure_qi(&map, 60, 3).unwrap();
        assert_eq!(qi.lambda_hat, 1.0);
        assert_eq!(qi.k_hat, 0);
        assert_eq!(qi.surjectivity_radius, 0);
        assert!(qi.pairs > 1000);
    }

    #[test]
    fn canonical_identification_between_generating_sets() {
        let dom = Arc::new(
            build_cusped_ball(&GroupSpec::free(&["a", "b"]).with_peripheral(&[0]), 5, 3, 1 << 22)
                .unwrap(),
        );
        let cod = product_space(5, 3);
        let map = VertexMap::canonical_identification(
            Arc::clone(&dom),
            Arc::clone(&cod),
            &[],
            &[("c", "a b")],
        )
        .unwrap();
        // a b reduces to the extra generator on the other side.
        let ab = dom.group_vertex(&dom.spec.parse_word("a b").unwrap()).unwrap();
        let c = cod.group_vertex(&cod.spec.parse_word("c").unwrap()).unwrap();
        assert_eq!(map.image(ab), Some(c));

        // Word lengths differ by at most a factor of two and nothing else.
        let qi = measure_qi(&map, usize::MAX, 0).unwrap();
        assert!(qi.exhaustive);
        assert!(qi.lambda_hat <= 2.0, "lambda {}", qi.lambda_hat);
        assert!(qi.k_hat <= 1, "k {}", qi.k_hat);

        // The inverse is genuinely partial: expanding c back to a b doubles
        // word lengths, pushing many codomain elements past the truncation.
        let (mapped, total) = map.backward_coverage().unwrap();
        assert!(mapped * 4 > total, "inverse covers {mapped}/{total}");
        assert_eq!(map.preimage(c), Some(ab));
    }

    #[test]
    fn collapse_map_reports_degenerate() {
        let space = cusped_pair_space();
        let map = VertexMap::from_fn(Arc::clone(&space), Arc::clone(&space), |_| Some(0)).unwrap();
        match measure_qi(&map, 40, 7) {
            Err(QcError::QiDegenerate { witness, .. }) => assert_ne!(witness.0, witness.1),
            other => panic!("expected degenerate fit, got {other:?}"),
        }
    }

    #[test]
    fn cusp_preservation_identity_and_generating_sets() {
        let space = cusped_pair_space();
        let report = measure_cusp_preserving(&VertexMap::identity(&space)).unwrap();
        assert_eq!(report.c_hat, 0);
        assert!(report.inverse_checked);
        assert_eq!(report.pairs.len(), 2 * space.horoballs.len());
        for p in &report.pairs {
            assert_eq!(p.from, p.to);
            assert_eq!(p.penetration, 0);
        }

        let dom = Arc::new(
            build_cusped_ball(&GroupSpec::free(&["a", "b"]).with_peripheral(&[0]), 5, 3, 1 << 22)
                .unwrap(),
        );
        let cod = product_space(5, 3);
        let map = VertexMap::canonical_identification(
            Arc::clone(&dom),
            Arc::clone(&cod),
            &[],
            &[("c", "a b")],
        )
        .unwrap();
        let report = measure_cusp_preserving(&map).unwrap();
        assert!(report.c_hat <= 2, "c_hat {}", report.c_hat);
        // Forward pairing: the horoball over g<a> lands on the horoball over
        // the translated coset.
        let fwd_gens = generator_images(&dom.spec, &cod.spec, &[]).unwrap();
        for p in report
            .pairs
            .iter()
            .filter(|p| p.direction == MapDirection::Forward)
        {
            let translated = translate_element(&cod.spec, &fwd_gens, &p.from.rep);
            let expected = cod.spec.coset_of(&translated, 0).unwrap();
            assert_eq!(p.to, expected);
        }
    }

    #[test]
    fn boundary_extension_of_identity_is_identity() {
        let space = cusped_pair_space();
        let atlas = cusped_atlas(&space);
        let map = VertexMap::identity(&space);
        let f = extend_to_boundary(&map, &atlas, &atlas).unwrap();
        for i in 0..atlas.class_count() as u32 {
            assert_eq!(f.image_class(i), i);
        }
        assert!(f.tags_preserved());
    }

    #[test]
    fn line_inversion_swaps_the_two_ends() {
        let spec = GroupSpec::free(&["a"]);
        let space = Arc::new(build_cusped_ball(&spec, 8, 0, 1 << 22).unwrap());
        let atlas = Arc::new(build_atlas(Arc::clone(&space), AnchorSpec::Horizon(0), 5, 1).unwrap());
        let invert = |v: u32| {
            let e = space.element(v)?;
            let flipped: Vec<Sym> = e.word().iter().rev().map(|s| s.inverse()).collect();
            space.group_vertex(&space.spec.reduce_word(&flipped))
        };
        let map = VertexMap::from_fn(Arc::clone(&space), Arc::clone(&space), invert).unwrap();
        let f = extend_to_boundary(&map, &atlas, &atlas).unwrap();
        assert_eq!(atlas.class_count(), 2);
        assert_eq!(f.image_class(0), 1);
        assert_eq!(f.image_class(1), 0);
    }

    #[test]
    fn identity_distortion_is_flat() {
        let atlas = tree_atlas();
        let f = BoundaryMap::identity(&atlas);
        let report =
            measure_distortion(&f, 1, 0, RingSource::Exhaustive, Some((1.0, 0, 0))).unwrap();
        assert!(report.used >= 30, "used {}", report.used);
        assert_eq!(report.a, 1.0);
        assert_eq!(report.b, 0.0);
        for &(lnt, lnt2) in &report.samples {
            assert!(lnt2 <= lnt, "minimal image ring no wider than the source");
        }
        assert!(!report.flagged_skips);
        let theory = report.theory.unwrap();
        assert_eq!(theory.slope, 1.0);
        assert_eq!(theory.r2, 1.0);
    }

    #[test]
    fn sampled_distortion_is_deterministic() {
        let space = cusped_pair_space();
        let atlas = cusped_atlas(&space);
        let f = BoundaryMap::identity(&atlas);
        let source = RingSource::Sampled {
            count: 120,
            seed: 11,
        };
        let r1 = measure_distortion(&f, 2, 1, source, None).unwrap();
        let r2 = measure_distortion(&f, 2, 1, source, None).unwrap();
        assert_eq!(r1.samples, r2.samples);
        assert!(r1.used >= 60, "used {}", r1.used);
        assert!(r1.a >= 1.0);
        assert!(r1.residual_max <= 0.0);
    }

    #[test]
    fn identity_preserves_horoball_shadow_rings_exactly() {
        let space = cusped_pair_space();
        let atlas = cusped_atlas(&space);
        let f = BoundaryMap::identity(&atlas);
        let report = measure_shadow_horoball_preservation(&f, 2, 1, 1).unwrap();
        assert!(report.misses.is_empty());
        assert!(!report.pairs.is_empty());
        assert_eq!(report.ln_t1, 5);
        // The inner clause is an equality at shift 0; the outer clause must
        // swallow the T1-widened ring, so even the identity needs L up to T1.
        for p in &report.pairs {
            assert_eq!(p.ln_l_in, 0);
            assert!(p.ln_l_out <= report.ln_t1);
        }
        assert_eq!(report.ln_l_hat, Some(report.ln_t1));
    }

    #[test]
    fn tree_has_no_parabolic_pairs() {
        let atlas = tree_atlas();
        let f = BoundaryMap::identity(&atlas);
        match measure_shadow_horoball_preservation(&f, 1, 0, 0) {
            Err(QcError::NoParabolicClasses) => {}
            other => panic!("expected NoParabolicClasses, got {other:?}"),
        }
    }

    #[test]
    fn e_set_of_identity_contains_its_center() {
        let atlas = tree_atlas();
        let f = BoundaryMap::identity(&atlas);
        let eta = Eta { a: 1.0, b: 0.0 };
        // x = the vertex of a^2: on the designated geodesic of its own class.
        let v = |w: &str| {
            atlas
                .space
                .group_vertex(&atlas.space.spec.parse_word(w).unwrap())
                .unwrap()
        };
        let x = v("a a");
        let set = e_set(&f, x, 2, 1, 0, &eta).unwrap();
        assert!(!set.flagged);
        // The only witness rings at ln t = 2 through a^2 are B = O(rep, 1)
        // over tB = O(a, 1) for the three classes whose cones pass a^2, and
        // exactly the three reps below a^2 have R-shadows nesting into B.
        assert_eq!(set.members, vec![v("a a a"), v("a a b"), v("a a b'")]);
        let diam = set.exact_diameter(&atlas.space.graph).unwrap();
        assert_eq!(diam, 2);
        assert!(diam <= 2 * (eta.ln_eta_ceil(2) + 1) + 2);
        assert!(set.eccentricity <= diam && diam <= 2 * set.eccentricity.max(1));
    }

    #[test]
    fn e_set_rejects_scales_below_the_lattice_bound() {
        let atlas = tree_atlas();
        let f = BoundaryMap::identity(&atlas);
        let eta = Eta { a: 1.0, b: 0.0 };
        match e_set(&f, 1, 0, 5, 3, &eta) {
            Err(QcError::ScaleTooSmall { required, .. }) => assert_eq!(required, 3),
            other => panic!("expected ScaleTooSmall, got {other:?}"),
        }
    }

    #[test]
    fn phi_of_identity_boundary_map_stays_near_identity() {
        let atlas = tree_atlas();
        let f = BoundaryMap::identity(&atlas);
        let eta = Eta { a: 1.0, b: 0.0 };
        let report = phi_f(&f, 1, 0, &eta, usize::MAX, 0).unwrap();
        assert_eq!(report.t0_ln, 2);
        assert!(report.e_sets > 20);
        // E-set members have shadows nesting below the center, so phi only
        // drifts down the center's cone: at most 2 here (phi(a) = a^3, the
        // least member of E(a)), and never past D-hat.
        let mut drift = 0;
        for x in 0..atlas.space.graph.vertex_count() as u32 {
            if atlas.space.rim[x as usize] || x == atlas.proxy {
                continue;
            }
            let y = report.map.image(x).unwrap();
            let row = atlas.space.graph.bfs_distances(x).unwrap();
            let d = row[y as usize].unwrap();
            assert!(
                d <= report.d_hat,
                "phi({x}) = {y} drifts past D-hat {}",
                report.d_hat
            );
            drift = drift.max(d);
        }
        assert_eq!(drift, 2);
        assert!(report.qi.lambda_hat <= 2.0);
        assert!(report.qi.k_hat as u32 <= 2 * report.d_hat + 2);
    }

    #[test]
    fn coincidence_of_identity_phi_is_within_bound() {
        let atlas = tree_atlas();
        let f = BoundaryMap::identity(&atlas);
        let eta = Eta { a: 1.0, b: 0.0 };
        let report = phi_f(&f, 1, 0, &eta, 50, 0).unwrap();
        let co = boundary_coincidence(&f, &report.map, 1, 0, &eta).unwrap();
        assert!(co.checked > 50);
        assert!(
            co.max_deviation <= co.bound,
            "deviation {} over bound {}",
            co.max_deviation,
            co.bound
        );
    }

    #[test]
    fn quasi_projection_finds_tree_medians_and_cycle_centers() {
        // Tripod: three legs of length 2 from a hub.
        let mut g = Graph::with_vertices(7);
        for (u, v) in [(0, 1), (1, 2), (0, 3), (3, 4), (0, 5), (5, 6)] {
            g.add_edge(u, v).unwrap();
        }
        let (v, r) = quasi_projection(&g, [2, 4, 6]).unwrap();
        assert_eq!((v, r), (0, 0));

        // 6-cycle with alternating corners: every vertex is distance <= 1
        // from the three sides; vertex 1 attains it first.
        let mut c = Graph::with_vertices(6);
        for i in 0..6u32 {
            c.add_edge(i, (i + 1) % 6).unwrap();
        }
        let (v, r) = quasi_projection(&c, [0, 2, 4]).unwrap();
        assert_eq!(r, 1);
        assert_eq!(v, 1);
    }

    #[test]
    fn quasi_projection_on_cusped_triples_is_tight() {
        let space = cusped_pair_space();
        // delta_hat = 1 at this scale; the projection radius stays within
        // 2 delta_hat + 1 on sampled triples.
        let mut rng = labeled_rng(23, "qp-triples");
        let n = space.graph.vertex_count() as u32;
        for _ in 0..12 {
            let a = rng.gen_range(0..n);
            let b = rng.gen_range(0..n);
            let c = rng.gen_range(0..n);
            if a == b || b == c || a == c {
                continue;
            }
            let (_, r) = quasi_projection(&space.graph, [a, b, c]).unwrap();
            assert!(r <= 3, "projection radius {r} for corners {a} {b} {c}");
        }
    }

    #[test]
    fn group_projection_of_identity_is_the_identity() {
        let space = cusped_pair_space();
        let map = VertexMap::identity(&space);
        let report = project_to_group(&map, 50, 5).unwrap();
        assert_eq!(report.max_extension_gap, 0);
        assert_eq!(report.word_lambda, 1.0);
        assert_eq!(report.word_k, 0);
        for &(g, y) in &report.word_map {
            assert_eq!(g, y);
        }
    }

    #[test]
    fn vertex_map_validation_rejects_bad_input() {
        let space = cusped_pair_space();
        let other = tree_space();
        match VertexMap::new(
            Arc::clone(&space),
            Arc::clone(&space),
            vec![None; 3],
            None,
        ) {
            Err(QcError::LengthMismatch { .. }) => {}
            other => panic!("expected LengthMismatch, got {other:?}"),
        }
        match VertexMap::from_fn(Arc::clone(&space), Arc::clone(&other), |_| None) {
            Err(QcError::NotTotal { .. }) => {}
            other => panic!("expected NotTotal, got {other:?}"),
        }
        match VertexMap::from_entries(Arc::clone(&space), Arc::clone(&space), &[(1, 1), (1, 2)]) {
            Err(QcError::DuplicateSource(1)) => {}
            other => panic!("expected DuplicateSource, got {other:?}"),
        }
        let atlas = cusped_atlas(&space);
        let tatlas = tree_atlas();
        let map = VertexMap::identity(&space);
        match extend_to_boundary(&map, &atlas, &tatlas) {
            Err(QcError::SpaceMismatch) => {}
            other => panic!("expected mismatch, got {other:?}"),
        }
    }
}
