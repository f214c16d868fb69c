use cusped_core::boundary::{build_atlas, AnchorSpec};
use cusped_core::cusped::build_cusped_ball;
use cusped_core::group::{free_ab_with_product_generator, Element, GroupSpec};
use cusped_core::qc::{self, RingSource, VertexMap};
use std::sync::Arc;
use std::time::Instant;

fn main() {
    env_logger::init();
    let depth: u32 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let nsets: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(13);
    let t_all = Instant::now();
    let ab = GroupSpec::free(&["a", "b"]).with_peripheral(&[0]);
    let abc = free_ab_with_product_generator().with_peripheral(&[0]);
    let dom_cb = Arc::new(build_cusped_ball(&ab, 7, depth, 1 << 22).unwrap());
    let cod_cb = Arc::new(build_cusped_ball(&abc, 7, depth, 1 << 22).unwrap());
    println!("balls: dom {} cod {} ({:?})", dom_cb.graph.vertex_count(), cod_cb.graph.vertex_count(), t_all.elapsed());

    let t = Instant::now();
    let dom_coset = dom_cb.spec.coset_of(&Element::identity(), 0).unwrap();
    let cod_coset = cod_cb.spec.coset_of(&Element::identity(), 0).unwrap();
    let dom_atlas = Arc::new(build_atlas(Arc::clone(&dom_cb), AnchorSpec::Parabolic(dom_coset), 4, 6).unwrap());
    let cod_atlas = Arc::new(build_atlas(Arc::clone(&cod_cb), AnchorSpec::Parabolic(cod_coset), 4, 7).unwrap());
    println!("atlases: dom {} ({} par), cod {} ({} par) ({:?})",
        dom_atlas.class_count(), dom_atlas.parabolic_class_count(),
        cod_atlas.class_count(), cod_atlas.parabolic_class_count(), t.elapsed());

    let t = Instant::now();
    let map = VertexMap::canonical_identification(Arc::clone(&dom_cb), Arc::clone(&cod_cb),
        &[("a", "a"), ("b", "b")], &[("a", "a"), ("b", "b"), ("c", "a b")]).unwrap();
    let qi = qc::measure_qi(&map, 400, 11).unwrap();
    println!("qi: lambda {} k {} surj {} ({:?})", qi.lambda_hat, qi.k_hat, qi.surjectivity_radius, t.elapsed());

    let t = Instant::now();
    let f = match qc::extend_to_boundary(&map, &dom_atlas, &cod_atlas) {
        Ok(f) => {
            println!("extension: image {} of {}, tag mismatches {} ({:?})",
                f.image_class_count(), cod_atlas.class_count(), f.tag_mismatches.len(), t.elapsed());
            f
        }
        Err(e) => { println!("extension FAILED: {e}"); return; }
    };

    let t = Instant::now();
    let dist = qc::measure_distortion(&f, 5, 2, RingSource::Sampled { count: 200, seed: 13 }, None);
    match &dist {
        Ok(d) => println!("distortion: A {:.3} B {:.3} residual {:.3} used {} skipped {} ({:?})",
            d.a, d.b, d.residual_max, d.used, d.skipped, t.elapsed()),
        Err(e) => println!("distortion FAILED: {e}"),
    }

    let t = Instant::now();
    match qc::measure_shadow_horoball_preservation(&f, 5, 2, 1) {
        Ok(s) => println!("shadow-horoball: ln_l_hat {:?} pairs {} misses {} skipped {} ({:?})",
            s.ln_l_hat, s.pairs.len(), s.misses.len(), s.skipped, t.elapsed()),
        Err(e) => println!("shadow-horoball FAILED: {e}"),
    }

    if let Ok(d) = &dist {
        let eta = d.eta();
        let t = Instant::now();
        let t0 = qc::ln_lattice(3 * 5 + 2 * 2).max(1);
        let mut nonempty = 0;
        let mut count = 0;
        for x in (1..dom_cb.graph.vertex_count() as u32).step_by(997).take(nsets) {
            if dom_cb.rim[x as usize] || x == dom_atlas.proxy { continue; }
            match qc::e_set(&f, x, t0, 5, 2, &eta) {
                Ok(es) => { count += 1; if !es.members.is_empty() { nonempty += 1; } }
                Err(e) => { println!("  e_set({x}) ERR {e}"); count += 1; }
            }
        }
        println!("e_sets: {nonempty}/{count} non-empty, t0_ln {t0} ({:?})", t.elapsed());

        if std::env::args().nth(3).as_deref() == Some("phi") {
            let t = Instant::now();
            match qc::phi_f(&f, 5, 2, &eta, 400, 11) {
                Ok(phi) => {
                    println!("phi_f: e_sets {} max_members {} d_hat {} qi ({}, {}) surj {} ({:?})",
                        phi.e_sets, phi.max_members, phi.d_hat, phi.qi.lambda_hat, phi.qi.k_hat,
                        phi.qi.surjectivity_radius, t.elapsed());
                    let t = Instant::now();
                    match qc::boundary_coincidence(&f, &phi.map, 5, 2, &eta) {
                        Ok(c) => println!("coincidence: max {} bound {} checked {} skipped {} ({:?})",
                            c.max_deviation, c.bound, c.checked, c.skipped, t.elapsed()),
                        Err(e) => println!("coincidence FAILED: {e}"),
                    }
                    let t = Instant::now();
                    let mut dev_max = 0u32;
                    let mut dev_at = 0u32;
                    for x in 0..dom_cb.graph.vertex_count() as u32 {
                        if let (Some(a), Some(b)) = (phi.map.image(x), map.image(x)) {
                            let row = cod_cb.graph.bfs_distances(a).unwrap();
                            let d = row[b as usize].unwrap();
                            if d > dev_max { dev_max = d; dev_at = x; }
                        }
                    }
                    println!("sup d(phi_f, phi): {} at {} ({:?})", dev_max, dev_at, t.elapsed());
                    let t = Instant::now();
                    match qc::project_to_group(&phi.map, 400, 11) {
                        Ok(proj) => {
                            let vm = proj.vertex_map(Arc::clone(&dom_cb), Arc::clone(&cod_cb)).unwrap();
                            match qc::measure_cusp_preserving(&vm) {
                                Ok(c) => println!("cusp(proj): c_hat {} word ({:.2}, {}) gap {} ({:?})",
                                    c.c_hat, proj.word_lambda, proj.word_k, proj.max_extension_gap, t.elapsed()),
                                Err(e) => println!("cusp FAILED: {e}"),
                            }
                        }
                        Err(e) => println!("project FAILED: {e}"),
                    }
                }
                Err(e) => println!("phi_f FAILED: {e}"),
            }
        }
    }
    println!("total {:?}", t_all.elapsed());
}
