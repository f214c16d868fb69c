use cusped_core::boundary::{build_atlas, AnchorSpec};
use cusped_core::cusped::build_cusped_ball;
use cusped_core::group::{free_ab_with_product_generator, Element, GroupSpec};
use cusped_core::qc::VertexMap;
use std::collections::HashMap;
use std::sync::Arc;

fn main() {
    let ab = GroupSpec::free(&["a", "b"]).with_peripheral(&[0]);
    let abc = free_ab_with_product_generator().with_peripheral(&[0]);
    let dom_cb = Arc::new(build_cusped_ball(&ab, 7, 5, 1 << 22).unwrap());
    let cod_cb = Arc::new(build_cusped_ball(&abc, 7, 5, 1 << 22).unwrap());
    let dom_coset = dom_cb.spec.coset_of(&Element::identity(), 0).unwrap();
    let cod_coset = cod_cb.spec.coset_of(&Element::identity(), 0).unwrap();
    let dom_atlas = Arc::new(build_atlas(Arc::clone(&dom_cb), AnchorSpec::Parabolic(dom_coset), 4, 6).unwrap());
    let cod_tau: u32 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(7);
    let cod_atlas = Arc::new(build_atlas(Arc::clone(&cod_cb), AnchorSpec::Parabolic(cod_coset), 4, cod_tau).unwrap());
    println!("cod tau {} -> {} classes ({} par)", cod_tau, cod_atlas.class_count(), cod_atlas.parabolic_class_count());
    let map = VertexMap::canonical_identification(Arc::clone(&dom_cb), Arc::clone(&cod_cb),
        &[("a", "a"), ("b", "b")], &[("a", "a"), ("b", "b"), ("c", "a b")]).unwrap();

    // class size / rep-depth histogram for the domain
    let mut size_hist: HashMap<(bool, usize), usize> = HashMap::new();
    for c in &dom_atlas.classes {
        *size_hist.entry((c.parabolic.is_some(), c.members.len().min(5))).or_default() += 1;
    }
    println!("domain class (parabolic, size<=5) histogram: {:?}", {
        let mut v: Vec<_> = size_hist.into_iter().collect(); v.sort(); v
    });

    let base = cod_cb.identity_vertex();
    let row0 = cod_cb.graph.bfs_distances(base).unwrap();
    let reps: Vec<u32> = cod_atlas.classes.iter().map(|c| c.rep).collect();
    let mut assign: Vec<u32> = Vec::new();
    for class in &dom_atlas.classes {
        let y = map.image(class.rep).unwrap();
        let row_y = cod_cb.graph.bfs_distances(y).unwrap();
        let dy = row0[y as usize].unwrap();
        let mut best: Option<(i64, u32)> = None;
        for (j, &r) in reps.iter().enumerate() {
            let dr = row0[r as usize].unwrap() as i64;
            let dyr = row_y[r as usize].unwrap() as i64;
            let doubled = dy as i64 + dr - dyr;
            if best.map_or(true, |(b, _)| doubled > b) {
                best = Some((doubled, j as u32));
            }
        }
        assign.push(best.unwrap().1);
    }
    let mut by_image: HashMap<u32, Vec<u32>> = HashMap::new();
    for (i, &j) in assign.iter().enumerate() {
        by_image.entry(j).or_default().push(i as u32);
    }
    let collisions: Vec<(u32, Vec<u32>)> = by_image.iter()
        .filter(|(_, v)| v.len() > 1)
        .map(|(&j, v)| (j, v.clone()))
        .collect();
    println!("collisions: {} image classes receive >1 domain class", collisions.len());
    let ds = |v: u32| dom_atlas.proxy_distance(v).unwrap();
    for (j, group) in collisions.iter().take(8) {
        let info: Vec<String> = group.iter().map(|&i| {
            let c = &dom_atlas.classes[i as usize];
            format!("dom{}(par={},n={},rep_ds={},rep={})", i, c.parabolic.is_some(), c.members.len(), ds(c.rep),
                dom_cb.element(c.rep).map(|e| format!("{:?}", e.word())).unwrap_or_else(|| "horo".into()))
        }).collect();
        let cc = &cod_atlas.classes[*j as usize];
        println!("  cod{}(par={}) <- {}", j, cc.parabolic.is_some(), info.join(", "));
    }
    let collided: usize = collisions.iter().map(|(_, v)| v.len()).sum();
    println!("total domain classes in collision: {collided} of {}", dom_atlas.class_count());
    let par_collided: usize = collisions.iter().flat_map(|(_, v)| v.iter())
        .filter(|&&i| dom_atlas.classes[i as usize].parabolic.is_some()).count();
    println!("parabolic domain classes in collision: {par_collided}");
    for (j, group) in collisions.iter().take(4) {
        println!("group -> cod{j}");
        for &i in group {
            let rep = dom_atlas.classes[i as usize].rep;
            match dom_cb.horoball_of(rep) {
                Some(h) => {
                    let rec = &dom_cb.horoballs[h];
                    let apex = dom_cb.apex(h);
                    println!("  dom{i}: rep {} ds {:?} horoball {} coset {:?} | apex {} rim={} ds_apex={:?}",
                        rep, dom_atlas.proxy_distance(rep), h, rec.coset, apex, dom_cb.rim[apex as usize], dom_atlas.proxy_distance(apex));
                }
                None => println!("  dom{i}: group vertex {:?}", dom_cb.element(rep).map(|e| e.word().to_vec())),
            }
        }
        if group.len() == 2 {
            let a = dom_atlas.classes[group[0] as usize].rep;
            let b = dom_atlas.classes[group[1] as usize].rep;
            let row = dom_cb.graph.bfs_distances(a).unwrap();
            println!("  d(rep,rep) = {:?}", row[b as usize]);
        }
    }
}
// appended diagnostics run via second arg
