use cusped_core::boundary::{build_atlas, AnchorSpec};
use cusped_core::cusped::build_cusped_ball;
use cusped_core::group::{free_ab_with_product_generator, Element, GroupSpec};
use std::sync::Arc;
use std::time::Instant;

fn main() {
    for (name, spec, radii) in [
        ("ab", GroupSpec::free(&["a", "b"]).with_peripheral(&[0]), vec![7u32, 9]),
        ("abc", free_ab_with_product_generator().with_peripheral(&[0]), vec![4u32, 5, 6, 7]),
    ] {
        for &r in &radii {
            let t = Instant::now();
            let cb = match build_cusped_ball(&spec, r, 5, 1 << 22) {
                Ok(cb) => Arc::new(cb),
                Err(e) => { println!("{name} R{r}: build error {e}"); continue; }
            };
            let nonrim = cb.rim.iter().filter(|&&x| !x).count();
            println!("{name} R{r}: vertices {} nonrim {} horoballs {} ({:?})",
                cb.graph.vertex_count(), nonrim, cb.horoballs.len(), t.elapsed());
            let coset = cb.spec.coset_of(&Element::identity(), 0).unwrap();
            for rho in 2..=(r.saturating_sub(3)).min(6) {
                for tau in 4..=9u32 {
                    let t2 = Instant::now();
                    match build_atlas(Arc::clone(&cb), AnchorSpec::Parabolic(coset.clone()), rho, tau) {
                        Ok(atlas) => println!("  rho {rho} tau {tau}: classes {} parabolic {} ({:?})",
                            atlas.class_count(), atlas.parabolic_class_count(), t2.elapsed()),
                        Err(e) => println!("  rho {rho} tau {tau}: ERR {e}"),
                    }
                }
            }
        }
    }
}
