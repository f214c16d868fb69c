use cusped_core::boundary::{build_atlas, AnchorSpec};
use cusped_core::cusped::build_cusped_ball;
use cusped_core::group::{free_ab_with_product_generator, Element, GroupSpec};
use std::sync::Arc;
use std::time::Instant;

fn main() {
    env_logger::init();
    for (name, spec, r) in [
        ("ab", GroupSpec::free(&["a", "b"]).with_peripheral(&[0]), 9u32),
        ("abc", free_ab_with_product_generator().with_peripheral(&[0]), 7u32),
    ] {
        let t = Instant::now();
        let cb = Arc::new(build_cusped_ball(&spec, r, 5, 1 << 22).unwrap());
        println!("{name} R{r}: vertices {} edges {} ({:?})", cb.graph.vertex_count(), cb.graph.edge_count(), t.elapsed());
        let coset = cb.spec.coset_of(&Element::identity(), 0).unwrap();
        for (rho, tau) in [(4u32, 7u32), (4, 8), (4, 9), (3, 7), (3, 8)] {
            let t2 = Instant::now();
            match build_atlas(Arc::clone(&cb), AnchorSpec::Parabolic(coset.clone()), rho, tau) {
                Ok(atlas) => println!("  rho {rho} tau {tau}: classes {} parabolic {} ({:?})",
                    atlas.class_count(), atlas.parabolic_class_count(), t2.elapsed()),
                Err(e) => println!("  rho {rho} tau {tau}: ERR {e}"),
            }
        }
    }
}
