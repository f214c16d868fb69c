//! Scratch probe: slimness and atlas scale on the cusped F(a,b) rel <a>.

use std::sync::Arc;
use std::time::Instant;

use cusped_core::boundary::{build_atlas, AnchorSpec};
use cusped_core::cusped::{build_cusped_ball, measure_c4};
use cusped_core::group::{Element, GroupSpec};
use cusped_core::hyperbolicity::{estimate_delta, DeltaMode};

fn main() {
    for (r_cay, depth) in [(6u32, 4u32), (7, 4), (7, 5)] {
        let t0 = Instant::now();
        let spec = GroupSpec::free(&["a", "b"]).with_peripheral(&[0]);
        let cb = build_cusped_ball(&spec, r_cay, depth, 2_000_000).unwrap();
        let n = cb.graph.vertex_count();
        let eligible: Vec<u32> = (0..n as u32).filter(|&v| !cb.rim[v as usize]).collect();
        let report = estimate_delta(
            &cb.graph,
            &eligible,
            DeltaMode::Sampled {
                samples: 60,
                seed: 11,
            },
        )
        .unwrap();
        let c4 = measure_c4(&cb, 40, 11).unwrap();
        println!(
            "R{} D{}: n={} nonrim={} delta={} c4={} ({}s)",
            r_cay,
            depth,
            n,
            eligible.len(),
            report.delta,
            c4.c4(),
            t0.elapsed().as_secs_f32()
        );

        let coset = spec.coset_of(&Element::identity(), 0).unwrap();
        let cb = Arc::new(cb);
        for (rho, tau) in [
            (3u32, 2u32),
            (3, 3),
            (3, 4),
            (3, 5),
            (4, 3),
            (4, 4),
            (4, 5),
            (4, 6),
            (4, 7),
        ] {
            if rho + 2 >= r_cay {
                continue;
            }
            let t1 = Instant::now();
            match build_atlas(Arc::clone(&cb), AnchorSpec::Parabolic(coset.clone()), rho, tau) {
                Ok(atlas) => {
                    let lens: Vec<u32> = (0..atlas.classes.len() as u32)
                        .map(|c| atlas.designated_geodesic(c).unwrap().len() as u32 - 1)
                        .collect();
                    let maxlen = lens.iter().max().unwrap();
                    let minlen = lens.iter().min().unwrap();
                    let avg = lens.iter().sum::<u32>() as f32 / lens.len() as f32;
                    println!(
                        "  rho{} tau{}: horizon={} classes={} (tau-1 {} / tau+1 {}) parabolic={} len[{}..{}] avg {:.1} ({}s)",
                        rho,
                        tau,
                        atlas.horizon.len(),
                        atlas.class_count(),
                        atlas.class_count_tau_minus,
                        atlas.class_count_tau_plus,
                        atlas.parabolic_class_count(),
                        minlen,
                        maxlen,
                        avg,
                        t1.elapsed().as_secs_f32()
                    );
                }
                Err(e) => println!("  rho{} tau{}: {}", rho, tau, e),
            }
        }
    }
}
