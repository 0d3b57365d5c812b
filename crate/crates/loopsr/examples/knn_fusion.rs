//! Builds a reference store from synthetic latents and walks through
//! retrieval, decoding, and fusion arithmetic.
//!
//!     cargo run --release --example knn_fusion

use loopsr::latentstore::{fuse, ParamsEstimate, ReferenceStore, StoreEntry};
use loopsr::rng::Rng;
use loopsr::trajcodec::LATENT_DIM;

fn unit_latent(rng: &mut Rng, center: usize) -> [f64; LATENT_DIM] {
    let mut z = [0.0; LATENT_DIM];
    z[center] = 3.0; // cluster direction
    for v in z.iter_mut() {
        *v += rng.normal() * 0.4;
    }
    let norm: f64 = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    z.iter_mut().for_each(|v| *v /= norm);
    z
}

fn main() {
    let mut rng = Rng::seed_from(7);
    // five latent clusters, one per terrain label
    let entries: Vec<StoreEntry> = (0..500)
        .map(|i| {
            let terrain = i % 5;
            let mut probs = [0.01; 5];
            probs[terrain] = 0.96;
            StoreEntry {
                latent: unit_latent(&mut rng, terrain),
                terrain_probs: probs,
                robot_params: [
                    rng.uniform_in(0.7, 1.3),
                    rng.uniform_in(0.2, 1.0),
                    rng.uniform_in(0.7, 1.3),
                    rng.uniform_in(0.0, 0.5),
                ],
                checkpoint_id: (i / 50) as u32,
                terrain_id: terrain as u8,
                difficulty: 0.6,
            }
        })
        .collect();
    let store = ReferenceStore::from_entries(entries).unwrap();
    println!("store: {} entries across 5 latent clusters", store.len());

    // query near cluster 3 (stairs)
    let query = unit_latent(&mut rng, 3);
    let retrieved = store.knn_retrieve(&query, 16).unwrap();
    println!("\nquery near the stairs cluster:");
    println!("  neighbours: {:?}", &retrieved.neighbor_indices[..8]);
    println!("  averaged terrain probs: {:?}", retrieved.estimate.terrain_probs);
    println!("  averaged robot params:  {:?}", retrieved.estimate.robot_params);

    // a decoded estimate that disagrees on terrain
    let decoded = ParamsEstimate {
        terrain_probs: [0.05, 0.05, 0.05, 0.65, 0.20],
        robot_params: [1.10, 0.45, 1.05, 0.30],
    };
    for alpha in [0.0, 0.5, 0.8, 1.0] {
        let fused = fuse(&retrieved.estimate, &decoded, alpha).unwrap();
        println!(
            "  alpha {:>3}: stairs mass {:.3}, fused c_r {:?}",
            alpha, fused.estimate.terrain_probs[3], fused.estimate.robot_params
        );
    }
    println!("\nretrieval dominates at the production fusion ratio alpha = 0.8");
}
