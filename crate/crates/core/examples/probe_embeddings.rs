//! Linear and trigonometric probes from node embeddings to sensor
//! coordinates, plus similarity between physical and adaptive adjacency.

use gswan::cli::adaptive_adjacency_of;
use gswan::data::{build_adjacency, row_normalize};
use gswan::evaluation::{adjacency_similarity, probe_embeddings};
use gswan::model::{init_model, ModelConfig};
use gswan::synthetic::{generate, SynthConfig, Topology};
use gswan::Array;

fn main() -> gswan::Result<()> {
    let d = generate(&SynthConfig { n_sensors: 49, days: 1, topology: Topology::Grid, ..Default::default() })?;
    let coords = d.coords.clone().expect("synthetic datasets carry coordinates");
    let n = coords.len();

    // embeddings that encode position linearly
    let mut e1 = Array::zeros(&[n, 2]);
    let mut e2 = Array::zeros(&[n, 2]);
    for (i, &(lon, lat)) in coords.iter().enumerate() {
        e1.set(&[i, 0], 2.0 * lon - lat);
        e1.set(&[i, 1], 0.5 * lat + 1.0);
        e2.set(&[i, 0], lon + lat);
        e2.set(&[i, 1], -lon);
    }
    let r = probe_embeddings(&e1, &e2, &coords)?;
    println!("position-coded embeddings: R2 linear {:.4}, kernel {:.4}", r.r2_linear, r.r2_kernel);

    // freshly initialized model: no spatial information yet
    let cfg = ModelConfig { d_embed: 2, ..Default::default() };
    let p = init_model(&cfg, n, 1)?;
    let r = probe_embeddings(p.store.get("node.e1")?, p.store.get("node.e2")?, &coords)?;
    println!("untrained embeddings: R2 linear {:.4}, kernel {:.4}", r.r2_linear, r.r2_kernel);

    let a_adp = adaptive_adjacency_of(&p)?.expect("model has embeddings");
    let a_r = build_adjacency(&d.edge_indices()?, n)?.a_r;
    let raw = adjacency_similarity(&a_r, &a_adp)?;
    let normalized = adjacency_similarity(&row_normalize(&a_r), &a_adp)?;
    println!("cosine similarity A_r vs A_adp {:.4?}, D^-1 A_r vs A_adp {:.4?}", raw, normalized);
    Ok(())
}
