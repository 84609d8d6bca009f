//! Physical adjacency from road distances, and the row-normalized transition
//! matrix the static graph-convolution variant uses.

use gswan::data::{build_adjacency, rbf, row_normalize};

fn print(name: &str, a: &gswan::Array) {
    println!("{name}:");
    let n = a.shape()[0];
    for i in 0..n {
        let row: Vec<String> = (0..n).map(|j| format!("{:6.3}", a.get(&[i, j]))).collect();
        println!("  {}", row.join(" "));
    }
}

fn main() -> gswan::Result<()> {
    // directed road segments, meters
    let edges = [
        (0, 1, 800.0),
        (1, 2, 1200.0),
        (2, 3, 950.0),
        (3, 0, 2100.0),
        (1, 3, 3000.0),
    ];
    let adj = build_adjacency(&edges, 4)?;
    println!("sigma_d = {:.1} m", adj.sigma_d);
    println!("rbf(1000 m) = {:.4}", rbf(1000.0, adj.sigma_d));
    print("A_r", &adj.a_r);
    print("D^-1 A_r", &row_normalize(&adj.a_r));
    Ok(())
}
