//! Writes the plot data of every figure into a directory.
//!
//! cargo run --release --example reproduce_figures -- out/

use photostat::figures::{reproduce, Figure, FigureOptions};

fn main() -> photostat::Result<()> {
    let out_dir = std::env::args().nth(1).unwrap_or_else(|| "figures".into());
    let opts = FigureOptions { out_dir: out_dir.into(), seed: 1, shots: 50_000, tol: 1e-12 };
    for figure in Figure::ALL {
        let manifest = reproduce(figure, &opts)?;
        println!("{}: {} files", manifest.figure, manifest.files.len());
        for entry in manifest.files.iter().filter(|e| !e.values.is_empty()) {
            println!("  {} {:?}", entry.file, entry.values);
        }
    }
    Ok(())
}
