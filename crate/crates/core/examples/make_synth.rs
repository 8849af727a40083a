//! Generate a small synthetic dataset for manual smoke runs:
//!
//!     cargo run -p svsec-core --example make_synth -- <dir> <classes> <per_class> <side> <seed>

use std::path::Path;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let dir = args.get(1).map(String::as_str).unwrap_or("synth-data");
    let classes: usize = args.get(2).and_then(|v| v.parse().ok()).unwrap_or(8);
    let per_class: usize = args.get(3).and_then(|v| v.parse().ok()).unwrap_or(10);
    let side: usize = args.get(4).and_then(|v| v.parse().ok()).unwrap_or(96);
    let seed: u64 = args.get(5).and_then(|v| v.parse().ok()).unwrap_or(42);
    svsec_core::data::generate_synthetic_dataset(Path::new(dir), classes, per_class, side, seed)
        .unwrap();
    println!("wrote {classes} classes x {per_class} images ({side}x{side}) to {dir}");
}
