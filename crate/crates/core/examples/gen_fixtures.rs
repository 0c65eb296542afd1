//! Regenerates the procedural scene suites under `fixtures/`.
//!
//! `cargo run -p poinav-core --example gen_fixtures`

use poinav_core::simulator::procgen::{generate, ProcgenParams};
use std::path::Path;

fn write_suite(dir: &Path, prefix: &str, base_seed: u64, count: u64) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    for i in 0..count {
        let name = format!("{prefix}_{i:02}");
        let file = generate(&name, base_seed + i, &ProcgenParams::default());
        let text = serde_json::to_string_pretty(&file).expect("scene serializes");
        std::fs::write(dir.join(format!("{name}.json")), text + "\n")?;
    }
    Ok(())
}

fn main() -> std::io::Result<()> {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    write_suite(&root.join("suite10"), "suite10", 2000, 10)?;
    write_suite(&root.join("suite20"), "suite20", 1000, 20)?;
    println!("wrote suites under {}", root.display());
    Ok(())
}
