//! Expands the 24-model epilepsy multiverse from its configuration, then
//! extends it with a group-term axis.

use std::path::Path;

use multiverse_filter::multiverse::extend;
use multiverse_filter::pipeline::{ExtensionConfig, PipelineConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let cfg = PipelineConfig::load(&configs.join("epilepsy_part1.toml"))?;
    let mv = cfg.expand()?;
    println!("generation {}: {} models", mv.generation, mv.len());
    for m in &mv.models {
        println!("  {}  {}", m.id.short(), m.spec.describe());
    }
    let delta = ExtensionConfig::load(&configs.join("epilepsy_part2.toml"))?;
    let extended = extend(&mv, &delta.axes_config(&cfg))?;
    println!("generation {}: {} models after adding group terms", extended.generation, extended.len());
    Ok(())
}
