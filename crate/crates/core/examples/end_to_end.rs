// Full run from a TOML configuration, then a replay from its manifest.

use cityadapt::pipeline::{cmd_pipeline, rerun_from_manifest, RunConfig};

const CONFIG: &str = r#"
seed = 21
holdout_per_city = 40

[synth]
n_cities = 12
n_urban = 5

[adapt]
k = 3
"#;

pub fn run() -> cityadapt::Result<()> {
    let cfg = RunConfig::from_toml(CONFIG)?;
    let root = std::env::temp_dir().join(format!("cityadapt-example-{}", std::process::id()));
    let manifest = cmd_pipeline(&cfg, &root.join("first"))?;
    println!("config hash {}", manifest.config_hash);
    for (file, sha) in manifest.artifacts.iter().filter(|(f, _)| !f.starts_with("checkpoints/cities")) {
        println!("  {file:<28} {}", &sha[..12]);
    }
    let replay = rerun_from_manifest(&root.join("first/manifest.json"), &root.join("replay"))?;
    println!("replay identical: {}", replay.artifacts == manifest.artifacts);
    let _ = std::fs::remove_dir_all(&root);
    Ok(())
}

#[allow(dead_code)]
fn main() -> cityadapt::Result<()> {
    run()
}
