//! Regenerates the bundled model configs:
//!
//!   cargo run -p raggedshard-cli --example emit_configs -- configs

use raggedshard_cli::models::{deepseek_v3_671b, gpt_oss_120b};

fn main() {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "configs".into());
    for cfg in [gpt_oss_120b(), deepseek_v3_671b()] {
        let path = format!("{dir}/{}.json", cfg.name.replace('-', "_"));
        std::fs::write(&path, cfg.to_json()).expect("write config");
        eprintln!("wrote {path}");
    }
}
