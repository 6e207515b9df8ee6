//! Train one small predator-prey configuration and print its evaluation curve.
//!
//! ```text
//! cargo run --release --example desk_run -- [mode] [total_steps] [key=value ...]
//! ```

use std::time::Instant;

use accmer::config::{parse_kv_text, validate_config, RawConfig};
use accmer::learner::train::train_run;

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut raw = RawConfig::new();
    for (k, v) in [
        ("n_agents", "4"),
        ("n_prey", "4"),
        ("grid_size", "7"),
        ("punishment", "0"),
        ("sampler_mode", args.first().map_or("accmer", String::as_str)),
        ("total_steps", args.get(1).map_or("150000", String::as_str)),
    ] {
        raw.insert(k.into(), v.into());
    }
    for kv in args.iter().skip(2) {
        raw.extend(parse_kv_text(kv).expect("key=value"));
    }
    let cfg = validate_config(&raw).expect("valid config");
    let start = Instant::now();
    let run = train_run::<f64>(&cfg).expect("run");
    for r in &run.curves {
        println!("{:>7} {:>6} {:>7.3} {:?}", r.train_step, r.episode, r.eval_mean_reward, r.loss);
    }
    println!(
        "{:.1}s, sampling {:.1} us/call",
        start.elapsed().as_secs_f64(),
        run.sampling.mean_ns() / 1e3
    );
}
