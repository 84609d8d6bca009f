//! Drives the command-line front end in process: generate, inspect, train,
//! evaluate, forecast and analyze, all into one temporary directory.

fn step(args: &[&str]) {
    println!("$ gswan {}", args.join(" "));
    let code = gswan::cli::run(std::iter::once("gswan").chain(args.iter().copied()));
    assert_eq!(code, 0, "gswan {} failed", args.join(" "));
}

fn main() {
    let root = std::env::temp_dir().join("gswan_example_pipeline");
    let _ = std::fs::remove_dir_all(&root);
    let p = |s: &str| root.join(s).to_string_lossy().into_owned();
    let config = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/desk.toml");

    step(&["generate", "--sensors", "6", "--days", "3", "--phase-spread", "60", "--companion", "--out", &p("data")]);
    step(&["inspect", "--data", &p("data")]);
    step(&["train", "--config", config, "--data", &p("data"), "--epochs", "5", "--out", &p("run")]);
    step(&["evaluate", "--data", &p("data"), "--checkpoint", &p("run/best.json"), "--out", &p("eval")]);
    step(&["forecast", "--data", &p("data"), "--checkpoint", &p("run/best.json"), "--out", &p("forecast")]);
    step(&["analyze", "--data", &p("data"), "--checkpoint", &p("run/best.json"), "--scatter", "0", "--pair", "0,3", "--out", &p("analysis")]);
    println!("artifacts under {}", root.display());
}
