use std::fs;
use std::path::Path;

use twinwall::analysis::Engine;
use twinwall::bench;
use twinwall::config::{load_engine, Config};
use twinwall::pipeline::{run_demo, DemoOptions};
use twinwall::pointcloud::{decode_binary, decode_json_with, encode_binary, encode_json, encode_json_f32};
use twinwall::sim::{reference_model, reference_rules};

use crate::services::load_scenario;
use crate::{Failure, Outcome};

pub async fn demo(
    cfg: &Config,
    scenario: Option<&Path>,
    model: Option<&Path>,
    rules: Option<&Path>,
    seed: Option<u64>,
    time_scale: f64,
) -> Outcome {
    let s = load_scenario(cfg, scenario, seed)?;
    let engine = match model.or(cfg.analysis.model.as_deref()) {
        Some(m) => load_engine(m, rules.or(cfg.analysis.rules.as_deref()))?,
        None => Engine::new(reference_model(), reference_rules()).expect("reference config is valid"),
    };
    if !(time_scale >= 0.0 && time_scale.is_finite()) {
        return Err(Failure::Config("time scale must be a non-negative number".into()));
    }
    let opts = DemoOptions { time_scale, ..DemoOptions::default() };
    let summary = run_demo(&s, engine, opts).await.map_err(|e| Failure::Runtime(e.to_string()))?;
    println!("{summary}");
    if summary.ok() {
        Ok(())
    } else {
        Err(Failure::Runtime(format!(
            "{} faults raised for {} injected failures",
            summary.faults_raised, summary.sim.failures_injected
        )))
    }
}

pub fn bench_codec(points: usize, reps: u32) -> Outcome {
    if reps == 0 {
        return Err(Failure::Config("reps must be positive".into()));
    }
    println!("{}", bench::bench_codec(points, reps));
    Ok(())
}

pub async fn bench_hub(clients: usize, fps: f64, seconds: f64, points: usize) -> Outcome {
    if clients == 0 || !(fps > 0.0) || !(seconds > 0.0) {
        return Err(Failure::Config("clients, fps and seconds must be positive".into()));
    }
    let b = bench::bench_hub(clients, fps, seconds, points).await.map_err(|e| Failure::Runtime(e.to_string()))?;
    println!("{b}");
    Ok(())
}

fn is_json(p: &Path) -> bool {
    p.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

pub fn convert(input: &Path, output: &Path) -> Outcome {
    let bytes = fs::read(input).map_err(|e| Failure::Runtime(format!("{}: {e}", input.display())))?;
    let from_binary = bytes.starts_with(&twinwall::pointcloud::BINARY_MAGIC);
    let frame = if from_binary {
        decode_binary(&bytes)
    } else {
        decode_json_with(&bytes, 0, 0)
    }
    .map_err(|e| Failure::Runtime(format!("{}: {e}", input.display())))?;
    let out = match (is_json(output), from_binary) {
        (true, true) => encode_json_f32(&frame),
        (true, false) => encode_json(&frame),
        (false, _) => encode_binary(&frame),
    };
    fs::write(output, &out).map_err(|e| Failure::Runtime(format!("{}: {e}", output.display())))?;
    println!("input={} output={} points={} bytes={}", input.display(), output.display(), frame.len(), out.len());
    Ok(())
}
