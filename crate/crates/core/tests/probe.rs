// Temporary tuning probe; prints harness metrics. Not part of the suite.

use irdk_core::harness::{run_suite, ExperimentConfig, Mode};

fn run_and_print(cfg: &ExperimentConfig, label: &str) {
    let t0 = std::time::Instant::now();
    let outputs = run_suite(
        &cfg,
        &[Mode::UpperBound, Mode::Finetune, Mode::ClsRegAps, Mode::AllClsAllReg, Mode::AllCls, Mode::AllReg, Mode::ClsAps],
    )
    .unwrap();
    println!("== {label}: suite took {:?}", t0.elapsed());
    for o in &outputs {
        let r = &o.report;
        // old-class detection score stats
        let mut scores: Vec<f32> = Vec::new();
        for scene in &o.detections {
            for b in scene {
                if cfg.old_classes.contains(&b.class_id) {
                    scores.push(b.score);
                }
            }
        }
        scores.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let mean: f32 = if scores.is_empty() { 0.0 } else { scores.iter().sum::<f32>() / scores.len() as f32 };
        let top100: f32 = if scores.is_empty() { 0.0 } else {
            let k = scores.len().min(400);
            scores[..k].iter().sum::<f32>() / k as f32
        };
        println!(
            "seed {} mode {:<16} teacher_old {:.3} | old {:.3} new {:.3} all {:.3} | old dets {} mean {:.3} top400 {:.3}",
            r.seed, r.mode.as_str(), r.teacher_map_old, r.map_old, r.map_new, r.map_all,
            scores.len(), mean, top100
        );
    }
}

#[test]
#[ignore]
fn probe_defaults() {
    let cfg = ExperimentConfig {
        seeds: vec![1, 2],
        ..ExperimentConfig::default()
    };
    run_and_print(&cfg, "threshold 0.05");
    let cfg2 = ExperimentConfig {
        score_threshold: 0.30,
        ..cfg.clone()
    };
    run_and_print(&cfg2, "threshold 0.30");
}
