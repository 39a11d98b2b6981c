//! GRASP vs single-expert control on the eight-class corpus.
//!
//! usage: ablation [seeds] [key=value ...]

use std::time::Instant;

use grasp::metrics::ClassOutcome;
use grasp::partition::PartitionMethod;
use grasp::pipeline::{self, ExperimentConfig};

fn tail_cov(r: &grasp::metrics::MetricReport, tail: &[usize]) -> f64 {
    let v: Vec<f64> = tail
        .iter()
        .filter_map(|c| match r.per_class.get(c) {
            Some(ClassOutcome::Evaluated(v)) => Some(v.coverage),
            _ => None,
        })
        .collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let seeds: u64 = args.first().and_then(|s| s.parse().ok()).unwrap_or(3);
    let mut base = ExperimentConfig::default();
    let mut width = 8;
    let mut mode = String::from("grasp");
    for kv in args.iter().skip(1) {
        let (k, v) = kv.split_once('=').unwrap();
        match k {
            "guidance" => base.sampling.guidance = v.parse().unwrap(),
            "steps" => base.training.steps = v.parse().unwrap(),
            "lr" => base.training.lr = v.parse().unwrap(),
            "pre" => base.backbone.pretrain_steps = v.parse().unwrap(),
            "shift" => base.backbone.source_shift = v.parse().unwrap(),
            "width" => width = v.parse().unwrap(),
            "hidden" => base.backbone.hidden = v.parse().unwrap(),
            "ffn" => base.backbone.ffn_width = v.parse().unwrap(),
            "per_class" => base.sampling.per_class = v.parse().unwrap(),
            "resample" => base.training.resample = v.parse().unwrap(),
            "chest-xray" => base.corpus.preset = Some(grasp::pipeline::CorpusPreset::ChestXray),
            "mode" => mode = v.to_string(),
            "placement" => {
                base.adapter.placement = match v {
                    "all" => grasp::model::Placement::All,
                    _ => grasp::model::Placement::LastQuarter,
                }
            }
            _ => panic!("unknown key {k}"),
        }
    }
    let mut grasp_cfg = base.clone();
    grasp_cfg.adapter.width = width;
    let mut single = base.clone();
    if mode == "resample" {
        grasp_cfg.training.resample = true;
        single.adapter.width = width;
        single.training.resample = false;
    } else {
        single.partition.method = PartitionMethod::Single;
        single.partition.k = 1;
        single.adapter.width = 4 * width;
    }
    let tail = [5, 6, 7];
    let (mut wins_c, mut wins_i) = (0, 0);
    for s in 0..seeds {
        let t0 = Instant::now();
        let (train, test) = pipeline::stage_generate(&base, s).unwrap();
        let (bb, _) = pipeline::stage_pretrain(&base, &train, s).unwrap();
        let t1 = t0.elapsed().as_secs_f64();
        let mut row = Vec::new();
        for cfg in [&grasp_cfg, &single] {
            let p = pipeline::stage_partition(cfg, &train, s).unwrap();
            let st = pipeline::build_model(cfg, bb.clone(), p.k, s).unwrap();
            let o = pipeline::stage_train(cfg, st, &train, &p, s).unwrap();
            let g = pipeline::stage_sample(cfg, &o.state, &train, &p, s).unwrap();
            let r = pipeline::stage_evaluate(cfg, &g, &train, &test).unwrap();
            let m = r.macro_average.clone().unwrap();
            row.push((
                tail_cov(&r, &tail),
                m.irs_adjusted.unwrap_or(f64::NAN),
                m.coverage,
                r.all_labels.coverage,
                m.frechet.unwrap_or(f64::NAN),
                o.ledger.gap(),
            ));
        }
        wins_c += usize::from(row[0].0 > row[1].0);
        wins_i += usize::from(row[0].1 > row[1].1);
        println!(
            "seed {s}: pre {t1:.1}s total {:.1}s | tailcov {:.3} vs {:.3} | irs_adj {:.3} vs {:.3} | macro cov {:.3} vs {:.3} | cov {:.3} vs {:.3} | fd {:.2} vs {:.2} | gap {:.1} vs {:.1}",
            t0.elapsed().as_secs_f64(),
            row[0].0, row[1].0, row[0].1, row[1].1, row[0].2, row[1].2, row[0].3, row[1].3, row[0].4, row[1].4, row[0].5, row[1].5
        );
    }
    println!("wins tailcov {wins_c}/{seeds} irs {wins_i}/{seeds}");
}
