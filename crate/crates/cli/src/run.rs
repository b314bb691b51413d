//! `pfl run`: executes the configured experiment once per seed and persists
//! metrics, summary, and the resolved config.

use std::path::{Path, PathBuf};

use pfl_core::config::RunConfig;
use pfl_core::eval::{multi_seed_mean, records_to_csv, windowed_summary};
use pfl_core::protocol::{run_experiment, RunOutcome};
use pfl_core::Result;

use crate::common::{guard_overwrite, load_config, prepare_dir, resolve_out, write_file};
use crate::summary::{HeadlineBlock, SeedResult, Summary, token};

pub fn cmd_run(config_path: &Path, out_flag: Option<PathBuf>, overwrite: bool) -> Result<()> {
    let cfg = load_config(config_path)?;
    let out = resolve_out(&cfg, out_flag);

    let metrics_path = |seed: u64| out.join(format!("metrics_seed{seed}.csv"));
    let norms_path = |seed: u64| out.join(format!("norms_seed{seed}.csv"));
    let mut targets = vec![out.join("resolved-config.json"), out.join("summary.json")];
    targets.extend(cfg.seeds.iter().map(|&s| metrics_path(s)));
    targets.extend(cfg.seeds.iter().map(|&s| norms_path(s)));
    guard_overwrite(&targets, overwrite)?;
    prepare_dir(&out)?;

    let mut written: Vec<PathBuf> = Vec::new();
    let result = run_all(&cfg, &out, &metrics_path, &norms_path, &mut written);
    if result.is_err() && !written.is_empty() {
        let list: Vec<String> = written.iter().map(|p| p.display().to_string()).collect();
        eprintln!("partial outputs left behind: {}", list.join(", "));
    }
    result
}

fn run_all(
    cfg: &RunConfig,
    out: &Path,
    metrics_path: &dyn Fn(u64) -> PathBuf,
    norms_path: &dyn Fn(u64) -> PathBuf,
    written: &mut Vec<PathBuf>,
) -> Result<()> {
    let resolved = out.join("resolved-config.json");
    write_file(&resolved, &cfg.to_json_pretty())?;
    written.push(resolved);

    let mut per_seed: Vec<SeedResult> = Vec::new();
    let mut post_seed: Vec<SeedResult> = Vec::new();
    for &seed in &cfg.seeds {
        let outcome: RunOutcome<f32> = run_experiment(cfg, seed)?;

        let mut rows = outcome.records.clone();
        if let Some(post) = &outcome.post_defense {
            rows.extend(post.iter().cloned());
        }
        let path = metrics_path(seed);
        write_file(&path, &records_to_csv(&rows))?;
        written.push(path);

        // Pre-clip L2 norms of benign shared-segment deltas, the reference
        // distribution for choosing a norm_clip threshold.
        let mut norms = String::from("round,client_id,norm\n");
        for (round, client, norm) in &outcome.benign_norms {
            norms.push_str(&format!("{},{client},{norm}\n", round + 1));
        }
        let path = norms_path(seed);
        write_file(&path, &norms)?;
        written.push(path);

        let window = cfg.eval.window_rounds;
        let include_mal = cfg.eval.include_malicious_in_headline;
        let (asr, mta) = windowed_summary(&outcome.records, window, include_mal);
        println!(
            "seed {seed}: asr {} mta {mta:.2}",
            asr.map_or("n/a".into(), |a| format!("{a:.2}"))
        );
        per_seed.push(SeedResult { seed, asr, mta });

        if let Some(post) = &outcome.post_defense {
            let (asr, mta) = windowed_summary(post, window, include_mal);
            post_seed.push(SeedResult { seed, asr, mta });
        }
    }

    let (mean_asr, mean_mta) =
        multi_seed_mean(&per_seed.iter().map(|s| (s.asr, s.mta)).collect::<Vec<_>>());
    let post_defense = if post_seed.is_empty() {
        None
    } else {
        let (a, m) =
            multi_seed_mean(&post_seed.iter().map(|s| (s.asr, s.mta)).collect::<Vec<_>>());
        Some(HeadlineBlock { mean_asr: a, mean_mta: m, per_seed: post_seed })
    };

    let summary = Summary {
        config_hash: cfg.hash(),
        dataset: token(&cfg.dataset.kind),
        pfl_method: token(&cfg.protocol.pfl_method),
        alpha: cfg.partition.alpha,
        attack: token(&cfg.attack.kind),
        defense: token(&cfg.defense.kind),
        seeds: cfg.seeds.clone(),
        mean_asr,
        mean_mta,
        per_seed,
        post_defense,
    };
    let path = out.join("summary.json");
    write_file(
        &path,
        &serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )?;
    written.push(path);

    println!(
        "mean over {} seed(s): asr {} mta {mean_mta:.2}",
        cfg.seeds.len(),
        mean_asr.map_or("n/a".into(), |a| format!("{a:.2}"))
    );
    if let Some(post) = &summary.post_defense {
        println!(
            "after {}: asr {} mta {:.2}",
            summary.defense,
            post.mean_asr.map_or("n/a".into(), |a| format!("{a:.2}")),
            post.mean_mta
        );
    }
    Ok(())
}
