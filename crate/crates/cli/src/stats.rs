//! `pfl partition-stats`: materializes the shard draw a run would use and
//! reports per-client sample counts, class histograms, and label entropy.

use std::path::{Path, PathBuf};

use pfl_core::data::{dirichlet_partition, label_entropy};
use pfl_core::Result;

use crate::common::{guard_overwrite, load_config, prepare_dir, resolve_out, write_file};

pub fn cmd_partition_stats(
    config_path: &Path,
    out_flag: Option<PathBuf>,
    overwrite: bool,
) -> Result<()> {
    let cfg = load_config(config_path)?;
    let out = resolve_out(&cfg, out_flag);
    let csv_path = out.join("partition.csv");
    guard_overwrite(std::slice::from_ref(&csv_path), overwrite)?;
    prepare_dir(&out)?;

    let ds = cfg.dataset.load()?;
    ds.validate()?;
    let seed = cfg.partition.seed.unwrap_or(cfg.seeds[0]);
    let plan = dirichlet_partition(&ds, cfg.partition.n_clients, cfg.partition.alpha, seed)?;

    println!(
        "{} clients, alpha {}, partition seed {seed}",
        cfg.partition.n_clients, cfg.partition.alpha
    );
    let mut csv = String::from("client_id,n_train,n_test");
    for c in 0..ds.num_classes {
        csv.push_str(&format!(",class_{c}"));
    }
    csv.push_str(",entropy\n");

    for (id, train) in plan.train.iter().enumerate() {
        let mut hist = vec![0usize; ds.num_classes];
        for &i in train {
            hist[usize::from(ds.labels[i as usize])] += 1;
        }
        let entropy = label_entropy(&hist);
        println!(
            "client {id:>3}: train {:>5} test {:>5} entropy {entropy:.3} hist {hist:?}",
            train.len(),
            plan.test[id].len()
        );
        csv.push_str(&format!("{id},{},{}", train.len(), plan.test[id].len()));
        for h in &hist {
            csv.push_str(&format!(",{h}"));
        }
        csv.push_str(&format!(",{entropy:.6}\n"));
    }

    write_file(&csv_path, &csv)?;
    println!("wrote {}", csv_path.display());
    Ok(())
}
