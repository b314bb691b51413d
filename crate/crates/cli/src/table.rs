//! `pfl table`: collects summary.json files into one aligned comparison
//! table (attack rows, method/alpha columns), echoing the stored means
//! without recomputation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use pfl_core::{Error, Result};

use crate::common::{guard_overwrite, write_file};
use crate::summary::Summary;

const ATTACK_ORDER: [(&str, &str); 5] = [
    ("none", "No-Attack"),
    ("blackbox", "Black-box"),
    ("bapfl", "BapFL"),
    ("bapfl_plus", "BapFL+"),
    ("gen_bapfl", "Gen-BapFL"),
];

fn attack_rank(token: &str) -> usize {
    ATTACK_ORDER.iter().position(|(t, _)| *t == token).unwrap_or(ATTACK_ORDER.len())
}

fn attack_label(summary: &Summary) -> String {
    let base = ATTACK_ORDER
        .iter()
        .find(|(t, _)| *t == summary.attack)
        .map_or(summary.attack.as_str(), |(_, label)| label);
    if summary.defense == "none" {
        base.to_string()
    } else {
        format!("{base} + {}", summary.defense)
    }
}

fn defense_rank(token: &str) -> usize {
    ["none", "norm_clip", "fine_tune", "simple_tune"]
        .iter()
        .position(|t| *t == token)
        .unwrap_or(4)
}

pub fn cmd_table(patterns: &[String], out: Option<PathBuf>, overwrite: bool) -> Result<()> {
    let paths = expand(patterns)?;
    let mut summaries = Vec::new();
    for path in &paths {
        summaries.push(load_summary(path)?);
    }

    let dataset = summaries[0].dataset.clone();
    if summaries.iter().any(|s| s.dataset != dataset) {
        return Err(Error::InvalidArgument(
            "summaries mix datasets; tabulate one dataset at a time".into(),
        ));
    }

    // (row key, column key) -> summary; duplicates are ambiguous.
    let mut cells: BTreeMap<(usize, usize, String), BTreeMap<(String, String), &Summary>> =
        BTreeMap::new();
    let mut columns: Vec<(String, String)> = Vec::new();
    for s in &summaries {
        let col = (s.pfl_method.clone(), format!("{}", s.alpha));
        if !columns.contains(&col) {
            columns.push(col.clone());
        }
        let row = (attack_rank(&s.attack), defense_rank(&s.defense), attack_label(s));
        if cells.entry(row.clone()).or_default().insert(col, s).is_some() {
            return Err(Error::InvalidArgument(format!(
                "conflicting summaries: {} / {} / alpha {} appears more than once",
                s.attack, s.pfl_method, s.alpha
            )));
        }
    }
    columns.sort();

    let fmt_cell = |s: Option<&&Summary>| -> String {
        match s {
            None => "-".into(),
            Some(s) => format!(
                "{}/{:.2}",
                s.mean_asr.map_or("-".into(), |a| format!("{a:.2}")),
                s.mean_mta
            ),
        }
    };

    let header: Vec<String> = std::iter::once(format!("attack ({dataset})"))
        .chain(columns.iter().map(|(m, a)| format!("{m} a={a}")))
        .collect();
    let mut lines: Vec<Vec<String>> = vec![header];
    for (row, by_col) in &cells {
        let mut line = vec![row.2.clone()];
        for col in &columns {
            line.push(fmt_cell(by_col.get(col)));
        }
        lines.push(line);
    }
    let widths: Vec<usize> = (0..lines[0].len())
        .map(|i| lines.iter().map(|l| l[i].len()).max().unwrap_or(0))
        .collect();
    for line in &lines {
        let padded: Vec<String> = line
            .iter()
            .zip(&widths)
            .map(|(cell, w)| format!("{cell:<w$}"))
            .collect();
        println!("{}", padded.join("  ").trim_end());
    }

    let mut csv = String::from("attack,defense,pfl_method,alpha,dataset,asr,mta\n");
    for (_, by_col) in &cells {
        for col in &columns {
            if let Some(s) = by_col.get(col) {
                csv.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    s.attack,
                    s.defense,
                    s.pfl_method,
                    s.alpha,
                    s.dataset,
                    s.mean_asr.map_or(String::new(), |a| a.to_string()),
                    s.mean_mta
                ));
            }
        }
    }
    let csv_path = out.unwrap_or_else(|| PathBuf::from("table.csv"));
    guard_overwrite(std::slice::from_ref(&csv_path), overwrite)?;
    write_file(&csv_path, &csv)?;
    println!("wrote {}", csv_path.display());
    Ok(())
}

fn expand(patterns: &[String]) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for pat in patterns {
        if pat.contains(['*', '?', '[']) {
            let matches = glob::glob(pat)
                .map_err(|e| Error::InvalidArgument(format!("bad glob {pat}: {e}")))?;
            for m in matches {
                paths.push(m.map_err(|e| Error::InvalidArgument(format!("glob {pat}: {e}")))?);
            }
        } else {
            paths.push(PathBuf::from(pat));
        }
    }
    if paths.is_empty() {
        return Err(Error::InvalidArgument("no summary files match".into()));
    }
    paths.sort();
    Ok(paths)
}

fn load_summary(path: &Path) -> Result<Summary> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}
