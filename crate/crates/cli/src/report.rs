use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};

use doorns::imageio::write_png;

use crate::config::ReportConfig;
use crate::finetune::{PARAM_METRICS, REWARD_METRICS};
use crate::plot::{recall_plot, Series, PALETTE};

/// Inputs named in the config that do not exist (exit code 4).
#[derive(Debug)]
pub struct MissingInputs(pub Vec<PathBuf>);

impl fmt::Display for MissingInputs {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "missing report inputs:")?;
        for p in &self.0 {
            write!(f, "\n  {}", p.display())?;
        }
        Ok(())
    }
}

impl std::error::Error for MissingInputs {}

type Row = BTreeMap<String, String>;

fn read_rows(path: &Path) -> anyhow::Result<Vec<Row>> {
    let mut rdr =
        csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let headers = rdr.headers()?.clone();
    rdr.records()
        .map(|rec| {
            let rec = rec.with_context(|| format!("parsing {}", path.display()))?;
            Ok(headers
                .iter()
                .zip(rec.iter())
                .map(|(h, v)| (h.to_string(), v.to_string()))
                .collect())
        })
        .collect()
}

fn field<'a>(row: &'a Row, key: &str, path: &Path) -> anyhow::Result<&'a str> {
    match row.get(key) {
        Some(v) => Ok(v),
        None => bail!("{} lacks column `{key}`", path.display()),
    }
}

fn number(row: &Row, key: &str, path: &Path) -> anyhow::Result<f64> {
    let v = field(row, key, path)?;
    v.parse()
        .with_context(|| format!("{}: `{key}` = {v:?} is not a number", path.display()))
}

/// Fixed-width table, one row per summary line.
fn table(title: &str, columns: &[(&str, &str)], paths: &[PathBuf]) -> anyhow::Result<String> {
    let mut head = vec!["model".to_string(), "n_pretrain".into(), "seeds".into()];
    head.extend(columns.iter().map(|(_, t)| t.to_string()));
    let mut lines = vec![head];
    for path in paths {
        for row in read_rows(path)? {
            let mut cells = vec![
                field(&row, "model", path)?.to_string(),
                field(&row, "n_pretrain", path)?.to_string(),
                field(&row, "n_seeds", path)?.to_string(),
            ];
            for (key, _) in columns {
                let m = number(&row, &format!("{key}_mean"), path)?;
                let s = number(&row, &format!("{key}_std"), path)?;
                cells.push(format!("{m:.3} ± {s:.3}"));
            }
            lines.push(cells);
        }
    }
    let widths: Vec<usize> = (0..lines[0].len())
        .map(|j| lines.iter().map(|l| l[j].chars().count()).max().unwrap())
        .collect();
    let mut out = format!("{title}\n");
    for (i, l) in lines.iter().enumerate() {
        let cells: Vec<String> = l
            .iter()
            .zip(&widths)
            .map(|(c, &w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect();
        writeln!(out, "{}", cells.join("  ").trim_end())?;
        if i == 0 {
            writeln!(
                out,
                "{}",
                "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1))
            )?;
        }
    }
    Ok(out)
}

pub fn run(cfg: &ReportConfig, out: &Path) -> anyhow::Result<()> {
    let missing: Vec<PathBuf> = cfg
        .params_summaries
        .iter()
        .chain(&cfg.reward_summaries)
        .chain(cfg.recall_curves.iter().map(|c| &c.path))
        .filter(|p| !p.is_file())
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(MissingInputs(missing).into());
    }

    let mut text = String::new();
    if !cfg.params_summaries.is_empty() {
        let titles = [
            "flipped acc",
            "origin RMSE",
            "size RMSE",
            "handle RMSE",
            "angle MAE (deg)",
        ];
        let cols: Vec<_> = PARAM_METRICS.into_iter().zip(titles).collect();
        let t = table(
            "Door-parameter inference (mean ± std over seeds)",
            &cols,
            &cfg.params_summaries,
        )?;
        std::fs::write(out.join("table_params.txt"), &t)?;
        text += &t;
        text.push('\n');
    }
    if !cfg.reward_summaries.is_empty() {
        let titles = ["reward RMSE (m)", "R_top", "R_top5"];
        let cols: Vec<_> = REWARD_METRICS.into_iter().zip(titles).collect();
        let t = table(
            "Policy selection (mean ± std over seeds)",
            &cols,
            &cfg.reward_summaries,
        )?;
        std::fs::write(out.join("table_reward.txt"), &t)?;
        text += &t;
        text.push('\n');
    }
    if !cfg.recall_curves.is_empty() {
        if cfg.recall_curves.len() > PALETTE.len() {
            bail!("at most {} recall curves fit in one plot", PALETTE.len());
        }
        let mut curves = Vec::new();
        for c in &cfg.recall_curves {
            let rows = read_rows(&c.path)?;
            let ys = rows
                .iter()
                .map(|r| number(r, "recall", &c.path))
                .collect::<anyhow::Result<Vec<f64>>>()?;
            if ys.is_empty() {
                bail!("{} has no rows", c.path.display());
            }
            curves.push(ys);
        }
        let series: Vec<Series> = curves
            .iter()
            .zip(PALETTE)
            .map(|(ys, (color, _))| Series { ys, color })
            .collect();
        write_png(&out.join("recall_curves.png"), &recall_plot(&series))?;
        let mut csv = String::from("label,n,recall\n");
        writeln!(
            text,
            "Recall of the best action within the top n (recall_curves.png)"
        )?;
        for (c, (ys, (_, colour))) in cfg.recall_curves.iter().zip(curves.iter().zip(PALETTE)) {
            for (n, y) in ys.iter().enumerate() {
                writeln!(csv, "{},{},{y}", c.label, n + 1)?;
            }
            let mut marks = vec![1, 5, 10, ys.len()];
            marks.retain(|&n| n <= ys.len());
            marks.dedup();
            let cells: Vec<String> = marks
                .iter()
                .map(|&n| format!("@{n} {:.3}", ys[n - 1]))
                .collect();
            writeln!(
                text,
                "  {:<14} {colour:<7} recall{}",
                c.label,
                cells.join("  ")
            )?;
        }
        std::fs::write(out.join("recall_curves.csv"), csv)?;
    }
    std::fs::write(out.join("report.txt"), &text)?;
    print!("{text}");
    Ok(())
}
