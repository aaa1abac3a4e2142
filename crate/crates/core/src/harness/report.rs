use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use plotters::prelude::*;

use super::metrics::{read_metrics, smooth, EpochMetrics};
use super::{Condition, HarnessError, Result};

const WINDOW: usize = 5;
const SUMMARY_EPOCHS: [usize; 3] = [50, 150, 250];

/// Metrics of every run found under `dir/<condition>/metrics_run*.csv`,
/// ordered by run index.
pub fn load_condition_runs(dir: &Path, condition: Condition) -> Result<Vec<Vec<EpochMetrics>>> {
    let cdir = dir.join(condition.slug());
    if !cdir.is_dir() {
        return Ok(Vec::new());
    }
    let mut files: Vec<(usize, std::path::PathBuf)> = fs::read_dir(&cdir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter_map(|p| {
            let name = p.file_name()?.to_str()?;
            let k = name.strip_prefix("metrics_run")?.strip_suffix(".csv")?.parse().ok()?;
            Some((k, p))
        })
        .collect();
    files.sort();
    files.into_iter().map(|(_, p)| read_metrics(&p)).collect()
}

/// Per-epoch mean and population standard deviation across runs of the
/// smoothed series. Entry `i` is epoch `i + 1`; epochs not reached by every
/// run are dropped.
fn aggregate(runs: &[Vec<EpochMetrics>], pick: fn(&EpochMetrics) -> f64) -> Result<Vec<(f64, f64)>> {
    let len = runs.iter().map(Vec::len).min().unwrap_or(0);
    if len == 0 {
        return Ok(Vec::new());
    }
    let smoothed = runs
        .iter()
        .map(|r| {
            let mut rows = r.clone();
            rows.sort_by_key(|m| m.epoch);
            smooth(&rows[..len].iter().map(pick).collect::<Vec<_>>(), WINDOW)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((0..len)
        .map(|i| {
            let vals: Vec<f64> = smoothed.iter().map(|s| s[i]).filter(|v| !v.is_nan()).collect();
            if vals.is_empty() {
                return (f64::NAN, f64::NAN);
            }
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            (mean, var.sqrt())
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub model: String,
    /// `(mean, sd)` at epochs 50, 150 and 250, where reached.
    pub cells: [Option<(f64, f64)>; 3],
}

fn summary_rows(data: &[(Condition, Vec<Vec<EpochMetrics>>)], pick: fn(&EpochMetrics) -> f64) -> Result<Vec<SummaryRow>> {
    data.iter()
        .filter(|(_, runs)| !runs.is_empty())
        .map(|(c, runs)| {
            let agg = aggregate(runs, pick)?;
            Ok(SummaryRow {
                model: c.label().to_string(),
                cells: SUMMARY_EPOCHS.map(|e| agg.get(e - 1).copied()),
            })
        })
        .collect()
}

/// Text table with columns `model 50r 50sd 150r 150sd 250r 250sd`.
pub fn summary_table(title: &str, rows: &[SummaryRow]) -> String {
    let mut out = format!("{title}\n");
    let _ = writeln!(
        out,
        "{:<15}{:>8}{:>8}{:>8}{:>8}{:>8}{:>8}",
        "model", "50r", "50sd", "150r", "150sd", "250r", "250sd"
    );
    for r in rows {
        let _ = write!(out, "{:<15}", r.model);
        for cell in &r.cells {
            match cell {
                Some((m, s)) if !m.is_nan() => {
                    let _ = write!(out, "{m:>8.2}{s:>8.2}");
                }
                _ => {
                    let _ = write!(out, "{:>8}{:>8}", "-", "-");
                }
            }
        }
        out.push('\n');
    }
    out
}

/// Line chart of per-epoch means with a shaded ±1 sd band per series.
pub fn write_plot(path: &Path, title: &str, y_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> Result<()> {
    let err = |e: &dyn std::fmt::Display| HarnessError::Io(format!("plot {}: {e}", path.display()));
    let epochs = series.iter().map(|(_, s)| s.len()).max().unwrap_or(0).max(2);
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for (_, s) in series {
        for &(m, sd) in s.iter().filter(|(m, _)| !m.is_nan()) {
            lo = lo.min(m - sd);
            hi = hi.max(m + sd);
        }
    }
    let root = SVGBackend::new(path, (800, 500)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| err(&e))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(15)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d(1f64..epochs as f64, lo..hi)
        .map_err(|e| err(&e))?;
    chart
        .configure_mesh()
        .x_desc("epoch")
        .y_desc(y_label)
        .draw()
        .map_err(|e| err(&e))?;
    for (i, (name, s)) in series.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        let pts: Vec<(f64, f64, f64)> = s
            .iter()
            .enumerate()
            .filter(|(_, (m, _))| !m.is_nan())
            .map(|(k, &(m, sd))| ((k + 1) as f64, m, sd))
            .collect();
        let mut band: Vec<(f64, f64)> = pts.iter().map(|&(x, m, sd)| (x, m + sd)).collect();
        band.extend(pts.iter().rev().map(|&(x, m, sd)| (x, m - sd)));
        if band.len() > 2 {
            chart
                .draw_series(std::iter::once(Polygon::new(band, color.mix(0.15).filled())))
                .map_err(|e| err(&e))?;
        }
        chart
            .draw_series(LineSeries::new(pts.iter().map(|&(x, m, _)| (x, m)), color.stroke_width(2)))
            .map_err(|e| err(&e))?
            .label(name.as_str())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|e| err(&e))?;
    root.present().map_err(|e| err(&e))?;
    Ok(())
}

/// Reads every condition's metrics under `csv_dir` and writes `summary.txt`,
/// `score.svg` and `precision.svg` into `out_dir`. Returns the summary text.
pub fn emit_outputs(csv_dir: &Path, out_dir: &Path) -> Result<String> {
    let data: Vec<(Condition, Vec<Vec<EpochMetrics>>)> = Condition::ALL
        .into_iter()
        .map(|c| Ok((c, load_condition_runs(csv_dir, c)?)))
        .collect::<Result<_>>()?;
    if data.iter().all(|(_, runs)| runs.is_empty()) {
        return Err(HarnessError::Invalid(format!(
            "no metrics_run*.csv files under {}",
            csv_dir.display()
        )));
    }
    fs::create_dir_all(out_dir)?;
    let score = |m: &EpochMetrics| m.score_ratio;
    let precision = |m: &EpochMetrics| m.precision;
    let mut text = summary_table("score ratio (smoothed, window 5)", &summary_rows(&data, score)?);
    text.push('\n');
    text.push_str(&summary_table("precision (smoothed, window 5)", &summary_rows(&data, precision)?));
    fs::write(out_dir.join("summary.txt"), &text)?;
    for (file, title, pick) in [
        ("score.svg", "score ratio", score as fn(&EpochMetrics) -> f64),
        ("precision.svg", "precision", precision),
    ] {
        let series = data
            .iter()
            .filter(|(_, runs)| !runs.is_empty())
            .map(|(c, runs)| Ok((c.label().to_string(), aggregate(runs, pick)?)))
            .collect::<Result<Vec<_>>>()?;
        write_plot(&out_dir.join(file), title, title, &series)?;
    }
    Ok(text)
}

/// Smoothed mean across runs at `epoch` (1-based), if every run reached it.
pub fn smoothed_mean_at(runs: &[Vec<EpochMetrics>], epoch: usize, pick: fn(&EpochMetrics) -> f64) -> Result<Option<f64>> {
    Ok(aggregate(runs, pick)?.get(epoch - 1).map(|&(m, _)| m))
}
