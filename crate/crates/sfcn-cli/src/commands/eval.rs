//! `sfcn eval`: score predicted maps against ground-truth masks and write
//! the report, PR-curve and per-image CSVs.

use std::path::Path;

use sfcn::data::pnm;
use sfcn::metrics::{evaluate, EvalEntry, MetricsReport};
use sfcn::{Error, Result};

pub fn run(maps: &Path, truth: &Path, out: &Path) -> Result<()> {
    let map_ids = super::ids_with_extension(maps, "pgm")?;
    let truth_ids = super::ids_with_extension(truth, "pgm")?;
    let ids: Vec<&String> = map_ids.iter().filter(|id| truth_ids.contains(id)).collect();
    if ids.is_empty() {
        return Err(Error::Data(format!(
            "no common ids between {} and {}",
            maps.display(),
            truth.display()
        )));
    }

    let mut entries = Vec::with_capacity(ids.len());
    for id in &ids {
        let (map, h, w) = pnm::load_gray(&maps.join(format!("{id}.pgm")))?;
        let (gt, th, tw) = pnm::load_gray(&truth.join(format!("{id}.pgm")))?;
        if (h, w) != (th, tw) {
            return Err(Error::Data(format!(
                "`{id}`: map {h}x{w} and truth {th}x{tw} disagree"
            )));
        }
        let truth_binary = gt.iter().map(|v| f64::from(*v >= 0.5)).collect();
        entries.push(EvalEntry {
            id: id.to_string(),
            map,
            truth: truth_binary,
            height: h,
            width: w,
        });
    }
    let report = evaluate(&entries)?;

    let dataset = maps
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "maps".to_string());
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            super::create_dir(parent)?;
        }
    }
    super::write_text(out, &report_csv(&dataset, &report))?;

    let base = out.with_extension("");
    let pr_path = base.with_file_name(format!(
        "{}_pr_curve.csv",
        base.file_name().unwrap_or_default().to_string_lossy()
    ));
    let mut pr = String::from("threshold,precision,recall\n");
    for (t, (p, r)) in report.pr_curve.iter().enumerate() {
        pr.push_str(&format!("{t},{p},{r}\n"));
    }
    super::write_text(&pr_path, &pr)?;

    let per_path = base.with_file_name(format!(
        "{}_per_image.csv",
        base.file_name().unwrap_or_default().to_string_lossy()
    ));
    let mut per = String::from("id,mae,s_measure,precision,recall,f_adaptive\n");
    for row in &report.per_image {
        per.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.id, row.mae, row.s_measure, row.precision, row.recall, row.f_adaptive
        ));
    }
    super::write_text(&per_path, &per)?;

    println!(
        "{dataset}: F_max {:.4}, F_adaptive {:.4}, MAE {:.4}, S {:.4} ({} images)",
        report.f_max,
        report.f_adaptive,
        report.mae,
        report.s_measure,
        ids.len()
    );
    Ok(())
}

pub fn report_csv(dataset: &str, report: &MetricsReport) -> String {
    format!(
        "dataset,f_max,f_adaptive,mae,s_measure\n{dataset},{},{},{},{}\n",
        report.f_max, report.f_adaptive, report.mae, report.s_measure
    )
}
