//! Artifact files. Every file is written to a temporary sibling and renamed
//! into place, so an interrupted sweep never leaves a truncated artifact.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use etlqg::simulation::ExperimentResult;
use etlqg::AnalyticResult;
use serde::Serialize;
use tempfile::NamedTempFile;

pub const TRADEOFF_HEADER: &str = "lambda,analytic_rate,empirical_rate,rate_stderr,analytic_cost,empirical_cost,cost_stderr";

pub fn write_atomic(dir: &Path, name: &str, contents: &[u8]) -> Result<()> {
    let mut tmp = NamedTempFile::new_in(dir).with_context(|| format!("creating temporary file in {}", dir.display()))?;
    tmp.write_all(contents).with_context(|| format!("writing {name}"))?;
    tmp.as_file().sync_all().with_context(|| format!("flushing {name}"))?;
    tmp.persist(dir.join(name)).with_context(|| format!("moving {name} into place"))?;
    Ok(())
}

pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).with_context(|| format!("serializing {name}"))?;
    text.push('\n');
    write_atomic(dir, name, text.as_bytes())
}

/// Analysis of one grid point, with the Monte Carlo estimate when one was run.
#[derive(Debug, Serialize)]
pub struct GridPoint {
    #[serde(flatten)]
    pub analysis: AnalyticResult,
    pub experiment: Option<ExperimentResult>,
}

/// `analysis_<lambda>.json`, with λ in shortest round-trip decimal form.
pub fn analysis_file_name(lambda: f64) -> String {
    format!("analysis_{lambda}.json")
}

fn optional(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn tradeoff_csv(points: &[GridPoint]) -> String {
    let mut out = String::from(TRADEOFF_HEADER);
    out.push('\n');
    for p in points {
        let e = p.experiment.as_ref();
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            p.analysis.lambda,
            p.analysis.rate(),
            optional(e.map(|e| e.empirical_rate.mean)),
            optional(e.and_then(|e| e.empirical_rate.stderr)),
            p.analysis.total_cost(),
            optional(e.map(|e| e.empirical_cost.mean)),
            optional(e.and_then(|e| e.empirical_cost.stderr)),
        )
        .expect("writing to a String cannot fail");
    }
    out
}

pub const GNUPLOT_SCRIPT: &str = "\
set datafile separator ','
set key autotitle columnhead
set logscale x
set xlabel 'lambda'
set terminal pngcairo size 800,900
set output 'tradeoff.png'
set multiplot layout 2,1
set ylabel 'communication rate'
plot 'tradeoff.csv' using 1:2 with lines title 'analytic', \\
     '' using 1:3 with points pt 7 title 'empirical'
set ylabel 'average cost'
set logscale y
plot 'tradeoff.csv' using 1:5 with lines title 'analytic', \\
     '' using 1:6 with points pt 7 title 'empirical'
unset multiplot
";
