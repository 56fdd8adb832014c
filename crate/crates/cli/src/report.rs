//! Evaluation report JSON and curve CSV.
//!
//! Metric values are written with six decimals so repeated runs produce
//! identical bytes. The fixed parameters in `metadata` are written as-is.

use std::fmt::Write;

use sodkit_core::metrics::{Curve256, MetricReport, THRESHOLDS};

pub const CURVES_HEADER: &str = "threshold,precision,recall,f,e";

const METRIC_KEYS: [&str; 8] = ["mae", "s_alpha", "f_max", "f_mean", "f_adp", "e_max", "e_mean", "e_adp"];

pub struct ImageResult {
    pub stem: String,
    pub report: MetricReport,
}

pub struct ImageFailure {
    pub stem: String,
    pub error: String,
}

pub fn fixed6(v: f64) -> String {
    let s = format!("{v:.6}");
    if s == "-0.000000" {
        "0.000000".into()
    } else {
        s
    }
}

fn string(s: &str) -> String {
    serde_json::to_string(s).expect("strings always serialize")
}

fn scores(out: &mut String, r: &MetricReport, indent: &str) {
    for (k, v) in METRIC_KEYS.iter().zip(r.scores()) {
        let _ = writeln!(out, "{indent}\"{k}\": {},", fixed6(v));
    }
}

/// The report document; `aggregate` summarizes `images`.
pub fn report_json(
    dataset: &str,
    aggregate: &MetricReport,
    images: &[ImageResult],
    failures: &[ImageFailure],
) -> String {
    let mut out = String::from("{\n");
    let _ = writeln!(out, "  \"dataset\": {},", string(dataset));
    let _ = writeln!(out, "  \"n_images\": {},", images.len());
    scores(&mut out, aggregate, "  ");
    let _ = writeln!(out, "  \"f_max_per_image\": {},", fixed6(aggregate.f_max_per_image));
    let _ = writeln!(out, "  \"e_max_per_image\": {},", fixed6(aggregate.e_max_per_image));
    let _ = writeln!(
        out,
        "  \"metadata\": {{\"alpha\": {}, \"beta2\": {}, \"thresholds\": {}}},",
        aggregate.alpha, aggregate.beta2, THRESHOLDS
    );
    out.push_str("  \"per_image\": [");
    for (i, img) in images.iter().enumerate() {
        out.push_str(if i == 0 { "\n" } else { ",\n" });
        out.push_str("    {\n");
        let _ = writeln!(out, "      \"stem\": {},", string(&img.stem));
        scores(&mut out, &img.report, "      ");
        let flags: Vec<String> = img.report.flags.iter().map(|f| string(f.as_str())).collect();
        let _ = writeln!(out, "      \"flags\": [{}]", flags.join(", "));
        out.push_str("    }");
    }
    out.push_str(if images.is_empty() { "],\n" } else { "\n  ],\n" });
    out.push_str("  \"errors\": [");
    for (i, f) in failures.iter().enumerate() {
        out.push_str(if i == 0 { "\n" } else { ",\n" });
        let _ = write!(out, "    {{\"stem\": {}, \"error\": {}}}", string(&f.stem), string(&f.error));
    }
    out.push_str(if failures.is_empty() { "]\n" } else { "\n  ]\n" });
    out.push_str("}\n");
    out
}

pub fn curves_csv(curve: &Curve256) -> String {
    let mut out = format!("{CURVES_HEADER}\n");
    for r in curve.rows() {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            fixed6(r.threshold),
            fixed6(r.precision),
            fixed6(r.recall),
            fixed6(r.f),
            fixed6(r.e)
        );
    }
    out
}
