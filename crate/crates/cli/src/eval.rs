use std::path::Path;

use rayon::prelude::*;
use sodkit_core::metrics::{self, BinaryMask, MetricReport, SaliencyMap};

use crate::cli::EvalArgs;
use crate::dataset::{self, Pair, MAP_EXTENSIONS};
use crate::error::{exit, one_line, CliError, Result};
use crate::image_io::load_image;
use crate::report::{self, ImageFailure, ImageResult};

pub const THREADS_ENV: &str = "LBA_SODKIT_THREADS";

/// `--jobs`, else the environment variable, else the available cores.
pub fn resolve_jobs(flag: Option<u16>, env: Option<&str>) -> Result<usize> {
    if let Some(j) = flag {
        return Ok(j as usize);
    }
    match env {
        Some(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(CliError::Usage(format!("{THREADS_ENV}={v:?} is not a positive integer"))),
        },
        None => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn evaluate(pair: &Pair) -> std::result::Result<MetricReport, String> {
    let load = |p: &Path| {
        load_image(p)
            .and_then(|i| i.require_gray())
            .map_err(|e| format!("{}: {e}", p.display()))
    };
    let pred = load(&pair.left)?;
    let gt = load(&pair.right)?;
    if (pred.width, pred.height) != (gt.width, gt.height) {
        return Err(format!(
            "size mismatch: prediction {}x{}, ground truth {}x{}",
            pred.width, pred.height, gt.width, gt.height
        ));
    }
    let s = SaliencyMap::from_gray8(pred.height, pred.width, &pred.data).map_err(|e| e.to_string())?;
    let g = BinaryMask::from_gray8(gt.height, gt.width, &gt.data).map_err(|e| e.to_string())?;
    metrics::evaluate_pair(&s, &g).map_err(|e| e.to_string())
}

pub fn run(args: &EvalArgs) -> Result<i32> {
    let env = std::env::var(THREADS_ENV).ok();
    let jobs = resolve_jobs(args.jobs, env.as_deref())?;
    let pairing = dataset::pair_dirs(&args.pred, &args.gt, MAP_EXTENSIONS, MAP_EXTENSIONS, ("prediction", "ground-truth"))?;
    if pairing.pairs.is_empty() {
        return Err(CliError::NoPairs(format!(
            "{} and {} share no .pgm/.png stems",
            args.pred.display(),
            args.gt.display()
        )));
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {jobs} workers: {e}")))?;
    // Collecting an indexed parallel iterator keeps stem order.
    let results: Vec<_> = pool.install(|| pairing.pairs.par_iter().map(evaluate).collect());

    let mut images = Vec::new();
    let mut failures: Vec<ImageFailure> = pairing
        .problems
        .iter()
        .map(|(stem, error)| ImageFailure {
            stem: stem.clone(),
            error: error.clone(),
        })
        .collect();
    for (pair, r) in pairing.pairs.iter().zip(results) {
        match r {
            Ok(report) => images.push(ImageResult {
                stem: pair.stem.clone(),
                report,
            }),
            Err(error) => failures.push(ImageFailure {
                stem: pair.stem.clone(),
                error,
            }),
        }
    }
    failures.sort_by(|a, b| a.stem.cmp(&b.stem));

    if images.is_empty() {
        return Err(CliError::NoPairs(format!(
            "none of {} pairs could be evaluated; first: {}: {}",
            pairing.pairs.len(),
            failures[0].stem,
            failures[0].error
        )));
    }
    let reports: Vec<MetricReport> = images.iter().map(|i| i.report.clone()).collect();
    let aggregate = metrics::aggregate(&reports)?;
    let name = args.dataset.clone().unwrap_or_else(|| {
        args.gt
            .canonicalize()
            .ok()
            .and_then(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .unwrap_or_default()
    });
    let json = report::report_json(&name, &aggregate, &images, &failures);
    std::fs::write(&args.out, json).map_err(|e| CliError::io(&args.out, e))?;
    if let Some(path) = &args.curves {
        std::fs::write(path, report::curves_csv(&aggregate.curve)).map_err(|e| CliError::io(path, e))?;
    }

    println!(
        "{}: {} images, {} errors, mae {} s_alpha {} f_max {} e_max {}",
        name,
        images.len(),
        failures.len(),
        report::fixed6(aggregate.mae),
        report::fixed6(aggregate.s_alpha),
        report::fixed6(aggregate.f_max),
        report::fixed6(aggregate.e_max)
    );
    if failures.is_empty() {
        Ok(exit::OK)
    } else {
        eprintln!(
            "error partial: {} of {} stems not evaluated; first: {}: {}",
            failures.len(),
            pairing.stems(),
            failures[0].stem,
            one_line(&failures[0].error)
        );
        Ok(exit::PARTIAL)
    }
}
