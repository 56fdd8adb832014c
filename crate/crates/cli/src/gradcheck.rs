use sodkit_core::gradcheck::{self, REGISTERED};

use crate::cli::GradcheckArgs;
use crate::error::{exit, CliError, Result};

pub const HEADER: &str = "target                 seed  checked  skipped   max_abs_err   max_rel_err  tolerance  result";

/// Targets named by the arguments, validated before any check runs.
pub fn targets(args: &GradcheckArgs) -> Result<Vec<&'static str>> {
    if args.all || args.op.is_empty() {
        return Ok(REGISTERED.to_vec());
    }
    args.op
        .iter()
        .map(|name| {
            REGISTERED
                .iter()
                .copied()
                .find(|r| r == name)
                .ok_or_else(|| CliError::UnknownOp(name.clone()))
        })
        .collect()
}

pub fn run(args: &GradcheckArgs) -> Result<i32> {
    let names = targets(args)?;
    println!("{HEADER}");
    let mut failed = 0;
    let mut total = 0;
    for name in names {
        for seed in args.seed..args.seed + args.seeds {
            let r = gradcheck::gradcheck(name, seed)?;
            println!(
                "{:<22} {:>4} {:>8} {:>8} {:>13.3e} {:>13.3e} {:>10.0e}  {}",
                r.op,
                r.seed,
                r.checked,
                r.skipped,
                r.max_abs_err,
                r.max_rel_err,
                r.tolerance,
                if r.pass { "PASS" } else { "FAIL" }
            );
            total += 1;
            failed += usize::from(!r.pass);
        }
    }
    if failed > 0 {
        return Err(CliError::CheckFailed { failed, total });
    }
    Ok(exit::OK)
}
