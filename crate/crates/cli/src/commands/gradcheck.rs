//! `grad-check`: finite-difference checks of every differentiable operation.

use std::path::PathBuf;

use clap::Args;
use protembed::gradsuite::{check_all, check_operation, operation_names, DEFAULT_SEEDS, TOLERANCE};
use serde::Serialize;

use super::{num, Ctx, Outcome};
use crate::error::{CliError, CliResult};

/// Checks analytic gradients against central differences on random inputs,
/// seeds `--seed .. --seed + --seeds`. Exits nonzero if any operation's
/// worst relative error exceeds 1e-4. Output columns: `operation seeds
/// max_rel_error max_raw_error worst_seed status`, where `max_rel_error`
/// discounts the rounding noise of the difference quotient and
/// `max_raw_error` does not.
#[derive(Args, Debug)]
pub struct GradCheckArgs {
    /// Check every registered operation.
    #[arg(long, conflicts_with = "op", required_unless_present_any = ["op", "list"])]
    pub all: bool,
    /// Operation to check (repeatable); see --list.
    #[arg(long)]
    pub op: Vec<String>,
    /// Print the registered operation names and exit.
    #[arg(long)]
    pub list: bool,
    #[arg(long, default_value_t = DEFAULT_SEEDS)]
    pub seeds: u64,
    /// Report file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct Resolved<'a> {
    operations: Vec<&'a str>,
    seeds: u64,
    tolerance: f64,
}

pub fn run(args: &GradCheckArgs, ctx: &Ctx) -> CliResult<Option<Outcome>> {
    if args.list {
        for name in operation_names() {
            println!("{name}");
        }
        return Ok(None);
    }
    if args.seeds == 0 {
        return Err(CliError::usage("--seeds must be >= 1"));
    }
    let seed = ctx.seed.unwrap_or(0);
    let results = if args.all {
        check_all(seed, args.seeds)
    } else {
        args.op
            .iter()
            .map(|n| check_operation(n, seed, args.seeds))
            .collect::<protembed::Result<Vec<_>>>()?
    };
    let resolved = Resolved {
        operations: results.iter().map(|r| r.name).collect(),
        seeds: args.seeds,
        tolerance: TOLERANCE,
    };
    let mut tsv = String::from("operation\tseeds\tmax_rel_error\tmax_raw_error\tworst_seed\tstatus\n");
    for r in &results {
        let status = if r.passed() { "PASS" } else { "FAIL" };
        tsv.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{status}\n",
            r.name,
            r.seeds,
            num(r.max_error),
            num(r.max_raw_error),
            r.worst_seed
        ));
    }
    let mut out = Outcome::new(&resolved, seed);
    match &args.out {
        Some(p) => {
            out.write(p, &tsv)?;
            out = out.manifest_beside(p);
        }
        None => print!("{tsv}"),
    }
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed()).map(|r| r.name).collect();
    if !failed.is_empty() {
        out.failure = Some(CliError::Runtime(format!(
            "gradient check above {TOLERANCE:e} for: {}",
            failed.join(", ")
        )));
    }
    Ok(Some(out))
}
