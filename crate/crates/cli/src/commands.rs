use std::fs::{self, File};
use std::io::BufWriter;
use std::path::PathBuf;

use aoi_core::bounds::{self, optimality_ratio};
use aoi_core::estimator::write_trace;
use aoi_core::policies::PolicyKind;
use aoi_core::randomized::{optimal_probabilities, slot_model_ewsaoi};
use aoi_core::sim::{run_episode_with, run_experiment, EpisodeOptions, EpisodeResult};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{check_policies, parse_config, Experiment};
use crate::error::{CliError, CliResult};
use crate::Common;

/// Parsed config with command-line overrides applied.
pub struct Context {
    pub experiment: Experiment,
    pub horizon: u64,
    pub runs: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub policies: Vec<PolicyKind>,
    pub trace: Option<u64>,
}

impl Context {
    pub fn new(c: &Common) -> CliResult<Self> {
        let experiment = parse_config(&c.config)?;
        let run = &experiment.raw.run;
        let policies = c
            .policies
            .clone()
            .unwrap_or_else(|| experiment.policies.clone());
        check_policies(&experiment.network, &policies)?;
        let horizon = c.horizon.unwrap_or(run.horizon);
        let runs = c.runs.unwrap_or(run.runs);
        if horizon == 0 || runs == 0 {
            return Err(CliError::Validation(
                "--horizon and --runs must be at least 1".into(),
            ));
        }
        Ok(Context {
            horizon,
            runs,
            seed: c.seed.unwrap_or(run.seed),
            out_dir: c
                .out
                .clone()
                .unwrap_or_else(|| experiment.raw.output.dir.clone()),
            policies,
            trace: c.trace,
            experiment,
        })
    }

    fn prefix(&self) -> &str {
        &self.experiment.raw.output.prefix
    }

    fn output(&self, name: &str) -> CliResult<BufWriter<File>> {
        fs::create_dir_all(&self.out_dir)?;
        Ok(BufWriter::new(File::create(self.out_dir.join(name))?))
    }

    fn write_manifest(&self, command: &str, outputs: Vec<String>) -> CliResult<()> {
        let manifest = Manifest {
            tool: "aoisim",
            version: env!("CARGO_PKG_VERSION"),
            command,
            seed: self.seed,
            horizon: self.horizon,
            runs: self.runs,
            policies: self.policies.iter().map(|p| p.name()).collect(),
            outputs,
            config: &self.experiment.source_text,
        };
        let mut w = self.output(&format!("{}.manifest.json", self.prefix()))?;
        serde_json::to_writer_pretty(&mut w, &manifest)
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        Ok(())
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    seed: u64,
    horizon: u64,
    runs: usize,
    policies: Vec<&'static str>,
    outputs: Vec<String>,
    config: &'a str,
}

fn list(xs: &[f64]) -> String {
    let items: Vec<String> = xs.iter().map(|x| format!("{x:.4}")).collect();
    format!("[{}]", items.join(", "))
}

pub fn lower_bound(ctx: &Context) -> CliResult<()> {
    let net = &ctx.experiment.network;
    let m = net.moments();
    let lb = bounds::lower_bound(net, &m)?;
    let rho = optimality_ratio(net, &m);
    println!("L_B = {:.6}", lb.bound);
    println!("rho = {rho:.6}");
    println!("rho * L_B = {:.6}", rho * lb.bound);
    println!("multiplier = {:.6}", lb.multiplier);
    println!("q = {}", list(&lb.rates));
    Ok(())
}

pub fn randomized(ctx: &Context) -> CliResult<()> {
    let net = &ctx.experiment.network;
    let sol = optimal_probabilities(net);
    let slot = slot_model_ewsaoi(net, &net.moments(), &sol.marginals)?;
    println!("mu = {}", list(&sol.marginals));
    println!("EWSAoI (closed form) = {:.6}", sol.ewsaoi);
    println!("EWSAoI (slot model) = {slot:.6}");
    println!("multiplier = {:.6}", sol.multiplier);
    Ok(())
}

#[derive(Serialize)]
struct EpisodeRow {
    policy: PolicyKind,
    seed: u64,
    horizon: u64,
    ewsaoi: f64,
}

pub fn simulate(ctx: &Context) -> CliResult<()> {
    let net = &ctx.experiment.network;
    let opts = EpisodeOptions {
        trace_slots: ctx.trace.unwrap_or(0).min(ctx.horizon),
        ..EpisodeOptions::default()
    };
    let outputs = ctx
        .policies
        .par_iter()
        .map(|&p| run_episode_with(net, p, ctx.horizon, ctx.seed, &opts))
        .collect::<aoi_core::Result<Vec<_>>>()?;

    let mut files = Vec::new();
    let name = format!("{}_simulate.csv", ctx.prefix());
    let mut w = csv::Writer::from_writer(ctx.output(&name)?);
    println!("{:<12} {:>12}", "policy", "ewsaoi");
    for out in &outputs {
        let r: &EpisodeResult = out.result.as_ref().expect("episode result");
        println!("{:<12} {:>12.4}", r.policy.name(), r.ewsaoi);
        w.serialize(EpisodeRow {
            policy: r.policy,
            seed: r.seed,
            horizon: r.horizon,
            ewsaoi: r.ewsaoi,
        })
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    w.flush()?;
    files.push(name);

    if ctx.trace.is_some() {
        for out in outputs.iter().filter(|o| !o.trace.is_empty()) {
            let policy = out.result.as_ref().expect("episode result").policy;
            let name = format!("{}_trace_{}.csv", ctx.prefix(), policy.name());
            write_trace(ctx.output(&name)?, &out.trace)?;
            files.push(name);
        }
    }
    ctx.write_manifest("simulate", files)
}

pub fn sweep(ctx: &Context) -> CliResult<()> {
    if ctx.experiment.raw.sweep.is_none() {
        return Err(CliError::Validation(
            "sweep: config has no [sweep] block".into(),
        ));
    }
    let points = ctx.experiment.points()?;
    let result = run_experiment(&points, &ctx.policies, ctx.runs, ctx.horizon, ctx.seed)?;
    let name = format!("{}.csv", ctx.prefix());
    result.write_csv(ctx.output(&name)?)?;

    println!(
        "{:>10} {:<12} {:>12} {:>10} {:>12} {:>12}",
        "value", "policy", "ewsaoi", "stddev", "lower_bound", "closed_form"
    );
    for p in &result.points {
        println!(
            "{:>10} {:<12} {:>12.4} {:>10.4} {:>12.4} {:>12.4}",
            p.sweep_value,
            p.policy.name(),
            p.mean_ewsaoi,
            p.stddev,
            p.lower_bound,
            p.closed_form
        );
    }
    println!("wrote {}", ctx.out_dir.join(&name).display());
    ctx.write_manifest("sweep", vec![name])
}
