//! Experiment configuration files (TOML).
//!
//! ```toml
//! [network]
//! n = 8
//! k = 2
//! weights = [4, 3, 2, 1, 5, 4, 1, 2]
//! src_reliability = "i/N"     # number, list, or "i/N"
//! dst_reliability = 0.8       # number or list
//! fwd_delay = 5               # integer or list
//! fb_delay = "theta"          # integer, list, "theta" or "infinite"
//!
//! [generation]                # shared by all sources; use [[generation]] per source
//! kind = "uniform"
//! lo = 2
//! hi = 4
//!
//! [sweep]
//! axis = "gen_scale"          # gen_scale | src_reliability | dst_reliability | fwd_delay
//! values = [1, 2, 3]
//!
//! [run]
//! policies = ["randomized", "mw-e", "mw-enf", "mw-f", "mw-s"]
//! horizon = 200000
//! runs = 10
//! seed = 1
//!
//! [output]
//! dir = "out"
//! prefix = "scale_uniform"
//! ```

use std::ops::Range;
use std::path::{Path, PathBuf};

use aoi_core::policies::{Policy, PolicyKind};
use aoi_core::sim::SweepAxis;
use aoi_core::{FeedbackDelay, GenSpec, NetworkConfig, SourceConfig};
use serde::{Deserialize, Serialize};
use toml::Spanned;

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Numbers {
    Scalar(f64),
    List(Vec<f64>),
    Formula(String),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Feedback {
    Scalar(u64),
    List(Vec<u64>),
    Keyword(String),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Generation {
    Shared(GenSpec),
    PerSource(Vec<GenSpec>),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkBlock {
    pub n: Spanned<usize>,
    pub k: Spanned<usize>,
    pub weights: Spanned<Numbers>,
    pub src_reliability: Spanned<Numbers>,
    pub dst_reliability: Spanned<Numbers>,
    pub fwd_delay: Spanned<Numbers>,
    #[serde(default = "default_feedback")]
    pub fb_delay: Spanned<Feedback>,
}

fn default_feedback() -> Spanned<Feedback> {
    Spanned::new(0..0, Feedback::Keyword("theta".into()))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    pub axis: SweepAxis,
    pub values: Spanned<Vec<f64>>,
    /// Keep every finite feedback delay equal to the forwarding delay.
    #[serde(default = "yes")]
    pub feedback_follows_delay: bool,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunBlock {
    /// Omitted means every policy the network supports.
    #[serde(default)]
    pub policies: Option<Vec<PolicyKind>>,
    #[serde(default = "default_horizon")]
    pub horizon: u64,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_horizon() -> u64 {
    200_000
}

fn default_runs() -> usize {
    10
}

impl Default for RunBlock {
    fn default() -> Self {
        RunBlock {
            policies: None,
            horizon: default_horizon(),
            runs: default_runs(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default = "default_prefix")]
    pub prefix: String,
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_prefix() -> String {
    "experiment".into()
}

impl Default for OutputBlock {
    fn default() -> Self {
        OutputBlock {
            dir: default_dir(),
            prefix: default_prefix(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub network: NetworkBlock,
    pub generation: Generation,
    pub sweep: Option<SweepBlock>,
    #[serde(default)]
    pub run: RunBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

/// A parsed and validated experiment.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub raw: ExperimentConfig,
    /// Resolved policy roster.
    pub policies: Vec<PolicyKind>,
    pub source_text: String,
    pub network: NetworkConfig,
}

struct Locator<'a> {
    text: &'a str,
}

impl Locator<'_> {
    fn err(&self, field: &str, span: Range<usize>, msg: impl std::fmt::Display) -> CliError {
        if span.is_empty() && span.start == 0 {
            return CliError::Validation(format!("{field}: {msg}"));
        }
        let line = self.text[..span.start.min(self.text.len())]
            .matches('\n')
            .count()
            + 1;
        CliError::Validation(format!("{field} (line {line}): {msg}"))
    }
}

fn expand(loc: &Locator, field: &str, value: &Spanned<Numbers>, n: usize) -> CliResult<Vec<f64>> {
    let span = value.span();
    match value.get_ref() {
        Numbers::Scalar(x) => Ok(vec![*x; n]),
        Numbers::List(xs) if xs.len() == n => Ok(xs.clone()),
        Numbers::List(xs) => Err(loc.err(
            field,
            span,
            format!("has {} entries, expected 1 or n = {n}", xs.len()),
        )),
        Numbers::Formula(f) if f.replace(' ', "") == "i/N" => {
            Ok((1..=n).map(|i| i as f64 / n as f64).collect())
        }
        Numbers::Formula(f) => Err(loc.err(
            field,
            span,
            format!("unknown formula {f:?}; only \"i/N\" is supported"),
        )),
    }
}

fn check_all(
    loc: &Locator,
    field: &str,
    span: Range<usize>,
    xs: &[f64],
    ok: impl Fn(f64) -> bool,
    what: &str,
) -> CliResult<()> {
    match xs.iter().position(|x| !ok(*x)) {
        Some(i) => Err(loc.err(
            &format!("{field}[{i}]"),
            span,
            format!("{} must be {what}", xs[i]),
        )),
        None => Ok(()),
    }
}

pub fn parse_str(text: &str) -> CliResult<Experiment> {
    let raw: ExperimentConfig =
        toml::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))?;
    let loc = Locator { text };
    let net = &raw.network;
    let n = *net.n.get_ref();
    let k = *net.k.get_ref();
    if n == 0 {
        return Err(loc.err("network.n", net.n.span(), "must be at least 1"));
    }
    if k == 0 || k > n {
        return Err(loc.err(
            "network.k",
            net.k.span(),
            format!("K = {k} must satisfy 1 <= K <= N = {n}"),
        ));
    }

    let weights = expand(&loc, "network.weights", &net.weights, n)?;
    check_all(
        &loc,
        "network.weights",
        net.weights.span(),
        &weights,
        |x| x > 0.0 && x.is_finite(),
        "positive",
    )?;
    let ps = expand(&loc, "network.src_reliability", &net.src_reliability, n)?;
    let unit = |x: f64| x > 0.0 && x <= 1.0;
    check_all(
        &loc,
        "network.src_reliability",
        net.src_reliability.span(),
        &ps,
        unit,
        "in (0, 1]",
    )?;
    let pd = expand(&loc, "network.dst_reliability", &net.dst_reliability, n)?;
    check_all(
        &loc,
        "network.dst_reliability",
        net.dst_reliability.span(),
        &pd,
        unit,
        "in (0, 1]",
    )?;
    let theta = expand(&loc, "network.fwd_delay", &net.fwd_delay, n)?;
    let count = |x: f64| x >= 0.0 && x.fract() == 0.0;
    check_all(
        &loc,
        "network.fwd_delay",
        net.fwd_delay.span(),
        &theta,
        count,
        "a non-negative integer",
    )?;
    let theta: Vec<u64> = theta.iter().map(|x| *x as u64).collect();

    let fb_span = net.fb_delay.span();
    let omega: Vec<FeedbackDelay> = match net.fb_delay.get_ref() {
        Feedback::Scalar(w) => vec![FeedbackDelay::Finite(*w); n],
        Feedback::List(ws) if ws.len() == n => {
            ws.iter().map(|w| FeedbackDelay::Finite(*w)).collect()
        }
        Feedback::List(ws) => {
            return Err(loc.err(
                "network.fb_delay",
                fb_span,
                format!("has {} entries, expected 1 or n = {n}", ws.len()),
            ))
        }
        Feedback::Keyword(s) if s == "theta" => {
            theta.iter().map(|t| FeedbackDelay::Finite(*t)).collect()
        }
        Feedback::Keyword(s) if s == "infinite" => vec![FeedbackDelay::Infinite; n],
        Feedback::Keyword(s) => {
            return Err(loc.err(
                "network.fb_delay",
                fb_span,
                format!("unknown value {s:?}; use an integer, \"theta\" or \"infinite\""),
            ))
        }
    };

    let gens: Vec<GenSpec> = match &raw.generation {
        Generation::Shared(g) => vec![g.clone(); n],
        Generation::PerSource(gs) if gs.len() == n => gs.clone(),
        Generation::PerSource(gs) => {
            return Err(CliError::Validation(format!(
                "generation: {} per-source entries, expected n = {n}",
                gs.len()
            )))
        }
    };
    for (i, g) in gens.iter().enumerate() {
        g.pmf()
            .map_err(|e| CliError::Validation(format!("generation[{i}]: {e}")))?;
    }

    let sources = (0..n)
        .map(|i| SourceConfig {
            weight: weights[i],
            src_reliability: ps[i],
            dst_reliability: pd[i],
            fwd_delay: theta[i],
            fb_delay: omega[i],
            gen: gens[i].clone(),
        })
        .collect();
    let network = NetworkConfig::new(k, sources)?;

    if let Some(sweep) = &raw.sweep {
        if sweep.values.get_ref().is_empty() {
            return Err(loc.err("sweep.values", sweep.values.span(), "must not be empty"));
        }
        for (i, v) in sweep.values.get_ref().iter().enumerate() {
            sweep
                .axis
                .apply(&network, *v, sweep.feedback_follows_delay)
                .map_err(|e| loc.err(&format!("sweep.values[{i}]"), sweep.values.span(), e))?;
        }
    }
    if raw.run.runs == 0 {
        return Err(CliError::Validation("run.runs: must be at least 1".into()));
    }
    if raw.run.horizon == 0 {
        return Err(CliError::Validation(
            "run.horizon: must be at least 1".into(),
        ));
    }
    let policies = match &raw.run.policies {
        Some(p) => {
            check_policies(&network, p)?;
            p.clone()
        }
        None => PolicyKind::ALL
            .into_iter()
            .filter(|&p| Policy::new(p, &network).is_ok())
            .collect(),
    };

    Ok(Experiment {
        raw,
        policies,
        source_text: text.to_string(),
        network,
    })
}

pub fn parse_config(path: &Path) -> CliResult<Experiment> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
    parse_str(&text).map_err(|e| match e {
        CliError::Validation(m) => CliError::Validation(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Rejects policies that need information the network does not provide.
pub fn check_policies(network: &NetworkConfig, policies: &[PolicyKind]) -> CliResult<()> {
    if policies.is_empty() {
        return Err(CliError::Validation(
            "run.policies: must not be empty".into(),
        ));
    }
    for &p in policies {
        Policy::new(p, network).map_err(|e| CliError::Validation(format!("run.policies: {e}")))?;
    }
    Ok(())
}

impl Experiment {
    /// Networks at each sweep point, or the base network as a single point.
    pub fn points(&self) -> CliResult<Vec<(f64, NetworkConfig)>> {
        match &self.raw.sweep {
            None => Ok(vec![(0.0, self.network.clone())]),
            Some(s) => s
                .values
                .get_ref()
                .iter()
                .map(|&v| Ok((v, s.axis.apply(&self.network, v, s.feedback_follows_delay)?)))
                .collect(),
        }
    }
}
