use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use polarfb::analytics::{bec_t_stats, covariance_matrix, mc_t_stats_with, McStats, FULL_MATRIX_CAP};
use polarfb::channel::ChannelModel;
use polarfb::construction::{bec_reliability_profile, select_frozen_set, write_profile, ReliabilityProfile};
use polarfb::error::Error;
use polarfb::experiments::{
    bler_sweep, build_profile, check_bler, check_compression, check_rate_delay,
    compression_table, rate_delay_table, scaled_threshold, BandCheck, ConstructionSetup, ReproBands,
};
use polarfb::feedback::{run_feedback_session, SessionOptions};
use polarfb::nb::{fit_nb, nb_entropy, predict_bler, predict_success_and_delay, DEFAULT_TAIL_MASS};
use polarfb::sc::CheckRule;
use polarfb::sk::{sk_simulate, SkParams};

const DEFAULT_BANDS: &str = include_str!("../repro_bands.json");

#[derive(Parser, Debug)]
#[command(name = "polarfb", version, about = "Polar codes with genie-aided feedback: experiments")]
struct Cli {
    /// Worker threads (defaults to all cores). Results do not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Use the min-sum check rule instead of the exact one.
    #[arg(long, global = true)]
    min_sum: bool,
    /// Directory for cached reliability profiles.
    #[arg(long, global = true, env = "POLARFB_CACHE_DIR")]
    cache_dir: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Build a reliability profile and write it as `index,pe` CSV plus JSON.
    Construct(ConstructArgs),
    /// Monte Carlo statistics of the genie-aided error count.
    McEstimate(McArgs),
    /// Exact covariance of BEC erasure indicators and the resulting stats.
    CovBec(CovArgs),
    /// Fit the negative-binomial model to moments or a histogram.
    FitNb(FitArgs),
    /// Run a chained feedback session.
    SimulateFeedback(FeedbackArgs),
    /// Block error probability after a delay cap, from fitted moments.
    PredictBler(PredictArgs),
    /// Empirical vs predicted SC block error rate over threshold scales.
    BlerSweep(SweepArgs),
    /// Schalkwijk–Kailath reference simulation.
    SkSim(SkArgs),
    /// Entropy and Huffman cost of the error count.
    CompressT(CompressArgs),
    /// Run the reference recipes and compare with the stored bands.
    Repro(ReproArgs),
}

#[derive(Args, Debug, Clone, Serialize)]
struct CodeArgs {
    /// Channel: bec:<p>, bsc:<p> or biawgn:<sigma>.
    #[arg(long)]
    channel: ChannelModel,
    /// log2 of the block length.
    #[arg(long)]
    n: u32,
    /// Monte Carlo trials for the reliability profile.
    #[arg(long, default_value_t = 100_000)]
    construction_trials: u64,
    #[arg(long, default_value_t = 1)]
    construction_seed: u64,
}

impl CodeArgs {
    fn block_len(&self) -> Result<usize> {
        if self.n > 24 {
            return Err(Error::ResourceLimit(format!("n = {} is too large", self.n)).into());
        }
        Ok(1usize << self.n)
    }

    fn profile(&self, g: &Globals) -> Result<ReliabilityProfile> {
        let setup = ConstructionSetup { trials: self.construction_trials, seed: self.construction_seed, rule: g.rule };
        Ok(build_profile(&self.channel, self.block_len()?, &setup, g.cache_dir.as_deref())?)
    }
}

#[derive(Args, Debug, Serialize)]
struct ConstructArgs {
    #[command(flatten)]
    code: CodeArgs,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct McArgs {
    #[command(flatten)]
    code: CodeArgs,
    /// Threshold scale α; the threshold is ε* / α with ε* = 1/log2 N.
    #[arg(long, default_value_t = 1.0)]
    threshold_scale: f64,
    #[arg(long, default_value_t = 100_000)]
    trials: u64,
    #[arg(long, default_value_t = 2)]
    seed: u64,
    /// Histogram CSV (`count,frequency`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct CovArgs {
    /// Erasure probability.
    #[arg(long)]
    p: f64,
    #[arg(long)]
    n: u32,
    #[arg(long, default_value_t = 1.0)]
    threshold_scale: f64,
    /// Upper-triangle CSV (`i,j,cov`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct FitArgs {
    #[arg(long, requires = "variance", conflicts_with = "histogram", allow_hyphen_values = true)]
    mean: Option<f64>,
    #[arg(long, requires = "mean", allow_hyphen_values = true)]
    variance: Option<f64>,
    /// Histogram CSV with header `count,frequency`.
    #[arg(long)]
    histogram: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_TAIL_MASS)]
    tail_mass: f64,
}

#[derive(Args, Debug, Serialize)]
struct FeedbackArgs {
    #[command(flatten)]
    code: CodeArgs,
    #[arg(long, default_value_t = 1.0)]
    threshold_scale: f64,
    #[arg(long, default_value_t = 10_000)]
    rounds: u64,
    /// Maximum delay; unbounded when omitted.
    #[arg(long)]
    dmax: Option<u64>,
    #[arg(long, default_value_t = 3)]
    seed: u64,
    /// Carry an explicit entry count in every payload.
    #[arg(long)]
    count_header: bool,
    /// Per-round CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct PredictArgs {
    #[arg(long, allow_hyphen_values = true)]
    mean: f64,
    #[arg(long, allow_hyphen_values = true)]
    variance: f64,
    #[arg(long)]
    dmax: u64,
}

#[derive(Args, Debug, Serialize)]
struct SweepArgs {
    #[command(flatten)]
    code: CodeArgs,
    /// Comma-separated threshold scales.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.5, 1.0, 2.0, 4.0, 8.0])]
    alphas: Vec<f64>,
    #[arg(long, default_value_t = 100_000)]
    trials: u64,
    #[arg(long, default_value_t = 2)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct SkArgs {
    #[arg(long)]
    power: f64,
    /// Rate as a fraction of capacity.
    #[arg(long)]
    rate_frac: f64,
    #[arg(long)]
    rounds: u32,
    #[arg(long, default_value_t = 100_000)]
    trials: u64,
    #[arg(long, default_value_t = 4)]
    seed: u64,
}

#[derive(Args, Debug, Serialize)]
struct CompressArgs {
    #[command(flatten)]
    code: CodeArgs,
    #[arg(long, value_delimiter = ',', default_values_t = vec![3.0, 2.0, 1.5, 1.0, 0.8, 0.5])]
    alphas: Vec<f64>,
    #[arg(long, default_value_t = 100_000)]
    trials: u64,
    #[arg(long, default_value_t = 2)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct ReproArgs {
    /// Tolerance bands JSON; the built-in bands are used when omitted.
    #[arg(long)]
    bands: Option<PathBuf>,
    /// Rounds per threshold for the rate/delay table.
    #[arg(long, default_value_t = 100_000)]
    rounds: u64,
    /// Independent sessions the rounds are split across.
    #[arg(long, default_value_t = 10)]
    sessions: u64,
    #[arg(long, default_value_t = 100_000)]
    trials: u64,
    #[arg(long, default_value_t = 100_000)]
    construction_trials: u64,
    #[arg(long, default_value_t = 1)]
    construction_seed: u64,
    #[arg(long, default_value_t = 2)]
    seed: u64,
    /// Skip the BLER sweep (the slowest recipe).
    #[arg(long)]
    skip_bler: bool,
    /// Directory for per-recipe CSV output.
    #[arg(long)]
    out: Option<PathBuf>,
}

struct Globals {
    rule: CheckRule,
    cache_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(Error::InvalidArgument(_)) => 2,
        Some(Error::ResourceLimit(_)) => 3,
        Some(Error::InsufficientData(_)) => 4,
        _ => 1,
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(Error::InvalidArgument("--jobs must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global()?;
    }
    let g = Globals { rule: if cli.min_sum { CheckRule::MinSum } else { CheckRule::Exact }, cache_dir: cli.cache_dir };
    match &cli.cmd {
        Cmd::Construct(a) => construct(a, &g)?,
        Cmd::McEstimate(a) => mc_estimate(a, &g)?,
        Cmd::CovBec(a) => cov_bec(a)?,
        Cmd::FitNb(a) => fit(a)?,
        Cmd::SimulateFeedback(a) => simulate_feedback(a, &g)?,
        Cmd::PredictBler(a) => predict(a)?,
        Cmd::BlerSweep(a) => sweep(a, &g)?,
        Cmd::SkSim(a) => sk(a)?,
        Cmd::CompressT(a) => compress(a, &g)?,
        Cmd::Repro(a) => return repro(a, &g),
    }
    Ok(ExitCode::SUCCESS)
}

fn emit(value: serde_json::Value) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, &value)?;
    writeln!(out)?;
    Ok(())
}

fn rule_name(g: &Globals) -> &'static str {
    match g.rule {
        CheckRule::Exact => "exact",
        CheckRule::MinSum => "min-sum",
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).with_context(|| format!("cannot create {}", path.display()))
}

fn write_histogram(path: &Path, mc: &McStats) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["count", "frequency"])?;
    for (k, c) in mc.histogram.iter().enumerate() {
        w.write_record([k.to_string(), c.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn construct(a: &ConstructArgs, g: &Globals) -> Result<()> {
    let profile = a.code.profile(g)?;
    let path = write_profile(&a.out, &profile)?;
    emit(json!({
        "command": "construct",
        "config": a,
        "check_rule": rule_name(g),
        "profile": path,
        "source": profile.source,
        "sum_pe": profile.pe.iter().sum::<f64>(),
    }))
}

fn mc_estimate(a: &McArgs, g: &Globals) -> Result<()> {
    let profile = a.code.profile(g)?;
    let threshold = scaled_threshold(profile.block_len, a.threshold_scale)?;
    let config = select_frozen_set(&profile, threshold)?;
    let mc = mc_t_stats_with(&a.code.channel, &config, a.trials, a.seed, g.rule)?;
    if let Some(out) = &a.out {
        write_histogram(out, &mc)?;
    }
    emit(json!({
        "command": "mc-estimate",
        "config": a,
        "check_rule": rule_name(g),
        "threshold": threshold,
        "k": config.k(),
        "mean": mc.stats.mean,
        "variance": mc.stats.variance,
        "standard_error": mc.standard_error(),
        "block_error_rate": mc.block_error_rate(),
        "histogram": mc.histogram,
    }))
}

fn cov_bec(a: &CovArgs) -> Result<()> {
    if a.n > 24 {
        return Err(Error::ResourceLimit(format!("n = {} is too large", a.n)).into());
    }
    let len = 1usize << a.n;
    let profile = bec_reliability_profile(a.p, len)?;
    let threshold = scaled_threshold(len, a.threshold_scale)?;
    let config = select_frozen_set(&profile, threshold)?;
    if let Some(out) = &a.out {
        if len > FULL_MATRIX_CAP {
            return Err(Error::ResourceLimit(format!("full matrix limited to N <= {FULL_MATRIX_CAP}")).into());
        }
        let cov = covariance_matrix(a.p, len)?;
        let mut w = csv_writer(out)?;
        w.write_record(["i", "j", "cov"])?;
        for i in 1..=len {
            for j in i..=len {
                w.write_record([i.to_string(), j.to_string(), format!("{:e}", cov.get(i, j))])?;
            }
        }
        w.flush()?;
    }
    let stats = bec_t_stats(a.p, &config)?;
    emit(json!({
        "command": "cov-bec",
        "config": a,
        "threshold": threshold,
        "k": config.k(),
        "mean": stats.mean,
        "variance": stats.variance,
        "dispersion": stats.dispersion(),
    }))
}

fn read_histogram(path: &Path) -> Result<Vec<u64>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("cannot read {}", path.display()))?;
    let headers = r.headers()?.clone();
    if headers.iter().map(str::trim).collect::<Vec<_>>() != ["count", "frequency"] {
        return Err(Error::InvalidArgument(format!("{} needs the header `count,frequency`", path.display())).into());
    }
    let mut hist: Vec<u64> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let bad = || Error::InvalidArgument(format!("malformed histogram row {rec:?}"));
        let k: usize = rec[0].trim().parse().map_err(|_| bad())?;
        let c: u64 = rec[1].trim().parse().map_err(|_| bad())?;
        if hist.len() <= k {
            hist.resize(k + 1, 0);
        }
        hist[k] += c;
    }
    if hist.iter().sum::<u64>() == 0 {
        return Err(Error::InsufficientData(format!("{} has no observations", path.display())).into());
    }
    Ok(hist)
}

fn fit(a: &FitArgs) -> Result<()> {
    let (mean, variance) = match (a.mean, a.variance, &a.histogram) {
        (Some(m), Some(v), None) => (m, v),
        (None, None, Some(path)) => {
            let mc = McStats::from_histogram(read_histogram(path)?)?;
            (mc.stats.mean, mc.stats.variance)
        }
        _ => return Err(Error::InvalidArgument("give either --mean and --variance or --histogram".into()).into()),
    };
    let model = fit_nb(mean, variance)?;
    let pred = predict_success_and_delay(&model);
    emit(json!({
        "command": "fit-nb",
        "config": a,
        "mean": mean,
        "variance": variance,
        "r": model.r_fit(),
        "p": model.p_fit(),
        "fallback": model.fallback_name(),
        "model": model,
        "success_prob": pred.success_prob,
        "avg_delay": if pred.infinite_delay { None } else { Some(pred.avg_delay) },
        "infinite_delay": pred.infinite_delay,
        "entropy_bits": nb_entropy(&model, a.tail_mass)?,
    }))
}

fn simulate_feedback(a: &FeedbackArgs, g: &Globals) -> Result<()> {
    let profile = a.code.profile(g)?;
    let threshold = scaled_threshold(profile.block_len, a.threshold_scale)?;
    let config = select_frozen_set(&profile, threshold)?;
    let options = SessionOptions { count_header: a.count_header, rule: g.rule };
    let session = run_feedback_session(&config, &a.code.channel, a.rounds, a.dmax, a.seed, options)?;
    if let Some(out) = &a.out {
        let mut w = csv_writer(out)?;
        w.write_record(["round", "t_prev_size", "new_info_bits", "success", "delay"])?;
        for r in &session.records {
            let delay = r.delay().map(|d| d.to_string()).unwrap_or_default();
            w.write_record([
                r.round.to_string(),
                r.t_prev_size.to_string(),
                r.new_info_bits.to_string(),
                (r.success as u8).to_string(),
                delay,
            ])?;
        }
        w.flush()?;
    }
    let s = &session.stats;
    emit(json!({
        "command": "simulate-feedback",
        "config": a,
        "check_rule": rule_name(g),
        "threshold": threshold,
        "k": config.k(),
        "code_rate": config.rate(),
        "rounds": s.rounds,
        "avg_rate": s.avg_rate,
        "avg_delay": s.avg_delay,
        "delay_histogram": s.delay_histogram,
        "bler_at_dmax": s.bler_at_dmax,
        "pending_blocks": s.pending_blocks,
        "success_rate": s.success_rate,
        "stats": s,
    }))
}

fn predict(a: &PredictArgs) -> Result<()> {
    let model = fit_nb(a.mean, a.variance)?;
    let pred = predict_success_and_delay(&model);
    emit(json!({
        "command": "predict-bler",
        "config": a,
        "fallback": model.fallback_name(),
        "r": model.r_fit(),
        "p": model.p_fit(),
        "success_prob": pred.success_prob,
        "bler": predict_bler(&model, a.dmax)?,
    }))
}

fn sweep(a: &SweepArgs, g: &Globals) -> Result<()> {
    let profile = a.code.profile(g)?;
    let rows = bler_sweep(&profile, &a.code.channel, &a.alphas, a.trials, a.seed, g.rule)?;
    if let Some(out) = &a.out {
        let mut w = csv_writer(out)?;
        w.write_record(["alpha", "threshold", "empirical_bler", "predicted_bler", "mean", "variance", "r", "p"])?;
        for r in &rows {
            let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            w.write_record([
                r.alpha.to_string(),
                r.threshold.to_string(),
                r.empirical_bler.to_string(),
                r.predicted_bler.to_string(),
                r.mean.to_string(),
                r.variance.to_string(),
                opt(r.r),
                opt(r.p),
            ])?;
        }
        w.flush()?;
    }
    emit(json!({ "command": "bler-sweep", "config": a, "check_rule": rule_name(g), "rows": rows }))
}

fn sk(a: &SkArgs) -> Result<()> {
    let params = SkParams::from_rate_fraction(a.power, a.rate_frac, a.rounds)?;
    let result = sk_simulate(&params, a.trials, a.seed)?;
    emit(json!({
        "command": "sk-sim",
        "config": a,
        "error_rate": result.error_rate,
        "bound": result.bound,
        "var_eps_final": result.var_eps_final(),
        "result": result,
    }))
}

fn compress(a: &CompressArgs, g: &Globals) -> Result<()> {
    let profile = a.code.profile(g)?;
    let rows = compression_table(&profile, &a.code.channel, &a.alphas, a.trials, a.seed, g.rule)?;
    if let Some(out) = &a.out {
        let mut w = csv_writer(out)?;
        w.write_record(["alpha", "threshold", "k", "entropy", "entropy_nb", "avg_len"])?;
        for r in &rows {
            w.write_record([
                r.alpha.to_string(),
                r.threshold.to_string(),
                r.k.to_string(),
                r.entropy.to_string(),
                r.entropy_nb.to_string(),
                r.avg_len.to_string(),
            ])?;
        }
        w.flush()?;
    }
    emit(json!({ "command": "compress-t", "config": a, "check_rule": rule_name(g), "rows": rows }))
}

fn repro(a: &ReproArgs, g: &Globals) -> Result<ExitCode> {
    let text = match &a.bands {
        Some(p) => fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?,
        None => DEFAULT_BANDS.to_string(),
    };
    let bands: ReproBands = serde_json::from_str(&text).context("malformed tolerance bands")?;
    if a.sessions == 0 || a.rounds < a.sessions {
        return Err(Error::InvalidArgument("need at least one round per session".into()).into());
    }
    let setup = ConstructionSetup { trials: a.construction_trials, seed: a.construction_seed, rule: g.rule };
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir)?;
    }
    let mut checks: Vec<BandCheck> = Vec::new();

    let rd = &bands.rate_delay;
    let profile = build_profile(&rd.channel, 1 << rd.n, &setup, g.cache_dir.as_deref())?;
    let options = SessionOptions { count_header: false, rule: g.rule };
    let rows = rate_delay_table(&profile, &rd.channel, &rd.alphas, a.rounds / a.sessions, a.sessions, a.seed, options)?;
    checks.extend(check_rate_delay(rd, &rows));
    if let Some(dir) = &a.out {
        let mut w = csv_writer(&dir.join("rate_delay.csv"))?;
        w.write_record(["alpha", "threshold", "k", "avg_rate", "avg_delay", "success_rate"])?;
        for r in &rows {
            w.write_record([
                r.alpha.to_string(),
                r.threshold.to_string(),
                r.k.to_string(),
                r.stats.avg_rate.to_string(),
                r.stats.avg_delay.to_string(),
                r.stats.success_rate.to_string(),
            ])?;
        }
        w.flush()?;
    }

    let cb = &bands.compression;
    let profile = build_profile(&cb.channel, 1 << cb.n, &setup, g.cache_dir.as_deref())?;
    let rows = compression_table(&profile, &cb.channel, &cb.alphas, a.trials, a.seed, g.rule)?;
    checks.extend(check_compression(cb, &rows));
    if let Some(dir) = &a.out {
        let mut w = csv_writer(&dir.join("compression.csv"))?;
        w.write_record(["alpha", "entropy", "entropy_nb", "avg_len"])?;
        for r in &rows {
            w.write_record([r.alpha.to_string(), r.entropy.to_string(), r.entropy_nb.to_string(), r.avg_len.to_string()])?;
        }
        w.flush()?;
    }

    if !a.skip_bler {
        let bb = &bands.bler;
        for ch in &bb.channels {
            let profile = build_profile(ch, 1 << bb.n, &setup, g.cache_dir.as_deref())?;
            let rows = bler_sweep(&profile, ch, &bb.alphas, a.trials, a.seed, g.rule)?;
            checks.extend(check_bler(bb, ch, &rows));
            if let Some(dir) = &a.out {
                let mut w = csv_writer(&dir.join(format!("bler_{}.csv", ch.slug())))?;
                w.write_record(["alpha", "empirical_bler", "predicted_bler"])?;
                for r in &rows {
                    w.write_record([r.alpha.to_string(), r.empirical_bler.to_string(), r.predicted_bler.to_string()])?;
                }
                w.flush()?;
            }
        }
    }

    let failed = checks.iter().filter(|c| !c.pass).count();
    emit(json!({
        "command": "repro",
        "config": a,
        "check_rule": rule_name(g),
        "checks": checks,
        "failed": failed,
    }))?;
    if failed > 0 {
        bail!("{failed} of {} checks outside their bands", checks.len());
    }
    Ok(ExitCode::SUCCESS)
}
