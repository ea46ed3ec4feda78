//! Monte Carlo logical-error-rate estimation and the before/after studies.
//!
//! Trial `t` of an estimate draws its error from `derive_stream(stream, t)`,
//! so counts do not depend on how trials are spread over workers.

use std::fmt::Write as _;

use ndarray::Array2;
use rayon::prelude::*;

use crate::decoder::{binarize, gen_dataset, train_decoder, Decoder, DecoderConfig, DecoderModel};
use crate::error::{Error, Result};
use crate::lattice::{residual, CodeLayout, ErrorVector, Outcome};
use crate::noise::{derive_stream, NoiseModel, RngStream};
use crate::reoptimizer::{reoptimize, ReoptConfig};
use crate::syndrome_field::SyndromeField;

const CHUNK: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LerEstimate {
    pub trials: usize,
    pub failures: usize,
    pub rate: f64,
}

/// Counts trials whose corrected state is not restored: either a syndrome is
/// left or a logical loop is flipped.
pub fn logical_error_rate<D: Decoder + ?Sized>(
    decoder: &D,
    layout: &CodeLayout,
    noise: NoiseModel,
    trials: usize,
    stream: u64,
) -> Result<LerEstimate> {
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be >= 1".into()));
    }
    if decoder.distance() != layout.distance() {
        return Err(Error::Dimension(format!(
            "decoder is for L = {}, layout for L = {}",
            decoder.distance(),
            layout.distance()
        )));
    }
    let chunks = trials.div_ceil(CHUNK);
    let failures = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let range = c * CHUNK..((c + 1) * CHUNK).min(trials);
            count_failures(decoder, layout, noise, stream, range)
        })
        .try_reduce(|| 0, |a, b| Ok(a + b))?;
    Ok(LerEstimate {
        trials,
        failures,
        rate: failures as f64 / trials as f64,
    })
}

fn count_failures<D: Decoder + ?Sized>(
    decoder: &D,
    layout: &CodeLayout,
    noise: NoiseModel,
    stream: u64,
    range: std::ops::Range<usize>,
) -> Result<usize> {
    let (sl, el) = (layout.syndrome_len(), layout.error_len());
    let errors: Vec<ErrorVector> = range
        .map(|t| noise.sample_error(layout, &mut derive_stream(stream, t as u64)))
        .collect();
    let mut syndromes = Array2::zeros((errors.len(), sl));
    for (e, mut row) in errors.iter().zip(syndromes.rows_mut()) {
        for (dst, b) in row.iter_mut().zip(layout.measure_syndrome(e)?.bits()) {
            *dst = f64::from(*b);
        }
    }
    let soft = decoder.decode_soft(syndromes.view())?;
    if soft.ncols() != el {
        return Err(Error::Dimension(format!(
            "decoder emitted {} components, expected {el}",
            soft.ncols()
        )));
    }
    let mut failures = 0;
    for (e, row) in errors.iter().zip(soft.rows()) {
        let e_hat = ErrorVector::from_bits(row.iter().map(|&v| binarize(v)).collect())?;
        if layout.classify_residual(&residual(e, &e_hat)?)? != Outcome::Success {
            failures += 1;
        }
    }
    Ok(failures)
}

/// `start, start + step, ..., stop` rounded to 12 decimals.
pub fn linear_grid(start: f64, stop: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(stop >= start) {
        return Err(Error::InvalidParameter(format!(
            "bad grid {start}..{stop} step {step}"
        )));
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    Ok((0..=n)
        .map(|k| ((start + k as f64 * step) * 1e12).round() / 1e12)
        .collect())
}

/// Physical error rates 0.1% to 5% in steps of 0.1%.
pub fn default_grid() -> Vec<f64> {
    (1..=50).map(|k| k as f64 / 1000.0).collect()
}

pub const DEFAULT_TRIALS: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub p: f64,
    pub trials: usize,
    pub failures: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub l: usize,
    pub noise: NoiseModel,
    pub seed: u64,
    pub decoder_hash: String,
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    pub fn rates(&self) -> Vec<f64> {
        self.points.iter().map(|pt| pt.rate).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("p,trials,ler\n");
        for pt in &self.points {
            writeln!(out, "{},{},{}", pt.p, pt.trials, pt.rate).expect("string write");
        }
        out
    }
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("p grid is empty".into()));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter("p grid must be strictly increasing".into()));
    }
    Ok(())
}

/// One estimate per grid point; point `k` uses the stream
/// `derive_stream(seed, k).next_u64()`.
pub fn sweep<D: Decoder + ?Sized>(
    decoder: &D,
    layout: &CodeLayout,
    family: NoiseModel,
    grid: &[f64],
    trials: usize,
    seed: u64,
    decoder_hash: &str,
) -> Result<SweepResult> {
    check_grid(grid)?;
    let points = grid
        .iter()
        .enumerate()
        .map(|(k, &p)| {
            let stream = derive_stream(seed, k as u64).next_u64();
            let est = logical_error_rate(decoder, layout, family.with_p(p)?, trials, stream)?;
            Ok(SweepPoint {
                p,
                trials,
                failures: est.failures,
                rate: est.rate,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult {
        l: layout.distance(),
        noise: family,
        seed,
        decoder_hash: decoder_hash.to_string(),
        points,
    })
}

/// Mean and sample standard deviation (zero for fewer than two values).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub p: f64,
    pub before_mean: f64,
    pub before_std: f64,
    pub after_mean: f64,
    pub after_std: f64,
    /// Paired `before - after`; positive means the reoptimized model is better.
    pub diff_mean: f64,
    pub diff_std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonResult {
    pub rows: Vec<ComparisonRow>,
    pub n_seeds: usize,
    /// Per-seed rates, `[seed][p]`.
    pub before: Vec<Vec<f64>>,
    pub after: Vec<Vec<f64>>,
}

impl ComparisonResult {
    /// Paired statistics from seed-aligned sweeps over the same grid.
    pub fn from_sweeps(before: &[SweepResult], after: &[SweepResult]) -> Result<Self> {
        if before.len() != after.len() || before.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "need equal, nonempty sweep lists (got {} and {})",
                before.len(),
                after.len()
            )));
        }
        let grid: Vec<f64> = before[0].points.iter().map(|pt| pt.p).collect();
        let same_grid = |s: &SweepResult| s.points.iter().map(|pt| pt.p).eq(grid.iter().copied());
        if !before.iter().chain(after).all(same_grid) {
            return Err(Error::InvalidParameter("sweeps use different grids".into()));
        }
        let b: Vec<Vec<f64>> = before.iter().map(SweepResult::rates).collect();
        let a: Vec<Vec<f64>> = after.iter().map(SweepResult::rates).collect();
        let rows = grid
            .iter()
            .enumerate()
            .map(|(k, &p)| {
                let bk: Vec<f64> = b.iter().map(|r| r[k]).collect();
                let ak: Vec<f64> = a.iter().map(|r| r[k]).collect();
                let dk: Vec<f64> = bk.iter().zip(&ak).map(|(x, y)| x - y).collect();
                let (before_mean, before_std) = mean_std(&bk);
                let (after_mean, after_std) = mean_std(&ak);
                let (diff_mean, diff_std) = mean_std(&dk);
                ComparisonRow {
                    p,
                    before_mean,
                    before_std,
                    after_mean,
                    after_std,
                    diff_mean,
                    diff_std,
                }
            })
            .collect();
        Ok(Self {
            rows,
            n_seeds: before.len(),
            before: b,
            after: a,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("p,before_mean,before_std,after_mean,after_std,diff_mean,diff_std\n");
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.p, r.before_mean, r.before_std, r.after_mean, r.after_std, r.diff_mean, r.diff_std
            )
            .expect("string write");
        }
        out
    }
}

/// Sweeps seed-aligned model pairs; pair `i` is evaluated on the stream
/// `derive_stream(seed, i).next_u64()` for both of its models.
pub fn compare_before_after<D: Decoder>(
    before: &[D],
    after: &[D],
    layout: &CodeLayout,
    family: NoiseModel,
    grid: &[f64],
    trials: usize,
    seed: u64,
) -> Result<ComparisonResult> {
    if before.len() != after.len() || before.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "model lists are misaligned ({} before, {} after)",
            before.len(),
            after.len()
        )));
    }
    let mut bs = Vec::with_capacity(before.len());
    let mut as_ = Vec::with_capacity(after.len());
    for (i, (b, a)) in before.iter().zip(after).enumerate() {
        let s = derive_stream(seed, i as u64).next_u64();
        bs.push(sweep(b, layout, family, grid, trials, s, "")?);
        as_.push(sweep(a, layout, family, grid, trials, s, "")?);
    }
    ComparisonResult::from_sweeps(&bs, &as_)
}

/// Everything a study needs besides its seeds.
#[derive(Debug, Clone)]
pub struct StudyConfig {
    pub l: usize,
    /// Training noise; its kind is replaced by the study where relevant.
    pub train_p: f64,
    /// Records in the base (x1) dataset.
    pub base_n: usize,
    pub decoder: DecoderConfig,
    pub reopt: ReoptConfig,
    pub field: SyndromeField,
    pub grid: Vec<f64>,
    pub trials: usize,
    /// Evaluation streams for training seed `s` come from `derive_stream(eval_seed, s)`.
    pub eval_seed: u64,
}

impl StudyConfig {
    fn eval_stream(&self, seed: u64) -> u64 {
        derive_stream(self.eval_seed, seed).next_u64()
    }

    fn layout(&self) -> Result<CodeLayout> {
        if self.field.layout().distance() != self.l {
            return Err(Error::Dimension(format!(
                "field is for L = {}, study for L = {}",
                self.field.layout().distance(),
                self.l
            )));
        }
        CodeLayout::new(self.l)
    }
}

/// A first-trained decoder and its reoptimized descendant for one seed.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub before: DecoderModel,
    pub after: DecoderModel,
}

/// Dataset from `RngStream::new(seed)`, decoder trained with `seed`, then reoptimized.
pub fn train_and_reoptimize(cfg: &StudyConfig, noise: NoiseModel, seed: u64) -> Result<SeedRun> {
    let layout = cfg.layout()?;
    let data = gen_dataset(&layout, noise, cfg.base_n, &mut RngStream::new(seed))?;
    let before = train_decoder(&data, &cfg.decoder, seed, |_| {})?;
    let after = reoptimize(&before, &cfg.field, &data, &cfg.reopt, seed, |_| {})?;
    Ok(SeedRun { seed, before, after })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingRow {
    pub label: String,
    pub multiplier: usize,
    pub reoptimized: bool,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Per-seed rates, `[seed][p]`.
    pub per_seed: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingReport {
    pub grid: Vec<f64>,
    pub seeds: Vec<u64>,
    pub rows: Vec<ScalingRow>,
}

impl ScalingReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("label,multiplier,reoptimized,p,mean,std\n");
        for row in &self.rows {
            for (k, p) in self.grid.iter().enumerate() {
                writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    row.label, row.multiplier, row.reoptimized, p, row.mean[k], row.std[k]
                )
                .expect("string write");
            }
        }
        out
    }
}

fn summarize(label: String, multiplier: usize, reoptimized: bool, per_seed: Vec<Vec<f64>>) -> ScalingRow {
    let points = per_seed.first().map_or(0, Vec::len);
    let (mean, std) = (0..points)
        .map(|k| mean_std(&per_seed.iter().map(|r| r[k]).collect::<Vec<_>>()))
        .unzip();
    ScalingRow {
        label,
        multiplier,
        reoptimized,
        mean,
        std,
        per_seed,
    }
}

/// Trains plain decoders on `k x base_n` records for every multiplier `k`
/// and one reoptimized decoder on `1 x base_n`, all evaluated on the same
/// streams per seed. The datasets of one seed are nested prefixes.
pub fn dataset_scaling_study(cfg: &StudyConfig, multipliers: &[usize], seeds: &[u64]) -> Result<ScalingReport> {
    if multipliers.is_empty() || multipliers.contains(&0) || seeds.is_empty() {
        return Err(Error::InvalidParameter("multipliers must be >= 1 and seeds nonempty".into()));
    }
    let layout = cfg.layout()?;
    let noise = NoiseModel::depolarizing(cfg.train_p)?;
    let family = noise;
    let max_mult = *multipliers.iter().max().expect("nonempty");
    // per seed: one rate vector per multiplier, then the reoptimized x1 model
    let per_seed: Vec<Vec<Vec<f64>>> = seeds
        .par_iter()
        .map(|&seed| {
            let full = gen_dataset(&layout, noise, max_mult * cfg.base_n, &mut RngStream::new(seed))?;
            let stream = cfg.eval_stream(seed);
            let mut rates = Vec::with_capacity(multipliers.len() + 1);
            let mut base_model = None;
            for &k in multipliers {
                let model = train_decoder(&full.prefix(k * cfg.base_n), &cfg.decoder, seed, |_| {})?;
                rates.push(sweep(&model, &layout, family, &cfg.grid, cfg.trials, stream, "")?.rates());
                if k == 1 {
                    base_model = Some(model);
                }
            }
            let base = full.prefix(cfg.base_n);
            let before = match base_model {
                Some(m) => m,
                None => train_decoder(&base, &cfg.decoder, seed, |_| {})?,
            };
            let after = reoptimize(&before, &cfg.field, &base, &cfg.reopt, seed, |_| {})?;
            rates.push(sweep(&after, &layout, family, &cfg.grid, cfg.trials, stream, "")?.rates());
            Ok(rates)
        })
        .collect::<Result<_>>()?;
    let mut rows: Vec<ScalingRow> = multipliers
        .iter()
        .enumerate()
        .map(|(j, &k)| summarize(format!("x{k}"), k, false, per_seed.iter().map(|r| r[j].clone()).collect()))
        .collect();
    let last = multipliers.len();
    rows.push(summarize("x1+reopt".into(), 1, true, per_seed.iter().map(|r| r[last].clone()).collect()));
    Ok(ScalingReport {
        grid: cfg.grid.clone(),
        seeds: seeds.to_vec(),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiasRow {
    pub eta: f64,
    pub comparison: ComparisonResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiasReport {
    pub seeds: Vec<u64>,
    pub rows: Vec<BiasRow>,
}

impl BiasReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("eta,p,before_mean,before_std,after_mean,after_std,diff_mean,diff_std\n");
        for row in &self.rows {
            for r in &row.comparison.rows {
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{}",
                    row.eta, r.p, r.before_mean, r.before_std, r.after_mean, r.after_std, r.diff_mean, r.diff_std
                )
                .expect("string write");
            }
        }
        out
    }
}

/// For every `eta`, trains and reoptimizes under `Biased(train_p, eta)` and
/// evaluates both models under `Biased(p, eta)` over the grid.
pub fn bias_study(cfg: &StudyConfig, etas: &[f64], seeds: &[u64]) -> Result<BiasReport> {
    if etas.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidParameter("etas and seeds must be nonempty".into()));
    }
    let layout = cfg.layout()?;
    let rows = etas
        .iter()
        .map(|&eta| {
            let noise = NoiseModel::biased(cfg.train_p, eta)?;
            let sweeps: Vec<(SweepResult, SweepResult)> = seeds
                .par_iter()
                .map(|&seed| {
                    let run = train_and_reoptimize(cfg, noise, seed)?;
                    let stream = cfg.eval_stream(seed);
                    Ok((
                        sweep(&run.before, &layout, noise, &cfg.grid, cfg.trials, stream, "")?,
                        sweep(&run.after, &layout, noise, &cfg.grid, cfg.trials, stream, "")?,
                    ))
                })
                .collect::<Result<_>>()?;
            let (before, after): (Vec<_>, Vec<_>) = sweeps.into_iter().unzip();
            Ok(BiasRow {
                eta,
                comparison: ComparisonResult::from_sweeps(&before, &after)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BiasReport {
        seeds: seeds.to_vec(),
        rows,
    })
}
