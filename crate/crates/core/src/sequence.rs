//! Random multipolar (n-RMD) and Thue–Morse drive sequences.
//!
//! A sequence is a time-ordered string of `+1`/`-1` symbols, one per
//! elementary interval `T`. The order-`n` unit cell is built recursively,
//! `cell(k+1) = cell(k) ++ anticell(k)` with `anticell = -cell`, starting from
//! `cell(0) = [+1]`. An n-RMD is a string of cells, each independently either
//! the cell or its sign flip; every aligned block has vanishing moments
//! `sum_t t^k b[t]` for `k < n`.

use std::f64::consts::PI;
use std::io::Write;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::C64;

/// Default cap on the number of symbols in a materialized sequence.
pub const DEFAULT_MAX_LEN: usize = 1 << 27;

/// Largest multipole order accepted anywhere (the cell length is `2^n`).
pub const MAX_ORDER: u32 = 40;

/// Counter-based generator used for every random draw in the crate.
///
/// Each block draw consumes exactly one 64-bit output. Realization `r` of an
/// ensemble seeded with `s` uses seed `s + r` (wrapping).
#[derive(Debug, Clone)]
pub struct DriveRng(ChaCha8Rng);

impl DriveRng {
    pub const NAME: &'static str = "chacha8";

    pub fn new(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn for_realization(seed: u64, index: u64) -> Self {
        Self::new(seed.wrapping_add(index))
    }

    /// `true` means the block is the sign-flipped cell.
    pub fn next_flip(&mut self) -> bool {
        self.0.next_u64() >> 63 == 1
    }
}

/// Iterator over the orientation of successive random cells.
#[derive(Debug, Clone)]
pub struct RmdCells {
    rng: DriveRng,
    remaining: Option<u64>,
}

impl RmdCells {
    /// Endless stream of cell orientations.
    pub fn unbounded(seed: u64) -> Self {
        Self {
            rng: DriveRng::new(seed),
            remaining: None,
        }
    }

    pub fn take_blocks(seed: u64, num_blocks: u64) -> Self {
        Self {
            rng: DriveRng::new(seed),
            remaining: Some(num_blocks),
        }
    }
}

impl Iterator for RmdCells {
    type Item = bool;

    fn next(&mut self) -> Option<bool> {
        match &mut self.remaining {
            Some(0) => None,
            Some(left) => {
                *left -= 1;
                Some(self.rng.next_flip())
            }
            None => Some(self.rng.next_flip()),
        }
    }
}

/// Time-ordered drive symbols with their multipolar provenance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DriveSequence {
    symbols: Vec<i8>,
    order: u32,
    seed: u64,
    num_blocks: usize,
}

/// Header line of the text serialization.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct SequenceHeader {
    pub n: u32,
    pub seed: u64,
    pub num_blocks: usize,
}

impl DriveSequence {
    /// Builds a sequence from raw symbols, checking the block structure.
    pub fn from_symbols(symbols: Vec<i8>, order: u32, seed: u64) -> Result<Self> {
        check_order(order)?;
        let cell_len = 1usize << order;
        if symbols.is_empty() || !symbols.len().is_multiple_of(cell_len) {
            return invalid(format!(
                "sequence length {} is not a positive multiple of 2^{order}",
                symbols.len()
            ));
        }
        if symbols.iter().any(|&s| s != 1 && s != -1) {
            return invalid("symbols must be +1 or -1");
        }
        let cell = unit_cell(order);
        for block in symbols.chunks(cell_len) {
            let same = block.iter().zip(&cell).all(|(a, b)| a == b);
            let flipped = block.iter().zip(&cell).all(|(a, b)| *a == -b);
            if !same && !flipped {
                return invalid("block is neither the unit cell nor its sign flip");
            }
        }
        let num_blocks = symbols.len() / cell_len;
        Ok(Self {
            symbols,
            order,
            seed,
            num_blocks,
        })
    }

    /// An empty sequence (no elementary steps).
    pub fn empty(order: u32) -> Self {
        Self {
            symbols: Vec::new(),
            order,
            seed: 0,
            num_blocks: 0,
        }
    }

    pub fn symbols(&self) -> &[i8] {
        &self.symbols
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn num_blocks(&self) -> usize {
        self.num_blocks
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn cell_len(&self) -> usize {
        1 << self.order
    }

    pub fn block(&self, index: usize) -> Result<&[i8]> {
        if index >= self.num_blocks {
            return Err(Error::OutOfRange {
                index,
                limit: self.num_blocks,
            });
        }
        let len = self.cell_len();
        Ok(&self.symbols[index * len..(index + 1) * len])
    }

    /// Writes the JSON header line followed by one line of `+`/`-`.
    pub fn write_text<W: Write>(&self, mut out: W) -> Result<()> {
        let header = SequenceHeader {
            n: self.order,
            seed: self.seed,
            num_blocks: self.num_blocks,
        };
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        let line: String = self
            .symbols
            .iter()
            .map(|&s| if s > 0 { '+' } else { '-' })
            .collect();
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write_text(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serialization is ASCII")
    }

    /// Parses the text format. Both the ASCII hyphen and the Unicode minus
    /// sign are accepted for `-1`.
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header: SequenceHeader = serde_json::from_str(
            lines
                .next()
                .ok_or_else(|| Error::InvalidArgument("missing header line".into()))?,
        )?;
        let body = lines.next().unwrap_or("");
        let symbols = body
            .chars()
            .map(|c| match c {
                '+' => Ok(1i8),
                '-' | '\u{2212}' => Ok(-1i8),
                other => invalid(format!("unexpected symbol {other:?}")),
            })
            .collect::<Result<Vec<_>>>()?;
        let seq = Self::from_symbols(symbols, header.n, header.seed)?;
        if seq.num_blocks != header.num_blocks {
            return invalid(format!(
                "header declares {} blocks, body has {}",
                header.num_blocks, seq.num_blocks
            ));
        }
        Ok(seq)
    }
}

fn check_order(n: u32) -> Result<()> {
    if n > MAX_ORDER {
        return Err(Error::ResourceCap(format!(
            "multipole order {n} exceeds {MAX_ORDER}"
        )));
    }
    Ok(())
}

/// The order-`n` unit cell: the first `2^n` Thue–Morse symbols.
pub fn unit_cell(n: u32) -> Vec<i8> {
    let mut cell = vec![1i8];
    for _ in 0..n {
        let anti: Vec<i8> = cell.iter().map(|&s| -s).collect();
        cell.extend(anti);
    }
    cell
}

/// Draws `num_blocks` independent random order-`n` cells.
pub fn generate_rmd(n: u32, num_blocks: usize, seed: u64) -> Result<DriveSequence> {
    generate_rmd_capped(n, num_blocks, seed, DEFAULT_MAX_LEN)
}

pub fn generate_rmd_capped(
    n: u32,
    num_blocks: usize,
    seed: u64,
    max_len: usize,
) -> Result<DriveSequence> {
    check_order(n)?;
    if num_blocks == 0 {
        return invalid("num_blocks must be at least 1");
    }
    let cell_len = 1usize << n;
    let len = num_blocks
        .checked_mul(cell_len)
        .filter(|&len| len <= max_len)
        .ok_or_else(|| {
            Error::ResourceCap(format!(
                "{num_blocks} blocks of length 2^{n} exceed the cap of {max_len} symbols"
            ))
        })?;
    let cell = unit_cell(n);
    let mut symbols = Vec::with_capacity(len);
    for flip in RmdCells::take_blocks(seed, num_blocks as u64) {
        if flip {
            symbols.extend(cell.iter().map(|&s| -s));
        } else {
            symbols.extend_from_slice(&cell);
        }
    }
    Ok(DriveSequence {
        symbols,
        order: n,
        seed,
        num_blocks,
    })
}

/// The deterministic order-`n` Thue–Morse cell as a one-block sequence.
pub fn thue_morse_cell(n: u32) -> Result<DriveSequence> {
    thue_morse_cell_capped(n, DEFAULT_MAX_LEN)
}

pub fn thue_morse_cell_capped(n: u32, max_len: usize) -> Result<DriveSequence> {
    check_order(n)?;
    if (1usize << n) > max_len {
        return Err(Error::ResourceCap(format!(
            "Thue-Morse cell 2^{n} exceeds the cap of {max_len} symbols"
        )));
    }
    Ok(DriveSequence {
        symbols: unit_cell(n),
        order: n,
        seed: 0,
        num_blocks: 1,
    })
}

/// Exact `sum_t t^k b[t]` over an aligned block.
pub fn block_moment_exact(seq: &DriveSequence, block_index: usize, k: u32) -> Result<i128> {
    let block = seq.block(block_index)?;
    let mut sum: i128 = 0;
    for (t, &b) in block.iter().enumerate() {
        let power = (t as i128)
            .checked_pow(k)
            .ok_or_else(|| Error::Range(format!("t^{k} overflows for t = {t}")))?;
        sum += power * b as i128;
    }
    Ok(sum)
}

/// `sum_t t^k b[t]` over the aligned block `block_index`, `t = 0..2^n`.
pub fn block_moment(seq: &DriveSequence, block_index: usize, k: u32) -> Result<f64> {
    Ok(block_moment_exact(seq, block_index, k)? as f64)
}

/// Time average of `x(t) x(t + lag)` over one sequence.
pub fn autocorrelation(symbols: &[i8], lag: usize) -> Result<f64> {
    if lag >= symbols.len() {
        return Err(Error::OutOfRange {
            index: lag,
            limit: symbols.len(),
        });
    }
    let count = symbols.len() - lag;
    let sum: i64 = symbols[..count]
        .iter()
        .zip(&symbols[lag..])
        .map(|(&a, &b)| (a * b) as i64)
        .sum();
    Ok(sum as f64 / count as f64)
}

/// Ensemble and time averaged `R(lag) = <x(t) x(t + lag)>`.
///
/// Realization `r` is drawn with seed `seed + r`; negative lags are folded by
/// symmetry.
pub fn autocorrelation_empirical(
    n: u32,
    num_blocks: usize,
    lag: i64,
    ensemble_size: usize,
    seed: u64,
) -> Result<f64> {
    if ensemble_size == 0 {
        return invalid("ensemble_size must be at least 1");
    }
    let len = num_blocks.saturating_mul(1 << n.min(MAX_ORDER));
    let lag = lag.unsigned_abs() as usize;
    if lag >= len {
        return Err(Error::OutOfRange {
            index: lag,
            limit: len,
        });
    }
    let values = (0..ensemble_size as u64)
        .into_par_iter()
        .map(|r| {
            let seq = generate_rmd(n, num_blocks, seed.wrapping_add(r))?;
            autocorrelation(seq.symbols(), lag)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(values.iter().sum::<f64>() / ensemble_size as f64)
}

/// Stationary autocorrelation of an n-RMD, normalized so that `R(0) = 1`,
/// from the two-multipole recursion.
pub fn autocorrelation_recursive(n: u32, lag: i64) -> f64 {
    if n == 0 {
        return if lag == 0 { 1.0 } else { 0.0 };
    }
    let shift = 1i64 << (n - 1);
    (2.0 * autocorrelation_recursive(n - 1, lag)
        - autocorrelation_recursive(n - 1, lag - shift)
        - autocorrelation_recursive(n - 1, lag + shift))
        / 2.0
}

/// Spectral density `2^n prod_{j=1..n} [1 - cos(2^(j-1) w)]`.
///
/// This is the transform of the per-cell (unnormalized) autocorrelation; the
/// large-length limit of the ensemble periodogram is this divided by `2^n`,
/// see [`spectral_density_per_symbol`].
pub fn spectral_density_analytic(n: u32, omega: f64) -> f64 {
    let mut product = 1.0;
    for j in 1..=n {
        product *= 1.0 - ((1u64 << (j - 1)) as f64 * omega).cos();
    }
    2f64.powi(n as i32) * product
}

/// Same density evaluated through `R(n) = R(n-1) [2 - 2 cos(2^(n-1) w)]`.
pub fn spectral_density_recursive(n: u32, omega: f64) -> f64 {
    (1..=n).fold(1.0, |acc, j| {
        acc * (2.0 - 2.0 * ((1u64 << (j - 1)) as f64 * omega).cos())
    })
}

/// Ensemble limit of `|x(w)|^2` with `1/sqrt(len)` normalization:
/// `prod_{j=1..n} [1 - cos(2^(j-1) w)]`.
pub fn spectral_density_per_symbol(n: u32, omega: f64) -> f64 {
    spectral_density_analytic(n, omega) / 2f64.powi(n as i32)
}

/// Power spectrum at the positive discrete Fourier frequencies.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumEstimate {
    /// `w_k = 2 pi k / len` for `k = 1..=len/2`, strictly increasing in `(0, pi]`.
    pub frequencies: Vec<f64>,
    pub power: Vec<f64>,
    /// Power in the zero-frequency bin, kept out of `frequencies`.
    pub dc_power: f64,
    pub ensemble_size: usize,
}

impl SpectrumEstimate {
    pub fn len(&self) -> usize {
        self.frequencies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequencies.is_empty()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["omega", "power"])?;
        for (omega, power) in self.frequencies.iter().zip(&self.power) {
            w.write_record([omega.to_string(), power.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let mut frequencies = Vec::new();
        let mut power = Vec::new();
        for row in r.deserialize::<(f64, f64)>() {
            let (omega, p) = row?;
            frequencies.push(omega);
            power.push(p);
        }
        Ok(Self {
            frequencies,
            power,
            dc_power: 0.0,
            ensemble_size: 1,
        })
    }
}

fn periodogram(planner: &mut FftPlanner<f64>, symbols: &[i8]) -> (f64, Vec<f64>) {
    let len = symbols.len();
    let mut buf: Vec<C64> = symbols.iter().map(|&s| C64::new(s as f64, 0.0)).collect();
    planner.plan_fft_forward(len).process(&mut buf);
    let scale = 1.0 / len as f64;
    let dc = buf[0].norm_sqr() * scale;
    let power = (1..=len / 2).map(|k| buf[k].norm_sqr() * scale).collect();
    (dc, power)
}

fn fourier_frequencies(len: usize) -> Vec<f64> {
    (1..=len / 2)
        .map(|k| 2.0 * PI * k as f64 / len as f64)
        .collect()
}

/// `|x(w_k)|^2` with `x(w) = len^{-1/2} sum_t x(t) e^{-i w t}`.
pub fn power_spectrum_fft(seq: &DriveSequence) -> Result<SpectrumEstimate> {
    power_spectrum_of(seq.symbols())
}

pub fn power_spectrum_of(symbols: &[i8]) -> Result<SpectrumEstimate> {
    if symbols.is_empty() {
        return invalid("cannot transform an empty sequence");
    }
    let mut planner = FftPlanner::new();
    let (dc_power, power) = periodogram(&mut planner, symbols);
    Ok(SpectrumEstimate {
        frequencies: fourier_frequencies(symbols.len()),
        power,
        dc_power,
        ensemble_size: 1,
    })
}

/// Ensemble mean of the periodogram together with the standard error of the
/// mean in every bin.
#[derive(Debug, Clone)]
pub struct EnsembleSpectrum {
    pub mean: SpectrumEstimate,
    pub std_error: Vec<f64>,
}

const ENSEMBLE_CHUNK: usize = 64;

/// Averages periodograms of `ensemble_size` independent n-RMD realizations.
///
/// Realizations are grouped in fixed-size chunks summed in index order, so
/// the result does not depend on the worker count.
pub fn ensemble_power_spectrum(
    n: u32,
    num_blocks: usize,
    ensemble_size: usize,
    seed: u64,
) -> Result<EnsembleSpectrum> {
    if ensemble_size == 0 {
        return invalid("ensemble_size must be at least 1");
    }
    let probe = generate_rmd(n, num_blocks, seed)?;
    let len = probe.len();
    let bins = len / 2;
    let chunks: Vec<(usize, usize)> = (0..ensemble_size)
        .step_by(ENSEMBLE_CHUNK)
        .map(|start| (start, (start + ENSEMBLE_CHUNK).min(ensemble_size)))
        .collect();
    type Sums = (f64, Vec<f64>, Vec<f64>);
    let partial = chunks
        .par_iter()
        .map(|&(start, end)| -> Result<Sums> {
            let mut planner = FftPlanner::new();
            let mut dc = 0.0;
            let mut sum = vec![0.0; bins];
            let mut sum_sq = vec![0.0; bins];
            for r in start..end {
                let seq = generate_rmd(n, num_blocks, seed.wrapping_add(r as u64))?;
                let (d, p) = periodogram(&mut planner, seq.symbols());
                dc += d;
                for (k, v) in p.into_iter().enumerate() {
                    sum[k] += v;
                    sum_sq[k] += v * v;
                }
            }
            Ok((dc, sum, sum_sq))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut dc = 0.0;
    let mut sum = vec![0.0; bins];
    let mut sum_sq = vec![0.0; bins];
    for (d, s, sq) in partial {
        dc += d;
        for k in 0..bins {
            sum[k] += s[k];
            sum_sq[k] += sq[k];
        }
    }
    let m = ensemble_size as f64;
    let power: Vec<f64> = sum.iter().map(|s| s / m).collect();
    let std_error = if ensemble_size > 1 {
        sum_sq
            .iter()
            .zip(&power)
            .map(|(sq, mean)| {
                let var = ((sq / m - mean * mean) * m / (m - 1.0)).max(0.0);
                (var / m).sqrt()
            })
            .collect()
    } else {
        vec![f64::INFINITY; bins]
    };
    Ok(EnsembleSpectrum {
        mean: SpectrumEstimate {
            frequencies: fourier_frequencies(len),
            power,
            dc_power: dc / m,
            ensemble_size,
        },
        std_error,
    })
}

/// Minimum number of logarithmic bins used for the envelope.
pub const ENVELOPE_BINS: usize = 12;

/// Slope of `log max|x(w)|` against `log w` over `[omega_min, omega_max]`.
///
/// The range is cut into [`ENVELOPE_BINS`] logarithmically spaced bins; the
/// envelope point of a bin is its largest amplitude `sqrt(power)` at the
/// frequency where it occurs. Empty bins are skipped.
pub fn low_frequency_exponent(spec: &SpectrumEstimate, omega_min: f64, omega_max: f64) -> Result<f64> {
    if !(omega_min > 0.0 && omega_min < omega_max && omega_max <= PI / 4.0 + 1e-12) {
        return invalid(format!(
            "need 0 < omega_min < omega_max <= pi/4, got [{omega_min}, {omega_max}]"
        ));
    }
    let selected: Vec<(f64, f64)> = spec
        .frequencies
        .iter()
        .zip(&spec.power)
        .filter(|(w, _)| **w >= omega_min && **w <= omega_max)
        .map(|(&w, &p)| (w, p.max(0.0).sqrt()))
        .collect();
    if selected.len() < 10 {
        return invalid(format!(
            "only {} frequency bins in [{omega_min}, {omega_max}], need at least 10",
            selected.len()
        ));
    }
    let log_lo = omega_min.ln();
    let width = (omega_max.ln() - log_lo) / ENVELOPE_BINS as f64;
    let mut best: Vec<Option<(f64, f64)>> = vec![None; ENVELOPE_BINS];
    for (w, a) in selected {
        let idx = (((w.ln() - log_lo) / width) as usize).min(ENVELOPE_BINS - 1);
        match best[idx] {
            Some((_, top)) if top >= a => {}
            _ => best[idx] = Some((w, a)),
        }
    }
    let points: Vec<(f64, f64)> = best
        .into_iter()
        .flatten()
        .filter(|(_, a)| *a > 0.0)
        .map(|(w, a)| (w.ln(), a.ln()))
        .collect();
    if points.len() < 3 {
        return invalid("fewer than 3 non-empty envelope bins");
    }
    Ok(least_squares_slope(&points))
}

fn least_squares_slope(points: &[(f64, f64)]) -> f64 {
    let m = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / m;
    let my = points.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}
