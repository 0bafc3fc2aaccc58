//! Exact propagators `U± = exp(-i T H±)`, the unit-cell ladder
//! `U(n+1) = Ũ(n) U(n)`, `Ũ(n+1) = U(n) Ũ(n)`, and stroboscopic evolution
//! under random multipolar, Thue–Morse and time-crystal protocols.
//!
//! Level 0 of the ladder is `(U+, U-)`, so level 1 is `(U- U+, U+ U-)`: the
//! cell `[+1, -1]` and its flip. Evolution runs in any [`Basis`]; observables
//! are always evaluated on the full-basis state.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::linalg::general_mat_vec_mul;
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};
use crate::linalg::{self, HermitianSpectrum};
use crate::observables::{self, Axis};
use crate::sequence::{unit_cell, DriveRng, DriveSequence, RmdCells};
use crate::spinchain::{
    apply_global_flip, build_hamiltonian_in, Basis, DriveSign, HamiltonianMatrix, SpinChainParams,
    StateVector,
};
use crate::C64;

/// Default memory budget for stored unit-cell matrices.
pub const DEFAULT_CELL_MEMORY: usize = 2 << 30;

/// `U+`, `U-` and the static average `H_F0`, all in the same basis.
#[derive(Debug, Clone)]
pub struct PropagatorPair {
    pub plus: Array2<C64>,
    pub minus: Array2<C64>,
    pub h_f0: HamiltonianMatrix,
    pub params: SpinChainParams,
    pub basis: Basis,
}

impl PropagatorPair {
    pub fn dim(&self) -> usize {
        self.plus.nrows()
    }

    pub fn get(&self, sign: DriveSign) -> Result<&Array2<C64>> {
        match sign {
            DriveSign::Plus => Ok(&self.plus),
            DriveSign::Minus => Ok(&self.minus),
            DriveSign::Static => invalid("no elementary propagator for the static Hamiltonian"),
        }
    }

    pub fn for_symbol(&self, symbol: i8) -> Result<&Array2<C64>> {
        self.get(DriveSign::from_symbol(symbol)?)
    }

    /// `exp(-i t H_F0)`.
    pub fn effective_propagator(&self, t: f64) -> Result<Array2<C64>> {
        Ok(HermitianSpectrum::new(&self.h_f0.matrix)?.exp_minus_i(t))
    }
}

pub fn make_propagators(p: &SpinChainParams) -> Result<PropagatorPair> {
    make_propagators_in(p, &Basis::Full)
}

/// Exponentiates `H±` in `basis` by spectral decomposition.
pub fn make_propagators_in(p: &SpinChainParams, basis: &Basis) -> Result<PropagatorPair> {
    let h_plus = build_hamiltonian_in(p, DriveSign::Plus, basis)?;
    let h_minus = build_hamiltonian_in(p, DriveSign::Minus, basis)?;
    let h_f0 = build_hamiltonian_in(p, DriveSign::Static, basis)?;
    Ok(PropagatorPair {
        plus: HermitianSpectrum::new(&h_plus.matrix)?.exp_minus_i(p.period),
        minus: HermitianSpectrum::new(&h_minus.matrix)?.exp_minus_i(p.period),
        h_f0,
        params: *p,
        basis: basis.clone(),
    })
}

/// Cell propagator `U(n)` and its flip `Ũ(n)`, each of duration `2^n T`.
#[derive(Debug, Clone)]
pub struct UnitCellPair {
    pub level: u32,
    pub u: Array2<C64>,
    pub u_tilde: Array2<C64>,
}

impl UnitCellPair {
    /// Level 0: `(U+, U-)`.
    pub fn level_zero(pair: &PropagatorPair) -> Self {
        Self {
            level: 0,
            u: pair.plus.clone(),
            u_tilde: pair.minus.clone(),
        }
    }

    pub fn next(&self) -> Self {
        Self {
            level: self.level + 1,
            u: self.u_tilde.dot(&self.u),
            u_tilde: self.u.dot(&self.u_tilde),
        }
    }

    /// The cell for an orientation; `flipped` selects `Ũ(n)`.
    pub fn cell(&self, flipped: bool) -> &Array2<C64> {
        if flipped {
            &self.u_tilde
        } else {
            &self.u
        }
    }

    pub fn bytes(&self) -> usize {
        2 * self.u.len() * std::mem::size_of::<C64>()
    }
}

/// Levels `1..=n_max` of the ladder.
pub fn build_unit_cells(pair: &PropagatorPair, n_max: u32) -> Result<Vec<UnitCellPair>> {
    build_unit_cells_capped(pair, n_max, DEFAULT_CELL_MEMORY)
}

pub fn build_unit_cells_capped(
    pair: &PropagatorPair,
    n_max: u32,
    max_bytes: usize,
) -> Result<Vec<UnitCellPair>> {
    if n_max == 0 {
        return invalid("n_max must be at least 1");
    }
    let per_level = 2 * pair.dim() * pair.dim() * std::mem::size_of::<C64>();
    let total = per_level.saturating_mul(n_max as usize);
    if total > max_bytes {
        return Err(Error::ResourceCap(format!(
            "{n_max} cell levels need {total} bytes, cap is {max_bytes}"
        )));
    }
    let mut levels = Vec::with_capacity(n_max as usize);
    let mut current = UnitCellPair::level_zero(pair).next();
    for _ in 1..n_max {
        let next = current.next();
        levels.push(current);
        current = next;
    }
    levels.push(current);
    Ok(levels)
}

/// Builds level `n` directly, keeping only one level in memory.
pub fn unit_cell_level(pair: &PropagatorPair, n: u32) -> UnitCellPair {
    let mut cells = UnitCellPair::level_zero(pair);
    while cells.level < n {
        cells = cells.next();
    }
    cells
}

/// One recorded sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub time: f64,
    pub energy: f64,
    pub entropy: f64,
    pub mz_center: f64,
}

/// Provenance written next to every trace.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub protocol: String,
    pub order: Option<u32>,
    pub seed: Option<u64>,
    pub rng: Option<String>,
    pub params: Option<SpinChainParams>,
    pub basis: String,
    pub sampling: String,
    pub flip_interval: Option<f64>,
    pub epsilon_flip: Option<f64>,
    pub stopped_early: bool,
    pub config_hash: Option<String>,
}

/// Time series of energy `<H_F0>`, half-chain entropy and central `<Z>`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ObservableTrace {
    pub meta: TraceMeta,
    pub rows: Vec<TraceRow>,
}

pub const TRACE_HEADER: [&str; 4] = ["time", "energy", "entropy", "mz_center"];

impl ObservableTrace {
    pub fn new(meta: TraceMeta) -> Self {
        Self {
            meta,
            rows: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.time).collect()
    }

    pub fn energies(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.energy).collect()
    }

    pub fn entropies(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.entropy).collect()
    }

    pub fn magnetizations(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.mz_center).collect()
    }

    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(TRACE_HEADER)?;
        for r in &self.rows {
            w.write_record([
                r.time.to_string(),
                r.energy.to_string(),
                r.entropy.to_string(),
                r.mz_center.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads rows back; metadata is left at its default.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        if r.headers()?.iter().ne(TRACE_HEADER) {
            return invalid(format!("trace header must be {}", TRACE_HEADER.join(",")));
        }
        let mut trace = Self::default();
        for record in r.deserialize() {
            trace.rows.push(record?);
        }
        Ok(trace)
    }

    /// Writes `path` (CSV) and the metadata sidecar `path` with a `.json`
    /// extension; returns the sidecar path.
    pub fn save(&self, path: &Path) -> Result<PathBuf> {
        self.write_csv(BufWriter::new(File::create(path)?))?;
        let sidecar = path.with_extension("json");
        let mut out = BufWriter::new(File::create(&sidecar)?);
        serde_json::to_writer_pretty(&mut out, &self.meta)?;
        out.write_all(b"\n")?;
        out.flush()?;
        Ok(sidecar)
    }
}

/// Git-style content hash: SHA-256 over `"blob <len>\0" ++ bytes`.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

/// When to record along an RMD run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Every `k`-th cell boundary.
    EveryCells(u64),
    /// After every elementary step.
    EveryStep,
    /// Cell boundaries spaced roughly uniformly in log time.
    Geometric { per_decade: u32 },
}

impl Sampling {
    pub fn describe(&self) -> String {
        match self {
            Sampling::EveryCells(k) => format!("cell boundaries, every {k} cells"),
            Sampling::EveryStep => "every elementary step".to_string(),
            Sampling::Geometric { per_decade } => {
                format!("cell boundaries, {per_decade} per decade")
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Sampling::EveryCells(0) => invalid("record interval must be at least one cell"),
            Sampling::Geometric { per_decade: 0 } => invalid("per_decade must be positive"),
            _ => Ok(()),
        }
    }
}

/// Cell counts at which a geometric schedule records.
#[derive(Debug, Clone)]
struct Schedule {
    sampling: Sampling,
    step: u32,
    next: u64,
}

impl Schedule {
    fn new(sampling: Sampling) -> Self {
        let mut s = Self {
            sampling,
            step: 0,
            next: 0,
        };
        s.advance(0);
        s
    }

    fn advance(&mut self, done: u64) {
        self.next = match self.sampling {
            Sampling::EveryCells(k) => done + k,
            Sampling::EveryStep => done + 1,
            Sampling::Geometric { per_decade } => loop {
                let target = 10f64.powf(self.step as f64 / per_decade as f64).round() as u64;
                self.step += 1;
                if target > done {
                    break target;
                }
            },
        };
    }

    fn due(&mut self, cells_done: u64) -> bool {
        if cells_done >= self.next {
            self.advance(cells_done);
            true
        } else {
            false
        }
    }
}

/// Early termination once the diagnostics have crossed given levels.
///
/// Each configured condition must have been met at some recorded sample;
/// unconfigured ones are ignored. With nothing configured the run never
/// stops early.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StopRule {
    /// Stop after `<H_F0>_t / <H_F0>_0` has fallen below this.
    pub energy_ratio_below: Option<f64>,
    /// Stop after `S / (L/2)` has risen above this.
    pub entropy_ratio_above: Option<f64>,
}

impl StopRule {
    pub fn is_active(&self) -> bool {
        self.energy_ratio_below.is_some() || self.entropy_ratio_above.is_some()
    }
}

#[derive(Debug, Default)]
struct StopState {
    energy_hit: bool,
    entropy_hit: bool,
}

impl StopState {
    fn update(&mut self, rule: &StopRule, row: &TraceRow, e0: f64, sites: usize) -> bool {
        if !rule.is_active() {
            return false;
        }
        if let Some(level) = rule.energy_ratio_below {
            self.energy_hit |= e0 != 0.0 && row.energy / e0 < level;
        }
        if let Some(level) = rule.entropy_ratio_above {
            self.entropy_hit |= row.entropy / (sites as f64 / 2.0) > level;
        }
        (rule.energy_ratio_below.is_none() || self.energy_hit)
            && (rule.entropy_ratio_above.is_none() || self.entropy_hit)
    }
}

/// State coordinates in the pair's basis plus a scratch buffer.
struct Evolver<'a> {
    pair: &'a PropagatorPair,
    coords: Array1<C64>,
    scratch: Array1<C64>,
    sites: usize,
}

impl<'a> Evolver<'a> {
    fn new(psi0: &StateVector, pair: &'a PropagatorPair) -> Result<Self> {
        if psi0.sites != pair.params.sites {
            return Err(Error::DimensionMismatch {
                expected: pair.params.sites,
                actual: psi0.sites,
            });
        }
        let coords = pair.basis.coordinates(psi0)?;
        if coords.len() != pair.dim() {
            return Err(Error::DimensionMismatch {
                expected: pair.dim(),
                actual: coords.len(),
            });
        }
        let scratch = Array1::zeros(coords.len());
        Ok(Self {
            pair,
            coords,
            scratch,
            sites: psi0.sites,
        })
    }

    fn apply(&mut self, m: &Array2<C64>) {
        general_mat_vec_mul(
            C64::new(1.0, 0.0),
            m,
            &self.coords,
            C64::new(0.0, 0.0),
            &mut self.scratch,
        );
        std::mem::swap(&mut self.coords, &mut self.scratch);
    }

    fn flip(&mut self, epsilon: f64) -> Result<()> {
        match &self.pair.basis {
            Basis::Full => apply_global_flip(&mut self.coords, self.sites, epsilon),
            basis @ Basis::ZeroMomentum(sector) => {
                let mut full = basis.embed(self.sites, &self.coords).amps;
                apply_global_flip(&mut full, self.sites, epsilon)?;
                self.coords = sector.project(&full);
                Ok(())
            }
        }
    }

    fn state(&self) -> StateVector {
        self.pair.basis.embed(self.sites, &self.coords)
    }

    fn observe(&self, time: f64) -> Result<TraceRow> {
        let energy = observables::expectation(&self.coords, &self.pair.h_f0.matrix)?;
        let psi = self.state();
        Ok(TraceRow {
            time,
            energy,
            entropy: observables::half_chain_entropy(&psi)?.value,
            mz_center: observables::local_magnetization(
                &psi,
                observables::central_site(self.sites),
                Axis::Z,
            )?,
        })
    }
}

fn base_meta(protocol: &str, pair: &PropagatorPair, sampling: String) -> TraceMeta {
    TraceMeta {
        protocol: protocol.to_string(),
        params: Some(pair.params),
        basis: pair.basis.name().to_string(),
        sampling,
        ..TraceMeta::default()
    }
}

/// Evolves under a materialized sequence, recording every `record_every`
/// cells (the initial state is always recorded).
pub fn evolve_rmd(
    psi0: &StateVector,
    seq: &DriveSequence,
    pair: &PropagatorPair,
    record_every: u64,
) -> Result<ObservableTrace> {
    evolve_rmd_sampled(psi0, seq, pair, Sampling::EveryCells(record_every))
}

pub fn evolve_rmd_sampled(
    psi0: &StateVector,
    seq: &DriveSequence,
    pair: &PropagatorPair,
    sampling: Sampling,
) -> Result<ObservableTrace> {
    let flips = (0..seq.num_blocks()).map(|i| seq.block(i).map(|b| b[0] == -1));
    let mut meta = base_meta("rmd", pair, sampling.describe());
    meta.order = Some(seq.order());
    meta.seed = Some(seq.seed());
    meta.rng = Some(DriveRng::NAME.to_string());
    run_cells(psi0, pair, seq.order(), flips, sampling, &StopRule::default(), meta)
}

/// Settings for an RMD run whose cells are drawn on the fly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmdRun {
    pub order: u32,
    pub seed: u64,
    /// Runs until at least this physical time (rounded up to whole cells).
    pub t_max: f64,
    pub sampling: Sampling,
    #[serde(default)]
    pub stop: StopRule,
}

/// Streams random cells without materializing the sequence.
pub fn evolve_rmd_stream(
    psi0: &StateVector,
    pair: &PropagatorPair,
    run: &RmdRun,
) -> Result<ObservableTrace> {
    if !(run.t_max.is_finite() && run.t_max >= 0.0) {
        return invalid("t_max must be finite and non-negative");
    }
    let period = pair.params.period;
    let cell_time = period * (1u64 << run.order) as f64;
    let num_cells = if cell_time > 0.0 {
        (run.t_max / cell_time).ceil() as u64
    } else {
        0
    };
    let mut meta = base_meta("rmd", pair, run.sampling.describe());
    meta.order = Some(run.order);
    meta.seed = Some(run.seed);
    meta.rng = Some(DriveRng::NAME.to_string());
    let flips = RmdCells::take_blocks(run.seed, num_cells).map(Ok);
    run_cells(psi0, pair, run.order, flips, run.sampling, &run.stop, meta)
}

fn run_cells(
    psi0: &StateVector,
    pair: &PropagatorPair,
    order: u32,
    flips: impl Iterator<Item = Result<bool>>,
    sampling: Sampling,
    stop: &StopRule,
    meta: TraceMeta,
) -> Result<ObservableTrace> {
    sampling.validate()?;
    let mut ev = Evolver::new(psi0, pair)?;
    let mut trace = ObservableTrace::new(meta);
    let first = ev.observe(0.0)?;
    let e0 = first.energy;
    trace.rows.push(first);
    let cell = unit_cell(order);
    let period = pair.params.period;
    // Without per-step rows a whole cell is one product with U(n) or Ũ(n).
    let ladder = (sampling != Sampling::EveryStep && order > 0)
        .then(|| unit_cell_level(pair, order));
    let mut schedule = Schedule::new(sampling);
    let mut stop_state = StopState::default();
    let mut steps = 0u64;
    for (done, flip) in (1u64..).zip(flips) {
        let flip = flip?;
        if let Some(cells) = &ladder {
            ev.apply(cells.cell(flip));
            steps += cell.len() as u64;
        } else {
            let sign = if flip { -1 } else { 1 };
            for &s in &cell {
                ev.apply(pair.for_symbol(s * sign)?);
                steps += 1;
                if sampling == Sampling::EveryStep {
                    trace.rows.push(ev.observe(steps as f64 * period)?);
                }
            }
        }
        if sampling != Sampling::EveryStep && schedule.due(done) {
            trace.rows.push(ev.observe(steps as f64 * period)?);
        }
        let last = trace.rows.last().expect("initial row recorded");
        if stop_state.update(stop, last, e0, ev.sites) {
            trace.meta.stopped_early = true;
            break;
        }
    }
    Ok(trace)
}

/// Records at `2^n T` for `n = 1..=n_record_max` using precomputed cells
/// (`cells[k]` is level `k + 1`), with one matrix-vector product per row.
pub fn evolve_tms(
    psi0: &StateVector,
    cells: &[UnitCellPair],
    pair: &PropagatorPair,
    n_record_max: u32,
) -> Result<ObservableTrace> {
    if cells.len() < n_record_max as usize {
        return invalid(format!(
            "{} cell levels given, {n_record_max} needed",
            cells.len()
        ));
    }
    for (k, c) in cells.iter().enumerate() {
        if c.level != k as u32 + 1 {
            return invalid("cells must be levels 1, 2, ... in order");
        }
    }
    let mut ev = Evolver::new(psi0, pair)?;
    let mut trace = ObservableTrace::new(base_meta("tms", pair, "doubling times".to_string()));
    trace.rows.push(ev.observe(0.0)?);
    let period = pair.params.period;
    for n in 1..=n_record_max {
        // psi(2T) = U(1) psi(0); psi(2^(n+1) T) = Ũ(n) psi(2^n T).
        let m = if n == 1 {
            &cells[0].u
        } else {
            &cells[n as usize - 2].u_tilde
        };
        ev.apply(m);
        trace.rows.push(ev.observe((1u64 << n) as f64 * period)?);
    }
    Ok(trace)
}

/// Settings for a Thue–Morse run that builds the ladder on the fly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TmsRun {
    /// Final time is `2^n_max T`.
    pub n_max: u32,
    /// `2^resolution` samples per doubling of time.
    #[serde(default)]
    pub resolution: u32,
    #[serde(default)]
    pub stop: StopRule,
}

/// Thue–Morse evolution to `2^n_max T` keeping a single ladder level in
/// memory.
///
/// The segment `(2^(k-1) T, 2^k T]` is covered by aligned Thue–Morse blocks
/// of length `2^(k-1-resolution)`; the block starting at offset `o` is the
/// plain cell when the binary digit sum of `o` is even and the flipped cell
/// otherwise. The first segment is `(0, 2T]`.
pub fn evolve_tms_stream(
    psi0: &StateVector,
    pair: &PropagatorPair,
    run: &TmsRun,
) -> Result<ObservableTrace> {
    if run.n_max == 0 || run.n_max > 62 {
        return invalid(format!("n_max must be in 1..=62, got {}", run.n_max));
    }
    let mut ev = Evolver::new(psi0, pair)?;
    let mut meta = base_meta(
        "tms",
        pair,
        format!("doubling times, {} samples per octave", 1u64 << run.resolution),
    );
    meta.order = Some(run.n_max);
    let mut trace = ObservableTrace::new(meta);
    let first = ev.observe(0.0)?;
    let e0 = first.energy;
    trace.rows.push(first);
    let period = pair.params.period;
    let mut stop_state = StopState::default();
    let mut ladder: VecDeque<UnitCellPair> = VecDeque::from([UnitCellPair::level_zero(pair)]);
    'segments: for k in 1..=run.n_max {
        let (start, log_len) = if k == 1 { (0u64, 1u32) } else { (1u64 << (k - 1), k - 1) };
        let level = log_len.saturating_sub(run.resolution);
        while ladder.back().expect("ladder is never empty").level < level {
            let next = ladder.back().expect("ladder is never empty").next();
            ladder.push_back(next);
            ladder.pop_front();
        }
        let cells = ladder.back().expect("ladder is never empty");
        let block = 1u64 << level;
        let mut offset = start;
        while offset < start + (1u64 << log_len) {
            let flipped = (offset >> level).count_ones() % 2 == 1;
            ev.apply(cells.cell(flipped));
            offset += block;
            let row = ev.observe(offset as f64 * period)?;
            trace.rows.push(row);
            if stop_state.update(&run.stop, &row, e0, ev.sites) {
                trace.meta.stopped_early = true;
                break 'segments;
            }
        }
    }
    Ok(trace)
}

/// Time-crystal protocol: a global flip `X` before every dipole (`n = 1`,
/// flip interval `2T`) or before every elementary step (`n = 0`, interval
/// `T`). Rows are taken at every flip boundary.
pub fn evolve_dtc(
    psi0: &StateVector,
    seq: &DriveSequence,
    pair: &PropagatorPair,
    epsilon_flip: f64,
) -> Result<ObservableTrace> {
    if seq.order() > 1 {
        return invalid(format!(
            "time-crystal protocol needs n = 0 or 1, got {}",
            seq.order()
        ));
    }
    let mut ev = Evolver::new(psi0, pair)?;
    let period = pair.params.period;
    let interval = period * seq.cell_len() as f64;
    let mut meta = base_meta("dtc", pair, "flip boundaries".to_string());
    meta.order = Some(seq.order());
    meta.seed = Some(seq.seed());
    meta.rng = Some(DriveRng::NAME.to_string());
    meta.flip_interval = Some(interval);
    meta.epsilon_flip = Some(epsilon_flip);
    let mut trace = ObservableTrace::new(meta);
    trace.rows.push(ev.observe(0.0)?);
    for i in 0..seq.num_blocks() {
        let block = seq.block(i)?;
        ev.flip(epsilon_flip)?;
        for &s in block {
            ev.apply(pair.for_symbol(s)?);
        }
        trace.rows.push(ev.observe((i + 1) as f64 * interval)?);
    }
    Ok(trace)
}

/// Applies a symbol string to a state and returns the final state.
pub fn apply_sequence(
    psi0: &StateVector,
    symbols: &[i8],
    pair: &PropagatorPair,
) -> Result<StateVector> {
    let mut ev = Evolver::new(psi0, pair)?;
    for &s in symbols {
        ev.apply(pair.for_symbol(s)?);
    }
    Ok(ev.state())
}

/// Dense product of the propagators of a symbol string (first symbol acts
/// first).
pub fn sequence_product(symbols: &[i8], pair: &PropagatorPair) -> Result<Array2<C64>> {
    let mut out = linalg::identity(pair.dim());
    for &s in symbols {
        out = pair.for_symbol(s)?.dot(&out);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{max_abs_diff, spectral_norm, unitarity_defect};
    use crate::sequence::{generate_rmd, thue_morse_cell};
    use crate::spinchain::{all_down, product_state, Spin};

    fn fig2(sites: usize, inv_t: f64) -> SpinChainParams {
        SpinChainParams::new(1.0, 0.243, 0.809, 0.357, 0.21, sites, 1.0 / inv_t)
    }

    fn fig3(sites: usize, inv_t: f64) -> SpinChainParams {
        SpinChainParams::new(1.0, 0.71, 3.2, 0.25, 0.21, sites, 1.0 / inv_t)
    }

    fn neel(sites: usize) -> StateVector {
        let pattern: Vec<Spin> = (0..sites)
            .map(|i| if i % 2 == 0 { Spin::Up } else { Spin::Down })
            .collect();
        product_state(&pattern).unwrap()
    }

    #[test]
    fn zero_period_gives_identity() {
        let pair = make_propagators(&fig2(4, 1.0).with_period(0.0)).unwrap();
        let id = linalg::identity(16);
        assert!(max_abs_diff(&pair.plus, &id) < 1e-13);
        assert!(max_abs_diff(&pair.minus, &id) < 1e-13);
    }

    #[test]
    fn diagonal_hamiltonian_gives_phases() {
        let p = SpinChainParams::new(0.7, 0.0, 0.0, 0.3, 0.0, 4, 0.2);
        let pair = make_propagators(&p).unwrap();
        let h = crate::spinchain::build_hamiltonian(&p, DriveSign::Plus).unwrap();
        for i in 0..16 {
            for j in 0..16 {
                let expected = if i == j {
                    C64::from_polar(1.0, -0.2 * h.matrix[[i, i]].re)
                } else {
                    C64::new(0.0, 0.0)
                };
                assert!((pair.plus[[i, j]] - expected).norm() < 1e-13);
            }
        }
    }

    #[test]
    fn propagators_are_unitary() {
        let pair = make_propagators(&fig2(8, 20.0)).unwrap();
        assert!(unitarity_defect(&pair.plus) < 1e-10);
        assert!(unitarity_defect(&pair.minus) < 1e-10);
    }

    #[test]
    fn first_levels_match_explicit_products() {
        let pair = make_propagators(&fig2(6, 10.0)).unwrap();
        let cells = build_unit_cells(&pair, 4).unwrap();
        let (p, m) = (&pair.plus, &pair.minus);
        assert!(max_abs_diff(&cells[0].u, &m.dot(p)) < 1e-12);
        assert!(max_abs_diff(&cells[0].u_tilde, &p.dot(m)) < 1e-12);
        // U(2) = U+ U- U- U+.
        let u2 = p.dot(m).dot(m).dot(p);
        assert!(max_abs_diff(&cells[1].u, &u2) < 1e-12);
        for (k, c) in cells.iter().enumerate() {
            assert_eq!(c.level, k as u32 + 1);
            assert!(unitarity_defect(&c.u) < 1e-9);
            assert!(unitarity_defect(&c.u_tilde) < 1e-9);
            let product = sequence_product(&unit_cell(c.level), &pair).unwrap();
            assert!(max_abs_diff(&c.u, &product) < 1e-10);
        }
        for w in cells.windows(2) {
            assert!(max_abs_diff(&w[1].u, &w[0].u_tilde.dot(&w[0].u)) < 1e-10);
            assert!(max_abs_diff(&w[1].u_tilde, &w[0].u.dot(&w[0].u_tilde)) < 1e-10);
        }
    }

    #[test]
    fn cell_memory_cap() {
        let pair = make_propagators(&fig2(4, 10.0)).unwrap();
        assert!(matches!(
            build_unit_cells_capped(&pair, 10, 1000),
            Err(Error::ResourceCap(_))
        ));
        assert!(build_unit_cells(&pair, 0).is_err());
    }

    #[test]
    fn dipole_is_plus_then_minus() {
        let pair = make_propagators(&fig2(6, 5.0)).unwrap();
        let psi = neel(6);
        let direct = pair.minus.dot(&pair.plus.dot(&psi.amps));
        let via_symbols = apply_sequence(&psi, &[1, -1], &pair).unwrap();
        let via_cell = unit_cell_level(&pair, 1).u.dot(&psi.amps);
        assert!((&direct - &via_symbols.amps).iter().all(|z| z.norm() < 1e-13));
        assert!((&direct - &via_cell).iter().all(|z| z.norm() < 1e-13));
    }

    #[test]
    fn empty_sequence_gives_initial_row() {
        let pair = make_propagators(&fig2(4, 10.0)).unwrap();
        let trace = evolve_rmd(&all_down(4), &DriveSequence::empty(1), &pair, 1).unwrap();
        assert_eq!(trace.len(), 1);
        assert_eq!(trace.rows[0].time, 0.0);
        assert!((trace.rows[0].energy - 4.0 * (1.0 - 0.357)).abs() < 1e-12);
    }

    #[test]
    fn composition_of_runs() {
        let pair = make_propagators(&fig2(6, 5.0)).unwrap();
        let psi = neel(6);
        let after_plus = apply_sequence(&psi, &[1], &pair).unwrap();
        let after_both = apply_sequence(&after_plus, &[-1], &pair).unwrap();
        let at_once = pair.minus.dot(&pair.plus.dot(&psi.amps));
        assert!((&after_both.amps - &at_once).iter().all(|z| z.norm() < 1e-13));

        let seq = DriveSequence::from_symbols(vec![1, -1], 1, 0).unwrap();
        let trace = evolve_rmd(&psi, &seq, &pair, 1).unwrap();
        let e = observables::energy_expectation(&after_both, &pair.h_f0).unwrap();
        assert!((trace.rows[1].energy - e).abs() < 1e-12);
        assert!((trace.rows[1].time - 0.4).abs() < 1e-15);
    }

    #[test]
    fn record_schedules() {
        let pair = make_propagators(&fig2(4, 10.0)).unwrap();
        let seq = generate_rmd(1, 12, 3).unwrap();
        let psi = all_down(4);
        let every3 = evolve_rmd(&psi, &seq, &pair, 3).unwrap();
        let times: Vec<f64> = every3.times();
        let expected: Vec<f64> = [0.0, 6.0, 12.0, 18.0, 24.0].iter().map(|k| k * 0.1).collect();
        assert_eq!(times.len(), expected.len());
        for (a, b) in times.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
        let per_step = evolve_rmd_sampled(&psi, &seq, &pair, Sampling::EveryStep).unwrap();
        assert_eq!(per_step.len(), 25);
        assert!((per_step.rows[24].energy - every3.rows[4].energy).abs() < 1e-12);
        let geometric =
            evolve_rmd_sampled(&psi, &seq, &pair, Sampling::Geometric { per_decade: 4 }).unwrap();
        // Cells 1, 2, 3, 6, 10 (then 18 is past the end).
        assert_eq!(geometric.len(), 6);
        assert!(evolve_rmd(&psi, &seq, &pair, 0).is_err());
    }

    #[test]
    fn stream_matches_materialized_sequence() {
        let pair = make_propagators(&fig2(6, 10.0)).unwrap();
        let seq = generate_rmd(2, 25, 11).unwrap();
        let psi = all_down(6);
        let a = evolve_rmd(&psi, &seq, &pair, 5).unwrap();
        let run = RmdRun {
            order: 2,
            seed: 11,
            t_max: 25.0 * 4.0 * 0.1,
            sampling: Sampling::EveryCells(5),
            stop: StopRule::default(),
        };
        let b = evolve_rmd_stream(&psi, &pair, &run).unwrap();
        assert_eq!(a.rows, b.rows);
    }

    #[test]
    fn norm_is_preserved() {
        let pair = make_propagators(&fig3(8, 20.0)).unwrap();
        let seq = generate_rmd(0, 10_000, 5).unwrap();
        let psi = apply_sequence(&all_down(8), seq.symbols(), &pair).unwrap();
        assert!((psi.norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn tms_matches_brute_force() {
        let pair = make_propagators(&fig2(8, 10.0)).unwrap();
        let cells = build_unit_cells(&pair, 6).unwrap();
        let psi = all_down(8);
        let trace = evolve_tms(&psi, &cells, &pair, 6).unwrap();
        for n in 1..=6u32 {
            let seq = thue_morse_cell(n).unwrap();
            let brute = evolve_rmd(&psi, &seq, &pair, 1).unwrap();
            let (a, b) = (&trace.rows[n as usize], &brute.rows[1]);
            assert!((a.time - b.time).abs() < 1e-12);
            assert!((a.energy - b.energy).abs() < 1e-8);
            assert!((a.entropy - b.entropy).abs() < 1e-8);
        }
    }

    #[test]
    fn tms_first_level_equals_dipole_run() {
        let pair = make_propagators(&fig2(6, 10.0)).unwrap();
        let cells = build_unit_cells(&pair, 1).unwrap();
        let psi = neel(6);
        let a = evolve_tms(&psi, &cells, &pair, 1).unwrap();
        let seq = DriveSequence::from_symbols(vec![1, -1], 1, 0).unwrap();
        let b = evolve_rmd(&psi, &seq, &pair, 1).unwrap();
        assert_eq!(a.len(), 2);
        for (x, y) in a.rows.iter().zip(&b.rows) {
            assert!((x.energy - y.energy).abs() < 1e-12);
            assert!((x.entropy - y.entropy).abs() < 1e-12);
        }
    }

    #[test]
    fn tms_stream_agrees_with_stored_cells_and_fine_samples() {
        let pair = make_propagators(&fig2(6, 10.0)).unwrap();
        let psi = all_down(6);
        let cells = build_unit_cells(&pair, 8).unwrap();
        let stored = evolve_tms(&psi, &cells, &pair, 8).unwrap();
        let coarse = evolve_tms_stream(
            &psi,
            &pair,
            &TmsRun {
                n_max: 8,
                resolution: 0,
                stop: StopRule::default(),
            },
        )
        .unwrap();
        assert_eq!(coarse.len(), stored.len());
        for (a, b) in coarse.rows.iter().zip(&stored.rows) {
            assert!((a.energy - b.energy).abs() < 1e-10);
        }
        let fine = evolve_tms_stream(
            &psi,
            &pair,
            &TmsRun {
                n_max: 8,
                resolution: 2,
                stop: StopRule::default(),
            },
        )
        .unwrap();
        // Brute force at every fine sample time.
        let tm = unit_cell(8);
        for row in &fine.rows[1..] {
            let steps = (row.time / 0.1).round() as usize;
            let psi_t = apply_sequence(&psi, &tm[..steps], &pair).unwrap();
            let e = observables::energy_expectation(&psi_t, &pair.h_f0).unwrap();
            assert!((row.energy - e).abs() < 1e-9, "t = {}", row.time);
        }
        let last = fine.last().unwrap();
        assert!((last.energy - stored.last().unwrap().energy).abs() < 1e-10);
    }

    #[test]
    fn stop_rule_ends_run_after_crossing() {
        let pair = make_propagators(&fig3(6, 2.0)).unwrap();
        let run = RmdRun {
            order: 0,
            seed: 1,
            t_max: 200.0,
            sampling: Sampling::EveryCells(1),
            stop: StopRule {
                energy_ratio_below: Some(0.5),
                entropy_ratio_above: None,
            },
        };
        let trace = evolve_rmd_stream(&all_down(6), &pair, &run).unwrap();
        assert!(trace.meta.stopped_early);
        let e0 = trace.rows[0].energy;
        let last = trace.last().unwrap();
        assert!(last.energy / e0 < 0.5);
        assert!(trace.rows[..trace.len() - 1].iter().all(|r| r.energy / e0 >= 0.5));
    }

    #[test]
    fn zero_momentum_sector_reproduces_full_dynamics() {
        let p = fig3(8, 10.0);
        let full = make_propagators(&p).unwrap();
        let k0 = make_propagators_in(&p, &Basis::zero_momentum(8).unwrap()).unwrap();
        assert_eq!(k0.dim(), 36);
        let psi = all_down(8);
        let run = RmdRun {
            order: 1,
            seed: 9,
            t_max: 20.0,
            sampling: Sampling::EveryCells(10),
            stop: StopRule::default(),
        };
        let a = evolve_rmd_stream(&psi, &full, &run).unwrap();
        let b = evolve_rmd_stream(&psi, &k0, &run).unwrap();
        assert_eq!(b.meta.basis, "k0");
        assert_eq!(a.len(), b.len());
        for (x, y) in a.rows.iter().zip(&b.rows) {
            assert!((x.energy - y.energy).abs() < 1e-9);
            assert!((x.entropy - y.entropy).abs() < 1e-9);
            assert!((x.mz_center - y.mz_center).abs() < 1e-9);
        }
        assert!(evolve_rmd_stream(&neel(8), &k0, &run).is_err());
    }

    #[test]
    fn dipole_cells_approach_effective_evolution_quadratically() {
        let errors: Vec<f64> = [2e-3, 4e-3]
            .iter()
            .map(|&t| {
                let pair = make_propagators(&fig2(6, 1.0).with_period(t)).unwrap();
                let target = pair.effective_propagator(2.0 * t).unwrap();
                let u1 = unit_cell_level(&pair, 1);
                let a = spectral_norm(&(&u1.u - &target)).unwrap();
                let b = spectral_norm(&(&u1.u_tilde - &target)).unwrap();
                assert!((a - b).abs() < 0.1 * a);
                a
            })
            .collect();
        let slope = (errors[1] / errors[0]).log2();
        assert!((slope - 2.0).abs() < 0.1, "slope {slope}");
    }

    #[test]
    fn dtc_ideal_flips_alternate_exactly() {
        // Without transverse terms the evolution is diagonal.
        let p = SpinChainParams::new(1.0, 0.0, 0.0, 0.21, 0.0, 6, 0.02);
        let pair = make_propagators(&p).unwrap();
        for n in [0u32, 1] {
            let seq = generate_rmd(n, 20, 4).unwrap();
            let trace = evolve_dtc(&all_down(6), &seq, &pair, 0.0).unwrap();
            assert_eq!(trace.len(), 21);
            for (k, row) in trace.rows.iter().enumerate() {
                let expected = if k % 2 == 0 { -1.0 } else { 1.0 };
                assert!((row.mz_center - expected).abs() < 1e-12);
            }
            let interval = trace.meta.flip_interval.unwrap();
            assert!((interval - 0.02 * (1u32 << n) as f64).abs() < 1e-15);
            assert!(observables::subharmonic_weight(&trace, interval).unwrap() > 1.0 - 1e-12);
        }
        let quad = generate_rmd(2, 4, 4).unwrap();
        assert!(evolve_dtc(&all_down(6), &quad, &pair, 0.0).is_err());
    }

    #[test]
    fn dtc_in_sector_matches_full_basis() {
        let p = SpinChainParams::new(1.0, 0.315, 0.75, 0.21, -0.05, 8, 0.05);
        let full = make_propagators(&p).unwrap();
        let k0 = make_propagators_in(&p, &Basis::zero_momentum(8).unwrap()).unwrap();
        let seq = generate_rmd(1, 30, 2).unwrap();
        let a = evolve_dtc(&all_down(8), &seq, &full, 0.1).unwrap();
        let b = evolve_dtc(&all_down(8), &seq, &k0, 0.1).unwrap();
        for (x, y) in a.rows.iter().zip(&b.rows) {
            assert!((x.mz_center - y.mz_center).abs() < 1e-10);
        }
    }

    #[test]
    fn trace_csv_roundtrip_and_sidecar() {
        let pair = make_propagators(&fig2(4, 10.0)).unwrap();
        let seq = generate_rmd(1, 4, 3).unwrap();
        let trace = evolve_rmd(&all_down(4), &seq, &pair, 1).unwrap();
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("time,energy,entropy,mz_center\n"));
        let back = ObservableTrace::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.rows, trace.rows);

        let dir = tempfile::tempdir().unwrap();
        let sidecar = trace.save(&dir.path().join("run.csv")).unwrap();
        let meta: TraceMeta =
            serde_json::from_reader(File::open(sidecar).unwrap()).unwrap();
        assert_eq!(meta, trace.meta);
        assert_eq!(meta.seed, Some(3));
        assert_eq!(meta.params.unwrap().sites, 4);
    }

    #[test]
    fn git_style_hash() {
        // Object id of `hello\n` in a SHA-256 git repository.
        assert_eq!(
            content_hash(b"hello\n"),
            "2cf8d83d9ee29543b34a87727421fdecb7e3f3a183d337639025de576db9ebb4"
        );
    }
}
