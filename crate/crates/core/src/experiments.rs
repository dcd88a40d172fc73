//! Experiment drivers and their CSV tables.

use std::io::Write;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::bins::carve_bins;
use crate::config::ExperimentConfig;
use crate::ddm::{carve_train, sine_drive, ModulatorConfig};
use crate::error::{Error, Result};
use crate::keyrate::secret_rate;
use crate::receiver::{front_end, interfere_bins, DetectorConfig, DetectorId, ReceiverConfig};
use crate::sift::{estimate, Proportion, RunStats};
use crate::sim::{derive_seed, pool, prepare, run_trial, LinkConfig, Prepared};
use crate::stability::{run_stability, StabilityPoint};
use crate::waveform::{encode_with, Basis, EncodeOptions, NoiseModel, PhaseEncoding, Protocol, Symbol, SymbolFrame};

/// Header and rows of a CSV output, without the trailing hash column.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    /// Writes the table with a `config_hash` column appended to every row.
    pub fn write_csv<W: Write>(&self, hash: &str, mut w: W) -> Result<()> {
        writeln!(w, "{},config_hash", self.header.join(","))?;
        for r in &self.rows {
            writeln!(w, "{},{}", r.join(","), hash)?;
        }
        Ok(())
    }
}

/// Shortest round-trip decimal form; empty for missing values.
pub fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x}")
    } else {
        String::new()
    }
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, num)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MuRow {
    pub mu: f64,
    pub stats: Option<RunStats>,
    pub secret_rate: f64,
}

impl MuRow {
    pub fn sifted_rate(&self) -> f64 {
        self.stats.as_ref().map_or(0.0, |s| s.sifted_rate)
    }
    pub fn qber_time(&self) -> Option<Proportion> {
        self.stats.as_ref().and_then(|s| s.qber_time)
    }
    pub fn qber_phase(&self) -> Option<Proportion> {
        self.stats.as_ref().map(|s| s.qber_phase).filter(|p| p.total > 0)
    }
    pub fn visibility(&self) -> f64 {
        self.stats.as_ref().map_or(f64::NAN, |s| s.visibility)
    }
}

fn check_mu_grid(mu: &[f64]) -> Result<()> {
    if mu.iter().any(|m| !(*m >= 0.0) || !m.is_finite()) {
        return Err(Error::Config("mu grid values must be finite and >= 0".into()));
    }
    let pos: Vec<f64> = mu.iter().copied().filter(|m| *m > 0.0).collect();
    let span = pos.iter().cloned().fold(0.0, f64::max) / pos.iter().cloned().fold(f64::INFINITY, f64::min);
    if pos.len() < 2 || !(span >= 999.999) {
        return Err(Error::Config("mu grid must span at least three decades".into()));
    }
    Ok(())
}

/// Sifted and secret rates, QBER and visibility against mean photon number.
pub fn run_mu_sweep(cfg: &ExperimentConfig) -> Result<Vec<MuRow>> {
    cfg.validate()?;
    check_mu_grid(&cfg.mu_sweep.mu)?;
    mu_points(&cfg.link, &cfg.mu_sweep.mu, cfg.trials, cfg.seed, cfg)
}

/// Runs the link at each `mu`, pooling `trials` independent frames per point.
pub fn mu_points(link: &LinkConfig, mu: &[f64], trials: usize, seed: u64, cfg: &ExperimentConfig) -> Result<Vec<MuRow>> {
    link.validate()?;
    let preps: Vec<Prepared> =
        (0..trials).into_par_iter().map(|t| prepare(link, derive_seed(seed, t as u64))).collect::<Result<_>>()?;
    let jobs: Vec<(usize, usize)> = (0..mu.len()).flat_map(|i| (0..trials).map(move |t| (i, t))).collect();
    let results: Vec<_> = jobs
        .par_iter()
        .map(|&(i, t)| run_trial(&preps[t], link, mu[i], derive_seed(seed ^ 0xdead_beef, (i * trials + t) as u64)))
        .collect::<Result<_>>()?;
    let model = cfg.keyrate.model(link.protocol);
    let mut results = results.into_iter();
    let mut rows = Vec::with_capacity(mu.len());
    for (i, &m) in mu.iter().enumerate() {
        let pooled = pool(results.by_ref().take(trials));
        let stats = match estimate(link.protocol, &pooled, link.sample_fraction, derive_seed(seed, 1_000_000 + i as u64)) {
            Ok(s) => Some(s),
            Err(Error::Estimation(_)) => None,
            Err(e) => return Err(e),
        };
        let secret = stats.as_ref().and_then(|s| secret_rate(s, &model).ok()).unwrap_or(0.0);
        rows.push(MuRow { mu: m, stats, secret_rate: secret });
    }
    Ok(rows)
}

pub fn mu_table(rows: &[MuRow]) -> Table {
    Table {
        header: vec![
            "mu",
            "sifted_rate_bps",
            "qber_time",
            "qber_time_ci",
            "qber_phase",
            "qber_phase_ci",
            "visibility",
            "secret_rate_bps",
        ],
        rows: rows
            .iter()
            .map(|r| {
                vec![
                    num(r.mu),
                    num(r.sifted_rate()),
                    opt(r.qber_time().map(|q| q.value)),
                    opt(r.qber_time().map(|q| q.half_width())),
                    opt(r.qber_phase().map(|q| q.value)),
                    opt(r.qber_phase().map(|q| q.half_width())),
                    num(r.visibility()),
                    num(r.secret_rate),
                ]
            })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChirpRow {
    pub scheme: PhaseEncoding,
    pub arm1_levels: usize,
    pub arm2_levels: usize,
    pub eye_spread: f64,
    pub trial: usize,
    pub phase_qber: f64,
}

fn scheme_name(s: PhaseEncoding) -> &'static str {
    match s {
        PhaseEncoding::SingleArm => "chirped",
        PhaseEncoding::PushPull => "push-pull",
    }
}

/// Expected phase-basis QBER of an X-only BB84 frame: wrong-port energy over
/// total energy in the central output bin of every qubit.
pub fn x_basis_qber(
    scheme: PhaseEncoding,
    noise: &NoiseModel,
    symbols: usize,
    seed: u64,
    modulator: &ModulatorConfig,
    visibility: f64,
) -> Result<(usize, usize, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let syms = (0..symbols).map(|_| Symbol::bb84(rng.gen_range(0..2), Basis::X)).collect();
    let frame = SymbolFrame::new(Protocol::Bb84, syms, crate::waveform::DEFAULT_TAU, seed);
    let opts = EncodeOptions { bb84_phase: scheme, ..Default::default() };
    let drive = encode_with(&frame, noise, modulator, &opts)?;
    let bins = carve_bins(&drive, modulator)?;
    let rx = ReceiverConfig {
        interferometer_visibility: visibility,
        interferometer_loss: 0.0,
        circulator_loss: 0.0,
        ..ReceiverConfig::for_protocol(Protocol::Bb84)
    };
    let ports = interfere_bins(&bins, &rx, 1.0);
    let (mut wrong, mut total) = (0.0, 0.0);
    for (q, s) in frame.symbols.iter().enumerate() {
        let k = 2 * q + 1;
        let (c, d) = (ports.constructive[k], ports.destructive[k]);
        wrong += if s.bit == 0 { d } else { c };
        total += c + d;
    }
    let (l1, l2) = drive.level_counts();
    Ok((l1, l2, wrong / total))
}

/// Phase QBER of chirped and push-pull X encodings under eye spreading.
pub fn run_chirp_study(cfg: &ExperimentConfig) -> Result<Vec<ChirpRow>> {
    cfg.validate()?;
    let mut jobs = Vec::new();
    for &spread in &cfg.chirp.eye_spreads {
        for scheme in [PhaseEncoding::SingleArm, PhaseEncoding::PushPull] {
            for trial in 0..cfg.trials {
                jobs.push((spread, scheme, trial));
            }
        }
    }
    jobs.par_iter()
        .map(|&(spread, scheme, trial)| {
            let noise = NoiseModel {
                base_eye_spread: spread,
                seed: derive_seed(cfg.seed, 2 * trial as u64 + 1),
                ..cfg.link.noise.clone()
            };
            let frame_seed = derive_seed(cfg.seed, 2 * trial as u64);
            let (a1, a2, q) =
                x_basis_qber(scheme, &noise, cfg.chirp.symbols, frame_seed, &cfg.link.modulator, cfg.chirp.visibility)?;
            Ok(ChirpRow { scheme, arm1_levels: a1, arm2_levels: a2, eye_spread: spread, trial, phase_qber: q })
        })
        .collect()
}

pub fn chirp_table(rows: &[ChirpRow]) -> Table {
    Table {
        header: vec!["scheme", "arm1_levels", "arm2_levels", "eye_spread", "trial", "phase_qber"],
        rows: rows
            .iter()
            .map(|r| {
                vec![
                    scheme_name(r.scheme).to_string(),
                    r.arm1_levels.to_string(),
                    r.arm2_levels.to_string(),
                    num(r.eye_spread),
                    r.trial.to_string(),
                    num(r.phase_qber),
                ]
            })
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FreqRow {
    pub clock_freq: f64,
    pub visibility: f64,
}

/// Visibility of a sine-carved train interfering with its copy delayed by `tau`.
pub fn sine_visibility(freq: f64, tau: f64, duration: f64, sample_period: f64, intrinsic: f64) -> Result<f64> {
    let cfg = ModulatorConfig { sample_period, ..ModulatorConfig::default() };
    let train = carve_train(&sine_drive(freq, duration, sample_period)?, &cfg)?;
    let d = (tau / sample_period).round() as usize;
    if d == 0 || d >= train.len() {
        return Err(Error::Measurement("delay does not fit the carved train".into()));
    }
    let s = &train.samples;
    let mut cross = Complex64::new(0.0, 0.0);
    let mut norm = 0.0;
    for t in d..s.len() {
        cross += s[t] * s[t - d].conj();
        norm += s[t].norm_sqr() + s[t - d].norm_sqr();
    }
    Ok(intrinsic * 2.0 * cross.norm() / norm)
}

pub fn freq_grid(cfg: &ExperimentConfig) -> Result<Vec<f64>> {
    let f = &cfg.freq;
    if !(f.start > 0.0 && f.stop >= f.start && f.step > 0.0) {
        return Err(Error::Config("frequency grid needs 0 < start <= stop and step > 0".into()));
    }
    let n = ((f.stop - f.start) / f.step + 1e-9).floor() as usize + 1;
    Ok((0..n).map(|i| f.start + i as f64 * f.step).collect())
}

pub fn run_freq_sweep(cfg: &ExperimentConfig) -> Result<Vec<FreqRow>> {
    cfg.validate()?;
    let tau = cfg.link.receiver.interferometer_delay;
    freq_grid(cfg)?
        .par_iter()
        .map(|&f| {
            let v = sine_visibility(f, tau, cfg.freq.duration, cfg.freq.sample_period, cfg.freq.visibility)?;
            Ok(FreqRow { clock_freq: f, visibility: v })
        })
        .collect()
}

pub fn freq_table(rows: &[FreqRow]) -> Table {
    Table {
        header: vec!["clock_freq_hz", "visibility", "phase_qber"],
        rows: rows
            .iter()
            .map(|r| vec![num(r.clock_freq), num(r.visibility), num((1.0 - r.visibility) / 2.0)])
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtinctionRow {
    pub extinction_db: f64,
    pub expected_qber_time: f64,
    pub mc_qber_time: Option<Proportion>,
}

/// Low-µ arrival-time QBER implied by the carved frame: wrong-bin photons over
/// all photons reaching the time detector in time-coded qubits.
pub fn expected_time_qber(prep: &Prepared, rx: &ReceiverConfig) -> Result<f64> {
    let inputs = front_end(&prep.bins, 1.0, rx)?;
    let id = match prep.frame.protocol {
        Protocol::Cow => DetectorId::SpdD,
        Protocol::Bb84 => DetectorId::SpdZ,
        Protocol::Dps => return Err(Error::Config("DPS has no arrival-time basis".into())),
    };
    let m = &inputs.iter().find(|i| i.detector == id).expect("time detector present").mean_photons;
    let (mut wrong, mut total) = (0.0, 0.0);
    for (q, s) in prep.frame.symbols.iter().enumerate() {
        let coded = match prep.frame.protocol {
            Protocol::Cow => !s.decoy,
            _ => s.basis == Basis::Z,
        };
        if coded {
            let (right, other) = (2 * q + s.bit as usize, 2 * q + 1 - s.bit as usize);
            wrong += m[other];
            total += m[right] + m[other];
        }
    }
    Ok(wrong / total)
}

/// Link settings used by the extinction experiment: no dark counts, no jitter.
pub fn extinction_link(cfg: &ExperimentConfig, extinction_db: f64) -> LinkConfig {
    let mut link = cfg.link.clone();
    link.modulator.extinction_db = Some(extinction_db);
    link.symbols = cfg.extinction.symbols;
    link.duration = cfg.extinction.duration;
    link.detector = DetectorConfig { dark_rate: 0.0, jitter_fwhm: 0.0, ..link.detector };
    link
}

pub fn run_extinction(cfg: &ExperimentConfig) -> Result<Vec<ExtinctionRow>> {
    cfg.validate()?;
    if cfg.link.protocol == Protocol::Dps {
        return Err(Error::Config("extinction experiment needs COW or BB84".into()));
    }
    cfg.extinction
        .extinction_db
        .iter()
        .enumerate()
        .map(|(i, &er)| {
            let link = extinction_link(cfg, er);
            let seed = derive_seed(cfg.seed, i as u64);
            let preps: Vec<Prepared> = (0..cfg.trials)
                .into_par_iter()
                .map(|t| prepare(&link, derive_seed(seed, t as u64)))
                .collect::<Result<_>>()?;
            let expected = {
                let per: Vec<f64> = preps.iter().map(|p| expected_time_qber(p, &link.receiver)).collect::<Result<_>>()?;
                per.iter().sum::<f64>() / per.len() as f64
            };
            let runs: Vec<_> = preps
                .par_iter()
                .enumerate()
                .map(|(t, p)| run_trial(p, &link, cfg.extinction.mu, derive_seed(seed ^ 0xe7, t as u64)))
                .collect::<Result<_>>()?;
            let stats = estimate(link.protocol, &pool(runs), link.sample_fraction, seed).ok();
            Ok(ExtinctionRow { extinction_db: er, expected_qber_time: expected, mc_qber_time: stats.and_then(|s| s.qber_time) })
        })
        .collect()
}

pub fn extinction_table(rows: &[ExtinctionRow]) -> Table {
    Table {
        header: vec!["extinction_db", "expected_qber_time", "qber_time", "qber_time_ci", "time_bits"],
        rows: rows
            .iter()
            .map(|r| {
                vec![
                    num(r.extinction_db),
                    num(r.expected_qber_time),
                    opt(r.mc_qber_time.map(|q| q.value)),
                    opt(r.mc_qber_time.map(|q| q.half_width())),
                    r.mc_qber_time.map_or(0, |q| q.total).to_string(),
                ]
            })
            .collect(),
    }
}

pub fn run_stability_trials(cfg: &ExperimentConfig) -> Result<Vec<Vec<StabilityPoint>>> {
    cfg.validate()?;
    (0..cfg.trials).into_par_iter().map(|t| run_stability(&cfg.stability, derive_seed(cfg.seed, t as u64))).collect()
}

pub fn stability_table(runs: &[Vec<StabilityPoint>]) -> Table {
    let mut rows = Vec::new();
    for (t, run) in runs.iter().enumerate() {
        for p in run {
            rows.push(vec![
                t.to_string(),
                num(p.t_hours),
                num(p.qber),
                num(p.visibility),
                num(p.bias_setting),
                num(p.wavelength_setting),
                num(p.bias_error),
                num(p.phase_error),
            ]);
        }
    }
    Table {
        header: vec![
            "trial",
            "t_hours",
            "qber",
            "visibility",
            "bias_setting_v",
            "wavelength_setting_rad",
            "bias_error_v",
            "phase_error_rad",
        ],
        rows,
    }
}
