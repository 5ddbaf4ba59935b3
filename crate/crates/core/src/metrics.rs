//! SNR, segmental SNR and per-condition report aggregation.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::path::Path;

use crate::data::TripletWindow;
use crate::error::{invalid, Error, Result};

/// Error power floor relative to signal power: caps SNR at 120 dB.
pub const ERROR_FLOOR: f64 = 1e-12;
pub const SSNR_FRAME: usize = 512;
pub const SSNR_HOP: usize = 256;
pub const SSNR_MIN_DB: f64 = -10.0;
pub const SSNR_MAX_DB: f64 = 35.0;
/// Frames with less reference energy than this share of the loudest frame are silent.
pub const SILENCE_THRESHOLD: f64 = 1e-8;

fn check_pair(s: &[f64], est: &[f64]) -> Result<()> {
    if s.len() != est.len() {
        return Err(invalid(format!(
            "reference has {} samples, estimate {}",
            s.len(),
            est.len()
        )));
    }
    if s.is_empty() {
        return Err(invalid("empty signals"));
    }
    Ok(())
}

fn snr_unchecked(s: &[f64], est: &[f64]) -> f64 {
    let signal: f64 = s.iter().map(|v| v * v).sum();
    let error: f64 = s.iter().zip(est).map(|(a, b)| (a - b) * (a - b)).sum();
    10.0 * (signal / error.max(ERROR_FLOOR * signal)).log10()
}

/// `10 log10(Σs² / Σ(s - ŝ)²)` with the error power floored at `1e-12 Σs²`.
pub fn snr_db(s: &[f64], est: &[f64]) -> Result<f64> {
    check_pair(s, est)?;
    if !s.iter().any(|v| *v != 0.0) {
        return Err(invalid("SNR of a zero reference is undefined"));
    }
    let v = snr_unchecked(s, est);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numeric("non-finite SNR".into()))
    }
}

/// Mean per-frame SNR over speech-active 512-sample frames (hop 256), each
/// clamped to [-10, 35] dB.
pub fn segmental_snr(s: &[f64], est: &[f64]) -> Result<f64> {
    check_pair(s, est)?;
    let starts: Vec<usize> = if s.len() <= SSNR_FRAME {
        vec![0]
    } else {
        (0..=(s.len() - SSNR_FRAME) / SSNR_HOP)
            .map(|i| i * SSNR_HOP)
            .collect()
    };
    let frame = |i: usize| i..(i + SSNR_FRAME).min(s.len());
    let energies: Vec<f64> = starts
        .iter()
        .map(|&i| s[frame(i)].iter().map(|v| v * v).sum())
        .collect();
    let peak = energies.iter().copied().fold(0.0, f64::max);
    let mut acc = Neumaier::default();
    for (&i, &e) in starts.iter().zip(&energies) {
        if e > SILENCE_THRESHOLD * peak && e > 0.0 {
            let r = frame(i);
            acc.add(snr_unchecked(&s[r.clone()], &est[r]).clamp(SSNR_MIN_DB, SSNR_MAX_DB));
        }
    }
    if acc.count == 0 {
        return Err(invalid("no speech frames"));
    }
    Ok(acc.mean())
}

/// Compensated running sum.
#[derive(Clone, Copy, Debug, Default)]
pub struct Neumaier {
    sum: f64,
    comp: f64,
    count: usize,
}

impl Neumaier {
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
        self.count += 1;
    }

    pub fn total(&self) -> f64 {
        self.sum + self.comp
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.total() / self.count as f64
    }
}

pub const METRICS: [&str; 5] = [
    "input_snr",
    "output_snr",
    "snr_improvement",
    "input_ssnr",
    "output_ssnr",
];

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub noise_kind: String,
    pub input_snr_db: f64,
    pub metric: &'static str,
    pub mean: f64,
    pub count: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("noise_kind,input_snr_db,metric,mean,count\n");
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{}",
                r.noise_kind, r.input_snr_db, r.metric, r.mean, r.count
            )
            .unwrap();
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv())
            .map_err(|e| Error::io(format!("writing report {}", path.display()), e))
    }

    pub fn get(&self, noise_kind: &str, input_snr_db: f64, metric: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| {
            r.noise_kind == noise_kind && r.input_snr_db == input_snr_db && r.metric == metric
        })
    }

    /// Count-weighted mean of `metric` over all conditions of `noise_kind`.
    pub fn mean_over_snrs(&self, noise_kind: &str, metric: &str) -> Option<f64> {
        let mut acc = Neumaier::default();
        let mut n = 0;
        for r in self
            .rows
            .iter()
            .filter(|r| r.noise_kind == noise_kind && r.metric == metric)
        {
            acc.add(r.mean * r.count as f64);
            n += r.count;
        }
        (n > 0).then(|| acc.total() / n as f64)
    }

    /// Distinct `(noise_kind, input_snr_db)` conditions.
    pub fn conditions(&self) -> Vec<(String, f64)> {
        let mut c: Vec<(String, f64)> = self
            .rows
            .iter()
            .map(|r| (r.noise_kind.clone(), r.input_snr_db))
            .collect();
        c.dedup();
        c
    }
}

/// One scored signal: reference, mixture and estimate, already cut to the
/// samples that count.
#[derive(Clone, Debug)]
pub struct Scored<'a> {
    pub noise_kind: &'a str,
    pub snr_db: f64,
    pub s: Vec<f64>,
    pub x: Vec<f64>,
    pub est: Vec<f64>,
}

/// Groups by `(noise_kind, snr_db)` and averages every metric with
/// compensated sums. Items with a silent reference are skipped.
pub fn aggregate(items: &[Scored<'_>]) -> Result<EvalReport> {
    let mut order: Vec<usize> = (0..items.len()).collect();
    let key_cmp = |a: &Scored<'_>, b: &Scored<'_>| {
        a.noise_kind
            .cmp(b.noise_kind)
            .then(a.snr_db.total_cmp(&b.snr_db))
    };
    order.sort_by(|&a, &b| key_cmp(&items[a], &items[b]).then(a.cmp(&b)));
    let mut rows = Vec::new();
    let mut start = 0;
    while start < order.len() {
        let head = &items[order[start]];
        let mut end = start;
        while end < order.len() && key_cmp(&items[order[end]], head) == Ordering::Equal {
            end += 1;
        }
        let mut acc = [Neumaier::default(); 5];
        for it in order[start..end].iter().map(|&i| &items[i]) {
            check_pair(&it.s, &it.est)?;
            check_pair(&it.s, &it.x)?;
            let (Ok(sin), Ok(sout)) = (snr_db(&it.s, &it.x), snr_db(&it.s, &it.est)) else {
                log::warn!(
                    "skipping a {} @ {} dB item with a silent reference",
                    it.noise_kind,
                    it.snr_db
                );
                continue;
            };
            acc[0].add(sin);
            acc[1].add(sout);
            acc[2].add(sout - sin);
            if let (Ok(a), Ok(b)) = (segmental_snr(&it.s, &it.x), segmental_snr(&it.s, &it.est)) {
                acc[3].add(a);
                acc[4].add(b);
            }
        }
        if acc[0].count() == 0 {
            log::warn!(
                "condition {} @ {} dB has no scorable items; row omitted",
                head.noise_kind,
                head.snr_db
            );
        }
        for (metric, a) in METRICS.iter().zip(acc) {
            if a.count() > 0 {
                rows.push(ReportRow {
                    noise_kind: head.noise_kind.to_string(),
                    input_snr_db: head.snr_db,
                    metric,
                    mean: a.mean(),
                    count: a.count(),
                });
            }
        }
        start = end;
    }
    Ok(EvalReport { rows })
}

/// Scores windows against their estimates; padded tails are cut off. With
/// `per_utterance`, windows of one manifest entry are stitched back into the
/// full utterance first (each window contributes up to the next offset).
pub fn evaluate(
    windows: &[TripletWindow],
    estimates: &[Vec<f64>],
    per_utterance: bool,
) -> Result<EvalReport> {
    if windows.len() != estimates.len() {
        return Err(invalid(format!(
            "{} windows but {} estimates",
            windows.len(),
            estimates.len()
        )));
    }
    let mut items = Vec::new();
    if per_utterance {
        let mut i = 0;
        while i < windows.len() {
            let w0 = &windows[i];
            let mut it = Scored {
                noise_kind: &w0.noise_kind,
                snr_db: w0.snr_db,
                s: vec![],
                x: vec![],
                est: vec![],
            };
            let mut j = i;
            while j < windows.len() && windows[j].entry == w0.entry {
                let w = &windows[j];
                let take = if j + 1 < windows.len() && windows[j + 1].entry == w0.entry {
                    w.hop_to_next.min(w.valid_len)
                } else {
                    w.valid_len
                };
                it.s.extend_from_slice(&w.triplet.s[..take]);
                it.x.extend_from_slice(&w.triplet.x[..take]);
                it.est.extend_from_slice(&estimates[j][..take]);
                j += 1;
            }
            items.push(it);
            i = j;
        }
    } else {
        for (w, e) in windows.iter().zip(estimates) {
            if e.len() != w.triplet.len() {
                return Err(invalid(format!(
                    "estimate has {} samples, window {}",
                    e.len(),
                    w.triplet.len()
                )));
            }
            let v = w.valid_len;
            items.push(Scored {
                noise_kind: &w.noise_kind,
                snr_db: w.snr_db,
                s: w.triplet.s[..v].to_vec(),
                x: w.triplet.x[..v].to_vec(),
                est: e[..v].to_vec(),
            });
        }
    }
    aggregate(&items)
}
