//! Two-channel coincidence histogramming of τ = t_B − t_A.
//!
//! Bins are half-open `[edge, edge + width)` on the range `[−R, R)`; a pair
//! exactly at an edge lands in the bin to its right.

use std::collections::VecDeque;
use std::io::{BufRead, Write};

use rayon::prelude::*;

use crate::photostream::{first_unsorted, EventStream, RESOLUTION};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CorrelatorMode {
    /// Every pair within range (multi-start, multi-stop).
    Full,
    /// After each recorded pair both channels are blind for `dead_time` seconds.
    StartStop { dead_time: f64 },
}

impl CorrelatorMode {
    pub fn validate(&self) -> Result<()> {
        match self {
            CorrelatorMode::Full => Ok(()),
            CorrelatorMode::StartStop { dead_time } if *dead_time >= 0.0 && dead_time.is_finite() => Ok(()),
            CorrelatorMode::StartStop { .. } => Err(Error::domain("correlator dead time must be ≥ 0")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoincidenceHistogram {
    bin_width_ps: u64,
    range_ps: u64,
    counts: Vec<u64>,
    n_a: u64,
    n_b: u64,
    t_total: f64,
    mode: CorrelatorMode,
}

/// Integer binning derived from seconds, validated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Binning {
    bin: u64,
    range: u64,
}

impl Binning {
    fn new(bin_width: f64, tau_range: f64) -> Result<Self> {
        let bin = (bin_width / RESOLUTION).round();
        if !(bin_width >= RESOLUTION * (1.0 - 1e-9)) || (bin * RESOLUTION - bin_width).abs() > 1e-6 * bin_width {
            return Err(Error::Resolution { bin_width_s: bin_width });
        }
        let bin = bin as u64;
        let range = (tau_range / RESOLUTION).round();
        if !(tau_range > 0.0) || (range * RESOLUTION - tau_range).abs() > 1e-6 * tau_range {
            return Err(Error::domain(format!(
                "tau range {tau_range:e} s is not a whole number of picoseconds"
            )));
        }
        let range = range as u64;
        if range < 10 * bin {
            return Err(Error::domain(format!(
                "tau range {tau_range:e} s must be at least 10 bin widths"
            )));
        }
        if !(2 * range).is_multiple_of(bin) {
            return Err(Error::domain(format!(
                "tau range 2×{range} ps is not a whole number of {bin} ps bins"
            )));
        }
        Ok(Self { bin, range })
    }

    fn bins(&self) -> usize {
        (2 * self.range / self.bin) as usize
    }

    /// Bin of a pair, or `None` outside `[−R, R)`.
    #[inline]
    fn index(&self, ta: u64, tb: u64) -> Option<usize> {
        let shifted = if tb >= ta {
            let d = tb - ta;
            if d >= self.range {
                return None;
            }
            d + self.range
        } else {
            let d = ta - tb;
            if d > self.range {
                return None;
            }
            self.range - d
        };
        Some((shifted / self.bin) as usize)
    }
}

impl CoincidenceHistogram {
    /// Builds a histogram from existing counts; `counts.len()` fixes the range.
    pub fn from_counts(
        bin_width: f64,
        counts: Vec<u64>,
        n_a: u64,
        n_b: u64,
        t_total: f64,
        mode: CorrelatorMode,
    ) -> Result<Self> {
        if counts.len() < 20 {
            return Err(Error::domain("histogram needs at least 20 bins"));
        }
        let bin_ps = (bin_width / RESOLUTION).round() as u64;
        let span_ps = bin_ps * counts.len() as u64;
        if !span_ps.is_multiple_of(2) {
            return Err(Error::domain("an odd number of odd-width bins cannot be centred on τ = 0"));
        }
        let binning = Binning::new(bin_width, (span_ps / 2) as f64 * RESOLUTION)?;
        if binning.bins() != counts.len() {
            return Err(Error::BinningMismatch("counts do not match the binning".into()));
        }
        if !(t_total >= 0.0) || !t_total.is_finite() {
            return Err(Error::domain("t_total must be ≥ 0"));
        }
        mode.validate()?;
        Ok(Self {
            bin_width_ps: binning.bin,
            range_ps: binning.range,
            counts,
            n_a,
            n_b,
            t_total,
            mode,
        })
    }

    pub fn bin_width(&self) -> f64 {
        self.bin_width_ps as f64 * RESOLUTION
    }

    pub fn bin_width_ps(&self) -> u64 {
        self.bin_width_ps
    }

    pub fn tau_min(&self) -> f64 {
        -(self.range_ps as f64) * RESOLUTION
    }

    pub fn tau_max(&self) -> f64 {
        self.range_ps as f64 * RESOLUTION
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn n_a(&self) -> u64 {
        self.n_a
    }

    pub fn n_b(&self) -> u64 {
        self.n_b
    }

    pub fn t_total(&self) -> f64 {
        self.t_total
    }

    pub fn mode(&self) -> CorrelatorMode {
        self.mode
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Centre of bin `i` in seconds.
    pub fn bin_center(&self, i: usize) -> f64 {
        let twice = (2 * i as i64 + 1) * self.bin_width_ps as i64 - 2 * self.range_ps as i64;
        twice as f64 * 0.5 * RESOLUTION
    }

    pub fn bin_centers(&self) -> Vec<f64> {
        (0..self.counts.len()).map(|i| self.bin_center(i)).collect()
    }

    /// Same histogram with τ → −τ, as if the channels were swapped.
    pub fn mirrored(&self) -> Self {
        let mut h = self.clone();
        h.counts.reverse();
        std::mem::swap(&mut h.n_a, &mut h.n_b);
        h
    }

    fn same_binning(&self, other: &Self) -> bool {
        self.bin_width_ps == other.bin_width_ps && self.range_ps == other.range_ps
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "# n_a={}", self.n_a)?;
        writeln!(out, "# n_b={}", self.n_b)?;
        writeln!(out, "# t_total_s={}", self.t_total)?;
        writeln!(out, "# bin_width_s={}", self.bin_width())?;
        writeln!(out, "# tau_min_s={}", self.tau_min())?;
        writeln!(out, "# tau_max_s={}", self.tau_max())?;
        match self.mode {
            CorrelatorMode::Full => writeln!(out, "# mode=full")?,
            CorrelatorMode::StartStop { dead_time } => {
                writeln!(out, "# mode=start_stop")?;
                writeln!(out, "# dead_time_s={dead_time}")?;
            }
        }
        writeln!(out, "tau_s,counts,g2,g2_err")?;
        let g2 = normalize_g2(self).ok();
        for (i, c) in self.counts.iter().enumerate() {
            match &g2 {
                Some(g) => writeln!(out, "{},{},{},{}", self.bin_center(i), c, g.g2[i], g.err[i])?,
                None => writeln!(out, "{},{},,", self.bin_center(i), c)?,
            }
        }
        Ok(())
    }

    /// Reads the CSV written by [`CoincidenceHistogram::write_csv`]; the g² columns are ignored.
    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut offset = 0u64;
        let mut meta = std::collections::BTreeMap::new();
        let mut header_seen = false;
        let mut counts = Vec::new();
        for line in input.lines() {
            let line = line.map_err(|e| Error::format(offset, e.to_string()))?;
            let here = offset;
            offset += line.len() as u64 + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            if let Some(rest) = trimmed.strip_prefix('#') {
                let (k, v) = rest
                    .split_once('=')
                    .ok_or_else(|| Error::format(here, "comment line must be `# key=value`"))?;
                meta.insert(k.trim().to_string(), (v.trim().to_string(), here));
                continue;
            }
            if !header_seen {
                if !trimmed.starts_with("tau_s,counts") {
                    return Err(Error::format(here, "expected header `tau_s,counts,g2,g2_err`"));
                }
                header_seen = true;
                continue;
            }
            let field = trimmed
                .split(',')
                .nth(1)
                .ok_or_else(|| Error::format(here, "row is missing the counts column"))?;
            let c: u64 = field
                .trim()
                .parse()
                .map_err(|_| Error::format(here, format!("counts `{field}` is not a non-negative integer")))?;
            counts.push(c);
        }
        if !header_seen {
            return Err(Error::format(offset, "missing header `tau_s,counts,g2,g2_err`"));
        }
        let get = |key: &str| -> Result<&(String, u64)> {
            meta.get(key)
                .ok_or_else(|| Error::format(0, format!("missing `# {key}=` metadata line")))
        };
        fn parse<T: std::str::FromStr>(key: &str, entry: &(String, u64)) -> Result<T> {
            entry
                .0
                .parse()
                .map_err(|_| Error::format(entry.1, format!("bad value for {key}: `{}`", entry.0)))
        }
        let n_a: u64 = parse("n_a", get("n_a")?)?;
        let n_b: u64 = parse("n_b", get("n_b")?)?;
        let t_total: f64 = parse("t_total_s", get("t_total_s")?)?;
        let bin_width: f64 = parse("bin_width_s", get("bin_width_s")?)?;
        let tau_min: f64 = parse("tau_min_s", get("tau_min_s")?)?;
        let tau_max: f64 = parse("tau_max_s", get("tau_max_s")?)?;
        let mode_entry = get("mode")?;
        let mode = match mode_entry.0.as_str() {
            "full" => CorrelatorMode::Full,
            "start_stop" => CorrelatorMode::StartStop {
                dead_time: parse("dead_time_s", get("dead_time_s")?)?,
            },
            other => return Err(Error::format(mode_entry.1, format!("unknown mode `{other}`"))),
        };
        if (tau_min + tau_max).abs() > 1e-6 * tau_max.abs() {
            return Err(Error::format(get("tau_min_s")?.1, "tau range must be symmetric about 0"));
        }
        let binning = Binning::new(bin_width, tau_max)
            .map_err(|e| Error::format(get("bin_width_s").map(|x| x.1).unwrap_or(0), e.to_string()))?;
        if counts.len() != binning.bins() {
            return Err(Error::format(
                offset,
                format!("expected {} rows, found {}", binning.bins(), counts.len()),
            ));
        }
        Self::from_counts(bin_width, counts, n_a, n_b, t_total, mode).map_err(|e| Error::format(0, e.to_string()))
    }
}

fn span_seconds(a: &[u64], b: &[u64]) -> f64 {
    let first = a.first().into_iter().chain(b.first()).min();
    let last = a.last().into_iter().chain(b.last()).max();
    match (first, last) {
        (Some(f), Some(l)) => (l - f) as f64 * RESOLUTION,
        _ => 0.0,
    }
}

/// Histogram of t_B − t_A; chunk count chosen from the input size.
pub fn cross_correlate(
    a: &EventStream,
    b: &EventStream,
    bin_width: f64,
    tau_range: f64,
    mode: CorrelatorMode,
) -> Result<CoincidenceHistogram> {
    let chunks = if a.len() > 1 << 16 {
        4 * rayon::current_num_threads()
    } else {
        1
    };
    correlate_timestamps(a.timestamps(), b.timestamps(), bin_width, tau_range, mode, chunks)
}

/// Histogram over raw picosecond slices, splitting channel A into `chunks`
/// contiguous pieces processed in parallel (Full mode only).
pub fn correlate_timestamps(
    a: &[u64],
    b: &[u64],
    bin_width: f64,
    tau_range: f64,
    mode: CorrelatorMode,
    chunks: usize,
) -> Result<CoincidenceHistogram> {
    let binning = Binning::new(bin_width, tau_range)?;
    mode.validate()?;
    if let Some(index) = first_unsorted(a) {
        return Err(Error::Unsorted { index });
    }
    if let Some(index) = first_unsorted(b) {
        return Err(Error::Unsorted { index });
    }
    let counts = match mode {
        CorrelatorMode::Full => full_chunked(a, b, binning, chunks.max(1))?,
        CorrelatorMode::StartStop { dead_time } => {
            let dead = (dead_time / RESOLUTION).round() as u64;
            start_stop(a, b, binning, dead)
        }
    };
    Ok(CoincidenceHistogram {
        bin_width_ps: binning.bin,
        range_ps: binning.range,
        counts,
        n_a: a.len() as u64,
        n_b: b.len() as u64,
        t_total: span_seconds(a, b),
        mode,
    })
}

fn full_chunked(a: &[u64], b: &[u64], binning: Binning, chunks: usize) -> Result<Vec<u64>> {
    let nbins = binning.bins();
    if a.is_empty() || b.is_empty() {
        return Ok(vec![0; nbins]);
    }
    let size = a.len().div_ceil(chunks);
    let parts: Vec<Vec<u64>> = a
        .par_chunks(size)
        .map(|chunk| {
            let mut counts = vec![0u64; nbins];
            full_sweep(chunk, b, binning, &mut counts);
            counts
        })
        .collect();
    let mut total = vec![0u64; nbins];
    for part in parts {
        for (t, p) in total.iter_mut().zip(part) {
            *t = t
                .checked_add(p)
                .ok_or_else(|| Error::domain("coincidence counter overflow"))?;
        }
    }
    Ok(total)
}

/// Sliding-window sweep: channel-B window `[t_a − R, t_a + R)` advances with t_a.
fn full_sweep(a: &[u64], b: &[u64], binning: Binning, counts: &mut [u64]) {
    let Binning { bin, range } = binning;
    let mut lo = b.partition_point(|&t| t < a[0].saturating_sub(range));
    for &ta in a {
        let low = ta.saturating_sub(range);
        while lo < b.len() && b[lo] < low {
            lo += 1;
        }
        let high = ta.saturating_add(range);
        for &tb in &b[lo..] {
            if tb >= high {
                break;
            }
            // tb ≥ ta − R here, so the shifted offset is non-negative.
            let shifted = tb + range - ta;
            counts[(shifted / bin) as usize] += 1;
        }
    }
}

/// Merge sweep over both channels in time order (A first at equal times).
///
/// An event is blind when the latest pair recorded strictly before it lies
/// less than `dead` ps earlier. A non-blind event pairs with every earlier
/// non-blind event of the other channel in range; each pair is recorded at
/// the later event's time.
fn start_stop(a: &[u64], b: &[u64], binning: Binning, dead: u64) -> Vec<u64> {
    let mut counts = vec![0u64; binning.bins()];
    let mut win_a: VecDeque<u64> = VecDeque::new();
    let mut win_b: VecDeque<u64> = VecDeque::new();
    let (mut ia, mut ib) = (0, 0);
    let mut last_r: Option<u64> = None;
    let mut prev_r: Option<u64> = None;
    let range = binning.range;
    while ia < a.len() || ib < b.len() {
        let from_a = ib >= b.len() || (ia < a.len() && a[ia] <= b[ib]);
        let t = if from_a { a[ia] } else { b[ib] };
        if from_a {
            ia += 1;
        } else {
            ib += 1;
        }
        let recent = if last_r == Some(t) { prev_r } else { last_r };
        if matches!(recent, Some(r) if t - r < dead) {
            continue;
        }
        let mut recorded = false;
        if from_a {
            // Partners tb < t with t − tb ≤ R.
            while matches!(win_b.front(), Some(&tb) if t - tb > range) {
                win_b.pop_front();
            }
            for &tb in &win_b {
                if let Some(i) = binning.index(t, tb) {
                    counts[i] += 1;
                    recorded = true;
                }
            }
            win_a.push_back(t);
        } else {
            // Partners ta ≤ t with t − ta < R.
            while matches!(win_a.front(), Some(&ta) if t - ta >= range) {
                win_a.pop_front();
            }
            for &ta in &win_a {
                if let Some(i) = binning.index(ta, t) {
                    counts[i] += 1;
                    recorded = true;
                }
            }
            win_b.push_back(t);
        }
        if recorded && last_r != Some(t) {
            prev_r = last_r;
            last_r = Some(t);
        }
    }
    counts
}

/// Reference O(N_A·N_B) pair count with the same binning convention.
pub fn brute_force(a: &[u64], b: &[u64], bin_width: f64, tau_range: f64) -> Result<Vec<u64>> {
    let binning = Binning::new(bin_width, tau_range)?;
    let mut counts = vec![0u64; binning.bins()];
    for &ta in a {
        for &tb in b {
            if let Some(i) = binning.index(ta, tb) {
                counts[i] += 1;
            }
        }
    }
    Ok(counts)
}

/// g² per bin with Poisson standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct G2Estimate {
    pub tau: Vec<f64>,
    pub g2: Vec<f64>,
    pub err: Vec<f64>,
}

impl G2Estimate {
    pub fn mean(&self) -> f64 {
        self.g2.iter().sum::<f64>() / self.g2.len() as f64
    }
}

/// g²ᵢ = Nᵢ·T/(n_a·n_b·w); only meaningful for Full-mode histograms.
pub fn normalize_g2(h: &CoincidenceHistogram) -> Result<G2Estimate> {
    if let CorrelatorMode::StartStop { .. } = h.mode {
        return Err(Error::StartStopNormalization);
    }
    if h.n_a == 0 || h.n_b == 0 || !(h.t_total > 0.0) {
        return Err(Error::domain(
            "normalization needs events on both channels and a positive acquisition time",
        ));
    }
    let factor = h.t_total / (h.n_a as f64 * h.n_b as f64 * h.bin_width());
    Ok(G2Estimate {
        tau: h.bin_centers(),
        g2: h.counts.iter().map(|&c| c as f64 * factor).collect(),
        err: h.counts.iter().map(|&c| (c.max(1) as f64).sqrt() * factor).collect(),
    })
}

/// Count loss of a start-stop acquisition relative to the full correlation.
#[derive(Debug, Clone, PartialEq)]
pub struct DeficitReport {
    pub full_total: u64,
    pub start_stop_total: u64,
    pub total_ratio: f64,
    /// Per-bin ratio, `None` where the full histogram is empty.
    pub bin_ratio: Vec<Option<f64>>,
}

pub fn deficit_report(full: &CoincidenceHistogram, ss: &CoincidenceHistogram) -> Result<DeficitReport> {
    if full.mode != CorrelatorMode::Full {
        return Err(Error::BinningMismatch("first histogram must be Full mode".into()));
    }
    if !matches!(ss.mode, CorrelatorMode::StartStop { .. }) {
        return Err(Error::BinningMismatch("second histogram must be StartStop mode".into()));
    }
    if !full.same_binning(ss) {
        return Err(Error::BinningMismatch(format!(
            "bin width {} ps / range {} ps vs {} ps / {} ps",
            full.bin_width_ps, full.range_ps, ss.bin_width_ps, ss.range_ps
        )));
    }
    let full_total = full.total();
    let start_stop_total = ss.total();
    let total_ratio = if full_total == 0 {
        1.0
    } else {
        start_stop_total as f64 / full_total as f64
    };
    let bin_ratio = full
        .counts
        .iter()
        .zip(&ss.counts)
        .map(|(&f, &s)| (f > 0).then(|| s as f64 / f as f64))
        .collect();
    Ok(DeficitReport {
        full_total,
        start_stop_total,
        total_ratio,
        bin_ratio,
    })
}
