//! Log-mel spectrogram features.
//!
//! Pipeline per frame: Hann window, zero-pad to `n_fft`, power spectrum,
//! unit-peak triangular mel filters spanning 0 Hz to Nyquist, natural log with
//! a floor. Frames start every `hop` samples; a trailing partial frame is
//! dropped, so there are `floor((len - window) / hop) + 1` frames.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{read_to_string, write_string, Error, Result};

pub const DEFAULT_MELS: usize = 64;
/// Floor applied before the log; silent cells equal `ln(LOG_FLOOR)`.
pub const LOG_FLOOR: f64 = 1e-10;
/// Bins whose variance is at or below this are zeroed by normalisation.
pub const VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidArgument("sample rate must be > 0".into()));
        }
        if samples.is_empty() {
            return Err(Error::InvalidArgument("waveform is empty".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("waveform samples".into()));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Reads a mono WAV file with 16-bit integer or 32-bit float samples.
    /// Integer samples are scaled to `[-1, 1)`.
    pub fn load_wav(path: &Path) -> Result<Self> {
        let mut reader = hound::WavReader::open(path)?;
        let spec = reader.spec();
        if spec.channels != 1 {
            return Err(Error::InvalidArgument(format!(
                "{}: expected a mono file, found {} channels",
                path.display(),
                spec.channels
            )));
        }
        let samples = match (spec.sample_format, spec.bits_per_sample) {
            (hound::SampleFormat::Int, 16) => reader
                .samples::<i16>()
                .map(|s| s.map(|v| v as f64 / 32768.0))
                .collect::<std::result::Result<Vec<_>, _>>()?,
            (hound::SampleFormat::Float, 32) => reader
                .samples::<f32>()
                .map(|s| s.map(f64::from))
                .collect::<std::result::Result<Vec<_>, _>>()?,
            (fmt, bits) => {
                return Err(Error::InvalidArgument(format!(
                    "{}: unsupported sample format {fmt:?} with {bits} bits",
                    path.display()
                )))
            }
        };
        Self::new(samples, spec.sample_rate)
    }

    /// Writes 32-bit float mono WAV.
    pub fn save_wav(&self, path: &Path) -> Result<()> {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.sample_rate,
            bits_per_sample: 32,
            sample_format: hound::SampleFormat::Float,
        };
        let mut w = hound::WavWriter::create(path, spec)?;
        for &s in &self.samples {
            w.write_sample(s as f32)?;
        }
        w.finalize()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MelConfig {
    /// Window length in seconds.
    pub window: f64,
    /// Hop length in seconds.
    pub hop: f64,
    pub n_mels: usize,
    /// FFT size; defaults to the next power of two at or above the window.
    pub n_fft: Option<usize>,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            window: 0.025,
            hop: 0.010,
            n_mels: DEFAULT_MELS,
            n_fft: None,
        }
    }
}

impl MelConfig {
    /// `(window, hop, n_fft)` in samples at `sample_rate`.
    pub fn resolve(&self, sample_rate: u32) -> Result<(usize, usize, usize)> {
        if !(self.window > 0.0 && self.hop > 0.0) {
            return Err(Error::InvalidArgument("window and hop must be > 0".into()));
        }
        if self.n_mels == 0 {
            return Err(Error::InvalidArgument("n_mels must be > 0".into()));
        }
        let sr = sample_rate as f64;
        let win = (self.window * sr).round() as usize;
        let hop = (self.hop * sr).round() as usize;
        if win == 0 || hop == 0 {
            return Err(Error::InvalidArgument(format!(
                "window and hop must span at least one sample at {sample_rate} Hz"
            )));
        }
        let n_fft = self.n_fft.unwrap_or_else(|| win.next_power_of_two());
        if n_fft < win {
            return Err(Error::InvalidArgument(format!(
                "n_fft {n_fft} is shorter than the window {win}"
            )));
        }
        Ok((win, hop, n_fft))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    /// frames × mel bins
    pub data: DMatrix<f64>,
    /// Seconds between frame starts.
    pub frame_hop: f64,
    pub normalized: bool,
    /// Bins that were constant across frames when normalised.
    pub degenerate_bins: Vec<usize>,
}

impl MelSpectrogram {
    pub fn frames(&self) -> usize {
        self.data.nrows()
    }

    pub fn bins(&self) -> usize {
        self.data.ncols()
    }

    /// Tab-separated matrix, one frame per line, after a `#` header line.
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "# frames={} bins={} hop={} normalized={}\n",
            self.frames(),
            self.bins(),
            self.frame_hop,
            self.normalized
        );
        for r in self.data.row_iter() {
            let cells: Vec<String> = r.iter().map(|v| v.to_string()).collect();
            s.push_str(&cells.join("\t"));
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut frame_hop = 0.0;
        let mut normalized = false;
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if let Some(head) = line.strip_prefix('#') {
                for kv in head.split_whitespace() {
                    match kv.split_once('=') {
                        Some(("hop", v)) => {
                            frame_hop = v.parse().map_err(|_| Error::parse(origin, i + 1, "bad hop"))?;
                        }
                        Some(("normalized", v)) => normalized = v == "true",
                        _ => {}
                    }
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let row = line
                .split_whitespace()
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|_| Error::parse(origin, i + 1, format!("not a number: {t:?}")))
                })
                .collect::<Result<Vec<_>>>()?;
            if let Some(first) = rows.first() {
                if first.len() != row.len() {
                    return Err(Error::parse(origin, i + 1, format!("expected {} values", first.len())));
                }
            }
            rows.push(row);
        }
        let bins = rows.first().map_or(0, Vec::len);
        let data = DMatrix::from_fn(rows.len(), bins, |r, c| rows[r][c]);
        Ok(Self {
            data,
            frame_hop,
            normalized,
            degenerate_bins: Vec::new(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_string(path, &self.to_text())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_to_string(path)?, &path.display().to_string())
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// `n_mels + 2` band edges in Hz, equally spaced in mel from 0 to Nyquist.
/// Filter `m` peaks at edge `m + 1`.
pub fn mel_edges(n_mels: usize, sample_rate: u32) -> Vec<f64> {
    let top = hz_to_mel(sample_rate as f64 / 2.0);
    (0..n_mels + 2)
        .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
        .collect()
}

/// Centre frequency (Hz) of each filter.
pub fn mel_centers(n_mels: usize, sample_rate: u32) -> Vec<f64> {
    mel_edges(n_mels, sample_rate)[1..=n_mels].to_vec()
}

/// `n_mels × (n_fft/2 + 1)` unit-peak triangular filters.
pub fn mel_filterbank(n_mels: usize, n_fft: usize, sample_rate: u32) -> DMatrix<f64> {
    let edges = mel_edges(n_mels, sample_rate);
    let bins = n_fft / 2 + 1;
    DMatrix::from_fn(n_mels, bins, |m, k| {
        let f = k as f64 * sample_rate as f64 / n_fft as f64;
        let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        let up = (f - lo) / (mid - lo);
        let down = (hi - f) / (hi - mid);
        up.min(down).max(0.0)
    })
}

pub fn frame_count(len: usize, window: usize, hop: usize) -> usize {
    if len < window {
        0
    } else {
        (len - window) / hop + 1
    }
}

// periodic Hann
fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

pub fn melspectrogram(w: &Waveform, cfg: &MelConfig) -> Result<MelSpectrogram> {
    let (win, hop, n_fft) = cfg.resolve(w.sample_rate)?;
    let n = w.samples.len();
    if n < win {
        return Err(Error::InvalidArgument(format!(
            "waveform of {n} samples is shorter than one {win}-sample window"
        )));
    }
    let frames = frame_count(n, win, hop);
    let window = hann(win);
    let bank = mel_filterbank(cfg.n_mels, n_fft, w.sample_rate);
    let fft: Arc<dyn Fft<f64>> = FftPlanner::new().plan_fft_forward(n_fft);
    let bins = n_fft / 2 + 1;

    let rows: Vec<Vec<f64>> = (0..frames)
        .into_par_iter()
        .map(|t| {
            let start = t * hop;
            let mut buf: Vec<Complex<f64>> = (0..n_fft)
                .map(|i| {
                    let v = if i < win { w.samples[start + i] * window[i] } else { 0.0 };
                    Complex::new(v, 0.0)
                })
                .collect();
            fft.process(&mut buf);
            let power: Vec<f64> = buf[..bins].iter().map(|c| c.norm_sqr()).collect();
            (0..cfg.n_mels)
                .map(|m| {
                    let e: f64 = bank.row(m).iter().zip(&power).map(|(a, b)| a * b).sum();
                    e.max(LOG_FLOOR).ln()
                })
                .collect()
        })
        .collect();
    Ok(MelSpectrogram {
        data: DMatrix::from_fn(frames, cfg.n_mels, |r, c| rows[r][c]),
        frame_hop: hop as f64 / w.sample_rate as f64,
        normalized: false,
        degenerate_bins: Vec::new(),
    })
}

/// Zero mean, unit (biased) variance per bin across frames. Bins with
/// variance at or below [`VARIANCE_FLOOR`] become zeros and are listed in
/// `degenerate_bins`.
pub fn normalize_per_bin(m: &MelSpectrogram) -> Result<MelSpectrogram> {
    let frames = m.frames();
    if frames < 2 {
        return Err(Error::InvalidArgument(format!(
            "per-bin normalisation needs at least 2 frames, found {frames}"
        )));
    }
    let mut data = m.data.clone();
    let mut degenerate = Vec::new();
    for (b, mut col) in data.column_iter_mut().enumerate() {
        let mean = col.sum() / frames as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / frames as f64;
        if var <= VARIANCE_FLOOR {
            col.fill(0.0);
            degenerate.push(b);
        } else {
            let sd = var.sqrt();
            col.apply(|v| *v = (*v - mean) / sd);
        }
    }
    Ok(MelSpectrogram {
        data,
        frame_hop: m.frame_hop,
        normalized: true,
        degenerate_bins: degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const SR: u32 = 16000;

    fn tone(f: f64, amp: f64, secs: f64) -> Waveform {
        let n = (secs * SR as f64) as usize;
        Waveform::new(
            (0..n)
                .map(|i| amp * (2.0 * PI * f * i as f64 / SR as f64).sin())
                .collect(),
            SR,
        )
        .unwrap()
    }

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn mel_scale_roundtrip() {
        assert!((hz_to_mel(700.0) - 2595.0 * 2f64.log10()).abs() < 1e-12);
        for f in [0.0, 100.0, 1000.0, 7999.0] {
            assert!((mel_to_hz(hz_to_mel(f)) - f).abs() < 1e-9);
        }
    }

    #[test]
    fn silence_hits_the_floor() {
        let w = Waveform::new(vec![0.0; 4000], SR).unwrap();
        let m = melspectrogram(&w, &MelConfig::default()).unwrap();
        assert_eq!(m.bins(), 64);
        assert!(m.data.iter().all(|&v| v == LOG_FLOOR.ln()));
    }

    #[test]
    fn frame_count_formula() {
        // 25 ms = 400 samples, 10 ms = 160 samples at 16 kHz
        for len in [400, 401, 559, 560, 561, 16000, 12345] {
            let w = Waveform::new(vec![0.1; len], SR).unwrap();
            let m = melspectrogram(&w, &MelConfig::default()).unwrap();
            assert_eq!(m.frames(), (len - 400) / 160 + 1, "len {len}");
        }
        let short = Waveform::new(vec![0.0; 399], SR).unwrap();
        assert!(melspectrogram(&short, &MelConfig::default()).is_err());
    }

    #[test]
    fn pure_tone_peak_bin() {
        let centers: Vec<f64> = mel_centers(64, SR).iter().map(|&f| hz_to_mel(f)).collect();
        for f in [250.0, 440.0, 1000.0, 2500.0, 3333.0, 6000.0, 7500.0] {
            let m = melspectrogram(&tone(f, 0.5, 0.3), &MelConfig::default()).unwrap();
            let target = hz_to_mel(f);
            let want = (0..64)
                .min_by(|&a, &b| (centers[a] - target).abs().total_cmp(&(centers[b] - target).abs()))
                .unwrap();
            for r in m.data.row_iter() {
                let got = r.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
                assert!(got.abs_diff(want) <= 1, "{f} Hz: bin {got}, expected {want}");
            }
        }
    }

    #[test]
    fn doubling_amplitude_adds_ln4() {
        let base = noise(8000, 1);
        let loud: Vec<f64> = base.iter().map(|v| 2.0 * v).collect();
        let a = melspectrogram(&Waveform::new(base, SR).unwrap(), &MelConfig::default()).unwrap();
        let b = melspectrogram(&Waveform::new(loud, SR).unwrap(), &MelConfig::default()).unwrap();
        let mut checked = 0;
        for (x, y) in a.data.iter().zip(b.data.iter()) {
            if *x > LOG_FLOOR.ln() + 10.0 {
                assert!((y - x - 4f64.ln()).abs() < 1e-9);
                checked += 1;
            }
        }
        assert!(checked > a.data.len() / 2);
    }

    #[test]
    fn hop_shift_shifts_frames() {
        let s = noise(6000, 2);
        let a = melspectrogram(&Waveform::new(s.clone(), SR).unwrap(), &MelConfig::default()).unwrap();
        let b = melspectrogram(&Waveform::new(s[160..].to_vec(), SR).unwrap(), &MelConfig::default()).unwrap();
        assert_eq!(b.frames(), a.frames() - 1);
        for t in 0..b.frames() {
            assert!((a.data.row(t + 1) - b.data.row(t)).amax() < 1e-9);
        }
    }

    #[test]
    fn filterbank_partition() {
        let fb = mel_filterbank(64, 512, SR);
        assert!(fb.iter().all(|&v| v >= 0.0));
        for k in 0..fb.ncols() {
            assert!(fb.column(k).sum() <= 1.0 + 1e-12);
        }
        // each filter peaks at (nearly) one at its center
        assert!((0..64).all(|m| fb.row(m).max() <= 1.0));
    }

    #[test]
    fn normalisation_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut data = DMatrix::from_fn(50, 64, |_, _| rng.random_range(-30.0..5.0));
        data.column_mut(7).fill(-3.0);
        let m = MelSpectrogram {
            data,
            frame_hop: 0.01,
            normalized: false,
            degenerate_bins: vec![],
        };
        let n = normalize_per_bin(&m).unwrap();
        assert!(n.normalized);
        assert_eq!(n.degenerate_bins, vec![7]);
        assert!(n.data.column(7).iter().all(|&v| v == 0.0));
        for (b, col) in n.data.column_iter().enumerate() {
            if b == 7 {
                continue;
            }
            let mean = col.sum() / 50.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 50.0;
            assert!(mean.abs() < 1e-10 && (var - 1.0).abs() < 1e-10);
        }
        let twice = normalize_per_bin(&n).unwrap();
        assert!((twice.data - &n.data).amax() < 1e-9);

        let one = MelSpectrogram {
            data: DMatrix::zeros(1, 64),
            ..m
        };
        assert!(normalize_per_bin(&one).is_err());
    }

    #[test]
    fn wav_roundtrip_and_int16() {
        let dir = tempfile::tempdir().unwrap();
        let w = tone(440.0, 0.25, 0.05);
        let p = dir.path().join("f.wav");
        w.save_wav(&p).unwrap();
        let back = Waveform::load_wav(&p).unwrap();
        assert_eq!(back.sample_rate(), SR);
        assert!(back
            .samples()
            .iter()
            .zip(w.samples())
            .all(|(a, b)| (a - b).abs() < 1e-7));

        let p16 = dir.path().join("i.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut wr = hound::WavWriter::create(&p16, spec).unwrap();
        for v in [0i16, 16384, -32768] {
            wr.write_sample(v).unwrap();
        }
        wr.finalize().unwrap();
        let i16w = Waveform::load_wav(&p16).unwrap();
        assert_eq!(i16w.samples(), &[0.0, 0.5, -1.0]);
    }

    #[test]
    fn text_roundtrip() {
        let m = melspectrogram(&tone(500.0, 0.3, 0.06), &MelConfig::default()).unwrap();
        let back = MelSpectrogram::parse(&m.to_text(), "m").unwrap();
        assert_eq!(back.data, m.data);
        assert_eq!(back.frame_hop, m.frame_hop);
    }

    proptest! {
        #[test]
        fn frame_count_matches_definition(len in 1usize..5000, win in 1usize..600, hop in 1usize..300) {
            let n = frame_count(len, win, hop);
            if len < win {
                prop_assert_eq!(n, 0);
            } else {
                // last frame fits, the next would not
                prop_assert!((n - 1) * hop + win <= len);
                prop_assert!(n * hop + win > len);
            }
        }
    }
}
