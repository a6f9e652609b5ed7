//! Seeded synthetic two-class frequency dataset, plus a model-free
//! nearest-centroid oracle used to confirm the classes are separable before
//! any end-to-end training claims are made.

use crate::dataio::{Dataset, MultichannelSeries};
use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::scalar::{real, Scalar};

/// Generation settings; `Default` is the documented benchmark: sinusoids of
/// 4 vs 8 cycles over 128 samples, unit amplitude, random phase, Gaussian
/// noise of 0.3, 200 train and 200 test items, balanced, single channel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthSpec {
    pub train: usize,
    pub test: usize,
    pub length: usize,
    pub cycles: (u32, u32),
    pub amplitude: f64,
    pub noise: f64,
    /// Channel count; each channel draws its own phase and noise.
    pub channels: usize,
    /// Topographic mode: the class selects which channel carries the tone
    /// (class `c` → channel `c % channels`; the rest are pure noise), so the
    /// class signal is spatial rather than spectral. Equal cycle counts are
    /// allowed here, and labels are named by channel.
    pub tone_channel_by_class: bool,
    /// Amplitude of a class-independent half-cycle drift added to every
    /// channel (random phase). Large values bury the tone in the raw
    /// signal while leaving it recoverable from the oscillatory band.
    pub drift: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            train: 200,
            test: 200,
            length: 128,
            cycles: (4, 8),
            amplitude: 1.0,
            noise: 0.3,
            channels: 1,
            tone_channel_by_class: false,
            drift: 0.0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.train < 2 || self.test < 2 {
            return Err(Error::Config("need at least two items per split".into()));
        }
        if self.length < 4 {
            return Err(Error::Config("series must have at least 4 samples".into()));
        }
        if self.channels == 0 {
            return Err(Error::Config("need at least one channel".into()));
        }
        if self.tone_channel_by_class {
            if self.channels < 2 {
                return Err(Error::Config(
                    "topographic classes need at least two channels".into(),
                ));
            }
        } else if self.cycles.0 == self.cycles.1 {
            return Err(Error::Config("the two classes need distinct cycle counts".into()));
        }
        if !(self.noise >= 0.0) || !self.noise.is_finite() {
            return Err(Error::Config("noise must be finite and nonnegative".into()));
        }
        if !(self.drift >= 0.0) || !self.drift.is_finite() {
            return Err(Error::Config("drift must be finite and nonnegative".into()));
        }
        Ok(())
    }
}

fn generate_split<S: Scalar>(
    rng: &mut StreamRng,
    count: usize,
    spec: &SynthSpec,
) -> Result<(Vec<MultichannelSeries<S>>, Vec<usize>)> {
    let mut items = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    let tau = std::f64::consts::TAU;
    for i in 0..count {
        let class = i % 2;
        let cycles = if class == 0 { spec.cycles.0 } else { spec.cycles.1 } as f64;
        let mut channels = Vec::with_capacity(spec.channels);
        for ch in 0..spec.channels {
            let carries_tone = !spec.tone_channel_by_class || ch == class % spec.channels;
            let phase = rng.uniform::<f64>(0.0, tau);
            let drift_phase = rng.uniform::<f64>(0.0, tau);
            let series: Vec<S> = (0..spec.length)
                .map(|t| {
                    let pos = t as f64 / spec.length as f64;
                    let tone = if carries_tone {
                        spec.amplitude * (tau * cycles * pos + phase).sin()
                    } else {
                        0.0
                    };
                    let drift = spec.drift * (0.5 * tau * pos + drift_phase).sin();
                    real::<S>(tone + drift + spec.noise * rng.normal::<f64>())
                })
                .collect();
            channels.push(series);
        }
        items.push(MultichannelSeries::new(channels)?);
        labels.push(class);
    }
    Ok((items, labels))
}

/// Generates seeded `(train, test)` datasets. Class 0 is the slower
/// sinusoid and labels are named by cycle count; in topographic mode the
/// class is the tone-carrying channel and labels are named by channel.
pub fn synthetic_frequency_dataset<S: Scalar>(
    seed: u64,
    spec: &SynthSpec,
) -> Result<(Dataset<S>, Dataset<S>)> {
    spec.validate()?;
    let (label_names, problem) = if spec.tone_channel_by_class {
        (
            vec!["ch0".to_string(), "ch1".to_string()],
            "synthetic-topographic",
        )
    } else {
        (
            vec![spec.cycles.0.to_string(), spec.cycles.1.to_string()],
            "synthetic-frequency",
        )
    };
    let make = |stream: &str, count: usize| -> Result<Dataset<S>> {
        let mut rng = StreamRng::new(seed, stream);
        let (items, labels) = generate_split(&mut rng, count, spec)?;
        Ok(Dataset {
            items,
            labels,
            label_names: label_names.clone(),
            problem_name: Some(problem.into()),
        })
    };
    Ok((make("synth-train", spec.train)?, make("synth-test", spec.test)?))
}

/// Autocorrelation at lags `1..=max_lag`, normalized by lag 0; an all-equal
/// series yields zeros.
pub fn autocorrelation<S: Scalar>(series: &[S], max_lag: usize) -> Vec<S> {
    let n = series.len();
    let mean = series.iter().copied().sum::<S>() / real::<S>(n as f64);
    let centered: Vec<S> = series.iter().map(|&x| x - mean).collect();
    let r0: S = centered.iter().map(|&x| x * x).sum();
    (1..=max_lag)
        .map(|k| {
            if k >= n || r0 == S::zero() {
                S::zero()
            } else {
                let rk: S = (0..n - k).map(|t| centered[t] * centered[t + k]).sum();
                rk / r0
            }
        })
        .collect()
}

fn item_features<S: Scalar>(item: &MultichannelSeries<S>, max_lag: usize) -> Vec<S> {
    item.channels()
        .iter()
        .flat_map(|ch| autocorrelation(ch, max_lag))
        .collect()
}

/// Classifies the test split by nearest class centroid in autocorrelation
/// space and returns the accuracy — a training-free separability check.
pub fn nearest_centroid_accuracy<S: Scalar>(
    train: &Dataset<S>,
    test: &Dataset<S>,
    max_lag: usize,
) -> Result<f64> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::Data("both splits must be non-empty".into()));
    }
    let k = train.n_classes();
    let d = max_lag * train.channel_count();
    let mut centroids = vec![vec![S::zero(); d]; k];
    let mut counts = vec![0usize; k];
    for (item, &label) in train.items.iter().zip(&train.labels) {
        for (acc, f) in centroids[label].iter_mut().zip(item_features(item, max_lag)) {
            *acc += f;
        }
        counts[label] += 1;
    }
    for (centroid, &count) in centroids.iter_mut().zip(&counts) {
        if count == 0 {
            return Err(Error::Data("a class has no training items".into()));
        }
        for v in centroid.iter_mut() {
            *v /= real::<S>(count as f64);
        }
    }
    let mut correct = 0usize;
    for (item, &label) in test.items.iter().zip(&test.labels) {
        let features = item_features(item, max_lag);
        let mut best = 0usize;
        let mut best_dist = S::infinity();
        for (c, centroid) in centroids.iter().enumerate() {
            let dist: S = centroid
                .iter()
                .zip(&features)
                .map(|(&a, &b)| (a - b) * (a - b))
                .sum();
            if dist < best_dist {
                best_dist = dist;
                best = c;
            }
        }
        if best == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / test.len() as f64)
}
