//! Singular spectrum analysis: embed → SVD → group → reconstruct.
//!
//! Each channel is lifted into an `L×K` Hankel trajectory matrix, factored
//! with a Jacobi-rotation SVD, its eigentriples are partitioned into
//! trend / seasonal / noise groups, and each group is projected back to a
//! length-`N` series by anti-diagonal (Hankel) averaging. Summing the three
//! outputs recovers the input to rounding error.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::MultichannelSeries;
use crate::error::{Error, Result};
use crate::scalar::{real, Scalar};
use crate::tensor::Tensor;

/// How eigentriples are split into trend / seasonal / noise.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GroupingStrategy {
    /// Component 1 → trend; components `2..m` → seasonal, where `m` is the
    /// smallest count whose cumulative σ² share reaches the energy
    /// threshold; remainder → noise.
    EnergyRank,
    /// Slowly-varying elementary series (zero-crossing rate below
    /// `factor·2/N`) → trend; σ-paired components (relative gap below the
    /// configured bound) → seasonal; remainder → noise.
    Periodogram,
}

/// Weight applied to each eigentriple during reconstruction.
///
/// `Sigma` is the variant that satisfies the completeness identity
/// (components sum back to the input); `SqrtSigma` is exposed for
/// experimentation and deliberately not the default.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SingularScale {
    Sigma,
    SqrtSigma,
}

/// Decomposition settings; `Default` gives the documented defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SsaConfig {
    /// Window length `L`; `None` selects `⌊N/4⌋` clamped to `[2, N−1]`.
    pub window: Option<usize>,
    pub grouping: GroupingStrategy,
    /// Cumulative σ²-energy share that closes the signal group (energy-rank).
    pub energy_threshold: f64,
    pub scale: SingularScale,
    /// Trend cut-off for the periodogram strategy, in units of `2/N`.
    pub zero_crossing_factor: f64,
    /// Relative σ gap under which adjacent components count as a seasonal
    /// pair (periodogram strategy).
    pub sigma_pair_gap: f64,
}

impl Default for SsaConfig {
    fn default() -> Self {
        Self {
            window: None,
            grouping: GroupingStrategy::EnergyRank,
            energy_threshold: 0.90,
            scale: SingularScale::Sigma,
            zero_crossing_factor: 1.0,
            sigma_pair_gap: 0.05,
        }
    }
}

impl SsaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.energy_threshold > 0.0 && self.energy_threshold <= 1.0) {
            return Err(Error::Config(format!(
                "energy_threshold must be in (0, 1], got {}",
                self.energy_threshold
            )));
        }
        if !(self.zero_crossing_factor > 0.0 && self.zero_crossing_factor.is_finite()) {
            return Err(Error::Config(format!(
                "zero_crossing_factor must be positive, got {}",
                self.zero_crossing_factor
            )));
        }
        if !(self.sigma_pair_gap >= 0.0 && self.sigma_pair_gap < 1.0) {
            return Err(Error::Config(format!(
                "sigma_pair_gap must be in [0, 1), got {}",
                self.sigma_pair_gap
            )));
        }
        Ok(())
    }
}

/// Default window: `⌊N/4⌋` clamped to `[2, N−1]`.
pub fn default_window(n: usize) -> usize {
    (n / 4).clamp(2, n.saturating_sub(1).max(2))
}

/// Builds the `L×K` Hankel trajectory matrix, `entries[i][j] = x[i+j]`,
/// `K = N−L+1`. The window may reach `N`, giving a single-column matrix.
pub fn embed<S: Scalar>(channel: &[S], window: usize) -> Result<Tensor<S>> {
    let n = channel.len();
    if window < 2 || window > n {
        return Err(Error::Window(format!(
            "window {window} outside [2, {n}] for series of length {n}"
        )));
    }
    let k = n - window + 1;
    let mut data = Vec::with_capacity(window * k);
    for i in 0..window {
        data.extend_from_slice(&channel[i..i + k]);
    }
    Tensor::new(vec![window, k], data)
}

/// Thin SVD of an `L×K` matrix: `U` is `L×r`, `V` is `K×r`, `r = min(L, K)`,
/// singular values descending.
#[derive(Clone, Debug)]
pub struct SvdResult<S> {
    pub u: Tensor<S>,
    pub sigma: Vec<S>,
    pub v: Tensor<S>,
}

impl<S: Scalar> SvdResult<S> {
    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    pub fn u_col(&self, i: usize) -> Vec<S> {
        let (rows, r) = (self.u.shape()[0], self.sigma.len());
        (0..rows).map(|a| self.u.data()[a * r + i]).collect()
    }

    pub fn v_col(&self, i: usize) -> Vec<S> {
        let (rows, r) = (self.v.shape()[0], self.sigma.len());
        (0..rows).map(|b| self.v.data()[b * r + i]).collect()
    }
}

/// One-sided Jacobi orthogonalization of `cols` (each of length `m`).
///
/// Plane rotations are applied on the right until all column pairs are
/// orthogonal relative to their norms; the same rotations accumulate into an
/// orthogonal basis returned alongside the final column norms. The rotation
/// sequence is the classical cyclic Jacobi sweep over the Gram matrix, but
/// applied to the columns themselves so that orthogonality of the
/// accumulated basis holds to rounding error regardless of conditioning.
fn jacobi_orthogonalize<S: Scalar>(cols: &mut [Vec<S>]) -> Result<(Vec<S>, Vec<Vec<S>>)> {
    let n = cols.len();
    let m = cols[0].len();
    let mut rot: Vec<Vec<S>> = (0..n)
        .map(|j| {
            let mut e = vec![S::zero(); n];
            e[j] = S::one();
            e
        })
        .collect();
    let tol = S::epsilon() * real::<S>((m.max(n) as f64).sqrt());
    // Columns whose norm falls below rounding level relative to the whole
    // matrix are frozen: rotating them against larger columns only reshuffles
    // noise and can cycle forever on rank-deficient input. Frozen columns are
    // replaced by an orthonormal completion afterwards.
    let fro2: S = cols.iter().flatten().map(|&x| x * x).sum();
    let freeze2 = fro2 * S::epsilon() * S::epsilon();
    let mut converged = false;
    for _sweep in 0..100 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let mut alpha = S::zero();
                let mut beta = S::zero();
                let mut gamma = S::zero();
                for i in 0..m {
                    let ap = cols[p][i];
                    let aq = cols[q][i];
                    alpha += ap * ap;
                    beta += aq * aq;
                    gamma += ap * aq;
                }
                if alpha <= freeze2 || beta <= freeze2 {
                    continue;
                }
                if gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                // Rotation angle that zeroes the off-diagonal Gram entry.
                let zeta = (beta - alpha) / (gamma + gamma);
                let t = zeta.signum() / (zeta.abs() + (S::one() + zeta * zeta).sqrt());
                let c = S::one() / (S::one() + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let ap = cols[p][i];
                    let aq = cols[q][i];
                    cols[p][i] = c * ap - s * aq;
                    cols[q][i] = s * ap + c * aq;
                }
                for i in 0..n {
                    let vp = rot[p][i];
                    let vq = rot[q][i];
                    rot[p][i] = c * vp - s * vq;
                    rot[q][i] = s * vp + c * vq;
                }
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Numerical(
            "singular value iteration did not converge within 100 sweeps".into(),
        ));
    }
    let norms = cols
        .iter()
        .map(|c| c.iter().map(|&x| x * x).sum::<S>().sqrt())
        .collect();
    Ok((norms, rot))
}

/// Factors `y` (rank-2 tensor) into `U·diag(σ)·Vᵀ`.
///
/// Deterministic sign convention: in each column of `U` the entry of largest
/// magnitude is nonnegative (ties broken by the lowest row index), with `V`
/// signed to match. Columns whose singular value vanishes are completed to
/// an orthonormal basis deterministically from canonical basis vectors.
pub fn svd<S: Scalar>(y: &Tensor<S>) -> Result<SvdResult<S>> {
    let shape = y.shape();
    if shape.len() != 2 || shape[0] == 0 || shape[1] == 0 {
        return Err(Error::Shape(format!(
            "svd needs a nonempty rank-2 tensor, got shape {shape:?}"
        )));
    }
    if !y.all_finite() {
        return Err(Error::Numerical("matrix has non-finite entries".into()));
    }
    let (l, k) = (shape[0], shape[1]);
    // Orthogonalize whichever side has fewer columns.
    let transpose = k > l;
    let (m, r) = if transpose { (k, l) } else { (l, k) };
    let mut cols: Vec<Vec<S>> = (0..r)
        .map(|j| {
            (0..m)
                .map(|i| if transpose { y.at2(j, i) } else { y.at2(i, j) })
                .collect()
        })
        .collect();
    let (norms, rot) = jacobi_orthogonalize(&mut cols)?;

    // Descending σ; ties keep the lower original index first.
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| norms[b].partial_cmp(&norms[a]).unwrap().then(a.cmp(&b)));
    let sigma: Vec<S> = order.iter().map(|&j| norms[j]).collect();
    let mut data_cols: Vec<Vec<S>> = order.iter().map(|&j| cols[j].clone()).collect();
    let rot_cols: Vec<Vec<S>> = order.iter().map(|&j| rot[j].clone()).collect();

    // Normalize the data columns into an orthonormal basis; columns with a
    // vanishing singular value get deterministic replacements. The cutoff
    // covers every column the orthogonalization froze (norm ≤ ε·‖Y‖_F),
    // whose direction carries no information.
    let fro = sigma.iter().map(|&s| s * s).sum::<S>().sqrt();
    let zero_tol = fro * S::epsilon() * real::<S>(2.0);
    let mut deficient = Vec::new();
    for (j, col) in data_cols.iter_mut().enumerate() {
        if sigma[j] > zero_tol {
            let inv = S::one() / sigma[j];
            for x in col.iter_mut() {
                *x *= inv;
            }
        } else {
            deficient.push(j);
        }
    }
    complete_basis(&mut data_cols, &deficient)?;

    let (mut u_cols, mut v_cols) = if transpose {
        (rot_cols, data_cols)
    } else {
        (data_cols, rot_cols)
    };

    // Sign convention on U, mirrored onto V.
    for j in 0..r {
        let mut best = 0;
        for i in 1..u_cols[j].len() {
            if u_cols[j][i].abs() > u_cols[j][best].abs() {
                best = i;
            }
        }
        if u_cols[j][best] < S::zero() {
            for x in u_cols[j].iter_mut() {
                *x = -*x;
            }
            for x in v_cols[j].iter_mut() {
                *x = -*x;
            }
        }
    }

    let u = cols_to_tensor(&u_cols, l);
    let v = cols_to_tensor(&v_cols, k);
    Ok(SvdResult { u, sigma, v })
}

/// Replaces the listed columns with unit vectors orthogonal to every other
/// column, chosen deterministically from the canonical basis.
fn complete_basis<S: Scalar>(cols: &mut [Vec<S>], deficient: &[usize]) -> Result<()> {
    if deficient.is_empty() {
        return Ok(());
    }
    let m = cols[0].len();
    let filled: Vec<usize> = (0..cols.len()).filter(|j| !deficient.contains(j)).collect();
    let mut done: Vec<usize> = filled;
    let mut next_candidate = 0;
    for &j in deficient {
        let mut accepted = false;
        while next_candidate < m {
            let mut cand = vec![S::zero(); m];
            cand[next_candidate] = S::one();
            next_candidate += 1;
            // Two orthogonalization passes keep the residual orthogonal to
            // rounding error even when the candidate is nearly dependent.
            for _ in 0..2 {
                for &d in &done {
                    let proj: S = (0..m).map(|i| cand[i] * cols[d][i]).sum();
                    for i in 0..m {
                        cand[i] -= proj * cols[d][i];
                    }
                }
            }
            let norm2: S = cand.iter().map(|&x| x * x).sum();
            if norm2 > real::<S>(0.5) {
                let inv = S::one() / norm2.sqrt();
                cols[j] = cand.into_iter().map(|x| x * inv).collect();
                done.push(j);
                accepted = true;
                break;
            }
        }
        if !accepted {
            return Err(Error::Numerical(
                "could not complete an orthonormal basis for zero singular values".into(),
            ));
        }
    }
    Ok(())
}

fn cols_to_tensor<S: Scalar>(cols: &[Vec<S>], rows: usize) -> Tensor<S> {
    let r = cols.len();
    let mut data = vec![S::zero(); rows * r];
    for (j, col) in cols.iter().enumerate() {
        for (i, &x) in col.iter().enumerate() {
            data[i * r + j] = x;
        }
    }
    Tensor::new(vec![rows, r], data).expect("column dimensions are consistent")
}

/// Disjoint partition of component indices `0..r`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Grouping {
    pub trend: Vec<usize>,
    pub seasonal: Vec<usize>,
    pub noise: Vec<usize>,
}

/// Partitions components under the configured strategy.
///
/// `elementary` holds the Hankelized per-component series (used by the
/// periodogram strategy; the energy-rank strategy only needs `sigma`).
pub fn group_components<S: Scalar>(
    sigma: &[S],
    elementary: &[Vec<S>],
    config: &SsaConfig,
) -> Result<Grouping> {
    let r = sigma.len();
    if r == 0 {
        return Err(Error::Grouping("no components to group".into()));
    }
    if elementary.len() != r {
        return Err(Error::Shape(format!(
            "{} elementary series for {r} singular values",
            elementary.len()
        )));
    }
    let grouping = match config.grouping {
        GroupingStrategy::EnergyRank => {
            let energies: Vec<S> = sigma.iter().map(|&s| s * s).collect();
            let total: S = energies.iter().copied().sum();
            let threshold = real::<S>(config.energy_threshold);
            let mut m = 1;
            if total > S::zero() {
                let mut cum = S::zero();
                for (i, &e) in energies.iter().enumerate() {
                    cum += e;
                    if cum / total >= threshold {
                        m = i + 1;
                        break;
                    }
                    m = i + 1;
                }
            }
            Grouping {
                trend: vec![0],
                seasonal: (1..m).collect(),
                noise: (m..r).collect(),
            }
        }
        GroupingStrategy::Periodogram => {
            let n = elementary[0].len();
            let cutoff = config.zero_crossing_factor * 2.0;
            let mut class = vec![2u8; r]; // 0 trend, 1 seasonal, 2 noise
            for i in 0..r {
                let zc = zero_crossings(&elementary[i]);
                if (zc as f64) < cutoff && n > 1 {
                    class[i] = 0;
                }
            }
            let gap = real::<S>(config.sigma_pair_gap);
            let mut i = 0;
            while i + 1 < r {
                if class[i] == 2 && class[i + 1] == 2 && sigma[i] > S::zero() {
                    let rel = (sigma[i] - sigma[i + 1]) / sigma[i];
                    if rel < gap {
                        class[i] = 1;
                        class[i + 1] = 1;
                        i += 2;
                        continue;
                    }
                }
                i += 1;
            }
            if !class.contains(&0) {
                class[0] = 0;
            }
            Grouping {
                trend: indices_of(&class, 0),
                seasonal: indices_of(&class, 1),
                noise: indices_of(&class, 2),
            }
        }
    };
    debug_assert!(grouping.is_partition(r));
    Ok(grouping)
}

impl Grouping {
    /// True when trend/seasonal/noise are disjoint and cover `0..r`.
    pub fn is_partition(&self, r: usize) -> bool {
        let mut seen = vec![false; r];
        for &i in self.trend.iter().chain(&self.seasonal).chain(&self.noise) {
            if i >= r || seen[i] {
                return false;
            }
            seen[i] = true;
        }
        seen.iter().all(|&s| s) && !self.trend.is_empty()
    }
}

fn indices_of(class: &[u8], wanted: u8) -> Vec<usize> {
    class
        .iter()
        .enumerate()
        .filter(|(_, &c)| c == wanted)
        .map(|(i, _)| i)
        .collect()
}

/// Sign changes between consecutive samples.
fn zero_crossings<S: Scalar>(series: &[S]) -> usize {
    series
        .windows(2)
        .filter(|w| w[0] * w[1] < S::zero())
        .count()
}

/// Hankelizes one weighted eigentriple into a length-`n` series: the rank-1
/// matrix `weight·u·vᵀ` averaged along anti-diagonals.
fn elementary_series<S: Scalar>(u_col: &[S], v_col: &[S], weight: S, n: usize) -> Vec<S> {
    let l = u_col.len();
    let k = v_col.len();
    debug_assert_eq!(l + k - 1, n);
    let mut out = vec![S::zero(); n];
    for (a, &ua) in u_col.iter().enumerate() {
        let wu = weight * ua;
        for (b, &vb) in v_col.iter().enumerate() {
            out[a + b] += wu * vb;
        }
    }
    for (t, x) in out.iter_mut().enumerate() {
        let lo = (t + 1).saturating_sub(k);
        let hi = t.min(l - 1);
        *x /= real::<S>((hi - lo + 1) as f64);
    }
    out
}

fn component_weight<S: Scalar>(sigma: S, scale: SingularScale) -> S {
    match scale {
        SingularScale::Sigma => sigma,
        SingularScale::SqrtSigma => sigma.sqrt(),
    }
}

/// Reconstructs the series for one index group by summing its Hankelized
/// eigentriples. An empty group yields the zero series.
pub fn reconstruct_component<S: Scalar>(
    svd: &SvdResult<S>,
    indices: &[usize],
    scale: SingularScale,
) -> Result<Vec<S>> {
    let r = svd.rank();
    let n = svd.u.shape()[0] + svd.v.shape()[0] - 1;
    let mut out = vec![S::zero(); n];
    for &i in indices {
        if i >= r {
            return Err(Error::Grouping(format!(
                "component index {i} out of range for rank {r}"
            )));
        }
        let series = elementary_series(
            &svd.u_col(i),
            &svd.v_col(i),
            component_weight(svd.sigma[i], scale),
            n,
        );
        for (o, s) in out.iter_mut().zip(series) {
            *o += s;
        }
    }
    Ok(out)
}

/// Trend / seasonal / noise series for one channel, each of input length.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelComponents<S> {
    pub trend: Vec<S>,
    pub seasonal: Vec<S>,
    pub noise: Vec<S>,
}

/// Per-channel decomposition of a multichannel series.
#[derive(Clone, Debug, PartialEq)]
pub struct DecompositionResult<S> {
    pub channels: Vec<ChannelComponents<S>>,
}

fn decompose_channel<S: Scalar>(channel: &[S], config: &SsaConfig) -> Result<ChannelComponents<S>> {
    let n = channel.len();
    if n < 4 {
        return Err(Error::Window(format!(
            "series of length {n} is too short to decompose (need N >= 4)"
        )));
    }
    let window = config.window.unwrap_or_else(|| default_window(n));
    let y = embed(channel, window)?;
    let svd = svd(&y)?;
    let elementary: Vec<Vec<S>> = (0..svd.rank())
        .map(|i| {
            elementary_series(
                &svd.u_col(i),
                &svd.v_col(i),
                component_weight(svd.sigma[i], config.scale),
                n,
            )
        })
        .collect();
    let grouping = group_components(&svd.sigma, &elementary, config)?;
    let sum_group = |idx: &[usize]| {
        let mut out = vec![S::zero(); n];
        for &i in idx {
            for (o, s) in out.iter_mut().zip(&elementary[i]) {
                *o += *s;
            }
        }
        out
    };
    Ok(ChannelComponents {
        trend: sum_group(&grouping.trend),
        seasonal: sum_group(&grouping.seasonal),
        noise: sum_group(&grouping.noise),
    })
}

/// Decomposes every channel; channels run in parallel and are merged in
/// channel order, so results are independent of thread scheduling.
pub fn decompose<S: Scalar>(
    series: &MultichannelSeries<S>,
    config: &SsaConfig,
) -> Result<DecompositionResult<S>> {
    config.validate()?;
    let channels = series
        .channels()
        .par_iter()
        .map(|ch| decompose_channel(ch, config))
        .collect::<Result<Vec<_>>>()?;
    Ok(DecompositionResult { channels })
}
