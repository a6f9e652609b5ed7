//! Markov field over channel × segment regions: potentials, inference,
//! topographic rendering.
//!
//! Regions form a grid (channels vertical, time segments horizontal) with
//! 4-neighborhood edges. Each node carries a discrete activity level from a
//! uniform ladder in `[−1, 1]`; unary potentials come from learned upstream
//! features, pairwise potentials penalize level differences between
//! neighbors quadratically. Node marginals are inferred by damped
//! sum-product belief propagation in the log domain (with an exhaustive
//! enumeration oracle for small graphs) and rendered into a grayscale image
//! by normalized Gaussian interpolation of expected levels.

use serde::{Deserialize, Serialize};

use crate::dataio::MtfImage;
use crate::error::{Error, Result};
use crate::scalar::{real, Scalar};
use crate::tensor::Tensor;

/// How region nodes are connected.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Topology {
    /// 4-neighborhood on the channels × segments grid.
    Grid,
    /// Single path over all nodes in index order.
    Chain,
}

/// Grid placement of one region node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Region {
    pub channel: usize,
    pub segment: usize,
}

/// Pairwise Markov random field over region nodes.
///
/// Node `(c, t)` has index `c·segments + t`. Potentials start at zero
/// (no evidence); [`unary_potentials`] and [`MtfGraph::set_uniform_beta`]
/// fill them in.
#[derive(Clone, Debug)]
pub struct MtfGraph<S> {
    channels: usize,
    segments: usize,
    regions: Vec<Region>,
    /// Unordered edges, stored with the smaller index first.
    edges: Vec<(usize, usize)>,
    /// Per node: `(neighbor, edge index)`.
    adjacency: Vec<Vec<(usize, usize)>>,
    states: usize,
    levels: Vec<S>,
    /// M×S table, `unary[i][s] = φ_i(s)`; lower is stronger evidence.
    unary: Vec<Vec<S>>,
    /// Smoothness coefficient per edge.
    beta: Vec<S>,
}

/// Uniform state levels `u_s = −1 + 2s/(S−1)`.
pub fn state_levels<S: Scalar>(states: usize) -> Result<Vec<S>> {
    if states < 2 {
        return Err(Error::State(format!(
            "need at least 2 states, got {states}"
        )));
    }
    let span = real::<S>((states - 1) as f64);
    Ok((0..states)
        .map(|s| real::<S>(-1.0) + real::<S>(2.0) * real::<S>(s as f64) / span)
        .collect())
}

/// Builds the region graph for a channels × segments layout with unset
/// (zero) potentials.
pub fn build_region_graph<S: Scalar>(
    channels: usize,
    segments: usize,
    topology: Topology,
    states: usize,
) -> Result<MtfGraph<S>> {
    if channels == 0 || segments == 0 {
        return Err(Error::Config(
            "region grid needs at least one channel and one segment".into(),
        ));
    }
    let regions: Vec<Region> = (0..channels)
        .flat_map(|channel| (0..segments).map(move |segment| Region { channel, segment }))
        .collect();
    let node = |c: usize, t: usize| c * segments + t;
    let mut edges = Vec::new();
    match topology {
        Topology::Grid => {
            for c in 0..channels {
                for t in 0..segments {
                    if t + 1 < segments {
                        edges.push((node(c, t), node(c, t + 1)));
                    }
                    if c + 1 < channels {
                        edges.push((node(c, t), node(c + 1, t)));
                    }
                }
            }
        }
        Topology::Chain => {
            let m = channels * segments;
            edges.extend((0..m.saturating_sub(1)).map(|i| (i, i + 1)));
        }
    }
    MtfGraph::assemble(channels, segments, regions, edges, states)
}

impl<S: Scalar> MtfGraph<S> {
    /// Builds an arbitrary simple connected graph (testing/oracle entry
    /// point); nodes are laid out as a 1 × M strip for rendering purposes.
    pub fn from_edges(
        node_count: usize,
        states: usize,
        edges: &[(usize, usize)],
    ) -> Result<Self> {
        if node_count == 0 {
            return Err(Error::Graph("graph needs at least one node".into()));
        }
        let regions = (0..node_count)
            .map(|segment| Region {
                channel: 0,
                segment,
            })
            .collect();
        Self::assemble(1, node_count, regions, edges.to_vec(), states)
    }

    fn assemble(
        channels: usize,
        segments: usize,
        regions: Vec<Region>,
        raw_edges: Vec<(usize, usize)>,
        states: usize,
    ) -> Result<Self> {
        let m = regions.len();
        let mut edges = Vec::with_capacity(raw_edges.len());
        for (a, b) in raw_edges {
            if a == b {
                return Err(Error::Graph(format!("self-loop at node {a}")));
            }
            if a >= m || b >= m {
                return Err(Error::Graph(format!(
                    "edge ({a}, {b}) out of range for {m} nodes"
                )));
            }
            let e = (a.min(b), a.max(b));
            if edges.contains(&e) {
                return Err(Error::Graph(format!("duplicate edge {e:?}")));
            }
            edges.push(e);
        }
        let mut adjacency = vec![Vec::new(); m];
        for (idx, &(a, b)) in edges.iter().enumerate() {
            adjacency[a].push((b, idx));
            adjacency[b].push((a, idx));
        }
        // Connectivity (single-node graphs are trivially connected).
        let mut seen = vec![false; m];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for &(j, _) in &adjacency[i] {
                if !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        if seen.iter().any(|&s| !s) {
            return Err(Error::Graph("graph is not connected".into()));
        }
        let levels = state_levels::<S>(states)?;
        Ok(Self {
            channels,
            segments,
            regions,
            unary: vec![vec![S::zero(); states]; m],
            beta: vec![S::zero(); edges.len()],
            edges,
            adjacency,
            states,
            levels,
        })
    }

    pub fn node_count(&self) -> usize {
        self.regions.len()
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn levels(&self) -> &[S] {
        &self.levels
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn segments(&self) -> usize {
        self.segments
    }

    pub fn unary(&self) -> &[Vec<S>] {
        &self.unary
    }

    /// Sets the same smoothness coefficient on every edge.
    pub fn set_uniform_beta(&mut self, beta: S) -> Result<()> {
        if !(beta >= S::zero()) || !beta.is_finite() {
            return Err(Error::Config(format!(
                "beta must be finite and nonnegative, got {beta}"
            )));
        }
        self.beta = vec![beta; self.edges.len()];
        Ok(())
    }

    /// Sets the full unary table directly (testing entry point).
    pub fn set_unary(&mut self, unary: Vec<Vec<S>>) -> Result<()> {
        if unary.len() != self.node_count()
            || unary.iter().any(|row| row.len() != self.states)
        {
            return Err(Error::Shape(format!(
                "unary table must be {}x{}",
                self.node_count(),
                self.states
            )));
        }
        if unary.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite unary potential".into()));
        }
        self.unary = unary;
        Ok(())
    }
}

/// Fills `φ_i(s) = −w(s)ᵀ·f_i` from per-region features (M×d) and the shared
/// per-state weight matrix (S×d).
pub fn unary_potentials<S: Scalar>(
    graph: &mut MtfGraph<S>,
    features: &Tensor<S>,
    weights: &Tensor<S>,
) -> Result<()> {
    let m = graph.node_count();
    let s_count = graph.states;
    if features.rank() != 2 || features.shape()[0] != m {
        return Err(Error::Shape(format!(
            "features must be {m}×d, got {:?}",
            features.shape()
        )));
    }
    let d = features.shape()[1];
    if weights.rank() != 2 || weights.shape() != [s_count, d] {
        return Err(Error::Shape(format!(
            "weights must be {s_count}×{d}, got {:?}",
            weights.shape()
        )));
    }
    let mut unary = vec![vec![S::zero(); s_count]; m];
    for (i, row) in unary.iter_mut().enumerate() {
        for (s, cell) in row.iter_mut().enumerate() {
            let mut dot = S::zero();
            for j in 0..d {
                dot += weights.at2(s, j) * features.at2(i, j);
            }
            *cell = -dot;
        }
    }
    graph.set_unary(unary)
}

/// Smoothness energy `β·(u_a − u_b)²` between two states.
pub fn pairwise_energy<S: Scalar>(
    beta: S,
    state_a: usize,
    state_b: usize,
    levels: &[S],
) -> Result<S> {
    if !(beta >= S::zero()) {
        return Err(Error::Config(format!("beta must be nonnegative, got {beta}")));
    }
    let (ua, ub) = (levels[state_a], levels[state_b]);
    Ok(beta * (ua - ub) * (ua - ub))
}

/// Unnormalized log joint: `−Σ_i φ_i(x_i) − Σ_{(i,j)∈E} ψ_ij(x_i, x_j)`.
pub fn joint_log_prob_unnormalized<S: Scalar>(
    graph: &MtfGraph<S>,
    assignment: &[usize],
) -> Result<S> {
    if assignment.len() != graph.node_count() {
        return Err(Error::Shape(format!(
            "assignment length {} for {} nodes",
            assignment.len(),
            graph.node_count()
        )));
    }
    if assignment.iter().any(|&s| s >= graph.states) {
        return Err(Error::State("assignment state out of range".into()));
    }
    let mut lp = S::zero();
    for (i, &s) in assignment.iter().enumerate() {
        lp -= graph.unary[i][s];
    }
    for (k, &(a, b)) in graph.edges.iter().enumerate() {
        lp -= pairwise_energy(graph.beta[k], assignment[a], assignment[b], &graph.levels)?;
    }
    Ok(lp)
}

/// Per-node state marginals; rows sum to 1.
#[derive(Clone, Debug, PartialEq)]
pub struct MarginalField<S> {
    rows: Vec<Vec<S>>,
}

impl<S: Scalar> MarginalField<S> {
    fn new(rows: Vec<Vec<S>>) -> Result<Self> {
        let field = Self { rows };
        field.validate()?;
        Ok(field)
    }

    pub fn rows(&self) -> &[Vec<S>] {
        &self.rows
    }

    /// Checks entries are nonnegative and each row sums to 1 within 1e-9.
    pub fn validate(&self) -> Result<()> {
        let tol = real::<S>(1e-9);
        for (i, row) in self.rows.iter().enumerate() {
            if row.iter().any(|&p| !(p >= S::zero()) || !p.is_finite()) {
                return Err(Error::Numerical(format!(
                    "marginal row {i} has a negative or non-finite entry"
                )));
            }
            let sum: S = row.iter().copied().sum();
            if (sum - S::one()).abs() > tol {
                return Err(Error::Numerical(format!(
                    "marginal row {i} sums to {sum}, expected 1"
                )));
            }
        }
        Ok(())
    }

    /// Expected level per node: `v_i = Σ_s marginals[i][s]·u_s`.
    pub fn expected_levels(&self, levels: &[S]) -> Vec<S> {
        self.rows
            .iter()
            .map(|row| row.iter().zip(levels).map(|(&p, &u)| p * u).sum())
            .collect()
    }
}

/// Streaming log-sum-exp accumulator.
struct LogAcc<S> {
    max: S,
    sum: S,
}

impl<S: Scalar> LogAcc<S> {
    fn new() -> Self {
        Self {
            max: S::neg_infinity(),
            sum: S::zero(),
        }
    }

    fn push(&mut self, x: S) {
        if x <= self.max {
            self.sum += (x - self.max).exp();
        } else {
            self.sum = if self.max == S::neg_infinity() {
                S::one()
            } else {
                self.sum * (self.max - x).exp() + S::one()
            };
            self.max = x;
        }
    }

    fn value(&self) -> S {
        if self.max == S::neg_infinity() {
            S::neg_infinity()
        } else {
            self.max + self.sum.ln()
        }
    }
}

fn log_sum_exp<S: Scalar>(values: &[S]) -> S {
    let mut acc = LogAcc::new();
    for &v in values {
        acc.push(v);
    }
    acc.value()
}

/// Exact marginals by exhaustive enumeration in log space.
///
/// Guarded to `S^M ≤ 10^6` assignments; use on oracles and small fields
/// only.
pub fn brute_force_marginals<S: Scalar>(graph: &MtfGraph<S>) -> Result<MarginalField<S>> {
    let m = graph.node_count();
    let s_count = graph.states;
    let mut total: u64 = 1;
    for _ in 0..m {
        total = total.saturating_mul(s_count as u64);
        if total > 1_000_000 {
            return Err(Error::Capacity(format!(
                "enumeration over {s_count}^{m} assignments exceeds the 1e6 guard"
            )));
        }
    }
    let mut z = LogAcc::new();
    let mut buckets: Vec<Vec<LogAcc<S>>> = (0..m)
        .map(|_| (0..s_count).map(|_| LogAcc::new()).collect())
        .collect();
    let mut assignment = vec![0usize; m];
    loop {
        let lp = joint_log_prob_unnormalized(graph, &assignment)?;
        z.push(lp);
        for (i, &s) in assignment.iter().enumerate() {
            buckets[i][s].push(lp);
        }
        // Odometer increment over assignments.
        let mut pos = 0;
        loop {
            if pos == m {
                let log_z = z.value();
                let rows = buckets
                    .iter()
                    .map(|row| row.iter().map(|acc| (acc.value() - log_z).exp()).collect())
                    .collect();
                return MarginalField::new(rows);
            }
            assignment[pos] += 1;
            if assignment[pos] < s_count {
                break;
            }
            assignment[pos] = 0;
            pos += 1;
        }
    }
}

/// Belief propagation settings; `Default` gives the documented defaults.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BpConfig {
    pub max_iters: usize,
    /// Stop when the largest absolute message change drops below this.
    pub tol: f64,
    /// Fraction of the previous message kept at each synchronous update.
    pub damping: f64,
}

impl Default for BpConfig {
    fn default() -> Self {
        Self {
            max_iters: 100,
            tol: 1e-6,
            damping: 0.5,
        }
    }
}

impl BpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be positive".into()));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::Config(format!("tol must be positive, got {}", self.tol)));
        }
        if !(0.0..1.0).contains(&self.damping) {
            return Err(Error::Config(format!(
                "damping must be in [0, 1), got {}",
                self.damping
            )));
        }
        Ok(())
    }
}

/// Result of one inference run; non-convergence on loopy graphs is reported
/// through the flag, not as an error.
#[derive(Clone, Debug)]
pub struct BpOutcome<S> {
    pub marginals: MarginalField<S>,
    pub converged: bool,
    pub iterations: usize,
}

/// Sum-product belief propagation with synchronous damped log-domain
/// updates. Exact on trees; best-effort with a convergence flag on loopy
/// graphs.
pub fn belief_propagation<S: Scalar>(
    graph: &MtfGraph<S>,
    config: &BpConfig,
) -> Result<BpOutcome<S>> {
    config.validate()?;
    let m = graph.node_count();
    let s_count = graph.states;
    let e_count = graph.edges.len();
    let uniform = -real::<S>(s_count as f64).ln();
    // Directed message `2k` runs a→b for edge k=(a,b); `2k+1` runs b→a.
    let mut msgs = vec![vec![uniform; s_count]; 2 * e_count];
    let mut next = msgs.clone();
    let damping = real::<S>(config.damping);
    let blend = S::one() - damping;
    let tol = real::<S>(config.tol);
    let mut converged = false;
    let mut iterations = 0;

    // Incoming directed-message ids per node, with the sending neighbor.
    let incoming: Vec<Vec<(usize, usize)>> = (0..m)
        .map(|i| {
            graph.adjacency[i]
                .iter()
                .map(|&(j, k)| (j, if graph.edges[k].0 == j { 2 * k } else { 2 * k + 1 }))
                .collect()
        })
        .collect();

    let mut scratch = vec![S::zero(); s_count];
    for iter in 1..=config.max_iters {
        iterations = iter;
        let mut max_change = S::zero();
        for (k, &(a, b)) in graph.edges.iter().enumerate() {
            for (dir, (src, dst)) in [(2 * k, (a, b)), (2 * k + 1, (b, a))] {
                // next[dir](x_dst) = LSE_{x_src} [ −φ_src(x_src)
                //   − β(u_src − u_dst)² + Σ_{in → src, sender ≠ dst} m(x_src) ]
                for (s_dst, slot) in scratch.iter_mut().enumerate() {
                    let mut acc = LogAcc::new();
                    for s_src in 0..s_count {
                        let mut term = -graph.unary[src][s_src]
                            - pairwise_energy(
                                graph.beta[k],
                                s_src,
                                s_dst,
                                &graph.levels,
                            )?;
                        for &(sender, id) in &incoming[src] {
                            if sender != dst {
                                term += msgs[id][s_src];
                            }
                        }
                        acc.push(term);
                    }
                    *slot = acc.value();
                }
                let shift = log_sum_exp(&scratch);
                for (s_dst, slot) in scratch.iter().enumerate() {
                    let new = damping * msgs[dir][s_dst] + blend * (*slot - shift);
                    next[dir][s_dst] = new;
                }
                let renorm = log_sum_exp(&next[dir]);
                for (s_dst, v) in next[dir].iter_mut().enumerate() {
                    *v -= renorm;
                    let change = (*v - msgs[dir][s_dst]).abs();
                    if change > max_change {
                        max_change = change;
                    }
                }
            }
        }
        std::mem::swap(&mut msgs, &mut next);
        if max_change < tol {
            converged = true;
            break;
        }
    }

    // Beliefs: softmax of −φ plus all incoming messages.
    let mut rows = Vec::with_capacity(m);
    for i in 0..m {
        let mut logits = vec![S::zero(); s_count];
        for (s, logit) in logits.iter_mut().enumerate() {
            *logit = -graph.unary[i][s];
            for &(_, id) in &incoming[i] {
                *logit += msgs[id][s];
            }
        }
        let z = log_sum_exp(&logits);
        rows.push(logits.into_iter().map(|l| (l - z).exp()).collect());
    }
    Ok(BpOutcome {
        marginals: MarginalField::new(rows)?,
        converged,
        iterations,
    })
}

/// Precomputed per-pixel interpolation weights for one graph layout and
/// image size; reusable across samples.
#[derive(Clone, Debug)]
pub struct RenderBasis<S> {
    height: usize,
    width: usize,
    /// `(H·W)×M` row-major, each pixel row normalized to sum 1.
    weights: Vec<S>,
    nodes: usize,
}

impl<S: Scalar> RenderBasis<S> {
    /// Gaussian kernel weights: node `(c, t)` sits at the center of its grid
    /// cell scaled into the image; `σ` is half the smaller inter-node pixel
    /// spacing.
    pub fn new(graph: &MtfGraph<S>, height: usize, width: usize) -> Result<Self> {
        if height < 8 || width < 8 {
            return Err(Error::Config(format!(
                "image must be at least 8x8, got {height}x{width}"
            )));
        }
        let m = graph.node_count();
        let cell_h = height as f64 / graph.channels() as f64;
        let cell_w = width as f64 / graph.segments() as f64;
        let sigma = 0.5 * cell_h.min(cell_w);
        let inv_two_sigma2 = real::<S>(1.0 / (2.0 * sigma * sigma));
        let centers: Vec<(S, S)> = graph
            .regions()
            .iter()
            .map(|r| {
                (
                    real::<S>((r.channel as f64 + 0.5) * cell_h),
                    real::<S>((r.segment as f64 + 0.5) * cell_w),
                )
            })
            .collect();
        let mut weights = vec![S::zero(); height * width * m];
        for py in 0..height {
            for px in 0..width {
                let y = real::<S>(py as f64 + 0.5);
                let x = real::<S>(px as f64 + 0.5);
                let row = &mut weights[(py * width + px) * m..][..m];
                let mut total = S::zero();
                for (j, &(cy, cx)) in centers.iter().enumerate() {
                    let d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
                    let w = (-d2 * inv_two_sigma2).exp();
                    row[j] = w;
                    total += w;
                }
                for w in row.iter_mut() {
                    *w /= total;
                }
            }
        }
        Ok(Self {
            height,
            width,
            weights,
            nodes: m,
        })
    }

    /// Interpolates per-node values in `[0, 1]` into an image.
    pub fn render(&self, values01: &[S]) -> Result<MtfImage<S>> {
        if values01.len() != self.nodes {
            return Err(Error::Shape(format!(
                "{} node values for a {}-node basis",
                values01.len(),
                self.nodes
            )));
        }
        let pixels = self
            .weights
            .chunks(self.nodes)
            .map(|row| row.iter().zip(values01).map(|(&w, &v)| w * v).sum())
            .collect();
        MtfImage::new(self.height, self.width, pixels)
    }
}

/// Maps expected levels from `[−1, 1]` to `[0, 1]`, clamping rounding spill.
pub fn levels_to_unit<S: Scalar>(expected: &[S]) -> Vec<S> {
    expected
        .iter()
        .map(|&v| ((v + S::one()) * real::<S>(0.5)).max(S::zero()).min(S::one()))
        .collect()
}

/// Renders node marginals as an H×W topographic image.
pub fn render_topographic_image<S: Scalar>(
    marginals: &MarginalField<S>,
    graph: &MtfGraph<S>,
    height: usize,
    width: usize,
) -> Result<MtfImage<S>> {
    let basis = RenderBasis::new(graph, height, width)?;
    let values = levels_to_unit(&marginals.expected_levels(graph.levels()));
    basis.render(&values)
}
