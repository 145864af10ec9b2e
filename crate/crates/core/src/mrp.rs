//! Markov reward processes: construction, ground truth and sample paths.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{param_err, Error, Result};
use crate::rng;

const ROW_SUM_TOL: f64 = 1e-12;
const REWARD_TOL: f64 = 1e-12;
const STATIONARY_RESIDUAL_TOL: f64 = 1e-10;

/// Version tag written into serialized MRPs.
pub const MRP_FORMAT_VERSION: u32 = 1;

/// A finite Markov reward process with deterministic transition rewards.
///
/// States are embedded as the columns of a `d × p` matrix. The transition
/// matrix is row-stochastic and `reward[(i, j)]` is the reward collected on the
/// transition `i → j`.
#[derive(Clone, Debug, PartialEq)]
pub struct MarkovRewardProcess {
    states: DMatrix<f64>,
    transition: DMatrix<f64>,
    reward: DMatrix<f64>,
    expected_rewards: DVector<f64>,
    discount: f64,
    reward_bound: f64,
    seed: u64,
}

impl MarkovRewardProcess {
    /// Validates and assembles an MRP. `r̄` is derived from `P` and `R`.
    pub fn new(
        states: DMatrix<f64>,
        transition: DMatrix<f64>,
        reward: DMatrix<f64>,
        discount: f64,
        reward_bound: f64,
        seed: u64,
    ) -> Result<Self> {
        let p = transition.nrows();
        if p == 0 {
            return param_err("an MRP needs at least one state");
        }
        if transition.ncols() != p || reward.shape() != (p, p) {
            return param_err(format!(
                "transition {:?} and reward {:?} must both be {p}x{p}",
                transition.shape(),
                reward.shape()
            ));
        }
        if states.ncols() != p || states.nrows() == 0 {
            return param_err(format!("state matrix {:?} must be d x {p} with d >= 1", states.shape()));
        }
        if !(0.0..1.0).contains(&discount) {
            return param_err(format!("discount {discount} must lie in [0, 1)"));
        }
        for i in 0..p {
            let row = transition.row(i);
            if row.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
                return param_err(format!("row {i} of P has a negative or non-finite entry"));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_SUM_TOL {
                return param_err(format!("row {i} of P sums to {s}, not 1"));
            }
        }
        if !(reward_bound >= 0.0) {
            return param_err("reward bound must be nonnegative");
        }
        if let Some(bad) = reward.iter().find(|r| !(r.abs() <= reward_bound)) {
            return param_err(format!("reward {bad} exceeds the bound {reward_bound}"));
        }
        let expected_rewards = DVector::from_fn(p, |i, _| (0..p).map(|j| transition[(i, j)] * reward[(i, j)]).sum());
        Ok(Self {
            states,
            transition,
            reward,
            expected_rewards,
            discount,
            reward_bound,
            seed,
        })
    }

    pub fn num_states(&self) -> usize {
        self.transition.nrows()
    }

    pub fn state_dim(&self) -> usize {
        self.states.nrows()
    }

    /// `d × p` embedding matrix; column `i` is state `i`.
    pub fn states(&self) -> &DMatrix<f64> {
        &self.states
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.transition
    }

    pub fn reward(&self) -> &DMatrix<f64> {
        &self.reward
    }

    /// `r̄[i] = Σ_j P[i][j] R[i][j]`.
    pub fn expected_rewards(&self) -> &DVector<f64> {
        &self.expected_rewards
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn reward_bound(&self) -> f64 {
        self.reward_bound
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Checks the invariants that [`MarkovRewardProcess::new`] enforces plus the
    /// `r̄` consistency, returning the first violation.
    pub fn validate(&self) -> Result<()> {
        let p = self.num_states();
        for i in 0..p {
            let r: f64 = (0..p).map(|j| self.transition[(i, j)] * self.reward[(i, j)]).sum();
            if (r - self.expected_rewards[i]).abs() > REWARD_TOL {
                return Err(Error::Consistency(format!("r̄[{i}] does not match P∘R")));
            }
        }
        Ok(())
    }

    pub fn to_record(&self) -> MrpRecord {
        MrpRecord {
            version: MRP_FORMAT_VERSION,
            num_states: self.num_states(),
            state_dim: self.state_dim(),
            discount: self.discount,
            reward_bound: self.reward_bound,
            seed: self.seed,
            transition: self.transition.transpose().as_slice().to_vec(),
            reward: self.reward.transpose().as_slice().to_vec(),
            states: self.states.as_slice().to_vec(),
        }
    }

    pub fn from_record(rec: &MrpRecord) -> Result<Self> {
        if rec.version != MRP_FORMAT_VERSION {
            return param_err(format!(
                "unsupported MRP format version {} (expected {MRP_FORMAT_VERSION})",
                rec.version
            ));
        }
        let (p, d) = (rec.num_states, rec.state_dim);
        if rec.transition.len() != p * p || rec.reward.len() != p * p || rec.states.len() != d * p {
            return param_err("MRP record arrays do not match its dimensions");
        }
        Self::new(
            DMatrix::from_column_slice(d, p, &rec.states),
            DMatrix::from_row_slice(p, p, &rec.transition),
            DMatrix::from_row_slice(p, p, &rec.reward),
            rec.discount,
            rec.reward_bound,
            rec.seed,
        )
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_record())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let rec: MrpRecord = serde_json::from_str(s)?;
        Self::from_record(&rec)
    }
}

/// Serialized form of an MRP: `P` and `R` row-major, `S` column-major.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MrpRecord {
    pub version: u32,
    pub num_states: usize,
    pub state_dim: usize,
    pub discount: f64,
    pub reward_bound: f64,
    pub seed: u64,
    pub transition: Vec<f64>,
    pub reward: Vec<f64>,
    pub states: Vec<f64>,
}

/// Which environment to generate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EnvKind {
    Synthetic { num_states: usize },
    Gridworld { side: usize },
}

/// Full recipe for a generated environment.
///
/// `embedding_scale` multiplies the standard Gaussian state embeddings; `None`
/// means `1/√d`, which keeps state norms near one as `d` grows.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnvSpec {
    pub kind: EnvKind,
    pub state_dim: usize,
    pub discount: f64,
    pub seed: u64,
    pub embedding_scale: Option<f64>,
}

impl EnvSpec {
    pub fn build(&self) -> Result<MarkovRewardProcess> {
        let scale = match self.embedding_scale {
            Some(s) if s > 0.0 && s.is_finite() => s,
            Some(s) => return param_err(format!("embedding scale {s} must be positive")),
            None if self.state_dim > 0 => 1.0 / (self.state_dim as f64).sqrt(),
            None => return param_err("state_dim must be positive"),
        };
        match self.kind {
            EnvKind::Synthetic { num_states } => {
                synthetic_with_scale(num_states, self.state_dim, self.discount, self.seed, scale)
            }
            EnvKind::Gridworld { side } => gridworld_with_scale(side, self.state_dim, self.discount, self.seed, scale),
        }
    }
}

fn check_common(state_dim: usize, discount: f64) -> Result<()> {
    if state_dim == 0 {
        return param_err("state_dim must be positive");
    }
    if !(0.0..1.0).contains(&discount) {
        return param_err(format!("discount {discount} must lie in [0, 1)"));
    }
    Ok(())
}

fn gaussian_embeddings(rng: &mut rng::Rng, d: usize, p: usize, scale: f64) -> DMatrix<f64> {
    // column by column so that state i's embedding does not depend on p
    let mut s = DMatrix::zeros(d, p);
    for j in 0..p {
        for i in 0..d {
            let z: f64 = StandardNormal.sample(rng);
            s[(i, j)] = scale * z;
        }
    }
    s
}

/// Synthetic ergodic MRP: flat-Dirichlet transition rows, uniform `[0, 1]`
/// rewards and Gaussian state embeddings scaled by `1/√d`.
pub fn synthetic_ergodic_mrp(
    num_states: usize,
    state_dim: usize,
    discount: f64,
    seed: u64,
) -> Result<MarkovRewardProcess> {
    EnvSpec {
        kind: EnvKind::Synthetic { num_states },
        state_dim,
        discount,
        seed,
        embedding_scale: None,
    }
    .build()
}

fn synthetic_with_scale(
    num_states: usize,
    state_dim: usize,
    discount: f64,
    seed: u64,
    scale: f64,
) -> Result<MarkovRewardProcess> {
    if num_states < 2 {
        return param_err("synthetic MRP needs at least 2 states");
    }
    check_common(state_dim, discount)?;
    let p = num_states;
    let mut transitions = rng::stream(seed, 0);
    let mut transition = DMatrix::zeros(p, p);
    for i in 0..p {
        // Dirichlet(1, ..., 1) as normalized Exp(1) draws
        let mut total = 0.0;
        for j in 0..p {
            let e: f64 = Exp1.sample(&mut transitions);
            // Exp1 can return exactly 0 with negligible probability; keep support open
            let e = e.max(f64::MIN_POSITIVE);
            transition[(i, j)] = e;
            total += e;
        }
        for j in 0..p {
            transition[(i, j)] /= total;
        }
        renormalize_row(&mut transition, i);
    }
    let mut rewards = rng::stream(seed, 1);
    let reward = DMatrix::from_fn(p, p, |_, _| rewards.random::<f64>());
    let mut embed = rng::stream(seed, 2);
    let states = gaussian_embeddings(&mut embed, state_dim, p, scale);
    MarkovRewardProcess::new(states, transition, reward, discount, 1.0, seed)
}

// pushes the rounding residue of a normalized row into its largest entry
fn renormalize_row(m: &mut DMatrix<f64>, i: usize) {
    let s: f64 = m.row(i).iter().sum();
    let (jmax, _) = m
        .row(i)
        .iter()
        .enumerate()
        .fold((0, f64::MIN), |acc, (j, &v)| if v > acc.1 { (j, v) } else { acc });
    m[(i, jmax)] += 1.0 - s;
}

/// Grid cell index with row 0 at the top.
pub fn grid_index(side: usize, row: usize, col: usize) -> usize {
    row * side + col
}

/// Goal cell of a `side × side` gridworld (top-right corner).
pub fn grid_goal(side: usize) -> usize {
    grid_index(side, 0, side - 1)
}

/// Start cell of a `side × side` gridworld (bottom-left corner).
pub fn grid_start(side: usize) -> usize {
    grid_index(side, side - 1, 0)
}

/// Gridworld MRP under the uniform random policy.
///
/// Moves into a wall stay in place. Entering the goal cell pays 1; from the goal
/// every action leads back to the start cell, which keeps the chain ergodic.
pub fn gridworld_mrp(side: usize, state_dim: usize, discount: f64, seed: u64) -> Result<MarkovRewardProcess> {
    EnvSpec {
        kind: EnvKind::Gridworld { side },
        state_dim,
        discount,
        seed,
        embedding_scale: None,
    }
    .build()
}

fn gridworld_with_scale(
    side: usize,
    state_dim: usize,
    discount: f64,
    seed: u64,
    scale: f64,
) -> Result<MarkovRewardProcess> {
    if side < 2 {
        return param_err("gridworld side must be at least 2");
    }
    check_common(state_dim, discount)?;
    let p = side * side;
    let goal = grid_goal(side);
    let start = grid_start(side);
    let mut transition = DMatrix::zeros(p, p);
    let mut reward = DMatrix::zeros(p, p);
    let moves: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];
    for row in 0..side {
        for col in 0..side {
            let s = grid_index(side, row, col);
            if s == goal {
                transition[(s, start)] = 1.0;
                continue;
            }
            for (dr, dc) in moves {
                let r = row as isize + dr;
                let c = col as isize + dc;
                let next = if r < 0 || c < 0 || r >= side as isize || c >= side as isize {
                    s
                } else {
                    grid_index(side, r as usize, c as usize)
                };
                transition[(s, next)] += 0.25;
                if next == goal {
                    reward[(s, next)] = 1.0;
                }
            }
        }
    }
    let mut embed = rng::stream(seed, 2);
    let states = gaussian_embeddings(&mut embed, state_dim, p, scale);
    MarkovRewardProcess::new(states, transition, reward, discount, 1.0, seed)
}

/// Stationary distribution `π` of an irreducible chain and its diagonal view.
#[derive(Clone, Debug, PartialEq)]
pub struct StationaryDistribution {
    pi: DVector<f64>,
    residual: f64,
}

impl StationaryDistribution {
    pub fn pi(&self) -> &DVector<f64> {
        &self.pi
    }

    /// `D_π` as a dense matrix.
    pub fn diag(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.pi)
    }

    /// `‖πᵀP − πᵀ‖∞` at construction.
    pub fn residual(&self) -> f64 {
        self.residual
    }
}

/// Stationary distribution by Grassmann–Taksar–Heyman state reduction.
///
/// GTH uses only additions of nonnegative quantities, so the result is accurate
/// to working precision even for slowly mixing chains. A zero pivot means the
/// chain is reducible.
pub fn stationary_distribution(mrp: &MarkovRewardProcess) -> Result<StationaryDistribution> {
    stationary_of(mrp.transition())
}

pub(crate) fn stationary_of(transition: &DMatrix<f64>) -> Result<StationaryDistribution> {
    let p = transition.nrows();
    let mut a = transition.clone();
    for k in (1..p).rev() {
        let s: f64 = (0..k).map(|j| a[(k, j)]).sum();
        if !(s > 0.0) {
            return Err(Error::Numerical(format!(
                "state {k} cannot reach lower-indexed states; chain is reducible"
            )));
        }
        for i in 0..k {
            a[(i, k)] /= s;
        }
        for i in 0..k {
            let aik = a[(i, k)];
            if aik == 0.0 {
                continue;
            }
            for j in 0..k {
                a[(i, j)] += aik * a[(k, j)];
            }
        }
    }
    let mut pi = DVector::zeros(p);
    pi[0] = 1.0;
    for j in 1..p {
        pi[j] = a[(0, j)] + (1..j).map(|i| pi[i] * a[(i, j)]).sum::<f64>();
    }
    let total = pi.sum();
    pi /= total;

    let residual = (transition.transpose() * &pi - &pi).amax();
    if !(residual <= STATIONARY_RESIDUAL_TOL) {
        return Err(Error::Numerical(format!(
            "stationary distribution residual {residual:.3e} exceeds {STATIONARY_RESIDUAL_TOL:.0e}"
        )));
    }
    Ok(StationaryDistribution { pi, residual })
}

/// Value function `V = (I − γP)⁻¹ r̄`.
pub fn value_function(mrp: &MarkovRewardProcess) -> Result<DVector<f64>> {
    let p = mrp.num_states();
    let a = DMatrix::identity(p, p) - mrp.transition() * mrp.discount();
    a.lu()
        .solve(mrp.expected_rewards())
        .ok_or_else(|| Error::Numerical("I − γP is singular".into()))
}

/// Stationary distribution and value function, computed once per MRP.
#[derive(Clone, Debug)]
pub struct GroundTruth {
    pub stationary: StationaryDistribution,
    pub values: DVector<f64>,
}

impl GroundTruth {
    pub fn compute(mrp: &MarkovRewardProcess) -> Result<Self> {
        Ok(Self {
            stationary: stationary_distribution(mrp)?,
            values: value_function(mrp)?,
        })
    }

    pub fn pi(&self) -> &DVector<f64> {
        self.stationary.pi()
    }
}

/// `n` transitions `(s_i, r_i, s'_i)` read off a single on-policy path.
///
/// When `tail_dropped` is set, the next-state of the last transition has been
/// removed from the feature bookkeeping (pathwise LSTD): its column in
/// `next_states` is zero and it contributes nothing to `V̂`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionDataset {
    states: DMatrix<f64>,
    rewards: DVector<f64>,
    next_states: DMatrix<f64>,
    state_ids: Vec<usize>,
    next_state_ids: Vec<usize>,
    seed: u64,
    tail_dropped: bool,
}

impl TransitionDataset {
    /// Builds the dataset of the path `path[0] → path[1] → … → path[n]`.
    pub fn from_path(mrp: &MarkovRewardProcess, path: &[usize], seed: u64) -> Result<Self> {
        if path.len() < 2 {
            return param_err("a path needs at least two states (one transition)");
        }
        let p = mrp.num_states();
        if let Some(&bad) = path.iter().find(|&&s| s >= p) {
            return param_err(format!("state id {bad} out of range for {p} states"));
        }
        let n = path.len() - 1;
        let d = mrp.state_dim();
        let mut states = DMatrix::zeros(d, n);
        let mut next_states = DMatrix::zeros(d, n);
        for i in 0..n {
            states.set_column(i, &mrp.states().column(path[i]));
            next_states.set_column(i, &mrp.states().column(path[i + 1]));
        }
        let rewards = DVector::from_fn(n, |i, _| mrp.reward()[(path[i], path[i + 1])]);
        Ok(Self {
            states,
            rewards,
            next_states,
            state_ids: path[..n].to_vec(),
            next_state_ids: path[1..].to_vec(),
            seed,
            tail_dropped: false,
        })
    }

    pub fn len(&self) -> usize {
        self.state_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.state_ids.is_empty()
    }

    /// `d × n` sampled states `X_n`.
    pub fn states(&self) -> &DMatrix<f64> {
        &self.states
    }

    /// `d × n` sampled next states `X'_n` (last column zero after pathwise adjustment).
    pub fn next_states(&self) -> &DMatrix<f64> {
        &self.next_states
    }

    pub fn rewards(&self) -> &DVector<f64> {
        &self.rewards
    }

    pub fn state_ids(&self) -> &[usize] {
        &self.state_ids
    }

    /// Next-state ids; the last entry is still recorded after pathwise adjustment
    /// but see [`TransitionDataset::next_state_id`].
    pub fn next_state_ids(&self) -> &[usize] {
        &self.next_state_ids
    }

    /// Next state of transition `i` as seen by the learner.
    pub fn next_state_id(&self, i: usize) -> Option<usize> {
        if self.tail_dropped && i + 1 == self.len() {
            None
        } else {
            Some(self.next_state_ids[i])
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn tail_dropped(&self) -> bool {
        self.tail_dropped
    }

    /// Occurrence counts `c(s)` in `X_n` and `c'(s)` in `X'_n` over all `p` states.
    pub fn visit_counts(&self, num_states: usize) -> (Vec<usize>, Vec<usize>) {
        let mut c = vec![0; num_states];
        let mut c_next = vec![0; num_states];
        for i in 0..self.len() {
            c[self.state_ids[i]] += 1;
            if let Some(s) = self.next_state_id(i) {
                c_next[s] += 1;
            }
        }
        (c, c_next)
    }

    pub(crate) fn with_tail_dropped(&self) -> Self {
        let mut out = self.clone();
        let n = out.len();
        out.next_states.column_mut(n - 1).fill(0.0);
        out.tail_dropped = true;
        out
    }
}

/// Samples `n` on-policy transitions, starting from a state drawn from `π`.
pub fn sample_path(mrp: &MarkovRewardProcess, n: usize, seed: u64) -> Result<TransitionDataset> {
    let pi = stationary_distribution(mrp)?;
    sample_path_from(mrp, pi.pi(), n, seed)
}

/// As [`sample_path`] with a precomputed initial distribution.
pub fn sample_path_from(
    mrp: &MarkovRewardProcess,
    initial: &DVector<f64>,
    n: usize,
    seed: u64,
) -> Result<TransitionDataset> {
    if n == 0 {
        return param_err("a dataset needs at least one transition");
    }
    let p = mrp.num_states();
    if initial.len() != p {
        return param_err("initial distribution has the wrong length");
    }
    let mut rng = rng::seeded(seed);
    let cumulative = |row: &[f64]| {
        let mut acc = 0.0;
        row.iter()
            .map(|&x| {
                acc += x;
                acc
            })
            .collect::<Vec<f64>>()
    };
    let init_cdf = cumulative(initial.as_slice());
    let rows: Vec<Vec<f64>> = (0..p)
        .map(|i| cumulative(&mrp.transition().row(i).iter().copied().collect::<Vec<_>>()))
        .collect();
    let draw = |cdf: &[f64], u: f64| -> usize {
        let total = *cdf.last().unwrap();
        let idx = cdf.partition_point(|&c| c <= u * total);
        idx.min(cdf.len() - 1)
    };
    let mut path = Vec::with_capacity(n + 1);
    let mut s = draw(&init_cdf, rng.random::<f64>());
    path.push(s);
    for _ in 0..n {
        s = draw(&rows[s], rng.random::<f64>());
        path.push(s);
    }
    TransitionDataset::from_path(mrp, &path, seed)
}
