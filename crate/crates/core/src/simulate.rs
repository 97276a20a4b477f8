//! Exact simulation of the network's Markov jump process (direct method)
//! plus the path functionals built on top of it: scaling, occupation
//! measures, windowed time averages and the exit-time diagnostics.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::Serialize;

use crate::crn::{falling_factorial, falling_factorial_f64, CrnSpec, State};
use crate::error::{CrnError, Result};
use crate::numeric::NeumaierSum;

/// Generator used for every simulation stream.
pub type SimRng = ChaCha8Rng;

/// Default cap on the number of events in a single run.
pub const DEFAULT_EVENT_BUDGET: u64 = 1_000_000_000;

/// Full recomputation period of the running total rate.
const REFRESH_PERIOD: u64 = 1 << 16;

/// Stream `replica` of the master seed. Streams never overlap, so replicas
/// can run in any order or in parallel.
pub fn replica_rng(master_seed: u64, replica: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(replica);
    rng
}

/// Mass-action rate of the reaction `i → j` in state `x`:
/// `N κ_0j` for inputs, `κ_ij x_i^(k_i)` otherwise.
pub fn reaction_rate(spec: &CrnSpec, big_n: u64, x: &State, i: usize, j: usize) -> f64 {
    if i == 0 {
        big_n as f64 * spec.rate(0, j)
    } else {
        spec.rate(i, j) * falling_factorial_f64(x.count(i), spec.arity(i))
    }
}

/// Receives the path as it is generated.
pub trait Observer {
    fn start(&mut self, _x0: &[u64]) {}
    /// Called after the event has been applied; `state` is the new state.
    fn event(&mut self, time: f64, from: usize, to: usize, state: &[u64]);
    fn finish(&mut self, _t_end: f64, _state: &[u64]) {}
}

impl Observer for () {
    fn event(&mut self, _: f64, _: usize, _: usize, _: &[u64]) {}
}

impl<A: Observer, B: Observer> Observer for (A, B) {
    fn start(&mut self, x0: &[u64]) {
        self.0.start(x0);
        self.1.start(x0);
    }
    fn event(&mut self, time: f64, from: usize, to: usize, state: &[u64]) {
        self.0.event(time, from, to, state);
        self.1.event(time, from, to, state);
    }
    fn finish(&mut self, t_end: f64, state: &[u64]) {
        self.0.finish(t_end, state);
        self.1.finish(t_end, state);
    }
}

impl<O: Observer + ?Sized> Observer for &mut O {
    fn start(&mut self, x0: &[u64]) {
        (**self).start(x0)
    }
    fn event(&mut self, time: f64, from: usize, to: usize, state: &[u64]) {
        (**self).event(time, from, to, state)
    }
    fn finish(&mut self, t_end: f64, state: &[u64]) {
        (**self).finish(t_end, state)
    }
}

/// One jump of the chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jump {
    pub sojourn: f64,
    pub from: usize,
    pub to: usize,
}

/// Incremental direct-method sampler for one network at one scaling `N`.
#[derive(Debug, Clone)]
pub struct Simulator<'a> {
    spec: &'a CrnSpec,
    reactions: Vec<(usize, usize)>,
    constants: Vec<f64>,
    by_source: Vec<Vec<usize>>,
    propensity: Vec<f64>,
    total: f64,
    state: Vec<u64>,
    since_refresh: u64,
}

impl<'a> Simulator<'a> {
    pub fn new(spec: &'a CrnSpec, big_n: u64, x0: &State) -> Result<Self> {
        if big_n == 0 {
            return Err(CrnError::InvalidArgument("N must be at least 1".into()));
        }
        if x0.len() != spec.n() {
            return Err(CrnError::DimensionMismatch {
                expected: spec.n(),
                got: x0.len(),
            });
        }
        for (a, &k) in x0.0.iter().zip(spec.arities()) {
            falling_factorial(*a, k)?;
        }
        let reactions = spec.reactions();
        let constants = reactions
            .iter()
            .map(|&(i, j)| {
                if i == 0 {
                    big_n as f64 * spec.rate(0, j)
                } else {
                    spec.rate(i, j)
                }
            })
            .collect();
        let mut by_source = vec![Vec::new(); spec.n() + 1];
        for (r, &(i, _)) in reactions.iter().enumerate() {
            by_source[i].push(r);
        }
        let mut sim = Self {
            spec,
            reactions,
            constants,
            by_source,
            propensity: Vec::new(),
            total: 0.0,
            state: x0.0.clone(),
            since_refresh: 0,
        };
        sim.propensity = vec![0.0; sim.reactions.len()];
        sim.refresh();
        Ok(sim)
    }

    fn propensity_of(&self, r: usize) -> f64 {
        let (i, _) = self.reactions[r];
        if i == 0 {
            self.constants[r]
        } else {
            self.constants[r] * falling_factorial_f64(self.state[i - 1], self.spec.arity(i))
        }
    }

    fn refresh(&mut self) {
        for r in 0..self.reactions.len() {
            self.propensity[r] = self.propensity_of(r);
        }
        self.total = self.propensity.iter().sum();
        self.since_refresh = 0;
    }

    fn update_source(&mut self, species: usize) {
        for idx in 0..self.by_source[species].len() {
            let r = self.by_source[species][idx];
            let p = self.propensity_of(r);
            self.total += p - self.propensity[r];
            self.propensity[r] = p;
        }
    }

    pub fn state(&self) -> &[u64] {
        &self.state
    }

    /// Total jump rate `Λ(x)` of the current state.
    pub fn total_rate(&self) -> f64 {
        self.total
    }

    /// Draws a sojourn time and a reaction, and applies the reaction.
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<Jump> {
        let (sojourn, u) = self.draw(rng);
        let (from, to) = self.apply(u)?;
        Ok(Jump { sojourn, from, to })
    }

    // Sojourn time and the uniform used for reaction selection. Drawing
    // before applying lets `run` stop at the horizon without mutating.
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        let sojourn = rng.sample::<f64, _>(Exp1) / self.total;
        let u = rng.random::<f64>();
        (sojourn, u)
    }

    fn apply(&mut self, u: f64) -> Result<(usize, usize)> {
        let target = u * self.total;
        let mut acc = 0.0;
        let mut chosen = None;
        for (r, &p) in self.propensity.iter().enumerate() {
            if p > 0.0 {
                acc += p;
                chosen = Some(r);
                if target < acc {
                    break;
                }
            }
        }
        // `chosen` falls back to the last active reaction when rounding in the
        // running total leaves `target` past the cumulative sum.
        let r = chosen.ok_or(CrnError::InvalidArgument("no active reaction".into()))?;
        let (i, j) = self.reactions[r];
        if i != 0 {
            self.state[i - 1] -= self.spec.arity(i) as u64;
        }
        if j != 0 {
            let x = self.state[j - 1] + self.spec.arity(j) as u64;
            falling_factorial(x, self.spec.arity(j))?;
            self.state[j - 1] = x;
        }
        self.since_refresh += 1;
        if self.since_refresh >= REFRESH_PERIOD {
            self.refresh();
        } else {
            if i != 0 {
                self.update_source(i);
            }
            if j != 0 {
                self.update_source(j);
            }
        }
        Ok((i, j))
    }
}

/// One jump from `x`: sojourn time, reaction and the next state.
pub fn step<R: Rng + ?Sized>(
    spec: &CrnSpec,
    big_n: u64,
    x: &State,
    rng: &mut R,
) -> Result<(f64, (usize, usize), State)> {
    let mut sim = Simulator::new(spec, big_n, x)?;
    let jump = sim.step(rng)?;
    Ok((jump.sojourn, (jump.from, jump.to), State(sim.state.clone())))
}

/// Summary of a finished run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub events: u64,
    pub t_end: f64,
    pub final_state: State,
}

/// Runs the chain on `[0, t_end]`, streaming every event into `observer`.
pub fn run<R: Rng + ?Sized, O: Observer + ?Sized>(
    spec: &CrnSpec,
    big_n: u64,
    x0: &State,
    t_end: f64,
    rng: &mut R,
    event_budget: u64,
    observer: &mut O,
) -> Result<RunSummary> {
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(CrnError::InvalidArgument(format!(
            "time horizon must be positive, got {t_end}"
        )));
    }
    let mut sim = Simulator::new(spec, big_n, x0)?;
    observer.start(&x0.0);
    let mut t = 0.0;
    let mut events = 0u64;
    loop {
        let (sojourn, u) = sim.draw(rng);
        if t + sojourn > t_end {
            break;
        }
        if events >= event_budget {
            return Err(CrnError::EventBudgetExceeded(event_budget));
        }
        t += sojourn;
        let (from, to) = sim.apply(u)?;
        events += 1;
        observer.event(t, from, to, &sim.state);
    }
    observer.finish(t_end, &sim.state);
    Ok(RunSummary {
        events,
        t_end,
        final_state: State(sim.state),
    })
}

/// Complete event log of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    n: usize,
    big_n: u64,
    x0: State,
    t_end: f64,
    times: Vec<f64>,
    reactions: Vec<(u32, u32)>,
    /// State after each event, `n` entries per event.
    states: Vec<u64>,
}

/// A single logged event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventRecord<'a> {
    pub time: f64,
    pub from: usize,
    pub to: usize,
    pub state: &'a [u64],
}

impl Trajectory {
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn big_n(&self) -> u64 {
        self.big_n
    }
    pub fn x0(&self) -> &State {
        &self.x0
    }
    pub fn t_end(&self) -> f64 {
        self.t_end
    }
    pub fn len(&self) -> usize {
        self.times.len()
    }
    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn event(&self, e: usize) -> EventRecord<'_> {
        let (from, to) = self.reactions[e];
        EventRecord {
            time: self.times[e],
            from: from as usize,
            to: to as usize,
            state: &self.states[e * self.n..(e + 1) * self.n],
        }
    }

    pub fn events(&self) -> impl Iterator<Item = EventRecord<'_>> + '_ {
        (0..self.len()).map(move |e| self.event(e))
    }

    /// State on the `p`-th constancy interval (`p = 0` is the initial state).
    pub fn piece(&self, p: usize) -> &[u64] {
        if p == 0 {
            &self.x0.0
        } else {
            &self.states[(p - 1) * self.n..p * self.n]
        }
    }

    /// Every visited state, starting with `x0`.
    pub fn visited(&self) -> impl Iterator<Item = &[u64]> + '_ {
        (0..=self.len()).map(move |p| self.piece(p))
    }

    pub fn final_state(&self) -> &[u64] {
        self.piece(self.len())
    }

    /// Right-continuous state at time `t`.
    pub fn state_at(&self, t: f64) -> &[u64] {
        let p = self.times.partition_point(|&s| s <= t);
        self.piece(p)
    }

    /// CSV with header `t,i,j,x_1,…,x_n`, one row per event.
    pub fn write_events_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "t,i,j")?;
        for i in 1..=self.n {
            write!(w, ",x_{i}")?;
        }
        writeln!(w)?;
        for ev in self.events() {
            write!(w, "{},{},{}", ev.time, ev.from, ev.to)?;
            for x in ev.state {
                write!(w, ",{x}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Observer that keeps the full event log.
#[derive(Debug)]
pub struct TrajectoryRecorder {
    traj: Trajectory,
}

impl TrajectoryRecorder {
    pub fn new(big_n: u64, x0: &State) -> Self {
        Self {
            traj: Trajectory {
                n: x0.len(),
                big_n,
                x0: x0.clone(),
                t_end: 0.0,
                times: Vec::new(),
                reactions: Vec::new(),
                states: Vec::new(),
            },
        }
    }

    pub fn into_trajectory(self) -> Trajectory {
        self.traj
    }
}

impl Observer for TrajectoryRecorder {
    fn event(&mut self, time: f64, from: usize, to: usize, state: &[u64]) {
        self.traj.times.push(time);
        self.traj.reactions.push((from as u32, to as u32));
        self.traj.states.extend_from_slice(state);
    }

    fn finish(&mut self, t_end: f64, _state: &[u64]) {
        self.traj.t_end = t_end;
    }
}

/// Observer that samples the state on the grid `0, dt, 2dt, …, ≤ t_end`.
#[derive(Debug)]
pub struct GridRecorder {
    dt: f64,
    next: usize,
    last: Vec<u64>,
    pub times: Vec<f64>,
    pub states: Vec<Vec<u64>>,
}

impl GridRecorder {
    pub fn new(dt: f64) -> Self {
        assert!(dt > 0.0, "grid step must be positive");
        Self {
            dt,
            next: 0,
            last: Vec::new(),
            times: Vec::new(),
            states: Vec::new(),
        }
    }

    fn grid_time(&self, m: usize) -> f64 {
        m as f64 * self.dt
    }

    /// CSV with header `t,x_1,…,x_n`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "t")?;
        for i in 1..=self.last.len() {
            write!(w, ",x_{i}")?;
        }
        writeln!(w)?;
        for (t, x) in self.times.iter().zip(&self.states) {
            write!(w, "{t}")?;
            for v in x {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

impl Observer for GridRecorder {
    fn start(&mut self, x0: &[u64]) {
        self.last = x0.to_vec();
    }

    fn event(&mut self, time: f64, _from: usize, _to: usize, state: &[u64]) {
        while self.grid_time(self.next) < time {
            self.times.push(self.grid_time(self.next));
            self.states.push(self.last.clone());
            self.next += 1;
        }
        self.last.copy_from_slice(state);
    }

    fn finish(&mut self, t_end: f64, _state: &[u64]) {
        // tolerance absorbs rounding in m * dt at the right end point
        while self.grid_time(self.next) <= t_end * (1.0 + 1e-12) {
            self.times.push(self.grid_time(self.next));
            self.states.push(self.last.clone());
            self.next += 1;
        }
    }
}

/// Full-log simulation with the default event budget; a pure function of
/// `(spec, N, x0, t_end, seed)`.
pub fn simulate(
    spec: &CrnSpec,
    big_n: u64,
    x0: &State,
    t_end: f64,
    seed: u64,
) -> Result<Trajectory> {
    let mut rng = replica_rng(seed, 0);
    simulate_with_rng(spec, big_n, x0, t_end, &mut rng, DEFAULT_EVENT_BUDGET)
}

pub fn simulate_with_rng<R: Rng + ?Sized>(
    spec: &CrnSpec,
    big_n: u64,
    x0: &State,
    t_end: f64,
    rng: &mut R,
    event_budget: u64,
) -> Result<Trajectory> {
    let mut rec = TrajectoryRecorder::new(big_n, x0);
    run(spec, big_n, x0, t_end, rng, event_budget, &mut rec)?;
    Ok(rec.into_trajectory())
}

/// Piecewise-constant path with coordinate `i` divided by `N^(1/k_i)`.
///
/// Piece `p` holds on `[knots[p], knots[p+1])`, the last piece up to `t_end`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledTrajectory {
    n: usize,
    t_end: f64,
    knots: Vec<f64>,
    values: Vec<f64>,
}

impl ScaledTrajectory {
    /// Builds a path directly from knots and row-major values.
    pub fn from_pieces(n: usize, t_end: f64, knots: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if knots.is_empty() || knots[0] != 0.0 {
            return Err(CrnError::InvalidArgument("first knot must be 0".into()));
        }
        if values.len() != knots.len() * n {
            return Err(CrnError::DimensionMismatch {
                expected: knots.len() * n,
                got: values.len(),
            });
        }
        if knots.windows(2).any(|w| w[1] < w[0]) || *knots.last().unwrap() > t_end {
            return Err(CrnError::InvalidArgument(
                "knots must be non-decreasing and within [0, t_end]".into(),
            ));
        }
        Ok(Self {
            n,
            t_end,
            knots,
            values,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn t_end(&self) -> f64 {
        self.t_end
    }
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }
    pub fn pieces(&self) -> usize {
        self.knots.len()
    }

    /// Scaled state on piece `p`.
    pub fn piece(&self, p: usize) -> &[f64] {
        &self.values[p * self.n..(p + 1) * self.n]
    }

    /// `[start, end)` of piece `p`.
    pub fn interval(&self, p: usize) -> (f64, f64) {
        let end = self.knots.get(p + 1).copied().unwrap_or(self.t_end);
        (self.knots[p], end)
    }

    /// Right-continuous value at `t`.
    pub fn value_at(&self, t: f64) -> &[f64] {
        let p = self.knots.partition_point(|&s| s <= t).max(1) - 1;
        self.piece(p)
    }

    /// `∫_a^b h(X̄(s)) ds`, exact for the piecewise-constant path.
    pub fn integrate(&self, a: f64, b: f64, mut h: impl FnMut(&[f64]) -> f64) -> f64 {
        let a = a.max(0.0);
        let b = b.min(self.t_end);
        if b <= a {
            return 0.0;
        }
        let first = self.knots.partition_point(|&s| s <= a).max(1) - 1;
        let mut sum = NeumaierSum::default();
        for p in first..self.pieces() {
            let (lo, hi) = self.interval(p);
            if lo >= b {
                break;
            }
            let len = hi.min(b) - lo.max(a);
            if len > 0.0 {
                sum.add(len * h(self.piece(p)));
            }
        }
        sum.total()
    }
}

/// Divides coordinate `i` by `N^(1/k_i)`.
pub fn scale_trajectory(traj: &Trajectory, spec: &CrnSpec) -> ScaledTrajectory {
    let n = traj.n();
    let factors: Vec<f64> = (1..=n).map(|i| spec.scale_factor(traj.big_n(), i)).collect();
    let mut knots = Vec::with_capacity(traj.len() + 1);
    knots.push(0.0);
    knots.extend_from_slice(traj.times());
    let mut values = Vec::with_capacity((traj.len() + 1) * n);
    for x in traj.visited() {
        values.extend(x.iter().zip(&factors).map(|(&v, f)| v as f64 / f));
    }
    ScaledTrajectory {
        n,
        t_end: traj.t_end(),
        knots,
        values,
    }
}

/// `(1/(T−η)) ∫_η^T X̄_i(s) ds` for species `i ∈ 1..=n`.
pub fn time_average(straj: &ScaledTrajectory, i: usize, eta: f64, t: f64) -> Result<f64> {
    if !(eta < t) {
        return Err(CrnError::EmptyWindow { eta, t });
    }
    if eta < 0.0 || t > straj.t_end() * (1.0 + 1e-12) {
        return Err(CrnError::InvalidArgument(format!(
            "window [{eta}, {t}] is outside [0, {}]",
            straj.t_end()
        )));
    }
    if i == 0 || i > straj.n() {
        return Err(CrnError::UnknownIndex(i));
    }
    Ok(straj.integrate(eta, t, |x| x[i - 1]) / (t - eta))
}

/// One atom of an occupation measure.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Atom {
    /// Midpoint of the constancy interval.
    pub s: f64,
    pub x: Vec<f64>,
    /// Interval length.
    pub w: f64,
}

/// Time-weighted empirical measure of the scaled path on `[0, t_end]`.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupationMeasure {
    pub atoms: Vec<Atom>,
    pub total_mass: f64,
}

impl OccupationMeasure {
    /// `Σ w g(s, x)`: exact for time-independent `g`, midpoint rule in time
    /// otherwise.
    pub fn integrate(&self, mut g: impl FnMut(f64, &[f64]) -> f64) -> f64 {
        let mut sum = NeumaierSum::default();
        for a in &self.atoms {
            sum.add(a.w * g(a.s, &a.x));
        }
        sum.total()
    }

    /// JSONL, one `{"s": …, "x": […], "w": …}` record per atom.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for a in &self.atoms {
            serde_json::to_writer(&mut w, a)?;
            writeln!(w)?;
        }
        Ok(())
    }
}

pub fn occupation_measure(straj: &ScaledTrajectory) -> OccupationMeasure {
    let mut atoms = Vec::with_capacity(straj.pieces());
    let mut mass = NeumaierSum::default();
    for p in 0..straj.pieces() {
        let (lo, hi) = straj.interval(p);
        let w = hi - lo;
        if w > 0.0 {
            mass.add(w);
            atoms.push(Atom {
                s: 0.5 * (lo + hi),
                x: straj.piece(p).to_vec(),
                w,
            });
        }
    }
    OccupationMeasure {
        atoms,
        total_mass: mass.total(),
    }
}

/// First hitting times of the lower and upper containment thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExitTimes {
    /// First `t` with `min_i x_i^(k_i) / (m_i N) ≤ 1`.
    pub lower: Option<f64>,
    /// First `t` with `max_i x_i^(k_i) / (M_i N) ≥ 1`.
    pub upper: Option<f64>,
}

impl ExitTimes {
    /// `H ∧ T` if either was reached.
    pub fn first(&self) -> Option<f64> {
        match (self.lower, self.upper) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }
}

/// Scans the unscaled path for the stopping times of the containment box
/// `m_i N < x_i^(k_i) < M_i N`; equality counts as a hit.
pub fn exit_time_diagnostics(
    traj: &Trajectory,
    spec: &CrnSpec,
    lower: &[f64],
    upper: &[f64],
) -> Result<ExitTimes> {
    let n = spec.n();
    if lower.len() != n || upper.len() != n {
        return Err(CrnError::DimensionMismatch {
            expected: n,
            got: lower.len().min(upper.len()),
        });
    }
    if lower
        .iter()
        .zip(upper)
        .any(|(&m, &mm)| !(m > 0.0 && m < mm))
    {
        return Err(CrnError::InvalidArgument(
            "bounds must satisfy 0 < m_i < M_i".into(),
        ));
    }
    let big_n = traj.big_n() as f64;
    let mut out = ExitTimes {
        lower: None,
        upper: None,
    };
    for p in 0..=traj.len() {
        let t = if p == 0 { 0.0 } else { traj.times()[p - 1] };
        let x = traj.piece(p);
        let mut lo_hit = false;
        let mut hi_hit = false;
        for i in 0..n {
            let ff = falling_factorial_f64(x[i], spec.arities()[i]);
            lo_hit |= ff / (lower[i] * big_n) <= 1.0;
            hi_hit |= ff / (upper[i] * big_n) >= 1.0;
        }
        if lo_hit && out.lower.is_none() {
            out.lower = Some(t);
        }
        if hi_hit && out.upper.is_none() {
            out.upper = Some(t);
        }
        if out.lower.is_some() && out.upper.is_some() {
            break;
        }
    }
    Ok(out)
}
