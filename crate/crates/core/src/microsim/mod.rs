//! Event-driven simulation of the N-server first-come-first-served queue.
//!
//! The simulator is exact: there is no time step. Every service spell is
//! kept, so the age measure can be rebuilt at any time and the departure
//! compensator can be integrated afterwards (see [`martingale`]).

pub mod martingale;

pub use martingale::{
    compensator, compensator_unit_exact, compensator_unit_grid, departure_sum, eval_age_functional, martingale,
    representation_residual, shift_consistency_check,
};

use crate::dists::{ArrivalSpec, DistError, ServiceDistribution};
use crate::rng;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};
use std::io::Write;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error("event budget of {0} exceeded")]
    EventBudget(usize),
    #[error("hazard is not finite at occupied age {age} (time {time})")]
    UnboundedHazard { age: f64, time: f64 },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualSampling {
    /// Total requirement drawn from the service law conditioned on exceeding
    /// the initial age.
    #[default]
    ConditionalOnAge,
    /// Remaining requirement drawn afresh from the service law.
    Fresh,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitialCondition {
    /// Customers present at time 0, in service or waiting.
    pub x0: usize,
    /// Ages of the `min(x0, N)` customers in service.
    pub initial_ages: Vec<f64>,
    #[serde(default)]
    pub residual_sampling: ResidualSampling,
}

impl InitialCondition {
    pub fn empty() -> Self {
        InitialCondition { x0: 0, initial_ages: Vec::new(), residual_sampling: ResidualSampling::default() }
    }

    /// `x0` customers, those in service with ages from the stationary age law.
    pub fn stationary<R: Rng + ?Sized>(dist: &ServiceDistribution, n: usize, x0: usize, rng: &mut R) -> Self {
        let ages = (0..x0.min(n)).map(|_| dist.sample_stationary_age(rng)).collect();
        InitialCondition { x0, initial_ages: ages, residual_sampling: ResidualSampling::default() }
    }
}

#[derive(Clone, Debug)]
pub struct SimConfig {
    pub n: usize,
    pub arrival: ArrivalSpec,
    pub service: Arc<ServiceDistribution>,
    pub horizon: f64,
    pub initial: InitialCondition,
    pub seed: u64,
    pub replicate: u64,
    pub snapshot_times: Vec<f64>,
    pub max_events: usize,
    /// Keep the full event log (off saves memory in large ensembles).
    pub record_events: bool,
}

impl SimConfig {
    pub fn new(n: usize, arrival: ArrivalSpec, service: Arc<ServiceDistribution>, horizon: f64) -> Self {
        SimConfig {
            n,
            arrival,
            service,
            horizon,
            initial: InitialCondition::empty(),
            seed: 0,
            replicate: 0,
            snapshot_times: Vec::new(),
            max_events: 50_000_000,
            record_events: true,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.n == 0 {
            return Err(SimError::Config("N must be positive".into()));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(SimError::Config(format!("horizon must be positive and finite, got {}", self.horizon)));
        }
        let in_service = self.initial.x0.min(self.n);
        if self.initial.initial_ages.len() != in_service {
            return Err(SimError::Config(format!(
                "expected {} initial ages (min(x0, N)), got {}",
                in_service,
                self.initial.initial_ages.len()
            )));
        }
        let l = self.service.support_end();
        if let Some(a) = self.initial.initial_ages.iter().find(|a| !(**a >= 0.0 && **a < l)) {
            return Err(SimError::Config(format!("initial age {a} outside [0, {l})")));
        }
        self.arrival.validate(self.n, self.horizon)?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Arrival,
    Departure,
    ServiceStart,
}

impl EventKind {
    fn label(self) -> &'static str {
        match self {
            EventKind::Arrival => "arrival",
            EventKind::Departure => "departure",
            EventKind::ServiceStart => "service_start",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
    pub id: u64,
    /// Age in service at the event (zero for arrivals and service starts).
    pub age: f64,
}

/// Counters right after all state changes at one event time.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Counters {
    pub e: u64,
    pub d: u64,
    pub k: u64,
    pub x: u64,
    pub in_service: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct State {
    pub time: f64,
    /// The triggering event; `None` for the initial state.
    pub kind: Option<EventKind>,
    pub counters: Counters,
}

/// One customer's time in service: present at ages `s - entry` for
/// `s ∈ [entry, exit)`. Initial customers have `entry = -age₀`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Spell {
    pub id: u64,
    pub server: u32,
    pub entry: f64,
    pub exit: f64,
    pub initial: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Departure {
    pub time: f64,
    pub age: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub time: f64,
    pub ages: Vec<f64>,
}

/// A complete trajectory of one N-server system.
#[derive(Clone, Debug)]
pub struct PathRecord {
    pub n: usize,
    pub horizon: f64,
    pub x0: usize,
    pub service: Arc<ServiceDistribution>,
    pub events: Vec<Event>,
    pub states: Vec<State>,
    pub spells: Vec<Spell>,
    pub departures: Vec<Departure>,
    pub snapshots: Vec<Snapshot>,
}

#[derive(Clone, Copy, Debug)]
struct Pending {
    time: f64,
    spell: usize,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Pending {}
impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Pending {
    // reversed: BinaryHeap is a max-heap and we want the earliest departure
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then(other.spell.cmp(&self.spell))
    }
}

const ARRIVAL_STREAM: u64 = 1;
const SERVICE_STREAM: u64 = 2;

struct Engine<'a> {
    cfg: &'a SimConfig,
    path: PathRecord,
    pending: BinaryHeap<Pending>,
    idle: BinaryHeap<std::cmp::Reverse<u32>>,
    busy: Vec<Option<usize>>,
    queue: VecDeque<u64>,
    c: Counters,
    snap_idx: usize,
    snap_order: Vec<f64>,
    service_rng: rng::SimRng,
}

impl Engine<'_> {
    fn log(&mut self, time: f64, kind: EventKind, id: u64, age: f64) {
        if self.cfg.record_events {
            self.path.events.push(Event { time, kind, id, age });
        }
    }

    fn start_service(&mut self, time: f64, id: u64) {
        let std::cmp::Reverse(server) = self.idle.pop().expect("idle server available");
        let v = self.cfg.service.sample(&mut self.service_rng);
        let spell = self.path.spells.len();
        self.path.spells.push(Spell { id, server, entry: time, exit: f64::INFINITY, initial: false });
        self.busy[server as usize] = Some(spell);
        self.pending.push(Pending { time: time + v, spell });
        self.c.k += 1;
        self.c.in_service += 1;
        self.log(time, EventKind::ServiceStart, id, 0.0);
    }

    fn take_snapshots_before(&mut self, t: f64) {
        while self.snap_idx < self.snap_order.len() && self.snap_order[self.snap_idx] < t {
            let s = self.snap_order[self.snap_idx];
            let mut ages: Vec<f64> = self.busy.iter().flatten().map(|&i| s - self.path.spells[i].entry).collect();
            ages.sort_by(f64::total_cmp);
            self.path.snapshots.push(Snapshot { time: s, ages });
            self.snap_idx += 1;
        }
    }

    fn push_state(&mut self, time: f64, kind: Option<EventKind>) {
        self.path.states.push(State { time, kind, counters: self.c });
    }
}

/// Runs one replicate. Identical configurations give identical records.
pub fn simulate(cfg: &SimConfig) -> Result<PathRecord, SimError> {
    cfg.validate()?;
    let n = cfg.n;
    let dist = &cfg.service;
    let mut arr_rng = rng::substream(cfg.seed, cfg.replicate, ARRIVAL_STREAM);
    let service_rng = rng::substream(cfg.seed, cfg.replicate, SERVICE_STREAM);
    let mut snap_order: Vec<f64> =
        cfg.snapshot_times.iter().copied().filter(|t| *t >= 0.0 && *t <= cfg.horizon).collect();
    snap_order.sort_by(f64::total_cmp);

    let mut eng = Engine {
        cfg,
        path: PathRecord {
            n,
            horizon: cfg.horizon,
            x0: cfg.initial.x0,
            service: Arc::clone(&cfg.service),
            events: Vec::new(),
            states: Vec::new(),
            spells: Vec::new(),
            departures: Vec::new(),
            snapshots: Vec::new(),
        },
        pending: BinaryHeap::new(),
        idle: (0..n as u32).map(std::cmp::Reverse).collect(),
        busy: vec![None; n],
        queue: VecDeque::new(),
        c: Counters { e: 0, d: 0, k: 0, x: cfg.initial.x0 as u64, in_service: 0 },
        snap_idx: 0,
        snap_order,
        service_rng,
    };

    for (j, &age) in cfg.initial.initial_ages.iter().enumerate() {
        let remaining = match cfg.initial.residual_sampling {
            ResidualSampling::ConditionalOnAge => dist.sample_given_age(&mut eng.service_rng, age) - age,
            ResidualSampling::Fresh => dist.sample(&mut eng.service_rng),
        };
        let std::cmp::Reverse(server) = eng.idle.pop().expect("N >= initial in service");
        let spell = eng.path.spells.len();
        eng.path.spells.push(Spell { id: j as u64, server, entry: -age, exit: f64::INFINITY, initial: true });
        eng.busy[server as usize] = Some(spell);
        eng.pending.push(Pending { time: remaining, spell });
        eng.c.in_service += 1;
    }
    let mut next_id = cfg.initial.initial_ages.len() as u64;
    while (next_id as usize) < cfg.initial.x0 {
        eng.queue.push_back(next_id);
        next_id += 1;
    }
    eng.push_state(0.0, None);

    let stream = cfg.arrival.stream(n, cfg.horizon);
    let mut next_arrival = stream.next_after(0.0, &mut arr_rng);
    let mut count = 0usize;
    loop {
        let next_dep = eng.pending.peek().map_or(f64::INFINITY, |p| p.time);
        let t = next_dep.min(next_arrival);
        if !(t <= cfg.horizon) {
            break;
        }
        count += 1;
        if count > cfg.max_events {
            return Err(SimError::EventBudget(cfg.max_events));
        }
        eng.take_snapshots_before(t);
        if next_dep <= next_arrival {
            let p = eng.pending.pop().unwrap();
            let spell = eng.path.spells[p.spell];
            let age = t - spell.entry;
            eng.path.spells[p.spell].exit = t;
            eng.path.departures.push(Departure { time: t, age });
            eng.busy[spell.server as usize] = None;
            eng.idle.push(std::cmp::Reverse(spell.server));
            eng.c.d += 1;
            eng.c.x -= 1;
            eng.c.in_service -= 1;
            eng.log(t, EventKind::Departure, spell.id, age);
            if let Some(id) = eng.queue.pop_front() {
                eng.start_service(t, id);
            }
            eng.push_state(t, Some(EventKind::Departure));
        } else {
            let id = next_id;
            next_id += 1;
            eng.c.e += 1;
            eng.c.x += 1;
            eng.log(t, EventKind::Arrival, id, 0.0);
            if eng.idle.is_empty() {
                eng.queue.push_back(id);
            } else {
                eng.start_service(t, id);
            }
            eng.push_state(t, Some(EventKind::Arrival));
            next_arrival = stream.next_after(t, &mut arr_rng);
        }
    }
    eng.take_snapshots_before(f64::INFINITY);
    Ok(eng.path)
}

impl PathRecord {
    pub fn initial_counters(&self) -> Counters {
        self.states[0].counters
    }

    /// Counters at time `t`, right-continuous.
    pub fn counters_at(&self, t: f64) -> Counters {
        let i = self.states.partition_point(|s| s.time <= t);
        self.states[i.saturating_sub(1)].counters
    }

    /// Ages in service at time `t` (right-continuous), unsorted.
    pub fn ages_at(&self, t: f64) -> Vec<f64> {
        self.spells.iter().filter(|s| s.entry <= t && t < s.exit).map(|s| t - s.entry).collect()
    }

    pub fn initial_ages(&self) -> Vec<f64> {
        self.spells.iter().filter(|s| s.initial).map(|s| -s.entry).collect()
    }

    /// Entry-to-service times after time 0, in order.
    pub fn service_starts(&self) -> impl Iterator<Item = f64> + '_ {
        self.spells.iter().filter(|s| !s.initial).map(|s| s.entry)
    }

    /// Checks every balance identity at every event time; the first failure
    /// is described in the error.
    pub fn check_invariants(&self) -> Result<(), String> {
        let n = self.n as i64;
        let first = self.states[0].counters;
        let x0 = first.x as i64;
        let b0 = first.in_service as i64;
        if b0 != x0.min(n) {
            return Err(format!("initial in-service {b0} != min(x0, N) = {}", x0.min(n)));
        }
        let mut prev_d = 0i64;
        let mut prev_k = 0i64;
        let mut prev_t = f64::NEG_INFINITY;
        for s in &self.states {
            let c = s.counters;
            let (e, d, k, x, b) = (c.e as i64, c.d as i64, c.k as i64, c.x as i64, c.in_service as i64);
            let at = s.time;
            if d != x0 - x + e {
                return Err(format!("t={at}: D={d} but X(0) - X + E = {}", x0 - x + e));
            }
            if k != b - b0 + d {
                return Err(format!("t={at}: K={k} but B - B(0) + D = {}", b - b0 + d));
            }
            if n - b != (n - x).max(0) {
                return Err(format!("t={at}: idle servers {} but (N - X)^+ = {}", n - b, (n - x).max(0)));
            }
            if k != x.min(n) - x0.min(n) + d {
                return Err(format!("t={at}: K={k} but X^N - X(0)^N + D = {}", x.min(n) - x0.min(n) + d));
            }
            if d - prev_d > 1 {
                return Err(format!("t={at}: departure jump {}", d - prev_d));
            }
            if k < prev_k || k - prev_k > 1 {
                return Err(format!("t={at}: K jumped by {}", k - prev_k));
            }
            if s.time < prev_t {
                return Err(format!("t={at}: states out of order"));
            }
            prev_d = d;
            prev_k = k;
            prev_t = s.time;
        }
        if self.departures.windows(2).any(|w| w[1].time <= w[0].time) {
            return Err("two departures share a time".into());
        }
        Ok(())
    }

    /// One CSV row per event time: `time,kind,E,D,K,X,in_service`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "time,kind,E,D,K,X,in_service")?;
        for s in &self.states {
            let c = s.counters;
            let kind = s.kind.map_or("initial", EventKind::label);
            writeln!(w, "{:?},{},{},{},{},{},{}", s.time, kind, c.e, c.d, c.k, c.x, c.in_service)?;
        }
        Ok(())
    }
}
