//! Strategy composition and the per-run event loop.
//!
//! The send gate runs allocation, then ordering, then overload control. A
//! defer or reject takes the chosen request out of contention without
//! charging its lane, and the gate immediately considers the next candidate.

use std::fmt::Write as _;

use serde::Serialize;

use crate::allocation::{AllocationPolicy, Allocator, ClassQueue, Discipline};
use crate::config::{ConfigError, ScenarioConfig, Strategy, WorkloadSource};
use crate::ordering::{select_next, QueuedRequest};
use crate::overload::{severity, Action, Decision, OverloadDecision};
use crate::provider::{LatencyWindow, Observables, Outcome, Provider, SimClock};
use crate::workload::{
    attach_priors, read_trace, Bucket, Class, Request, RequestId, RequestState, StreamGenerator,
    WorkloadError,
};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestOutcome {
    Completed,
    TimedOut,
    Rejected,
    /// Still queued or in flight when a horizon-limited run stopped.
    Incomplete,
}

impl RequestOutcome {
    pub fn name(self) -> &'static str {
        match self {
            RequestOutcome::Completed => "completed",
            RequestOutcome::TimedOut => "timed_out",
            RequestOutcome::Rejected => "rejected",
            RequestOutcome::Incomplete => "incomplete",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RequestRecord {
    pub id: RequestId,
    pub bucket: Bucket,
    pub class: Class,
    pub lane: Class,
    pub true_tokens: u32,
    pub prior_p50: f64,
    pub arrival_ms: f64,
    pub deadline_ms: f64,
    pub dispatch_ms: Option<f64>,
    pub finish_ms: Option<f64>,
    pub outcome: RequestOutcome,
    pub defers: u32,
}

impl RequestRecord {
    pub fn latency_ms(&self) -> Option<f64> {
        match self.outcome {
            RequestOutcome::Completed => self.finish_ms.map(|f| f - self.arrival_ms),
            _ => None,
        }
    }
}

/// A non-admit overload decision.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecisionRecord {
    pub time_ms: f64,
    pub id: RequestId,
    pub bucket: Bucket,
    pub visible_bucket: Option<Bucket>,
    pub action: Action,
    pub severity: f64,
    pub attempt: u32,
}

/// One release into the provider.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmissionRecord {
    pub time_ms: f64,
    pub id: RequestId,
    pub lane: Class,
    pub cost: f64,
    /// Lane deficit just before the release (deficit-based allocation only).
    pub deficit_before: Option<f64>,
    /// Whether the released request was among the lane's feasible candidates.
    pub in_feasible_set: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeverityTick {
    pub time_ms: f64,
    pub severity: f64,
    pub observables: Observables,
}

/// State of the send gate after it stopped at some instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GateSnapshot {
    pub time_ms: f64,
    /// Some lane could still send under the strategy's concurrency rule.
    pub free_budget: bool,
    /// Pending requests that lane(s) with free budget would admit right now.
    pub admissible_pending: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct RunLog {
    pub records: Vec<RequestRecord>,
    pub decisions: Vec<DecisionRecord>,
    pub emissions: Vec<EmissionRecord>,
    pub severity_trace: Vec<SeverityTick>,
    pub gate_audit: Vec<GateSnapshot>,
    pub dispatched: usize,
    pub provider_finished: usize,
}

impl RunLog {
    /// Instants where the gate idled with admissible work and free budget.
    pub fn work_conservation_violations(&self) -> usize {
        self.gate_audit
            .iter()
            .filter(|g| g.free_budget && g.admissible_pending > 0)
            .count()
    }

    /// Heavy releases that were not covered by the lane's deficit / feasible set.
    pub fn feasibility_violations(&self) -> usize {
        self.emissions
            .iter()
            .filter(|e| !e.in_feasible_set || e.deficit_before.is_some_and(|d| e.cost > d))
            .count()
    }

    pub fn short_defers_or_rejects(&self) -> usize {
        self.decisions
            .iter()
            .filter(|d| d.bucket == Bucket::Short && d.action != Action::Admit)
            .count()
    }

    /// One row per request, fixed column order and precision.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "id,bucket,class,lane,true_tokens,prior_p50,arrival_ms,deadline_ms,dispatch_ms,finish_ms,latency_ms,outcome,defers\n",
        );
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.3}")).unwrap_or_default();
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{:.3},{:.3},{:.3},{},{},{},{},{}",
                r.id,
                r.bucket,
                r.class.name(),
                r.lane.name(),
                r.true_tokens,
                r.prior_p50,
                r.arrival_ms,
                r.deadline_ms,
                opt(r.dispatch_ms),
                opt(r.finish_ms),
                opt(r.latency_ms()),
                r.outcome.name(),
                r.defers
            );
        }
        out
    }

    pub fn severity_csv(&self) -> String {
        let mut out =
            String::from("time_ms,severity,provider_load,queue_pressure,tail_latency_ratio\n");
        for t in &self.severity_trace {
            let _ = writeln!(
                out,
                "{:.3},{:.6},{:.6},{:.6},{:.6}",
                t.time_ms,
                t.severity,
                t.observables.provider_load,
                t.observables.queue_pressure,
                t.observables.tail_latency_ratio
            );
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Event {
    Arrival(RequestId),
    Finish(RequestId, Outcome),
    Retry(RequestId),
    Horizon,
}

/// Builds the request stream for a scenario, priors attached.
pub fn build_stream(config: &ScenarioConfig) -> Result<Vec<Request>, WorkloadError> {
    let generator = StreamGenerator::new(config.stream.clone(), config.physics);
    let stream = match &config.workload {
        WorkloadSource::Regime { regime } => {
            generator.generate_stream(*regime, config.n, config.seed)
        }
        WorkloadSource::Mix {
            proportions,
            congestion,
        } => generator.generate_with_mix(proportions, *congestion, config.n, config.seed),
        WorkloadSource::Trace { path, congestion } => {
            let tokens = read_trace(path)?;
            generator.replay_tokens(&tokens, *congestion, config.n, config.seed, true)?
        }
    };
    attach_priors(
        stream,
        config.information,
        config.noise,
        config.seed,
        config.stream.neutral_prior,
    )
}

/// Runs one scenario to quiescence (or to the horizon for horizon-cut strategies).
pub fn run(config: &ScenarioConfig) -> Result<RunLog, RunError> {
    config.validate()?;
    let stream = build_stream(config)?;
    Ok(run_stream(config, stream))
}

/// Runs a prepared stream. The config is assumed valid.
pub fn run_stream(config: &ScenarioConfig, stream: Vec<Request>) -> RunLog {
    let mut engine = Engine::new(config, stream);
    engine.run();
    engine.finish()
}

struct Engine<'a> {
    cfg: &'a ScenarioConfig,
    strategy: Strategy,
    requests: Vec<Request>,
    dispatch_ms: Vec<Option<f64>>,
    finish_ms: Vec<Option<f64>>,
    outcomes: Vec<Option<RequestOutcome>>,
    defers: Vec<u32>,
    clock: SimClock<Event>,
    provider: Provider,
    queues: [ClassQueue; 2],
    allocator: Allocator,
    lane_inflight: [usize; 2],
    lane_quota: [usize; 2],
    window: LatencyWindow,
    log: RunLog,
}

impl<'a> Engine<'a> {
    fn new(cfg: &'a ScenarioConfig, mut requests: Vec<Request>) -> Self {
        requests.sort_by_key(|r| r.id);
        for (i, r) in requests.iter().enumerate() {
            assert_eq!(r.id as usize, i, "request ids must be dense from 0");
        }
        let strategy = cfg.strategy;
        let mut allocation = cfg.allocation;
        allocation.policy = match strategy {
            Strategy::FairQueuingRr => AllocationPolicy::FairQueuingRr,
            Strategy::ShortPriority => AllocationPolicy::ShortPriority,
            _ => AllocationPolicy::AdaptiveDrr,
        };
        let heavy_discipline = match strategy {
            Strategy::DirectNaive | Strategy::QuotaTiered => Discipline::Fifo,
            _ if cfg.scheduler.heavy_ordering => Discipline::Scored,
            _ => Discipline::Fifo,
        };
        let capacity = cfg.physics.capacity;
        let interactive_quota = ((capacity as f64 * cfg.scheduler.quota_interactive_share).round()
            as usize)
            .clamp(1, capacity.max(2) - 1);
        let n = requests.len();
        Engine {
            cfg,
            strategy,
            requests,
            dispatch_ms: vec![None; n],
            finish_ms: vec![None; n],
            outcomes: vec![None; n],
            defers: vec![0; n],
            clock: SimClock::new(),
            provider: Provider::new(cfg.physics),
            queues: [
                ClassQueue::new(Class::Interactive, Discipline::Fifo),
                ClassQueue::new(Class::Heavy, heavy_discipline),
            ],
            allocator: Allocator::new(allocation),
            lane_inflight: [0, 0],
            lane_quota: [
                interactive_quota,
                capacity.saturating_sub(interactive_quota),
            ],
            window: LatencyWindow::new(
                cfg.scheduler.latency_window,
                cfg.scheduler.latency_window_ms,
            ),
            log: RunLog::default(),
        }
    }

    fn run(&mut self) {
        for r in &self.requests {
            self.clock.schedule(r.arrival_ms, Event::Arrival(r.id));
        }
        if self.strategy.horizon_cut() {
            self.clock
                .schedule(self.cfg.scheduler.horizon_ms, Event::Horizon);
        }
        while let Some((now, event)) = self.clock.pop() {
            match event {
                Event::Arrival(id) => self.on_arrival(id, now),
                Event::Retry(id) => {
                    self.requests[id as usize].advance(RequestState::Pending);
                    self.enqueue(id);
                }
                Event::Finish(id, outcome) => self.on_finish(id, outcome, now),
                Event::Horizon => {
                    self.trace_severity(now);
                    break;
                }
            }
            // let simultaneous events land before the gate looks at the state
            if self.clock.peek_time() == Some(now) {
                continue;
            }
            if self.strategy != Strategy::DirectNaive {
                self.gate(now);
            }
            self.trace_severity(now);
        }
    }

    fn on_arrival(&mut self, id: RequestId, now: f64) {
        if self.strategy == Strategy::DirectNaive {
            self.dispatch(id, now);
        } else {
            self.enqueue(id);
        }
    }

    fn on_finish(&mut self, id: RequestId, outcome: Outcome, now: f64) {
        self.provider.finish(id);
        let req = &mut self.requests[id as usize];
        self.lane_inflight[req.lane().index()] -= 1;
        self.finish_ms[id as usize] = Some(now);
        match outcome {
            Outcome::Completed => {
                req.advance(RequestState::Completed);
                self.outcomes[id as usize] = Some(RequestOutcome::Completed);
                self.window.record(now, now - req.arrival_ms);
            }
            Outcome::TimedOut => {
                req.advance(RequestState::TimedOut);
                self.outcomes[id as usize] = Some(RequestOutcome::TimedOut);
            }
        }
    }

    fn enqueue(&mut self, id: RequestId) {
        let req = &self.requests[id as usize];
        self.queues[req.lane().index()].push(QueuedRequest::from(req));
    }

    fn dispatch(&mut self, id: RequestId, now: f64) {
        let req = &mut self.requests[id as usize];
        req.advance(RequestState::InFlight);
        let ticket = self.provider.dispatch(id, req.true_tokens, now);
        self.lane_inflight[req.lane().index()] += 1;
        self.dispatch_ms[id as usize] = Some(now);
        self.clock
            .schedule(ticket.finish_ms, Event::Finish(id, ticket.outcome));
    }

    fn observables(&self) -> Observables {
        let s = &self.cfg.scheduler;
        let load = self.provider.inflight() as f64 / self.cfg.physics.capacity as f64;
        let queued: f64 = self.queues.iter().map(ClassQueue::queued_cost).sum();
        let pressure = queued / (s.pressure_ref_quanta * self.cfg.allocation.quantum);
        let tail_ref = s.tail_ref_short_deadlines * self.cfg.stream.deadlines.short_ms;
        let tail = self
            .window
            .p95(self.clock.now())
            .map_or(0.0, |p| p / tail_ref);
        Observables::new(load, pressure, tail)
    }

    fn severity(&self) -> f64 {
        match self.cfg.scheduler.severity_override {
            Some(v) => v,
            None => severity(&self.observables(), &self.cfg.overload.weights),
        }
    }

    fn trace_severity(&mut self, now: f64) {
        let observables = self.observables();
        self.log.severity_trace.push(SeverityTick {
            time_ms: now,
            severity: self.severity(),
            observables,
        });
    }

    fn lane_has_budget(&self, lane: Class) -> bool {
        match self.strategy {
            Strategy::DirectNaive => true,
            Strategy::QuotaTiered => {
                self.lane_inflight[lane.index()] < self.lane_quota[lane.index()]
            }
            _ => self.provider.inflight() < self.cfg.physics.capacity,
        }
    }

    fn pick_lane(&mut self, sev: f64) -> Option<Class> {
        if self.strategy == Strategy::QuotaTiered {
            // oldest head among lanes that still have quota
            return Class::ALL
                .into_iter()
                .filter(|c| self.lane_has_budget(*c))
                .filter_map(|c| {
                    self.queues[c.index()]
                        .head()
                        .map(|h| (c, h.arrival_ms, h.id))
                })
                .min_by(|a, b| a.1.total_cmp(&b.1).then(a.2.cmp(&b.2)))
                .map(|(c, _, _)| c);
        }
        if !self.lane_has_budget(Class::Interactive) {
            return None;
        }
        self.allocator.next_class(&mut self.queues, sev)
    }

    fn gate(&mut self, now: f64) {
        loop {
            let sev = self.severity();
            let Some(lane) = self.pick_lane(sev) else {
                break;
            };
            let queue = &self.queues[lane.index()];
            let uses_deficit =
                self.strategy != Strategy::QuotaTiered && self.allocator.uses_deficits();
            let budget = if uses_deficit {
                queue.deficit
            } else {
                f64::INFINITY
            };
            let feasible = queue.feasible(budget);
            let chosen = match queue.discipline {
                Discipline::Fifo => feasible.first().map(|r| r.id),
                Discipline::Scored => {
                    select_next(feasible.iter().copied(), now, &self.cfg.ordering)
                }
            }
            .expect("allocation only yields lanes with a feasible candidate");
            let in_feasible_set = feasible.iter().any(|r| r.id == chosen);
            let cost = self.requests[chosen as usize].estimated_cost();
            let deficit_before = uses_deficit.then_some(queue.deficit);

            if self.strategy.overload_enabled() {
                let attempt = self.defers[chosen as usize] + 1;
                let visible = self.requests[chosen as usize].routing_bucket;
                let decision = if self.provider.inflight() == 0 {
                    // nothing in flight: holding work back cannot relieve the provider
                    OverloadDecision {
                        decision: Decision::Admit,
                        severity: sev,
                    }
                } else {
                    self.cfg.overload.decide(visible, sev, attempt)
                };
                match decision.decision {
                    Decision::Admit => {}
                    Decision::Defer { backoff_ms } => {
                        self.queues[lane.index()].remove(chosen);
                        self.requests[chosen as usize].advance(RequestState::Deferred);
                        self.defers[chosen as usize] = attempt;
                        self.clock.schedule(now + backoff_ms, Event::Retry(chosen));
                        self.record_decision(now, chosen, Action::Defer, sev, attempt);
                        continue;
                    }
                    Decision::Reject => {
                        self.queues[lane.index()].remove(chosen);
                        self.requests[chosen as usize].advance(RequestState::Rejected);
                        self.outcomes[chosen as usize] = Some(RequestOutcome::Rejected);
                        self.record_decision(now, chosen, Action::Reject, sev, attempt);
                        continue;
                    }
                }
            }

            if self.strategy == Strategy::QuotaTiered {
                self.queues[lane.index()].remove(chosen);
            } else {
                self.allocator
                    .on_emit(&mut self.queues[lane.index()], chosen);
            }
            self.log.emissions.push(EmissionRecord {
                time_ms: now,
                id: chosen,
                lane,
                cost,
                deficit_before,
                in_feasible_set,
            });
            self.dispatch(chosen, now);
        }
        self.audit_gate(now);
    }

    fn audit_gate(&mut self, now: f64) {
        let sev = self.severity();
        let mut free_budget = false;
        let mut admissible = 0;
        for lane in Class::ALL {
            if !self.lane_has_budget(lane) {
                continue;
            }
            free_budget = true;
            admissible += self.queues[lane.index()]
                .pending()
                .iter()
                .filter(|q| {
                    !self.strategy.overload_enabled()
                        || self.provider.inflight() == 0
                        || self
                            .cfg
                            .overload
                            .policy
                            .action(self.requests[q.id as usize].routing_bucket, sev)
                            == Action::Admit
                })
                .count();
        }
        self.log.gate_audit.push(GateSnapshot {
            time_ms: now,
            free_budget,
            admissible_pending: admissible,
        });
    }

    fn record_decision(&mut self, now: f64, id: RequestId, action: Action, sev: f64, attempt: u32) {
        let req = &self.requests[id as usize];
        self.log.decisions.push(DecisionRecord {
            time_ms: now,
            id,
            bucket: req.bucket,
            visible_bucket: req.routing_bucket,
            action,
            severity: sev,
            attempt,
        });
    }

    fn finish(mut self) -> RunLog {
        self.log.dispatched = self.provider.dispatched();
        self.log.provider_finished = self.provider.finished();
        self.log.records = self
            .requests
            .iter()
            .map(|r| {
                let i = r.id as usize;
                RequestRecord {
                    id: r.id,
                    bucket: r.bucket,
                    class: r.class,
                    lane: r.lane(),
                    true_tokens: r.true_tokens,
                    prior_p50: r.prior_p50,
                    arrival_ms: r.arrival_ms,
                    deadline_ms: r.deadline_ms,
                    dispatch_ms: self.dispatch_ms[i],
                    finish_ms: self.finish_ms[i],
                    outcome: self.outcomes[i].unwrap_or(RequestOutcome::Incomplete),
                    defers: self.defers[i],
                }
            })
            .collect();
        self.log
    }
}
