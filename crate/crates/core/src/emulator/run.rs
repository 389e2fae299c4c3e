use super::calibrate::{burn, thread_cpu_s};
use super::{
    ClockMode, EmuError, EmulationReport, PathReport, RunStats, RunSummary, Sample, SourceWorkload, VirtualTestbed,
    WorkloadSpec,
};
use crate::ids::ComponentId;
use crate::model::ComponentKind;
use crossbeam_channel::{unbounded, Receiver, RecvTimeoutError, Sender};
use std::cmp::Ordering as CmpOrdering;
use std::collections::{BTreeMap, BinaryHeap};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

/// Per-message service behaviour. The default burns calibrated busy-work.
pub trait ServiceHook: Send + Sync {
    /// Handles one message and returns the payload size to forward.
    fn handle(&self, service: &ComponentId, work_units: u64, payload_bytes: f64, output_ratio: f64) -> f64;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct BusyWork;

impl ServiceHook for BusyWork {
    fn handle(&self, _: &ComponentId, work_units: u64, payload_bytes: f64, output_ratio: f64) -> f64 {
        burn(work_units);
        payload_bytes * output_ratio
    }
}

#[derive(Clone)]
pub struct RunOptions {
    pub keep_samples: bool,
    pub hook: Arc<dyn ServiceHook>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            keep_samples: false,
            hook: Arc::new(BusyWork),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Message {
    id: u64,
    source: usize,
    /// Seconds since run start at which the source emitted the request.
    origin: f64,
    /// Seconds since run start at which this hop's payload became ready.
    at: f64,
    bytes: f64,
    visited: u128,
}

enum Inbox {
    Msg(Message),
    Stop,
}

enum FabricMsg {
    Send { flow: usize, msg: Message },
    Shutdown,
}

struct Pending {
    at: Instant,
    seq: u64,
    consumer: usize,
    msg: Message,
}

impl PartialEq for Pending {
    fn eq(&self, o: &Self) -> bool {
        (self.at, self.seq) == (o.at, o.seq)
    }
}
impl Eq for Pending {}
impl PartialOrd for Pending {
    fn partial_cmp(&self, o: &Self) -> Option<CmpOrdering> {
        Some(self.cmp(o))
    }
}
impl Ord for Pending {
    // Reversed so the max-heap pops the earliest delivery.
    fn cmp(&self, o: &Self) -> CmpOrdering {
        (o.at, o.seq).cmp(&(self.at, self.seq))
    }
}

// Token bucket holding at most one second of rate. Tokens may go negative;
// later messages then wait for the debt to be repaid.
struct Bucket {
    rate: f64,
    tokens: f64,
    last: f64,
}

impl Bucket {
    fn new(rate: f64) -> Self {
        Self {
            rate,
            tokens: rate,
            last: 0.0,
        }
    }

    /// Departure time in seconds for `bytes` offered at `t`.
    fn depart(&mut self, t: f64, bytes: f64) -> f64 {
        if t > self.last {
            self.tokens = (self.tokens + (t - self.last) * self.rate).min(self.rate);
            self.last = t;
        }
        let t = t.max(self.last);
        self.tokens -= bytes;
        if self.tokens >= 0.0 {
            t
        } else {
            t + -self.tokens / self.rate
        }
    }
}

struct RawSample {
    id: u64,
    source: usize,
    sink: usize,
    origin_s: f64,
    latency_ms: f64,
    visited: u128,
}

struct Counters {
    sent: AtomicU64,
    in_flight: AtomicU64,
    ids: AtomicU64,
}

impl Counters {
    fn send(&self, fabric: &Sender<FabricMsg>, flow: usize, msg: Message) {
        self.sent.fetch_add(1, Ordering::SeqCst);
        self.in_flight.fetch_add(1, Ordering::SeqCst);
        // The fabric only disappears at shutdown, after which counts no longer matter.
        let _ = fabric.send(FabricMsg::Send { flow, msg });
    }
}

fn schedules(tb: &VirtualTestbed, w: &WorkloadSpec) -> Result<Vec<Vec<(f64, f64)>>, EmuError> {
    let sources: Vec<usize> = (0..tb.actors.len())
        .filter(|&i| tb.actors[i].kind == ComponentKind::Source)
        .collect();
    let period = 1.0 / w.messages_per_sec;
    let mut out = vec![Vec::new(); tb.actors.len()];
    for (rank, &i) in sources.iter().enumerate() {
        let actor = &tb.actors[i];
        let phase = if w.stagger {
            period * rank as f64 / sources.len() as f64
        } else {
            0.0
        };
        let plan = match w.sources.get(&actor.id) {
            Some(SourceWorkload::TraceReplay { trace }) => read_trace(trace, w.duration_sec)?,
            Some(SourceWorkload::ConstantRate {
                rate_bytes_per_sec,
                message_bytes,
            }) => {
                let rate = rate_bytes_per_sec.unwrap_or(actor.output_rate);
                let (mps, size) = match message_bytes {
                    Some(m) => (rate / m, *m),
                    None => (w.messages_per_sec, rate / w.messages_per_sec),
                };
                constant(phase, mps, size, w.duration_sec)
            }
            None => constant(phase, w.messages_per_sec, actor.output_rate / w.messages_per_sec, w.duration_sec),
        };
        out[i] = plan;
    }
    Ok(out)
}

fn constant(phase: f64, mps: f64, size: f64, duration: f64) -> Vec<(f64, f64)> {
    if !(mps > 0.0) {
        return Vec::new();
    }
    (0..)
        .map(|k| phase + k as f64 / mps)
        .take_while(|&t| t < duration)
        .map(|t| (t, size))
        .collect()
}

fn read_trace(path: &Path, duration: f64) -> Result<Vec<(f64, f64)>, EmuError> {
    let err = |m: String| EmuError::Trace {
        path: path.to_path_buf(),
        message: m,
    };
    let mut reader = csv::Reader::from_path(path).map_err(|e| err(e.to_string()))?;
    let mut rows = Vec::new();
    for rec in reader.deserialize::<(f64, f64)>() {
        let (offset_ms, size) = rec.map_err(|e| err(e.to_string()))?;
        if offset_ms < 0.0 || size < 0.0 {
            return Err(err(format!("negative value in row {offset_ms},{size}")));
        }
        if offset_ms / 1e3 < duration {
            rows.push((offset_ms / 1e3, size));
        }
    }
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(rows)
}

// Runs `f` and returns its result with the seconds of service time it took.
fn timed<T>(clock: ClockMode, f: impl FnOnce() -> T) -> (T, f64) {
    let wall = Instant::now();
    let cpu = match clock {
        ClockMode::NodeTime => thread_cpu_s(),
        ClockMode::Wall => None,
    };
    let out = f();
    let took = match cpu.zip(thread_cpu_s()) {
        Some((a, b)) => b - a,
        None => wall.elapsed().as_secs_f64(),
    };
    (out, took)
}

fn bit(i: usize) -> u128 {
    1u128 << i
}

struct RunData {
    summary: RunSummary,
    samples: Vec<RawSample>,
}

fn run_once(
    tb: &VirtualTestbed,
    plans: &[Vec<(f64, f64)>],
    w: &WorkloadSpec,
    hook: &Arc<dyn ServiceHook>,
) -> Result<RunData, EmuError> {
    let link_index: BTreeMap<_, _> = tb.links.keys().enumerate().map(|(i, l)| (l, i)).collect();
    let flow_links: Vec<Vec<usize>> = tb
        .flows
        .iter()
        .map(|f| f.links.iter().map(|l| link_index[l]).collect())
        .collect();
    let mut outgoing = vec![Vec::new(); tb.actors.len()];
    for (i, f) in tb.flows.iter().enumerate() {
        outgoing[f.producer].push(i);
    }

    let (fabric_tx, fabric_rx) = unbounded::<FabricMsg>();
    let inboxes: Vec<(Sender<Inbox>, Receiver<Inbox>)> = tb.actors.iter().map(|_| unbounded()).collect();
    let counters = Counters {
        sent: AtomicU64::new(0),
        in_flight: AtomicU64::new(0),
        ids: AtomicU64::new(0),
    };
    let node_of: BTreeMap<_, _> = tb.nodes.keys().enumerate().map(|(i, n)| (n, i)).collect();
    let node_free: Vec<Mutex<f64>> = tb.nodes.keys().map(|_| Mutex::new(0.0)).collect();
    let clock = w.clock;
    let start = Instant::now();
    let now_s = move || start.elapsed().as_secs_f64();

    let samples = thread::scope(|scope| -> Result<Vec<RawSample>, EmuError> {
        let senders: Vec<Sender<Inbox>> = inboxes.iter().map(|(s, _)| s.clone()).collect();
        let fabric = {
            let links: Vec<_> = tb.links.values().copied().collect();
            let flows = &tb.flows;
            let flow_links = &flow_links;
            scope.spawn(move || {
                let mut buckets: Vec<Bucket> = links.iter().map(|l| Bucket::new(l.bandwidth_bytes_per_sec)).collect();
                let mut heap = BinaryHeap::new();
                let mut seq = 0u64;
                loop {
                    let next = heap.peek().map(|p: &Pending| p.at);
                    let received = match next {
                        Some(at) => fabric_rx.recv_deadline(at),
                        None => fabric_rx.recv().map_err(|_| RecvTimeoutError::Disconnected),
                    };
                    match received {
                        Ok(FabricMsg::Send { flow, msg }) => {
                            let mut t = match clock {
                                ClockMode::NodeTime => msg.at,
                                ClockMode::Wall => now_s(),
                            };
                            for &l in &flow_links[flow] {
                                t = buckets[l].depart(t, msg.bytes) + links[l].latency_ms / 1e3;
                            }
                            seq += 1;
                            heap.push(Pending {
                                at: start + Duration::from_secs_f64(t),
                                seq,
                                consumer: flows[flow].consumer,
                                msg: Message { at: t, ..msg },
                            });
                        }
                        Ok(FabricMsg::Shutdown) | Err(RecvTimeoutError::Disconnected) => break,
                        Err(RecvTimeoutError::Timeout) => {}
                    }
                    let now = Instant::now();
                    while heap.peek().is_some_and(|p| p.at <= now) {
                        let p = heap.pop().expect("peeked");
                        let _ = senders[p.consumer].send(Inbox::Msg(p.msg));
                    }
                }
                for s in &senders {
                    let _ = s.send(Inbox::Stop);
                }
            })
        };

        let mut consumers = Vec::new();
        let mut producers = Vec::new();
        for (i, actor) in tb.actors.iter().enumerate() {
            let rx = inboxes[i].1.clone();
            let tx = fabric_tx.clone();
            let out = &outgoing[i];
            let counters = &counters;
            match actor.kind {
                ComponentKind::Source => {
                    let plan = &plans[i];
                    producers.push(scope.spawn(move || {
                        for &(offset, bytes) in plan {
                            let due = start + Duration::from_secs_f64(offset);
                            if let Some(wait) = due.checked_duration_since(Instant::now()) {
                                thread::sleep(wait);
                            }
                            let origin = now_s();
                            let msg = Message {
                                id: counters.ids.fetch_add(1, Ordering::SeqCst),
                                source: i,
                                origin,
                                at: origin,
                                bytes,
                                visited: bit(i),
                            };
                            for &f in out {
                                counters.send(&tx, f, msg);
                            }
                        }
                    }));
                }
                ComponentKind::Service => {
                    let hook = Arc::clone(hook);
                    let free = &node_free[node_of[&actor.node]];
                    consumers.push(scope.spawn(move || {
                        while let Ok(Inbox::Msg(m)) = rx.recv() {
                            let (bytes, took) = timed(clock, || {
                                hook.handle(&actor.id, actor.work_units, m.bytes, actor.output_ratio)
                            });
                            let at = match clock {
                                ClockMode::Wall => now_s(),
                                ClockMode::NodeTime => {
                                    let mut free = free.lock().unwrap_or_else(|e| e.into_inner());
                                    *free = free.max(m.at) + took;
                                    *free
                                }
                            };
                            let fwd = Message {
                                at,
                                bytes,
                                visited: m.visited | bit(i),
                                ..m
                            };
                            for &f in out {
                                counters.send(&tx, f, fwd);
                            }
                            counters.in_flight.fetch_sub(1, Ordering::SeqCst);
                        }
                        Vec::new()
                    }));
                }
                ComponentKind::Sink => {
                    consumers.push(scope.spawn(move || {
                        let mut got = Vec::new();
                        while let Ok(Inbox::Msg(m)) = rx.recv() {
                            let received = match clock {
                                ClockMode::NodeTime => m.at,
                                ClockMode::Wall => now_s(),
                            };
                            got.push(RawSample {
                                id: m.id,
                                source: m.source,
                                sink: i,
                                latency_ms: (received - m.origin) * 1e3,
                                origin_s: m.origin,
                                visited: m.visited,
                            });
                            counters.in_flight.fetch_sub(1, Ordering::SeqCst);
                        }
                        got
                    }));
                }
            }
        }

        let mut panicked = false;
        for p in producers {
            panicked |= p.join().is_err();
        }
        let deadline = Instant::now() + Duration::from_secs_f64(w.drain_timeout_sec);
        while counters.in_flight.load(Ordering::SeqCst) > 0 && Instant::now() < deadline {
            thread::sleep(Duration::from_millis(2));
        }
        let _ = fabric_tx.send(FabricMsg::Shutdown);
        panicked |= fabric.join().is_err();
        let mut samples = Vec::new();
        for c in consumers {
            match c.join() {
                Ok(s) => samples.extend(s),
                Err(_) => panicked = true,
            }
        }
        if panicked {
            return Err(EmuError::ActorPanicked);
        }
        Ok(samples)
    })?;

    let in_flight = counters.in_flight.load(Ordering::SeqCst);
    let sent = counters.sent.load(Ordering::SeqCst);
    Ok(RunData {
        summary: RunSummary {
            sent,
            consumed: sent - in_flight,
            in_flight_at_shutdown: in_flight,
        },
        samples,
    })
}

fn stats(xs: &[f64]) -> RunStats {
    let n = xs.len();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = if n > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    RunStats {
        mean_ms: mean,
        stddev_ms: var.sqrt(),
        sample_count: n,
    }
}

pub fn run_experiment(testbed: &VirtualTestbed, workload: &WorkloadSpec) -> Result<EmulationReport, EmuError> {
    run_experiment_with(testbed, workload, &RunOptions::default())
}

/// Runs `workload.repeats` back-to-back experiments and summarises each path.
pub fn run_experiment_with(
    testbed: &VirtualTestbed,
    workload: &WorkloadSpec,
    options: &RunOptions,
) -> Result<EmulationReport, EmuError> {
    workload.validate()?;
    if testbed.actors.len() > 128 {
        return Err(EmuError::TooManyComponents(testbed.actors.len()));
    }
    for (id, n) in &testbed.nodes {
        if let Some(cap) = n.memory_cap {
            if n.memory_required > cap {
                return Err(EmuError::ResourceExhausted {
                    node: id.clone(),
                    required: n.memory_required,
                    available: cap,
                });
            }
        }
    }
    let plans = schedules(testbed, workload)?;
    let warmup = workload.warmup();

    let mut runs = Vec::new();
    let mut summaries = Vec::new();
    let mut samples = Vec::new();
    for r in 0..workload.repeats {
        let data = run_once(testbed, &plans, workload, &options.hook)?;
        summaries.push(data.summary);
        if options.keep_samples {
            let mut s: Vec<Sample> = data
                .samples
                .iter()
                .map(|s| Sample {
                    run: r,
                    message: s.id,
                    source: testbed.actors[s.source].id.clone(),
                    sink: testbed.actors[s.sink].id.clone(),
                    origin_ms: s.origin_s * 1e3,
                    latency_ms: s.latency_ms,
                    warmup: s.origin_s < warmup,
                })
                .collect();
            s.sort_by(|a, b| a.origin_ms.total_cmp(&b.origin_ms).then(a.sink.cmp(&b.sink)));
            samples.extend(s);
        }
        runs.push(data.samples);
    }

    let mut paths = BTreeMap::new();
    for plan in &testbed.paths {
        let members = plan.members.iter().fold(0u128, |m, &i| m | bit(i));
        let mut per_run = Vec::with_capacity(runs.len());
        for run in &runs {
            let mut worst: Option<RunStats> = None;
            for &src in &plan.sources {
                let xs: Vec<f64> = run
                    .iter()
                    .filter(|s| {
                        s.sink == plan.sink && s.source == src && s.visited & !members == 0 && s.origin_s >= warmup
                    })
                    .map(|s| s.latency_ms)
                    .collect();
                if xs.is_empty() {
                    return Err(EmuError::Starvation {
                        path: plan.id.clone(),
                        source_id: testbed.actors[src].id.clone(),
                    });
                }
                let st = stats(&xs);
                if worst.is_none_or(|w| st.mean_ms > w.mean_ms) {
                    worst = Some(st);
                }
            }
            per_run.push(worst.expect("validated path has a source"));
        }
        let mut order: Vec<usize> = (0..per_run.len()).collect();
        order.sort_by(|&a, &b| per_run[a].mean_ms.total_cmp(&per_run[b].mean_ms));
        let median_run = order[(order.len() - 1) / 2];
        let median = per_run[median_run];
        let cov = (per_run.len() >= 2).then(|| {
            let means: Vec<f64> = per_run.iter().map(|r| r.mean_ms).collect();
            let s = stats(&means);
            s.stddev_ms / s.mean_ms
        });
        paths.insert(
            plan.id.clone(),
            PathReport {
                slo_ms: plan.slo_ms,
                runs: per_run,
                median_run,
                median,
                cov,
                slo_met: median.mean_ms <= plan.slo_ms,
            },
        );
    }
    Ok(EmulationReport {
        paths,
        runs: summaries,
        samples,
    })
}
