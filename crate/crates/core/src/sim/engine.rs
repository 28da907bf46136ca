use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::churn::{churn_process, Transition as Churn};
use super::scenario::{NodeSpec, Scenario};
use super::trace::{Audit, EventTrace, Metrics, TraceLine};
use crate::agent::{
    AgentRuntime, AgentState, Assignment, Decision, DestroyCause, GiveUpReason, MissionOutcome,
    Notification, NotificationKind, RuntimeConfig, TaskSpec,
};
use crate::enforcement::{longest_safe_prefix, SecurityAutomaton};
use crate::federation::{
    disseminate, AdmissionRule, CapSet, Coordinator, Credential, SubscriptionDecision, TagKey,
    Validity,
};
use crate::ids::{AgentId, JobId, NodeId, TaskId};

const CHURN_STREAM: u64 = 0x6368_7572_6e5f_7631;
const BRANCH_STREAM: u64 = 0x6272_616e_6368_5f31;
const COORDINATOR_KEY: [u8; 16] = *b"gridtrust-coord1";

/// SplitMix64 finalizer, used to spread ids across seed space.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn churn_seed(seed: u64, node: NodeId) -> u64 {
    seed ^ CHURN_STREAM ^ mix(node.0)
}

/// Branch outcomes for one task, drawn from its own seeded stream.
pub fn branch_oracle(seed: u64, task: TaskId, branches: usize) -> Vec<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ BRANCH_STREAM ^ mix(task.0));
    (0..branches).map(|_| rng.random::<bool>()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Payload {
    Connect(NodeId),
    Disconnect(NodeId),
    EpochDelivery(NodeId, u64),
    Submit(JobId),
    Dispatch(AgentId),
    ExecStep(AgentId),
    NotificationDelivery(Notification),
    JobComplete(JobId),
    Hostile(NodeId),
    RetryPending,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    pub time: u64,
    pub seq: u64,
    pub payload: Payload,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub trace: EventTrace,
    pub metrics: Metrics,
    pub audit: Audit,
}

struct JobState {
    owner: NodeId,
    submit: u64,
    tasks: Vec<TaskId>,
    remaining: usize,
}

struct Engine<'a> {
    s: &'a Scenario,
    policy: &'a SecurityAutomaton,
    nodes: BTreeMap<NodeId, &'a NodeSpec>,
    coord: Coordinator,
    rt: AgentRuntime,
    rule: AdmissionRule,
    queue: BTreeMap<(u64, u64), Payload>,
    next_seq: u64,
    now: u64,
    seq: u64,
    trace: Vec<TraceLine>,
    metrics: Metrics,
    audit: Audit,
    last_version: u64,
    creds: BTreeMap<NodeId, Credential>,
    mains: BTreeMap<NodeId, AgentId>,
    specs: BTreeMap<TaskId, TaskSpec>,
    durations: BTreeMap<TaskId, u64>,
    task_job: BTreeMap<TaskId, JobId>,
    jobs: BTreeMap<JobId, JobState>,
    pending: BTreeSet<TaskId>,
    retry_at: Option<u64>,
    arrived_at: BTreeMap<AgentId, u64>,
    hostile: BTreeSet<NodeId>,
    /// Live agents travelling to or running on each node.
    located: BTreeMap<NodeId, BTreeSet<AgentId>>,
}

/// Runs a scenario to its horizon. Identical scenarios give identical
/// traces.
pub fn run(s: &Scenario) -> RunOutput {
    let mut e = Engine::new(s);
    e.schedule_initial();
    while let Some(((time, seq), payload)) = e.queue.pop_first() {
        if time > s.horizon {
            break;
        }
        e.now = time;
        e.seq = seq;
        e.handle(payload);
        e.settle();
    }
    e.finish()
}

macro_rules! details {
    ($($k:literal => $v:expr),* $(,)?) => {{
        #[allow(unused_mut)]
        let mut m = BTreeMap::new();
        $(m.insert($k, $v.to_string());)*
        m
    }};
}

impl<'a> Engine<'a> {
    fn new(s: &'a Scenario) -> Self {
        let mut specs = BTreeMap::new();
        let mut durations = BTreeMap::new();
        let mut task_job = BTreeMap::new();
        let mut jobs = BTreeMap::new();
        for job in &s.jobs {
            for t in &job.tasks {
                let oracle = branch_oracle(s.seed, t.id, t.program.branch_count());
                let eff = s.effective_duration(t.duration);
                specs.insert(
                    t.id,
                    TaskSpec {
                        task: t.id,
                        program: Arc::new(t.program.clone()),
                        oracle: oracle.into(),
                        window: s.dispatch_latency.saturating_add(eff).saturating_add(1),
                    },
                );
                durations.insert(t.id, eff);
                task_job.insert(t.id, job.id);
            }
            jobs.insert(
                job.id,
                JobState {
                    owner: job.owner,
                    submit: job.submit,
                    tasks: job.tasks.iter().map(|t| t.id).collect(),
                    remaining: job.tasks.len(),
                },
            );
        }
        Self {
            s,
            policy: s.policy(),
            nodes: s.nodes.iter().map(|n| (n.id, n)).collect(),
            coord: Coordinator::new(TagKey::new(COORDINATOR_KEY), s.active_policy.clone()),
            rt: AgentRuntime::new(RuntimeConfig {
                retry_budget: s.retry_budget,
                cooldown: s.cooldown,
            }),
            rule: AdmissionRule {
                allowed: CapSet::all(),
                denylist: s.deny.clone(),
            },
            queue: BTreeMap::new(),
            next_seq: 0,
            now: 0,
            seq: 0,
            trace: Vec::new(),
            metrics: Metrics {
                jobs_total: s.jobs.len() as u64,
                ..Metrics::default()
            },
            audit: Audit::default(),
            last_version: 0,
            creds: BTreeMap::new(),
            mains: BTreeMap::new(),
            specs,
            durations,
            task_job,
            jobs,
            pending: BTreeSet::new(),
            retry_at: None,
            arrived_at: BTreeMap::new(),
            hostile: BTreeSet::new(),
            located: BTreeMap::new(),
        }
    }

    fn schedule(&mut self, time: u64, payload: Payload) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.insert((time, seq), payload);
    }

    fn schedule_initial(&mut self) {
        let mut initial = Vec::new();
        for n in &self.s.nodes {
            for (t, what) in churn_process(&n.churn, churn_seed(self.s.seed, n.id), self.s.horizon)
            {
                initial.push((
                    t,
                    match what {
                        Churn::Connect => Payload::Connect(n.id),
                        Churn::Disconnect => Payload::Disconnect(n.id),
                    },
                ));
            }
            if let Some(t) = n.hostile_at {
                initial.push((t, Payload::Hostile(n.id)));
            }
        }
        for j in &self.s.jobs {
            initial.push((j.submit, Payload::Submit(j.id)));
        }
        // Stable: simultaneous events keep declaration order.
        initial.sort_by_key(|(t, _)| *t);
        for (t, p) in initial {
            self.schedule(t, p);
        }
    }

    fn log(&mut self, kind: &'static str, details: BTreeMap<&'static str, String>) {
        self.trace.push(TraceLine {
            time: self.now,
            seq: self.seq,
            kind,
            details,
        });
    }

    fn compromised(&self, node: NodeId) -> bool {
        self.nodes.get(&node).is_some_and(|n| n.compromised) || self.hostile.contains(&node)
    }

    fn handle(&mut self, p: Payload) {
        match p {
            Payload::Connect(n) => self.connect(n),
            Payload::Disconnect(n) => self.disconnect(n),
            Payload::EpochDelivery(n, v) => self.epoch_delivery(n, v),
            Payload::Submit(j) => self.submit(j),
            Payload::Dispatch(a) => self.depart(a),
            Payload::ExecStep(a) => self.exec_step(a),
            Payload::NotificationDelivery(n) => self.deliver(n),
            Payload::JobComplete(j) => self.job_complete(j),
            Payload::Hostile(n) => self.turn_hostile(n),
            Payload::RetryPending => {
                self.retry_at = None;
                self.try_pending();
            }
        }
    }

    /// Flushes the runtime's notifications and lifecycle log and
    /// disseminates any epoch the coordinator advanced to.
    fn settle(&mut self) {
        for n in self.rt.drain_outbox() {
            self.schedule(self.now, Payload::NotificationDelivery(n));
        }
        for t in self.rt.drain_log() {
            let at = |s: Option<AgentState>| match s {
                Some(AgentState::Migrating { to }) => Some(to),
                Some(AgentState::Active { on }) => Some(on),
                _ => None,
            };
            if let Some(n) = at(t.from) {
                self.located.entry(n).or_default().remove(&t.agent);
            }
            if let Some(n) = at(Some(t.to)) {
                self.located.entry(n).or_default().insert(t.agent);
            }
            let from = t.from.map_or_else(|| "-".to_string(), |s| s.to_string());
            self.log(
                "agent",
                details! { "agent" => t.agent, "token" => t.token, "from" => from, "to" => t.to },
            );
        }
        let epoch = self.coord.epoch();
        if epoch.version != self.last_version {
            let plan = disseminate(self.last_version, epoch, &epoch.membership)
                .expect("each event advances the epoch at most once");
            self.last_version = epoch.version;
            let at = self.now.saturating_add(self.s.dissemination_latency);
            for (node, v) in plan {
                self.schedule(at, Payload::EpochDelivery(node, v));
            }
        }
    }

    fn connect(&mut self, node: NodeId) {
        if self.coord.is_member(node) {
            return;
        }
        let decision = self
            .coord
            .subscribe(node, CapSet::all(), &self.rule)
            .expect("membership checked above");
        match &decision {
            SubscriptionDecision::Accepted(token) => {
                let main = self.rt.spawn_main(&decision, self.now).expect("accepted");
                self.mains.insert(node, main);
                let cred = self.coord.issue_credential(node).expect("just subscribed");
                self.creds.insert(node, cred);
                self.log(
                    "connect",
                    details! { "node" => node, "token" => token.token_id, "version" => self.coord.epoch().version },
                );
                self.settle();
                self.try_pending();
            }
            SubscriptionDecision::Rejected(r) => {
                self.log("reject", details! { "node" => node, "reason" => r });
            }
        }
    }

    fn disconnect(&mut self, node: NodeId) {
        if !self.coord.is_member(node) {
            return;
        }
        self.coord.disconnect(node).expect("member");
        self.log(
            "disconnect",
            details! { "node" => node, "version" => self.coord.epoch().version },
        );
        for a in self.located_on(node) {
            self.rt.vanish(a, self.now).expect("live agent");
        }
        if let Some(main) = self.mains.remove(&node) {
            self.rt
                .destroy(main, DestroyCause::Disconnect, self.now)
                .expect("main agents stay instantiated");
        }
    }

    fn epoch_delivery(&mut self, node: NodeId, version: u64) {
        self.log("epoch", details! { "node" => node, "version" => version });
        let epoch = self.coord.epoch();
        let doomed: Vec<AgentId> = self
            .located_on(node)
            .into_iter()
            .filter(|a| {
                let token = &self.rt.agent(*a).expect("located agents exist").token;
                self.coord.validate_chain(token, epoch) != Validity::Valid
            })
            .collect();
        for a in doomed {
            self.lose(a, DestroyCause::ParentRevoked);
        }
    }

    fn located_on(&self, node: NodeId) -> Vec<AgentId> {
        self.located
            .get(&node)
            .map(|s| s.iter().copied().collect())
            .unwrap_or_default()
    }

    /// Destroys an agent that cannot report back and gives its task up.
    fn lose(&mut self, agent: AgentId, cause: DestroyCause) {
        self.rt.destroy(agent, cause, self.now).expect("live agent");
        if let Some(at) = self.arrived_at.remove(&agent) {
            self.metrics.wasted_work += self.now - at;
        }
        let task = self.task_of(agent);
        self.give_up(task, "parent_revoked");
    }

    fn task_of(&self, agent: AgentId) -> TaskId {
        self.rt
            .agent(agent)
            .and_then(|a| a.mission.as_ref())
            .map(|m| m.task)
            .expect("secondary agents carry a mission")
    }

    fn give_up(&mut self, task: TaskId, reason: &str) {
        self.metrics.giveups += 1;
        self.log("giveup", details! { "task" => task, "reason" => reason });
        if reason != GiveUpReason::BudgetExhausted.to_string() {
            self.pending.insert(task);
            self.schedule_retry();
        }
    }

    fn schedule_retry(&mut self) {
        if self.s.cooldown == 0 || self.retry_at.is_some() {
            return;
        }
        let at = self.now.saturating_add(self.s.cooldown);
        self.retry_at = Some(at);
        self.schedule(at, Payload::RetryPending);
    }

    fn submit(&mut self, job: JobId) {
        let tasks = self.jobs[&job].tasks.clone();
        self.log("submit", details! { "job" => job, "tasks" => tasks.len() });
        self.pending.extend(tasks);
        self.try_pending();
    }

    /// Offers every pending task whose owner is connected to the
    /// lowest eligible provider.
    fn try_pending(&mut self) {
        let mut deferred = false;
        for task in self.pending.clone() {
            let owner = self.jobs[&self.task_job[&task]].owner;
            let Some(&main) = self.mains.get(&owner) else {
                continue;
            };
            let eligible = self.coord.epoch().membership.clone();
            let spec = self.specs[&task].clone();
            match self
                .rt
                .dispatch(&mut self.coord, main, &spec, &eligible, self.now)
            {
                Ok(Assignment::Spawned { agent, mission }) => {
                    self.pending.remove(&task);
                    self.sent(agent, &mission.target, task, "dispatch");
                }
                Ok(Assignment::Deferred(GiveUpReason::BudgetExhausted)) => {
                    self.pending.remove(&task);
                    self.log("abandon", details! { "task" => task });
                }
                Ok(Assignment::Deferred(GiveUpReason::TasksPending)) => deferred = true,
                Err(e) => {
                    self.log("dispatch_error", details! { "task" => task, "error" => e });
                }
            }
        }
        if deferred {
            self.schedule_retry();
        }
    }

    fn sent(&mut self, agent: AgentId, target: &NodeId, task: TaskId, kind: &'static str) {
        self.metrics.tasks_dispatched += 1;
        self.metrics.messages += 1;
        let attempt = self.rt.task_attempts(task);
        self.log(
            kind,
            details! { "agent" => agent, "task" => task, "target" => target, "attempt" => attempt },
        );
        self.schedule(self.now, Payload::Dispatch(agent));
    }

    fn depart(&mut self, agent: AgentId) {
        let Some(a) = self.rt.agent(agent) else {
            return;
        };
        if a.state != AgentState::Instantiated {
            return;
        }
        if self.coord.validate_chain(&a.token, self.coord.epoch()) != Validity::Valid {
            self.lose(agent, DestroyCause::ParentRevoked);
            return;
        }
        self.rt
            .begin_migration(agent, self.now)
            .expect("instantiated");
        let at = self.now.saturating_add(self.s.dispatch_latency);
        self.schedule(at, Payload::ExecStep(agent));
    }

    fn exec_step(&mut self, agent: AgentId) {
        let Some(a) = self.rt.agent(agent) else {
            return;
        };
        match a.state {
            AgentState::Migrating { to } => self.arrive(agent, to),
            AgentState::Active { on } => self.complete(agent, on),
            _ => {}
        }
    }

    fn arrive(&mut self, agent: AgentId, host: NodeId) {
        let mut cred = self.creds[&host].clone();
        if self.compromised(host) {
            cred = cred.tampered();
        }
        let epoch = self.coord.epoch().clone();
        match self
            .rt
            .arrive(&self.coord, agent, &cred, &epoch, self.now)
            .expect("migrating")
        {
            Ok(session) => {
                self.log(
                    "arrive",
                    details! { "agent" => agent, "host" => host, "version" => session.version },
                );
                self.arrived_at.insert(agent, self.now);
                let task = self.task_of(agent);
                let at = self.now.saturating_add(self.durations[&task]);
                self.schedule(at, Payload::ExecStep(agent));
            }
            Err(f) => {
                let side = match f.side {
                    crate::federation::Side::Agent => "agent",
                    crate::federation::Side::Host => "host",
                };
                self.log(
                    "handshake_fail",
                    details! { "agent" => agent, "host" => host, "side" => side, "reason" => f.reason },
                );
                if self.rt.agent(agent).map(|a| a.state)
                    == Some(AgentState::Destroyed(DestroyCause::ParentRevoked))
                {
                    let task = self.task_of(agent);
                    self.give_up(task, "parent_revoked");
                }
            }
        }
    }

    fn complete(&mut self, agent: AgentId, host: NodeId) {
        let outcome = self
            .rt
            .execute(agent, self.policy, self.s.mechanism)
            .expect("scenario programs fit their oracles");
        let committed = outcome.committed();
        if longest_safe_prefix(self.policy, committed) != committed.len() {
            self.audit.unsafe_commits += 1;
        }
        let names: Vec<&str> = committed.iter().map(|e| e.name()).collect();
        let events = if names.is_empty() {
            "-".to_string()
        } else {
            names.join(",")
        };
        let mut d = details! { "agent" => agent, "host" => host, "events" => events };
        let label = match &outcome {
            MissionOutcome::Completed { .. } => "completed",
            MissionOutcome::Truncated {
                violation_index, ..
            } => {
                d.insert("index", violation_index.to_string());
                "truncated"
            }
            MissionOutcome::Rejected { .. } => "rejected",
            MissionOutcome::Refused(_) => "refused",
            MissionOutcome::HandshakeFailed(_) | MissionOutcome::HostVanished => {
                unreachable!("execute only reports execution outcomes")
            }
        };
        d.insert("outcome", label.to_string());
        self.log("exec", d);
        self.arrived_at.remove(&agent);
        self.rt.finish(agent, &outcome, self.now).expect("active");
    }

    fn deliver(&mut self, n: Notification) {
        self.metrics.messages += 1;
        let mut d = details! { "from" => n.from, "to" => n.to, "kind" => n.kind };
        if let NotificationKind::MissionComplete { digest } = n.kind {
            d.insert("digest", format!("{digest:016x}"));
        }
        self.log("notify", d);

        let child = self
            .rt
            .agent_by_token(n.from)
            .expect("notifications come from agents");
        let (child_id, child_token) = (child.id, child.token.clone());
        let task = self.task_of(child_id);
        if n.kind.is_failure() {
            if let Some(at) = self.arrived_at.remove(&child_id) {
                self.metrics.wasted_work += n.at - at;
            }
        }
        let parent = self
            .rt
            .agent_by_token(n.to)
            .filter(|p| !p.state.is_terminal())
            .map(|p| p.id);
        let Some(parent) = parent else {
            self.give_up(task, "parent_gone");
            return;
        };
        let chain_ok =
            self.coord.validate_chain(&child_token, self.coord.epoch()) == Validity::Valid;
        let eligible = self.coord.epoch().membership.clone();
        match self
            .rt
            .handle_notification(&mut self.coord, parent, &n, &eligible, self.now)
        {
            Ok(Decision::Recorded(r)) => {
                self.metrics.tasks_completed += 1;
                self.audit.results_accepted += 1;
                if !chain_ok {
                    self.audit.invalid_chains += 1;
                }
                if self.compromised(r.host) {
                    self.audit.compromised_results += 1;
                }
                let mut d = details! { "task" => r.task, "host" => r.host };
                match r.digest {
                    Some(x) => d.insert("digest", format!("{x:016x}")),
                    None => {
                        self.metrics.violations_blocked += 1;
                        d.insert("digest", "violation".to_string())
                    }
                };
                self.log("record", d);
                let job = self.task_job[&r.task];
                let state = self.jobs.get_mut(&job).expect("task belongs to a job");
                state.remaining -= 1;
                if state.remaining == 0 {
                    self.schedule(self.now, Payload::JobComplete(job));
                }
            }
            Ok(Decision::Reassignment { mission, agent }) => {
                self.metrics.tasks_reassigned += 1;
                self.log(
                    "reassign",
                    details! { "task" => task, "failed" => n.from, "target" => mission.target },
                );
                self.sent(agent, &mission.target, task, "dispatch");
            }
            Ok(Decision::GiveUp(r)) => self.give_up(task, &r.to_string()),
            Err(e) => {
                self.log("handle_error", details! { "task" => task, "error" => e });
                self.give_up(task, "error");
            }
        }
    }

    fn job_complete(&mut self, job: JobId) {
        let latency = self.now - self.jobs[&job].submit;
        self.metrics.jobs_completed += 1;
        self.metrics.job_latency_total += latency;
        self.log(
            "job_complete",
            details! { "job" => job, "latency" => latency },
        );
    }

    fn turn_hostile(&mut self, node: NodeId) {
        self.hostile.insert(node);
        self.log("hostile", details! { "node" => node });
        let victims: Vec<AgentId> = self
            .located_on(node)
            .into_iter()
            .filter(|a| self.rt.agent(*a).map(|x| x.state) == Some(AgentState::Active { on: node }))
            .collect();
        for a in victims {
            self.rt.hostile(a, self.now).expect("active agent");
        }
    }

    fn finish(mut self) -> RunOutput {
        self.now = self.s.horizon;
        let in_flight: Vec<AgentId> = self
            .rt
            .agents()
            .filter(|a| a.mission.is_some() && !a.state.is_terminal())
            .map(|a| a.id)
            .collect();
        for a in in_flight {
            self.seq = self.next_seq;
            self.next_seq += 1;
            if let Some(at) = self.arrived_at.remove(&a) {
                self.metrics.wasted_work += self.now - at;
            }
            let task = self.task_of(a);
            self.metrics.giveups += 1;
            self.log(
                "giveup",
                details! { "task" => task, "agent" => a, "reason" => "horizon" },
            );
        }
        self.metrics.epoch_count = self.coord.epoch().version;
        self.audit.conservation_broken = !self.metrics.conserved();
        RunOutput {
            trace: EventTrace { lines: self.trace },
            metrics: self.metrics,
            audit: self.audit,
        }
    }
}
