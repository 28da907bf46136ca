use std::collections::{BTreeMap, BTreeSet};

use sha2::{Digest, Sha256};

use super::types::*;
use super::AgentError;
use crate::enforcement::{
    rewrite, run_combined, run_monitor, static_analyze, EnforceError, Mechanism, SecurityAutomaton,
    Verdict,
};
use crate::federation::{
    Coordinator, Credential, HandshakeReason, PolicyEpoch, Side, SubscriptionDecision, Validity,
};
use crate::guest::{execute_unmonitored, GuestProgram, Termination, Trace};
use crate::ids::{AgentId, MissionId, NodeId, TaskId, TokenId};
use crate::sim::select_provider;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RuntimeConfig {
    /// Dispatches allowed per task before giving up for good.
    pub retry_budget: u32,
    /// Ticks a node stays excluded for a task after failing it.
    pub cooldown: u64,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        Self {
            retry_budget: 8,
            cooldown: 10,
        }
    }
}

/// Result of trying to hand a task to a provider.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Assignment {
    Spawned { agent: AgentId, mission: Mission },
    Deferred(GiveUpReason),
}

#[derive(Debug, Clone)]
struct TaskRecord {
    spec: TaskSpec,
    attempts: u32,
    failures: Vec<(NodeId, u64)>,
    result: Option<TaskResult>,
}

/// Owns every agent instance and drives their lifecycles.
#[derive(Debug, Clone, Default)]
pub struct AgentRuntime {
    config: RuntimeConfig,
    agents: BTreeMap<AgentId, AgentInstance>,
    by_token: BTreeMap<TokenId, AgentId>,
    tasks: BTreeMap<TaskId, TaskRecord>,
    suspected: BTreeSet<NodeId>,
    outbox: Vec<Notification>,
    log: Vec<Transition>,
    next_agent: u64,
    next_mission: u64,
}

impl AgentRuntime {
    pub fn new(config: RuntimeConfig) -> Self {
        Self {
            config,
            ..Self::default()
        }
    }

    pub fn config(&self) -> RuntimeConfig {
        self.config
    }

    pub fn agent(&self, id: AgentId) -> Option<&AgentInstance> {
        self.agents.get(&id)
    }

    pub fn agents(&self) -> impl Iterator<Item = &AgentInstance> {
        self.agents.values()
    }

    pub fn agent_by_token(&self, token: TokenId) -> Option<&AgentInstance> {
        self.by_token.get(&token).and_then(|a| self.agents.get(a))
    }

    /// Nodes that failed host authentication at least once.
    pub fn suspected(&self) -> &BTreeSet<NodeId> {
        &self.suspected
    }

    pub fn task_attempts(&self, task: TaskId) -> u32 {
        self.tasks.get(&task).map_or(0, |t| t.attempts)
    }

    pub fn task_result(&self, task: TaskId) -> Option<&TaskResult> {
        self.tasks.get(&task).and_then(|t| t.result.as_ref())
    }

    pub fn task_spec(&self, task: TaskId) -> Option<&TaskSpec> {
        self.tasks.get(&task).map(|t| &t.spec)
    }

    /// Notifications sent since the last drain, in send order.
    pub fn drain_outbox(&mut self) -> Vec<Notification> {
        std::mem::take(&mut self.outbox)
    }

    /// Lifecycle transitions since the last drain.
    pub fn drain_log(&mut self) -> Vec<Transition> {
        std::mem::take(&mut self.log)
    }

    pub fn spawn_main(
        &mut self,
        decision: &SubscriptionDecision,
        now: u64,
    ) -> Result<AgentId, AgentError> {
        let token = match decision {
            SubscriptionDecision::Accepted(t) => t.clone(),
            SubscriptionDecision::Rejected(r) => return Err(AgentError::RejectedSubscription(*r)),
        };
        Ok(self.insert(AgentRole::Main, token, None, None, now))
    }

    /// Spawns a secondary for `mission` holding exactly the capabilities
    /// the mission's program needs.
    pub fn spawn_secondary(
        &mut self,
        coord: &mut Coordinator,
        parent: AgentId,
        mission: Mission,
        now: u64,
    ) -> Result<AgentId, AgentError> {
        let p = self.live(parent)?;
        if p.state.is_terminal() {
            return Err(AgentError::ParentDestroyed(parent));
        }
        let token = coord.issue_delegate(&p.token, mission.mission_id, mission.required_caps)?;
        let rec = self
            .tasks
            .entry(mission.task)
            .or_insert_with(|| TaskRecord {
                spec: mission.spec(),
                attempts: 0,
                failures: Vec::new(),
                result: None,
            });
        rec.attempts += 1;
        Ok(self.insert(
            AgentRole::Secondary,
            token,
            Some(parent),
            Some(mission),
            now,
        ))
    }

    /// Picks a provider for `spec` and spawns a secondary under `parent`.
    /// Suspected nodes and nodes that failed this task within the cooldown
    /// are skipped.
    pub fn dispatch(
        &mut self,
        coord: &mut Coordinator,
        parent: AgentId,
        spec: &TaskSpec,
        eligible: &BTreeSet<NodeId>,
        now: u64,
    ) -> Result<Assignment, AgentError> {
        let (attempts, mut excluded) = match self.tasks.get(&spec.task) {
            Some(rec) => (
                rec.attempts,
                rec.failures
                    .iter()
                    .filter(|(_, at)| now < at + self.config.cooldown)
                    .map(|(n, _)| *n)
                    .collect(),
            ),
            None => (0, BTreeSet::new()),
        };
        if attempts >= self.config.retry_budget {
            return Ok(Assignment::Deferred(GiveUpReason::BudgetExhausted));
        }
        excluded.extend(self.suspected.iter().copied());
        let Some(target) = select_provider(eligible, &excluded) else {
            self.tasks.entry(spec.task).or_insert_with(|| TaskRecord {
                spec: spec.clone(),
                attempts: 0,
                failures: Vec::new(),
                result: None,
            });
            return Ok(Assignment::Deferred(GiveUpReason::TasksPending));
        };
        self.next_mission += 1;
        let mission = Mission::new(MissionId(self.next_mission), spec, target, now);
        let agent = self.spawn_secondary(coord, parent, mission.clone(), now)?;
        Ok(Assignment::Spawned { agent, mission })
    }

    pub fn begin_migration(&mut self, agent: AgentId, now: u64) -> Result<NodeId, AgentError> {
        let a = self.live(agent)?;
        let to = a
            .mission
            .as_ref()
            .ok_or(AgentError::NoMission(agent))?
            .target;
        self.set_state(agent, AgentState::Migrating { to }, now)?;
        Ok(to)
    }

    /// Handshake with the host on arrival. On failure the agent is
    /// destroyed and, where the parent can still act on it, notifies it.
    pub fn arrive(
        &mut self,
        coord: &Coordinator,
        agent: AgentId,
        host: &Credential,
        epoch: &PolicyEpoch,
        now: u64,
    ) -> Result<Result<crate::federation::Session, crate::federation::HandshakeFailure>, AgentError>
    {
        let a = self.live(agent)?;
        let AgentState::Migrating { to } = a.state else {
            return Err(AgentError::IllegalTransition {
                agent,
                from: a.state,
                to: AgentState::Active { on: host.node },
            });
        };
        match coord.handshake(&a.token, host, epoch) {
            Ok(session) => {
                self.set_state(agent, AgentState::Active { on: host.node }, now)?;
                Ok(Ok(session))
            }
            Err(failure) => {
                match (failure.side, failure.reason) {
                    (Side::Host, HandshakeReason::BadTag) => {
                        self.suspected.insert(to);
                        self.notify(agent, NotificationKind::Compromised, now);
                        self.set_state(
                            agent,
                            AgentState::Destroyed(DestroyCause::Compromise),
                            now,
                        )?;
                    }
                    (Side::Host, _) => {
                        self.notify(agent, NotificationKind::HostUnreachable, now);
                        self.set_state(
                            agent,
                            AgentState::Destroyed(DestroyCause::MissionEnd),
                            now,
                        )?;
                    }
                    (Side::Agent, _) if self.parent_invalid(coord, agent, epoch) => {
                        self.set_state(
                            agent,
                            AgentState::Destroyed(DestroyCause::ParentRevoked),
                            now,
                        )?;
                    }
                    (Side::Agent, _) => {
                        self.notify(agent, NotificationKind::HandshakeFailed, now);
                        self.set_state(
                            agent,
                            AgentState::Destroyed(DestroyCause::MissionEnd),
                            now,
                        )?;
                    }
                }
                Ok(Err(failure))
            }
        }
    }

    /// Runs the mission program under `mechanism`. The agent must be
    /// active; its state is left unchanged.
    pub fn execute(
        &self,
        agent: AgentId,
        policy: &SecurityAutomaton,
        mechanism: Mechanism,
    ) -> Result<MissionOutcome, AgentError> {
        let a = self.live(agent)?;
        if !matches!(a.state, AgentState::Active { .. }) {
            return Err(AgentError::NotActive(agent));
        }
        let mission = a.mission.as_ref().ok_or(AgentError::NoMission(agent))?;
        let missing = mission.required_caps.difference(a.token.caps);
        if !missing.is_empty() {
            return Ok(MissionOutcome::Refused(Refusal::MissingCapabilities(
                missing,
            )));
        }
        run_mission(mission, policy, mechanism)
    }

    /// Ends an executed mission: the agent completes and tells its parent.
    pub fn finish(
        &mut self,
        agent: AgentId,
        outcome: &MissionOutcome,
        now: u64,
    ) -> Result<Notification, AgentError> {
        let kind = match outcome {
            MissionOutcome::Completed { digest, .. } => {
                NotificationKind::MissionComplete { digest: *digest }
            }
            MissionOutcome::Truncated { .. }
            | MissionOutcome::Rejected { .. }
            | MissionOutcome::Refused(_) => NotificationKind::PolicyViolation,
            MissionOutcome::HandshakeFailed(_) | MissionOutcome::HostVanished => {
                return Err(AgentError::NotExecuted(agent))
            }
        };
        self.set_state(agent, AgentState::Completed, now)?;
        Ok(self.notify(agent, kind, now))
    }

    /// The host went away under an agent that was travelling to or running
    /// on it. Returns the notification sent, if the agent was affected.
    pub fn vanish(&mut self, agent: AgentId, now: u64) -> Result<Option<Notification>, AgentError> {
        let a = self.live(agent)?;
        if !matches!(
            a.state,
            AgentState::Active { .. } | AgentState::Migrating { .. }
        ) {
            return Ok(None);
        }
        let n = self.notify(agent, NotificationKind::HostUnreachable, now);
        self.set_state(agent, AgentState::Destroyed(DestroyCause::MissionEnd), now)?;
        Ok(Some(n))
    }

    /// The host turned hostile under a running agent.
    pub fn hostile(
        &mut self,
        agent: AgentId,
        now: u64,
    ) -> Result<Option<Notification>, AgentError> {
        let a = self.live(agent)?;
        let AgentState::Active { on } = a.state else {
            return Ok(None);
        };
        self.suspected.insert(on);
        let n = self.notify(agent, NotificationKind::Compromised, now);
        self.set_state(agent, AgentState::Destroyed(DestroyCause::Hostile), now)?;
        Ok(Some(n))
    }

    pub fn destroy(
        &mut self,
        agent: AgentId,
        cause: DestroyCause,
        now: u64,
    ) -> Result<(), AgentError> {
        self.set_state(agent, AgentState::Destroyed(cause), now)
    }

    /// Migrate to the mission target, authenticate, run, and report.
    pub fn migrate_and_execute(
        &mut self,
        coord: &Coordinator,
        agent: AgentId,
        host: &Credential,
        policy: &SecurityAutomaton,
        mechanism: Mechanism,
        now: u64,
    ) -> Result<MissionOutcome, AgentError> {
        self.begin_migration(agent, now)?;
        let epoch = coord.epoch().clone();
        if let Err(f) = self.arrive(coord, agent, host, &epoch, now)? {
            return Ok(MissionOutcome::HandshakeFailed(f));
        }
        let outcome = self.execute(agent, policy, mechanism)?;
        self.finish(agent, &outcome, now)?;
        Ok(outcome)
    }

    /// Parent-side handling of a child's notification. The child's token
    /// is revoked; results are recorded, failures reassigned.
    pub fn handle_notification(
        &mut self,
        coord: &mut Coordinator,
        parent: AgentId,
        n: &Notification,
        eligible: &BTreeSet<NodeId>,
        now: u64,
    ) -> Result<Decision, AgentError> {
        let p = self.live(parent)?;
        if p.token.token_id != n.to {
            return Err(AgentError::NotMyChild { parent, to: n.to });
        }
        if p.state.is_terminal() {
            return Err(AgentError::ParentDestroyed(parent));
        }
        let child = self
            .agent_by_token(n.from)
            .ok_or(AgentError::UnknownSender(n.from))?;
        let mission = child
            .mission
            .clone()
            .ok_or(AgentError::NoMission(child.id))?;
        let chain_ok = coord.validate_chain(&child.token, coord.epoch()) == Validity::Valid;
        coord.revoke(n.from)?;

        let digest = match n.kind {
            NotificationKind::MissionComplete { digest } if chain_ok => Some(Some(digest)),
            NotificationKind::PolicyViolation if chain_ok => Some(None),
            _ => None,
        };
        if let Some(digest) = digest {
            let result = TaskResult {
                task: mission.task,
                mission: mission.mission_id,
                host: mission.target,
                digest,
            };
            if let Some(rec) = self.tasks.get_mut(&mission.task) {
                rec.result = Some(result);
            }
            return Ok(Decision::Recorded(result));
        }

        if n.kind == NotificationKind::Compromised {
            self.suspected.insert(mission.target);
        }
        let spec = match self.tasks.get_mut(&mission.task) {
            Some(rec) => {
                rec.failures.push((mission.target, now));
                rec.spec.clone()
            }
            None => mission.spec(),
        };
        Ok(match self.dispatch(coord, parent, &spec, eligible, now)? {
            Assignment::Spawned { agent, mission } => Decision::Reassignment { mission, agent },
            Assignment::Deferred(r) => Decision::GiveUp(r),
        })
    }

    fn live(&self, id: AgentId) -> Result<&AgentInstance, AgentError> {
        self.agents.get(&id).ok_or(AgentError::UnknownAgent(id))
    }

    fn parent_invalid(&self, coord: &Coordinator, agent: AgentId, epoch: &PolicyEpoch) -> bool {
        self.agents[&agent]
            .parent
            .and_then(|p| self.agents.get(&p))
            .is_some_and(|p| coord.validate_chain(&p.token, epoch) != Validity::Valid)
    }

    fn insert(
        &mut self,
        role: AgentRole,
        token: crate::federation::CapabilityToken,
        parent: Option<AgentId>,
        mission: Option<Mission>,
        now: u64,
    ) -> AgentId {
        self.next_agent += 1;
        let id = AgentId(self.next_agent);
        self.by_token.insert(token.token_id, id);
        self.log.push(Transition {
            at: now,
            agent: id,
            token: token.token_id,
            from: None,
            to: AgentState::Instantiated,
        });
        self.agents.insert(
            id,
            AgentInstance {
                id,
                role,
                token,
                parent,
                state: AgentState::Instantiated,
                mission,
            },
        );
        id
    }

    fn set_state(&mut self, id: AgentId, to: AgentState, now: u64) -> Result<(), AgentError> {
        let a = self
            .agents
            .get_mut(&id)
            .ok_or(AgentError::UnknownAgent(id))?;
        if !a.state.can_become(to) {
            return Err(AgentError::IllegalTransition {
                agent: id,
                from: a.state,
                to,
            });
        }
        self.log.push(Transition {
            at: now,
            agent: id,
            token: a.token.token_id,
            from: Some(a.state),
            to,
        });
        a.state = to;
        Ok(())
    }

    fn notify(&mut self, agent: AgentId, kind: NotificationKind, now: u64) -> Notification {
        let a = &self.agents[&agent];
        let to = a
            .parent
            .and_then(|p| self.agents.get(&p))
            .map_or(TokenId(0), |p| p.token.token_id);
        let n = Notification {
            from: a.token.token_id,
            to,
            kind,
            at: now,
        };
        self.outbox.push(n);
        n
    }
}

/// Executes a mission's program under one enforcement mechanism.
pub fn run_mission(
    mission: &Mission,
    policy: &SecurityAutomaton,
    mechanism: Mechanism,
) -> Result<MissionOutcome, AgentError> {
    let program: &GuestProgram = &mission.program;
    let oracle: &[bool] = &mission.oracle;
    let verdict = match mechanism {
        Mechanism::Monitor => run_monitor(policy, program, oracle)?,
        Mechanism::StaticThenRun => match static_analyze(policy, program) {
            Verdict::AcceptedStatically => from_trace(execute_unmonitored(program, oracle)?),
            v => v,
        },
        Mechanism::Rewrite => match rewrite(policy, program) {
            Ok(Verdict::Rewritten(p)) => from_trace(execute_unmonitored(&p, oracle)?),
            Ok(v) => v,
            Err(e) => return refusal(e),
        },
        Mechanism::Combined => match run_combined(policy, program, oracle) {
            Ok(run) => run.verdict,
            Err(e) => return refusal(e),
        },
    };
    Ok(match verdict {
        Verdict::MonitoredOk(trace) => MissionOutcome::Completed {
            digest: result_digest(mission.task, &trace),
            trace,
        },
        Verdict::MonitoredTruncated {
            trace,
            violation_index,
        } => MissionOutcome::Truncated {
            trace,
            violation_index,
        },
        Verdict::RejectedStatically { witness } => MissionOutcome::Rejected { witness },
        Verdict::AcceptedStatically | Verdict::Rewritten(_) => {
            unreachable!("accepted and rewritten verdicts are executed above")
        }
    })
}

fn from_trace(trace: Trace) -> Verdict {
    match trace.termination {
        Termination::Completed => Verdict::MonitoredOk(trace),
        Termination::Truncated { at } => Verdict::MonitoredTruncated {
            trace,
            violation_index: at,
        },
    }
}

fn refusal(e: EnforceError) -> Result<MissionOutcome, AgentError> {
    match e {
        EnforceError::ReservedRegister { reg } => {
            Ok(MissionOutcome::Refused(Refusal::ReservedRegister(reg)))
        }
        EnforceError::LimitExceeded { .. } => Ok(MissionOutcome::Refused(Refusal::TooLarge)),
        EnforceError::Guest(g) => Err(g.into()),
    }
}

/// Digest of a completed computation: the task and its committed events.
pub fn result_digest(task: TaskId, trace: &Trace) -> u64 {
    let mut h = Sha256::new();
    h.update(b"gridtrust/result/v1");
    h.update(task.0.to_be_bytes());
    h.update(trace.compute_units.to_be_bytes());
    for e in &trace.events {
        h.update([e.index() as u8]);
    }
    let out = h.finalize();
    u64::from_be_bytes(out[..8].try_into().expect("sha256 output is 32 bytes"))
}
