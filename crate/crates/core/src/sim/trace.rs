use std::collections::BTreeMap;
use std::fmt;

/// One trace line: `time<TAB>seq<TAB>kind<TAB>k=v k=v ...`, keys sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceLine {
    pub time: u64,
    pub seq: u64,
    pub kind: &'static str,
    pub details: BTreeMap<&'static str, String>,
}

impl fmt::Display for TraceLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}\t{}\t", self.time, self.seq, self.kind)?;
        for (i, (k, v)) in self.details.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{k}={v}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EventTrace {
    pub lines: Vec<TraceLine>,
}

impl EventTrace {
    pub fn of_kind<'a>(&'a self, kind: &'a str) -> impl Iterator<Item = &'a TraceLine> + 'a {
        self.lines.iter().filter(move |l| l.kind == kind)
    }
}

impl fmt::Display for EventTrace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for l in &self.lines {
            writeln!(f, "{l}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Metrics {
    pub jobs_total: u64,
    pub jobs_completed: u64,
    pub tasks_dispatched: u64,
    pub tasks_completed: u64,
    pub tasks_reassigned: u64,
    pub giveups: u64,
    pub violations_blocked: u64,
    pub epoch_count: u64,
    pub messages: u64,
    /// Sum of submit-to-completion times over completed jobs.
    pub job_latency_total: u64,
    pub wasted_work: u64,
}

impl Metrics {
    pub fn mean_job_latency(&self) -> f64 {
        if self.jobs_completed == 0 {
            0.0
        } else {
            self.job_latency_total as f64 / self.jobs_completed as f64
        }
    }

    /// Every dispatched mission ended in exactly one recorded outcome.
    pub fn conserved(&self) -> bool {
        self.tasks_dispatched == self.tasks_completed + self.tasks_reassigned + self.giveups
    }
}

impl fmt::Display for Metrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "epoch_count={}", self.epoch_count)?;
        writeln!(f, "giveups={}", self.giveups)?;
        writeln!(f, "jobs_completed={}", self.jobs_completed)?;
        writeln!(f, "jobs_total={}", self.jobs_total)?;
        writeln!(f, "mean_job_latency={:.3}", self.mean_job_latency())?;
        writeln!(f, "messages={}", self.messages)?;
        writeln!(f, "tasks_completed={}", self.tasks_completed)?;
        writeln!(f, "tasks_dispatched={}", self.tasks_dispatched)?;
        writeln!(f, "tasks_reassigned={}", self.tasks_reassigned)?;
        writeln!(f, "violations_blocked={}", self.violations_blocked)?;
        writeln!(f, "wasted_work={}", self.wasted_work)
    }
}

/// Safety checks made while the run progressed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Audit {
    pub results_accepted: u64,
    /// Results accepted although the child's chain did not validate.
    pub invalid_chains: u64,
    /// Results accepted from a node that was compromised at the time.
    pub compromised_results: u64,
    /// Executions whose committed events the policy does not accept.
    pub unsafe_commits: u64,
    pub conservation_broken: bool,
}

impl Audit {
    pub fn is_clean(&self) -> bool {
        self.invalid_chains == 0
            && self.compromised_results == 0
            && self.unsafe_commits == 0
            && !self.conservation_broken
    }
}

impl fmt::Display for Audit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "accepted={} invalid_chains={} compromised_results={} unsafe_commits={} conserved={}",
            self.results_accepted,
            self.invalid_chains,
            self.compromised_results,
            self.unsafe_commits,
            !self.conservation_broken
        )
    }
}
