use std::fmt;
use std::str::FromStr;

/// One unit of delegable functionality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Capability {
    ReadHostData,
    WriteHostData,
    Compute,
    SendMessage,
    SpawnDelegate,
}

impl Capability {
    pub const ALL: [Capability; 5] = [
        Capability::ReadHostData,
        Capability::WriteHostData,
        Capability::Compute,
        Capability::SendMessage,
        Capability::SpawnDelegate,
    ];

    /// Stable wire code; sets serialize as ascending codes.
    pub fn code(self) -> u8 {
        match self {
            Capability::ReadHostData => 0,
            Capability::WriteHostData => 1,
            Capability::Compute => 2,
            Capability::SendMessage => 3,
            Capability::SpawnDelegate => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Capability::ReadHostData => "read",
            Capability::WriteHostData => "write",
            Capability::Compute => "compute",
            Capability::SendMessage => "send",
            Capability::SpawnDelegate => "spawn",
        }
    }
}

impl fmt::Display for Capability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Capability {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Capability::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown capability `{s}`"))
    }
}

/// A set of capabilities packed into one byte.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct CapSet(u8);

impl CapSet {
    pub const EMPTY: CapSet = CapSet(0);

    pub fn all() -> Self {
        Capability::ALL.into_iter().collect()
    }

    pub fn insert(&mut self, cap: Capability) {
        self.0 |= 1 << cap.code();
    }

    pub fn contains(self, cap: Capability) -> bool {
        self.0 & (1 << cap.code()) != 0
    }

    pub fn is_subset(self, other: CapSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn intersection(self, other: CapSet) -> CapSet {
        CapSet(self.0 & other.0)
    }

    pub fn union(self, other: CapSet) -> CapSet {
        CapSet(self.0 | other.0)
    }

    pub fn difference(self, other: CapSet) -> CapSet {
        CapSet(self.0 & !other.0)
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    /// Ascending by wire code.
    pub fn iter(self) -> impl Iterator<Item = Capability> {
        Capability::ALL
            .into_iter()
            .filter(move |c| self.contains(*c))
    }
}

impl FromIterator<Capability> for CapSet {
    fn from_iter<I: IntoIterator<Item = Capability>>(iter: I) -> Self {
        let mut set = CapSet::EMPTY;
        for cap in iter {
            set.insert(cap);
        }
        set
    }
}

impl<const N: usize> From<[Capability; N]> for CapSet {
    fn from(caps: [Capability; N]) -> Self {
        caps.into_iter().collect()
    }
}

impl fmt::Display for CapSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<_> = self.iter().map(Capability::name).collect();
        if names.is_empty() {
            f.write_str("-")
        } else {
            f.write_str(&names.join(","))
        }
    }
}
