use std::collections::BTreeSet;

use crate::ids::NodeId;

/// Lowest-numbered eligible node that is not excluded.
pub fn select_provider(eligible: &BTreeSet<NodeId>, excluded: &BTreeSet<NodeId>) -> Option<NodeId> {
    eligible.iter().copied().find(|n| !excluded.contains(n))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(ids: &[u64]) -> BTreeSet<NodeId> {
        ids.iter().copied().map(NodeId).collect()
    }

    #[test]
    fn picks_lowest_not_excluded() {
        assert_eq!(
            select_provider(&set(&[9, 3, 7]), &set(&[7])),
            Some(NodeId(3))
        );
        assert_eq!(
            select_provider(&set(&[9, 3, 7]), &set(&[3])),
            Some(NodeId(7))
        );
        assert_eq!(select_provider(&set(&[3]), &set(&[3])), None);
        assert_eq!(select_provider(&set(&[]), &set(&[])), None);
    }
}
