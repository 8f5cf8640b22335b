//! Per-point credit for the global max-pool.

use crate::error::Result;
use crate::features::SampleInput;
use crate::model::MiniOdfNet;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContributionMap {
    /// Channels won by each point of the source cloud. Sums to the global
    /// feature width.
    pub counts: Vec<usize>,
    /// Channels whose maximum was shared by more than one point.
    pub tied_channels: usize,
    /// Every channel was tied.
    pub degenerate: bool,
}

impl ContributionMap {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// `index,score` lines, one per source point.
    pub fn csv(&self) -> String {
        let mut out = String::from("index,score\n");
        for (i, c) in self.counts.iter().enumerate() {
            out.push_str(&format!("{i},{c}\n"));
        }
        out
    }
}

/// Credits each global feature channel to the point that wins its max-pool
/// (lowest index on ties). `source_len` is the size of the original cloud.
pub fn contribution_map(net: &MiniOdfNet, sample: &SampleInput, source_len: usize) -> Result<ContributionMap> {
    let mut sample = sample.clone();
    sample.keep = None;
    let cache = net.forward(&sample)?;
    let (_, pre_pool) = cache.pre_pool();
    let winners = cache.pool_points();
    let mut counts = vec![0usize; source_len];
    let mut tied = 0;
    for (c, &w) in winners.iter().enumerate() {
        counts[sample.source_index[w]] += 1;
        let col = pre_pool.column(c);
        if col.iter().filter(|&&v| v == col[w]).count() > 1 {
            tied += 1;
        }
    }
    Ok(ContributionMap {
        counts,
        tied_channels: tied,
        degenerate: tied == winners.len(),
    })
}
