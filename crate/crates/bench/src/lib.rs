//! Shared inputs for the solver benchmarks.

use gridbid::network::{ieee9_modified, NetworkCase};
use gridbid::opf::BidProfile;

/// The 9-bus preset.
pub fn case() -> NetworkCase {
    ieee9_modified()
}

/// The usual starting bids for the 9-bus preset.
pub fn initial_bids() -> BidProfile {
    BidProfile::new(vec![7.6096, 9.9313, 7.6087, 8.4827, 6.6175, 7.5254])
}
