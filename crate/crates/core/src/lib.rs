//! Market dynamics for strategic generators bidding into a DC optimal power
//! flow dispatch.
//!
//! * [`network`]: grids, constraint matrices, validation and presets.
//! * [`opf`]: the cost-minimizing dispatch and the efficient bids derived from it.
//! * [`lp`]: the ISO's bid-weighted dispatch, solved to a vertex.
//! * [`dynamics`]: the bid adjustment iteration and its convergence bounds.
//! * [`robustness`]: disturbed, deviating and colluding variants.
//! * [`runner`]: configuration, orchestration and CSV/JSON output.
//!
//! ```
//! use gridbid::dynamics::{run_baa, StepsizeSchedule, StoppingCriterion};
//! use gridbid::lp::IsoPolicy;
//! use gridbid::network::ieee9_modified;
//! use gridbid::opf::{efficient_bid, solve_dcopf, BidProfile};
//!
//! let case = ieee9_modified();
//! let dispatch = solve_dcopf(&case)?;
//! let b_star = efficient_bid(&case, &dispatch)?;
//! let b1 = BidProfile::new(vec![7.6096, 9.9313, 7.6087, 8.4827, 6.6175, 7.5254]);
//! let trace = run_baa(
//!     &case,
//!     &b1,
//!     &StepsizeSchedule::Constant { beta: 0.01 },
//!     &StoppingCriterion::horizon(500),
//!     &IsoPolicy::Deterministic,
//!     0,
//! )?;
//! assert!(trace.terminal_distance().unwrap() < b_star.distance(&b1));
//! # Ok::<(), gridbid::Error>(())
//! ```

pub mod dynamics;
pub mod error;
pub mod lp;
pub mod network;
pub mod opf;
pub mod rng;
pub mod robustness;
pub mod runner;

pub use error::{Error, Result};
pub use lp::{enumerate_vertices, solve_sdcopf, IsoPolicy, LpSolution, SdcopfProblem};
pub use network::{build_matrices, total_load, validate_case, ConstraintMatrices, NetworkCase};
pub use opf::{
    best_response_quantity, check_kkt, efficient_bid, nash_from_duals, payoff, solve_dcopf, BidProfile,
    DispatchSolution, KktReport,
};
