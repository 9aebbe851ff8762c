//! Internal DLA on boxes of the integer lattice and on supercritical
//! bond-percolation clusters.
//!
//! ```
//! use idla_core::{generate, idla, RootSeed};
//!
//! let env = generate(2, 20, 0.7, 1).unwrap();
//! let mut streams = RootSeed(1).replica(0);
//! let (aggregate, paused) = idla(&env, env.origin(), 50, None, &mut streams).unwrap();
//! assert_eq!(aggregate.len(), 50);
//! assert!(paused.is_empty());
//! ```

pub mod environment;
pub mod error;
pub mod exit;
pub mod experiments;
pub mod idla;
pub mod law;
pub mod linalg;
pub mod metric;
pub mod raster;
pub mod records;
pub mod rng;
pub mod stats;
pub mod walk;

pub use environment::{generate, Environment, EnvironmentKind, RunManifest, Site, Vertex};
pub use error::{Error, Result};
pub use exit::{exact_exit_distribution, exact_walk_law, ExitDistribution, WalkLaw};
pub use idla::{
    abelian_restart, add_batch, add_particle, idla, staged_construction, Aggregate, Particle,
    PausedLedger, StageTrace,
};
pub use rng::{ReplicaStreams, RootSeed, StepRng};
pub use walk::{walk_until, PauseRegion, SiteSet, SortedSites, WalkOutcome, WalkStatus};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
