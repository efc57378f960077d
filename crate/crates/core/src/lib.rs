//! Inverted-file indices for maximum inner product search with spilled
//! assignment.
//!
//! Datapoints are partitioned by k-means. Each datapoint is stored in its
//! nearest partition and, optionally, in a second one chosen either as the
//! second-nearest center or by the orthogonality-amplified residual (SOAR)
//! loss, which penalizes second residuals parallel to the first. Postings
//! carry PQ codes of the residuals; search probes the top partitions by
//! `⟨q, center⟩`, deduplicates, and reranks at full precision.
//!
//! ```
//! use soar::{build, synth::gaussian_mixture, BuildParams, SearchParams, SpillPolicy};
//!
//! let x = gaussian_mixture(2_000, 16, 20, 0.3, 7).unwrap();
//! let index = build(&x, &BuildParams::new(8, SpillPolicy::soar(1.0).unwrap(), 2, 7)).unwrap();
//! let out = index.search(x.row(0), &SearchParams::new(10, 2)).unwrap();
//! assert_eq!(out.neighbors.len(), 10);
//! ```

pub mod dataset;
pub mod error;
pub mod eval;
pub mod index;
pub mod io;
pub mod kmeans;
pub mod pq;
pub mod synth;
pub mod vector;
pub mod vq;

pub use dataset::Dataset;
pub use error::{Error, Result};
pub use index::{build, build_with_codebook, BuildParams, PostingList, SearchOutput, SearchParams, SoarIndex};
pub use pq::{memory_accounting, MemoryAccounting, PqCode, PqCodebook, Precision};
pub use vector::{brute_force_mips, brute_force_mips_batch, cos_angle, inner_product, rank, residual, Neighbor};
pub use vq::{
    assign_primary, assign_spilled_naive, assign_spilled_soar, soar_loss, train_kmeans, AssignmentTable, Codebook,
    SpillPolicy,
};
