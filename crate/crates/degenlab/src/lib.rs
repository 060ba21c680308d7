//! Numerical laboratory for a one-parameter family of quadratic polynomial
//! endomorphisms of C^2 that collapses onto a Henon map as the parameter
//! t goes to 0.
//!
//! The library is organised around the pipeline the `degenlab` binary drives:
//!
//! * [`family`]    - the maps themselves: evaluation, Jacobians, regularity,
//!                   the rescaled chart, and flat key=value (de)serialization.
//! * [`polyroot`]  - dense complex polynomial roots up to degree 4
//!                   (companion matrix, balancing, shifted QR, Newton polish).
//! * [`preimage`]  - fibers of a point: resultant elimination to a quartic,
//!                   back-substitution, Newton refinement, multiplicities.
//! * [`measure`]   - equilibrium-measure sampling by backward random
//!                   iteration, localization boxes, log-integrals, angles.
//! * [`lyapunov`]  - QR exponent estimation along backward orbits, cone
//!                   invariance checks, periodic points, periodic-point
//!                   exponent estimates.
//! * [`asymptotics`] - small-t laws: limit targets, |t| sweeps, slope fits,
//!                   Richardson extrapolation, harmonicity probes.
//! * [`bifscan`]   - parameter-plane scans over the quadratic coupling of the
//!                   second coordinate, discrete Laplacians, concentration
//!                   statistics, heatmap export.
//! * [`cli`]       - the `degenlab` command line front end.
//!
//! Everything downstream of a seed is deterministic: parallel work is split
//! into indexed tasks with RNG streams derived by [`stats::mix64`], and all
//! reductions happen in task-index order, so results and artifact bytes do
//! not depend on the worker count.

pub mod asymptotics;
pub mod bifscan;
pub mod cli;
pub mod family;
pub mod lyapunov;
pub mod measure;
pub mod polyroot;
pub mod preimage;
pub mod stats;
