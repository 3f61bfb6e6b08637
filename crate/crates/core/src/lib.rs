//! Price-responsive hierarchical MPC for a heat-pump heated single-family
//! house, together with a behavioral plant simulator and the comparison-day
//! evaluation methodology.
//!
//! The crate is organized by control layer and supporting models:
//!
//! * [`numerics`] — dense linear algebra helpers, exact ZOH discretization
//!   and a convex QP interface used by every optimizing module.
//! * [`building`] — the two-state lumped thermal model of the house and its
//!   grey-box parameter fit.
//! * [`estimation`] — linear Kalman filter for the unmeasured floor state.
//! * [`hp`] — Carnot-factor heat-pump efficiency model, tangent cuts and
//!   robust fitting.
//! * [`pricing`] — buy/sell electricity price construction and PV
//!   self-consumption billing corrections.
//! * [`forecast`] — weather series handling and PV output regression.
//! * [`mpc`] — the supervisory mixed-integer optimal control problem,
//!   branch-and-bound solver, enumeration oracle and solution validator.
//! * [`valves`] — the reactive valve-selection problem routing water to the
//!   coldest rooms while tracking a flow reference.
//! * [`heatctl`] — mid-level controller tracking the hourly heat budget via
//!   an artificial ambient temperature and compressor block signal.
//! * [`plant`] — closed-loop plant: continuous house thermodynamics plus a
//!   behavioral emulation of a commercial air-to-water heat pump.
//! * [`evaluation`] — comparison-day savings methodology and report
//!   operations (day/night price ratio, peak-block heuristic, production
//!   patterns).
//! * [`synth`] — deterministic synthetic scenario generation for studies.
//! * [`io`] — versioned CSV/JSON schemas shared with the CLI.
//!
//! # Conventions
//!
//! Power is in W, heat flow in W, energy in Wh or kWh (stated per field),
//! temperatures in °C, prices in €/kWh, time in seconds unless a field says
//! otherwise. Hour indices are 0..24 local time. All randomized procedures
//! take explicit seeds and are bit-reproducible.

pub mod building;
pub mod estimation;
pub mod evaluation;
pub mod forecast;
pub mod heatctl;
pub mod hp;
pub mod io;
pub mod mpc;
pub mod numerics;
pub mod plant;
pub mod pricing;
pub mod synth;
pub mod valves;
