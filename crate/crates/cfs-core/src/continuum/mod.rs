//! Minkowski continuum limit: Dirac algebra, state-stable kernels, wave
//! packets, regularized currents and the Fourier layer identity.

pub mod current;
pub mod dirac;
pub mod lemma;
pub mod packet;
pub mod qhat;

pub use current::{
    cross_terms, current_closed, current_direct, current_direct_extrapolated, energy_closed, CrossTermReport,
    DirectEstimate, DirectOptions, DualForm, EtaSweep, PositionGrid,
};
pub use lemma::{exint_check, fourier_layer_lemma, GaussianProfile, LemmaGrid, LemmaReport};
pub use packet::WavePacket;
pub use qhat::{
    consistency_check, consistent_model, default_q2_grid, flat_model, piecewise_linear_model, state_stability_check,
    ConsistencyReport, Curve, FixtureSpec, QhatModel, ShellSlopes, StabilityReport,
};
