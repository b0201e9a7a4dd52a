//! The algebra of boson/fermion differential forms with exact Gaussian
//! super-expectations, full integrals by quadrature, the test-function
//! pairing, and the localization operator.

pub mod form;
pub mod loc;
pub mod poly;
pub mod quad;
pub mod testfn;
pub mod wick;

pub use form::{
    build_v, canonicalize, exp_nilpotent, gauge_rotate, q_hat, tau, tau_delta, wedge_mul, FVar,
    FermMono, Form, FormError, VCoefficients,
};
pub use loc::{loc_project, LocError, LocalPolynomial};
pub use poly::{field_degree, sigma_degree, BVar, BosMono, Cpl, Poly};
pub use quad::{integrate_full, integrate_full_capped, quadratic_action, QuadError, QuadratureOutcome};
pub use testfn::{pairing, DeltaTestFunction, MonomialTestFunction, SlotArgs, TestFunction};
pub use wick::{expectation_at_zero, progressive_check, super_expectation};
