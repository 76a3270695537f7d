pub mod etc_sim;
pub mod galerkin;
pub mod io;
pub mod lmi;
pub mod mnn;
pub mod pde_sim;
pub mod presets;
pub mod profile;
pub mod quadrature;
