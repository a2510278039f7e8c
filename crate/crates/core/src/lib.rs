pub mod analytics;
pub mod channel;
pub mod construction;
pub mod error;
pub mod experiments;
pub mod feedback;
pub mod montecarlo;
pub mod nb;
pub mod polar;
pub mod rng;
pub mod sc;
pub mod sk;
