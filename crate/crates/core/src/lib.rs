pub mod channel;
pub mod error;
pub mod experiments;
pub mod fock;
pub mod optimize;
pub mod qfi;
pub mod receiver;
pub mod states;

pub use error::{Error, Result};

pub type C64 = num_complex::Complex64;
