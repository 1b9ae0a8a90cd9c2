//! Straight-line reference implementations used to cross-check `aerodet`,
//! and seeded fixture generators shared by the property tests and the
//! acceptance suite. Nothing here calls the code it checks.

pub mod eval_ref;
pub mod fixtures;
pub mod tensor_ref;
