//! Acceptance checks for `tce-core` live in `tests/acceptance.rs`. They run
//! large simulations and are kept in their own package so that they run
//! after the faster unit and integration tests.
