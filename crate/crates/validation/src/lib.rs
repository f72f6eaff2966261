//! Holds the `acceptance` integration test target. Run it with
//! `cargo test -p qsynth-validation --test acceptance`.
