//! Holds the `acceptance` test target only; run it with
//! `cargo test -p groupid-suite --test acceptance`.
