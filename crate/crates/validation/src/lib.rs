//! Holds the `acceptance` integration test target. Run it with
//! `cargo test -p higoc-validation --test acceptance -- --test-threads=1`.
