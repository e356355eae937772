//! The book's code listings, compiled and run as doc-tests.
//!
//! mdbook cannot test snippets that depend on external crates, so each
//! chapter is pulled in here as a module doc and `cargo test` checks it.

macro_rules! chapters {
    ($($name:ident => $file:literal),* $(,)?) => {
        $(
            #[cfg(doctest)]
            #[doc = include_str!(concat!("../../../book/src/", $file))]
            pub mod $name {}
        )*
    };
}

chapters! {
    introduction => "introduction.md",
    fingerprints => "fingerprints.md",
    oracles => "oracles.md",
    policy => "policy.md",
    dreinforce => "dreinforce.md",
    baselines => "baselines.md",
    metrics => "metrics.md",
    experiments => "experiments.md",
    protocol => "protocol.md",
}
