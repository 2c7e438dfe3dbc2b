//! Finite-difference checks of the full client objective.

mod common;

use common::check_view;
use fedmvc::client::loss::Bandwidth;
use fedmvc::client::Ablation;

#[test]
fn full_objective_two_views() {
    for bandwidth in [Bandwidth::Fixed(2.0), Bandwidth::Median] {
        for (dim, seed) in [(3, 1), (2, 2)] {
            let err = check_view(dim, Ablation::Full, bandwidth, seed);
            assert!(err < 1e-4, "{bandwidth:?}, view of width {dim}: max relative error {err:e}");
        }
    }
}

#[test]
fn ablated_objectives() {
    // The no-fusion-module variant detaches on purpose, so finite
    // differences see a different function there.
    for ablation in [
        Ablation::NoMigration,
        Ablation::NoGlobalGuidance,
        Ablation::NoGlobalHead,
    ] {
        let err = check_view(3, ablation, Bandwidth::Median, 7);
        assert!(err < 1e-4, "{}: max relative error {err:e}", ablation.as_str());
    }
}

