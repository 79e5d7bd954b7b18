//! Shared fixtures for the criterion benches.

use iioss_core::benchmarks;
use iioss_core::bounds::IIOSSGains;
use iioss_core::sim::ControlSystem;

/// The scalar worked example with its trajectory gains.
pub fn scalar_fixture() -> (ControlSystem, IIOSSGains) {
    let bench = benchmarks::get("scalar_iiss").expect("registry entry");
    let gains = bench.gains.clone().expect("shipped gains");
    (bench.system, gains)
}
