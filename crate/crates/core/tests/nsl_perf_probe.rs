//! Scaling probe for the NSL corpus entry at its declared bounds.

use guardcheck_core::dsl::parse_protocol;
use guardcheck_core::explore::{explore, Bounds, NullVisitor};
use std::time::Instant;

#[test]
#[ignore = "manual scaling probe"]
fn nsl_state_counts_by_depth() {
    let src = include_str!("../../../corpus/nsl.proto");
    let file = parse_protocol(src).unwrap();
    for depth in 1..=file.bounds.max_trace_len {
        let b = Bounds { max_trace_len: depth, ..file.bounds.clone() };
        let t0 = Instant::now();
        let out = explore(&file.protocol, &b, &mut NullVisitor).unwrap();
        println!(
            "depth {depth}: states={} expansions={} in {:?}",
            out.states,
            out.expansions,
            t0.elapsed()
        );
    }
}
