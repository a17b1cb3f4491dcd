use guardcheck_core::dsl::parse_protocol;
use guardcheck_core::explore::{explore, Bounds, NullVisitor};
use std::time::Instant;
fn main() {
    let src = std::fs::read_to_string("corpus/nsl.proto").unwrap();
    let file = parse_protocol(&src).unwrap();
    for depth in 1..=7 {
        let b = Bounds { max_trace_len: depth, ..file.bounds.clone() };
        let t0 = Instant::now();
        let out = explore(&file.protocol, &b, &mut NullVisitor).unwrap();
        println!("depth {depth}: states={} expansions={} in {:?}", out.states, out.expansions, t0.elapsed());
    }
}
