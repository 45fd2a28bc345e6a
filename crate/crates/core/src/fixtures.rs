//! Bundled example protocols.

pub const NETBILL: &str = include_str!("../fixtures/netbill.ppl");

/// The extra constraint that makes the customer's waiting time cover the
/// merchant's forwarding.
pub const NETBILL_FIX: &str = "constraint t5 + t6 <= tC;\n";

pub fn netbill_fixed() -> String {
    format!("{NETBILL}{NETBILL_FIX}")
}
