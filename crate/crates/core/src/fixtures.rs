//! Litmus sources shared by unit tests.

pub const LB: &str = "locations x y;
a = load(rlx, x)
store(rlx, y, 1)
|||
b = load(rlx, y)
store(rlx, x, b)
exists (a = 1 && b = 1)
";

pub const LB_DATA: &str = "locations x y;
a = load(rlx, x)
store(rlx, y, a)
|||
b = load(rlx, y)
store(rlx, x, b)
exists (a = 1 && b = 1)
";

pub const LB_FAKE: &str = "locations x y;
a = load(rlx, x)
store(rlx, y, 1 + a * 0)
|||
b = load(rlx, y)
store(rlx, x, b)
exists (a = 1 && b = 1)
";

/// The three-location load-buffering program used for the certification walkthrough.
pub const LB_XYZ: &str = "locations x y z;
r1 = load(rlx, x)
store(rlx, y, r1)
store(rlx, z, 1)
|||
r2 = load(rlx, y)
r3 = load(rlx, z)
store(rlx, x, r3)
exists (r1 = 1 && r2 = 1 && r3 = 1)
";
