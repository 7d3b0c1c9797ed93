// Each test target uses a different subset of the suite.
#[allow(dead_code)]
pub mod property_suite;
