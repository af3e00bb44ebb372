pub mod constructs;
pub mod detector;
pub mod dirnet;
pub mod manager;
pub mod sim;
pub mod timeout;
pub mod types;
