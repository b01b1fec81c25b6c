pub mod audit;
pub mod curves;
pub mod demo;
pub mod solve;
