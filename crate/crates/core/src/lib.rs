pub mod elliptic;
pub mod energy;
pub mod estimators;
pub mod experiment;
pub mod field;
pub mod minimize;
