pub mod analysis;
pub mod demand;
pub mod emissions;
pub mod experiment;
pub mod network;
pub mod routing;
pub mod seeds;
pub mod sim;
