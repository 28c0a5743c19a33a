pub mod netgraph;
pub mod embed;
pub mod cluster;
pub mod demand;
pub mod rideshare;
pub mod assign;
pub mod sim;
