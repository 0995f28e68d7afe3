pub mod chaindag;
pub mod cli;
pub mod config;
pub mod entropy;
pub mod experiments;
pub mod minesim;
pub mod netsim;
pub mod time;
