//! Discovery and simulation of data-aware business process simulation models.
//!
//! ```no_run
//! use dasim::event_log::CsvOptions;
//! use dasim::{discover, parse_log, parse_model, simulate, PipelineConfig, SimConfig};
//!
//! # fn main() -> Result<(), Box<dyn std::error::Error>> {
//! let log = parse_log(std::fs::File::open("train.csv")?, &CsvOptions::default())?;
//! let process = parse_model(&std::fs::read_to_string("process.json")?)?;
//! let found = discover(&log, &process, None, &PipelineConfig::default())?;
//! let out = simulate(&found.model, &SimConfig::new(1000, 7))?;
//! println!("{} events", out.log.len());
//! # Ok(())
//! # }
//! ```

pub mod attribute_discovery;
pub mod branching_discovery;
pub mod das_model;
pub mod discovery;
pub mod event_log;
pub mod metrics;
pub mod process_model;
pub mod scenario_gen;
pub mod sim_engine;
pub mod stats;
pub mod update_rules;
pub mod value;

/// Regression tree over `f64`, as stored in update rules.
pub type RegressionTree = stats::RegressionTree<f64>;
/// Regression tree node over `f64`.
pub type RegressionNode = stats::RegressionNode<f64>;

pub use das_model::{load_das, save_das, DasModel};
pub use discovery::{discover, PipelineConfig};
pub use event_log::{parse_log, write_log, EventLog};
pub use process_model::{parse_model, ProcessModel};
pub use sim_engine::{simulate, SimConfig};
pub use value::{AttrKind, Value};
