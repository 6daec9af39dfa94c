//! Files: events, models and run configuration.

pub mod config;
pub mod events;
pub mod model_file;

pub use config::{read_grid_csv, read_polygon, RunConfig};
pub use events::{load_events, write_events_csv, ColumnMapping, LoadedEvents};
pub use model_file::{load_model, save_model, FitMetadata, LoadedModel, ModelFile};
