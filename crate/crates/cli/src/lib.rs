//! Library side of the `corrml` command: the run configuration, shared
//! with the fuzz targets.

pub mod config;
