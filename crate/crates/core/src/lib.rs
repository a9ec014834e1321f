//! Corrosion-rate modelling for alloys.
//!
//! The forward direction predicts a corrosion rate (mils per year) from an
//! alloy's atomic composition and its exposure environment; the inverse
//! direction predicts trace-element compositions from a target rate.
//!
//! Model families, all implemented here from first principles:
//!
//! - exact Gaussian process regression with ARD RBF / Matérn kernels
//!   ([`gpr`], [`kernels`]), including a log-target variant;
//! - a fully connected ReLU network trained with Huber loss ([`neural`]);
//! - CART trees, random forests and gradient boosting ([`trees`]);
//! - a multi-target inverse ensemble over feature-availability subsets
//!   ([`inverse`]).
//!
//! [`dataset`] and [`preprocess`] cover ingestion and feature assembly,
//! [`evaluation`] the metrics, grid search and model comparison harness.

pub mod dataset;
pub mod elements;
pub mod evaluation;
pub mod forward;
pub mod gpr;
pub mod inverse;
pub mod kernels;
pub mod linalg;
pub mod neural;
pub mod optim;
pub mod preprocess;
pub mod trees;

pub use elements::Element;
