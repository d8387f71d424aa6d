//! Distantly supervised entity-event extraction.
//!
//! Given a news corpus with pre-computed person mentions and a knowledge base
//! of known police-fatality victims, this crate trains mention-level logistic
//! classifiers under a latent noisy-or disjunction (either on hard distant
//! labels or with EM over soft labels), ranks candidate entities by their
//! probability of having been killed by police, and evaluates the ranking with
//! precision-recall metrics and bootstrap significance tests.
//!
//! The numeric modules are generic over the scalar type through [`Real`];
//! the aliases at the crate root fix the common `f64` instantiation.

pub mod baseline;
pub mod bootstrap;
pub mod classifier;
pub mod corpus;
pub mod disjunction;
pub mod error;
pub mod eval;
pub mod features;
pub mod pipeline;
pub mod scalar;
pub mod synthgen;

pub use error::{Error, Result};
pub use scalar::Real;

pub type HashedVector = features::HashedVector<f64>;
pub type MentionModel = classifier::MentionModel<f64>;
pub type MentionModel32 = classifier::MentionModel<f32>;
pub type WeightedExample = classifier::WeightedExample<f64>;
pub type EntityPrediction = disjunction::EntityPrediction<f64>;
pub type PosteriorTable = disjunction::PosteriorTable<f64>;
pub type EmState = disjunction::EmState<f64>;
pub type PrCurve = eval::PrCurve<f64>;
pub type EvalReport = eval::EvalReport<f64>;
pub type BootstrapResult = bootstrap::BootstrapResult<f64>;
