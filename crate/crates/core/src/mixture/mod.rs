//! Core mixture-model types: components, mixing distributions, datasets,
//! vectorization, alignment, and serialization.

mod component;
mod dataset;
pub mod json;
mod mixing;
mod vectorize;

pub use component::{Component, Family, GammaComponent, GaussianComponent, LN_2PI};
pub use dataset::{partition, Dataset};
pub use mixing::{MixingDistribution, WEIGHT_SUM_TOL};
pub use vectorize::{
    align, vectorize, vectorize_permuted, Alignment, ParamLayout, ParamVector, MAX_ALIGN_ORDER,
};
