//! Pull-back geometry of persistence-image encodings of point clouds.
//!
//! The encoding maps a cloud to a clique-complex filtration, reduces it to a
//! persistence diagram and rasterizes the diagram into a persistence image.
//! [`pullback::encoding_jacobian`] differentiates the whole chain with
//! respect to the point coordinates; the rest of [`pullback`] analyses the
//! resulting linear map, and [`vectorfields`] produces the tangent vectors to
//! probe it with.

pub mod datagen;
pub mod error;
pub mod filtration;
pub mod geometry;
pub mod persistence;
pub mod pimage;
pub mod pullback;
pub mod vectorfields;

pub use datagen::Dataset;
pub use error::{Error, Result};
pub use filtration::{build_complex, FilteredComplex, FiltrationKind, Simplex};
pub use geometry::{PointCloud, RigidTransform};
pub use persistence::{reduce, Diagram, EssentialCap, PersistencePair};
pub use pimage::{compute_pi, PIParams, PersistenceImage, Quadrature, Weighting};
pub use pullback::{encoding_jacobian, EncodingJacobian, EncodingSpec, GramMatrix, Spectrum};
pub use vectorfields::{FieldSample, FieldScheme, PerturbationKind};
