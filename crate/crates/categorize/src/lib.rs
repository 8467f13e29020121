//! Entity categorization from precomputed name embeddings.
//!
//! Embeddings are reduced with PCA, clustered with a Gaussian mixture whose
//! size is chosen by BIC (AIC is reported alongside), and cross-checked with
//! K-means. The result is an `entity<TAB>c_<index>` category map.

pub mod assign;
pub mod embedding;
pub mod error;
pub mod gmm;
pub mod kmeans;
pub mod pca;
pub mod select;

pub use assign::{assign_categories, write_category_map, write_score_table};
pub use embedding::EmbeddingMatrix;
pub use error::{CategorizeError, Result};
pub use gmm::{aic, bic, gmm_fit, CovarianceType, GmmModel, GmmParams};
pub use kmeans::{kmeans, rand_index, KMeans};
pub use pca::{pca_fit, Projection};
pub use select::{select_model, Criterion, ScoreRow, SelectParams, Selection};
