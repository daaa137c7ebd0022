//! Distribution functions and multivariate normal rectangle probabilities.

pub mod mvn;
pub mod special;

pub use mvn::{mvn_rect_prob, mvn_rect_quantile, MvnConfig, MvnEstimate, MvnQuantile, RectangleIntegrator};
pub use special::{
    chisq_cdf, chisq_quantile, chisq_sf, normal_cdf, normal_pdf, normal_quantile, normal_sf, two_sided_p,
};
