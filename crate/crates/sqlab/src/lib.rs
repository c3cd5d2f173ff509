//! Verification laboratory for square function estimates on finite-type curves,
//! degenerate cones and the complex cone.
//!
//! Geometry and measurement code is generic over [`Real`] (`f32`/`f64`); the
//! aliases below fix the scalar to `f64`, which is what the CLI and the
//! acceptance suite use.

pub mod biortho;
pub mod complex_cone;
pub mod cone_cover;
pub mod curve_cover;
pub mod error;
pub mod fourier_lab;
pub mod geom;
pub mod rng;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Rect2 = curve_cover::Rect2<f64>;
pub type Covering2 = curve_cover::Covering2<f64>;
pub type ModelCurve = curve_cover::ModelCurve<f64>;
pub type Plank3 = cone_cover::Plank3<f64>;
pub type ConeCover = cone_cover::ConeCover<f64>;
pub type CenteredLadder = cone_cover::CenteredLadder<f64>;
pub type LorentzMap = cone_cover::LorentzMap<f64>;
pub type Plank5 = complex_cone::Plank5<f64>;
pub type ComplexCover = complex_cone::ComplexCover<f64>;
pub type ComplexLadder = complex_cone::ComplexLadder<f64>;
pub type ComplexCurveCover = complex_cone::ComplexCurveCover<f64>;
pub type CurveLab = fourier_lab::CurveLab;
pub type ConeLab = fourier_lab::ConeLab;
