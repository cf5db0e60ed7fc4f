//! Pose tracking of a rigid obstacle from far-field acoustic scattering data.
//!
//! The modules follow the pipeline: [`specfun`] and [`geometry`] feed the
//! boundary-integral solver in [`forward`]; [`motion`] turns one solve into
//! far fields at any pose; [`bayesopt`] and [`inneropt`] search angle and
//! translation; [`trajectory`] simulates motion; [`tracker`] runs the step
//! loop; [`nn`] recovers an unknown shape from its first measurement.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod specfun;
pub mod geometry;
pub mod forward;
mod spline;
pub mod motion;
pub mod bayesopt;
pub mod inneropt;
pub mod trajectory;
pub mod tracker;
pub mod nn;

#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;
    #[doc = include_str!("../../../book/src/shapes.md")]
    struct Shapes;
    #[doc = include_str!("../../../book/src/forward.md")]
    struct Forward;
    #[doc = include_str!("../../../book/src/motion.md")]
    struct Motion;
    #[doc = include_str!("../../../book/src/angle-search.md")]
    struct AngleSearch;
    #[doc = include_str!("../../../book/src/translation-search.md")]
    struct TranslationSearch;
    #[doc = include_str!("../../../book/src/trajectory.md")]
    struct Trajectory;
    #[doc = include_str!("../../../book/src/tracking.md")]
    struct Tracking;
    #[doc = include_str!("../../../book/src/network.md")]
    struct Network;
    #[doc = include_str!("../../../book/src/cli.md")]
    struct Cli;
}
