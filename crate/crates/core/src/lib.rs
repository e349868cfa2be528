// `!(x > 0.0)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod category;
pub mod correspondence;
pub mod detection;
pub mod error;
pub mod geom;
pub mod object_map;
pub mod oracle;
pub mod pipeline;
pub mod registration;
pub mod rng;
pub mod scene;
pub mod spatial;
pub mod stats;
