//! Truncated cusped spaces for relatively hyperbolic groups, discretized
//! boundaries with shadow/ring machinery, and quasiconformal analysis of
//! boundary maps induced by quasi-isometries.

pub mod boundary;
pub mod cusped;
pub mod graph;
pub mod group;
pub mod horoball;
pub mod hyperbolicity;
pub mod qc;
pub mod rng;

pub use boundary::{AnchorSpec, BoundaryAtlas, BoundaryError, Ring, Shadow};
pub use qc::{BoundaryMap, Eta, QcError, VertexMap};
pub use graph::{DistMap, GeodesicDag, Graph, GraphError, HalfInt};
pub use group::{
    enumerate_ball, parse_group_spec, CosetId, Element, GroupBall, GroupError, GroupKind,
    GroupSpec, Peripheral, Sym,
};
