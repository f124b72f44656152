//! Cotangent lifts, moment maps and singularities of integrable Hamiltonian
//! systems, with numerical rigidity experiments.

pub mod expr;
pub mod flows;
pub mod lift;
pub mod rigidity;
pub mod linalg;
pub mod sampling;
pub mod singularity;
pub mod smooth_map;
pub mod symplectic;
pub mod system_file;

pub use expr::{gradient, hessian, jacobian, parse_expr, Expr, ExprError, ParseError, Program, VarBinding};
pub use symplectic::{DarbouxChart, MomentMapSystem, Orientation, PhasePoint, VectorFieldExpr};
