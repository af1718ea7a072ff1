//! Sum-of-squares reasoning about probability distributions over Boolean
//! and bounded real variables: constraint systems, moment relaxations, a
//! conic solver with checkable refutation certificates, learning from
//! partial examples, and bounded-level resolution.

pub mod learn;
pub mod model;
pub mod poly;
pub mod query;
pub mod relax;
pub mod resolution;
pub mod sdp;

pub use model::{parse_dimacs, parse_problem, Clause, ClauseEncoding, ConstraintSystem, Direction, Literal, ModelError, Origin};
pub use poly::{IntervalBound, Monomial, PartialAssignment, PolyError, Polynomial, VarId, VarKind, Variables};
pub use relax::{attach_objective, build_program, RelaxError, Sense, SosProgram};
pub use sdp::{optimize, solve, Certificate, Outcome, SolverOptions};
