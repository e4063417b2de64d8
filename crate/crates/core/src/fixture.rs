//! The double-integrator benchmark problem used across the test suites
//! and shipped example configurations.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::mpc::{BoxSet, LinearSystem, MpcProblem, MpcSpec};

/// Double integrator with unit sampling: position/velocity state, force
/// input, `|x1| <= 25`, `|x2| <= 5`, `|u| <= 1`, `Q = I`, `R = 0.1`,
/// horizon 5.
pub fn double_integrator() -> Result<MpcProblem> {
    let system = LinearSystem::new(
        DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]),
        DMatrix::from_row_slice(2, 1, &[0.5, 1.0]),
    )?;
    let state_box = BoxSet::symmetric(DVector::from_vec(vec![25.0, 5.0]))?;
    let input_box = BoxSet::symmetric(DVector::from_vec(vec![1.0]))?;
    let spec = MpcSpec::from_weights(
        &system,
        DMatrix::identity(2, 2),
        DMatrix::from_element(1, 1, 0.1),
        5,
    )?;
    MpcProblem::new(system, state_box, input_box, spec)
}
