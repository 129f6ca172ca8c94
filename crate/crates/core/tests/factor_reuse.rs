//! The step operators are factored once per level and reused across the
//! whole time loop; this lives in its own test binary so the process-wide
//! factorization counter is not disturbed by other tests.

use rrdc::mesh::build_mesh;
use rrdc::problems::example_neumann;
use rrdc::schemes::{run_tail, Scheme, StepOperators};
use rrdc::sparse::factorization_count;

#[test]
fn one_factorization_set_per_level() {
    let problem = example_neumann();
    let mesh = build_mesh(8, problem.interface, problem.layout).unwrap();

    let before = factorization_count();
    let ops = StepOperators::new(&mesh, &problem, 0.125, Scheme::Correction).unwrap();
    let after_build = factorization_count();
    // Solid and fluid step operators plus the interface mass used for the
    // initial multiplier projection.
    assert_eq!(after_build - before, 3);

    // Advancing any number of steps performs no further factorizations:
    // the prediction and correction passes share the same factors.
    run_tail(&ops, 0.125, 0.25).unwrap();
    run_tail(&ops, 0.125, 0.25).unwrap();
    assert_eq!(factorization_count(), after_build);
}
