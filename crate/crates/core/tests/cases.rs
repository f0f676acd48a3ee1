mod common;

use common::polar_integral;
use meshfree_nonlocal::kernel::KernelSpec;
use meshfree_nonlocal::pointcloud::Point2;
use meshfree_nonlocal::verify::{case_example1, CaseKind};

/// The closed-form Example 1 action agrees with direct quadrature over the ball.
#[test]
fn example1_action_matches_ball_quadrature() {
    let case = case_example1();
    assert_eq!(case.kind, CaseKind::Diffusion);
    for &delta in &[0.05, 0.2, 0.4375] {
        let spec = KernelSpec::new(delta, case.s).unwrap();
        for &(x, y) in &[(0.0, 0.0), (0.3, 0.7), (1.0, 0.25), (-0.2, 1.1)] {
            let p = Point2::new(x, y);
            let ux = (case.solution)(p)[0];
            let integrand = |z: Point2| {
                let q = p + z;
                let a = case.coefficient.eval(p, q).unwrap();
                let g = spec.eval_radius(z.norm()).unwrap();
                vec![2.0 * a * g * ((case.solution)(q)[0] - ux)]
            };
            let brute = polar_integral(&integrand, delta, 1e-12)[0];
            let closed = (case.action)(p, delta)[0];
            assert!(
                (brute - closed).abs() <= 1e-8 * closed.abs().max(1.0),
                "delta={delta} at ({x},{y}): quadrature {brute} vs closed form {closed}"
            );
        }
    }
}
