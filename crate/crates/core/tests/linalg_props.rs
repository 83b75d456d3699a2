use nsfold::linalg::{LinalgError, SquareMatrix};
use proptest::prelude::*;

fn matrix(max_n: usize) -> impl Strategy<Value = SquareMatrix> {
    (1..=max_n).prop_flat_map(|n| {
        prop::collection::vec(-2.0f64..2.0, n * n)
            .prop_map(move |data| SquareMatrix::new(n, data).unwrap())
    })
}

proptest! {
    #[test]
    fn adjugate_commutes_to_determinant(a in matrix(6)) {
        let n = a.dim();
        let det = a.determinant();
        let bound = 1e-9 * a.max_abs().powi(n as i32).max(1.0);
        let adj = a.adjugate();
        for prod in [a.matmul(&adj), adj.matmul(&a)] {
            for i in 0..n {
                for j in 0..n {
                    let target = if i == j { det } else { 0.0 };
                    prop_assert!((prod[(i, j)] - target).abs() <= bound);
                }
            }
        }
    }

    #[test]
    fn first_row_ignores_first_column(
        a in matrix(6),
        shift in prop::collection::vec(-5.0f64..5.0, 6),
    ) {
        let edited = a.with_first_column_shifted(&shift[..a.dim()]);
        let (p, q) = (a.first_row_of_adjugate(), edited.first_row_of_adjugate());
        for (x, y) in p.iter().zip(q.iter()) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn solve_recovers_rhs(a in matrix(6), rhs in prop::collection::vec(-3.0f64..3.0, 6)) {
        let rhs = &rhs[..a.dim()];
        match a.solve(rhs) {
            Ok(x) => {
                let back = a.mul_vec(&x);
                let scale = 1.0 + a.max_abs() * x.max_abs();
                for (b, r) in back.iter().zip(rhs) {
                    prop_assert!((b - r).abs() <= 1e-10 * scale);
                }
            }
            Err(e) => prop_assert!(matches!(e, LinalgError::SingularMatrix { .. }), "{e:?}"),
        }
    }
}

#[test]
fn singular_matrix_is_reported() {
    let a = SquareMatrix::from_rows(&[[1.0, 2.0], [2.0, 4.0]]).unwrap();
    assert!(a.solve(&[1.0, 1.0]).is_err());
    assert_eq!(a.determinant(), 0.0);
    assert_eq!(a.adjugate().as_slice(), &[4.0, -2.0, -2.0, 1.0]);
}
