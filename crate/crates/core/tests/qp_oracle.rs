//! Soft-row QP checked against exhaustive active-set enumeration on the
//! full (primal, slack) formulation.

use nalgebra::{DMatrix, DVector};
use preview_traction::qp::{QpStatus, SoftBoxQp};
use proptest::prelude::*;

/// Minimum over every active-set guess whose equality-constrained minimizer
/// is feasible. For a strictly convex QP that minimum is the optimum.
fn brute_force(qp: &SoftBoxQp) -> (DVector<f64>, f64) {
    let n = qp.num_vars();
    let m = qp.num_soft();
    let dim = n + m;
    // Full Hessian and gradient over (z, e).
    let mut h = DMatrix::zeros(dim, dim);
    h.view_mut((0, 0), (n, n)).copy_from(&qp.hessian);
    for r in 0..m {
        h[(n + r, n + r)] = qp.slack_weights[r];
    }
    let mut g = DVector::zeros(dim);
    g.rows_mut(0, n).copy_from(&qp.gradient);

    // Constraints c'x >= b.
    let mut rows: Vec<(DVector<f64>, f64)> = Vec::new();
    for i in 0..n {
        let mut c = DVector::zeros(dim);
        c[i] = 1.0;
        rows.push((c.clone(), qp.lower[i]));
        rows.push((-c, -qp.upper[i]));
    }
    for r in 0..m {
        let mut c = DVector::zeros(dim);
        for i in 0..n {
            c[i] = qp.soft_rows[(r, i)];
        }
        c[n + r] = 1.0;
        rows.push((c, -qp.soft_offsets[r]));
        let mut c = DVector::zeros(dim);
        c[n + r] = 1.0;
        rows.push((c, 0.0));
    }

    let total = rows.len();
    let mut best: Option<(DVector<f64>, f64)> = None;
    for mask in 0u32..(1 << total) {
        let active: Vec<usize> = (0..total).filter(|k| mask & (1 << k) != 0).collect();
        if active.len() > dim {
            continue;
        }
        let na = active.len();
        let mut kkt = DMatrix::zeros(dim + na, dim + na);
        kkt.view_mut((0, 0), (dim, dim)).copy_from(&h);
        let mut rhs = DVector::zeros(dim + na);
        rhs.rows_mut(0, dim).copy_from(&(-&g));
        for (a, &k) in active.iter().enumerate() {
            for j in 0..dim {
                kkt[(dim + a, j)] = rows[k].0[j];
                kkt[(j, dim + a)] = rows[k].0[j];
            }
            rhs[dim + a] = rows[k].1;
        }
        let Some(sol) = kkt.lu().solve(&rhs) else { continue };
        let x = sol.rows(0, dim).into_owned();
        if !x.iter().all(|v| v.is_finite()) {
            continue;
        }
        if rows.iter().any(|(c, b)| c.dot(&x) < b - 1e-9) {
            continue;
        }
        let f = 0.5 * x.dot(&(&h * &x)) + g.dot(&x);
        if best.as_ref().is_none_or(|(_, bf)| f < *bf) {
            best = Some((x, f));
        }
    }
    best.expect("box is non-empty so some vertex is feasible")
}

fn problem() -> impl Strategy<Value = SoftBoxQp> {
    (1usize..=3, 0usize..=3).prop_flat_map(|(n, m)| {
        (
            prop::collection::vec(-1.0f64..1.0, n * n),
            prop::collection::vec(-3.0f64..3.0, n),
            prop::collection::vec((-2.0f64..0.0, 0.0f64..2.0), n),
            prop::collection::vec(-1.0f64..1.0, n * m),
            prop::collection::vec(-1.0f64..1.0, m),
            prop::collection::vec(0.5f64..50.0, m),
        )
            .prop_map(move |(hraw, g, bounds, a, c, w)| {
                let r = DMatrix::from_vec(n, n, hraw);
                let hessian = &r * r.transpose() + DMatrix::identity(n, n) * 0.5;
                SoftBoxQp {
                    hessian,
                    gradient: DVector::from_vec(g),
                    lower: DVector::from_iterator(n, bounds.iter().map(|b| b.0)),
                    upper: DVector::from_iterator(n, bounds.iter().map(|b| b.1)),
                    soft_rows: DMatrix::from_row_slice(m, n, &a),
                    soft_offsets: DVector::from_vec(c),
                    slack_weights: DVector::from_vec(w),
                }
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn matches_enumeration(qp in problem(), start in prop::collection::vec(-3.0f64..3.0, 3)) {
        let n = qp.num_vars();
        let start = DVector::from_iterator(n, start.into_iter().take(n));
        let sol = qp.solve(&start, 200).unwrap();
        prop_assert_eq!(sol.status, QpStatus::Optimal);
        prop_assert!(sol.kkt_residual <= 1e-9, "kkt {}", sol.kkt_residual);

        let (x, f) = brute_force(&qp);
        prop_assert!((sol.objective - f).abs() <= 1e-9 * (1.0 + f.abs()),
            "objective {} vs oracle {}", sol.objective, f);
        for i in 0..n {
            prop_assert!((sol.primal[i] - x[i]).abs() <= 1e-7);
        }
        for r in 0..qp.num_soft() {
            prop_assert!((sol.slack[r] - x[n + r]).abs() <= 1e-7);
        }
    }
}
