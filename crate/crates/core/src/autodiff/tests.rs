use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Result;
use crate::linalg::CsrMatrix;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

/// Contracts a node of any shape against fixed random weights so every
/// output entry influences the scalar being differentiated.
fn contract(tape: &mut Tape, v: Var, seed: u64) -> Result<Var> {
    let (r, c) = tape.shape(v);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = tape.constant(random(&mut rng, r, c));
    let p = tape.mul(v, w)?;
    tape.sum(p)
}

fn check<F>(name: &str, x: Tensor, f: F)
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let report = grad_check(f, &x, H, TOL).unwrap();
    assert!(
        report.passed,
        "{name}: max relative error {:.3e}",
        report.max_rel_error
    );
}

#[test]
fn square_derivative_at_three() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::scalar(3.0));
    let sq = tape.mul(x, x).unwrap();
    let s = tape.sum(sq).unwrap();
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap().item(), 6.0);
}

#[test]
fn sum_gradient_is_all_ones_with_zero_error() {
    let x = Tensor::from_fn(3, 4, |r, c| (r * 4 + c) as f64 * 0.1);
    let report = grad_check(|t, v| t.sum(v), &x, H, TOL).unwrap();
    assert!(report.analytic.iter().all(|&g| g == 1.0));
    assert!(report.max_rel_error < 1e-9);
}

#[test]
fn identity_linear_solve() {
    let mut tape = Tape::new();
    let a = tape.leaf(Tensor::eye(3));
    let bvals = Tensor::column(vec![0.5, -1.0, 2.0]);
    let b = tape.leaf(bvals.clone());
    let x = tape.linear_solve(a, b).unwrap();
    assert!(tape.value(x).max_abs_diff(&bvals) < 1e-15);
    let gbar = Tensor::column(vec![1.0, 2.0, -3.0]);
    let w = tape.constant(gbar.clone());
    let p = tape.mul(x, w).unwrap();
    let loss = tape.sum(p).unwrap();
    let g = tape.backward(loss).unwrap();
    assert!(g.get(b).unwrap().max_abs_diff(&gbar) < 1e-15);
    let want = gbar.matmul_nt(&bvals).unwrap().scale(-1.0);
    assert!(g.get(a).unwrap().max_abs_diff(&want) < 1e-15);
}

#[test]
fn non_spd_solve_is_rejected() {
    let mut tape = Tape::new();
    let a = tape.leaf(Tensor::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap());
    let b = tape.leaf(Tensor::column(vec![1.0, 1.0]));
    assert!(matches!(tape.linear_solve(a, b), Err(crate::Error::NotSpd(_))));
}

#[test]
fn non_finite_output_trips_error() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::scalar(-1.0));
    assert!(matches!(tape.log(x), Err(crate::Error::NonFinite { .. })));
}

#[test]
fn shape_mismatch_is_an_error() {
    let mut tape = Tape::new();
    let a = tape.leaf(Tensor::zeros(2, 3));
    let b = tape.leaf(Tensor::zeros(3, 2));
    assert!(tape.add(a, b).is_err());
    assert!(tape.mul(a, b).is_err());
    assert!(tape.matmul(a, a).is_err());
}

#[test]
fn unary_primitives_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for inst in 0..5 {
        let x = random(&mut rng, 3, 4);
        let pos = x.map(|v| v.abs() + 0.5);
        check("exp", x.clone(), |t, v| {
            let y = t.exp(v)?;
            contract(t, y, inst)
        });
        check("log", pos.clone(), |t, v| {
            let y = t.log(v)?;
            contract(t, y, inst)
        });
        check("sqrt", pos.clone(), |t, v| {
            let y = t.sqrt(v)?;
            contract(t, y, inst)
        });
        check("sigmoid", x.clone(), |t, v| {
            let y = t.sigmoid(v)?;
            contract(t, y, inst)
        });
        check("tanh", x.clone(), |t, v| {
            let y = t.tanh(v)?;
            contract(t, y, inst)
        });
        // keep inputs away from the kink
        let away = x.map(|v| if v.abs() < 0.05 { v + 0.1 } else { v });
        check("relu", away, |t, v| {
            let y = t.relu(v)?;
            contract(t, y, inst)
        });
        check("scale", x.clone(), |t, v| {
            let y = t.scale(v, -1.7)?;
            contract(t, y, inst)
        });
        check("add_scalar", x.clone(), |t, v| {
            let y = t.add_scalar(v, 0.3)?;
            let y = t.mul(y, y)?;
            contract(t, y, inst)
        });
        check("transpose", x.clone(), |t, v| {
            let y = t.transpose(v)?;
            contract(t, y, inst)
        });
        check("reshape", x.clone(), |t, v| {
            let y = t.reshape(v, 2, 6)?;
            contract(t, y, inst)
        });
        check("mean", x.clone(), |t, v| {
            let y = t.mul(v, v)?;
            t.mean(y)
        });
        check("frobenius_norm_sq", x.clone(), |t, v| t.frobenius_norm_sq(v));
        check("row_sum", x.clone(), |t, v| {
            let y = t.row_sum(v)?;
            let y = t.mul(y, y)?;
            t.sum(y)
        });
        check("layer_norm", x.clone(), |t, v| {
            let y = t.layer_norm(v, 1e-5)?;
            contract(t, y, inst)
        });
        check("row_softmax", x.clone(), |t, v| {
            let y = t.row_softmax(v)?;
            contract(t, y, inst)
        });
        let mask: Vec<bool> = (0..12).map(|i| i % 4 != 3).collect();
        check("row_softmax_masked", x.clone(), |t, v| {
            let y = t.row_softmax_masked(v, Some(&mask))?;
            contract(t, y, inst)
        });
        check("slice_cols", x.clone(), |t, v| {
            let y = t.slice_cols(v, 1, 2)?;
            contract(t, y, inst)
        });
        let idx = Arc::new(vec![2, 0, 0, 1, 2]);
        check("gather_rows", x.clone(), |t, v| {
            let y = t.gather_rows(v, idx.clone())?;
            contract(t, y, inst)
        });
        let sidx = Arc::new(vec![1, 1, 0]);
        check("scatter_add_rows", x.clone(), |t, v| {
            let y = t.scatter_add_rows(v, sidx.clone(), 2)?;
            contract(t, y, inst)
        });
    }
}

#[test]
fn binary_primitives_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for inst in 0..5 {
        let other = random(&mut rng, 3, 4);
        let x = random(&mut rng, 3, 4);
        let o2 = other.clone();
        check("add", x.clone(), move |t, v| {
            let c = t.leaf(o2.clone());
            let y = t.add(v, c)?;
            let y = t.mul(y, y)?;
            contract(t, y, inst)
        });
        let o2 = other.clone();
        check("sub", x.clone(), move |t, v| {
            let c = t.leaf(o2.clone());
            let y = t.sub(c, v)?;
            let y = t.mul(y, y)?;
            contract(t, y, inst)
        });
        let o2 = other.clone();
        check("mul", x.clone(), move |t, v| {
            let c = t.leaf(o2.clone());
            let y = t.mul(v, c)?;
            contract(t, y, inst)
        });
        let o2 = other.clone();
        check("cosine_rows", x.clone(), move |t, v| {
            let c = t.leaf(o2.clone());
            let y = t.cosine_rows(v, c)?;
            contract(t, y, inst)
        });
        let b = random(&mut rng, 4, 5);
        check("matmul lhs", x.clone(), |t, v| {
            let c = t.constant(b.clone());
            let y = t.matmul(v, c)?;
            contract(t, y, inst)
        });
        let a = random(&mut rng, 2, 3);
        check("matmul rhs", x.clone(), |t, v| {
            let c = t.constant(a.clone());
            let y = t.matmul(c, v)?;
            contract(t, y, inst)
        });
        let bt = random(&mut rng, 5, 4);
        check("matmul nt", x.clone(), |t, v| {
            let c = t.constant(bt.clone());
            let y = t.matmul_t(v, false, c, true)?;
            contract(t, y, inst)
        });
        let at = random(&mut rng, 3, 2);
        check("matmul tn", x.clone(), |t, v| {
            let c = t.constant(at.clone());
            let y = t.matmul_t(c, true, v, false)?;
            contract(t, y, inst)
        });
        let tt = random(&mut rng, 5, 3);
        check("matmul tt", x.clone(), |t, v| {
            let c = t.constant(tt.clone());
            let y = t.matmul_t(v, true, c, true)?;
            contract(t, y, inst)
        });
        let row = random(&mut rng, 1, 4);
        check("add_row", x.clone(), |t, v| {
            let r = t.constant(row.clone());
            let y = t.add_row(v, r)?;
            let y = t.mul(y, y)?;
            contract(t, y, inst)
        });
        check("add_row bias", row.clone(), |t, r| {
            let xv = t.constant(x.clone());
            let y = t.add_row(xv, r)?;
            let y = t.mul(y, y)?;
            contract(t, y, inst)
        });
        check("mul_row", row.clone(), |t, r| {
            let xv = t.constant(x.clone());
            let y = t.mul_row(xv, r)?;
            contract(t, y, inst)
        });
        let col = random(&mut rng, 3, 1);
        check("mul_col", col.clone(), |t, c| {
            let xv = t.constant(x.clone());
            let y = t.mul_col(xv, c)?;
            let y = t.mul(y, y)?;
            contract(t, y, inst)
        });
        check("mul_col data", x.clone(), |t, v| {
            let c = t.constant(col.clone());
            let y = t.mul_col(v, c)?;
            contract(t, y, inst)
        });
        check("scale_by", Tensor::scalar(0.7), |t, s| {
            let xv = t.constant(x.clone());
            let y = t.scale_by(xv, s)?;
            let y = t.mul(y, y)?;
            contract(t, y, inst)
        });
        let parts = random(&mut rng, 2, 4);
        check("concat_rows", x.clone(), |t, v| {
            let p = t.constant(parts.clone());
            let y = t.concat_rows(&[p, v, p])?;
            contract(t, y, inst)
        });
        let sp = CsrMatrix::from_triplets(
            2,
            3,
            &[(0, 0, 1.5), (0, 2, -0.5), (1, 1, 2.0), (1, 0, 0.25)],
        );
        let sp = Arc::new(sp);
        check("sparse_matmul", x.clone(), |t, v| {
            let y = t.sparse_matmul(sp.clone(), v)?;
            contract(t, y, inst)
        });
    }
}

#[test]
fn linear_solve_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for inst in 0..5 {
        let p = random(&mut rng, 4, 4);
        let b = random(&mut rng, 4, 2);
        // A = P P^T + I built on the tape keeps every perturbation SPD
        let bc = b.clone();
        check("linear_solve A", p.clone(), move |t, pv| {
            let a = t.matmul_t(pv, false, pv, true)?;
            let a = t.add_const(a, &Tensor::eye(4))?;
            let bv = t.constant(bc.clone());
            let x = t.linear_solve(a, bv)?;
            contract(t, x, inst)
        });
        let pc = p.clone();
        check("linear_solve b", b.clone(), move |t, bv| {
            let pv = t.constant(pc.clone());
            let a = t.matmul_t(pv, false, pv, true)?;
            let a = t.add_const(a, &Tensor::eye(4))?;
            let x = t.linear_solve(a, bv)?;
            contract(t, x, inst)
        });
        // direct perturbation of a (nonsymmetric) A exercises the general formula
        let a0 = p.matmul_nt(&p).unwrap();
        let a0 = a0.zip_map(&Tensor::eye(4), |x, y| x + 2.0 * y);
        let bc = b.clone();
        check("linear_solve raw A", a0, move |t, av| {
            let bv = t.constant(bc.clone());
            let x = t.linear_solve(av, bv)?;
            contract(t, x, inst)
        });
    }
}

#[test]
fn composite_loss_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..3 {
        let x = random(&mut rng, 5, 3);
        let w = random(&mut rng, 3, 3);
        check("composite", x, |t, v| {
            let wv = t.constant(w.clone());
            let h = t.matmul(v, wv)?;
            let h = t.tanh(h)?;
            let s = t.row_softmax(h)?;
            let n = t.layer_norm(s, 1e-5)?;
            let e = t.exp(n)?;
            let c = t.cosine_rows(e, v)?;
            let f = t.frobenius_norm_sq(c)?;
            let m = t.mean(h)?;
            let m2 = t.mul(m, m)?;
            t.add(f, m2)
        });
    }
}

#[test]
fn gradient_accumulation_is_linear() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random(&mut rng, 4, 3);
    let f = |t: &mut Tape, v: Var| -> Result<Var> {
        let y = t.exp(v)?;
        contract(t, y, 11)
    };
    let g = |t: &mut Tape, v: Var| -> Result<Var> {
        let y = t.tanh(v)?;
        let y = t.mul(y, v)?;
        contract(t, y, 12)
    };
    let grad_of = |which: u8| -> Tensor {
        let mut t = Tape::new();
        let v = t.leaf(x.clone());
        let out = match which {
            0 => f(&mut t, v).unwrap(),
            1 => g(&mut t, v).unwrap(),
            _ => {
                let a = f(&mut t, v).unwrap();
                let b = g(&mut t, v).unwrap();
                t.add(a, b).unwrap()
            }
        };
        t.backward(out).unwrap().wrt(v, x.shape())
    };
    let sum = grad_of(0).zip_map(&grad_of(1), |a, b| a + b);
    assert!(grad_of(2).max_abs_diff(&sum) < 1e-10);
}

#[test]
fn replay_is_bit_identical() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random(&mut rng, 6, 5);
        let mut t = Tape::new();
        let v = t.leaf(x);
        let s = t.row_softmax(v).unwrap();
        let m = t.matmul_t(s, false, v, true).unwrap();
        let l = t.frobenius_norm_sq(m).unwrap();
        let g = t.backward(l).unwrap();
        (t.value(l).item().to_bits(), g.wrt(v, (6, 5)).into_vec())
    };
    let (a, ga) = run();
    let (b, gb) = run();
    assert_eq!(a, b);
    assert!(ga.iter().zip(&gb).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn masked_slots_get_zero_weight() {
    let mut t = Tape::new();
    let v = t.leaf(Tensor::from_rows(&[vec![1.0, 5.0, 2.0]]).unwrap());
    let s = t.row_softmax_masked(v, Some(&[true, false, true])).unwrap();
    let out = t.value(s);
    assert_eq!(out.get(0, 1), 0.0);
    assert!((out.row(0).iter().sum::<f64>() - 1.0).abs() < 1e-15);
}
