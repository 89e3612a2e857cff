//! Central finite-difference gradient checks in f64.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::layers::{Ctx, Mode};
use crate::param::ParamStore;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::Result;

/// Default central-difference step.
pub const EPS: f64 = 1e-5;

/// `|a - n| / max(|a|, |n|, 1e-3)`; the floor keeps near-zero gradients
/// from turning rounding noise into large ratios.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

/// Uniform `[-1, 1)` tensor.
pub fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("shape matches data")
}

pub type Forward = dyn for<'t, 'a> Fn(&mut Ctx<'t, 'a, f64>, Var<'t, f64>) -> Result<Var<'t, f64>>;

/// Max relative error between backprop and central differences over the
/// input and every trainable parameter. The checked scalar is
/// `sum(f(x) ⊙ probe)` for a fixed random probe; every evaluation reuses
/// the same RNG seed, so dropout masks do not change between them.
pub fn check(store: &ParamStore<f64>, x: &Tensor<f64>, mode: Mode, f: &Forward) -> Result<f64> {
    let eval = |store: &mut ParamStore<f64>, x: &Tensor<f64>, grads: bool| -> Result<(f64, Option<Tensor<f64>>)> {
        let tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let xv = tape.constant(x.clone());
        let mut cx = Ctx {
            tape: &tape,
            store,
            mode,
            rng: &mut rng,
        };
        let y = f(&mut cx, xv)?;
        let mut pr = ChaCha8Rng::seed_from_u64(99);
        let probe = random(&y.shape(), &mut pr);
        let loss = y.mul(tape.constant(probe))?.sum()?;
        let value = loss.value().item();
        let mut xg = None;
        if grads {
            let g = tape.backward(loss)?;
            xg = g.wrt(xv).cloned();
            store.zero_grad();
            store.accumulate(&g);
        }
        Ok((value, xg))
    };
    let value_at = |store: &ParamStore<f64>, x: &Tensor<f64>| -> Result<f64> { Ok(eval(&mut store.clone(), x, false)?.0) };

    let mut analytic = store.clone();
    let (_, xg) = eval(&mut analytic, x, true)?;

    let mut worst: f64 = 0.0;
    if let Some(xg) = xg {
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += EPS;
            let mut xm = x.clone();
            xm.data_mut()[i] -= EPS;
            let n = (value_at(store, &xp)? - value_at(store, &xm)?) / (2.0 * EPS);
            worst = worst.max(relative_error(xg.data()[i], n));
        }
    }
    for (id, p) in analytic.iter() {
        if !p.trainable {
            continue;
        }
        for i in 0..p.value.len() {
            let mut sp = store.clone();
            sp.get_mut(id).value.data_mut()[i] += EPS;
            let mut sm = store.clone();
            sm.get_mut(id).value.data_mut()[i] -= EPS;
            let n = (value_at(&sp, x)? - value_at(&sm, x)?) / (2.0 * EPS);
            worst = worst.max(relative_error(p.grad.data()[i], n));
        }
    }
    Ok(worst)
}
