//! Linear probe on frozen embeddings.

use rand::Rng;

use crate::error::{contract, Result};
use crate::numerics::{forward_and_grad, Adam, ParamSet, Tensor};

/// Fits softmax regression on `train` embeddings for `steps` full-batch Adam
/// steps and returns accuracy on `test`. Labels are class ids in `classes`.
pub fn linear_probe_accuracy<R: Rng>(
    train: (&Tensor, &[usize]),
    test: (&Tensor, &[usize]),
    classes: &[usize],
    steps: usize,
    rng: &mut R,
) -> Result<f64> {
    let (xtr, ytr) = train;
    let (xte, yte) = test;
    let (n, d) = xtr.dims2()?;
    let k = classes.len();
    if k < 2 || n == 0 {
        return contract("a probe needs two classes and some data");
    }
    let index = |y: &usize| -> Result<usize> {
        classes
            .iter()
            .position(|c| c == y)
            .ok_or_else(|| crate::Error::Contract(format!("label {y} outside probe classes")))
    };
    let mut select = Tensor::zeros(&[n, k]);
    for (i, y) in ytr.iter().enumerate() {
        select.data_mut()[i * k + index(y)?] = 1.0;
    }
    let mut params = ParamSet::new();
    let w: Vec<f64> = (0..d * k).map(|_| 0.01 * (rng.random::<f64>() - 0.5)).collect();
    params.insert("w", Tensor::new(vec![d, k], w)?)?;
    params.insert("b", Tensor::zeros(&[k]))?;
    let opt = Adam::default();
    for _ in 0..steps {
        let (_, grads) = forward_and_grad(&params, |g, pv| {
            let x = g.constant(xtr.clone());
            let z = g.matmul(x, pv.var("w")?)?;
            let z = g.add_bias(z, pv.var("b")?)?;
            let lp = g.log_softmax_rows(z)?;
            let s = g.constant(select.clone());
            let p = g.mul(lp, s)?;
            let t = g.sum(p)?;
            g.scale(t, -1.0 / n as f64)
        })?;
        opt.step(&mut params, &grads, 0.05)?;
    }
    let z = xte.matmul(params.get("w").expect("inserted"))?;
    let b = params.get("b").expect("inserted").data();
    let mut correct = 0;
    for (i, y) in yte.iter().enumerate() {
        let row: Vec<f64> = z.row(i).iter().zip(b).map(|(a, c)| a + c).collect();
        if classes[crate::stats::argmax(&row)] == *y {
            correct += 1;
        }
    }
    Ok(correct as f64 / yte.len().max(1) as f64)
}
