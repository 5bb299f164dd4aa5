use super::{Network, EVAL_CHUNK};
use crate::autodiff::{Reduction, Tape, Tensor};
use crate::data::augment::PgdParams;
use crate::error::{Error, Result};

/// Gradient of the mean cross entropy with respect to raw `[0, 1]` pixels.
/// Normalization happens inside the recorded forward pass.
pub fn input_gradient(net: &Network, mean: f64, std: f64, images: &[f64], labels: &[usize]) -> Result<Vec<f64>> {
    let side = net.arch.side;
    let n = labels.len();
    let mut tape = Tape::new();
    let params = net.register(&mut tape, false);
    let x = tape.leaf(Tensor::new(&[n, 1, side, side], images.to_vec())?.with_grad());
    let xn = tape.affine(x, 1.0 / std, -mean / std);
    let z = net.forward(&mut tape, xn, &params)?;
    let loss = tape.cross_entropy(z, labels, Reduction::Mean)?;
    tape.backward(loss)?;
    Ok(tape.grad(x).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; images.len()]))
}

/// ℓ∞ projected gradient ascent on the loss, starting from the clean images:
/// `x ← clip[0,1](Π_ε(x + α·sign ∇x L))`.
pub fn pgd_attack(
    net: &Network,
    mean: f64,
    std: f64,
    images: &[f64],
    labels: &[usize],
    pgd: PgdParams,
) -> Result<Vec<f64>> {
    let px = net.arch.side * net.arch.side;
    if images.len() != labels.len() * px {
        return Err(Error::shape("pgd_attack", format!("{} values for {} labels", images.len(), labels.len())));
    }
    if pgd.eps < 0.0 || pgd.alpha < 0.0 {
        return Err(Error::InvalidArgument("PGD eps and alpha must be non-negative".into()));
    }
    let mut out = Vec::with_capacity(images.len());
    for (clean, ys) in images.chunks(EVAL_CHUNK * px).zip(labels.chunks(EVAL_CHUNK)) {
        let mut adv = clean.to_vec();
        if pgd.eps > 0.0 {
            for _ in 0..pgd.steps {
                let g = input_gradient(net, mean, std, &adv, ys)?;
                for ((a, &c), gi) in adv.iter_mut().zip(clean).zip(g) {
                    let stepped = *a + pgd.alpha * sign(gi);
                    *a = stepped.clamp(c - pgd.eps, c + pgd.eps).clamp(0.0, 1.0);
                }
            }
        }
        out.extend(adv);
    }
    Ok(out)
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}
