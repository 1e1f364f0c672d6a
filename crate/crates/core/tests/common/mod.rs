//! Finite-difference checks shared by the gradient tests and the acceptance run.
//!
//! Every check runs in f64. First-order checks differentiate a random
//! weighted sum of an op's output; second-order checks differentiate the
//! weighted gradient of such a sum, which forces the backward pass itself to
//! be differentiated.

#![allow(dead_code)]

use lia_core::losses::{
    adv_loss, critic_loss, encoder_objective, kl_gaussian, mean_l2_distance, r1_penalty, recon_loss,
};
use lia_core::nn::{BoundMlp, Mlp, OutputActivation};
use lia_core::rng;
use lia_core::tensor::{grad_check, max_relative_error, Result};
use lia_core::{Tape, Tensor, Var};

pub const FIRST_ORDER_TOL: f64 = 1e-3;
pub const SECOND_ORDER_TOL: f64 = 1e-2;
const STEP: f64 = 1e-6;

pub struct Check {
    pub name: String,
    pub error: f64,
    pub tolerance: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.error < self.tolerance
    }
}

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    rng::gaussian_tensor(&mut rng::stream(seed, 0), shape).cast()
}

/// Random values pushed at least 0.3 away from zero, clear of the leaky
/// ReLU kink and of singular points of `div` and `sqrt`.
fn off_zero(shape: &[usize], seed: u64) -> Tensor<f64> {
    random(shape, seed).map(|v| if v.abs() < 0.3 { v.signum() * 0.3 + v } else { v })
}

fn positive(shape: &[usize], seed: u64) -> Tensor<f64> {
    off_zero(shape, seed).map(f64::abs)
}

/// `sum(w * y)` for a fixed random `w` of `y`'s shape.
fn weighted_sum(t: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let w = t.leaf(random(t.shape(y), seed ^ 0x5eed));
    let p = t.mul(w, y)?;
    t.sum(p)
}

type Op = Box<dyn Fn(&mut Tape<f64>, Var) -> Result<Var>>;

/// Single-input views of every primitive. Binary ops hold the other operand
/// constant, once on each side.
fn primitives() -> Vec<(&'static str, Tensor<f64>, Op)> {
    let s23 = [2usize, 3];
    let c = |seed: u64, shape: &[usize]| off_zero(shape, seed);
    let konst = move |t: &mut Tape<f64>, seed: u64, shape: &[usize]| t.leaf(c(seed, shape));
    vec![
        ("add.lhs", random(&s23, 1), Box::new(move |t: &mut Tape<f64>, x| {
            let k = konst(t, 2, &s23);
            t.add(x, k)
        })),
        ("add.rhs", random(&s23, 3), Box::new(move |t: &mut Tape<f64>, x| {
            let k = konst(t, 4, &s23);
            t.add(k, x)
        })),
        ("sub.lhs", random(&s23, 5), Box::new(move |t: &mut Tape<f64>, x| {
            let k = konst(t, 6, &s23);
            t.sub(x, k)
        })),
        ("sub.rhs", random(&s23, 7), Box::new(move |t: &mut Tape<f64>, x| {
            let k = konst(t, 8, &s23);
            t.sub(k, x)
        })),
        ("mul.lhs", random(&s23, 9), Box::new(move |t: &mut Tape<f64>, x| {
            let k = konst(t, 10, &s23);
            t.mul(x, k)
        })),
        ("mul.rhs", random(&s23, 11), Box::new(move |t: &mut Tape<f64>, x| {
            let k = konst(t, 12, &s23);
            t.mul(k, x)
        })),
        ("div.lhs", random(&s23, 13), Box::new(move |t: &mut Tape<f64>, x| {
            let k = konst(t, 14, &s23);
            t.div(x, k)
        })),
        ("div.rhs", off_zero(&s23, 15), Box::new(move |t: &mut Tape<f64>, x| {
            let k = konst(t, 16, &s23);
            t.div(k, x)
        })),
        ("neg", random(&s23, 17), Box::new(|t: &mut Tape<f64>, x| t.neg(x))),
        ("scale", random(&s23, 18), Box::new(|t: &mut Tape<f64>, x| t.scale(x, -1.7))),
        ("matmul.lhs", random(&s23, 19), Box::new(move |t: &mut Tape<f64>, x| {
            let k = konst(t, 20, &[3, 4]);
            t.matmul(x, k)
        })),
        ("matmul.rhs", random(&[3, 4], 21), Box::new(move |t: &mut Tape<f64>, x| {
            let k = konst(t, 22, &s23);
            t.matmul(k, x)
        })),
        ("transpose", random(&s23, 23), Box::new(|t: &mut Tape<f64>, x| t.transpose(x))),
        ("leaky_relu", off_zero(&s23, 24), Box::new(|t: &mut Tape<f64>, x| t.leaky_relu(x, 0.2))),
        ("tanh", random(&s23, 25), Box::new(|t: &mut Tape<f64>, x| t.tanh(x))),
        ("exp", random(&s23, 26), Box::new(|t: &mut Tape<f64>, x| t.exp(x))),
        ("square", random(&s23, 27), Box::new(|t: &mut Tape<f64>, x| t.square(x))),
        ("sqrt", positive(&s23, 28), Box::new(|t: &mut Tape<f64>, x| t.sqrt(x))),
        ("sum", random(&s23, 29), Box::new(|t: &mut Tape<f64>, x| t.sum(x))),
        ("mean", random(&s23, 30), Box::new(|t: &mut Tape<f64>, x| t.mean(x))),
        ("sum_axis.0", random(&s23, 31), Box::new(|t: &mut Tape<f64>, x| t.sum_axis(x, 0))),
        ("sum_axis.1", random(&s23, 32), Box::new(|t: &mut Tape<f64>, x| t.sum_axis(x, 1))),
        ("broadcast.row", random(&[1, 3], 33), Box::new(|t: &mut Tape<f64>, x| t.broadcast(x, &[4, 3]))),
        ("broadcast.scalar", random(&[1], 34), Box::new(|t: &mut Tape<f64>, x| t.broadcast(x, &[2, 3]))),
        ("sum_to", random(&[4, 3], 35), Box::new(|t: &mut Tape<f64>, x| t.sum_to(x, &[1, 3]))),
        ("concat.0", random(&s23, 36), Box::new(move |t: &mut Tape<f64>, x| {
            let k = konst(t, 37, &[1, 3]);
            t.concat(&[k, x], 0)
        })),
        ("concat.1", random(&s23, 38), Box::new(move |t: &mut Tape<f64>, x| {
            let k = konst(t, 39, &[2, 2]);
            t.concat(&[x, k, x], 1)
        })),
        ("slice.0", random(&[4, 3], 40), Box::new(|t: &mut Tape<f64>, x| t.slice(x, 0, 1, 3))),
        ("slice.1", random(&[4, 3], 41), Box::new(|t: &mut Tape<f64>, x| t.slice(x, 1, 1, 2))),
        ("affine.x", random(&s23, 42), Box::new(move |t: &mut Tape<f64>, x| {
            let (w, b) = (konst(t, 43, &[3, 4]), konst(t, 44, &[1, 4]));
            t.affine(x, w, b)
        })),
        ("affine.w", random(&[3, 4], 45), Box::new(move |t: &mut Tape<f64>, x| {
            let (a, b) = (konst(t, 46, &s23), konst(t, 47, &[1, 4]));
            t.affine(a, x, b)
        })),
        ("affine.b", random(&[1, 4], 48), Box::new(move |t: &mut Tape<f64>, x| {
            let (a, w) = (konst(t, 49, &s23), konst(t, 50, &[3, 4]));
            t.affine(a, w, x)
        })),
    ]
}

/// First- and second-order checks of every primitive.
pub fn primitive_checks() -> Vec<Check> {
    let mut out = Vec::new();
    for (k, (name, point, op)) in primitives().into_iter().enumerate() {
        let seed = 100 + k as u64;
        let first = grad_check(
            |t: &mut Tape<f64>, x| {
                let y = op(t, x)?;
                weighted_sum(t, y, seed)
            },
            &point,
            STEP,
        );
        out.push(check(format!("{name} (first order)"), first, FIRST_ORDER_TOL));

        // A tanh after the op gives linear ops a non-zero second derivative.
        let second = grad_check(
            |t: &mut Tape<f64>, x| {
                let y = op(t, x)?;
                let y = t.tanh(y)?;
                let inner = weighted_sum(t, y, seed)?;
                let g = t.backward(inner, &[x])?[0];
                weighted_sum(t, g, seed + 1)
            },
            &point,
            STEP,
        );
        out.push(check(format!("{name} (second order)"), second, SECOND_ORDER_TOL));
    }
    out
}

fn check(name: String, error: Result<f64>, tolerance: f64) -> Check {
    Check {
        name,
        // An engine error counts as an infinitely bad gradient.
        error: error.unwrap_or(f64::INFINITY),
        tolerance,
    }
}

fn mlp(widths: &[usize], output: OutputActivation, seed: u64) -> Mlp<f64> {
    let mut m = Mlp::init(widths, output, false, &mut rng::stream(seed, 0)).cast::<f64>();
    // Non-zero biases keep every code path of the affine layers live.
    let mut r = rng::stream(seed, 1);
    for l in &mut m.layers {
        for b in l.bias.data_mut() {
            *b = 0.1 * rng::gaussian(&mut r) as f64;
        }
    }
    m
}

/// Compare the parameter gradients of `loss` with central differences over
/// every parameter entry of `net`.
fn mlp_param_error<F>(net: &Mlp<f64>, loss: F) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &BoundMlp) -> Result<Var>,
{
    let mut t = Tape::new();
    let bound = net.bind(&mut t);
    let y = loss(&mut t, &bound)?;
    let analytic: Vec<f64> = t
        .gradients(y, &bound.vars())?
        .iter()
        .flat_map(|g| g.data().to_vec())
        .collect();

    let eval = |m: &Mlp<f64>| -> Result<f64> {
        let mut t = Tape::new();
        let b = m.bind(&mut t);
        let y = loss(&mut t, &b)?;
        Ok(t.value(y).item())
    };
    let mut numeric = Vec::with_capacity(analytic.len());
    let sizes: Vec<usize> = net.params().iter().map(|p| p.numel()).collect();
    for (p, &size) in sizes.iter().enumerate() {
        for i in 0..size {
            let mut plus = net.clone();
            plus.params_mut()[p].data_mut()[i] += STEP;
            let mut minus = net.clone();
            minus.params_mut()[p].data_mut()[i] -= STEP;
            numeric.push((eval(&plus)? - eval(&minus)?) / (2.0 * STEP));
        }
    }
    Ok(max_relative_error(&analytic, &numeric))
}

/// Checks of every loss with respect to its inputs and, where a network is
/// trained through it, the network's parameters.
pub fn loss_checks() -> Vec<Check> {
    let leaky = OutputActivation::LeakyRelu;
    let eps = mlp(&[3, 4, 2], leaky, 1);
    let critic = mlp(&[3, 5, 5, 1], OutputActivation::Identity, 2);
    let gen = mlp(&[2, 4, 3], OutputActivation::Tanh { scale: 1.5 }, 3);
    let enc = mlp(&[3, 4, 2], OutputActivation::Identity, 4);
    let x = random(&[4, 3], 5);
    let x_rec = random(&[4, 3], 6);
    let mut out = Vec::new();

    let first = grad_check(
        |t: &mut Tape<f64>, r| {
            let a = t.leaf(x.clone());
            mean_l2_distance(t, a, r)
        },
        &x_rec,
        STEP,
    );
    out.push(check("mean_l2_distance".into(), first, FIRST_ORDER_TOL));

    for beta1 in [5e-5, 0.5] {
        let err = grad_check(
            |t: &mut Tape<f64>, r| {
                let a = t.leaf(x.clone());
                let be = eps.bind(t);
                recon_loss(t, a, r, |t: &mut Tape<f64>, v| be.forward(t, v), beta1)
            },
            &x_rec,
            STEP,
        );
        out.push(check(format!("recon_loss beta1={beta1}"), err, FIRST_ORDER_TOL));
    }

    let err = grad_check(
        |t: &mut Tape<f64>, f| {
            let bc = critic.bind(t);
            adv_loss(t, &|t: &mut Tape<f64>, v| bc.forward(t, v), f)
        },
        &x_rec,
        STEP,
    );
    out.push(check("adv_loss wrt fake".into(), err, FIRST_ORDER_TOL));
    let err = mlp_param_error(&critic, |t, bc| {
        let f = t.leaf(x_rec.clone());
        adv_loss(t, &|t: &mut Tape<f64>, v| bc.forward(t, v), f)
    });
    out.push(check("adv_loss wrt critic parameters".into(), err, FIRST_ORDER_TOL));

    let err = grad_check(
        |t: &mut Tape<f64>, real| {
            let bc = critic.bind(t);
            r1_penalty(t, &|t: &mut Tape<f64>, v| bc.forward(t, v), real)
        },
        &x,
        STEP,
    );
    out.push(check("r1_penalty wrt real".into(), err, SECOND_ORDER_TOL));
    let err = mlp_param_error(&critic, |t, bc| {
        let real = t.leaf(x.clone());
        r1_penalty(t, &|t: &mut Tape<f64>, v| bc.forward(t, v), real)
    });
    out.push(check("r1_penalty wrt critic parameters".into(), err, SECOND_ORDER_TOL));

    for gamma in [0.0, 10.0] {
        let err = mlp_param_error(&critic, |t, bc| {
            let real = t.leaf(x.clone());
            let fake = t.leaf(x_rec.clone());
            critic_loss(t, &|t: &mut Tape<f64>, v| bc.forward(t, v), real, fake, gamma)
        });
        let tol = if gamma == 0.0 { FIRST_ORDER_TOL } else { SECOND_ORDER_TOL };
        out.push(check(format!("critic_loss gamma={gamma} wrt critic parameters"), err, tol));
    }

    let err = mlp_param_error(&enc, |t, bf| {
        let a = t.leaf(x.clone());
        let y = bf.forward(t, a)?;
        let bg = gen.bind(t);
        let r = bg.forward(t, y)?;
        let be = eps.bind(t);
        let bc = critic.bind(t);
        encoder_objective(
            t,
            a,
            r,
            |t: &mut Tape<f64>, v| be.forward(t, v),
            &|t: &mut Tape<f64>, v| bc.forward(t, v),
            5e-5,
            0.1,
        )
    });
    out.push(check("encoder_objective wrt encoder parameters".into(), err, FIRST_ORDER_TOL));

    let mu = random(&[3, 2], 7);
    let logvar = random(&[3, 2], 8);
    let err = grad_check(
        |t: &mut Tape<f64>, m| {
            let lv = t.leaf(logvar.clone());
            kl_gaussian(t, m, lv)
        },
        &mu,
        STEP,
    );
    out.push(check("kl_gaussian wrt mu".into(), err, FIRST_ORDER_TOL));
    let err = grad_check(
        |t: &mut Tape<f64>, lv| {
            let m = t.leaf(mu.clone());
            kl_gaussian(t, m, lv)
        },
        &logvar,
        STEP,
    );
    out.push(check("kl_gaussian wrt logvar".into(), err, FIRST_ORDER_TOL));
    out
}

pub fn all_checks() -> Vec<Check> {
    let mut v = primitive_checks();
    v.extend(loss_checks());
    v
}
