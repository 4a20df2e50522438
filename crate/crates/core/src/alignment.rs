//! Projection of aspect embeddings into a shared space and the squared
//! distance penalty between the two views.

use serde::Serialize;

use crate::error::Result;
use crate::numeric::{NumericError, Tape, Tensor, Var};
use crate::params::{ModelParams, ParamId};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlignedPair {
    pub e_t_prime: Vec<f64>,
    pub e_i_prime: Vec<f64>,
    pub distance: f64,
}

impl AlignedPair {
    pub fn new(e_t_prime: Vec<f64>, e_i_prime: Vec<f64>) -> Result<Self> {
        if e_t_prime.len() != e_i_prime.len() {
            return Err(NumericError::Shape(format!(
                "aligned vectors of width {} and {}",
                e_t_prime.len(),
                e_i_prime.len()
            ))
            .into());
        }
        let distance = squared_distance(&e_t_prime, &e_i_prime);
        Ok(Self { e_t_prime, e_i_prime, distance })
    }
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn affine(x: &[f64], w: &Tensor, b: &Tensor) -> Result<Vec<f64>> {
    if x.len() != w.rows() {
        return Err(NumericError::Shape(format!("input width {} vs projection {}", x.len(), w.rows())).into());
    }
    let mut y = Tensor::row_vector(x.to_vec()).matmul(w)?;
    y.add_assign_scaled(b, 1.0);
    Ok(y.into_data())
}

/// `e' = e W + b` for both modalities.
pub fn project_pair(params: &ModelParams, e_t: &[f64], e_i: &[f64]) -> Result<AlignedPair> {
    let t = affine(e_t, params.get(ParamId::AlignTextWeight), params.get(ParamId::AlignTextBias))?;
    let i = affine(e_i, params.get(ParamId::AlignImageWeight), params.get(ParamId::AlignImageBias))?;
    AlignedPair::new(t, i)
}

pub fn project_text_var(tape: &mut Tape, params: &ModelParams, e_t: Var) -> Var {
    let w = params.var(tape, ParamId::AlignTextWeight);
    let b = params.var(tape, ParamId::AlignTextBias);
    let y = tape.matmul(e_t, w);
    tape.add(y, b)
}

pub fn project_image_var(tape: &mut Tape, params: &ModelParams, e_i: Var) -> Var {
    let w = params.var(tape, ParamId::AlignImageWeight);
    let b = params.var(tape, ParamId::AlignImageBias);
    let y = tape.matmul(e_i, w);
    tape.add(y, b)
}

/// `||a - b||^2` as a `1 x 1` node.
pub fn squared_distance_var(tape: &mut Tape, a: Var, b: Var) -> Var {
    let diff = tape.sub(a, b);
    let sq = tape.mul(diff, diff);
    tape.sum_all(sq)
}

/// `lambda * sum(distances)`; zero for an empty list or when disabled.
pub fn alignment_regularizer(pairs: &[AlignedPair], lambda: f64, enabled: bool) -> f64 {
    if !enabled {
        return 0.0;
    }
    lambda * pairs.iter().map(|p| p.distance).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;
    use crate::params::init_params;

    fn identity_params(d: usize) -> ModelParams {
        let config = RunConfig { d, heads: 1, ..RunConfig::default() };
        let mut p = init_params(&config, 0).unwrap();
        p.set(ParamId::AlignTextWeight, Tensor::identity(d));
        p.set(ParamId::AlignImageWeight, Tensor::identity(d));
        p
    }

    #[test]
    fn distance_examples() {
        let p = identity_params(2);
        assert_eq!(project_pair(&p, &[0.3, 0.4], &[0.3, 0.4]).unwrap().distance, 0.0);
        let pair = project_pair(&p, &[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert_eq!(pair.distance, 2.0);
        let swapped = project_pair(&p, &[0.0, 1.0], &[1.0, 0.0]).unwrap();
        assert_eq!(swapped.distance, pair.distance);
        assert!(project_pair(&p, &[1.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn regularizer_examples() {
        let pairs = [
            AlignedPair::new(vec![1.0, 0.0], vec![0.0, 1.0]).unwrap(),
            AlignedPair::new(vec![0.0, 0.0, 0.0], vec![1.0, 1.0, 1.0]).unwrap(),
        ];
        assert_eq!(pairs[1].distance, 3.0);
        assert!((alignment_regularizer(&pairs, 0.1, true) - 0.5).abs() < 1e-15);
        assert_eq!(alignment_regularizer(&pairs, 0.0, true), 0.0);
        assert_eq!(alignment_regularizer(&pairs, 0.1, false), 0.0);
        assert_eq!(alignment_regularizer(&[], 0.1, true), 0.0);
    }

    #[test]
    fn tape_projection_matches_values() {
        let config = RunConfig { d: 3, heads: 1, ..RunConfig::default() };
        let p = init_params(&config, 5).unwrap();
        let (et, ei) = (vec![0.1, -0.4, 0.7], vec![1.0, 0.2, -0.3]);
        let pair = project_pair(&p, &et, &ei).unwrap();
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::row_vector(et));
        let b = tape.constant(Tensor::row_vector(ei));
        let a = project_text_var(&mut tape, &p, a);
        let b = project_image_var(&mut tape, &p, b);
        let d = squared_distance_var(&mut tape, a, b);
        assert!((tape.scalar(d) - pair.distance).abs() < 1e-12);
    }
}
