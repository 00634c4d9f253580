//! Training the last layer of an emulation network by SR-LASSO.
//!
//! The hidden layers are frozen at the certified emulation of `Ψ_Λ`; the
//! network's features replace the Legendre columns of the design matrix,
//! and the learned coefficients are folded into the output layer.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::emulate::{emulate_legendre_with, CertificationReport, EmulationOptions};
use super::network::FeedforwardNetwork;
use crate::error::{Error, Result};
use crate::measurement::MeasurementSystem;
use crate::multiindex::IndexSet;
use crate::solver::{operator_norm, prune_coefficients, solve_with, SRLassoProblem, SRLassoSolution, SolveOptions};

/// Network class `{Zᵀ Φ_{Λ,δ}}` with trainable output layer.
#[derive(Clone, Debug)]
pub struct TrainableClass {
    pub set: IndexSet,
    pub features: FeedforwardNetwork,
    pub delta: f64,
    pub report: CertificationReport,
}

impl TrainableClass {
    pub fn new(set: IndexSet, delta: f64, input_dim: usize) -> Result<Self> {
        let opts = EmulationOptions {
            input_dim: Some(input_dim),
            ..EmulationOptions::default()
        };
        let em = emulate_legendre_with(&set, delta, &opts)?;
        Ok(Self {
            set,
            features: em.network,
            delta,
            report: em.report,
        })
    }

    /// `Φ(y_i) / √m`, the counterpart of the normalized design matrix.
    pub fn feature_matrix(&self, sys: &MeasurementSystem) -> Result<DMatrix<f64>> {
        let scale = 1.0 / (sys.m() as f64).sqrt();
        Ok(self.features.eval_batch(&sys.points)? * scale)
    }
}

/// `‖A − A'‖₂` against the bound `√N δ` implied by the emulation error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationCheck {
    /// Power-iteration estimate, slightly inflated.
    pub spectral: f64,
    pub frobenius: f64,
    pub bound: f64,
    pub passed: bool,
}

#[derive(Clone, Debug)]
pub struct TrainedNetwork {
    pub network: FeedforwardNetwork,
    pub solution: SRLassoSolution,
    pub perturbation: PerturbationCheck,
}

fn check_system(class: &TrainableClass, sys: &MeasurementSystem) -> Result<()> {
    if !class.report.passed {
        return Err(Error::Numeric(format!(
            "feature network is not certified: error {:.3e} > delta {:.3e}",
            class.report.max_error, class.delta
        )));
    }
    if sys.index_set != class.set {
        return Err(Error::dim("measurement system and network class use different index sets"));
    }
    if sys.points.dim() != class.features.input_dim() {
        return Err(Error::dim(format!(
            "samples have {} coordinates, network takes {}",
            sys.points.dim(),
            class.features.input_dim()
        )));
    }
    Ok(())
}

fn perturbation(a: &DMatrix<f64>, a_net: &DMatrix<f64>, delta: f64, seed: u64) -> PerturbationCheck {
    let diff = a - a_net;
    let spectral = operator_norm(&diff, seed);
    let bound = (a.ncols() as f64).sqrt() * delta;
    PerturbationCheck {
        spectral,
        frobenius: diff.norm(),
        bound,
        passed: spectral <= bound,
    }
}

/// Minimize the SR-LASSO objective over the last layer and return the
/// composed network `Ẑᵀ Φ`.
pub fn train_last_layer(
    class: &TrainableClass,
    sys: &MeasurementSystem,
    lambda: f64,
    opts: &SolveOptions,
) -> Result<TrainedNetwork> {
    check_system(class, sys)?;
    let a_net = class.feature_matrix(sys)?;
    let check = perturbation(&sys.a, &a_net, class.delta, opts.seed);
    let prob = SRLassoProblem::from_system(sys, lambda)?.with_matrix(a_net)?;
    let solution = solve_with(&prob, opts)?;
    let network = class.features.compose_output(&solution.z)?;
    Ok(TrainedNetwork {
        network,
        solution,
        perturbation: check,
    })
}

/// Keep the `n` largest coefficients, re-emulate the smaller dictionary
/// and fold the kept coefficients into it.
pub fn prune_network(
    class: &TrainableClass,
    sys: &MeasurementSystem,
    lambda: f64,
    trained: &TrainedNetwork,
    n: usize,
) -> Result<(TrainableClass, TrainedNetwork)> {
    let prob = SRLassoProblem::from_system(sys, lambda)?.with_matrix(class.feature_matrix(sys)?)?;
    let (kept, pruned) = prune_coefficients(&prob, &class.set, &trained.solution, n)?;
    let positions: Vec<usize> = kept
        .iter()
        .map(|nu| class.set.position(nu).expect("subset"))
        .collect();
    let small = TrainableClass::new(kept, class.delta, class.features.input_dim())?;
    let z = DMatrix::from_fn(positions.len(), pruned.z.ncols(), |i, j| pruned.z[(positions[i], j)]);
    let network = small.features.compose_output(&z)?;
    let a_small = sys.a.select_columns(&positions);
    let check = perturbation(&a_small, &small.feature_matrix(sys)?, class.delta, 0);
    Ok((
        small,
        TrainedNetwork {
            network,
            solution: SRLassoSolution { z, ..pruned },
            perturbation: check,
        },
    ))
}
