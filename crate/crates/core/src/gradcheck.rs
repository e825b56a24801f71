//! Central finite-difference checks of every tape op, every attention variant
//! and the full localization model.
//!
//! Non-scalar outputs are reduced to a scalar with fixed random weights so
//! that every output element contributes to the checked gradient. A scalar
//! whose `±step` probes land on different sides of a ReLU kink has no valid
//! central difference; it is skipped and counted instead.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::attention::{Attention, AttentionDims, CsaConfig, Fusion};
use crate::error::Result;
use crate::pipeline::{record_boundary_loss, Model, ModelConfig};
use crate::synth::Segment;
use crate::tensor::{Conv1dLayer, DenseLayer, Grid, ParamStore, Tape, Var, Vec1};

pub const FD_STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Gradients smaller than this are compared in absolute terms.
pub const RELATIVE_FLOOR: f64 = 1e-2;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

#[derive(Debug, Clone)]
enum Input {
    Grid(Grid),
    Vec(Vec1),
}

impl Input {
    fn values_mut(&mut self) -> &mut [f64] {
        match self {
            Input::Grid(g) => g.values_mut(),
            Input::Vec(v) => v.values_mut(),
        }
    }

    fn len(&self) -> usize {
        match self {
            Input::Grid(g) => g.values().len(),
            Input::Vec(v) => v.len(),
        }
    }
}

type Build = Box<dyn Fn(&mut Tape, &ParamStore, &[Var]) -> Result<Var>>;

/// A differentiable program with its parameters and inputs.
pub struct Case {
    pub name: String,
    store: ParamStore,
    inputs: Vec<Input>,
    build: Build,
    weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub name: String,
    /// Scalars compared (parameters plus inputs).
    pub checked: usize,
    /// Scalars whose probes straddle a ReLU kink.
    pub skipped: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub seed: u64,
    pub step: f64,
    pub tolerance: f64,
    pub cases: Vec<CaseResult>,
    pub max_rel_error: f64,
    pub passed: bool,
}

impl Case {
    fn new(name: impl Into<String>, store: ParamStore, inputs: Vec<Input>, build: Build, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut case = Self { name: name.into(), store, inputs, build, weights: Vec::new() };
        let mut tape = Tape::new();
        let (_, out) = case.forward(&mut tape)?;
        let n = tape.value(out).len();
        case.weights = if tape.shape(out).is_empty() { Vec::new() } else { (0..n).map(|_| normal(rng)).collect() };
        Ok(case)
    }

    fn forward(&self, tape: &mut Tape) -> Result<(Vec<Var>, Var)> {
        let vars: Vec<Var> = self
            .inputs
            .iter()
            .map(|i| match i {
                Input::Grid(g) => tape.input_grid(g),
                Input::Vec(v) => tape.input_vec(v),
            })
            .collect();
        let out = (self.build)(tape, &self.store, &vars)?;
        Ok((vars, out))
    }

    fn loss(&self, tape: &mut Tape) -> Result<(Vec<Var>, Var)> {
        let (vars, out) = self.forward(tape)?;
        if self.weights.is_empty() {
            Ok((vars, out))
        } else {
            Ok((vars, tape.weighted_sum(out, self.weights.clone())?))
        }
    }

    fn loss_value(&self) -> Result<(f64, Vec<bool>)> {
        let mut tape = Tape::new();
        let (_, l) = self.loss(&mut tape)?;
        Ok((tape.scalar(l), tape.relu_pattern()))
    }

    /// Central difference, or `None` when the two probes sit on different
    /// sides of a ReLU kink.
    fn numeric(&mut self, slot: impl Fn(&mut Self) -> &mut f64, step: f64) -> Result<Option<f64>> {
        let orig = *slot(self);
        *slot(self) = orig + step;
        let (plus, plus_pattern) = self.loss_value()?;
        *slot(self) = orig - step;
        let (minus, minus_pattern) = self.loss_value()?;
        *slot(self) = orig;
        Ok((plus_pattern == minus_pattern).then(|| (plus - minus) / (2.0 * step)))
    }

    /// Compares analytic and central-difference gradients for every parameter
    /// and input scalar.
    pub fn check(&mut self, step: f64) -> Result<CaseResult> {
        let mut tape = Tape::new();
        let (vars, loss) = self.loss(&mut tape)?;
        let grads = tape.backward(loss)?;
        let param_grads = grads.param_grads(&self.store);
        let input_grads: Vec<Vec<f64>> = vars
            .iter()
            .zip(&self.inputs)
            .map(|(&v, input)| grads.wrt(v).map_or_else(|| vec![0.0; input.len()], <[f64]>::to_vec))
            .collect();

        let mut worst = 0.0f64;
        let (mut checked, mut skipped) = (0, 0);
        let ids: Vec<_> = self.store.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            for i in 0..self.store.values(id).len() {
                match self.numeric(|c| &mut c.store.values_mut(id)[i], step)? {
                    Some(n) => {
                        worst = worst.max(relative_error(param_grads[k][i], n));
                        checked += 1;
                    }
                    None => skipped += 1,
                }
            }
        }
        for (k, grad) in input_grads.iter().enumerate() {
            for (i, &a) in grad.iter().enumerate() {
                match self.numeric(|c| &mut c.inputs[k].values_mut()[i], step)? {
                    Some(n) => {
                        worst = worst.max(relative_error(a, n));
                        checked += 1;
                    }
                    None => skipped += 1,
                }
            }
        }
        Ok(CaseResult { name: self.name.clone(), checked, skipped, max_rel_error: worst })
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn grid(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Grid {
    Grid::new(rows, cols, (0..rows * cols).map(|_| normal(rng)).collect()).expect("positive dims")
}

fn vec1(len: usize, rng: &mut ChaCha8Rng) -> Vec1 {
    Vec1::new((0..len).map(|_| normal(rng)).collect())
}

/// Randomises every parameter so zero-initialised biases are exercised too.
fn jitter(store: &mut ParamStore, rng: &mut ChaCha8Rng) {
    jitter_by(store, 0.5, rng);
}

fn jitter_by(store: &mut ParamStore, scale: f64, rng: &mut ChaCha8Rng) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for v in store.values_mut(id) {
            *v += scale * normal(rng);
        }
    }
}

const C_IN: usize = 4;
const C_OUT: usize = 3;
const T: usize = 7;
const SE_C_OUT: usize = 8;
const SE_R: usize = 4;

fn op_cases(rng: &mut ChaCha8Rng) -> Result<Vec<Case>> {
    let mut cases = Vec::new();
    let none = ParamStore::new;

    for k in [1, 3, 5] {
        let mut store = ParamStore::new();
        let layer = Conv1dLayer::new(&mut store, "conv", C_IN, C_OUT, k, rng)?;
        jitter(&mut store, rng);
        let build: Build = Box::new(move |t, s, x| layer.record(t, s, x[0]));
        cases.push(Case::new(format!("op/conv1d k={k}"), store, vec![Input::Grid(grid(C_IN, T, rng))], build, rng)?);
    }

    let mut store = ParamStore::new();
    let layer = DenseLayer::new(&mut store, "dense", C_IN, C_OUT, rng)?;
    jitter(&mut store, rng);
    let build: Build = Box::new(move |t, s, x| layer.record(t, s, x[0]));
    cases.push(Case::new("op/dense", store, vec![Input::Vec(vec1(C_IN, rng))], build, rng)?);

    let unary: [(&str, fn(&mut Tape, Var) -> Result<Var>); 5] = [
        ("op/relu", |t, x| Ok(t.relu(x))),
        ("op/sigmoid", |t, x| Ok(t.sigmoid(x))),
        ("op/mean_over_rows", |t, x| t.mean_over_rows(x)),
        ("op/mean_over_cols", |t, x| t.mean_over_cols(x)),
        ("op/reshape", |t, x| t.reshape(x, vec![C_IN * T])),
    ];
    for (name, f) in unary {
        let build: Build = Box::new(move |t, _, x| f(t, x[0]));
        cases.push(Case::new(name, none(), vec![Input::Grid(grid(C_IN, T, rng))], build, rng)?);
    }

    let build: Build = Box::new(|t, _, x| t.mul_row(x[0], x[1]));
    cases.push(Case::new("op/mul_row", none(), vec![Input::Vec(vec1(T, rng)), Input::Grid(grid(C_IN, T, rng))], build, rng)?);
    let build: Build = Box::new(|t, _, x| t.mul_col(x[0], x[1]));
    cases.push(Case::new("op/mul_col", none(), vec![Input::Vec(vec1(C_IN, rng)), Input::Grid(grid(C_IN, T, rng))], build, rng)?);
    let build: Build = Box::new(|t, _, x| t.concat_rows(x[0], x[1]));
    cases.push(Case::new(
        "op/concat_rows",
        none(),
        vec![Input::Grid(grid(C_IN, T, rng)), Input::Grid(grid(C_OUT, T, rng))],
        build,
        rng,
    )?);
    let build: Build = Box::new(|t, _, x| t.add(x[0], x[1]));
    cases.push(Case::new("op/add", none(), vec![Input::Grid(grid(C_IN, T, rng)), Input::Grid(grid(C_IN, T, rng))], build, rng)?);

    let weights: Vec<f64> = (0..C_IN * T).map(|_| normal(rng)).collect();
    let build: Build = Box::new(move |t, _, x| t.weighted_sum(x[0], weights.clone()));
    cases.push(Case::new("op/weighted_sum", none(), vec![Input::Grid(grid(C_IN, T, rng))], build, rng)?);

    let targets: Vec<f64> = (0..T).map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 }).collect();
    let weights: Vec<f64> = (0..T).map(|_| rng.random_range(0.1..1.0)).collect();
    let build: Build = Box::new(move |t, _, x| {
        let p = t.sigmoid(x[0]);
        t.bce(p, targets.clone(), weights.clone())
    });
    cases.push(Case::new("op/bce", none(), vec![Input::Vec(vec1(T, rng))], build, rng)?);
    Ok(cases)
}

fn attention_case(name: String, cfg: CsaConfig, c_out: usize, rng: &mut ChaCha8Rng) -> Result<Case> {
    let mut store = ParamStore::new();
    let dims = AttentionDims { source_channels: C_IN, target_channels: c_out, temporal_len: T };
    let block = Attention::build(&mut store, "attention", &cfg, dims, rng)?;
    jitter(&mut store, rng);
    let inputs = vec![Input::Grid(grid(C_IN, T, rng)), Input::Grid(grid(c_out, T, rng))];
    let build: Build = Box::new(move |t, s, x| block.record(t, s, &cfg, x[0], x[1]));
    Case::new(name, store, inputs, build, rng)
}

fn attention_cases(rng: &mut ChaCha8Rng) -> Result<Vec<Case>> {
    let mut cases = Vec::new();
    for blocks in 1..=3 {
        for k in [1, 3, 5] {
            let cfg = CsaConfig { conv_blocks: blocks, kernel_size: k, ..CsaConfig::default() };
            cases.push(attention_case(format!("csa/{blocks}-conv k={k}"), cfg, C_OUT, rng)?);
        }
    }
    cases.push(attention_case("csa/channel-only".into(), CsaConfig::default().channel_only(), C_OUT, rng)?);
    cases.push(attention_case("csa/temporal-only".into(), CsaConfig::default().temporal_only(), C_OUT, rng)?);
    let add = CsaConfig { fusion: Fusion::Add, ..CsaConfig::default() };
    cases.push(attention_case("csa/add-fusion".into(), add, C_OUT, rng)?);
    cases.push(attention_case("ff-csa".into(), CsaConfig::ff_csa(), C_OUT, rng)?);
    let se = CsaConfig { se_reduction: SE_R, ..CsaConfig::se() };
    cases.push(attention_case("se".into(), se, SE_C_OUT, rng)?);
    Ok(cases)
}

fn model_case(rng: &mut ChaCha8Rng) -> Result<Case> {
    let mc = ModelConfig { hidden: 5, c_out: C_OUT, ..ModelConfig::default() };
    let mut model = Model::new(C_IN, T, &mc, &CsaConfig::default(), rng.random())?;
    // smaller jitter keeps the boundary heads away from saturation, where
    // log(1 - p) is too coarse for a 1e-5 central difference
    jitter_by(&mut model.store, 0.1, rng);
    let store = std::mem::take(&mut model.store);
    let segments = vec![Segment { start: 1, end: 4, class_id: 0 }];
    let build: Build = Box::new(move |t, s, x| {
        let (ps, pe) = model.record_with(t, s, x[0])?;
        record_boundary_loss(t, ps, pe, &segments)
    });
    Case::new("model/boundary-loss", store, vec![Input::Grid(grid(C_IN, T, rng))], build, rng)
}

/// All cases for one seed.
pub fn cases(seed: u64) -> Result<Vec<Case>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut all = op_cases(&mut rng)?;
    all.extend(attention_cases(&mut rng)?);
    all.push(model_case(&mut rng)?);
    Ok(all)
}

pub fn run(seed: u64) -> Result<GradcheckReport> {
    let mut results = Vec::new();
    for mut case in cases(seed)? {
        results.push(case.check(FD_STEP)?);
    }
    let max_rel_error = results.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    let mostly_checked = results.iter().all(|r| r.checked > r.skipped);
    Ok(GradcheckReport {
        seed,
        step: FD_STEP,
        tolerance: TOLERANCE,
        cases: results,
        max_rel_error,
        passed: max_rel_error < TOLERANCE && mostly_checked,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_has_a_floor() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
        assert!((relative_error(1e-8, 0.0) - 1e-6).abs() < 1e-18);
    }

    #[test]
    fn one_seed_passes() {
        let report = run(3).unwrap();
        assert!(report.passed, "{report:#?}");
        assert!(report.cases.iter().all(|c| c.checked > 0));
    }

    #[test]
    fn kink_straddling_probes_are_skipped() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let build: Build = Box::new(|t, _, x| Ok(t.relu(x[0])));
        let input = Input::Vec(Vec1::new(vec![0.0, 1.0, -1.0, 5e-6]));
        let mut case = Case::new("kink", ParamStore::new(), vec![input], build, &mut rng).unwrap();
        let result = case.check(FD_STEP).unwrap();
        assert_eq!((result.checked, result.skipped), (2, 2));
        assert!(result.max_rel_error < 1e-8);
    }

    #[test]
    fn a_wrong_gradient_is_caught() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        // analytic derivative of 2x is 2; scaling only the forward pass makes FD see 3
        let build: Build = Box::new(|t, _, x| {
            let y = t.add(x[0], x[0])?;
            let scaled = t.value(y).iter().map(|v| v * 1.5).collect();
            let fake = t.input_vec(&Vec1::new(scaled));
            t.add(y, fake)
        });
        let mut case = Case::new("broken", ParamStore::new(), vec![Input::Vec(vec1(3, &mut rng))], build, &mut rng).unwrap();
        assert!(case.check(FD_STEP).unwrap().max_rel_error > 0.1);
    }
}
