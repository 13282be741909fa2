use dmf_core::data::{AreaSplit, Features, Rating, RatingMatrix, Scaling};
use dmf_core::gradcheck::{check_objective, near_knot, randomized};
use dmf_core::train::{Mode, Objective};
use dmf_core::{Activation, BranchConfig, DmfModel, Quantizer};
use rand::Rng;

const H: f64 = 1e-5;
const FLOOR: f64 = 1e-6;
const TOL: f64 = 1e-4;

fn toy() -> (RatingMatrix, Features) {
    let values = [
        [5, 3, 0, 1, 4],
        [4, 0, 0, 1, 2],
        [1, 1, 0, 5, 3],
        [1, 0, 0, 4, 4],
        [0, 1, 5, 4, 1],
        [2, 5, 4, 0, 3],
    ];
    let mut entries = Vec::new();
    for (i, row) in values.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if v > 0 {
                entries.push(Rating { row: i, col: j, value: v as f64 });
            }
        }
    }
    let m = RatingMatrix::new(6, 5, entries, Scaling::new(1.0, 5.0).unwrap()).unwrap().scale().unwrap();
    let all: Vec<usize> = (0..m.len()).collect();
    let f = Features::new(&m, &all, &AreaSplit::full(&m)).unwrap();
    (m, f)
}

fn model(activation: Activation) -> DmfModel {
    DmfModel::init(
        BranchConfig::new(5, vec![4], 3, activation),
        BranchConfig::new(6, vec![4], 3, activation),
        Scaling::new(1.0, 5.0).unwrap(),
        0,
    )
    .unwrap()
}

/// Checks three random points, skipping draws that put a quantizer input
/// within 1e-3 of a selector knot.
fn check(mode: Mode, residual: bool, activation: Activation) {
    let (m, f) = toy();
    let objective = Objective { mode, gamma: 0.05, gamma2: 0.7, residual_quantization: residual };
    let mut rng = dmf_core::rng::rng(17);
    let mut points = 0;
    let mut seed = 0;
    while points < 3 {
        seed += 1;
        assert!(seed < 100, "could not find points away from the knots");
        let net = randomized(&model(activation), seed, 0.8);
        let mut q = Quantizer::for_ratings(&net.scaling(), 1.0, rng.gen_range(5.0..50.0)).unwrap();
        let shifted: Vec<f64> = q.interior().iter().map(|b| b + rng.gen_range(-0.1..0.1)).collect();
        q.set_interior(&shifted).unwrap();
        if mode == Mode::DmfD && near_knot(&net, &q, &f, m.entries(), &objective, 1e-3).unwrap() {
            continue;
        }
        let report = check_objective(&net, Some(&q), &f, m.entries(), &objective, H, FLOOR).unwrap();
        let expected = net.parameters().iter().map(|t| t.len()).sum::<usize>() + if mode == Mode::DmfD { 4 } else { 0 };
        assert_eq!(report.checked, expected);
        assert!(report.max_rel_error < TOL, "{:?} seed {}: {:?}", mode, seed, report);
        points += 1;
    }
}

#[test]
fn dmf_objective() {
    check(Mode::Dmf, false, Activation::Selu);
    check(Mode::Dmf, false, Activation::Tanh);
}

#[test]
fn dmfd_objective() {
    check(Mode::DmfD, false, Activation::Selu);
    check(Mode::DmfD, false, Activation::Tanh);
}

#[test]
fn dmfd_residual_objective() {
    check(Mode::DmfD, true, Activation::Selu);
}

#[test]
fn biases_are_not_regularized() {
    let (m, f) = toy();
    let net = randomized(&model(Activation::Tanh), 3, 0.5);
    let with = |gamma| {
        dmf_core::train::evaluate_objective(
            &net,
            None,
            &f,
            m.entries(),
            &Objective { mode: Mode::Dmf, gamma, gamma2: 0.0, residual_quantization: false },
        )
        .unwrap()
    };
    let (a, b) = (with(0.0), with(2.0));
    for ((ga, gb), (t, kind)) in a.model_grads.iter().zip(&b.model_grads).zip(net.parameters().iter().zip(net.parameter_kinds())) {
        for k in 0..t.len() {
            let expected = match kind {
                dmf_core::model::ParamKind::Weight => 2.0 * 2.0 * t.values()[k],
                dmf_core::model::ParamKind::Bias => 0.0,
            };
            assert!((gb.values()[k] - ga.values()[k] - expected).abs() < 1e-12);
        }
    }
    assert!((b.loss - a.loss - 2.0 * net.weight_norm_sq()).abs() < 1e-12);
}
