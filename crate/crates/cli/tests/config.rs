use std::path::PathBuf;

use proptest::prelude::*;
use reparam_cli::config::{
    CloudSection, HeatSection, HopfSection, OptimizerName, OptimizerSection, ProblemKind,
    DEFAULT_SWITCH_AT,
};
use reparam_cli::{parse_config, serialize_config, CliError, RunConfig};
use reparam_core::experiment::{ModelMode, ModelSpec, PrefitSpec};
use reparam_core::gcn::{ConcatMode, PropagationRule, Squash};
use reparam_core::{GraphSpec, OptimizerKind, StoppingRule};

#[test]
fn minimal_document_takes_defaults() {
    let cfg = parse_config(r#"{"problem": "kuramoto", "graph": "lattice2d 25 25"}"#).unwrap();
    assert_eq!(cfg.model.hidden, 10);
    assert_eq!(cfg.model.mode, ModelMode::Hybrid);
    assert_eq!(cfg.switch_at(), 100);
    assert_eq!(DEFAULT_SWITCH_AT, 100);
    assert_eq!(cfg.stop.patience, 10);
    assert_eq!(cfg.stop.fluctuation_tol, 1e-10);
    let opt = cfg.optimizer.to_config().unwrap();
    assert_eq!(opt.learning_rate, 0.01);
    assert_eq!(opt.kind, OptimizerKind::adam());
    let plan = cfg.plan(cfg.seed).unwrap();
    assert_eq!(plan.problem.n(), 625);
    assert_eq!(plan.switch_at, 100);
}

#[test]
fn parse_errors_carry_a_position() {
    // graph specs are checked while parsing
    for text in ["", "   \n", "{\"problem\": \"kuramoto\",\n  \"graph\": }", r#"{"problem": "kuramoto", "graph": "circle 0"}"#] {
        assert!(matches!(parse_config(text), Err(CliError::Parse { .. })), "{text:?}");
    }
    let err = parse_config("{\"problem\": \"kuramoto\",\n \"graph\": \"circle 5\",\n \"hiden\": 3}").unwrap_err();
    match err {
        CliError::Parse { line, message, .. } => {
            assert_eq!(line, 3);
            assert!(message.contains("hiden"));
        }
        other => panic!("unexpected {other:?}"),
    }
    assert!(matches!(
        parse_config(r#"{"problem": "kuramoto", "graph": "circle 5", "model": {"hiden": 3}}"#),
        Err(CliError::Parse { .. })
    ));
}

#[test]
fn switch_at_rules() {
    let base = r#""problem": "kuramoto", "graph": "circle 9""#;
    let hybrid = parse_config(&format!("{{{base}, \"model\": {{\"mode\": \"hybrid\"}}}}")).unwrap();
    assert_eq!(hybrid.switch_at(), 100);
    for mode in ["linear", "gcn"] {
        let text = format!("{{{base}, \"model\": {{\"mode\": \"{mode}\"}}, \"switch_at\": 5}}");
        match parse_config(&text) {
            Err(CliError::Validation(m)) => assert!(m.contains("switch_at") && m.contains("mode"), "{m}"),
            other => panic!("{mode}: {other:?}"),
        }
    }
    let text = format!("{{{base}, \"switch_at\": 50, \"stop\": {{\"max_iters\": 20}}}}");
    assert!(matches!(parse_config(&text), Err(CliError::Validation(_))));
}

#[test]
fn inconsistent_documents_are_validation_errors() {
    let cases = [
        r#"{"problem": "kuramoto"}"#,
        r#"{"problem": "persistence", "graph": "circle 5"}"#,
        r#"{"problem": "kuramoto", "graph": "circle 5", "model": {"layers": 4}}"#,
        r#"{"problem": "kuramoto", "graph": "circle 5", "model": {"hidden": 0}}"#,
        r#"{"problem": "kuramoto", "graph": "circle 5", "optimizer": {"kind": "sgd", "beta1": 0.5}}"#,
        r#"{"problem": "kuramoto", "graph": "circle 5", "optimizer": {"learning_rate": -1}}"#,
        r#"{"problem": "kuramoto", "graph": "circle 5", "stop": {"patience": 0}}"#,
        r#"{"problem": "persistence", "cloud": {"range": 0}}"#,
        r#"{"problem": "kuramoto", "graph": "circle 5", "model": {"propagation": {"rule": "binomial_inv_sqrt", "q": 5, "xi": 0.01}}}"#,
    ];
    for text in cases {
        assert!(matches!(parse_config(text), Err(CliError::Validation(_))), "{text}");
    }
}

#[test]
fn shipped_configs_parse() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut count = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let cfg = reparam_cli::read_config(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        cfg.plan(0).unwrap();
        count += 1;
    }
    assert!(count >= 5);
}

fn arb_graph() -> impl Strategy<Value = GraphSpec> {
    prop_oneof![
        (1usize..30, 1usize..30, any::<bool>()).prop_map(|(rows, cols, periodic)| GraphSpec::Lattice2D { rows, cols, periodic }),
        (2usize..100).prop_map(GraphSpec::Circle),
        (1usize..4, 1usize..5).prop_map(|(branching, depth)| GraphSpec::Tree { branching, depth }),
        (proptest::collection::vec(1usize..20, 1..4), 0.0f64..=1.0, 0.0f64..=1.0)
            .prop_map(|(block_sizes, p_in, p_out)| GraphSpec::Sbm { block_sizes, p_in, p_out }),
        (2usize..50, 0.01f64..1.0, 2usize..4).prop_map(|(n, radius, dim)| GraphSpec::Rgg { n, radius, dim }),
    ]
}

fn arb_optimizer() -> impl Strategy<Value = OptimizerSection> {
    let base = (1e-5f64..1.0, prop_oneof![Just(1e-8), 0.0f64..0.5]);
    (
        base,
        0usize..5,
        proptest::option::of(0.01f64..0.99),
        proptest::option::of(0.01f64..0.99),
        proptest::option::of(1usize..20),
    )
        .prop_map(|((learning_rate, epsilon), kind, a, b, window)| {
            let mut s = OptimizerSection {
                learning_rate,
                epsilon,
                ..OptimizerSection::default()
            };
            match kind {
                0 => s.kind = OptimizerName::Sgd,
                1 => {
                    s.kind = OptimizerName::Adam;
                    s.beta1 = a;
                    s.beta2 = b;
                }
                2 => {
                    s.kind = OptimizerName::Rmsprop;
                    s.decay = a;
                }
                3 => s.kind = OptimizerName::Adagrad,
                _ => {
                    s.kind = OptimizerName::FullAdagrad;
                    s.discount = a;
                    s.window = window;
                }
            }
            s
        })
}

fn arb_model() -> impl Strategy<Value = ModelSpec> {
    (
        prop_oneof![Just(ModelMode::Linear), Just(ModelMode::Gcn), Just(ModelMode::Hybrid)],
        1usize..=3,
        1usize..32,
        any::<bool>(),
        prop_oneof![
            Just(PropagationRule::NormAdj),
            Just(PropagationRule::IMinusAs),
            Just(PropagationRule::AsSquared),
            Just(PropagationRule::AdjSquared),
            (1usize..=3, 0.001f64..0.099).prop_map(|(q, xi)| PropagationRule::BinomialInvSqrt { q, xi }),
        ],
        prop_oneof![
            Just(None),
            Just(Some(Squash::PhaseSigmoid)),
            Just(Some(Squash::Identity)),
            (-3.0f64..3.0, -1.0f64..1.0).prop_map(|(scale, offset)| Some(Squash::Affine { scale, offset })),
        ],
        prop_oneof![Just(ConcatMode::Full), Just(ConcatMode::LastOnly)],
    )
        .prop_map(|(mode, layers, hidden, residual, propagation, squash, concat)| ModelSpec {
            mode,
            layers,
            hidden,
            residual,
            propagation,
            squash,
            concat,
        })
}

fn arb_config() -> impl Strategy<Value = RunConfig> {
    (
        prop_oneof![
            Just(ProblemKind::Heat),
            Just(ProblemKind::Kuramoto),
            Just(ProblemKind::HopfKuramoto),
            Just(ProblemKind::Persistence)
        ],
        arb_graph(),
        arb_model(),
        arb_optimizer(),
        (1usize..10_000, 1usize..50, 1e-16f64..1e-2),
        (0.0f64..=1.0, any::<u64>(), proptest::option::of("[a-z]{1,8}")),
        ((0.0f64..0.5, 0.0f64..0.5, 0.1f64..5.0, 1u32..5), (-2.0f64..2.0, -2.0f64..2.0, -2.0f64..6.0)),
        ((2usize..300, 0.1f64..5.0, 0.0f64..3.0), (1e-4f64..0.1, 1e-8f64..1e-2, 1usize..10_000)),
    )
        .prop_map(
            |(problem, graph, model, optimizer, (max_iters, patience, tol), (switch_frac, seed, out), heat, cloud)| {
                let ((hot, cold, strength, exponent), (c, s1, s2)) = heat;
                let ((n, range, weight), (learning_rate, ptol, pmax)) = cloud;
                RunConfig {
                    problem,
                    graph: (problem != ProblemKind::Persistence).then_some(graph),
                    heat: HeatSection { hot, cold, strength, exponent },
                    hopf: HopfSection { c, s1, s2 },
                    cloud: CloudSection { n, range, weight, path: None },
                    model,
                    optimizer,
                    stop: StoppingRule::new(max_iters, patience, tol),
                    switch_at: (model.mode == ModelMode::Hybrid && switch_frac > 0.5)
                        .then(|| (switch_frac * max_iters as f64) as usize),
                    prefit: PrefitSpec { learning_rate, tol: ptol, max_iters: pmax },
                    seed,
                    out: out.map(PathBuf::from),
                }
            },
        )
}

proptest! {
    #[test]
    fn parse_inverts_serialize(cfg in arb_config()) {
        let text = serialize_config(&cfg);
        let back = parse_config(&text);
        prop_assert!(back.is_ok(), "{:?}\n{}", back, text);
        prop_assert_eq!(back.unwrap(), cfg);
    }
}
