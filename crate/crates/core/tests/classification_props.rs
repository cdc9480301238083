mod common;

use proptest::prelude::*;

use common::{random_field, random_matrix, rng};
use polystab_core::classification::{classify, ClassificationResult, Label};
use polystab_core::domain::Domain;
use polystab_core::{parse_system, VectorField};

fn check_label_evidence(res: &ClassificationResult) -> Result<(), String> {
    let seeds = &res.simulation.seeds;
    match res.label {
        Label::Center => {
            for s in seeds {
                let ratio = s.decay.as_ref().map(|d| d.ratio).unwrap_or(f64::NAN);
                if s.diverged || !(0.8..=1.25).contains(&ratio) {
                    return Err(format!("center with non-bounded seed {:?}", s.seed));
                }
                match s.return_miss {
                    Some(m) if m < 0.05 => {}
                    other => return Err(format!("center with return miss {other:?}")),
                }
            }
        }
        Label::Node => {
            for s in seeds {
                let turns = s.winding.as_ref().map_or(0, |w| w.turns);
                if turns > 1 {
                    return Err(format!("node with {turns} turns"));
                }
            }
        }
        _ => {}
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn odd_dimensions_are_never_centers(seed in any::<u64>(), n in prop::sample::select(vec![1usize, 3]), deg in 1u32..=3) {
        let f = random_field(&mut rng(seed), n, deg, 4);
        let Ok(res) = classify(&f, &Domain::ball(n, 0.3).unwrap(), 600, seed) else { return Ok(()) };
        prop_assert!(res.label != Label::Center);
    }

    #[test]
    fn labels_are_backed_by_simulation(seed in any::<u64>()) {
        let a = random_matrix(&mut rng(seed), 2, 2.0);
        let rows = vec![vec![a[(0, 0)], a[(0, 1)]], vec![a[(1, 0)], a[(1, 1)]]];
        let f = VectorField::linear(&rows).unwrap();
        let res = classify(&f, &Domain::ball(2, 0.5).unwrap(), 600, seed).unwrap();
        prop_assert!(check_label_evidence(&res).is_ok(), "{:?}", check_label_evidence(&res));
    }
}

/// Three-dimensional systems containing an undamped rotation block.
#[test]
fn odd_dimensional_rotations_are_not_centers() {
    for src in [
        "x1' = x2; x2' = -x1; x3' = -x3",
        "x1' = x2; x2' = -x1; x3' = -x3^3 + x1*x2",
        "x1' = x2 + x3^2; x2' = -x1; x3' = -2*x3",
    ] {
        let f = parse_system(src).unwrap();
        let res = classify(&f, &Domain::ball(3, 0.3).unwrap(), 2000, 1).unwrap();
        assert_ne!(res.label, Label::Center, "{src}: {}", res.note);
    }
}

#[test]
fn canonical_examples_meet_label_properties() {
    let ball = Domain::ball(2, 0.5).unwrap();
    let cases = [
        ("x1' = x2; x2' = -x1", Label::Center),
        ("x1' = x2; x2' = -x1 - 0.2*x2", Label::Focus),
        ("x1' = -0.1*x1 + x2; x2' = -x1 - 0.1*x2", Label::Focus),
        ("x1' = -x1; x2' = -2*x2", Label::Node),
        ("x1' = -x1 + x2^2; x2' = -3*x2", Label::Node),
    ];
    for (src, want) in cases {
        let res = classify(&parse_system(src).unwrap(), &ball, 5000, 3).unwrap();
        assert_eq!(res.label, want, "{src}: {}", res.note);
        check_label_evidence(&res).unwrap();
        if want == Label::Focus {
            for s in &res.simulation.seeds {
                assert!(s.decay.as_ref().unwrap().ratio < 1.0, "{src}");
                assert!(s.winding.as_ref().unwrap().turns >= 3, "{src}");
            }
        }
    }
}
