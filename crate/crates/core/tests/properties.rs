use proptest::prelude::*;
use qshield::attacks::{attack, AttackConfig, GradientModel};
use qshield::checkpoint::{qvc_from_checkpoint, qvc_to_checkpoint, Checkpoint};
use qshield::dataio::{parse_idx_images, parse_idx_labels, LabelSet, RawImages};
use qshield::diffsim::{CircuitTape, Entangler, RotationKind};
use qshield::qvc::{init_params, softmax, CircuitLayout};
use qshield::statevec::{GateOp, PureState};
use qshield::Result;

/// Loss gradient that points along a fixed pseudo-random direction.
struct Tilted(Vec<f64>);

impl GradientModel for Tilted {
    fn loss_and_input_gradient(&self, x: &[f64], _label: usize) -> Result<(f64, Vec<f64>)> {
        let g: Vec<f64> = self.0.iter().zip(x).map(|(d, v)| d * (1.0 + v)).collect();
        Ok((0.0, g))
    }

    fn model_tag(&self) -> String {
        "tilted".into()
    }
}

fn gate() -> impl Strategy<Value = GateOp> {
    prop_oneof![
        (0..4usize, -7.0..7.0f64, -7.0..7.0f64, -7.0..7.0f64).prop_map(|(qubit, a, b, c)| GateOp::Rot { qubit, a, b, c }),
        (0..4usize, -7.0..7.0f64).prop_map(|(qubit, theta)| GateOp::Ry { qubit, theta }),
        (0..4usize, -7.0..7.0f64).prop_map(|(qubit, theta)| GateOp::Rz { qubit, theta }),
        (0..4usize, 1..4usize).prop_map(|(control, d)| GateOp::Cz { control, target: (control + d) % 4 }),
    ]
}

proptest! {
    #[test]
    fn gates_preserve_norm(gates in prop::collection::vec(gate(), 1..200)) {
        let mut s = PureState::zero(4);
        for g in &gates {
            s.apply(g).unwrap();
        }
        prop_assert!((s.norm_sqr() - 1.0).abs() < 1e-12);
        for z in s.expect_z_all() {
            prop_assert!(z.abs() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn amplitude_encoding_is_unit_norm(values in prop::collection::vec(0.0..1.0f64, 1..=784)) {
        prop_assume!(values.iter().any(|&v| v > 0.0));
        let s = PureState::amplitude_encode(&values, 10).unwrap();
        prop_assert!((s.norm_sqr() - 1.0).abs() < 1e-12);
        prop_assert!(s.amplitudes()[values.len()..].iter().all(|a| a.norm() == 0.0));
    }

    #[test]
    fn layered_circuit_preserves_norm(angles in prop::collection::vec(-7.0..7.0f64, 45), chain in any::<bool>()) {
        let ent = if chain { Entangler::Chain } else { Entangler::Ring };
        let tape = CircuitTape::layered(5, 3, RotationKind::Euler, ent);
        let mut s = PureState::zero(5);
        tape.run(&angles, &mut s).unwrap();
        prop_assert!((s.norm_sqr() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_is_a_distribution(logits in prop::collection::vec(-1.0..1.0f64, 10)) {
        let p = softmax(&logits);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn attacks_respect_budget_and_box(
        x in prop::collection::vec(0.0..1.0f64, 16),
        dir in prop::collection::vec(-1.0..1.0f64, 16),
        eps_step in 0..7usize,
        pgd in any::<bool>(),
        random_start in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let eps = eps_step as f64 * 0.05;
        let base = if pgd { AttackConfig::pgd(eps) } else { AttackConfig::fgsm(eps) };
        let config = AttackConfig { random_start: random_start && pgd, seed, ..base };
        let adv = attack(&Tilted(dir), &x, 0, &config).unwrap();
        for (a, o) in adv.iter().zip(&x) {
            prop_assert!((a - o).abs() <= eps + 1e-12);
            prop_assert!((0.0..=1.0).contains(a));
        }
        if eps == 0.0 {
            prop_assert_eq!(adv, x);
        }
    }

    #[test]
    fn idx_round_trip(count in 0..5usize, rows in 1..6usize, cols in 1..6usize, seed in any::<u8>()) {
        let pixels: Vec<u8> = (0..count * rows * cols).map(|i| (i as u8).wrapping_mul(31).wrapping_add(seed)).collect();
        let raw = RawImages { count, rows, cols, pixels };
        let bytes = raw.to_idx_bytes();
        prop_assert_eq!(parse_idx_images(&bytes).unwrap().to_idx_bytes(), bytes);
        let labels = LabelSet { labels: (0..count as u8).map(|i| i.wrapping_add(seed) % 10).collect() };
        let lb = labels.to_idx_bytes();
        prop_assert_eq!(parse_idx_labels(&lb).unwrap().to_idx_bytes(), lb);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact(layers in 1..5usize, seed in any::<u64>()) {
        let p = init_params(CircuitLayout::new(layers), seed).unwrap();
        let bytes = qvc_to_checkpoint(&p).unwrap().to_bytes().unwrap();
        let back = qvc_from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap(), Some(layers)).unwrap();
        prop_assert_eq!(qvc_to_checkpoint(&back).unwrap().to_bytes().unwrap(), bytes);
        for (a, b) in back.angles().iter().zip(p.angles()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
