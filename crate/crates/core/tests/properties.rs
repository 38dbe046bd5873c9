use std::f64::consts::PI;

use num_bigint::BigInt;
use proptest::prelude::*;

use laughlin_core::expansion::{amplitudes, cache_string, evaluate_oracle_exact, expand, parse_cache};
use laughlin_core::fock::{apply_word, Op};
use laughlin_core::hamiltonian::{build_h, spectrum, FormFactor, SectorBasis};
use laughlin_core::lattice::{is_admissible, Caps, ModelParams};
use laughlin_core::plasma::log_weight;
use laughlin_core::renewal::{renewal_function, Precision, RenewalModel};

fn word(ops: &[Op], n: &[u32], fermionic: bool) -> Option<(Vec<u32>, f64)> {
    let mut m = n.to_vec();
    apply_word(ops, &mut m, fermionic).map(|v| (m, v))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fermion_anticommutation(n in prop::collection::vec(0u32..2, 7), a in 0usize..7, b in 0usize..7) {
        let ab = word(&[Op::Create(a), Op::Annihilate(b)], &n, true);
        let ba = word(&[Op::Annihilate(b), Op::Create(a)], &n, true);
        if a == b {
            let total = ab.map_or(0.0, |x| x.1) + ba.map_or(0.0, |x| x.1);
            prop_assert_eq!(total, 1.0);
        } else {
            match (ab, ba) {
                (Some((s1, v1)), Some((s2, v2))) => {
                    prop_assert_eq!(s1, s2);
                    prop_assert_eq!(v1, -v2);
                }
                (None, None) => {}
                other => prop_assert!(false, "one ordering vanished: {:?}", other),
            }
        }
        let cc = word(&[Op::Create(a), Op::Create(b)], &n, true);
        let cc_rev = word(&[Op::Create(b), Op::Create(a)], &n, true);
        match (cc, cc_rev) {
            (Some((s1, v1)), Some((s2, v2))) => {
                prop_assert_eq!(s1, s2);
                prop_assert_eq!(v1, -v2);
            }
            (None, None) => {}
            other => prop_assert!(false, "one ordering vanished: {:?}", other),
        }
    }

    #[test]
    fn boson_commutator(n in prop::collection::vec(0u32..5, 6), a in 0usize..6) {
        let cc = word(&[Op::Annihilate(a), Op::Create(a)], &n, false).unwrap().1;
        let nn = word(&[Op::Create(a), Op::Annihilate(a)], &n, false).map_or(0.0, |x| x.1);
        prop_assert!((cc - nn - 1.0).abs() < 1e-12);
        prop_assert!((nn - n[a] as f64).abs() < 1e-12);
    }

    #[test]
    fn plasma_weight_symmetries(
        pts in prop::collection::vec((-3.0f64..12.0, 0.0f64..6.0), 2..6),
        perm_seed in any::<u64>(),
        shift in 0.0f64..10.0,
        p in 1u32..4,
        gamma in 0.6f64..1.6,
    ) {
        let w = log_weight(&pts, p, gamma);
        prop_assume!(w.is_finite());
        let mut swapped = pts.clone();
        let i = (perm_seed % swapped.len() as u64) as usize;
        swapped.swap(0, i);
        swapped.reverse();
        let ws = log_weight(&swapped, p, gamma);
        prop_assert!((w - ws).abs() <= 1e-9 * w.abs().max(1.0), "{} vs {}", w, ws);
        // rotation around the cylinder
        let circ = 2.0 * PI / gamma;
        let rotated: Vec<(f64, f64)> = pts.iter().map(|&(x, y)| (x, (y + shift).rem_euclid(circ))).collect();
        let wr = log_weight(&rotated, p, gamma);
        prop_assert!((w - wr).abs() <= 1e-9 * w.abs().max(1.0), "{} vs {}", w, wr);
    }

    #[test]
    fn cache_round_trip(p in 1u32..5, n in 1usize..6, which in any::<prop::sample::Index>()) {
        let t = expand(p, n, &Caps::default()).unwrap();
        let text = cache_string(&t);
        let back = parse_cache(&text).unwrap();
        prop_assert_eq!(&back.entries, &t.entries);
        // flipping one coefficient digit must be detected
        let lines: Vec<&str> = text.lines().collect();
        let data: Vec<usize> = (0..lines.len())
            .filter(|&i| !lines[i].starts_with('#') && lines[i].chars().last().is_some_and(|c| c.is_ascii_digit()))
            .collect();
        prop_assume!(!data.is_empty());
        let i = data[which.index(data.len())];
        let mut corrupt: Vec<String> = lines.iter().map(|s| s.to_string()).collect();
        let last = corrupt[i].pop().unwrap();
        corrupt[i].push(if last == '7' { '8' } else { '7' });
        let corrupt = corrupt.join("\n") + "\n";
        prop_assert!(parse_cache(&corrupt).is_err());
    }

    #[test]
    fn expansion_structure(p in 1u32..5, n in 1usize..6) {
        let t = expand(p, n, &Caps::default()).unwrap();
        let params = ModelParams::new(p, 1.0, n).unwrap();
        let root = params.root_config();
        prop_assert_eq!(t.entries.get(&root), Some(&BigInt::from(1)));
        let total = params.total_index();
        for m in t.entries.keys() {
            prop_assert!(is_admissible(m, &params).unwrap());
            prop_assert_eq!(m.index_sum(), total);
        }
    }

    #[test]
    fn expansion_equals_product_at_integer_points(
        p in 1u32..4,
        n in 1usize..5,
        coords in prop::collection::vec((-300i64..300, -300i64..300), 4),
    ) {
        let mut pts: Vec<(i64, i64)> = coords[..n].to_vec();
        pts.sort();
        pts.dedup();
        prop_assume!(pts.len() == n);
        let t = expand(p, n, &Caps::default()).unwrap();
        let r = evaluate_oracle_exact(&t, &[pts]).unwrap();
        prop_assert!(r.exact_identity);
        prop_assert!(r.max_relative_error < 1e-12);
    }

    #[test]
    fn hamiltonian_symmetric_and_positive(p in 2u32..4, n in 2usize..4, gamma in 0.5f64..2.0) {
        let params = ModelParams::new(p, gamma, n).unwrap();
        let basis = SectorBasis::full(&params).unwrap();
        let h = build_h(&FormFactor::new(p, gamma), &basis);
        prop_assert!(h.max_deviation < 1e-12);
        prop_assert!(h.pairwise.max_asymmetry() < 1e-13);
        let low = spectrum(&h.pairwise, 1).unwrap()[0];
        prop_assert!(low > -1e-10, "{}", low);
    }

    #[test]
    fn renewal_distribution(gamma in 0.9f64..2.0) {
        let caps = Caps::default();
        let tables: Vec<_> = (1..=6).map(|n| amplitudes(&expand(3, n, &caps).unwrap(), gamma).unwrap()).collect();
        let (model, w) = RenewalModel::from_tables(&tables, Precision::Exact).unwrap();
        prop_assert_eq!(w.exact_match, Some(true));
        let total: f64 = model.pn.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(model.pn.iter().all(|&x| x >= 0.0));
        prop_assert!(model.mu >= 1.0);
        let rf = renewal_function(&model);
        prop_assert!(rf.max_deviation < 1e-10);
    }
}
