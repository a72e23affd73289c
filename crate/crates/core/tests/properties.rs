use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sparrow_core::blob;
use sparrow_core::energy::{ledger_from_trace, EnergyConfig};
use sparrow_core::nas::SearchSpace;
use sparrow_core::network::{
    forward, levels_to_count, rate_train, EncodeTarget, EncodedBatch, HardwareLimits,
};
use sparrow_core::neuron::{count_spikes, representability_check, ssf_fire};
use sparrow_core::reference::{random_input, random_network};
use sparrow_core::sim::{simulate, CoreConfig, SimTrace};

proptest! {
    #[test]
    fn if_never_exceeds_ssf(
        inputs in prop::collection::vec(0u32..6, 1..24),
        theta in 1u32..5,
    ) {
        let x: Vec<f64> = inputs.iter().map(|&v| f64::from(v)).collect();
        let r = representability_check(&x, f64::from(theta), x.len()).unwrap();
        prop_assert!(r.if_count <= r.ssf_count);
        prop_assert_eq!(r.equal, r.if_count == r.ssf_count);
        let total: u32 = inputs.iter().sum();
        prop_assert_eq!(r.ssf_count, (total / theta).min(x.len() as u32));
    }

    #[test]
    fn ssf_fire_is_clipped_floor(u in -50.0f64..500.0, theta in 0.1f64..20.0, t in 1u32..64) {
        let n = ssf_fire(u, theta, t).unwrap().get();
        let want = (u.max(0.0) / theta).floor().min(f64::from(t)) as u32;
        prop_assert_eq!(n, want);
    }

    #[test]
    fn rate_train_carries_its_count(t in 1u32..=255, frac in 0.0f64..=1.0) {
        let c = (frac * f64::from(t)).round() as u32;
        let train = rate_train(c, t);
        prop_assert_eq!(train.window(), t as usize);
        prop_assert_eq!(count_spikes(&train).get(), c);
    }

    #[test]
    fn level_to_count_is_monotone_and_bounded(a in 0u32..255, t in 1u32..=255) {
        prop_assert!(levels_to_count(a, t) <= levels_to_count(a + 1, t));
        prop_assert!(levels_to_count(a + 1, t) <= t);
        prop_assert_eq!(levels_to_count(0, t), 0);
        prop_assert_eq!(levels_to_count(255, t), t);
    }

    #[test]
    fn encoded_batches_round_trip(
        rows in prop::collection::vec(prop::collection::vec(0.0f64..=1.0, 3), 1..6),
        t in 1u32..40,
        target in prop::sample::select(vec![EncodeTarget::Train, EncodeTarget::Count, EncodeTarget::Level]),
    ) {
        let b = EncodedBatch::encode(&rows, t, target).unwrap();
        prop_assert_eq!(EncodedBatch::from_text(&b.to_text()).unwrap(), b);
    }

    #[test]
    fn mutation_stays_in_space(seed in any::<u64>(), p in 0.0f64..=1.0) {
        let space = SearchSpace::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = space.sample(&mut rng);
        prop_assert!(space.contains(&a));
        prop_assert!(space.contains(&space.mutate(&a, p, &mut rng)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn blob_round_trips_random_networks(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = random_network(&mut rng, 6, 128, &HardwareLimits::default());
        let bytes = blob::pack(&spec).unwrap();
        prop_assert_eq!(blob::unpack(&bytes).unwrap(), spec);
    }

    #[test]
    fn simulator_agrees_with_forward(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = random_network(&mut rng, 5, 96, &HardwareLimits::default());
        let x = random_input(&spec, &mut rng);
        let want = forward(&spec, &x).unwrap();
        let got = simulate(&spec, &x, &CoreConfig::default()).unwrap();
        prop_assert_eq!(got.scores, want.scores);
        prop_assert_eq!(got.class, want.class);
    }

    #[test]
    fn energy_is_additive_over_traces(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = random_network(&mut rng, 4, 64, &HardwareLimits::default());
        let cfg = EnergyConfig::default();
        let a = simulate(&spec, &random_input(&spec, &mut rng), &CoreConfig::default()).unwrap().trace;
        let b = simulate(&spec, &random_input(&spec, &mut rng), &CoreConfig::default()).unwrap().trace;
        let ea = ledger_from_trace(&a, &cfg).unwrap();
        let eb = ledger_from_trace(&b, &cfg).unwrap();
        let sum = ledger_from_trace(&(&a + &b), &cfg).unwrap();
        let tol = 1e-9 * sum.total_pj().max(1.0);
        prop_assert!((sum.total_pj() - ea.total_pj() - eb.total_pj()).abs() <= tol);
        let parts: f64 = sum.components().iter().map(|&(_, v)| v).sum();
        prop_assert!((parts - sum.total_pj()).abs() <= tol);
        prop_assert!(sum.components().iter().all(|&(_, v)| v >= 0.0));
        prop_assert_eq!(SimTrace::from_text(&a.to_text()).unwrap(), a);
    }
}
