use dualsched::channel::{build_combined_kernel, stationary_distribution, Capacities, ChannelSampler, ChannelState, LinkState, PerLink, TwoLayerModel};
use dualsched::config::{ChannelSpec, Experiment};
use dualsched::mdp::{MmwaveRates, Sub6Rates};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn simplex(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, n).prop_map(|w| {
        let t: f64 = w.iter().sum();
        w.into_iter().map(|x| x / t).collect()
    })
}

fn stochastic(n: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(simplex(n), n)
}

/// Random two-layer model with 1 to 3 capacity levels per link; the outage
/// link always has a single zero-capacity level.
fn two_layer() -> impl Strategy<Value = TwoLayerModel> {
    (1usize..=3, 1usize..=3).prop_flat_map(|(nl, nn)| {
        (stochastic(3), simplex(nl), simplex(nn), stochastic(nn), any::<bool>()).prop_map(move |(link, pl, pn, kn, iid)| {
            let caps = Capacities(PerLink {
                los: (0..nl).map(|i| 1.0 - 0.1 * i as f64).collect(),
                nlos: (0..nn).map(|i| 0.05 / (1 + i) as f64).collect(),
                outage: vec![0.0],
            });
            let (stat_n, small) = if iid {
                (pn.clone(), None)
            } else {
                let pi = stationary_distribution(&kn).unwrap();
                let pl_rows = vec![pl.clone(); nl];
                (pi, Some(PerLink { los: pl_rows, nlos: kn.clone(), outage: vec![vec![1.0]] }))
            };
            TwoLayerModel::new(link, caps, PerLink { los: pl, nlos: stat_n, outage: vec![1.0] }, small).unwrap()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn combined_kernel_marginalizes_to_link_kernel(model in two_layer()) {
        let k = build_combined_kernel(&model);
        let states = model.states();
        for (r, from) in states.iter().enumerate() {
            prop_assert!((k[r].iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for to in LinkState::ALL {
                let mass: f64 = states.iter().enumerate().filter(|(_, s)| s.link == to).map(|(c, _)| k[r][c]).sum();
                prop_assert!((mass - model.link_kernel()[from.link.index()][to.index()]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn stationary_is_a_fixed_point(p in (2usize..=8).prop_flat_map(stochastic)) {
        let pi = stationary_distribution(&p).unwrap();
        let n = p.len();
        let next: Vec<f64> = (0..n).map(|j| (0..n).map(|i| pi[i] * p[i][j]).sum()).collect();
        let diff: f64 = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
        prop_assert!(diff < 1e-9);
        prop_assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rescaled_link_chain_keeps_its_stationary_law(p in stochastic(3), h in 1e-4f64..1.0) {
        let caps = Capacities(PerLink { los: vec![1.0], nlos: vec![0.05], outage: vec![0.0] });
        let ones = PerLink { los: vec![1.0], nlos: vec![1.0], outage: vec![1.0] };
        let m = TwoLayerModel::new(p.clone(), caps, ones, None).unwrap();
        let slow = m.with_link_timescale(h, 1.0).unwrap();
        let a = stationary_distribution(&p).unwrap();
        let b = stationary_distribution(slow.link_kernel()).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-8);
        }
    }
}

#[test]
fn sampled_transitions_follow_the_kernel() {
    let exp = Experiment::bundled_b();
    let ChannelSpec::TwoLayer { model, .. } = &exp.channel else { panic!("two-layer channel expected") };
    let sampler = ChannelSampler::new(model);
    let k = build_combined_kernel(model);
    let states = model.states();
    let n = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for (r, &from) in states.iter().enumerate() {
        let mut counts = vec![0usize; states.len()];
        for _ in 0..n {
            let to = sampler.sample_next(from, &mut rng);
            counts[states.iter().position(|s| *s == to).unwrap()] += 1;
        }
        for (c, &count) in counts.iter().enumerate() {
            let p = k[r][c];
            let sd = (n as f64 * p * (1.0 - p)).sqrt();
            assert!((count as f64 - n as f64 * p).abs() <= 4.0 * sd.max(1.0), "{from:?} -> {:?}: {count} of {n}, p {p}", states[c]);
        }
    }
}

#[test]
fn bundled_coupled_channel_encodes_reference_tables() {
    let exp = Experiment::bundled_a();
    let ChannelSpec::Coupled(m) = &exp.channel else { panic!("coupled channel expected") };
    assert_eq!(m.capacities.0.los, vec![1.0]);
    assert_eq!(m.capacities.0.nlos, vec![0.05, 0.004, 0.002]);
    assert_eq!(m.capacities.0.outage, vec![0.0]);
    assert_eq!((m.sub6.bad, m.sub6.good), (0.2, 0.8));
    // columns of the conditional table: C_mm = l, n1, n2, n3, o
    assert_eq!(m.conditional.bad, vec![0.1, 0.15, 0.15, 0.15, 0.45]);
    assert_eq!(m.conditional.good, vec![0.7, 0.15, 0.05, 0.05, 0.05]);
    for column in [&m.conditional.bad, &m.conditional.good] {
        assert!((column.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    let MmwaveRates::PerLevel(t) = &exp.rates.mmwave else { panic!("per-level mmWave rates expected") };
    assert_eq!((t.los.clone(), t.nlos.clone(), t.outage.clone()), (vec![49.54], vec![13.22, 1.64, 0.84], vec![0.0]));
    assert_eq!(exp.rates.sub6, Sub6Rates::PerState { bad: 0.99, good: 1.45 });
}

#[test]
fn bundled_link_chain_encodes_reference_matrix() {
    let exp = Experiment::bundled_b();
    let ChannelSpec::TwoLayer { model, t_base } = &exp.channel else { panic!("two-layer channel expected") };
    assert_eq!(model.link_kernel()[1], vec![0.01, 0.8, 0.19]);
    assert_eq!(*t_base, Some(1.0));
    assert_eq!(exp.config.model.lambda, 60.0);
    assert_eq!(exp.config.model.mean_pkt_bits, 500_000.0);
    assert_eq!(exp.config.model.q0_max, 10);
    assert_eq!(exp.config.sweep.sub6_rates, (11..=20).map(f64::from).collect::<Vec<_>>());
    let model = exp.model().unwrap();
    let slot = model.channel.kernel();
    // one slot moves tau / t_base of the off-diagonal mass
    let h = exp.config.model.tau / t_base.unwrap();
    assert!((slot[1][0] - h * 0.01).abs() < 1e-15);
    assert_eq!(model.channel.conditions().iter().map(|c| c.mm).collect::<Vec<_>>(), vec![
        ChannelState::new(LinkState::Los, 0),
        ChannelState::new(LinkState::Nlos, 0),
        ChannelState::new(LinkState::Outage, 0),
    ]);
}
