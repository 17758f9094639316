use mgrid_core::consensus::{enumerate_topologies, SharedMeasurement};
use mgrid_core::threat::{
    inject, is_stealthy, AttackSchedule, AttackStage, AttackState, Attacker, StageTrigger, StealthBounds,
};
use proptest::prelude::*;

const N: usize = 4;

fn bounds() -> StealthBounds {
    StealthBounds::symmetric(SharedMeasurement { omega: 314.159, power_share: 1.0, reactive_share: 1.0 }, 0.05)
}

fn measurement() -> impl Strategy<Value = SharedMeasurement> {
    (300.0f64..330.0, 0.0f64..1.0, 0.0f64..1.0).prop_map(|(omega, power_share, reactive_share)| SharedMeasurement {
        omega,
        power_share,
        reactive_share,
    })
}

/// Offsets that are sometimes far outside the stealth interval.
fn offsets() -> impl Strategy<Value = SharedMeasurement> {
    (-40.0f64..40.0, -0.2f64..0.2, -0.2f64..0.2).prop_map(|(omega, power_share, reactive_share)| SharedMeasurement {
        omega,
        power_share,
        reactive_share,
    })
}

fn stage() -> impl Strategy<Value = AttackStage> {
    (prop::bool::ANY, 0.0f64..5.0, prop::collection::btree_set(0..N, 1..=N), offsets()).prop_map(
        |(reactive, time, dgs, offsets)| AttackStage {
            trigger: if reactive { StageTrigger::Neutralized { delay: time / 10.0 } } else { StageTrigger::At { time } },
            dgs: dgs.into_iter().collect(),
            offsets,
        },
    )
}

#[derive(Debug, Clone)]
enum Op {
    Advance(f64),
    Remove(usize),
    Switch(usize),
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        (0.0f64..1.0).prop_map(Op::Advance),
        (0..N).prop_map(Op::Remove),
        (0usize..16).prop_map(Op::Switch),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn attacker_invariants_hold_over_random_runs(
        stages in prop::collection::vec(stage(), 0..5),
        ops in prop::collection::vec(op(), 1..60),
        x_n in prop::collection::vec(measurement(), N),
    ) {
        let trees = enumerate_topologies(N).unwrap();
        let mut topo = 0;
        // timed stages are drawn as gaps, and the first stage is always timed
        let mut stages = stages;
        let mut clock = 0.0;
        for (i, s) in stages.iter_mut().enumerate() {
            match s.trigger {
                StageTrigger::Neutralized { delay } if i == 0 => {
                    clock = delay;
                    s.trigger = StageTrigger::At { time: clock };
                }
                StageTrigger::At { time } => {
                    clock += time;
                    s.trigger = StageTrigger::At { time: clock };
                }
                StageTrigger::Neutralized { .. } => {}
            }
        }
        let mut attacker = Attacker::new(AttackSchedule { stages }, N, bounds()).unwrap();
        let mut t = 0.0;
        let mut activations = [0usize; N];
        let mut burned_before = vec![false; N];
        for op in ops {
            match op {
                Op::Advance(dt) => {
                    t += dt;
                    for k in attacker.update(t, &trees[topo]) {
                        activations[k] += 1;
                    }
                }
                Op::Remove(k) => attacker.remove(k, t),
                Op::Switch(s) => {
                    topo = s;
                    attacker.on_topology_change(&trees[topo]);
                }
            }
            let st = &attacker.state;
            prop_assert!(st.check().is_ok());
            for k in 0..N {
                prop_assert!(!(st.theta[k] && st.burned[k]));
                prop_assert!(st.burned[k] || !burned_before[k], "burned set shrank");
                prop_assert!(activations[k] <= 1, "DG {k} activated twice");
            }
            burned_before = st.burned.clone();
            let msgs = attacker.inject(&x_n, &trees[topo]);
            for k in 0..N {
                for l in 0..N {
                    let m = msgs[k][l];
                    let a = SharedMeasurement {
                        omega: m.omega - x_n[k].omega,
                        power_share: m.power_share - x_n[k].power_share,
                        reactive_share: m.reactive_share - x_n[k].reactive_share,
                    };
                    if st.theta[k] && trees[topo].is_link(k, l) {
                        prop_assert!(is_stealthy(&a, &st.bounds), "offset {a:?} on {k}->{l}");
                    } else {
                        prop_assert_eq!(m, x_n[k]);
                    }
                }
            }
        }
        prop_assert!(activations.iter().sum::<usize>() <= N);
    }

    #[test]
    fn clean_fleet_passes_messages_through_bitwise(x_n in prop::collection::vec(measurement(), N), tree in 0usize..16) {
        let trees = enumerate_topologies(N).unwrap();
        let state = AttackState::new(N, bounds());
        let msgs = inject(&x_n, &state, &trees[tree]);
        for k in 0..N {
            for l in 0..N {
                let (a, b) = (msgs[k][l], x_n[k]);
                prop_assert_eq!(a.omega.to_bits(), b.omega.to_bits());
                prop_assert_eq!(a.power_share.to_bits(), b.power_share.to_bits());
                prop_assert_eq!(a.reactive_share.to_bits(), b.reactive_share.to_bits());
            }
        }
    }
}

#[test]
fn out_of_bounds_requests_are_clamped_and_counted() {
    let trees = enumerate_topologies(N).unwrap();
    let stage = AttackStage {
        trigger: StageTrigger::At { time: 0.0 },
        dgs: vec![2],
        offsets: SharedMeasurement { omega: 100.0, power_share: 0.0, reactive_share: 0.0 },
    };
    let mut attacker = Attacker::new(AttackSchedule { stages: vec![stage] }, N, bounds()).unwrap();
    assert_eq!(attacker.update(0.0, &trees[0]), vec![2]);
    assert_eq!(attacker.state.irrational_events, 1);
    assert!(is_stealthy(&attacker.state.offsets[2], &attacker.state.bounds));
}

#[test]
fn reactive_stage_fires_after_the_delay() {
    let trees = enumerate_topologies(N).unwrap();
    let off = SharedMeasurement { omega: 0.05, power_share: 0.02, reactive_share: 0.02 };
    let schedule = AttackSchedule {
        stages: vec![
            AttackStage { trigger: StageTrigger::At { time: 2.0 }, dgs: vec![0], offsets: off },
            AttackStage { trigger: StageTrigger::Neutralized { delay: 0.5 }, dgs: vec![1, 2, 3], offsets: off },
        ],
    };
    let mut a = Attacker::new(schedule, N, bounds()).unwrap();
    assert_eq!(a.update(2.0, &trees[0]), vec![0]);
    a.remove(0, 2.2);
    assert!(a.update(2.69, &trees[0]).is_empty());
    assert_eq!(a.update(2.7, &trees[0]), vec![1, 2, 3]);
    assert!(a.finished() && !a.neutralized());
    for k in 1..4 {
        a.remove(k, 3.0);
    }
    assert!(a.neutralized());
}
