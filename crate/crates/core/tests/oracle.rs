use strongstab::adversary::MaxDamage;
use strongstab::analysis::oracle::{
    brute_force_verify, check_convergence, reference_starts, worst_disruptions, InitRegisters, OracleError,
    OracleOptions, OracleVerdict, Property, Worst,
};
use strongstab::analysis::{verify_containment, Limits, StabilityBudget};
use strongstab::engine::{check_trace, run, Daemon, DaemonKind, DaemonMode, StopCondition};
use strongstab::{ProcessId, ProtocolKind, Topology, TopologyMode};

fn st(n: usize, edges: &[(usize, usize)], byz: &[usize]) -> Topology {
    Topology::build(n, edges, Some(0), byz, 0, TopologyMode::SpanningTree).unwrap()
}

fn to(n: usize, edges: &[(usize, usize)], byz: &[usize]) -> Topology {
    Topology::build(n, edges, None, byz, 0, TopologyMode::TreeOrientation).unwrap()
}

#[test]
fn fault_free_pair_orients() {
    let t = to(2, &[(0, 1)], &[]);
    let v = check_convergence(&t, ProtocolKind::SsTo, &OracleOptions::default()).unwrap();
    assert!(v.converges && v.converges_strongly_fair);
    // prnt is forced to 1, levels in [0, 4], registers (bool, level): 5^2 * 10^2 starts.
    assert_eq!(v.init_registers, InitRegisters::Arbitrary);
    assert_eq!(v.initial_states, 2500);
    let out = brute_force_verify(&t, ProtocolKind::SsTo, Property::ConvergesTo, &OracleOptions::default()).unwrap();
    assert!(out.summary(ProtocolKind::SsTo, &t).starts_with("converges: yes (all initial states"));
}

#[test]
fn st_three_path_with_byzantine_leaf() {
    let t = st(3, &[(0, 1), (1, 2)], &[2]);
    let l = Limits::of(&t);
    let v = worst_disruptions(&t, ProtocolKind::SsSt, &OracleOptions::default()).unwrap();
    // Only process 1 can be lured, and only once: from the root to the liar.
    assert_eq!(v.disruptions, Worst::Bounded(1));
    assert_eq!(v.per_process[&ProcessId(0)], Worst::Bounded(0));
    assert_eq!(v.per_process[&ProcessId(1)], Worst::Bounded(1));
    assert!(v.disruptions.within(l.st_disruptions()));
    assert!(v.max_process_changes.within(l.delta_pow_d()));
    let c = check_convergence(&t, ProtocolKind::SsSt, &OracleOptions::default()).unwrap();
    assert!(c.converges && c.converges_strongly_fair);
    let out = brute_force_verify(&t, ProtocolKind::SsSt, Property::WorstDisruptions, &OracleOptions::default()).unwrap();
    assert!(out.summary(ProtocolKind::SsSt, &t).starts_with("worst disruptions: 1 (bound 2)"));
}

#[test]
fn st_four_path_with_byzantine_end() {
    let t = st(4, &[(0, 1), (1, 2), (2, 3)], &[3]);
    let l = Limits::of(&t);
    let v = worst_disruptions(&t, ProtocolKind::SsSt, &OracleOptions::default()).unwrap();
    assert_eq!(v.disruptions, Worst::Bounded(2));
    assert_eq!(v.max_process_changes, Worst::Bounded(3));
    assert_eq!((l.st_disruptions(), l.delta_pow_d()), (4, 4));
}

#[test]
fn st_star_with_byzantine_leaf_is_never_disrupted() {
    let t = st(4, &[(0, 1), (0, 2), (0, 3)], &[3]);
    let v = worst_disruptions(&t, ProtocolKind::SsSt, &OracleOptions::default()).unwrap();
    assert_eq!(v.disruptions, Worst::Bounded(0));
    assert_eq!(v.max_process_changes, Worst::Bounded(0));
}

#[test]
fn to_three_paths() {
    let end = to(3, &[(0, 1), (1, 2)], &[0]);
    let v = worst_disruptions(&end, ProtocolKind::SsTo, &OracleOptions::default()).unwrap();
    assert_eq!(v.disruptions, Worst::Bounded(1));
    assert!(v.disruptions.within(Limits::of(&end).byz_degree as u64));
    assert!(v.max_process_changes.within(1));
    let c = check_convergence(&end, ProtocolKind::SsTo, &OracleOptions::default()).unwrap();
    assert!(c.converges);

    let center = to(3, &[(0, 1), (1, 2)], &[1]);
    let v = worst_disruptions(&center, ProtocolKind::SsTo, &OracleOptions::default()).unwrap();
    assert_eq!(v.disruptions, Worst::Bounded(0));
}

#[test]
fn reference_starts_are_legitimate() {
    let t = st(3, &[(0, 1), (1, 2)], &[2]);
    let starts = reference_starts(&t, ProtocolKind::SsSt, 6).unwrap();
    assert!(!starts.is_empty());
    for c in &starts {
        assert_eq!(strongstab::analysis::is_reference(ProtocolKind::SsSt, c, &t), Some(true));
    }
}

#[test]
fn cap_is_reported() {
    let edges: Vec<(usize, usize)> = (0..9).map(|i| (i, i + 1)).collect();
    let t = to(10, &edges, &[]);
    assert_eq!(
        brute_force_verify(&t, ProtocolKind::SsTo, Property::ConvergesTo, &OracleOptions::default()),
        Err(OracleError::TooLarge { n: 10, cap: 4 })
    );
    let two = to(3, &[(0, 1), (1, 2)], &[0, 2]);
    assert!(matches!(
        check_convergence(&two, ProtocolKind::SsTo, &OracleOptions::default()),
        Err(OracleError::Unsupported(_))
    ));
}

/// The engine, driven by the oracle's worst path, measures exactly the oracle's value.
#[test]
fn scripted_worst_path_replays_in_the_engine() {
    let t = st(4, &[(0, 1), (1, 2), (2, 3)], &[3]);
    let p = ProtocolKind::SsSt.protocol();
    let v = worst_disruptions(&t, ProtocolKind::SsSt, &OracleOptions::default()).unwrap();
    let path = v.witness.clone().unwrap();
    assert_eq!(Worst::Bounded(path.value), v.disruptions);
    let len = path.moves.len();
    let bound = (2 * t.n()).max(len + t.n() + 1);
    let mut daemon = Daemon::new(DaemonKind::Central, DaemonMode::Hostile, bound, 1, &t).unwrap();
    let mut adv = MaxDamage::new(&t, ProtocolKind::SsSt, 2, 1, 4).with_script(path.clone());
    let trace = run(&t, p, &mut adv, &mut daemon, path.start.clone(), &StopCondition::steps(len + 4 * bound)).unwrap();
    assert!(check_trace(&trace, &t, p, bound).is_empty());
    let report = verify_containment(&trace, &t, p, 0, &[], StabilityBudget::default()).unwrap();
    assert_eq!(report.disruption_count() as u64, path.value);
    assert_eq!(adv.replans(), 0);
    match brute_force_verify(&t, ProtocolKind::SsSt, Property::WorstDisruptions, &OracleOptions::default()).unwrap() {
        OracleVerdict::Disruptions(d) => assert_eq!(d.disruptions, v.disruptions),
        other => panic!("unexpected verdict {other:?}"),
    }
}
