use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use strongstab::adversary::AdversarySpec;
use strongstab::engine::{DaemonKind, DaemonMode};
use strongstab::gen::{self, Family};
use strongstab::init::InitMode;
use strongstab::scenario::Scenario;
use strongstab::trace::{read_trace, verify_stored, write_trace, Header};
use strongstab::ProtocolKind;

fn adversary(i: u8) -> AdversarySpec {
    match i % 5 {
        0 => AdversarySpec::new("silent"),
        1 => AdversarySpec::new("level-inflation").with("step", 2).with("budget", 15),
        2 => AdversarySpec::new("oscillate").with("period", 2),
        3 => AdversarySpec::new("fake-root"),
        _ => AdversarySpec::new("max-damage").with("depth", 1),
    }
}

fn scenario(st: bool, n: usize, f: usize, adv: u8, central: bool, hostile: bool, seed: u64) -> Option<Scenario> {
    let kind = if st { ProtocolKind::SsSt } else { ProtocolKind::SsTo };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let family = if st { Family::RandomGraph } else { Family::RandomTree };
    let spec = gen::instance(family, n, f, st, &mut rng)?;
    let mut s = Scenario::new(spec, kind, 400, seed);
    s.init = InitMode::Arbitrary;
    // fake-root only makes sense against the rooted protocol.
    s.adversary = if !st && adv % 5 == 3 { adversary(0) } else { adversary(adv) };
    s.daemon_kind = if central { DaemonKind::Central } else { DaemonKind::Distributed };
    s.daemon_mode = Some(if hostile { DaemonMode::Hostile } else { DaemonMode::Neutral });
    Some(s)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn runs_respect_the_model(
        st in any::<bool>(),
        n in 3usize..9,
        f in 0usize..3,
        adv in any::<u8>(),
        central in any::<bool>(),
        hostile in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let Some(s) = scenario(st, n, f, adv, central, hostile, seed) else { return Ok(()); };
        let out = s.execute().unwrap();
        prop_assert!(out.violations.is_empty(), "{:?}", out.violations);
        prop_assert!(out.report.proposition_holds());

        let topo = &out.topology;
        let trace = &out.trace;
        for (i, step) in trace.steps.iter().enumerate() {
            let (a, b) = (&trace.configs[i], &trace.configs[i + 1]);
            for v in topo.processes() {
                let active = step.activated.contains(&v);
                if topo.is_byzantine(v) {
                    // A Byzantine process only ever writes its own registers.
                    prop_assert!(active || a.registers[v.0] == b.registers[v.0]);
                    continue;
                }
                let fired = step.fired_by(v).is_some();
                prop_assert!(fired || a.states[v.0] == b.states[v.0], "correct {v} changed without firing at step {i}");
                prop_assert!(!fired || active);
            }
            prop_assert!(step.byz_writes.iter().all(|(v, _)| topo.is_byzantine(*v) && step.activated.contains(v)));
            if s.daemon_kind == DaemonKind::Central {
                prop_assert_eq!(step.activated.len(), 1);
            }
        }

        // Every round activates every correct process.
        let mut prev = 0;
        for &end in &trace.round_ends {
            for v in topo.correct() {
                prop_assert!(trace.steps[prev..end].iter().any(|st| st.activated.contains(&v)));
            }
            prev = end;
        }

        // Same scenario, same trace.
        let again = s.execute().unwrap();
        prop_assert_eq!(&again.trace, trace);

        // Stored traces read back identically and replay clean.
        let header = Header::new(topo, s.protocol, (s.daemon_kind, out.daemon_mode, out.fairness_bound), trace.initial());
        let mut buf = Vec::new();
        write_trace(&mut buf, &header, trace).unwrap();
        let (h, t) = read_trace(buf.as_slice()).unwrap();
        prop_assert_eq!(&t, trace);
        prop_assert!(verify_stored(&h, &t).unwrap().is_empty());
    }
}
