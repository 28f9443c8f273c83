//! Properties of the finite-buffer bookkeeping used by the delay-constrained
//! protocols.

mod common;

use bdrelay::buffers::{apply_decision, modified_powers, virtual_capacities, BufferState};
use bdrelay::channel::{link_capacities, ChannelState, CoinStream, FadingConfig, SlotCoins};
use bdrelay::fixed::{select_mode_fixed_delay, CaseTag, FixedRegion, FixedWeights, NodePowers};
use bdrelay::joint::{select_mode_delay, JointWeights};
use bdrelay::mode::{Mode, ModeCapacities};
use bdrelay::sim::{run_sim, Policy, ProtocolHandle};
use common::mac_rates;
use proptest::prelude::*;

fn buffer() -> impl Strategy<Value = BufferState> {
    (0.1..20.0f64, 0.1..20.0f64, 0.0..=1.0f64, 0.0..=1.0f64)
        .prop_map(|(m1, m2, f1, f2)| BufferState::with_content(f1 * m1, f2 * m2, m1, m2).unwrap())
}

fn state() -> impl Strategy<Value = ChannelState> {
    (0.01..5.0f64, 0.01..5.0f64).prop_map(|(a, b)| ChannelState::new(a, b))
}

proptest! {
    #[test]
    fn virtual_never_exceeds_actual(st in state(), buf in buffer(), p in 0.1..100.0f64, t in 0u8..=1) {
        let caps = link_capacities(&st, p, p, p, f64::from(t));
        let v = virtual_capacities(&caps, &buf);
        for (virt, full) in [
            (v.c1r, caps.c1r), (v.c2r, caps.c2r), (v.c12r, caps.c12r),
            (v.c21r, caps.c21r), (v.cr1, caps.cr1), (v.cr2, caps.cr2),
        ] {
            prop_assert!(virt <= full && virt >= 0.0);
        }
        prop_assert!(v.c1r <= buf.space1() + 1e-12 && v.c12r <= buf.space1() + 1e-12);
        prop_assert!(v.c2r <= buf.space2() + 1e-12 && v.c21r <= buf.space2() + 1e-12);
        prop_assert!(v.cr2 <= buf.q1 && v.cr1 <= buf.q2);
    }

    #[test]
    fn modified_powers_are_feasible(st in state(), buf in buffer(), p in 0.1..100.0f64, t in 0u8..=1) {
        let caps = link_capacities(&st, p, p, p, f64::from(t));
        let v = virtual_capacities(&caps, &buf);
        let mp = modified_powers(&st, &v, t);
        let slack = 1e-9 * (1.0 + p);
        for q in [mp.p1_m1, mp.p2_m2, mp.p1_m3, mp.p2_m3, mp.pr_m4, mp.pr_m5, mp.pr_m6] {
            prop_assert!(q >= 0.0 && q <= p + slack, "power {q} above nominal {p}");
        }
        // The reduced powers carry exactly the clipped rates.
        let tol = 1e-9;
        prop_assert!((common::cap(mp.p1_m1 * st.s1) - v.c1r).abs() < tol);
        prop_assert!((common::cap(mp.p2_m2 * st.s2) - v.c2r).abs() < tol);
        let (a, b) = mac_rates(mp.p1_m3 * st.s1, mp.p2_m3 * st.s2, t);
        prop_assert!((a - v.c12r).abs() < tol && (b - v.c21r).abs() < tol);
        prop_assert!(common::cap(mp.pr_m6 * st.s1) >= v.cr1 - tol);
        prop_assert!(common::cap(mp.pr_m6 * st.s2) >= v.cr2 - tol);
    }

    #[test]
    fn fixed_delay_decisions_stay_in_bounds(
        st in state(), buf in buffer(), mu1 in 0.01..0.49f64, mu2 in 0.01..0.49f64, seed in any::<u64>(),
    ) {
        let eta = 0.5;
        let region = bdrelay::fixed::classify(mu1, mu2, eta);
        let w = FixedWeights {
            mu1, mu2, p1: 0.5, p2: 0.5, p3: 0.5, p4: 0.5, p5: None, p6: 0.5,
            region, case_tag: if region == FixedRegion::S0 { CaseTag::Case1 } else { CaseTag::Case2a },
        };
        let coins = CoinStream::new(seed).next_coins();
        let d = select_mode_fixed_delay(&st, &w, eta, &NodePowers::equal(10.0), &coins, &buf);
        let next = apply_decision(&buf, &d);
        prop_assert!(next.q1 >= 0.0 && next.q1 <= buf.q1max);
        prop_assert!(next.q2 >= 0.0 && next.q2 <= buf.q2max);
    }

    #[test]
    fn joint_delay_decisions_stay_in_bounds(
        st in state(), buf in buffer(), mu1 in 0.01..0.49f64, mu2 in 0.01..0.49f64, gamma in 0.01..1.0f64,
    ) {
        let eta = 0.5;
        let w = JointWeights::interior(mu1, mu2, gamma);
        let d = select_mode_delay(&st, &w, eta, &SlotCoins::NEUTRAL, &buf);
        let next = apply_decision(&buf, &d);
        prop_assert!(next.q1 >= 0.0 && next.q1 <= buf.q1max);
        prop_assert!(next.q2 >= 0.0 && next.q2 <= buf.q2max);
        // Powers never exceed what the unconstrained policy would use.
        let p = bdrelay::joint::mode_powers(&st, &w, eta);
        let full = p.alloc(d.mode);
        let within = |used: f64, nominal: f64| used <= nominal * (1.0 + 1e-9) + 1e-12;
        prop_assert!(within(d.powers.p1, full.p1) && within(d.powers.p2, full.p2) && within(d.powers.pr, full.pr));
    }

    #[test]
    fn roomy_buffers_change_nothing(st in state(), p in 0.1..100.0f64, t in 0u8..=1) {
        let caps = link_capacities(&st, p, p, p, f64::from(t));
        let roomy = BufferState::with_content(1e9, 1e9, 2e9, 2e9).unwrap();
        let v = virtual_capacities(&caps, &roomy);
        prop_assert_eq!(ModeCapacities::from_links(&v), ModeCapacities::from_links(&caps));
    }
}

#[test]
fn empty_relay_cannot_serve() {
    let st = ChannelState::new(1.0, 1.0);
    let buf = BufferState::new(5.0, 5.0).unwrap();
    let w = JointWeights::interior(0.3, 0.3, 0.05);
    let d = select_mode_delay(&st, &w, 0.5, &SlotCoins::NEUTRAL, &buf);
    assert!(!matches!(d.mode, Mode::M4 | Mode::M5 | Mode::M6) || (d.rr1 == 0.0 && d.rr2 == 0.0));
}

#[test]
fn fifo_delay_agrees_with_littles_law() {
    let cfg = FadingConfig::symmetric(5);
    let w = FixedWeights {
        mu1: 0.2,
        mu2: 0.2,
        p1: 1.0,
        p2: 1.0,
        p3: 1.0,
        p4: 1.0,
        p5: None,
        p6: 0.5,
        region: FixedRegion::S0,
        case_tag: CaseTag::Case1,
    };
    let policy = Policy::Fixed {
        eta: 0.5,
        weights: w,
        powers: NodePowers::equal(10.0),
    };
    let s = run_sim(
        &ProtocolHandle::with_buffers(policy, 15.0, 15.0),
        &cfg,
        1_000_000,
        3,
    )
    .unwrap();
    for (fifo, little) in [(s.fifo_delay1, s.delay1), (s.fifo_delay2, s.delay2)] {
        let (fifo, little) = (fifo.unwrap(), little.unwrap());
        assert!(
            (fifo - little).abs() <= 0.03 * little,
            "fifo {fifo} vs little {little}"
        );
    }
}
