use super::*;

const A: ProcessId = ProcessId(0);
const B: ProcessId = ProcessId(1);
const C: ProcessId = ProcessId(2);
const D: ProcessId = ProcessId(3);

fn pc(guard: GuardConfig) -> PcBroadcast {
    let mut p = PcBroadcast::new(A, guard, PingRouting::Flood);
    let mut out = Vec::new();
    p.adopt_link(B, &mut out);
    p.adopt_link(C, &mut out);
    p
}

fn sends_to(out: &Outbox, to: ProcessId) -> Vec<ProtocolMessage> {
    out.iter()
        .filter_map(|e| match e {
            Effect::Send { to: t, msg } if *t == to => Some(msg.clone()),
            _ => None,
        })
        .collect()
}

fn controls(out: &Outbox) -> Vec<ControlEvent> {
    out.iter()
        .filter_map(|e| match e {
            Effect::Control(c) => Some(c.clone()),
            _ => None,
        })
        .collect()
}

fn payload_ids(msgs: &[ProtocolMessage]) -> Vec<MessageId> {
    msgs.iter().filter_map(|m| m.payload_id()).collect()
}

fn incoming(origin: u64, counter: u64) -> ProtocolMessage {
    ProtocolMessage::Payload(Payload {
        id: MessageId::new(ProcessId(origin), counter),
        body: Bytes::new(),
    })
}

fn pong(phase: u64) -> ProtocolMessage {
    ProtocolMessage::Pong(PhaseTag { from: A, to: D, phase })
}

fn assert_disjoint(p: &PcBroadcast) {
    for q in p.safe_links() {
        assert!(p.buffer(q).is_none(), "{q} both safe and buffering");
    }
}

#[test]
fn new_link_buffers_and_pings_over_safe_links() {
    let mut a = pc(GuardConfig::default());
    let mut out = Vec::new();
    a.open_link(D, &mut out);
    assert_eq!(a.buffer(D).map(|b| b.phase), Some(1));
    assert_eq!(
        sends_to(&out, B),
        vec![ProtocolMessage::Ping(PhaseTag {
            from: A,
            to: D,
            phase: 1
        })]
    );
    assert!(sends_to(&out, D).is_empty());

    let mut out = Vec::new();
    let id = a.broadcast(Bytes::from_static(b"a'"), &mut out);
    assert_eq!(payload_ids(&sends_to(&out, B)), vec![id]);
    assert!(sends_to(&out, D).is_empty());
    assert_eq!(a.buffer(D).unwrap().messages.len(), 1);
    assert_disjoint(&a);
}

#[test]
fn first_link_of_isolated_process_is_safe_at_once() {
    let mut t = PcBroadcast::new(D, GuardConfig::default(), PingRouting::Flood);
    let mut out = Vec::new();
    t.open_link(A, &mut out);
    assert!(t.is_safe(A));
    assert!(!controls(&out)
        .iter()
        .any(|c| matches!(c, ControlEvent::PingSent { .. })));
}

#[test]
fn single_safe_neighbor_still_pings() {
    let mut a = PcBroadcast::new(A, GuardConfig::default(), PingRouting::Flood);
    let mut out = Vec::new();
    a.adopt_link(B, &mut out);
    a.open_link(D, &mut out);
    assert!(a.buffer(D).is_some());
    assert!(!a.is_safe(D));
}

#[test]
fn reopening_is_idempotent() {
    let mut a = pc(GuardConfig::default());
    let mut out = Vec::new();
    a.open_link(D, &mut out);
    let mut again = Vec::new();
    a.open_link(D, &mut again);
    a.open_link(B, &mut again);
    assert!(again.is_empty());
    assert_eq!(a.phases_started(), 1);
}

#[test]
fn ping_target_answers_every_time_without_state() {
    let mut d = PcBroadcast::new(D, GuardConfig::default(), PingRouting::Flood);
    let ping = PhaseTag {
        from: A,
        to: D,
        phase: 1,
    };
    for _ in 0..2 {
        let mut out = Vec::new();
        d.receive(B, ProtocolMessage::Ping(ping), &mut out);
        assert!(out.contains(&Effect::Direct {
            to: A,
            msg: ProtocolMessage::Pong(ping)
        }));
    }
    let stranger = PhaseTag {
        from: ProcessId(99),
        to: D,
        phase: 7,
    };
    let mut out = Vec::new();
    d.receive(B, ProtocolMessage::Ping(stranger), &mut out);
    assert!(out.contains(&Effect::Direct {
        to: ProcessId(99),
        msg: ProtocolMessage::Pong(stranger)
    }));
}

#[test]
fn intermediate_floods_ping_once() {
    let mut b = PcBroadcast::new(B, GuardConfig::default(), PingRouting::Flood);
    let mut out = Vec::new();
    b.adopt_link(C, &mut out);
    b.adopt_link(D, &mut out);
    let ping = ProtocolMessage::Ping(PhaseTag {
        from: A,
        to: D,
        phase: 1,
    });
    let mut out = Vec::new();
    b.receive(A, ping.clone(), &mut out);
    assert_eq!(sends_to(&out, C), vec![ping.clone()]);
    assert_eq!(sends_to(&out, D), vec![ping.clone()]);
    let mut out = Vec::new();
    b.receive(C, ping, &mut out);
    assert!(out.is_empty());
}

#[test]
fn matching_pong_flushes_in_order_and_promotes() {
    let mut a = pc(GuardConfig::default());
    let mut out = Vec::new();
    a.open_link(D, &mut out);
    let first = a.broadcast(Bytes::new(), &mut out);
    a.receive(C, incoming(2, 1), &mut out);

    let mut out = Vec::new();
    a.receive(D, pong(1), &mut out);
    assert_eq!(payload_ids(&sends_to(&out, D)), vec![first, MessageId::new(C, 1)]);
    assert!(a.is_safe(D));
    assert!(a.buffer(D).is_none());

    let mut out = Vec::new();
    let next = a.broadcast(Bytes::new(), &mut out);
    assert_eq!(payload_ids(&sends_to(&out, D)), vec![next]);
}

#[test]
fn stale_pong_is_discarded() {
    let mut a = pc(GuardConfig {
        max_size: Some(0),
        ..GuardConfig::default()
    });
    let mut out = Vec::new();
    a.open_link(D, &mut out);
    a.broadcast(Bytes::new(), &mut out);
    assert_eq!(a.buffer(D).unwrap().phase, 2);

    let mut out = Vec::new();
    a.receive(D, pong(1), &mut out);
    assert_eq!(controls(&out), vec![ControlEvent::PongDiscarded { peer: D, phase: 1 }]);
    assert!(!a.is_safe(D));
}

#[test]
fn pong_without_buffer_is_noop() {
    let mut a = pc(GuardConfig::default());
    let mut out = Vec::new();
    a.receive(D, pong(4), &mut out);
    assert!(sends_to(&out, D).is_empty());
    assert!(!a.is_safe(D));
}

#[test]
fn every_open_buffer_receives_each_delivery() {
    let mut a = pc(GuardConfig::default());
    let mut out = Vec::new();
    a.open_link(D, &mut out);
    a.open_link(ProcessId(4), &mut out);
    a.receive(B, incoming(1, 1), &mut out);
    assert_eq!(a.buffer(D).unwrap().messages.len(), 1);
    assert_eq!(a.buffer(ProcessId(4)).unwrap().messages.len(), 1);
}

#[test]
fn delivery_without_buffers_passes_through() {
    let mut a = pc(GuardConfig::default());
    let mut out = Vec::new();
    a.receive(B, incoming(1, 1), &mut out);
    assert!(out.contains(&Effect::Deliver(MessageId::new(B, 1))));
    assert_eq!(a.counters().buffer_appends, 0);
}

#[test]
fn close_during_buffering_drops_buffer_and_later_pong() {
    let mut a = pc(GuardConfig::default());
    let mut out = Vec::new();
    a.open_link(D, &mut out);
    a.broadcast(Bytes::new(), &mut out);
    a.close_link(D, &mut out);
    assert!(a.buffer(D).is_none());
    let mut out = Vec::new();
    a.receive(D, pong(1), &mut out);
    assert!(!a.is_safe(D));
    assert!(sends_to(&out, D).is_empty());
}

#[test]
fn closing_safe_link_stops_its_use() {
    let mut a = pc(GuardConfig::default());
    let mut out = Vec::new();
    a.close_link(B, &mut out);
    let mut out = Vec::new();
    a.broadcast(Bytes::new(), &mut out);
    assert!(sends_to(&out, B).is_empty());
    let mut out = Vec::new();
    a.close_link(ProcessId(42), &mut out);
    assert!(out.is_empty());
}

#[test]
fn oversize_buffer_resets_with_new_phase() {
    let mut a = pc(GuardConfig {
        max_size: Some(2),
        ..GuardConfig::default()
    });
    let mut out = Vec::new();
    a.open_link(D, &mut out);
    a.broadcast(Bytes::new(), &mut out);
    a.broadcast(Bytes::new(), &mut out);
    assert_eq!(a.buffer(D).unwrap().messages.len(), 2);

    let mut out = Vec::new();
    a.receive(C, incoming(2, 1), &mut out);
    let buffer = a.buffer(D).unwrap();
    assert_eq!(buffer.phase, 2);
    assert!(buffer.messages.is_empty());
    assert!(controls(&out).contains(&ControlEvent::BufferReset { peer: D, phase: 2 }));
    // x goes out on the safe links before the second ping
    let to_b = sends_to(&out, B);
    assert_eq!(to_b[0].payload_id(), Some(MessageId::new(C, 1)));
    assert_eq!(
        to_b[1],
        ProtocolMessage::Ping(PhaseTag {
            from: A,
            to: D,
            phase: 2
        })
    );
}

#[test]
fn only_the_oversize_buffer_resets() {
    let mut a = pc(GuardConfig {
        max_size: Some(1),
        ..GuardConfig::default()
    });
    let mut out = Vec::new();
    a.open_link(D, &mut out);
    a.broadcast(Bytes::new(), &mut out);
    a.open_link(ProcessId(4), &mut out);
    a.broadcast(Bytes::new(), &mut out);
    assert_eq!(a.buffer(D).unwrap().messages.len(), 0);
    assert_eq!(a.buffer(D).unwrap().phase, 3);
    assert_eq!(a.buffer(ProcessId(4)).unwrap().messages.len(), 1);
}

#[test]
fn timeouts_retry_until_abandon() {
    let mut a = pc(GuardConfig {
        max_retry: Some(3),
        timeout_ms: Some(100),
        ..GuardConfig::default()
    });
    let mut out = Vec::new();
    a.open_link(D, &mut out);
    let mut phase = 1;
    loop {
        let mut out = Vec::new();
        a.timeout(D, phase, &mut out);
        let c = controls(&out);
        if c.contains(&ControlEvent::LinkAbandoned { peer: D }) {
            break;
        }
        assert!(out.contains(&Effect::ArmTimeout {
            peer: D,
            phase: phase + 1
        }));
        phase += 1;
    }
    assert_eq!(a.phases_started(), 4);
    assert!(a.buffer(D).is_none());
    assert!(!a.is_safe(D));

    let mut out = Vec::new();
    a.receive(D, pong(4), &mut out);
    assert!(!a.is_safe(D));
}

#[test]
fn timeout_after_pong_is_noop() {
    let mut a = pc(GuardConfig {
        timeout_ms: Some(100),
        ..GuardConfig::default()
    });
    let mut out = Vec::new();
    a.open_link(D, &mut out);
    a.receive(D, pong(1), &mut out);
    let mut out = Vec::new();
    a.timeout(D, 1, &mut out);
    assert_eq!(controls(&out), vec![ControlEvent::TimeoutFired { peer: D, phase: 1 }]);
}

#[test]
fn routed_pings_go_through_the_host() {
    let mut a = PcBroadcast::new(A, GuardConfig::default(), PingRouting::Route);
    let mut out = Vec::new();
    a.adopt_link(B, &mut out);
    let mut out = Vec::new();
    a.open_link(D, &mut out);
    assert!(out.contains(&Effect::RoutePing(PhaseTag {
        from: A,
        to: D,
        phase: 1
    })));
    assert!(sends_to(&out, B).is_empty());
}

mod props {
    use super::*;
    use proptest::prelude::*;

    #[derive(Clone, Debug)]
    enum Op {
        Open(u64),
        Close(u64),
        Deliver,
        Pong(u64, u64),
        Timeout(u64, u64),
    }

    fn op() -> impl Strategy<Value = Op> {
        prop_oneof![
            (1u64..6).prop_map(Op::Open),
            (1u64..6).prop_map(Op::Close),
            Just(Op::Deliver),
            (1u64..6, 1u64..12).prop_map(|(q, ph)| Op::Pong(q, ph)),
            (1u64..6, 1u64..12).prop_map(|(q, ph)| Op::Timeout(q, ph)),
        ]
    }

    proptest! {
        #[test]
        fn safe_and_buffering_stay_disjoint_and_bounded(
            ops in proptest::collection::vec(op(), 1..80),
            max_size in 0usize..4,
            max_retry in 0u32..3,
        ) {
            let mut a = PcBroadcast::new(A, GuardConfig {
                max_size: Some(max_size),
                max_retry: Some(max_retry),
                timeout_ms: Some(10),
            }, PingRouting::Flood);
            let mut out = Vec::new();
            a.adopt_link(ProcessId(9), &mut out);
            let mut counter = 0;
            for op in ops {
                let mut out = Vec::new();
                match op {
                    Op::Open(q) => a.open_link(ProcessId(q), &mut out),
                    Op::Close(q) => a.close_link(ProcessId(q), &mut out),
                    Op::Deliver => {
                        counter += 1;
                        a.receive(ProcessId(9), incoming(50, counter), &mut out);
                    }
                    Op::Pong(q, ph) => a.receive(ProcessId(q), ProtocolMessage::Pong(PhaseTag { from: A, to: ProcessId(q), phase: ph }), &mut out),
                    Op::Timeout(q, ph) => a.timeout(ProcessId(q), ph, &mut out),
                }
                assert_disjoint(&a);
                for (q, len) in a.buffering_links() {
                    prop_assert!(len <= max_size);
                    prop_assert!(a.guard().retry_count(q).is_none_or(|r| r <= max_retry + 1));
                }
            }
        }
    }
}
