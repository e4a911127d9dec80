use super::*;

const A: ThreadId = ThreadId {
    family: Framework::Main,
    ordinal: 0,
};
const B: ThreadId = ThreadId {
    family: Framework::Main,
    ordinal: 1,
};
const C: ThreadId = ThreadId {
    family: Framework::Main,
    ordinal: 2,
};

fn cats(names: &[&str]) -> BTreeSet<Category> {
    names.iter().map(|n| Category::new(*n)).collect()
}

fn offer_responses() -> [&'static str; 4] {
    ["acceptance", "question", "rejection", "request"]
}

/// The service-encounter excerpt, lines 1 to 9, in milliseconds.
fn service_encounter() -> Vec<LedgerInput> {
    vec![
        ActionEvent::main(0, 500, "Pep", "greeting1", &["greeting2"]).into(),
        ActionEvent::main(500, 1800, "Pep", "offer", &offer_responses()).into(),
        ActionEvent::main(2800, 3200, "Hum1", "greeting2", &[]).into(),
        ActionEvent::byplay(3200, 4200, "Hum1", "laughter", &["laughter"]).into(),
        ActionEvent::byplay(3300, 4300, "Hum2", "laughter", &[]).into(),
        ActionEvent::main(4300, 5000, "Hum1", "howareyou", &["answer"]).into(),
        ActionEvent::main(5000, 6200, "Hum1", "acceptance", &["offer", "proposal", "request"]).into(),
        ActionEvent::main(7700, 8700, "Hum1", "repair_init", &[]).into(),
        Directive::narrow(7700, B, &["offer", "proposal"]).into(),
        ActionEvent::main(10700, 11900, "Pep", "offer", &offer_responses()).into(),
        Directive::abandon(10700, A, "superseded").into(),
    ]
}

fn service_silences() -> Vec<Span> {
    vec![Span::new(1800, 2800), Span::new(6200, 7700), Span::new(8700, 10700)]
}

fn ledger_after(inputs: &[LedgerInput]) -> ThreadLedger {
    replay(inputs, &[], &CategoryRegistry::seeded()).unwrap().ledger
}

#[test]
fn thread_letters() {
    assert_eq!(ordinal_letters(0), "A");
    assert_eq!(ordinal_letters(2), "C");
    assert_eq!(ordinal_letters(25), "Z");
    assert_eq!(ordinal_letters(26), "AA");
    assert_eq!(ordinal_letters(27), "AB");
    assert_eq!(ordinal_letters(26 + 26 * 26), "AAA");
    for n in [0, 1, 25, 26, 51, 52, 701, 702, 100_000] {
        assert_eq!(letters_ordinal(&ordinal_letters(n)), Some(n));
    }
    assert_eq!(letters_ordinal("a"), None);
    assert_eq!(letters_ordinal(""), None);
}

#[test]
fn allocation_follows_free_space() {
    let mut l = ThreadLedger::new(CategoryRegistry::seeded());
    assert_eq!(l.allocate_thread(Framework::Main), A);
    l.apply_event(ActionEvent::main(0, 500, "Pep", "greeting1", &["greeting2"])).unwrap();
    assert_eq!(l.allocate_thread(Framework::Main), B);
    l.apply_event(ActionEvent::main(500, 1800, "Pep", "offer", &offer_responses())).unwrap();
    assert_eq!(l.allocate_thread(Framework::Main), C);
    l.apply_event(ActionEvent::main(2800, 3200, "Hum1", "greeting2", &[])).unwrap();
    // A satisfied, B still open: A is reused
    assert_eq!(l.allocate_thread(Framework::Main), A);
    assert_eq!(l.allocate_thread(Framework::Byplay), ThreadId::byplay(0));
}

#[test]
fn greeting_reply_keeps_offer_open() {
    let l = ledger_after(&service_encounter()[..3]);
    assert!(matches!(
        l.projections[0].status,
        ProjectionStatus::Satisfied { by: 2, at_ms: 2800, .. }
    ));
    assert!(l.projections[1].is_open());
    assert_eq!(l.projections[1].thread, B);
}

#[test]
fn byplay_delays_without_satisfying() {
    let mut l = ThreadLedger::new(CategoryRegistry::seeded());
    l.apply_event(ActionEvent::main(0, 500, "Pep", "greeting1", &["greeting2"])).unwrap();
    l.apply_event(ActionEvent::main(500, 1800, "Pep", "offer", &offer_responses())).unwrap();
    let effects = l.apply_event(ActionEvent::byplay(2000, 2500, "Hum1", "laughter", &[])).unwrap();
    assert_eq!(
        effects,
        vec![
            Effect::Delayed { projection: 0, by: 2 },
            Effect::Delayed { projection: 1, by: 2 },
        ]
    );
    assert!(l.projections.iter().all(Projection::is_open));
    assert!(l.unattached.is_empty());
}

#[test]
fn byplay_never_satisfies_main() {
    let mut l = ThreadLedger::new(CategoryRegistry::seeded());
    l.apply_event(ActionEvent::main(0, 500, "Pep", "greeting1", &["greeting2"])).unwrap();
    l.apply_event(ActionEvent::byplay(600, 900, "Hum1", "greeting2", &[])).unwrap();
    assert!(l.projections[0].is_open());
    assert_eq!(l.projections[0].delays, vec![1]);
}

#[test]
fn repair_completes_with_its_target() {
    let l = ledger_after(&service_encounter());
    let repair = &l.projections[5];
    assert_eq!(repair.thread, C);
    assert_eq!(
        repair.kind,
        ProjectionKind::Repair {
            targets: BTreeSet::from([3, 4])
        }
    );
    assert_eq!(
        repair.status,
        ProjectionStatus::Satisfied {
            by: 8,
            at_ms: 10700,
            matched: None
        }
    );
}

#[test]
fn repair_account_closes_a_repair() {
    let mut l = ThreadLedger::new(CategoryRegistry::seeded());
    l.apply_event(ActionEvent::main(0, 500, "Pep", "offer", &offer_responses())).unwrap();
    l.apply_event(ActionEvent::main(2000, 2500, "Hum", "repair_init", &[])).unwrap();
    let effects = l.apply_event(ActionEvent::main(3000, 3500, "Pep", "repair_account", &[])).unwrap();
    assert_eq!(
        effects,
        vec![Effect::Satisfied {
            projection: 1,
            by: 2,
            matched: Some(Category::new("repair_account"))
        }]
    );
    assert!(l.projections[0].is_open());
}

#[test]
fn repair_with_awaited_is_rejected() {
    let mut l = ThreadLedger::new(CategoryRegistry::seeded());
    assert_eq!(
        l.apply_event(ActionEvent::main(0, 10, "Hum", "repair_init", &["offer"])),
        Err(SequenceError::RepairWithAwaited)
    );
}

#[test]
fn oldest_match_wins_and_is_flagged() {
    let mut l = ThreadLedger::new(CategoryRegistry::seeded());
    l.apply_event(ActionEvent::main(0, 100, "Pep", "question", &["answer"])).unwrap();
    l.apply_event(ActionEvent::main(200, 300, "Pep", "question", &["answer"])).unwrap();
    let effects = l.apply_event(ActionEvent::main(400, 500, "Hum", "answer", &[])).unwrap();
    assert_eq!(
        effects[0],
        Effect::AmbiguousSatisfaction {
            event: 2,
            candidates: vec![0, 1]
        }
    );
    assert!(!l.projections[0].is_open());
    assert!(l.projections[1].is_open());
}

#[test]
fn unattached_actions_are_logged() {
    let mut l = ThreadLedger::new(CategoryRegistry::seeded());
    let effects = l.apply_event(ActionEvent::main(0, 100, "Hum", "laughter", &[])).unwrap();
    assert_eq!(effects, vec![Effect::Unattached { event: 0 }]);
    assert_eq!(l.unattached, vec![0]);
}

#[test]
fn out_of_order_input_fails() {
    let mut l = ThreadLedger::new(CategoryRegistry::seeded());
    l.apply_event(ActionEvent::main(1000, 1100, "Pep", "offer", &[])).unwrap();
    assert_eq!(
        l.apply_event(ActionEvent::main(900, 1200, "Hum", "acceptance", &[])),
        Err(SequenceError::OutOfOrder {
            at_ms: 900,
            latest_ms: 1000
        })
    );
    // equal starts are fine
    l.apply_event(ActionEvent::main(1000, 1200, "Hum", "acceptance", &[])).unwrap();
}

#[test]
fn unknown_categories_fail() {
    let mut l = ThreadLedger::new(CategoryRegistry::seeded());
    assert_eq!(
        l.apply_event(ActionEvent::main(0, 10, "Hum", "wave", &[])),
        Err(SequenceError::UnknownCategory("wave".into()))
    );
    assert_eq!(
        l.apply_event(ActionEvent::main(0, 10, "Hum", "offer", &["wave"])),
        Err(SequenceError::UnknownCategory("wave".into()))
    );
}

#[test]
fn registry_is_extensible() {
    let mut reg = CategoryRegistry::seeded();
    reg.register("wave").unwrap();
    reg.register("offer_response").unwrap();
    for c in offer_responses() {
        reg.add_satisfaction(c, "offer_response").unwrap();
    }
    assert!(reg.register("Wave").is_err());
    assert!(reg.add_satisfaction("nope", "offer").is_err());
    let r = replay(
        &[
            ActionEvent::main(0, 100, "Pep", "offer", &["offer_response"]).into(),
            ActionEvent::main(500, 600, "Hum", "rejection", &[]).into(),
        ],
        &[],
        &reg,
    )
    .unwrap();
    assert_eq!(
        r.ledger.projections[0].status,
        ProjectionStatus::Satisfied {
            by: 1,
            at_ms: 500,
            matched: Some(Category::new("offer_response"))
        }
    );
}

#[test]
fn abandon_rules() {
    let mut l = ledger_after(&service_encounter()[..3]);
    assert_eq!(l.abandon(0, "late", 4000), Err(SequenceError::NotOpen(0)));
    assert_eq!(l.abandon(9, "late", 4000), Err(SequenceError::UnknownProjection(9)));
    assert_eq!(l.abandon(1, "a,b", 4000), Err(SequenceError::BadReason("a,b".into())));
    l.abandon(1, "late", 4000).unwrap();
    assert_eq!(l.allocate_thread(Framework::Main), A);
    assert_eq!(
        l.apply_directive(Directive::abandon(4100, B, "x")),
        Err(SequenceError::NoOpenProjection(B))
    );
}

#[test]
fn close_out_abandons_everything() {
    let mut l = ledger_after(&service_encounter()[..6]);
    let effects = l.close_out(5000).unwrap();
    // the offer on B and the howareyou on A
    assert_eq!(effects.len(), 2);
    assert_eq!(l.directives.len(), 2);
    assert!(l.open_projections().next().is_none());
    for p in &l.projections {
        assert!(!p.is_open());
    }
    assert!(matches!(
        &l.projections[1].status,
        ProjectionStatus::Abandoned { reason, at_ms: 5000 } if reason == "clip_end"
    ));
}

fn status_word(p: &Projection) -> &'static str {
    match p.status {
        ProjectionStatus::Open => "open",
        ProjectionStatus::Satisfied { .. } => "satisfied",
        ProjectionStatus::Abandoned { .. } => "abandoned",
    }
}

#[test]
fn service_encounter_replay() {
    let r = replay(&service_encounter(), &service_silences(), &CategoryRegistry::seeded()).unwrap();
    let l = &r.ledger;
    let summary: Vec<(ThreadId, &str, &str)> = l
        .projections
        .iter()
        .map(|p| (p.thread, l.events[p.opened_by].category.as_str(), status_word(p)))
        .collect();
    assert_eq!(
        summary,
        vec![
            (A, "greeting1", "satisfied"),
            (B, "offer", "satisfied"),
            (ThreadId::byplay(0), "laughter", "satisfied"),
            (A, "howareyou", "abandoned"),
            (B, "acceptance", "satisfied"),
            (C, "repair_init", "satisfied"),
            (B, "offer", "open"),
        ]
    );
    // the acceptance answered the first offer, the second offer the follow-up
    assert!(matches!(
        &l.projections[1].status,
        ProjectionStatus::Satisfied { by: 6, matched: Some(m), .. } if m.as_str() == "acceptance"
    ));
    assert!(matches!(
        &l.projections[4].status,
        ProjectionStatus::Satisfied { by: 8, matched: Some(m), .. } if m.as_str() == "offer"
    ));
    assert_eq!(l.projections[1].delays, vec![3, 4]);
    assert_eq!(l.projections[4].current_awaited(), &cats(&["offer", "proposal"]));
    assert_eq!(
        r.diagnostics,
        vec![SequenceDiagnostic::UnresolvedProjection { projection: 6, thread: B }]
    );
    assert!(l.unattached.is_empty());
    assert!(l.allocation_violations().is_empty());
    assert!(l.thread_overlaps().is_empty());
}

#[test]
fn service_encounter_silences() {
    let r = replay(&service_encounter(), &service_silences(), &CategoryRegistry::seeded()).unwrap();
    let gap = |i: usize| match &r.silences[i].class {
        SilenceClass::ResponseGap { awaiting } => awaiting
            .iter()
            .map(|a| (a.thread, a.awaited.clone()))
            .collect::<Vec<_>>(),
        SilenceClass::Lapse => panic!("silence {i} read as a lapse"),
    };
    assert_eq!(
        gap(0),
        vec![(A, cats(&["greeting2"])), (B, cats(&offer_responses()))]
    );
    assert_eq!(
        gap(1),
        vec![(A, cats(&["answer"])), (B, cats(&["offer", "proposal", "request"]))]
    );
    assert_eq!(
        gap(2),
        vec![
            (A, cats(&["answer"])),
            (B, cats(&["offer", "proposal"])),
            (C, cats(&["repair_account"])),
        ]
    );
}

#[test]
fn silence_after_closure_is_a_lapse() {
    let inputs: Vec<LedgerInput> = vec![
        ActionEvent::main(0, 500, "Pep", "greeting1", &["greeting2"]).into(),
        ActionEvent::main(900, 1200, "Hum", "greeting2", &[]).into(),
    ];
    let r = replay(&inputs, &[Span::new(500, 900), Span::new(1200, 3000)], &CategoryRegistry::seeded())
        .unwrap();
    assert!(matches!(r.silences[0].class, SilenceClass::ResponseGap { .. }));
    assert_eq!(r.silences[1].class, SilenceClass::Lapse);
    assert_eq!(
        r.ledger.classify_silence(Span::new(400, 600)),
        Err(SequenceError::SilenceOverlapsEvent {
            start_ms: 400,
            end_ms: 600,
            event: 0
        })
    );
}

#[test]
fn empty_replay() {
    let r = replay(&[], &[], &CategoryRegistry::seeded()).unwrap();
    assert!(r.ledger.projections.is_empty());
    assert!(r.diagnostics.is_empty());
    assert_eq!(stacking_string(&r.ledger), "[]");
}

#[test]
fn replay_is_byte_deterministic() {
    let reg = CategoryRegistry::seeded();
    let a = serde_json::to_vec(&replay(&service_encounter(), &service_silences(), &reg).unwrap()).unwrap();
    let b = serde_json::to_vec(&replay(&service_encounter(), &service_silences(), &reg).unwrap()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn stacking_strings() {
    let l = ledger_after(&service_encounter());
    assert_eq!(stacking_string(&l), "[P1+P2->H1->H3+H2->H5->P4]");
    assert_eq!(stacking_string(&ledger_after(&service_encounter()[..3])), "[P1+P2->H1]");

    let nested = ledger_after(&[
        ActionEvent::main(0, 500, "Pep", "offer", &["acceptance"]).into(),
        ActionEvent::main(1000, 1500, "Hum", "question", &["answer"]).into(),
        ActionEvent::main(2000, 2500, "Pep", "answer", &[]).into(),
        ActionEvent::main(3000, 3500, "Hum", "acceptance", &[]).into(),
    ]);
    assert_eq!(stacking_string(&nested), "[P1->H2->P2->H1]");
    let unattached = ledger_after(&[ActionEvent::main(0, 500, "Hum", "laughter", &[]).into()]);
    assert_eq!(stacking_string(&unattached), "[H?]");
}

#[test]
fn greeting_latency() {
    let l = ledger_after(&service_encounter());
    let lat = latencies(&l);
    let greeting = lat.iter().find(|x| x.awaited.as_str() == "greeting2").unwrap();
    // Pep's turn ends at 1800, the reply starts at 2800
    assert_eq!(greeting.latency_ms, 2800 - 1800);
    // the repair closed by cascade has no latency of its own
    assert!(lat.iter().all(|x| x.projection != 5));
}

#[test]
fn narrowing_rules() {
    let mut l = ledger_after(&service_encounter()[..7]);
    assert_eq!(
        l.apply_directive(Directive::narrow(6000, B, &[])),
        Err(SequenceError::EmptyNarrowing)
    );
    assert!(matches!(
        l.apply_directive(Directive::narrow(5000, B, &["offer"])),
        Err(SequenceError::DirectiveTooEarly { boundary_ms: 5000, .. })
    ));
    assert_eq!(
        l.apply_directive(Directive::narrow(6000, C, &["offer"])),
        Err(SequenceError::NoOpenProjection(C))
    );
    l.apply_directive(Directive::narrow(6000, B, &["offer"])).unwrap();
    // a request no longer answers the follow-up
    let effects = l.apply_event(ActionEvent::main(7000, 7500, "Hum1", "request", &[])).unwrap();
    assert_eq!(effects, vec![Effect::Unattached { event: 7 }]);
}

#[test]
fn tier_export_shapes() {
    let l = ledger_after(&service_encounter());
    let doc = export_to_tiers(&l, "sample1").unwrap();
    let values = |name: &str| -> Vec<(u64, u64, String)> {
        doc.tier(name)
            .unwrap()
            .segments
            .iter()
            .map(|s| (s.start_ms, s.end_ms, s.value.clone()))
            .collect()
    };
    assert_eq!(
        values("seqthread@A"),
        vec![
            (0, 2800, "wait(greeting2)".to_string()),
            (4300, 10700, "wait(answer);abandon(superseded)".to_string()),
        ]
    );
    assert_eq!(
        values("seqthread@B")[1..],
        [
            (5000, 7700, "wait(offer,proposal,request)".to_string()),
            (7700, 10700, "narrow(offer,proposal)".to_string()),
            (10700, 11900, "wait(acceptance,question,rejection,request)".to_string()),
        ]
    );
    assert_eq!(values("seqthread@C"), vec![(7700, 10700, "repair()".to_string())]);
    assert_eq!(values("byplay@A"), vec![(3200, 3300, "wait(laughter)".to_string())]);
    assert_eq!(values("speech@Hum2"), vec![(3300, 4300, "act(Hum2,laughter,byplay)".to_string())]);
    assert_eq!(doc.timeline_duration_ms, 11900);
}

#[test]
fn tier_round_trip_of_service_encounter() {
    let reg = CategoryRegistry::seeded();
    let original = replay(&service_encounter(), &[], &reg).unwrap().ledger;
    let doc = export_to_tiers(&original, "sample1").unwrap();
    let inputs = import_from_tiers(&doc).unwrap();
    assert_eq!(inputs, canonical_order(service_encounter()));
    assert_eq!(replay(&inputs, &[], &reg).unwrap().ledger, original);
}

#[test]
fn bad_tier_values_name_the_segment() {
    let l = ledger_after(&service_encounter()[..3]);
    let mut doc = export_to_tiers(&l, "s").unwrap();
    let tier = doc.tiers.iter_mut().find(|t| t.name == "seqthread@A").unwrap();
    tier.segments[0].value = "wiat(greeting2)".into();
    let err = import_from_tiers(&doc).unwrap_err();
    assert!(matches!(
        &err,
        SequenceError::TierValue { tier, segment: 0, .. } if tier == "seqthread@A"
    ));
    assert!(err.to_string().contains("seqthread@A"));
}

#[test]
fn tier_value_grammar() {
    for ok in [
        "act(Pep,greeting1)",
        "act(Hum2,laughter,byplay)",
        "wait(greeting2)",
        "wait(acceptance,question)",
        "narrow(offer)",
        "abandon(clip_end)",
        "repair()",
        "repair_account()",
        "repair();repair_account()",
    ] {
        let items = parse_tier_value(ok).unwrap();
        let back: Vec<String> = items.iter().map(ToString::to_string).collect();
        assert_eq!(back.join(";"), ok);
    }
    for bad in [
        "Wait(greeting2)",
        "wait()",
        "wait(greeting2",
        "wait( greeting2)",
        "act(Pep)",
        "act(Pep,greeting1,main)",
        "abandon()",
        "repair(x)",
        "",
    ] {
        assert!(parse_tier_value(bad).is_err(), "{bad:?} should not parse");
    }
}
