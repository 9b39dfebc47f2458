//! Acceptance suite. Each test checks one gate criterion end to end and
//! prints a PASS line with the measured details (run with `--nocapture`).

mod support;

use std::collections::BTreeSet;
use std::time::Instant;

use rand::Rng;

use ihda::controller::{conforms, CounterMode};
use ihda::cube::{parse_clause, parse_cube};
use ihda::hda::{pn_to_hda, reachability_graph, Cell};
use ihda::models;
use ihda::plantsim::{PlantState, Scenario};
use ihda::trace;
use ihda::translate::{
    build_ihda, check_invariants, find_inconsistent, restrict_place_labels, AnalysisReport, Ihda,
};
use ihda::{Budget, Concset, Ipn, Marking};

use support::*;

fn buggy() -> Ipn {
    Ipn::parse(models::TRANSFER_BUGGY).unwrap()
}

fn fixed() -> Ipn {
    Ipn::parse(models::TRANSFER_FIXED).unwrap()
}

fn concset_of(ipn: &Ipn, ids: &[&str]) -> Concset {
    let mut c = Concset::empty(ipn.transitions().len());
    for id in ids {
        c.add(ipn.transition_index(id).unwrap(), 1);
    }
    c
}

fn unique_cell(ihda: &Ihda, c: &Concset) -> Cell {
    let cells: Vec<&Cell> = ihda
        .hda()
        .cells()
        .filter(|cell| cell.concset == *c)
        .collect();
    assert_eq!(cells.len(), 1, "concset should identify one cell");
    cells[0].clone()
}

#[test]
fn criterion_1_cell_table_reproduction() {
    let started = Instant::now();
    let net = buggy();
    let ihda = build_ihda(&net, &Budget::default()).unwrap();

    // (cell transitions, table inputs, table outputs)
    let table = [
        (vec!["t_B", "t_D"], "r1 & l2", "R1 & L2"),
        (vec!["t_C", "t_D"], "press_R & l2", "Load & L2"),
        (
            vec!["t_B", "t_F", "t_E"],
            "r1 & press_L & r2",
            "R1 & Pusher & R2",
        ),
        (
            vec!["t_C", "t_F", "t_E"],
            "press_R & press_L & r2",
            "Load & Pusher & R2",
        ),
    ];
    for (ids, input_text, output_text) in &table {
        let cell = unique_cell(&ihda, &concset_of(&net, ids));
        let (input, output) = ihda.label(&cell).unwrap();
        let expect_input = parse_cube(input_text, net.inputs()).unwrap();
        let expect_output = parse_cube(output_text, net.outputs()).unwrap();
        // Byte-exact in canonical serialization.
        assert_eq!(
            input.to_string(),
            expect_input.to_string(),
            "inputs of {ids:?}"
        );
        assert_eq!(
            output.to_string(),
            expect_output.to_string(),
            "outputs of {ids:?}"
        );
        assert_eq!(input, &expect_input);
        assert_eq!(output, &expect_output);
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}, limit 1 s");
    println!("criterion 1 (cell-table reproduction): PASS — 4 cells byte-exact in {elapsed:?}");
}

fn truncation_keys_match(ipn: &Ipn, budget: &Budget) -> Result<(usize, usize), String> {
    let hda = pn_to_hda(ipn, budget).map_err(|e| e.to_string())?;
    let graph = reachability_graph(ipn, budget).map_err(|e| e.to_string())?;

    let node_keys: Vec<&Marking> = graph.nodes.iter().collect();
    let mut zero_keys: Vec<&Marking> = hda.cells_of_dim(0).map(|c| &c.marking).collect();
    zero_keys.sort();
    if node_keys != zero_keys {
        return Err("0-cell markings differ from reachability nodes".to_string());
    }

    let edge_keys: Vec<(Marking, usize)> = graph
        .edges
        .iter()
        .map(|(m, t, _)| (m.clone(), *t))
        .collect();
    let mut one_keys: Vec<(Marking, usize)> = hda
        .cells_of_dim(1)
        .map(|c| {
            let t = c.concset.support().next().unwrap().0;
            (hda.lower_corner(c).marking, t)
        })
        .collect();
    one_keys.sort();
    let mut edge_sorted = edge_keys.clone();
    edge_sorted.sort();
    if edge_sorted != one_keys {
        return Err("1-cell keys differ from reachability edges".to_string());
    }
    Ok((graph.nodes.len(), graph.edges.len()))
}

#[test]
fn criterion_2_truncation_matches_reachability() {
    let started = Instant::now();
    for net in [buggy(), fixed()] {
        truncation_keys_match(&net, &Budget::default()).unwrap();
    }

    let budget = Budget {
        max_tokens_per_place: 1,
        max_markings: 4_096,
    };
    let mut rng = rng(0x1E44A);
    let mut checked = 0;
    let mut skipped = 0;
    let (mut total_nodes, mut total_edges) = (0, 0);
    while checked < 200 {
        let net = random_net(&mut rng, 6, 6);
        match truncation_keys_match(&net, &budget) {
            Ok((nodes, edges)) => {
                checked += 1;
                total_nodes += nodes;
                total_edges += edges;
            }
            // Not 1-safe within budget: not a counterexample, draw again.
            Err(e) if e.contains("budget") || e.contains("tokens") => skipped += 1,
            Err(e) => panic!("1-truncation mismatch on random net: {e}\n{net}"),
        }
        assert!(skipped < 5_000, "generator keeps producing unbounded nets");
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 30.0, "took {elapsed:?}, limit 30 s");
    println!(
        "criterion 2 (1-truncation vs reachability graph): PASS — 2 bundled + {checked} random nets \
         ({total_nodes} nodes / {total_edges} edges; {skipped} unbounded draws skipped) \
         in {elapsed:?}"
    );
}

#[test]
fn criterion_3_precubical_identity() {
    let mut cells_checked = 0;
    for net in [buggy(), fixed()] {
        let hda = pn_to_hda(&net, &Budget::default()).unwrap();
        assert!(hda.verify_precubical().is_empty());
        cells_checked += hda.len();
    }
    let budget = Budget {
        max_tokens_per_place: 1,
        max_markings: 4_096,
    };
    let mut rng = rng(0x9E0);
    let mut done = 0;
    while done < 40 {
        let net = random_net(&mut rng, 6, 6);
        if let Ok(hda) = pn_to_hda(&net, &budget) {
            assert!(
                hda.verify_precubical().is_empty(),
                "precubical violation on random net:\n{net}"
            );
            cells_checked += hda.len();
            done += 1;
        }
    }

    // Fault injection: corrupting one stored cell's marking must be caught.
    let net = buggy();
    let hda = pn_to_hda(&net, &Budget::default()).unwrap();
    let victim = hda.cells().find(|c| c.dim() == 2).unwrap().clone();
    let mut cells: BTreeSet<Cell> = hda.cells().cloned().collect();
    cells.remove(&victim);
    let mut corrupted = victim.clone();
    let mut m = corrupted.marking.clone();
    m.set(0, m.count(0) + 7);
    corrupted.marking = m;
    cells.insert(corrupted.clone());
    let bad = ihda::hda::Hda::from_parts(&net, cells, hda.initial().clone());
    let violations = bad.verify_precubical();
    assert!(
        violations.iter().any(|v| v.cell == corrupted),
        "fault must be named"
    );

    println!(
        "criterion 3 (precubical identity): PASS — {cells_checked} cells verified, \
         injected fault detected"
    );
}

fn assert_maximal_are_w_z(net: &Ipn, report: &AnalysisReport) {
    let maximal: BTreeSet<Concset> = report.maximal().map(|f| f.cell.concset.clone()).collect();
    let expected: BTreeSet<Concset> = [
        concset_of(net, &["t_B", "t_F", "t_E"]),
        concset_of(net, &["t_C", "t_F", "t_E"]),
    ]
    .into_iter()
    .collect();
    assert_eq!(
        maximal, expected,
        "maximal flagged cells must be exactly w and z"
    );
}

fn assert_witnesses_replay(net: &Ipn, ihda: &Ihda, report: &AnalysisReport) {
    for finding in &report.findings {
        let comp = &finding.witness;
        assert_eq!(comp.initial.marking, net.initial_marking());
        let mut m = net.initial_marking();
        for step in &comp.steps {
            assert_eq!(ihda.hda().lower_corner(step).marking, m);
            m = net
                .fire_step(&m, &step.concset)
                .expect("witness step fires");
        }
        assert_eq!(&m, &ihda.hda().upper_corner(&finding.cell).marking);
    }
}

#[test]
fn criterion_4_output_restriction_detection() {
    // Route 1: global output invariants on the unmodified models.
    let buggy_net = buggy();
    let clauses = vec![
        parse_clause("!L2 | !Pusher", buggy_net.outputs()).unwrap(),
        parse_clause("!R2 | !Pusher", buggy_net.outputs()).unwrap(),
    ];
    let buggy_ihda = build_ihda(&buggy_net, &Budget::default()).unwrap();
    let report = check_invariants(&buggy_net, &buggy_ihda, &clauses).unwrap();
    assert!(!report.is_empty());
    assert_maximal_are_w_z(&buggy_net, &report);
    assert_witnesses_replay(&buggy_net, &buggy_ihda, &report);

    let fixed_net = fixed();
    let fixed_ihda = build_ihda(&fixed_net, &Budget::default()).unwrap();
    assert!(check_invariants(&fixed_net, &fixed_ihda, &clauses)
        .unwrap()
        .is_empty());
    assert!(find_inconsistent(&fixed_net, &fixed_ihda)
        .unwrap()
        .is_empty());

    // Route 2: relabeling the places that drive L2, R2 and the pusher.
    let restrict = |net: &Ipn| {
        restrict_place_labels(
            net,
            &[
                (
                    "p_deliver".into(),
                    parse_cube("L2 & !Pusher", net.outputs()).unwrap(),
                ),
                (
                    "p_back2".into(),
                    parse_cube("R2 & !Pusher", net.outputs()).unwrap(),
                ),
                (
                    "p_push".into(),
                    parse_cube("!L2 & !R2 & Pusher", net.outputs()).unwrap(),
                ),
            ],
        )
        .unwrap()
    };
    let relabeled = restrict(&buggy_net);
    let relabeled_ihda = build_ihda(&relabeled, &Budget::default()).unwrap();
    let report = find_inconsistent(&relabeled, &relabeled_ihda).unwrap();
    assert!(!report.is_empty());
    assert_maximal_are_w_z(&relabeled, &report);
    assert_witnesses_replay(&relabeled, &relabeled_ihda, &report);

    let relabeled_fixed = restrict(&fixed_net);
    let rf_ihda = build_ihda(&relabeled_fixed, &Budget::default()).unwrap();
    assert!(find_inconsistent(&relabeled_fixed, &rf_ihda)
        .unwrap()
        .is_empty());

    println!(
        "criterion 4 (output-restriction detection): PASS — both routes flag exactly \
         w and z on the concurrent model, nothing on the sequentialized one"
    );
}

#[test]
fn criterion_5_corrected_model_structure() {
    let net = fixed();
    let ihda = build_ihda(&net, &Budget::default()).unwrap();
    assert_eq!(ihda.hda().dim(), 2);
    assert_eq!(ihda.hda().cells_of_dim(2).count(), 6);
    assert_eq!(ihda.hda().cells_of_dim(3).count(), 0);
    let squares: BTreeSet<Concset> = ihda
        .hda()
        .cells_of_dim(2)
        .map(|c| c.concset.clone())
        .collect();
    let expected: BTreeSet<Concset> = [
        ["t_B", "t_D"],
        ["t_C", "t_D"],
        ["t_B", "t_F"],
        ["t_C", "t_F"],
        ["t_B", "t_E"],
        ["t_C", "t_E"],
    ]
    .iter()
    .map(|ids| concset_of(&net, ids))
    .collect();
    assert_eq!(squares, expected);
    println!(
        "criterion 5 (corrected-model structure): PASS — dimension 2 with exactly six 2-cells"
    );
}

#[test]
fn criterion_6_closed_loop_cycle() {
    let net = fixed();
    // Staggered travel times keep every sensor event on its own cycle, so
    // the recorded word is checkable under both semantics.
    let (run, served) = closed_loop(
        &net,
        vec![],
        STAGGERED_PLANT,
        Scenario::press_start_at(3),
        200,
    );

    assert!(
        run.returned_to_initial,
        "marking must return to the initial one"
    );
    assert!(run.cycles <= 200, "took {} cycles", run.cycles);
    assert_eq!(run.final_marking, net.initial_marking());
    assert_eq!(
        served.final_state,
        PlantState::initial(&STAGGERED_PLANT),
        "plant must return to its initial configuration"
    );

    let word = trace::to_io_word(&net, &run.trace).unwrap();
    let ihda = build_ihda(&net, &Budget::default()).unwrap();
    assert!(
        conforms(&ihda, &word, CounterMode::Interpreted),
        "trace must conform to the concurrent-step semantics"
    );
    assert!(
        net.check_word_prefix(&word),
        "trace must be a compatible word prefix of the net"
    );
    println!(
        "criterion 6 (closed loop): PASS — full cycle in {} lock-step cycles, trace \
         accepted by conform and by the word-prefix check",
        run.cycles
    );
}

#[test]
fn criterion_7_cube_algebra_oracle() {
    let started = Instant::now();
    let mut rng = rng(0x0AC1E);
    let mut conj_cases = 0;
    let mut sat_cases = 0;
    let mut clause_cases = 0;
    for _ in 0..1000 {
        let ps = small_prop_set(rng.gen_range(1..=10));
        let vals = all_valuations(&ps);
        match rng.gen_range(0..3) {
            0 => {
                let a = random_cube(&mut rng, &ps, 0.4);
                let b = random_cube(&mut rng, &ps, 0.4);
                let c = a.conj(&b).unwrap();
                for v in &vals {
                    assert_eq!(eval_cube(&c, v), eval_cube(&a, v) && eval_cube(&b, v));
                }
                assert_eq!(
                    c.is_false(),
                    vals.iter().all(|v| !(eval_cube(&a, v) && eval_cube(&b, v)))
                );
                conj_cases += 1;
            }
            1 => {
                let c = random_cube(&mut rng, &ps, 0.4);
                let v = random_valuation(&mut rng, &ps);
                assert_eq!(v.satisfies(&c).unwrap(), eval_cube(&c, &v));
                sat_cases += 1;
            }
            _ => {
                let c = random_satisfiable_cube(&mut rng, &ps, 0.4);
                let cl = random_clause(&mut rng, &ps);
                let oracle = vals
                    .iter()
                    .all(|v| !(eval_cube(&c, v) && eval_clause(&cl, v)));
                assert_eq!(c.violates_clause(&cl).unwrap(), oracle);
                clause_cases += 1;
            }
        }
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 5.0, "took {elapsed:?}, limit 5 s");
    println!(
        "criterion 7 (cube algebra oracle): PASS — {conj_cases} conj / {sat_cases} satisfies / \
         {clause_cases} clause instances, zero mismatches, in {elapsed:?}"
    );
}

fn linearizations(c: &Concset) -> Vec<Vec<usize>> {
    fn rec(remaining: &mut Vec<(usize, u32)>, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if remaining.iter().all(|&(_, k)| k == 0) {
            out.push(prefix.clone());
            return;
        }
        for i in 0..remaining.len() {
            if remaining[i].1 == 0 {
                continue;
            }
            remaining[i].1 -= 1;
            prefix.push(remaining[i].0);
            rec(remaining, prefix, out);
            prefix.pop();
            remaining[i].1 += 1;
        }
    }
    let mut remaining: Vec<(usize, u32)> = c.support().collect();
    let mut out = Vec::new();
    rec(&mut remaining, &mut Vec::new(), &mut out);
    out
}

#[test]
fn criterion_8_step_linearizations() {
    let net = fixed();
    let mut steps_checked = 0;
    let mut concurrent_steps = 0;
    // The criterion-6 run plus the symmetric run, whose equal travel times
    // force genuinely concurrent steps.
    for config in [STAGGERED_PLANT, DEFAULT_PLANT] {
        let (run, _) = closed_loop(&net, vec![], config, Scenario::press_start_at(3), 200);
        assert!(run.returned_to_initial);
        let steps = trace::to_steps(&net, &run.trace).unwrap();
        let mut m = net.initial_marking();
        for (concset, recorded_after) in steps {
            let joint = net.fire_step(&m, &concset).unwrap();
            assert_eq!(
                joint, recorded_after,
                "trace marking must match the joint firing"
            );
            for lin in linearizations(&concset) {
                let mut seq = m.clone();
                for t in lin {
                    seq = net.fire(&seq, t).unwrap();
                }
                assert_eq!(seq, joint, "every linearization reaches the joint marking");
            }
            if concset.size() > 1 {
                concurrent_steps += 1;
            }
            steps_checked += 1;
            m = joint;
        }
    }
    assert!(
        concurrent_steps >= 2,
        "the symmetric run must select concurrent steps"
    );
    println!(
        "criterion 8 (diamond/linearization): PASS — {steps_checked} steps replayed, \
         {concurrent_steps} of them concurrent"
    );
}
