//! Shared test support: truth-table oracles for the cube algebra, random
//! model generators, and the in-process closed-loop harness.

#![allow(dead_code)]

use std::net::{TcpListener, TcpStream};
use std::sync::Arc;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use ihda::controller::{run_client, RunOptions, RunReport};
use ihda::cube::{Clause, Cube, PropSet, Valuation};
use ihda::plantsim::{serve, Plant, PlantConfig, Scenario, ServeOptions, ServeReport};
use ihda::Ipn;

/// Every valuation over the proposition set, by binary counting.
pub fn all_valuations(ps: &Arc<PropSet>) -> Vec<Valuation> {
    let n = ps.len();
    assert!(n <= 16, "oracle enumeration is exponential");
    (0..(1u32 << n))
        .map(|bits| {
            let v: Vec<bool> = (0..n).map(|i| bits & (1 << i) != 0).collect();
            Valuation::from_bits(ps, v).unwrap()
        })
        .collect()
}

/// Literal-by-literal cube evaluation, independent of `Valuation::satisfies`.
pub fn eval_cube(c: &Cube, v: &Valuation) -> bool {
    if c.is_false() {
        return false;
    }
    c.literals().all(|(i, pol)| v.get(i) == pol)
}

/// Clause evaluation: at least one literal holds.
pub fn eval_clause(cl: &Clause, v: &Valuation) -> bool {
    cl.literals().iter().any(|&(i, pol)| v.get(i) == pol)
}

/// Truth table of a cube over all valuations.
pub fn truth_table(c: &Cube, vals: &[Valuation]) -> Vec<bool> {
    vals.iter().map(|v| eval_cube(c, v)).collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn small_prop_set(n: usize) -> Arc<PropSet> {
    PropSet::new((0..n).map(|i| format!("p{i}"))).unwrap()
}

/// Random cube: each proposition mentioned with probability `density`,
/// occasionally the FALSE cube.
pub fn random_cube(rng: &mut ChaCha8Rng, ps: &Arc<PropSet>, density: f64) -> Cube {
    if rng.gen_bool(0.05) {
        return Cube::bottom(ps);
    }
    let mut cube = Cube::top(ps);
    for i in 0..ps.len() {
        if rng.gen_bool(density) {
            cube = cube.conj(&Cube::literal(ps, i, rng.gen_bool(0.5))).unwrap();
        }
    }
    cube
}

pub fn random_satisfiable_cube(rng: &mut ChaCha8Rng, ps: &Arc<PropSet>, density: f64) -> Cube {
    loop {
        let c = random_cube(rng, ps, density);
        if !c.is_false() {
            return c;
        }
    }
}

pub fn random_valuation(rng: &mut ChaCha8Rng, ps: &Arc<PropSet>) -> Valuation {
    let bits = (0..ps.len()).map(|_| rng.gen_bool(0.5)).collect();
    Valuation::from_bits(ps, bits).unwrap()
}

pub fn random_clause(rng: &mut ChaCha8Rng, ps: &Arc<PropSet>) -> Clause {
    loop {
        let mut lits = Vec::new();
        for i in 0..ps.len() {
            if rng.gen_bool(0.3) {
                lits.push((i, rng.gen_bool(0.5)));
            }
        }
        if lits.is_empty() {
            continue;
        }
        if let Ok(clause) = Clause::new(ps, &lits) {
            return clause;
        }
    }
}

/// Random structural net: up to `max_places` places and `max_transitions`
/// transitions, nonempty pre/post sets, a couple of marked places. Mostly
/// single-place arcs so tokens keep flowing, with occasional forks and
/// joins for concurrency. Labels are all trivial; these nets exercise
/// structure, not interpretation.
pub fn random_net(rng: &mut ChaCha8Rng, max_places: usize, max_transitions: usize) -> Ipn {
    let n_places = rng.gen_range(2..=max_places.max(2));
    let n_trans = rng.gen_range(1..=max_transitions);
    let marked: Vec<usize> = {
        let mut places: Vec<usize> = (0..n_places).collect();
        places.shuffle(rng);
        places.truncate(rng.gen_range(1..=2));
        places
    };
    let mut text = String::from("inputs: go\noutputs: X\nplaces:\n");
    for p in 0..n_places {
        let tokens = if marked.contains(&p) { " tokens 1" } else { "" };
        text.push_str(&format!("  s{p}{tokens}\n"));
    }
    text.push_str("transitions:\n");
    // Presets are drawn from places that can actually hold a token (marked
    // ones or posts of earlier transitions), so the nets tend to be live.
    let mut active: Vec<usize> = marked;
    for t in 0..n_trans {
        let pick = |rng: &mut ChaCha8Rng, pool: &[usize]| -> Vec<usize> {
            let count = if rng.gen_bool(0.75) {
                1
            } else {
                2.min(pool.len())
            };
            let mut places = pool.to_vec();
            places.shuffle(rng);
            places.truncate(count);
            places.sort_unstable();
            places.dedup();
            places
        };
        let all: Vec<usize> = (0..n_places).collect();
        let pre = pick(rng, &active);
        let post = pick(rng, &all);
        for &p in &post {
            if !active.contains(&p) {
                active.push(p);
            }
        }
        let fmt = |places: &[usize]| {
            places
                .iter()
                .map(|p| format!("s{p}"))
                .collect::<Vec<_>>()
                .join(" ")
        };
        text.push_str(&format!("  t{t} pre {} post {}\n", fmt(&pre), fmt(&post)));
    }
    Ipn::parse(&text).expect("generated text is well-formed")
}

pub const DEFAULT_PLANT: PlantConfig = PlantConfig {
    d1: 5,
    d2: 5,
    pusher_stroke: 2,
    load_dwell: 2,
    transfer_dwell: 2,
};

/// Plant geometry with staggered travel times, so in a correct model no two
/// sensors fire on the same cycle and every step is a single transition.
pub const STAGGERED_PLANT: PlantConfig = PlantConfig {
    d1: 5,
    d2: 7,
    pusher_stroke: 2,
    load_dwell: 2,
    transfer_dwell: 2,
};

/// Runs controller and plant over a loopback TCP connection in lock step.
pub fn closed_loop(
    ipn: &Ipn,
    invariants: Vec<Clause>,
    config: PlantConfig,
    scenario: Scenario,
    max_cycles: u64,
) -> (RunReport, ServeReport) {
    let listener = TcpListener::bind("127.0.0.1:0").expect("bind loopback");
    let addr = listener.local_addr().unwrap();
    std::thread::scope(|scope| {
        let server = scope.spawn(move || {
            let opts = ServeOptions {
                period_ms: 0,
                max_cycles: max_cycles + 10,
                accept_timeout_ms: 5_000,
            };
            serve(&listener, Plant::new(config), &scenario, &opts).expect("plant serves")
        });
        let stream = TcpStream::connect(addr).expect("connect loopback");
        let opts = RunOptions {
            max_cycles,
            stop_on_return: true,
        };
        let run = run_client(ipn, invariants, stream, &opts).expect("controller runs");
        let serve_report = server.join().expect("server thread");
        (run, serve_report)
    })
}
