//! Deterministic simulation of the transfer-cell plant: two chariots, a
//! loading dock, a pusher at the unloading dock and a central transfer dock,
//! served over a lock-step TCP line protocol. The plant is the server; each
//! cycle it sends the sensor valuation, waits for the actuator valuation and
//! advances one tick. Nothing moves between sending and receiving.

use std::collections::BTreeMap;
use std::io::{self, BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cube::{PropSet, Valuation};

pub const INPUT_NAMES: [&str; 8] = [
    "start", "l1", "r1", "l2", "r2", "press_R", "press_L", "press_T",
];
pub const OUTPUT_NAMES: [&str; 7] = ["R1", "L1", "L2", "R2", "Pusher", "Transfer", "Load"];

/// Geometry and dwell times, in ticks. Configuration, not constants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlantConfig {
    /// Upper chariot travel: 0 = transfer dock (l1), d1 = loading dock (r1).
    pub d1: u32,
    /// Lower chariot travel: 0 = unloading dock (l2), d2 = transfer dock (r2).
    pub d2: u32,
    /// Pusher stroke length.
    pub pusher_stroke: u32,
    /// Ticks of `Load` at the loading dock before the box is aboard.
    pub load_dwell: u32,
    /// Ticks of `Transfer` with both chariots docked before the box moves.
    pub transfer_dwell: u32,
}

impl Default for PlantConfig {
    fn default() -> Self {
        PlantConfig {
            d1: 5,
            d2: 5,
            pusher_stroke: 2,
            load_dwell: 2,
            transfer_dwell: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlantState {
    pub upper_pos: u32,
    pub lower_pos: u32,
    pub upper_loaded: bool,
    pub lower_loaded: bool,
    pub transfer_box_present: bool,
    pub pusher_ext: u32,
    pub load_timer: u32,
    pub transfer_timer: u32,
    pub start_latch: bool,
}

impl PlantState {
    /// Both chariots docked at the transfer side, a box waiting on the dock.
    pub fn initial(config: &PlantConfig) -> Self {
        PlantState {
            upper_pos: 0,
            lower_pos: config.d2,
            upper_loaded: false,
            lower_loaded: false,
            transfer_box_present: true,
            pusher_ext: 0,
            load_timer: config.load_dwell,
            transfer_timer: config.transfer_dwell,
            start_latch: false,
        }
    }
}

/// Scripted input overrides: (cycle, input name, value) triples. The plant is
/// otherwise fully deterministic, so a scenario pins down the whole run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Scenario {
    pub overrides: Vec<(u64, String, bool)>,
}

impl Scenario {
    pub fn press_start_at(cycle: u64) -> Self {
        Scenario {
            overrides: vec![(cycle, "start".to_string(), true)],
        }
    }

    pub fn validate(&self, inputs: &PropSet) -> Result<(), PlantError> {
        for (_, name, _) in &self.overrides {
            if inputs.index_of(name).is_none() {
                return Err(PlantError::UnknownInput(name.clone()));
            }
        }
        Ok(())
    }

    fn at(&self, cycle: u64) -> impl Iterator<Item = (&str, bool)> {
        self.overrides
            .iter()
            .filter(move |(c, _, _)| *c == cycle)
            .map(|(_, n, v)| (n.as_str(), *v))
    }
}

#[derive(Debug, Error)]
pub enum PlantError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("no controller connected within {0} ms")]
    AcceptTimeout(u64),
    #[error("scenario references unknown input `{0}`")]
    UnknownInput(String),
}

/// The plant bundles its configuration, current state and the fault raised
/// by the previous tick, plus the canonical sensor/actuator name sets.
#[derive(Debug, Clone)]
pub struct Plant {
    pub config: PlantConfig,
    pub state: PlantState,
    pub fault: Option<String>,
    inputs: Arc<PropSet>,
    outputs: Arc<PropSet>,
}

impl Plant {
    pub fn new(config: PlantConfig) -> Self {
        Plant {
            state: PlantState::initial(&config),
            config,
            fault: None,
            inputs: PropSet::new(INPUT_NAMES).expect("distinct names"),
            outputs: PropSet::new(OUTPUT_NAMES).expect("distinct names"),
        }
    }

    pub fn inputs(&self) -> &Arc<PropSet> {
        &self.inputs
    }

    pub fn outputs(&self) -> &Arc<PropSet> {
        &self.outputs
    }

    /// Current sensor valuation; a pure function of the plant state.
    pub fn sensors(&self) -> Valuation {
        sensors(&self.state, &self.config, &self.inputs)
    }

    /// Advances one tick under the given actuator valuation and returns the
    /// post-tick sensors. Faults (opposed movement commands) freeze the axis
    /// and are latched for the next cycle message.
    pub fn step(&mut self, o: &Valuation) -> Valuation {
        let (next, fault) = tick(&self.state, o, &self.config);
        self.state = next;
        self.fault = fault;
        self.sensors()
    }
}

pub fn sensors(s: &PlantState, config: &PlantConfig, inputs: &Arc<PropSet>) -> Valuation {
    let mut map = BTreeMap::new();
    map.insert("start".to_string(), s.start_latch);
    map.insert("l1".to_string(), s.upper_pos == 0);
    map.insert("r1".to_string(), s.upper_pos == config.d1);
    map.insert("l2".to_string(), s.lower_pos == 0);
    map.insert("r2".to_string(), s.lower_pos == config.d2);
    map.insert("press_R".to_string(), s.upper_loaded);
    // Release confirmation: the lower chariot sits at the unloading dock
    // with no box aboard any more.
    map.insert("press_L".to_string(), s.lower_pos == 0 && !s.lower_loaded);
    map.insert("press_T".to_string(), s.transfer_box_present);
    Valuation::from_map(inputs, &map).expect("all sensors assigned")
}

/// One tick of plant dynamics under an actuator valuation.
pub fn tick(s: &PlantState, o: &Valuation, config: &PlantConfig) -> (PlantState, Option<String>) {
    let get = |name: &str| o.get_named(name).unwrap_or(false);
    let mut next = s.clone();
    let mut faults: Vec<String> = Vec::new();

    match (get("R1"), get("L1")) {
        (true, true) => faults.push("upper axis commanded R1 and L1 at once".to_string()),
        (true, false) => next.upper_pos = (next.upper_pos + 1).min(config.d1),
        (false, true) => next.upper_pos = next.upper_pos.saturating_sub(1),
        (false, false) => {}
    }
    match (get("L2"), get("R2")) {
        (true, true) => faults.push("lower axis commanded L2 and R2 at once".to_string()),
        (true, false) => next.lower_pos = next.lower_pos.saturating_sub(1),
        (false, true) => next.lower_pos = (next.lower_pos + 1).min(config.d2),
        (false, false) => {}
    }

    if get("Pusher") {
        next.pusher_ext = (next.pusher_ext + 1).min(config.pusher_stroke);
    } else {
        next.pusher_ext = next.pusher_ext.saturating_sub(1);
    }
    // A full stroke at the unloading dock ejects the box.
    if next.pusher_ext == config.pusher_stroke && next.lower_pos == 0 && next.lower_loaded {
        next.lower_loaded = false;
    }

    // Loading dock: dwell while Load is held with the chariot docked.
    if next.upper_pos == config.d1 {
        if get("Load") && !next.upper_loaded {
            if next.load_timer > 0 {
                next.load_timer -= 1;
            }
            if next.load_timer == 0 {
                next.upper_loaded = true;
            }
        }
    } else {
        next.load_timer = config.load_dwell;
    }

    // Transfer dock: the waiting box moves onto the lower chariot.
    if get("Transfer")
        && next.transfer_box_present
        && next.upper_pos == 0
        && next.lower_pos == config.d2
        && !next.lower_loaded
    {
        if next.transfer_timer > 0 {
            next.transfer_timer -= 1;
        }
        if next.transfer_timer == 0 {
            next.transfer_box_present = false;
            next.lower_loaded = true;
        }
    }

    // The upper chariot deposits its box on the free dock when home.
    if next.upper_pos == 0 && next.upper_loaded && !next.transfer_box_present {
        next.upper_loaded = false;
        next.transfer_box_present = true;
        next.transfer_timer = config.transfer_dwell;
    }

    let fault = if faults.is_empty() {
        None
    } else {
        Some(faults.join("; "))
    };
    (next, fault)
}

/// Wire messages, newline-delimited JSON. The plant is the server and the
/// controller the client; either side may send `bye`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WireMsg {
    Hello {
        hello: HelloBody,
    },
    Ack {
        ack: bool,
    },
    Cycle {
        cycle: u64,
        inputs: BTreeMap<String, bool>,
        #[serde(skip_serializing_if = "Option::is_none")]
        fault: Option<String>,
    },
    Outputs {
        outputs: BTreeMap<String, bool>,
    },
    Bye {
        bye: String,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HelloBody {
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
}

pub fn send_msg(stream: &mut TcpStream, msg: &WireMsg) -> Result<(), PlantError> {
    let mut line = serde_json::to_string(msg).map_err(|e| PlantError::Protocol(e.to_string()))?;
    line.push('\n');
    stream.write_all(line.as_bytes())?;
    Ok(())
}

pub fn recv_msg(reader: &mut BufReader<TcpStream>) -> Result<Option<WireMsg>, PlantError> {
    let mut line = String::new();
    let n = reader.read_line(&mut line)?;
    if n == 0 {
        return Ok(None);
    }
    let msg = serde_json::from_str(&line)
        .map_err(|e| PlantError::Protocol(format!("malformed message: {e}")))?;
    Ok(Some(msg))
}

#[derive(Debug, Clone, Copy)]
pub struct ServeOptions {
    /// Pacing delay before each cycle; 0 runs lock-step as fast as possible.
    pub period_ms: u64,
    pub max_cycles: u64,
    pub accept_timeout_ms: u64,
}

impl Default for ServeOptions {
    fn default() -> Self {
        ServeOptions {
            period_ms: 0,
            max_cycles: 10_000,
            accept_timeout_ms: 10_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ServeReport {
    pub final_state: PlantState,
    pub cycles: u64,
    pub reason: String,
}

fn accept_with_timeout(listener: &TcpListener, timeout_ms: u64) -> Result<TcpStream, PlantError> {
    listener.set_nonblocking(true)?;
    let deadline = Instant::now() + Duration::from_millis(timeout_ms);
    loop {
        match listener.accept() {
            Ok((stream, _)) => {
                stream.set_nonblocking(false)?;
                listener.set_nonblocking(false)?;
                return Ok(stream);
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                if Instant::now() >= deadline {
                    return Err(PlantError::AcceptTimeout(timeout_ms));
                }
                std::thread::sleep(Duration::from_millis(5));
            }
            Err(e) => return Err(e.into()),
        }
    }
}

/// Receives a message, answering malformed input with a bye before failing.
fn recv_or_bye(
    stream: &mut TcpStream,
    reader: &mut BufReader<TcpStream>,
) -> Result<Option<WireMsg>, PlantError> {
    match recv_msg(reader) {
        Err(PlantError::Protocol(msg)) => {
            let _ = send_msg(
                stream,
                &WireMsg::Bye {
                    bye: format!("protocol error: {msg}"),
                },
            );
            Err(PlantError::Protocol(msg))
        }
        other => other,
    }
}

/// Accepts one controller connection and runs the lock-step loop until the
/// client says bye, the connection drops, or `max_cycles` is reached.
pub fn serve(
    listener: &TcpListener,
    mut plant: Plant,
    scenario: &Scenario,
    opts: &ServeOptions,
) -> Result<ServeReport, PlantError> {
    scenario.validate(plant.inputs())?;
    let mut stream = accept_with_timeout(listener, opts.accept_timeout_ms)?;
    let mut reader = BufReader::new(stream.try_clone()?);

    send_msg(
        &mut stream,
        &WireMsg::Hello {
            hello: HelloBody {
                inputs: plant.inputs().names().to_vec(),
                outputs: plant.outputs().names().to_vec(),
            },
        },
    )?;
    match recv_or_bye(&mut stream, &mut reader)? {
        Some(WireMsg::Ack { ack: true }) => {}
        Some(WireMsg::Bye { bye }) => {
            return Ok(ServeReport {
                final_state: plant.state.clone(),
                cycles: 0,
                reason: format!("client: {bye}"),
            })
        }
        other => {
            let err = format!("expected ack, got {other:?}");
            let _ = send_msg(&mut stream, &WireMsg::Bye { bye: err.clone() });
            return Err(PlantError::Protocol(err));
        }
    }

    for cycle in 0..opts.max_cycles {
        if opts.period_ms > 0 {
            std::thread::sleep(Duration::from_millis(opts.period_ms));
        }
        plant.state.start_latch = false;
        let mut sensor_map = plant.sensors().to_map();
        for (name, value) in scenario.at(cycle) {
            if name == "start" {
                plant.state.start_latch = value;
            }
            sensor_map.insert(name.to_string(), value);
        }
        send_msg(
            &mut stream,
            &WireMsg::Cycle {
                cycle,
                inputs: sensor_map,
                fault: plant.fault.clone(),
            },
        )?;

        let outputs = match recv_or_bye(&mut stream, &mut reader)? {
            Some(WireMsg::Outputs { outputs }) => outputs,
            Some(WireMsg::Bye { bye }) => {
                return Ok(ServeReport {
                    final_state: plant.state.clone(),
                    cycles: cycle,
                    reason: format!("client: {bye}"),
                })
            }
            Some(other) => {
                let err = format!("expected outputs, got {other:?}");
                let _ = send_msg(&mut stream, &WireMsg::Bye { bye: err.clone() });
                return Err(PlantError::Protocol(err));
            }
            None => {
                return Ok(ServeReport {
                    final_state: plant.state.clone(),
                    cycles: cycle,
                    reason: "connection dropped".to_string(),
                })
            }
        };
        let o = Valuation::from_map(plant.outputs(), &outputs).map_err(|e| {
            let err = format!("bad outputs: {e}");
            let _ = send_msg(&mut stream, &WireMsg::Bye { bye: err.clone() });
            PlantError::Protocol(err)
        })?;
        plant.step(&o);
    }

    let _ = send_msg(
        &mut stream,
        &WireMsg::Bye {
            bye: "cycle budget exhausted".to_string(),
        },
    );
    Ok(ServeReport {
        final_state: plant.state.clone(),
        cycles: opts.max_cycles,
        reason: "cycle budget exhausted".to_string(),
    })
}
