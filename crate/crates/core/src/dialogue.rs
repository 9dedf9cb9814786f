//! Three-mode interaction state machine. Inputs are intents, key presses,
//! fresh perception and execution outcomes; outputs are an ordered list of
//! robot lines, faults and action requests.

use std::collections::HashMap;
use std::sync::OnceLock;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::detector::{detection_center_point, detection_to_world_grasp, Detection, DetectorError};
use crate::geometry::{CameraIntrinsics, RigidTransform, WorldGrasp};
use crate::graspmap::{best_world_grasp_in, GraspError, GraspSynthParams};
use crate::nlu::{Intent, IntentKind};
use crate::scene::{DepthImage, ObjectClass};

/// Digits 0..=5 address detections; 6, 8 and 9 are commands.
pub const MAX_LISTED: usize = 6;

const PHRASE_SOURCE: &str = include_str!("../resources/phrases.txt");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhraseTable {
    pub version: u32,
    entries: HashMap<String, String>,
}

impl PhraseTable {
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut version = None;
        let mut entries = HashMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once(" = ")
                .ok_or_else(|| format!("line {}: expected `key = text`", n + 1))?;
            if k == "version" {
                version = Some(v.parse().map_err(|_| format!("line {}: bad version", n + 1))?);
            } else if entries.insert(k.to_string(), v.to_string()).is_some() {
                return Err(format!("line {}: duplicate key {k}", n + 1));
            }
        }
        Ok(Self {
            version: version.ok_or("missing version")?,
            entries,
        })
    }

    pub fn get(&self, key: &str) -> &str {
        self.entries
            .get(key)
            .unwrap_or_else(|| panic!("phrase {key} missing from table"))
    }

    pub fn render(&self, key: &str, args: &[(&str, &str)]) -> String {
        let mut s = self.get(key).to_string();
        for (name, value) in args {
            s = s.replace(&format!("{{{name}}}"), value);
        }
        s
    }
}

pub fn phrases() -> &'static PhraseTable {
    static TABLE: OnceLock<PhraseTable> = OnceLock::new();
    TABLE.get_or_init(|| PhraseTable::parse(PHRASE_SOURCE).expect("bundled phrase table parses"))
}

fn article(word: &str) -> &'static str {
    match word.chars().next() {
        Some('a' | 'e' | 'i' | 'o' | 'u') => "an",
        _ => "a",
    }
}

fn say(key: &str, args: &[(&str, &str)]) -> Output {
    Output::Say(RobotSay {
        text: phrases().render(key, args),
    })
}

fn say_label(key: &str, label: &str) -> Output {
    say(key, &[("a", article(label)), ("label", label)])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Mode1,
    #[serde(rename = "mode2a")]
    Mode2StyleA,
    #[serde(rename = "mode2b")]
    Mode2StyleB,
    Mode3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Greeting,
    AwaitRequest,
    Enumerating(usize),
    AwaitConfirm(usize),
    Announced,
    AwaitCommand,
    AwaitSecondPick(usize),
    Executing,
    Offering,
    Shutdown,
}

/// What to grasp again after an automatic re-detection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RetryTarget {
    Label(ObjectClass),
    Handover(ObjectClass),
    PickPlace(ObjectClass, ObjectClass),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueState {
    pub mode: Mode,
    pub phase: Phase,
    pub detections: Vec<Detection>,
    pub desired_color: Option<String>,
    pub pick_place_armed: bool,
    pub pending_retry: Option<RetryTarget>,
    pub shutting_down: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RobotSay {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ActionRequest {
    GraspAndHandover {
        grasp: WorldGrasp,
        label: ObjectClass,
    },
    PickPlace {
        grasp: WorldGrasp,
        place: [f64; 3],
        distance: f64,
        first: ObjectClass,
        second: ObjectClass,
    },
    Redetect,
    Shutdown,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fault {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Output {
    Say(RobotSay),
    Fault(Fault),
    Act(ActionRequest),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Reply {
    pub outputs: Vec<Output>,
}

impl Reply {
    fn push(&mut self, o: Output) {
        self.outputs.push(o);
    }

    pub fn says(&self) -> Vec<&str> {
        self.outputs
            .iter()
            .filter_map(|o| match o {
                Output::Say(s) => Some(s.text.as_str()),
                _ => None,
            })
            .collect()
    }

    pub fn actions(&self) -> Vec<&ActionRequest> {
        self.outputs
            .iter()
            .filter_map(|o| match o {
                Output::Act(a) => Some(a),
                _ => None,
            })
            .collect()
    }
}

/// Latest sensor data the dialogue grounds its requests in.
#[derive(Debug, Clone)]
pub struct Perception {
    pub detections: Vec<Detection>,
    pub depth: DepthImage,
    pub intrinsics: CameraIntrinsics,
    pub t_rc: RigidTransform,
    pub grasp_params: GraspSynthParams,
}

/// Result of running an executor plan, as seen by the dialogue.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecutionOutcome {
    pub success: bool,
    pub failure: Option<String>,
}

pub fn pick_place_distance(p1: &Vector3<f64>, p2: &Vector3<f64>) -> f64 {
    (p1 - p2).norm()
}

fn color_list(d: &Detection) -> String {
    d.color_names().join(", ")
}

fn fault_from_grasp(e: &GraspError) -> Fault {
    let code = match e {
        GraspError::NoGrasp => "NoGrasp",
        GraspError::DepthZero => "DepthZero",
        GraspError::DimensionMismatch => "DimensionMismatch",
        GraspError::Geometry(_) => "Geometry",
    };
    Fault {
        code: code.into(),
        message: e.to_string(),
    }
}

fn fault_from_detector(e: &DetectorError) -> Fault {
    let code = match e {
        DetectorError::DepthZero => "DepthZero",
        DetectorError::EmptyCrop => "EmptyCrop",
        DetectorError::InvalidClusterCount => "InvalidClusterCount",
        DetectorError::Scene(_) => "Scene",
        DetectorError::Geometry(_) => "Geometry",
    };
    Fault {
        code: code.into(),
        message: e.to_string(),
    }
}

fn not_found_fault(label: ObjectClass) -> Fault {
    Fault {
        code: "NoGrasp".into(),
        message: format!("no {label} detected"),
    }
}

pub fn start_session(mode: Mode) -> (DialogueState, Reply) {
    let mut reply = Reply::default();
    reply.push(say("greeting", &[]));
    let phase = match mode {
        Mode::Mode1 => Phase::AwaitRequest,
        Mode::Mode2StyleA => Phase::Greeting,
        Mode::Mode2StyleB | Mode::Mode3 => {
            reply.push(Output::Act(ActionRequest::Redetect));
            Phase::Greeting
        }
    };
    let state = DialogueState {
        mode,
        phase,
        detections: Vec::new(),
        desired_color: None,
        pick_place_armed: false,
        pending_retry: None,
        shutting_down: false,
    };
    (state, reply)
}

fn shutdown(state: &mut DialogueState, reply: &mut Reply) {
    reply.push(say("goodbye", &[]));
    reply.push(Output::Act(ActionRequest::Shutdown));
    state.phase = Phase::Shutdown;
    state.shutting_down = true;
    state.pick_place_armed = false;
    state.pending_retry = None;
}

fn listed(state: &DialogueState) -> usize {
    state.detections.len().min(MAX_LISTED)
}

fn announce(state: &mut DialogueState, reply: &mut Reply) {
    if state.detections.is_empty() {
        reply.push(say("no_objects", &[]));
    }
    for d in state.detections.iter().take(MAX_LISTED) {
        let label = d.label.as_str();
        let index = d.index.to_string();
        reply.push(say(
            "announce_item",
            &[("index", &index), ("a", article(label)), ("label", label), ("colors", &color_list(d))],
        ));
    }
    if state.detections.len() > MAX_LISTED {
        reply.push(say("and_more", &[]));
    }
    reply.push(say("which_object", &[]));
    if state.mode == Mode::Mode3 {
        reply.push(say("pick_place_hint", &[]));
    }
    state.phase = Phase::AwaitCommand;
}

/// Walks detections from `start` announcing each, stopping at the first one
/// carrying the desired color.
fn enumerate_from(state: &mut DialogueState, start: usize, reply: &mut Reply) {
    let Some(color) = state.desired_color.clone() else {
        state.phase = Phase::Greeting;
        return;
    };
    for i in start..state.detections.len() {
        state.phase = Phase::Enumerating(i);
        let d = &state.detections[i];
        let label = d.label.as_str();
        reply.push(say(
            "see_object",
            &[("a", article(label)), ("label", label), ("colors", &color_list(d))],
        ));
        if d.has_color(&color) {
            reply.push(say("ask_confirm", &[]));
            state.phase = Phase::AwaitConfirm(i);
            return;
        }
    }
    reply.push(say("no_color_match", &[("color", &color)]));
    state.desired_color = None;
    state.phase = Phase::Greeting;
}

fn label_grasp(label: ObjectClass, ctx: &Perception) -> Result<WorldGrasp, Fault> {
    let d = ctx
        .detections
        .iter()
        .find(|d| d.label == label)
        .ok_or_else(|| not_found_fault(label))?;
    best_world_grasp_in(
        &ctx.depth,
        &ctx.grasp_params,
        &ctx.intrinsics,
        &ctx.t_rc,
        Some(d.bbox.to_rect()),
    )
    .map_err(|e| fault_from_grasp(&e))
}

fn box_grasp(d: &Detection, ctx: &Perception) -> Result<WorldGrasp, Fault> {
    detection_to_world_grasp(d, &ctx.depth, &ctx.intrinsics, &ctx.t_rc, ctx.grasp_params.w_max)
        .map_err(|e| fault_from_detector(&e))
}

fn pick_place_request(first: &Detection, second: &Detection, ctx: &Perception) -> Result<ActionRequest, Fault> {
    let grasp = box_grasp(first, ctx)?;
    let place = detection_center_point(second, &ctx.depth, &ctx.intrinsics, &ctx.t_rc)
        .map_err(|e| fault_from_detector(&e))?;
    Ok(ActionRequest::PickPlace {
        grasp,
        place: [place.x, place.y, place.z],
        distance: pick_place_distance(&grasp.position(), &place),
        first: first.label,
        second: second.label,
    })
}

/// Emits the request, or on failure a fault plus one automatic re-detection.
fn request_or_retry(
    state: &mut DialogueState,
    reply: &mut Reply,
    result: Result<ActionRequest, Fault>,
    target: RetryTarget,
) {
    state.phase = Phase::Executing;
    match result {
        Ok(a) => reply.push(Output::Act(a)),
        Err(f) => {
            reply.push(Output::Fault(f));
            reply.push(Output::Act(ActionRequest::Redetect));
            state.pending_retry = Some(target);
        }
    }
}

fn handover_detection(state: &mut DialogueState, reply: &mut Reply, i: usize, ctx: &Perception) {
    let d = state.detections[i].clone();
    reply.push(say("will_grasp", &[]));
    let result = box_grasp(&d, ctx).map(|grasp| ActionRequest::GraspAndHandover { grasp, label: d.label });
    request_or_retry(state, reply, result, RetryTarget::Handover(d.label));
}

fn pick_place_pair(state: &mut DialogueState, reply: &mut Reply, first: usize, second: usize, ctx: &Perception) {
    let (a, b) = (state.detections[first].clone(), state.detections[second].clone());
    reply.push(say(
        "will_place",
        &[("first", a.label.as_str()), ("second", b.label.as_str())],
    ));
    let result = pick_place_request(&a, &b, ctx);
    request_or_retry(state, reply, result, RetryTarget::PickPlace(a.label, b.label));
}

/// Phase to fall back to when no request is in flight.
fn idle_phase(mode: Mode) -> Phase {
    match mode {
        Mode::Mode1 => Phase::AwaitRequest,
        Mode::Mode2StyleA => Phase::Greeting,
        Mode::Mode2StyleB | Mode::Mode3 => Phase::AwaitCommand,
    }
}

pub fn handle_utterance(state: &mut DialogueState, intent: &Intent, ctx: &Perception) -> Reply {
    let mut reply = Reply::default();
    if state.shutting_down {
        return reply;
    }
    if intent.kind == IntentKind::Quit {
        shutdown(state, &mut reply);
        return reply;
    }
    if state.phase == Phase::Executing {
        reply.push(say("busy", &[]));
        return reply;
    }
    state.detections = ctx.detections.clone();
    match (state.mode, state.phase, &intent.kind) {
        (Mode::Mode1, _, IntentKind::Retrieve(noun)) => match ObjectClass::parse(noun)
            .filter(|c| state.detections.iter().any(|d| d.label == *c))
        {
            Some(label) => {
                reply.push(say("will_grasp", &[]));
                let result = label_grasp(label, ctx).map(|grasp| ActionRequest::GraspAndHandover { grasp, label });
                request_or_retry(state, &mut reply, result, RetryTarget::Label(label));
            }
            None => {
                reply.push(say_label("not_found", noun));
                state.phase = Phase::AwaitRequest;
            }
        },
        (Mode::Mode1, _, _) => {
            reply.push(say("reprompt", &[]));
            state.phase = Phase::AwaitRequest;
        }

        (Mode::Mode2StyleA, Phase::AwaitConfirm(i), IntentKind::Affirm) => {
            if i < state.detections.len() {
                handover_detection(state, &mut reply, i, ctx);
            } else {
                enumerate_from(state, 0, &mut reply);
            }
        }
        (Mode::Mode2StyleA, Phase::AwaitConfirm(i), IntentKind::ColorRequest(c)) => {
            state.desired_color = Some(c.clone());
            let _ = i;
            enumerate_from(state, 0, &mut reply);
        }
        (Mode::Mode2StyleA, Phase::AwaitConfirm(i), _) => enumerate_from(state, i + 1, &mut reply),
        (Mode::Mode2StyleA, _, IntentKind::ColorRequest(c)) => {
            state.desired_color = Some(c.clone());
            enumerate_from(state, 0, &mut reply);
        }
        (Mode::Mode2StyleA, _, _) => {
            reply.push(say("reprompt", &[]));
            state.phase = Phase::Greeting;
        }

        (Mode::Mode2StyleB | Mode::Mode3, Phase::AwaitSecondPick(first), IntentKind::Retrieve(noun)) => {
            match state.detections.iter().take(MAX_LISTED).position(|d| d.label.as_str() == noun) {
                Some(second) if second != first => pick_place_pair(state, &mut reply, first, second, ctx),
                Some(_) => reply.push(say("same_object", &[])),
                None => reply.push(say_label("not_found", noun)),
            }
        }
        (Mode::Mode2StyleB | Mode::Mode3, Phase::AwaitSecondPick(first), _) => {
            let label = state.detections[first].label.as_str();
            reply.push(say_label("choose_place", label));
        }
        (Mode::Mode2StyleB | Mode::Mode3, _, IntentKind::Retrieve(noun)) => {
            match state.detections.iter().take(MAX_LISTED).position(|d| d.label.as_str() == noun) {
                Some(i) => select_index(state, &mut reply, i, ctx),
                None => reply.push(say_label("not_found", noun)),
            }
        }
        (Mode::Mode2StyleB | Mode::Mode3, _, IntentKind::ColorRequest(c)) => {
            match state.detections.iter().take(MAX_LISTED).position(|d| d.has_color(c)) {
                Some(i) => select_index(state, &mut reply, i, ctx),
                None => reply.push(say("no_color_match", &[("color", c)])),
            }
        }
        (Mode::Mode2StyleB | Mode::Mode3, _, _) => reply.push(say("reprompt", &[])),
    }
    reply
}

/// A chosen detection in AwaitCommand: handover, or first pick when armed.
fn select_index(state: &mut DialogueState, reply: &mut Reply, i: usize, ctx: &Perception) {
    if state.pick_place_armed {
        state.pick_place_armed = false;
        state.phase = Phase::AwaitSecondPick(i);
        reply.push(say_label("choose_place", state.detections[i].label.as_str()));
    } else {
        handover_detection(state, reply, i, ctx);
    }
}

pub fn handle_key(state: &mut DialogueState, key: u8, ctx: &Perception) -> Reply {
    let mut reply = Reply::default();
    if state.shutting_down {
        return reply;
    }
    if key == 9 {
        shutdown(state, &mut reply);
        return reply;
    }
    let key_str = key.to_string();
    let keyed_mode = matches!(state.mode, Mode::Mode2StyleB | Mode::Mode3);
    let keyed_phase = matches!(state.phase, Phase::AwaitCommand | Phase::AwaitSecondPick(_));
    if !keyed_mode || !keyed_phase {
        reply.push(say("key_unavailable", &[("key", &key_str)]));
        return reply;
    }
    match key {
        0..=5 => {
            let i = key as usize;
            if i >= listed(state) {
                reply.push(say("index_out_of_range", &[("index", &key_str)]));
                return reply;
            }
            match state.phase {
                Phase::AwaitSecondPick(first) if first == i => reply.push(say("same_object", &[])),
                Phase::AwaitSecondPick(first) => pick_place_pair(state, &mut reply, first, i, ctx),
                _ => select_index(state, &mut reply, i, ctx),
            }
        }
        6 => {
            state.pick_place_armed = false;
            state.phase = Phase::Announced;
            reply.push(say("look_again", &[]));
            reply.push(Output::Act(ActionRequest::Redetect));
        }
        8 if state.mode == Mode::Mode3 => {
            state.pick_place_armed = true;
            state.phase = Phase::AwaitCommand;
            reply.push(say("arm_pick_place", &[]));
        }
        _ => reply.push(say("key_unavailable", &[("key", &key_str)])),
    }
    reply
}

/// Called after every re-detection with the new perception.
pub fn on_perception(state: &mut DialogueState, ctx: &Perception) -> Reply {
    let mut reply = Reply::default();
    if state.shutting_down {
        return reply;
    }
    state.detections = ctx.detections.clone();
    if let Some(target) = state.pending_retry.take() {
        let result = match target {
            RetryTarget::Label(label) => {
                label_grasp(label, ctx).map(|grasp| ActionRequest::GraspAndHandover { grasp, label })
            }
            RetryTarget::Handover(label) => match ctx.detections.iter().find(|d| d.label == label) {
                Some(d) => box_grasp(d, ctx).map(|grasp| ActionRequest::GraspAndHandover { grasp, label }),
                None => Err(not_found_fault(label)),
            },
            RetryTarget::PickPlace(a, b) => {
                let first = ctx.detections.iter().find(|d| d.label == a);
                let second = ctx.detections.iter().find(|d| d.label == b && Some(*d) != first);
                match (first, second) {
                    (Some(x), Some(y)) => pick_place_request(x, y, ctx),
                    (None, _) => Err(not_found_fault(a)),
                    (_, None) => Err(not_found_fault(b)),
                }
            }
        };
        match result {
            Ok(a) => {
                state.phase = Phase::Executing;
                reply.push(Output::Act(a));
            }
            Err(f) => {
                reply.push(Output::Fault(f));
                reply.push(say("failure", &[]));
                resume_idle(state, &mut reply);
            }
        }
        return reply;
    }
    match (state.mode, state.phase) {
        (Mode::Mode2StyleB | Mode::Mode3, Phase::Greeting | Phase::Announced | Phase::Offering) => {
            announce(state, &mut reply)
        }
        (Mode::Mode2StyleA, Phase::Offering) => enumerate_from(state, 0, &mut reply),
        _ => {}
    }
    reply
}

/// After a failed attempt, returns to the mode's waiting phase. Keyed modes
/// re-announce what they currently see.
fn resume_idle(state: &mut DialogueState, reply: &mut Reply) {
    state.phase = idle_phase(state.mode);
    match state.mode {
        Mode::Mode2StyleB | Mode::Mode3 => announce(state, reply),
        Mode::Mode2StyleA => enumerate_from(state, 0, reply),
        Mode::Mode1 => {}
    }
}

pub fn on_execution(state: &mut DialogueState, outcome: &ExecutionOutcome, pick_place: bool) -> Reply {
    let mut reply = Reply::default();
    if state.shutting_down {
        return reply;
    }
    if !outcome.success {
        reply.push(Output::Fault(Fault {
            code: outcome.failure.clone().unwrap_or_else(|| "ExecutionFailed".into()),
            message: "grasp execution failed".into(),
        }));
        reply.push(say("failure", &[]));
    } else {
        match state.mode {
            Mode::Mode1 => reply.push(say("here_you_are", &[])),
            _ if pick_place => reply.push(say("placed", &[])),
            _ => reply.push(say("handed", &[])),
        }
    }
    state.phase = match state.mode {
        Mode::Mode1 => Phase::AwaitRequest,
        _ => Phase::Offering,
    };
    if state.mode != Mode::Mode1 || !outcome.success {
        reply.push(Output::Act(ActionRequest::Redetect));
    }
    reply
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::{detect, BBox, DetectorNoise, NamedColor};
    use crate::nlu::{parse_intent, Lexicons};
    use crate::scene::{render_depth, Pose2, Scene, SceneObject, SensorNoise, Shape, Table};
    use proptest::prelude::*;

    fn scene() -> Scene {
        let mut s = Scene::empty(Table::default());
        let mk = |id, class: ObjectClass, shape, dims, x, y, color| SceneObject {
            id,
            class_label: class,
            shape,
            dims,
            pose: Pose2 { x, y, yaw: 0.0 },
            color,
            container: class.is_container(),
            placed_in: None,
        };
        s.objects.push(mk(0, ObjectClass::Banana, Shape::Box, [0.10, 0.035, 0.03], 0.25, 0.06, [255, 215, 0]));
        s.objects.push(mk(1, ObjectClass::Bowl, Shape::Cylinder, [0.12, 0.12, 0.05], 0.38, -0.05, [30, 144, 255]));
        s.objects.push(mk(2, ObjectClass::Apple, Shape::Sphere, [0.05; 3], 0.22, -0.08, [220, 20, 60]));
        s
    }

    fn perception(s: &Scene) -> Perception {
        let cam = RigidTransform::top_down(0.3, 0.0, 0.5);
        let k = CameraIntrinsics::default();
        Perception {
            detections: detect(s, &cam, &k, &DetectorNoise::none()).unwrap(),
            depth: render_depth(s, &cam, &k, &SensorNoise::none()).unwrap(),
            intrinsics: k,
            t_rc: cam,
            grasp_params: GraspSynthParams::default(),
        }
    }

    fn utter(state: &mut DialogueState, text: &str, ctx: &Perception) -> Reply {
        handle_utterance(state, &parse_intent(text, &Lexicons::default()), ctx)
    }

    #[test]
    fn phrase_table_is_complete() {
        let t = phrases();
        assert_eq!(t.version, 1);
        assert_eq!(t.get("greeting"), "Hello, do you need some help?");
        assert_eq!(t.get("will_grasp"), "Ok, I will help you to grasp it!!");
        assert_eq!(t.get("here_you_are"), "Here you are. What else do you want to get?");
        assert_eq!(t.get("reprompt"), "Sorry, I did not catch that. What do you want to get?");
        assert_eq!(t.get("failure"), "I could not see it clearly. Let me adjust and try again.");
        assert!(t.get("which_object").contains("input the object number"));
        assert!(t.get("ask_confirm").contains("want to get this object"));
        assert!(PhraseTable::parse("greeting = hi").is_err());
    }

    #[test]
    fn mode1_retrieve_and_loop() {
        let s = scene();
        let ctx = perception(&s);
        let (mut st, r) = start_session(Mode::Mode1);
        assert_eq!(r.says(), vec!["Hello, do you need some help?"]);
        assert_eq!(st.phase, Phase::AwaitRequest);
        let r = utter(&mut st, "Take the banana", &ctx);
        assert_eq!(r.says(), vec!["Ok, I will help you to grasp it!!"]);
        let ActionRequest::GraspAndHandover { grasp, label } = r.actions()[0] else {
            panic!("expected handover");
        };
        assert_eq!(*label, ObjectClass::Banana);
        assert!((grasp.x - 0.25).abs() < 0.015 && (grasp.y - 0.06).abs() < 0.015);
        assert_eq!(st.phase, Phase::Executing);
        let r = on_execution(&mut st, &ExecutionOutcome { success: true, failure: None }, false);
        assert_eq!(r.says(), vec!["Here you are. What else do you want to get?"]);
        assert_eq!(st.phase, Phase::AwaitRequest);
        let r = utter(&mut st, "fly me to the moon", &ctx);
        assert_eq!(r.says(), vec!["Sorry, I did not catch that. What do you want to get?"]);
        let r = utter(&mut st, "Take the cup", &ctx);
        assert_eq!(r.says(), vec!["Sorry, I cannot find a cup. What do you want to get?"]);
        assert!(r.actions().is_empty());
    }

    #[test]
    fn mode1_zero_depth_retries_once() {
        let s = scene();
        let mut ctx = perception(&s);
        let banana = ctx.detections.iter().find(|d| d.label == ObjectClass::Banana).unwrap().bbox;
        let (cu, cv) = ((banana.u_min + banana.u_max) / 2, (banana.v_min + banana.v_max) / 2);
        for v in cv - 1..=cv + 1 {
            for u in cu - 1..=cu + 1 {
                ctx.depth.set(u, v, 0.0);
            }
        }
        let (mut st, _) = start_session(Mode::Mode1);
        let r = utter(&mut st, "Take the banana", &ctx);
        assert!(matches!(&r.outputs[1], Output::Fault(f) if f.code == "DepthZero"), "{:?}", r.outputs);
        assert_eq!(r.actions(), vec![&ActionRequest::Redetect]);
        let r = on_perception(&mut st, &ctx);
        assert!(matches!(&r.outputs[0], Output::Fault(f) if f.code == "DepthZero"));
        assert_eq!(r.says(), vec!["I could not see it clearly. Let me adjust and try again."]);
        assert!(r.actions().is_empty());
        assert_eq!(st.phase, Phase::AwaitRequest);
        assert!(st.pending_retry.is_none());
    }

    #[test]
    fn mode2a_color_enumeration() {
        let s = scene();
        let ctx = perception(&s);
        let (mut st, _) = start_session(Mode::Mode2StyleA);
        let r = utter(&mut st, "I want something red", &ctx);
        let says = r.says();
        assert!(says.last().unwrap().contains("want to get this object"));
        let Phase::AwaitConfirm(i) = st.phase else { panic!("{:?}", st.phase) };
        assert_eq!(st.detections[i].label, ObjectClass::Apple);
        assert!(says[..says.len() - 1].iter().all(|s| s.starts_with("I see ")));
        let r = utter(&mut st, "yes", &ctx);
        assert!(matches!(r.actions()[0], ActionRequest::GraspAndHandover { label: ObjectClass::Apple, .. }));
        let r = on_execution(&mut st, &ExecutionOutcome { success: true, failure: None }, false);
        assert_eq!(r.actions(), vec![&ActionRequest::Redetect]);
        // Enumeration restarts from the first detection.
        let r = on_perception(&mut st, &ctx);
        assert_eq!(r.says()[0], format!("I see {} {} with colors {}", article(st.detections[0].label.as_str()),
            st.detections[0].label, color_list(&st.detections[0])));
    }

    #[test]
    fn mode2a_deny_continues_then_exhausts() {
        let s = scene();
        let ctx = perception(&s);
        let (mut st, _) = start_session(Mode::Mode2StyleA);
        utter(&mut st, "something red", &ctx);
        let r = utter(&mut st, "no", &ctx);
        assert_eq!(r.says().last().unwrap(), &"I did not find anything red. Which color do you want?");
        assert_eq!(st.phase, Phase::Greeting);
    }

    #[test]
    fn mode2b_announce_and_keys() {
        let s = scene();
        let ctx = perception(&s);
        let (mut st, r) = start_session(Mode::Mode2StyleB);
        assert_eq!(r.actions(), vec![&ActionRequest::Redetect]);
        let r = on_perception(&mut st, &ctx);
        assert_eq!(r.says().len(), 4);
        assert!(r.says()[0].starts_with("0: "));
        assert_eq!(*r.says().last().unwrap(), phrases().get("which_object"));
        assert_eq!(st.phase, Phase::AwaitCommand);
        let r = handle_key(&mut st, 4, &ctx);
        assert_eq!(r.says(), vec!["There is no object 4. Please input the object number."]);
        assert_eq!(st.phase, Phase::AwaitCommand);
        let r = handle_key(&mut st, 8, &ctx);
        assert_eq!(r.says(), vec!["Key 8 is not available now."]);
        assert!(!st.pick_place_armed);
        let r = handle_key(&mut st, 1, &ctx);
        let ActionRequest::GraspAndHandover { label, .. } = r.actions()[0] else { panic!() };
        assert_eq!(*label, st.detections[1].label);
    }

    #[test]
    fn mode3_pick_place() {
        let s = scene();
        let ctx = perception(&s);
        let (mut st, _) = start_session(Mode::Mode3);
        let r = on_perception(&mut st, &ctx);
        assert_eq!(*r.says().last().unwrap(), phrases().get("pick_place_hint"));
        let bi = st.detections.iter().position(|d| d.label == ObjectClass::Banana).unwrap() as u8;
        let wi = st.detections.iter().position(|d| d.label == ObjectClass::Bowl).unwrap() as u8;
        handle_key(&mut st, 8, &ctx);
        assert!(st.pick_place_armed);
        handle_key(&mut st, bi, &ctx);
        assert_eq!(st.phase, Phase::AwaitSecondPick(bi as usize));
        let r = handle_key(&mut st, bi, &ctx);
        assert_eq!(r.says(), vec!["Please choose a different object."]);
        let r = handle_key(&mut st, wi, &ctx);
        assert_eq!(r.says(), vec!["Ok, I will put the banana into the bowl."]);
        let ActionRequest::PickPlace { grasp, place, distance, .. } = r.actions()[0] else { panic!() };
        let p = Vector3::from(*place);
        assert!((pick_place_distance(&grasp.position(), &p) - distance).abs() < 1e-12);
        assert!((p.x - 0.38).abs() < 0.01 && (p.y + 0.05).abs() < 0.01);
    }

    #[test]
    fn key_nine_shuts_down_everywhere() {
        let s = scene();
        let ctx = perception(&s);
        for mode in [Mode::Mode1, Mode::Mode2StyleA, Mode::Mode2StyleB, Mode::Mode3] {
            let (mut st, _) = start_session(mode);
            let r = handle_key(&mut st, 9, &ctx);
            assert_eq!(r.says(), vec!["Goodbye!"]);
            assert_eq!(r.actions(), vec![&ActionRequest::Shutdown]);
            assert!(handle_key(&mut st, 1, &ctx).outputs.is_empty());
            assert!(utter(&mut st, "take the banana", &ctx).outputs.is_empty());
            assert!(on_perception(&mut st, &ctx).outputs.is_empty());
        }
    }

    #[test]
    fn more_than_six_detections() {
        let ctx0 = perception(&scene());
        let dets: Vec<Detection> = (0..8)
            .map(|i| Detection {
                index: i,
                bbox: BBox { u_min: 0, v_min: 0, u_max: 3, v_max: 3 },
                label: ObjectClass::Cup,
                confidence: 1.0,
                colors: vec![NamedColor { name: "Blue".into(), fraction: 1.0 }],
            })
            .collect();
        let ctx = Perception { detections: dets, ..ctx0 };
        let (mut st, _) = start_session(Mode::Mode2StyleB);
        let r = on_perception(&mut st, &ctx);
        assert_eq!(r.says().len(), 8);
        assert_eq!(r.says()[6], "and more - press 6 to refresh");
    }

    #[test]
    fn distance_examples() {
        assert_eq!(pick_place_distance(&Vector3::zeros(), &Vector3::new(3.0, 4.0, 0.0)), 5.0);
        let p = Vector3::new(0.1, 0.2, 0.3);
        assert_eq!(pick_place_distance(&p, &p), 0.0);
    }

    #[derive(Debug, Clone)]
    enum Input {
        Text(usize),
        Key(u8),
        Perceive,
        Done(bool),
    }

    const TEXTS: [&str; 9] = [
        "take the banana", "give me the apple", "something red", "yes", "no", "blorp",
        "take the cup", "blue please", "get the bowl",
    ];

    proptest! {
        #[test]
        fn fuzzed_inputs_never_panic(mode in 0..4usize, inputs in prop::collection::vec(
            prop_oneof![
                (0..TEXTS.len()).prop_map(Input::Text),
                (0..9u8).prop_map(Input::Key),
                Just(Input::Perceive),
                any::<bool>().prop_map(Input::Done),
            ], 0..30)) {
            let s = scene();
            let ctx = perception(&s);
            let mode = [Mode::Mode1, Mode::Mode2StyleA, Mode::Mode2StyleB, Mode::Mode3][mode];
            let (mut st, _) = start_session(mode);
            for input in inputs {
                let r = match input {
                    Input::Text(i) => utter(&mut st, TEXTS[i], &ctx),
                    Input::Key(k) => handle_key(&mut st, k, &ctx),
                    Input::Perceive => on_perception(&mut st, &ctx),
                    Input::Done(ok) => {
                        if st.phase != Phase::Executing { continue; }
                        on_execution(&mut st, &ExecutionOutcome { success: ok, failure: (!ok).then(|| "MissedObject".into()) }, false)
                    }
                };
                match st.phase {
                    Phase::AwaitConfirm(i) | Phase::AwaitSecondPick(i) => prop_assert!(i < st.detections.len()),
                    _ => {}
                }
                if st.shutting_down {
                    prop_assert_eq!(st.phase, Phase::Shutdown);
                }
                for a in r.actions() {
                    if let ActionRequest::PickPlace { grasp, place, .. } = a {
                        prop_assert!((grasp.position() - Vector3::from(*place)).norm() > 0.0);
                    }
                }
            }
        }
    }
}
