//! Session hosting: the event-producing session loop, scripted transcript
//! replay, a WebSocket server and PPM/PGM snapshots.

use std::fmt::Write as _;
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::{Path, PathBuf};

use nalgebra::{Rotation3, Vector3};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;
use tungstenite::Message;

use crate::derive_seed;
use crate::detector::{detect_in_frame, Detection, DetectorConfig, DetectorNoise};
use crate::dialogue::{
    self, ActionRequest, DialogueState, ExecutionOutcome, Mode, Output, Perception, Reply,
};
use crate::executor::{
    execute, plan_grasp_handover, plan_pick_place, ArmState, ExecutorConfig, ToolPose,
};
use crate::geometry::{default_hand_eye, CameraIntrinsics, RigidTransform, WorldGrasp};
use crate::graspmap::GraspSynthParams;
use crate::nlu::{parse_intent, Lexicons};
use crate::scene::{
    apply_sensor_noise, load_scene, raycast, render_depth, render_rgb, rgb_from_frame, DepthImage,
    PixelRect, RgbImage, Scene, SceneError, SceneObject, SensorNoise,
};

const SENSOR_STREAM: u64 = 1;
const DETECTOR_STREAM: u64 = 2;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("script line {line}: {message}")]
    Script { line: usize, message: String },
    #[error("cannot bind: {0}")]
    Bind(String),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorNoiseConfig {
    pub dropout_p: f64,
    pub jitter_sigma: f64,
    pub dropout_region: Option<PixelRect>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorNoiseConfig {
    pub jitter_sigma: f64,
    pub miss_p: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub sensor: SensorNoiseConfig,
    pub detector: DetectorNoiseConfig,
}

/// Observation pose of the wrist camera. `x`/`y` default to the table center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraConfig {
    pub x: Option<f64>,
    pub y: Option<f64>,
    pub height: f64,
    pub tilt_deg: f64,
    pub intrinsics: CameraIntrinsics,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            x: None,
            y: None,
            height: 0.5,
            tilt_deg: 0.0,
            intrinsics: CameraIntrinsics::default(),
        }
    }
}

impl CameraConfig {
    pub fn pose(&self, scene: &Scene) -> RigidTransform {
        let (cx, cy) = scene.table.center();
        let base = RigidTransform::top_down(self.x.unwrap_or(cx), self.y.unwrap_or(cy), self.height);
        let tilt = Rotation3::from_axis_angle(&Vector3::x_axis(), self.tilt_deg.to_radians());
        base.compose(&RigidTransform::from_rotation(tilt))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionConfig {
    pub mode: Mode,
    pub scene: Scene,
    pub seed: u64,
    pub noise: NoiseConfig,
    pub camera: CameraConfig,
    pub lexicon: Lexicons,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    mode: Mode,
    scene: Value,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    noise: NoiseConfig,
    #[serde(default)]
    camera: CameraConfig,
    #[serde(default)]
    lexicon: Option<Value>,
}

impl SessionConfig {
    pub fn from_json(text: &str) -> Result<Self, ServiceError> {
        let v: Value = serde_json::from_str(text).map_err(|e| ServiceError::Config(e.to_string()))?;
        Self::from_value(v)
    }

    pub fn from_value(v: Value) -> Result<Self, ServiceError> {
        let raw: RawConfig = serde_json::from_value(v).map_err(|e| ServiceError::Config(e.to_string()))?;
        let scene = load_scene(&raw.scene.to_string())?;
        let lexicon = match raw.lexicon {
            Some(l) => Lexicons::from_json(&l.to_string()).map_err(|e| ServiceError::Config(e.to_string()))?,
            None => Lexicons::default(),
        };
        let cfg = Self {
            mode: raw.mode,
            scene,
            seed: raw.seed,
            noise: raw.noise,
            camera: raw.camera,
            lexicon,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ServiceError> {
        self.sensor_noise(0).validate()?;
        let d = &self.noise.detector;
        if !(0.0..=1.0).contains(&d.miss_p) || !(d.jitter_sigma >= 0.0 && d.jitter_sigma.is_finite()) {
            return Err(ServiceError::Config("detector noise out of range".into()));
        }
        self.camera
            .intrinsics
            .validate()
            .map_err(|e| ServiceError::Config(e.to_string()))?;
        raycast(&self.scene, &self.camera.pose(&self.scene), &self.camera.intrinsics)?;
        Ok(())
    }

    fn sensor_noise(&self, frame: u64) -> SensorNoise {
        SensorNoise {
            dropout_p: self.noise.sensor.dropout_p,
            jitter_sigma: self.noise.sensor.jitter_sigma,
            seed: derive_seed(self.seed, SENSOR_STREAM, frame),
            dropout_region: self.noise.sensor.dropout_region,
        }
    }

    fn detector_noise(&self, frame: u64) -> DetectorNoise {
        DetectorNoise {
            jitter_sigma: self.noise.detector.jitter_sigma,
            miss_p: self.noise.detector.miss_p,
            seed: derive_seed(self.seed, DETECTOR_STREAM, frame),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    RobotSay,
    UserUtterance,
    KeyPress,
    Detections,
    GraspChosen,
    WaypointDone,
    SceneState,
    Error,
    SessionEnd,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::RobotSay => "RobotSay",
            EventKind::UserUtterance => "UserUtterance",
            EventKind::KeyPress => "KeyPress",
            EventKind::Detections => "Detections",
            EventKind::GraspChosen => "GraspChosen",
            EventKind::WaypointDone => "WaypointDone",
            EventKind::SceneState => "SceneState",
            EventKind::Error => "Error",
            EventKind::SessionEnd => "SessionEnd",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub seq: u64,
    pub tick: u64,
    pub kind: EventKind,
    pub payload: Value,
}

impl SessionEvent {
    /// Canonical transcript line. Payload keys are sorted.
    pub fn transcript_line(&self) -> String {
        format!("{}|{}|{}", self.seq, self.kind.as_str(), self.payload)
    }
}

/// Rounds to 0.1 mm / 0.1 mrad so transcripts do not depend on last-bit noise.
fn r4(x: f64) -> f64 {
    let r = (x * 1e4).round() / 1e4;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

fn grasp_json(g: &WorldGrasp) -> Value {
    json!({"x": r4(g.x), "y": r4(g.y), "z": r4(g.z), "phi": r4(g.phi), "w": r4(g.w), "q": r4(g.q)})
}

fn pose_json(p: &ToolPose) -> Value {
    json!({"x": r4(p.x), "y": r4(p.y), "z": r4(p.z), "yaw": r4(p.yaw)})
}

fn detections_json(frame: u64, dets: &[Detection]) -> Value {
    let items: Vec<Value> = dets
        .iter()
        .map(|d| {
            json!({
                "index": d.index,
                "label": d.label.as_str(),
                "bbox": [d.bbox.u_min, d.bbox.v_min, d.bbox.u_max, d.bbox.v_max],
                "confidence": r4(d.confidence),
                "colors": d.colors.iter().map(|c| json!({"name": c.name, "fraction": r4(c.fraction)})).collect::<Vec<_>>(),
            })
        })
        .collect();
    json!({"frame": frame, "items": items})
}

fn scene_state_json(scene: &Scene, arm: &ArmState, handed_over: &[SceneObject], success: bool, reason: Option<&str>) -> Value {
    let objects: Vec<Value> = scene
        .objects
        .iter()
        .map(|o| json!({"id": o.id, "class": o.class_label.as_str(), "x": r4(o.pose.x), "y": r4(o.pose.y), "placed_in": o.placed_in}))
        .collect();
    json!({
        "success": success,
        "failure_reason": reason,
        "objects": objects,
        "handed_over": handed_over.iter().map(|o| o.id).collect::<Vec<_>>(),
        "at_home": arm.at_home,
        "holding": arm.holding,
    })
}

/// One interactive session. Every public call returns the events it produced.
pub struct Session {
    config: SessionConfig,
    scene: Scene,
    arm: ArmState,
    exec_cfg: ExecutorConfig,
    t_rc: RigidTransform,
    grasp_params: GraspSynthParams,
    dialogue: DialogueState,
    perception: Option<Perception>,
    stale: bool,
    frame: u64,
    seq: u64,
    tick: u64,
    handed_over: Vec<SceneObject>,
    started: bool,
    ended: bool,
}

impl Session {
    pub fn new(config: SessionConfig) -> Result<Self, ServiceError> {
        Self::with_first_seq(config, 0)
    }

    /// Starts numbering events at `first_seq`.
    pub fn with_first_seq(config: SessionConfig, first_seq: u64) -> Result<Self, ServiceError> {
        config.validate()?;
        let t_rc = config.camera.pose(&config.scene);
        let tool = t_rc.compose(&default_hand_eye().inverse());
        let home = ToolPose {
            x: tool.translation().x,
            y: tool.translation().y,
            z: tool.translation().z,
            yaw: 0.0,
        };
        let exec_cfg = ExecutorConfig::for_table(&config.scene.table, home);
        let k = config.camera.intrinsics;
        let grasp_params = GraspSynthParams {
            table_depth: config.camera.height / config.camera.tilt_deg.to_radians().cos(),
            focal_px: k.fx,
            w_max: exec_cfg.w_max,
            ..GraspSynthParams::default()
        };
        let (dialogue, _) = dialogue::start_session(config.mode);
        Ok(Self {
            scene: config.scene.clone(),
            arm: ArmState::at_home(&exec_cfg),
            exec_cfg,
            t_rc,
            grasp_params,
            dialogue,
            perception: None,
            stale: true,
            frame: 0,
            seq: first_seq,
            tick: 0,
            handed_over: Vec::new(),
            started: false,
            ended: false,
            config,
        })
    }

    pub fn scene(&self) -> &Scene {
        &self.scene
    }

    pub fn arm(&self) -> &ArmState {
        &self.arm
    }

    pub fn dialogue(&self) -> &DialogueState {
        &self.dialogue
    }

    pub fn is_ended(&self) -> bool {
        self.ended
    }

    pub fn next_seq(&self) -> u64 {
        self.seq
    }

    fn emit(&mut self, out: &mut Vec<SessionEvent>, kind: EventKind, payload: Value) {
        out.push(SessionEvent {
            seq: self.seq,
            tick: self.tick,
            kind,
            payload,
        });
        self.seq += 1;
    }

    pub fn error_event(&mut self, code: &str, message: &str) -> Vec<SessionEvent> {
        let mut out = Vec::new();
        self.emit(&mut out, EventKind::Error, json!({"code": code, "message": message}));
        out
    }

    pub fn start(&mut self) -> Vec<SessionEvent> {
        let mut out = Vec::new();
        if self.started || self.ended {
            return out;
        }
        self.started = true;
        let (state, reply) = dialogue::start_session(self.config.mode);
        self.dialogue = state;
        self.process(reply, &mut out);
        out
    }

    pub fn utterance(&mut self, text: &str) -> Vec<SessionEvent> {
        let mut out = Vec::new();
        if self.ended {
            return out;
        }
        self.tick += 1;
        let intent = parse_intent(text, &self.config.lexicon);
        self.emit(&mut out, EventKind::UserUtterance, json!({"text": text, "intent": intent.kind}));
        self.refresh_if_stale(&mut out);
        let ctx = self.perception.clone().expect("perception refreshed");
        let reply = dialogue::handle_utterance(&mut self.dialogue, &intent, &ctx);
        self.process(reply, &mut out);
        out
    }

    pub fn key(&mut self, key: u8) -> Vec<SessionEvent> {
        let mut out = Vec::new();
        if self.ended {
            return out;
        }
        self.tick += 1;
        self.emit(&mut out, EventKind::KeyPress, json!({"key": key}));
        if key > 9 {
            self.emit(&mut out, EventKind::Error, json!({"code": "BadKey", "message": "keys are single digits"}));
            return out;
        }
        self.refresh_if_stale(&mut out);
        let ctx = self.perception.clone().expect("perception refreshed");
        let reply = dialogue::handle_key(&mut self.dialogue, key, &ctx);
        self.process(reply, &mut out);
        out
    }

    pub fn end(&mut self, reason: &str) -> Vec<SessionEvent> {
        let mut out = Vec::new();
        if !self.ended {
            self.ended = true;
            self.emit(&mut out, EventKind::SessionEnd, json!({"reason": reason}));
        }
        out
    }

    fn refresh_if_stale(&mut self, out: &mut Vec<SessionEvent>) {
        if self.stale || self.perception.is_none() {
            self.perceive(out);
        }
    }

    fn perceive(&mut self, out: &mut Vec<SessionEvent>) {
        self.frame += 1;
        let k = self.config.camera.intrinsics;
        let frame = raycast(&self.scene, &self.t_rc, &k).expect("camera validated above table");
        let mut depth = DepthImage::new(frame.width, frame.height, frame.depth.clone());
        apply_sensor_noise(&mut depth, &self.config.sensor_noise(self.frame));
        let rgb = rgb_from_frame(&self.scene, &frame);
        let cfg = DetectorConfig {
            noise: self.config.detector_noise(self.frame),
            ..DetectorConfig::default()
        };
        let detections = detect_in_frame(&self.scene, &frame, &rgb, &self.t_rc, &k, &cfg);
        self.emit(out, EventKind::Detections, detections_json(self.frame, &detections));
        self.perception = Some(Perception {
            detections,
            depth,
            intrinsics: k,
            t_rc: self.t_rc,
            grasp_params: self.grasp_params,
        });
        self.stale = false;
    }

    fn process(&mut self, reply: Reply, out: &mut Vec<SessionEvent>) {
        for o in reply.outputs {
            if self.ended {
                return;
            }
            match o {
                Output::Say(s) => self.emit(out, EventKind::RobotSay, json!({"text": s.text})),
                Output::Fault(f) => self.emit(out, EventKind::Error, json!({"code": f.code, "message": f.message})),
                Output::Act(ActionRequest::Shutdown) => {
                    self.ended = true;
                    self.emit(out, EventKind::SessionEnd, json!({"reason": "shutdown"}));
                }
                Output::Act(ActionRequest::Redetect) => {
                    self.perceive(out);
                    let ctx = self.perception.clone().expect("just perceived");
                    let next = dialogue::on_perception(&mut self.dialogue, &ctx);
                    self.process(next, out);
                }
                Output::Act(ActionRequest::GraspAndHandover { grasp, label }) => {
                    self.emit(
                        out,
                        EventKind::GraspChosen,
                        json!({"action": "handover", "label": label.as_str(), "grasp": grasp_json(&grasp)}),
                    );
                    let plan = plan_grasp_handover(&grasp, &self.exec_cfg);
                    let next = self.run_plan(plan, false, out);
                    self.process(next, out);
                }
                Output::Act(ActionRequest::PickPlace { grasp, place, distance, first, second }) => {
                    self.emit(
                        out,
                        EventKind::GraspChosen,
                        json!({
                            "action": "pick_place",
                            "label": first.as_str(),
                            "target": second.as_str(),
                            "grasp": grasp_json(&grasp),
                            "place": [r4(place[0]), r4(place[1]), r4(place[2])],
                            "distance": r4(distance),
                        }),
                    );
                    let plan = plan_pick_place(&grasp, &Vector3::from(place), &self.exec_cfg);
                    let next = self.run_plan(plan, true, out);
                    self.process(next, out);
                }
            }
        }
    }

    fn run_plan(
        &mut self,
        plan: Result<crate::executor::MotionPlan, crate::executor::PlanError>,
        pick_place: bool,
        out: &mut Vec<SessionEvent>,
    ) -> Reply {
        let outcome = match plan {
            Err(e) => ExecutionOutcome {
                success: false,
                failure: Some(format!("{e:?}").split('(').next().unwrap_or("PlanError").to_string()),
            },
            Ok(plan) => {
                let report = execute(&plan, &self.scene, &self.arm, &self.exec_cfg);
                for ev in &report.events {
                    self.tick += 1;
                    self.emit(
                        out,
                        EventKind::WaypointDone,
                        json!({
                            "label": format!("{:?}", ev.label),
                            "pose": pose_json(&ev.pose),
                            "gripper_width": r4(ev.gripper_width),
                            "holding": ev.holding,
                        }),
                    );
                }
                self.scene = report.scene;
                self.arm = report.arm;
                self.handed_over.extend(report.handed_over);
                self.stale = true;
                let reason = report.failure_reason.map(|r| format!("{r:?}"));
                let state = scene_state_json(&self.scene, &self.arm, &self.handed_over, report.success, reason.as_deref());
                self.emit(out, EventKind::SceneState, state);
                ExecutionOutcome {
                    success: report.success,
                    failure: reason,
                }
            }
        };
        dialogue::on_execution(&mut self.dialogue, &outcome, pick_place)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScriptInput {
    Say(String),
    Key(u8),
}

/// Script lines: `say <text>`, `key <digit>`, blank lines and `#` comments.
pub fn parse_script(text: &str) -> Result<Vec<ScriptInput>, ServiceError> {
    let mut inputs = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: &str| ServiceError::Script {
            line: n + 1,
            message: message.to_string(),
        };
        let (cmd, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
        let rest = rest.trim();
        match cmd {
            "say" if !rest.is_empty() => inputs.push(ScriptInput::Say(rest.to_string())),
            "say" => return Err(err("say needs text")),
            "key" => match rest.parse::<u8>() {
                Ok(k) if k <= 9 && rest.len() == 1 => inputs.push(ScriptInput::Key(k)),
                _ => return Err(err("key needs a single digit")),
            },
            _ => return Err(err("expected `say` or `key`")),
        }
    }
    Ok(inputs)
}

/// Runs a full session over `inputs`, returning all events and the final scene.
pub fn run_session(config: &SessionConfig, inputs: &[ScriptInput]) -> Result<(Vec<SessionEvent>, Scene), ServiceError> {
    let mut s = Session::new(config.clone())?;
    let mut events = s.start();
    for input in inputs {
        if s.is_ended() {
            break;
        }
        events.extend(match input {
            ScriptInput::Say(t) => s.utterance(t),
            ScriptInput::Key(k) => s.key(*k),
        });
    }
    events.extend(s.end("script_end"));
    Ok((events, s.scene.clone()))
}

pub fn format_transcript(events: &[SessionEvent]) -> String {
    let mut s = String::new();
    for e in events {
        let _ = writeln!(s, "{}", e.transcript_line());
    }
    s
}

pub fn run_transcript(config: &SessionConfig, script: &str) -> Result<String, ServiceError> {
    let inputs = parse_script(script)?;
    let (events, _) = run_session(config, &inputs)?;
    Ok(format_transcript(&events))
}

#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Inbound {
    CreateSession { config: Value },
    Utterance { text: String },
    Key { key: u8 },
    End,
}

/// Per-connection protocol state.
#[derive(Default)]
pub struct Channel {
    session: Option<Session>,
    seq: u64,
}

impl Channel {
    fn error(&mut self, code: &str, message: &str) -> Vec<SessionEvent> {
        if let Some(s) = self.session.as_mut() {
            return s.error_event(code, message);
        }
        let e = SessionEvent {
            seq: self.seq,
            tick: 0,
            kind: EventKind::Error,
            payload: json!({"code": code, "message": message}),
        };
        self.seq += 1;
        vec![e]
    }

    pub fn is_ended(&self) -> bool {
        self.session.as_ref().is_some_and(Session::is_ended)
    }

    /// Handles one inbound text message.
    pub fn handle(&mut self, text: &str) -> Vec<SessionEvent> {
        let msg: Inbound = match serde_json::from_str(text) {
            Ok(m) => m,
            Err(e) => return self.error("BadMessage", &e.to_string()),
        };
        match (msg, self.session.as_mut()) {
            (Inbound::CreateSession { config }, None) => {
                match SessionConfig::from_value(config).and_then(|c| Session::with_first_seq(c, self.seq)) {
                    Ok(mut s) => {
                        let events = s.start();
                        self.session = Some(s);
                        events
                    }
                    Err(e) => self.error("BadConfig", &e.to_string()),
                }
            }
            (Inbound::CreateSession { .. }, Some(_)) => self.error("SessionExists", "session already created"),
            (_, None) => self.error("NoSession", "create_session first"),
            (Inbound::Utterance { text }, Some(s)) => s.utterance(&text),
            (Inbound::Key { key }, Some(s)) => s.key(key),
            (Inbound::End, Some(s)) => s.end("client_end"),
        }
    }
}

fn handle_connection(stream: TcpStream) {
    let Ok(mut ws) = tungstenite::accept(stream) else {
        return;
    };
    let mut channel = Channel::default();
    loop {
        let events = match ws.read() {
            Ok(Message::Text(t)) => channel.handle(&t),
            Ok(Message::Binary(_)) => channel.error("BadMessage", "binary frames are not supported"),
            Ok(Message::Close(_)) | Err(_) => return,
            Ok(_) => continue,
        };
        for e in events {
            let text = serde_json::to_string(&e).expect("event serializes");
            if ws.send(Message::Text(text)).is_err() {
                return;
            }
        }
        if channel.is_ended() {
            let _ = ws.close(None);
            let _ = ws.flush();
            while ws.read().is_ok() {}
            return;
        }
    }
}

pub struct Server {
    listener: TcpListener,
}

impl Server {
    pub fn bind(addr: impl ToSocketAddrs) -> Result<Self, ServiceError> {
        let listener = TcpListener::bind(addr).map_err(|e| ServiceError::Bind(e.to_string()))?;
        Ok(Self { listener })
    }

    pub fn local_addr(&self) -> Result<SocketAddr, ServiceError> {
        Ok(self.listener.local_addr()?)
    }

    /// Accepts connections forever, one thread per channel.
    pub fn run(self) -> Result<(), ServiceError> {
        for stream in self.listener.incoming() {
            let stream = stream?;
            std::thread::spawn(move || handle_connection(stream));
        }
        Ok(())
    }
}

pub fn serve(addr: impl ToSocketAddrs) -> Result<(), ServiceError> {
    Server::bind(addr)?.run()
}

pub fn ppm_string(img: &RgbImage) -> String {
    let mut s = format!("P3\n{} {}\n255\n", img.width, img.height);
    for row in img.pixels.chunks(img.width as usize) {
        let line: Vec<String> = row.iter().map(|p| format!("{} {} {}", p[0], p[1], p[2])).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s
}

/// Depth in whole millimeters, saturating at 65535.
pub fn pgm_string(depth: &DepthImage) -> String {
    let mut s = format!("P2\n{} {}\n65535\n", depth.width, depth.height);
    for row in depth.values.chunks(depth.width as usize) {
        let line: Vec<String> = row
            .iter()
            .map(|d| ((d * 1000.0).round().clamp(0.0, 65535.0) as u32).to_string())
            .collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s
}

/// Writes `<prefix>.ppm` and `<prefix>.pgm` from a noiseless render.
pub fn snapshot(
    scene: &Scene,
    cam: &RigidTransform,
    k: &CameraIntrinsics,
    prefix: &Path,
) -> Result<(PathBuf, PathBuf), ServiceError> {
    let rgb = render_rgb(scene, cam, k)?;
    let depth = render_depth(scene, cam, k, &SensorNoise::none())?;
    let ppm = prefix.with_extension("ppm");
    let pgm = prefix.with_extension("pgm");
    std::fs::write(&ppm, ppm_string(&rgb))?;
    std::fs::write(&pgm, pgm_string(&depth))?;
    Ok((ppm, pgm))
}
