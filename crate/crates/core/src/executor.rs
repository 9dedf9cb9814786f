//! Kinematic arm: waypoint plans for handover and pick-and-place, executed
//! against a scene snapshot with a geometric grasp-success predicate.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{grasp_angle_distance, WorldGrasp};
use crate::scene::{Scene, SceneObject, Shape};

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum PlanError {
    #[error("target at radius {0:.3} m is out of reach")]
    OutOfReach(f64),
    #[error("target lies below the table")]
    BelowTable,
    #[error("grasp and place poses coincide")]
    SamePose,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToolPose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
}

impl ToolPose {
    pub fn position(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExecutorConfig {
    /// Horizontal reach radius around the robot base at the origin.
    pub reach: f64,
    pub approach_clearance: f64,
    pub box_angle_tolerance_deg: f64,
    /// Release height above a place target.
    pub drop_height: f64,
    pub w_max: f64,
    pub home: ToolPose,
    pub handover: ToolPose,
}

impl Default for ExecutorConfig {
    fn default() -> Self {
        Self {
            reach: 0.6,
            approach_clearance: 0.10,
            box_angle_tolerance_deg: 20.0,
            drop_height: 0.05,
            w_max: 0.085,
            home: ToolPose { x: 0.3, y: 0.0, z: 0.41, yaw: 0.0 },
            handover: ToolPose { x: 0.3, y: -0.3, z: 0.2, yaw: 0.0 },
        }
    }
}

impl ExecutorConfig {
    /// Handover pose at the middle of the table's right-hand edge.
    pub fn for_table(table: &crate::scene::Table, home: ToolPose) -> Self {
        Self {
            home,
            handover: ToolPose {
                x: table.size_x / 2.0,
                y: -table.size_y / 2.0,
                z: 0.2,
                yaw: 0.0,
            },
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmState {
    pub tool_pose: ToolPose,
    pub gripper_width: f64,
    pub holding: Option<u32>,
    pub at_home: bool,
    /// The attached object while `holding` is set.
    #[serde(skip)]
    carried: Option<SceneObject>,
}

impl ArmState {
    pub fn at_home(cfg: &ExecutorConfig) -> Self {
        Self {
            tool_pose: cfg.home,
            gripper_width: cfg.w_max,
            holding: None,
            at_home: true,
            carried: None,
        }
    }

    pub fn carried(&self) -> Option<&SceneObject> {
        self.carried.as_ref()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WaypointLabel {
    Home,
    PreGrasp,
    Descend,
    Close,
    Lift,
    Handover,
    PrePlace,
    Open,
    ReturnHome,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GripperCommand {
    Keep,
    Close(f64),
    Open,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub label: WaypointLabel,
    pub pose: ToolPose,
    pub gripper: GripperCommand,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PlanKind {
    Handover,
    PickPlace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionPlan {
    pub kind: PlanKind,
    pub waypoints: Vec<Waypoint>,
}

impl MotionPlan {
    pub fn labels(&self) -> Vec<WaypointLabel> {
        self.waypoints.iter().map(|w| w.label).collect()
    }
}

fn check_reachable(p: &Vector3<f64>, cfg: &ExecutorConfig) -> Result<(), PlanError> {
    if p.z < 0.0 {
        return Err(PlanError::BelowTable);
    }
    let r = p.x.hypot(p.y);
    if r > cfg.reach {
        return Err(PlanError::OutOfReach(r));
    }
    Ok(())
}

fn wp(label: WaypointLabel, pose: ToolPose, gripper: GripperCommand) -> Waypoint {
    Waypoint { label, pose, gripper }
}

fn grasp_prefix(g: &WorldGrasp, cfg: &ExecutorConfig) -> Vec<Waypoint> {
    use WaypointLabel::*;
    let at = |z: f64| ToolPose { x: g.x, y: g.y, z, yaw: g.phi };
    vec![
        wp(Home, cfg.home, GripperCommand::Keep),
        wp(PreGrasp, at(g.z + cfg.approach_clearance), GripperCommand::Keep),
        wp(Descend, at(g.z), GripperCommand::Keep),
        wp(Close, at(g.z), GripperCommand::Close(g.w)),
        wp(Lift, at(g.z + cfg.approach_clearance), GripperCommand::Keep),
    ]
}

pub fn plan_grasp_handover(g: &WorldGrasp, cfg: &ExecutorConfig) -> Result<MotionPlan, PlanError> {
    use WaypointLabel::*;
    check_reachable(&g.position(), cfg)?;
    let mut waypoints = grasp_prefix(g, cfg);
    waypoints.push(wp(Handover, cfg.handover, GripperCommand::Keep));
    waypoints.push(wp(Open, cfg.handover, GripperCommand::Open));
    waypoints.push(wp(ReturnHome, cfg.home, GripperCommand::Keep));
    Ok(MotionPlan {
        kind: PlanKind::Handover,
        waypoints,
    })
}

pub fn plan_pick_place(
    g: &WorldGrasp,
    place: &Vector3<f64>,
    cfg: &ExecutorConfig,
) -> Result<MotionPlan, PlanError> {
    use WaypointLabel::*;
    check_reachable(&g.position(), cfg)?;
    check_reachable(place, cfg)?;
    if (g.position() - place).norm() < 0.01 {
        return Err(PlanError::SamePose);
    }
    let at = |z: f64| ToolPose { x: place.x, y: place.y, z, yaw: g.phi };
    let mut waypoints = grasp_prefix(g, cfg);
    waypoints.push(wp(PrePlace, at(place.z + cfg.approach_clearance), GripperCommand::Keep));
    waypoints.push(wp(Descend, at(place.z + cfg.drop_height), GripperCommand::Keep));
    waypoints.push(wp(Open, at(place.z + cfg.drop_height), GripperCommand::Open));
    waypoints.push(wp(ReturnHome, cfg.home, GripperCommand::Keep));
    Ok(MotionPlan {
        kind: PlanKind::PickPlace,
        waypoints,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FailureReason {
    MissedObject,
    WidthTooSmall,
    AngleInfeasible,
    NothingHeld,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaypointEvent {
    pub label: WaypointLabel,
    pub pose: ToolPose,
    pub gripper_width: f64,
    pub holding: Option<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionReport {
    pub success: bool,
    pub failure_reason: Option<FailureReason>,
    pub events: Vec<WaypointEvent>,
    pub scene: Scene,
    pub arm: ArmState,
    /// Object released at the handover pose, if any.
    pub handed_over: Option<SceneObject>,
}

/// Grasp-success predicate at a Close waypoint. Returns the index of the
/// grasped object.
pub fn check_grasp(
    scene: &Scene,
    pose: &ToolPose,
    width: f64,
    cfg: &ExecutorConfig,
) -> Result<usize, FailureReason> {
    let target = scene
        .objects
        .iter()
        .enumerate()
        .map(|(i, o)| (i, (o.pose.x - pose.x).hypot(o.pose.y - pose.y)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .ok_or(FailureReason::MissedObject)?;
    let o = &scene.objects[target.0];
    if target.1 > o.min_footprint_extent() / 2.0 {
        return Err(FailureReason::MissedObject);
    }
    if width < o.extent_along(pose.yaw) {
        return Err(FailureReason::WidthTooSmall);
    }
    if o.shape == Shape::Box {
        let tol = cfg.box_angle_tolerance_deg.to_radians();
        let off = grasp_angle_distance(pose.yaw, o.pose.yaw)
            .min(grasp_angle_distance(pose.yaw, o.pose.yaw + std::f64::consts::FRAC_PI_2));
        if off > tol {
            return Err(FailureReason::AngleInfeasible);
        }
    }
    Ok(target.0)
}

/// Runs `plan` to completion or first failure. A failed step aborts the
/// remaining waypoints and sends the arm home.
pub fn execute(plan: &MotionPlan, scene: &Scene, arm: &ArmState, cfg: &ExecutorConfig) -> ExecutionReport {
    let mut scene = scene.clone();
    let mut arm = arm.clone();
    let mut events = Vec::with_capacity(plan.waypoints.len());
    let mut handed_over = None;
    let mut failure = None;

    for w in &plan.waypoints {
        arm.tool_pose = w.pose;
        arm.at_home = matches!(w.label, WaypointLabel::Home | WaypointLabel::ReturnHome);
        match w.gripper {
            GripperCommand::Keep => {}
            GripperCommand::Close(width) => match check_grasp(&scene, &w.pose, width, cfg) {
                Ok(i) => {
                    let o = scene.objects.remove(i);
                    for other in scene.objects.iter_mut() {
                        if other.placed_in == Some(o.id) {
                            other.placed_in = None;
                        }
                    }
                    arm.gripper_width = o.extent_along(w.pose.yaw);
                    arm.holding = Some(o.id);
                    arm.carried = Some(o);
                }
                Err(reason) => {
                    arm.gripper_width = 0.0;
                    failure = Some(reason);
                }
            },
            GripperCommand::Open => match arm.carried.take() {
                None => failure = Some(FailureReason::NothingHeld),
                Some(mut o) => {
                    arm.holding = None;
                    arm.gripper_width = cfg.w_max;
                    if w.label == WaypointLabel::Open && plan.kind == PlanKind::Handover {
                        handed_over = Some(o);
                    } else {
                        let host = scene
                            .objects
                            .iter()
                            .find(|c| c.container && c.footprint_contains(w.pose.x, w.pose.y));
                        match host {
                            Some(c) => {
                                o.pose.x = c.pose.x;
                                o.pose.y = c.pose.y;
                                o.placed_in = Some(c.id);
                            }
                            None => {
                                o.pose.x = w.pose.x;
                                o.pose.y = w.pose.y;
                                o.placed_in = None;
                            }
                        }
                        scene.objects.push(o);
                    }
                }
            },
        }
        events.push(WaypointEvent {
            label: w.label,
            pose: w.pose,
            gripper_width: arm.gripper_width,
            holding: arm.holding,
        });
        if failure.is_some() {
            if w.label != WaypointLabel::ReturnHome {
                arm.tool_pose = cfg.home;
                arm.at_home = true;
                events.push(WaypointEvent {
                    label: WaypointLabel::ReturnHome,
                    pose: cfg.home,
                    gripper_width: arm.gripper_width,
                    holding: arm.holding,
                });
            }
            break;
        }
    }

    ExecutionReport {
        success: failure.is_none(),
        failure_reason: failure,
        events,
        scene,
        arm,
        handed_over,
    }
}
