//! JSON text frames exchanged with the teleoperation client.

use nalgebra::Vector6;
use serde::{Deserialize, Serialize};
use sqcbf::filter::{CycleRecord, FilterStatus};
use sqcbf::lie::PoseRecord;
use sqcbf::sim::Tick;
use sqcbf::superquadric::ShapeRecord;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMessage {
    /// End-effector-frame twist `[vx, vy, vz, wx, wy, wz]`.
    Jog { twist: [f64; 6], seq: i64 },
    Reset,
    SetFilter { on: bool },
}

impl ClientMessage {
    pub fn parse(text: &str) -> Result<Self, String> {
        let msg: ClientMessage = serde_json::from_str(text).map_err(|e| e.to_string())?;
        if let ClientMessage::Jog { twist, .. } = &msg {
            if !twist.iter().all(|x| x.is_finite()) {
                return Err("jog twist must be finite".into());
            }
        }
        Ok(msg)
    }

    pub fn twist(&self) -> Option<Vector6<f64>> {
        match self {
            ClientMessage::Jog { twist, .. } => Some(Vector6::from(*twist)),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateFrame {
    pub t: f64,
    pub q: Vec<f64>,
    pub ee_pose: PoseRecord,
    pub u_nominal: Vec<f64>,
    pub u_filtered: Vec<f64>,
    pub h_min: Option<f64>,
    pub d_min: Option<f64>,
    pub mu: f64,
    pub status: FilterStatus,
    pub obstacles: Vec<ShapeRecord>,
    pub robot_sqs: Vec<ShapeRecord>,
    /// Filter switch as applied by the server.
    pub filter: bool,
    /// Sequence number of the last jog consumed by the control loop.
    pub seq: Option<i64>,
}

impl StateFrame {
    pub fn from_tick(tick: &Tick, filter: bool, seq: Option<i64>) -> Self {
        let r = &tick.record;
        Self {
            t: r.t,
            q: r.q.clone(),
            ee_pose: PoseRecord::from(&tick.ee),
            u_nominal: r.u_cmd.clone(),
            u_filtered: r.u_star.clone(),
            h_min: r.h_min,
            d_min: r.d_min(),
            mu: r.mu,
            status: r.status,
            obstacles: tick.obstacles.iter().map(ShapeRecord::from_posed).collect(),
            robot_sqs: tick.robot.iter().map(ShapeRecord::from_posed).collect(),
            filter,
            seq,
        }
    }

    /// Whether this frame carries exactly the logged values of `record`.
    pub fn matches(&self, record: &CycleRecord) -> bool {
        self.t == record.t
            && self.q == record.q
            && self.u_nominal == record.u_cmd
            && self.u_filtered == record.u_star
            && self.h_min == record.h_min
            && self.d_min == record.d_min()
            && self.mu == record.mu
            && self.status == record.status
    }

    pub fn intervention(&self) -> bool {
        self.u_nominal
            .iter()
            .zip(&self.u_filtered)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
            > sqcbf::sim::INTERVENTION_THRESHOLD
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    State(StateFrame),
    Error { msg: String },
}

impl ServerMessage {
    pub fn error(msg: impl Into<String>) -> Self {
        ServerMessage::Error { msg: msg.into() }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server messages always serialize")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn client_messages() {
        assert_eq!(
            ClientMessage::parse(r#"{"type":"jog","twist":[0.1,0,0,0,0,0],"seq":3}"#).unwrap(),
            ClientMessage::Jog {
                twist: [0.1, 0.0, 0.0, 0.0, 0.0, 0.0],
                seq: 3
            }
        );
        assert_eq!(
            ClientMessage::parse(r#"{"type":"reset"}"#).unwrap(),
            ClientMessage::Reset
        );
        assert_eq!(
            ClientMessage::parse(r#"{"type":"set_filter","on":false}"#).unwrap(),
            ClientMessage::SetFilter { on: false }
        );
        for bad in [
            "",
            "{}",
            r#"{"type":"jog","twist":[1,2,3],"seq":0}"#,
            r#"{"type":"jog","twist":[0,0,0,0,0,0]}"#,
            r#"{"type":"dance"}"#,
            r#"{"type":"set_filter","on":"yes"}"#,
        ] {
            assert!(ClientMessage::parse(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn error_frame_shape() {
        let v: serde_json::Value =
            serde_json::from_str(&ServerMessage::error("busy").to_json()).unwrap();
        assert_eq!(v, serde_json::json!({"type": "error", "msg": "busy"}));
    }
}
