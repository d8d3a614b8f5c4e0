//! OpenFlow-style switches and the learning, authorization-gating controller.

mod controller;
mod flow;
mod tables;

pub use controller::{
    Controller, Decision, DropReason, FabricError, FabricEvent, FlowModOp, GatePolicy, PacketOut, SimAction, Switch,
    LEARNING_PRIORITY,
};
pub use flow::{FlowAction, FlowEntry, FlowMatch, FlowTable, InstallOutcome, PacketFields, PortId, SwitchId};
pub use tables::{AuthState, AuthTable, MacLearningTable};
