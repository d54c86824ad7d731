//! Expandable convolutional network: shapes, accounting and the model itself.

mod ledger;
mod model;
mod schedule;
mod spec;

pub use ledger::{average_growth, parameter_growth, ratio_to_f64, GrowthLedger, LedgerEntry};
pub use model::{
    BatchNorm, ConvLayer, ExpandableNetwork, ForwardPass, Head, Mode, Parameter, Tracking, BN_EPS,
    BN_MOMENTUM,
};
pub use schedule::{schedule_growth, SCHEDULES};
pub use spec::{
    Block, ConvLayerSpec, ConvRole, NetworkSpec, PlanStep, TaskSpec, Template, ViewCounts,
};
