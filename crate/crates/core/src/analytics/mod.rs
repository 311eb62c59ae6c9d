//! Aggregate analyses over IoTrim lists and traces, plus CSV reporting.

mod blocklists;
mod lists;
mod party;
mod reference;
mod report;
mod traffic;

pub use blocklists::{
    compare_blocklists, BlocklistComparison, BlocklistSnapshot, ComparisonRow, RequiredHit, SnapshotFormat,
};
pub use lists::{
    category_summary, common_nonrequired, device_dependent_destinations, sld_sufficiency, third_party_violations,
    CategoryRow, CategorySummary, CommonDestination, DeviceDependent, SldConflict, SldReport,
};
pub use party::{assign_parties, classify_party, PartyMap};
pub use reference::{ListedCounts, ReferenceEntry, ReferenceRow, ReferenceTable};
pub use report::{render_report, DeviceInfo, ReportInput};
pub use traffic::{
    port_protocol_summary, traffic_volume_split, PortException, PortProtocolReport, PortRow, Volume, VolumeSplit,
};

use crate::model::ModelError;

#[derive(Debug, thiserror::Error)]
pub enum AnalyticsError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("unreadable blocklist snapshot: {0}")]
    BadSnapshot(String),
    #[error("invalid reference table: {0}")]
    Reference(String),
}
