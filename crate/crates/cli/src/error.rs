//! Exit codes and the machine-readable error line.

use serde_json::json;

use skr_core::adaptive::{AdaptiveError, Stage, StageError};
use skr_core::collection::CollectionError;
use skr_core::elicitation::ElicitError;
use skr_core::gateway::GatewayError;

use crate::app::VerifyFailed;
use crate::config::ConfigError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_UPSTREAM: i32 = 4;
pub const EXIT_DIFF: i32 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Config,
    Data,
    Upstream,
    Diff,
}

impl Kind {
    pub fn code(self) -> i32 {
        match self {
            Kind::Config => EXIT_CONFIG,
            Kind::Data => EXIT_DATA,
            Kind::Upstream => EXIT_UPSTREAM,
            Kind::Diff => EXIT_DIFF,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Kind::Config => "config",
            Kind::Data => "data",
            Kind::Upstream => "upstream",
            Kind::Diff => "verification",
        }
    }
}

fn elicit_kind(e: &ElicitError) -> Kind {
    match e {
        ElicitError::Gateway(_) => Kind::Upstream,
        _ => Kind::Data,
    }
}

/// Classifies an error by the first recognised type in its chain.
pub fn classify(err: &anyhow::Error) -> (Kind, Option<Stage>) {
    for cause in err.chain() {
        if cause.downcast_ref::<ConfigError>().is_some() {
            return (Kind::Config, None);
        }
        if cause.downcast_ref::<VerifyFailed>().is_some() {
            return (Kind::Diff, None);
        }
        if cause.downcast_ref::<GatewayError>().is_some() {
            return (Kind::Upstream, None);
        }
        if let Some(e) = cause.downcast_ref::<ElicitError>() {
            return (elicit_kind(e), None);
        }
        if let Some(CollectionError::TooManyErrors { .. }) = cause.downcast_ref::<CollectionError>() {
            return (Kind::Upstream, None);
        }
        if let Some(e) = cause.downcast_ref::<AdaptiveError>() {
            let kind = match &e.source {
                StageError::Gateway(_) => Kind::Upstream,
                StageError::Elicit(inner) => elicit_kind(inner),
                _ => Kind::Data,
            };
            return (kind, Some(e.stage));
        }
    }
    (Kind::Data, None)
}

/// One JSON line describing the failure.
pub fn error_line(err: &anyhow::Error) -> (i32, String) {
    let (kind, stage) = classify(err);
    let mut obj = json!({
        "error": kind.name(),
        "code": kind.code(),
        "message": format!("{err:#}"),
    });
    if let Some(c) = err.chain().find_map(|c| c.downcast_ref::<ConfigError>()) {
        obj["key"] = json!(c.key);
    }
    if let Some(s) = stage {
        obj["stage"] = json!(s.to_string());
    }
    (kind.code(), obj.to_string())
}
