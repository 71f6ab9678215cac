use thiserror::Error;

/// Errors raised by the dose-finding library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid design parameter `{field}`: {message}")]
    InvalidParams { field: &'static str, message: String },

    #[error("event at time {event_time} precedes trial clock {clock}")]
    OutOfOrder { event_time: f64, clock: f64 },

    #[error("unknown patient {0}")]
    UnknownPatient(u32),

    #[error("patient {0} is already enrolled")]
    DuplicatePatient(u32),

    #[error("patient {0} already has a resolved outcome")]
    AlreadyResolved(u32),

    #[error("dose {dose} outside 1..={n_doses}")]
    DoseOutOfRange { dose: usize, n_doses: usize },

    #[error("dose {0} is excluded by the safety rules")]
    DoseExcluded(usize),

    #[error("invalid DLT time {time} for patient {patient}: {message}")]
    InvalidDltTime {
        patient: u32,
        time: f64,
        message: String,
    },

    #[error("patient {patient} cannot complete assessment at follow-up {followup} < window {tau}")]
    EarlyCompletion { patient: u32, followup: f64, tau: f64 },

    #[error("trial is closed to enrollment ({0})")]
    TrialClosed(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(field: &'static str, message: impl Into<String>) -> Error {
    Error::InvalidParams {
        field,
        message: message.into(),
    }
}
