use emomem_core::Error;

pub const SUCCESS: i32 = 0;
pub const USAGE: i32 = 1;
pub const DATA: i32 = 2;
pub const BACKEND: i32 = 3;

/// A mistake in how the tool was invoked.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

pub fn usage(message: impl Into<String>) -> anyhow::Error {
    UsageError(message.into()).into()
}

pub fn code_for(err: &anyhow::Error) -> i32 {
    if err.downcast_ref::<UsageError>().is_some() {
        return USAGE;
    }
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_backend() => BACKEND,
        Some(Error::InvalidConfig(_)) => USAGE,
        _ => DATA,
    }
}
