//! Exit codes and the one-line error format.

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Code {
    Usage = 2,
    Io = 3,
    Format = 4,
    Config = 5,
    Compute = 6,
}

impl Code {
    pub fn name(self) -> &'static str {
        match self {
            Code::Usage => "usage",
            Code::Io => "io",
            Code::Format => "format",
            Code::Config => "config",
            Code::Compute => "compute",
        }
    }
}

/// An error the CLI raises itself, already classified.
#[derive(Debug)]
pub struct Coded {
    pub code: Code,
    pub msg: String,
}

impl Coded {
    pub fn new(code: Code, msg: impl Into<String>) -> Self {
        Self {
            code,
            msg: msg.into(),
        }
    }
}

impl fmt::Display for Coded {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.msg)
    }
}

impl std::error::Error for Coded {}

pub fn config_err(msg: impl Into<String>) -> anyhow::Error {
    Coded::new(Code::Config, msg).into()
}

fn core_code(e: &caap_core::Error) -> Code {
    use caap_core::Error as E;
    match e {
        E::Io { .. } => Code::Io,
        E::Format { .. } | E::Truncated { .. } | E::Checksum { .. } => Code::Format,
        E::InvalidConfig(_)
        | E::InvalidArgument(_)
        | E::ImageMismatch { .. }
        | E::StatsMismatch(_) => Code::Config,
        E::ShapeMismatch { .. } | E::InvalidPlan(_) | E::Undefined(_) => Code::Compute,
    }
}

/// The first classified cause in the chain decides the code.
pub fn classify(err: &anyhow::Error) -> Code {
    for cause in err.chain() {
        if let Some(c) = cause.downcast_ref::<Coded>() {
            return c.code;
        }
        if let Some(e) = cause.downcast_ref::<caap_core::Error>() {
            return core_code(e);
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return Code::Io;
        }
    }
    Code::Compute
}

/// `error: code=<name> msg="<escaped>"`, always a single line.
pub fn error_line(code: Code, msg: &str) -> String {
    format!("error: code={} msg={:?}", code.name(), msg)
}
