use bbs3d::bnb::SearchError;
use bbs3d::cloud::CloudError;
use bbs3d::harness::HarnessError;
use bbs3d::voxelmap::MapError;

pub const EXIT_OK: u8 = 0;
pub const EXIT_IO: u8 = 2;
pub const EXIT_NO_MATCH: u8 = 3;
pub const EXIT_DEGENERATE: u8 = 4;
pub const EXIT_CONFIG: u8 = 5;

#[derive(Debug)]
pub enum CliError {
    /// Unreadable, missing or malformed input, or an unwritable output.
    Io(String),
    Degenerate(String),
    Config(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Io(_) => EXIT_IO,
            CliError::Degenerate(_) => EXIT_DEGENERATE,
            CliError::Config(_) => EXIT_CONFIG,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Degenerate(m) => write!(f, "degenerate input: {m}"),
            CliError::Config(m) => write!(f, "configuration error: {m}"),
        }
    }
}

impl From<CloudError> for CliError {
    fn from(e: CloudError) -> Self {
        match e {
            CloudError::FileNotFound(_) | CloudError::Io { .. } | CloudError::Parse { .. } => {
                CliError::Io(e.to_string())
            }
            CloudError::EmptyCloud => CliError::Degenerate(e.to_string()),
            CloudError::InvalidArgument(_) => CliError::Config(e.to_string()),
        }
    }
}

impl From<MapError> for CliError {
    fn from(e: MapError) -> Self {
        match e {
            MapError::Io { .. } | MapError::Format(_) => CliError::Io(e.to_string()),
            MapError::CapacityExceeded { .. } => CliError::Degenerate(e.to_string()),
            MapError::InvalidParam(_) => CliError::Config(e.to_string()),
            MapError::Cloud(c) => c.into(),
        }
    }
}

impl From<SearchError> for CliError {
    fn from(e: SearchError) -> Self {
        match e {
            SearchError::DegenerateScan(_) | SearchError::EmptySearchSpace(_) => {
                CliError::Degenerate(e.to_string())
            }
            SearchError::InvalidConfig(_) | SearchError::LeafNode => {
                CliError::Config(e.to_string())
            }
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::InfeasiblePose { .. } => CliError::Degenerate(e.to_string()),
            HarnessError::TooLarge { .. } | HarnessError::InvalidParams(_) => {
                CliError::Config(e.to_string())
            }
            HarnessError::Search(s) => s.into(),
            HarnessError::Map(m) => m.into(),
            HarnessError::Cloud(c) => c.into(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    #[test]
    fn codes_by_kind() {
        assert_eq!(
            CliError::from(CloudError::FileNotFound(PathBuf::from("x"))).exit_code(),
            2
        );
        assert_eq!(CliError::from(CloudError::EmptyCloud).exit_code(), 4);
        assert_eq!(
            CliError::from(SearchError::DegenerateScan("x".into())).exit_code(),
            4
        );
        assert_eq!(
            CliError::from(SearchError::InvalidConfig("x".into())).exit_code(),
            5
        );
        assert_eq!(CliError::from(MapError::Format("x".into())).exit_code(), 2);
        assert_eq!(
            CliError::from(HarnessError::Search(SearchError::EmptySearchSpace(
                "x".into()
            )))
            .exit_code(),
            4
        );
        assert_eq!(
            CliError::from(HarnessError::TooLarge {
                leaves: 2,
                limit: 1
            })
            .exit_code(),
            5
        );
    }
}
