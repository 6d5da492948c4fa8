use serde::{Deserialize, Serialize};

/// The tasks a marked image can be prompted for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    OpenVocabSeg,
    ReferringSeg,
    ReferringComprehension,
    PhraseGrounding,
    VideoObjectSeg,
    FreeChat,
}

impl TaskKind {
    pub const ALL: [TaskKind; 6] = [
        TaskKind::OpenVocabSeg,
        TaskKind::ReferringSeg,
        TaskKind::ReferringComprehension,
        TaskKind::PhraseGrounding,
        TaskKind::VideoObjectSeg,
        TaskKind::FreeChat,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::OpenVocabSeg => "open_vocab_seg",
            TaskKind::ReferringSeg => "referring_seg",
            TaskKind::ReferringComprehension => "referring_comprehension",
            TaskKind::PhraseGrounding => "phrase_grounding",
            TaskKind::VideoObjectSeg => "video_object_seg",
            TaskKind::FreeChat => "free_chat",
        }
    }

    /// Tasks where each query selects exactly one region.
    pub fn is_single_selection(self) -> bool {
        matches!(self, TaskKind::ReferringSeg | TaskKind::ReferringComprehension)
    }
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TaskKind::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown task {s:?}"))
    }
}
