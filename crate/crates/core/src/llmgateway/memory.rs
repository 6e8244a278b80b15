use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    Human,
    Assistant,
}

impl Role {
    /// Role name on the chat-completions wire.
    pub fn wire_name(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::Human => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatTurn {
    pub role: Role,
    pub content: String,
}

impl ChatTurn {
    pub fn system(content: impl Into<String>) -> Self {
        ChatTurn {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn human(content: impl Into<String>) -> Self {
        ChatTurn {
            role: Role::Human,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatTurn {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

/// Window memory: the system turn plus the most recent `window_size`
/// human/assistant exchanges.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversationMemory {
    window_size: usize,
    system: Option<ChatTurn>,
    turns: Vec<ChatTurn>,
}

impl ConversationMemory {
    pub const DEFAULT_WINDOW: usize = 3;

    pub fn new(window_size: usize, system: Option<String>) -> Self {
        ConversationMemory {
            window_size,
            system: system.map(ChatTurn::system),
            turns: Vec::new(),
        }
    }

    pub fn window_size(&self) -> usize {
        self.window_size
    }

    pub fn system(&self) -> Option<&ChatTurn> {
        self.system.as_ref()
    }

    /// Retained exchange turns, oldest first.
    pub fn turns(&self) -> &[ChatTurn] {
        &self.turns
    }

    /// Messages sent for `prompt`: system turn, windowed history, then the prompt.
    pub fn outbound(&self, prompt: &ChatTurn) -> Vec<ChatTurn> {
        let keep = 2 * self.window_size;
        let history = &self.turns[self.turns.len().saturating_sub(keep)..];
        self.system
            .iter()
            .chain(history)
            .chain(std::iter::once(prompt))
            .cloned()
            .collect()
    }

    pub fn record(&mut self, prompt: ChatTurn, reply: ChatTurn) {
        self.turns.push(prompt);
        self.turns.push(reply);
        let keep = 2 * self.window_size;
        if self.turns.len() > keep {
            self.turns.drain(..self.turns.len() - keep);
        }
    }
}
