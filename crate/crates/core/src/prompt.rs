//! Message sequences for every prompt variant: three input formats, with or
//! without step-by-step instructions, with or without chat roles, and any
//! number of in-context demonstrations.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::serialize::{estimate_tokens, Format, SerializedInput, DEFAULT_ROWS};

pub const DEFAULT_TOKEN_LIMIT: usize = 4097;
/// Per-message overhead added to the character-based estimate.
pub const MESSAGE_OVERHEAD_TOKENS: usize = 4;

pub const GUIDING_SENTENCE: &str =
    "Answer only according to the task given. If you don't know the answer, reply with \"I don't know\".";

const COLUMN_TASK: &str =
    "Classify the column given to you into one of these types which are seperated by comma:";
const TEXT_TASK: &str =
    "Classify the text given to you into one of these classes that are separated with comma:";
const TABLE_TASK: &str = "Classify the columns of a given table with one of the following classes:";
const DOMAIN_TASK: &str = "Classify the given table into one of these domains:";

const COLUMN_STEPS: [&str; 4] = [
    "1. Look at the column and the types given to you.",
    "2. Examine the values of the column.",
    "3. Select a type that best represents the meaning of the column.",
    "4. Answer with the selected type.",
];

const TEXT_STEPS: [&str; 4] = [
    "1. Look at the text and the classes given to you.",
    "2. Examine the values of the text.",
    "3. Select a class that best represents the meaning of the text.",
    "4. Answer with the selected class.",
];

const TABLE_STEPS: [&str; 5] = [
    "1. Look at the input given to you and the classes given to you.",
    "2. Generate a table out of the input given to you.",
    "3. Examine the values of each column in the table.",
    "4. Select a class that best represents the meaning of each column.",
    "5. Answer with the selected class for each column, in the order of the columns, separated with comma.",
];

const DOMAIN_STEPS: [&str; 5] = [
    "1. Look at the input given to you and the domains given to you.",
    "2. Generate a table out of the input given to you.",
    "3. Examine the values of the table.",
    "4. Select a domain that best represents the content of the table.",
    "5. Answer with the selected domain.",
];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("expected {expected} demonstrations, got {got}")]
    ShotsMismatch { expected: usize, got: usize },
    #[error("demonstration {index} is {found} format, prompt is {expected}")]
    FormatMismatch {
        index: usize,
        expected: Format,
        found: Format,
    },
    #[error("target is {found} format, prompt is {expected}")]
    TargetFormat { expected: Format, found: Format },
    #[error("demonstration {index}: {reason}")]
    BadDemonstration { index: usize, reason: String },
    #[error("empty label list")]
    NoLabels,
    #[error("prompt needs ~{estimate} tokens, over the limit of {limit} by {}", estimate - limit)]
    TokenBudget { estimate: usize, limit: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Message {
            role,
            content: content.into(),
        }
    }
}

/// Token estimate of a whole conversation.
pub fn estimate_messages(messages: &[Message]) -> usize {
    messages
        .iter()
        .map(|m| estimate_tokens(&m.content) + MESSAGE_OVERHEAD_TOKENS)
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptConfig {
    pub format: Format,
    pub use_instructions: bool,
    pub use_roles: bool,
    pub shots: usize,
    pub n_rows: usize,
    pub label_list: Vec<String>,
    pub seed: u64,
    pub token_limit: usize,
}

impl PromptConfig {
    pub fn new(format: Format, label_list: Vec<String>) -> Self {
        PromptConfig {
            format,
            use_instructions: false,
            use_roles: false,
            shots: 0,
            n_rows: DEFAULT_ROWS,
            label_list,
            seed: 0,
            token_limit: DEFAULT_TOKEN_LIMIT,
        }
    }

    pub fn instructions(mut self, on: bool) -> Self {
        self.use_instructions = on;
        self
    }

    pub fn roles(mut self, on: bool) -> Self {
        self.use_roles = on;
        self
    }

    pub fn shots(mut self, shots: usize) -> Self {
        self.shots = shots;
        self
    }

    /// Short name used in run directories and reports, e.g. `table+inst+roles`.
    pub fn variant_name(&self) -> String {
        let mut s = self.format.to_string();
        if self.use_instructions {
            s.push_str("+inst");
        }
        if self.use_roles {
            s.push_str("+roles");
        }
        s
    }
}

/// The expected reply for a demonstration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Answer {
    Single(String),
    PerColumn(Vec<String>),
}

impl Answer {
    /// Reply text as the model is asked to produce it.
    pub fn render(&self) -> String {
        match self {
            Answer::Single(s) => s.clone(),
            Answer::PerColumn(v) => v.join(", "),
        }
    }

    pub fn labels(&self) -> &[String] {
        match self {
            Answer::Single(s) => std::slice::from_ref(s),
            Answer::PerColumn(v) => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demonstration {
    pub input: SerializedInput,
    pub gold: Answer,
}

pub fn task_description(format: Format, labels: &[String]) -> String {
    let sentence = match format {
        Format::Column => COLUMN_TASK,
        Format::Text => TEXT_TASK,
        Format::Table => TABLE_TASK,
    };
    format!("{sentence} {}", labels.join(", "))
}

pub fn instruction_block(format: Format) -> String {
    match format {
        Format::Column => COLUMN_STEPS.join("\n"),
        Format::Text => TEXT_STEPS.join("\n"),
        Format::Table => TABLE_STEPS.join("\n"),
    }
}

/// User-message body presenting one input, ending in the answer cue.
fn frame_input(input: &SerializedInput) -> String {
    match input.format {
        Format::Column => format!("Column: {}\nType:", input.payload),
        Format::Text => format!("Text: {}\nClass:", input.payload),
        Format::Table => format!("Table:\n{}Class:", input.payload),
    }
}

/// Shared assembly for annotation and domain prompts.
struct Parts {
    task: String,
    instructions: Option<String>,
    demos: Vec<(String, String)>,
    target: String,
    use_roles: bool,
    token_limit: usize,
}

impl Parts {
    fn assemble(self) -> Result<Vec<Message>, PromptError> {
        let mut head = vec![GUIDING_SENTENCE.to_string(), self.task];
        head.extend(self.instructions);
        let messages = if self.use_roles {
            let mut out = Vec::with_capacity(2 + 2 * self.demos.len());
            out.push(Message::new(Role::System, head.join("\n\n")));
            for (user, assistant) in self.demos {
                out.push(Message::new(Role::User, user));
                out.push(Message::new(Role::Assistant, assistant));
            }
            out.push(Message::new(Role::User, self.target));
            out
        } else {
            let mut parts = head;
            for (user, assistant) in self.demos {
                parts.push(format!("{user} {assistant}"));
            }
            parts.push(self.target);
            vec![Message::new(Role::User, parts.join("\n\n"))]
        };
        let estimate = estimate_messages(&messages);
        if estimate > self.token_limit {
            return Err(PromptError::TokenBudget {
                estimate,
                limit: self.token_limit,
            });
        }
        Ok(messages)
    }
}

/// Builds the conversation for annotating `target`.
pub fn build_messages(
    config: &PromptConfig,
    demos: &[Demonstration],
    target: &SerializedInput,
) -> Result<Vec<Message>, PromptError> {
    if config.label_list.is_empty() {
        return Err(PromptError::NoLabels);
    }
    if demos.len() != config.shots {
        return Err(PromptError::ShotsMismatch {
            expected: config.shots,
            got: demos.len(),
        });
    }
    if target.format != config.format {
        return Err(PromptError::TargetFormat {
            expected: config.format,
            found: target.format,
        });
    }
    for (index, d) in demos.iter().enumerate() {
        if d.input.format != config.format {
            return Err(PromptError::FormatMismatch {
                index,
                expected: config.format,
                found: d.input.format,
            });
        }
        check_demo(config, index, d)?;
    }

    Parts {
        task: task_description(config.format, &config.label_list),
        instructions: config
            .use_instructions
            .then(|| instruction_block(config.format)),
        demos: demos
            .iter()
            .map(|d| (frame_input(&d.input), d.gold.render()))
            .collect(),
        target: frame_input(target),
        use_roles: config.use_roles,
        token_limit: config.token_limit,
    }
    .assemble()
}

fn check_demo(config: &PromptConfig, index: usize, d: &Demonstration) -> Result<(), PromptError> {
    let bad = |reason: String| PromptError::BadDemonstration { index, reason };
    match (&d.gold, config.format) {
        (Answer::PerColumn(v), Format::Table) if v.len() != d.input.n_columns => Err(bad(format!(
            "{} labels for {} columns",
            v.len(),
            d.input.n_columns
        ))),
        (Answer::Single(_), Format::Table) => Err(bad("table demo needs per-column labels".into())),
        (Answer::PerColumn(_), Format::Column | Format::Text) => {
            Err(bad("column demo needs a single label".into()))
        }
        _ => match d
            .gold
            .labels()
            .iter()
            .find(|l| !config.label_list.contains(l))
        {
            Some(l) => Err(bad(format!("label {l:?} is not in the label list"))),
            None => Ok(()),
        },
    }
}

/// Name a domain is presented under in the step-one prompt: the first word,
/// lowercased ("Music Recording" becomes "music").
pub fn domain_prompt_name(domain: &str) -> String {
    domain
        .split_whitespace()
        .next()
        .unwrap_or(domain)
        .to_lowercase()
}

pub fn domain_task_description(domains: &[String]) -> String {
    let names: Vec<String> = domains.iter().map(|d| domain_prompt_name(d)).collect();
    format!("{DOMAIN_TASK} {}.", names.join(", "))
}

pub fn domain_instruction_block() -> String {
    DOMAIN_STEPS.join("\n")
}

/// Step-one conversation: classify the topical domain of a serialized table.
/// Demonstrations pair a table with its domain's prompt name.
pub fn build_domain_messages(
    domains: &[String],
    use_instructions: bool,
    use_roles: bool,
    demos: &[(SerializedInput, String)],
    target: &SerializedInput,
    token_limit: usize,
) -> Result<Vec<Message>, PromptError> {
    let frame = |t: &SerializedInput| format!("Table:\n{}Domain:", t.payload);
    Parts {
        task: domain_task_description(domains),
        instructions: use_instructions.then(domain_instruction_block),
        demos: demos
            .iter()
            .map(|(t, d)| (frame(t), domain_prompt_name(d)))
            .collect(),
        target: frame(target),
        use_roles,
        token_limit,
    }
    .assemble()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn input(format: Format, payload: &str, n: usize) -> SerializedInput {
        SerializedInput {
            format,
            payload: payload.into(),
            n_columns: n,
        }
    }

    #[test]
    fn task_sentences() {
        let ls = labels(&["Time", "Date"]);
        assert!(task_description(Format::Column, &ls).starts_with(
            "Classify the column given to you into one of these types which are seperated by comma:"
        ));
        assert!(task_description(Format::Text, &ls).starts_with(
            "Classify the text given to you into one of these classes that are separated with comma:"
        ));
        let music = labels(&["MusicRecordingName", "Duration", "ArtistName", "AlbumName"]);
        let t = task_description(Format::Table, &music);
        assert!(t.ends_with("MusicRecordingName, Duration, ArtistName, AlbumName"));
    }

    #[test]
    fn instruction_lines() {
        let col = instruction_block(Format::Column);
        let lines: Vec<&str> = col.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(
            lines[0],
            "1. Look at the column and the types given to you."
        );
        let text = instruction_block(Format::Text);
        assert_eq!(
            text.lines().nth(2),
            Some("3. Select a class that best represents the meaning of the text.")
        );
        let table = instruction_block(Format::Table);
        assert_eq!(table.lines().count(), 5);
        assert!(table.contains("Generate a table out of the input"));
    }

    #[test]
    fn one_shot_table_with_roles() {
        let cfg = PromptConfig::new(Format::Table, labels(&["Time", "Date"]))
            .instructions(true)
            .roles(true)
            .shots(1);
        let demo = Demonstration {
            input: input(Format::Table, "Column 1 || Column 2 || \na || b ||\n", 2),
            gold: Answer::PerColumn(labels(&["Date", "Time"])),
        };
        let target = input(Format::Table, "Column 1 || \nx ||\n", 1);
        let msgs = build_messages(&cfg, &[demo], &target).unwrap();
        let roles: Vec<Role> = msgs.iter().map(|m| m.role).collect();
        assert_eq!(
            roles,
            [Role::System, Role::User, Role::Assistant, Role::User]
        );
        assert_eq!(msgs[2].content, "Date, Time");
        assert!(msgs[0].content.starts_with(GUIDING_SENTENCE));
        assert!(msgs[3].content.ends_with("Class:"));
    }

    #[test]
    fn zero_shot_column_plain() {
        let cfg = PromptConfig::new(Format::Column, labels(&["Time"]));
        let msgs = build_messages(&cfg, &[], &input(Format::Column, "7:30 AM", 1)).unwrap();
        assert_eq!(msgs.len(), 1);
        assert_eq!(msgs[0].role, Role::User);
        assert!(msgs[0].content.ends_with("Type:"));
        assert!(msgs[0].content.starts_with(GUIDING_SENTENCE));
    }

    #[test]
    fn shots_and_format_checked() {
        let cfg = PromptConfig::new(Format::Column, labels(&["Time"])).shots(1);
        let target = input(Format::Column, "x", 1);
        assert_eq!(
            build_messages(&cfg, &[], &target),
            Err(PromptError::ShotsMismatch {
                expected: 1,
                got: 0
            })
        );
        let wrong = Demonstration {
            input: input(Format::Text, "y", 1),
            gold: Answer::Single("Time".into()),
        };
        assert!(matches!(
            build_messages(&cfg, &[wrong], &target),
            Err(PromptError::FormatMismatch { .. })
        ));
        let outside = Demonstration {
            input: input(Format::Column, "y", 1),
            gold: Answer::Single("Date".into()),
        };
        assert!(matches!(
            build_messages(&cfg, &[outside], &target),
            Err(PromptError::BadDemonstration { .. })
        ));
    }

    #[test]
    fn budget_enforced() {
        let mut cfg = PromptConfig::new(Format::Column, labels(&["Time"]));
        cfg.token_limit = 10;
        let err =
            build_messages(&cfg, &[], &input(Format::Column, &"x".repeat(400), 1)).unwrap_err();
        assert!(matches!(err, PromptError::TokenBudget { limit: 10, .. }));
    }

    #[test]
    fn domain_prompt_wording() {
        let domains = labels(&["Music Recording", "Hotels", "Restaurants", "Events"]);
        assert_eq!(
            domain_task_description(&domains),
            "Classify the given table into one of these domains: music, hotels, restaurants, events."
        );
        let msgs = build_domain_messages(
            &domains,
            true,
            true,
            &[(
                input(Format::Table, "Column 1 || \nx ||\n", 1),
                "Hotels".into(),
            )],
            &input(Format::Table, "Column 1 || \ny ||\n", 1),
            DEFAULT_TOKEN_LIMIT,
        )
        .unwrap();
        assert_eq!(msgs.len(), 4);
        assert_eq!(msgs[2].content, "hotels");
        assert!(msgs[3].content.ends_with("Domain:"));
    }
}
