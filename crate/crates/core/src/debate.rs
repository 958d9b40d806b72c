//! One complete trial: openings, argument rounds, summaries, deliberation.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{debug, warn};

use crate::agent::{
    parse_verdict, AgentConfig, AgentError, Backend, BackendError, BackendRegistry, DecodingParams,
    GenerationRequest, Matchup, Message, RequestMeta, Role, Side, Verdict,
};
use crate::case::{render_case_context, validate_case, Case};
use crate::taxonomy::TraitSet;

/// Judge generation attempts before falling back to an undecided verdict.
pub const JUDGE_ATTEMPTS: u32 = 3;

const JUDGE_INSTRUCTION: &str = "Weigh the two summaries and decide the case. Respond with only a JSON \
object of the form {\"verdict\": \"guilty\" or \"not guilty\", \"confidence\": a number between 0 and 1}.";

const JUDGE_REMINDERS: [&str; 2] = [
    "Your previous reply could not be read. Reply with the JSON object only, with keys \"verdict\" and \"confidence\".",
    "Reply with exactly one line such as {\"verdict\": \"not guilty\", \"confidence\": 0.65} and nothing else.",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// One agent per side holding the whole trait set.
    #[default]
    Single,
    /// One agent per trait, speaking in rotation.
    Team,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Single => "single",
            Mode::Team => "team",
        }
    }
}

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("invalid case {id:?}: {reasons}")]
    InvalidCase { id: String, reasons: String },
    #[error("rounds must be at least 1")]
    NoRounds,
    #[error("team for {side} has no members")]
    EmptyTeam { side: Side },
    #[error("team member {index} of {side} has role {role}")]
    WrongRole { side: Side, index: usize, role: Role },
    #[error("team mode requires one trait per member; member {index} holds {count}")]
    TeamMemberTraits { index: usize, count: usize },
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Team {
    pub side: Side,
    pub members: Vec<AgentConfig>,
    rotation_index: usize,
}

impl Team {
    pub fn new(side: Side, members: Vec<AgentConfig>) -> Result<Self, ProtocolError> {
        if members.is_empty() {
            return Err(ProtocolError::EmptyTeam { side });
        }
        for (index, member) in members.iter().enumerate() {
            if member.role != Role::from(side) {
                return Err(ProtocolError::WrongRole { side, index, role: member.role });
            }
        }
        Ok(Self { side, members, rotation_index: 0 })
    }

    /// Single mode: one agent holding every trait.
    pub fn single(
        side: Side,
        traits: TraitSet,
        backend_id: &str,
        decoding: DecodingParams,
    ) -> Result<Self, ProtocolError> {
        let agent = AgentConfig::new(side.into(), traits, backend_id, decoding)?;
        Self::new(side, vec![agent])
    }

    /// Team mode: one single-trait agent per entry of `traits`, in order.
    pub fn ensemble(
        side: Side,
        traits: &TraitSet,
        backend_id: &str,
        decoding: DecodingParams,
    ) -> Result<Self, ProtocolError> {
        let members = traits
            .iter()
            .map(|name| {
                let one = TraitSet::new([name], false).expect("single trait");
                AgentConfig::new(side.into(), one, backend_id, decoding)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(side, members)
    }

    pub fn build(
        mode: Mode,
        side: Side,
        traits: &TraitSet,
        backend_id: &str,
        decoding: DecodingParams,
    ) -> Result<Self, ProtocolError> {
        match mode {
            Mode::Single => Self::single(side, traits.clone(), backend_id, decoding),
            Mode::Team => Self::ensemble(side, traits, backend_id, decoding),
        }
    }

    /// Returns the member whose turn it is and advances the rotation.
    pub fn next_speaker(&mut self) -> usize {
        let index = self.rotation_index % self.members.len();
        self.rotation_index += 1;
        index
    }

    pub fn rotation_index(&self) -> usize {
        self.rotation_index
    }

    /// All member traits, in member order.
    pub fn traits(&self) -> Vec<String> {
        self.members.iter().flat_map(|m| m.traits.traits.iter().cloned()).collect()
    }

    fn check_mode(&self, mode: Mode) -> Result<(), ProtocolError> {
        if mode == Mode::Team {
            if let Some((index, m)) = self.members.iter().enumerate().find(|(_, m)| m.traits.len() != 1) {
                return Err(ProtocolError::TeamMemberTraits { index, count: m.traits.len() });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Opening,
    Argument,
    Summary,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    /// Index of the speaking member within its team.
    pub speaker: usize,
    pub side: Side,
    pub phase: Phase,
    /// 0 for openings and summaries, 1..=N for arguments.
    pub round: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub issue: Option<String>,
    pub text: String,
    /// Transcript position of the opposing utterance this one answered.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context_ref: Option<usize>,
}

/// One (round, issue) exchange. `defense` is absent only in aborted trials.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArgumentCell {
    pub round: usize,
    pub issue: String,
    pub prosecution: Utterance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub defense: Option<Utterance>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Transcript {
    pub case_id: String,
    pub openings: Vec<Utterance>,
    pub rounds: Vec<ArgumentCell>,
    pub summaries: Vec<Utterance>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
    /// Judge generations consumed, including unparseable ones.
    #[serde(default)]
    pub judge_attempts: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub judge_outputs: Vec<String>,
    /// True when the verdict is the undecided fallback after unreadable replies.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub judge_fallback: bool,
}

impl Transcript {
    pub fn new(case_id: impl Into<String>) -> Self {
        Self { case_id: case_id.into(), ..Self::default() }
    }

    /// The discourse history in speaking order.
    pub fn history(&self) -> Vec<&Utterance> {
        let mut out: Vec<&Utterance> = self.openings.iter().collect();
        for cell in &self.rounds {
            out.push(&cell.prosecution);
            if let Some(d) = &cell.defense {
                out.push(d);
            }
        }
        out.extend(self.summaries.iter());
        out
    }

    pub fn len(&self) -> usize {
        self.openings.len()
            + self.rounds.iter().map(|c| 1 + usize::from(c.defense.is_some())).sum::<usize>()
            + self.summaries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn arguments(&self) -> impl Iterator<Item = &Utterance> {
        self.rounds.iter().flat_map(|c| std::iter::once(&c.prosecution).chain(c.defense.as_ref()))
    }

    fn push(&mut self, utterance: Utterance) {
        match utterance.phase {
            Phase::Opening => self.openings.push(utterance),
            Phase::Summary => self.summaries.push(utterance),
            Phase::Argument => match utterance.side {
                Side::Prosecution => self.rounds.push(ArgumentCell {
                    round: utterance.round,
                    issue: utterance.issue.clone().unwrap_or_default(),
                    prosecution: utterance,
                    defense: None,
                }),
                Side::Defense => {
                    let cell = self.rounds.last_mut().expect("defense answers a prosecution argument");
                    cell.defense = Some(utterance);
                }
            },
        }
    }

    /// Position and text of the opposing side's most recent argument on
    /// `issue`, or of its opening when it has not argued the issue yet.
    fn opposing_reference(&self, side: Side, issue: &str) -> Option<(usize, &Utterance)> {
        let opponent = side.opponent();
        let history = self.history();
        history
            .iter()
            .enumerate()
            .rev()
            .find(|(_, u)| u.side == opponent && u.phase == Phase::Argument && u.issue.as_deref() == Some(issue))
            .or_else(|| {
                history.iter().enumerate().find(|(_, u)| u.side == opponent && u.phase == Phase::Opening)
            })
            .map(|(i, u)| (i, *u))
    }
}

/// Wall-clock milliseconds per phase. Not persisted with the record.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PhaseTiming {
    pub openings_ms: f64,
    pub arguments_ms: f64,
    pub summaries_ms: f64,
    pub deliberation_ms: f64,
}

/// Everything needed to re-run a trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub mode: Mode,
    pub prosecution: TraitSet,
    pub defense: TraitSet,
    pub rounds: usize,
    pub backend_id: String,
    pub seed: u64,
    #[serde(default)]
    pub decoding: DecodingParams,
    #[serde(default = "default_true")]
    pub judge_sees_case: bool,
    #[serde(default)]
    pub replication: u32,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_index: usize,
    pub case_id: String,
    pub case_name: String,
    pub config: TrialConfig,
    pub transcript: Transcript,
    /// Set when a backend failure aborted the trial.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip)]
    pub timing: PhaseTiming,
}

/// Equality covers the persisted fields; wall-clock timing is ignored.
impl PartialEq for TrialRecord {
    fn eq(&self, other: &Self) -> bool {
        self.trial_index == other.trial_index
            && self.case_id == other.case_id
            && self.case_name == other.case_name
            && self.config == other.config
            && self.transcript == other.transcript
            && self.error == other.error
    }
}

impl TrialRecord {
    pub fn verdict(&self) -> Option<Verdict> {
        self.transcript.verdict
    }

    pub fn failed(&self) -> bool {
        self.error.is_some()
    }

    /// True when the judge never produced a parseable verdict.
    pub fn parse_failed(&self) -> bool {
        self.transcript.judge_fallback
    }
}

/// Shared, read-only inputs for every request in one trial.
#[derive(Debug, Clone)]
pub struct TrialContext<'a> {
    pub case: &'a Case,
    pub case_context: String,
    pub seed: u64,
    pub matchup: Matchup,
}

impl<'a> TrialContext<'a> {
    pub fn new(case: &'a Case, seed: u64, prosecution: &Team, defense: &Team) -> Self {
        Self {
            case,
            case_context: render_case_context(case),
            seed,
            matchup: Matchup { prosecution: prosecution.traits(), defense: defense.traits() },
        }
    }

    fn request(&self, agent: &AgentConfig, turn: usize, messages: Vec<Message>) -> GenerationRequest {
        GenerationRequest {
            system_prompt: agent.system_prompt(),
            messages,
            decoding: agent.decoding,
            seed: Some(self.seed),
            meta: RequestMeta {
                role: agent.role,
                traits: agent.traits.traits.clone(),
                turn,
                matchup: Some(self.matchup.clone()),
            },
        }
    }
}

fn possessive(side: Side) -> &'static str {
    match side {
        Side::Prosecution => "prosecution's",
        Side::Defense => "defense's",
    }
}

pub fn build_opening_context(ctx: &TrialContext<'_>, transcript: &Transcript, agent: &AgentConfig, side: Side) -> GenerationRequest {
    ctx.request(
        agent,
        transcript.len(),
        vec![
            Message::new("case", ctx.case_context.clone()),
            Message::new(
                "instruction",
                format!("Deliver the {} opening statement, summarizing your theory of the case.", possessive(side)),
            ),
        ],
    )
}

/// Request for the argument in slot (`round`, `issue`) by `side`, carrying
/// the opposing side's most recent argument on that issue. Returns the
/// transcript position of that opposing utterance alongside the request.
pub fn build_argument_context(
    ctx: &TrialContext<'_>,
    transcript: &Transcript,
    agent: &AgentConfig,
    side: Side,
    round: usize,
    issue: &str,
) -> (GenerationRequest, Option<usize>) {
    let mut messages = vec![
        Message::new("case", ctx.case_context.clone()),
        Message::new("issue", format!("Round {round}, issue: {issue}")),
    ];
    let reference = transcript.opposing_reference(side, issue);
    if let Some((_, utterance)) = reference {
        let phase = match utterance.phase {
            Phase::Opening => "opening",
            _ => "argument",
        };
        messages.push(Message::new(format!("{} {phase}", utterance.side), utterance.text.clone()));
    }
    messages.push(Message::new(
        "instruction",
        format!(
            "Argue the {} position on the issue \"{issue}\", responding to the opposing argument above.",
            possessive(side)
        ),
    ));
    (ctx.request(agent, transcript.len(), messages), reference.map(|(i, _)| i))
}

pub fn build_summary_context(ctx: &TrialContext<'_>, transcript: &Transcript, agent: &AgentConfig, side: Side) -> GenerationRequest {
    let record = transcript
        .history()
        .into_iter()
        .filter(|u| u.side == side)
        .map(|u| match &u.issue {
            Some(issue) => format!("(round {}, {issue}) {}", u.round, u.text),
            None => format!("(opening) {}", u.text),
        })
        .collect::<Vec<_>>()
        .join("\n");
    ctx.request(
        agent,
        transcript.len(),
        vec![
            Message::new("case", ctx.case_context.clone()),
            Message::new(format!("{side} record"), record),
            Message::new(
                "instruction",
                format!("Summarize the {} cumulative arguments for the judge.", possessive(side)),
            ),
        ],
    )
}

pub fn build_judge_request(
    ctx: &TrialContext<'_>,
    summaries: (&Utterance, &Utterance),
    judge: &AgentConfig,
    attempt: u32,
    include_case: bool,
) -> GenerationRequest {
    let mut messages = Vec::new();
    if include_case {
        messages.push(Message::new("case", ctx.case_context.clone()));
    }
    messages.push(Message::new("prosecution summary", summaries.0.text.clone()));
    messages.push(Message::new("defense summary", summaries.1.text.clone()));
    let mut instruction = JUDGE_INSTRUCTION.to_string();
    for reminder in JUDGE_REMINDERS.iter().take(attempt as usize) {
        instruction.push(' ');
        instruction.push_str(reminder);
    }
    messages.push(Message::new("instruction", instruction));
    ctx.request(judge, attempt as usize, messages)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Deliberation {
    pub verdict: Verdict,
    pub attempts: u32,
    pub outputs: Vec<String>,
    pub fallback: bool,
}

/// Asks the judge for a verdict, retrying with stricter format reminders.
/// Falls back to (undecided, 0.0) after [`JUDGE_ATTEMPTS`] unreadable replies.
pub fn deliberate(
    ctx: &TrialContext<'_>,
    summaries: (&Utterance, &Utterance),
    judge: &AgentConfig,
    backend: &dyn Backend,
    include_case: bool,
) -> Result<Deliberation, BackendError> {
    let mut outputs = Vec::new();
    for attempt in 0..JUDGE_ATTEMPTS {
        let request = build_judge_request(ctx, summaries, judge, attempt, include_case);
        let text = backend.generate(&request)?;
        let parsed = parse_verdict(&text);
        outputs.push(text);
        if let Ok(verdict) = parsed {
            return Ok(Deliberation { verdict, attempts: attempt + 1, outputs, fallback: false });
        }
        debug!(attempt, "judge output unparseable");
    }
    warn!(case = %ctx.case.id, "judge produced no readable verdict; recording undecided");
    Ok(Deliberation { verdict: Verdict::undecided_fallback(), attempts: JUDGE_ATTEMPTS, outputs, fallback: true })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialOptions {
    pub rounds: usize,
    pub seed: u64,
    pub mode: Mode,
    pub judge_sees_case: bool,
    pub trial_index: usize,
    pub replication: u32,
}

impl TrialOptions {
    pub fn new(rounds: usize, seed: u64, mode: Mode) -> Self {
        Self { rounds, seed, mode, judge_sees_case: true, trial_index: 0, replication: 0 }
    }
}

struct Speak<'r> {
    backends: &'r BackendRegistry,
}

impl Speak<'_> {
    fn say(&self, agent: &AgentConfig, request: &GenerationRequest) -> Result<String, BackendError> {
        self.backends.get(&agent.backend_id)?.generate(request)
    }
}

/// Runs a full trial. Backend failures end the trial early: the returned
/// record keeps the partial transcript and carries the error message.
pub fn run_trial(
    case: &Case,
    mut prosecution: Team,
    mut defense: Team,
    judge: &AgentConfig,
    backends: &BackendRegistry,
    options: TrialOptions,
) -> Result<TrialRecord, ProtocolError> {
    if let Err(violations) = validate_case(case) {
        let reasons = violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ");
        return Err(ProtocolError::InvalidCase { id: case.id.clone(), reasons });
    }
    if options.rounds == 0 {
        return Err(ProtocolError::NoRounds);
    }
    if prosecution.side != Side::Prosecution {
        return Err(ProtocolError::WrongRole { side: Side::Prosecution, index: 0, role: prosecution.side.into() });
    }
    if defense.side != Side::Defense {
        return Err(ProtocolError::WrongRole { side: Side::Defense, index: 0, role: defense.side.into() });
    }
    prosecution.check_mode(options.mode)?;
    defense.check_mode(options.mode)?;
    if judge.role != Role::Judge {
        return Err(ProtocolError::WrongRole { side: Side::Defense, index: 0, role: judge.role });
    }

    let ctx = TrialContext::new(case, options.seed, &prosecution, &defense);
    let config = TrialConfig {
        mode: options.mode,
        prosecution: TraitSet { traits: prosecution.traits(), ordered: true },
        defense: TraitSet { traits: defense.traits(), ordered: true },
        rounds: options.rounds,
        backend_id: judge.backend_id.clone(),
        seed: options.seed,
        decoding: judge.decoding,
        judge_sees_case: options.judge_sees_case,
        replication: options.replication,
    };
    let mut transcript = Transcript::new(&case.id);
    let mut timing = PhaseTiming::default();
    let speak = Speak { backends };

    let outcome = (|| -> Result<(), BackendError> {
        let started = Instant::now();
        for team in [&mut prosecution, &mut defense] {
            let speaker = team.next_speaker();
            let agent = &team.members[speaker];
            let request = build_opening_context(&ctx, &transcript, agent, team.side);
            let text = speak.say(agent, &request)?;
            transcript.push(Utterance {
                speaker,
                side: team.side,
                phase: Phase::Opening,
                round: 0,
                issue: None,
                text,
                context_ref: None,
            });
        }
        timing.openings_ms = elapsed_ms(started);

        let started = Instant::now();
        for round in 1..=options.rounds {
            for issue in &case.issues {
                for team in [&mut prosecution, &mut defense] {
                    let speaker = team.next_speaker();
                    let agent = &team.members[speaker];
                    let (request, context_ref) =
                        build_argument_context(&ctx, &transcript, agent, team.side, round, &issue.label);
                    let text = speak.say(agent, &request)?;
                    transcript.push(Utterance {
                        speaker,
                        side: team.side,
                        phase: Phase::Argument,
                        round,
                        issue: Some(issue.label.clone()),
                        text,
                        context_ref,
                    });
                }
            }
        }
        timing.arguments_ms = elapsed_ms(started);

        let started = Instant::now();
        for team in [&mut prosecution, &mut defense] {
            let speaker = team.next_speaker();
            let agent = &team.members[speaker];
            let request = build_summary_context(&ctx, &transcript, agent, team.side);
            let text = speak.say(agent, &request)?;
            transcript.push(Utterance {
                speaker,
                side: team.side,
                phase: Phase::Summary,
                round: 0,
                issue: None,
                text,
                context_ref: None,
            });
        }
        timing.summaries_ms = elapsed_ms(started);

        let started = Instant::now();
        let backend = backends.get(&judge.backend_id)?;
        let deliberation = deliberate(
            &ctx,
            (&transcript.summaries[0], &transcript.summaries[1]),
            judge,
            backend.as_ref(),
            options.judge_sees_case,
        )?;
        transcript.verdict = Some(deliberation.verdict);
        transcript.judge_attempts = deliberation.attempts;
        transcript.judge_outputs = deliberation.outputs;
        transcript.judge_fallback = deliberation.fallback;
        timing.deliberation_ms = elapsed_ms(started);
        Ok(())
    })();

    let error = outcome.err().map(|e| {
        warn!(case = %case.id, trial = options.trial_index, error = %e, "trial aborted");
        e.to_string()
    });
    Ok(TrialRecord {
        trial_index: options.trial_index,
        case_id: case.id.clone(),
        case_name: case.name.clone(),
        config,
        transcript,
        error,
        timing,
    })
}

fn elapsed_ms(started: Instant) -> f64 {
    started.elapsed().as_secs_f64() * 1000.0
}

impl TrialConfig {
    /// Rebuilds the teams and judge from the snapshot and runs the trial again.
    pub fn replay(
        &self,
        case: &Case,
        backends: &BackendRegistry,
        trial_index: usize,
    ) -> Result<TrialRecord, ProtocolError> {
        let prosecution = Team::build(self.mode, Side::Prosecution, &self.prosecution, &self.backend_id, self.decoding)?;
        let defense = Team::build(self.mode, Side::Defense, &self.defense, &self.backend_id, self.decoding)?;
        let judge = AgentConfig::judge(&self.backend_id, self.decoding)?;
        let options = TrialOptions {
            rounds: self.rounds,
            seed: self.seed,
            mode: self.mode,
            judge_sees_case: self.judge_sees_case,
            trial_index,
            replication: self.replication,
        };
        run_trial(case, prosecution, defense, &judge, backends, options)
    }
}

/// Courtroom-script rendering of a record, ending with a single
/// `Verdict:` line.
pub fn render_transcript(record: &TrialRecord) -> String {
    let t = &record.transcript;
    let mut out = String::new();
    let _ = writeln!(out, "Trial {}: {}", record.trial_index, record.case_name);
    let _ = writeln!(out, "Mode: {}, Rounds: {}", record.config.mode.as_str(), record.config.rounds);
    let _ = writeln!(out, "Prosecution traits: {}", record.config.prosecution);
    let _ = writeln!(out, "Defense traits: {}", record.config.defense);
    for u in &t.openings {
        let _ = writeln!(out, "\n{} Opening:\n  \"{}\"", title(u.side), u.text);
    }
    let mut current_round = 0;
    for cell in &t.rounds {
        if cell.round != current_round {
            current_round = cell.round;
            let _ = writeln!(out, "\nRound {current_round}");
        }
        let _ = writeln!(out, "\n[{}] Prosecution Argument:\n  \"{}\"", cell.issue, cell.prosecution.text);
        if let Some(d) = &cell.defense {
            let _ = writeln!(out, "\n[{}] Defense Rebuttal:\n  \"{}\"", cell.issue, d.text);
        }
    }
    for u in &t.summaries {
        let _ = writeln!(out, "\n{} Summary:\n  \"{}\"", title(u.side), u.text);
    }
    out.push('\n');
    match (&t.verdict, &record.error) {
        (Some(v), _) => {
            let _ = writeln!(out, "Verdict: {v}");
        }
        (None, Some(err)) => {
            let _ = writeln!(out, "Verdict: unavailable (trial aborted: {err})");
        }
        (None, None) => {
            let _ = writeln!(out, "Verdict: unavailable");
        }
    }
    out
}

fn title(side: Side) -> &'static str {
    match side {
        Side::Prosecution => "Prosecution",
        Side::Defense => "Defense",
    }
}
