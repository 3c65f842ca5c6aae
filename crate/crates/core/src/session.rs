//! Live ranking sessions driven by human pairwise answers.
//!
//! A session runs LUCBRank under the Borda reduction: every query compares
//! an arm the engine wants sampled (the left item) with an opponent drawn
//! uniformly at issue time (the right item), and the left item earns reward
//! 1 iff it wins. Queries are issued one engine round at a time; the next
//! round's queries appear once every answer of the current round is in.
//!
//! Each session owns an append-only log of JSON lines. Every state change is
//! a log record, the record is written and synced before it is applied, and
//! the same [`Session::apply`] transition serves live traffic and replay.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bernoulli::ExplorationSchedule;
use crate::engine::{EngineError, EngineState};
use crate::env::{draw_opponent, trial_rng};
use crate::ranking::{ClusterSpec, CoarseRanking};

/// RNG stream reserved for opponent draws.
const OPPONENT_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Item {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    /// Reference to the item's content, e.g. an image URL.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Active,
    Finished,
    Aborted,
}

/// One pairwise query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ticket {
    pub id: u64,
    /// Index of the item being measured.
    pub left: usize,
    /// Index of the opponent.
    pub right: usize,
    /// Inner boundary served, or `None` for the initial pass over all items.
    pub boundary: Option<usize>,
    pub issued_at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    Created {
        session_id: String,
        items: Vec<Item>,
        boundaries: Vec<usize>,
        epsilon: f64,
        schedule: ExplorationSchedule,
        seed: u64,
        at: u64,
    },
    TicketIssued {
        ticket: Ticket,
    },
    Answer {
        ticket_id: u64,
        winner: usize,
        rater: String,
        at: u64,
    },
    Aborted {
        at: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub seq: u64,
    #[serde(flatten)]
    pub event: Event,
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("unknown ticket {0}")]
    UnknownTicket(u64),
    #[error("session is aborted")]
    Aborted,
    #[error("session is finished")]
    Finished,
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error("winner {winner} is not part of ticket {ticket}")]
    BadWinner { ticket: u64, winner: String },
    #[error("log line {line}: {message}")]
    Corrupt { line: usize, message: String },
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
}

impl SessionError {
    pub fn kind(&self) -> &'static str {
        match self {
            SessionError::UnknownSession(_) => "unknown_session",
            SessionError::UnknownTicket(_) => "unknown_ticket",
            SessionError::Aborted => "aborted",
            SessionError::Finished => "finished",
            SessionError::Invalid(_) | SessionError::BadWinner { .. } => "invalid_request",
            SessionError::Corrupt { .. } => "corrupt_log",
            SessionError::Engine(_) => "engine",
            SessionError::Io { .. } => "io",
        }
    }
}

/// Replayable session state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub items: Vec<Item>,
    pub spec: ClusterSpec,
    pub epsilon: f64,
    pub schedule: ExplorationSchedule,
    pub seed: u64,
    pub status: Status,
    pub created_at: u64,
    pub updated_at: u64,
    /// `None` until every initial query is answered.
    pub engine: Option<EngineState>,
    /// Queries of the batch in flight, in engine request order.
    pub batch: Vec<Ticket>,
    /// Rewards received for `batch`, same order.
    pub batch_rewards: Vec<Option<f64>>,
    pub next_ticket: u64,
    pub last_seq: u64,
    pub total_answers: u64,
}

/// What the engine wants measured next: `(left, boundary)` pairs.
type Requests = Vec<(usize, Option<usize>)>;

impl Session {
    fn from_created(seq: u64, event: &Event) -> Result<Self, String> {
        let Event::Created {
            session_id,
            items,
            boundaries,
            epsilon,
            schedule,
            seed,
            at,
        } = event
        else {
            return Err("first record must create the session".into());
        };
        let spec = ClusterSpec::new(boundaries.clone()).map_err(|e| e.to_string())?;
        spec.check_arms(items.len()).map_err(|e| e.to_string())?;
        if seq != 1 {
            return Err(format!("expected sequence 1, found {seq}"));
        }
        Ok(Self {
            id: session_id.clone(),
            items: items.clone(),
            spec,
            epsilon: *epsilon,
            schedule: *schedule,
            seed: *seed,
            status: Status::Active,
            created_at: *at,
            updated_at: *at,
            engine: None,
            batch: Vec::new(),
            batch_rewards: Vec::new(),
            next_ticket: 0,
            last_seq: seq,
            total_answers: 0,
        })
    }

    pub fn num_items(&self) -> usize {
        self.items.len()
    }

    fn batch_complete(&self) -> bool {
        self.batch_rewards.iter().all(Option::is_some)
    }

    /// Requests of the current round: the initial pass over all items, or
    /// the engine's critical arms.
    fn round_plan(&self) -> Requests {
        if self.status != Status::Active {
            return Vec::new();
        }
        match &self.engine {
            None => (0..self.num_items()).map(|a| (a, None)).collect(),
            Some(e) if e.is_done() => Vec::new(),
            Some(e) => e
                .round_requests()
                .into_iter()
                .map(|r| (r.arm, Some(r.boundary)))
                .collect(),
        }
    }

    /// Ticket events for the part of the round not issued yet.
    fn issue_events(&self, now: u64) -> Vec<Event> {
        let plan = self.round_plan();
        plan.into_iter()
            .skip(self.batch.len())
            .enumerate()
            .map(|(n, (left, boundary))| {
                let id = self.next_ticket + n as u64;
                let mut rng = trial_rng(self.seed, OPPONENT_STREAM, id);
                Event::TicketIssued {
                    ticket: Ticket {
                        id,
                        left,
                        right: draw_opponent(self.num_items(), left, &mut rng),
                        boundary,
                        issued_at: now,
                    },
                }
            })
            .collect()
    }

    fn batch_start(&self) -> u64 {
        self.batch.first().map_or(self.next_ticket, |t| t.id)
    }

    /// Position of an outstanding ticket in the batch.
    fn batch_slot(&self, ticket_id: u64) -> Option<usize> {
        let start = self.batch_start();
        (ticket_id >= start && ticket_id < self.next_ticket).then(|| (ticket_id - start) as usize)
    }

    /// The single state transition, used both live and during replay.
    pub fn apply(&mut self, record: &LogRecord) -> Result<(), String> {
        if record.seq != self.last_seq + 1 {
            return Err(format!(
                "sequence gap: expected {}, found {}",
                self.last_seq + 1,
                record.seq
            ));
        }
        match &record.event {
            Event::Created { .. } => return Err("session created twice".into()),
            Event::TicketIssued { ticket } => self.apply_ticket(ticket)?,
            Event::Answer {
                ticket_id,
                winner,
                at,
                ..
            } => self.apply_answer(*ticket_id, *winner, *at)?,
            Event::Aborted { at } => {
                if self.status != Status::Active {
                    return Err("abort of an inactive session".into());
                }
                self.status = Status::Aborted;
                self.updated_at = *at;
            }
        }
        self.last_seq = record.seq;
        Ok(())
    }

    fn apply_ticket(&mut self, ticket: &Ticket) -> Result<(), String> {
        if ticket.id != self.next_ticket {
            return Err(format!("ticket {} issued out of order (expected {})", ticket.id, self.next_ticket));
        }
        let plan = self.round_plan();
        let Some(&(left, boundary)) = plan.get(self.batch.len()) else {
            return Err(format!("ticket {} was not requested by the engine", ticket.id));
        };
        if (left, boundary) != (ticket.left, ticket.boundary) {
            return Err(format!(
                "ticket {} measures item {} for {:?}, engine asked for {} for {:?}",
                ticket.id, ticket.left, ticket.boundary, left, boundary
            ));
        }
        if ticket.right == ticket.left || ticket.right >= self.num_items() {
            return Err(format!("ticket {} has an invalid opponent {}", ticket.id, ticket.right));
        }
        self.batch.push(ticket.clone());
        self.batch_rewards.push(None);
        self.next_ticket += 1;
        Ok(())
    }

    fn apply_answer(&mut self, ticket_id: u64, winner: usize, at: u64) -> Result<(), String> {
        if self.status != Status::Active {
            return Err("answer for an inactive session".into());
        }
        let slot = self
            .batch_slot(ticket_id)
            .ok_or_else(|| format!("ticket {ticket_id} is not outstanding"))?;
        if self.batch_rewards[slot].is_some() {
            return Err(format!("ticket {ticket_id} answered twice"));
        }
        let t = &self.batch[slot];
        if winner != t.left && winner != t.right {
            return Err(format!("winner {winner} is not part of ticket {ticket_id}"));
        }
        self.batch_rewards[slot] = Some(if winner == t.left { 1.0 } else { 0.0 });
        self.total_answers += 1;
        self.updated_at = at;
        // Round complete only once all of the engine's requests were issued.
        if self.batch_complete() && self.batch.len() == self.round_plan().len() {
            let rewards: Vec<f64> = self.batch_rewards.iter().map(|r| r.expect("complete")).collect();
            match self.engine.as_mut() {
                None => {
                    self.engine = Some(
                        EngineState::init(self.spec.clone(), self.epsilon, self.schedule, &rewards)
                            .map_err(|e| e.to_string())?,
                    );
                }
                Some(e) => e.apply_round(&rewards).map_err(|e| e.to_string())?,
            }
            self.batch.clear();
            self.batch_rewards.clear();
            if self.engine.as_ref().is_some_and(EngineState::is_done) {
                self.status = Status::Finished;
            }
        }
        Ok(())
    }

    pub fn outstanding(&self) -> usize {
        self.batch_rewards.iter().filter(|r| r.is_none()).count()
    }

    pub fn ranking(&self) -> CoarseRanking {
        match &self.engine {
            Some(e) => e.ranking(),
            None => CoarseRanking::from_order(&(0..self.num_items()).collect::<Vec<_>>(), &self.spec),
        }
    }

    pub fn summary(&self) -> SessionSummary {
        let stats = self.engine.as_ref().map(EngineState::arms);
        let items = self
            .items
            .iter()
            .enumerate()
            .map(|(a, item)| {
                let (pulls, mean, lower, upper) = match &stats {
                    Some(st) => (st[a].pulls, st[a].mean, st[a].lower, st[a].upper),
                    None => (0, 0.0, 0.0, 1.0),
                };
                ItemState {
                    id: item.id.clone(),
                    label: item.label.clone(),
                    pulls,
                    mean,
                    lower,
                    upper,
                }
            })
            .collect();
        let ranking = self.ranking();
        let active = match &self.engine {
            Some(e) => e.active_boundaries().to_vec(),
            None => (0..self.spec.num_inner()).collect(),
        };
        SessionSummary {
            id: self.id.clone(),
            status: self.status,
            done: self.status == Status::Finished,
            round: self.engine.as_ref().map_or(0, EngineState::round),
            boundaries: self.spec.boundaries().to_vec(),
            active_boundaries: active.iter().map(|&i| self.spec.inner(i)).collect(),
            items,
            clusters: ranking
                .clusters
                .iter()
                .map(|c| c.iter().map(|&a| self.items[a].id.clone()).collect())
                .collect(),
            outstanding_tickets: self.outstanding(),
            total_answers: self.total_answers,
            last_seq: self.last_seq,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemState {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub pulls: u64,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub id: String,
    pub status: Status,
    pub done: bool,
    pub round: u64,
    pub boundaries: Vec<usize>,
    /// Cluster boundaries (as ranks) still being resolved.
    pub active_boundaries: Vec<usize>,
    pub items: Vec<ItemState>,
    /// Item ids per cluster, best cluster first.
    pub clusters: Vec<Vec<String>>,
    pub outstanding_tickets: usize,
    pub total_answers: u64,
    pub last_seq: u64,
}

/// Rebuilds a session from log lines. A final line without a trailing newline
/// that fails to parse is treated as a torn write and ignored.
pub fn replay<R: BufRead>(reader: R) -> Result<Session, SessionError> {
    replay_until(reader, |_| {}).map(|(s, _)| s)
}

fn replay_until<R: BufRead>(
    mut reader: R,
    mut on_record: impl FnMut(&Session),
) -> Result<(Session, u64), SessionError> {
    let mut session: Option<Session> = None;
    let mut line_no = 0;
    let mut valid_len = 0u64;
    let mut buf = String::new();
    loop {
        buf.clear();
        let n = reader.read_line(&mut buf).map_err(|source| SessionError::Io {
            path: "<log>".into(),
            source,
        })?;
        if n == 0 {
            break;
        }
        line_no += 1;
        let complete = buf.ends_with('\n');
        let text = buf.trim();
        if text.is_empty() {
            if complete {
                valid_len += n as u64;
            }
            continue;
        }
        let corrupt = |message: String| SessionError::Corrupt {
            line: line_no,
            message,
        };
        let record: LogRecord = match serde_json::from_str(text) {
            Ok(r) => r,
            Err(_) if !complete => break,
            Err(e) => return Err(corrupt(e.to_string())),
        };
        match session.as_mut() {
            None => session = Some(Session::from_created(record.seq, &record.event).map_err(corrupt)?),
            Some(s) => s.apply(&record).map_err(corrupt)?,
        }
        valid_len += n as u64;
        on_record(session.as_ref().expect("session exists"));
    }
    let session = session.ok_or(SessionError::Corrupt {
        line: 0,
        message: "empty log".into(),
    })?;
    Ok((session, valid_len))
}

pub fn replay_file(path: &Path) -> Result<Session, SessionError> {
    let file = File::open(path).map_err(|source| SessionError::Io {
        path: path.display().to_string(),
        source,
    })?;
    replay(BufReader::new(file))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub seq: u64,
    pub session: Session,
}

/// Milliseconds since the Unix epoch.
pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    pub ticket_timeout: Duration,
    pub static_dir: Option<PathBuf>,
    /// Events between snapshots; 0 disables periodic snapshots.
    pub snapshot_every: u64,
}

impl ServiceConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        Self {
            data_dir: data_dir.into(),
            ticket_timeout: Duration::from_secs(300),
            static_dir: None,
            snapshot_every: 100,
        }
    }
}

pub type Clock = Arc<dyn Fn() -> u64 + Send + Sync>;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreateRequest {
    pub items: Vec<Item>,
    /// Cluster boundaries; the trailing item count may be omitted.
    pub clusters: Vec<usize>,
    #[serde(default)]
    pub epsilon: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn default_delta() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Created {
    pub session_id: String,
    pub tickets: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TicketView {
    pub ticket_id: u64,
    pub left: Item,
    pub right: Item,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum QueryReply {
    Query(TicketView),
    /// Every outstanding query is with some rater; ask again later.
    Wait,
    Done,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnswerRequest {
    pub ticket_id: u64,
    /// Item id of the preferred item.
    pub winner: String,
    #[serde(default)]
    pub rater: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerAck {
    pub ticket_id: u64,
    pub duplicate: bool,
    pub summary: SessionSummary,
}

/// A session plus its open log and in-memory serving marks.
struct Live {
    session: Session,
    log: File,
    log_path: PathBuf,
    /// When each outstanding ticket was last handed out.
    served: HashMap<u64, u64>,
}

pub struct SessionStore {
    config: ServiceConfig,
    clock: Clock,
    sessions: RwLock<HashMap<String, Arc<Mutex<Live>>>>,
}

fn io_error(path: &Path) -> impl FnOnce(io::Error) -> SessionError + '_ {
    move |source| SessionError::Io {
        path: path.display().to_string(),
        source,
    }
}

impl SessionStore {
    /// Opens the data directory and recovers every session found in it.
    pub fn open(config: ServiceConfig) -> Result<Self, SessionError> {
        Self::with_clock(config, Arc::new(now_ms))
    }

    pub fn with_clock(config: ServiceConfig, clock: Clock) -> Result<Self, SessionError> {
        fs::create_dir_all(&config.data_dir).map_err(io_error(&config.data_dir))?;
        let store = Self {
            config,
            clock,
            sessions: RwLock::new(HashMap::new()),
        };
        store.recover()?;
        Ok(store)
    }

    fn log_path(&self, id: &str) -> PathBuf {
        self.config.data_dir.join(format!("{id}.log"))
    }

    fn snapshot_path(&self, id: &str) -> PathBuf {
        self.config.data_dir.join(format!("{id}.snapshot.json"))
    }

    fn recover(&self) -> Result<(), SessionError> {
        let dir = &self.config.data_dir;
        let mut logs: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(io_error(dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "log"))
            .collect();
        logs.sort();
        for path in logs {
            let session = self.load_validated(&path)?;
            let log = OpenOptions::new().append(true).open(&path).map_err(io_error(&path))?;
            let mut live = Live {
                session,
                log,
                log_path: path.clone(),
                served: HashMap::new(),
            };
            // A crash between an answer and its follow-up queries leaves
            // them unissued; issue them now.
            self.issue_pending(&mut live)?;
            let id = live.session.id.clone();
            self.sessions
                .write()
                .expect("session map poisoned")
                .insert(id, Arc::new(Mutex::new(live)));
        }
        Ok(())
    }

    /// Replays a log and checks it against the session's snapshot, if any.
    fn load_validated(&self, path: &Path) -> Result<Session, SessionError> {
        let file = File::open(path).map_err(io_error(path))?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let snapshot: Option<Snapshot> = fs::read_to_string(self.snapshot_path(&stem))
            .ok()
            .and_then(|t| serde_json::from_str(&t).ok());
        let mut matched = None;
        let (session, valid_len) = replay_until(BufReader::new(file), |s| {
            if let Some(snap) = &snapshot {
                if s.last_seq == snap.seq {
                    matched = Some(s == &snap.session);
                }
            }
        })?;
        if let (Some(snap), Some(false) | None) = (&snapshot, matched) {
            log::warn!(
                "snapshot of {} at seq {} disagrees with its log; rewriting",
                session.id,
                snap.seq
            );
            self.write_snapshot(&session)?;
        }
        // Drop a torn final write so later appends start on a fresh line.
        let file = OpenOptions::new().write(true).open(path).map_err(io_error(path))?;
        if file.metadata().map_err(io_error(path))?.len() > valid_len {
            log::warn!("truncating torn record at the end of {}", path.display());
            file.set_len(valid_len).map_err(io_error(path))?;
        }
        Ok(session)
    }

    fn write_snapshot(&self, session: &Session) -> Result<(), SessionError> {
        let path = self.snapshot_path(&session.id);
        let tmp = path.with_extension("json.tmp");
        let snap = Snapshot {
            seq: session.last_seq,
            session: session.clone(),
        };
        fs::write(&tmp, serde_json::to_vec(&snap).expect("snapshot serializes")).map_err(io_error(&tmp))?;
        fs::rename(&tmp, &path).map_err(io_error(&path))
    }

    /// Appends and syncs records, then applies them.
    fn commit(&self, live: &mut Live, events: Vec<Event>) -> Result<(), SessionError> {
        if events.is_empty() {
            return Ok(());
        }
        let mut text = String::new();
        let records: Vec<LogRecord> = events
            .into_iter()
            .enumerate()
            .map(|(n, event)| LogRecord {
                seq: live.session.last_seq + 1 + n as u64,
                event,
            })
            .collect();
        for r in &records {
            text.push_str(&serde_json::to_string(r).expect("record serializes"));
            text.push('\n');
        }
        live.log.write_all(text.as_bytes()).map_err(io_error(&live.log_path))?;
        live.log.sync_data().map_err(io_error(&live.log_path))?;
        let before = live.session.last_seq;
        for r in &records {
            live.session.apply(r).map_err(|message| SessionError::Corrupt {
                line: r.seq as usize,
                message,
            })?;
        }
        let every = self.config.snapshot_every;
        let crossed = every > 0 && live.session.last_seq / every > before / every;
        if crossed || live.session.status != Status::Active {
            self.write_snapshot(&live.session)?;
        }
        Ok(())
    }

    fn issue_pending(&self, live: &mut Live) -> Result<(), SessionError> {
        let events = live.session.issue_events((self.clock)());
        self.commit(live, events)
    }

    fn get(&self, id: &str) -> Result<Arc<Mutex<Live>>, SessionError> {
        self.sessions
            .read()
            .expect("session map poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| SessionError::UnknownSession(id.to_string()))
    }

    pub fn create(&self, req: CreateRequest) -> Result<Created, SessionError> {
        let k = req.items.len();
        if k < 2 {
            return Err(SessionError::Invalid("need at least two items".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for item in &req.items {
            if !seen.insert(item.id.as_str()) {
                return Err(SessionError::Invalid(format!("duplicate item id {:?}", item.id)));
            }
        }
        let mut boundaries = req.clusters.clone();
        if boundaries.last().is_some_and(|&b| b < k) {
            boundaries.push(k);
        }
        let spec = ClusterSpec::new(boundaries).map_err(|e| SessionError::Invalid(e.to_string()))?;
        spec.check_arms(k).map_err(|e| SessionError::Invalid(e.to_string()))?;
        if !(req.epsilon.is_finite() && req.epsilon >= 0.0) {
            return Err(SessionError::Invalid(format!("invalid epsilon {}", req.epsilon)));
        }
        let schedule = ExplorationSchedule::with_delta(req.delta, k, spec.num_clusters())
            .map_err(|e| SessionError::Invalid(e.to_string()))?;
        let seed = req.seed.unwrap_or_else(rand::random);
        let mut sessions = self.sessions.write().expect("session map poisoned");
        let id = loop {
            let candidate = format!("s{:016x}", rand::random::<u64>());
            if !sessions.contains_key(&candidate) && !self.log_path(&candidate).exists() {
                break candidate;
            }
        };
        let now = (self.clock)();
        let created = LogRecord {
            seq: 1,
            event: Event::Created {
                session_id: id.clone(),
                items: req.items,
                boundaries: spec.boundaries().to_vec(),
                epsilon: req.epsilon,
                schedule,
                seed,
                at: now,
            },
        };
        let session = Session::from_created(1, &created.event).map_err(SessionError::Invalid)?;
        let log_path = self.log_path(&id);
        let mut log = OpenOptions::new()
            .create_new(true)
            .append(true)
            .open(&log_path)
            .map_err(io_error(&log_path))?;
        let mut line = serde_json::to_string(&created).expect("record serializes");
        line.push('\n');
        log.write_all(line.as_bytes()).map_err(io_error(&log_path))?;
        let mut live = Live {
            session,
            log,
            log_path,
            served: HashMap::new(),
        };
        self.issue_pending(&mut live)?;
        let tickets = live.session.outstanding();
        sessions.insert(id.clone(), Arc::new(Mutex::new(live)));
        Ok(Created { session_id: id, tickets })
    }

    pub fn next_query(&self, id: &str, _rater: &str) -> Result<QueryReply, SessionError> {
        let entry = self.get(id)?;
        let mut live = entry.lock().expect("session poisoned");
        match live.session.status {
            Status::Aborted => return Err(SessionError::Aborted),
            Status::Finished => return Ok(QueryReply::Done),
            Status::Active => {}
        }
        let now = (self.clock)();
        let timeout = self.config.ticket_timeout.as_millis() as u64;
        let session = &live.session;
        let unanswered: Vec<&Ticket> = session
            .batch
            .iter()
            .zip(&session.batch_rewards)
            .filter(|(_, r)| r.is_none())
            .map(|(t, _)| t)
            .collect();
        let pick = unanswered
            .iter()
            .find(|t| !live.served.contains_key(&t.id))
            .or_else(|| {
                unanswered
                    .iter()
                    .find(|t| now.saturating_sub(live.served[&t.id]) >= timeout)
            })
            .map(|t| (*t).clone());
        let Some(ticket) = pick else {
            return Ok(QueryReply::Wait);
        };
        live.served.insert(ticket.id, now);
        let items = &live.session.items;
        Ok(QueryReply::Query(TicketView {
            ticket_id: ticket.id,
            left: items[ticket.left].clone(),
            right: items[ticket.right].clone(),
            boundary: ticket.boundary.map(|b| live.session.spec.inner(b)),
        }))
    }

    pub fn submit_answer(&self, id: &str, req: AnswerRequest) -> Result<AnswerAck, SessionError> {
        let entry = self.get(id)?;
        let mut live = entry.lock().expect("session poisoned");
        match live.session.status {
            Status::Aborted => return Err(SessionError::Aborted),
            Status::Finished => return Err(SessionError::Finished),
            Status::Active => {}
        }
        let session = &live.session;
        if req.ticket_id >= session.next_ticket {
            return Err(SessionError::UnknownTicket(req.ticket_id));
        }
        let slot = session.batch_slot(req.ticket_id);
        let answered = slot.is_none_or(|s| session.batch_rewards[s].is_some());
        if answered {
            return Ok(AnswerAck {
                ticket_id: req.ticket_id,
                duplicate: true,
                summary: session.summary(),
            });
        }
        let ticket = &session.batch[slot.expect("outstanding")];
        let winner = [ticket.left, ticket.right]
            .into_iter()
            .find(|&a| session.items[a].id == req.winner)
            .ok_or_else(|| SessionError::BadWinner {
                ticket: req.ticket_id,
                winner: req.winner.clone(),
            })?;
        let event = Event::Answer {
            ticket_id: req.ticket_id,
            winner,
            rater: req.rater,
            at: (self.clock)(),
        };
        self.commit(&mut live, vec![event])?;
        live.served.remove(&req.ticket_id);
        self.issue_pending(&mut live)?;
        Ok(AnswerAck {
            ticket_id: req.ticket_id,
            duplicate: false,
            summary: live.session.summary(),
        })
    }

    pub fn state(&self, id: &str) -> Result<SessionSummary, SessionError> {
        let entry = self.get(id)?;
        let live = entry.lock().expect("session poisoned");
        Ok(live.session.summary())
    }

    /// Full replayable state, for inspection and tests.
    pub fn session(&self, id: &str) -> Result<Session, SessionError> {
        let entry = self.get(id)?;
        let live = entry.lock().expect("session poisoned");
        Ok(live.session.clone())
    }

    pub fn abort(&self, id: &str) -> Result<SessionSummary, SessionError> {
        let entry = self.get(id)?;
        let mut live = entry.lock().expect("session poisoned");
        match live.session.status {
            Status::Aborted => return Err(SessionError::Aborted),
            Status::Finished => return Err(SessionError::Finished),
            Status::Active => {}
        }
        let event = Event::Aborted { at: (self.clock)() };
        self.commit(&mut live, vec![event])?;
        Ok(live.session.summary())
    }

    pub fn log_file(&self, id: &str) -> PathBuf {
        self.log_path(id)
    }

    pub fn session_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.sessions.read().expect("session map poisoned").keys().cloned().collect();
        ids.sort();
        ids
    }
}

pub mod http {
    //! JSON-over-HTTP routes for [`SessionStore`].

    use std::sync::Arc;

    use axum::extract::{Path, Query, State};
    use axum::http::StatusCode;
    use axum::response::{IntoResponse, Response};
    use axum::routing::{get, post};
    use axum::{Json, Router};
    use serde::Deserialize;
    use serde_json::json;

    use super::{AnswerRequest, CreateRequest, SessionError, SessionStore};

    impl IntoResponse for SessionError {
        fn into_response(self) -> Response {
            let status = match &self {
                SessionError::UnknownSession(_) | SessionError::UnknownTicket(_) => StatusCode::NOT_FOUND,
                SessionError::Aborted | SessionError::Finished => StatusCode::CONFLICT,
                SessionError::Invalid(_) | SessionError::BadWinner { .. } => StatusCode::BAD_REQUEST,
                SessionError::Corrupt { .. } | SessionError::Engine(_) | SessionError::Io { .. } => {
                    StatusCode::INTERNAL_SERVER_ERROR
                }
            };
            (status, Json(json!({ "error": self.kind(), "message": self.to_string() }))).into_response()
        }
    }

    #[derive(Deserialize)]
    struct RaterQuery {
        #[serde(default)]
        rater: String,
    }

    type Shared = Arc<SessionStore>;

    async fn blocking<T: Send + 'static>(
        f: impl FnOnce() -> Result<T, SessionError> + Send + 'static,
    ) -> Result<T, SessionError> {
        tokio::task::spawn_blocking(f).await.map_err(|e| SessionError::Io {
            path: "<worker>".into(),
            source: std::io::Error::other(e.to_string()),
        })?
    }

    async fn create(State(store): State<Shared>, Json(req): Json<CreateRequest>) -> Response {
        match blocking(move || store.create(req)).await {
            Ok(c) => (StatusCode::CREATED, Json(c)).into_response(),
            Err(e) => e.into_response(),
        }
    }

    async fn query(State(store): State<Shared>, Path(id): Path<String>, Query(q): Query<RaterQuery>) -> Response {
        match blocking(move || store.next_query(&id, &q.rater)).await {
            Ok(r) => Json(r).into_response(),
            Err(e) => e.into_response(),
        }
    }

    async fn answer(State(store): State<Shared>, Path(id): Path<String>, Json(req): Json<AnswerRequest>) -> Response {
        match blocking(move || store.submit_answer(&id, req)).await {
            Ok(a) => Json(a).into_response(),
            Err(e) => e.into_response(),
        }
    }

    async fn state(State(store): State<Shared>, Path(id): Path<String>) -> Response {
        match blocking(move || store.state(&id)).await {
            Ok(s) => Json(s).into_response(),
            Err(e) => e.into_response(),
        }
    }

    async fn abort(State(store): State<Shared>, Path(id): Path<String>) -> Response {
        match blocking(move || store.abort(&id)).await {
            Ok(s) => Json(s).into_response(),
            Err(e) => e.into_response(),
        }
    }

    pub fn router(store: Arc<SessionStore>, static_dir: Option<&std::path::Path>) -> Router {
        let api = Router::new()
            .route("/sessions", post(create))
            .route("/sessions/{id}", get(state))
            .route("/sessions/{id}/query", get(query))
            .route("/sessions/{id}/answers", post(answer))
            .route("/sessions/{id}/abort", post(abort))
            .with_state(store);
        match static_dir {
            Some(dir) => api.nest_service("/static", tower_http::services::ServeDir::new(dir)),
            None => api,
        }
    }
}

/// Runs the HTTP service until interrupted.
pub fn serve(listen: &str, config: ServiceConfig) -> Result<(), SessionError> {
    let _ = env_logger::try_init();
    let static_dir = config.static_dir.clone();
    let store = Arc::new(SessionStore::open(config)?);
    let runtime = tokio::runtime::Runtime::new().map_err(io_error(Path::new("<runtime>")))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(listen)
            .await
            .map_err(io_error(Path::new(listen)))?;
        log::info!("listening on {listen}");
        axum::serve(listener, http::router(store, static_dir.as_deref()))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(io_error(Path::new(listen)))
    })
}
