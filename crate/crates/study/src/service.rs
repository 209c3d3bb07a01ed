use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use gma_core::agreement::{write_label_csv, Condition, LabelRecord, RatingLabel};

use crate::journal::{Entry, Journal};
use crate::plan::{plan_subsets, PoolEntry, DEFAULT_SUBSET_COUNT, DEFAULT_SUBSET_SIZE};
use crate::StudyError;

const STUDY: &str = "study";
const SESSION: &str = "session";
const LABEL: &str = "label";

fn default_count() -> usize {
    DEFAULT_SUBSET_COUNT
}

fn default_size() -> usize {
    DEFAULT_SUBSET_SIZE
}

fn default_condition() -> Condition {
    Condition::Blurred
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateStudy {
    pub pool: Vec<PoolEntry>,
    #[serde(default = "default_count")]
    pub count: usize,
    #[serde(default = "default_size")]
    pub size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_condition")]
    pub condition: Condition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub study_id: String,
    pub condition: Condition,
    pub subset_count: usize,
    pub subset_size: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub study_id: String,
    pub assessor: String,
    pub answered: usize,
    pub total: usize,
    pub completed: bool,
}

/// The only thing a rater ever sees of the study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemView {
    pub session_id: String,
    pub snippet_id: String,
    pub media_url: String,
    /// 1-based position across all subsets.
    pub position: usize,
    pub total: usize,
    /// 1-based subset ordinal.
    pub subset: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum NextItem {
    Item(ItemView),
    Completed { session_id: String, total: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSubmission {
    pub snippet_id: String,
    pub label: String,
    #[serde(default)]
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    pub session_id: String,
    pub snippet_id: String,
    pub answered: usize,
    pub total: usize,
    pub completed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Export {
    pub csv: String,
    pub rows: usize,
    /// Every session of the study has labelled every item.
    pub complete: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StudyEvent {
    study_id: String,
    condition: Condition,
    seed: u64,
    subset_size: usize,
    subsets: Vec<Vec<String>>,
    media: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SessionEvent {
    session_id: String,
    study_id: String,
    assessor: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LabelEvent {
    session_id: String,
    snippet_id: String,
    label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reason: Option<String>,
    timestamp: String,
}

#[derive(Debug, Clone, PartialEq)]
struct Study {
    event: StudyEvent,
    /// (snippet id, subset ordinal) in presentation order.
    items: Vec<(String, u32)>,
}

#[derive(Debug, Clone, PartialEq)]
struct Session {
    study_id: String,
    assessor: String,
    cursor: usize,
    labelled: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq)]
struct StoredLabel {
    seq: u64,
    session_id: String,
    snippet_id: String,
    label: RatingLabel,
    timestamp: String,
}

/// Everything the journal determines. Two services that replayed the same
/// journal compare equal.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct State {
    studies: BTreeMap<String, Study>,
    sessions: BTreeMap<String, Session>,
    labels: Vec<StoredLabel>,
}

impl State {
    pub fn label_count(&self) -> usize {
        self.labels.len()
    }

    /// Cursor position of every session.
    pub fn cursors(&self) -> BTreeMap<String, usize> {
        self.sessions.iter().map(|(id, s)| (id.clone(), s.cursor)).collect()
    }

    fn apply(&mut self, entry: &Entry) -> Result<(), StudyError> {
        let bad = |e: serde_json::Error| StudyError::Journal(format!("entry {}: {e}", entry.seq));
        match entry.kind.as_str() {
            STUDY => {
                let event: StudyEvent = serde_json::from_value(entry.payload.clone()).map_err(bad)?;
                let items = event
                    .subsets
                    .iter()
                    .enumerate()
                    .flat_map(|(i, s)| s.iter().map(move |id| (id.clone(), i as u32 + 1)))
                    .collect();
                self.studies.insert(event.study_id.clone(), Study { event, items });
            }
            SESSION => {
                let event: SessionEvent = serde_json::from_value(entry.payload.clone()).map_err(bad)?;
                if !self.studies.contains_key(&event.study_id) {
                    return Err(StudyError::Journal(format!(
                        "entry {}: session of unknown study",
                        entry.seq
                    )));
                }
                self.sessions.insert(
                    event.session_id,
                    Session {
                        study_id: event.study_id,
                        assessor: event.assessor,
                        cursor: 0,
                        labelled: BTreeSet::new(),
                    },
                );
            }
            LABEL => {
                let event: LabelEvent = serde_json::from_value(entry.payload.clone()).map_err(bad)?;
                let label = RatingLabel::parse(&event.label, event.reason.as_deref())
                    .map_err(|e| StudyError::Journal(format!("entry {}: {e}", entry.seq)))?;
                let session = self
                    .sessions
                    .get_mut(&event.session_id)
                    .ok_or_else(|| StudyError::Journal(format!("entry {}: label of unknown session", entry.seq)))?;
                session.cursor += 1;
                session.labelled.insert(event.snippet_id.clone());
                self.labels.push(StoredLabel {
                    seq: entry.seq,
                    session_id: event.session_id,
                    snippet_id: event.snippet_id,
                    label,
                    timestamp: event.timestamp,
                });
            }
            other => {
                return Err(StudyError::Journal(format!(
                    "entry {}: unknown type {other:?}",
                    entry.seq
                )))
            }
        }
        Ok(())
    }
}

struct Inner {
    state: State,
    journal: Option<Journal>,
    next_seq: u64,
}

impl Inner {
    fn commit(&mut self, kind: &str, payload: Value) -> Result<(), StudyError> {
        let seq = match &mut self.journal {
            Some(j) => j.append(kind, payload.clone())?,
            None => self.next_seq,
        };
        self.next_seq = seq + 1;
        self.state.apply(&Entry {
            seq,
            kind: kind.to_owned(),
            payload,
        })
    }
}

/// Stable, opaque id of the one session an assessor has in a study.
pub fn session_id(study_id: &str, assessor: &str) -> String {
    let digest = Sha256::new()
        .chain_update(study_id.as_bytes())
        .chain_update([0u8])
        .chain_update(assessor.as_bytes())
        .finalize();
    hex::encode(&digest[..8])
}

fn validate_assessor(code: &str) -> Result<(), StudyError> {
    let ok =
        !code.is_empty() && code.len() <= 64 && code.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
    if ok {
        Ok(())
    } else {
        Err(StudyError::InvalidRequest(format!(
            "assessor code {code:?} must be 1-64 of [A-Za-z0-9_-]"
        )))
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// All operations take one lock, so each is atomic and journal order equals
/// application order.
pub struct StudyService {
    inner: Mutex<Inner>,
    media_root: Option<PathBuf>,
}

impl StudyService {
    /// A service without persistence.
    pub fn in_memory() -> Self {
        StudyService {
            inner: Mutex::new(Inner {
                state: State::default(),
                journal: None,
                next_seq: 1,
            }),
            media_root: None,
        }
    }

    /// Opens or creates the journal at `path` and replays it.
    pub fn open(path: &Path) -> Result<Self, StudyError> {
        let (journal, replay) = Journal::open(path)?;
        let mut state = State::default();
        for entry in &replay.entries {
            state.apply(entry)?;
        }
        Ok(StudyService {
            inner: Mutex::new(Inner {
                state,
                next_seq: journal.next_seq(),
                journal: Some(journal),
            }),
            media_root: None,
        })
    }

    /// Directory that relative media paths are resolved against.
    pub fn with_media_root(mut self, root: PathBuf) -> Self {
        self.media_root = Some(root);
        self
    }

    pub fn snapshot(&self) -> State {
        self.inner.lock().unwrap().state.clone()
    }

    pub fn create_study(&self, req: CreateStudy) -> Result<StudySummary, StudyError> {
        let ids: Vec<String> = req.pool.iter().map(|e| e.id.clone()).collect();
        let subsets = plan_subsets(&ids, req.count, req.size, req.seed)?;
        let chosen: BTreeSet<&String> = subsets.iter().flatten().collect();
        let media = req
            .pool
            .iter()
            .filter(|e| chosen.contains(&e.id))
            .map(|e| (e.id.clone(), e.media.clone()))
            .collect();
        let mut inner = self.inner.lock().unwrap();
        let study_id = format!("study-{}", inner.state.studies.len() + 1);
        let event = StudyEvent {
            study_id: study_id.clone(),
            condition: req.condition,
            seed: req.seed,
            subset_size: req.size,
            subsets,
            media,
        };
        inner.commit(STUDY, serde_json::to_value(&event).expect("serialisable"))?;
        Ok(StudySummary {
            study_id,
            condition: req.condition,
            subset_count: req.count,
            subset_size: req.size,
            total: req.count * req.size,
        })
    }

    /// The subsets of a study in presentation order.
    pub fn plan(&self, study_id: &str) -> Result<Vec<Vec<String>>, StudyError> {
        let inner = self.inner.lock().unwrap();
        let study = inner
            .state
            .studies
            .get(study_id)
            .ok_or_else(|| StudyError::UnknownStudy(study_id.to_owned()))?;
        Ok(study.event.subsets.clone())
    }

    /// Creates the assessor's session or returns the existing one.
    pub fn create_session(&self, study_id: &str, assessor: &str) -> Result<SessionView, StudyError> {
        let mut inner = self.inner.lock().unwrap();
        if !inner.state.studies.contains_key(study_id) {
            return Err(StudyError::UnknownStudy(study_id.to_owned()));
        }
        validate_assessor(assessor)?;
        let id = session_id(study_id, assessor);
        if !inner.state.sessions.contains_key(&id) {
            let event = SessionEvent {
                session_id: id.clone(),
                study_id: study_id.to_owned(),
                assessor: assessor.to_owned(),
            };
            inner.commit(SESSION, serde_json::to_value(&event).expect("serialisable"))?;
        }
        Ok(session_view(&inner.state, &id))
    }

    pub fn session(&self, session_id: &str) -> Result<SessionView, StudyError> {
        let inner = self.inner.lock().unwrap();
        if !inner.state.sessions.contains_key(session_id) {
            return Err(StudyError::UnknownSession(session_id.to_owned()));
        }
        Ok(session_view(&inner.state, session_id))
    }

    pub fn next_item(&self, session_id: &str) -> Result<NextItem, StudyError> {
        let inner = self.inner.lock().unwrap();
        let session = inner
            .state
            .sessions
            .get(session_id)
            .ok_or_else(|| StudyError::UnknownSession(session_id.to_owned()))?;
        let study = &inner.state.studies[&session.study_id];
        Ok(match study.items.get(session.cursor) {
            None => NextItem::Completed {
                session_id: session_id.to_owned(),
                total: study.items.len(),
            },
            Some((id, subset)) => NextItem::Item(ItemView {
                session_id: session_id.to_owned(),
                snippet_id: id.clone(),
                media_url: format!("/media/{id}?study={}", session.study_id),
                position: session.cursor + 1,
                total: study.items.len(),
                subset: *subset,
            }),
        })
    }

    /// Accepts a label for the current item. The journal entry is on disk
    /// before this returns.
    pub fn submit_label(&self, session_id: &str, sub: &LabelSubmission) -> Result<Ack, StudyError> {
        let mut inner = self.inner.lock().unwrap();
        let session = inner
            .state
            .sessions
            .get(session_id)
            .ok_or_else(|| StudyError::UnknownSession(session_id.to_owned()))?;
        if session.labelled.contains(&sub.snippet_id) {
            return Err(StudyError::AlreadyLabelled(sub.snippet_id.clone()));
        }
        let study = &inner.state.studies[&session.study_id];
        if study.items.get(session.cursor).map(|(id, _)| id) != Some(&sub.snippet_id) {
            return Err(StudyError::OutOfOrder {
                got: sub.snippet_id.clone(),
            });
        }
        let label = RatingLabel::parse(&sub.label, sub.reason.as_deref())
            .map_err(|e| StudyError::InvalidLabel(e.to_string()))?;
        let event = LabelEvent {
            session_id: session_id.to_owned(),
            snippet_id: sub.snippet_id.clone(),
            label: label.code().to_owned(),
            reason: label.reason().map(|r| r.as_str().to_owned()),
            timestamp: now(),
        };
        inner.commit(LABEL, serde_json::to_value(&event).expect("serialisable"))?;
        let view = session_view(&inner.state, session_id);
        Ok(Ack {
            session_id: session_id.to_owned(),
            snippet_id: sub.snippet_id.clone(),
            answered: view.answered,
            total: view.total,
            completed: view.completed,
        })
    }

    /// Label records of a study ordered by assessor, then submission order.
    pub fn records(&self, study_id: &str) -> Result<(Vec<LabelRecord>, bool), StudyError> {
        let inner = self.inner.lock().unwrap();
        let state = &inner.state;
        let study = state
            .studies
            .get(study_id)
            .ok_or_else(|| StudyError::UnknownStudy(study_id.to_owned()))?;
        let subset_of: BTreeMap<&str, u32> = study.items.iter().map(|(id, s)| (id.as_str(), *s)).collect();
        let mut rows: Vec<(&str, u64, LabelRecord)> = state
            .labels
            .iter()
            .filter_map(|l| {
                let session = &state.sessions[&l.session_id];
                (session.study_id == study_id).then(|| {
                    (
                        session.assessor.as_str(),
                        l.seq,
                        LabelRecord {
                            snippet_id: l.snippet_id.clone(),
                            assessor: session.assessor.clone(),
                            condition: study.event.condition,
                            subset: subset_of[l.snippet_id.as_str()],
                            label: l.label,
                            timestamp: l.timestamp.clone(),
                        },
                    )
                })
            })
            .collect();
        rows.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let sessions: Vec<&Session> = state.sessions.values().filter(|s| s.study_id == study_id).collect();
        let complete = !sessions.is_empty() && sessions.iter().all(|s| s.cursor == study.items.len());
        Ok((rows.into_iter().map(|r| r.2).collect(), complete))
    }

    pub fn export(&self, study_id: &str) -> Result<Export, StudyError> {
        let (records, complete) = self.records(study_id)?;
        Ok(Export {
            csv: write_label_csv(&records),
            rows: records.len(),
            complete,
        })
    }

    /// File backing a snippet's media. Without a study the snippet must map to
    /// the same file in every study that has it.
    pub fn media_path(&self, snippet_id: &str, study_id: Option<&str>) -> Result<PathBuf, StudyError> {
        let inner = self.inner.lock().unwrap();
        let studies = &inner.state.studies;
        let path = match study_id {
            Some(s) => studies
                .get(s)
                .ok_or_else(|| StudyError::UnknownStudy(s.to_owned()))?
                .event
                .media
                .get(snippet_id)
                .cloned(),
            None => {
                let found: BTreeSet<&String> = studies.values().filter_map(|s| s.event.media.get(snippet_id)).collect();
                if found.len() > 1 {
                    return Err(StudyError::AmbiguousMedia(snippet_id.to_owned()));
                }
                found.into_iter().next().cloned()
            }
        };
        let path = PathBuf::from(path.ok_or_else(|| StudyError::UnknownSnippet(snippet_id.to_owned()))?);
        Ok(match &self.media_root {
            Some(root) if path.is_relative() => root.join(path),
            _ => path,
        })
    }
}

fn session_view(state: &State, id: &str) -> SessionView {
    let s = &state.sessions[id];
    let total = state.studies[&s.study_id].items.len();
    SessionView {
        session_id: id.to_owned(),
        study_id: s.study_id.clone(),
        assessor: s.assessor.clone(),
        answered: s.cursor,
        total,
        completed: s.cursor == total,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request(n: usize, count: usize, size: usize) -> CreateStudy {
        CreateStudy {
            pool: (0..n)
                .map(|i| PoolEntry {
                    id: format!("s{i:03}"),
                    media: format!("media/s{i:03}.mp4"),
                })
                .collect(),
            count,
            size,
            seed: 5,
            condition: Condition::Blurred,
        }
    }

    fn label(id: &str, code: &str) -> LabelSubmission {
        LabelSubmission {
            snippet_id: id.into(),
            label: code.into(),
            reason: None,
        }
    }

    fn current(svc: &StudyService, session: &str) -> ItemView {
        match svc.next_item(session).unwrap() {
            NextItem::Item(item) => item,
            other => panic!("expected an item, got {other:?}"),
        }
    }

    #[test]
    fn session_walks_the_plan() {
        let svc = StudyService::in_memory();
        let study = svc.create_study(request(20, 2, 3)).unwrap();
        assert_eq!(study.total, 6);
        let plan = svc.plan(&study.study_id).unwrap();
        let s = svc.create_session(&study.study_id, "A1").unwrap();
        assert_eq!((s.answered, s.completed), (0, false));

        let first = current(&svc, &s.session_id);
        assert_eq!(first, current(&svc, &s.session_id));
        assert_eq!((first.position, first.subset), (1, 1));
        assert_eq!(first.snippet_id, plan[0][0]);

        for (i, id) in plan.iter().flatten().enumerate() {
            let item = current(&svc, &s.session_id);
            assert_eq!(&item.snippet_id, id);
            assert_eq!(item.subset, (i / 3 + 1) as u32);
            let ack = svc.submit_label(&s.session_id, &label(id, "FM+")).unwrap();
            assert_eq!(ack.answered, i + 1);
        }
        assert!(matches!(
            svc.next_item(&s.session_id).unwrap(),
            NextItem::Completed { total: 6, .. }
        ));
        assert!(svc.session(&s.session_id).unwrap().completed);
        let again = svc.create_session(&study.study_id, "A1").unwrap();
        assert_eq!(again.session_id, s.session_id);
        assert!(again.completed);
    }

    #[test]
    fn submission_errors() {
        let svc = StudyService::in_memory();
        let study = svc.create_study(request(10, 1, 4)).unwrap();
        let s = svc.create_session(&study.study_id, "A1").unwrap().session_id;
        let plan = svc.plan(&study.study_id).unwrap();
        let (a, b) = (&plan[0][0], &plan[0][1]);

        assert!(matches!(
            svc.submit_label(&s, &label(b, "FM+")),
            Err(StudyError::OutOfOrder { .. })
        ));
        assert!(matches!(
            svc.submit_label(&s, &label(a, "maybe")),
            Err(StudyError::InvalidLabel(_))
        ));
        let with_reason = LabelSubmission {
            reason: Some("asleep".into()),
            ..label(a, "NA")
        };
        assert!(matches!(
            svc.submit_label(&s, &with_reason),
            Err(StudyError::InvalidLabel(_))
        ));
        svc.submit_label(&s, &label(a, "FM-")).unwrap();
        assert!(matches!(
            svc.submit_label(&s, &label(a, "FM+")),
            Err(StudyError::AlreadyLabelled(_))
        ));
        assert!(matches!(
            svc.submit_label("nope", &label(a, "FM+")),
            Err(StudyError::UnknownSession(_))
        ));
        assert!(matches!(
            svc.create_session("study-9", "A1"),
            Err(StudyError::UnknownStudy(_))
        ));
        assert!(matches!(
            svc.create_session(&study.study_id, "a b"),
            Err(StudyError::InvalidRequest(_))
        ));
        assert!(matches!(
            svc.create_study(request(5, 3, 2)),
            Err(StudyError::PoolTooSmall { .. })
        ));
        assert_eq!(svc.session(&s).unwrap().answered, 1);
    }

    #[test]
    fn export_orders_by_assessor_then_sequence() {
        let svc = StudyService::in_memory();
        let study = svc.create_study(request(10, 1, 3)).unwrap();
        let plan = svc.plan(&study.study_id).unwrap().concat();
        let b = svc.create_session(&study.study_id, "B").unwrap().session_id;
        let a = svc.create_session(&study.study_id, "A").unwrap().session_id;
        for id in &plan[..2] {
            svc.submit_label(&b, &label(id, "FM+")).unwrap();
            svc.submit_label(&a, &label(id, "FM-")).unwrap();
        }
        let (records, complete) = svc.records(&study.study_id).unwrap();
        assert!(!complete);
        let order: Vec<(&str, &str)> = records
            .iter()
            .map(|r| (r.assessor.as_str(), r.snippet_id.as_str()))
            .collect();
        assert_eq!(
            order,
            vec![
                ("A", plan[0].as_str()),
                ("A", &plan[1]),
                ("B", &plan[0]),
                ("B", &plan[1])
            ]
        );
        let export = svc.export(&study.study_id).unwrap();
        assert_eq!(export.rows, 4);
        assert_eq!(export, svc.export(&study.study_id).unwrap());
    }

    #[test]
    fn media_lookup() {
        let svc = StudyService::in_memory().with_media_root(PathBuf::from("/srv"));
        let study = svc.create_study(request(10, 1, 3)).unwrap();
        let id = svc.plan(&study.study_id).unwrap()[0][0].clone();
        let p = svc.media_path(&id, Some(&study.study_id)).unwrap();
        assert_eq!(p, PathBuf::from(format!("/srv/media/{id}.mp4")));
        assert_eq!(svc.media_path(&id, None).unwrap(), p);
        let mut other = request(10, 1, 3);
        for e in &mut other.pool {
            e.media = format!("visible/{}.mp4", e.id);
        }
        svc.create_study(other).unwrap();
        assert!(matches!(svc.media_path(&id, None), Err(StudyError::AmbiguousMedia(_))));
        assert!(matches!(
            svc.media_path("zzz", None),
            Err(StudyError::UnknownSnippet(_))
        ));
    }
}
