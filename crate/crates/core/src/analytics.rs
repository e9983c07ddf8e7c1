//! Questionnaire measures and their correlation with takeover counts.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::SessionMetrics;

pub const SCORE_MIN: i64 = 1;
pub const SCORE_MAX: i64 = 7;

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error("session {session_id}: missing rating for item {item_id}")]
    IncompleteRecord { session_id: String, item_id: String },
    #[error("session {session_id}: item {item_id} rated more than once")]
    DuplicateRecord { session_id: String, item_id: String },
    #[error("session {session_id}: item {item_id} score {score} outside 1..=7")]
    ScoreOutOfRange {
        session_id: String,
        item_id: String,
        score: i64,
    },
    #[error("session {session_id}: item {item_id} is not in the schema")]
    UnknownItem { session_id: String, item_id: String },
    #[error("invalid schema: {0}")]
    Schema(String),
    #[error("session {0} has ratings but no log, or a log but no ratings")]
    Join(String),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StatsError {
    #[error("vectors have lengths {x} and {y}; need equal lengths of at least 2")]
    Shape { x: usize, y: usize },
    #[error("correlation undefined: {0} is constant")]
    Constant(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Item {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Measure {
    pub name: String,
    /// Row label in the correlation table, when it differs from `name`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report_label: Option<String>,
    pub items: Vec<Item>,
}

impl Measure {
    pub fn label(&self) -> &str {
        self.report_label.as_deref().unwrap_or(&self.name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureSchema {
    pub measures: Vec<Measure>,
    #[serde(default)]
    pub excluded: Vec<Item>,
}

fn item(id: &str, text: &str) -> Item {
    Item {
        id: id.into(),
        text: text.into(),
    }
}

fn measure(name: &str, label: Option<&str>, items: Vec<Item>) -> Measure {
    Measure {
        name: name.into(),
        report_label: label.map(Into::into),
        items,
    }
}

impl Default for MeasureSchema {
    fn default() -> Self {
        Self {
            measures: vec![
                measure(
                    "Naturalness",
                    None,
                    vec![
                        item("N1", "The agent's responses were human-like"),
                        item("N2", "The words the agent used were natural"),
                        item("N3", "The agent's responses could stimulate my own talk"),
                        item("N4", "The agent understood my talk"),
                    ],
                ),
                measure(
                    "User satisfaction",
                    Some("Enjoyment"),
                    vec![
                        item("S1", "The agent was easy to talk to"),
                        item("S2", "I want to talk with the agent again"),
                        item("S3", "The conversation was smooth"),
                        item("S4", "I was satisfied with the conversation"),
                    ],
                ),
                measure(
                    "Utterance Timing",
                    Some("Timing"),
                    vec![
                        item("T1", "The agent responded at an appropriate frequency"),
                        item("T2", "The agent responses were well timed"),
                        item("T3", "The agent had good pauses in the conversation"),
                    ],
                ),
                measure(
                    "Empathetic listening",
                    Some("Empathy"),
                    vec![
                        item("E1", "The agent displayed empathy towards me"),
                        item("E2", "The agent took the conversation seriously"),
                        item("E3", "The agent was listening intently"),
                        item("E4", "The agent was listening actively"),
                        item("E5", "The agent was accommodating"),
                    ],
                ),
                measure(
                    "Interest",
                    None,
                    vec![
                        item("I1", "The agent showed interest in the conversation"),
                        item("I2", "The agent responded with special care"),
                    ],
                ),
            ],
            excluded: vec![item("O1", "The agent was fully autonomous")],
        }
    }
}

impl MeasureSchema {
    pub fn from_json(text: &str) -> Result<Self, AnalyticsError> {
        let s: Self = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, AnalyticsError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Every item id is unique across measures and the excluded list, and
    /// every measure has at least one item.
    pub fn validate(&self) -> Result<(), AnalyticsError> {
        let mut ids = BTreeSet::new();
        let mut names = BTreeSet::new();
        for m in &self.measures {
            if m.items.is_empty() {
                return Err(AnalyticsError::Schema(format!("measure {} has no items", m.name)));
            }
            if !names.insert(m.name.as_str()) {
                return Err(AnalyticsError::Schema(format!("measure {} repeated", m.name)));
            }
        }
        for it in self.measures.iter().flat_map(|m| &m.items).chain(&self.excluded) {
            if !ids.insert(it.id.as_str()) {
                return Err(AnalyticsError::Schema(format!("item {} listed twice", it.id)));
            }
        }
        Ok(())
    }

    fn is_excluded(&self, id: &str) -> bool {
        self.excluded.iter().any(|i| i.id == id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub session_id: String,
    pub item_id: String,
    pub score: i64,
}

pub fn read_ratings(r: impl Read) -> Result<Vec<RatingRecord>, AnalyticsError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    Ok(rdr.deserialize().collect::<Result<Vec<RatingRecord>, _>>()?)
}

pub fn load_ratings(path: &Path) -> Result<Vec<RatingRecord>, AnalyticsError> {
    read_ratings(std::fs::File::open(path)?)
}

/// Mean score per (session, measure name). Ratings of excluded items are
/// ignored.
pub fn measure_means(
    records: &[RatingRecord],
    schema: &MeasureSchema,
) -> Result<BTreeMap<(String, String), f64>, AnalyticsError> {
    let known: HashMap<&str, &str> = schema
        .measures
        .iter()
        .flat_map(|m| m.items.iter().map(move |i| (i.id.as_str(), m.name.as_str())))
        .collect();

    let mut scores: BTreeMap<&str, HashMap<&str, i64>> = BTreeMap::new();
    for r in records {
        if !(SCORE_MIN..=SCORE_MAX).contains(&r.score) {
            return Err(AnalyticsError::ScoreOutOfRange {
                session_id: r.session_id.clone(),
                item_id: r.item_id.clone(),
                score: r.score,
            });
        }
        let excluded = schema.is_excluded(&r.item_id);
        if !excluded && !known.contains_key(r.item_id.as_str()) {
            return Err(AnalyticsError::UnknownItem {
                session_id: r.session_id.clone(),
                item_id: r.item_id.clone(),
            });
        }
        let session = scores.entry(r.session_id.as_str()).or_default();
        if session.insert(r.item_id.as_str(), r.score).is_some() {
            return Err(AnalyticsError::DuplicateRecord {
                session_id: r.session_id.clone(),
                item_id: r.item_id.clone(),
            });
        }
    }

    let mut out = BTreeMap::new();
    for (session_id, items) in scores {
        for m in &schema.measures {
            let mut sum = 0i64;
            for it in &m.items {
                let Some(s) = items.get(it.id.as_str()) else {
                    return Err(AnalyticsError::IncompleteRecord {
                        session_id: session_id.to_string(),
                        item_id: it.id.clone(),
                    });
                };
                sum += s;
            }
            out.insert(
                (session_id.to_string(), m.name.clone()),
                sum as f64 / m.items.len() as f64,
            );
        }
    }
    Ok(out)
}

/// Pearson product-moment correlation.
pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(StatsError::Shape {
            x: x.len(),
            y: y.len(),
        });
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(StatsError::Constant("x"));
    }
    if syy == 0.0 {
        return Err(StatsError::Constant("y"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub measure: String,
    pub label: String,
    /// Absent when either column is constant.
    pub r: Option<f64>,
    pub mean_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub sessions: usize,
    pub mean_takeovers: f64,
    pub rows: Vec<CorrelationRow>,
}

pub fn takeover_correlation_report(
    metrics: &[SessionMetrics],
    records: &[RatingRecord],
    schema: &MeasureSchema,
) -> Result<CorrelationReport, AnalyticsError> {
    schema.validate()?;
    let means = measure_means(records, schema)?;
    let rated: BTreeSet<&str> = means.keys().map(|(s, _)| s.as_str()).collect();
    let logged: BTreeMap<&str, u64> = metrics
        .iter()
        .map(|m| (m.session_id.as_str(), m.takeover_count))
        .collect();
    if let Some(s) = rated.symmetric_difference(&logged.keys().copied().collect()).next() {
        return Err(AnalyticsError::Join(s.to_string()));
    }

    let sessions: Vec<&str> = logged.keys().copied().collect();
    let x: Vec<f64> = sessions.iter().map(|s| logged[s] as f64).collect();
    let n = sessions.len().max(1) as f64;
    let rows = schema
        .measures
        .iter()
        .map(|m| {
            let y: Vec<f64> = sessions
                .iter()
                .map(|s| means[&(s.to_string(), m.name.clone())])
                .collect();
            let r = match pearson_r(&x, &y) {
                Ok(r) => Some(r),
                Err(StatsError::Constant(_)) => None,
                Err(e) => return Err(e),
            };
            Ok(CorrelationRow {
                measure: m.name.clone(),
                label: m.label().to_string(),
                r,
                mean_score: y.iter().sum::<f64>() / n,
            })
        })
        .collect::<Result<Vec<_>, StatsError>>()?;

    Ok(CorrelationReport {
        sessions: sessions.len(),
        mean_takeovers: x.iter().sum::<f64>() / n,
        rows,
    })
}

impl CorrelationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, AnalyticsError> {
        Ok(serde_json::from_str(text)?)
    }

    /// Two-column table, one row per measure.
    pub fn to_text(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.label.chars().count())
            .max()
            .unwrap_or(0)
            .max("Measure".len());
        let mut out = format!("{:<width$}  r\n", "Measure");
        for row in &self.rows {
            let r = row.r.map_or_else(|| "n/a".to_string(), |r| format!("{r:.2}"));
            out.push_str(&format!("{:<width$}  {r}\n", row.label));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(s: &str, i: &str, score: i64) -> RatingRecord {
        RatingRecord {
            session_id: s.into(),
            item_id: i.into(),
            score,
        }
    }

    fn all_items(schema: &MeasureSchema) -> Vec<String> {
        schema
            .measures
            .iter()
            .flat_map(|m| m.items.iter().map(|i| i.id.clone()))
            .collect()
    }

    fn full_session(s: &str, score: i64) -> Vec<RatingRecord> {
        all_items(&MeasureSchema::default())
            .iter()
            .map(|i| rec(s, i, score))
            .collect()
    }

    #[test]
    fn default_schema_matches_the_questionnaire() {
        let s = MeasureSchema::default();
        s.validate().unwrap();
        let sizes: Vec<usize> = s.measures.iter().map(|m| m.items.len()).collect();
        assert_eq!(sizes, vec![4, 4, 3, 5, 2]);
        let labels: Vec<&str> = s.measures.iter().map(|m| m.label()).collect();
        assert_eq!(labels, vec!["Naturalness", "Enjoyment", "Timing", "Empathy", "Interest"]);
        assert_eq!(s.excluded.len(), 1);
        let back = MeasureSchema::from_json(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn all_sevens_mean_seven() {
        let m = measure_means(&full_session("a", 7), &MeasureSchema::default()).unwrap();
        assert_eq!(m.len(), 5);
        assert!(m.values().all(|&v| v == 7.0));
    }

    #[test]
    fn two_item_interest_mean() {
        let mut r = full_session("a", 4);
        for x in r.iter_mut() {
            match x.item_id.as_str() {
                "I1" => x.score = 5,
                "I2" => x.score = 6,
                _ => {}
            }
        }
        let m = measure_means(&r, &MeasureSchema::default()).unwrap();
        assert_eq!(m[&("a".into(), "Interest".into())], 5.5);
    }

    #[test]
    fn record_errors_name_the_culprit() {
        let schema = MeasureSchema::default();
        let mut r = full_session("a", 4);
        r.retain(|x| x.item_id != "T2");
        match measure_means(&r, &schema) {
            Err(AnalyticsError::IncompleteRecord { session_id, item_id }) => {
                assert_eq!((session_id.as_str(), item_id.as_str()), ("a", "T2"))
            }
            other => panic!("{other:?}"),
        }
        let mut r = full_session("a", 4);
        r.push(rec("a", "N1", 3));
        assert!(matches!(
            measure_means(&r, &schema),
            Err(AnalyticsError::DuplicateRecord { .. })
        ));
        let mut r = full_session("a", 4);
        r[0].score = 8;
        assert!(matches!(
            measure_means(&r, &schema),
            Err(AnalyticsError::ScoreOutOfRange { score: 8, .. })
        ));
        let mut r = full_session("a", 4);
        r.push(rec("a", "Z9", 3));
        assert!(matches!(
            measure_means(&r, &schema),
            Err(AnalyticsError::UnknownItem { .. })
        ));
        let mut r = full_session("a", 4);
        r.push(rec("a", "O1", 1));
        assert!(measure_means(&r, &schema).is_ok());
    }

    #[test]
    fn pearson_fixtures() {
        let same = pearson_r(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!((same - 1.0).abs() < 1e-12);
        let opposite = pearson_r(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap();
        assert!((opposite + 1.0).abs() < 1e-12);
        let r = pearson_r(&[1.0, 2.0, 3.0, 4.0], &[2.0, 1.0, 4.0, 3.0]).unwrap();
        assert!((r - 0.6).abs() < 1e-12);
    }

    #[test]
    fn pearson_errors() {
        assert_eq!(
            pearson_r(&[1.0, 2.0], &[1.0]),
            Err(StatsError::Shape { x: 2, y: 1 })
        );
        assert_eq!(pearson_r(&[1.0], &[1.0]), Err(StatsError::Shape { x: 1, y: 1 }));
        assert_eq!(
            pearson_r(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]),
            Err(StatsError::Constant("x"))
        );
        assert_eq!(
            pearson_r(&[1.0, 2.0, 3.0], &[0.0, 0.0, 0.0]),
            Err(StatsError::Constant("y"))
        );
    }

    #[test]
    fn csv_ratings() {
        let text = "session_id,item_id,score\ns1, N1 ,7\ns1,N2,3\n";
        let r = read_ratings(text.as_bytes()).unwrap();
        assert_eq!(r, vec![rec("s1", "N1", 7), rec("s1", "N2", 3)]);
        assert!(read_ratings("session_id,item_id,score\ns1,N1,high\n".as_bytes()).is_err());
    }
}
