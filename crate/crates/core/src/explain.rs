//! Interest-score dumps.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attention::InterestProfile;
use crate::error::{Error, Result};
use crate::kg::{RelationId, UserId};

/// `relation_id<TAB>name` lines; blank lines and `#` comments are skipped.
pub fn load_relation_names(path: &Path) -> Result<HashMap<RelationId, String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut names = HashMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (id, name) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(path, n + 1, "expected relation_id<TAB>name"))?;
        let id: RelationId = id
            .trim()
            .parse()
            .map_err(|_| Error::parse(path, n + 1, format!("bad relation id {id:?}")))?;
        names.insert(id, name.trim().to_string());
    }
    Ok(names)
}

pub fn relation_label(names: &HashMap<RelationId, String>, relation: RelationId) -> String {
    names.get(&relation).cloned().unwrap_or_else(|| format!("r{relation}"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainEntry {
    pub relation: RelationId,
    pub name: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainRecord {
    pub user: UserId,
    pub cold: bool,
    /// Sorted by descending score, ties by relation id.
    pub relations: Vec<ExplainEntry>,
}

fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

impl ExplainRecord {
    pub fn new(profile: &InterestProfile, names: &HashMap<RelationId, String>) -> Self {
        ExplainRecord {
            user: profile.user,
            cold: profile.cold,
            relations: profile
                .ranked()
                .into_iter()
                .map(|(relation, score)| ExplainEntry {
                    relation,
                    name: relation_label(names, relation),
                    score: round4(score),
                })
                .collect(),
        }
    }

    pub fn json(&self) -> String {
        serde_json::to_string(self).expect("explain record serializes")
    }

    /// `user 3` followed by one `name → score` line per relation.
    pub fn text(&self) -> String {
        let mut s = format!("user {}{}\n", self.user, if self.cold { " (cold)" } else { "" });
        for e in &self.relations {
            writeln!(s, "  {} → {:.4}", e.name, e.score).unwrap();
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sorted_rounded_and_named() {
        let profile = InterestProfile {
            user: 7,
            scores: vec![0.1, 0.822_349, 0.0],
            temperature: 0.1,
            cold: false,
        };
        let names = HashMap::from([(1, "women's pants".to_string())]);
        let rec = ExplainRecord::new(&profile, &names);
        assert_eq!(rec.relations[0].name, "women's pants");
        assert_eq!(rec.relations[0].score, 0.8223);
        assert_eq!(rec.relations[1].name, "r0");
        assert_eq!(rec.relations[2].relation, 2);
        assert!(rec.text().contains("women's pants → 0.8223"));
        let back: ExplainRecord = serde_json::from_str(&rec.json()).unwrap();
        assert_eq!(back, rec);
    }

    #[test]
    fn names_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("names.tsv");
        fs::write(&p, "# id\tname\n0\tincluding\r\n3\tbrand\n").unwrap();
        let names = load_relation_names(&p).unwrap();
        assert_eq!(names[&0], "including");
        assert_eq!(names[&3], "brand");
        fs::write(&p, "0 including\n").unwrap();
        assert!(matches!(load_relation_names(&p), Err(Error::Parse { line: 1, .. })));
    }
}
