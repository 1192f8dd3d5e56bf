use std::fmt::Write as _;

use crate::data::{AgeGroup, Gender, Meta, SkinTone};
use crate::error::{Error, Result};
use crate::objectives::Metrics;

/// Reporting groups in table order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StrataGroup {
    /// Every sample with a region label, pooled across regions.
    AnatomicalRegion,
    SkinColor(SkinTone),
    Gender(Gender),
    AgeGroup(AgeGroup),
}

impl StrataGroup {
    pub fn all() -> Vec<StrataGroup> {
        let mut g = vec![StrataGroup::AnatomicalRegion];
        g.extend(SkinTone::ALL.iter().map(|&t| StrataGroup::SkinColor(t)));
        g.extend(Gender::ALL.iter().map(|&t| StrataGroup::Gender(t)));
        g.extend(AgeGroup::ALL.iter().map(|&t| StrataGroup::AgeGroup(t)));
        g
    }

    pub fn label(&self) -> String {
        match self {
            StrataGroup::AnatomicalRegion => "Anatomical Region".into(),
            StrataGroup::SkinColor(SkinTone::Light) => "Skin Color: Light".into(),
            StrataGroup::SkinColor(SkinTone::Dark) => "Skin Color: Dark".into(),
            StrataGroup::Gender(Gender::Male) => "Gender: Male".into(),
            StrataGroup::Gender(Gender::Female) => "Gender: Female".into(),
            StrataGroup::AgeGroup(a) => format!("Age Group: {a}"),
        }
    }

    pub fn contains(&self, meta: &Meta) -> bool {
        match *self {
            StrataGroup::AnatomicalRegion => meta.region.is_some(),
            StrataGroup::SkinColor(t) => meta.skin_tone == Some(t),
            StrataGroup::Gender(g) => meta.gender == Some(g),
            StrataGroup::AgeGroup(a) => meta.age_group == Some(a),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelLabel {
    pub name: String,
    /// Text shown in the model column.
    pub label: String,
}

/// Per-sample metrics for each reported model, in model order.
#[derive(Clone, Debug)]
pub struct SampleScores {
    pub id: String,
    pub meta: Meta,
    pub scores: Vec<Metrics>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StrataRow {
    pub group: String,
    pub model: String,
    /// `None` when the group has no samples.
    pub metrics: Option<Metrics>,
    pub n_samples: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StrataReport {
    pub rows: Vec<StrataRow>,
    /// Ids of samples dropped for incomplete metadata.
    pub excluded: Vec<String>,
}

pub const CSV_HEADER: [&str; 7] = ["group", "model", "dc", "iou", "precision", "recall", "n_samples"];

impl StrataReport {
    /// Group means per (group, model), group-major in table order.
    pub fn build(samples: &[SampleScores], models: &[ModelLabel]) -> Result<Self> {
        for s in samples {
            if s.scores.len() != models.len() {
                return Err(Error::Data(format!(
                    "sample {} has {} scores for {} models",
                    s.id,
                    s.scores.len(),
                    models.len()
                )));
            }
        }
        let (kept, dropped): (Vec<&SampleScores>, Vec<&SampleScores>) =
            samples.iter().partition(|s| s.meta.is_complete());
        let mut rows = Vec::new();
        for group in StrataGroup::all() {
            let members: Vec<&SampleScores> = kept.iter().copied().filter(|s| group.contains(&s.meta)).collect();
            for (k, model) in models.iter().enumerate() {
                let scores: Vec<Metrics> = members.iter().map(|s| s.scores[k]).collect();
                rows.push(StrataRow {
                    group: group.label(),
                    model: model.label.clone(),
                    metrics: Metrics::mean(&scores),
                    n_samples: members.len(),
                });
            }
        }
        Ok(StrataReport {
            rows,
            excluded: dropped.iter().map(|s| s.id.clone()).collect(),
        })
    }

    pub fn row(&self, group: &str, model: &str) -> Option<&StrataRow> {
        self.rows.iter().find(|r| r.group == group && r.model == model)
    }

    fn fields(row: &StrataRow) -> [String; 7] {
        let m = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
        let a = row.metrics.map(|x| x.as_array());
        [
            row.group.clone(),
            row.model.clone(),
            m(a.map(|a| a[0])),
            m(a.map(|a| a[1])),
            m(a.map(|a| a[2])),
            m(a.map(|a| a[3])),
            row.n_samples.to_string(),
        ]
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER)?;
        for row in &self.rows {
            w.write_record(Self::fields(row))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Data(e.to_string()))
    }

    /// Aligned plain-text table with the same columns as the CSV.
    pub fn to_text(&self) -> String {
        let table: Vec<[String; 7]> = std::iter::once(CSV_HEADER.map(String::from))
            .chain(self.rows.iter().map(Self::fields))
            .collect();
        let widths: Vec<usize> = (0..7)
            .map(|c| table.iter().map(|r| r[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (i, r) in table.iter().enumerate() {
            let cells: Vec<String> = r
                .iter()
                .zip(&widths)
                .map(|(v, &w)| format!("{:<w$}", if v.is_empty() { "-" } else { v }))
                .collect();
            out.push_str(cells.join("  ").trim_end());
            out.push('\n');
            if i == 0 {
                out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * 6));
                out.push('\n');
            }
        }
        let _ = writeln!(out, "excluded_samples: {}", self.excluded.len());
        out
    }
}
