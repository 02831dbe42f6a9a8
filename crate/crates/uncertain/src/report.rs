//! Table-style perturbation reports: the three canonical metrics
//! (all-syscalls / connection-related / buffer-related perturbed %) per
//! group and per threshold mode, as machine-readable JSON and as an
//! aligned text table.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use uncertain_core::{SyscallCategory, ThresholdMode, ThresholdParams};

use crate::replay::StatsDocument;

/// How report rows are keyed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    /// One row per labeled input (scenario archetype, trace name, …).
    ByArchetype,
    /// One row per syscall category, merged across inputs.
    ByCategory,
}

/// The three metric columns of one (group, mode) cell, as percentages.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricCell {
    /// Perturbed % of interference-set events (for by-category rows, of
    /// that category's events).
    pub all_pct: f64,
    /// Perturbed % of connection-related events in the slice.
    pub connection_pct: f64,
    /// Perturbed % of buffer-carrying events in the slice.
    pub buffer_pct: f64,
}

/// One report row: a group label and one metric cell per mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportRow {
    pub group: String,
    pub cells: BTreeMap<String, MetricCell>,
}

/// The full report document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Report {
    pub grouping: Grouping,
    /// Mode ids in presentation order.
    pub modes: Vec<String>,
    pub rows: Vec<ReportRow>,
}

/// One labeled statistics record feeding the report.
#[derive(Debug, Clone)]
pub struct ReportInput {
    pub group: String,
    pub mode: String,
    pub stats: StatsDocument,
}

/// The three standard threshold columns: static 10%, static 50%, and the
/// dynamic defaults.
pub fn standard_modes() -> Vec<(String, ThresholdMode)> {
    vec![
        ("static_10".into(), ThresholdMode::Static(0.10)),
        ("static_50".into(), ThresholdMode::Static(0.50)),
        ("dynamic".into(), ThresholdMode::Dynamic(ThresholdParams::default())),
    ]
}

fn pct(rate: f64) -> f64 {
    rate * 100.0
}

fn overall_cell(stats: &StatsDocument) -> MetricCell {
    MetricCell {
        all_pct: pct(stats.overall_rate),
        connection_pct: pct(stats.connection_related.rate),
        buffer_pct: pct(stats.buffer_related.rate),
    }
}

fn category_cell(stats: &StatsDocument, category: SyscallCategory) -> MetricCell {
    let cat = stats.by_category.get(&category).copied().unwrap_or_default();
    let buf = stats
        .buffer_by_category
        .get(&category)
        .copied()
        .unwrap_or_default();
    MetricCell {
        all_pct: pct(cat.rate),
        connection_pct: if category == SyscallCategory::NetworkRelated {
            pct(cat.rate)
        } else {
            0.0
        },
        buffer_pct: pct(buf.rate),
    }
}

/// Builds the report. Mode columns appear in first-seen input order;
/// duplicate (group, mode) inputs are merged before rating. Rows are
/// sorted by group label.
pub fn render_report(inputs: &[ReportInput], grouping: Grouping) -> Report {
    let mut modes: Vec<String> = Vec::new();
    for input in inputs {
        if !modes.contains(&input.mode) {
            modes.push(input.mode.clone());
        }
    }

    // Merge stats per (group, mode); for by-category grouping everything
    // lands in one bucket per mode and is re-sliced afterwards.
    let mut merged: BTreeMap<(String, String), StatsDocument> = BTreeMap::new();
    for input in inputs {
        let group = match grouping {
            Grouping::ByArchetype => input.group.clone(),
            Grouping::ByCategory => String::new(),
        };
        merged
            .entry((group, input.mode.clone()))
            .and_modify(|s| s.merge(&input.stats))
            .or_insert_with(|| input.stats.clone());
    }

    let mut rows: Vec<ReportRow> = Vec::new();
    match grouping {
        Grouping::ByArchetype => {
            for ((group, mode), stats) in &merged {
                if let Some(row) = rows.iter_mut().find(|r| &r.group == group) {
                    row.cells.insert(mode.clone(), overall_cell(stats));
                } else {
                    rows.push(ReportRow {
                        group: group.clone(),
                        cells: BTreeMap::from([(mode.clone(), overall_cell(stats))]),
                    });
                }
            }
        }
        Grouping::ByCategory => {
            for category in [
                SyscallCategory::FileRelated,
                SyscallCategory::NetworkRelated,
                SyscallCategory::ProcessRelated,
            ] {
                let mut cells = BTreeMap::new();
                for ((_, mode), stats) in &merged {
                    cells.insert(mode.clone(), category_cell(stats, category));
                }
                rows.push(ReportRow {
                    group: category.to_string(),
                    cells,
                });
            }
        }
    }
    rows.sort_by(|a, b| a.group.cmp(&b.group));
    Report {
        grouping,
        modes,
        rows,
    }
}

impl Report {
    /// Aligned text rendering: one line per group × metric, one column
    /// per mode, cells as `12.34%`.
    pub fn to_text(&self) -> String {
        const METRICS: [&str; 3] = ["all", "connection", "buffer"];
        let group_width = self
            .rows
            .iter()
            .map(|r| r.group.len())
            .chain(["group".len()])
            .max()
            .unwrap_or(5);
        let metric_width = "connection".len();
        let mode_width = self
            .modes
            .iter()
            .map(|m| m.len())
            .chain([7]) // "100.00%"
            .max()
            .unwrap_or(7);

        let mut out = String::new();
        // Header.
        out.push_str(&format!(
            "{:<group_width$}  {:<metric_width$}",
            "group", "metric"
        ));
        for mode in &self.modes {
            out.push_str(&format!("  {mode:>mode_width$}"));
        }
        out.push('\n');
        let total_width = group_width + 2 + metric_width + self.modes.len() * (mode_width + 2);
        out.push_str(&"-".repeat(total_width));
        out.push('\n');

        for row in &self.rows {
            for (i, metric) in METRICS.iter().enumerate() {
                let label = if i == 0 { row.group.as_str() } else { "" };
                out.push_str(&format!("{label:<group_width$}  {metric:<metric_width$}"));
                for mode in &self.modes {
                    let value = row.cells.get(mode).map_or(f64::NAN, |c| match i {
                        0 => c.all_pct,
                        1 => c.connection_pct,
                        _ => c.buffer_pct,
                    });
                    let cell = if value.is_nan() {
                        "-".to_string()
                    } else {
                        format!("{value:.2}%")
                    };
                    out.push_str(&format!("  {cell:>mode_width$}"));
                }
                out.push('\n');
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats_with(in_set: u64, perturbed: u64) -> StatsDocument {
        let mut s = StatsDocument::new(0);
        s.total_events = in_set;
        s.in_set_events = in_set;
        s.gated_events = in_set;
        s.perturbed = perturbed;
        s.finish();
        s
    }

    #[test]
    fn empty_stats_render_a_table_of_zeros() {
        let inputs = vec![ReportInput {
            group: "empty".into(),
            mode: "static_10".into(),
            stats: stats_with(0, 0),
        }];
        let report = render_report(&inputs, Grouping::ByArchetype);
        let cell = report.rows[0].cells["static_10"];
        assert_eq!(cell, MetricCell::default());
        let text = report.to_text();
        assert!(text.contains("0.00%"), "{text}");
    }

    #[test]
    fn ten_of_one_hundred_formats_as_ten_percent() {
        let inputs = vec![ReportInput {
            group: "g".into(),
            mode: "static_10".into(),
            stats: stats_with(100, 10),
        }];
        let report = render_report(&inputs, Grouping::ByArchetype);
        assert_eq!(report.rows[0].cells["static_10"].all_pct, 10.0);
        assert!(report.to_text().contains("10.00%"));
    }

    #[test]
    fn three_modes_make_three_columns() {
        let inputs: Vec<ReportInput> = standard_modes()
            .into_iter()
            .enumerate()
            .map(|(i, (mode, _))| ReportInput {
                group: "same-trace".into(),
                mode,
                stats: stats_with(100, 10 * (i as u64 + 1)),
            })
            .collect();
        let report = render_report(&inputs, Grouping::ByArchetype);
        assert_eq!(report.modes, vec!["static_10", "static_50", "dynamic"]);
        assert_eq!(report.rows.len(), 1);
        assert_eq!(report.rows[0].cells.len(), 3);
        assert_eq!(report.rows[0].cells["dynamic"].all_pct, 30.0);
        // Each metric line carries one cell per mode.
        let text = report.to_text();
        let all_line = text
            .lines()
            .find(|l| l.starts_with("same-trace"))
            .unwrap();
        assert_eq!(all_line.matches('%').count(), 3, "{all_line}");
    }

    #[test]
    fn duplicate_group_mode_inputs_merge() {
        let inputs = vec![
            ReportInput {
                group: "g".into(),
                mode: "dynamic".into(),
                stats: stats_with(50, 25),
            },
            ReportInput {
                group: "g".into(),
                mode: "dynamic".into(),
                stats: stats_with(150, 15),
            },
        ];
        let report = render_report(&inputs, Grouping::ByArchetype);
        // 40 perturbed of 200 in-set.
        assert_eq!(report.rows[0].cells["dynamic"].all_pct, 20.0);
    }

    #[test]
    fn by_category_rows_are_the_three_categories() {
        use crate::scenario::{generate_scenario, Archetype, ScenarioSpec};
        use uncertain_core::PolicySettings;
        let trace = generate_scenario(&ScenarioSpec::new("x", Archetype::Apt, 60), 3);
        let out = crate::replay::replay_trace(
            &trace,
            &PolicySettings {
                mode: ThresholdMode::Static(1.0),
                ..PolicySettings::default()
            },
            3,
        )
        .unwrap();
        let inputs = vec![ReportInput {
            group: "apt".into(),
            mode: "static_100".into(),
            stats: out.stats,
        }];
        let report = render_report(&inputs, Grouping::ByCategory);
        let groups: Vec<&str> = report.rows.iter().map(|r| r.group.as_str()).collect();
        assert_eq!(
            groups,
            vec!["file_related", "network_related", "process_related"]
        );
        // Only the network row reports a connection percentage.
        let file = &report.rows[0].cells["static_100"];
        let net = &report.rows[1].cells["static_100"];
        assert_eq!(file.connection_pct, 0.0);
        assert!(net.connection_pct > 0.0);
        // JSON round-trip.
        let json = serde_json::to_string(&report).unwrap();
        let back: Report = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
    }
}
