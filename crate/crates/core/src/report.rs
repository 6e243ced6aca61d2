//! Human-readable views of explanations, plans and line rankings.
//!
//! JSON output is the canonical form; markdown and HTML are rendered from
//! the same small block model so the two stay in step.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::explain::{BinCondition, Explanation, FeatureContribution};
use crate::guidance::{ChangeDirection, Condition, ImprovementPlan};
use crate::localize::LocalizationReport;
use crate::numfmt::format_sig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Markdown,
    Html,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "json" => Ok(Self::Json),
            "markdown" | "md" => Ok(Self::Markdown),
            "html" => Ok(Self::Html),
            other => Err(format!(
                "unknown format `{other}` (expected json, markdown or html)"
            )),
        }
    }
}

/// Noun phrase and unit for well-known metric names.
fn metric_phrase(name: &str) -> (String, Option<&'static str>) {
    let known: Option<(&str, Option<&'static str>)> = match name {
        "loc" => Some(("number of lines of code", Some("lines"))),
        "decl_lines" => Some((
            "number of class and method declaration lines",
            Some("lines"),
        )),
        "distinct_devs" => Some(("number of distinct developers", Some("developers"))),
        "ownership" => Some(("proportion of code ownership", None)),
        "blank_lines" => Some(("number of blank lines", Some("lines"))),
        "output_vars" => Some(("number of output variables", Some("variables"))),
        "comment_ratio" => Some(("comment to code ratio", None)),
        "minor_devs" => Some(("number of minor or junior developers", Some("developers"))),
        _ => None,
    };
    match known {
        Some((p, unit)) => (p.to_string(), unit),
        None => (name.replace('_', " "), None),
    }
}

enum Level {
    Low,
    Moderate,
    High,
}

/// Reads a contribution label back into (level, phrase). Token
/// contributions have no bin and yield `None`.
fn factor(c: &FeatureContribution) -> Option<(Level, String)> {
    let bin = BinCondition::from_str(&c.feature).ok()?;
    let level = match (bin.lower, bin.upper) {
        (None, _) => Level::Low,
        (Some(_), None) => Level::High,
        (Some(_), Some(_)) => Level::Moderate,
    };
    Some((level, metric_phrase(&bin.feature).0))
}

fn describe_factor(c: &FeatureContribution) -> String {
    match factor(c) {
        Some((level, phrase)) => {
            let level = match level {
                Level::Low => "low",
                Level::Moderate => "moderate",
                Level::High => "high",
            };
            format!("the {level} {phrase} (`{}`)", c.feature)
        }
        None => format!("the token `{}`", c.feature),
    }
}

fn mitigation(c: &FeatureContribution) -> String {
    match factor(c) {
        Some((Level::High, phrase)) => format!("decreasing the {phrase}"),
        Some((Level::Low, phrase)) => format!("increasing the {phrase}"),
        Some((Level::Moderate, phrase)) => match BinCondition::from_str(&c.feature) {
            Ok(BinCondition {
                lower: Some(lo),
                upper: Some(hi),
                ..
            }) => format!(
                "moving the {phrase} outside the range {} to {}",
                format_sig(lo, 4),
                format_sig(hi, 4)
            ),
            _ => format!("changing the {phrase}"),
        },
        None => format!("reviewing the code that uses `{}`", c.feature),
    }
}

fn join_phrases(items: &[String]) -> String {
    match items {
        [] => String::new(),
        [a] => a.clone(),
        [a, b] => format!("{a} and {b}"),
        [init @ .., last] => format!("{}, and {last}", init.join(", ")),
    }
}

fn percent(x: f64) -> String {
    format!("{}%", (x * 100.0).round() as i64)
}

enum Block {
    Heading(String),
    Para(String),
    Ordered(Vec<String>),
    Table(Vec<String>, Vec<Vec<String>>),
}

fn to_markdown(blocks: &[Block]) -> String {
    let mut out = String::new();
    for (i, b) in blocks.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        match b {
            Block::Heading(t) if i == 0 => writeln!(out, "# {t}").unwrap(),
            Block::Heading(t) => writeln!(out, "## {t}").unwrap(),
            Block::Para(t) => writeln!(out, "{t}").unwrap(),
            Block::Ordered(items) => {
                for (k, item) in items.iter().enumerate() {
                    writeln!(out, "{}. {item}", k + 1).unwrap();
                }
            }
            Block::Table(header, rows) => {
                writeln!(out, "| {} |", header.join(" | ")).unwrap();
                writeln!(out, "|{}", "---|".repeat(header.len())).unwrap();
                for row in rows {
                    writeln!(out, "| {} |", row.join(" | ")).unwrap();
                }
            }
        }
    }
    out
}

fn escape_html(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Escapes text and turns `code` and **bold** spans into tags.
fn html_inline(s: &str) -> String {
    let escaped = escape_html(s);
    let mut out = String::new();
    let mut code = false;
    let mut bold = false;
    let mut rest = escaped.as_str();
    while let Some(pos) = rest.find(['`', '*']) {
        out.push_str(&rest[..pos]);
        if rest[pos..].starts_with("**") {
            out.push_str(if bold { "</strong>" } else { "<strong>" });
            bold = !bold;
            rest = &rest[pos + 2..];
        } else if rest[pos..].starts_with('`') {
            out.push_str(if code { "</code>" } else { "<code>" });
            code = !code;
            rest = &rest[pos + 1..];
        } else {
            out.push('*');
            rest = &rest[pos + 1..];
        }
    }
    out.push_str(rest);
    out
}

fn to_html(blocks: &[Block]) -> String {
    let mut out = String::from("<!DOCTYPE html>\n<html>\n<head><meta charset=\"utf-8\">");
    if let Some(Block::Heading(t)) = blocks.first() {
        write!(out, "<title>{}</title>", escape_html(&t.replace('`', ""))).unwrap();
    }
    out.push_str("</head>\n<body>\n");
    for (i, b) in blocks.iter().enumerate() {
        match b {
            Block::Heading(t) => {
                let tag = if i == 0 { "h1" } else { "h2" };
                writeln!(out, "<{tag}>{}</{tag}>", html_inline(t)).unwrap();
            }
            Block::Para(t) => writeln!(out, "<p>{}</p>", html_inline(t)).unwrap(),
            Block::Ordered(items) => {
                out.push_str("<ol>\n");
                for item in items {
                    writeln!(out, "<li>{}</li>", html_inline(item)).unwrap();
                }
                out.push_str("</ol>\n");
            }
            Block::Table(header, rows) => {
                out.push_str("<table>\n<tr>");
                for h in header {
                    write!(out, "<th>{}</th>", html_inline(h)).unwrap();
                }
                out.push_str("</tr>\n");
                for row in rows {
                    out.push_str("<tr>");
                    for cell in row {
                        write!(out, "<td>{}</td>", html_inline(cell)).unwrap();
                    }
                    out.push_str("</tr>\n");
                }
                out.push_str("</table>\n");
            }
        }
    }
    out.push_str("</body>\n</html>\n");
    out
}

fn render(blocks: &[Block], format: Format) -> String {
    match format {
        Format::Markdown => to_markdown(blocks),
        Format::Html => to_html(blocks),
        Format::Json => unreachable!("json is rendered from the typed value"),
    }
}

pub fn render_explanation_report(explanation: &Explanation, format: Format) -> String {
    if format == Format::Json {
        return explanation.to_json();
    }
    let e = explanation;
    let mut blocks = vec![
        Block::Heading(format!("Why is `{}` predicted as defective?", e.file_id)),
        Block::Para(format!(
            "This file is predicted as defective with a **risk score of {}**.",
            percent(e.risk_score)
        )),
    ];
    if e.contributions.is_empty() {
        blocks.push(Block::Para(
            "No significant local factors were found for this prediction.".into(),
        ));
    } else {
        let defective: Vec<&FeatureContribution> = e.supporting_defective().collect();
        let clean: Vec<&FeatureContribution> = e.supporting_clean().collect();
        let rows = (0..defective.len().max(clean.len()))
            .map(|i| {
                let cell = |list: &[&FeatureContribution]| match list.get(i) {
                    Some(c) => (format!("`{}`", c.feature), format_sig(c.weight, 4)),
                    None => (String::new(), String::new()),
                };
                let (d, dw) = cell(&defective);
                let (c, cw) = cell(&clean);
                vec![d, dw, c, cw]
            })
            .collect();
        blocks.push(Block::Table(
            vec![
                "Supports defective".into(),
                "Weight".into(),
                "Supports clean".into(),
                "Weight".into(),
            ],
            rows,
        ));
        let top: Vec<&FeatureContribution> = defective.iter().take(3).copied().collect();
        if !top.is_empty() {
            let listed: Vec<String> = top
                .iter()
                .enumerate()
                .map(|(i, c)| format!("({}) {}", i + 1, describe_factor(c)))
                .collect();
            blocks.push(Block::Para(format!(
                "The top-{} important factors that support this prediction are {}.",
                top.len(),
                join_phrases(&listed)
            )));
            let actions: Vec<String> = top.iter().map(|c| mitigation(c)).collect();
            blocks.push(Block::Para(format!(
                "Thus, to mitigate the risk of having defects in this file, developers should consider {}.",
                join_phrases(&actions)
            )));
        }
    }
    let mut fidelity = format!(
        "Local surrogate fidelity (weighted R²): {}.",
        format_sig(e.fidelity_r2, 3)
    );
    if e.fidelity_r2 < 0.5 {
        fidelity.push_str(" The surrogate explains this prediction only loosely; treat the factors as indicative.");
    }
    blocks.push(Block::Para(fidelity));
    blocks.push(Block::Para(format!(
        "Generated with seed {} (n_samples = {}, kernel_width = {}, top_k = {}, ridge_lambda = {}).",
        e.seed,
        e.config.n_samples,
        format_sig(e.config.kernel_width, 6),
        e.config.top_k,
        format_sig(e.config.ridge_lambda, 6)
    )));
    render(&blocks, format)
}

/// Threshold as printed; integer-valued features get whole numbers that
/// keep the statement true on integers.
fn threshold_text(c: &Condition, integer: bool, unit: Option<&str>) -> String {
    use crate::guidance::Operator::*;
    let value = if integer {
        let t = c.threshold;
        let v = match c.op {
            Le => t.floor() + 1.0,
            Lt => t.ceil(),
            Gt => t.floor(),
            Ge => t.ceil() - 1.0,
        };
        format!("{}", v as i64)
    } else {
        format_sig(c.threshold, 4)
    };
    match unit {
        Some(u) if value == "1" => format!("{value} {}", u.trim_end_matches('s')),
        Some(u) => format!("{value} {u}"),
        None => value,
    }
}

pub fn render_plan_report(plan: &ImprovementPlan, format: Format) -> String {
    if format == Format::Json {
        return plan.to_json();
    }
    let is_int = |f: &str| plan.integer_features.iter().any(|n| n == f);

    let mut do_items = Vec::new();
    let mut seen: Vec<(String, bool)> = Vec::new();
    for rule in &plan.do_rules {
        for c in &rule.conditions {
            let key = (c.feature.clone(), c.op.is_upper_bound());
            if seen.contains(&key) {
                continue;
            }
            seen.push(key);
            let (phrase, unit) = metric_phrase(&c.feature);
            let amount = threshold_text(c, is_int(&c.feature), unit);
            do_items.push(if c.op.is_upper_bound() {
                format!("decrease the {phrase} to less than {amount}")
            } else {
                format!("increase the {phrase} to more than {amount}")
            });
        }
    }

    let mut blocks = vec![
        Block::Heading(format!("Quality improvement plan for `{}`", plan.file_id)),
        Block::Para(format!(
            "Current risk score: {}. Following the first recommendation changes the risk score to {}.",
            percent(plan.risk_before),
            percent(plan.risk_after_do)
        )),
        Block::Heading("To decrease the risk of having defects, developers should consider".into()),
        Block::Ordered(do_items),
    ];
    if !plan.avoid_actions.is_empty() {
        let items = plan
            .avoid_actions
            .iter()
            .map(|a| {
                let (phrase, unit) = metric_phrase(&a.feature);
                let cond = Condition {
                    feature: a.feature.clone(),
                    op: match a.direction {
                        ChangeDirection::Decreasing => crate::guidance::Operator::Le,
                        ChangeDirection::Increasing => crate::guidance::Operator::Gt,
                    },
                    threshold: a.threshold,
                };
                let amount = threshold_text(&cond, is_int(&a.feature), unit);
                match a.direction {
                    ChangeDirection::Decreasing => {
                        format!("avoid decreasing the {phrase} below {amount}")
                    }
                    ChangeDirection::Increasing => {
                        format!("avoid increasing the {phrase} above {amount}")
                    }
                }
            })
            .collect();
        blocks.push(Block::Heading(
            "To not increase the risk of having defects, developers should".into(),
        ));
        blocks.push(Block::Ordered(items));
    }
    blocks.push(Block::Para(format!(
        "Generated with seed {} (neighborhood_size = {}, max_depth = {}).",
        plan.seed, plan.config.neighborhood_size, plan.config.max_depth
    )));
    render(&blocks, format)
}

pub fn render_localization_report(
    report: &LocalizationReport,
    format: Format,
    top: usize,
) -> String {
    if format == Format::Json {
        return report.to_json();
    }
    let rows = report
        .lines
        .iter()
        .take(top)
        .map(|l| {
            let toks: Vec<String> = l
                .risky_tokens
                .iter()
                .map(|t| format!("`{}`", t.token))
                .collect();
            vec![l.line.to_string(), format_sig(l.score, 4), toks.join(", ")]
        })
        .collect();
    let mut blocks = vec![
        Block::Heading(format!("Most risky lines in `{}`", report.file_id)),
        Block::Table(
            vec!["Line".into(), "Score".into(), "Risky tokens".into()],
            rows,
        ),
    ];
    match &report.metrics {
        Some(m) => {
            let items = m
                .recall_at_effort
                .0
                .iter()
                .map(|(e, r)| {
                    format!(
                        "inspecting the top {} of lines finds {} of defective lines",
                        percent(*e),
                        percent(*r)
                    )
                })
                .collect();
            blocks.push(Block::Heading("Effort-aware recall".into()));
            blocks.push(Block::Ordered(items));
        }
        None => blocks.push(Block::Para(
            "No annotated defective lines; effort metrics are not available.".into(),
        )),
    }
    blocks.push(Block::Para(format!("Generated with seed {}.", report.seed)));
    render(&blocks, format)
}
