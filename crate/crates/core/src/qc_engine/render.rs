use super::report::StructuredReport;

pub const UNDETERMINED_SUFFIX: &str = "undetermined (insufficient evidence)";

/// One `<field>: <value>` line per template entry, in template order.
/// Fields without a value render as undetermined.
pub fn render_narrative(report: &StructuredReport, template: &[String]) -> String {
    let mut out = String::new();
    for name in template {
        match report.entry(name).filter(|e| e.is_filled()) {
            Some(e) => {
                out.push_str(name);
                out.push_str(": ");
                out.push_str(e.value.trim());
            }
            None => {
                out.push_str(name);
                out.push_str(": ");
                out.push_str(UNDETERMINED_SUFFIX);
            }
        }
        out.push('\n');
    }
    out
}

/// Drops undetermined lines from rendered text.
pub fn strip_undetermined(rendered: &str) -> String {
    rendered
        .lines()
        .filter(|l| !l.trim_end().ends_with(UNDETERMINED_SUFFIX))
        .collect::<Vec<_>>()
        .join("\n")
}
