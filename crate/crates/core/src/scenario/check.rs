use crate::trace::TRACE_VERSION;

/// Result of comparing a produced trace with a golden one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CheckOutcome {
    Identical,
    /// 1-based line number and both variants; `None` is end of file.
    Diverged {
        line: usize,
        golden: Option<String>,
        actual: Option<String>,
    },
    HeaderMismatch {
        golden: String,
        actual: String,
    },
}

impl CheckOutcome {
    pub fn is_identical(&self) -> bool {
        matches!(self, CheckOutcome::Identical)
    }
}

pub fn check_trace(golden: &str, actual: &str) -> CheckOutcome {
    let g_head = golden.lines().next().unwrap_or("");
    let a_head = actual.lines().next().unwrap_or("");
    if g_head != TRACE_VERSION || a_head != TRACE_VERSION {
        return CheckOutcome::HeaderMismatch { golden: g_head.to_string(), actual: a_head.to_string() };
    }
    let mut g = golden.lines();
    let mut a = actual.lines();
    let mut line = 0;
    loop {
        line += 1;
        match (g.next(), a.next()) {
            (None, None) => return CheckOutcome::Identical,
            (x, y) if x == y => continue,
            (x, y) => {
                return CheckOutcome::Diverged { line, golden: x.map(str::to_string), actual: y.map(str::to_string) }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn outcomes() {
        let g = "portaltrace/1\n0 Drop a=1\n1 Drop a=2\n";
        assert_eq!(check_trace(g, g), CheckOutcome::Identical);
        assert_eq!(
            check_trace(g, "portaltrace/1\n0 Drop a=1\n1 Drop a=3\n"),
            CheckOutcome::Diverged { line: 3, golden: Some("1 Drop a=2".into()), actual: Some("1 Drop a=3".into()) }
        );
        assert_eq!(
            check_trace(g, "portaltrace/1\n0 Drop a=1\n"),
            CheckOutcome::Diverged { line: 3, golden: Some("1 Drop a=2".into()), actual: None }
        );
        assert!(matches!(check_trace(g, "portaltrace/2\n"), CheckOutcome::HeaderMismatch { .. }));
    }
}
