//! Acceptance run: one pass/fail line per criterion, nonzero exit if any
//! fails. Criteria 4 to 7 need prepared bundles under `UNIGAP_DATA_DIR`.

mod common;
mod datasets;
mod gradients;
mod structure;
mod theory;
mod variants;

use std::process::ExitCode;
use std::time::Instant;

type Verdict = Result<String, String>;

fn from_problems(detail: String, problems: Vec<String>) -> Verdict {
    if problems.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{detail}; {}", problems.join("; ")))
    }
}

fn check(id: u32, name: &str, run: impl FnOnce() -> Verdict) -> bool {
    let start = Instant::now();
    let verdict = run();
    let secs = start.elapsed().as_secs_f64();
    let (tag, detail) = match &verdict {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    println!("criterion {id} [{tag}] {name}: {detail} ({secs:.1}s)");
    verdict.is_ok()
}

fn lib<T>(r: unigap::Result<T>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let mut passed = Vec::new();
    passed.push(check(1, "gradient suite", || {
        let s = lib(gradients::gradient_suite())?;
        let detail = format!("{} checks, worst {:.2e} in {}", s.checks, s.worst, s.worst_name);
        from_problems(detail, s.failures)
    }));
    passed.push(check(2, "straight-through contract", || {
        let (rows, gap, problems) = lib(gradients::straight_through_contract())?;
        from_problems(format!("{rows} rows one-hot, hard/soft gradient gap {gap:.1e}"), problems)
    }));
    passed.push(check(3, "augmentation invariants", || {
        let (inserted, problems) = lib(structure::augmentation_invariants(1000))?;
        let n = problems.len();
        let shown: Vec<String> = problems.into_iter().take(5).collect();
        let detail = format!("1000 masks, {inserted} inserted nodes, {n} violations");
        from_problems(detail, shown)
    }));

    let cora = datasets::bundle("cora");
    let runs = cora.as_ref().map_err(Clone::clone).and_then(datasets::cora_runs);
    passed.push(check(4, "GCN baseline on Cora", || datasets::baseline(runs.as_ref().map_err(Clone::clone)?)));
    passed.push(check(5, "UniGAP uplift", || {
        datasets::uplift(runs.as_ref().map_err(Clone::clone)?, datasets::bundle("texas"))
    }));
    passed.push(check(6, "over-smoothing trend", || datasets::oversmoothing(cora.as_ref().map_err(Clone::clone)?)));
    passed.push(check(7, "insertion analysis", || {
        datasets::insertion_analysis(runs.as_ref().map_err(Clone::clone)?, cora.as_ref().map_err(Clone::clone)?)
    }));

    passed.push(check(8, "theory suite", || {
        let t = lib(theory::theory_suite())?;
        from_problems(t.lines.join(", "), t.problems)
    }));
    passed.push(check(9, "variant equivalences", || {
        let (lines, problems) = lib(variants::variant_suite())?;
        from_problems(lines.join(", "), problems)
    }));

    let ok = passed.iter().filter(|&&p| p).count();
    println!("acceptance: {ok}/{} criteria passed", passed.len());
    if ok == passed.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
