//! Dispatch of a parsed job to the estimators, producing a JSON result and
//! CSV tables.

use hcap_core::bmd::{bmd_hcap, BmdJob};
use hcap_core::geometry::{validate_hull, Point};
use hcap_core::hcap::{hcap_exact, hcap_integral, hcap_vertical, HcapEstimate, HcapJob};
use hcap_core::measures::{beurling_check, bl_distance_surrogate, hitting_probe, regularity_probe, TestDictionary};
use hcap_core::sampler::{sample_harmonic_measure, Domain, ExitTag, WalkConfig};
use hcap_core::sequences::{
    check_kernel_convergence, continuity_experiment, family_by_name, monotone_limit, weak_convergence_experiment,
    ConvergenceReport, HullFamily,
};
use hcap_core::stats::Estimate;
use hcap_core::stream::Stream;
use serde::Serialize;
use serde_json::{json, Value};

use crate::job::{Command, ExperimentJob, ExperimentKind, JobFile};
use crate::CliError;

const TAG_HM: u64 = 0x484d;

/// A CSV artifact.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(name: &str, header: &[&'static str]) -> Self {
        Table { name: name.to_string(), header: header.to_vec(), rows: Vec::new() }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub result: Value,
    pub tables: Vec<Table>,
    /// Set when the run completed but its output cannot be trusted.
    pub numerical_failure: Option<String>,
    /// Set when the run completed and the input failed the check it asked
    /// for (a hull that is not an H-hull).
    pub validation_failure: Option<String>,
}

impl Outcome {
    fn ok(result: Value, tables: Vec<Table>) -> Self {
        Outcome { result, tables, numerical_failure: None, validation_failure: None }
    }

    fn flag_if(mut self, flagged: bool, what: &str) -> Self {
        if flagged && self.numerical_failure.is_none() {
            self.numerical_failure = Some(format!("{what}: truncated fraction above 1e-3 or failed chain invariants"));
        }
        self
    }
}

fn f(x: f64) -> String {
    format!("{x}")
}

fn opt(x: Option<f64>) -> String {
    x.map(f).unwrap_or_default()
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("result serializes")
}

pub fn execute(job: &JobFile) -> Result<Outcome, CliError> {
    let cfg = job.walk_config();
    match &job.job {
        Command::Validate { hull, resolution } => {
            let d = validate_hull(hull, *resolution)?;
            let mut out = Outcome::ok(to_value(&d), Vec::new());
            if !d.passed {
                out.validation_failure = Some(format!(
                    "not an H-hull at resolution {resolution}: {}",
                    d.reason.clone().unwrap_or_default()
                ));
            }
            Ok(out)
        }
        Command::Hcap { hull, eta, half_width, xi_nodes, n_per_node, vertical_heights, n_vertical } => {
            let est = hcap_integral(&HcapJob {
                hull: hull.clone(),
                eta: *eta,
                half_width: *half_width,
                xi_nodes: *xi_nodes,
                n_per_node: *n_per_node,
                cfg,
            })?;
            let mut tables = vec![node_table(&est)];
            let mut flagged = est.estimate.flagged;
            let vertical = if vertical_heights.is_empty() {
                Vec::new()
            } else {
                hcap_vertical(hull, vertical_heights, *n_vertical, &cfg)?
            };
            if !vertical.is_empty() {
                let mut t = Table::new("vertical.csv", &["y", "estimate", "stderr", "n", "truncated"]);
                for (y, e) in vertical_heights.iter().zip(&vertical) {
                    flagged |= e.flagged;
                    t.push(vec![f(*y), f(e.mean), f(e.stderr), e.n.to_string(), e.truncated.to_string()]);
                }
                tables.push(t);
            }
            let result = json!({
                "hcap": est,
                "oracle": hcap_exact(hull),
                "vertical": vertical,
            });
            Ok(Outcome::ok(result, tables).flag_if(flagged, "hcap"))
        }
        Command::BmdHcap { hull, setup, eta, half_width, xi_nodes, n_per_node, n_chain } => {
            let est = bmd_hcap(&BmdJob {
                hull: hull.clone(),
                setup: setup.clone(),
                eta: *eta,
                half_width: *half_width,
                xi_nodes: *xi_nodes,
                n_per_node: *n_per_node,
                n_chain: *n_chain,
                cfg,
            })?;
            let c = &est.chain;
            let mut p = Table::new("chain.csv", &["from", "to", "p", "p_stderr", "m"]);
            for (i, row) in c.p.iter().enumerate() {
                for (k, &v) in row.iter().enumerate() {
                    let m = if i > 0 && k > 0 { c.m.get(i - 1).and_then(|r| r.get(k - 1)).copied() } else { None };
                    p.push(vec![state(i), state(k), f(v), f(c.p_stderr[i][k]), opt(m)]);
                }
            }
            let mut d = Table::new(
                "darned.csv",
                &["slit", "darned_value", "darned_stderr", "nu_integral", "nu_stderr", "acceptance"],
            );
            let darned_se = c.darned_stderr();
            for j in 0..c.darned_values.len() {
                d.push(vec![
                    j.to_string(),
                    f(c.darned_values[j]),
                    f(darned_se[j]),
                    f(c.nu_integrals[j].mean),
                    f(c.nu_integrals[j].stderr),
                    f(c.acceptance[j]),
                ]);
            }
            let flagged = est.hcap.estimate.flagged;
            Ok(Outcome::ok(to_value(&est), vec![node_table(&est.hcap), p, d]).flag_if(flagged, "bmd-hcap"))
        }
        Command::HmSample { hull, slits, z, n } => {
            let domain = Domain::new(hull, slits);
            let mu = sample_harmonic_measure(&domain, *z, *n, &cfg, Stream::root(cfg.seed).child(TAG_HM))?;
            let mut t = Table::new("samples.csv", &["x", "y", "tag", "chunk", "steps"]);
            let mut counts = std::collections::BTreeMap::new();
            for r in &mu.samples {
                *counts.entry(r.tag.to_string()).or_insert(0u64) += 1;
                t.push(vec![f(r.point.re), f(r.point.im), r.tag.to_string(), r.chunk.to_string(), r.steps.to_string()]);
            }
            let result = json!({
                "requested": mu.requested,
                "accepted": mu.len(),
                "truncated": mu.truncated,
                "truncated_fraction": mu.truncated_fraction,
                "flagged": mu.flagged,
                "counts_by_piece": counts,
                "hull_mass": mu.mass_where(|r| r.tag == ExitTag::HullF),
            });
            Ok(Outcome::ok(result, vec![t]).flag_if(mu.flagged, "hm-sample"))
        }
        Command::HmDistance { hull_a, hull_b, slits, z, n, dictionary } => {
            let dict = match dictionary {
                Some(d) => d.clone(),
                None => TestDictionary::default_for(hull_b, 4.0)?,
            };
            let root = Stream::root(cfg.seed).child(TAG_HM);
            let mu = sample_harmonic_measure(&Domain::new(hull_a, slits), *z, *n, &cfg, root.child(0))?;
            let nu = sample_harmonic_measure(&Domain::new(hull_b, slits), *z, *n, &cfg, root.child(1))?;
            let d = bl_distance_surrogate(&mu, &nu, &dict)?;
            let (a, b) = (dict.integrals(&mu), dict.integrals(&nu));
            let mut t = Table::new("dictionary.csv", &["center_x", "center_y", "scale", "integral_a", "integral_b", "difference"]);
            for k in 0..dict.len() {
                let (s, i, j) = dict.member(k);
                let c = dict.center(i, j);
                t.push(vec![f(c.re), f(c.im), f(dict.scales[s]), f(a[k]), f(b[k]), f(a[k] - b[k])]);
            }
            let result = json!({ "distance": d, "dictionary": dict, "flagged": mu.flagged || nu.flagged });
            Ok(Outcome::ok(result, vec![t]).flag_if(mu.flagged || nu.flagged, "hm-distance"))
        }
        Command::ProbeRegularity { hull, slits, points, eps, n } => {
            let mut t = Table::new("regularity.csv", &["x", "y", "eps", "estimate", "stderr", "n", "truncated"]);
            let mut cells = Vec::new();
            let mut flagged = false;
            for (pi, p) in points.iter().enumerate() {
                for (ei, &e) in eps.iter().enumerate() {
                    let c = WalkConfig { seed: Stream::root(cfg.seed).child(pi as u64).child(ei as u64).key(), ..cfg };
                    let est = regularity_probe(hull, slits, *p, e, *n, &c)?;
                    flagged |= est.flagged;
                    t.push(row_of(&[p.re, p.im, e], &est));
                    cells.push(json!({ "point": p, "eps": e, "estimate": est }));
                }
            }
            Ok(Outcome::ok(json!({ "cells": cells }), vec![t]).flag_if(flagged, "probe-regularity"))
        }
        Command::ProbeBeurling { slit, eps, ratios, n, hull, slits } => {
            let mut t = Table::new("beurling.csv", &["x", "y", "rho", "eps", "bound", "estimate", "stderr", "passed"]);
            let mut reports = Vec::new();
            let mut flagged = false;
            for (i, &r) in ratios.iter().enumerate() {
                let mid = slit.midpoint();
                let z = Point::new(mid.re, mid.im + r * eps);
                let c = WalkConfig { seed: Stream::root(cfg.seed).child(i as u64).key(), ..cfg };
                let rep = beurling_check(slit, z, *eps, (hull, slits), *n, &c)?;
                flagged |= rep.estimate.flagged;
                t.push(vec![
                    f(z.re),
                    f(z.im),
                    f(rep.rho),
                    f(rep.eps),
                    f(rep.bound),
                    f(rep.estimate.mean),
                    f(rep.estimate.stderr),
                    rep.passed.to_string(),
                ]);
                reports.push(rep);
            }
            let all = reports.iter().all(|r| r.passed);
            Ok(Outcome::ok(json!({ "reports": reports, "all_passed": all }), vec![t]).flag_if(flagged, "probe-beurling"))
        }
        Command::ProbeHitting { slits, targets, eps_list, starts_per_slit, n } => {
            let table = hitting_probe(slits, targets, eps_list, *starts_per_slit, *n, &cfg)?;
            let mut cells = Table::new(
                "hitting_cells.csv",
                &["eps", "target_x", "target_y", "start_x", "start_y", "estimate", "stderr"],
            );
            let mut flagged = false;
            for c in &table.cells {
                flagged |= c.estimate.flagged;
                cells.push(vec![
                    f(c.eps),
                    f(c.target.re),
                    f(c.target.im),
                    f(c.start.re),
                    f(c.start.im),
                    f(c.estimate.mean),
                    f(c.estimate.stderr),
                ]);
            }
            let mut rows = Table::new("hitting_rows.csv", &["eps", "max", "max_stderr", "target_x", "target_y", "start_x", "start_y"]);
            for r in &table.rows {
                rows.push(vec![
                    f(r.eps),
                    f(r.max),
                    f(r.max_stderr),
                    f(r.argmax_target.re),
                    f(r.argmax_target.im),
                    f(r.argmax_start.re),
                    f(r.argmax_start.im),
                ]);
            }
            Ok(Outcome::ok(to_value(&table), vec![rows, cells]).flag_if(flagged, "probe-hitting"))
        }
        Command::Experiment(e) => experiment(e, &cfg),
    }
}

fn state(i: usize) -> String {
    if i == 0 {
        "cemetery".into()
    } else {
        format!("slit_{}", i - 1)
    }
}

fn row_of(prefix: &[f64], e: &Estimate) -> Vec<String> {
    let mut row: Vec<String> = prefix.iter().map(|&x| f(x)).collect();
    row.extend([f(e.mean), f(e.stderr), e.n.to_string(), e.truncated.to_string()]);
    row
}

fn node_table(est: &HcapEstimate) -> Table {
    let mut t = Table::new("nodes.csv", &["xi", "weight", "mean", "stderr", "n", "truncated"]);
    for n in &est.nodes {
        t.push(vec![f(n.xi), f(n.weight), f(n.mean), f(n.stderr), n.n.to_string(), n.truncated.to_string()]);
    }
    t
}

fn resolve_family(e: &ExperimentJob) -> Result<HullFamily, CliError> {
    let mut fam = family_by_name(&e.family)?;
    if let Some(l) = &e.claimed_limit {
        fam.limit = l.clone();
    }
    Ok(fam)
}

fn capacity_table(r: &ConvergenceReport) -> Table {
    let mut t = Table::new(
        "capacities.csv",
        &["n", "estimate", "stderr", "oracle", "gap", "gap_stderr", "oracle_gap", "truncated_fraction"],
    );
    for row in r.rows.iter().chain(r.limit.iter()) {
        t.push(vec![
            row.n.map(|n| n.to_string()).unwrap_or_else(|| "limit".into()),
            f(row.estimate.mean),
            f(row.estimate.stderr),
            opt(row.oracle),
            opt(row.gap),
            opt(row.gap_stderr),
            opt(row.oracle_gap),
            f(row.estimate.truncated_fraction),
        ]);
    }
    t
}

fn report_flagged(r: &ConvergenceReport) -> bool {
    r.rows.iter().chain(r.limit.iter()).any(|row| row.estimate.flagged)
        || r.distances.iter().any(|d| d.functional.flagged)
}

fn experiment(e: &ExperimentJob, cfg: &WalkConfig) -> Result<Outcome, CliError> {
    let fam = resolve_family(e)?;
    match e.kind {
        ExperimentKind::Continuity | ExperimentKind::Counterexample => {
            if e.kind == ExperimentKind::Counterexample && fam.satisfies_hypotheses {
                return Err(CliError::Validation(format!(
                    "family {} satisfies the hypotheses; the counterexample experiment needs one that does not",
                    fam.name
                )));
            }
            let r = continuity_experiment(&fam, &e.n_list, e.estimator, &e.budgets, cfg)?;
            let mut tables = vec![capacity_table(&r)];
            if let Some(g) = &r.envelope_growth {
                let mut t = Table::new("envelope_vertical.csv", &["y", "estimate", "stderr"]);
                for (y, est) in g.heights.iter().zip(&g.estimates) {
                    t.push(vec![f(*y), f(est.mean), f(est.stderr)]);
                }
                tables.push(t);
            }
            let flagged = report_flagged(&r);
            Ok(Outcome::ok(to_value(&r), tables).flag_if(flagged, "experiment"))
        }
        ExperimentKind::Weak => {
            let z0 = e.z0.unwrap_or(fam.reference_point);
            let dict = match &e.dictionary {
                Some(d) => d.clone(),
                None => TestDictionary::default_for(&fam.limit, 4.0)?,
            };
            let r = weak_convergence_experiment(&fam, z0, &e.n_list, &dict, &e.budgets, cfg)?;
            let mut t = Table::new(
                "distances.csv",
                &[
                    "n",
                    "distance",
                    "confidence_radius",
                    "functional",
                    "functional_stderr",
                    "functional_gap",
                    "functional_gap_stderr",
                    "functional_oracle_gap",
                ],
            );
            for d in &r.distances {
                t.push(vec![
                    d.n.to_string(),
                    f(d.distance.value),
                    f(d.distance.confidence_radius),
                    f(d.functional.mean),
                    f(d.functional.stderr),
                    f(d.functional_gap),
                    f(d.functional_gap_stderr),
                    opt(d.functional_oracle_gap),
                ]);
            }
            if let Some(c) = &r.control {
                t.push(vec![
                    "control".into(),
                    f(c.value),
                    f(c.confidence_radius),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                ]);
            }
            let flagged = report_flagged(&r);
            Ok(Outcome::ok(json!({ "report": r, "dictionary": dict }), vec![t]).flag_if(flagged, "experiment"))
        }
        ExperimentKind::Monotone => {
            let lim = monotone_limit(&fam, e.n_max, e.resolution)?;
            let cert = check_kernel_convergence(&fam, e.n_max, e.resolution)?;
            let mut t = Table::new("limit_mask.csv", &["x", "y"]);
            for (idx, &on) in lim.mask.cells.iter().enumerate() {
                if on {
                    let c = lim.mask.grid.center_of(idx);
                    t.push(vec![f(c.re), f(c.im)]);
                }
            }
            let mut k = Table::new("kernel_levels.csv", &["margin", "cells", "n0"]);
            for l in &cert.levels {
                k.push(vec![f(l.margin), l.cells.to_string(), l.n0.map(|n| n.to_string()).unwrap_or_default()]);
            }
            let hausdorff = lim.mask.hausdorff_to(&fam.limit);
            let result = json!({
                "family": fam.name,
                "monotone": lim.monotone,
                "resolution": lim.resolution,
                "tested_n": lim.tested_n,
                "marked_cells": lim.mask.count(),
                "filled_cells": lim.filled_cells,
                "hausdorff_to_claimed_limit": hausdorff,
                "kernel_certificate": cert,
                "verdict": format!(
                    "grid limit within Hausdorff distance {hausdorff:.4} of the claimed limit; kernel certificate {} at resolution {}. Evidence, not proof.",
                    if cert.passed { "PASS" } else { "FAIL" },
                    e.resolution
                ),
            });
            Ok(Outcome::ok(result, vec![t, k]))
        }
    }
}
