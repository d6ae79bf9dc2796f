//! The estimate, convergence and constants workflows.

use std::collections::BTreeMap;
use std::time::Instant;

use majorant_core::bounds::BoundEntry;
use majorant_core::constants::{eigenvalue_oracle, local_trace_constant, payne_weinberger_bound, trace_constant_rect2, trace_constant_rect3, OracleConstraint};
use majorant_core::fields::{FluxField, MeasureTerms};
use majorant_core::mesh::{build_partition, BoundaryKind, Shape};
use majorant_core::pipeline::{compute_bounds, discretize, measure, prepare, Settings};
use serde::Serialize;

use crate::config::{Problem, RunConfig, VChoice, YStart};
use crate::error::CliError;
use crate::report::{fill_rates, BoundReport, BoundStatus, EquivalenceStatus, MeshSummary, ReportRow, REPORT_SCHEMA};

pub struct Estimate {
    pub report: BoundReport,
    pub row: ReportRow,
}

pub fn run_estimate(cfg: &RunConfig) -> Result<Estimate, CliError> {
    let settings = cfg.settings()?;
    let problem = cfg.problem()?;
    estimate_level(cfg, &problem, &settings, 0)
}

/// Runs `levels` estimates, halving h and Δt from one to the next.
pub fn run_convergence(cfg: &RunConfig, levels: usize) -> Result<Vec<Estimate>, CliError> {
    if levels < 2 {
        return Err(CliError::Config(format!("a convergence run needs at least 2 levels, got {levels}")));
    }
    let settings = cfg.settings()?;
    let problem = cfg.problem()?;
    if problem.exact().is_none() {
        return Err(CliError::Config("convergence runs need a manufactured problem".into()));
    }
    let mut out: Vec<Estimate> = Vec::with_capacity(levels);
    for level in 0..levels {
        let s = Settings {
            resolution: settings.resolution << level,
            time_steps: settings.time_steps << level,
            ..settings.clone()
        };
        out.push(estimate_level(cfg, &problem, &s, level)?);
    }
    let mut rows: Vec<ReportRow> = out.iter().map(|e| e.row.clone()).collect();
    fill_rates(&mut rows);
    for (e, r) in out.iter_mut().zip(rows) {
        e.row = r;
    }
    Ok(out)
}

fn estimate_level(cfg: &RunConfig, problem: &Problem, s: &Settings, level: usize) -> Result<Estimate, CliError> {
    let start = Instant::now();
    let spec = problem.spec();
    let exact = problem.exact();
    let (v, y) = match (cfg.approximation.v, cfg.approximation.y, exact) {
        (VChoice::ReferenceSolver, YStart::GradientAverage, _) => (None, None),
        (vc, yc, Some(mp)) => {
            let (part, times, _) = discretize(spec, s)?;
            let v = (vc == VChoice::ExactInterpolant).then(|| mp.interpolant(part.clone(), times.clone()));
            let y = (yc == YStart::ExactProjection).then(|| FluxField::project(part, times, &mp.flux));
            (v, y)
        }
        (_, _, None) => return Err(CliError::Config("exact approximation choices need a manufactured problem".into())),
    };
    let setup = prepare(spec, s, v, y)?;
    let b = compute_bounds(&setup, spec, s, exact)?;

    let mut bounds = BTreeMap::new();
    let ok = |e: &BoundEntry| BoundStatus::Ok(Box::new(e.clone()));
    bounds.insert(
        "majorant_I".to_string(),
        match &b.majorant_i {
            Ok(e) => ok(e),
            Err(reason) => BoundStatus::Unavailable { reason: reason.clone() },
        },
    );
    bounds.insert("majorant_I_N".to_string(), ok(&b.majorant_i_n));
    bounds.insert("majorant_II_N".to_string(), ok(&b.majorant_ii_n));
    bounds.insert(
        "majorant_optimized".to_string(),
        match &b.majorant_optimized {
            Some(o) => ok(&o.entry),
            None => BoundStatus::Unavailable { reason: "optimizer_iterations = 0".into() },
        },
    );
    bounds.insert("minorant".to_string(), ok(&b.minorant));

    let (error_measures, efficiency) = match exact {
        Some(mp) => {
            let mut measures: BTreeMap<String, MeasureTerms> = BTreeMap::new();
            let mut eff = BTreeMap::new();
            for (key, status) in &bounds {
                if let Some(entry) = status.entry() {
                    let m = measure(&setup, spec, mp, &entry.weights, s.majorant.order)?;
                    if m.total > 0.0 {
                        eff.insert(key.clone(), (entry.value / m.total).sqrt());
                    }
                    measures.insert(key.clone(), m);
                }
            }
            (Some(measures), Some(eff))
        }
        None => (None, None),
    };

    let cl = setup.part.classification()?;
    let mesh = MeshSummary {
        dim: setup.part.dim,
        resolution: s.resolution,
        time_steps: s.time_steps,
        h: setup.part.subdomains.iter().map(|c| c.diameter).fold(0.0, f64::max),
        dt: (0..setup.times.n_slabs()).map(|j| setup.times.slab_length(j)).fold(0.0, f64::max),
        cells: setup.part.n_cells(),
        faces: setup.part.n_faces(),
        robin_faces: setup.part.robin_faces.len(),
        strong_cells: cl.strong.len(),
        weak_cells: cl.weak.len(),
        threshold: cl.threshold,
    };
    let equivalence = match &b.equivalence {
        Ok(d) => EquivalenceStatus::Ok(d.clone()),
        Err(reason) => EquivalenceStatus::Unavailable { reason: reason.clone() },
    };
    let wall_time_s = cfg.output.timing.then(|| start.elapsed().as_secs_f64());
    let report = BoundReport {
        schema: REPORT_SCHEMA,
        id: cfg.id.clone(),
        problem: spec.name.clone(),
        level,
        settings: s.clone(),
        mesh,
        constants: setup.constants.clone(),
        mu: setup.mu.per_cell.clone(),
        correction: setup.correction.clone(),
        optimizer_history: b.majorant_optimized.as_ref().map(|o| o.history.clone()).unwrap_or_default(),
        sandwich: b.minorant.value <= b.majorant_i_n.value,
        bounds,
        error_measures,
        efficiency,
        equivalence,
        wall_time_s,
    };
    let row = report_row(&report);
    Ok(Estimate { report, row })
}

pub fn report_row(r: &BoundReport) -> ReportRow {
    let value = |k: &str| r.bounds.get(k).and_then(BoundStatus::value);
    let measure = |k: &str| r.error_measures.as_ref().and_then(|m| m.get(k)).map(|m| m.total);
    let eff = |k: &str| r.efficiency.as_ref().and_then(|m| m.get(k)).copied();
    let eq = match &r.equivalence {
        EquivalenceStatus::Ok(d) => Some(d.constants),
        EquivalenceStatus::Unavailable { .. } => None,
    };
    ReportRow {
        id: r.id.clone(),
        level: r.level,
        resolution: r.mesh.resolution,
        time_steps: r.mesh.time_steps,
        h: r.mesh.h,
        dt: r.mesh.dt,
        error_measure: measure("majorant_I_N"),
        error_measure_I: measure("majorant_I"),
        error_measure_II_N: measure("majorant_II_N"),
        majorant_I: value("majorant_I"),
        majorant_I_N: value("majorant_I_N"),
        majorant_II_N: value("majorant_II_N"),
        majorant_optimized: value("majorant_optimized"),
        minorant: value("minorant"),
        minorant_measure: measure("minorant"),
        I_maj_I: eff("majorant_I"),
        I_maj_I_N: eff("majorant_I_N"),
        I_maj_II_N: eff("majorant_II_N"),
        I_maj_optimized: eff("majorant_optimized"),
        I_min: eff("minorant"),
        C_max: eq.map(|c| c.c_max),
        C_alpha3_gamma: eq.map(|c| c.c_alpha3_gamma),
        C_ER: eq.map(|c| c.c_er),
        C_MAJ: eq.map(|c| c.c_maj),
        K_II: eq.map(|c| c.k_ii),
        wall_time_s: r.wall_time_s,
        rate_error_measure: None,
        rate_majorant_I_N: None,
        rate_majorant_II_N: None,
        rate_majorant_optimized: None,
        rate_minorant: None,
    }
}

/// One line of the constants table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstantRow {
    pub shape: String,
    pub parameters: String,
    pub quantity: String,
    pub closed_form: Option<f64>,
    pub oracle: Option<f64>,
    /// (closed form − oracle) / oracle.
    pub relative_gap: Option<f64>,
    pub note: String,
}

fn row(shape: &str, params: &str, quantity: String, closed: majorant_core::Result<f64>, oracle: majorant_core::Result<f64>) -> ConstantRow {
    let mut notes = Vec::new();
    let closed = closed.map_err(|e| notes.push(format!("closed form: {e}"))).ok();
    let oracle = oracle.map_err(|e| notes.push(format!("oracle: {e}"))).ok();
    let relative_gap = match (closed, oracle) {
        (Some(c), Some(o)) if o > 0.0 => Some((c - o) / o),
        _ => None,
    };
    ConstantRow {
        shape: shape.into(),
        parameters: params.into(),
        quantity,
        closed_form: closed,
        oracle,
        relative_gap,
        note: notes.join("; "),
    }
}

/// Closed-form constants of a cell shape next to the eigenvalue oracle.
///
/// `rect h1 h2` and `box h1 h2 h3` report the trace constants of the faces
/// through the origin; `tri h` uses the right isosceles triangle with legs h,
/// `tri x1 y1 x2 y2 x3 y3` a general one. Every shape also gets the
/// Payne–Weinberger Poincaré bound.
pub fn run_constants(shape: &str, dims: &[f64], grid: usize) -> Result<Vec<ConstantRow>, CliError> {
    if grid < 2 {
        return Err(CliError::Config("oracle grid must be at least 2".into()));
    }
    if let Some(d) = dims.iter().find(|d| !d.is_finite()) {
        return Err(CliError::Config(format!("dimension {d} is not finite")));
    }
    let params = dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(" ");
    let oracle = |s: &Shape, c: OracleConstraint| eigenvalue_oracle(s, &c, grid);
    let positive = |name: &str| -> Result<(), CliError> {
        match dims.iter().find(|d| **d <= 0.0) {
            Some(d) => Err(CliError::Config(format!("{name} dimensions must be positive, got {d}"))),
            None => Ok(()),
        }
    };
    let mut rows = Vec::new();
    let s = match shape {
        "rect" => {
            let [h1, h2] = dims else {
                return Err(CliError::Config("rect takes two dimensions h1 h2".into()));
            };
            positive("rect")?;
            let s = Shape::Rectangle { h1: *h1, h2: *h2 };
            rows.push(row(shape, &params, "trace x1=0".into(), trace_constant_rect2(*h1, *h2), oracle(&s, OracleConstraint::ZeroMeanTrace(vec![0]))));
            rows.push(row(shape, &params, "trace x2=0".into(), trace_constant_rect2(*h2, *h1), oracle(&s, OracleConstraint::ZeroMeanTrace(vec![2]))));
            s
        }
        "box" => {
            let [h1, h2, h3] = dims else {
                return Err(CliError::Config("box takes three dimensions h1 h2 h3".into()));
            };
            positive("box")?;
            let h = [*h1, *h2, *h3];
            let s = Shape::Box { h1: h[0], h2: h[1], h3: h[2] };
            for k in 0..3 {
                let others: Vec<f64> = (0..3).filter(|&j| j != k).map(|j| h[j]).collect();
                rows.push(row(
                    shape,
                    &params,
                    format!("trace x{}=0", k + 1),
                    trace_constant_rect3(h[k], others[0], others[1]),
                    oracle(&s, OracleConstraint::ZeroMeanTrace(vec![2 * k])),
                ));
            }
            s
        }
        "tri" => {
            let vertices = match dims {
                [h] => {
                    positive("tri")?;
                    [[0.0, 0.0], [*h, 0.0], [0.0, *h]]
                }
                [x1, y1, x2, y2, x3, y3] => [[*x1, *y1], [*x2, *y2], [*x3, *y3]],
                _ => return Err(CliError::Config("tri takes a leg length h or six vertex coordinates".into())),
            };
            let domain = Shape::Triangle { vertices }.as_domain(BoundaryKind::Robin)?;
            let part = build_partition(&domain, &[1])?;
            let cell = &part.subdomains[0];
            for side in 0..3 {
                let (a, b) = (cell.vertices[side], cell.vertices[(side + 1) % 3]);
                rows.push(row(
                    shape,
                    &params,
                    format!("trace side ({}, {})-({}, {})", a.x, a.y, b.x, b.y),
                    local_trace_constant(cell, (side + 2) % 3),
                    oracle(&cell.shape, OracleConstraint::ZeroMeanTrace(vec![side])),
                ));
            }
            cell.shape.clone()
        }
        other => return Err(CliError::Config(format!("unknown shape '{other}' (expected rect, box or tri)"))),
    };
    rows.push(row(
        shape,
        &params,
        "poincare (Payne-Weinberger bound)".into(),
        Ok(payne_weinberger_bound(s.diameter())),
        oracle(&s, OracleConstraint::ZeroMeanVolume),
    ));
    Ok(rows)
}

pub fn write_constants_csv<W: std::io::Write>(rows: &[ConstantRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
