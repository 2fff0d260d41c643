//! Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
//!
//! Run with `cargo test -p planecal --test acceptance`.

use std::process::ExitCode;
use std::time::Instant;

use nalgebra::DVector;

use planecal::calibrator::lm::{central_difference_jacobian, forward_difference_jacobian};
use planecal::calibrator::{residuals, FixedMask, ParameterVector, Termination};
use planecal::config::{PlanePriorSettings, RunConfig};
use planecal::evaluation::ErrorStats;
use planecal::identifiability::{
    identification_jacobian, resolve_combos, restrict_columns, singular_value_analysis, AnalysisOptions,
};
use planecal::io;
use planecal::pipeline::{run_pipeline, run_sweep, PipelineOutput, SweepKind};

struct Gate {
    failures: usize,
}

impl Gate {
    fn check(&mut self, id: &str, pass: bool, detail: String) {
        println!("{} [{id}] {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            self.failures += 1;
        }
    }
}

fn mm(m: f64) -> f64 {
    m * 1e3
}

fn deg(rad: f64) -> f64 {
    rad.to_degrees()
}

fn stats_line(s: &ErrorStats) -> String {
    format!(
        "mean {:.4e} mm / {:.4e} deg, max {:.4e} mm / {:.4e} deg over {} poses",
        mm(s.mean_position),
        deg(s.mean_orientation),
        mm(s.max_position),
        deg(s.max_orientation),
        s.num_poses
    )
}

fn desk(noise_mm: f64) -> RunConfig {
    RunConfig {
        poses_per_plane: 20,
        points_per_scan: 20,
        noise_mm,
        ..RunConfig::default()
    }
}

fn converged(out: &PipelineOutput) -> bool {
    !matches!(
        out.calibration.diagnostics.termination,
        Termination::MaxIterations | Termination::DampingLimit
    )
}

fn exact_recovery(gate: &mut Gate) -> PipelineOutput {
    let cfg = RunConfig {
        eval_poses: 1000,
        ..desk(0.0)
    };
    let t = Instant::now();
    let out = run_pipeline(&cfg).expect("zero-noise pipeline");
    let secs = t.elapsed().as_secs_f64();
    let s = &out.final_stats;
    gate.check(
        "1 exact recovery",
        mm(s.mean_position) <= 1e-6 && deg(s.mean_orientation) <= 1e-6 && secs < 120.0,
        format!("3N=60 M=20 sigma=0: {}; {secs:.2} s", stats_line(s)),
    );
    out
}

fn headline(gate: &mut Gate) -> PipelineOutput {
    let out = run_pipeline(&RunConfig::default()).expect("headline pipeline");
    let s = &out.final_stats;
    gate.check(
        "2 headline 3N=120 M=100",
        converged(&out)
            && mm(s.mean_position) <= 0.3
            && deg(s.mean_orientation) <= 0.06
            && mm(s.max_position) <= 1.0
            && deg(s.max_orientation) <= 0.12,
        format!("sigma=0.1 mm: {}", stats_line(s)),
    );

    let d = run_pipeline(&desk(0.1)).expect("desk pipeline");
    let s = &d.final_stats;
    gate.check(
        "2 desk 3N=60 M=20",
        converged(&d) && mm(s.mean_position) <= 0.5 && deg(s.mean_orientation) <= 0.1,
        format!("sigma=0.1 mm: {}", stats_line(s)),
    );

    let s = &out.initial_stats;
    gate.check(
        "initial error order of magnitude",
        (5.0..=40.0).contains(&mm(s.mean_position)) && (1.5..=8.0).contains(&deg(s.mean_orientation)),
        format!("perturbed start: {}", stats_line(s)),
    );
    out
}

fn identifiability(gate: &mut Gate, zero_noise: &PipelineOutput) {
    let e = &zero_noise.experiment;
    let pv = ParameterVector::pack(&e.nominal, &e.scene.true_ext, &e.scene.true_planes, &FixedMask::empty()).unwrap();
    let opts = AnalysisOptions::default();
    let (j, names) = identification_jacobian(&pv, &e.dataset);
    let report = singular_value_analysis(&j, &names, &opts).unwrap();
    let mask = FixedMask::default_mask();
    let resolved = resolve_combos(&report, &mask).unwrap_or_default();

    let has = |pivot: &str, others: &[&str]| {
        resolved.iter().any(|c| {
            c.pivot == pivot && others.iter().all(|o| c.members.iter().any(|(n, v)| n == o && v.abs() > 0.05))
        })
    };
    let combos = [
        ("d6", &["p_z"][..]),
        ("theta6", &["r_theta"]),
        ("d2", &["d3"]),
        ("d1", &["l1"]),
        ("a1", &["l2"]),
        ("alpha1", &["n1_y", "n3_z"]),
        ("theta1", &["n2_y", "n3_x"]),
    ];
    let found: Vec<&str> = combos.iter().filter(|(p, o)| has(p, o)).map(|c| c.0).collect();
    let plane_combos = resolved
        .iter()
        .filter(|c| ["alpha1", "a1", "theta1", "d1"].contains(&c.pivot.as_str()))
        .filter(|c| c.members.iter().skip(1).all(|(n, _)| n.starts_with('n') || n.starts_with('l')))
        .count();

    let (jr, rn) = restrict_columns(&j, &names, &mask);
    let restricted = singular_value_analysis(&jr, &rn, &opts).unwrap();
    let s1 = report.singular_values[0];
    let gap = report.singular_values[report.singular_values.len() - 8] / s1;
    gate.check(
        "3 identifiability",
        report.null_count() == 7
            && found.len() == combos.len()
            && plane_combos == 4
            && restricted.condition_ratio() >= 1e-8
            && zero_noise.identification.mask == mask,
        format!(
            "{} null of {} (largest null {:.2e} sigma1, next {:.2e}); combos {:?}; first-link/plane {}; restricted ratio {:.3e}",
            report.null_count(),
            names.len(),
            report.null_combos.last().map_or(0.0, |c| c.relative),
            gap,
            found,
            plane_combos,
            restricted.condition_ratio()
        ),
    );
}

fn plane_priors(gate: &mut Gate) {
    let cfg = RunConfig {
        plane_prior: PlanePriorSettings {
            position_mm: 100.0,
            orientation_deg: 30.0,
        },
        eval_poses: 1000,
        ..RunConfig::default()
    };
    let out = run_pipeline(&cfg).expect("pipeline with disturbed planes");
    let worst_l = out.plane_errors.iter().map(|e| e.0).fold(0.0, f64::max);
    let worst_n = out.plane_errors.iter().map(|e| e.1).fold(0.0, f64::max);
    gate.check(
        "4 plane-prior robustness",
        converged(&out) && mm(worst_l) <= 0.3 && deg(worst_n) <= 0.03,
        format!(
            "priors off by 100 mm / 30 deg: worst plane error {:.4} mm / {:.5} deg; termination {:?} after {} iterations; pose {}",
            mm(worst_l),
            deg(worst_n),
            out.calibration.diagnostics.termination,
            out.calibration.diagnostics.iterations,
            stats_line(&out.final_stats)
        ),
    );
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    for (rank, &i) in order.iter().enumerate() {
        r[i] = rank as f64;
    }
    r
}

fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let d2: f64 = ranks(x).iter().zip(ranks(y)).map(|(a, b)| (a - b).powi(2)).sum();
    1.0 - 6.0 * d2 / (n * (n * n - 1.0))
}

fn noise_sweep(gate: &mut Gate) {
    let grid = [0.01, 0.05, 0.1, 0.5, 1.0];
    let base = RunConfig {
        eval_poses: 2000,
        ..RunConfig::default()
    };
    let rows = run_sweep(&base, SweepKind::Noise, &grid, 5).expect("noise sweep");
    let failed = rows.iter().filter(|r| r.outcome.is_err()).count();
    let means: Vec<f64> = grid
        .iter()
        .map(|g| {
            let cells: Vec<f64> = rows
                .iter()
                .filter(|r| r.value == *g)
                .filter_map(|r| r.outcome.as_ref().ok())
                .map(|c| c.stats.mean_position)
                .collect();
            cells.iter().sum::<f64>() / cells.len().max(1) as f64
        })
        .collect();
    let rho = spearman(&grid, &means);
    gate.check(
        "5 noise monotonicity",
        failed == 0 && rho > 0.9,
        format!(
            "Spearman {rho:.3}; mean position error (mm) per sigma: {}",
            grid.iter()
                .zip(&means)
                .map(|(g, m)| format!("{g}->{:.4}", mm(*m)))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    );
}

fn residual_statistics(gate: &mut Gate, headline: &PipelineOutput) {
    let c = &headline.calibration;
    let sigma = headline.experiment.dataset.provenance.sigma_noise;
    let dof = (c.num_residuals - c.optimized_names().len()) as f64;
    let ratio = c.diagnostics.final_cost / (dof * sigma * sigma);
    gate.check(
        "6 residual statistics",
        (0.5..=1.5).contains(&ratio),
        format!(
            "SSR {:.4e} m^2 = {ratio:.3} x (3NM - {})sigma^2 with 3NM = {}",
            c.diagnostics.final_cost,
            c.optimized_names().len(),
            c.num_residuals
        ),
    );
}

fn hygiene(gate: &mut Gate, headline: &PipelineOutput) {
    // forward against central differences at the perturbed start
    let c = &headline.calibration;
    let pv0 = &c.initial_parameters;
    let idx = pv0.optimized_indices();
    let data = &headline.experiment.dataset;
    let f = |x: &DVector<f64>| residuals(&pv0.scatter(&idx, x), data);
    let x0 = pv0.gather(&idx);
    let fx = f(&x0);
    let jf = forward_difference_jacobian(&f, &x0, &fx, 1e-7, 1e-9);
    let jc = central_difference_jacobian(&f, &x0, 6e-6, 6e-6);
    let worst = (0..idx.len())
        .map(|k| (jf.column(k) - jc.column(k)).norm() / jc.column(k).norm())
        .fold(0.0, f64::max);
    gate.check(
        "7 finite-difference agreement",
        worst <= 1e-4,
        format!("worst relative column difference {worst:.3e} over {} columns", idx.len()),
    );

    gate.check(
        "7 unit-norm preservation",
        c.max_unit_norm_error <= 1e-10 && !c.clamped,
        format!("max |‖u‖ - 1| over accepted iterates {:.3e}", c.max_unit_norm_error),
    );

    let e = &headline.experiment;
    let nominal =
        ParameterVector::pack(&e.nominal, &e.start_ext, &e.plane_priors, &FixedMask::empty()).unwrap();
    let fixed: Vec<usize> = c.parameters.fixed().indices().collect();
    let untouched = fixed.iter().all(|&i| {
        let v = c.parameters.values()[i];
        v.to_bits() == c.initial_parameters.values()[i].to_bits() && v.to_bits() == nominal.values()[i].to_bits()
    });
    gate.check(
        "7 fixed-mask immutability",
        untouched && fixed.len() == 7,
        format!("{} fixed entries bit-identical to the nominal model: {untouched}", fixed.len()),
    );

    let dir = tempfile::tempdir().unwrap();
    let write = |tag: &str| {
        let out = run_pipeline(&desk(0.1)).unwrap();
        let r = dir.path().join(format!("result_{tag}.json"));
        let s = dir.path().join(format!("stats_{tag}.json"));
        let d = dir.path().join(format!("data_{tag}.jsonl"));
        io::write_result(&r, &out.calibration).unwrap();
        io::write_stats(&s, &out.final_stats).unwrap();
        io::write_dataset(&d, &out.experiment.dataset).unwrap();
        [r, s, d].map(|p| std::fs::read(p).unwrap())
    };
    let identical = write("a") == write("b");
    gate.check("7 determinism", identical, format!("two desk-scale runs byte-identical: {identical}"));
}

fn main() -> ExitCode {
    let mut gate = Gate { failures: 0 };
    let t = Instant::now();
    let zero = exact_recovery(&mut gate);
    let head = headline(&mut gate);
    identifiability(&mut gate, &zero);
    plane_priors(&mut gate);
    noise_sweep(&mut gate);
    residual_statistics(&mut gate, &head);
    hygiene(&mut gate, &head);
    println!(
        "{} criteria failed; {:.1} s",
        gate.failures,
        t.elapsed().as_secs_f64()
    );
    if gate.failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
