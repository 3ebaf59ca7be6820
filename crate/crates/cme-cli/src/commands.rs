use std::path::{Path, PathBuf};

use cme_core::config::ConfigFile;
use cme_core::data_io::{
    build_riboflavin_design, fmt_f64, load_csv_long, load_riboflavin_table, read_draws,
    read_metric_rows, read_square_matrix_csv, write_atomic, write_dataset_csv, write_draws,
    write_matrix_csv, write_metric_rows, LongSchema,
};
use cme_core::geweke::{geweke_joint_test, GewekeConfig};
use cme_core::gibbs::{point_predictions, posterior_predict};
use cme_core::metrics::mspe;
use cme_core::model::{
    CmeRng, DataSet, PriorConfig, ProjectionPair, SeedPlan, SigmaStructure, TruthSpec,
};
use cme_core::oracle::{fit_oracle_hs, oracle_posterior_predict};
use cme_core::selection::{credible_intervals, s2m_select};
use cme_core::sim::{run_scenario, ReplicationRow, SimScenario, XDesign};
use cme_core::{Error, Result};
use nalgebra::DVector;
use rand::SeedableRng;

use crate::CommonArgs;

fn load_config(common: &CommonArgs) -> Result<ConfigFile> {
    match &common.config {
        Some(path) => ConfigFile::load(path),
        None => Ok(ConfigFile::default()),
    }
}

#[allow(clippy::too_many_arguments)]
pub fn simulate(
    common: CommonArgs,
    sigma: Vec<String>,
    m: Vec<usize>,
    k1: Vec<usize>,
    k2: Vec<usize>,
    reps: Option<usize>,
    x_design: Option<String>,
    iterations: Option<usize>,
    burn_in: Option<usize>,
) -> Result<()> {
    let config = load_config(&common)?;
    let base = config.sim_scenario(common.seed)?;

    let sigmas: Vec<SigmaStructure> = if sigma.is_empty() {
        vec![base.sigma]
    } else {
        sigma.iter().map(|s| SigmaStructure::parse(s)).collect::<Result<_>>()?
    };
    let ms = if m.is_empty() { vec![base.m] } else { m };
    let k1s = if k1.is_empty() { vec![base.fit.k1] } else { k1 };
    let k2s = if k2.is_empty() { vec![base.fit.k2] } else { k2 };
    let x_design = match x_design {
        Some(s) => XDesign::parse(&s)?,
        None => base.x_design,
    };

    let mut all_rows: Vec<ReplicationRow> = Vec::new();
    for &sigma in &sigmas {
        for &m in &ms {
            for &k1 in &k1s {
                for &k2 in &k2s {
                    let mut scenario = SimScenario { sigma, m, x_design, ..base.clone() };
                    scenario.fit.k1 = k1;
                    scenario.fit.k2 = k2;
                    if let Some(r) = reps {
                        scenario.replications = r;
                    }
                    if let Some(it) = iterations {
                        scenario.fit.iterations = it;
                    }
                    if let Some(b) = burn_in {
                        scenario.fit.burn_in = b;
                    }
                    scenario.validate()?;
                    eprintln!(
                        "scenario sigma={sigma} m={m} k1={k1} k2={k2}: {} replications...",
                        scenario.replications
                    );
                    let table = run_scenario(&scenario, |row| {
                        eprintln!(
                            "  rep {}: tpr={} fpr={} mspe={:.3} pred_cov={:.3}",
                            row.rep,
                            row.tpr.map_or("-".into(), |v| format!("{v:.2}")),
                            row.fpr.map_or("-".into(), |v| format!("{v:.3}")),
                            row.mspe,
                            row.pred_coverage,
                        );
                    })?;
                    for (rep, msg) in &table.failures {
                        eprintln!("  rep {rep} FAILED: {msg}");
                    }
                    all_rows.extend(table.rows);
                }
            }
        }
    }

    std::fs::create_dir_all(&common.out_dir)
        .map_err(|e| Error::Data(format!("creating {}: {e}", common.out_dir.display())))?;
    let metrics_path = common.out_dir.join("metrics.csv");
    write_metric_rows(&metrics_path, &all_rows)?;
    println!("wrote {} rows to {}", all_rows.len(), metrics_path.display());
    Ok(())
}

fn load_dataset(
    data: &Path,
    riboflavin: bool,
    config: &ConfigFile,
    require_y: bool,
) -> Result<DataSet> {
    let section = config.data.clone().unwrap_or_default();
    if riboflavin || section.mode == "riboflavin" {
        let table = load_riboflavin_table(
            data,
            &section.subject_col,
            section.y_col.as_deref().unwrap_or("y"),
            section.time_col.as_deref().unwrap_or("time"),
        )?;
        build_riboflavin_design(&table, section.n_spline)
    } else {
        // Without an explicit column list, fall back to the generated
        // `subject, y, x_*, z_*` layout produced by this tool's own writers.
        let mut schema = if section.x_cols.is_empty() {
            LongSchema::infer_generated(data)?
        } else {
            section.long_schema()?
        };
        if !require_y {
            // Prediction inputs may omit the response column.
            if let Some(y_col) = &schema.y_col {
                if !cme_core::data_io::csv_has_column(data, y_col)? {
                    schema.y_col = None;
                }
            }
        }
        load_csv_long(data, &schema)
    }
}

fn load_truth(sigma0: &Path, q: usize) -> Result<TruthSpec> {
    let sigma = read_square_matrix_csv(sigma0)?;
    if sigma.nrows() != q {
        return Err(Error::Dimension(format!(
            "sigma0 is {}x{} but the dataset has q = {q}",
            sigma.nrows(),
            sigma.ncols()
        )));
    }
    // Only the covariance shape matters here; beta0/tau0 are placeholders.
    TruthSpec::new(DVector::zeros(1), sigma, 1.0, SigmaStructure::Diagonal)
}

pub fn fit(
    common: CommonArgs,
    data: PathBuf,
    riboflavin: bool,
    oracle: bool,
    sigma0: Option<PathBuf>,
    train_subjects: Option<usize>,
) -> Result<()> {
    let config = load_config(&common)?;
    let cfg = config.fit_config(common.seed)?;
    let full = load_dataset(&data, riboflavin, &config, true)?;

    let (train, held_out) = match train_subjects {
        Some(n_train) => {
            let split_seed = SeedPlan::new(cfg.seed).data_seed();
            let (train, test) = cme_core::data_io::split_train_test(&full, n_train, split_seed)?;
            (train, Some(test))
        }
        None => (full, None),
    };

    eprintln!(
        "fitting {} (n={}, N={}, p={}, q={}, k1={}, k2={}, {} iterations)",
        if oracle { "OracleHS" } else { "CME" },
        train.n(),
        train.total_obs(),
        train.p(),
        train.q(),
        cfg.k1,
        cfg.k2,
        cfg.iterations
    );

    let draws = if oracle {
        let sigma0 = sigma0
            .ok_or_else(|| Error::Config("--oracle requires --sigma0 <square csv>".into()))?;
        let truth = load_truth(&sigma0, train.q())?;
        fit_oracle_hs(&train, &truth, &cfg)?
    } else {
        let mut report_progress = |done: usize, total: usize| {
            if done % 1000 == 0 || done == total {
                eprintln!("  iteration {done}/{total}");
            }
        };
        cme_core::gibbs::fit_cme_with_progress(&train, &cfg, Some(&mut report_progress))?.draws
    };

    let written = write_draws(&common.out_dir, &draws, &cfg)?;
    if let Some(test) = held_out {
        let path = common.out_dir.join("held_out.csv");
        write_dataset_csv(&test, &path)?;
        println!("held out {} subjects to {}", test.n(), path.display());
    }
    for path in written {
        println!("wrote {}", path.display());
    }
    Ok(())
}

pub fn predict(
    common: CommonArgs,
    draws_dir: PathBuf,
    data: PathBuf,
    riboflavin: bool,
    oracle: bool,
    sigma0: Option<PathBuf>,
) -> Result<()> {
    let config = load_config(&common)?;
    let (draws, fit_cfg) = read_draws(&draws_dir)?;
    let test = load_dataset(&data, riboflavin, &config, false)?;
    if test.p() != draws.p() {
        return Err(Error::Dimension(format!(
            "test design has p = {} but stored draws have p = {}",
            test.p(),
            draws.p()
        )));
    }

    let seed = common.seed.unwrap_or_else(|| SeedPlan::new(fit_cfg.seed).chain_seed() ^ 0x5eed);
    let mut rng = CmeRng::seed_from_u64(seed);

    let pred = if oracle || draws.gamma.ncols() == 0 {
        let sigma0 = sigma0.ok_or_else(|| {
            Error::Config("oracle draws need --oracle --sigma0 <square csv> to predict".into())
        })?;
        let truth = load_truth(&sigma0, test.q())?;
        oracle_posterior_predict(&draws, &test, &truth, &mut rng)?
    } else {
        // Rebuild the projection pair from its recorded seed; bit-identical
        // to the pair used during the fit.
        let proj = ProjectionPair::draw(
            draws.meta.q,
            draws.meta.k1,
            draws.meta.k2,
            draws.meta.projection_seed,
        )?;
        if test.q() != proj.q() {
            return Err(Error::Dimension(format!(
                "test design has q = {} but the fit used q = {}",
                test.q(),
                proj.q()
            )));
        }
        posterior_predict(&draws, &test, &proj, &mut rng)?
    };

    std::fs::create_dir_all(&common.out_dir)
        .map_err(|e| Error::Data(format!("creating {}: {e}", common.out_dir.display())))?;

    let obs_headers: Vec<String> = test
        .blocks()
        .iter()
        .flat_map(|b| (1..=b.m()).map(move |j| format!("{}_{j}", b.subject_id)))
        .collect();
    let draws_path = common.out_dir.join("predictive_draws.csv");
    write_matrix_csv(&draws_path, &obs_headers, &pred)?;

    let point = point_predictions(&pred);
    let intervals = credible_intervals(&pred, 0.95)?;

    let mut point_out = String::from("observation,point\n");
    let mut interval_out = String::from("observation,lower,upper,level\n");
    for (i, h) in obs_headers.iter().enumerate() {
        point_out.push_str(&format!("{h},{}\n", fmt_f64(point[i])));
        interval_out.push_str(&format!(
            "{h},{},{},0.95\n",
            fmt_f64(intervals.lower[i]),
            fmt_f64(intervals.upper[i])
        ));
    }
    let point_path = common.out_dir.join("point_predictions.csv");
    write_atomic(&point_path, point_out.as_bytes())?;
    let interval_path = common.out_dir.join("intervals.csv");
    write_atomic(&interval_path, interval_out.as_bytes())?;

    println!("wrote {}", draws_path.display());
    println!("wrote {}", point_path.display());
    println!("wrote {}", interval_path.display());

    // When the test file carries responses, report the prediction error.
    let y = test.stacked_y();
    if y.iter().any(|v| *v != 0.0) {
        let offsets = test.row_offsets();
        let truth_by_subject: Vec<DVector<f64>> =
            test.blocks().iter().map(|b| b.y.clone()).collect();
        let pred_by_subject: Vec<DVector<f64>> = test
            .blocks()
            .iter()
            .enumerate()
            .map(|(i, b)| {
                DVector::from_iterator(b.m(), point.rows(offsets[i], b.m()).iter().cloned())
            })
            .collect();
        let err = mspe(&truth_by_subject, &pred_by_subject)?;
        println!("mspe: {err:.6}");
    }
    Ok(())
}

pub fn select(common: CommonArgs, draws_dir: PathBuf, tol_b: Option<f64>) -> Result<()> {
    let config = load_config(&common)?;
    let tol = tol_b.or(config.select.tol_b);
    let (draws, _) = read_draws(&draws_dir)?;
    let result = s2m_select(&draws.beta, tol)?;

    std::fs::create_dir_all(&common.out_dir)
        .map_err(|e| Error::Data(format!("creating {}: {e}", common.out_dir.display())))?;
    let mut out = String::from("coefficient,selected,median_abs\n");
    for j in 0..draws.p() {
        let mut col: Vec<f64> = draws.beta.column(j).iter().map(|v| v.abs()).collect();
        col.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = cme_core::selection::quantile_type7(&col, 0.5);
        out.push_str(&format!(
            "beta_{},{},{}\n",
            j + 1,
            result.selected[j] as u8,
            fmt_f64(median)
        ));
    }
    let path = common.out_dir.join("selection.csv");
    write_atomic(&path, out.as_bytes())?;
    println!("selected {} of {} coefficients", result.chosen_count, draws.p());
    println!("wrote {}", path.display());
    Ok(())
}

pub fn geweke(
    common: CommonArgs,
    samples: usize,
    thin: usize,
    a0: f64,
    b0: f64,
    fail_above: Option<f64>,
) -> Result<()> {
    let cfg = GewekeConfig {
        n_samples: samples,
        thin,
        seed: common.seed.unwrap_or(2024),
        prior: PriorConfig { a0, b0, sigma2_gamma: 1.0 },
        ..GewekeConfig::default()
    };
    let report = geweke_joint_test(&cfg)?;
    println!("{:<12} {:>14} {:>14} {:>8}", "function", "marginal_mean", "successive_mean", "z");
    for row in &report.rows {
        println!(
            "{:<12} {:>14.6} {:>14.6} {:>8.3}",
            row.name, row.mean_marginal, row.mean_successive, row.z
        );
    }
    println!("max |z| = {:.3} over {} samples per arm", report.max_abs_z(), report.n_samples);

    std::fs::create_dir_all(&common.out_dir)
        .map_err(|e| Error::Data(format!("creating {}: {e}", common.out_dir.display())))?;
    let mut out = String::from("function,mean_marginal,mean_successive,z\n");
    for row in &report.rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            row.name,
            fmt_f64(row.mean_marginal),
            fmt_f64(row.mean_successive),
            fmt_f64(row.z)
        ));
    }
    write_atomic(&common.out_dir.join("geweke.csv"), out.as_bytes())?;

    if let Some(threshold) = fail_above {
        if report.max_abs_z() > threshold {
            return Err(Error::Numeric(format!(
                "geweke max |z| = {:.3} exceeds {threshold}",
                report.max_abs_z()
            )));
        }
    }
    Ok(())
}

pub fn report(common: CommonArgs, metrics: PathBuf) -> Result<()> {
    let rows = read_metric_rows(&metrics)?;
    if rows.is_empty() {
        return Err(Error::Data(format!("{} has no metric rows", metrics.display())));
    }
    std::fs::create_dir_all(&common.out_dir)
        .map_err(|e| Error::Data(format!("creating {}: {e}", common.out_dir.display())))?;

    let mut keys: Vec<(String, usize, usize, usize)> = rows
        .iter()
        .map(|r| (r.sigma.clone(), r.m, r.k1, r.k2))
        .collect();
    keys.sort();
    keys.dedup();

    let group = |sigma: &str, m: usize, k1: usize, k2: usize| -> Vec<&ReplicationRow> {
        rows.iter()
            .filter(|r| r.sigma == sigma && r.m == m && r.k1 == k1 && r.k2 == k2)
            .collect()
    };
    let mean_of = |g: &[&ReplicationRow], f: &dyn Fn(&ReplicationRow) -> Option<f64>| -> Option<f64> {
        let vals: Vec<f64> = g.iter().filter_map(|r| f(r)).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    let fmt_cell = |a: Option<f64>, b: Option<f64>| -> String {
        match (a, b) {
            (Some(a), Some(b)) => format!("{a:.2} ({b:.2})"),
            (Some(a), None) => format!("{a:.2} (-)"),
            _ => "-".into(),
        }
    };

    let sigmas: Vec<String> = {
        let mut s: Vec<String> = keys.iter().map(|k| k.0.clone()).collect();
        s.sort();
        s.dedup();
        s
    };
    let ms: Vec<usize> = {
        let mut v: Vec<usize> = keys.iter().map(|k| k.1).collect();
        v.sort();
        v.dedup();
        v
    };
    let k1s: Vec<usize> = {
        let mut v: Vec<usize> = keys.iter().map(|k| k.2).collect();
        v.sort();
        v.dedup();
        v
    };
    let k2s: Vec<usize> = {
        let mut v: Vec<usize> = keys.iter().map(|k| k.3).collect();
        v.sort();
        v.dedup();
        v
    };

    let header = {
        let mut h = String::from("sigma,method,k1");
        for k2 in &k2s {
            for m in &ms {
                h.push_str(&format!(",k2_{k2}_m_{m}"));
            }
        }
        h.push('\n');
        h
    };

    // Selection rates in the benchmark's cell layout: "tpr (fpr)".
    let mut tpr_table = header.clone();
    for sigma in &sigmas {
        for k1 in &k1s {
            tpr_table.push_str(&format!("{sigma},CME,{k1}"));
            for k2 in &k2s {
                for m in &ms {
                    let g = group(sigma, *m, *k1, *k2);
                    tpr_table.push(',');
                    tpr_table
                        .push_str(&fmt_cell(mean_of(&g, &|r| r.tpr), mean_of(&g, &|r| r.fpr)));
                }
            }
            tpr_table.push('\n');
        }
        // The oracle ignores compression; average over every (k1, k2) cell.
        tpr_table.push_str(&format!("{sigma},OracleHS,-"));
        for k2 in &k2s {
            for m in &ms {
                let g: Vec<&ReplicationRow> =
                    rows.iter().filter(|r| &r.sigma == sigma && r.m == *m && r.k2 == *k2).collect();
                tpr_table.push(',');
                tpr_table.push_str(&fmt_cell(
                    mean_of(&g, &|r| r.oracle_tpr),
                    mean_of(&g, &|r| r.oracle_fpr),
                ));
            }
        }
        tpr_table.push('\n');
    }
    write_atomic(&common.out_dir.join("tpr_fpr_table.csv"), tpr_table.as_bytes())?;

    // Predictive coverage with relative width in parentheses.
    let mut pred_table = header.clone();
    for sigma in &sigmas {
        for k1 in &k1s {
            pred_table.push_str(&format!("{sigma},CME,{k1}"));
            for k2 in &k2s {
                for m in &ms {
                    let g = group(sigma, *m, *k1, *k2);
                    pred_table.push(',');
                    pred_table.push_str(&fmt_cell(
                        mean_of(&g, &|r| Some(r.pred_coverage)),
                        mean_of(&g, &|r| Some(r.rel_pred_width)),
                    ));
                }
            }
            pred_table.push('\n');
        }
    }
    write_atomic(&common.out_dir.join("pred_coverage_width_table.csv"), pred_table.as_bytes())?;

    // Tidy per-scenario means over replications.
    let mut agg = String::from(
        "sigma,m,k1,k2,reps,tpr,fpr,signal_coverage,signal_width,noise_coverage,noise_width,\
         mspe,pred_coverage,pred_width,rel_mspe,rel_pred_width,risk,oracle_tpr,oracle_fpr,\
         oracle_mspe,oracle_pred_coverage,oracle_pred_width\n",
    );
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.6}"));
    for (sigma, m, k1, k2) in &keys {
        let g = group(sigma, *m, *k1, *k2);
        agg.push_str(&format!(
            "{sigma},{m},{k1},{k2},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            g.len(),
            opt(mean_of(&g, &|r| r.tpr)),
            opt(mean_of(&g, &|r| r.fpr)),
            opt(mean_of(&g, &|r| Some(r.signal_coverage))),
            opt(mean_of(&g, &|r| Some(r.signal_width))),
            opt(mean_of(&g, &|r| Some(r.noise_coverage))),
            opt(mean_of(&g, &|r| Some(r.noise_width))),
            opt(mean_of(&g, &|r| Some(r.mspe))),
            opt(mean_of(&g, &|r| Some(r.pred_coverage))),
            opt(mean_of(&g, &|r| Some(r.pred_width))),
            opt(mean_of(&g, &|r| Some(r.rel_mspe))),
            opt(mean_of(&g, &|r| Some(r.rel_pred_width))),
            opt(mean_of(&g, &|r| Some(r.risk))),
            opt(mean_of(&g, &|r| r.oracle_tpr)),
            opt(mean_of(&g, &|r| r.oracle_fpr)),
            opt(mean_of(&g, &|r| Some(r.oracle_mspe))),
            opt(mean_of(&g, &|r| Some(r.oracle_pred_coverage))),
            opt(mean_of(&g, &|r| Some(r.oracle_pred_width))),
        ));
    }
    write_atomic(&common.out_dir.join("aggregate.csv"), agg.as_bytes())?;

    println!("wrote {}", common.out_dir.join("tpr_fpr_table.csv").display());
    println!("wrote {}", common.out_dir.join("pred_coverage_width_table.csv").display());
    println!("wrote {}", common.out_dir.join("aggregate.csv").display());
    Ok(())
}
