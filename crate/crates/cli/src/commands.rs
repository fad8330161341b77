//! One function per command. Each returns its summary lines and buffered
//! artifacts; writing happens in the caller.

use ergovar::devroye::{estimate_constant_d, fmt_real, ratio_plot, write_reports_csv};
use ergovar::montecarlo::{
    clt_control, clt_diagnostic, empirical_correlation, estimate_variance, pair_variance, reference_orbit,
};
use ergovar::plot::Plot;
use ergovar::transfer::SpectrumSummary;
use ergovar::{build_first_return_tower, Point, Result, SiteFunction, UlamOperator};
use serde_json::{json, Map, Value};

use crate::artifacts::Artifacts;
use crate::config::{Command, Format, RunConfig};

pub struct Output {
    pub lines: Vec<String>,
    pub artifacts: Artifacts,
}

pub fn dispatch(cfg: &RunConfig) -> Result<Output> {
    match cfg.command {
        Command::Simulate => simulate(cfg),
        Command::Density => density(cfg),
        Command::Spectrum => spectrum(cfg),
        Command::Variance => variance(cfg),
        Command::Devroye => devroye(cfg),
        Command::Tower => tower(cfg),
        Command::Correlations => correlations(cfg),
        Command::Clt => clt(cfg),
    }
}

struct Builder<'a> {
    cfg: &'a RunConfig,
    out: Output,
}

impl<'a> Builder<'a> {
    fn new(cfg: &'a RunConfig) -> Self {
        Builder { cfg, out: Output { lines: Vec::new(), artifacts: Artifacts::default() } }
    }

    fn line(&mut self, s: String) {
        self.out.lines.push(s);
    }

    fn json(&mut self, v: Value) -> Result<()> {
        if self.cfg.wants(Format::Json) {
            let text = serde_json::to_string_pretty(&v)? + "\n";
            self.out.artifacts.push(Format::Json, text.into_bytes());
        }
        Ok(())
    }

    fn csv(&mut self, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
        if self.cfg.wants(Format::Csv) {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(header)?;
            for r in rows {
                w.write_record(&r)?;
            }
            let bytes = w.into_inner().map_err(|e| ergovar::Error::Io(e.into_error()))?;
            self.out.artifacts.push(Format::Csv, bytes);
        }
        Ok(())
    }

    fn raw_csv(&mut self, bytes: Vec<u8>) {
        if self.cfg.wants(Format::Csv) {
            self.out.artifacts.push(Format::Csv, bytes);
        }
    }

    fn svg(&mut self, plot: impl FnOnce() -> Plot) {
        if self.cfg.wants(Format::Svg) {
            self.out.artifacts.push(Format::Svg, plot().to_svg().into_bytes());
        }
    }

    fn finish(self) -> Result<Output> {
        Ok(self.out)
    }
}

fn site(name: &Option<String>) -> Result<SiteFunction> {
    SiteFunction::from_name(name.as_deref().unwrap_or("cos2pi"))
}

fn simulate(cfg: &RunConfig) -> Result<Output> {
    let system = cfg.system;
    let states = match &cfg.seed_state {
        Some(s) => {
            let seed = if system.dim() == 1 { Point::scalar(s[0]) } else { Point::planar(s[0], s[1]) };
            system.orbit(seed, cfg.burn_in, cfg.length)?.states
        }
        None => reference_orbit(&cfg.ensemble(), cfg.length)?,
    };
    let steps = (cfg.length as u64).max(100);
    let lyapunov = system.lyapunov_spectrum(states[0], steps)?;
    let mut b = Builder::new(cfg);
    b.line(format!(
        "simulate {}: {} states after burn-in {}, lyapunov [{}], sum {}",
        system.name(),
        states.len(),
        cfg.burn_in,
        lyapunov.iter().map(|l| format!("{l:.12}")).collect::<Vec<_>>().join(", "),
        format_args!("{:.12}", lyapunov.iter().sum::<f64>())
    ));
    b.json(json!({
        "system": system.name(),
        "params": system.params(),
        "burn_in": cfg.burn_in,
        "length": states.len(),
        "initial_state": states[0],
        "final_state": states[states.len() - 1],
        "lyapunov_steps": steps,
        "lyapunov": lyapunov,
        "lyapunov_sum": lyapunov.iter().sum::<f64>(),
    }))?;
    let header: &[&str] = if system.dim() == 1 { &["step", "x"] } else { &["step", "x", "y"] };
    let dim = system.dim();
    b.csv(
        header,
        states.iter().enumerate().map(|(i, p)| {
            let mut r = vec![(cfg.burn_in + i as u64).to_string(), fmt_real(p.x)];
            if dim == 2 {
                r.push(fmt_real(p.y));
            }
            r
        }),
    )?;
    b.svg(|| {
        let title = format!("{} orbit", system.name());
        if dim == 1 {
            Plot::new(&title, "step", "x")
                .with_series("x", states.iter().enumerate().map(|(i, p)| (i as f64, p.x)).collect())
        } else {
            Plot::new(&title, "x", "y").with_series("orbit", states.iter().map(|p| (p.x, p.y)).collect())
        }
    });
    b.finish()
}

fn bins(cfg: &RunConfig) -> usize {
    cfg.bins.expect("validated")
}

fn density(cfg: &RunConfig) -> Result<Output> {
    let n = bins(cfg);
    let op = UlamOperator::build(&cfg.system, n)?;
    let st = op.stationary_density()?;
    let l1 = op.stationary_l1_error(&st);
    let cdf = cfg.system.invariant_cdf();
    let mut b = Builder::new(cfg);
    b.line(format!(
        "density {} N={n}: {} iterations, residual {:.3e}, L1 error {}",
        cfg.system.name(),
        st.iterations,
        st.residual,
        l1.map_or("n/a".into(), |e| format!("{e:.6}"))
    ));
    b.json(json!({
        "system": cfg.system.name(),
        "N": n,
        "iterations": st.iterations,
        "residual": st.residual,
        "stationary_l1_error": l1,
    }))?;
    let w = 1.0 / n as f64;
    let mut header = vec!["bin", "left", "right", "mass"];
    if cdf.is_some() {
        header.push("reference");
    }
    b.csv(
        &header,
        st.masses.iter().enumerate().map(|(i, m)| {
            let (l, r) = (i as f64 * w, (i + 1) as f64 * w);
            let mut row = vec![i.to_string(), fmt_real(l), fmt_real(r), fmt_real(*m)];
            if let Some(f) = cdf {
                row.push(fmt_real(f(r) - f(l)));
            }
            row
        }),
    )?;
    b.svg(|| {
        let centers = |v: &mut dyn Iterator<Item = (usize, f64)>| -> Vec<(f64, f64)> {
            v.map(|(i, m)| ((i as f64 + 0.5) * w, m / w)).collect()
        };
        let mut p = Plot::new(&format!("{} invariant density, N = {n}", cfg.system.name()), "x", "density")
            .with_series("Ulam", centers(&mut st.masses.iter().copied().enumerate()));
        if let Some(f) = cdf {
            let exact = centers(&mut (0..n).map(|i| (i, f((i + 1) as f64 * w) - f(i as f64 * w))));
            p = p.with_series("exact", exact);
        }
        p
    });
    b.finish()
}

fn spectrum(cfg: &RunConfig) -> Result<Output> {
    let n = bins(cfg);
    let op = UlamOperator::build(&cfg.system, n)?;
    let st = op.stationary_density()?;
    let gap = op.spectral_gap(&st)?;
    let summary = SpectrumSummary { n, lambda2: gap.lambda2, gap: gap.gap, stationary_l1_error: op.stationary_l1_error(&st) };
    let mut b = Builder::new(cfg);
    b.line(format!("spectrum {} N={n}: lambda2 {:.12}, gap {:.12}", cfg.system.name(), summary.lambda2, summary.gap));
    b.json(serde_json::to_value(&summary)?)?;
    b.csv(
        &["N", "lambda2", "gap", "stationary_l1_error"],
        [vec![
            n.to_string(),
            fmt_real(summary.lambda2),
            fmt_real(summary.gap),
            summary.stationary_l1_error.map(fmt_real).unwrap_or_default(),
        ]],
    )?;
    b.finish()
}

fn variance(cfg: &RunConfig) -> Result<Output> {
    let family = &cfg.families[0];
    let n = cfg.n.expect("validated");
    let k = family.build(&cfg.system, n, cfg.eta)?;
    let spec = cfg.ensemble();
    let est = estimate_variance(&k, &spec)?;
    let pair = pair_variance(&k, &spec)?;
    let sum_l2 = k.sum_squared_constants();
    let mut doc = match serde_json::to_value(est)? {
        Value::Object(m) => m,
        _ => Map::new(),
    };
    doc.insert("system".into(), json!(cfg.system.name()));
    doc.insert("family".into(), json!(family.name()));
    doc.insert("n".into(), json!(n));
    doc.insert("sum_L2".into(), json!(sum_l2));
    doc.insert("pair_variance".into(), serde_json::to_value(pair)?);
    let mut b = Builder::new(cfg);
    b.line(format!(
        "variance {} {} n={n}: {:.6e} ± {:.2e} (pair estimate {:.6e} ± {:.2e})",
        cfg.system.name(),
        family.name(),
        est.value,
        est.std_error,
        pair.value,
        pair.std_error
    ));
    b.json(Value::Object(doc))?;
    b.finish()
}

fn devroye(cfg: &RunConfig) -> Result<Output> {
    let (reports, summary) = estimate_constant_d(&cfg.families, &cfg.n_grid, cfg.eta, &cfg.ensemble())?;
    let mut b = Builder::new(cfg);
    for r in &reports {
        b.line(format!(
            "devroye {} {} n={} eta={}: ratio {:.6e} ± {:.2e}, D_running {:.6e}{}",
            r.system,
            r.family,
            r.n,
            r.eta,
            r.ratio.value,
            r.ratio.std_error,
            r.d_running,
            if r.caveats.is_empty() { String::new() } else { format!(" [{}]", r.caveats.join(", ")) }
        ));
    }
    b.json(serde_json::to_value(&summary)?)?;
    if cfg.wants(Format::Csv) {
        let mut buf = Vec::new();
        write_reports_csv(&reports, &mut buf)?;
        b.raw_csv(buf);
    }
    b.svg(|| ratio_plot(&reports));
    b.finish()
}

fn tower(cfg: &RunConfig) -> Result<Output> {
    let q_max = cfg.q_max.expect("validated");
    let (left, right) = cfg.base;
    let model = build_first_return_tower(&cfg.system, left, right, q_max)?;
    let summary = model.summary();
    let contraction = if cfg.pairs > 0 { Some(model.backward_contraction_check(cfg.pairs, cfg.master_seed)?) } else { None };
    let op = model.tower_ulam(cfg.bins_per_level)?;
    let st = op.stationary_density()?;
    let gap = op.spectral_gap(&st)?;
    let levels = model.level_masses(&op, &st)?;
    let tails: Vec<(f64, f64)> =
        (1..=q_max).filter_map(|n| model.return_tail(n).ok().map(|t| (n as f64, t))).collect();

    let mut doc = match serde_json::to_value(&summary)? {
        Value::Object(m) => m,
        _ => Map::new(),
    };
    doc.insert("contraction".into(), serde_json::to_value(contraction)?);
    doc.insert("bins_per_level".into(), json!(cfg.bins_per_level));
    doc.insert("tower_lambda2".into(), json!(gap.lambda2));
    doc.insert("tower_gap".into(), json!(gap.gap));
    doc.insert("level_masses".into(), json!(levels));

    let mut b = Builder::new(cfg);
    b.line(format!(
        "tower {} base {} q_max={q_max}: {} branches, tail {:.3e}, kac {}, log theta {}",
        summary.system,
        summary.base,
        summary.branch_count,
        summary.tail_remainder,
        summary.kac_product.map_or("n/a".into(), |k| format!("{k:.12}")),
        summary.fitted_log_theta.map_or("n/a".into(), |t| format!("{t:.12}")),
    ));
    if let Some(c) = contraction {
        b.line(format!(
            "tower contraction: {} pairs, {} violations, worst ratio {:.6}",
            c.pairs, c.violations, c.worst_ratio
        ));
    }
    b.line(format!("tower Ulam: {} cells, lambda2 {:.6}", op.dim(), gap.lambda2));
    b.json(Value::Object(doc))?;
    if cfg.wants(Format::Csv) {
        let mut buf = Vec::new();
        model.write_branch_csv(&mut buf)?;
        b.raw_csv(buf);
    }
    b.svg(|| {
        Plot::new(&format!("{} return-time tail", summary.system), "n", "m(R > n | base)")
            .log_y()
            .with_series("tail", tails)
    });
    b.finish()
}

fn correlations(cfg: &RunConfig) -> Result<Output> {
    let phi = site(&cfg.phi)?;
    let psi_name = cfg.psi.clone().or_else(|| cfg.phi.clone());
    let psi = site(&psi_name)?;
    let (lo, hi) = cfg.system.attractor_box().first_coordinate_range();
    let (phi, psi) = (phi.on_range(lo, hi), psi.on_range(lo, hi));
    let mc = empirical_correlation(&phi, &psi, cfg.lags, &cfg.ensemble())?;
    let operator = match cfg.bins {
        Some(n) if cfg.system.dim() == 1 => {
            let op = UlamOperator::build(&cfg.system, n)?;
            let st = op.stationary_density()?;
            Some(op.operator_correlation(&st, &phi, &psi, cfg.lags)?)
        }
        _ => None,
    };
    let worst_z = mc[1..]
        .iter()
        .map(|e| if e.std_error > 0.0 { e.value.abs() / e.std_error } else if e.value == 0.0 { 0.0 } else { f64::INFINITY })
        .fold(0.0, f64::max);
    let operator_max = operator.as_ref().map(|c| c[1..].iter().fold(0.0f64, |m, v| m.max(v.abs())));

    let mut b = Builder::new(cfg);
    b.line(format!(
        "correlations {} phi={} psi={} lags 1..{}: max |C|/SE {:.3}{}",
        cfg.system.name(),
        cfg.phi.as_deref().unwrap_or("cos2pi"),
        psi_name.as_deref().unwrap_or("cos2pi"),
        cfg.lags,
        worst_z,
        operator_max.map_or(String::new(), |m| format!(", operator max |C| {m:.3e} (N={})", cfg.bins.unwrap_or(0)))
    ));
    b.json(json!({
        "system": cfg.system.name(),
        "phi": cfg.phi,
        "psi": psi_name,
        "lags": cfg.lags,
        "sample_count": cfg.sample_count,
        "seed": cfg.master_seed,
        "method": cfg.method.tag(),
        "max_abs_over_se": worst_z,
        "N": operator.as_ref().and(cfg.bins),
        "operator_max_abs": operator_max,
    }))?;
    let mut header = vec!["lag", "value", "std_error", "ci_low", "ci_high"];
    if operator.is_some() {
        header.push("operator");
    }
    b.csv(
        &header,
        mc.iter().enumerate().map(|(k, e)| {
            let mut r = vec![k.to_string(), fmt_real(e.value), fmt_real(e.std_error), fmt_real(e.ci_low), fmt_real(e.ci_high)];
            if let Some(c) = &operator {
                r.push(fmt_real(c[k]));
            }
            r
        }),
    )?;
    b.svg(|| {
        let mut p = Plot::new(&format!("{} correlations", cfg.system.name()), "lag", "C(k)")
            .with_series("Monte Carlo", mc.iter().enumerate().map(|(k, e)| (k as f64, e.value)).collect());
        if let Some(c) = &operator {
            p = p.with_series("operator", c.iter().enumerate().map(|(k, v)| (k as f64, *v)).collect());
        }
        p
    });
    b.finish()
}

fn clt(cfg: &RunConfig) -> Result<Output> {
    let (lo, hi) = cfg.system.attractor_box().first_coordinate_range();
    let phi = site(&cfg.phi)?.on_range(lo, hi);
    let n = cfg.n.unwrap_or(1000);
    let ks = clt_diagnostic(&phi, n, &cfg.ensemble())?;
    let control = clt_control(cfg.sample_count, cfg.master_seed)?;
    let mut b = Builder::new(cfg);
    b.line(format!(
        "clt {} phi={} n={n}: KS {:.6}, p {:.4} (control KS {:.6}, p {:.4})",
        cfg.system.name(),
        cfg.phi.as_deref().unwrap_or("cos2pi"),
        ks.statistic,
        ks.p_value,
        control.statistic,
        control.p_value
    ));
    b.json(json!({
        "system": cfg.system.name(),
        "phi": cfg.phi,
        "n": n,
        "seed": cfg.master_seed,
        "statistic": ks.statistic,
        "p_value": ks.p_value,
        "sample_count": ks.sample_count,
        "control": control,
    }))?;
    b.finish()
}
