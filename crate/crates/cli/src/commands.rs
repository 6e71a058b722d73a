use std::fs;
use std::path::Path;

use chrono::{SecondsFormat, Utc};
use hcfmem_core::atomic::{doppler_sigma, thermal_ground_populations, AtomicSystem, ThermalState};
use hcfmem_core::fitting::{
    calibrate_frequency_axis, extract_pumping_efficiency, fit_liad_transient, fit_power_broadening, fit_transmission,
    initial_guess, BroadeningPoint, FitResult, LiadPoint, LmOptions, SatSpecFitOptions, TransmissionFitOptions,
};
use hcfmem_core::memory::{feasibility_report, MemoryInputs};
use hcfmem_core::model::{
    effective_to_resonant_od, satspec_spectrum, transmission_spectrum, SatSpecModelParams, TransmissionModelParams,
};
use hcfmem_core::pumping::{
    efficiency_sweep, pumping_efficiency, saturated_efficiency_limit, PumpConfig, TransitDistribution,
};
use hcfmem_core::report::{sha256_hex, Report};
use hcfmem_core::spectrum::Spectrum;
use hcfmem_core::transit::{power_for_rabi, transit_time_mc, TransitStats};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::failure::Failure;
use crate::output::Outputs;
use crate::{ExtractArgs, FitSpectrumArgs, InputArgs, NameArgs, PumpArgs, SimulateArgs, TransitArgs};

const DEFAULT_MC_SAMPLES: usize = 1_000_000;

pub struct Context {
    pub cfg: RunConfig,
    system: AtomicSystem,
    digests: Vec<(String, String)>,
    generated_at: String,
}

pub struct Done {
    pub outputs: Outputs,
    pub unconverged: Option<String>,
}

impl Done {
    fn ok(outputs: Outputs) -> Self {
        Done {
            outputs,
            unconverged: None,
        }
    }
}

impl Context {
    pub fn new(cfg: RunConfig) -> Result<Self, Failure> {
        let (system, atomic_text) = match &cfg.atomic_data {
            Some(p) => {
                let text = read_text(p)?;
                (AtomicSystem::from_toml_str(&text)?, text)
            }
            None => (AtomicSystem::cesium_d2(), AtomicSystem::cesium_d2_source().to_string()),
        };
        // where results land does not change them
        let mut hashed = cfg.clone();
        hashed.output_dir = Default::default();
        let cfg_json = serde_json::to_vec(&hashed).expect("config serialises");
        Ok(Context {
            digests: vec![
                ("config".into(), sha256_hex(&cfg_json)),
                ("atomic_data".into(), sha256_hex(atomic_text.as_bytes())),
            ],
            cfg,
            system,
            generated_at: Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true),
        })
    }

    fn report<T>(&self, command: &str, result: T) -> Report<T> {
        let mut r = Report::new(command, self.generated_at.clone(), result);
        for (k, v) in &self.digests {
            r.digests.insert(k.clone(), v.clone());
        }
        r
    }

    fn lm(&self) -> LmOptions {
        LmOptions {
            max_iterations: self.cfg.fit.max_iterations,
            ..LmOptions::default()
        }
    }

    fn sigma(&self) -> Result<f64, Failure> {
        Ok(doppler_sigma(&self.system, self.cfg.thermal.temperature)?)
    }

    fn thermal(&self) -> Result<ThermalState, Failure> {
        Ok(thermal_ground_populations(
            &self.system,
            self.cfg.thermal.temperature,
            self.cfg.thermal.population_weighting,
        )?)
    }
}

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::input(format!("cannot read {}: {e}", path.display())))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path).map_err(|e| Failure::input(format!("cannot read {}: {e}", path.display())))
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path, bytes: &[u8]) -> Result<Vec<T>, Failure> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes);
    let rows: Vec<T> = rdr
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    if rows.is_empty() {
        return Err(Failure::input(format!("{}: no data rows", path.display())));
    }
    Ok(rows)
}

fn name(args: &NameArgs, default: &str) -> String {
    args.name.clone().unwrap_or_else(|| default.to_string())
}

/// Stages a fit report; non-convergence is reported through [`Done`].
fn fit_done(
    ctx: &Context,
    command: &str,
    file: String,
    input: &Path,
    input_bytes: &[u8],
    fit: FitResult,
    extra: Value,
) -> Result<Done, Failure> {
    let converged = fit.converged;
    let termination = fit.termination;
    let report = ctx
        .report(
            command,
            json!({ "input": input.display().to_string(), "fit": fit, "context": extra }),
        )
        .with_digest("input", input_bytes);
    let mut outputs = Outputs::default();
    outputs.add_json(format!("{file}.json"), &report)?;
    Ok(Done {
        outputs,
        unconverged: (!converged)
            .then(|| format!("fit did not converge ({termination:?}); rerun with --allow-unconverged to accept")),
    })
}

pub fn simulate_spectrum(ctx: &Context, args: &SimulateArgs) -> Result<Done, Failure> {
    let sc = &ctx.cfg.spectrum;
    if sc.points < 2 || !(sc.stop > sc.start) {
        return Err(Failure::input("spectrum: need points >= 2 and stop > start"));
    }
    let sigma = match sc.doppler_sigma {
        Some(s) => s,
        None => ctx.sigma()?,
    };
    let background = TransmissionModelParams {
        effective_od: sc.effective_od,
        doppler_sigma: sigma,
        global_offset: sc.global_offset,
        baseline: sc.baseline,
    };
    let step = (sc.stop - sc.start) / (sc.points - 1) as f64;
    let freqs: Vec<f64> = (0..sc.points).map(|i| sc.start + step * i as f64).collect();
    let clean = if args.satspec {
        let params = SatSpecModelParams {
            background,
            pump_saturation: ctx.cfg.fit.pump_saturation,
            homogeneous_linewidth: sc.homogeneous_linewidth,
            dip_contrasts: sc.dip_contrasts.clone(),
        };
        satspec_spectrum(&ctx.system, sc.ground_f, &params, &freqs)?
    } else {
        transmission_spectrum(&ctx.system, sc.ground_f, &background, &freqs)?
    };
    let (spectrum, seed) = if sc.noise > 0.0 {
        let seed = ctx.cfg.seed()?;
        (clean.with_gaussian_noise(sc.noise, seed)?, Some(seed))
    } else {
        (clean, None)
    };
    let mut csv = Vec::new();
    spectrum.write_csv(&mut csv)?;
    let min_frequency = spectrum.argmin().map(|i| spectrum.points()[i].frequency);
    let file = name(&args.out, "spectrum");
    let report = ctx.report(
        "simulate-spectrum",
        json!({
            "ground_f": sc.ground_f,
            "parameters": background,
            "satspec": args.satspec,
            "pump_saturation": ctx.cfg.fit.pump_saturation,
            "homogeneous_linewidth": sc.homogeneous_linewidth,
            "dip_contrasts": if args.satspec { json!(sc.dip_contrasts) } else { json!({}) },
            "points": sc.points,
            "noise": sc.noise,
            "rng_seed": seed,
            "min_transmission_frequency": min_frequency,
            "spectrum_csv": format!("{file}.csv"),
        }),
    );
    let report = report.with_digest("spectrum_csv", &csv);
    let mut outputs = Outputs::default();
    outputs.add(format!("{file}.csv"), csv);
    outputs.add_json(format!("{file}.json"), &report)?;
    Ok(Done::ok(outputs))
}

fn read_spectrum(path: &Path) -> Result<(Spectrum, Vec<u8>), Failure> {
    let bytes = read_bytes(path)?;
    let spectrum =
        Spectrum::read_csv(bytes.as_slice()).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    Ok((spectrum, bytes))
}

pub fn fit_spectrum(ctx: &Context, args: &FitSpectrumArgs) -> Result<Done, Failure> {
    let (spectrum, bytes) = read_spectrum(&args.input)?;
    let f = ctx.cfg.spectrum.ground_f;
    let init = initial_guess(&ctx.system, f, &spectrum)?;
    let mask = ctx.cfg.fit.saturation_mask;
    let options = TransmissionFitOptions {
        lm: ctx.lm(),
        saturation_mask: (mask > 0.0).then_some(mask),
    };
    let mut fit = fit_transmission(&ctx.system, f, &spectrum, &init, &options)?;
    let d = effective_to_resonant_od(
        fit.value("effective_od"),
        ctx.system.natural_linewidth_gamma0,
        fit.derived["doppler_fwhm"],
    )?;
    fit.derived.insert("resonant_od".into(), d);
    fit_done(
        ctx,
        "fit-spectrum",
        name(&args.out, "fit_spectrum"),
        &args.input,
        &bytes,
        fit,
        json!({ "ground_f": f, "initial": init, "homogeneous_gamma": ctx.system.natural_linewidth_gamma0 }),
    )
}

pub fn fit_satspec(ctx: &Context, args: &FitSpectrumArgs) -> Result<Done, Failure> {
    let (spectrum, bytes) = read_spectrum(&args.input)?;
    let f = ctx.cfg.spectrum.ground_f;
    let background = initial_guess(&ctx.system, f, &spectrum)?;
    let init = SatSpecModelParams {
        background,
        pump_saturation: ctx.cfg.fit.pump_saturation,
        homogeneous_linewidth: ctx.cfg.spectrum.homogeneous_linewidth,
        dip_contrasts: ctx.cfg.spectrum.dip_contrasts.clone(),
    };
    let options = SatSpecFitOptions {
        lm: ctx.lm(),
        resonances: None,
    };
    let fit = hcfmem_core::fitting::fit_satspec(&ctx.system, f, &spectrum, &init, &options)?;
    fit_done(
        ctx,
        "fit-satspec",
        name(&args.out, "fit_satspec"),
        &args.input,
        &bytes,
        fit,
        json!({ "ground_f": f, "pump_saturation": init.pump_saturation }),
    )
}

#[derive(Deserialize)]
struct PowerRow {
    power: f64,
    width_hz: f64,
    width_sigma_hz: f64,
}

pub fn fit_power(ctx: &Context, args: &InputArgs) -> Result<Done, Failure> {
    let bytes = read_bytes(&args.input)?;
    let rows: Vec<PowerRow> = read_rows(&args.input, &bytes)?;
    let points: Vec<BroadeningPoint> = rows
        .iter()
        .map(|r| BroadeningPoint {
            power: r.power,
            width: r.width_hz,
            width_sigma: r.width_sigma_hz,
        })
        .collect();
    let fit = fit_power_broadening(&points, &ctx.lm())?;
    fit_done(
        ctx,
        "fit-power",
        name(&args.out, "fit_power"),
        &args.input,
        &bytes,
        fit,
        json!({}),
    )
}

#[derive(Deserialize)]
struct LiadRow {
    time_s: f64,
    effective_od: f64,
    sigma: Option<f64>,
}

pub fn fit_liad(ctx: &Context, args: &InputArgs) -> Result<Done, Failure> {
    let bytes = read_bytes(&args.input)?;
    let rows: Vec<LiadRow> = read_rows(&args.input, &bytes)?;
    let series: Vec<LiadPoint> = rows
        .iter()
        .map(|r| LiadPoint {
            time: r.time_s,
            effective_od: r.effective_od,
            sigma: r.sigma,
        })
        .collect();
    let form = ctx.cfg.fit.liad_model;
    let fit = fit_liad_transient(&series, form, &ctx.lm())?;
    fit_done(
        ctx,
        "fit-liad",
        name(&args.out, "fit_liad"),
        &args.input,
        &bytes,
        fit,
        json!({ "model": form }),
    )
}

#[derive(Deserialize)]
struct CalibrationRow {
    raw: f64,
    reference_hz: f64,
}

pub fn calibrate(ctx: &Context, args: &InputArgs) -> Result<Done, Failure> {
    let bytes = read_bytes(&args.input)?;
    let rows: Vec<CalibrationRow> = read_rows(&args.input, &bytes)?;
    let raw: Vec<f64> = rows.iter().map(|r| r.raw).collect();
    let reference: Vec<f64> = rows.iter().map(|r| r.reference_hz).collect();
    let map = calibrate_frequency_axis(&raw, &reference)?;
    let report = ctx
        .report(
            "calibrate",
            json!({ "input": args.input.display().to_string(), "calibration": map }),
        )
        .with_digest("input", &bytes);
    let mut outputs = Outputs::default();
    outputs.add_json(format!("{}.json", name(&args.out, "calibration")), &report)?;
    Ok(Done::ok(outputs))
}

pub fn transit_mc(ctx: &Context, args: &TransitArgs) -> Result<Done, Failure> {
    let seed = ctx.cfg.seed()?;
    let n = ctx.cfg.mc.n_samples.unwrap_or(DEFAULT_MC_SAMPLES);
    let stats = transit_time_mc(&ctx.cfg.fibre, &ctx.system, ctx.cfg.thermal.temperature, n, seed)?;
    let report = ctx.report(
        "transit-mc",
        json!({ "geometry": ctx.cfg.fibre, "temperature": ctx.cfg.thermal.temperature, "stats": stats }),
    );
    let mut outputs = Outputs::default();
    outputs.add_json(format!("{}.json", name(&args.out, "transit")), &report)?;
    Ok(Done::ok(outputs))
}

/// Pulls `/result/...` out of an upstream report.
fn report_value(doc: &Value, pointer: &str) -> Option<f64> {
    doc.pointer(pointer).and_then(Value::as_f64)
}

fn read_report(path: &Path) -> Result<(Value, Vec<u8>), Failure> {
    let bytes = read_bytes(path)?;
    let doc: Value = serde_json::from_slice(&bytes)
        .map_err(|e| Failure::input(format!("{}: not a JSON report: {e}", path.display())))?;
    Ok((doc, bytes))
}

pub fn pump_efficiency(ctx: &Context, args: &PumpArgs) -> Result<Done, Failure> {
    let pc = &ctx.cfg.pump;
    if pc.sweep_points < 2 || !(pc.sweep_max > 0.0) {
        return Err(Failure::input("pump: need sweep_points >= 2 and sweep_max > 0"));
    }
    let mut transit_digest = None;
    let stats: TransitStats = match &pc.transit_report {
        Some(path) => {
            let (doc, bytes) = read_report(path)?;
            transit_digest = Some(bytes);
            serde_json::from_value(doc.pointer("/result/stats").cloned().unwrap_or(Value::Null))
                .map_err(|e| Failure::input(format!("{}: no transit stats: {e}", path.display())))?
        }
        None => {
            let seed = ctx.cfg.seed()?;
            let n = ctx.cfg.mc.n_samples.unwrap_or(DEFAULT_MC_SAMPLES);
            transit_time_mc(&ctx.cfg.fibre, &ctx.system, ctx.cfg.thermal.temperature, n, seed)?
        }
    };
    let transit = TransitDistribution::from(&stats);
    let sigma = ctx.sigma()?;
    let thermal = ctx.thermal()?;
    let config = PumpConfig {
        rabi_frequency: pc.rabi_frequency,
        detuning: pc.detuning,
        branching_to_dark: pc.branching_to_dark,
        temperature: ctx.cfg.thermal.temperature,
    };
    let eta = pumping_efficiency(&ctx.system, &config, &transit, sigma, &thermal, pc.pumped_from_f)?;
    let limit = saturated_efficiency_limit(&ctx.system, pc.branching_to_dark, &transit, &thermal, pc.pumped_from_f)?;
    let rabis: Vec<f64> = (0..pc.sweep_points)
        .map(|i| pc.sweep_max * i as f64 / (pc.sweep_points - 1) as f64)
        .collect();
    let sweep = efficiency_sweep(
        &ctx.system,
        &config,
        &rabis,
        &transit,
        sigma,
        &thermal,
        pc.pumped_from_f,
    )?;
    let power = ctx
        .system
        .dipole_moment
        .map(|d| power_for_rabi(pc.rabi_frequency, &ctx.cfg.fibre, d))
        .transpose()?;

    let file = name(&args.out, "pump_efficiency");
    let mut csv = String::from("rabi_hz,efficiency\n");
    for (r, e) in &sweep {
        csv += &format!("{r:?},{e:?}\n");
    }
    let mut report = ctx.report(
        "pump-efficiency",
        json!({
            "config": config,
            "pumped_from_f": pc.pumped_from_f,
            "doppler_sigma": sigma,
            "initial_populations": thermal.ground_populations,
            "transit_mean": stats.mean,
            "transit_source": pc.transit_report.as_ref().map(|p| p.display().to_string()),
            "efficiency": eta,
            "saturated_limit": limit,
            "pump_power_w": power,
            "sweep_csv": format!("{file}_sweep.csv"),
        }),
    );
    if let Some(bytes) = transit_digest {
        report = report.with_digest("transit_report", &bytes);
    }
    let mut outputs = Outputs::default();
    outputs.add(format!("{file}_sweep.csv"), csv.into_bytes());
    outputs.add_json(format!("{file}.json"), &report)?;
    Ok(Done::ok(outputs))
}

pub fn extract_efficiency(ctx: &Context, args: &ExtractArgs) -> Result<Done, Failure> {
    let thermal = ctx.thermal()?;
    let f = ctx.cfg.pump.pumped_from_f;
    let estimate = extract_pumping_efficiency(args.od_unpumped, args.od_pumped, &thermal, f)?;
    let report = ctx.report(
        "extract-efficiency",
        json!({
            "od_unpumped": args.od_unpumped,
            "od_pumped": args.od_pumped,
            "pumped_from_f": f,
            "efficiency": estimate.efficiency,
            "estimate": estimate,
        }),
    );
    let mut outputs = Outputs::default();
    outputs.add_json(format!("{}.json", name(&args.out, "extracted_efficiency")), &report)?;
    Ok(Done::ok(outputs))
}

pub fn memory_report(ctx: &Context, args: &NameArgs) -> Result<Done, Failure> {
    let reports = &ctx.cfg.memory.reports;
    let named = [
        ("transmission_fit", &reports.transmission_fit),
        ("transit", &reports.transit),
        ("pump", &reports.pump),
        ("linewidth_fit", &reports.linewidth_fit),
    ];
    let missing: Vec<String> = named
        .iter()
        .filter_map(|(k, p)| {
            p.as_ref()
                .filter(|p| !p.is_file())
                .map(|p| format!("{k} ({})", p.display()))
        })
        .collect();
    if !missing.is_empty() {
        return Err(Failure::input(format!(
            "missing upstream report files: {}",
            missing.join(", ")
        )));
    }

    let mut inputs: MemoryInputs = ctx.cfg.memory.budget.clone();
    let mut warnings = Vec::new();
    let mut digests = Vec::new();
    let mut take = |inputs: &mut MemoryInputs, field: &str, value: Option<f64>, source: String| {
        let Some(v) = value else { return false };
        let slot = match field {
            "effective_od" => &mut inputs.effective_od,
            "inhomogeneous_gamma" => &mut inputs.inhomogeneous_gamma,
            "transit_mean" => &mut inputs.transit_mean,
            "pump_efficiency" => &mut inputs.pump_efficiency,
            "homogeneous_gamma" => &mut inputs.homogeneous_gamma,
            _ => unreachable!("unknown memory input {field}"),
        };
        if let Some(old) = slot.replace(v) {
            if old != v {
                warnings.push(format!("{field}: configured {old} replaced by {v} from {source}"));
            }
        }
        inputs.sources.insert(field.into(), source);
        true
    };
    for (key, path) in named {
        let Some(path) = path else { continue };
        let (doc, bytes) = read_report(path)?;
        digests.push((key, bytes));
        let src = |cmd: &str| format!("{cmd}: {}", path.display());
        let found = match key {
            "transmission_fit" => {
                let d_star = take(
                    &mut inputs,
                    "effective_od",
                    report_value(&doc, "/result/fit/parameters/effective_od"),
                    src("fit-spectrum"),
                );
                if d_star {
                    // the resonant value would conflict with the fitted d*
                    inputs.resonant_od = None;
                }
                take(
                    &mut inputs,
                    "inhomogeneous_gamma",
                    report_value(&doc, "/result/fit/derived/doppler_fwhm"),
                    src("fit-spectrum"),
                );
                d_star
            }
            "transit" => take(
                &mut inputs,
                "transit_mean",
                report_value(&doc, "/result/stats/mean"),
                src("transit-mc"),
            ),
            "pump" => take(
                &mut inputs,
                "pump_efficiency",
                report_value(&doc, "/result/efficiency"),
                src("pump-efficiency"),
            ),
            _ => {
                let gamma0 = report_value(&doc, "/result/fit/parameters/gamma0")
                    .or_else(|| report_value(&doc, "/result/fit/derived/gamma0"));
                take(&mut inputs, "homogeneous_gamma", gamma0, src("linewidth fit"))
            }
        };
        if !found {
            return Err(Failure::input(format!(
                "{}: report does not contain the value expected for `{key}`",
                path.display()
            )));
        }
    }

    let report = feasibility_report(&inputs, Some(&ctx.cfg.fibre))?;
    let file = name(args, "memory_report");
    let mut text = report.render_text();
    for w in &warnings {
        text += &format!("note: {w}\n");
    }
    let mut envelope = ctx.report(
        "memory-report",
        json!({ "inputs": inputs, "report": report, "notes": warnings, "verdict": report.verdict }),
    );
    for (key, bytes) in digests {
        envelope = envelope.with_digest(key, &bytes);
    }
    let mut outputs = Outputs::default();
    outputs.add_json(format!("{file}.json"), &envelope)?;
    outputs.add(format!("{file}.txt"), text.into_bytes());
    Ok(Done::ok(outputs))
}
