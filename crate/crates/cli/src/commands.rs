use std::path::Path;
use std::time::Instant;

use schur_ode::galerkin::{AssemblyOptions, BasisSpace};
use schur_ode::io::{format_real, format_vector, read_matrix};
use schur_ode::oracles::{matrix_exponential_apply, random_separated_matrix, rk_integrate};
use schur_ode::par::{self, Execution};
use schur_ode::perturbation::{
    solve_approx_first_order, solve_direct, solve_exact_decomposition, solve_higher_order,
    solve_multi_source, MultiSourceOperator, PerturbedSolution, SolveOptions, SplitOperator,
};
use schur_ode::poly::{parse_definition, PolynomialODE, ScaleMap, SystemDefinition};
use schur_ode::report::{sample_points, Trajectory};
use schur_ode::triangular::{real_vector, solve_linear_ivp_with};
use schur_ode::{Error, RealMatrix, Result};

use crate::cache::{write_atomic, OperatorCache};
use crate::{presets, ExamplesArgs, LinearizeArgs, ModelArgs, SchemeName, SimulateArgs, SolveLinearArgs};

fn parse_list(text: &str, what: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::InvalidArgument(format!("bad {what} value `{}`", t.trim())))
        })
        .collect()
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_atomic(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn format_errors(max: &[f64]) -> String {
    max.iter()
        .enumerate()
        .map(|(i, e)| format!("err_{}={e:.3e}", i + 1))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn solve_linear(args: &SolveLinearArgs) -> Result<()> {
    let a: RealMatrix = if let Some(path) = &args.system {
        let def = parse_definition(&read_text(path)?)?;
        def.full_field()
            .linear_matrix()
            .ok_or_else(|| Error::InvalidArgument("system is not of the form y' = Ay".into()))?
    } else if let Some(path) = &args.matrix {
        read_matrix(path)?.into_real()?
    } else if let Some(n) = args.random {
        random_separated_matrix(args.seed, n, 0.1, 10_000)?
    } else {
        return Err(Error::InvalidArgument("one of --system, --matrix or --random is required".into()));
    };
    if a.rows() != a.cols() {
        return Err(Error::Dimension(format!("matrix is {}x{}", a.rows(), a.cols())));
    }
    let n = a.rows();
    let y0 = match (&args.ic, args.random) {
        (Some(ic), _) => parse_list(ic, "initial state")?,
        (None, Some(_)) => vec![1.0; n],
        (None, None) => return Err(Error::InvalidArgument("--ic is required".into())),
    };
    if y0.len() != n {
        return Err(Error::Dimension(format!("initial state has length {}, system has {n} variables", y0.len())));
    }
    let xs = sample_points(args.x0, args.x1, args.samples)?;
    let ac = a.to_complex();
    let y0c = real_vector(&y0);
    let sol = solve_linear_ivp_with(&ac, &y0c, args.x0, args.eps_eig, args.max_iter)?;
    let solver: Vec<Vec<f64>> = xs.iter().map(|&x| sol.y_real(x)).collect();
    let reference = xs
        .iter()
        .map(|&x| Ok(matrix_exponential_apply(&ac, x - args.x0, &y0c)?.into_iter().map(|z| z.re).collect()))
        .collect::<Result<Vec<Vec<f64>>>>()?;
    let traj = Trajectory::new(xs, solver, reference)?;
    let rel = traj
        .errors
        .iter()
        .zip(&traj.reference)
        .map(|(e, r)| {
            let en = e.iter().map(|v| v * v).sum::<f64>().sqrt();
            let rn = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            en / rn.max(f64::MIN_POSITIVE)
        })
        .fold(0.0, f64::max);
    emit(args.out.as_deref(), &traj.to_csv())?;
    eprintln!("max error: {} (max relative {rel:.3e})", format_errors(&traj.max_errors()));
    Ok(())
}

/// A system prepared for the basis: parameters set, autonomized if needed
/// and scaled.
struct Model {
    original: SystemDefinition,
    prepared: SystemDefinition,
    scale: ScaleMap,
    n_orig: usize,
    autonomized: bool,
    time_scale: f64,
    sigma: usize,
    space: BasisSpace,
    assembly: AssemblyOptions,
    cache: OperatorCache,
}

impl Model {
    fn prepare(args: &ModelArgs) -> Result<Model> {
        let mut original = parse_definition(&read_text(&args.system)?)?;
        apply_parameters(&mut original, args)?;
        if args.sigma == 0 {
            return Err(Error::InvalidArgument("--sigma must be at least 1".into()));
        }
        let n_orig = original.n();
        let autonomized = !original.is_autonomous();
        let mut work = if autonomized {
            original.autonomized(args.time_scale)?
        } else {
            original.clone()
        };
        let mut factors = match &args.scale {
            Some(s) => parse_list(s, "scale")?,
            None => vec![1.0; n_orig],
        };
        if factors.len() != n_orig {
            return Err(Error::Dimension(format!("{} scale factors for {n_orig} variables", factors.len())));
        }
        if autonomized {
            factors.push(1.0);
        }
        let scale = ScaleMap::new(factors, args.time_scale)?;
        work = work.normalized(&scale)?;
        let space = BasisSpace::new(work.n(), args.sigma)?;
        let exec = if args.sequential { Execution::Sequential } else { Execution::default() };
        Ok(Model {
            original,
            prepared: work,
            scale,
            n_orig,
            autonomized,
            time_scale: args.time_scale,
            sigma: args.sigma,
            space,
            assembly: AssemblyOptions { exec, ..AssemblyOptions::default() },
            cache: OperatorCache::from_env(),
        })
    }

    fn operator(&self, field: &PolynomialODE) -> Result<RealMatrix> {
        self.cache.get_or_build(field, self.sigma, || self.space.operator(field, self.assembly))
    }

    /// Original state at `x` to basis coordinates.
    fn prepared_state(&self, y: &[f64], x: f64) -> Result<Vec<f64>> {
        if y.len() != self.n_orig {
            return Err(Error::Dimension(format!(
                "initial state has length {}, system has {} variables",
                y.len(),
                self.n_orig
            )));
        }
        let mut full = y.to_vec();
        if self.autonomized {
            full.push(self.time_scale * x);
        }
        Ok(self.scale.to_scaled(&full))
    }

    fn original_state(&self, r: &[f64]) -> Vec<f64> {
        let mut y = self.scale.from_scaled(r);
        y.truncate(self.n_orig);
        y
    }

    fn single_source(&self) -> Result<String> {
        let sources = self.prepared.sources();
        if sources.len() != 1 || self.prepared.max_order() != 1 {
            return Err(Error::InvalidArgument(format!(
                "scheme needs exactly one first-order perturbation source, system has {} source(s) up to order {}",
                sources.len(),
                self.prepared.max_order()
            )));
        }
        Ok(sources[0].clone())
    }

    fn split(&self) -> Result<SplitOperator> {
        let s = self.single_source()?;
        let b = self.operator(self.prepared.base())?;
        let p = self.operator(&self.prepared.perturbation_field(&s, 1))?;
        SplitOperator::new(b, p, self.prepared.param(&s).expect("declared"))
    }

    fn multi(&self, delta: Option<f64>) -> Result<(MultiSourceOperator, Vec<(String, RealMatrix)>)> {
        let b = self.operator(self.prepared.base())?;
        let mut named = Vec::new();
        let mut p = Vec::new();
        let mut eps = Vec::new();
        for s in self.prepared.sources() {
            let mut row = Vec::new();
            for k in 1..=self.prepared.max_order() {
                let field = self.prepared.perturbation_field(&s, k);
                if field.is_zero() {
                    row.push(None);
                } else {
                    let m = self.operator(&field)?;
                    named.push((format!("P_{s}_{k}"), m.clone()));
                    row.push(Some(m));
                }
            }
            p.push(row);
            eps.push(self.prepared.param(&s).expect("declared"));
        }
        named.insert(0, ("B".to_string(), b.clone()));
        Ok((MultiSourceOperator::new(b, p, eps, delta)?, named))
    }
}

fn apply_parameters(def: &mut SystemDefinition, args: &ModelArgs) -> Result<()> {
    if let Some(e) = args.epsilon {
        let name = match def.params() {
            [(name, _)] => name.clone(),
            [] => return Err(Error::InvalidArgument("--epsilon given but the system declares no parameter".into())),
            _ => {
                let sources = def.sources();
                if sources.len() != 1 {
                    return Err(Error::InvalidArgument("several parameters declared; use --eps name=value".into()));
                }
                sources[0].clone()
            }
        };
        def.set_param(&name, e)?;
    }
    if let Some(list) = &args.eps {
        for item in list.split(',') {
            let (name, value) = item
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("expected name=value, got `{item}`")))?;
            let v = parse_list(value, "parameter")?[0];
            def.set_param(name.trim(), v)?;
        }
    }
    Ok(())
}

pub fn linearize(args: &LinearizeArgs) -> Result<()> {
    let model = Model::prepare(&args.model)?;
    let y0 = match &args.model.ic {
        Some(ic) => parse_list(ic, "initial state")?,
        None => vec![0.0; model.n_orig],
    };
    let r0 = model.prepared_state(&y0, 0.0)?;
    let start = Instant::now();
    let mut mats = vec![("M".to_string(), model.operator(&model.prepared.full_field())?)];
    if !model.prepared.sources().is_empty() {
        if model.single_source().is_ok() {
            let split = model.split()?;
            mats.push(("B".to_string(), split.b));
            mats.push(("P".to_string(), split.p));
        } else {
            mats.extend(model.multi(None)?.1);
        }
    }
    let elapsed = start.elapsed();
    let h0 = model.space.initial(&r0)?;
    write_matrices(&args.out, &mats, &model.space.h, &h0)?;
    println!("m = {}", model.space.m());
    println!("assembly time: {:.3} ms", elapsed.as_secs_f64() * 1e3);
    Ok(())
}

fn write_matrices(dir: &Path, mats: &[(String, RealMatrix)], h: &RealMatrix, h0: &[f64]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (name, m) in mats {
        write_atomic(&dir.join(format!("{name}.txt")), &format_real(m))?;
    }
    write_atomic(&dir.join("H.txt"), &format_real(h))?;
    write_atomic(&dir.join("h0.txt"), &format_vector(h0))?;
    Ok(())
}

pub fn simulate(args: &SimulateArgs) -> Result<()> {
    if matches!(args.scheme, SchemeName::HigherOrder | SchemeName::MultiSource) && args.tau == 0 {
        return Err(Error::InvalidArgument("--tau must be at least 1".into()));
    }
    let x1 = args.x1.unwrap_or(args.x0 + 2.0 * std::f64::consts::PI);
    let xs = sample_points(args.x0, x1, args.samples)?;
    let model = Model::prepare(&args.model)?;
    let ic = args
        .model
        .ic
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("--ic is required".into()))?;
    let y0 = parse_list(ic, "initial state")?;
    let r0 = model.prepared_state(&y0, args.x0)?;
    let h0 = model.space.initial(&r0)?;
    let h = &model.space.h;
    let opts = SolveOptions {
        eps_eig: args.eps_eig,
        max_iter: args.max_iter,
        ..SolveOptions::default()
    };

    let (sol, mats): (PerturbedSolution, Vec<(String, RealMatrix)>) = match args.scheme {
        SchemeName::Direct => {
            let m = model.operator(&model.prepared.full_field())?;
            (solve_direct(&m, h, &h0, args.x0, &opts)?, vec![("M".into(), m)])
        }
        SchemeName::ExactDecomp | SchemeName::Approx | SchemeName::HigherOrder => {
            let split = model.split()?;
            let sol = match args.scheme {
                SchemeName::ExactDecomp => solve_exact_decomposition(&split, h, &h0, args.x0, &opts)?,
                SchemeName::Approx => solve_approx_first_order(&split, h, &h0, args.x0, &opts)?,
                _ => solve_higher_order(&split, h, &h0, args.x0, args.tau, &opts)?,
            };
            (sol, vec![("B".into(), split.b), ("P".into(), split.p)])
        }
        SchemeName::MultiSource => {
            let (msrc, named) = model.multi(args.delta)?;
            (solve_multi_source(&msrc, h, &h0, args.x0, args.tau, &opts)?, named)
        }
    };

    let solver = par::map_slice(model.assembly.exec, &xs, |&x| model.original_state(&sol.y(x)));
    let reference = rk_integrate(&model.original.full_field(), &y0, args.x0, &xs, args.rk_step)?;
    let traj = Trajectory::new(xs, solver, reference)?;
    if args.emit_matrices {
        write_matrices(&args.matrix_dir, &mats, h, &h0)?;
    }
    emit(args.out.as_deref(), &traj.to_csv())?;
    let summary = format!(
        "scheme {} sigma {} m {}: max error {}",
        sol.scheme().name(),
        model.sigma,
        model.space.m(),
        format_errors(&traj.max_errors())
    );
    if args.out.is_some() {
        println!("{summary}");
    } else {
        eprintln!("{summary}");
    }
    Ok(())
}

pub fn examples(args: &ExamplesArgs) -> Result<()> {
    emit(args.out.as_deref(), &presets::render(args.name, args.epsilon)?)
}
