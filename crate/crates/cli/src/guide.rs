//! Console guide: asks for the inputs the flag form takes, then runs the
//! same command.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use crate::args::{AnalyzeArgs, Options, SweepArgs};
use crate::CliError;

pub enum Plan {
    Analyze(AnalyzeArgs),
    Sweep(SweepArgs),
}

/// Shell-style rendering of the equivalent flag invocation.
pub fn command_line(plan: &Plan) -> String {
    let (cmd, paths, out, truth) = match plan {
        Plan::Analyze(a) => ("analyze", &a.paths, &a.out, a.truth),
        Plan::Sweep(s) => ("sweep", &s.paths, &s.out, false),
    };
    let mut parts = vec!["gta".to_string(), cmd.to_string()];
    parts.extend(paths.iter().map(|p| p.display().to_string()));
    if truth {
        parts.push("--truth".into());
    }
    parts.push("--out".into());
    parts.push(out.display().to_string());
    parts.join(" ")
}

struct Prompter<'a, R, W> {
    input: &'a mut R,
    out: &'a mut W,
}

impl<R: BufRead, W: Write> Prompter<'_, R, W> {
    /// `None` at end of input.
    fn ask(&mut self, prompt: &str) -> Result<Option<String>, CliError> {
        write!(self.out, "{prompt}")?;
        self.out.flush()?;
        let mut line = String::new();
        if self.input.read_line(&mut line)? == 0 {
            writeln!(self.out)?;
            return Ok(None);
        }
        Ok(Some(line.trim().to_string()))
    }

    /// Re-asks until `parse` accepts the answer, printing its complaint.
    fn ask_until<T>(&mut self, prompt: &str, parse: impl Fn(&str) -> Result<T, String>) -> Result<Option<T>, CliError> {
        loop {
            let Some(answer) = self.ask(prompt)? else {
                return Ok(None);
            };
            match parse(&answer) {
                Ok(v) => return Ok(Some(v)),
                Err(why) => writeln!(self.out, "  {why}")?,
            }
        }
    }
}

fn work_path(s: &str) -> Result<PathBuf, String> {
    let p = PathBuf::from(s);
    if s.is_empty() {
        Err("enter a directory".into())
    } else if p.is_dir() {
        Ok(p)
    } else {
        Err(format!("not a directory: {s}"))
    }
}

fn file_names(work: &Path, s: &str) -> Result<Vec<PathBuf>, String> {
    let names: Vec<&str> = s.split_whitespace().collect();
    if names.is_empty() {
        return Err("enter at least one file name".into());
    }
    let paths: Vec<PathBuf> = names.iter().map(|n| work.join(n)).collect();
    match names.iter().zip(&paths).find(|(_, p)| !p.exists()) {
        Some((n, _)) => Err(format!("not found in {}: {n}", work.display())),
        None => Ok(paths),
    }
}

fn yes_no(s: &str) -> Result<bool, String> {
    match s.to_ascii_lowercase().as_str() {
        "y" | "yes" => Ok(true),
        "n" | "no" => Ok(false),
        _ => Err(format!("answer y or n, not '{s}'")),
    }
}

/// Walks the user through a run. `None` when input ends early.
pub fn ask_plan<R: BufRead, W: Write>(opts: &Options, input: &mut R, out: &mut W) -> Result<Option<Plan>, CliError> {
    let mut p = Prompter { input, out };
    writeln!(p.out, "GTA guide: answer each question, or press Ctrl-D to abort.")?;
    let Some(work) = p.ask_until("Work path: ", work_path)? else {
        return Ok(None);
    };
    let Some(paths) = p.ask_until("Measurement files (space separated): ", |s| file_names(&work, s))? else {
        return Ok(None);
    };
    let Some(sweep) = p.ask_until("Action, [1] analyze or [2] sweep: ", |s| match s {
        "1" | "analyze" => Ok(false),
        "2" | "sweep" => Ok(true),
        other => Err(format!("unknown choice '{other}', enter 1 or 2")),
    })?
    else {
        return Ok(None);
    };
    let truth = if sweep {
        true
    } else {
        match p.ask_until("Compare against ground truth? [y/n]: ", yes_no)? {
            Some(t) => t,
            None => return Ok(None),
        }
    };
    let Some(out_dir) = p.ask_until("Output directory [gta-report]: ", |s| {
        Ok::<_, String>(PathBuf::from(if s.is_empty() { "gta-report" } else { s }))
    })?
    else {
        return Ok(None);
    };

    let opts = opts.clone();
    Ok(Some(if sweep {
        Plan::Sweep(SweepArgs { paths, opts, out: out_dir, from: 0.5, to: 1.0, step: 0.05 })
    } else {
        Plan::Analyze(AnalyzeArgs { paths, opts, truth, out: out_dir, serve: false, port: 8765 })
    }))
}
