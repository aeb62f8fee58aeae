//! Line-oriented textual model format.
//!
//! ```text
//! # comment, anywhere
//! [config]
//! horizon = 4000            # optional default simulation horizon (days)
//!
//! [parameters]
//! beta = 4e-5
//!
//! [species]
//! T = 1000                  # declaration order = state-vector order
//!
//! [reactions]
//! infect: T + V5 -> I5 @ max(0, beta - K*F)   # mass action, expr = k
//! burst:  I5 -> 200 V5 @ pi
//! decay:  T -> 0 @ delta_t                    # '0' denotes an empty side
//! gate:   V5 -> V4 @= mu * step(V5)           # '@=' = full custom propensity
//! ```
//!
//! Names are case-sensitive; coefficients default to 1. The first error
//! aborts parsing and is reported with its line number.

use crate::expr::{parse_expr, Expr};
use crate::model::{NetworkBuilder, ReactionNetwork};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{message} at line {line}")]
pub struct ModelFileError {
    pub line: usize,
    pub message: String,
}

fn err<T>(line: usize, message: impl Into<String>) -> Result<T, ModelFileError> {
    Err(ModelFileError {
        line,
        message: message.into(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Section {
    None,
    Config,
    Parameters,
    Species,
    Reactions,
}

struct RawReaction {
    line: usize,
    name: String,
    reactants: Vec<(String, u32)>,
    products: Vec<(String, u32)>,
    custom: bool,
    expr: Expr,
}

/// Parse and fully validate a model file.
pub fn parse_model(source: &str) -> Result<ReactionNetwork, ModelFileError> {
    let mut section = Section::None;
    let mut seen_sections: Vec<Section> = Vec::new();

    let mut horizon: Option<f64> = None;
    let mut params: Vec<(usize, String, f64)> = Vec::new();
    let mut species: Vec<(usize, String, i64)> = Vec::new();
    let mut reactions: Vec<RawReaction> = Vec::new();

    for (idx, raw_line) in source.lines().enumerate() {
        let line = idx + 1;
        let text = match raw_line.find('#') {
            Some(p) => &raw_line[..p],
            None => raw_line,
        };
        let text = text.trim();
        if text.is_empty() {
            continue;
        }

        if text.starts_with('[') {
            let next = match text {
                "[config]" => Section::Config,
                "[parameters]" => Section::Parameters,
                "[species]" => Section::Species,
                "[reactions]" => Section::Reactions,
                other => return err(line, format!("unknown section '{other}'")),
            };
            if seen_sections.contains(&next) {
                return err(line, format!("duplicate section '{text}'"));
            }
            seen_sections.push(next);
            section = next;
            continue;
        }

        match section {
            Section::None => return err(line, "content before any section header"),
            Section::Config => {
                let (key, value) = split_assignment(text, line)?;
                if key != "horizon" {
                    return err(line, format!("unknown config key '{key}'"));
                }
                let v: f64 = value
                    .parse()
                    .map_err(|_| ModelFileError {
                        line,
                        message: format!("invalid horizon '{value}'"),
                    })?;
                if !v.is_finite() || v < 0.0 {
                    return err(line, format!("invalid horizon '{value}'"));
                }
                horizon = Some(v);
            }
            Section::Parameters => {
                let (name, value) = split_assignment(text, line)?;
                check_ident(name, line)?;
                if name == "t" {
                    return err(line, "'t' is reserved for the simulation time");
                }
                if params.iter().any(|(_, n, _)| n == name) {
                    return err(line, format!("duplicate parameter '{name}'"));
                }
                let v: f64 = value.parse().map_err(|_| ModelFileError {
                    line,
                    message: format!("invalid value '{value}' for parameter '{name}'"),
                })?;
                if !v.is_finite() {
                    return err(line, format!("non-finite value for parameter '{name}'"));
                }
                params.push((line, name.to_owned(), v));
            }
            Section::Species => {
                let (name, value) = split_assignment(text, line)?;
                check_ident(name, line)?;
                if name == "t" {
                    return err(line, "'t' is reserved for the simulation time");
                }
                if species.iter().any(|(_, n, _)| n == name) {
                    return err(line, format!("duplicate species '{name}'"));
                }
                let count: i64 = value.parse().map_err(|_| ModelFileError {
                    line,
                    message: format!("invalid initial count '{value}' for species '{name}'"),
                })?;
                if count < 0 {
                    return err(line, format!("negative initial count for species '{name}'"));
                }
                species.push((line, name.to_owned(), count));
            }
            Section::Reactions => {
                reactions.push(parse_reaction_line(text, line)?);
            }
        }
    }

    // Cross-section checks, in declaration order so the reported line is the
    // later of the two clashing declarations.
    for (line, name, _) in &params {
        if species.iter().any(|(sl, sn, _)| sn == name && sl < line) {
            return err(*line, format!("'{name}' is already declared as a species"));
        }
    }
    for (line, name, _) in &species {
        if params.iter().any(|(pl, pn, _)| pn == name && pl < line) {
            return err(*line, format!("'{name}' is already declared as a parameter"));
        }
    }

    let species_names: Vec<&str> = species.iter().map(|(_, n, _)| n.as_str()).collect();
    let param_names: Vec<&str> = params.iter().map(|(_, n, _)| n.as_str()).collect();
    let mut seen_reactions: Vec<&str> = Vec::new();
    for r in &reactions {
        if seen_reactions.contains(&r.name.as_str()) {
            return err(r.line, format!("duplicate reaction '{}'", r.name));
        }
        seen_reactions.push(&r.name);
        for (name, _) in r.reactants.iter().chain(&r.products) {
            if !species_names.contains(&name.as_str()) {
                return err(r.line, format!("unknown species '{name}'"));
            }
        }
        let mut unknown: Option<String> = None;
        let _ = r.expr.clone().resolve(&mut |name| {
            if param_names.contains(&name) || species_names.contains(&name) {
                Some(Expr::Const(0.0))
            } else {
                if unknown.is_none() {
                    unknown = Some(name.to_owned());
                }
                None
            }
        });
        if let Some(name) = unknown {
            return err(
                r.line,
                format!("unknown identifier '{name}' in rate of reaction '{}'", r.name),
            );
        }
    }

    let mut builder = NetworkBuilder::new().default_horizon(horizon.unwrap_or(0.0));
    for (_, name, value) in &params {
        builder = builder.parameter(name, *value);
    }
    for (_, name, count) in &species {
        builder = builder.species(name, *count);
    }
    for r in reactions {
        let reactants: Vec<(&str, u32)> =
            r.reactants.iter().map(|(n, c)| (n.as_str(), *c)).collect();
        let products: Vec<(&str, u32)> =
            r.products.iter().map(|(n, c)| (n.as_str(), *c)).collect();
        builder = if r.custom {
            builder.custom(&r.name, &reactants, &products, r.expr)
        } else {
            builder.mass_action(&r.name, &reactants, &products, r.expr)
        };
    }
    builder.build().map_err(|e| ModelFileError {
        line: 0,
        message: e.to_string(),
    })
}

fn split_assignment<'a>(text: &'a str, line: usize) -> Result<(&'a str, &'a str), ModelFileError> {
    match text.split_once('=') {
        Some((k, v)) => Ok((k.trim(), v.trim())),
        None => err(line, format!("expected '<name> = <value>', got '{text}'")),
    }
}

fn check_ident(name: &str, line: usize) -> Result<(), ModelFileError> {
    let mut chars = name.chars();
    let ok = match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {
            chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
        }
        _ => false,
    };
    if ok {
        Ok(())
    } else {
        err(line, format!("invalid identifier '{name}'"))
    }
}

fn parse_reaction_line(text: &str, line: usize) -> Result<RawReaction, ModelFileError> {
    let (name, rest) = match text.split_once(':') {
        Some((n, r)) => (n.trim(), r),
        None => return err(line, format!("expected '<name>: ... ', got '{text}'")),
    };
    check_ident(name, line)?;

    let (sides, expr_text, custom) = match rest.find('@') {
        Some(p) => {
            let after = &rest[p + 1..];
            if let Some(stripped) = after.strip_prefix('=') {
                (&rest[..p], stripped, true)
            } else {
                (&rest[..p], after, false)
            }
        }
        None => return err(line, format!("missing '@ <rate>' in reaction '{name}'")),
    };

    let (lhs, rhs) = match sides.split_once("->") {
        Some((l, r)) => (l.trim(), r.trim()),
        None => return err(line, format!("missing '->' in reaction '{name}'")),
    };

    let reactants = parse_side(lhs, name, line)?;
    let products = parse_side(rhs, name, line)?;

    let expr = parse_expr(expr_text.trim()).map_err(|e| ModelFileError {
        line,
        message: format!("in rate of reaction '{name}': {e}"),
    })?;

    Ok(RawReaction {
        line,
        name: name.to_owned(),
        reactants,
        products,
        custom,
        expr,
    })
}

fn parse_side(
    side: &str,
    reaction: &str,
    line: usize,
) -> Result<Vec<(String, u32)>, ModelFileError> {
    if side == "0" {
        return Ok(Vec::new());
    }
    if side.is_empty() {
        return err(
            line,
            format!("empty side in reaction '{reaction}' (write '0' for no species)"),
        );
    }
    let mut out = Vec::new();
    for term in side.split('+') {
        let tokens: Vec<&str> = term.split_whitespace().collect();
        let (coeff, name) = match tokens.as_slice() {
            [name] => (1u32, *name),
            [coeff, name] => {
                let c: u32 = coeff.parse().map_err(|_| ModelFileError {
                    line,
                    message: format!("invalid coefficient '{coeff}' in reaction '{reaction}'"),
                })?;
                (c, *name)
            }
            _ => {
                return err(
                    line,
                    format!("malformed term '{}' in reaction '{reaction}'", term.trim()),
                )
            }
        };
        if coeff == 0 {
            return err(
                line,
                format!("zero coefficient for '{name}' in reaction '{reaction}'"),
            );
        }
        check_ident(name, line)?;
        out.push((name.to_owned(), coeff));
    }
    Ok(out)
}

/// Render a network back into the textual format. The output parses back to a
/// structurally identical network.
pub fn serialize_model(net: &ReactionNetwork) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    let _ = writeln!(out, "[config]");
    let _ = writeln!(out, "horizon = {}", net.default_horizon());
    let _ = writeln!(out);
    let _ = writeln!(out, "[parameters]");
    for p in net.parameters() {
        let _ = writeln!(out, "{} = {}", p.name, p.value);
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "[species]");
    for s in net.species() {
        let _ = writeln!(out, "{} = {}", s.name, s.initial_count);
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "[reactions]");
    for r in net.reactions() {
        let lhs = render_side(net, &r.reactants);
        let rhs = render_side(net, &r.products);
        let (op, expr) = match &r.rate {
            crate::model::RateSpec::MassAction(e) => ("@", e),
            crate::model::RateSpec::Custom(e) => ("@=", e),
        };
        let _ = writeln!(
            out,
            "{}: {} -> {} {} {}",
            r.name,
            lhs,
            rhs,
            op,
            display_with_names(expr, net)
        );
    }
    out
}

fn render_side(net: &ReactionNetwork, side: &[(usize, u32)]) -> String {
    if side.is_empty() {
        return "0".to_owned();
    }
    side.iter()
        .map(|&(i, c)| {
            let name = &net.species()[i].name;
            if c == 1 {
                name.clone()
            } else {
                format!("{c} {name}")
            }
        })
        .collect::<Vec<_>>()
        .join(" + ")
}

/// Render a bound expression with parameter/species names restored.
pub fn display_with_names(e: &Expr, net: &ReactionNetwork) -> String {
    unbind(e, net).to_string()
}

fn unbind(e: &Expr, net: &ReactionNetwork) -> Expr {
    match e {
        Expr::Param(i) => Expr::Var(net.parameters()[*i].name.clone()),
        Expr::Species(i) => Expr::Var(net.species()[*i].name.clone()),
        Expr::Neg(x) => Expr::Neg(Box::new(unbind(x, net))),
        Expr::Add(a, b) => Expr::Add(Box::new(unbind(a, net)), Box::new(unbind(b, net))),
        Expr::Sub(a, b) => Expr::Sub(Box::new(unbind(a, net)), Box::new(unbind(b, net))),
        Expr::Mul(a, b) => Expr::Mul(Box::new(unbind(a, net)), Box::new(unbind(b, net))),
        Expr::Div(a, b) => Expr::Div(Box::new(unbind(a, net)), Box::new(unbind(b, net))),
        Expr::Min(a, b) => Expr::Min(Box::new(unbind(a, net)), Box::new(unbind(b, net))),
        Expr::Max(a, b) => Expr::Max(Box::new(unbind(a, net)), Box::new(unbind(b, net))),
        Expr::Exp(x) => Expr::Exp(Box::new(unbind(x, net))),
        Expr::Step(x) => Expr::Step(Box::new(unbind(x, net))),
        leaf => leaf.clone(),
    }
}
