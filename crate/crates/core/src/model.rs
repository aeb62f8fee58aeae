//! Immutable reaction-network model: species, parameters, reactions and
//! their propensities.
//!
//! A [`ReactionNetwork`] is built once through [`NetworkBuilder`] (or parsed
//! from text, see [`crate::modelfile`]) and is then immutable, so it can be
//! shared freely across threads. Propensity evaluation is reentrant and
//! stateless.

use crate::expr::{EvalError, Expr};
use thiserror::Error;

/// One species: a slot in the integer state vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Species {
    pub name: String,
    /// Position in the state vector; equals the declaration order.
    pub index: usize,
    /// Initial copy number (counts per unit volume), non-negative.
    pub initial_count: i64,
}

/// A named rate constant.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: f64,
}

/// How a reaction's propensity is computed.
#[derive(Debug, Clone, PartialEq)]
pub enum RateSpec {
    /// Propensity = k(state, t) x number of ordered reactant combinations.
    MassAction(Expr),
    /// The expression value is the propensity directly.
    Custom(Expr),
}

impl RateSpec {
    pub fn expr(&self) -> &Expr {
        match self {
            RateSpec::MassAction(e) | RateSpec::Custom(e) => e,
        }
    }
}

/// A reaction with resolved species indices and a precomputed state-change
/// vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Reaction {
    pub name: String,
    /// (species index, stoichiometric coefficient >= 1), no duplicate species.
    pub reactants: Vec<(usize, u32)>,
    pub products: Vec<(usize, u32)>,
    pub rate: RateSpec,
    /// Dense state change: products minus reactants, one entry per species.
    pub delta: Vec<i64>,
}

/// Propensity of one reaction at one state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Propensity {
    /// The (non-negative) propensity value.
    pub value: f64,
    /// True when a negative evaluation result was floored to zero.
    pub clamped: bool,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("duplicate species '{0}'")]
    DuplicateSpecies(String),
    #[error("duplicate parameter '{0}'")]
    DuplicateParameter(String),
    #[error("duplicate reaction '{0}'")]
    DuplicateReaction(String),
    #[error("'{0}' is declared both as a species and as a parameter")]
    NameClash(String),
    #[error("'t' is reserved for the simulation time")]
    ReservedName,
    #[error("empty identifier")]
    EmptyName,
    #[error("unknown species '{0}'")]
    UnknownSpecies(String),
    #[error("unknown identifier '{0}' in rate of reaction '{1}'")]
    UnknownIdentifier(String, String),
    #[error("negative initial count for species '{0}'")]
    NegativeInitialCount(String),
    #[error("zero stoichiometric coefficient for '{species}' in reaction '{reaction}'")]
    ZeroCoefficient { reaction: String, species: String },
    #[error("non-finite horizon")]
    BadHorizon,
    #[error("evaluating rate of reaction '{reaction}': {source}")]
    Eval {
        reaction: String,
        source: EvalError,
    },
    #[error("propensity of reaction '{0}' is not finite")]
    NonFinitePropensity(String),
}

/// Immutable model: species, parameters and reactions, plus a default
/// simulation horizon (may be zero when the model file does not set one).
#[derive(Debug, Clone, PartialEq)]
pub struct ReactionNetwork {
    species: Vec<Species>,
    parameters: Vec<Parameter>,
    reactions: Vec<Reaction>,
    default_horizon: f64,
}

impl ReactionNetwork {
    pub fn species(&self) -> &[Species] {
        &self.species
    }

    pub fn parameters(&self) -> &[Parameter] {
        &self.parameters
    }

    pub fn reactions(&self) -> &[Reaction] {
        &self.reactions
    }

    pub fn default_horizon(&self) -> f64 {
        self.default_horizon
    }

    pub fn species_index(&self, name: &str) -> Option<usize> {
        self.species.iter().position(|s| s.name == name)
    }

    pub fn parameter_index(&self, name: &str) -> Option<usize> {
        self.parameters.iter().position(|p| p.name == name)
    }

    pub fn reaction_index(&self, name: &str) -> Option<usize> {
        self.reactions.iter().position(|r| r.name == name)
    }

    /// Initial state vector in declaration order.
    pub fn initial_counts(&self) -> Vec<i64> {
        self.species.iter().map(|s| s.initial_count).collect()
    }

    /// Parameter values in declaration order.
    pub fn parameter_values(&self) -> Vec<f64> {
        self.parameters.iter().map(|p| p.value).collect()
    }

    /// The stoichiometric matrix as reactions x species, entry = net change
    /// of species j when reaction i fires.
    pub fn stoichiometric_matrix(&self) -> Vec<Vec<i64>> {
        self.reactions.iter().map(|r| r.delta.clone()).collect()
    }
}

impl Reaction {
    /// Propensity at the given state and time.
    ///
    /// Forced to zero when any reactant count is below its coefficient (for
    /// both mass-action and custom rates). Negative values are floored to
    /// zero with `clamped` set; NaN or infinite values are an error.
    pub fn propensity(
        &self,
        counts: &[i64],
        params: &[f64],
        time: f64,
    ) -> Result<Propensity, ModelError> {
        self.propensity_with_const(None, counts, params, time)
    }

    /// Like [`Reaction::propensity`], but with the rate expression optionally
    /// replaced by a value folded once per run (valid only when the
    /// expression does not read the state or the time).
    pub(crate) fn propensity_with_const(
        &self,
        folded_rate: Option<f64>,
        counts: &[i64],
        params: &[f64],
        time: f64,
    ) -> Result<Propensity, ModelError> {
        for &(i, m) in &self.reactants {
            if counts[i] < i64::from(m) {
                return Ok(Propensity {
                    value: 0.0,
                    clamped: false,
                });
            }
        }
        let raw = match (&self.rate, folded_rate) {
            (RateSpec::MassAction(_), Some(k)) => k * self.combination_count(counts),
            (RateSpec::MassAction(k), None) => {
                let k = k.eval(counts, params, time).map_err(|source| ModelError::Eval {
                    reaction: self.name.clone(),
                    source,
                })?;
                k * self.combination_count(counts)
            }
            (RateSpec::Custom(_), Some(v)) => v,
            (RateSpec::Custom(a), None) => {
                a.eval(counts, params, time).map_err(|source| ModelError::Eval {
                    reaction: self.name.clone(),
                    source,
                })?
            }
        };
        if !raw.is_finite() {
            return Err(ModelError::NonFinitePropensity(self.name.clone()));
        }
        if raw < 0.0 {
            Ok(Propensity {
                value: 0.0,
                clamped: true,
            })
        } else {
            Ok(Propensity {
                value: raw,
                clamped: false,
            })
        }
    }

    /// Number of ordered reactant combinations: the product over reactants of
    /// the falling factorial x(x-1)...(x-m+1). Equals the plain product of
    /// reactant counts when all coefficients are 1.
    pub fn combination_count(&self, counts: &[i64]) -> f64 {
        let mut h = 1.0;
        for &(i, m) in &self.reactants {
            let x = counts[i];
            for j in 0..i64::from(m) {
                h *= (x - j) as f64;
            }
        }
        h
    }
}

/// Step-by-step construction and validation of a [`ReactionNetwork`].
#[derive(Debug, Default)]
pub struct NetworkBuilder {
    species: Vec<Species>,
    parameters: Vec<Parameter>,
    reactions: Vec<RawReaction>,
    default_horizon: f64,
}

#[derive(Debug)]
struct RawReaction {
    name: String,
    reactants: Vec<(String, u32)>,
    products: Vec<(String, u32)>,
    rate: RawRate,
}

#[derive(Debug)]
enum RawRate {
    MassAction(Expr),
    Custom(Expr),
}

impl NetworkBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn species(mut self, name: &str, initial_count: i64) -> Self {
        let index = self.species.len();
        self.species.push(Species {
            name: name.to_owned(),
            index,
            initial_count,
        });
        self
    }

    pub fn parameter(mut self, name: &str, value: f64) -> Self {
        self.parameters.push(Parameter {
            name: name.to_owned(),
            value,
        });
        self
    }

    pub fn default_horizon(mut self, horizon: f64) -> Self {
        self.default_horizon = horizon;
        self
    }

    /// Mass-action reaction; `reactants`/`products` are (species name,
    /// coefficient) pairs and `rate` is the rate-constant expression.
    pub fn mass_action(
        mut self,
        name: &str,
        reactants: &[(&str, u32)],
        products: &[(&str, u32)],
        rate: Expr,
    ) -> Self {
        self.reactions.push(RawReaction {
            name: name.to_owned(),
            reactants: own_side(reactants),
            products: own_side(products),
            rate: RawRate::MassAction(rate),
        });
        self
    }

    /// Reaction whose expression is the full propensity.
    pub fn custom(
        mut self,
        name: &str,
        reactants: &[(&str, u32)],
        products: &[(&str, u32)],
        propensity: Expr,
    ) -> Self {
        self.reactions.push(RawReaction {
            name: name.to_owned(),
            reactants: own_side(reactants),
            products: own_side(products),
            rate: RawRate::Custom(propensity),
        });
        self
    }

    pub fn build(self) -> Result<ReactionNetwork, ModelError> {
        for s in &self.species {
            if s.name.is_empty() {
                return Err(ModelError::EmptyName);
            }
            if s.name == "t" {
                return Err(ModelError::ReservedName);
            }
            if self.species.iter().filter(|o| o.name == s.name).count() > 1 {
                return Err(ModelError::DuplicateSpecies(s.name.clone()));
            }
        }
        for p in &self.parameters {
            if p.name.is_empty() {
                return Err(ModelError::EmptyName);
            }
            if p.name == "t" {
                return Err(ModelError::ReservedName);
            }
            if self.parameters.iter().filter(|o| o.name == p.name).count() > 1 {
                return Err(ModelError::DuplicateParameter(p.name.clone()));
            }
            if self.species.iter().any(|s| s.name == p.name) {
                return Err(ModelError::NameClash(p.name.clone()));
            }
        }
        for s in &self.species {
            if s.initial_count < 0 {
                return Err(ModelError::NegativeInitialCount(s.name.clone()));
            }
        }
        if !self.default_horizon.is_finite() || self.default_horizon < 0.0 {
            return Err(ModelError::BadHorizon);
        }

        let species_index = |name: &str| -> Option<usize> {
            self.species.iter().position(|s| s.name == name)
        };
        let parameter_index = |name: &str| -> Option<usize> {
            self.parameters.iter().position(|p| p.name == name)
        };

        let n = self.species.len();
        let mut reactions = Vec::with_capacity(self.reactions.len());
        for raw in self.reactions {
            if raw.name.is_empty() {
                return Err(ModelError::EmptyName);
            }
            if reactions.iter().any(|r: &Reaction| r.name == raw.name) {
                return Err(ModelError::DuplicateReaction(raw.name.clone()));
            }
            let resolve_side = |side: &[(String, u32)]| -> Result<Vec<(usize, u32)>, ModelError> {
                // Repeated mentions of a species on one side accumulate.
                let mut out: Vec<(usize, u32)> = Vec::with_capacity(side.len());
                for (name, coeff) in side {
                    if *coeff == 0 {
                        return Err(ModelError::ZeroCoefficient {
                            reaction: raw.name.clone(),
                            species: name.clone(),
                        });
                    }
                    let idx = species_index(name)
                        .ok_or_else(|| ModelError::UnknownSpecies(name.clone()))?;
                    match out.iter_mut().find(|(i, _)| *i == idx) {
                        Some((_, c)) => *c += coeff,
                        None => out.push((idx, *coeff)),
                    }
                }
                Ok(out)
            };
            let reactants = resolve_side(&raw.reactants)?;
            let products = resolve_side(&raw.products)?;

            let mut delta = vec![0i64; n];
            for &(i, m) in &reactants {
                delta[i] -= i64::from(m);
            }
            for &(i, m) in &products {
                delta[i] += i64::from(m);
            }

            let bind = |e: Expr| -> Result<Expr, ModelError> {
                e.resolve(&mut |name| {
                    parameter_index(name)
                        .map(Expr::Param)
                        .or_else(|| species_index(name).map(Expr::Species))
                })
                .map_err(|e| ModelError::UnknownIdentifier(e.0, raw.name.clone()))
            };
            let rate = match raw.rate {
                RawRate::MassAction(e) => RateSpec::MassAction(bind(e)?),
                RawRate::Custom(e) => RateSpec::Custom(bind(e)?),
            };

            reactions.push(Reaction {
                name: raw.name,
                reactants,
                products,
                rate,
                delta,
            });
        }

        Ok(ReactionNetwork {
            species: self.species,
            parameters: self.parameters,
            reactions,
            default_horizon: self.default_horizon,
        })
    }
}

fn own_side(side: &[(&str, u32)]) -> Vec<(String, u32)> {
    side.iter().map(|(n, c)| ((*n).to_owned(), *c)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_expr;

    fn infectivity_net() -> ReactionNetwork {
        NetworkBuilder::new()
            .parameter("beta", 4e-5)
            .parameter("K", 1e-7)
            .parameter("lambda", 200.0)
            .species("U0", 1)
            .species("T", 1000)
            .species("V5", 100)
            .species("I5", 0)
            .species("F", 0)
            .species("U", 200)
            .mass_action(
                "infect",
                &[("T", 1), ("V5", 1)],
                &[("I5", 1)],
                parse_expr("max(0, beta - K*F)").unwrap(),
            )
            .mass_action(
                "produce_u",
                &[("U0", 1)],
                &[("U0", 1), ("U", 1)],
                parse_expr("lambda").unwrap(),
            )
            .build()
            .unwrap()
    }

    #[test]
    fn mass_action_infection_propensity() {
        // k = 4e-5 with F = 0; h = T*V5 = 1000*100; propensity = 4.0.
        let net = infectivity_net();
        let counts = net.initial_counts();
        let params = net.parameter_values();
        let p = net.reactions()[0].propensity(&counts, &params, 0.0).unwrap();
        assert!((p.value / 4.0 - 1.0).abs() < 1e-12, "got {}", p.value);
        assert!(!p.clamped);
    }

    #[test]
    fn constant_rate_unimolecular_propensity() {
        // lambda = 200, U0 = 1: propensity is exactly 200.
        let net = infectivity_net();
        let counts = net.initial_counts();
        let params = net.parameter_values();
        let p = net.reactions()[1].propensity(&counts, &params, 0.0).unwrap();
        assert_eq!(p.value, 200.0);
    }

    #[test]
    fn missing_reactant_forces_zero() {
        let net = infectivity_net();
        let mut counts = net.initial_counts();
        let params = net.parameter_values();
        counts[net.species_index("V5").unwrap()] = 0;
        let p = net.reactions()[0].propensity(&counts, &params, 0.0).unwrap();
        assert_eq!(p.value, 0.0);
        assert!(!p.clamped);
    }

    #[test]
    fn falling_factorial_for_higher_coefficients() {
        // 2 A -> B at k = 3 with A = 5: propensity = 3 * 5*4 = 60.
        let net = NetworkBuilder::new()
            .parameter("k", 3.0)
            .species("A", 5)
            .species("B", 0)
            .mass_action("dimerise", &[("A", 2)], &[("B", 1)], parse_expr("k").unwrap())
            .build()
            .unwrap();
        let p = net.reactions()[0]
            .propensity(&net.initial_counts(), &net.parameter_values(), 0.0)
            .unwrap();
        assert_eq!(p.value, 60.0);
        // A = 1 < 2: forced zero.
        let p = net.reactions()[0]
            .propensity(&[1, 0], &net.parameter_values(), 0.0)
            .unwrap();
        assert_eq!(p.value, 0.0);
    }

    #[test]
    fn negative_custom_propensity_clamps() {
        let net = NetworkBuilder::new()
            .species("A", 5)
            .custom("drain", &[("A", 1)], &[], parse_expr("0 - 1").unwrap())
            .build()
            .unwrap();
        let p = net.reactions()[0]
            .propensity(&[5], &[], 0.0)
            .unwrap();
        assert_eq!(p.value, 0.0);
        assert!(p.clamped);
    }

    #[test]
    fn non_finite_propensity_is_an_error() {
        let net = NetworkBuilder::new()
            .species("A", 5)
            .custom("blow_up", &[("A", 1)], &[], parse_expr("exp(1000)").unwrap())
            .build()
            .unwrap();
        let err = net.reactions()[0].propensity(&[5], &[], 0.0).unwrap_err();
        assert!(matches!(err, ModelError::NonFinitePropensity(name) if name == "blow_up"));
    }

    #[test]
    fn division_by_zero_names_the_reaction() {
        let net = NetworkBuilder::new()
            .species("A", 5)
            .custom("bad", &[("A", 1)], &[], parse_expr("1/(A - A)").unwrap())
            .build()
            .unwrap();
        let err = net.reactions()[0].propensity(&[5], &[], 0.0).unwrap_err();
        assert!(matches!(err, ModelError::Eval { reaction, .. } if reaction == "bad"));
    }

    #[test]
    fn delta_is_products_minus_reactants() {
        let net = infectivity_net();
        // infect: T + V5 -> I5 over species [U0, T, V5, I5, F, U]
        assert_eq!(net.reactions()[0].delta, vec![0, -1, -1, 1, 0, 0]);
        // produce_u: U0 -> U0 + U (catalytic: U0 cancels)
        assert_eq!(net.reactions()[1].delta, vec![0, 0, 0, 0, 0, 1]);
    }

    #[test]
    fn validation_rejects_bad_models() {
        let dup = NetworkBuilder::new().species("A", 1).species("A", 2).build();
        assert!(matches!(dup, Err(ModelError::DuplicateSpecies(_))));

        let clash = NetworkBuilder::new()
            .species("A", 1)
            .parameter("A", 1.0)
            .build();
        assert!(matches!(clash, Err(ModelError::NameClash(_))));

        let neg = NetworkBuilder::new().species("A", -3).build();
        assert!(matches!(neg, Err(ModelError::NegativeInitialCount(_))));

        let reserved = NetworkBuilder::new().species("t", 0).build();
        assert!(matches!(reserved, Err(ModelError::ReservedName)));

        let unknown = NetworkBuilder::new()
            .species("A", 1)
            .mass_action("r", &[("Q", 1)], &[], Expr::Const(1.0))
            .build();
        assert!(matches!(unknown, Err(ModelError::UnknownSpecies(q)) if q == "Q"));

        let unknown_ident = NetworkBuilder::new()
            .species("A", 1)
            .mass_action("r", &[("A", 1)], &[], parse_expr("kk").unwrap())
            .build();
        assert!(matches!(
            unknown_ident,
            Err(ModelError::UnknownIdentifier(name, _)) if name == "kk"
        ));

        let zero_coeff = NetworkBuilder::new()
            .species("A", 1)
            .mass_action("r", &[("A", 0)], &[], Expr::Const(1.0))
            .build();
        assert!(matches!(zero_coeff, Err(ModelError::ZeroCoefficient { .. })));
    }

    #[test]
    fn repeated_species_on_a_side_accumulate() {
        let net = NetworkBuilder::new()
            .species("A", 4)
            .species("B", 0)
            .mass_action(
                "pair",
                &[("A", 1), ("A", 1)],
                &[("B", 1)],
                Expr::Const(1.0),
            )
            .build()
            .unwrap();
        assert_eq!(net.reactions()[0].reactants, vec![(0, 2)]);
        assert_eq!(net.reactions()[0].delta, vec![-2, 1]);
    }
}
