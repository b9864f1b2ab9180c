//! JSON market description shared by the command-line tool and the demo.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::market::{CostModel, Hypotheses, Market, Product};
use crate::utility::{Family, UtilitySpec};

pub const SCHEMA_VERSION: u32 = 1;

/// A real number that may also be `"inf"` or `"-inf"` in JSON.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtendedReal(pub f64);

impl Serialize for ExtendedReal {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self.0 {
            x if x == f64::INFINITY => s.serialize_str("inf"),
            x if x == f64::NEG_INFINITY => s.serialize_str("-inf"),
            x => s.serialize_f64(x),
        }
    }
}

impl<'de> Deserialize<'de> for ExtendedReal {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(x) => Ok(ExtendedReal(x)),
            Raw::Text(t) => match t.as_str() {
                "inf" | "+inf" | "Infinity" => Ok(ExtendedReal(f64::INFINITY)),
                "-inf" | "-Infinity" => Ok(ExtendedReal(f64::NEG_INFINITY)),
                other => Err(serde::de::Error::custom(format!(
                    "expected a number, \"inf\" or \"-inf\", got \"{other}\""
                ))),
            },
        }
    }
}

fn infinite() -> ExtendedReal {
    ExtendedReal(f64::INFINITY)
}

fn is_infinite(x: &ExtendedReal) -> bool {
    x.0 == f64::INFINITY
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtilityConfig {
    pub family: Family,
    pub alpha: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default = "infinite", skip_serializing_if = "is_infinite")]
    pub sigma_cap: ExtendedReal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CostConfig {
    Constant { unit_cost: f64 },
    ConvexQuadratic { c0: f64, c1: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProductConfig {
    pub id: String,
    pub firm: String,
    pub value: f64,
    pub utility: UtilityConfig,
    pub cost: CostConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketConfig {
    pub schema_version: u32,
    pub theta: ExtendedReal,
    #[serde(default = "infinite")]
    pub sigma_cap: ExtendedReal,
    pub products: Vec<ProductConfig>,
    #[serde(default)]
    pub hypotheses: Hypotheses,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub twins: Vec<(String, String)>,
}

impl MarketConfig {
    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configs always serialize")
    }

    pub fn to_market(&self) -> Result<Market> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::InvalidParameter(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let products = self
            .products
            .iter()
            .map(|p| {
                let u = &p.utility;
                let utility = UtilitySpec::new(u.family, u.alpha, u.beta, u.sigma_cap.0)
                    .map_err(|e| Error::InvalidParameter(format!("product {}: {e}", p.id)))?;
                if utility.sigma_cap() != self.sigma_cap.0 {
                    return Err(Error::InvalidParameter(format!(
                        "product {}: utility sigma_cap {} differs from the market's {}",
                        p.id,
                        utility.sigma_cap(),
                        self.sigma_cap.0
                    )));
                }
                let cost = match p.cost {
                    CostConfig::Constant { unit_cost } => CostModel::Constant { unit_cost },
                    CostConfig::ConvexQuadratic { c0, c1 } => CostModel::ConvexQuadratic { c0, c1 },
                };
                Ok(Product {
                    id: p.id.clone(),
                    firm: p.firm.clone(),
                    value: p.value,
                    utility,
                    cost,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Market::new(products, self.theta.0)?
            .with_hypotheses(self.hypotheses)
            .with_twins(&self.twins)
    }

    pub fn from_market(market: &Market) -> Self {
        let products = market
            .products()
            .iter()
            .map(|p| ProductConfig {
                id: p.id.clone(),
                firm: p.firm.clone(),
                value: p.value,
                utility: UtilityConfig {
                    family: p.utility.family(),
                    alpha: p.utility.alpha(),
                    beta: p.utility.beta(),
                    sigma_cap: ExtendedReal(p.utility.sigma_cap()),
                },
                cost: match p.cost {
                    CostModel::Constant { unit_cost } => CostConfig::Constant { unit_cost },
                    CostModel::ConvexQuadratic { c0, c1 } => CostConfig::ConvexQuadratic { c0, c1 },
                },
            })
            .collect();
        let twins = market
            .twins()
            .iter()
            .map(|&(j, k)| (market.product(j).id.clone(), market.product(k).id.clone()))
            .collect();
        Self {
            schema_version: SCHEMA_VERSION,
            theta: ExtendedReal(market.theta()),
            sigma_cap: ExtendedReal(market.sigma_cap()),
            products,
            hypotheses: market.hypotheses(),
            twins,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const EXAMPLE: &str = r#"{
        "schema_version": 1,
        "theta": "-inf",
        "products": [
            {"id": "a", "firm": "f", "value": 1.0,
             "utility": {"family": "cobb_douglas_price", "alpha": 0.5, "beta": 1.5},
             "cost": {"kind": "constant", "unit_cost": 0.25}},
            {"id": "b", "firm": "g", "value": -0.5,
             "utility": {"family": "linear", "alpha": 2.0},
             "cost": {"kind": "constant", "unit_cost": 0.5}}
        ],
        "hypotheses": {"separable": true},
        "twins": [["a", "b"]]
    }"#;

    #[test]
    fn parses_extended_reals_and_defaults() {
        let cfg = MarketConfig::from_json(EXAMPLE).unwrap();
        assert_eq!(cfg.theta.0, f64::NEG_INFINITY);
        assert_eq!(cfg.sigma_cap.0, f64::INFINITY);
        assert!(cfg.hypotheses.separable && !cfg.hypotheses.value_costs);
        let m = cfg.to_market().unwrap();
        assert_eq!(m.num_firms(), 2);
        assert_eq!(m.twins(), &[(0, 1)]);
    }

    #[test]
    fn rejects_bad_input() {
        let err = MarketConfig::from_json("{\"schema_version\": 1,\n \"theta\": \"hot\"}").unwrap_err();
        assert_eq!(err.line(), 2);
        let lri_without_cap = EXAMPLE.replace("cobb_douglas_price", "log_remaining_income");
        assert!(MarketConfig::from_json(&lri_without_cap).unwrap().to_market().is_err());
        let wrong_version = EXAMPLE.replace("\"schema_version\": 1", "\"schema_version\": 2");
        assert!(MarketConfig::from_json(&wrong_version).unwrap().to_market().is_err());
    }

    #[test]
    fn finite_cap_round_trip() {
        let text = r#"{"schema_version": 1, "theta": 0, "sigma_cap": 8,
            "products": [{"id": "a", "firm": "f", "value": 0,
              "utility": {"family": "log_remaining_income", "alpha": 2, "sigma_cap": 8},
              "cost": {"kind": "convex_quadratic", "c0": 1, "c1": 0.5}}]}"#;
        let m = MarketConfig::from_json(text).unwrap().to_market().unwrap();
        let back = MarketConfig::from_json(&MarketConfig::from_market(&m).to_json()).unwrap();
        assert_eq!(back.to_market().unwrap(), m);
    }

    proptest! {
        #[test]
        fn round_trip_preserves_market(
            theta in prop_oneof![Just(f64::NEG_INFINITY), -3.0f64..3.0],
            values in prop::collection::vec(-5.0f64..5.0, 1..6),
            alpha in 0.01f64..10.0,
            beta in 0.1f64..3.0,
            cost in 0.0f64..4.0,
        ) {
            let products = values.iter().enumerate().map(|(j, &v)| ProductConfig {
                id: format!("p{j}"),
                firm: format!("f{}", j % 2),
                value: v,
                utility: UtilityConfig {
                    family: if j % 2 == 0 { Family::Linear } else { Family::CobbDouglasPrice },
                    alpha,
                    beta: (j % 2 == 1).then_some(beta),
                    sigma_cap: ExtendedReal(f64::INFINITY),
                },
                cost: if j % 3 == 0 {
                    CostConfig::ConvexQuadratic { c0: cost, c1: cost / 2.0 }
                } else {
                    CostConfig::Constant { unit_cost: cost }
                },
            }).collect();
            let cfg = MarketConfig {
                schema_version: SCHEMA_VERSION,
                theta: ExtendedReal(theta),
                sigma_cap: ExtendedReal(f64::INFINITY),
                products,
                hypotheses: Hypotheses::default(),
                twins: vec![],
            };
            let market = cfg.to_market().unwrap();
            let again = MarketConfig::from_json(&MarketConfig::from_market(&market).to_json()).unwrap();
            prop_assert_eq!(&again, &cfg);
            prop_assert_eq!(again.to_market().unwrap(), market);
        }
    }
}
