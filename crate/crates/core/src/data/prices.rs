//! Model pricing: per-token specs and the TOML price-sheet file format.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A model's identity, per-token USD prices, and training-split average
/// output length (filled by `populate_avg_output_lengths`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    /// USD per input token.
    pub input_token_price: f64,
    /// USD per output token.
    pub output_token_price: f64,
    pub avg_output_length: Option<f64>,
    pub is_reference: bool,
}

impl ModelSpec {
    pub fn new(name: &str, input_token_price: f64, output_token_price: f64, is_reference: bool) -> Self {
        Self {
            name: name.to_string(),
            input_token_price,
            output_token_price,
            avg_output_length: None,
            is_reference,
        }
    }
}

/// Look up a spec by model name.
pub fn spec_for<'a>(specs: &'a [ModelSpec], name: &str) -> Result<&'a ModelSpec> {
    specs
        .iter()
        .find(|s| s.name == name)
        .ok_or_else(|| Error::UnknownModel(name.to_string()))
}

/// The unique reference spec; errors unless exactly one is flagged.
pub fn reference_spec(specs: &[ModelSpec]) -> Result<&ModelSpec> {
    let mut found = None;
    for s in specs {
        if s.is_reference {
            if found.is_some() {
                return Err(Error::InvalidConfig(
                    "more than one model flagged as reference".into(),
                ));
            }
            found = Some(s);
        }
    }
    found.ok_or_else(|| Error::InvalidConfig("no model flagged as reference".into()))
}

/// One price-sheet row. Prices are USD per 1M tokens as published by
/// provider price pages; they are converted to per-token on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceEntry {
    pub name: String,
    pub input_per_mtok: f64,
    pub output_per_mtok: f64,
}

/// Price-sheet file: ordered model list plus the reference model name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSheet {
    pub reference: String,
    pub models: Vec<PriceEntry>,
}

impl PriceSheet {
    /// Built-in default: eight commercial models with their published
    /// API prices in USD per 1M tokens, anchored on GPT-4o.
    pub fn builtin_default() -> Self {
        let entry = |name: &str, input: f64, output: f64| PriceEntry {
            name: name.to_string(),
            input_per_mtok: input,
            output_per_mtok: output,
        };
        Self {
            reference: "GPT-4o".into(),
            models: vec![
                entry("GPT-4o", 5.0, 15.0),
                entry("GPT-3.5-turbo", 3.0, 6.0),
                entry("Llama-3.1-8b", 0.3, 0.61),
                entry("Mistral-7b", 0.25, 0.25),
                entry("Mistral-8x7b", 0.7, 0.7),
                entry("Phi-3-mini", 0.3, 0.9),
                entry("Phi-3-medium", 0.5, 1.5),
                entry("Codestral-22b", 1.0, 3.0),
            ],
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        let sheet: PriceSheet = toml::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("price sheet: {e}")))?;
        sheet.validate()?;
        Ok(sheet)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(format!("price sheet: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        if !self.models.iter().any(|m| m.name == self.reference) {
            return Err(Error::InvalidConfig(format!(
                "reference model `{}` not present in price sheet",
                self.reference
            )));
        }
        for m in &self.models {
            if m.input_per_mtok < 0.0 || m.output_per_mtok < 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "model `{}` has a negative price",
                    m.name
                )));
            }
        }
        Ok(())
    }

    /// Convert to per-token model specs, preserving order.
    pub fn to_specs(&self) -> Result<Vec<ModelSpec>> {
        self.validate()?;
        Ok(self
            .models
            .iter()
            .map(|m| ModelSpec {
                name: m.name.clone(),
                input_token_price: m.input_per_mtok / 1_000_000.0,
                output_token_price: m.output_per_mtok / 1_000_000.0,
                avg_output_length: None,
                is_reference: m.name == self.reference,
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_sheet_converts_to_per_token() {
        let specs = PriceSheet::builtin_default().to_specs().unwrap();
        assert_eq!(specs.len(), 8);
        let gpt4o = spec_for(&specs, "GPT-4o").unwrap();
        assert!(gpt4o.is_reference);
        assert_eq!(gpt4o.input_token_price, 5.0 / 1_000_000.0);
        assert_eq!(gpt4o.output_token_price, 15.0 / 1_000_000.0);
        let mistral = spec_for(&specs, "Mistral-7b").unwrap();
        assert!(!mistral.is_reference);
        assert_eq!(mistral.input_token_price, 0.25 / 1_000_000.0);
        assert_eq!(reference_spec(&specs).unwrap().name, "GPT-4o");
    }

    #[test]
    fn toml_round_trip_preserves_order() {
        let sheet = PriceSheet::builtin_default();
        let text = sheet.to_toml_string().unwrap();
        let parsed: PriceSheet = toml::from_str(&text).unwrap();
        assert_eq!(sheet, parsed);
    }

    #[test]
    fn missing_reference_rejected() {
        let sheet = PriceSheet {
            reference: "nope".into(),
            models: vec![PriceEntry {
                name: "a".into(),
                input_per_mtok: 1.0,
                output_per_mtok: 1.0,
            }],
        };
        assert!(sheet.validate().is_err());
    }
}
