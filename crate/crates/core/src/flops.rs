//! Measured FLOP counting for tape runs.
//!
//! Counts follow the same convention as the analytic model in
//! [`crate::complexity`]: one multiply-accumulate of a convolution is
//! `mac_flops` FLOPs (1 by default), and every value assignment or pointwise
//! product is one FLOP. Bias adds are only counted in strict mode.

use std::collections::BTreeMap;

use crate::complexity::CostModel;

/// Role of an op inside a cost-model row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Part {
    /// The row's convolution.
    Conv,
    /// Producing the modulation maps of the norm preceding the conv.
    Norm,
    /// Normalizing the input and applying the modulation maps.
    Apply,
}

/// Cost-model row plus the part of that row an op belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Scope {
    pub row: usize,
    pub part: Part,
}

impl Scope {
    pub fn new(row: usize, part: Part) -> Self {
        Scope { row, part }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Category {
    /// Convolution multiply-accumulates.
    ConvMac,
    /// Bias adds (convolution biases and the `1 +` of positional rescaling).
    Bias,
    /// Per-pixel value assignments (guided sampling, edge modulation).
    Assign,
    /// Pointwise products that produce modulation maps.
    ModulationProduct,
    /// Statistics and normalization arithmetic.
    Normalize,
    /// Everything else pointwise (activations, adds, the final modulation).
    Elementwise,
}

impl Category {
    /// Whether the cost model counts this category.
    pub fn in_model(self, model: &CostModel) -> bool {
        match self {
            Category::ConvMac | Category::Assign | Category::ModulationProduct => true,
            Category::Bias => model.strict,
            Category::Normalize | Category::Elementwise => false,
        }
    }
}

/// Per-run FLOP tallies keyed by scope and category.
#[derive(Debug, Clone, Default)]
pub struct FlopCounter {
    model: CostModel,
    tallies: BTreeMap<(Option<Scope>, Category), u64>,
}

impl FlopCounter {
    pub fn new(model: CostModel) -> Self {
        FlopCounter {
            model,
            tallies: BTreeMap::new(),
        }
    }

    pub fn model(&self) -> &CostModel {
        &self.model
    }

    pub fn record(&mut self, scope: Option<Scope>, category: Category, flops: u64) {
        if flops > 0 {
            *self.tallies.entry((scope, category)).or_default() += flops;
        }
    }

    pub fn record_macs(&mut self, scope: Option<Scope>, macs: u64) {
        self.record(scope, Category::ConvMac, macs * self.model.mac_flops);
    }

    pub fn get(&self, scope: Option<Scope>, category: Category) -> u64 {
        self.tallies.get(&(scope, category)).copied().unwrap_or(0)
    }

    /// FLOPs in `scope` that the cost model counts.
    pub fn modeled(&self, scope: Scope) -> u64 {
        self.tallies
            .iter()
            .filter(|((s, c), _)| *s == Some(scope) && c.in_model(&self.model))
            .map(|(_, v)| v)
            .sum()
    }

    pub fn conv_flops(&self, row: usize) -> u64 {
        self.modeled(Scope::new(row, Part::Conv))
    }

    pub fn norm_flops(&self, row: usize) -> u64 {
        self.modeled(Scope::new(row, Part::Norm))
    }

    pub fn total_by_category(&self, category: Category) -> u64 {
        self.tallies
            .iter()
            .filter(|((_, c), _)| *c == category)
            .map(|(_, v)| v)
            .sum()
    }

    /// Everything recorded, modeled or not.
    pub fn total(&self) -> u64 {
        self.tallies.values().sum()
    }

    /// Sum of all modeled FLOPs over every scope.
    pub fn modeled_total(&self) -> u64 {
        self.tallies
            .iter()
            .filter(|((_, c), _)| c.in_model(&self.model))
            .map(|(_, v)| v)
            .sum()
    }

    pub fn rows(&self) -> Vec<usize> {
        let mut rows: Vec<usize> = self.tallies.keys().filter_map(|(s, _)| s.map(|s| s.row)).collect();
        rows.dedup();
        rows
    }
}
