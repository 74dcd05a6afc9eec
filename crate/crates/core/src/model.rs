use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::attention::{
    interest_profile, item_block_means, user_rep_attentive, user_rep_plain, InterestProfile, ItemBlockMeans,
};
use crate::embedding::{compute_dims, AttributeLayout, DimensionSchedule, ParameterStore};
use crate::error::{Error, Result};
use crate::kg::{InteractionSet, KnowledgeGraph, UserId};
use crate::propagation::{item_representation, CombineMode, ItemRepresentation};

/// Full model or one of its ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Concatenated blocks with interest-gated user representations.
    #[default]
    Full,
    /// Concatenated blocks, plain mean-pooled user representations.
    Noatt,
    /// Blocks averaged elementwise, no attention.
    Mean,
    /// Blocks summed elementwise, no attention.
    Sum,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::Noatt, Variant::Mean, Variant::Sum];

    pub fn combine(self) -> CombineMode {
        match self {
            Variant::Full | Variant::Noatt => CombineMode::Concat,
            Variant::Mean => CombineMode::Mean,
            Variant::Sum => CombineMode::Sum,
        }
    }

    pub fn attention(self) -> bool {
        self == Variant::Full
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::Noatt => "noatt",
            Variant::Mean => "mean",
            Variant::Sum => "sum",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" | "none" => Ok(Variant::Full),
            "noatt" => Ok(Variant::Noatt),
            "mean" => Ok(Variant::Mean),
            "sum" => Ok(Variant::Sum),
            other => Err(Error::Config(format!(
                "unknown ablation {other:?} (expected none, noatt, mean or sum)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelSpec {
    /// Number of propagation layers after layer 0.
    pub depth: usize,
    pub combine: CombineMode,
    pub attention: bool,
    pub temperature: f64,
}

impl ModelSpec {
    pub fn new(variant: Variant, depth: usize, temperature: f64) -> Self {
        ModelSpec {
            depth,
            combine: variant.combine(),
            attention: variant.attention(),
            temperature,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.attention && self.combine != CombineMode::Concat {
            return Err(Error::Config(
                "interest attention needs concatenated blocks; mean/sum combination must run without it".into(),
            ));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// Block widths for a graph: the edge-count ramp for concatenation, `d_max`
/// everywhere for the elementwise ablations.
pub fn model_layout(
    graph: &KnowledgeGraph,
    schedule: &DimensionSchedule,
    combine: CombineMode,
) -> Result<AttributeLayout> {
    match combine {
        CombineMode::Concat => AttributeLayout::new(compute_dims(graph.edge_counts(), schedule)),
        CombineMode::Mean | CombineMode::Sum => AttributeLayout::uniform(graph.relation_count(), schedule.d_max),
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Model<'a> {
    pub graph: &'a KnowledgeGraph,
    pub layout: &'a AttributeLayout,
    pub spec: ModelSpec,
}

impl<'a> Model<'a> {
    pub fn new(graph: &'a KnowledgeGraph, layout: &'a AttributeLayout, spec: ModelSpec) -> Result<Self> {
        spec.validate()?;
        spec.combine.check_layout(layout)?;
        if layout.relation_count() != graph.relation_count() {
            return Err(Error::Config(format!(
                "layout has {} blocks but the graph has {} relations",
                layout.relation_count(),
                graph.relation_count()
            )));
        }
        Ok(Model { graph, layout, spec })
    }

    pub fn with_graph(&self, graph: &'a KnowledgeGraph) -> Self {
        Model { graph, ..*self }
    }

    pub fn rep_width(&self) -> usize {
        self.spec.combine.rep_width(self.layout)
    }

    pub fn check_params(&self, params: &ParameterStore) -> Result<()> {
        if params.dims() != self.layout.dims() || params.user_width() != self.rep_width() {
            return Err(Error::Config(format!(
                "parameter layout {:?} (user width {}) does not match model layout {:?} (width {})",
                params.dims(),
                params.user_width(),
                self.layout.dims(),
                self.rep_width()
            )));
        }
        if params.entity_count() != self.graph.entity_count() {
            return Err(Error::Config(format!(
                "parameters cover {} entities, graph has {}",
                params.entity_count(),
                self.graph.entity_count()
            )));
        }
        Ok(())
    }

    pub fn item_reps(&self, params: &ParameterStore, item_count: usize) -> ItemRepresentation {
        item_representation(
            params,
            self.graph,
            self.layout,
            self.spec.combine,
            self.spec.depth,
            item_count,
        )
    }

    pub fn snapshot(&self, params: &ParameterStore, item_count: usize, stamp: u64) -> Snapshot {
        let items = self.item_reps(params, item_count);
        let means = item_block_means(&items, stamp);
        Snapshot { items, means }
    }
}

/// Item representations and their block means computed from one parameter state.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub items: ItemRepresentation,
    pub means: ItemBlockMeans,
}

impl Snapshot {
    pub fn user_rep(
        &self,
        model: &Model,
        params: &ParameterStore,
        interactions: &InteractionSet,
        user: UserId,
    ) -> Vec<f64> {
        if model.spec.attention {
            let profile = self.profile(model, params, interactions, user);
            user_rep_attentive(user, params, &self.items, interactions, &profile, model.layout)
        } else {
            user_rep_plain(user, params, &self.items, interactions)
        }
    }

    pub fn profile(
        &self,
        model: &Model,
        params: &ParameterStore,
        interactions: &InteractionSet,
        user: UserId,
    ) -> InterestProfile {
        interest_profile(
            user,
            params,
            &self.items,
            &self.means,
            model.layout,
            interactions,
            model.spec.temperature,
        )
    }
}
