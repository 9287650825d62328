use diffcore::{Tape, Var};

use super::Result;
use crate::models::{Encoder, FeatureCache, Networks, Role, FEATURE_DIM};
use crate::navenv::{all_views, View};

/// Encoder features for each role. A frozen encoder gets a full table over
/// every reachable view up front; a trainable one gets a memo that is
/// dropped whenever its parameters change.
pub struct FeatureStore {
    caches: Vec<FeatureCache>,
    /// Cache index per role (policy, discriminator).
    slot: [usize; 2],
    frozen: [bool; 2],
}

fn role_index(role: Role) -> usize {
    match role {
        Role::Policy => 0,
        Role::Disc => 1,
    }
}

impl FeatureStore {
    pub fn new(nets: &Networks) -> Result<Self> {
        let shared = nets.shares_encoder();
        let slot = if shared { [0, 0] } else { [0, 1] };
        let frozen = [Role::Policy, Role::Disc].map(|r| nets.params.is_group_frozen(&nets.encoder(r).group));
        let mut caches = vec![FeatureCache::new(); if shared { 1 } else { 2 }];
        let views = all_views();
        for r in [Role::Policy, Role::Disc] {
            let i = role_index(r);
            if frozen[i] && caches[slot[i]].is_empty() {
                caches[slot[i]] = FeatureCache::precompute(nets.encoder(r), &nets.params, &views)?;
            }
        }
        Ok(FeatureStore { caches, slot, frozen })
    }

    pub fn is_frozen(&self, role: Role) -> bool {
        self.frozen[role_index(role)]
    }

    pub fn cache_mut(&mut self, role: Role) -> &mut FeatureCache {
        &mut self.caches[self.slot[role_index(role)]]
    }

    /// Feature rows without a gradient path.
    pub fn rows(&mut self, nets: &Networks, role: Role, views: &[View]) -> Result<Vec<f32>> {
        Ok(self.cache_mut(role).rows(nets.encoder(role), &nets.params, views)?)
    }

    /// Call after an optimizer step that may have touched `role`'s encoder.
    pub fn invalidate(&mut self, role: Role) {
        if !self.is_frozen(role) {
            self.cache_mut(role).clear();
        }
    }

    /// Feature node for `views`: a constant for a frozen encoder, the full
    /// encoder graph otherwise.
    pub fn node(&mut self, t: &mut Tape, nets: &Networks, role: Role, views: &[View]) -> Result<Var> {
        if self.is_frozen(role) {
            let rows = self.rows(nets, role, views)?;
            Ok(t.constant([views.len(), FEATURE_DIM], rows)?)
        } else {
            let x = Encoder::input(t, views)?;
            Ok(nets.encoder(role).forward(t, x)?)
        }
    }
}
