//! Staged growth of the image networks with blended transitions.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Module;
use crate::tensor::Float;
use crate::trainer::ModelBundle;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProgressiveState {
    pub level: usize,
    pub omega: f64,
    pub samples_seen: u64,
    pub stage_budget: u64,
    pub mcmc_steps: usize,
}

impl ProgressiveState {
    pub fn initial(stage_budget: u64, schedule: &McmcSchedule) -> Result<Self> {
        Ok(Self { level: 1, omega: 1.0, samples_seen: 0, stage_budget, mcmc_steps: schedule.steps(1)? })
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.level >= 1
            && (0.0..=1.0).contains(&self.omega)
            && (self.level > 1 || self.omega == 1.0)
            && self.mcmc_steps >= 1;
        if !ok {
            return Err(Error::Config(format!("inconsistent progressive state {self:?}")));
        }
        Ok(())
    }

    /// Account for `n` more samples and refresh the transition factor.
    pub fn advance(&mut self, n: u64) -> Result<()> {
        self.samples_seen += n;
        self.omega = update_omega(self.samples_seen, self.stage_budget, self.level)?;
        Ok(())
    }

    pub fn stage_done(&self) -> bool {
        self.samples_seen >= self.stage_budget
    }
}

/// `1` in the first stage, otherwise `min(1, m / N)`.
pub fn update_omega(m: u64, budget: u64, level: usize) -> Result<f64> {
    if budget == 0 {
        return Err(Error::Config("stage budget must be positive".into()));
    }
    if level == 1 {
        return Ok(1.0);
    }
    Ok((m as f64 / budget as f64).min(1.0))
}

/// Langevin steps per stage: `k0 - decrement * (s - 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McmcSchedule {
    pub k0: usize,
    pub decrement: usize,
}

impl Default for McmcSchedule {
    fn default() -> Self {
        Self { k0: 16, decrement: 4 }
    }
}

impl McmcSchedule {
    pub fn steps(&self, level: usize) -> Result<usize> {
        mcmc_step_schedule(level, self.k0, self.decrement)
    }
}

pub fn mcmc_step_schedule(level: usize, k0: usize, decrement: usize) -> Result<usize> {
    if level == 0 {
        return Err(Error::Config("levels start at 1".into()));
    }
    let k = k0 as i64 - (decrement as i64) * (level as i64 - 1);
    if k < 1 {
        return Err(Error::Config(format!("Langevin schedule k0={k0}, decrement={decrement} reaches {k} steps at level {level}")));
    }
    Ok(k as usize)
}

/// Parameter names that one expansion added, and those kept only for the transition.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExpansionPlan {
    pub modules_added: Vec<String>,
    pub modules_fading: Vec<String>,
}

fn names<T: Float>(bundle: &ModelBundle<T>) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    bundle.visit("", &mut |name, _| {
        out.insert(name.to_string());
    });
    out
}

fn fading_names<T: Float>(bundle: &ModelBundle<T>) -> Vec<String> {
    let mut out = Vec::new();
    let prefixes = [
        ("descriptor.trunk", bundle.descriptor.trunk.fading_rgb.as_ref()),
        ("encoder.trunk", bundle.encoder.trunk.fading_rgb.as_ref()),
        ("translator.encoder", bundle.translator.encoder.fading_rgb.as_ref()),
    ];
    let level = bundle.level();
    for (prefix, conv) in prefixes {
        if let Some(c) = conv {
            c.visit(&format!("{prefix}.from_rgb_l{}", level - 1), &mut |n, _| out.push(n.to_string()));
        }
    }
    if let Some(c) = &bundle.translator.fading_to_rgb {
        c.visit(&format!("translator.to_rgb_l{}", level - 1), &mut |n, _| out.push(n.to_string()));
    }
    out
}

/// Grow descriptor, translator and style encoder by one level. Existing
/// parameters keep their values; the style generator is untouched; the
/// transition factor restarts at 0.
pub fn expand<T: Float, R: Rng>(
    bundle: &mut ModelBundle<T>,
    stage_budget: u64,
    schedule: &McmcSchedule,
    rng: &mut R,
) -> Result<ExpansionPlan> {
    let level = bundle.level() + 1;
    bundle.descriptor.arch.check_level(level)?;
    let mcmc_steps = schedule.steps(level)?;
    if stage_budget == 0 {
        return Err(Error::Config("stage budget must be positive".into()));
    }
    let before = names(bundle);
    bundle.descriptor.expand(rng)?;
    bundle.translator.expand(rng)?;
    bundle.encoder.expand(rng)?;
    bundle.progressive = ProgressiveState { level, omega: 0.0, samples_seen: 0, stage_budget, mcmc_steps };
    let after = names(bundle);
    let modules_fading = fading_names(bundle);
    let modules_added = after
        .iter()
        .filter(|n| !before.contains(*n) && !modules_fading.contains(n))
        .cloned()
        .collect();
    Ok(ExpansionPlan { modules_added, modules_fading })
}

/// Remove the fading adapters once a transition has completed.
pub fn drop_fading<T: Float>(bundle: &mut ModelBundle<T>) -> Result<()> {
    if bundle.progressive.omega != 1.0 {
        return Err(Error::Config(format!("transition still running (omega = {})", bundle.progressive.omega)));
    }
    bundle.descriptor.trunk.fading_rgb = None;
    bundle.encoder.trunk.fading_rgb = None;
    bundle.translator.encoder.fading_rgb = None;
    bundle.translator.fading_to_rgb = None;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn omega_follows_the_stage() {
        assert_eq!(update_omega(0, 100, 1).unwrap(), 1.0);
        assert_eq!(update_omega(37, 100, 1).unwrap(), 1.0);
        assert_eq!(update_omega(50, 100, 2).unwrap(), 0.5);
        assert_eq!(update_omega(200, 100, 2).unwrap(), 1.0);
        assert_eq!(update_omega(0, 100, 3).unwrap(), 0.0);
        assert!(matches!(update_omega(1, 0, 2), Err(Error::Config(_))));
    }

    #[test]
    fn langevin_steps_shrink_by_four() {
        let s = McmcSchedule::default();
        assert_eq!([s.steps(1).unwrap(), s.steps(2).unwrap(), s.steps(3).unwrap()], [16, 12, 8]);
        assert!(matches!(mcmc_step_schedule(2, 4, 4), Err(Error::Config(_))));
        assert_eq!(mcmc_step_schedule(1, 4, 4).unwrap(), 4);
    }

    #[test]
    fn advance_saturates() {
        let mut st = ProgressiveState { level: 2, omega: 0.0, samples_seen: 0, stage_budget: 24, mcmc_steps: 12 };
        let mut seen = vec![];
        while !st.stage_done() {
            st.advance(8).unwrap();
            seen.push(st.omega);
        }
        assert_eq!(seen, [1.0 / 3.0, 2.0 / 3.0, 1.0]);
    }
}
