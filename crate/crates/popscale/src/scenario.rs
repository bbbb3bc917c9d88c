//! Scenario configuration: one JSON document describes a model family, its
//! environment and demographic triplets, the N list, grids, replicate counts
//! and the seed. Everything a run needs is in the scenario; there are no
//! entropy-default runs.

use serde::{Deserialize, Serialize};

use crate::branching::{
    AppendixRepro, BpModelSpec, CoopGwRepro, HeavyTail, Interaction, LogisticFellerRepro, ReproLaw,
};
use crate::error::{Error, Result};
use crate::levy::{EnvFamily, JumpComponent, LevyTriplet, Support, VnRule};
use crate::wf::{SelectionFn, WfModel};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KEll {
    pub k: u32,
    pub ell: f64,
}

/// Reproduction-law selector for branching scenarios. The appendix and
/// cooperative laws are built from the scenario's demographic triplet and
/// interaction; the logistic law is self-contained.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReproKind {
    Unit,
    Appendix,
    CoopGw,
    LogisticFeller { sigma_d: f64, alpha_d: f64, c: f64 },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ModelBlock {
    Wf { z0: f64, selection: SelectionFn },
    Bp { z0: f64, repro: ReproKind, #[serde(default)] z_max: Option<f64> },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    #[serde(flatten)]
    pub model: ModelBlock,
    /// Environment triplet (the per-N sampler is derived from it).
    pub env: LevyTriplet,
    /// Demographic triplet (branching models; sigma_d = 0 for the appendix law).
    #[serde(default)]
    pub demo: Option<LevyTriplet>,
    #[serde(default)]
    pub interaction: Option<Interaction>,
    pub n_list: Vec<u64>,
    #[serde(default)]
    pub vn: VnRule,
    pub horizon: f64,
    pub t_grid: Vec<f64>,
    pub z_grid: Vec<f64>,
    #[serde(default)]
    pub test_functions: Vec<KEll>,
    pub replicates: usize,
    pub dt: f64,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
}

fn default_output_dir() -> String {
    "out".to_string()
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Scenario> {
        let scn: Scenario = serde_json::from_str(text).map_err(|e| Error::Config {
            key: format!("line {}, column {}", e.line(), e.column()),
            reason: e.to_string(),
        })?;
        scn.validate()?;
        Ok(scn)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_list.is_empty() {
            return Err(Error::config("n_list", "must not be empty"));
        }
        if self.n_list.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config("n_list", "must be strictly increasing"));
        }
        if self.replicates < 100 {
            return Err(Error::config("replicates", "must be at least 100"));
        }
        if !(self.dt > 0.0) {
            return Err(Error::config("dt", "must be positive"));
        }
        if !(self.horizon > 0.0) {
            return Err(Error::config("horizon", "must be positive"));
        }
        if self.t_grid.is_empty() || self.t_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config("t_grid", "must be nonempty and strictly increasing"));
        }
        if self.t_grid.iter().any(|&t| t <= 0.0 || t > self.horizon) {
            return Err(Error::config("t_grid", "times must lie in (0, horizon]"));
        }
        if self.z_grid.is_empty() {
            return Err(Error::config("z_grid", "must not be empty"));
        }
        self.env.validate(Support::Env, "env")?;
        match &self.model {
            ModelBlock::Wf { z0, .. } => {
                if !(0.0..=1.0).contains(z0) {
                    return Err(Error::config("z0", "WF initial fraction must lie in [0,1]"));
                }
                if self.z_grid.iter().any(|&z| !(0.0..=1.0).contains(&z)) {
                    return Err(Error::config("z_grid", "WF grid must lie in [0,1]"));
                }
                if !matches!(self.vn, VnRule::N) {
                    return Err(Error::config("vn", "the WF model is scaled with v_N = N"));
                }
            }
            ModelBlock::Bp { z0, repro, z_max } => {
                if *z0 < 0.0 {
                    return Err(Error::config("z0", "BP initial mass must be nonnegative"));
                }
                if self.z_grid.iter().any(|&z| z < 0.0) {
                    return Err(Error::config("z_grid", "BP grid must be nonnegative"));
                }
                if let Some(zm) = z_max {
                    if !(*zm > 0.0) {
                        return Err(Error::config("z_max", "must be positive"));
                    }
                }
                match repro {
                    ReproKind::Appendix => {
                        let demo = self.demo.as_ref().ok_or_else(|| {
                            Error::config("demo", "the appendix law requires a demographic triplet")
                        })?;
                        demo.validate(Support::Demo, "demo")?;
                        if demo.sigma != 0.0 {
                            return Err(Error::config("demo.sigma", "the appendix construction has sigma_D = 0"));
                        }
                        atoms_only(demo)?;
                    }
                    ReproKind::CoopGw => {
                        let demo = self.demo.as_ref().ok_or_else(|| {
                            Error::config("demo", "the cooperative law requires a demographic triplet")
                        })?;
                        demo.validate(Support::Demo, "demo")?;
                        atoms_only(demo)?;
                        if demo.sigma > 1.0 {
                            return Err(Error::config("demo.sigma", "three-point base law requires sigma_d <= 1"));
                        }
                    }
                    ReproKind::LogisticFeller { sigma_d, .. } => {
                        if !(*sigma_d > 0.0 && *sigma_d <= 1.0) {
                            return Err(Error::config(
                                "repro.sigma_d",
                                "logistic-Feller law requires 0 < sigma_d <= 1",
                            ));
                        }
                        if !self.env.nu.is_empty() {
                            return Err(Error::config(
                                "env.nu",
                                "the logistic-Feller scenario uses a diffusive environment",
                            ));
                        }
                    }
                    ReproKind::Unit => {}
                }
                if let Some(g) = &self.interaction {
                    g.validate_decay()?;
                }
            }
        }
        Ok(())
    }

    pub fn env_family(&self) -> EnvFamily {
        EnvFamily::from_triplet(self.env.clone()).with_vn(self.vn)
    }

    pub fn interaction_or_zero(&self) -> Interaction {
        self.interaction.unwrap_or(Interaction::Zero)
    }

    /// Wright-Fisher model at scale N.
    pub fn wf_model(&self, n: u64) -> Result<WfModel> {
        match &self.model {
            ModelBlock::Wf { z0, selection } => {
                Ok(WfModel::new(n, *selection, self.env_family(), *z0))
            }
            _ => Err(Error::config("model", "not a WF scenario")),
        }
    }

    fn build_repro(&self) -> Result<ReproLaw> {
        let bp = match &self.model {
            ModelBlock::Bp { repro, .. } => repro,
            _ => return Err(Error::config("model", "not a BP scenario")),
        };
        Ok(match bp {
            ReproKind::Unit => ReproLaw::Unit,
            ReproKind::Appendix => {
                let demo = self.demo.as_ref().expect("validated");
                ReproLaw::Appendix(AppendixRepro {
                    interaction: self.interaction_or_zero(),
                    alpha_d: demo.alpha,
                    heavy: heavy_from(demo),
                    h_bound: demo.truncation.bound,
                })
            }
            ReproKind::CoopGw => {
                let demo = self.demo.as_ref().expect("validated");
                ReproLaw::CoopGw(CoopGwRepro {
                    alpha_d: demo.alpha,
                    sigma_d: demo.sigma,
                    heavy: heavy_from(demo),
                    interaction: self.interaction_or_zero(),
                    h_bound: demo.truncation.bound,
                })
            }
            ReproKind::LogisticFeller { sigma_d, alpha_d, c } => ReproLaw::LogisticFeller(
                LogisticFellerRepro { sigma_d: *sigma_d, alpha_d: *alpha_d, c: *c },
            ),
        })
    }

    /// Branching model family (N-independent part).
    pub fn bp_spec(&self) -> Result<BpModelSpec> {
        match &self.model {
            ModelBlock::Bp { z0, z_max, .. } => {
                let mut spec = BpModelSpec::new(self.vn, self.build_repro()?, self.env_family(), *z0);
                if let Some(zm) = z_max {
                    spec.z_max = *zm;
                }
                Ok(spec)
            }
            _ => Err(Error::config("model", "not a BP scenario")),
        }
    }

    /// Demographic triplet and interaction entering the limiting formulas.
    /// For the logistic-Feller law these are the effective parameters of the
    /// implemented chain (drift -alpha_d, interaction -c z).
    pub fn bp_targets(&self) -> Result<(LevyTriplet, Interaction)> {
        match &self.model {
            ModelBlock::Bp { repro, .. } => Ok(match repro {
                ReproKind::Unit => (LevyTriplet::zero_demo(), Interaction::Zero),
                ReproKind::Appendix | ReproKind::CoopGw => {
                    (self.demo.clone().expect("validated"), self.interaction_or_zero())
                }
                ReproKind::LogisticFeller { sigma_d, alpha_d, c } => {
                    let law = LogisticFellerRepro { sigma_d: *sigma_d, alpha_d: *alpha_d, c: *c };
                    (law.effective_demo_triplet(), law.effective_interaction())
                }
            }),
            _ => Err(Error::config("model", "not a BP scenario")),
        }
    }

    pub fn is_wf(&self) -> bool {
        matches!(self.model, ModelBlock::Wf { .. })
    }
}

fn atoms_only(demo: &LevyTriplet) -> Result<()> {
    if demo.nu.components.iter().any(|c| !matches!(c, JumpComponent::Atom { .. })) {
        return Err(Error::config(
            "demo.nu",
            "structured reproduction laws carry atom-only demographic jump measures",
        ));
    }
    Ok(())
}

fn heavy_from(demo: &LevyTriplet) -> HeavyTail {
    HeavyTail {
        atoms: demo
            .nu
            .components
            .iter()
            .filter_map(|c| match c {
                JumpComponent::Atom { w, mass } => Some((*w, *mass)),
                _ => None,
            })
            .collect(),
    }
}

// ---------------------------------------------------------------------------
// Reference scenarios
// ---------------------------------------------------------------------------

/// Wright-Fisher with the example selection in an atom environment.
pub fn wf_example_p() -> Scenario {
    Scenario {
        name: "wf-example-p".into(),
        seed: 20240209,
        model: ModelBlock::Wf { z0: 0.3, selection: SelectionFn::Example },
        env: LevyTriplet::env_with_atoms(0.5, 0.0, &[(0.8, 0.7)]),
        demo: None,
        interaction: None,
        n_list: vec![500, 2000, 8000],
        vn: VnRule::N,
        horizon: 1.0,
        t_grid: vec![0.5, 1.0],
        z_grid: (1..=19).map(|i| i as f64 * 0.05).collect(),
        test_functions: vec![
            KEll { k: 1, ell: 0.0 },
            KEll { k: 1, ell: 1.0 },
            KEll { k: 2, ell: 0.0 },
            KEll { k: 2, ell: 1.0 },
        ],
        replicates: 5000,
        dt: 1e-3,
        output_dir: "out/wf-example-p".into(),
    }
}

/// Branching with the explicit appendix reproduction law (atom demographic
/// tail, bounded interaction g(z) = z/(1+z)) in an atom environment.
pub fn bpile_appendix() -> Scenario {
    Scenario {
        name: "bpile-appendix".into(),
        seed: 20240211,
        model: ModelBlock::Bp { z0: 1.0, repro: ReproKind::Appendix, z_max: None },
        env: LevyTriplet::env_with_atoms(0.1, 0.0, &[(0.4, 0.8)]),
        demo: Some(LevyTriplet::demo_with_atoms(0.2, 0.0, &[(1.5, 0.5)])),
        interaction: Some(Interaction::Bounded { c: 1.0 }),
        n_list: vec![100, 1000, 10000],
        vn: VnRule::N,
        horizon: 1.0,
        t_grid: vec![0.5, 1.0],
        z_grid: (1..=50).map(|i| i as f64 * 0.1).collect(),
        test_functions: vec![
            KEll { k: 1, ell: 0.0 },
            KEll { k: 1, ell: 1.0 },
            KEll { k: 2, ell: 0.0 },
            KEll { k: 3, ell: 1.0 },
        ],
        replicates: 2000,
        dt: 1e-3,
        output_dir: "out/bpile-appendix".into(),
    }
}

/// Logistic competition with small Brownian environmental fluctuations;
/// conservative, converging to dZ = -c Z² dt + sigma_E Z dB^E + sigma_D sqrt(Z) dB^D.
pub fn logistic_feller() -> Scenario {
    Scenario {
        name: "logistic-feller".into(),
        seed: 20240213,
        model: ModelBlock::Bp {
            z0: 1.0,
            repro: ReproKind::LogisticFeller { sigma_d: 0.9, alpha_d: 0.0, c: 1.0 },
            z_max: None,
        },
        env: LevyTriplet::diffusive_env(0.0, 0.3),
        demo: None,
        interaction: None,
        n_list: vec![500, 2000, 8000],
        vn: VnRule::N,
        horizon: 1.0,
        t_grid: vec![0.5, 1.0],
        z_grid: (1..=50).map(|i| i as f64 * 0.1).collect(),
        test_functions: vec![KEll { k: 1, ell: 0.0 }, KEll { k: 1, ell: 1.0 }, KEll { k: 2, ell: 0.0 }],
        replicates: 5000,
        dt: 1e-3,
        output_dir: "out/logistic-feller".into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_scenarios_validate_and_round_trip() {
        for scn in [wf_example_p(), bpile_appendix(), logistic_feller()] {
            scn.validate().expect("reference scenario must validate");
            let json = serde_json::to_string_pretty(&scn).unwrap();
            let back = Scenario::from_json(&json).unwrap();
            assert_eq!(back.name, scn.name);
            assert_eq!(back.seed, scn.seed);
        }
    }

    #[test]
    fn malformed_json_points_at_location() {
        let err = Scenario::from_json("{ \"name\": 3 }").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line"), "{msg}");
    }

    #[test]
    fn semantic_errors_name_keys() {
        let mut scn = wf_example_p();
        scn.n_list = vec![100, 100];
        let err = scn.validate().unwrap_err();
        assert!(err.to_string().contains("n_list"));

        let mut scn = wf_example_p();
        scn.replicates = 10;
        assert!(scn.validate().unwrap_err().to_string().contains("replicates"));

        let mut scn = bpile_appendix();
        scn.demo = None;
        assert!(scn.validate().unwrap_err().to_string().contains("demo"));

        let mut scn = logistic_feller();
        scn.env = LevyTriplet::env_with_atoms(0.0, 0.1, &[(0.5, 1.0)]);
        assert!(scn.validate().unwrap_err().to_string().contains("env.nu"));
    }

    /// Regenerates the shipped scenario files; run explicitly with
    /// `cargo test -p popscale regen_reference_scenario_files -- --ignored`.
    #[test]
    #[ignore]
    fn regen_reference_scenario_files() {
        let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
        std::fs::create_dir_all(&dir).unwrap();
        for scn in [wf_example_p(), bpile_appendix(), logistic_feller()] {
            let path = dir.join(format!("{}.json", scn.name));
            let json = serde_json::to_string_pretty(&scn).unwrap();
            std::fs::write(path, json + "\n").unwrap();
        }
    }

    #[test]
    fn shipped_scenario_files_match_reference_constructors() {
        let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
        for scn in [wf_example_p(), bpile_appendix(), logistic_feller()] {
            let path = dir.join(format!("{}.json", scn.name));
            let text = std::fs::read_to_string(&path)
                .unwrap_or_else(|_| panic!("missing shipped scenario {}", path.display()));
            let parsed = Scenario::from_json(&text).unwrap();
            assert_eq!(serde_json::to_string(&parsed).unwrap(), serde_json::to_string(&scn).unwrap());
        }
    }

    #[test]
    fn bp_targets_flip_logistic_signs() {
        let scn = logistic_feller();
        let (demo, g) = scn.bp_targets().unwrap();
        assert_eq!(demo.alpha, 0.0);
        assert_eq!(demo.sigma, 0.9);
        assert!((g.eval(2.0) + 2.0).abs() < 1e-15, "g(2) = {}", g.eval(2.0));
    }
}
