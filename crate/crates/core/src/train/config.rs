use crate::config::{parse_entries, ConfigError};
use crate::losses::{LossConfig, LossTerms, SsimConfig};
use crate::nets::{self, CmudrnParams, StitchPoint};

use super::AdamConfig;

/// Training hyperparameters and ablation switches.
///
/// Every field maps to one key of the config file; see [`TrainConfig::KEYS`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stop after this many optimizer steps; 0 means no limit.
    pub max_steps: u64,
    pub loops: usize,
    pub channels: usize,
    pub seed: u64,
    pub alpha_s: f64,
    pub use_cross_stitch: bool,
    pub stitch_after_input: bool,
    pub stitch_after_recursive: bool,
    pub use_ssim_term: bool,
    pub use_frobenius_term: bool,
    pub use_local_losses: bool,
    pub use_recur_loss: bool,
    pub use_global_loss: bool,
    pub weight_local: f64,
    pub weight_recur: f64,
    pub weight_global: f64,
    pub train_fraction: f64,
    pub ssim_window: usize,
    pub ssim_sigma: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 4,
            epochs: 50,
            max_steps: 0,
            loops: 3,
            channels: nets::DEFAULT_CHANNELS,
            seed: 0,
            alpha_s: 0.5,
            use_cross_stitch: true,
            stitch_after_input: true,
            stitch_after_recursive: true,
            use_ssim_term: true,
            use_frobenius_term: true,
            use_local_losses: true,
            use_recur_loss: true,
            use_global_loss: true,
            weight_local: 1.0,
            weight_recur: 1.0,
            weight_global: 1.0,
            train_fraction: 0.7,
            ssim_window: 11,
            ssim_sigma: 1.5,
        }
    }
}

impl TrainConfig {
    /// Accepted keys with a one-line description each.
    pub const KEYS: &'static [(&'static str, &'static str)] = &[
        ("lr", "Adam learning rate"),
        ("beta1", "Adam first-moment decay"),
        ("beta2", "Adam second-moment decay"),
        ("epsilon", "Adam denominator offset"),
        ("batch_size", "images per optimizer step"),
        ("epochs", "passes over the training split"),
        ("max_steps", "stop after this many steps (0 = no limit)"),
        ("loops", "intra- and inter-loop count T"),
        ("channels", "feature width of each branch"),
        ("seed", "initialization and shuffling seed"),
        ("alpha_s", "cross-stitch mixing weight in [0, 1]"),
        ("use_cross_stitch", "enable cross-stitch units"),
        ("stitch_after_input", "stitch after each input convolution"),
        ("stitch_after_recursive", "stitch after each residual loop"),
        ("use_ssim_term", "include 1 - SSIM summands"),
        ("use_frobenius_term", "include Frobenius summands"),
        ("use_local_losses", "supervise the branch matching the weather label"),
        ("use_recur_loss", "supervise every outer-iteration estimate of that branch"),
        ("use_global_loss", "supervise the fused output"),
        ("weight_local", "weight of the local term"),
        ("weight_recur", "weight of the recurrence term"),
        ("weight_global", "weight of the global term"),
        ("train_fraction", "leading fraction of the dataset used for training"),
        ("ssim_window", "SSIM Gaussian window side (odd)"),
        ("ssim_sigma", "SSIM Gaussian sigma"),
    ];

    /// Parses a config file on top of the defaults.
    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut c = TrainConfig::default();
        for e in parse_entries(text)? {
            c.set(&e.key, &e.value).map_err(|reason| match reason {
                None => e.unknown(),
                Some(reason) => ConfigError::Value {
                    line: e.line,
                    key: e.key.clone(),
                    reason,
                },
            })?;
        }
        c.validate()?;
        Ok(c)
    }

    /// Sets one key. `Err(None)` for an unknown key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), Option<String>> {
        fn p<T: std::str::FromStr>(v: &str) -> Result<T, Option<String>>
        where
            T::Err: std::fmt::Display,
        {
            v.parse().map_err(|e: T::Err| Some(e.to_string()))
        }
        match key {
            "lr" => self.lr = p(value)?,
            "beta1" => self.beta1 = p(value)?,
            "beta2" => self.beta2 = p(value)?,
            "epsilon" => self.epsilon = p(value)?,
            "batch_size" => self.batch_size = p(value)?,
            "epochs" => self.epochs = p(value)?,
            "max_steps" => self.max_steps = p(value)?,
            "loops" => self.loops = p(value)?,
            "channels" => self.channels = p(value)?,
            "seed" => self.seed = p(value)?,
            "alpha_s" => self.alpha_s = p(value)?,
            "use_cross_stitch" => self.use_cross_stitch = p(value)?,
            "stitch_after_input" => self.stitch_after_input = p(value)?,
            "stitch_after_recursive" => self.stitch_after_recursive = p(value)?,
            "use_ssim_term" => self.use_ssim_term = p(value)?,
            "use_frobenius_term" => self.use_frobenius_term = p(value)?,
            "use_local_losses" => self.use_local_losses = p(value)?,
            "use_recur_loss" => self.use_recur_loss = p(value)?,
            "use_global_loss" => self.use_global_loss = p(value)?,
            "weight_local" => self.weight_local = p(value)?,
            "weight_recur" => self.weight_recur = p(value)?,
            "weight_global" => self.weight_global = p(value)?,
            "train_fraction" => self.train_fraction = p(value)?,
            "ssim_window" => self.ssim_window = p(value)?,
            "ssim_sigma" => self.ssim_sigma = p(value)?,
            _ => return Err(None),
        }
        Ok(())
    }

    /// Every key in [`KEYS`](Self::KEYS) order; parses back to `self`.
    pub fn to_text(&self) -> String {
        let values: Vec<String> = vec![
            self.lr.to_string(),
            self.beta1.to_string(),
            self.beta2.to_string(),
            self.epsilon.to_string(),
            self.batch_size.to_string(),
            self.epochs.to_string(),
            self.max_steps.to_string(),
            self.loops.to_string(),
            self.channels.to_string(),
            self.seed.to_string(),
            self.alpha_s.to_string(),
            self.use_cross_stitch.to_string(),
            self.stitch_after_input.to_string(),
            self.stitch_after_recursive.to_string(),
            self.use_ssim_term.to_string(),
            self.use_frobenius_term.to_string(),
            self.use_local_losses.to_string(),
            self.use_recur_loss.to_string(),
            self.use_global_loss.to_string(),
            self.weight_local.to_string(),
            self.weight_recur.to_string(),
            self.weight_global.to_string(),
            self.train_fraction.to_string(),
            self.ssim_window.to_string(),
            self.ssim_sigma.to_string(),
        ];
        Self::KEYS
            .iter()
            .zip(values)
            .map(|((k, _), v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail("lr must be positive");
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return fail("Adam betas must be in [0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return fail("epsilon must be positive");
        }
        if self.batch_size == 0 || self.loops == 0 || self.channels == 0 {
            return fail("batch_size, loops and channels must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.alpha_s) {
            return fail("alpha_s must be in [0, 1]");
        }
        if !(self.use_local_losses || self.use_recur_loss || self.use_global_loss) {
            return fail("at least one of the local, recurrence and global losses must be enabled");
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return fail("train_fraction must be in (0, 1)");
        }
        self.ssim_config()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn ssim_config(&self) -> SsimConfig {
        SsimConfig {
            window: self.ssim_window,
            sigma: self.ssim_sigma,
            ..SsimConfig::default()
        }
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            ssim: self.ssim_config(),
            terms: LossTerms {
                ssim: self.use_ssim_term,
                frobenius: self.use_frobenius_term,
            },
        }
    }

    pub fn stitch_points(&self) -> Vec<StitchPoint> {
        let mut v = Vec::new();
        if self.stitch_after_input {
            v.push(StitchPoint::AfterInput);
        }
        if self.stitch_after_recursive {
            v.push(StitchPoint::AfterRecursive);
        }
        v
    }

    /// Applies the model-shape settings (stitching, alpha, loops) to `params`.
    pub fn apply_to(&self, params: &mut CmudrnParams) {
        params.alpha_s = self.alpha_s;
        params.stitch_enabled = self.use_cross_stitch;
        params.stitch_points = self.stitch_points();
        params.set_loops(self.loops);
    }

    /// Fresh parameters seeded from `seed`.
    pub fn init_params(&self) -> CmudrnParams {
        let mut p = nets::init_params(self.seed, self.channels, self.loops);
        self.apply_to(&mut p);
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut c = TrainConfig::default();
        c.lr = 3.5e-4;
        c.use_cross_stitch = false;
        c.max_steps = 20;
        let back = TrainConfig::from_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_text(), c.to_text());
    }

    #[test]
    fn defaults_follow_the_reference_setup() {
        let c = TrainConfig::default();
        assert_eq!((c.lr, c.beta1, c.beta2, c.epsilon), (1e-4, 0.9, 0.999, 1e-8));
        assert_eq!((c.loops, c.batch_size, c.alpha_s), (3, 4, 0.5));
        assert!(c.use_cross_stitch && c.use_local_losses && c.use_global_loss);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(matches!(
            TrainConfig::from_text("lr = 0.1\nlearning_rate = 2\n"),
            Err(ConfigError::UnknownKey { line: 2, .. })
        ));
        assert!(matches!(
            TrainConfig::from_text("use_cross_stitch = maybe\n"),
            Err(ConfigError::Value { line: 1, .. })
        ));
        assert!(matches!(
            TrainConfig::from_text("lr = -1\n"),
            Err(ConfigError::Invalid(_))
        ));
        assert!(matches!(
            TrainConfig::from_text(
                "use_local_losses = false\nuse_recur_loss = false\nuse_global_loss = false\n"
            ),
            Err(ConfigError::Invalid(_))
        ));
    }

    #[test]
    fn every_key_is_settable() {
        let mut c = TrainConfig::default();
        for (k, _) in TrainConfig::KEYS {
            let v = c.to_text();
            let line = v.lines().find(|l| l.starts_with(&format!("{k} ="))).unwrap();
            let value = line.split_once('=').unwrap().1.trim();
            assert!(c.set(k, value).is_ok(), "{k}");
        }
    }
}
