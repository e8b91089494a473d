use std::fmt::Write as _;
use std::str::FromStr;

use crate::losses::LossWeights;
use crate::networks::NetConfig;
use crate::render::{Projection, RenderConfig, DEFAULT_SIGMA};

use super::TrainError;

/// Everything that determines a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub net: NetConfig,
    pub lr0: f64,
    pub decay_steps: u64,
    pub decay_factor: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub steps: u64,
    pub batch: usize,
    pub n_views: usize,
    pub weights: LossWeights,
    pub sigma: f32,
    pub projection: Projection,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            net: NetConfig::default(),
            lr0: 1e-4,
            decay_steps: 800,
            decay_factor: 0.3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            steps: 2000,
            batch: 8,
            n_views: 2,
            weights: LossWeights::default(),
            sigma: DEFAULT_SIGMA,
            projection: Projection::Orthographic,
            seed: 0,
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T, TrainError> {
    v.trim()
        .parse()
        .map_err(|_| TrainError::Config(format!("bad value `{v}` for `{key}`")))
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        self.net.validate()?;
        self.weights.validate()?;
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.decay_steps == 0 {
            return bad("decay_steps must be positive");
        }
        if self.steps == 0 {
            return bad("steps must be at least 1");
        }
        if self.batch == 0 {
            return bad("batch must be at least 1");
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad("lr0 must be positive");
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return bad("decay_factor must be in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must be in [0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be positive");
        }
        if !self.net.resolution.is_multiple_of(4) {
            return bad("resolution must be divisible by 4");
        }
        self.render_config().validate()?;
        Ok(())
    }

    /// True when the discriminator takes part in training.
    pub fn adversarial(&self) -> bool {
        self.net.sd_enabled && self.weights.lambda_sd > 0.0
    }

    pub fn render_config(&self) -> RenderConfig {
        RenderConfig {
            resolution: self.net.resolution,
            sigma: self.sigma,
            projection: self.projection,
            cull_backfaces: false,
        }
    }

    /// Applies one `key=value` pair.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), TrainError> {
        if self.net.set(key, value)? {
            return Ok(());
        }
        match key {
            "lr0" => self.lr0 = parse(key, value)?,
            "decay_steps" => self.decay_steps = parse(key, value)?,
            "decay_factor" => self.decay_factor = parse(key, value)?,
            "beta1" => self.beta1 = parse(key, value)?,
            "beta2" => self.beta2 = parse(key, value)?,
            "adam_eps" => self.adam_eps = parse(key, value)?,
            "steps" => self.steps = parse(key, value)?,
            "batch" => self.batch = parse(key, value)?,
            "n_views" => self.n_views = parse(key, value)?,
            "lambda_sd" => self.weights.lambda_sd = parse(key, value)?,
            "lambda_flat" => self.weights.lambda_flat = parse(key, value)?,
            "lambda_lap" => self.weights.lambda_lap = parse(key, value)?,
            "lambda_s" => {
                let v: Vec<f32> = value
                    .split(',')
                    .map(|p| parse(key, p))
                    .collect::<Result<_, _>>()?;
                self.weights.scales = v.try_into().map_err(|_| {
                    TrainError::Config("lambda_s takes three comma-separated weights".into())
                })?;
            }
            "sigma" => self.sigma = parse(key, value)?,
            "projection" => self.projection = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            _ => return Err(TrainError::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse_text(text: &str) -> Result<Self, TrainError> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), TrainError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| TrainError::Config(format!("line {}: expected key=value", n + 1)))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| TrainError::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn to_kv(&self) -> Vec<(String, String)> {
        let w = &self.weights;
        let mut kv = vec![
            ("lr0".into(), self.lr0.to_string()),
            ("decay_steps".into(), self.decay_steps.to_string()),
            ("decay_factor".into(), self.decay_factor.to_string()),
            ("beta1".into(), self.beta1.to_string()),
            ("beta2".into(), self.beta2.to_string()),
            ("adam_eps".into(), self.adam_eps.to_string()),
            ("steps".into(), self.steps.to_string()),
            ("batch".into(), self.batch.to_string()),
            ("n_views".into(), self.n_views.to_string()),
            ("lambda_sd".into(), w.lambda_sd.to_string()),
            ("lambda_flat".into(), w.lambda_flat.to_string()),
            ("lambda_lap".into(), w.lambda_lap.to_string()),
            ("lambda_s".into(), w.scales.map(|s| s.to_string()).join(",")),
            ("sigma".into(), self.sigma.to_string()),
            ("projection".into(), self.projection.to_string()),
            ("seed".into(), self.seed.to_string()),
        ];
        kv.extend(self.net.to_kv());
        kv
    }

    /// Canonical text form; [`TrainConfig::parse_text`] reads it back exactly.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.to_kv() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = TrainConfig::default();
        c.validate().unwrap();
        assert_eq!(c.lr0, 1e-4);
        assert_eq!((c.beta1, c.beta2), (0.9, 0.999));
        assert_eq!(c.n_views, 2);
        assert_eq!(c.weights.lambda_sd, 0.1);
        assert!(c.adversarial());
    }

    #[test]
    fn text_round_trip() {
        let mut c = TrainConfig::default();
        c.apply_text(
            "# overfit\nlr0 = 0.0003\nsteps=500\nlambda_s = 0.2,0.3,0.5\nsem_enabled = false\nsigma = 3e-5 # softer\nresolution=32\nprojection = perspective\n",
        )
        .unwrap();
        assert_eq!(c.lr0, 3e-4);
        assert_eq!(c.steps, 500);
        assert_eq!(c.weights.scales, [0.2, 0.3, 0.5]);
        assert!(!c.net.sem_enabled);
        assert_eq!(c.net.resolution, 32);
        assert_eq!(c.projection, Projection::Perspective);
        let back = TrainConfig::parse_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_text(), c.to_text());
    }

    #[test]
    fn bad_input_is_rejected() {
        assert!(TrainConfig::parse_text("nonsense = 1").is_err());
        assert!(TrainConfig::parse_text("steps 5").is_err());
        assert!(TrainConfig::parse_text("steps = -1").is_err());
        assert!(TrainConfig::parse_text("lambda_s = 1,2").is_err());
        let c = TrainConfig::parse_text("decay_steps = 0").unwrap();
        assert!(c.validate().is_err());
        let c = TrainConfig::parse_text("lambda_sd = -0.1").unwrap();
        assert!(c.validate().is_err());
    }

    #[test]
    fn zero_lambda_disables_the_adversary() {
        let c = TrainConfig::parse_text("lambda_sd = 0").unwrap();
        assert!(!c.adversarial());
        let c = TrainConfig::parse_text("sd_enabled = false").unwrap();
        assert!(!c.adversarial());
    }
}
