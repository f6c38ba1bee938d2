//! Run configuration: plain-text `key=value` files with `[section]`
//! headers, plus the two built-in presets. A config file never has to be
//! complete — it overrides whichever preset it is applied on top of, and
//! the effective configuration can always be dumped back out as text.

use thiserror::Error;

use crate::autodiff::Dims3;
use crate::locnet::LocNetConfig;
use crate::segnet::SegNetConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Everything a run needs beyond its inputs: both network configurations
/// and the cross-validation shape.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub localizer: LocNetConfig,
    /// Segmentation template; `class_count` is fixed at 6 here and the
    /// per-phase variants come from [`RunConfig::binary`] and
    /// [`RunConfig::multiclass`].
    pub segmenter: SegNetConfig,
    pub binary_epochs: usize,
    pub multiclass_epochs: usize,
    pub fold_count: usize,
    pub held_out_per_fold: usize,
}

impl RunConfig {
    /// Small networks and budgets sized for a single laptop CPU core.
    pub fn desk() -> Self {
        Self {
            localizer: LocNetConfig {
                widths: [8, 16, 32],
                head_features: 128,
                head_hidden: 32,
                infer_reference_budget: 256,
                train_references_per_volume: 12,
                round1_epochs: 6,
                round2_epochs: 2,
                ..LocNetConfig::default()
            },
            segmenter: SegNetConfig {
                depth: 3,
                base_width: 16,
                class_count: 6,
                patch_extents: Dims3::new(32, 32, 48),
                epochs: 4,
                ..SegNetConfig::default()
            },
            binary_epochs: 4,
            multiclass_epochs: 4,
            fold_count: 5,
            held_out_per_fold: 3,
        }
    }

    /// The full-scale hyperparameters. Recorded for reference — training at
    /// this scale is far outside a desk budget.
    pub fn paper() -> Self {
        Self {
            localizer: LocNetConfig::default(),
            segmenter: SegNetConfig {
                depth: 3,
                base_width: 32,
                class_count: 6,
                patch_extents: Dims3::new(160, 128, 96),
                epochs: 8, // kept in lockstep with multiclass_epochs
                ..SegNetConfig::default()
            },
            binary_epochs: 8,
            multiclass_epochs: 8,
            fold_count: 5,
            held_out_per_fold: 3,
        }
    }

    pub fn preset(name: &str) -> Result<Self, ConfigError> {
        match name {
            "desk" => Ok(Self::desk()),
            "paper" => Ok(Self::paper()),
            other => Err(ConfigError::Invalid(format!(
                "unknown preset {other:?}; expected desk or paper"
            ))),
        }
    }

    /// The binary-phase segmentation configuration.
    pub fn binary(&self) -> SegNetConfig {
        SegNetConfig {
            class_count: 2,
            class_weights: None,
            epochs: self.binary_epochs,
            ..self.segmenter.clone()
        }
    }

    /// The multi-class-phase segmentation configuration.
    pub fn multiclass(&self) -> SegNetConfig {
        SegNetConfig {
            class_count: 6,
            epochs: self.multiclass_epochs,
            ..self.segmenter.clone()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.localizer
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.binary()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.multiclass()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.binary_epochs == 0 || self.multiclass_epochs == 0 {
            return Err(ConfigError::Invalid("epoch counts must be positive".into()));
        }
        if self.fold_count == 0 || self.held_out_per_fold == 0 {
            return Err(ConfigError::Invalid(
                "fold count and held-out count must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Applies `key=value` overrides from config-file text on top of the
    /// current values. Unknown sections or keys are errors.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        let mut section = String::new();
        for (number, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let number = number + 1;
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or(ConfigError::Parse {
                    line: number,
                    message: "unterminated section header".into(),
                })?;
                if !["localizer", "segmenter", "crossval"].contains(&name) {
                    return Err(ConfigError::Parse {
                        line: number,
                        message: format!("unknown section {name:?}"),
                    });
                }
                section = name.to_string();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::Parse {
                line: number,
                message: "expected key=value".into(),
            })?;
            let key = key.trim();
            let value = value.trim();
            self.apply_key(&section, key, value)
                .map_err(|message| ConfigError::Parse {
                    line: number,
                    message,
                })?;
        }
        Ok(())
    }

    fn apply_key(&mut self, section: &str, key: &str, value: &str) -> Result<(), String> {
        fn parse<T: std::str::FromStr>(value: &str, what: &str) -> Result<T, String>
        where
            T::Err: std::fmt::Display,
        {
            value
                .parse()
                .map_err(|e| format!("bad {what} value {value:?}: {e}"))
        }
        match section {
            "localizer" => {
                let c = &mut self.localizer;
                match key {
                    "sigma" => c.sigma = parse(value, key)?,
                    "low_threshold" => c.low_threshold = parse(value, key)?,
                    "high_threshold" => c.high_threshold = parse(value, key)?,
                    "infer_reference_budget" => c.infer_reference_budget = parse(value, key)?,
                    "train_references_per_volume" => {
                        c.train_references_per_volume = parse(value, key)?
                    }
                    "width1" => c.widths[0] = parse(value, key)?,
                    "width2" => c.widths[1] = parse(value, key)?,
                    "width3" => c.widths[2] = parse(value, key)?,
                    "head_features" => c.head_features = parse(value, key)?,
                    "head_hidden" => c.head_hidden = parse(value, key)?,
                    "norm_constant" => c.norm_constant = parse(value, key)?,
                    "round1_epochs" => c.round1_epochs = parse(value, key)?,
                    "round1_lr" => c.round1_lr = parse(value, key)?,
                    "round2_epochs" => c.round2_epochs = parse(value, key)?,
                    "round2_lr" => c.round2_lr = parse(value, key)?,
                    other => return Err(format!("unknown localizer key {other:?}")),
                }
            }
            "segmenter" => {
                let c = &mut self.segmenter;
                match key {
                    "depth" => c.depth = parse(value, key)?,
                    "base_width" => c.base_width = parse(value, key)?,
                    "patch_d" => c.patch_extents.d = parse(value, key)?,
                    "patch_h" => c.patch_extents.h = parse(value, key)?,
                    "patch_w" => c.patch_extents.w = parse(value, key)?,
                    "class_weights" => {
                        c.class_weights = if value == "auto" {
                            None
                        } else {
                            let weights = value
                                .split(',')
                                .map(|v| parse(v.trim(), key))
                                .collect::<Result<Vec<f64>, _>>()?;
                            Some(weights)
                        }
                    }
                    "binary_epochs" => self.binary_epochs = parse(value, key)?,
                    "multiclass_epochs" => {
                        self.multiclass_epochs = parse(value, key)?;
                        c.epochs = self.multiclass_epochs;
                    }
                    "learning_rate" => c.learning_rate = parse(value, key)?,
                    "patches_per_volume" => c.patches_per_volume = parse(value, key)?,
                    "stride_fraction" => c.stride_fraction = parse(value, key)?,
                    "crop_margin" => c.crop_margin = parse(value, key)?,
                    "min_component_fraction" => c.min_component_fraction = parse(value, key)?,
                    "gray_scale_low" => c.augment.gray_scale[0] = parse(value, key)?,
                    "gray_scale_high" => c.augment.gray_scale[1] = parse(value, key)?,
                    "gray_shift_low" => c.augment.gray_shift[0] = parse(value, key)?,
                    "gray_shift_high" => c.augment.gray_shift[1] = parse(value, key)?,
                    "elastic_grid" => c.augment.elastic_grid = parse(value, key)?,
                    "elastic_amplitude" => c.augment.elastic_amplitude = parse(value, key)?,
                    "roi_jitter" => c.augment.roi_jitter = parse(value, key)?,
                    other => return Err(format!("unknown segmenter key {other:?}")),
                }
            }
            "crossval" => match key {
                "fold_count" => self.fold_count = parse(value, key)?,
                "held_out_per_fold" => self.held_out_per_fold = parse(value, key)?,
                other => return Err(format!("unknown crossval key {other:?}")),
            },
            "" => return Err(format!("key {key:?} appears before any [section]")),
            other => return Err(format!("unknown section {other:?}")),
        }
        Ok(())
    }

    /// Renders the full configuration in the file format; applying the
    /// output to any base reproduces this configuration exactly.
    pub fn to_text(&self) -> String {
        let l = &self.localizer;
        let s = &self.segmenter;
        let a = &s.augment;
        let weights = match &s.class_weights {
            None => "auto".to_string(),
            Some(w) => w
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(","),
        };
        format!(
            "[localizer]\n\
             sigma={}\n\
             low_threshold={}\n\
             high_threshold={}\n\
             infer_reference_budget={}\n\
             train_references_per_volume={}\n\
             width1={}\nwidth2={}\nwidth3={}\n\
             head_features={}\n\
             head_hidden={}\n\
             norm_constant={}\n\
             round1_epochs={}\n\
             round1_lr={}\n\
             round2_epochs={}\n\
             round2_lr={}\n\
             \n\
             [segmenter]\n\
             depth={}\n\
             base_width={}\n\
             patch_d={}\npatch_h={}\npatch_w={}\n\
             class_weights={}\n\
             binary_epochs={}\n\
             multiclass_epochs={}\n\
             learning_rate={}\n\
             patches_per_volume={}\n\
             stride_fraction={}\n\
             crop_margin={}\n\
             min_component_fraction={}\n\
             gray_scale_low={}\ngray_scale_high={}\n\
             gray_shift_low={}\ngray_shift_high={}\n\
             elastic_grid={}\n\
             elastic_amplitude={}\n\
             roi_jitter={}\n\
             \n\
             [crossval]\n\
             fold_count={}\n\
             held_out_per_fold={}\n",
            l.sigma,
            l.low_threshold,
            l.high_threshold,
            l.infer_reference_budget,
            l.train_references_per_volume,
            l.widths[0],
            l.widths[1],
            l.widths[2],
            l.head_features,
            l.head_hidden,
            l.norm_constant,
            l.round1_epochs,
            l.round1_lr,
            l.round2_epochs,
            l.round2_lr,
            s.depth,
            s.base_width,
            s.patch_extents.d,
            s.patch_extents.h,
            s.patch_extents.w,
            weights,
            self.binary_epochs,
            self.multiclass_epochs,
            s.learning_rate,
            s.patches_per_volume,
            s.stride_fraction,
            s.crop_margin,
            s.min_component_fraction,
            a.gray_scale[0],
            a.gray_scale[1],
            a.gray_shift[0],
            a.gray_shift[1],
            a.elastic_grid,
            a.elastic_amplitude,
            a.roi_jitter,
            self.fold_count,
            self.held_out_per_fold,
        )
    }
}
