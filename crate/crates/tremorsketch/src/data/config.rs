//! Pipeline configuration: flat `key = value` text with `#` comments.
//!
//! Missing keys fall back to the per-drawing-type defaults (spiral: learning
//! rate 5e-4 and the spiral augmentation row; wave: 1e-4 and the wave row;
//! both: 150 epochs, batch size 32). Unknown keys are rejected.

use std::fmt;
use std::path::{Path, PathBuf};

use crate::augment::AugmentParams;
use crate::train::TrainConfig;

use super::DrawingType;

#[derive(Debug)]
pub enum ConfigError {
    Io(std::io::Error),
    /// A line is not `key = value`.
    ParseError { line: usize, detail: String },
    UnknownKey { line: usize, key: String },
    InvalidValue { line: usize, key: String, value: String },
    /// Cross-field validation failed after parsing.
    Invalid(String),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Io(e) => write!(f, "cannot read config: {e}"),
            ConfigError::ParseError { line, detail } => {
                write!(f, "config line {line}: {detail}")
            }
            ConfigError::UnknownKey { line, key } => {
                write!(f, "config line {line}: unknown key '{key}'")
            }
            ConfigError::InvalidValue { line, key, value } => {
                write!(f, "config line {line}: invalid value '{value}' for '{key}'")
            }
            ConfigError::Invalid(msg) => write!(f, "invalid config: {msg}"),
        }
    }
}

impl std::error::Error for ConfigError {}

impl From<std::io::Error> for ConfigError {
    fn from(e: std::io::Error) -> Self {
        ConfigError::Io(e)
    }
}

/// Everything one pipeline run needs: data location, preprocessing size,
/// augmentation ranges, architecture preset, and training hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub dataset_root: PathBuf,
    pub drawing_type: DrawingType,
    pub image_size: usize,
    pub model_preset: String,
    pub augment: AugmentParams,
    pub copies_per_image: usize,
    pub train: TrainConfig,
    pub output_dir: PathBuf,
    pub seed: u64,
}

impl PipelineConfig {
    /// Defaults for a drawing type: spiral pairs with vgg16 and learning rate
    /// 5e-4, wave with vgg19 and 1e-4.
    pub fn defaults(drawing_type: DrawingType) -> Self {
        let (model_preset, train) = match drawing_type {
            DrawingType::Spiral => ("vgg16", TrainConfig::spiral()),
            DrawingType::Wave => ("vgg19", TrainConfig::wave()),
        };
        PipelineConfig {
            dataset_root: PathBuf::from("data"),
            drawing_type,
            image_size: 224,
            model_preset: model_preset.to_string(),
            augment: drawing_type.augment_params(),
            copies_per_image: 9,
            train,
            output_dir: PathBuf::from("out"),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.image_size == 0 {
            return Err(ConfigError::Invalid("image_size must be positive".into()));
        }
        crate::nn::ModelConfig::preset(&self.model_preset)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.augment
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.train
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }
}

const KNOWN_KEYS: [&str; 20] = [
    "dataset_root",
    "drawing_type",
    "image_size",
    "model_preset",
    "learning_rate",
    "epochs",
    "batch_size",
    "validation_fraction",
    "beta1",
    "beta2",
    "epsilon",
    "seed",
    "rescale",
    "rotation_range",
    "zoom_range",
    "width_shift_range",
    "height_shift_range",
    "shear_range",
    "copies_per_image",
    "output_dir",
];

/// Parse config text. See [`load_config`] for the file-reading wrapper.
pub fn parse_config(text: &str) -> Result<PipelineConfig, ConfigError> {
    let mut entries: Vec<(usize, String, String)> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        };
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::ParseError {
            line: line_no,
            detail: "expected 'key = value'".into(),
        })?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if key.is_empty() || value.is_empty() {
            return Err(ConfigError::ParseError {
                line: line_no,
                detail: "empty key or value".into(),
            });
        }
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(ConfigError::UnknownKey { line: line_no, key });
        }
        entries.push((line_no, key, value));
    }

    // The drawing type selects the default block, so resolve it first.
    let mut drawing_type = DrawingType::Spiral;
    for (line, key, value) in &entries {
        if key == "drawing_type" {
            drawing_type = DrawingType::parse(value).ok_or_else(|| ConfigError::InvalidValue {
                line: *line,
                key: key.clone(),
                value: value.clone(),
            })?;
        }
    }
    let mut cfg = PipelineConfig::defaults(drawing_type);

    for (line, key, value) in entries {
        let invalid = || ConfigError::InvalidValue {
            line,
            key: key.clone(),
            value: value.clone(),
        };
        match key.as_str() {
            "dataset_root" => cfg.dataset_root = PathBuf::from(&value),
            "drawing_type" => {} // already applied
            "image_size" => cfg.image_size = value.parse().map_err(|_| invalid())?,
            "model_preset" => cfg.model_preset = value.clone(),
            "learning_rate" => cfg.train.learning_rate = value.parse().map_err(|_| invalid())?,
            "epochs" => cfg.train.epochs = value.parse().map_err(|_| invalid())?,
            "batch_size" => cfg.train.batch_size = value.parse().map_err(|_| invalid())?,
            "validation_fraction" => {
                cfg.train.validation_fraction = value.parse().map_err(|_| invalid())?
            }
            "beta1" => cfg.train.beta1 = value.parse().map_err(|_| invalid())?,
            "beta2" => cfg.train.beta2 = value.parse().map_err(|_| invalid())?,
            "epsilon" => cfg.train.epsilon = value.parse().map_err(|_| invalid())?,
            "seed" => cfg.seed = value.parse().map_err(|_| invalid())?,
            "rescale" => cfg.augment.rescale = value.parse().map_err(|_| invalid())?,
            "rotation_range" => cfg.augment.rotation_range = value.parse().map_err(|_| invalid())?,
            "zoom_range" => cfg.augment.zoom_range = value.parse().map_err(|_| invalid())?,
            "width_shift_range" => {
                cfg.augment.width_shift_range = value.parse().map_err(|_| invalid())?
            }
            "height_shift_range" => {
                cfg.augment.height_shift_range = value.parse().map_err(|_| invalid())?
            }
            "shear_range" => cfg.augment.shear_range = value.parse().map_err(|_| invalid())?,
            "copies_per_image" => cfg.copies_per_image = value.parse().map_err(|_| invalid())?,
            "output_dir" => cfg.output_dir = PathBuf::from(&value),
            _ => unreachable!("unknown keys rejected above"),
        }
    }
    cfg.train.seed = cfg.seed;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<PipelineConfig, ConfigError> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text)
}

/// Canonical text form; `parse_config(serialize_config(c))` equals `c`.
pub fn serialize_config(cfg: &PipelineConfig) -> String {
    format!(
        "dataset_root = {}\n\
         drawing_type = {}\n\
         image_size = {}\n\
         model_preset = {}\n\
         learning_rate = {}\n\
         epochs = {}\n\
         batch_size = {}\n\
         validation_fraction = {}\n\
         beta1 = {}\n\
         beta2 = {}\n\
         epsilon = {}\n\
         seed = {}\n\
         rescale = {}\n\
         rotation_range = {}\n\
         zoom_range = {}\n\
         width_shift_range = {}\n\
         height_shift_range = {}\n\
         shear_range = {}\n\
         copies_per_image = {}\n\
         output_dir = {}\n",
        cfg.dataset_root.display(),
        cfg.drawing_type,
        cfg.image_size,
        cfg.model_preset,
        cfg.train.learning_rate,
        cfg.train.epochs,
        cfg.train.batch_size,
        cfg.train.validation_fraction,
        cfg.train.beta1,
        cfg.train.beta2,
        cfg.train.epsilon,
        cfg.seed,
        cfg.augment.rescale,
        cfg.augment.rotation_range,
        cfg.augment.zoom_range,
        cfg.augment.width_shift_range,
        cfg.augment.height_shift_range,
        cfg.augment.shear_range,
        cfg.copies_per_image,
        cfg.output_dir.display(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_takes_spiral_defaults() {
        let cfg = parse_config("").unwrap();
        assert_eq!(cfg.drawing_type, DrawingType::Spiral);
        assert_eq!(cfg.train.learning_rate, 5e-4);
        assert_eq!(cfg.model_preset, "vgg16");
        assert_eq!(cfg.train.epochs, 150);
        assert_eq!(cfg.train.batch_size, 32);
        assert_eq!(cfg.augment.rotation_range, 5.0);
        assert_eq!(cfg.image_size, 224);
    }

    #[test]
    fn wave_type_switches_default_block() {
        let cfg = parse_config("drawing_type = wave\n").unwrap();
        assert_eq!(cfg.train.learning_rate, 1e-4);
        assert_eq!(cfg.model_preset, "vgg19");
        assert_eq!(cfg.augment.rotation_range, 10.0);
    }

    #[test]
    fn single_override_keeps_other_defaults() {
        let cfg = parse_config("epochs = 10\n").unwrap();
        assert_eq!(cfg.train.epochs, 10);
        assert_eq!(cfg.train.learning_rate, 5e-4);
        assert_eq!(cfg.train.batch_size, 32);
    }

    #[test]
    fn type_line_after_overrides_still_selects_defaults() {
        let cfg = parse_config("epochs = 3\ndrawing_type = wave\n").unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.learning_rate, 1e-4);
    }

    #[test]
    fn comments_and_blank_lines_ignored() {
        let cfg = parse_config("# full line comment\n\nepochs = 4  # trailing\n").unwrap();
        assert_eq!(cfg.train.epochs, 4);
    }

    #[test]
    fn bad_value_reports_line_number() {
        let err = parse_config("epochs = 10\nepochs = banana\n").unwrap_err();
        match err {
            ConfigError::InvalidValue { line, key, value } => {
                assert_eq!(line, 2);
                assert_eq!(key, "epochs");
                assert_eq!(value, "banana");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_key_rejected_with_line() {
        let err = parse_config("wibble = 3\n").unwrap_err();
        match err {
            ConfigError::UnknownKey { line, key } => {
                assert_eq!(line, 1);
                assert_eq!(key, "wibble");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_equals_is_a_parse_error() {
        let err = parse_config("epochs 10\n").unwrap_err();
        assert!(matches!(err, ConfigError::ParseError { line: 1, .. }));
    }

    #[test]
    fn semantically_invalid_config_rejected() {
        assert!(parse_config("zoom_range = 1.5\n").is_err());
        assert!(parse_config("model_preset = resnet\n").is_err());
        assert!(parse_config("validation_fraction = 1.0\n").is_err());
    }

    #[test]
    fn serialize_round_trips() {
        let text = "drawing_type = wave\nepochs = 7\nseed = 42\nzoom_range = 0.05\n";
        let cfg = parse_config(text).unwrap();
        let round = parse_config(&serialize_config(&cfg)).unwrap();
        assert_eq!(cfg, round);
    }

    #[test]
    fn seed_propagates_into_training_config() {
        let cfg = parse_config("seed = deadbeef\n");
        assert!(cfg.is_err());
        let cfg = parse_config("seed = 1234\n").unwrap();
        assert_eq!(cfg.seed, 1234);
        assert_eq!(cfg.train.seed, 1234);
    }

    mod proptests {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            // serialize . parse is the identity on valid configs.
            #[test]
            fn serialize_parse_round_trip(
                wave in proptest::bool::ANY,
                image_size in 16usize..256,
                epochs in 1usize..200,
                batch in 1usize..64,
                lr in 1e-6f64..1e-1,
                val_frac in 0.05f64..0.9,
                seed in proptest::num::u64::ANY,
                rotation in 0.0f64..180.0,
                zoom in 0.0f64..0.99,
                shift in 0.0f64..0.5,
                shear in 0.0f64..1.5,
                copies in 0usize..20,
            ) {
                let mut cfg = PipelineConfig::defaults(if wave {
                    DrawingType::Wave
                } else {
                    DrawingType::Spiral
                });
                cfg.image_size = image_size;
                cfg.train.epochs = epochs;
                cfg.train.batch_size = batch;
                cfg.train.learning_rate = lr;
                cfg.train.validation_fraction = val_frac;
                cfg.seed = seed;
                cfg.train.seed = seed;
                cfg.augment.rotation_range = rotation;
                cfg.augment.zoom_range = zoom;
                cfg.augment.width_shift_range = shift;
                cfg.augment.height_shift_range = shift;
                cfg.augment.shear_range = shear;
                cfg.copies_per_image = copies;
                let parsed = parse_config(&serialize_config(&cfg)).unwrap();
                prop_assert_eq!(parsed, cfg);
            }
        }
    }
}
