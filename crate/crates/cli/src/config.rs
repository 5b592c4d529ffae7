//! Flat `key = value` run configuration.
//!
//! Precedence, lowest first: built-in defaults, the `--config` file,
//! `VOCALSTYLE_*` environment variables, command-line flags.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use vocal_style::audio::CorpusConfig;
use vocal_style::model::{parse_layers, parse_list, ModelConfig};
use vocal_style::trainer::{MiningSchedule, TrainConfig};
use vocal_style::verification::DcfConfig;

pub const ENV_PREFIX: &str = "VOCALSTYLE_";

/// A configuration problem the user must fix; reported with exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn defaults() -> Vec<(&'static str, String)> {
    let c = CorpusConfig::default();
    let t = TrainConfig::default();
    let d = DcfConfig::default();
    let semi = match t.mining {
        MiningSchedule::SemiHardAfter(n) => n.to_string(),
        MiningSchedule::Fixed(_) => "0".into(),
    };
    let opt = |v: Option<String>| v.unwrap_or_else(|| "auto".into());
    vec![
        ("seed", "0".into()),
        ("deterministic", "false".into()),
        ("out_dir", ".".into()),
        ("corpus.speakers", c.n_speakers.to_string()),
        ("corpus.utts", c.utts_per_speaker.to_string()),
        ("corpus.eval_speakers", opt(c.eval_speakers.map(|v| v.to_string()))),
        ("corpus.recording_seconds", c.recording_seconds.to_string()),
        ("corpus.chunk_seconds", c.chunk_seconds.to_string()),
        ("corpus.snr_db", c.snr_db.to_string()),
        ("model.preset", "compact".into()),
        ("model.frontend_layers", "preset".into()),
        ("model.encoder_channels", "preset".into()),
        ("model.gru_hidden", "preset".into()),
        ("model.n_tokens", "preset".into()),
        ("model.feature_norm", "preset".into()),
        ("model.normalize_embedding", "preset".into()),
        ("train.epochs", t.epochs.to_string()),
        ("train.learning_rate", t.learning_rate.to_string()),
        ("train.batch", t.triplets_per_batch.to_string()),
        ("train.margin", t.margin.to_string()),
        ("train.steps_per_epoch", opt(t.steps_per_epoch.map(|v| v.to_string()))),
        ("train.crop_seconds", opt(t.crop_seconds.map(|v| v.to_string()))),
        ("train.grad_clip", opt(t.grad_clip.map(|v| v.to_string()))),
        ("train.semi_hard_after", semi),
        ("train.pool_speakers", t.pool_speakers.to_string()),
        ("train.pool_utterances", t.pool_utterances.to_string()),
        ("fusion.w1", "1".into()),
        ("fusion.w2", "3".into()),
        ("dcf.p_target", d.p_target.to_string()),
        ("dcf.c_miss", d.c_miss.to_string()),
        ("dcf.c_fa", d.c_fa.to_string()),
    ]
}

/// Environment variable name for a key: `train.batch` → `VOCALSTYLE_TRAIN_BATCH`.
pub fn env_name(key: &str) -> String {
    format!("{ENV_PREFIX}{}", key.replace('.', "_").to_uppercase())
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    values: BTreeMap<&'static str, (String, &'static str)>,
}

impl RunConfig {
    pub fn resolve(
        file: Option<&Path>,
        env: impl IntoIterator<Item = (String, String)>,
        flags: &[(String, String)],
    ) -> Result<Self, UsageError> {
        let mut values: BTreeMap<&'static str, (String, &'static str)> =
            defaults().into_iter().map(|(k, v)| (k, (v, "default"))).collect();
        let canonical = |values: &BTreeMap<&'static str, _>, key: &str| -> Result<&'static str, UsageError> {
            values
                .keys()
                .find(|k| **k == key)
                .copied()
                .ok_or_else(|| UsageError(format!("unknown config key {key:?}")))
        };
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| UsageError(format!("config {}: {e}", path.display())))?;
            for (i, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (k, v) = line
                    .split_once('=')
                    .ok_or_else(|| UsageError(format!("{}:{}: expected key = value", path.display(), i + 1)))?;
                let key = canonical(&values, k.trim())
                    .map_err(|e| UsageError(format!("{}:{}: {e}", path.display(), i + 1)))?;
                values.insert(key, (v.trim().to_string(), "file"));
            }
        }
        let by_env: BTreeMap<String, &'static str> = values.keys().map(|k| (env_name(k), *k)).collect();
        for (name, v) in env {
            if !name.starts_with(ENV_PREFIX) {
                continue;
            }
            let key = by_env
                .get(&name)
                .ok_or_else(|| UsageError(format!("unknown config variable {name}")))?;
            values.insert(key, (v, "env"));
        }
        for (k, v) in flags {
            let key = canonical(&values, k)?;
            values.insert(key, (v.clone(), "flag"));
        }
        let cfg = Self { values };
        // surface parse errors before any work starts
        cfg.corpus()?;
        cfg.model()?;
        cfg.train()?;
        cfg.fusion_weights()?;
        cfg.dcf()?;
        cfg.get::<bool>("deterministic")?;
        Ok(cfg)
    }

    pub fn raw(&self, key: &str) -> &str {
        &self.values[key].0
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, UsageError>
    where
        T::Err: fmt::Display,
    {
        let v = self.raw(key);
        v.parse()
            .map_err(|e| UsageError(format!("config key {key} = {v:?}: {e}")))
    }

    fn optional<T: FromStr>(&self, key: &str) -> Result<Option<T>, UsageError>
    where
        T::Err: fmt::Display,
    {
        match self.raw(key) {
            "auto" | "none" => Ok(None),
            _ => self.get(key).map(Some),
        }
    }

    pub fn seed(&self) -> u64 {
        self.get("seed").expect("validated")
    }

    pub fn deterministic(&self) -> bool {
        self.get("deterministic").expect("validated")
    }

    pub fn out_dir(&self) -> &Path {
        Path::new(self.raw("out_dir"))
    }

    pub fn corpus(&self) -> Result<CorpusConfig, UsageError> {
        Ok(CorpusConfig {
            n_speakers: self.get("corpus.speakers")?,
            utts_per_speaker: self.get("corpus.utts")?,
            seed: self.get("seed")?,
            eval_speakers: self.optional("corpus.eval_speakers")?,
            recording_seconds: self.get("corpus.recording_seconds")?,
            chunk_seconds: self.get("corpus.chunk_seconds")?,
            snr_db: self.get("corpus.snr_db")?,
        })
    }

    pub fn model(&self) -> Result<ModelConfig, UsageError> {
        let usage = |e: vocal_style::Error| UsageError(e.to_string());
        let mut m = ModelConfig::preset(self.raw("model.preset")).map_err(usage)?;
        let set = |key: &str| Some(self.raw(key)).filter(|v| *v != "preset");
        if let Some(v) = set("model.frontend_layers") {
            m.frontend = parse_layers(v).map_err(usage)?;
        }
        if let Some(v) = set("model.encoder_channels") {
            m.encoder_channels = parse_list(v).map_err(usage)?;
        }
        if set("model.gru_hidden").is_some() {
            m.gru_hidden = self.get("model.gru_hidden")?;
        }
        if set("model.n_tokens").is_some() {
            m.n_tokens = self.get("model.n_tokens")?;
        }
        if set("model.feature_norm").is_some() {
            m.feature_norm = self.get("model.feature_norm")?;
        }
        if set("model.normalize_embedding").is_some() {
            m.normalize_embedding = self.get("model.normalize_embedding")?;
        }
        m.validate().map_err(usage)?;
        Ok(m)
    }

    pub fn train(&self) -> Result<TrainConfig, UsageError> {
        let t = TrainConfig {
            margin: self.get("train.margin")?,
            learning_rate: self.get("train.learning_rate")?,
            triplets_per_batch: self.get("train.batch")?,
            epochs: self.get("train.epochs")?,
            seed: self.get("seed")?,
            mining: MiningSchedule::SemiHardAfter(self.get("train.semi_hard_after")?),
            steps_per_epoch: self.optional("train.steps_per_epoch")?,
            crop_seconds: self.optional("train.crop_seconds")?,
            grad_clip: self.optional("train.grad_clip")?,
            pool_speakers: self.get("train.pool_speakers")?,
            pool_utterances: self.get("train.pool_utterances")?,
            deterministic: self.get("deterministic")?,
            ..TrainConfig::default()
        };
        t.validate().map_err(|e| UsageError(e.to_string()))?;
        Ok(t)
    }

    pub fn fusion_weights(&self) -> Result<(f64, f64), UsageError> {
        Ok((self.get("fusion.w1")?, self.get("fusion.w2")?))
    }

    pub fn dcf(&self) -> Result<DcfConfig, UsageError> {
        let d = DcfConfig {
            p_target: self.get("dcf.p_target")?,
            c_miss: self.get("dcf.c_miss")?,
            c_fa: self.get("dcf.c_fa")?,
        };
        d.validate().map_err(|e| UsageError(e.to_string()))?;
        Ok(d)
    }

    /// `key = value  # source` lines.
    pub fn dump(&self) -> String {
        self.values
            .iter()
            .map(|(k, (v, src))| format!("{k} = {v}  # {src}\n"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_is_default_file_env_flag() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("run.cfg");
        std::fs::write(&file, "# comment\ntrain.batch = 8\ntrain.epochs = 4\nseed = 3\n").unwrap();
        let env = vec![
            (env_name("train.epochs"), "5".to_string()),
            ("PATH".to_string(), "/bin".to_string()),
        ];
        let cfg = RunConfig::resolve(Some(&file), env, &[("seed".into(), "9".into())]).unwrap();
        assert_eq!(cfg.get::<usize>("train.batch").unwrap(), 8);
        assert_eq!(cfg.get::<usize>("train.epochs").unwrap(), 5);
        assert_eq!(cfg.seed(), 9);
        assert_eq!(cfg.get::<f64>("train.margin").unwrap(), 0.5);
        assert!(cfg.dump().contains("seed = 9  # flag"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("run.cfg");
        std::fs::write(&file, "train.bacth = 8\n").unwrap();
        let err = RunConfig::resolve(Some(&file), vec![], &[]).unwrap_err();
        assert!(err.0.contains("train.bacth") && err.0.contains(":1:"), "{err}");
        let err = RunConfig::resolve(None, vec![("VOCALSTYLE_NOPE".into(), "1".into())], &[]).unwrap_err();
        assert!(err.0.contains("VOCALSTYLE_NOPE"));
        assert!(RunConfig::resolve(None, vec![], &[("train.batch".into(), "x".into())]).is_err());
    }

    #[test]
    fn model_overrides_apply_to_preset() {
        let cfg = RunConfig::resolve(None, vec![], &[("model.n_tokens".into(), "4".into())]).unwrap();
        let m = cfg.model().unwrap();
        assert_eq!(m.n_tokens, 4);
        assert_eq!(m.frontend, ModelConfig::compact().frontend);
    }
}
