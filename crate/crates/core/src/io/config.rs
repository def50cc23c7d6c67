use std::path::Path;
use std::str::FromStr;

use super::read_bytes;
use crate::error::{Error, Result};
use crate::nets::ModelConfig;
use crate::pipeline::TrainConfig;
use crate::voxelizer::GridSpec;

/// Options that shape scene loading rather than optimization.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DataOptions {
    /// Random rotations about the vertical axis plus mirror flips.
    pub augment: bool,
}

/// Every recognised key with a one-line description.
pub const CONFIG_KEYS: &[(&str, &str)] = &[
    (
        "grid",
        "voxel counts X,Y,Z or a single N for N³ (default 16)",
    ),
    ("d_s", "encoder output width"),
    ("d_o", "dense volume width"),
    ("d_f", "per-Gaussian embedding width"),
    ("d_star", "target feature width"),
    ("enc_hidden", "encoder hidden width"),
    ("conv_hidden", "first convolution width"),
    ("head_hidden", "decoder head hidden width"),
    (
        "offset_cap",
        "maximum offset per axis (default one voxel edge)",
    ),
    ("prune_threshold", "opacity pruning threshold tau"),
    ("lr", "peak learning rate"),
    ("beta1", "Adam first-moment decay"),
    ("beta2", "Adam second-moment decay"),
    ("weight_decay", "decoupled weight decay"),
    ("eps", "Adam epsilon"),
    ("warmup", "fraction of steps spent in linear warmup"),
    ("mask_ratio", "mask ratio gamma"),
    ("views", "views rendered per step (M)"),
    ("epochs", "number of epochs"),
    ("seed", "run seed"),
    ("w_img", "photometric loss weight"),
    ("w_dep", "depth loss weight"),
    ("w_sem", "feature loss weight"),
    ("tile", "rasterizer tile size"),
    ("alpha_cutoff", "skip contributions below this alpha"),
    (
        "transmittance_floor",
        "stop blending below this transmittance",
    ),
    (
        "support",
        "Gaussian support radius in standard deviations, or none",
    ),
    (
        "checkpoint_every",
        "checkpoint period in epochs (0 = final only)",
    ),
    ("eval_every", "PSNR evaluation period in epochs (0 = never)"),
    ("augment", "true/false: rotate and flip scenes when loading"),
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::format(key, format!("cannot parse {value:?}")))
}

fn parse_grid(value: &str) -> Result<GridSpec> {
    let parts: Vec<usize> = value
        .split(',')
        .map(|p| parse::<usize>("grid", p.trim()))
        .collect::<Result<_>>()?;
    let grid = match parts.as_slice() {
        [n] => GridSpec::cube(*n),
        [x, y, z] => GridSpec::new(*x, *y, *z),
        _ => return Err(Error::format("grid", "expected N or X,Y,Z")),
    };
    grid.map_err(|e| Error::format("grid", e.to_string()))
}

/// Parses `key = value` lines; `#` starts a comment. Unknown or repeated
/// keys are errors; omitted keys keep their defaults.
pub fn parse_config(text: &str) -> Result<(TrainConfig, DataOptions)> {
    let mut entries: Vec<(String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::format(format!("config line {}", i + 1), "expected key = value")
        })?;
        let (k, v) = (k.trim().to_string(), v.trim().to_string());
        if !CONFIG_KEYS.iter().any(|(name, _)| *name == k) {
            return Err(Error::format(k, "unknown config key"));
        }
        if entries.iter().any(|(e, _)| *e == k) {
            return Err(Error::format(k, "key given twice"));
        }
        entries.push((k, v));
    }
    let get = |k: &str| {
        entries
            .iter()
            .find(|(e, _)| e == k)
            .map(|(_, v)| v.as_str())
    };

    let grid = get("grid")
        .map(parse_grid)
        .transpose()?
        .unwrap_or(GridSpec::cube(16)?);
    let mut cfg = TrainConfig::new(ModelConfig::new(grid));
    let mut data = DataOptions::default();
    for (k, v) in &entries {
        let (k, v) = (k.as_str(), v.as_str());
        let m = &mut cfg.model;
        match k {
            "grid" => {}
            "d_s" => m.d_s = parse(k, v)?,
            "d_o" => m.d_o = parse(k, v)?,
            "d_f" => m.d_f = parse(k, v)?,
            "d_star" => m.d_star = parse(k, v)?,
            "enc_hidden" => m.enc_hidden = parse(k, v)?,
            "conv_hidden" => m.conv_hidden = parse(k, v)?,
            "head_hidden" => m.head_hidden = parse(k, v)?,
            "offset_cap" => m.offset_cap = parse(k, v)?,
            "prune_threshold" => m.prune_threshold = parse(k, v)?,
            "lr" => cfg.optimizer.lr = parse(k, v)?,
            "beta1" => cfg.optimizer.betas.0 = parse(k, v)?,
            "beta2" => cfg.optimizer.betas.1 = parse(k, v)?,
            "weight_decay" => cfg.optimizer.weight_decay = parse(k, v)?,
            "eps" => cfg.optimizer.eps = parse(k, v)?,
            "warmup" => cfg.warmup = parse(k, v)?,
            "mask_ratio" => cfg.mask_ratio = parse(k, v)?,
            "views" => cfg.views_per_step = parse(k, v)?,
            "epochs" => cfg.epochs = parse(k, v)?,
            "seed" => cfg.seed = parse(k, v)?,
            "w_img" => cfg.loss.img = parse(k, v)?,
            "w_dep" => cfg.loss.dep = parse(k, v)?,
            "w_sem" => cfg.loss.sem = parse(k, v)?,
            "tile" => cfg.tile.tile = parse(k, v)?,
            "alpha_cutoff" => cfg.tile.alpha_cutoff = parse(k, v)?,
            "transmittance_floor" => cfg.tile.transmittance_floor = parse(k, v)?,
            "support" => {
                cfg.tile.support = if v == "none" {
                    None
                } else {
                    Some(parse(k, v)?)
                };
            }
            "checkpoint_every" => cfg.checkpoint_every = parse(k, v)?,
            "eval_every" => cfg.eval_every = parse(k, v)?,
            "augment" => data.augment = parse(k, v)?,
            _ => unreachable!("keys were checked above"),
        }
    }
    cfg.validate()
        .map_err(|e| Error::format("config", e.to_string()))?;
    Ok((cfg, data))
}

pub fn read_config(path: &Path) -> Result<(TrainConfig, DataOptions)> {
    let text = String::from_utf8(read_bytes(path)?)
        .map_err(|_| Error::format("config", "file is not UTF-8"))?;
    parse_config(&text)
}

/// Renders a configuration back to text accepted by [`parse_config`].
pub fn config_to_text(cfg: &TrainConfig, data: &DataOptions) -> String {
    let m = &cfg.model;
    let support = cfg
        .tile
        .support
        .map_or("none".to_string(), |s| format!("{s:?}"));
    [
        format!("grid = {},{},{}", m.grid.x, m.grid.y, m.grid.z),
        format!("d_s = {}", m.d_s),
        format!("d_o = {}", m.d_o),
        format!("d_f = {}", m.d_f),
        format!("d_star = {}", m.d_star),
        format!("enc_hidden = {}", m.enc_hidden),
        format!("conv_hidden = {}", m.conv_hidden),
        format!("head_hidden = {}", m.head_hidden),
        format!("offset_cap = {:?}", m.offset_cap),
        format!("prune_threshold = {:?}", m.prune_threshold),
        format!("lr = {:?}", cfg.optimizer.lr),
        format!("beta1 = {:?}", cfg.optimizer.betas.0),
        format!("beta2 = {:?}", cfg.optimizer.betas.1),
        format!("weight_decay = {:?}", cfg.optimizer.weight_decay),
        format!("eps = {:?}", cfg.optimizer.eps),
        format!("warmup = {:?}", cfg.warmup),
        format!("mask_ratio = {:?}", cfg.mask_ratio),
        format!("views = {}", cfg.views_per_step),
        format!("epochs = {}", cfg.epochs),
        format!("seed = {}", cfg.seed),
        format!("w_img = {:?}", cfg.loss.img),
        format!("w_dep = {:?}", cfg.loss.dep),
        format!("w_sem = {:?}", cfg.loss.sem),
        format!("tile = {}", cfg.tile.tile),
        format!("alpha_cutoff = {:?}", cfg.tile.alpha_cutoff),
        format!("transmittance_floor = {:?}", cfg.tile.transmittance_floor),
        format!("support = {support}"),
        format!("checkpoint_every = {}", cfg.checkpoint_every),
        format!("eval_every = {}", cfg.eval_every),
        format!("augment = {}", data.augment),
    ]
    .join("\n")
        + "\n"
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_reference_hyperparameters() {
        let (cfg, data) = parse_config("").unwrap();
        assert_eq!(cfg.optimizer.lr, 0.002);
        assert_eq!(cfg.optimizer.betas, (0.9, 0.95));
        assert_eq!(cfg.optimizer.weight_decay, 0.05);
        assert_eq!(cfg.mask_ratio, 0.5);
        assert_eq!(cfg.model.prune_threshold, 0.3);
        assert_eq!(cfg.views_per_step, 5);
        assert_eq!(cfg.model.grid, GridSpec::cube(16).unwrap());
        assert_eq!(cfg.model.offset_cap, 1.0 / 16.0);
        assert!(!data.augment);
    }

    #[test]
    fn parses_values_and_comments() {
        let text = "# overfit\ngrid = 8,4,2\nviews=2 # M\nsupport = none\naugment = true\nseed = 18446744073709551615\n";
        let (cfg, data) = parse_config(text).unwrap();
        assert_eq!(cfg.model.grid, GridSpec::new(8, 4, 2).unwrap());
        assert_eq!(cfg.model.offset_cap, 1.0 / 8.0);
        assert_eq!(cfg.views_per_step, 2);
        assert_eq!(cfg.tile.support, None);
        assert_eq!(cfg.seed, u64::MAX);
        assert!(data.augment);
    }

    #[test]
    fn rejects_bad_input() {
        for (text, needle) in [
            ("learning_rate = 1", "learning_rate"),
            ("lr = fast", "lr"),
            ("lr = 1\nlr = 2", "twice"),
            ("views", "config line 1"),
            ("mask_ratio = 1.0", "mask ratio"),
            ("grid = 1,2", "grid"),
        ] {
            let err = parse_config(text).unwrap_err().to_string();
            assert!(err.contains(needle), "{text:?}: {err}");
        }
    }

    #[test]
    fn text_round_trip() {
        let text = "grid = 6,5,4\nlr = 0.0123\nsupport = 2.5\nw_sem = 0.25\naugment = true\n";
        let (cfg, data) = parse_config(text).unwrap();
        let again = parse_config(&config_to_text(&cfg, &data)).unwrap();
        assert_eq!(again, (cfg, data));
    }
}
