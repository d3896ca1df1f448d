//! TOML configuration documents.
//!
//! ```toml
//! [model]
//! preset = "ViG-Ti"          # or structure/blocks/dims, see below
//! k = 9                      # any explicit key overrides the preset
//!
//! [hardware]                 # optional; defaults are the U280 build
//! n_buf = 2
//!
//! [run]
//! mode = "graphleap"         # or "standard"
//! schedule = "overlapped"    # or "sequential"
//! seed = 7
//! weights = "random"         # or a path to a .glpw bundle
//! ```
//!
//! Explicit model keys: `name`, `structure` (`isotropic` | `pyramidal`),
//! `blocks`, `dims`, `patch_size`, `image_size`, `num_classes`, `k`, `heads`
//! (upper bound on heads per block), `dilation` (one entry per block).
//! Optional run keys: `tolerance`, `activation` (`gelu-pwl` | `gelu-exact` |
//! `relu`), `layer_norm`. Unknown keys are rejected.

use graphleap_core::config::{
    preset, Activation, BlockOptions, HardwareParams, Mode, ModelDesc, ModelSpec, RunConfig, Schedule,
    Structure, WeightSource, DEFAULT_IMAGE_SIZE, DEFAULT_K, DEFAULT_MAX_HEADS, DEFAULT_NUM_CLASSES,
};
use toml::{Table, Value};

use crate::error::{Error, Result};

const MODEL_KEYS: &[&str] = &[
    "preset",
    "name",
    "structure",
    "blocks",
    "dims",
    "patch_size",
    "image_size",
    "num_classes",
    "k",
    "heads",
    "dilation",
];
const HARDWARE_KEYS: &[&str] = &[
    "p_n", "p_d", "heads", "l_fused", "f_clk", "n_buf", "c1", "c2", "t_sync", "t_pcie",
];
const RUN_KEYS: &[&str] = &["mode", "schedule", "seed", "weights", "tolerance", "activation", "layer_norm"];

/// Fully validated contents of a configuration document.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub model: ModelSpec,
    pub hardware: HardwareParams,
    pub run: RunConfig,
}

/// Typed access to one `[section]` with dotted error paths.
struct Section<'a> {
    name: &'a str,
    table: &'a Table,
}

impl<'a> Section<'a> {
    fn new(name: &'a str, table: &'a Table, allowed: &[&str]) -> Result<Self> {
        if let Some(key) = table.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(Error::validation(&format!("{name}.{key}"), "unknown key"));
        }
        Ok(Section { name, table })
    }

    fn path(&self, key: &str) -> String {
        format!("{}.{key}", self.name)
    }

    fn invalid(&self, key: &str, message: &str) -> Error {
        Error::validation(&self.path(key), message)
    }

    fn has(&self, key: &str) -> bool {
        self.table.contains_key(key)
    }

    fn str(&self, key: &str) -> Result<Option<&'a str>> {
        match self.table.get(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s)),
            Some(_) => Err(self.invalid(key, "expected a string")),
        }
    }

    fn bool(&self, key: &str) -> Result<Option<bool>> {
        match self.table.get(key) {
            None => Ok(None),
            Some(Value::Boolean(b)) => Ok(Some(*b)),
            Some(_) => Err(self.invalid(key, "expected a boolean")),
        }
    }

    fn uint_value(&self, key: &str, v: &Value) -> Result<u64> {
        match v {
            Value::Integer(i) => u64::try_from(*i).map_err(|_| self.invalid(key, "must be non-negative")),
            _ => Err(self.invalid(key, "expected an integer")),
        }
    }

    fn u64(&self, key: &str) -> Result<Option<u64>> {
        self.table.get(key).map(|v| self.uint_value(key, v)).transpose()
    }

    fn usize(&self, key: &str) -> Result<Option<usize>> {
        self.u64(key)?
            .map(|v| usize::try_from(v).map_err(|_| self.invalid(key, "too large")))
            .transpose()
    }

    fn usize_list(&self, key: &str) -> Result<Option<Vec<usize>>> {
        match self.table.get(key) {
            None => Ok(None),
            Some(Value::Array(items)) => items
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    let item = format!("{key}[{i}]");
                    self.uint_value(&item, v)
                        .and_then(|x| usize::try_from(x).map_err(|_| self.invalid(&item, "too large")))
                })
                .collect::<Result<Vec<_>>>()
                .map(Some),
            Some(_) => Err(self.invalid(key, "expected an array of integers")),
        }
    }

    fn f64(&self, key: &str) -> Result<Option<f64>> {
        match self.table.get(key) {
            None => Ok(None),
            Some(Value::Float(f)) => Ok(Some(*f)),
            Some(Value::Integer(i)) => Ok(Some(*i as f64)),
            Some(_) => Err(self.invalid(key, "expected a number")),
        }
    }

    /// Seeds may exceed the TOML integer range, so strings are accepted too.
    fn seed(&self, key: &str) -> Result<Option<u64>> {
        match self.table.get(key) {
            Some(Value::String(s)) => s
                .parse()
                .map(Some)
                .map_err(|_| self.invalid(key, "expected an unsigned 64-bit integer")),
            _ => self.u64(key),
        }
    }

    fn choice<T: Copy>(&self, key: &str, options: &[(&str, T)]) -> Result<Option<T>> {
        let Some(s) = self.str(key)? else {
            return Ok(None);
        };
        options
            .iter()
            .find(|(name, _)| *name == s)
            .map(|&(_, v)| Some(v))
            .ok_or_else(|| {
                let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
                self.invalid(key, &format!("expected one of {}", names.join(", ")))
            })
    }

    fn required<T>(&self, key: &str, v: Option<T>) -> Result<T> {
        v.ok_or_else(|| self.invalid(key, "required key is missing"))
    }
}

fn section<'a>(root: &'a Table, name: &str) -> Result<Option<&'a Table>> {
    match root.get(name) {
        None => Ok(None),
        Some(Value::Table(t)) => Ok(Some(t)),
        Some(_) => Err(Error::validation(name, "expected a table")),
    }
}

const STRUCTURES: &[(&str, Structure)] = &[("isotropic", Structure::Isotropic), ("pyramidal", Structure::Pyramidal)];
const MODES: &[(&str, Mode)] = &[("standard", Mode::StandardViG), ("graphleap", Mode::GraphLeap)];
const SCHEDULES: &[(&str, Schedule)] = &[
    ("sequential", Schedule::Sequential),
    ("overlapped", Schedule::Overlapped),
];
const ACTIVATIONS: &[(&str, Activation)] = &[
    ("gelu-pwl", Activation::GeluPwl),
    ("gelu-exact", Activation::GeluExact),
    ("relu", Activation::Relu),
];

fn model_from(s: &Section<'_>) -> Result<ModelSpec> {
    let mut desc = match s.str("preset")? {
        Some(name) => preset(name).map_err(Error::Config)?.to_desc(),
        None => {
            let structure = s.required("structure", s.choice("structure", STRUCTURES)?)?;
            ModelDesc {
                name: None,
                structure,
                blocks: s.required("blocks", s.usize_list("blocks")?)?,
                dims: s.required("dims", s.usize_list("dims")?)?,
                patch_size: structure.default_patch_size(),
                image_size: DEFAULT_IMAGE_SIZE,
                num_classes: DEFAULT_NUM_CLASSES,
                k: DEFAULT_K,
                max_heads: DEFAULT_MAX_HEADS,
                dilation_schedule: None,
            }
        }
    };
    let reshaped = ["structure", "blocks", "dims", "patch_size", "image_size", "k"]
        .iter()
        .any(|k| s.has(k));
    if reshaped {
        desc.dilation_schedule = None;
    }
    if let Some(name) = s.str("name")? {
        desc.name = Some(name.to_owned());
    }
    if let Some(v) = s.choice("structure", STRUCTURES)? {
        desc.structure = v;
    }
    if let Some(v) = s.usize_list("blocks")? {
        desc.blocks = v;
    }
    if let Some(v) = s.usize_list("dims")? {
        desc.dims = v;
    }
    if let Some(v) = s.usize("patch_size")? {
        desc.patch_size = v;
    }
    if let Some(v) = s.usize("image_size")? {
        desc.image_size = v;
    }
    if let Some(v) = s.usize("num_classes")? {
        desc.num_classes = v;
    }
    if let Some(v) = s.usize("k")? {
        desc.k = v;
    }
    if let Some(v) = s.usize("heads")? {
        desc.max_heads = v;
    }
    if let Some(v) = s.usize_list("dilation")? {
        desc.dilation_schedule = Some(v);
    }
    desc.build().map_err(Error::Config)
}

fn hardware_from(s: &Section<'_>) -> Result<HardwareParams> {
    let mut hw = HardwareParams::default();
    hw.p_n = s.usize("p_n")?.unwrap_or(hw.p_n);
    hw.p_d = s.usize("p_d")?.unwrap_or(hw.p_d);
    hw.heads = s.usize("heads")?.unwrap_or(hw.heads);
    hw.l_fused = s.u64("l_fused")?.unwrap_or(hw.l_fused);
    hw.f_clk = s.f64("f_clk")?.unwrap_or(hw.f_clk);
    hw.n_buf = s.usize("n_buf")?.unwrap_or(hw.n_buf);
    hw.c1 = s.f64("c1")?.unwrap_or(hw.c1);
    hw.c2 = s.f64("c2")?.unwrap_or(hw.c2);
    hw.t_sync = s.u64("t_sync")?.unwrap_or(hw.t_sync);
    hw.t_pcie = s.f64("t_pcie")?.unwrap_or(hw.t_pcie);
    hw.validate().map_err(Error::Config)?;
    Ok(hw)
}

fn run_from(s: &Section<'_>) -> Result<RunConfig> {
    let defaults = RunConfig::default();
    let weight_source = match s.str("weights")? {
        None | Some("random") => WeightSource::RandomSeeded,
        Some("") => return Err(s.invalid("weights", "empty path")),
        Some(path) => WeightSource::File(path.to_owned()),
    };
    let tolerance = s.f64("tolerance")?.unwrap_or(f64::from(defaults.numeric_tolerance));
    if !(tolerance.is_finite() && tolerance >= 0.0) {
        return Err(s.invalid("tolerance", "must be finite and non-negative"));
    }
    let run = RunConfig {
        mode: s.required("mode", s.choice("mode", MODES)?)?,
        schedule: s.required("schedule", s.choice("schedule", SCHEDULES)?)?,
        seed: s.required("seed", s.seed("seed")?)?,
        weight_source,
        numeric_tolerance: tolerance as f32,
        block: BlockOptions {
            activation: s.choice("activation", ACTIVATIONS)?.unwrap_or(defaults.block.activation),
            layer_norm: s.bool("layer_norm")?.unwrap_or(defaults.block.layer_norm),
        },
    };
    run.validate().map_err(Error::Config)?;
    Ok(run)
}

/// Parses and validates a document.
pub fn load_config(text: &str) -> Result<Config> {
    let root: Table = text.parse().map_err(|e: toml::de::Error| Error::Parse(e.to_string()))?;
    if let Some(key) = root.keys().find(|k| !["model", "hardware", "run"].contains(&k.as_str())) {
        return Err(Error::validation(key, "unknown top-level key"));
    }
    let model = section(&root, "model")?.ok_or_else(|| Error::validation("model", "required section is missing"))?;
    let run = section(&root, "run")?.ok_or_else(|| Error::validation("run", "required section is missing"))?;
    let empty = Table::new();
    let hardware = section(&root, "hardware")?.unwrap_or(&empty);
    Ok(Config {
        model: model_from(&Section::new("model", model, MODEL_KEYS)?)?,
        hardware: hardware_from(&Section::new("hardware", hardware, HARDWARE_KEYS)?)?,
        run: run_from(&Section::new("run", run, RUN_KEYS)?)?,
    })
}

pub fn load_config_file(path: &std::path::Path) -> Result<Config> {
    let text = std::fs::read_to_string(path).map_err(Error::file(path))?;
    load_config(&text)
}

fn int(v: usize) -> Value {
    Value::Integer(v as i64)
}

fn int_list(v: &[usize]) -> Value {
    Value::Array(v.iter().map(|&x| int(x)).collect())
}

fn name_of<T: PartialEq>(options: &[(&'static str, T)], v: &T) -> Value {
    let name = options.iter().find(|(_, o)| o == v).map_or("", |(n, _)| n);
    Value::String(name.to_owned())
}

/// Serializes a configuration in the explicit form. Loading the result gives
/// back an identical configuration.
pub fn to_document(model: &ModelSpec, hw: &HardwareParams, run: &RunConfig) -> String {
    let desc = model.to_desc();
    let mut m = Table::new();
    if let Some(name) = &desc.name {
        m.insert("name".into(), Value::String(name.clone()));
    }
    m.insert("structure".into(), name_of(STRUCTURES, &desc.structure));
    m.insert("blocks".into(), int_list(&desc.blocks));
    m.insert("dims".into(), int_list(&desc.dims));
    m.insert("patch_size".into(), int(desc.patch_size));
    m.insert("image_size".into(), int(desc.image_size));
    m.insert("num_classes".into(), int(desc.num_classes));
    m.insert("k".into(), int(desc.k));
    m.insert("heads".into(), int(desc.max_heads));
    m.insert("dilation".into(), int_list(&model.dilation_schedule));

    let mut h = Table::new();
    h.insert("p_n".into(), int(hw.p_n));
    h.insert("p_d".into(), int(hw.p_d));
    h.insert("heads".into(), int(hw.heads));
    h.insert("l_fused".into(), Value::Integer(hw.l_fused as i64));
    h.insert("f_clk".into(), Value::Float(hw.f_clk));
    h.insert("n_buf".into(), int(hw.n_buf));
    h.insert("c1".into(), Value::Float(hw.c1));
    h.insert("c2".into(), Value::Float(hw.c2));
    h.insert("t_sync".into(), Value::Integer(hw.t_sync as i64));
    h.insert("t_pcie".into(), Value::Float(hw.t_pcie));

    let mut r = Table::new();
    r.insert("mode".into(), name_of(MODES, &run.mode));
    r.insert("schedule".into(), name_of(SCHEDULES, &run.schedule));
    r.insert(
        "seed".into(),
        i64::try_from(run.seed).map_or_else(|_| Value::String(run.seed.to_string()), Value::Integer),
    );
    let weights = match &run.weight_source {
        WeightSource::RandomSeeded => "random".to_owned(),
        WeightSource::File(p) => p.clone(),
    };
    r.insert("weights".into(), Value::String(weights));
    r.insert("tolerance".into(), Value::Float(f64::from(run.numeric_tolerance)));
    r.insert("activation".into(), name_of(ACTIVATIONS, &run.block.activation));
    r.insert("layer_norm".into(), Value::Boolean(run.block.layer_norm));

    let mut root = Table::new();
    root.insert("model".into(), Value::Table(m));
    root.insert("hardware".into(), Value::Table(h));
    root.insert("run".into(), Value::Table(r));
    toml::to_string(&root).expect("tables of plain values always serialize")
}

#[cfg(test)]
mod tests {
    use super::*;
    use graphleap_core::config::PRESET_NAMES;

    const RUN: &str = "[run]\nmode = \"graphleap\"\nschedule = \"overlapped\"\nseed = 7\n";

    fn validation_path(e: Error) -> String {
        match e {
            Error::Config(graphleap_core::Error::Validation { path, .. }) => path,
            other => panic!("expected a validation error, got {other:?}"),
        }
    }

    #[test]
    fn preset_document() {
        let c = load_config(&format!("[model]\npreset = \"ViG-Ti\"\n{RUN}")).unwrap();
        assert_eq!(c.model.total_blocks(), 12);
        assert_eq!(c.model.stages[0].dim, 192);
        assert_eq!(c.model.stages[0].nodes, 196);
        assert_eq!(c.hardware, HardwareParams::default());
        assert_eq!(c.run.seed, 7);
    }

    #[test]
    fn presets_round_trip() {
        for name in PRESET_NAMES {
            let spec = preset(name).unwrap();
            let run = RunConfig {
                seed: u64::MAX,
                ..RunConfig::default()
            };
            let doc = to_document(&spec, &HardwareParams::default(), &run);
            let back = load_config(&doc).unwrap();
            assert_eq!(back.model, spec, "{name}");
            assert_eq!(back.run, run);
            assert_eq!(back.hardware, HardwareParams::default());
        }
    }

    #[test]
    fn k_exceeding_n() {
        let doc = format!(
            "[model]\nstructure = \"isotropic\"\nblocks = [1]\ndims = [8]\npatch_size = 16\nimage_size = 32\nk = 9\n{RUN}"
        );
        let e = load_config(&doc).unwrap_err();
        assert!(e.to_string().contains("k exceeds N"), "{e}");
        assert_eq!(validation_path(e), "model.k");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let e = load_config(&format!("[model]\npreset = \"ViG-Ti\"\nkk = 3\n{RUN}")).unwrap_err();
        assert_eq!(validation_path(e), "model.kk");
        let e = load_config(&format!("[model]\npreset = \"ViG-Ti\"\n{RUN}[extra]\n")).unwrap_err();
        assert_eq!(validation_path(e), "extra");
    }

    #[test]
    fn malformed_is_parse_error() {
        assert!(matches!(load_config("[model\n"), Err(Error::Parse(_))));
    }

    #[test]
    fn standard_overlapped_rejected() {
        let doc = "[model]\npreset = \"ViG-Ti\"\n[run]\nmode = \"standard\"\nschedule = \"overlapped\"\nseed = 1\n";
        assert_eq!(validation_path(load_config(doc).unwrap_err()), "run.schedule");
    }

    #[test]
    fn missing_run_key() {
        let doc = "[model]\npreset = \"ViG-Ti\"\n[run]\nmode = \"standard\"\nschedule = \"sequential\"\n";
        assert_eq!(validation_path(load_config(doc).unwrap_err()), "run.seed");
    }

    #[test]
    fn preset_overrides_reset_dilation() {
        let doc = format!("[model]\npreset = \"ViG-Py-Ti\"\nimage_size = 64\nk = 3\n{RUN}");
        let c = load_config(&doc).unwrap();
        assert_eq!(c.model.image_size, 64);
        assert_eq!(c.model.stages[3].nodes, 4);
    }

    #[test]
    fn unknown_preset() {
        let e = load_config(&format!("[model]\npreset = \"ViG-XL\"\n{RUN}")).unwrap_err();
        assert!(matches!(e, Error::Config(graphleap_core::Error::UnknownPreset(_))));
        assert_eq!(e.exit_code(), 2);
    }
}
