"""Run configuration: JSON document validated against a strict schema."""

import copy
import json
import zlib
from pathlib import Path

import jsonschema
import numpy as np

NUM = {"type": "number"}
NUM_OR_NULL = {"type": ["number", "null"]}
INT = {"type": "integer"}


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False}


SIGNAL = _obj({
    "kind": {"enum": ["speech", "tone", "impulses", "file"]},
    "syllable_rate": {"type": "number", "exclusiveMinimum": 0},
    "frequency": {"type": "number", "exclusiveMinimum": 0},
    "phase": NUM,
    "period": {"type": "number", "exclusiveMinimum": 0},
    "path": {"type": "string"},
}, ["kind"])

DOA = _obj({
    "start": {"type": "number", "minimum": 0},
    "azimuth_deg": {"type": "number", "minimum": -360, "maximum": 360},
    "elevation_deg": {"type": "number", "minimum": -90, "maximum": 90},
}, ["azimuth_deg"])

ISOTROPY = _obj({
    "kind": {"enum": ["iso", "aniso"]},
    "peak_deg": NUM,
    "A": {"type": "number", "minimum": 0},
}, ["kind"])

SCENE = _obj({
    "id": {"type": "string", "pattern": "^[A-Za-z0-9_.-]+$"},
    "duration": {"type": "number", "exclusiveMinimum": 0},
    "sources": {"type": "array", "minItems": 1, "items": _obj({
        "signal": SIGNAL,
        "doa": {"type": "array", "minItems": 1, "items": DOA},
        "gain_db": NUM,
        "onset": {"type": "number", "minimum": 0},
        "offset": NUM_OR_NULL,
    }, ["signal", "doa"])},
    "target_index": {"type": "integer", "minimum": 0},
    "ambient": ISOTROPY,
    "ambient_db": NUM_OR_NULL,
    "sensor_noise_db": NUM_OR_NULL,
    "seed": INT,
    "split": {"enum": ["train", "test"]},
}, ["duration", "sources"])

SCHEMA = _obj({
    "seed": {"type": "integer", "minimum": 0},
    "output_dir": {"type": "string"},
    "stft": _obj({
        "sample_rate": {"type": "integer", "minimum": 1},
        "window_len": {"type": "integer", "minimum": 2},
        "hop": {"type": "integer", "minimum": 1},
        "fft_len": {"type": "integer", "minimum": 2},
    }),
    "array": _obj({
        "atf_path": {"type": "string"},
        "geometry": {"oneOf": [
            {"const": "default"},
            {"type": "array", "minItems": 1,
             "items": {"type": "array", "items": NUM, "minItems": 3, "maxItems": 3}},
        ]},
        "grid": _obj({"n_az": {"type": "integer", "minimum": 1},
                      "n_incl": {"type": "integer", "minimum": 2}}),
        "speed_of_sound": {"type": "number", "exclusiveMinimum": 0},
    }),
    "dictionary": _obj({
        "kind": {"enum": ["parametric", "datadriven", "file"]},
        "path": {"type": "string"},
        "include_identity": {"type": "boolean"},
        "include_plane_waves": {"type": "boolean"},
        "aniso_peaks_deg": {"type": "array", "items": NUM},
        "aniso_ranges_db": {"type": "array", "items": {"type": "number", "minimum": 0}},
        "steering_azimuth_deg": {"type": "array", "minItems": 1, "items": NUM},
        "steering_elevation_deg": {"type": "array", "minItems": 1,
                                   "items": {"type": "number", "minimum": -90, "maximum": 90}},
        "n_models": {"type": "integer", "minimum": 1},
        "max_iter": {"type": "integer", "minimum": 1},
        "training_T": {"type": "number", "exclusiveMinimum": 0},
    }),
    "pipeline": _obj({
        "T": {"type": "number", "exclusiveMinimum": 0},
        "kappa0": {"type": ["number", "null"], "exclusiveMinimum": 1},
        "ref_channel": {"type": "integer", "minimum": 0},
    }),
    "scenes": _obj({
        "generate": _obj({
            "n_sources": {"type": "array", "minItems": 1,
                          "items": {"type": "integer", "minimum": 1}},
            "count": {"type": "integer", "minimum": 0},
            "duration": {"type": "number", "exclusiveMinimum": 0},
            "onset": {"type": "number", "minimum": 0},
            "pool": {"type": "array", "minItems": 1, "items": SIGNAL},
            "ambient": ISOTROPY,
            "ambient_db": NUM_OR_NULL,
            "sensor_noise_db": NUM_OR_NULL,
            "interferer_db": NUM,
            "target_azimuth_deg": {"type": "array", "items": NUM, "minItems": 2, "maxItems": 2},
            "min_separation_deg": {"type": "number", "minimum": 0},
            "train_fraction": {"type": "number", "minimum": 0, "maximum": 1},
        }),
        "explicit": {"type": "array", "items": SCENE},
    }),
    "metrics": _obj({
        "aggregate": {"type": "boolean"},
        "figures": {"type": "boolean"},
    }),
})

DEFAULTS = {
    "seed": 0,
    "stft": {"sample_rate": 10000, "window_len": 160, "hop": 80, "fft_len": 160},
    "array": {"geometry": "default", "grid": {"n_az": 60, "n_incl": 20},
              "speed_of_sound": 343.0},
    "dictionary": {"kind": "parametric", "include_identity": True,
                   "include_plane_waves": False, "n_models": 302, "max_iter": 100,
                   "training_T": 0.08},
    "pipeline": {"T": 0.08, "kappa0": 1000.0, "ref_channel": 1},
    "scenes": {"generate": {
        "n_sources": [1, 2, 3], "count": 2, "duration": 6.0, "onset": 2.0,
        "pool": [{"kind": "speech"}, {"kind": "speech", "syllable_rate": 3.5},
                 {"kind": "speech", "syllable_rate": 4.5}],
        "ambient": {"kind": "iso"}, "ambient_db": -3.0, "sensor_noise_db": -30.0,
        "interferer_db": -3.0, "target_azimuth_deg": [-60, 60], "min_separation_deg": 30,
        "train_fraction": 0.0,
    }},
    "metrics": {"aggregate": True, "figures": True},
}


class ConfigError(ValueError):
    """Invalid configuration; ``field`` is a dotted path to the offending key."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field


def _path(parts):
    out = ""
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out or "<root>"


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def validate(doc):
    v = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(v.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        field = _path(e.absolute_path)
        if e.validator == "additionalProperties":
            extra = sorted(set(e.instance) - set(e.schema.get("properties", {})))
            field = _path(list(e.absolute_path) + extra[:1])
            raise ConfigError(field, "unknown key")
        raise ConfigError(field, e.message)
    return doc


def load_config(path=None):
    """Validated config merged over the defaults; ``None`` gives the defaults."""
    doc = {}
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError as e:
            raise ConfigError("", f"config file not found: {path}") from e
        except json.JSONDecodeError as e:
            raise ConfigError("", f"invalid JSON at line {e.lineno} column {e.colno}") from e
        if not isinstance(doc, dict):
            raise ConfigError("<root>", "config must be a JSON object")
    validate(doc)
    cfg = _merge(DEFAULTS, doc)
    cfg["_base_dir"] = str(Path(path).resolve().parent) if path else str(Path.cwd())
    _check_semantics(cfg)
    return cfg


def _check_semantics(cfg):
    st = cfg["stft"]
    if st["hop"] > st["window_len"]:
        raise ConfigError("stft.hop", "hop exceeds window length")
    if st["fft_len"] < st["window_len"]:
        raise ConfigError("stft.fft_len", "FFT shorter than the window")
    d = cfg["dictionary"]
    if d["kind"] == "file" and "path" not in d:
        raise ConfigError("dictionary.path", "required for kind 'file'")
    for i, sc in enumerate(cfg["scenes"].get("explicit", [])):
        if sc.get("target_index", 0) >= len(sc["sources"]):
            raise ConfigError(f"scenes.explicit[{i}].target_index", "no such source")


def resolve_path(cfg, p):
    p = Path(p)
    return p if p.is_absolute() else Path(cfg["_base_dir"]) / p


def sub_seed(seed, name):
    """Independent, reproducible seed for a named consumer of randomness."""
    ss = np.random.SeedSequence([int(seed), zlib.crc32(name.encode("utf-8"))])
    return int(ss.generate_state(1, dtype=np.uint32)[0])
