"""Command line entry point: simulate | build-dict | enhance | evaluate | inspect-dict."""

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import jsonschema
import numpy as np

from . import array as arr
from . import dictionary as dic
from .config import ConfigError, load_config, resolve_path, sub_seed
from .evaluation import evaluate_scenes
from .metrics import LengthMismatch as MetricLengthMismatch
from .metrics import MetricReport
from .noisemodels import Isotropy
from .report import beam_patterns, metric_boxplots, spectrograms
from .scene import SceneOutput, SceneSpec, SourceSpec, render_scene, segment_scenes
from .stft import StftConfig, StftTensor, analyze, synthesize
from .subspace import LengthMismatch, run_pipeline
from .wavio import FileError, read_wav, write_wav

log = logging.getLogger("sshybrid")

EXIT_CODES = {
    "E_INTERNAL": 1,
    "E_CONFIG": 2,
    "E_IO": 3,
    "E_FORMAT": 4,
    "E_INPUT": 5,
}

DIAGNOSTICS_SCHEMA = {
    "type": "object",
    "required": ["summary", "n_frames", "warmup_frames", "beta_hyb", "beta_iso",
                 "model_ids", "model_histogram", "clamped_frames"],
    "properties": {
        "summary": {"type": "string"},
        "n_frames": {"type": "integer", "minimum": 0},
        "warmup_frames": {"type": "integer", "minimum": 0},
        "beta_hyb": {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1}},
        "beta_iso": {"type": "array", "items": {
            "type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}},
        "model_ids": {"type": "array", "items": {"type": "string"}},
        "model_histogram": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        "clamped_frames": {"type": "integer", "minimum": 0},
    },
    "additionalProperties": False,
}


class InputError(ValueError):
    pass


# shared helpers -----------------------------------------------------------------


def stft_config(cfg):
    s = cfg["stft"]
    return StftConfig(s["sample_rate"], s["window_len"], s["hop"], s["fft_len"])


def load_atfs(cfg):
    a = cfg["array"]
    ref = cfg["pipeline"]["ref_channel"]
    if "atf_path" in a:
        p = resolve_path(cfg, a["atf_path"])
        if not p.exists():
            raise ConfigError("array.atf_path", f"ATF manifest not found: {p}")
        atfs = arr.import_atf(p)
        if atfs.sample_rate != cfg["stft"]["sample_rate"]:
            raise ConfigError("array.atf_path", "ATF sample rate differs from stft.sample_rate")
    else:
        geo = arr.default_geometry() if a["geometry"] == "default" else np.array(a["geometry"])
        grid = arr.GridSpec(a["grid"]["n_az"], a["grid"]["n_incl"])
        atfs = arr.synth_freefield_atf(geo, grid, stft_config(cfg), a["speed_of_sound"], ref)
    if not 0 <= ref < atfs.n_channels:
        raise ConfigError("pipeline.ref_channel", f"no channel {ref} in a {atfs.n_channels}-channel array")
    return atfs


def steering_directions(cfg):
    d = cfg["dictionary"]
    return arr.steering_grid(d.get("steering_azimuth_deg"), d.get("steering_elevation_deg"))


def _isotropy(desc):
    if desc["kind"] == "iso":
        return Isotropy()
    return Isotropy.aniso(np.deg2rad(desc.get("peak_deg", 0.0)), desc.get("A", 0.0))


def _direction(d):
    return arr.Direction.from_degrees(d["azimuth_deg"], d.get("elevation_deg", 0.0))


def _signal(cfg, desc):
    if desc["kind"] == "file":
        return dict(desc, path=str(resolve_path(cfg, desc["path"])))
    return desc


def scene_specs(cfg):
    """``[(scene_id, split, SceneSpec)]`` from the ``scenes`` section."""
    sc = cfg["scenes"]
    rate = cfg["stft"]["sample_rate"]
    out = []
    for i, e in enumerate(sc.get("explicit", [])):
        sources = []
        for j, s in enumerate(e["sources"]):
            try:
                doa = [(x.get("start", 0.0), _direction(x)) for x in s["doa"]]
            except arr.InvalidGrid as err:
                raise ConfigError(f"scenes.explicit[{i}].sources[{j}].doa", str(err)) from err
            sources.append(SourceSpec(_signal(cfg, s["signal"]), doa, s.get("gain_db", 0.0),
                                      s.get("onset", 0.0), s.get("offset")))
        amb = _isotropy(e["ambient"]) if "ambient" in e else None
        spec = SceneSpec(e["duration"], sources, e.get("target_index", 0), amb,
                         e.get("ambient_db"), e.get("sensor_noise_db"), rate,
                         e.get("seed", sub_seed(cfg["seed"], f"scene-{i}")),
                         {"n_sources": len(sources), "segment": e.get("id", f"scene{i:03d}")})
        out.append((e.get("id", f"scene{i:03d}"), e.get("split", "test"), spec))
    g = sc.get("generate")
    if g and not sc.get("explicit"):
        for ns in g["n_sources"]:
            specs = segment_scenes(
                [_signal(cfg, x) for x in g["pool"]], ns, g["count"],
                sub_seed(cfg["seed"], f"scenes-ns{ns}"),
                g["duration"], g["onset"], tuple(g["target_azimuth_deg"]),
                g["min_separation_deg"], _isotropy(g["ambient"]), g["ambient_db"],
                g["sensor_noise_db"], g["interferer_db"])
            n_train = int(round(g["train_fraction"] * len(specs)))
            for k, s in enumerate(specs):
                sid = f"ns{ns}_{k:03d}"
                s.sample_rate = rate
                s.labels["segment"] = sid
                out.append((sid, "train" if k < n_train else "test", s))
    return out


def sha256_file(p):
    return hashlib.sha256(Path(p).read_bytes()).hexdigest()


def write_json(path, doc):
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return Path(path)


def write_doa_track(path, track):
    doc = []
    for k, d in enumerate(track):
        az, el = d.degrees()
        doc.append({"frame": k, "azimuth_deg": round(az, 9), "elevation_deg": round(el, 9)})
    return write_json(path, doc)


def read_doa_track(path, n_frames):
    """Per-frame Directions from ``[{frame, azimuth_deg, elevation_deg}]``.

    Entries hold from their frame until the next entry.
    """
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise FileError(f"DOA track not found: {path}") from e
    except json.JSONDecodeError as e:
        raise InputError(f"DOA track is not valid JSON: {e}") from e
    if not isinstance(doc, list) or not doc:
        raise InputError("DOA track must be a non-empty JSON array")
    try:
        entries = sorted((int(e["frame"]), _direction(e)) for e in doc)
    except (KeyError, TypeError, arr.InvalidGrid) as e:
        raise InputError(f"bad DOA entry: {e}") from e
    if entries[0][0] != 0:
        raise InputError("DOA track must start at frame 0")
    track, j = [], 0
    for k in range(n_frames):
        while j + 1 < len(entries) and entries[j + 1][0] <= k:
            j += 1
        track.append(entries[j][1])
    return track


def load_scene(directory, sid):
    d = Path(directory)
    meta_path = d / f"{sid}.json"
    if not meta_path.exists():
        raise FileError(f"missing scene sidecar {meta_path}")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    parts = {}
    for key in ("mixed", "target", "noise"):
        p = d / meta["files"][key]
        if not p.exists():
            raise FileError(f"missing ground truth file {p}")
        parts[key], rate = read_wav(p)
    mixed = parts["mixed"].astype(np.float32)
    n_frames = len(meta["target_active"])
    track = read_doa_track(d / meta["files"]["doa"], n_frames)
    return SceneOutput(mixed, parts["target"].astype(np.float32),
                       parts["noise"].astype(np.float32), track,
                       np.array(meta["target_active"], dtype=bool), rate,
                       {"segment": sid, "n_sources": meta["n_sources"], "split": meta["split"]})


def scene_ids(directory, split=None):
    d = Path(directory)
    mpath = d / "manifest.json"
    if not mpath.exists():
        raise FileError(f"no manifest.json in {d}")
    man = json.loads(mpath.read_text(encoding="utf-8"))
    ids = man["scenes"]
    if split is not None:
        ids = [s for s in ids if man["splits"].get(s) == split]
    return ids


# subcommands --------------------------------------------------------------------


def cmd_simulate(cfg, args):
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    atfs = load_atfs(cfg)
    scfg = stft_config(cfg)
    files, splits, ids = {}, {}, []
    for sid, split, spec in scene_specs(cfg):
        res = render_scene(spec, atfs, scfg)
        names = {"mixed": f"{sid}_mixed.wav", "target": f"{sid}_target.wav",
                 "noise": f"{sid}_noise.wav", "doa": f"{sid}_doa.json"}
        write_wav(out / names["mixed"], res.mixed, spec.sample_rate)
        write_wav(out / names["target"], res.target_direct, spec.sample_rate)
        write_wav(out / names["noise"], res.gt_noise, spec.sample_rate)
        write_doa_track(out / names["doa"], res.doa_track)
        write_json(out / f"{sid}.json", {
            "id": sid, "n_sources": len(spec.sources), "split": split,
            "sample_rate": spec.sample_rate, "reference_channel": cfg["pipeline"]["ref_channel"],
            "target_active": [int(v) for v in res.target_active], "files": names,
        })
        for p in list(names.values()) + [f"{sid}.json"]:
            files[p] = sha256_file(out / p)
        splits[sid] = split
        ids.append(sid)
    write_json(out / "manifest.json", {"scenes": ids, "splits": splits, "files": files})
    print(f"simulated {len(ids)} scenes into {out}")
    return 0


def _training_set(cfg, scenes_dir):
    ids = scene_ids(scenes_dir, "train") or scene_ids(scenes_dir)
    scfg = stft_config(cfg)
    T = cfg["dictionary"]["training_T"]
    sets = []
    for sid in ids:
        sc = load_scene(scenes_dir, sid)
        sets.append(dic.ema_gt_ncm(analyze(sc.gt_noise.astype(float), scfg), T))
    return dic.TrainingSet.concatenate(sets), ids


def build_dictionary(cfg, scenes_dir=None):
    atfs = load_atfs(cfg)
    d = cfg["dictionary"]
    kappa0 = cfg["pipeline"]["kappa0"]
    ref = cfg["pipeline"]["ref_channel"]
    steering = steering_directions(cfg)
    if d["kind"] == "parametric":
        spec = dic.default_parametric_spec(d["include_identity"], d["include_plane_waves"], atfs,
                                           d.get("aniso_peaks_deg"), d.get("aniso_ranges_db"))
        return dic.build_parametric(atfs, spec, steering, kappa0, ref), atfs
    if d["kind"] == "datadriven":
        if scenes_dir is None:
            raise ConfigError("dictionary.kind", "data-driven build needs --scenes DIR")
        ts, _ = _training_set(cfg, scenes_dir)
        return dic.build_datadriven(ts, d["n_models"], atfs, steering,
                                    sub_seed(cfg["seed"], "kmeans"), kappa0, ref,
                                    d["max_iter"]), atfs
    return dic.load_dict(resolve_path(cfg, d["path"]), atfs), atfs


def cmd_build_dict(cfg, args):
    d, _ = build_dictionary(cfg, args.scenes)
    dic.save_dict(d, args.output)
    line = d.summary()
    if cfg["dictionary"]["kind"] == "datadriven":
        line = line.replace(f"M={d.n_models}", f"M={d.n_models} (incl. Iso)")
    print(line)
    return 0


def _load_dict_checked(cfg, path, atfs):
    p = Path(path)
    if not p.exists():
        raise FileError(f"dictionary not found: {p}")
    return dic.load_dict(p, atfs)


def diagnostics_doc(d, diag):
    doc = {
        "summary": d.summary(),
        "n_frames": int(diag.beta.shape[0]),
        "warmup_frames": int(diag.warmup),
        "beta_hyb": [float(min(max(b.real, 0.0), 1.0)) for b in diag.beta[:, 0]],
        "beta_iso": [[float(b.real), float(b.imag)] for b in diag.beta[:, 1]],
        "model_ids": list(d.model_ids),
        "model_histogram": [int(c) for c in diag.model_histogram(d.n_models)],
        "clamped_frames": int(diag.clamped.sum()),
    }
    jsonschema.validate(doc, DIAGNOSTICS_SCHEMA)
    return doc


def cmd_enhance(cfg, args):
    atfs = load_atfs(cfg)
    scfg = stft_config(cfg)
    d = _load_dict_checked(cfg, args.dictionary, atfs)
    x, rate = read_wav(args.input, scfg.sample_rate)
    if x.shape[0] != d.n_channels:
        raise InputError(f"input has {x.shape[0]} channels, dictionary expects {d.n_channels}")
    Y = analyze(x, scfg)
    track = read_doa_track(args.doa, Y.frames)
    z, diag = run_pipeline(Y, d, track, cfg["pipeline"]["T"])
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    n = x.shape[1]

    def to_time(spec):
        y = synthesize(StftTensor(spec[None], scfg))[0]
        return np.pad(y, (0, max(0, n - y.size)))[:n]

    write_wav(out / "enhanced.wav", to_time(z.data[0]), rate)
    write_wav(out / "iso.wav", to_time(diag.z_iso), rate)
    write_wav(out / "hybrid.wav", to_time(diag.z_hyb), rate)
    write_json(out / "diagnostics.json", diagnostics_doc(d, diag))
    if cfg["metrics"]["figures"]:
        ref = cfg["pipeline"]["ref_channel"]
        spectrograms({"input (reference channel)": Y.data[ref], "Iso": diag.z_iso,
                      "Hybrid": diag.z_hyb, "SS-Hybrid": z.data[0]}, scfg,
                     out / "spectrogram.png")
    print(f"enhanced {Y.frames} frames; {d.summary()}")
    return 0


def cmd_evaluate(cfg, args):
    atfs = load_atfs(cfg)
    scfg = stft_config(cfg)
    ids = scene_ids(args.scenes, "test") or scene_ids(args.scenes)
    scenes = [load_scene(args.scenes, sid) for sid in ids]
    methods = args.methods.split(",")
    report = MetricReport()
    T = cfg["pipeline"]["T"]
    ref = cfg["pipeline"]["ref_channel"]
    d = _load_dict_checked(cfg, args.dictionary, atfs)
    evaluate_scenes(scenes, d, scfg, T, ref, report, methods)
    if args.dictionary_k:
        dk = _load_dict_checked(cfg, args.dictionary_k, atfs)
        evaluate_scenes(scenes, dk, scfg, T, ref, report, ["SS-Hybrid"], {"SS-Hybrid": "SSH-K"})
    # methods in a fixed order, then scenes in manifest order
    order = {m: i for i, m in enumerate(methods + ["SSH-K"])}
    report.rows.sort(key=lambda r: (order.get(r["method"], 99), ids.index(r["segment"])))
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    report.write_csv(out / "metrics.csv")
    report.write_json(out / "metrics.json")
    if cfg["metrics"]["aggregate"]:
        report.write_aggregate_csv(out / "aggregate.csv")
    if cfg["metrics"]["figures"]:
        metric_boxplots(report, out / "metrics.png")
    for r in report.aggregate():
        print(f"{r['method']:>10s} N_s={r['n_sources']} n={r['count']} "
              f"fwSegSNR={r['fwsegsnr']:.2f} dB noise={r['seg_noise_power']:.2f} dB "
              f"distortion={r['target_distortion']:.2f} dB")
    return 0


def cmd_inspect_dict(cfg, args):
    atfs = load_atfs(cfg)
    d = _load_dict_checked(cfg, args.dictionary, atfs)
    print(d.summary())
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    psi = args.steer if args.steer is not None else int(np.argmin(
        arr.angular_distance(d.steer_az, d.steer_inc, 0.0, np.pi / 2)))
    if not 0 <= psi < d.n_steering:
        raise InputError(f"steering index {psi} out of range")
    bins = [b for b in (args.bins or [8, 24, 48]) if 0 <= b < d.n_bins]
    models = args.models or sorted({d.iso_index, min(1, d.n_models - 1), d.n_models - 1})
    write_json(out / "dictionary.json", {
        "summary": d.summary(),
        "iso_index": d.iso_index,
        "model_ids": d.model_ids,
        "atf_fingerprint": d.atf_fingerprint.hex(),
        "steering_deg": [[round(a, 9), round(e, 9)] for a, e in
                         (d.steering_direction(p).degrees() for p in range(d.n_steering))],
    })
    if cfg["metrics"]["figures"]:
        beam_patterns(d, atfs, psi, bins, models, out / "beam_pattern.png")
    return 0


# entry point --------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="sshybrid", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", help="JSON run configuration (defaults if omitted)")
        s.set_defaults(func=func)
        return s

    s = add("simulate", cmd_simulate, "render scenes to WAV files with ground truth")
    s.add_argument("output_dir")
    s = add("build-dict", cmd_build_dict, "build a weight dictionary")
    s.add_argument("output")
    s.add_argument("--scenes", help="simulated scene directory (data-driven training)")
    s = add("enhance", cmd_enhance, "enhance a multichannel recording")
    s.add_argument("input")
    s.add_argument("doa")
    s.add_argument("dictionary")
    s.add_argument("output_dir")
    s = add("evaluate", cmd_evaluate, "score methods on simulated scenes")
    s.add_argument("scenes")
    s.add_argument("dictionary")
    s.add_argument("output_dir")
    s.add_argument("--dictionary-k", help="data-driven dictionary, reported as SSH-K")
    s.add_argument("--methods", default="Iso,Hybrid,SS-Hybrid")
    s = add("inspect-dict", cmd_inspect_dict, "summarise a dictionary and plot beam patterns")
    s.add_argument("dictionary")
    s.add_argument("output_dir")
    s.add_argument("--steer", type=int)
    s.add_argument("--bins", type=int, nargs="+")
    s.add_argument("--models", type=int, nargs="+")
    return p


def _error_code(e):
    if isinstance(e, ConfigError):
        return "E_CONFIG"
    if isinstance(e, (arr.FormatError, dic.FormatError)):
        return "E_FORMAT"
    if isinstance(e, (FileError, OSError)):
        return "E_IO"
    if isinstance(e, (InputError, LengthMismatch, MetricLengthMismatch, ValueError)):
        return "E_INPUT"
    return "E_INTERNAL"


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config)
        return args.func(cfg, args)
    except Exception as e:  # noqa: BLE001 - reported as a machine-readable line
        code = _error_code(e)
        doc = {"error": code, "message": str(e)}
        if isinstance(e, ConfigError):
            doc["field"] = e.field
        print(json.dumps(doc, sort_keys=True), file=sys.stderr)
        if code == "E_INTERNAL" or args.verbose:
            log.debug("traceback", exc_info=True)
        return EXIT_CODES[code]


if __name__ == "__main__":
    sys.exit(main())
