"""Command-line entry point.

Every subcommand reads an optional ``key=value`` config file (``--config``)
and ``--set key=value`` overrides, writes its outputs atomically and drops a
``<output>.manifest.json`` beside each artifact. Failures print one line
``error:<category>: <message>`` on stderr and exit nonzero.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from . import segnet
from .formats import FormatError, atomic_write, read_checkpoint, read_grid, read_manifest, \
    write_checkpoint, write_grid, write_manifest
from .gconv import FilterBank, apply_g_to_output, lift_gconv3d, rotate_input
from .group import check_axioms, enumerate_stabilizer
from .nn import NonFiniteError, Parameter, Tensor
from .pointcloud import CloudFormatError, load_cloud
from .segnet import SegNetConfig, TrainConfig
from .vae import VaeModel, encode_grid
from .voxelizer import GridSpec, occupancy, voxelize

EXIT = {"usage": 2, "config": 3, "input": 4, "format": 5, "numeric": 6, "internal": 1}
REQUIRED = object()


class CliError(Exception):
    def __init__(self, category: str, message: str):
        super().__init__(message)
        self.category = category


# config --------------------------------------------------------------------

def parse_kv_text(text: str, source: str = "<config>") -> dict[str, str]:
    out = {}
    for i, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError("config", f"{source}:{i}: expected key=value")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _coerce(key: str, value, default):
    if default is REQUIRED or default is None or isinstance(default, str):
        return value
    try:
        if isinstance(default, bool):
            if str(value).lower() in ("1", "true", "yes"):
                return True
            if str(value).lower() in ("0", "false", "no"):
                return False
            raise ValueError(value)
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
        if isinstance(default, tuple):
            return tuple(type(default[0])(x) for x in str(value).split(",") if x.strip())
    except ValueError:
        raise CliError("config", f"bad value for {key}: {value!r}") from None
    return value


def resolve(schema: dict, args) -> dict:
    raw = {}
    if args.config:
        p = Path(args.config)
        if not p.exists():
            raise CliError("input", f"missing config file {p}")
        raw.update(parse_kv_text(p.read_text(encoding="utf-8"), str(p)))
    for item in args.set or []:
        raw.update(parse_kv_text(item, "--set"))
    unknown = sorted(set(raw) - set(schema))
    if unknown:
        raise CliError("config", f"unknown keys: {', '.join(unknown)}")
    cfg = {}
    for key, default in schema.items():
        if key in raw:
            cfg[key] = _coerce(key, raw[key], default)
        elif default is REQUIRED:
            raise CliError("config", f"missing config key: {key}")
        else:
            cfg[key] = default
    return cfg


GRID_KEYS = {"D": 16, "H": 16, "W": 16, "k": 4, "sigma": 1.0, "kernel": "gaussian",
             "combine": "max", "neighborhood": "local"}
SEG_GRID = {"D": 8, "H": 8, "W": 8}


def grid_of(cfg: dict) -> GridSpec:
    try:
        return GridSpec(cfg["D"], cfg["H"], cfg["W"], k=cfg["k"], sigma=cfg["sigma"],
                        kernel=cfg["kernel"], combine=cfg["combine"],
                        neighborhood=cfg["neighborhood"])
    except ValueError as e:
        raise CliError("config", str(e)) from None


def _json_cfg(cfg: dict) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in cfg.items()}


# checkpoints ---------------------------------------------------------------

def vae_state(vae: VaeModel) -> dict[str, np.ndarray]:
    out = {f"vae/{k}": v for k, v in vae.state().items()}
    out["meta/obs_var"] = np.array([vae.obs_var], np.float32)
    return out


def vae_from_state(state: dict[str, np.ndarray], prefix: str = "vae/") -> VaeModel:
    try:
        tensors = {k[len(prefix):]: v for k, v in state.items() if k.startswith(prefix)}
        n, hidden = tensors["enc.0.W"].shape
        l = tensors["mu.0.W"].shape[1]
        k = round(n ** (1 / 3))
        params = [Parameter(Tensor(v.copy()), name) for name, v in tensors.items()]
    except KeyError as e:
        raise CliError("format", f"checkpoint lacks VAE tensor {e}") from None
    obs = float(state["meta/obs_var"][0]) if "meta/obs_var" in state else 0.01
    return VaeModel(k, l, hidden, params, obs)


def load_seg_model(path) -> segnet.VvNetModel:
    state = read_checkpoint(path)
    try:
        man = read_manifest(path)
        config = SegNetConfig.from_dict(man["config"]["model"])
    except (FileNotFoundError, KeyError, TypeError) as e:
        raise CliError("format", f"model manifest unusable: {e}") from None
    vae = vae_from_state(state) if any(k.startswith("vae/") for k in state) else None
    model = segnet.init_model(config, vae)
    try:
        model.load_state(state)
    except KeyError as e:
        raise CliError("format", f"checkpoint lacks tensor {e}") from None
    return model


# subcommands ---------------------------------------------------------------

def cmd_synth_dataset(cfg):
    data = ex.synth_dataset(cfg["n_per_kind"], cfg["n_points"], cfg["noise_sd"], cfg["seed"])
    index = ex.save_dataset(data, cfg["output"])
    write_manifest(index, "synth-dataset", _json_cfg(cfg), cfg["seed"])
    print(f"wrote {len(data)} clouds to {cfg['output']}")


def cmd_voxelize(cfg):
    cloud = load_cloud(cfg["input"], has_labels=cfg["labels"])
    grid = grid_of(cfg)
    if cfg["representation"] == "rbf":
        arr = voxelize(cloud, grid, workers=cfg["workers"]).values
    elif cfg["representation"] == "occupancy":
        arr = occupancy(cloud, grid).bits.astype(np.float32)
    else:
        raise CliError("config", f"unknown representation {cfg['representation']!r}")
    write_grid(cfg["output"], arr)
    write_manifest(cfg["output"], "voxelize", _json_cfg(cfg), None, {"input": cfg["input"]})
    print(f"wrote grid {tuple(arr.shape)} to {cfg['output']}")


def cmd_train_vae(cfg):
    data = ex.load_dataset(cfg["dataset"])
    grid = grid_of(cfg)
    blocks = ex.collect_blocks(data.clouds, grid, cfg["representation"])
    rng = np.random.default_rng(cfg["seed"])
    order = rng.permutation(len(blocks))
    n_held = min(len(blocks) // 5, 2000)
    held, train = blocks[order[:n_held]], blocks[order[n_held:n_held + cfg["max_blocks"]]]
    run = ex.fit_vae(train, held if len(held) else train, cfg["epochs"], cfg["lr"],
                     cfg["batch_size"], cfg["seed"], cfg["l"], cfg["hidden"])
    write_checkpoint(cfg["output"], vae_state(run.model))
    write_manifest(cfg["output"], "train-vae", _json_cfg(cfg), cfg["seed"],
                   {"dataset": cfg["dataset"]})
    print(f"blocks\t{len(train)}\nheld_out_mse\t{run.held_out_mse:.6g}\n"
          f"init_mse\t{run.init_mse:.6g}\nratio\t{run.ratio:.6g}")


def cmd_encode(cfg):
    grid = read_grid(cfg["input"])
    if grid.ndim != 6:
        raise CliError("input", f"expected a 6-axis subvoxel grid, got shape {grid.shape}")
    vae = vae_from_state(read_checkpoint(cfg["vae"]))
    latent = encode_grid(grid, vae).values
    write_grid(cfg["output"], latent)
    write_manifest(cfg["output"], "encode", _json_cfg(cfg), None,
                   {"input": cfg["input"], "vae": cfg["vae"]})
    print(f"wrote latent grid {tuple(latent.shape)} to {cfg['output']}")


def _seg_config(cfg) -> SegNetConfig:
    try:
        return SegNetConfig(ex.NUM_PARTS, grid_of(cfg), mode=cfg["mode"], group=cfg["group"],
                            gconv_channels=cfg["gconv_channels"], global_width=cfg["global_width"],
                            global_relu=cfg["global_relu"])
    except ValueError as e:
        raise CliError("config", str(e)) from None


def _load_vae_if_needed(cfg, mode):
    if mode in ("full", "rbf_vae_only"):
        if not cfg["vae"]:
            raise CliError("config", f"missing config key: vae (required by mode {mode})")
        return vae_from_state(read_checkpoint(cfg["vae"]))
    return None


def _train_cfg(cfg) -> TrainConfig:
    try:
        return TrainConfig(cfg["epochs"], cfg["lr"], cfg["batch_size"], cfg["seed"])
    except ValueError as e:
        raise CliError("config", str(e)) from None


def cmd_train_seg(cfg):
    data = ex.load_dataset(cfg["dataset"])
    config = _seg_config(cfg)
    vae = _load_vae_if_needed(cfg, config.mode)
    model = segnet.init_model(config, vae, seed=cfg["seed"])
    prep = segnet.prepare(data.clouds, model, data.kinds)
    hist = segnet.train_segmentation(prep, model, _train_cfg(cfg), ex.CATEGORIES)
    write_checkpoint(cfg["output"], model.state())
    man_cfg = dict(_json_cfg(cfg), model=config.to_dict())
    write_manifest(cfg["output"], "train-seg", man_cfg, cfg["seed"], {"dataset": cfg["dataset"]})
    metrics = cfg["metrics"] or cfg["output"] + ".metrics.tsv"
    atomic_write(metrics, segnet.metrics_log(hist).encode())
    write_manifest(metrics, "train-seg", man_cfg, cfg["seed"], {"dataset": cfg["dataset"]})
    last = hist[-1] if hist else None
    print(f"trained {len(hist)} epochs" + (f"; last {last.line()}" if last else ""))


def cmd_eval(cfg):
    model = load_seg_model(cfg["model"])
    rep = ex.evaluate_on(model, ex.load_dataset(cfg["dataset"]))
    text = rep.to_text()
    if cfg["output"]:
        atomic_write(cfg["output"], text.encode())
        write_manifest(cfg["output"], "eval", _json_cfg(cfg), None,
                       {"model": cfg["model"], "dataset": cfg["dataset"]})
    sys.stdout.write(text)


def cmd_group_selftest(cfg):
    p4, p4m = enumerate_stabilizer("p4"), enumerate_stabilizer("p4m")
    ok = all(check_axioms(p4).values()) and all(check_axioms(p4m).values())
    rng = np.random.default_rng(cfg["seed"])
    x = rng.standard_normal((1, 8, 8, 8, 2))
    bank = FilterBank.random(rng, 3, 2, 2, np.float64)
    y = lift_gconv3d(x, bank, p4m).values
    err = max(float(np.abs(lift_gconv3d(rotate_input(x, g), bank, p4m).values
                           - apply_g_to_output(y, g, p4m)).max()) for g in p4m)
    print(f"|p4|={p4.P}\n|p4m|={p4m.P}\naxioms={'ok' if ok else 'FAILED'}\n"
          f"equivariance_max_abs_error={err:.3g}")
    if not ok or p4.P != 24 or p4m.P != 48 or err > 1e-10:
        raise CliError("numeric", "group self-test failed")


def _report_table(rows: dict[str, "ex.EvalReport"]) -> str:
    lines = ["setting\taccuracy\tinstance_miou"]
    lines += [f"{k}\t{r.overall_accuracy:.6f}\t{r.instance_miou:.6f}" for k, r in rows.items()]
    return "\n".join(lines) + "\n"


def cmd_robustness_sweep(cfg):
    model = load_seg_model(cfg["model"])
    data = ex.load_dataset(cfg["dataset"])
    res = ex.robustness_sweep(model, data, cfg["ratios"], cfg["seed"])
    text = _report_table({f"missing={r:g}": rep for r, rep in res.items()})
    if cfg["output"]:
        atomic_write(cfg["output"], text.encode())
        write_manifest(cfg["output"], "robustness-sweep", _json_cfg(cfg), cfg["seed"],
                       {"model": cfg["model"], "dataset": cfg["dataset"]})
    sys.stdout.write(text)


def cmd_kernel_compare(cfg):
    data = ex.load_dataset(cfg["dataset"])
    train, test = ex.split(data, cfg["test_fraction"])
    config = _seg_config(cfg)
    if config.mode not in ("full", "rbf_vae_only"):
        raise CliError("config", "kernel-compare needs a mode that uses the RBF grid")
    runs = ex.kernel_compare(train, test, config, _train_cfg(cfg), cfg["vae_epochs"],
                             cfg["max_blocks"], cfg["seed"])
    text = _report_table({k: r.test for k, r in runs.items()})
    if cfg["output"]:
        atomic_write(cfg["output"], text.encode())
        write_manifest(cfg["output"], "kernel-compare", _json_cfg(cfg), cfg["seed"],
                       {"dataset": cfg["dataset"]})
    sys.stdout.write(text)


SEG_KEYS = {**GRID_KEYS, **SEG_GRID, "mode": "full", "group": "p4m", "gconv_channels": (4, 4),
            "global_width": 256, "global_relu": False, "epochs": 20, "lr": 1e-3, "batch_size": 8,
            "seed": 0}

COMMANDS = {
    "synth-dataset": (cmd_synth_dataset, "write a labelled synthetic dataset directory",
                      {"output": REQUIRED, "n_per_kind": 50, "n_points": 512, "noise_sd": 0.005,
                       "seed": 0}),
    "voxelize": (cmd_voxelize, "cloud text file -> subvoxel RBF grid file",
                 {"input": REQUIRED, "output": REQUIRED, "labels": False,
                  "representation": "rbf", "workers": 1, **GRID_KEYS}),
    "train-vae": (cmd_train_vae, "train the block VAE on a dataset directory",
                  {"dataset": REQUIRED, "output": REQUIRED, "representation": "rbf",
                   "max_blocks": 10000, "epochs": 10, "lr": 1e-3, "batch_size": 64, "seed": 0,
                   "l": 8, "hidden": 128, **GRID_KEYS, **SEG_GRID}),
    "encode": (cmd_encode, "subvoxel grid file -> latent grid file",
               {"input": REQUIRED, "vae": REQUIRED, "output": REQUIRED}),
    "train-seg": (cmd_train_seg, "train the segmentation network",
                  {"dataset": REQUIRED, "output": REQUIRED, "vae": "", "metrics": "",
                   **SEG_KEYS}),
    "eval": (cmd_eval, "evaluate a trained network on a dataset directory",
             {"dataset": REQUIRED, "model": REQUIRED, "output": ""}),
    "group-selftest": (cmd_group_selftest, "check the symmetry groups and equivariance",
                       {"seed": 0}),
    "robustness-sweep": (cmd_robustness_sweep, "evaluate with points removed by FPS",
                         {"dataset": REQUIRED, "model": REQUIRED, "output": "",
                          "ratios": (0.0, 0.75, 0.875), "seed": 0}),
    "kernel-compare": (cmd_kernel_compare, "twin runs differing only in the RBF kernel",
                       {"dataset": REQUIRED, "output": "", "test_fraction": 0.2,
                        "vae_epochs": 10, "max_blocks": 10000, **SEG_KEYS}),
}


def _describe(schema: dict) -> str:
    rows = []
    for k, v in schema.items():
        d = "(required)" if v is REQUIRED else f"default {','.join(map(str, v)) if isinstance(v, tuple) else v!r}"
        rows.append(f"  {k:<16}{d}")
    return "config keys:\n" + "\n".join(rows)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("usage", message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vvnet", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="command")
    for name, (_, helptext, schema) in COMMANDS.items():
        p = sub.add_parser(name, help=helptext, description=helptext, epilog=_describe(schema),
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override one config key (repeatable)")
    h = sub.add_parser("help", help="show help for a command")
    h.add_argument("topic", nargs="?")
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command in (None, "help"):
        topic = getattr(args, "topic", None)
        if topic is None:
            parser.print_help()
        elif topic in COMMANDS:
            parser.parse_args([topic, "--help"])
        else:
            raise CliError("usage", f"unknown command {topic!r}")
        return 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s", stream=sys.stderr)
    fn, _, schema = COMMANDS[args.command]
    fn(resolve(schema, args))
    return 0


def main(argv=None) -> int:
    try:
        code = run(argv)
    except SystemExit as e:
        code = e.code if isinstance(e.code, int) else 0
    except CliError as e:
        print(f"error:{e.category}: {e}", file=sys.stderr)
        code = EXIT[e.category]
    except FormatError as e:
        print(f"error:format: {e}", file=sys.stderr)
        code = EXIT["format"]
    except (FileNotFoundError, CloudFormatError) as e:
        print(f"error:input: {e}", file=sys.stderr)
        code = EXIT["input"]
    except NonFiniteError as e:
        print(f"error:numeric: {e}", file=sys.stderr)
        code = EXIT["numeric"]
    except ValueError as e:
        print(f"error:input: {e}", file=sys.stderr)
        code = EXIT["input"]
    return code


if __name__ == "__main__":
    sys.exit(main())
