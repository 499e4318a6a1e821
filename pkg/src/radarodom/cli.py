"""Command-line front door: ``radarodom <command> [--config FILE] [--key value ...]``.

Settings come from three layers, later ones winning:

1. built-in defaults of the command,
2. the config file (``key = value`` lines; ``[common]`` applies to every
   command, ``[<command>]`` to that command only),
3. command-line flags (``--frame-rate 10`` sets ``frame_rate``).

Every command that writes a directory leaves a ``meta.txt`` in it with the
full effective configuration. Exit codes: 0 success, 1 usage error, 2 data
error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import evaluation as ev
from . import simulator as sim
from ._rng import stream
from .geometry import PoseSE3
from .registration import METHODS, DegenerateConfiguration, IcpParams, RansacParams, egomotion
from .sensing import PanoramaSpec, encode_panoramic, write_panorama

log = logging.getLogger("radarodom")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
DEFAULT_WAYPOINTS = "-1.5 -1 1.2 0; 2.5 -1 1.2 0"


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class NumericalError(Exception):
    pass


# -- configuration ---------------------------------------------------------------------

COMMANDS: dict[str, dict] = {
    "simulate": dict(out="", seed=0, world="", waypoints=DEFAULT_WAYPOINTS, frame_rate=20.0, speed=1.0,
                     angular_speed_deg=45.0, keep_probability=0.15, ghost_probability=0.1, range_sigma=0.04,
                     max_points=120, dense_az=64, dense_el=16, imu_rate=100.0),
    "encode": dict(seq="", out="", source="cloud", rows=32, cols=128, h_fov_deg=120.0, v_fov_deg=60.0,
                   max_range=10.0),
    "register": dict(seq="", out="", method="icp", source="cloud", seed=0, max_iters=50, tol=1e-8,
                     reject_dist=0.5, hypotheses=200, inlier_threshold=0.1, subsample=1),
    "train": dict(seq="", out="", profile="toy", seed=0, epochs=100, lr=0.0, subsequence_length=16,
                  subsample=1, fusion="mixed", use_dense=False, resume=""),
    "infer": dict(checkpoint="", seq="", out="", subsample=1, profile=""),
    "eval": dict(est="", ref="", out="", align="none"),
    "gradcheck": dict(seed=0, corrupt=0.0, out=""),
    "compare": dict(out="", seeds="0,1,2", methods="icp,ransac-icp,imu-icp", checkpoint="", world="",
                    waypoints=DEFAULT_WAYPOINTS, frame_rate=20.0, source="cloud", subsample=1),
}


def _coerce(default, raw):
    if isinstance(raw, type(default)) and not isinstance(raw, str):
        return raw
    raw = str(raw).strip()
    if isinstance(default, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise UsageError(f"expected a boolean, got {raw!r}")
    try:
        return type(default)(raw)
    except ValueError:
        raise UsageError(f"expected {type(default).__name__}, got {raw!r}") from None


def read_config(path, command: str) -> dict:
    """``[common]`` then ``[command]`` entries of a key-value config file."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    try:
        if not cp.read(path):
            raise UsageError(f"config file not found: {path}")
    except configparser.Error as exc:
        raise UsageError(f"cannot parse config {path}: {exc}") from None
    out = {}
    for section in ("common", command):
        if cp.has_section(section):
            out.update(cp.items(section))
    return out


def resolve(command: str, file_values: dict, flag_values: dict) -> dict:
    defaults = COMMANDS[command]
    cfg = dict(defaults)
    for layer in (file_values, flag_values):
        for k, v in layer.items():
            if v is None:
                continue
            if k not in defaults:
                if layer is file_values:
                    continue  # [common] may carry keys for other commands
                raise UsageError(f"unknown setting {k!r} for {command}")
            try:
                cfg[k] = _coerce(defaults[k], v)
            except UsageError as exc:
                raise UsageError(f"{k}: {exc}") from None
    return cfg


def config_lines(command: str, cfg: dict) -> list[str]:
    return [f"command = {command}"] + [f"config.{k} = {cfg[k]}" for k in sorted(cfg)]


def write_meta(out_dir, command: str, cfg: dict, extra: dict | None = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = config_lines(command, cfg) + [f"{k} = {v}" for k, v in (extra or {}).items()]
    path = out / "meta.txt"
    path.write_text("\n".join(lines) + "\n")
    return path


def _require(cfg: dict, *keys):
    for k in keys:
        if cfg[k] in ("", None):
            raise UsageError(f"missing required setting {k!r} (use --{k.replace('_', '-')} or the config file)")


def _existing(path: str, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise DataError(f"{what} not found: {p}")
    return p


def content_hash(paths) -> str:
    """Git-style (blob-header SHA-1) digest over every file under ``paths``, in sorted order."""
    h = hashlib.sha1()
    for root in paths:
        root = Path(root)
        files = sorted(p for p in root.rglob("*") if p.is_file()) if root.is_dir() else [root]
        for f in files:
            data = f.read_bytes()
            blob = hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()
            h.update(f"{f.relative_to(root) if root.is_dir() else f.name} {blob}\n".encode())
    return h.hexdigest()


def _seq_dirs(spec: str) -> list[Path]:
    dirs = [s.strip() for s in spec.split(",") if s.strip()]
    if not dirs:
        raise UsageError("no sequence directory given")
    return [_existing(d, "sequence directory") for d in dirs]


def parse_waypoints(text: str):
    rows = []
    for chunk in text.split(";"):
        if not chunk.strip():
            continue
        vals = chunk.split()
        if len(vals) != 4:
            raise UsageError(f"waypoint needs 'x y z yaw_deg', got {chunk.strip()!r}")
        x, y, z, yaw = (float(v) for v in vals)
        rows.append((x, y, z, math.radians(yaw)))
    return sim.waypoints_from_xyzyaw(rows)


# -- commands ----------------------------------------------------------------------------

def _simulate(cfg: dict, out) -> sim.SimulatedSequence:
    world = sim.load_world(_existing(cfg["world"], "world file")) if cfg["world"] else sim.default_world()
    spec = sim.TrajectorySpec(parse_waypoints(cfg["waypoints"]), cfg["frame_rate"], cfg["speed"],
                              math.radians(cfg["angular_speed_deg"]))
    noise = sim.RadarNoiseModel(keep_probability=cfg["keep_probability"],
                                ghost_probability=cfg["ghost_probability"],
                                range_sigma=cfg["range_sigma"], max_points=cfg["max_points"])
    rig = sim.SensorRig(dense_az=cfg["dense_az"], dense_el=cfg["dense_el"], imu_rate=cfg["imu_rate"])
    seq = sim.generate_sequence(world, spec, noise, cfg["seed"], rig)
    sim.save_sequence(seq, out, config_lines("simulate", cfg))
    return seq


def cmd_simulate(cfg: dict) -> int:
    _require(cfg, "out")
    seq = _simulate(cfg, cfg["out"])
    print(f"simulated {len(seq.frames)} frames -> {cfg['out']}")
    return EXIT_OK


def cmd_encode(cfg: dict) -> int:
    _require(cfg, "seq", "out")
    if cfg["source"] not in ("cloud", "dense"):
        raise UsageError("source must be 'cloud' or 'dense'")
    seq = sim.load_sequence(_existing(cfg["seq"], "sequence directory"))
    spec = PanoramaSpec.from_fov(math.radians(cfg["h_fov_deg"]), math.radians(cfg["v_fov_deg"]),
                                 cfg["rows"], cfg["cols"], cfg["max_range"])
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    for k, f in enumerate(seq.frames):
        cloud = f.cloud if cfg["source"] == "cloud" else f.dense
        if cloud is None:
            raise DataError(f"frame {k} has no {cfg['source']} scan")
        write_panorama(out / f"{k:05d}.pano", encode_panoramic(cloud, spec))
    write_meta(out, "encode", cfg)
    print(f"encoded {len(seq.frames)} panoramas -> {out}")
    return EXIT_OK


def register_sequence(seq: sim.SimulatedSequence, method: str, source: str = "cloud", seed: int = 0,
                      icp_params: IcpParams = IcpParams(), ransac_params: RansacParams = RansacParams(),
                      subsample: int = 1):
    """Per-pair egomotion composed into a trajectory; returns ``(trajectory, diagnostics rows)``.

    Pairs whose registration starves fall back to the identity motion and are
    flagged in the diagnostics.
    """
    if method not in METHODS:
        raise UsageError(f"unknown method {method!r}; expected one of {', '.join(METHODS)}")
    keep = list(range(0, len(seq.frames), subsample))
    frames = [seq.frames[k] for k in keep]
    rels, rows = [], []
    for k, (a, b) in enumerate(zip(frames, frames[1:])):
        ca, cb = (a.cloud, b.cloud) if source == "cloud" else (a.dense, b.dense)
        window = [s for j in range(keep[k] + 1, keep[k + 1] + 1) for s in seq.frames[j].imu_window]
        fallback, msg = False, ""
        try:
            if ca is None or cb is None or len(ca.points) == 0 or len(cb.points) == 0:
                raise ValueError("empty cloud")
            res = egomotion(ca, cb, method, window, seed=stream(seed, "ransac", k), icp_params=icp_params,
                            ransac_params=ransac_params, t_start=a.cloud.timestamp)
            msg = res.message
            fallback = "starvation" in msg or "degenerate" in msg
        except (ValueError, DegenerateConfiguration) as exc:
            res, fallback, msg = None, True, str(exc)
        if fallback or res is None:
            rels.append(PoseSE3.identity())
            rows.append([k, "nan", res.iterations if res else 0, False, res.inlier_count if res else 0, True, msg])
        else:
            rels.append(res.transform)
            rows.append([k, repr(res.objective), res.iterations, res.converged, res.inlier_count, False, msg])
    traj = ev.compose_trajectory(frames[0].ground_truth, rels, [f.cloud.timestamp for f in frames])
    return traj, rows


DIAG_HEADER = ["pair", "objective", "iterations", "converged", "inliers", "fallback", "message"]


def cmd_register(cfg: dict) -> int:
    _require(cfg, "seq", "out")
    if cfg["subsample"] < 1:
        raise UsageError("subsample must be >= 1")
    seq = sim.load_sequence(_existing(cfg["seq"], "sequence directory"))
    traj, rows = register_sequence(
        seq, cfg["method"], cfg["source"], cfg["seed"],
        IcpParams(cfg["max_iters"], cfg["tol"], cfg["reject_dist"]),
        RansacParams(cfg["hypotheses"], cfg["inlier_threshold"]), cfg["subsample"])
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    ev.write_trajectory(out / "trajectory.txt", traj)
    with open(out / "diagnostics.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(DIAG_HEADER)
        w.writerows(rows)
    n_fb = sum(1 for r in rows if r[5])
    write_meta(out, "register", cfg, {"pairs": len(rows), "fallbacks": n_fb})
    print(f"registered {len(rows)} pairs with {cfg['method']} ({n_fb} identity fallbacks) -> {out}")
    return EXIT_OK


def cmd_train(cfg: dict) -> int:
    from .neural.checkpoint import load_checkpoint, save_checkpoint
    from .neural.model import NetworkConfig, build_network
    from .neural.training import TrainConfig, train

    _require(cfg, "seq", "out")
    if cfg["profile"] not in ("toy", "paper"):
        raise UsageError("profile must be 'toy' or 'paper'")
    dirs = _seq_dirs(cfg["seq"])
    seqs = [sim.load_sequence(d) for d in dirs]
    base = TrainConfig.toy if cfg["profile"] == "toy" else TrainConfig.paper
    tkw = dict(epochs=cfg["epochs"], subsequence_length=cfg["subsequence_length"],
               subsample=cfg["subsample"], seed=cfg["seed"])
    if cfg["lr"] > 0:
        tkw["lr"] = cfg["lr"]
    try:
        tc = base(**tkw)
    except ValueError as exc:
        raise UsageError(str(exc)) from None

    start, opt = 0, {}
    if cfg["resume"]:
        ck = load_checkpoint(_existing(cfg["resume"], "checkpoint"))
        if ck.model.config.profile != cfg["profile"]:
            raise DataError(f"checkpoint profile {ck.model.config.profile!r} != requested {cfg['profile']!r}")
        model, opt, start = ck.model, ck.opt_state, ck.epoch
    else:
        net_cfg = NetworkConfig.profile_named(cfg["profile"], fusion=cfg["fusion"], use_dense=cfg["use_dense"])
        model = build_network(net_cfg, cfg["seed"])

    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "model.ckpt"
    loss_path = out / "loss.csv"
    history = []
    if start and loss_path.exists() and Path(cfg["resume"]).resolve().parent == out.resolve():
        with open(loss_path) as fh:
            history = [(int(r["epoch"]), float(r["mean_loss"]), float(r["lr"])) for r in csv.DictReader(fh)]
        history = [h for h in history if h[0] < start]

    def on_epoch(epoch, row, state):
        if not math.isfinite(row[1]):
            raise NumericalError(f"non-finite loss at epoch {epoch}")
        log.info("epoch %d loss %.6g lr %.3g", *row)

    try:
        history += train(model, seqs, tc, opt, start, on_epoch)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    epoch = start + tc.epochs
    save_checkpoint(ckpt, model, opt, epoch, tc.to_dict(), {"profile": cfg["profile"]})
    with open(loss_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "mean_loss", "lr"])
        w.writerows([e, repr(l), repr(r)] for e, l, r in history)
    write_meta(out, "train", cfg, {"input_hash": content_hash(dirs), "params": model.param_count(),
                                   "epochs_done": epoch})
    final = f"{history[-1][1]:.6g}" if history else "n/a"
    print(f"trained {cfg['profile']} network to epoch {epoch} (final loss {final}) -> {ckpt}")
    return EXIT_OK


def infer_trajectory(model, seq: sim.SimulatedSequence, subsample: int = 1) -> ev.Trajectory:
    from .neural.training import infer_sequence

    rels = infer_sequence(model, seq, subsample)
    keep = list(range(0, len(seq.frames), subsample))
    return ev.compose_trajectory(seq.frames[0].ground_truth, rels, [seq.frames[k].cloud.timestamp for k in keep])


def cmd_infer(cfg: dict) -> int:
    from .neural.checkpoint import load_checkpoint

    _require(cfg, "checkpoint", "seq", "out")
    if cfg["subsample"] < 1:
        raise UsageError("subsample must be >= 1")
    ck = load_checkpoint(_existing(cfg["checkpoint"], "checkpoint"))
    if cfg["profile"] and cfg["profile"] != ck.model.config.profile:
        raise DataError(f"config profile {cfg['profile']!r} does not match checkpoint profile "
                        f"{ck.model.config.profile!r}")
    seq = sim.load_sequence(_existing(cfg["seq"], "sequence directory"))
    traj = infer_trajectory(ck.model, seq, cfg["subsample"])
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    ev.write_trajectory(out / "trajectory.txt", traj)
    write_meta(out, "infer", cfg, {"entries": len(traj.entries)})
    print(f"inferred {len(traj.entries)} poses -> {out / 'trajectory.txt'}")
    return EXIT_OK


def evaluate(est: ev.Trajectory, ref: ev.Trajectory, align: str = "none") -> dict:
    return {dim: ev.ate(est, ref, dim, align) for dim in ("2D", "3D")}


def cmd_eval(cfg: dict) -> int:
    _require(cfg, "est", "ref")
    est = ev.read_trajectory(_existing(cfg["est"], "estimate"))
    ref = ev.read_trajectory(_existing(cfg["ref"], "reference"))
    reports = evaluate(est, ref, cfg["align"])
    for dim, r in reports.items():
        print(f"ATE {dim}: mean {r.mean:.6f} std {r.std:.6f} max {r.max:.6f} m")
    print(f"drift {reports['3D'].drift_percent:.4f} %")
    if cfg["out"]:
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        ev.write_cdf_csv(out / "cdf.csv", reports["3D"])
        ev.write_errors_csv(out / "errors.csv", reports["3D"])
        ev.write_summary_csv(out / "summary.csv", list(reports.values()))
        write_meta(out, "eval", cfg)
    return EXIT_OK


def cmd_gradcheck(cfg: dict) -> int:
    from .neural.gradcheck import suite

    reports = suite(cfg["seed"], cfg["corrupt"])
    for r in reports:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status} {r.name:<22s} max rel error {r.max_rel_error:.3e} (tol {r.tolerance:.0e})")
    worst = max(r.max_rel_error for r in reports)
    print(f"max relative error {worst:.3e}")
    if cfg["out"]:
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "gradcheck.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["op", "max_rel_error", "tolerance", "passed"])
            w.writerows([r.name, repr(r.max_rel_error), r.tolerance, r.passed] for r in reports)
        write_meta(out, "gradcheck", cfg)
    return EXIT_OK if all(r.passed for r in reports) else EXIT_NUMERIC


COMPARE_HEADER = ["seed", "method", "ate3d_mean", "ate3d_std", "ate3d_max", "ate2d_mean", "drift_percent"]


def cmd_compare(cfg: dict) -> int:
    _require(cfg, "out")
    try:
        seeds = [int(s) for s in cfg["seeds"].split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"seeds must be a comma-separated integer list, got {cfg['seeds']!r}") from None
    methods = [m.strip() for m in cfg["methods"].split(",") if m.strip()]
    for m in methods:
        if m not in METHODS:
            raise UsageError(f"unknown method {m!r}")
    model = None
    if cfg["checkpoint"]:
        from .neural.checkpoint import load_checkpoint
        model = load_checkpoint(_existing(cfg["checkpoint"], "checkpoint")).model
    out = Path(cfg["out"])
    table = []
    sim_cfg = dict(COMMANDS["simulate"], world=cfg["world"], waypoints=cfg["waypoints"],
                   frame_rate=cfg["frame_rate"])
    for seed in seeds:
        seq = _simulate(dict(sim_cfg, seed=seed), out / f"seed_{seed}" / "seq")
        ref = ev.Trajectory(list(zip(seq.timestamps.tolist(), seq.poses)))
        runs = [(m, register_sequence(seq, m, cfg["source"], seed, subsample=cfg["subsample"])[0])
                for m in methods]
        if model is not None:
            runs.append(("network", infer_trajectory(model, seq, cfg["subsample"])))
        for name, traj in runs:
            ev.write_trajectory(out / f"seed_{seed}" / f"{name}.txt", traj)
            rep = evaluate(traj, ref)
            table.append([seed, name, repr(rep["3D"].mean), repr(rep["3D"].std), repr(rep["3D"].max),
                          repr(rep["2D"].mean), repr(rep["3D"].drift_percent)])
            print(f"seed {seed} {name:<11s} ATE3D mean {rep['3D'].mean:.4f} m")
    with open(out / "comparison.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(COMPARE_HEADER)
        w.writerows(table)
    write_meta(out, "compare", cfg)
    return EXIT_OK


HANDLERS = {"simulate": cmd_simulate, "encode": cmd_encode, "register": cmd_register, "train": cmd_train,
            "infer": cmd_infer, "eval": cmd_eval, "gradcheck": cmd_gradcheck, "compare": cmd_compare}


# -- entry point --------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="radarodom", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, defaults in COMMANDS.items():
        p = sub.add_parser(name)
        p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
        p.add_argument("--config", help="key = value config file ([common] and [%s] sections)" % name)
        for key, default in defaults.items():
            p.add_argument(f"--{key.replace('_', '-')}", dest=key, default=None,
                           help=f"default: {default!r}")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    flags = {k: v for k, v in vars(args).items() if k in COMMANDS[args.command]}
    try:
        file_values = read_config(args.config, args.command) if args.config else {}
        cfg = resolve(args.command, file_values, flags)
        return HANDLERS[args.command](cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, FileNotFoundError, ValueError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
