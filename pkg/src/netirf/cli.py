"""Command-line entry point.

Every subcommand writes its outputs plus ``manifest.json`` (tool version,
arguments, seed, config hash and output hashes) into ``--out``.
Exit codes: 0 success, 2 configuration error, 3 numerical failure, 4 I/O error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import sys
import warnings
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .core import (
    FitnessSeries,
    FitnessState,
    MeanFieldParams,
    NumericalError,
    ShockSpec,
    StationarityError,
    TemporalNetwork,
    ValidationError,
    VarParams,
    fitness_to_text,
    network_to_text,
    read_network,
    stationary_mean,
)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _schema() -> dict:
    return json.loads(resources.files("netirf").joinpath("data/config.schema.json").read_text())


def _pointer(path) -> str:
    return "/" + "/".join(str(p) for p in path) if path else ""


def validate_config(cfg: dict) -> list[str]:
    """Schema violations as ``pointer: message`` strings; a missing key points at the key itself."""
    import jsonschema

    validator = jsonschema.Draft202012Validator(_schema())
    out = []
    for err in sorted(validator.iter_errors(cfg), key=lambda e: (list(e.absolute_path), e.message)):
        path = list(err.absolute_path)
        if err.validator == "required" and isinstance(err.instance, dict):
            for key in err.validator_value:
                if key not in err.instance:
                    out.append(f"{_pointer(path + [key])}: missing required key")
            continue
        out.append(f"{_pointer(path) or '/'}: {err.message}")
    return sorted(set(out))


def load_config(path) -> tuple[dict, bytes]:
    raw = Path(path).read_bytes()
    try:
        cfg = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    errors = validate_config(cfg)
    if errors:
        raise ConfigError("config does not match schema:\n  " + "\n  ".join(errors))
    return cfg, raw


def _model_section(cfg: dict) -> dict:
    if "model" not in cfg:
        raise ConfigError("config does not match schema:\n  /model: missing required key")
    return cfg["model"]


def model_from_config(model: dict):
    if model["type"] == "meanfield":
        return MeanFieldParams(model["a"], model["b"], model["mu"], model["sigma2"], model["n"], model.get("p", 1.0))
    return VarParams(np.asarray(model["mu"], float), np.asarray(model["B"], float), np.asarray(model["Sigma"], float))


def _as_var(model) -> VarParams:
    return model.to_var() if isinstance(model, MeanFieldParams) else model


def _start_state(model, spec, d: int) -> np.ndarray:
    var = _as_var(model)
    if spec is None or spec == "stationary":
        if not var.stationary:
            raise StationarityError("stationary starting point requested for a non-stationary model")
        return stationary_mean(var)
    v = np.broadcast_to(np.asarray(spec, dtype=float), (d,)).copy()
    return v


def _csv_text(rows: list[dict], fields: list[str]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for k, v in r.items()})
    return buf.getvalue()


class Outputs:
    """Collects output files and writes them together with the manifest."""

    def __init__(self, out_dir):
        self.dir = Path(out_dir)
        self.files: dict[str, bytes] = {}

    def add(self, name: str, text: str) -> None:
        self.files[name] = text.encode()

    def write(self, command: str, args: dict, seed, config_raw: bytes | None) -> Path:
        self.dir.mkdir(parents=True, exist_ok=True)
        hashes = {}
        for name, data in sorted(self.files.items()):
            (self.dir / name).write_bytes(data)
            hashes[name] = hashlib.sha256(data).hexdigest()
        canon = config_raw if config_raw is not None else json.dumps(args, sort_keys=True).encode()
        manifest = {
            "tool": "netirf",
            "version": __version__,
            "command": command,
            "args": args,
            "seed": seed,
            "config_sha256": hashlib.sha256(canon).hexdigest(),
            "outputs": hashes,
        }
        (self.dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        return self.dir / "manifest.json"


def _recorded_args(ns: argparse.Namespace) -> dict:
    skip = {"func", "out"}
    out = {}
    for k, v in vars(ns).items():
        if k in skip or k.startswith("_"):
            continue
        if isinstance(v, Path):
            v = str(v.resolve())
        out[k] = v
    return out


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_simulate(ns) -> Outputs:
    from .sampling import sample_network
    from .var_dynamics import simulate_var

    cfg, raw = load_config(ns.config)
    section = _model_section(cfg)
    model = model_from_config(section)
    var = _as_var(model)
    directed = bool(section.get("directed", False))
    sim = cfg.get("simulation", {})
    T = int(sim.get("T", 100))
    if directed and var.d % 2:
        raise ConfigError("/model: directed models need an even number of coordinates")
    theta0 = _start_state(model, sim.get("theta0", "stationary"), var.d)
    s_dyn, s_net = np.random.SeedSequence(ns.seed).spawn(2)
    series = simulate_var(var, theta0, T, seed=s_dyn, directed=directed)
    seeds = s_net.spawn(T)
    snaps = tuple(sample_network(series[t], directed, seed=seeds[t], timestamp=t + 1) for t in range(T))
    net = TemporalNetwork(snaps)
    out = Outputs(ns.out)
    out.add("fitness.csv", fitness_to_text(series))
    body, header = network_to_text(net)
    out.add("network.csv", body)
    out.add("network.json", header)
    ns._raw = raw
    return out


def _load_irf_inputs(ns):
    """Model, start state, shock vector and settings from a config or a fitted-parameter file."""
    if ns.params:
        fitted = json.loads(Path(ns.params).read_text())
        var = VarParams(np.array(fitted["latent"]["mu"]), np.array(fitted["latent"]["B"]), np.array(fitted["latent"]["Sigma"]))
        directed = bool(fitted["directed"])
        n = int(fitted["n"])
        theta = np.array(fitted["theta_last"], dtype=float)
        node = fitted["max_out_degree_node"] if ns.node in (None, "max-out-degree") else int(ns.node)
        coord = ns.coordinate or ("out" if directed else "undirected")
        cfg = {"shock": {}, "mc": {}}
        return None, var, theta, directed, n, node, coord, cfg, Path(ns.params).read_bytes()
    cfg, raw = load_config(ns.config)
    section = _model_section(cfg)
    model = model_from_config(section)
    var = _as_var(model)
    directed = bool(section.get("directed", False))
    n = var.d // 2 if directed else var.d
    shock = cfg.get("shock", {})
    theta = _start_state(model, shock.get("theta0", "stationary"), var.d)
    node = int(ns.node) if ns.node not in (None, "max-out-degree") else int(shock.get("node", 0))
    coord = ns.coordinate or shock.get("coordinate", "out" if directed else "undirected")
    return model, var, theta, directed, n, node, coord, cfg, raw


def cmd_irf(ns) -> Outputs:
    from .irf import irf_density_meanfield_series, irf_metric_mc, irf_paths_mc

    model, var, theta, directed, n, node, coord, cfg, raw = _load_irf_inputs(ns)
    shock_cfg, mc = cfg.get("shock", {}), cfg.get("mc", {})
    delta = ns.delta if ns.delta is not None else shock_cfg.get("delta", -10.0)
    horizon = ns.horizon or shock_cfg.get("horizon", 20)
    if not 0 <= node < n:
        raise ConfigError(f"/shock/node: node {node} outside 0..{n - 1}")
    out = Outputs(ns.out)
    if ns.mode == "analytic":
        if not isinstance(model, MeanFieldParams):
            raise ConfigError("/model/type: analytic mode requires a mean-field model")
        th0 = model.theta_stationary if shock_cfg.get("theta0", "stationary") == "stationary" else float(shock_cfg["theta0"])
        series = irf_density_meanfield_series(model, th0, delta, horizon, shock_cfg.get("exact_integral", False))
        out.add("irf.csv", _csv_text(series.rows(), ["t", "irf"]))
    else:
        coord_idx = node + (var.d // 2 if directed and coord == "out" else 0)
        shock = ShockSpec.single(var.d, coord_idx, delta)
        state = FitnessState(theta, directed)
        metric = mc.get("metric", "density")
        rb = mc.get("rao_blackwell", True)
        if ns.mode == "mc":
            series = irf_metric_mc(var, state, shock, metric, horizon, ns.samples or mc.get("n_samples", 10_000), ns.seed, rb)
            out.add("irf.csv", _csv_text(series.rows(), ["t", "irf", "stderr"]))
        else:
            series, paths = irf_paths_mc(
                var, state, shock, metric, horizon, ns.paths or mc.get("n_paths", 500), ns.seed, rb, ns.threads
            )
            out.add("irf.csv", _csv_text(series.rows(), ["t", "irf", "stderr", "p10", "p90"]))
    ns._raw = raw
    return out


def cmd_sweep(ns) -> Outputs:
    from .irf import STUDIES, comparative_statics, sigma2_threshold_rows

    if ns.study not in STUDIES:
        raise ConfigError(f"unknown study {ns.study!r}; choose from {', '.join(STUDIES)}")
    out = Outputs(ns.out)
    fields = ["study", "mu", "param", "value", "t", "irf", "status"]
    if ns.study == "sigma2_thresholds":
        rows, thr = sigma2_threshold_rows(exact_integral=ns.exact)
        out.add("thresholds.json", json.dumps(thr, indent=2, sort_keys=True) + "\n")
    else:
        rows = comparative_statics(ns.study, horizon=ns.horizon, exact_integral=ns.exact)
    out.add(f"{ns.study}.csv", _csv_text(rows, fields))
    ns._raw = None
    return out


def _max_out_degree_node(net: TemporalNetwork) -> int:
    """Node with the largest out-degree in the last snapshot (the shock time); ties go to cumulative out-degree."""
    M = net.stacked().astype(np.int64)
    last, total = M[-1].sum(axis=1), M.sum(axis=(0, 2))
    return int(np.lexsort((-total, -last))[0])


def cmd_estimate(ns) -> Outputs:
    from .estimation.fit import kfssi_fit, nssi_fit
    from .estimation.mle import mle_series

    net = read_network(ns.network)
    est, mask, fits = mle_series(net)
    params = {"directed": net.directed, "n": net.n, "node_labels": list(net.node_labels), "method": ns.method, "mode": ns.mode}
    if ns.method == "nssi":
        fitted = nssi_fit(est, ns.mode)
        var = _as_var(fitted)
        filtered = est
        params.update({"gamma": [0.0] * var.d, "obs_noise_var": None})
    else:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            res = kfssi_fit(FitnessSeries(np.where(mask, np.nan, est.values), est.directed, est.times), ns.mode, seed=ns.seed)
        for w in caught:
            print(f"warning: {w.message}", file=sys.stderr)
        fitted = res.params.latent
        var = res.params.var
        filtered = res.filtered
        params.update({
            "gamma": res.params.gamma.tolist(),
            "obs_noise_var": res.params.obs_noise_cov.tolist(),
            "loglik": res.loglik,
            "at_boundary": res.at_boundary,
        })
    if isinstance(fitted, MeanFieldParams):
        params["meanfield"] = {"a": fitted.a, "b": fitted.b, "mu": fitted.mu, "sigma2": fitted.sigma2}
    params["latent"] = {"mu": var.mu.tolist(), "B": var.B.tolist(), "Sigma": var.Sigma.tolist()}
    params["spectral_radius"] = var.spectral_radius
    params["theta_last"] = filtered.values[-1].tolist()
    params["max_out_degree_node"] = _max_out_degree_node(net)
    params["clipped_entries"] = int(mask.sum())
    params["converged_snapshots"] = int(sum(f.converged for f in fits))
    out = Outputs(ns.out)
    out.add("params.json", json.dumps(params, indent=2, sort_keys=True) + "\n")
    out.add("filtered.csv", fitness_to_text(filtered))
    ns._raw = None
    return out


def cmd_benchmark(ns) -> Outputs:
    from .estimation.benchmark import BenchmarkConfig, run_benchmark

    raw = None
    bench = {}
    if ns.config:
        cfg, raw = load_config(ns.config)
        bench = cfg.get("benchmark", {})
    if ns.n_sim is not None:
        bench = {**bench, "n_sim": ns.n_sim}
    report = run_benchmark(BenchmarkConfig.from_dict(bench), seed=ns.seed, threads=ns.threads)
    for f in report.failures:
        print(f"replicate {f['replicate']} failed: {f['error']}", file=sys.stderr)
    out = Outputs(ns.out)
    out.add("benchmark.csv", report.to_csv())
    out.add("benchmark.json", report.to_json())
    ns._raw = raw
    return out


def cmd_grid(ns) -> Outputs:
    from .gaussian_logistic import density_grid

    ms = np.linspace(ns.m_min, ns.m_max, ns.m_num)
    rows = density_grid(ms, ns.s2, ns.r)
    out = Outputs(ns.out)
    out.add("grid.csv", _csv_text(rows, ["m", "s2", "r", "exact", "approx2", "taylor"]))
    ns._raw = None
    return out


def cmd_ingest(ns) -> Outputs:
    from .ingest import aggregate_weekly, filter_nodes, read_transactions_csv

    rows = read_transactions_csv(ns.transactions)
    res = aggregate_weekly(rows)
    out = Outputs(ns.out)
    rej = [{"line": r.line + 1, "reason": r.reason, "row": "|".join(map(str, r.row)) if isinstance(r.row, (list, tuple)) else str(r.row)} for r in res.rejects]
    out.add("rejects.csv", _csv_text(rej, ["line", "reason", "row"]))
    if res.network is None:
        raise ValidationError("no valid transactions")
    net = res.network
    if ns.threshold is not None:
        net = filter_nodes(net, ns.threshold, not ns.keep_isolated)
    body, header = network_to_text(net)
    out.add("network.csv", body)
    out.add("network.json", header)
    if res.rejects:
        print(f"{len(res.rejects)} rows rejected (see rejects.csv)", file=sys.stderr)
    ns._raw = Path(ns.transactions).read_bytes()
    return out


def cmd_synth_emid(ns) -> Outputs:
    from .ingest import synth_emid

    res = synth_emid(ns.seed)
    var = res.truth.var
    out = Outputs(ns.out)
    body, header = network_to_text(res.network)
    out.add("network.csv", body)
    out.add("network.json", header)
    out.add("latent.csv", fitness_to_text(FitnessSeries(res.latent, True)))
    truth = {
        "gamma": res.truth.gamma.tolist(),
        "obs_noise_var": res.truth.obs_noise_cov.tolist(),
        "latent": {"mu": var.mu.tolist(), "B": var.B.tolist(), "Sigma": var.Sigma.tolist()},
        "spectral_radius": var.spectral_radius,
        "attempts": res.attempts,
    }
    out.add("truth.json", json.dumps(truth, indent=2, sort_keys=True) + "\n")
    ns._raw = None
    return out


def cmd_reproduce(ns) -> int:
    manifest = json.loads(Path(ns.manifest).read_text())
    argv = [manifest["command"]]
    parser = build_parser()
    sub = parser._subparsers._group_actions[0].choices[manifest["command"]]
    for action in sub._actions:
        if not action.option_strings and action.dest in manifest["args"]:
            argv.append(str(manifest["args"][action.dest]))
    for action in sub._actions:
        if not action.option_strings or action.dest in ("help", "out"):
            continue
        if action.dest not in manifest["args"]:
            continue
        v = manifest["args"][action.dest]
        flag = action.option_strings[-1]
        if isinstance(action, argparse._StoreTrueAction):
            if v:
                argv.append(flag)
        elif v is None:
            continue
        elif isinstance(v, list):
            argv += [flag, *map(str, v)]
        else:
            argv += [flag, str(v)]
    argv += ["--out", str(ns.out)]
    code = main(argv)
    if code != EXIT_OK:
        return code
    new = json.loads((Path(ns.out) / "manifest.json").read_text())
    bad = [k for k, h in manifest["outputs"].items() if new["outputs"].get(k) != h]
    if bad:
        print(f"outputs differ: {', '.join(bad)}", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"reproduced {len(manifest['outputs'])} outputs byte-identically")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="netirf", description="Latent-fitness network dynamics and impulse responses.")
    p.add_argument("--version", action="version", version=f"netirf {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True, threads=False):
        sp.add_argument("--out", type=Path, required=True, help="output directory")
        if seed:
            sp.add_argument("--seed", type=int, default=0)
        if threads:
            sp.add_argument("--threads", type=int, default=1, help="worker threads (wall time only)")

    sp = sub.add_parser("simulate", help="simulate latent fitnesses and networks")
    sp.add_argument("--config", type=Path, required=True)
    common(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("irf", help="impulse response of network density")
    src = sp.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", type=Path)
    src.add_argument("--params", type=Path, help="fitted-parameter JSON written by 'estimate'")
    sp.add_argument("--mode", choices=["analytic", "mc", "paths"], default="analytic")
    sp.add_argument("--delta", type=float)
    sp.add_argument("--horizon", type=int)
    sp.add_argument("--node", help="shocked node index or 'max-out-degree'")
    sp.add_argument("--coordinate", choices=["in", "out", "undirected"])
    sp.add_argument("--samples", type=int, help="Gaussian draws per horizon (mc)")
    sp.add_argument("--paths", type=int, help="replicate paths (paths)")
    common(sp, threads=True)
    sp.set_defaults(func=cmd_irf)

    sp = sub.add_parser("sweep", help="comparative-statics figure data")
    sp.add_argument("study")
    sp.add_argument("--horizon", type=int)
    sp.add_argument("--exact", action="store_true", help="exact logistic-normal integrals")
    common(sp)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("estimate", help="fit latent dynamics to an observed network")
    sp.add_argument("--network", type=Path, required=True, help="network JSON header (CSV alongside)")
    sp.add_argument("--method", choices=["nssi", "kfssi"], default="kfssi")
    sp.add_argument("--mode", choices=["full", "meanfield"], default="full")
    common(sp)
    sp.set_defaults(func=cmd_estimate)

    sp = sub.add_parser("benchmark", help="estimator comparison on simulated mean-field networks")
    sp.add_argument("--config", type=Path)
    sp.add_argument("--n-sim", type=int, dest="n_sim")
    common(sp, threads=True)
    sp.set_defaults(func=cmd_benchmark)

    sp = sub.add_parser("grid", help="expected density: exact, second-order and Taylor")
    sp.add_argument("--m-min", type=float, default=-3.0)
    sp.add_argument("--m-max", type=float, default=3.0)
    sp.add_argument("--m-num", type=int, default=61)
    sp.add_argument("--s2", type=float, nargs="+", default=[0.01, 0.1, 0.5])
    sp.add_argument("--r", type=float, nargs="+", default=[-0.5, 0.0, 0.5])
    common(sp, seed=False)
    sp.set_defaults(func=cmd_grid)

    sp = sub.add_parser("ingest", help="weekly networks from a transaction CSV")
    sp.add_argument("transactions", type=Path)
    sp.add_argument("--threshold", type=int, help="cumulative in/out degree threshold")
    sp.add_argument("--keep-isolated", action="store_true")
    common(sp, seed=False)
    sp.set_defaults(func=cmd_ingest)

    sp = sub.add_parser("synth-emid", help="synthetic directed interbank network with known dynamics")
    common(sp)
    sp.set_defaults(func=cmd_synth_emid)

    sp = sub.add_parser("reproduce", help="re-run a manifest and compare output hashes")
    sp.add_argument("manifest", type=Path)
    sp.add_argument("--out", type=Path, required=True)
    sp.set_defaults(func=None)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    try:
        if ns.command == "reproduce":
            return cmd_reproduce(ns)
        out = ns.func(ns)
        out.write(ns.command, _recorded_args(ns), getattr(ns, "seed", None), getattr(ns, "_raw", None))
    except (ConfigError, ValidationError, StationarityError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
