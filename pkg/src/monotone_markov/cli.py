"""Command-line front end.

Subcommands::

    monotone-markov check          --config model.toml [--out report.json]
    monotone-markov curve          --config model.toml [--out curve.csv]
    monotone-markov simulate       --config model.toml --seed 7 [--out est.csv]
    monotone-markov counterexample --config model.toml [--out var.csv]
    monotone-markov battery        --config configs_dir [--out summary.json]

Configs are TOML or JSON (picked by extension).  Schema::

    [model]
    name = "reflected_walk"            # constructor name (see models module)
    [model.params]                     # constructor arguments
    increments = { "-1" = 0.7, "1" = 0.3 }
    max_state = 20

    [analysis]
    kind = "curve"                     # check | curve | simulate | counterexample
    curve = "covariance"               # covariance | supermod | difference |
                                       # transient_mean | transient_variance
    f1 = "id"                          # id | power:K | step:T | table:[...]
    f2 = "id"
    h = "product"                      # product | min | table2d:[[...]]
    s = 1                              # difference-curve lag
    horizon = 64
    seed = 1234
    n_paths = 10000
    x0 = 0.0                           # transient curves: start state

    [output]
    path = "out.csv"
    format = "csv"                     # csv | json

Exit status: 0 all checks/certificates hold, 1 a check or expected shape
certificate failed, 2 configuration error.  Output files are deterministic
for a fixed config and seed and carry a header with the tool version, a
config hash and the seed.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .analysis import (
    PreconditionError,
    StationarySolveError,
    certify_shape,
    covariance_curve,
    curve_to_csv,
    curve_to_json,
    difference_curve,
    require_unique_stationary,
    stationary,
    supermod_curve,
    transient_mean_curve,
    transient_variance_curve,
)
from .checks import check_condition1, check_ginv_monotone, check_stoch_monotone
from .coupling import estimates_to_csv, mc_covariance_curve, mc_supermod_curve
from .kernels import FiniteKernel, KernelError, OrderedStateSpace, uniform_space
from .models import (
    BirthDeathSpec,
    WalkSpec,
    absorbed_poisson,
    birth_death_skeleton,
    dam_skeleton,
    reflected_walk,
    shot_noise_skeleton,
    state_dependent_walk,
    two_sided_reflected_walk,
)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2


class ConfigError(ValueError):
    pass


def _load_config(path: Path) -> dict:
    text = path.read_text()
    try:
        if path.suffix.lower() == ".json":
            return json.loads(text)
        if path.suffix.lower() == ".toml":
            try:
                import tomllib
            except ModuleNotFoundError:
                import tomli as tomllib
            return tomllib.loads(text)
    except ValueError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    raise ConfigError(f"config must be .toml or .json, got {path.suffix!r}")


def _config_hash(config: dict) -> str:
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def _int_key_dist(raw: dict) -> dict:
    return {int(k): float(v) for k, v in raw.items()}


def _float_key_dist(raw: dict) -> dict:
    return {float(k): float(v) for k, v in raw.items()}


def build_model(model_cfg: dict) -> FiniteKernel:
    """Instantiate a model-zoo kernel from its config block."""
    try:
        name = model_cfg["name"]
        params = dict(model_cfg.get("params", {}))
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"model block needs 'name' and 'params': {exc}") from None
    try:
        if name == "reflected_walk":
            return reflected_walk(_int_key_dist(params["increments"]), int(params["max_state"]))
        if name == "two_sided_reflected_walk":
            return two_sided_reflected_walk(_int_key_dist(params["increments"]), int(params["b"]))
        if name == "state_dependent_walk":
            spec = WalkSpec(tuple(params["p"]), tuple(params["q"]), tuple(params["r"]))
            return state_dependent_walk(spec)
        if name == "birth_death_skeleton":
            spec = BirthDeathSpec(
                tuple(params["lambdas"]), tuple(params["mus"]),
                params.get("truncation_note", ""),
            )
            return birth_death_skeleton(spec, float(params["t"]),
                                        float(params.get("trunc_tol", 1e-12)))
        if name == "shot_noise_skeleton":
            grid = uniform_space(float(params.get("grid_lo", 0.0)),
                                 float(params["grid_hi"]), int(params["grid_size"]))
            return shot_noise_skeleton(
                float(params["r"]), _float_key_dist(params["jumps"]),
                float(params["jump_rate"]), float(params["dt"]), grid,
            )
        if name == "dam_skeleton":
            grid = uniform_space(float(params.get("grid_lo", 0.0)),
                                 float(params["grid_hi"]), int(params["grid_size"]))
            release = np.asarray(params["release"], dtype=float)
            if release.size != grid.size:
                raise ConfigError("release table must match grid_size")
            table = dict(zip(grid.states, release))
            return dam_skeleton(
                lambda x: table[x], _float_key_dist(params["jumps"]),
                float(params["jump_rate"]), float(params["dt"]), grid,
            )
        if name == "absorbed_poisson":
            return absorbed_poisson(int(params["k"]), int(params["m"]),
                                    float(params["lam"]), float(params["dt"]))
        if name == "kernel_json":
            from .kernels import kernel_from_json

            return kernel_from_json(json.dumps(params["kernel"]))
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad parameters for model {name!r}: {exc}") from None
    raise ConfigError(f"unknown model {name!r}")


def resolve_f(spec, space: OrderedStateSpace):
    """Univariate function from a config name: id, power:K, step:T, or a table.

    Always returns a vectorized callable; a table is looked up by grid
    position, so it is exact on the model grid.
    """
    if isinstance(spec, (list, tuple)):
        arr = np.asarray(spec, dtype=float)
        if arr.size != space.size:
            raise ConfigError("tabulated f must match the model grid")
        grid = space.as_array()
        return lambda x: arr[np.searchsorted(grid, x)]
    if not isinstance(spec, str):
        raise ConfigError(f"cannot resolve function {spec!r}")
    if spec == "id":
        return lambda x: np.asarray(x, dtype=float)
    if spec.startswith("power:"):
        k = float(spec.split(":", 1)[1])
        return lambda x: np.asarray(x, dtype=float) ** k
    if spec.startswith("step:"):
        thr = float(spec.split(":", 1)[1])
        return lambda x: (np.asarray(x, dtype=float) >= thr).astype(float)
    raise ConfigError(f"unknown function name {spec!r}")


def resolve_h(spec, space: OrderedStateSpace, f1=None, f2=None):
    """Bivariate function from a config name: product (f1 x f2), min, or a table.

    ``product`` multiplies the resolved f1/f2 pointwise; with second
    arguments that are differences rather than grid states (difference
    curves) f2 is applied to the raw difference values.
    """
    if isinstance(spec, (list, tuple)):
        arr = np.asarray(spec, dtype=float)
        if arr.shape != (space.size, space.size):
            raise ConfigError("tabulated h must be grid x grid")
        return arr
    if spec == "product":
        g1 = f1 if f1 is not None else (lambda x: np.asarray(x, dtype=float))
        g2 = f2 if f2 is not None else (lambda y: np.asarray(y, dtype=float))
        return lambda x, y: np.asarray(g1(x), dtype=float) * np.asarray(g2(y), dtype=float)
    if spec == "min":
        return lambda x, y: np.minimum(x, y)
    raise ConfigError(f"unknown bivariate function {spec!r}")


def _header(config: dict, seed) -> list[str]:
    return [
        f"monotone-markov {__version__}",
        f"config_hash={_config_hash(config)}",
        f"seed={seed}",
    ]


def _write(path: Path | None, text: str):
    if path is None:
        sys.stdout.write(text)
    else:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)


def run_check(config: dict, out: Path | None, fmt: str, tol: float) -> int:
    kernel = build_model(config["model"])
    mono = check_stoch_monotone(kernel, tol)
    cond1 = check_condition1(kernel, tol)
    gv = check_ginv_monotone(kernel, tol)
    payload = {
        "header": _header(config, config.get("analysis", {}).get("seed", "-")),
        "model": kernel.meta.get("model", "custom"),
        "reports": {
            "stoch_monotone": mono.to_dict(),
            "condition1": cond1.to_dict(),
            "ginv_stoch_monotone": gv.stoch_monotone.to_dict(),
            "ginv_condition1": gv.condition1.to_dict(),
        },
        "predicted": kernel.meta.get("predicted"),
        "equivalence_holds": (
            mono.passed == gv.stoch_monotone.passed
            and cond1.passed == gv.condition1.passed
        ),
    }
    _write(out, json.dumps(payload, indent=2) + "\n")
    if out is not None:
        for label, rep in (("stoch_monotone", mono), ("condition1", cond1)):
            if rep.passed:
                print(f"{label}: PASS")
            else:
                w = rep.witness
                print(f"{label}: FAIL  gap={w.gap:.3g} at x1={w.x1:g} x2={w.x2:g} "
                      f"threshold={w.threshold:g}")
    ok = mono.passed and cond1.passed and payload["equivalence_holds"]
    predicted = kernel.meta.get("predicted")
    if predicted is not None and (
        predicted["stoch_monotone"] != mono.passed or predicted["condition1"] != cond1.passed
    ):
        ok = False
    return EXIT_OK if ok else EXIT_FAILED


def _expected_flags(kernel: FiniteKernel, curve_kind: str, tol: float) -> dict:
    """Shape flags the structural theorems imply for this kernel and curve."""
    mono = check_stoch_monotone(kernel, tol).passed
    cond1 = check_condition1(kernel, tol).passed
    if curve_kind == "covariance":
        flags = {}
        if mono:
            flags.update(nonnegative=True, nonincreasing=True)
            if cond1:
                flags.update(convex=True)
        return flags
    if curve_kind in ("supermod", "difference"):
        need = {"supermod": mono, "difference": mono and cond1}[curve_kind]
        return {"nonincreasing": True} if need else {}
    if curve_kind == "transient_mean":
        flags = {}
        if mono:
            flags.update(nondecreasing=True)
            if cond1:
                flags.update(concave=True)
        return flags
    return {}


def run_curve(config: dict, out: Path | None, fmt: str, tol: float) -> int:
    kernel = build_model(config["model"])
    an = config.get("analysis", {})
    kind = an.get("curve", "covariance")
    horizon = int(an.get("horizon", 32))
    if horizon < 1:
        raise ConfigError("horizon must be >= 1")

    if kind in ("covariance", "supermod", "difference"):
        init = require_unique_stationary(stationary(kernel))
        if kind == "covariance":
            f1 = resolve_f(an.get("f1", "id"), kernel.space)
            f2 = resolve_f(an.get("f2", "id"), kernel.space)
            curve = covariance_curve(kernel, init, f1, f2, horizon)
        elif kind == "supermod":
            f1 = resolve_f(an.get("f1", "id"), kernel.space)
            f2 = resolve_f(an.get("f2", "id"), kernel.space)
            h = resolve_h(an.get("h", "product"), kernel.space, f1, f2)
            curve = supermod_curve(kernel, init, h, horizon)
        else:
            f1 = resolve_f(an.get("f1", "id"), kernel.space)
            h = resolve_h(an.get("h", "product"), kernel.space, f1, lambda d: d)
            curve = difference_curve(kernel, init, h, int(an.get("s", 1)), horizon)
    elif kind == "transient_mean":
        x0 = float(an.get("x0", kernel.space.states[0]))
        curve = transient_mean_curve(kernel, x0, horizon)
    elif kind == "transient_variance":
        x0 = float(an.get("x0", kernel.space.states[0]))
        curve = transient_variance_curve(kernel, x0, horizon)
    else:
        raise ConfigError(f"unknown curve kind {kind!r}")

    cert = certify_shape(curve, tol)
    expected = _expected_flags(kernel, kind, tol)
    failed = {k for k, v in expected.items() if v and not getattr(cert, k)}
    header = _header(config, an.get("seed", "-"))
    if fmt == "json":
        payload = json.loads(curve_to_json(curve, cert))
        payload["header"] = header
        payload["expected_flags"] = expected
        payload["failed_flags"] = sorted(failed)
        _write(out, json.dumps(payload, indent=2) + "\n")
    else:
        extra = [f"certificate={json.dumps(cert.to_dict(), sort_keys=True)}",
                 f"expected={json.dumps(expected, sort_keys=True)}"]
        _write(out, curve_to_csv(curve, header + extra))
    return EXIT_FAILED if failed else EXIT_OK


def run_simulate(config: dict, out: Path | None, fmt: str, seed_flag) -> int:
    kernel = build_model(config["model"])
    an = config.get("analysis", {})
    seed = int(seed_flag if seed_flag is not None else an.get("seed", 0))
    horizon = int(an.get("horizon", 32))
    n_paths = int(an.get("n_paths", 10_000))
    init = stationary(kernel)
    kind = an.get("curve", "covariance")
    if kind == "covariance":
        f1 = resolve_f(an.get("f1", "id"), kernel.space)
        f2 = resolve_f(an.get("f2", "id"), kernel.space)
        ests = mc_covariance_curve(kernel, init, f1, f2, horizon, n_paths, seed)
    elif kind == "supermod":
        f1 = resolve_f(an.get("f1", "id"), kernel.space)
        f2 = resolve_f(an.get("f2", "id"), kernel.space)
        h = resolve_h(an.get("h", "product"), kernel.space, f1, f2)
        ests = mc_supermod_curve(kernel, init, h, horizon, n_paths, seed)
    else:
        raise ConfigError(f"simulate supports covariance/supermod, not {kind!r}")
    header = _header(config, seed)
    if fmt == "json":
        payload = {
            "header": header,
            "estimates": [
                {"t": t, "value": e.value, "std_error": e.std_error, "n": e.n_samples}
                for t, e in enumerate(ests)
            ],
        }
        _write(out, json.dumps(payload, indent=2) + "\n")
    else:
        _write(out, estimates_to_csv(ests, header))
    return EXIT_OK


def run_counterexample(config: dict, out: Path | None, fmt: str, tol: float) -> int:
    """Variance non-monotonicity exhibit: absorbing Poisson counter.

    Succeeds (exit 0) when the variance curve is certified non-monotone
    while the mean curve stays nondecreasing and concave.
    """
    model_cfg = config.get("model") or {
        "name": "absorbed_poisson",
        "params": {"k": 0, "m": 2, "lam": 1.0, "dt": 0.25},
    }
    kernel = build_model(model_cfg)
    an = config.get("analysis", {})
    horizon = int(an.get("horizon", 48))
    x0 = float(an.get("x0", kernel.space.states[0]))
    var_curve = transient_variance_curve(kernel, x0, horizon)
    mean_curve = transient_mean_curve(kernel, x0, horizon)
    var_cert = certify_shape(var_curve, tol)
    mean_cert = certify_shape(mean_curve, tol)
    reproduced = (
        not var_cert.nonincreasing
        and not var_cert.nondecreasing
        and mean_cert.nondecreasing
        and mean_cert.concave
    )
    header = _header(config, an.get("seed", "-"))
    if fmt == "json":
        payload = {
            "header": header,
            "variance": json.loads(curve_to_json(var_curve, var_cert)),
            "mean": json.loads(curve_to_json(mean_curve, mean_cert)),
            "counterexample_reproduced": reproduced,
        }
        _write(out, json.dumps(payload, indent=2) + "\n")
    else:
        extra = [f"variance_certificate={json.dumps(var_cert.to_dict(), sort_keys=True)}",
                 f"mean_certificate={json.dumps(mean_cert.to_dict(), sort_keys=True)}",
                 f"counterexample_reproduced={reproduced}"]
        _write(out, curve_to_csv(var_curve, header + extra))
    return EXIT_OK if reproduced else EXIT_FAILED


def run_one(config: dict, out: Path | None, fmt: str, tol: float, seed_flag) -> int:
    kind = config.get("analysis", {}).get("kind")
    if kind == "check":
        return run_check(config, out, fmt, tol)
    if kind == "curve":
        return run_curve(config, out, fmt, tol)
    if kind == "simulate":
        return run_simulate(config, out, fmt, seed_flag)
    if kind == "counterexample":
        return run_counterexample(config, out, fmt, tol)
    raise ConfigError(f"analysis.kind must be check/curve/simulate/counterexample, got {kind!r}")


def run_battery(config_dir: Path, out: Path | None, fmt: str, tol: float, seed_flag) -> int:
    """Run every config in a directory; per-member failures do not abort."""
    if not config_dir.is_dir():
        raise ConfigError(f"{config_dir} is not a directory")
    rows = []
    any_fail = False
    for path in sorted(config_dir.iterdir()):
        if path.suffix.lower() not in (".toml", ".json"):
            continue
        row = {"config": path.name}
        try:
            config = _load_config(path)
            member_out = None
            if out is not None:
                member_out = out.parent / f"{out.stem}.{path.stem}{'.json' if fmt == 'json' else '.csv'}"
            status = run_one(config, member_out, fmt, tol, seed_flag)
            row["status"] = "pass" if status == EXIT_OK else "fail"
            any_fail |= status != EXIT_OK
        except (ConfigError, KernelError, StationarySolveError, KeyError, ValueError) as exc:
            row["status"] = "error"
            row["detail"] = str(exc)
            any_fail = True
        rows.append(row)
    summary = {"battery": str(config_dir), "members": rows}
    _write(out, json.dumps(summary, indent=2) + "\n")
    return EXIT_FAILED if any_fail else EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="monotone-markov",
        description="Structural checks and certified curves for monotone Markov chains",
    )
    parser.add_argument("command",
                        choices=["check", "curve", "simulate", "counterexample", "battery"])
    parser.add_argument("--config", required=True,
                        help="config file (battery: directory of configs)")
    parser.add_argument("--seed", type=int, default=None, help="RNG seed override")
    parser.add_argument("--out", type=Path, default=None, help="output file")
    parser.add_argument("--format", choices=["csv", "json"], default="csv")
    parser.add_argument("--tol", type=float, default=1e-10, help="check/certificate tolerance")
    args = parser.parse_args(argv)

    try:
        if args.command == "battery":
            return run_battery(Path(args.config), args.out, args.format, args.tol, args.seed)
        config = _load_config(Path(args.config))
        return run_one(config, args.out, args.format, args.tol, args.seed)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (KernelError, PreconditionError, StationarySolveError) as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
