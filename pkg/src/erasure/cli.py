"""Reproducible experiment harness for the erasure toolkit.

Configuration files are plain ``key = value`` text (``#`` comments,
unknown keys rejected).  Multi-line matrix values use heredocs::

    command = convex-split
    seed = 7
    eps = 0.05
    n = 4
    free_set.family = coherence
    state.rho.inline = <<<
    M:2
    0.5,0.0 0.5,0.0
    0.5,0.0 0.5,0.0
    >>>
    state.sigma.file = sigma.txt

Matrices use the layout-header text format of the state module; the same
format configures Hamiltonians and group unitaries
(``free_set.hamiltonian.inline``, ``free_set.unitary.1.inline``, ...).

Outputs: ``report.jsonl`` (one JSON object per line: config echo, one
record per run, summary), CSV tables with stable columns and 12
significant digits, and ``meta.json`` carrying timings and timestamps so
the report body stays byte-identical for a fixed config and seed.  The
exit status is 0 exactly when no asserted check failed.  The default
output directory comes from ``$ERASURE_OUT``.
"""

from __future__ import annotations

import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import click
import numpy as np

from . import __version__
from .battery import run_battery
from .entropies import (
    max_relative_entropy,
    relative_entropy,
    relative_entropy_variance,
    smooth_max_relative_entropy,
)
from .free_sets import FreeSet, make_free_set
from .protocols import (
    converse_certificate,
    convex_split_distance_check,
    plan_block_protocol,
    randomness_rate_report,
    run_block_protocol,
    run_catalytic_transformation,
    run_multiparty_transformation,
)
from .states import DensityMatrix, matrix_from_text, state_from_text

SCHEMA_VERSION = "1"

COMMANDS = (
    "entropy",
    "convex-split",
    "protocol",
    "multiparty",
    "block",
    "rate",
    "converse",
    "suite",
)

_SCALARS = {
    "command": str,
    "seed": int,
    "eps": float,
    "delta": float,
    "gamma": float,
    "n": int,
    "m": int,
    "t": int,
    "n_max": int,
    "samples": int,
    "workers": int,
    "cap_dim": int,
    "out": str,
    "eps_list": str,
    "free_set.family": str,
    "free_set.beta": float,
    "free_set.copies": int,
    "free_set.ell": int,
    "free_set.t": int,
}

_RANGES = {
    "eps": (0.0, 1.0, "[0, 1)"),
    "delta": (0.0, 1.0, "(0, 1)"),
    "gamma": (0.0, math.inf, "(0, inf)"),
}


class ConfigError(ValueError):
    """Aggregated configuration problems."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


def _parse_lines(text: str) -> dict[str, str]:
    """Raw key/value extraction with `<<< ... >>>` heredocs."""
    entries: dict[str, str] = {}
    errors = []
    lines = text.splitlines()
    i = 0
    while i < len(lines):
        line = lines[i].strip()
        i += 1
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            errors.append(f"line {i}: expected 'key = value', got {line!r}")
            continue
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if value == "<<<":
            block = []
            while i < len(lines) and lines[i].strip() != ">>>":
                block.append(lines[i])
                i += 1
            if i >= len(lines):
                errors.append(f"heredoc for {key!r} never closed with '>>>'")
            i += 1
            value = "\n".join(block)
        if key in entries:
            errors.append(f"duplicate key {key!r}")
        entries[key] = value
    if errors:
        raise ConfigError(errors)
    return entries


@dataclass
class ExperimentConfig:
    """Validated experiment description; fully determined by text + seed."""

    command: str
    seed: int = 0
    eps: float = 0.05
    delta: float = 0.1
    gamma: float = 0.1
    n: int = 4
    m: int = 2
    t: int = 2
    n_max: int = 2
    samples: int = 10
    workers: int = 1
    cap_dim: int = 4096
    out: str | None = None
    eps_list: tuple = (0.05,)
    free_set_params: dict = field(default_factory=dict)
    states: dict = field(default_factory=dict)
    echo: dict = field(default_factory=dict)

    def free_set(self) -> FreeSet:
        params = dict(self.free_set_params)
        family = params.pop("family")
        return make_free_set(family, **params)


def parse_config(text: str, base_dir: str | os.PathLike = ".") -> ExperimentConfig:
    """Strict parse: every key must be known and in range."""
    entries = _parse_lines(text)
    errors = []
    values = {}
    states = {}
    free_set: dict = {}
    unitaries: dict[int, np.ndarray] = {}

    for key, raw in sorted(entries.items()):
        if key in _SCALARS:
            kind = _SCALARS[key]
            try:
                value = kind(raw)
            except ValueError:
                errors.append(f"{key}: cannot parse {raw!r} as {kind.__name__}")
                continue
            if key in _RANGES:
                lo, hi, label = _RANGES[key]
                inclusive_lo = key == "eps"
                ok = (value >= lo if inclusive_lo else value > lo) and value < hi
                if not ok:
                    errors.append(f"{key}: {value} outside {label}")
                    continue
            if key.startswith("free_set."):
                free_set[key.split(".", 1)[1]] = value
            else:
                values[key] = value
        elif key.startswith("state.") and key.endswith(".inline"):
            name = key[len("state."):-len(".inline")]
            try:
                states[name] = state_from_text(raw)
            except Exception as exc:
                errors.append(f"{key}: {exc}")
        elif key.startswith("state.") and key.endswith(".file"):
            name = key[len("state."):-len(".file")]
            path = Path(base_dir) / raw
            try:
                states[name] = state_from_text(path.read_text())
            except FileNotFoundError:
                errors.append(f"{key}: no such file {raw!r}")
            except Exception as exc:
                errors.append(f"{key}: {exc}")
        elif key in ("free_set.hamiltonian.inline", "free_set.hamiltonian.file"):
            try:
                raw_text = (
                    raw if key.endswith(".inline") else (Path(base_dir) / raw).read_text()
                )
                free_set["hamiltonian"], _ = matrix_from_text(raw_text)
            except Exception as exc:
                errors.append(f"{key}: {exc}")
        elif key.startswith("free_set.unitary.") and key.endswith(".inline"):
            index = key[len("free_set.unitary."):-len(".inline")]
            try:
                unitaries[int(index)], _ = matrix_from_text(raw)
            except Exception as exc:
                errors.append(f"{key}: {exc}")
        else:
            errors.append(f"unknown key {key!r}")

    if unitaries:
        free_set["unitaries"] = [unitaries[k] for k in sorted(unitaries)]
    if "eps_list" in values:
        try:
            values["eps_list"] = tuple(
                float(tok) for tok in values["eps_list"].split(",") if tok.strip()
            )
        except ValueError:
            errors.append(f"eps_list: cannot parse {values['eps_list']!r}")
    command = values.get("command")
    if command is None:
        errors.append("missing required key 'command'")
    elif command not in COMMANDS:
        errors.append(f"command: {command!r} not one of {COMMANDS}")

    needs_free_set = command in ("protocol", "multiparty", "block", "rate", "converse")
    if needs_free_set and "family" not in free_set:
        errors.append(f"{command}: missing free_set.family")
    required_states = {
        "entropy": ("rho", "sigma"),
        "convex-split": ("rho", "sigma"),
        "protocol": ("rho",),
        "multiparty": ("rho",),
        "block": ("rho",),
        "rate": ("rho",),
        "converse": ("rho",),
        "suite": (),
    }.get(command, ())
    for name in required_states:
        if name not in states:
            errors.append(f"{command}: missing state.{name}")

    if errors:
        raise ConfigError(errors)
    echo = {k: entries[k] for k in sorted(entries)}
    return ExperimentConfig(
        **values, free_set_params=free_set, states=states, echo=echo
    )


# ---------------------------------------------------------------------------
# command handlers
# ---------------------------------------------------------------------------


def _estimate_fields(name, est):
    return {
        "quantity": name,
        "value": est.value,
        "epsilon": est.epsilon,
        "method": est.method,
    }


def _run_entropy(config):
    rho, sigma = config.states["rho"], config.states["sigma"]
    records = [
        _estimate_fields("relative-entropy", relative_entropy(rho, sigma)),
        _estimate_fields("relative-entropy-variance", relative_entropy_variance(rho, sigma)),
        _estimate_fields("max-relative-entropy", max_relative_entropy(rho, sigma)),
        _estimate_fields(
            "smooth-max-relative-entropy",
            smooth_max_relative_entropy(rho, sigma, config.eps),
        ),
    ]
    checks = [
        ("order", records[0]["value"] <= records[2]["value"] + 1e-9),
        ("smoothing-helps", records[3]["value"] <= records[2]["value"] + 1e-9),
    ]
    return records, checks


def _run_convex_split(config):
    rho, sigma = config.states["rho"], config.states["sigma"]
    records = []
    checks = []
    for n in range(2, config.n + 1):
        lhs, rhs, ok = convex_split_distance_check(rho, sigma, n, config.eps)
        records.append({"n": n, "eps": config.eps, "lhs": lhs, "rhs": rhs, "ok": ok})
        checks.append((f"bound-n{n}", ok))
    return records, checks


def _transcript_record(tr):
    out = dict(tr.__dict__)
    out.pop("extras")
    out.update(tr.extras)
    return out


def _run_protocol(config):
    tr = run_catalytic_transformation(
        config.states["rho"],
        config.free_set(),
        config.eps,
        config.delta,
        cap_dim=config.cap_dim,
        seed=config.seed,
    )
    checks = [
        ("distance-bound", tr.achieved_distance <= tr.distance_bound + 1e-9),
        ("register-freed", tr.output_state["m_register_matches_sigma_within"] <= 1e-10),
    ]
    return [_transcript_record(tr)], checks


def _run_multiparty(config):
    tr = run_multiparty_transformation(
        config.states["rho"],
        config.free_set(),
        config.eps,
        config.delta,
        t=config.t,
        cap_dim=config.cap_dim,
        seed=config.seed,
    )
    checks = [
        ("distance-bound", tr.achieved_distance <= tr.distance_bound + 1e-9),
        ("swaps-compose", bool(tr.extras["per_party_swaps_compose"])),
    ]
    return [_transcript_record(tr)], checks


def _run_converse(config):
    fs = config.free_set()
    tr = run_catalytic_transformation(
        config.states["rho"], fs, config.eps, config.delta,
        cap_dim=config.cap_dim, seed=config.seed,
    )
    lower, factor = converse_certificate(tr, fs, config.eps, seed=config.seed)
    half, factor_half = converse_certificate(
        tr, fs, config.eps, seed=config.seed, trust_block_structure=False
    )
    record = _transcript_record(tr)
    record.update({"converse_half_factor": factor_half, "converse_half_value": half})
    checks = [
        ("converse-below-cost", factor * lower <= tr.log_J + 1e-6),
        ("half-factor", factor_half == 0.5),
    ]
    return [record], checks


def _run_block(config):
    fs = config.free_set()
    tr = run_block_protocol(
        config.states["rho"], fs, m=config.m, gamma=config.gamma, eps=config.eps,
        cap_dim=min(config.cap_dim, 512), seed=config.seed,
    )
    final = tr.output_state["final_distance"]
    per_block = tr.output_state["per_block_distances"]
    checks = [
        ("accumulation", final <= len(per_block) * max(per_block) + 1e-8),
    ]
    return [_transcript_record(tr)], checks


def _run_rate(config):
    rep = randomness_rate_report(
        config.states["rho"], config.free_set(), list(config.eps_list),
        config.n_max, delta=config.delta, seed=config.seed,
    )
    if rep.skipped:
        return [{"skipped": True, "reason": rep.reason}], [("skipped-notice", True)]
    records = [
        {
            "n": r.n,
            "eps": r.eps,
            "k_over_n": r.k_over_n,
            "achievable": r.achievable,
            "converse": r.converse,
            "e_over_n": r.e_over_n,
        }
        for r in rep.rows
    ]
    checks = [
        ("sandwich", all(r.converse <= r.e_over_n + 1e-9 for r in rep.rows)),
        ("achievable-above", all(r.converse <= r.achievable + 1e-9 for r in rep.rows)),
    ]
    return records, checks


def _run_suite(config):
    full = config.samples >= 50
    records = run_battery(
        samples=config.samples,
        seed=config.seed,
        cap_dim=min(config.cap_dim, 256) if not full else config.cap_dim,
        full=full,
        workers=config.workers,
    )
    checks = [(rec["criterion"], rec["passed"]) for rec in records]
    return records, checks


_HANDLERS = {
    "entropy": _run_entropy,
    "convex-split": _run_convex_split,
    "protocol": _run_protocol,
    "multiparty": _run_multiparty,
    "block": _run_block,
    "rate": _run_rate,
    "converse": _run_converse,
    "suite": _run_suite,
}


@dataclass
class Report:
    command: str
    config_echo: dict
    records: list
    summary: dict
    schema_version: str = SCHEMA_VERSION
    versions: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)

    def body_lines(self):
        """Deterministic JSON lines (timings excluded)."""
        head = {
            "kind": "config",
            "schema_version": self.schema_version,
            "command": self.command,
            "config": self.config_echo,
            "versions": self.versions,
        }
        lines = [json.dumps(head, sort_keys=True)]
        for idx, rec in enumerate(self.records):
            lines.append(
                json.dumps(
                    {"kind": "record", "run_id": idx, **_jsonable(rec)}, sort_keys=True
                )
            )
        lines.append(json.dumps({"kind": "summary", **self.summary}, sort_keys=True))
        return lines


def _jsonable(value):
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, float) and math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return value


def run_command(config: ExperimentConfig) -> Report:
    """Dispatch to the module operations and assemble the report."""
    started = time.perf_counter()
    records, checks = _HANDLERS[config.command](config)
    elapsed = time.perf_counter() - started
    failed = [name for name, ok in checks if not ok]
    violations = [
        rec.get("max_violation", 0.0) for rec in records if isinstance(rec, dict)
    ]
    summary = {
        "checks": len(checks),
        "passed": len(checks) - len(failed),
        "failed": len(failed),
        "failed_names": failed,
        "max_violation": max(violations, default=0.0),
    }
    versions = {
        "erasure": __version__,
        "numpy": np.__version__,
        "schema": SCHEMA_VERSION,
    }
    return Report(
        command=config.command,
        config_echo=config.echo,
        records=records,
        summary=summary,
        versions=versions,
        timings={"seconds": elapsed, "timestamp": time.time()},
    )


_TABLE_COLUMNS = {
    "entropy": ("quantity", "value", "epsilon", "method"),
    "convex-split": ("n", "eps", "lhs", "rhs", "ok"),
    "rate": ("n", "eps", "k_over_n", "achievable", "converse", "e_over_n"),
    "suite": ("criterion", "passed", "max_violation"),
}

_TRANSCRIPT_COLUMNS = (
    "free_set",
    "parties",
    "eps_target",
    "delta",
    "n_copies",
    "n_formula",
    "log_J",
    "k_bits",
    "catalyst_qubits",
    "achieved_distance",
    "catalyst_return_distance",
    "distance_bound",
    "converse_lower_bound",
    "converse_factor",
)


def _format_cell(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.12g}"
    if value is None:
        return ""
    return str(value)


def emit_tables(report: Report, out_dir: str | os.PathLike) -> list[Path]:
    """CSV tables with a stable column order and 12 significant digits."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    columns = _TABLE_COLUMNS.get(report.command, _TRANSCRIPT_COLUMNS)
    path = out_dir / f"{report.command}.csv"
    lines = [",".join(columns)]
    for rec in report.records:
        if not isinstance(rec, dict):
            continue
        lines.append(",".join(_format_cell(rec.get(col)) for col in columns))
    path.write_text("\n".join(lines) + "\n")
    return [path]


def write_report(report: Report, out_dir: str | os.PathLike) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    body = out_dir / "report.jsonl"
    body.write_text("\n".join(report.body_lines()) + "\n")
    meta = out_dir / "meta.json"
    meta.write_text(json.dumps(report.timings, sort_keys=True) + "\n")
    emit_tables(report, out_dir)
    return body


# ---------------------------------------------------------------------------
# click wiring
# ---------------------------------------------------------------------------


def _shared_options(fn):
    fn = click.option("--config", "config_path", required=True,
                      type=click.Path(exists=True, dir_okay=False))(fn)
    fn = click.option("--seed", type=int, default=None)(fn)
    fn = click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None)(fn)
    fn = click.option("--workers", type=int, default=None)(fn)
    fn = click.option("--cap-dim", type=int, default=None)(fn)
    return fn


def _execute(command, config_path, seed, out_dir, workers, cap_dim):
    text = Path(config_path).read_text()
    try:
        config = parse_config(text, base_dir=Path(config_path).parent)
    except ConfigError as exc:
        for err in exc.errors:
            click.echo(f"config error: {err}", err=True)
        raise SystemExit(2)
    if config.command != command:
        click.echo(
            f"config error: config says command={config.command!r}, "
            f"invoked as {command!r}",
            err=True,
        )
        raise SystemExit(2)
    if seed is not None:
        config.seed = seed
        config.echo["seed"] = str(seed)
    if workers is not None:
        config.workers = workers
    if cap_dim is not None:
        config.cap_dim = cap_dim
        config.echo["cap_dim"] = str(cap_dim)
    resolved_out = out_dir or config.out or os.environ.get("ERASURE_OUT", "erasure-out")
    report = run_command(config)
    body = write_report(report, resolved_out)
    click.echo(
        f"{command}: {report.summary['passed']}/{report.summary['checks']} checks "
        f"passed; report at {body}"
    )
    if report.summary["failed"]:
        click.echo(f"failed: {', '.join(report.summary['failed_names'])}", err=True)
        raise SystemExit(1)


@click.group()
@click.version_option(version=__version__)
def main():
    """Randomness-cost toolkit for catalytic resource erasure."""


def _register(name):
    @main.command(name)
    @_shared_options
    def _cmd(config_path, seed, out_dir, workers, cap_dim, _name=name):
        _execute(_name, config_path, seed, out_dir, workers, cap_dim)

    _cmd.__name__ = name.replace("-", "_")
    return _cmd


for _name in COMMANDS:
    _register(_name)


if __name__ == "__main__":
    main()
