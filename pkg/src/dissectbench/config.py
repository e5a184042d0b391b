"""Versioned YAML configuration with strict validation.

Unknown keys are rejected, every problem in a bad file is reported at once,
and save/load round-trips field-for-field.
"""

from __future__ import annotations

import numbers

import yaml

from .errors import ConfigError

SCHEMA_VERSION = 1


def _num(lo=None, hi=None, strict_lo=False):
    def check(v, path):
        if not isinstance(v, numbers.Real) or isinstance(v, bool):
            return f"{path}: expected a number, got {type(v).__name__}"
        if lo is not None and (v <= lo if strict_lo else v < lo):
            op = ">" if strict_lo else ">="
            return f"{path}: must be {op} {lo}"
        if hi is not None and v > hi:
            return f"{path}: must be <= {hi}"
        return None
    return check


def _int(lo=None, hi=None):
    base = _num(lo, hi)

    def check(v, path):
        if not isinstance(v, numbers.Integral) or isinstance(v, bool):
            return f"{path}: expected an integer, got {type(v).__name__}"
        return base(v, path)
    return check


def _bool(v, path):
    if not isinstance(v, bool):
        return f"{path}: expected a boolean"
    return None


def _choice(*options):
    def check(v, path):
        if v not in options:
            return f"{path}: must be one of {sorted(options)}"
        return None
    return check


def _str(v, path):
    if not isinstance(v, str):
        return f"{path}: expected a string"
    return None


def _vec(n, item=None):
    def check(v, path):
        if not isinstance(v, (list, tuple)) or len(v) != n:
            return f"{path}: expected a list of {n} numbers"
        for k, x in enumerate(v):
            err = (item or _num())(x, f"{path}[{k}]")
            if err:
                return err
        return None
    return check


def _points(v, path):
    if not isinstance(v, (list, tuple)) or len(v) < 2:
        return f"{path}: expected at least 2 [u, v] pixel pairs"
    for k, p in enumerate(v):
        err = _vec(2, _int(0))(p, f"{path}[{k}]")
        if err:
            return err
    return None


# Each leaf is (default, checker); nested dicts mirror the YAML layout.
SCHEMA = {
    "schema_version": (SCHEMA_VERSION, _choice(SCHEMA_VERSION)),
    "seed": (0, _int(0)),
    "scale_mm_per_px": (0.1, _num(0, strict_lo=True)),
    "scene": {
        "mesh": {
            "kind": ("grid", _choice("grid", "obj")),
            "rows": (13, _int(3)),
            "cols": (13, _int(3)),
            "spacing": (2.5e-3, _num(0, strict_lo=True)),
            "slope_deg": (0.0, _num(-60, 60)),
            "path": ("", _str),
        },
        "camera": {
            "distance": (0.25, _num(0, strict_lo=True)),
            "fx": (2500.0, _num(1)),
            "fy": (2500.0, _num(1)),
            "width": (640, _int(16)),
            "height": (480, _int(16)),
            "tilt_deg": (20.0, _num(-80, 80)),
        },
        "pin_mode": ("top", _choice("none", "borders_y", "top")),
        "goal_points": ([[150, 182], [490, 182]], _points),
        "goal_max_turn_deg": (30.0, _num(0, 180)),
        "grasp_px": ([320, 235], _vec(2, _int(0))),
    },
    "material": {
        "distance_compliance": (1e-8, _num(0)),
        "bending_compliance": (1e-4, _num(0)),
        "gravity": ([0.0, 0.0, -0.5], _vec(3)),
        "dt": (1.0 / 60.0, _num(0, strict_lo=True)),
        "substeps": (4, _int(1)),
        "iterations": (10, _int(1)),
        "damping": (0.99, _num(0, 1)),
        "mass_per_particle": (1e-5, _num(0, strict_lo=True)),
    },
    "estimator": {
        "spacing": (12.0, _num(1)),
        "extent": (36.0, _num(1)),
        "tau": (3.0, _num(1, strict_lo=True)),
        "noise_std": (1.0, _num(0)),
        "mode": ("max", _choice("max", "final")),
        "diagonals": (False, _bool),
    },
    "control": {
        "mode": ("mppi", _choice("mppi", "normal", "expert")),
        "samples": (32, _int(2)),
        "horizon": (6, _int(1)),
        "noise_std": (1.5e-3, _num(0)),
        "temperature": (0.5, _num(0, strict_lo=True)),
        "steps": (35, _int(1)),
        "retraction_step": (5e-4, _num(0, strict_lo=True)),
        "lift": (0.1, _num(0)),
        "lam_c": (1.0, _num(0)),
        "lam_d": (1.0, _num(0)),
        "w_n": (1.0, _num(0)),
        "w_s": (0.5, _num(0)),
        "visible_stride": (5, _int(1)),
        "optimistic_internal": (True, _bool),
    },
    "planner": {
        "segment_length": (60.0, _num(1)),
        "center_radius": (25.0, _num(1)),
        "n_centers": (200, _int(1)),
        "angle_bins": (6, _int(1)),
        "uncut_tau": (2.5, _num(1, strict_lo=True)),
    },
    "agent": {
        "short_cut_fraction": (1.0, _num(0, 1, strict_lo=True)),
        "attachment_skips": (0, _int(0)),
        "lateral_bias_px": (0.0, _num(-50, 50)),
        "retract_distance_mm": (0.2, _num(0)),
        "settle_steps": (10, _int(0)),
        "skip_min_span_px": (150.0, _num(0)),
    },
    "loop": {
        "max_attempts": (3, _int(1)),
        "feedback": (True, _bool),
        "corridor_halfwidth_mm": (2.0, _num(0, strict_lo=True)),
        "human_gate": (False, _bool),
    },
}


def default_config():
    def build(node):
        if isinstance(node, dict):
            return {k: build(v) for k, v in node.items()}
        default, _ = node
        return default if not isinstance(default, list) else \
            [list(x) if isinstance(x, list) else x for x in default]
    return build(SCHEMA)


def _walk(schema, raw, path, problems, out):
    for key, node in schema.items():
        here = f"{path}.{key}" if path else key
        if isinstance(node, dict):
            sub = raw.get(key, {})
            if not isinstance(sub, dict):
                problems.append(f"{here}: expected a mapping")
                sub = {}
            out[key] = {}
            _walk(node, sub, here, problems, out[key])
        else:
            default, check = node
            if key in raw:
                val = raw[key]
                err = check(val, here)
                if err:
                    problems.append(err)
                    val = default
            else:
                val = default
            out[key] = val
    for key in raw:
        if key not in schema:
            here = f"{path}.{key}" if path else key
            problems.append(f"{here}: unknown key")


def validate_config(raw) -> dict:
    """Normalize a raw mapping against the schema; every problem is
    collected before raising ConfigError."""
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(["top level: expected a mapping"])
    problems: list = []
    out: dict = {}
    _walk(SCHEMA, raw, "", problems, out)
    if "schema_version" in raw and raw["schema_version"] != SCHEMA_VERSION:
        pass  # already reported by the choice check
    if out["estimator"]["extent"] < out["estimator"]["spacing"]:
        problems.append("estimator.extent: must be >= estimator.spacing")
    if problems:
        raise ConfigError(problems)
    return out


def load_config(path) -> dict:
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    return validate_config(raw)


def save_config(cfg, path):
    with open(path, "w") as fh:
        yaml.safe_dump(cfg, fh, sort_keys=False)


def apply_overrides(cfg, overrides):
    """Apply dotted-path overrides like control.samples=64; values parse as
    YAML scalars. Returns a re-validated config."""
    import copy
    out = copy.deepcopy(cfg)
    problems = []
    for ov in overrides:
        if "=" not in ov:
            problems.append(f"override {ov!r}: expected key.path=value")
            continue
        key, _, raw_val = ov.partition("=")
        node = out
        parts = key.strip().split(".")
        for p in parts[:-1]:
            if not isinstance(node, dict) or p not in node:
                problems.append(f"override {ov!r}: unknown key {key!r}")
                node = None
                break
            node = node[p]
        if node is None:
            continue
        if not isinstance(node, dict) or parts[-1] not in node:
            problems.append(f"override {ov!r}: unknown key {key!r}")
            continue
        node[parts[-1]] = yaml.safe_load(raw_val)
    if problems:
        raise ConfigError(problems)
    return validate_config(out)
