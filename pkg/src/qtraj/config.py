"""Experiment configuration: schema validation and object construction.

Configs are JSON (canonical) or TOML documents. States, channels and
matrices are written with small descriptor forms:

* matrices: nested lists whose entries are real numbers or ``[re, im]``;
* states: ``"maximally_mixed"``, ``"ket:<i>"``, ``"plus"``, ``"plus_i"``,
  ``{"pure": [...]}``, ``{"matrix": [...]}`` or ``{"random": "pure" |
  "mixed"}``;
* channels: ``"identity"``, ``"not"``, ``{"shift_power": r}``,
  ``{"unitary": M}``, ``{"kraus": [M, ...]}``, ``{"causal_break": [l, k]}``,
  ``{"mixture": [{"weight": w, "channel": ...}, ...]}`` or
  ``{"random": "unitary" | "channel"}``.

Random descriptors draw from independent child streams of the run seed,
one per descriptor in document order.
"""

from __future__ import annotations

import ast
import copy
import json
import math
import operator
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from jsonschema import Draft202012Validator

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .control import shift_operator
from .errors import ConfigError
from .qcore import PAULI_X, QuantumChannel, Tolerances, check_density_matrix
from .sampling import random_channel, random_density_matrix, random_pure_state, random_unitary
from .trajectories import build_ic_basis

SCENARIOS = ("tomography", "reconstruct", "markov-test", "game", "mutualinfo", "decouple",
             "scaling-sweep")

_NUMBER = {"type": "number"}
_ENTRY = {"oneOf": [_NUMBER, {"type": "array", "items": _NUMBER, "minItems": 2, "maxItems": 2}]}
_MATRIX = {"type": "array", "minItems": 1, "items": {"type": "array", "minItems": 1, "items": _ENTRY}}
_STATE = {
    "oneOf": [
        {"type": "string", "pattern": r"^(maximally_mixed|plus|plus_i|ket:[0-9]+)$"},
        {"type": "object", "required": ["pure"], "additionalProperties": False,
         "properties": {"pure": {"type": "array", "minItems": 1, "items": _ENTRY}}},
        {"type": "object", "required": ["matrix"], "additionalProperties": False,
         "properties": {"matrix": _MATRIX}},
        {"type": "object", "required": ["random"], "additionalProperties": False,
         "properties": {"random": {"enum": ["pure", "mixed"]}}},
    ]
}
_CHANNEL = {
    "oneOf": [
        {"enum": ["identity", "not"]},
        {"type": "object", "required": ["shift_power"], "additionalProperties": False,
         "properties": {"shift_power": {"type": "integer"}}},
        {"type": "object", "required": ["unitary"], "additionalProperties": False,
         "properties": {"unitary": _MATRIX}},
        {"type": "object", "required": ["kraus"], "additionalProperties": False,
         "properties": {"kraus": {"type": "array", "minItems": 1, "items": _MATRIX}}},
        {"type": "object", "required": ["causal_break"], "additionalProperties": False,
         "properties": {"causal_break": {"type": "array", "items": {"type": "integer", "minimum": 0},
                                         "minItems": 2, "maxItems": 2}}},
        {"type": "object", "required": ["mixture"], "additionalProperties": False,
         "properties": {"mixture": {"type": "array", "minItems": 1, "items": {
             "type": "object", "required": ["weight", "channel"], "additionalProperties": False,
             "properties": {"weight": {"type": "number", "minimum": 0},
                            "channel": {"$ref": "#/$defs/channel"}}}}}},
        {"type": "object", "required": ["random"], "additionalProperties": False,
         "properties": {"random": {"enum": ["unitary", "channel"]}}},
    ],
}
_TIME = {"oneOf": [_NUMBER, {"type": "string", "pattern": r"^[0-9pi+\-*/(). ]+$"}]}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["scenario", "system", "environment", "step_time"],
    "additionalProperties": False,
    "properties": {
        "scenario": {"enum": list(SCENARIOS)},
        "system": {
            "type": "object", "required": ["d", "s_spectrum"], "additionalProperties": False,
            "properties": {
                "d": {"type": "integer", "minimum": 2, "maximum": 8},
                "s_spectrum": {"type": "array", "items": _NUMBER, "minItems": 2},
                "initial_state": _STATE,
            },
        },
        "environment": {
            "type": "object", "required": ["d_e", "b_spectrum", "initial_state"],
            "additionalProperties": False,
            "properties": {
                "d_e": {"type": "integer", "minimum": 1, "maximum": 8},
                "b_spectrum": {"type": "array", "items": _NUMBER, "minItems": 1},
                "initial_state": _STATE,
                "reset": {"type": "boolean"},
            },
        },
        "steps": {"type": "integer", "minimum": 1, "maximum": 8},
        "step_time": _TIME,
        "controls": {"type": "array", "items": {"$ref": "#/$defs/channel"}},
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "tolerances": {
            "type": "object", "additionalProperties": False,
            "properties": {k: {"type": "number", "exclusiveMinimum": 0}
                           for k in ("herm", "trace", "psd", "unitary", "markov")},
        },
        "options": {"type": "object"},
    },
    "$defs": {"channel": _CHANNEL},
}

_VALIDATOR = Draft202012Validator(SCHEMA)

_OPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
        ast.Div: operator.truediv}


def parse_time(value) -> float:
    """Number or arithmetic expression in ``pi`` such as ``"3*pi/8"``."""
    if isinstance(value, (int, float)):
        return float(value)

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return float(node.value)
        if isinstance(node, ast.Name) and node.id == "pi":
            return math.pi
        if isinstance(node, ast.BinOp) and type(node.op) in _OPS:
            return _OPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            v = ev(node.operand)
            return -v if isinstance(node.op, ast.USub) else v
        raise ValueError(f"unsupported expression {value!r}")

    return ev(ast.parse(str(value), mode="eval"))


def parse_matrix(m) -> np.ndarray:
    """Nested list of reals or ``[re, im]`` pairs to a complex array."""
    def entry(x):
        return complex(x[0], x[1]) if isinstance(x, (list, tuple)) else complex(x)

    rows = [[entry(x) for x in row] for row in m]
    if len({len(r) for r in rows}) != 1:
        raise ValueError("ragged matrix literal")
    return np.array(rows, dtype=complex)


def encode_matrix(m) -> list:
    """Complex array to nested ``[re, im]`` lists (row major)."""
    m = np.asarray(m, dtype=complex)
    if m.ndim == 1:
        return [[float(z.real), float(z.imag)] for z in m]
    return [encode_matrix(row) for row in m]


def _uses_random(node) -> bool:
    if isinstance(node, dict):
        return "random" in node or any(_uses_random(v) for v in node.values())
    if isinstance(node, list):
        return any(_uses_random(v) for v in node)
    return False


@dataclass(frozen=True)
class ExperimentConfig:
    """A validated configuration document plus derived settings."""

    document: dict
    scenario: str
    d: int
    d_e: int
    steps: int
    step_time: float
    seed: int | None
    tolerances: Tolerances
    markov_tol: float

    @property
    def options(self) -> dict:
        return self.document.get("options", {})


def _dimension_checks(doc) -> list:
    errs = []
    sysd, env = doc["system"], doc["environment"]
    d, d_e = sysd["d"], env["d_e"]
    if len(sysd["s_spectrum"]) != d:
        errs.append(("/system/s_spectrum", f"expected {d} eigenvalues, got {len(sysd['s_spectrum'])}"))
    if len(env["b_spectrum"]) != d_e:
        errs.append(("/environment/b_spectrum",
                     f"expected {d_e} eigenvalues, got {len(env['b_spectrum'])}"))

    def check_state(state, dim, path):
        if isinstance(state, str) and state.startswith("ket:") and int(state[4:]) >= dim:
            errs.append((path, f"basis index out of range for dimension {dim}"))
        elif isinstance(state, dict) and "pure" in state and len(state["pure"]) != dim:
            errs.append((path + "/pure", f"expected {dim} amplitudes"))
        elif isinstance(state, dict) and "matrix" in state:
            m = state["matrix"]
            if len(m) != dim or any(len(r) != dim for r in m):
                errs.append((path + "/matrix", f"expected a {dim}x{dim} matrix"))

    if "initial_state" in sysd:
        check_state(sysd["initial_state"], d, "/system/initial_state")
    check_state(env["initial_state"], d_e, "/environment/initial_state")
    opts = doc.get("options", {})
    if "rho2_prime" in opts:
        check_state(opts["rho2_prime"], d, "/options/rho2_prime")

    def check_channel(ch, path):
        if isinstance(ch, dict):
            for key in ("unitary",):
                if key in ch and (len(ch[key]) != d or any(len(r) != d for r in ch[key])):
                    errs.append((f"{path}/{key}", f"expected a {d}x{d} matrix"))
            if "kraus" in ch:
                for i, k in enumerate(ch["kraus"]):
                    if len(k) != d or any(len(r) != d for r in k):
                        errs.append((f"{path}/kraus/{i}", f"expected a {d}x{d} matrix"))
            if "causal_break" in ch and max(ch["causal_break"]) >= d * d:
                errs.append((f"{path}/causal_break", f"indices must be below {d * d}"))
            if "mixture" in ch:
                for i, item in enumerate(ch["mixture"]):
                    check_channel(item["channel"], f"{path}/mixture/{i}/channel")
        elif ch == "not" and d != 2:
            errs.append((path, "the NOT gate needs d = 2; use shift_power"))

    for i, ch in enumerate(doc.get("controls", [])):
        check_channel(ch, f"/controls/{i}")
    steps = doc.get("steps", 2)
    n_ctrl = len(doc.get("controls", []))
    if doc["scenario"] == "reconstruct" and n_ctrl != steps - 1:
        errs.append(("/controls", f"reconstruct needs steps - 1 = {steps - 1} controls"))
    if doc["scenario"] == "game" and n_ctrl != 1:
        errs.append(("/controls", "game needs exactly one control (Bob's operation)"))
    if doc["scenario"] in ("reconstruct", "game", "mutualinfo") and "initial_state" not in sysd:
        errs.append(("/system/initial_state", "required for this scenario"))
    if _uses_random(doc) and "seed" not in doc:
        errs.append(("/seed", "a seed is required when random descriptors are used"))
    try:
        parse_time(doc["step_time"])
    except (ValueError, SyntaxError, ZeroDivisionError) as exc:
        errs.append(("/step_time", str(exc)))
    return errs


def _pointer(path) -> str:
    return "".join(f"/{p}" for p in path)


def validate_config(document) -> ExperimentConfig:
    """Validate a parsed config document.

    Raises:
        ConfigError: listing every violation with its JSON pointer.
    """
    errs = [(_pointer(e.absolute_path), e.message)
            for e in sorted(_VALIDATOR.iter_errors(document), key=lambda e: list(e.absolute_path))]
    if errs:
        raise ConfigError(errs)
    errs = _dimension_checks(document)
    if errs:
        raise ConfigError(errs)
    tol_doc = document.get("tolerances", {})
    tol = Tolerances(**{k: v for k, v in tol_doc.items() if k != "markov"})
    return ExperimentConfig(
        document=copy.deepcopy(document),
        scenario=document["scenario"],
        d=document["system"]["d"],
        d_e=document["environment"]["d_e"],
        steps=document.get("steps", 2),
        step_time=parse_time(document["step_time"]),
        seed=document.get("seed"),
        tolerances=tol,
        markov_tol=tol_doc.get("markov", 1e-6),
    )


def load_config(path) -> ExperimentConfig:
    """Read a ``.json`` or ``.toml`` file and validate it."""
    path = Path(path)
    text = path.read_bytes()
    try:
        if path.suffix.lower() == ".toml":
            doc = tomllib.loads(text.decode())
        else:
            doc = json.loads(text)
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError([("", f"cannot parse {path.name}: {exc}")]) from exc
    return validate_config(doc)


class Builder:
    """Turns descriptors into arrays and channels with reproducible randomness.

    Each random descriptor draws from its own child of
    ``SeedSequence(seed)``, handed out in construction order.
    """

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self._seq = np.random.SeedSequence(cfg.seed if cfg.seed is not None else 0)

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self._seq.spawn(1)[0])

    def state(self, desc, dim: int) -> np.ndarray:
        if isinstance(desc, str):
            if desc == "maximally_mixed":
                return np.eye(dim, dtype=complex) / dim
            v = np.zeros(dim, dtype=complex)
            if desc.startswith("ket:"):
                v[int(desc[4:])] = 1.0
            elif desc == "plus":
                v[:] = 1 / math.sqrt(dim)
            elif desc == "plus_i":
                v[0], v[1] = 1 / math.sqrt(2), 1j / math.sqrt(2)
            return np.outer(v, v.conj())
        if "pure" in desc:
            v = parse_matrix([desc["pure"]])[0]
            v = v / np.linalg.norm(v)
            return np.outer(v, v.conj())
        if "matrix" in desc:
            return check_density_matrix(parse_matrix(desc["matrix"]), self.cfg.tolerances)
        if desc["random"] == "pure":
            v = random_pure_state(dim, self.rng())
            return np.outer(v, v.conj())
        return random_density_matrix(dim, self.rng())

    def channel(self, desc, basis=None) -> QuantumChannel:
        d = self.cfg.d
        if desc == "identity":
            return QuantumChannel.identity(d)
        if desc == "not":
            return QuantumChannel.from_unitary(PAULI_X, name="not")
        if "shift_power" in desc:
            g = np.linalg.matrix_power(shift_operator(d), desc["shift_power"] % d)
            return QuantumChannel.from_unitary(g, name=f"shift^{desc['shift_power']}")
        if "unitary" in desc:
            u = parse_matrix(desc["unitary"])
            if np.max(np.abs(u @ u.conj().T - np.eye(d))) > self.cfg.tolerances.unitary:
                raise ConfigError([("", "unitary literal is not unitary")])
            return QuantumChannel.from_unitary(u, name="unitary")
        if "kraus" in desc:
            ch = QuantumChannel.from_kraus([parse_matrix(k) for k in desc["kraus"]], name="kraus")
            if not ch.is_tp(self.cfg.tolerances.trace):
                raise ConfigError([("", "Kraus literal is not trace preserving")])
            return ch
        if "causal_break" in desc:
            if basis is None:
                basis = build_ic_basis(d)
            l, k = desc["causal_break"]
            return basis.causal_break(l, k)
        if "mixture" in desc:
            weights = np.array([item["weight"] for item in desc["mixture"]], dtype=float)
            if weights.sum() <= 0:
                raise ConfigError([("", "mixture weights sum to zero")])
            weights = weights / weights.sum()
            parts = [self.channel(item["channel"], basis) for item in desc["mixture"]]
            superop = sum(w * p.superop for w, p in zip(weights, parts))
            return QuantumChannel(superop, d, d, name="mixture")
        if desc["random"] == "unitary":
            return QuantumChannel.from_unitary(random_unitary(d, self.rng()), name="random unitary")
        return random_channel(d, self.rng())
