"""Reading datasets, candidate files and run configs."""

from __future__ import annotations

import json
import re
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import ConfigInvalid, CsvInvalid
from .jma import CandidateSpec, Dataset, Term

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

_COVARIATE = re.compile(r"^u(\d+)$")


def read_dataset(path) -> Dataset:
    """Load a CSV with columns ``y``, ``t`` (0/1) and ``u1 .. up``."""
    try:
        df = pd.read_csv(path, encoding="utf-8", float_precision="round_trip")
    except (OSError, ValueError, UnicodeDecodeError) as exc:
        raise CsvInvalid(f"cannot read {path}: {exc}") from exc
    for col in ("y", "t"):
        if col not in df.columns:
            raise CsvInvalid(f"{path}: missing required column '{col}'")
    covs = sorted((int(m.group(1)), c) for c in df.columns if (m := _COVARIATE.match(str(c))))
    if not covs:
        raise CsvInvalid(f"{path}: no covariate columns u1..up")
    if [i for i, _ in covs] != list(range(1, len(covs) + 1)):
        raise CsvInvalid(f"{path}: covariate columns must be u1..u{len(covs)} without gaps")
    cols = ["y", "t"] + [c for _, c in covs]
    try:
        values = df[cols].to_numpy(dtype=np.float64)
    except ValueError as exc:
        raise CsvInvalid(f"{path}: non-numeric values: {exc}") from exc
    if not np.all(np.isfinite(values)):
        raise CsvInvalid(f"{path}: missing or non-finite values")
    t = values[:, 1]
    if not np.all((t == 0) | (t == 1)):
        raise CsvInvalid(f"{path}: column 't' must contain only 0 and 1")
    if t.sum() == 0 or t.sum() == t.size:
        raise CsvInvalid(f"{path}: both treatment arms must be non-empty")
    return Dataset(values[:, 2:], t == 1, values[:, 0])


def write_dataset(path, dataset: Dataset) -> None:
    df = pd.DataFrame(dataset.X, columns=[f"u{i + 1}" for i in range(dataset.p)])
    df.insert(0, "t", dataset.T.astype(int))
    df.insert(0, "y", dataset.y)
    df.to_csv(path, index=False, float_format="%.17g")


def _parse_term(obj, where: str) -> Term:
    if not isinstance(obj, dict):
        raise ConfigInvalid(f"{where}: term must be an object, got {obj!r}")
    if set(obj) == {"inter"}:
        pair = obj["inter"]
        if not (isinstance(pair, list) and len(pair) == 2 and all(isinstance(i, int) and i >= 1 for i in pair)):
            raise ConfigInvalid(f"{where}: 'inter' needs two 1-based covariate indices")
        return Term.interaction(pair[0] - 1, pair[1] - 1)
    if "var" in obj and set(obj) <= {"var", "pow"}:
        var, pw = obj["var"], obj.get("pow", 1)
        if not (isinstance(var, int) and var >= 1) or pw not in (1, 2):
            raise ConfigInvalid(f"{where}: need a 1-based 'var' and 'pow' of 1 or 2")
        return Term.power(var - 1, pw)
    raise ConfigInvalid(f"{where}: unrecognised term {obj!r}")


def parse_candidates(obj) -> list[CandidateSpec]:
    """Candidates from decoded JSON.

    Each entry is either a list of terms (intercept included) or an object
    ``{"terms": [...], "intercept": bool}``. Terms are ``{"var": i, "pow": 1|2}``
    or ``{"inter": [i, j]}`` with 1-based covariate indices matching ``u1..up``.
    """
    if not isinstance(obj, list) or not obj:
        raise ConfigInvalid("candidates must be a non-empty list")
    specs = []
    for k, entry in enumerate(obj):
        where = f"candidate {k + 1}"
        if isinstance(entry, list):
            terms, intercept = entry, True
        elif isinstance(entry, dict) and set(entry) <= {"terms", "intercept"} and "terms" in entry:
            terms, intercept = entry["terms"], entry.get("intercept", True)
            if not isinstance(intercept, bool) or not isinstance(terms, list):
                raise ConfigInvalid(f"{where}: 'intercept' must be boolean and 'terms' a list")
        else:
            raise ConfigInvalid(f"{where}: expected a term list or an object with 'terms'")
        try:
            specs.append(CandidateSpec(k, tuple(_parse_term(t, where) for t in terms), intercept))
        except ValueError as exc:
            raise ConfigInvalid(f"{where}: {exc}") from exc
    return specs


def candidates_to_json(specs) -> list:
    out = []
    for s in specs:
        terms = []
        for t in s.terms:
            a = t.factors
            if len(a) == 1:
                terms.append({"var": a[0] + 1, "pow": 1})
            elif a[0] == a[1]:
                terms.append({"var": a[0] + 1, "pow": 2})
            else:
                terms.append({"inter": [a[0] + 1, a[1] + 1]})
        out.append({"terms": terms, "intercept": s.intercept})
    return out


def read_candidates(path) -> list[CandidateSpec]:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise ConfigInvalid(f"cannot read candidates file {path}: {exc}") from exc
    return parse_candidates(obj)


def read_config(path) -> dict:
    """Decode a JSON or TOML config. A run manifest is accepted and its config reused."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigInvalid(f"cannot read config {path}: {exc}") from exc
    try:
        if path.suffix.lower() == ".toml":
            obj = tomllib.loads(text)
        else:
            try:
                obj = json.loads(text)
            except ValueError:
                obj = tomllib.loads(text)
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigInvalid(f"cannot parse config {path}: {exc}") from exc
    if not isinstance(obj, dict):
        raise ConfigInvalid(f"config {path} must be a key/value mapping")
    if "manifest_version" in obj and "config" in obj:
        obj = obj["config"]
    return obj
