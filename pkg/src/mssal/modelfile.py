"""JSON persistence for fitted mixtures.

Floats are written with 17 significant digits, so loading and saving again
reproduces the file byte for byte.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Any

import numpy as np

from .distributions import ComponentParams, MixtureModel

SCHEMA_VERSION = 1

__all__ = ["SCHEMA_VERSION", "ModelFileError", "dumps", "load_model", "model_to_dict", "save_model"]


class ModelFileError(ValueError):
    pass


def _encode(obj: Any, indent: int = 0) -> str:
    pad, inner = " " * indent, " " * (indent + 2)
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if not math.isfinite(v):
            raise ModelFileError(f"cannot store non-finite value {v}")
        return format(v, ".17g")
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, (list, tuple)):
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in obj):
            return "[" + ", ".join(_encode(v) for v in obj) + "]"
        return "[\n" + ",\n".join(inner + _encode(v, indent + 2) for v in obj) + "\n" + pad + "]"
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = (f"{inner}{json.dumps(str(k))}: {_encode(v, indent + 2)}" for k, v in obj.items())
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    raise TypeError(f"cannot encode {type(obj).__name__}")


def dumps(obj: Any) -> str:
    return _encode(obj) + "\n"


_FIT_KEYS = ("loglik", "bic", "rho", "n", "n_iter", "seed", "converged")


def model_to_dict(model: MixtureModel, **fit) -> dict:
    """Model plus fit metadata (``loglik``, ``bic``, ``rho``, ``n``,
    ``n_iter``, ``seed``, ``converged``) as a JSON-ready dict."""
    meta = {"loglik": model.loglik, "bic": model.bic, "n_iter": model.n_iter}
    meta.update({k: v for k, v in model.meta.items() if k in _FIT_KEYS})
    meta.update(fit)
    return {
        "schema_version": SCHEMA_VERSION,
        "G": model.n_components,
        "p": model.p,
        "weights": [float(w) for w in model.weights],
        "components": [
            {
                "mu": c.mu.tolist(),
                "beta": c.beta.tolist(),
                "d_mat": c.d_mat.ravel(order="C").tolist(),
                "a_diag": c.a_diag.tolist(),
            }
            for c in model.components
        ],
        "fit": {k: meta.get(k) for k in _FIT_KEYS},
    }


def save_model(model: MixtureModel, path, extra: dict | None = None, **fit) -> None:
    doc = model_to_dict(model, **fit)
    if extra:
        doc.update(extra)
    try:
        Path(path).write_text(dumps(doc), encoding="utf-8")
    except OSError as err:
        raise OSError(f"cannot write {path}: {err.strerror or err}") from err


def _model_from_dict(doc: dict) -> MixtureModel:
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ModelFileError(
            f"unsupported schema_version {doc.get('schema_version')!r}, expected {SCHEMA_VERSION}"
        )
    try:
        G, p = int(doc["G"]), int(doc["p"])
        comps = []
        for c in doc["components"]:
            d = np.asarray(c["d_mat"], dtype=float).reshape(p, p)
            comps.append(ComponentParams(c["mu"], c["beta"], d, c["a_diag"]))
        fit = doc.get("fit") or {}
        model = MixtureModel(
            doc["weights"], tuple(comps), fit.get("loglik"), fit.get("bic"), fit.get("n_iter"),
            meta={k: v for k, v in fit.items() if k not in ("loglik", "bic", "n_iter")},
        )
    except (KeyError, TypeError, ValueError) as err:
        raise ModelFileError(f"invalid model file: {err}") from err
    if model.n_components != G or model.p != p:
        raise ModelFileError(f"header says G={G}, p={p} but found G={model.n_components}, p={model.p}")
    return model


def load_model(path) -> tuple[MixtureModel, dict]:
    """Return the model and the raw document (for extra keys such as a
    selection table)."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as err:
        raise OSError(f"cannot read {path}: {err.strerror or err}") from err
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as err:
        raise ModelFileError(f"{path}: not valid JSON ({err.msg} at line {err.lineno})") from err
    return _model_from_dict(doc), doc
