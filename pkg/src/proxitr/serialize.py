"""JSON round-tripping of fitted objects (policies and bridge pairs)."""
from __future__ import annotations

import numpy as np

from .bridges import BridgePair, BridgeTuningReport, KernelExpansion
from .data import Standardization
from .errors import InvalidArgumentError
from .kernels import KernelSpec, NystromMap
from .policy import AggregateDecision, LinearDecision, Policy

__all__ = ["policy_to_dict", "policy_from_dict", "bridges_to_dict", "bridges_from_dict"]


def _arr(x) -> list:
    return np.asarray(x).tolist()


def _kernel_to_dict(k: KernelSpec) -> dict:
    return {"gamma": k.gamma, "input_dim": k.input_dim}


def _kernel_from_dict(d: dict) -> KernelSpec:
    return KernelSpec(gamma=float(d["gamma"]), input_dim=int(d["input_dim"]))


def _nystrom_to_dict(m: NystromMap | None):
    if m is None:
        return None
    return {"landmarks": _arr(m.landmarks), "whitening": _arr(m.whitening),
            "kernel": _kernel_to_dict(m.kernel)}


def _nystrom_from_dict(d) -> NystromMap | None:
    if d is None:
        return None
    return NystromMap(landmarks=np.array(d["landmarks"], dtype=float),
                      whitening=np.array(d["whitening"], dtype=float),
                      kernel=_kernel_from_dict(d["kernel"]))


def _expansion_to_dict(e: KernelExpansion) -> dict:
    return {"type": "kernel_expansion", "kernel": _kernel_to_dict(e.kernel),
            "centers": _arr(e.centers), "coefficients": _arr(e.coefficients),
            "nystrom": _nystrom_to_dict(e.nystrom)}


def _expansion_from_dict(d: dict) -> KernelExpansion:
    return KernelExpansion(kernel=_kernel_from_dict(d["kernel"]),
                           centers=np.array(d["centers"], dtype=float),
                           coefficients=np.array(d["coefficients"], dtype=float),
                           nystrom=_nystrom_from_dict(d.get("nystrom")))


def _decision_to_dict(dec) -> dict:
    if isinstance(dec, LinearDecision):
        return {"type": "linear", "weights": _arr(dec.weights),
                "intercept": dec.intercept}
    if isinstance(dec, AggregateDecision):
        return {"type": "aggregate",
                "components": [_decision_to_dict(c) for c in dec.components]}
    if isinstance(dec, KernelExpansion):
        return _expansion_to_dict(dec)
    raise InvalidArgumentError(f"cannot serialize decision of type {type(dec)!r}")


def _decision_from_dict(d: dict):
    kind = d["type"]
    if kind == "linear":
        return LinearDecision(weights=np.array(d["weights"], dtype=float),
                              intercept=float(d["intercept"]))
    if kind == "aggregate":
        return AggregateDecision(tuple(_decision_from_dict(c) for c in d["components"]))
    if kind == "kernel_expansion":
        return _expansion_from_dict(d)
    raise InvalidArgumentError(f"unknown decision type {kind!r}")


def policy_to_dict(p: Policy) -> dict:
    return {"features": p.features, "decision": _decision_to_dict(p.decision),
            "input_center": _arr(p.input_center), "input_scale": _arr(p.input_scale)}


def policy_from_dict(d: dict) -> Policy:
    return Policy(features=d["features"], decision=_decision_from_dict(d["decision"]),
                  input_center=np.array(d["input_center"], dtype=float),
                  input_scale=np.array(d["input_scale"], dtype=float))


def _standardization_to_dict(s: Standardization) -> dict:
    return {k: _arr(getattr(s, k)) if k.startswith(("l_", "z_", "w_")) else getattr(s, k)
            for k in ("l_mean", "l_scale", "z_mean", "z_scale", "w_mean", "w_scale",
                      "y_mean", "y_scale")}


def _standardization_from_dict(d: dict) -> Standardization:
    return Standardization(
        l_mean=np.array(d["l_mean"]), l_scale=np.array(d["l_scale"]),
        z_mean=np.array(d["z_mean"]), z_scale=np.array(d["z_scale"]),
        w_mean=np.array(d["w_mean"]), w_scale=np.array(d["w_scale"]),
        y_mean=float(d["y_mean"]), y_scale=float(d["y_scale"]))


def _report_to_dict(r: BridgeTuningReport) -> dict:
    return {"role": r.role, "arm": r.arm, "gamma_selected": r.gamma_selected,
            "gamma_grid": _arr(r.gamma_grid), "gamma_adversary": r.gamma_adversary,
            "s_selected": r.s_selected, "s_grid": list(r.s_grid),
            "loss_surface": _arr(r.loss_surface), "folds": r.folds,
            "nystrom": r.nystrom, "n_fit": r.n_fit, "xi": r.xi,
            "lambda_product": r.lambda_product}


def _report_from_dict(d: dict) -> BridgeTuningReport:
    return BridgeTuningReport(
        role=d["role"], arm=int(d["arm"]), gamma_selected=float(d["gamma_selected"]),
        gamma_grid=np.array(d["gamma_grid"]), gamma_adversary=float(d["gamma_adversary"]),
        s_selected=float(d["s_selected"]), s_grid=tuple(d["s_grid"]),
        loss_surface=np.array(d["loss_surface"]), folds=int(d["folds"]),
        nystrom=d["nystrom"], n_fit=int(d["n_fit"]), xi=float(d["xi"]),
        lambda_product=float(d["lambda_product"]))


def bridges_to_dict(b: BridgePair) -> dict:
    return {
        "h_plus": _expansion_to_dict(b.h_plus), "h_minus": _expansion_to_dict(b.h_minus),
        "q_plus": _expansion_to_dict(b.q_plus), "q_minus": _expansion_to_dict(b.q_minus),
        "standardization": _standardization_to_dict(b.standardization),
        "h_reports": {str(a): _report_to_dict(r) for a, r in b.h_reports.items()},
        "q_reports": {str(a): _report_to_dict(r) for a, r in b.q_reports.items()},
    }


def bridges_from_dict(d: dict) -> BridgePair:
    return BridgePair(
        h_plus=_expansion_from_dict(d["h_plus"]), h_minus=_expansion_from_dict(d["h_minus"]),
        q_plus=_expansion_from_dict(d["q_plus"]), q_minus=_expansion_from_dict(d["q_minus"]),
        standardization=_standardization_from_dict(d["standardization"]),
        h_reports={int(a): _report_from_dict(r) for a, r in d["h_reports"].items()},
        q_reports={int(a): _report_from_dict(r) for a, r in d["q_reports"].items()})
