"""JSON documents for inference results (memory, addresses, ELBO trace, pseudocounts)."""

from __future__ import annotations

import json
from pathlib import Path

from .distributions import FullGaussian, MatrixNormalDist, OneHotCategorical
from .engine import InferenceResult
from .errors import SchemaError
from .models import AddressBlock, AddressPosterior, MemoryState, ModelSpec, PseudocountTable, Variant


def _weight_to_dict(w):
    if isinstance(w, OneHotCategorical):
        return {"probs": w.probs.tolist()}
    return {"mean": w.mean.tolist(), "cov": w.cov.tolist()}


def _weight_from_dict(d):
    if "probs" in d:
        return OneHotCategorical(d["probs"])
    return FullGaussian(d["mean"], d["cov"])


def result_to_dict(result: InferenceResult) -> dict:
    mem = result.memory
    return {
        "provenance": result.provenance,
        "variant": mem.variant.value,
        "elbo_trace": list(result.elbo_trace),
        "memory": [[{"R": m.R.tolist(), "U": m.U.tolist()} for m in row] for row in mem.memory],
        "bias": None if mem.bias is None else [
            [{"mean": b.mean.tolist(), "cov": b.cov.tolist()} for b in row] for row in mem.bias],
        "pseudocounts": None if mem.pseudocounts is None else mem.pseudocounts.to_list(),
        "addresses": [
            {"blocks": [{"assignment": blk.assignment.probs.tolist(),
                         "weights": [_weight_to_dict(w) for w in blk.weights]} for blk in a.blocks]}
            for a in result.addresses
        ],
    }


def result_from_dict(d: dict) -> InferenceResult:
    try:
        variant = Variant(d["variant"])
        memory = [[MatrixNormalDist(m["R"], m["U"]) for m in row] for row in d["memory"]]
        bias = None
        if d.get("bias") is not None:
            bias = [[FullGaussian(b["mean"], b["cov"]) for b in row] for row in d["bias"]]
        pseudo = None
        if d.get("pseudocounts") is not None:
            pseudo = PseudocountTable.from_list(d["pseudocounts"], H=len(memory[0]), G=len(memory))
        addresses = [
            AddressPosterior([AddressBlock(OneHotCategorical(b["assignment"]),
                                           [_weight_from_dict(w) for w in b["weights"]])
                              for b in a["blocks"]])
            for a in d["addresses"]
        ]
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"malformed inference result: {exc}") from exc
    state = MemoryState(variant, memory, bias, pseudo)
    return InferenceResult(state, addresses, d.get("elbo_trace", []), d.get("provenance", ""))


def save_result(path, result: InferenceResult, spec: ModelSpec | None = None, extra: dict | None = None):
    doc = result_to_dict(result)
    if spec is not None:
        doc["spec"] = spec.to_dict()
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def load_result(path) -> tuple[InferenceResult, ModelSpec | None]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"posterior file is not valid JSON: {exc}") from exc
    spec = ModelSpec.from_dict(doc["spec"]) if doc.get("spec") else None
    return result_from_dict(doc), spec
