"""Label oracles.

Simulated oracles answer from dataset ground truth: clean, noisy (stable
per-sample corruption within a superclass), and OOD-rejecting for foreign
records. The human oracle round-trips through the queue service over HTTP.
"""

from __future__ import annotations

import base64
import hashlib
import logging
import time
from dataclasses import dataclass

import numpy as np

from .datapool import Dataset
from .errors import ContractError

log = logging.getLogger(__name__)

LABEL = "label"
REJECT_OOD = "reject_ood"
PENDING = "pending"


@dataclass(frozen=True)
class OracleResponse:
    sample_id: str
    outcome: str  # label / reject_ood / pending
    label: int | None = None

    def __post_init__(self):
        if self.outcome not in (LABEL, REJECT_OOD, PENDING):
            raise ContractError(f"unknown outcome {self.outcome!r}")
        if (self.outcome == LABEL) != (self.label is not None):
            raise ContractError("label outcomes carry a class index, others do not")


@dataclass(frozen=True)
class NoiseSpec:
    noise_rate: float
    superclass_map: dict[int, int] | None = None
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.noise_rate <= 1.0):
            raise ContractError(f"noise_rate must lie in [0,1], got {self.noise_rate}")


def _unit_hash(*parts) -> float:
    """Deterministic uniform draw in [0,1) from the joined parts."""
    digest = hashlib.sha256("|".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(digest[:8], "big") / 2.0**64


def clean_label(dataset: Dataset, sample_id: str) -> OracleResponse:
    """The ground-truth label. Foreign samples must go to ood_response."""
    if dataset.origin_of(sample_id) is not None:
        raise ContractError(f"{sample_id!r} is foreign; route through ood_response")
    return OracleResponse(sample_id, LABEL, dataset.true_label_of(sample_id))


def noisy_label(dataset: Dataset, sample_id: str, spec: NoiseSpec) -> OracleResponse:
    """Ground truth, corrupted with probability noise_rate.

    The corruption decision and the replacement label are hashes of
    (seed, sample_id), so a sample answers identically whenever queried.
    Replacements come uniformly from the sample's superclass, excluding the
    true label; with no superclass map every class shares one superclass.
    """
    if dataset.origin_of(sample_id) is not None:
        raise ContractError(f"{sample_id!r} is foreign; route through ood_response")
    true = dataset.true_label_of(sample_id)
    if _unit_hash(spec.seed, sample_id, "corrupt") >= spec.noise_rate:
        return OracleResponse(sample_id, LABEL, true)
    if spec.superclass_map is None:
        peers = [c for c in range(dataset.num_classes) if c != true]
    else:
        group = spec.superclass_map[true]
        peers = sorted(
            c for c, g in spec.superclass_map.items() if g == group and c != true
        )
    if not peers:
        log.warning("noisy oracle: class %d is a singleton superclass, "
                    "returning the true label for %s", true, sample_id)
        return OracleResponse(sample_id, LABEL, true)
    pick = int(_unit_hash(spec.seed, sample_id, "choice") * len(peers))
    return OracleResponse(sample_id, LABEL, peers[min(pick, len(peers) - 1)])


def ood_response(dataset: Dataset, sample_id: str) -> OracleResponse:
    """Rejection for a foreign sample; the loop returns it to U."""
    if dataset.origin_of(sample_id) is None:
        raise ContractError(f"{sample_id!r} is in-distribution, not foreign")
    return OracleResponse(sample_id, REJECT_OOD)


def answer_query(
    dataset: Dataset,
    sample_id: str,
    noise: NoiseSpec | None = None,
    reject_foreign: bool = True,
) -> OracleResponse:
    """Route one query: foreign to rejection, the rest to (noisy) labels."""
    if reject_foreign and dataset.origin_of(sample_id) is not None:
        return ood_response(dataset, sample_id)
    if noise is not None and noise.noise_rate > 0:
        return noisy_label(dataset, sample_id, noise)
    return clean_label(dataset, sample_id)


# ---------------------------------------------------------------------------
# human oracle over HTTP
# ---------------------------------------------------------------------------

def render_item(dataset: Dataset, sample_id: str) -> dict:
    """One queue item: raw uint8 pixels (HWC order) as base64 plus geometry."""
    feats = np.clip(dataset.features_for([sample_id])[0], 0.0, 1.0)
    raw = np.round(feats * 255.0).astype(np.uint8)
    if len(dataset.feature_shape) == 3:
        c, h, w = dataset.feature_shape
        pixels = raw.reshape(c, h, w).transpose(1, 2, 0)
    else:
        c, h, w = 1, 1, dataset.dim
        pixels = raw.reshape(1, w, 1)
    return {
        "sample_id": sample_id,
        "image_base64": base64.b64encode(pixels.tobytes()).decode(),
        "width": w,
        "height": h,
        "channels": c,
    }


def human_oracle_session(
    dataset: Dataset,
    sample_ids: list[str],
    base_url: str,
    run_id: str,
    stage: int,
    timeout: float = 300.0,
    poll_interval: float = 0.25,
    class_names: list[str] | None = None,
    client=None,
) -> list[OracleResponse]:
    """Enqueue a batch for a human annotator and poll until answered.

    Queries still pending at the deadline come back as pending responses;
    the loop returns those samples to U without charging the budget.
    ``client`` may inject any httpx-compatible client (used by tests);
    by default one is created for ``base_url``.
    """
    if client is None:
        import httpx

        client = httpx.Client(base_url=base_url, timeout=30.0)
        own_client = True
    else:
        own_client = False

    items = [render_item(dataset, sid) for sid in sample_ids]
    try:
        resp = client.post(
            "/v1/queries",
            json={
                "run_id": run_id,
                "stage": stage,
                "num_classes": dataset.num_classes,
                "class_names": class_names,
                "items": items,
            },
        )
        resp.raise_for_status()
        wanted = set(sample_ids)
        answers: dict[str, OracleResponse] = {}
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline and len(answers) < len(wanted):
            resp = client.get(
                "/v1/queries", params={"status": "answered", "run_id": run_id}
            )
            resp.raise_for_status()
            for item in resp.json()["items"]:
                sid = item["sample_id"]
                if sid not in wanted or sid in answers:
                    continue
                outcome = item["outcome"]
                if outcome.get("unknown"):
                    answers[sid] = OracleResponse(sid, REJECT_OOD)
                else:
                    answers[sid] = OracleResponse(sid, LABEL, int(outcome["label"]))
            if len(answers) < len(wanted):
                time.sleep(poll_interval)
    finally:
        if own_client:
            client.close()
    return [
        answers.get(sid, OracleResponse(sid, PENDING)) for sid in sample_ids
    ]
