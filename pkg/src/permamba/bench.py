"""Analytic activation-memory scaling for the scan and attention models.

Memory is counted as the number of distinct array elements a training-mode
forward pass retains for its backward sweep, which is exactly what
``Tape.retained_elements`` reports for the live graph; the closed forms here
mirror each operation's saved tensors term by term. Counting elements instead
of sampling a process keeps the comparison hardware-independent: absolute
gigabytes depend on the machine, the scaling exponent does not.
"""

from __future__ import annotations

import csv
import math
import tracemalloc
from dataclasses import dataclass, replace

from .errors import ConfigError, DataError
from .vim import ViMConfig
from .vit import ViTConfig

__all__ = [
    "BYTES_PER_ELEMENT",
    "FootprintRecord",
    "LogLogFit",
    "BenchReport",
    "vim_retained_elements",
    "vit_retained_elements",
    "count_activations",
    "fit_loglog",
    "bench_report",
    "write_footprints_csv",
    "slopes_payload",
    "sample_process_peak",
]

BYTES_PER_ELEMENT = 8


@dataclass(frozen=True)
class FootprintRecord:
    model: str
    patch: int
    tokens: int
    batch: int
    elements: int

    @property
    def bytes(self) -> int:
        return self.elements * BYTES_PER_ELEMENT

    @property
    def gigabytes(self) -> float:
        return self.bytes / 1024 ** 3


@dataclass(frozen=True)
class LogLogFit:
    slope: float
    intercept: float
    stderr: float


@dataclass(frozen=True)
class BenchReport:
    records: tuple[FootprintRecord, ...]
    vim_slope: LogLogFit
    vit_slope: LogLogFit
    vit_slope_requested: LogLogFit
    budget_gb: float
    over_budget: tuple[FootprintRecord, ...]


def vim_retained_elements(config: ViMConfig, batch: int, tokens: int) -> int:
    """Retained elements for one scan-model training forward.

    Per block and token: the first norm keeps its normalized input and the
    inverse deviations; the field generator keeps its input; softplus, the
    decay product, and exp keep one activation each; the six coefficient
    fields feeding the scans are kept once regardless of how many scans read
    them; each directional scan keeps its state sequence; gating keeps the
    gate and one fused sequence per axis; the MLP keeps its input plus two
    expanded activations. The decay reshape adds one channel-sized array.
    """
    c, e = config.channels, config.expansion
    axes = len(config.scan_axes)
    per_block = ((12 + 3 * axes + 2 * e) * batch * c * tokens
                 + 2 * batch * tokens + c)
    final_norm = batch * c * tokens + batch * tokens
    head_input = batch * c
    return config.blocks * per_block + final_norm + head_input


def vit_retained_elements(config: ViTConfig, batch: int, tokens: int) -> int:
    """Retained elements for one attention-model training forward.

    Per block and token: the two norms keep normalized inputs and inverse
    deviations; the QKV, score, context, projection, and MLP products keep
    their operands; softmax keeps the batch x heads x L x L attention matrix
    (shared with the context product), which is the only superlinear term;
    training dropout keeps its mask. The interpolated positional embedding
    adds one base-grid-sized array.
    """
    c, e = config.channels, config.expansion
    mlp_saves = 3 * e if config.dropout > 0.0 else 2 * e
    per_block = ((8 + mlp_saves) * batch * c * tokens
                 + config.heads * batch * tokens * tokens
                 + 2 * batch * tokens)
    final_norm = batch * c * tokens + batch * tokens
    head_input = batch * c
    pos_source = config.base_grid ** 3 * c
    return (config.depth * per_block + final_norm + head_input + pos_source)


def count_activations(kind: str, config, batch: int) -> FootprintRecord:
    """Footprint of one training forward+backward at the config's own size."""
    if batch < 1:
        raise ConfigError(f"batch must be at least 1, got {batch}")
    config.validate()
    tokens = (config.side // config.patch) ** 3
    if kind == "vim":
        elements = vim_retained_elements(config, batch, tokens)
    elif kind == "vit":
        elements = vit_retained_elements(config, batch, tokens)
    else:
        raise ConfigError(f"unknown model kind {kind!r}, expected vim or vit")
    return FootprintRecord(model=kind, patch=config.patch, tokens=tokens,
                           batch=batch, elements=elements)


def fit_loglog(points) -> LogLogFit:
    """Ordinary least squares on (log x, log y) with the slope's standard
    error; requires at least three strictly positive points."""
    points = list(points)
    if len(points) < 3:
        raise ConfigError(f"log-log fit needs at least 3 points, got {len(points)}")
    if any(x <= 0 or y <= 0 for x, y in points):
        raise DataError("log-log fit requires strictly positive coordinates")
    lx = [math.log(x) for x, _ in points]
    ly = [math.log(y) for _, y in points]
    n = len(points)
    mx = sum(lx) / n
    my = sum(ly) / n
    sxx = sum((v - mx) ** 2 for v in lx)
    if sxx == 0.0:
        raise DataError("log-log fit requires at least two distinct sizes")
    sxy = sum((u - mx) * (v - my) for u, v in zip(lx, ly))
    slope = sxy / sxx
    intercept = my - slope * mx
    sse = sum((v - (intercept + slope * u)) ** 2 for u, v in zip(lx, ly))
    dof = n - 2
    stderr = math.sqrt(sse / dof / sxx) if dof > 0 else 0.0
    return LogLogFit(slope=slope, intercept=intercept, stderr=stderr)


def _fit_for(records: list[FootprintRecord], patches) -> LogLogFit:
    wanted = {r.patch: r for r in records}
    missing = [p for p in patches if p not in wanted]
    if missing:
        raise ConfigError(f"no footprint records for patch sizes {missing}")
    return fit_loglog((wanted[p].tokens, wanted[p].elements) for p in patches)


def bench_report(side: int = 64,
                 patches: tuple[int, ...] = (4, 8, 16, 32),
                 batch: int = 128,
                 budget_gb: float = 80.0,
                 fit_patches: tuple[int, ...] = (8, 16, 32),
                 vit_fit_patches: tuple[int, ...] = (2, 4, 8),
                 vim_config: ViMConfig | None = None,
                 vit_config: ViTConfig | None = None) -> BenchReport:
    """Footprints across patch sizes plus fitted scaling exponents.

    The scan model's exponent is fitted over ``fit_patches``. The attention
    model gets two fits: one over ``vit_fit_patches``, whose small patches
    make the quadratic attention term dominant (the regime the scaling claim
    is about), and one over ``fit_patches`` for the same sizes the scan model
    uses, where the linear terms still drag the exponent down. Records whose
    projected footprint exceeds ``budget_gb`` are flagged; that is how an
    unrunnable configuration is identified without attempting it.

    Records carry both the patch and token axes, but every fit is in token
    count: on a cube L = (side/patch)^3, so an exponent of q in tokens is an
    exponent of -3q in patch size.
    """
    if budget_gb <= 0:
        raise ConfigError(f"memory budget must be positive, got {budget_gb}")
    vim_base = vim_config or ViMConfig(side=side)
    vit_base = vit_config or ViTConfig(side=side)
    all_patches = sorted(set(patches) | set(fit_patches) | set(vit_fit_patches))
    for p in all_patches:
        if side % p:
            raise ConfigError(f"side {side} is not divisible by patch {p}")

    records: list[FootprintRecord] = []
    vim_records: list[FootprintRecord] = []
    vit_records: list[FootprintRecord] = []
    for p in all_patches:
        vim_rec = count_activations("vim", replace(vim_base, patch=p, side=side), batch)
        vit_rec = count_activations("vit", replace(vit_base, patch=p, side=side), batch)
        vim_records.append(vim_rec)
        vit_records.append(vit_rec)
        if p in patches:
            records.extend((vim_rec, vit_rec))

    report = BenchReport(
        records=tuple(records),
        vim_slope=_fit_for(vim_records, fit_patches),
        vit_slope=_fit_for(vit_records, vit_fit_patches),
        vit_slope_requested=_fit_for(vit_records, fit_patches),
        budget_gb=budget_gb,
        over_budget=tuple(r for r in records
                          if r.bytes > budget_gb * 1024 ** 3),
    )
    return report


def write_footprints_csv(records, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "patch", "tokens", "elements", "bytes"])
        for r in records:
            writer.writerow([r.model, r.patch, r.tokens, r.elements, r.bytes])


def slopes_payload(report: BenchReport) -> dict:
    """JSON-ready summary: fitted slopes with standard errors plus flags."""
    def fit(f: LogLogFit) -> dict:
        return {"slope": f.slope, "intercept": f.intercept, "stderr": f.stderr}

    return {
        "axis": "tokens",
        "vim": fit(report.vim_slope),
        "vit_attention_dominated": fit(report.vit_slope),
        "vit_same_patches_as_vim": fit(report.vit_slope_requested),
        "budget_gb": report.budget_gb,
        "over_budget": [
            {"model": r.model, "patch": r.patch,
             "gigabytes": round(r.gigabytes, 3)}
            for r in report.over_budget
        ],
    }


def sample_process_peak(fn) -> int:
    """Peak traced allocation in bytes while ``fn`` runs.

    Corroboration only: allocator behavior is platform-specific, so this
    number carries no acceptance weight next to the analytic element counts.
    """
    tracemalloc.start()
    try:
        fn()
        peak = tracemalloc.get_traced_memory()[1]
    finally:
        tracemalloc.stop()
    return peak
