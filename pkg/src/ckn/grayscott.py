"""Desk-scale Gray-Scott reaction-diffusion solver and campaign data generator.

    du/dt = Du * lap(u) - u*v^2 + F*(1 - u)
    dv/dt = Dv * lap(v) + u*v^2 - (F + k)*v

Forward Euler on a periodic L x L grid with the 5-point Laplacian (dx = 1).
The generator runs one simulation per sweep of a campaign spec and writes
settings, histogram and run-log files that the ingest module understands.
"""

from __future__ import annotations

import dataclasses
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ckn.errors import InstabilityDetected, InvalidSpec, UnstableParameters
from ckn.ingest import CampaignSpec, RunLog, format_value, sweep_id

logger = logging.getLogger(__name__)

HISTOGRAM_BINS = 64
PATCH_U, PATCH_V = 0.5, 0.25


@dataclass(frozen=True)
class GrayScottParams:
    L: int = 64
    Du: float = 0.2
    Dv: float = 0.1
    F: float = 0.04
    k: float = 0.06
    steps: int = 1000
    dt: float = 1.0
    seed: int = 0
    noise: float = 0.01
    patch: bool = True

    @property
    def stability_bound(self) -> float:
        """Largest stable dt for explicit diffusion with dx = 1."""
        d = max(self.Du, self.Dv)
        return float("inf") if d == 0 else 1.0 / (4.0 * d)

    def check(self) -> None:
        if int(self.L) != self.L or self.L < 3:
            raise UnstableParameters(f"L must be an integer >= 3, got {self.L}")
        if self.Du < 0 or self.Dv < 0:
            raise UnstableParameters("diffusion rates must be non-negative")
        if not self.dt > 0:
            raise UnstableParameters(f"dt must be positive, got {self.dt}")
        if self.steps < 0:
            raise UnstableParameters("steps must be non-negative")
        if self.dt > self.stability_bound:
            raise UnstableParameters(f"dt={self.dt} exceeds stability bound {self.stability_bound:g}")

    @classmethod
    def from_strings(cls, values: dict[str, str], base: "GrayScottParams | None" = None) -> "GrayScottParams":
        base = base or cls()
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        parsed = {}
        for name, raw in values.items():
            if name not in types:
                raise InvalidSpec(f"{name!r} is not a Gray-Scott parameter")
            try:
                if types[name] == "int":
                    parsed[name] = int(float(raw)) if float(raw).is_integer() else int(raw)
                elif types[name] == "bool":
                    parsed[name] = str(raw).lower() in ("1", "true", "yes")
                else:
                    parsed[name] = float(raw)
            except ValueError:
                raise InvalidSpec(f"bad value {raw!r} for {name}") from None
        return dataclasses.replace(base, **parsed)

    def as_strings(self) -> dict[str, str]:
        return {f.name: format_value(getattr(self, f.name)) if f.type != "bool" else str(getattr(self, f.name)).lower()
                for f in dataclasses.fields(self)}


@dataclass
class GridState:
    u: np.ndarray
    v: np.ndarray

    def copy(self) -> "GridState":
        return GridState(self.u.copy(), self.v.copy())


@dataclass
class PdfHistogram:
    u: np.ndarray  # normalized frequencies, one per bin over [0, 1]
    v: np.ndarray

    @property
    def bins(self) -> int:
        return len(self.u)

    def to_text(self) -> str:
        lines = ["# bin\tu\tv"]
        lines += [f"{i}\t{fu!r}\t{fv!r}" for i, (fu, fv) in enumerate(zip(self.u.tolist(), self.v.tolist()))]
        return "\n".join(lines) + "\n"


def laplacian(z: np.ndarray) -> np.ndarray:
    return (
        np.roll(z, 1, axis=0) + np.roll(z, -1, axis=0) + np.roll(z, 1, axis=1) + np.roll(z, -1, axis=1)
    ) - 4.0 * z


def step(state: GridState, p: GrayScottParams) -> GridState:
    p.check()
    u, v = state.u, state.v
    with np.errstate(over="ignore", invalid="ignore"):
        uvv = u * v * v
        u_next = u + p.dt * (p.Du * laplacian(u) - uvv + p.F * (1.0 - u))
        v_next = v + p.dt * (p.Dv * laplacian(v) + uvv - (p.F + p.k) * v)
    if not (np.isfinite(u_next).all() and np.isfinite(v_next).all()):
        raise InstabilityDetected("non-finite concentration after step")
    return GridState(u_next, v_next)


def initial_state(p: GrayScottParams) -> GridState:
    L = int(p.L)
    u = np.ones((L, L))
    v = np.zeros((L, L))
    if p.patch:
        side = max(3, L // 8)
        lo = (L - side) // 2
        u[lo:lo + side, lo:lo + side] = PATCH_U
        v[lo:lo + side, lo:lo + side] = PATCH_V
    if p.noise:
        rng = np.random.default_rng(p.seed)
        u += rng.uniform(-p.noise, p.noise, size=(L, L))
        v += rng.uniform(-p.noise, p.noise, size=(L, L))
    return GridState(u, v)


def histogram(state: GridState, bins: int = HISTOGRAM_BINS) -> PdfHistogram:
    def freq(field: np.ndarray) -> np.ndarray:
        counts, _ = np.histogram(np.clip(field, 0.0, 1.0), bins=bins, range=(0.0, 1.0))
        return counts / field.size

    return PdfHistogram(freq(state.u), freq(state.v))


def simulate(p: GrayScottParams) -> tuple[GridState, PdfHistogram]:
    p.check()
    state = initial_state(p)
    for _ in range(p.steps):
        state = step(state, p)
    return state, histogram(state)


# -- campaign generation -----------------------------------------------------

def _run_one(job: dict, out_dir: Path, clock) -> Path:
    instance = job["instance"]
    settings_name = f"{instance}.settings"
    hist_name = f"{instance}.hist"
    params: GrayScottParams = job["params"]
    param_strings = {**params.as_strings(), **job["fixed"]}
    for key in ("noise", "patch"):
        if key not in job["fixed"]:
            param_strings.pop(key)

    settings = "".join(f"{k}={v}\n" for k, v in param_strings.items())
    (out_dir / settings_name).write_text(settings, encoding="utf-8")

    start = clock()
    extra = {"name": "grayscott", "io_method": "BP4"}
    outputs: list[str] = []
    exit_code = 0
    try:
        _, hist = simulate(params)
        text = hist.to_text()
        (out_dir / hist_name).write_text(text, encoding="utf-8")
        outputs.append(hist_name)
    except (UnstableParameters, InstabilityDetected, FloatingPointError) as exc:
        exit_code = 1
        extra["error"] = f"{type(exc).__name__}: {exc}".replace("\n", " ")
    end = max(clock(), start)

    written = sum((out_dir / name).stat().st_size for name in outputs)
    log = RunLog(
        instance_id=instance,
        sweep_id=job["sweep"],
        start=round(start, 3),
        end=round(end, 3),
        exit_code=exit_code,
        params=param_strings,
        inputs=[settings_name],
        outputs=outputs,
        metrics={"runtime": round(end - start, 6), "bytes_written": float(written)},
        extra=extra,
    )
    path = out_dir / f"{instance}.log"
    path.write_text(log.format(), encoding="utf-8")
    return path


def generate_campaign(
    spec: CampaignSpec,
    out_dir: str | os.PathLike,
    *,
    base: GrayScottParams | None = None,
    jobs: int = 1,
    clock=time.time,
) -> list[Path]:
    """Simulate every sweep of ``spec`` and write its run log and data files.

    Parameters absent from the spec take ``base`` values. A failing run is
    recorded with a nonzero exit code and does not stop the others. Returns
    the written run-log paths.
    """
    spec.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    work = []
    for group in spec.sweep_groups:
        for index, fixed in enumerate(group.sweeps()):
            work.append({
                "instance": f"{spec.name}-{group.name}-run-{index:03d}",
                "sweep": sweep_id(spec.name, group.name, fixed),
                "params": GrayScottParams.from_strings(fixed, base),
                "fixed": fixed,
            })
    (out / f"{spec.name}.spec.json").write_text(spec.to_json(), encoding="utf-8")
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            paths = list(pool.map(lambda job: _run_one(job, out, clock), work))
    else:
        paths = [_run_one(job, out, clock) for job in work]
    logger.info("generated %d runs for %s in %s", len(paths), spec.name, out)
    return paths
