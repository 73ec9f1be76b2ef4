"""Seeded synthetic datasets for the regression and classification tasks."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

ON, OFF = "ON", "OFF"

DEFAULTS: dict[str, dict] = {
    "LinReg2D": dict(k1=1.0, k2=2.0, k0=1.0, noise=0.4, low=1.0, high=5.0),
    "NonLinReg2D": dict(noise=0.1, low=0.5, high=2.0),
    # Linear2D keeps the uniform input density (about 3:1 ON:OFF); its least-squares
    # boundary only lands on the discriminant line without class reweighting
    "Linear2D": dict(k1=1.0, k2=2.0, phi=2.0, y_on=4.0, y_off=0.0, low=0.0, high=2.0, balanced=False),
    "Rings2D": dict(r1=0.45, r2=0.5, r3=1.0, phi=0.5, y_on=1.0, y_off=0.0, low=-1.0, high=1.0, balanced=True),
    "XOR2D": dict(phi_b=0.5, phi=0.5, y_on=1.0, y_off=0.0, low=0.0, high=1.0, balanced=True),
}
CLASSIFICATION = ("Linear2D", "Rings2D", "XOR2D")


@dataclass(frozen=True)
class DatasetSpec:
    name: str
    size: int = 200
    seed: int = 0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in DEFAULTS:
            raise ValueError(f"unknown dataset {self.name!r}; choose from {sorted(DEFAULTS)}")
        if int(self.size) != self.size or self.size <= 0:
            raise ValueError(f"size must be a positive integer, got {self.size}")
        unknown = set(self.params) - set(DEFAULTS[self.name])
        if unknown:
            raise ValueError(f"unknown parameters for {self.name}: {sorted(unknown)}")
        p = self.resolved
        if p["high"] <= p["low"]:
            raise ValueError("sampling box is empty")
        if p.get("noise", 0.0) < 0:
            raise ValueError("noise must be nonnegative")
        if self.name == "Rings2D" and not 0 < p["r1"] <= p["r2"] < p["r3"]:
            raise ValueError("Rings2D needs 0 < r1 <= r2 < r3")

    @property
    def resolved(self) -> dict:
        return {**DEFAULTS[self.name], **self.params}

    @property
    def is_classification(self) -> bool:
        return self.name in CLASSIFICATION

    @property
    def box(self) -> tuple[float, float]:
        p = self.resolved
        return p["low"], p["high"]


@dataclass(frozen=True)
class Sample:
    x: np.ndarray
    y: float
    label: str | None = None


def label_of(spec: DatasetSpec, x) -> str | None:
    """Class of a point under the task's rule; None if the rule leaves it unlabeled."""
    p = spec.resolved
    x = np.asarray(x, float)
    if spec.name == "Linear2D":
        return ON if p["k1"] * x[0] + p["k2"] * x[1] > p["phi"] else OFF
    if spec.name == "Rings2D":
        r = float(np.hypot(x[0], x[1]))
        if r < p["r1"]:
            return OFF
        if p["r2"] < r < p["r3"]:
            return ON
        return None
    if spec.name == "XOR2D":
        b = x > p["phi_b"]
        return ON if b[0] != b[1] else OFF
    raise ValueError(f"{spec.name} is not a classification task")


def target_of(spec: DatasetSpec, label: str) -> float:
    p = spec.resolved
    return p["y_on"] if label == ON else p["y_off"]


def clean_target(spec: DatasetSpec, x) -> float:
    """Noise-free regression target."""
    p = spec.resolved
    x = np.asarray(x, float)
    if spec.name == "LinReg2D":
        return p["k1"] * x[0] + p["k2"] * x[1] + p["k0"]
    if spec.name == "NonLinReg2D":
        return x[0] * x[1] + x[1] ** 2
    raise ValueError(f"{spec.name} is not a regression task")


def generate(spec: DatasetSpec) -> list[Sample]:
    rng = np.random.default_rng(spec.seed)
    p = spec.resolved
    lo, hi = spec.box
    if not spec.is_classification:
        X = rng.uniform(lo, hi, size=(spec.size, 2))
        noise = rng.normal(0.0, p["noise"], size=spec.size) if p["noise"] > 0 else np.zeros(spec.size)
        return [Sample(x, clean_target(spec, x) + e) for x, e in zip(X, noise)]
    if not p["balanced"]:
        out: list[Sample] = []
        while len(out) < spec.size:
            x = rng.uniform(lo, hi, size=2)
            lab = label_of(spec, x)
            if lab is not None:
                out.append(Sample(x, target_of(spec, lab), lab))
        return out
    # class quotas keep the two classes equally populated
    quota = {ON: (spec.size + 1) // 2, OFF: spec.size // 2}
    out = []
    while any(quota.values()):
        for x in rng.uniform(lo, hi, size=(max(64, 4 * spec.size), 2)):
            lab = label_of(spec, x)
            if lab is None or quota[lab] == 0:
                continue
            quota[lab] -= 1
            out.append(Sample(x, target_of(spec, lab), lab))
            if not any(quota.values()):
                break
    return out


def split(samples, fraction: float = 0.2, seed=0):
    """Seeded (train, validation) partition."""
    n = len(samples)
    idx = np.random.default_rng(seed).permutation(n)
    n_val = int(round(fraction * n))
    return [samples[i] for i in idx[n_val:]], [samples[i] for i in idx[:n_val]]


def to_csv(samples) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x1", "x2", "y", "label"])
    for s in samples:
        w.writerow([repr(float(s.x[0])), repr(float(s.x[1])), repr(float(s.y)), s.label or ""])
    return buf.getvalue()


def from_csv(text: str) -> list[Sample]:
    rows = list(csv.DictReader(io.StringIO(text)))
    return [Sample(np.array([float(r["x1"]), float(r["x2"])]), float(r["y"]), r["label"] or None) for r in rows]


def as_arrays(samples) -> tuple[np.ndarray, np.ndarray]:
    return np.array([s.x for s in samples]), np.array([s.y for s in samples])


def grid_points(spec: DatasetSpec, resolution: int = 41) -> np.ndarray:
    if resolution < 1:
        raise ValueError("resolution must be >= 1")
    lo, hi = spec.box
    axis = np.linspace(lo, hi, resolution)
    g1, g2 = np.meshgrid(axis, axis, indexing="ij")
    return np.column_stack([g1.ravel(), g2.ravel()])


def boundary_grid(circuit, spec: DatasetSpec, resolution: int = 41, theta=None, solver=None) -> list[tuple]:
    """(x1, x2, y_hat, label) over a uniform grid of the task's input box."""
    from .crn import SolverConfig
    from .learning import predict

    phi = spec.resolved["phi"]
    rows = []
    for x in grid_points(spec, resolution):
        y = predict(circuit, x, theta, solver or SolverConfig())
        rows.append((float(x[0]), float(x[1]), y, ON if y > phi else OFF))
    return rows


def grid_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x1", "x2", "y_hat", "label"])
    for r in rows:
        w.writerow([repr(r[0]), repr(r[1]), repr(float(r[2])), r[3]])
    return buf.getvalue()
