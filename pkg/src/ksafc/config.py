"""Run configuration: time-step rules, key=value config files, resolution to (M, k, n_steps)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .limiter import QStrategy
from .stepper import Scheme, StepParams

BLOWUP_C = 1e-5
BLOWUP_P = 1.01


@dataclass(frozen=True)
class KRule:
    """``explicit`` (k given), ``blowup`` (c h^p, h = sqrt(2)/M),
    ``h`` (h0/c) or ``h2`` (h0^2/c) with h0 = 1/M."""

    kind: str
    value: float

    def __post_init__(self):
        if self.kind not in ("explicit", "blowup", "h", "h2"):
            raise ValueError(f"unknown k rule {self.kind!r}")
        if not self.value > 0:
            raise ValueError(f"k rule {self.kind} needs a positive parameter, got {self.value}")

    @classmethod
    def parse(cls, text: str) -> "KRule":
        text = text.strip()
        if text == "blowup":
            return cls("blowup", BLOWUP_C)
        head, sep, tail = text.partition("/")
        if sep and head in ("h", "h2"):
            try:
                return cls(head, float(tail))
            except ValueError:
                pass
        try:
            return cls("explicit", float(text))
        except ValueError:
            raise ValueError(f"cannot parse k rule {text!r}; use blowup, h/<c>, h2/<c> or a number") from None

    def k(self, M: int) -> float:
        if self.kind == "explicit":
            return self.value
        h0 = 1.0 / M
        if self.kind == "blowup":
            return self.value * (math.sqrt(2.0) * h0) ** BLOWUP_P
        if self.kind == "h":
            return h0 / self.value
        return h0 * h0 / self.value

    def __str__(self):
        if self.kind == "explicit":
            return repr(self.value)
        if self.kind == "blowup":
            return "blowup"
        return f"{self.kind}/{self.value:g}"


def steps_for(T: float, k: float) -> tuple[int, float]:
    """Smallest n with n*k >= T (up to roundoff) and the shrunk step T/n."""
    if not (T > 0 and k > 0):
        raise ValueError("T and k must be positive")
    n = max(1, math.ceil(T / k * (1.0 - 1e-12)))
    return n, T / n


@dataclass
class RunConfig:
    M: int = 20
    scheme: Scheme = Scheme.AFC
    lam: float = 1.0
    k_rule: KRule = field(default_factory=lambda: KRule("blowup", BLOWUP_C))
    T: float | None = None
    steps: int | None = None
    q: QStrategy = field(default_factory=QStrategy.mass_over_k)
    fp_tol: float = 1e-8
    fp_max_iters: int = 100
    solver: str = "auto"
    coupling: str = "iterate"
    ic: str = "blowup"
    out: Path | None = None
    vtk: bool = False
    ref_M: int = 160
    ref_k: float = 1e-5
    resolutions: tuple = (10, 20, 40)

    def __post_init__(self):
        self.scheme = Scheme(self.scheme)
        if isinstance(self.k_rule, str):
            self.k_rule = KRule.parse(self.k_rule)
        if isinstance(self.q, str):
            self.q = QStrategy.parse(self.q)
        if self.out is not None:
            self.out = Path(self.out)
        if not isinstance(self.M, int) or self.M < 1:
            raise ValueError(f"M must be a positive integer, got {self.M!r}")
        if self.solver not in ("direct", "iterative", "auto"):
            raise ValueError(f"unknown solver {self.solver!r}")

    def resolve(self, M: int | None = None) -> tuple[int, float, int]:
        """Concrete (M, k, n_steps); when T is set, k * n_steps == T.

        With both T and steps given, k = T/steps and the rule is ignored.
        """
        M = self.M if M is None else M
        if self.T is not None and self.steps is not None:
            if self.steps < 1:
                raise ValueError("steps must be at least 1")
            return M, self.T / self.steps, self.steps
        k = self.k_rule.k(M)
        if self.T is not None:
            n, k = steps_for(self.T, k)
            return M, k, n
        if self.steps is None:
            raise ValueError("give T or steps")
        if self.steps < 0:
            raise ValueError("steps must be nonnegative")
        return M, k, self.steps

    def step_params(self, k: float, scheme: Scheme | None = None) -> StepParams:
        return StepParams(
            k=k, lam=self.lam, scheme=self.scheme if scheme is None else scheme, q_strategy=self.q,
            fp_tol=self.fp_tol, fp_max_iters=self.fp_max_iters, solver=self.solver,
            coupling=self.coupling,
        )

    def with_(self, **changes) -> "RunConfig":
        return replace(self, **changes)


# config-file keys mirror the long CLI flags
CONFIG_KEYS = {
    "M": ("M", int),
    "scheme": ("scheme", str),
    "lambda": ("lam", float),
    "k": ("k", float),
    "k-rule": ("k_rule", str),
    "T": ("T", float),
    "steps": ("steps", int),
    "q": ("q", str),
    "fp-tol": ("fp_tol", float),
    "fp-max-iters": ("fp_max_iters", int),
    "solver": ("solver", str),
    "coupling": ("coupling", str),
    "ic": ("ic", str),
    "out": ("out", str),
    "vtk": ("vtk", lambda s: s.strip().lower() in ("1", "true", "yes", "on")),
    "ref-M": ("ref_M", int),
    "ref-k": ("ref_k", float),
    "resolutions": ("resolutions", lambda s: tuple(int(x) for x in s.replace(",", " ").split())),
}


def read_config_file(path) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment. Returns attribute names -> values."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise OSError(f"cannot read config file {path}: {exc}") from exc
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().lstrip("-")
        if not sep or key not in CONFIG_KEYS:
            raise ValueError(f"{path}:{lineno}: expected one of {sorted(CONFIG_KEYS)} as key=value, got {raw!r}")
        attr, conv = CONFIG_KEYS[key]
        try:
            values[attr] = conv(value.strip())
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: bad value for {key}: {exc}") from None
    return values


def build_config(values: dict, base: RunConfig | None = None) -> RunConfig:
    """Merge attribute values into ``base``; an explicit ``k`` beats any ``k_rule``."""
    values = {a: v for a, v in values.items() if v is not None}
    k = values.pop("k", None)
    if k is not None:
        values["k_rule"] = KRule("explicit", float(k))
    known = {f.name for f in fields(RunConfig)}
    unknown = set(values) - known
    if unknown:
        raise ValueError(f"unknown configuration keys {sorted(unknown)}")
    base = base or RunConfig()
    return replace(base, **values)
