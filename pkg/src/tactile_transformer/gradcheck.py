"""Central finite-difference verification of reverse-mode gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .autodiff import Tensor


@dataclass
class ParameterCheck:
    name: str
    max_rel_err: float
    max_abs_err: float
    worst_index: tuple[int, ...] | None
    checked_elements: int
    passed: bool


@dataclass
class GradCheckReport:
    rel_tol: float
    abs_floor: float
    eps: float
    checks: list[ParameterCheck] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failures(self) -> list[ParameterCheck]:
        return [c for c in self.checks if not c.passed]

    def summary(self) -> str:
        lines = [
            f"gradient check: rel_tol={self.rel_tol:g} abs_floor={self.abs_floor:g} eps={self.eps:g}"
        ]
        for c in self.checks:
            status = "ok  " if c.passed else "FAIL"
            lines.append(
                f"  {status} {c.name}: max_rel={c.max_rel_err:.3e} max_abs={c.max_abs_err:.3e}"
                f" ({c.checked_elements} elements)"
            )
        lines.append("PASS" if self.passed else "FAIL")
        return "\n".join(lines)


def gradient_check(
    closure: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    *,
    rel_tol: float = 1e-3,
    abs_floor: float = 1e-6,
    eps: float = 1e-3,
    max_elements_per_param: int | None = None,
    sample_seed: int = 0,
    analytic: Mapping[str, np.ndarray] | None = None,
) -> GradCheckReport:
    """Compare analytic gradients of a scalar closure against central differences.

    The closure must rebuild its graph on every call and be deterministic
    (dropout off). When `analytic` is omitted the gradients are computed here
    by one backward pass. `max_elements_per_param` subsamples coordinates for
    large models; None checks every element.

    An element passes when |analytic - numeric| <= max(rel_tol * max(|analytic|,
    |numeric|), abs_floor).
    """
    report = GradCheckReport(rel_tol=rel_tol, abs_floor=abs_floor, eps=eps)
    if not params:
        return report

    if analytic is None:
        for p in params.values():
            p.grad = None
        loss = closure()
        loss.backward()
        analytic = {
            name: (np.zeros_like(p.data) if p.grad is None else p.grad.copy())
            for name, p in params.items()
        }

    rng = np.random.default_rng(sample_seed)
    for name, param in params.items():
        grad = np.asarray(analytic[name], dtype=np.float64)
        flat = param.data.reshape(-1)
        n = flat.size
        if max_elements_per_param is not None and n > max_elements_per_param:
            idx = np.sort(rng.choice(n, size=max_elements_per_param, replace=False))
        else:
            idx = np.arange(n)
        max_rel = 0.0
        max_abs = 0.0
        worst: tuple[int, ...] | None = None
        passed = True
        for i in idx:
            original = flat[i]
            flat[i] = original + eps
            f_plus = closure().item()
            flat[i] = original - eps
            f_minus = closure().item()
            flat[i] = original
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = grad.reshape(-1)[i]
            abs_err = abs(a - numeric)
            scale = max(abs(a), abs(numeric))
            rel_err = 0.0 if abs_err <= abs_floor else abs_err / scale
            if abs_err > max(rel_tol * scale, abs_floor):
                passed = False
            if rel_err > max_rel or (rel_err == max_rel and worst is None):
                max_rel = rel_err
                worst = tuple(int(v) for v in np.unravel_index(i, param.data.shape))
            max_abs = max(max_abs, abs_err)
        report.checks.append(
            ParameterCheck(
                name=name,
                max_rel_err=max_rel,
                max_abs_err=max_abs,
                worst_index=worst,
                checked_elements=int(len(idx)),
                passed=passed,
            )
        )
    return report
