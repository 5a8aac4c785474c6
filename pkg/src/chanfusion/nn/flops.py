"""Leading-term floating point operation counts per layer."""

from __future__ import annotations

from dataclasses import dataclass


class UnresolvedShapeError(ValueError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    """Resolved layer shape used for complexity accounting.

    kind is ``dense``, ``lstm`` or ``conv``. For conv layers ``n_in`` is the
    input spatial size (H*W), ``kernel`` the filter area, and ``n_in``/``n_out``
    filter counts are ``c_in``/``c_out``.
    """

    kind: str
    n_in: int | None
    n_out: int | None = None
    t_unit: int = 1
    kernel: int | None = None
    c_in: int | None = None
    c_out: int | None = None


def flop_count(spec: LayerSpec) -> int:
    """dense: n_in*n_out; lstm: 4*T_unit*n_in*n_out; conv: n_in*kernel*c_in*c_out."""
    if spec.kind == "dense":
        _need(spec, "n_in", "n_out")
        return spec.n_in * spec.n_out
    if spec.kind == "lstm":
        _need(spec, "n_in", "n_out")
        return 4 * spec.t_unit * spec.n_in * spec.n_out
    if spec.kind == "conv":
        _need(spec, "n_in", "kernel", "c_in", "c_out")
        return spec.n_in * spec.kernel * spec.c_in * spec.c_out
    raise ValueError(f"unknown layer kind {spec.kind!r}")


def _need(spec: LayerSpec, *fields: str) -> None:
    missing = [f for f in fields if getattr(spec, f) is None]
    if missing:
        raise UnresolvedShapeError(f"{spec.kind} layer has unresolved {', '.join(missing)}")
