"""Reverse-mode differentiation over the clustering-convolution pipeline.

A ``Tape`` records primitive operations as they execute; ``backward`` replays
them in reverse, accumulating vector-Jacobian products into the leaves.
The primitive set is deliberately small: dense matmul, sparse-dense products
(with either a fully constant sparse operand or a constant pattern and
variable values), row/column normalisation over a constant pattern, softmax,
batch norm, ReLU, elementwise arithmetic, and softmax cross-entropy.

Two conventions worth knowing:

* Sparse structure is constant. Adjacency matrices never receive gradients;
  the soft assignment is differentiated through its values only (the softmax
  that produced them), with the candidate pattern fixed.
* Taped forwards call the exact same kernels as the untaped functions, so a
  taped evaluation reproduces the untaped result bit for bit.

``gradcheck`` compares the tape's gradients against central finite
differences in float64 and reports the worst relative error per leaf.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

from . import hgconv, linalg


class Var:
    """A value tracked on a tape, with a gradient buffer filled by backward."""

    __slots__ = ("value", "grad")

    def __init__(self, value: np.ndarray):
        self.value = np.asarray(value)
        self.grad: np.ndarray | None = None

    @property
    def shape(self):
        return self.value.shape


def _accumulate(var: Var, grad) -> None:
    if grad is None:
        return
    grad = np.asarray(grad)
    if grad.shape != var.value.shape:
        raise linalg.ShapeError(
            f"gradient shape {grad.shape} does not match value shape {var.value.shape}")
    if var.grad is None:
        var.grad = grad.astype(var.value.dtype, copy=True)
    else:
        var.grad = var.grad + grad


class GradientSet(dict):
    """Mapping from leaf name to gradient array."""


def _values_csr(template: sp.csr_matrix, values: np.ndarray) -> sp.csr_matrix:
    """CSR with the template's pattern and the given data vector."""
    return sp.csr_matrix(
        (values, template.indices, template.indptr), shape=template.shape)


class Tape:
    """Ordered record of primitive operations with their backward closures."""

    def __init__(self):
        self._nodes: list[tuple[Var, tuple[Var, ...], Callable]] = []
        self.leaves: dict[str, Var] = {}

    def leaf(self, value, name: str | None = None) -> Var:
        v = Var(value)
        if name is not None:
            if name in self.leaves:
                raise ValueError(f"duplicate leaf name {name!r}")
            self.leaves[name] = v
        return v

    def constant(self, value) -> Var:
        return Var(value)

    def _push(self, out_value, inputs: tuple[Var, ...], vjp: Callable) -> Var:
        out = Var(out_value)
        self._nodes.append((out, inputs, vjp))
        return out

    # -- elementwise and dense ops -------------------------------------------

    def add(self, a: Var, b: Var) -> Var:
        if a.value.shape != b.value.shape:
            raise linalg.ShapeError("add: shapes differ")
        return self._push(a.value + b.value, (a, b), lambda g: (g, g))

    def sub(self, a: Var, b: Var) -> Var:
        if a.value.shape != b.value.shape:
            raise linalg.ShapeError("sub: shapes differ")
        return self._push(a.value - b.value, (a, b), lambda g: (g, -g))

    def mul(self, a: Var, b: Var) -> Var:
        if a.value.shape != b.value.shape:
            raise linalg.ShapeError("mul: shapes differ")
        av, bv = a.value, b.value
        return self._push(av * bv, (a, b), lambda g: (g * bv, g * av))

    def scale(self, a: Var, c: float) -> Var:
        return self._push(a.value * c, (a,), lambda g: (g * c,))

    def matmul(self, a: Var, b: Var) -> Var:
        if a.value.shape[1] != b.value.shape[0]:
            raise linalg.ShapeError("matmul: inner dimensions differ")
        av, bv = a.value, b.value
        return self._push(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))

    def add_bias(self, x: Var, b: Var) -> Var:
        if b.value.shape != (x.value.shape[1],):
            raise linalg.ShapeError("add_bias: bias must be 1-D of width cols")
        return self._push(x.value + b.value, (x, b), lambda g: (g, g.sum(axis=0)))

    def row_scale(self, x: Var, scales: np.ndarray) -> Var:
        scales = np.asarray(scales)
        return self._push(
            x.value * scales[:, None], (x,), lambda g: (g * scales[:, None],))

    def reshape(self, x: Var, shape) -> Var:
        old = x.value.shape
        return self._push(x.value.reshape(shape), (x,), lambda g: (g.reshape(old),))

    def sum_all(self, x: Var) -> Var:
        shp = x.value.shape
        dt = x.value.dtype
        return self._push(x.value.sum(), (x,), lambda g: (np.full(shp, g, dtype=dt),))

    # -- nonlinearities --------------------------------------------------------

    def relu(self, x: Var) -> Var:
        xv = x.value
        return self._push(hgconv.relu(xv), (x,), lambda g: (g * (xv > 0),))

    def softmax(self, x: Var) -> Var:
        shifted = x.value - x.value.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        out = e / e.sum(axis=1, keepdims=True)

        def vjp(g):
            dot = (g * out).sum(axis=1, keepdims=True)
            return ((g - dot) * out,)

        return self._push(out, (x,), vjp)

    def batch_norm(self, x: Var, gamma: Var, beta: Var, state: hgconv.BNParams,
                   mode: str = "train") -> Var:
        # Route through the shared kernel so taped and untaped outputs match
        # exactly; the state's gamma/beta are temporarily pointed at the vars.
        state.gamma = gamma.value
        state.beta = beta.value
        y, cache = hgconv.batch_norm(x.value, state, mode, return_cache=True)

        def vjp(g):
            return hgconv.batch_norm_vjp(g, cache)

        return self._push(y, (x, gamma, beta), vjp)

    # -- sparse products --------------------------------------------------------

    def spmm_const(self, a: sp.csr_matrix, x: Var,
                   a_t: sp.csr_matrix | None = None) -> Var:
        out = linalg.spmm(a, x.value)
        at = a_t if a_t is not None else linalg.sp_transpose(a)
        return self._push(out, (x,), lambda g: (linalg.spmm(at, g),))

    def spmm_values(self, template: sp.csr_matrix, values: Var, x: Var) -> Var:
        """csr(pattern, values) @ x with gradients into values and x."""
        if values.value.shape != (template.nnz,):
            raise linalg.ShapeError("spmm_values: values must be 1-D of length nnz")
        mat = _values_csr(template, values.value)
        out = linalg.spmm(mat, x.value)
        rows = linalg.expanded_rows(template)
        cols = template.indices
        xv = x.value

        def vjp(g):
            dvals = (g[rows] * xv[cols]).sum(axis=1)
            dx = linalg.spmm(linalg.sp_transpose(mat), g)
            return dvals, dx

        return self._push(out, (values, x), vjp)

    def spmm_values_t(self, template: sp.csr_matrix, values: Var, x: Var) -> Var:
        """csr(pattern, values).T @ x with gradients into values and x."""
        if values.value.shape != (template.nnz,):
            raise linalg.ShapeError("spmm_values_t: values must be 1-D of length nnz")
        mat = _values_csr(template, values.value)
        out = linalg.spmm(linalg.sp_transpose(mat), x.value)
        rows = linalg.expanded_rows(template)
        cols = template.indices
        xv = x.value

        def vjp(g):
            dvals = (g[cols] * xv[rows]).sum(axis=1)
            dx = linalg.spmm(mat, g)
            return dvals, dx

        return self._push(out, (values, x), vjp)

    def col_normalize_values(self, template: sp.csr_matrix, values: Var) -> Var:
        cols = template.indices
        n_cols = template.shape[1]
        v = values.value
        sums = np.bincount(cols, weights=v, minlength=n_cols).astype(v.dtype, copy=False)
        scale = np.where(sums > 0, sums, v.dtype.type(1))
        out = v / scale[cols]

        def vjp(g):
            dots = np.bincount(cols, weights=g * out, minlength=n_cols)
            dots = dots.astype(v.dtype, copy=False)
            return ((g - dots[cols]) / scale[cols],)

        return self._push(out, (values,), vjp)

    def row_normalize_values(self, template: sp.csr_matrix, values: Var) -> Var:
        rows = linalg.expanded_rows(template)
        n_rows = template.shape[0]
        v = values.value
        sums = np.bincount(rows, weights=v, minlength=n_rows).astype(v.dtype, copy=False)
        scale = np.where(sums > 0, sums, v.dtype.type(1))
        out = v / scale[rows]

        def vjp(g):
            dots = np.bincount(rows, weights=g * out, minlength=n_rows)
            dots = dots.astype(v.dtype, copy=False)
            return ((g - dots[rows]) / scale[rows],)

        return self._push(out, (values,), vjp)

    # -- losses ------------------------------------------------------------------

    def cross_entropy(self, z: Var, labels: np.ndarray) -> Var:
        """Mean softmax cross-entropy of row logits against integer labels."""
        labels = np.asarray(labels)
        if labels.shape != (z.value.shape[0],):
            raise linalg.ShapeError("cross_entropy: one label per row required")
        zv = z.value
        m = zv.max(axis=1, keepdims=True)
        shifted = zv - m
        lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True)) + m
        n = zv.shape[0]
        picked = zv[np.arange(n), labels][:, None]
        loss = (lse - picked).sum() / n

        def vjp(g):
            p = np.exp(zv - lse)
            p[np.arange(n), labels] -= 1.0
            return (p * (g / n),)

        return self._push(np.asarray(loss), (z,), vjp)


def backward(tape: Tape, output: Var, seed=1.0) -> GradientSet:
    """Reverse sweep from ``output``; returns gradients of the named leaves.

    The tape is read-only during the sweep, so repeated calls produce
    identical results. Leaves untouched by the output keep exact zeros.
    """
    seed = np.asarray(seed, dtype=output.value.dtype)
    if seed.shape != output.value.shape:
        seed = np.broadcast_to(seed, output.value.shape).copy()
    involved: set[int] = set()
    for out, inputs, _ in tape._nodes:
        involved.add(id(out))
        involved.update(id(v) for v in inputs)
    for out, inputs, _ in tape._nodes:
        out.grad = None
        for v in inputs:
            v.grad = None
    for v in tape.leaves.values():
        v.grad = None
    output.grad = seed.astype(output.value.dtype, copy=True)
    for out, inputs, vjp in reversed(tape._nodes):
        if out.grad is None:
            continue
        grads = vjp(out.grad)
        if not isinstance(grads, tuple):
            grads = (grads,)
        for var, grad in zip(inputs, grads):
            _accumulate(var, grad)
    result = GradientSet()
    for name, var in tape.leaves.items():
        grad = var.grad if var.grad is not None else np.zeros_like(var.value)
        if not np.all(np.isfinite(grad)):
            raise FloatingPointError(f"non-finite gradient for leaf {name!r}")
        result[name] = grad
    return result


def forward_with_tape(pipeline: Callable, inputs: dict[str, np.ndarray]):
    """Run ``pipeline(tape, leaves)`` over fresh leaves; returns (output, tape).

    ``pipeline`` receives the tape and a dict of named leaf vars and must
    return the output var built from registered primitives only.
    """
    tape = Tape()
    leaves = {name: tape.leaf(value, name) for name, value in inputs.items()}
    output = pipeline(tape, leaves)
    if not isinstance(output, Var):
        raise TypeError("pipeline must return a tape variable")
    return output, tape


@dataclass(frozen=True)
class GradcheckReport:
    """Worst relative error per leaf and overall, from central differences."""

    max_rel_error: float
    worst_leaf: str
    per_leaf: dict[str, float]

    def ok(self, tol: float = 1e-5) -> bool:
        return self.max_rel_error <= tol


def gradcheck(pipeline: Callable, point: dict[str, np.ndarray],
              h: float = 1e-5) -> GradcheckReport:
    """Compare tape gradients of a scalar pipeline against central differences.

    Relative error uses max(|analytic|, |numeric|, 1e-8) as denominator.
    Evaluate in float64; ``h`` must be positive.
    """
    if h <= 0:
        raise ValueError(f"step size must be positive, got {h}")
    point = {name: np.asarray(value, dtype=np.float64) for name, value in point.items()}

    output, tape = forward_with_tape(pipeline, point)
    if output.value.shape != ():
        raise linalg.ShapeError("gradcheck requires a scalar pipeline output")
    if not np.isfinite(output.value):
        raise FloatingPointError("non-finite pipeline output")
    analytic = backward(tape, output)

    def evaluate(values: dict[str, np.ndarray]) -> float:
        out, _ = forward_with_tape(pipeline, values)
        val = float(out.value)
        if not np.isfinite(val):
            raise FloatingPointError("non-finite pipeline output during differencing")
        return val

    per_leaf: dict[str, float] = {}
    worst_leaf, worst = "", 0.0
    for name in point:
        a = analytic[name]
        numeric = np.zeros_like(a)
        base = {k: v.copy() for k, v in point.items()}
        flat = base[name].reshape(-1)
        num_flat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = evaluate(base)
            flat[i] = orig - h
            down = evaluate(base)
            flat[i] = orig
            num_flat[i] = (up - down) / (2.0 * h)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), 1e-8)
        err = float(np.max(np.abs(a - numeric) / denom)) if a.size else 0.0
        per_leaf[name] = err
        if err >= worst:
            worst_leaf, worst = name, err
    return GradcheckReport(max_rel_error=worst, worst_leaf=worst_leaf, per_leaf=per_leaf)
